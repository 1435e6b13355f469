use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::SphericalCoord;
use crate::kernels::KernelKind;
use crate::rangeimage::{downsample_geometry, RangeImage};
use crate::tensorcore::Tensor;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn image(h: usize, w: usize, valid_every: usize) -> RangeImage {
    let n = h * w;
    let coords = (0..n)
        .map(|i| SphericalCoord::new(0.05 - 0.01 * (i / w) as f64, 0.4 - 0.01 * (i % w) as f64, 5.0 + ((i * 7) % 13) as f64 * 0.3))
        .collect();
    let mask: Vec<bool> = (0..n).map(|i| i % valid_every != 0).collect();
    let features = (0..n * 3).map(|i| ((i * 31) % 17) as f64 / 17.0).collect();
    let mut img = RangeImage::new(h, w, 3, coords, features, mask).unwrap();
    img.clear_invalid();
    img
}

#[test]
fn shipped_specs_have_expected_blocks() {
    let count = |s: &NetworkSpec, k: BlockKind| s.blocks.iter().filter(|b| b.kind == k).count();
    let p = NetworkSpec::pedestrian(KernelKind::Conv2d, 1.0);
    assert_eq!((count(&p, BlockKind::Fe), count(&p, BlockKind::Fa)), (4, 1));
    let v = NetworkSpec::vehicle(KernelKind::Conv2d, 1.0);
    assert_eq!((count(&v, BlockKind::Fe), count(&v, BlockKind::Fa)), (8, 5));
    for s in [&p, &v] {
        for b in &s.blocks {
            match b.kind {
                BlockKind::Fe => assert!(b.layers == 10 || b.layers == 4),
                BlockKind::Fa => assert_eq!(b.layers, 4),
            }
        }
    }
}

#[test]
fn output_is_half_resolution() {
    for spec in [
        NetworkSpec::pedestrian(KernelKind::Conv2d, 0.25),
        NetworkSpec::vehicle(KernelKind::Conv2d, 0.25),
    ] {
        let net = Network::build(&spec, &mut rng()).unwrap();
        let img = image(16, 128, 5);
        let out = net.forward(&img, None).unwrap();
        assert_eq!(out.features.shape(), &[8, 64, net.output_channels()], "{}", spec.name);
        assert_eq!((out.geometry.height, out.geometry.width), (8, 64));
    }
}

#[test]
fn toml_round_trip() {
    let spec = NetworkSpec::vehicle(KernelKind::EdgeConv, 0.5)
        .with_block_kernel("fe3", KernelKind::RqConv2d)
        .unwrap();
    assert_eq!(NetworkSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    assert!(NetworkSpec::from_toml("name = 1").is_err());
}

#[test]
fn wiring_errors() {
    let mut s = NetworkSpec::pedestrian(KernelKind::Conv2d, 0.25);
    s.blocks[3].skip = Some("fe2".into());
    assert!(Network::build(&s, &mut rng()).is_err(), "skip at the same resolution");
    let mut s = NetworkSpec::pedestrian(KernelKind::Conv2d, 0.25);
    s.blocks[1].input = "fe4".into();
    assert!(Network::build(&s, &mut rng()).is_err(), "forward reference");
    let mut s = NetworkSpec::pedestrian(KernelKind::Conv2d, 0.25);
    s.blocks[0].stride = [3, 3];
    assert!(Network::build(&s, &mut rng()).is_err());
    let mut s = NetworkSpec::pedestrian(KernelKind::Conv2d, 0.25);
    s.output = "nope".into();
    assert!(Network::build(&s, &mut rng()).is_err());
}

#[test]
fn params_scale_quadratically_with_width() {
    let count = |m: f64| {
        Network::build(&NetworkSpec::pedestrian(KernelKind::Conv2d, m), &mut rng())
            .unwrap()
            .param_count() as f64
    };
    let ratio = count(2.0) / count(1.0);
    assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
}

#[test]
fn cost_report_is_additive_and_monotone() {
    let mut last = (0, 0);
    for m in [0.25, 0.5, 1.0, 2.0] {
        let net = Network::build(&NetworkSpec::pedestrian(KernelKind::PointNet, m), &mut rng()).unwrap();
        let c = net.cost(64, 265);
        assert_eq!(c.blocks.iter().map(|b| b.params).sum::<usize>(), c.total_params);
        assert_eq!(c.blocks.iter().map(|b| b.flops).sum::<u64>(), c.total_flops);
        assert_eq!(c.total_params, net.param_count());
        assert!(c.total_params > last.0 && c.total_flops > last.1);
        last = (c.total_params, c.total_flops);
    }
    // flops linear in pixel count when strides divide the size
    let net = Network::build(&NetworkSpec::pedestrian(KernelKind::EdgeConv, 0.25), &mut rng()).unwrap();
    assert_eq!(net.cost(64, 256).total_flops, 2 * net.cost(32, 256).total_flops);
}

#[test]
fn rq_network_is_k_times_conv() {
    let conv = Network::build(&NetworkSpec::pedestrian(KernelKind::Conv2d, 1.0), &mut rng()).unwrap();
    let rq = Network::build(&NetworkSpec::pedestrian(KernelKind::RqConv2d, 1.0), &mut rng()).unwrap();
    let ratio = rq.param_count() as f64 / conv.param_count() as f64;
    assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn all_invalid_input_gives_zero_output() {
    for kind in KernelKind::ALL {
        let net = Network::build(&NetworkSpec::pedestrian(kind, 0.25), &mut rng()).unwrap();
        let img = RangeImage::empty(8, 16, 3);
        let out = net.forward(&img, None).unwrap();
        assert!(out.features.data().iter().all(|&v| v == 0.0), "{kind}");
        assert!(out.geometry.mask.iter().all(|&m| !m));
    }
}

#[test]
fn zero_external_features_match_no_fusion() {
    let mut spec = NetworkSpec::pedestrian(KernelKind::EdgeConv, 0.25);
    let plain = Network::build(&spec, &mut rng()).unwrap();
    spec.external_channels = 2;
    let mut fused = Network::build(&spec, &mut rng()).unwrap();
    // copy every parameter, zero-padding the rows that read the external slice
    for ((name, t), (_, src)) in fused.params_mut().iter_mut().zip(plain.params()) {
        if t.shape() == src.shape() {
            *t = src.clone();
        } else {
            assert!(name.starts_with("fe1.l0.w1") || name.starts_with("fe1.u0.proj"), "{name}");
            let cols = t.shape()[1];
            let mut data = vec![0.0; t.len()];
            for r in 0..src.shape()[0] {
                // rows are [neighbor 3, center 3, encoding 3] in the plain first layer
                let dst = match (name.ends_with("w1"), r) {
                    (false, r) | (true, r @ 0..3) => r,
                    (true, r @ 3..6) => r + 2,
                    (true, r) => r + 4,
                };
                data[dst * cols..(dst + 1) * cols].copy_from_slice(&src.data()[r * cols..(r + 1) * cols]);
            }
            *t = Tensor::new(t.shape(), data).unwrap();
        }
    }
    let img = image(8, 16, 4);
    let ext = Tensor::zeros(&[8, 16, 2]);
    let a = plain.forward(&img, None).unwrap().features;
    let b = fused.forward(&img, Some(&ext)).unwrap().features;
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn mixed_spec_differs_from_plain() {
    let base = NetworkSpec::pedestrian(KernelKind::Conv2d, 0.25);
    let mixed = base.clone().with_block_kernel("fe1", KernelKind::EdgeConv).unwrap();
    let img = image(8, 32, 6);
    let a = Network::build(&base, &mut rng()).unwrap().forward(&img, None).unwrap().features;
    let b = Network::build(&mixed, &mut rng()).unwrap().forward(&img, None).unwrap().features;
    assert!(a.max_abs_diff(&b) > 1e-9);
}

#[test]
fn plan_matches_composed_downsampling() {
    let net = Network::build(&NetworkSpec::vehicle(KernelKind::Conv2d, 0.25), &mut rng()).unwrap();
    let img = image(16, 128, 3);
    let plan = net.plan(&img).unwrap();
    let (mut coords, mut mask) = (img.coords().to_vec(), img.mask().to_vec());
    let (mut h, mut w) = (16, 128);
    for (stride, level) in [((2, 2), 1), ((2, 2), 2), ((1, 2), 3), ((1, 2), 4)] {
        let rec = downsample_geometry(&coords, &mask, h, w, stride, net.spec.sampling).unwrap();
        (coords, mask) = rec.output_geometry();
        (h, w) = (rec.out_height, rec.out_width);
        assert_eq!(plan.levels[level].coords, coords);
        assert_eq!(plan.levels[level].mask, mask);
    }
}

#[test]
fn bucket_calibration_sets_every_rq_layer() {
    let mut net = Network::build(&NetworkSpec::pedestrian(KernelKind::RqConv2d, 0.25), &mut rng()).unwrap();
    let img = image(16, 64, 4);
    net.calibrate_buckets([&img]).unwrap();
    assert_eq!(net.buckets().len(), net.level_count());
    for b in net.buckets() {
        assert_eq!(b.len(), 4);
    }
    assert!(net.set_buckets(vec![default_buckets(2); net.level_count()]).is_err());
}
