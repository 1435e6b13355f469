//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.
//!
//! The desk-scale overfit (criterion 9) trains seven models and takes about an
//! hour on one core, so it only runs when `RANGEVIEW_ACCEPT_OVERFIT=1` is set:
//!
//! ```text
//! RANGEVIEW_ACCEPT_OVERFIT=1 cargo test --release -p rangeview-cli --test acceptance
//! ```

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rangeview::backbone::NetworkSpec;
use rangeview::detector::{decode_box, make_targets, ClassSpec, DetectorConfig, FocalParams, Model, RegressionFrame, TargetBox};
use rangeview::geometry::{positional_encoding, wrap_angle, Box7DoF, CartesianVec3, Encoding, SphericalCoord};
use rangeview::kernels::{apply_kernel, AttentionMode, KernelKind, KernelOptions, KernelParams, LevelGeometry, Neighborhood, RqBuckets};
use rangeview::labels::{Detection, Label};
use rangeview::metrics::{evaluate, iou_3d, iou_bev, EvalConfig, IouMode};
use rangeview::rangeimage::{smart_downsample, smart_upsample, RangeImage};
use rangeview::simgen::{generate_frame, generate_frames, SimConfig};
use rangeview::tensorcore::gradcheck::{max_rel_err, numeric_grad, rel_err, spread_indices};
use rangeview::tensorcore::{Tape, Tensor, Var};
use rangeview::train::{evaluate_model, frame_gradient, train, RunFiles, TrainConfig, TrainState};
use rangeview_cli::commands::bench_csv;
use rangeview_cli::RunConfig;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

fn main() {
    let overfit = std::env::var("RANGEVIEW_ACCEPT_OVERFIT").is_ok_and(|v| v == "1");
    let criteria: [(&str, fn() -> Check); 10] = [
        ("kernel oracle equivalence", kernel_oracles),
        ("kernel reductions", reductions),
        ("positional encoding", encoding),
        ("gradient suite", gradients),
        ("smart sampling", sampling),
        ("mask soundness", mask_soundness),
        ("targets", targets),
        ("metrics", metrics),
        ("desk-scale overfit", desk_overfit),
        ("complexity accounting", complexity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if n == 9 && !overfit {
            println!("criterion {n} {name}: SKIP (set RANGEVIEW_ACCEPT_OVERFIT=1 to run, about an hour)");
            continue;
        }
        let t0 = Instant::now();
        let res = run();
        let secs = t0.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {n} {name}: PASS ({detail}; {secs:.1} s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({why}; {secs:.1} s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// brute-force oracles

fn s2c(theta: f64, phi: f64, r: f64) -> [f64; 3] {
    [r * theta.cos() * phi.cos(), r * theta.cos() * phi.sin(), r * theta.sin()]
}

/// Neighbor offset relative to the center, written as the difference of two
/// sphere-to-Cartesian conversions.
fn gamma(c: SphericalCoord, n: SphericalCoord) -> [f64; 3] {
    let a = s2c(n.theta - c.theta, n.phi - c.phi, n.r);
    let b = s2c(0.0, 0.0, c.r);
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

struct Grid {
    h: usize,
    w: usize,
    d: usize,
    coords: Vec<SphericalCoord>,
    mask: Vec<bool>,
    x: Vec<f64>,
}

impl Grid {
    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> Self {
        let coords = (0..h * w)
            .map(|i| {
                SphericalCoord::new(
                    -0.1 + 0.02 * (i / w) as f64 + rng.random_range(-0.003..0.003),
                    0.3 - 0.015 * (i % w) as f64 + rng.random_range(-0.003..0.003),
                    rng.random_range(2.0..12.0),
                )
            })
            .collect();
        let p = rng.random_range(0.3..0.95);
        let mask = (0..h * w).map(|_| rng.random_bool(p)).collect();
        let x = (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { h, w, d, coords, mask, x }
    }

    fn geometry(&self) -> LevelGeometry {
        LevelGeometry::new(self.coords.clone(), self.mask.clone(), self.h, self.w, Neighborhood::default(), Encoding::Polar).unwrap()
    }

    fn features(&self) -> Tensor {
        Tensor::new(&[self.h, self.w, self.d], self.x.clone()).unwrap()
    }

    /// In-image 3x3 neighbors of `p` as (offset index, pixel), offsets
    /// row-major from the top-left.
    fn neighbors(&self, p: usize) -> Vec<(usize, usize)> {
        let (r, c) = ((p / self.w) as isize, (p % self.w) as isize);
        let mut out = Vec::new();
        for dr in -1..=1isize {
            for dc in -1..=1isize {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < self.h && (cc as usize) < self.w {
                    out.push((((dr + 1) * 3 + dc + 1) as usize, rr as usize * self.w + cc as usize));
                }
            }
        }
        out
    }

    fn feat(&self, p: usize) -> &[f64] {
        &self.x[p * self.d..(p + 1) * self.d]
    }
}

/// `v · W` for a row-major `[v.len(), cols]` block.
fn vecmat(v: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, vi) in v.iter().enumerate() {
        for j in 0..cols {
            out[j] += vi * w[i * cols + j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn oracle_conv(g: &Grid, w: &[f64], dout: usize, gated: bool) -> Vec<f64> {
    let mut out = vec![0.0; g.h * g.w * dout];
    for p in 0..g.h * g.w {
        for (o, q) in g.neighbors(p) {
            if gated && !(g.mask[p] && g.mask[q]) {
                continue;
            }
            for i in 0..g.d {
                for j in 0..dout {
                    out[p * dout + j] += g.x[q * g.d + i] * w[(o * g.d + i) * dout + j];
                }
            }
        }
    }
    out
}

fn oracle_rq(g: &Grid, w: &[f64], cuts: &[f64], dout: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.h * g.w * dout];
    for p in 0..g.h * g.w {
        for (o, q) in g.neighbors(p) {
            if !(g.mask[p] && g.mask[q]) {
                continue;
            }
            let dr = g.coords[q].r - g.coords[p].r;
            let k = cuts.iter().filter(|&&c| c <= dr).count();
            for i in 0..g.d {
                for j in 0..dout {
                    out[p * dout + j] += g.x[q * g.d + i] * w[((k * 9 + o) * g.d + i) * dout + j];
                }
            }
        }
    }
    out
}

fn oracle_attention(g: &Grid, t: &[Tensor], strict: bool) -> Vec<f64> {
    let (dk, dout) = (t[0].shape()[1], t[2].shape()[1]);
    let mut out = vec![0.0; g.h * g.w * dout];
    for p in (0..g.h * g.w).filter(|&p| g.mask[p]) {
        let q = vecmat(g.feat(p), t[0].data(), dk);
        let mut entries = Vec::new();
        for (_, n) in g.neighbors(p) {
            if !strict && !g.mask[n] {
                continue;
            }
            let k = vecmat(g.feat(n), t[1].data(), dk);
            let gm = gamma(g.coords[p], g.coords[n]);
            let mut logit = dot(&q, &k);
            for c in 0..3 {
                logit += dot(&t[3].data()[c * dk..(c + 1) * dk], &q) * gm[c];
            }
            entries.push((n, logit));
        }
        let z: f64 = entries.iter().map(|e| e.1.exp()).sum();
        for (n, logit) in entries {
            if !g.mask[n] {
                continue;
            }
            let v = vecmat(g.feat(n), t[2].data(), dout);
            let a = logit.exp() / z;
            for j in 0..dout {
                out[p * dout + j] += a * v[j];
            }
        }
    }
    out
}

fn oracle_mlp(g: &Grid, t: &[Tensor], edge: bool) -> Vec<f64> {
    let (hd, dout) = (t[0].shape()[1], t[2].shape()[1]);
    let mut out = vec![0.0; g.h * g.w * dout];
    for p in (0..g.h * g.w).filter(|&p| g.mask[p]) {
        let mut best = vec![f64::NEG_INFINITY; dout];
        for (_, n) in g.neighbors(p).into_iter().filter(|&(_, n)| g.mask[n]) {
            let mut input = g.feat(n).to_vec();
            if edge {
                input.extend_from_slice(g.feat(p));
            }
            input.extend(gamma(g.coords[p], g.coords[n]));
            let hidden: Vec<f64> = vecmat(&input, t[0].data(), hd)
                .iter()
                .zip(t[1].data())
                .map(|(a, b)| (a + b).max(0.0))
                .collect();
            let y = vecmat(&hidden, t[2].data(), dout);
            for j in 0..dout {
                best[j] = best[j].max(y[j] + t[3].data()[j]);
            }
        }
        out[p * dout..(p + 1) * dout].copy_from_slice(&best);
    }
    out
}

#[derive(Clone, Copy, Debug)]
enum Variant {
    Conv,
    GatedConv,
    Rq,
    Attention,
    StrictAttention,
    PointNet,
    EdgeConv,
}

const VARIANTS: [Variant; 7] = [
    Variant::Conv,
    Variant::GatedConv,
    Variant::Rq,
    Variant::Attention,
    Variant::StrictAttention,
    Variant::PointNet,
    Variant::EdgeConv,
];

const CUTS: [f64; 3] = [-1.0, 0.0, 1.0];

impl Variant {
    fn kind(self) -> KernelKind {
        match self {
            Variant::Conv | Variant::GatedConv => KernelKind::Conv2d,
            Variant::Rq => KernelKind::RqConv2d,
            Variant::Attention | Variant::StrictAttention => KernelKind::SelfAttention,
            Variant::PointNet => KernelKind::PointNet,
            Variant::EdgeConv => KernelKind::EdgeConv,
        }
    }

    /// Kernels whose output ignores invalid features entirely. Plain Conv2D is
    /// ungated, and strict attention lets invalid keys into its normalizer.
    fn gated(self) -> bool {
        !matches!(self, Variant::Conv | Variant::StrictAttention)
    }

    fn params(self, rng: &mut ChaCha8Rng, di: usize, dout: usize) -> KernelParams {
        let opts = KernelOptions {
            conv_gated: matches!(self, Variant::GatedConv),
            attention: if matches!(self, Variant::StrictAttention) { AttentionMode::Strict } else { AttentionMode::Masked },
            ..Default::default()
        };
        let buckets = RqBuckets::from_cuts(CUTS.to_vec()).unwrap();
        let mut p = KernelParams::init(self.kind(), di, dout, Neighborhood::default(), &opts, Some(buckets), 1.0, rng);
        for t in &mut p.tensors {
            for v in t.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        p
    }

    fn oracle(self, g: &Grid, p: &KernelParams, dout: usize) -> Vec<f64> {
        let t = &p.tensors;
        match self {
            Variant::Conv => oracle_conv(g, t[0].data(), dout, false),
            Variant::GatedConv => oracle_conv(g, t[0].data(), dout, true),
            Variant::Rq => oracle_rq(g, t[0].data(), &CUTS, dout),
            Variant::Attention => oracle_attention(g, t, false),
            Variant::StrictAttention => oracle_attention(g, t, true),
            Variant::PointNet => oracle_mlp(g, t, false),
            Variant::EdgeConv => oracle_mlp(g, t, true),
        }
    }
}

// ---------------------------------------------------------------------------
// criteria

fn kernel_oracles() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for variant in VARIANTS {
        for _ in 0..40 {
            let g = Grid::random(&mut rng, 8, 8, 4);
            let p = variant.params(&mut rng, 4, 3);
            let got = apply_kernel(&g.geometry(), &g.features(), &p).map_err(|e| e.to_string())?;
            let want = variant.oracle(&g, &p, 3);
            let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure!(err <= 1e-12, "{variant:?}: max abs error {err:e}");
            worst = worst.max(err);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!("7 variants x 40 random 8x8x4 inputs, max abs error {worst:.1e}"))
}

fn reductions() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    for _ in 0..50 {
        let mut g = Grid::random(&mut rng, 8, 8, 4);
        g.mask.fill(true);
        let geo = g.geometry();
        let x = g.features();
        let w = Tensor::from_fn(&[3, 3, 4, 3], |_| rng.random_range(-1.0..1.0));
        let conv = apply_kernel(&geo, &x, &KernelParams::conv2d(w.clone(), false).unwrap()).unwrap();
        let rq = KernelParams::rq_conv2d(w.reshape(&[1, 3, 3, 4, 3]).unwrap(), RqBuckets::single()).unwrap();
        ensure!(apply_kernel(&geo, &x, &rq).unwrap() == conv, "RQ with one bucket differs from Conv2D");

        let g = Grid::random(&mut rng, 8, 8, 4);
        let geo = g.geometry();
        let x = g.features();
        let mut ec = Variant::EdgeConv.params(&mut rng, 4, 3);
        ec.tensors[0].data_mut()[4 * 3..8 * 3].fill(0.0);
        let w1 = ec.tensors[0].data();
        let pn_w1: Vec<f64> = w1[..4 * 3].iter().chain(&w1[8 * 3..]).copied().collect();
        let pn = KernelParams::pointnet(
            Tensor::new(&[7, 3], pn_w1).unwrap(),
            ec.tensors[1].clone(),
            ec.tensors[2].clone(),
            ec.tensors[3].clone(),
        )
        .unwrap();
        ensure!(
            apply_kernel(&geo, &x, &ec).unwrap() == apply_kernel(&geo, &x, &pn).unwrap(),
            "EdgeConv without center rows differs from PointNet"
        );
    }
    Ok("50 random inputs each, bitwise equal".into())
}

fn encoding() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let mut point = || SphericalCoord::new(rng.random_range(-0.6..0.6), rng.random_range(-PI..PI), rng.random_range(0.5..120.0));
        let (a, b) = (point(), point());
        let got = positional_encoding(a, b).to_array();
        let want = gamma(a, b);
        for c in 0..3 {
            worst = worst.max((got[c] - want[c]).abs());
        }
        ensure!(positional_encoding(a, a).to_array() == [0.0; 3], "nonzero self encoding at {a:?}");
    }
    ensure!(worst <= 1e-12, "max abs error {worst:e}");
    Ok(format!("1e5 random pairs, max abs error {worst:.1e}, self encoding exactly zero"))
}

const FD_TOL: f64 = 1e-4;
const STEPS: [f64; 3] = [1e-5, 1e-6, 1e-7];

fn kernel_gradients(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for variant in VARIANTS {
        let g = Grid::random(rng, 5, 6, 3);
        let geo = Arc::new(g.geometry());
        let p = variant.params(rng, 3, 2);
        let c = Tensor::from_fn(&[5, 6, 2], |_| rng.random_range(-1.0..1.0));
        let mut all = vec![g.features()];
        all.extend(p.tensors.iter().cloned());
        let loss_of = |inputs: &[Tensor]| -> f64 {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
            let y = tape.kernel(&geo, &p.config, vars[0], &vars[1..]).unwrap();
            tape.value(y).data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = all.iter().map(|t| tape.param(t.clone())).collect();
        let y = tape.kernel(&geo, &p.config, vars[0], &vars[1..]).unwrap();
        let cv = tape.constant(c.clone());
        let prod = tape.mul(y, cv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        for (slot, var) in vars.iter().enumerate() {
            let analytic = grads.get_or_zeros(*var, all[slot].shape());
            let f = |t: &Tensor| {
                let mut inputs = all.clone();
                inputs[slot] = t.clone();
                loss_of(&inputs)
            };
            let err = max_rel_err(f, &all[slot], &analytic, &(0..all[slot].len()).collect::<Vec<_>>(), 1e-5);
            ensure!(err <= FD_TOL, "{variant:?} input {slot}: rel err {err:e}");
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn loss_gradients(rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let (n, k) = (30, 3);
    let logits = Tensor::from_fn(&[n, k], |_| rng.random_range(-2.0..2.0));
    let cls: Vec<f64> = (0..n * 2).map(|i| if i % 7 == 0 { 1.0 } else { rng.random_range(0.0..0.99) }).collect();
    let valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
    let focal = |t: &Tensor, param: bool| {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), param);
        let l = tape.focal_loss(x, &cls, &valid, FocalParams::default()).unwrap();
        (tape.value(l).item().unwrap(), param.then(|| tape.backward(l).unwrap().get(x).unwrap().clone()))
    };
    let g = focal(&logits, true).1.unwrap();
    let idx: Vec<usize> = (0..n * k).collect();
    let e1 = max_rel_err(|t| focal(t, false).0, &logits, &g, &idx, 1e-5);
    ensure!(e1 <= FD_TOL, "focal loss: rel err {e1:e}");

    // keep predictions away from the L1 kink
    let target: Vec<f64> = (0..n * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let pred = Tensor::from_fn(&[n, 8], |i| target[i] + if rng.random_bool(0.5) { 0.3 } else { -0.3 });
    let l1 = |t: &Tensor, param: bool| {
        let mut tape = Tape::new();
        let x = tape.leaf(t.clone(), param);
        let l = tape.l1_loss(x, &target, &valid).unwrap();
        (tape.value(l).item().unwrap(), param.then(|| tape.backward(l).unwrap().get(x).unwrap().clone()))
    };
    let g = l1(&pred, true).1.unwrap();
    let idx: Vec<usize> = (0..n * 8).collect();
    let e2 = max_rel_err(|t| l1(t, false).0, &pred, &g, &idx, 1e-5);
    ensure!(e2 <= FD_TOL, "L1 loss: rel err {e2:e}");
    Ok(e1.max(e2))
}

/// Small synthetic sensor so full-network checks stay fast.
fn small_sim() -> SimConfig {
    let mut sim = SimConfig::default();
    sim.sensor.beams = 16;
    sim.sensor.width = 64;
    sim
}

/// First small frame whose output grid has at least one regression target.
fn labeled_small_frame(model: &Model) -> (RangeImage, Vec<Label>) {
    let sim = small_sim();
    (0..200)
        .map(|i| generate_frame(&sim, 5, i).unwrap())
        .find(|(img, labels)| {
            !labels.is_empty() && model.prepare(img, labels).unwrap().targets.reg_valid.iter().any(|&v| v)
        })
        .expect("a small frame with a visible pedestrian")
}

fn network_gradients(kind: KernelKind) -> Result<f64, String> {
    let spec = NetworkSpec::pedestrian(kind, 0.25);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = Model::build(&spec, DetectorConfig::default(), &mut rng).unwrap();
    // Zero-initialized biases put ReLUs exactly on their corner wherever a
    // zero-feature pixel meets itself; move to a generic point first.
    for (_, t) in model.named_params_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.01..0.01);
        }
    }
    let (img, labels) = labeled_small_frame(&model);
    let frame = model.prepare(&img, &labels).unwrap();
    let (_, analytic) = frame_gradient(&model, &frame).map_err(|e| e.to_string())?;
    let params: Vec<Tensor> = model.named_params().map(|(_, t)| t.clone()).collect();
    let names: Vec<&str> = model.named_params().map(|(n, _)| n.as_str()).collect();
    let mut worst = 0.0f64;
    for (slot, p) in params.iter().enumerate() {
        let f = |t: &Tensor| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params
                .iter()
                .enumerate()
                .map(|(i, q)| tape.constant(if i == slot { t.clone() } else { q.clone() }))
                .collect();
            let loss = model.loss_tape(&mut tape, &vars, &frame).unwrap();
            tape.value(loss.total).data()[0]
        };
        // Deep max-pool and ReLU stacks put kinks close to some coordinates, and
        // tiny gradients drown in round-off at small steps. Each coordinate
        // takes the best of three steps; a wrong gradient misses at all of them.
        let mut err = 0.0f64;
        for i in spread_indices(p.len(), 3) {
            let a = analytic[slot].data()[i];
            let mut e = f64::INFINITY;
            for h in STEPS {
                e = e.min(rel_err(a, numeric_grad(f, p, &[i], h)[0]));
                if e <= FD_TOL {
                    break;
                }
            }
            ensure!(e <= FD_TOL, "{kind} network, {}[{i}]: rel err {e:e}", names[slot]);
            err = err.max(e);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

fn gradients() -> Check {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        worst = worst.max(kernel_gradients(&mut rng)?);
    }
    worst = worst.max(loss_gradients(&mut rng)?);
    for kind in KernelKind::ALL {
        worst = worst.max(network_gradients(kind)?);
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.0} s");
    Ok(format!("7 kernel variants, focal and L1, five full pedestrian nets at 0.25; max rel err {worst:.1e}"))
}

fn image(h: usize, w: usize, ranges: &[Option<f64>], features: &[f64]) -> RangeImage {
    let coords = (0..h * w)
        .map(|i| SphericalCoord::new(0.01 * (i / w) as f64, -0.01 * (i % w) as f64, ranges[i].unwrap_or(0.0)))
        .collect();
    let mask = ranges.iter().map(Option::is_some).collect();
    RangeImage::new(h, w, features.len() / (h * w), coords, features.to_vec(), mask).unwrap()
}

fn sampling() -> Check {
    // the window {4, 6, invalid, invalid}: mean 5, tie goes to the lower index
    let img = image(2, 2, &[Some(4.0), Some(6.0), None, None], &[1.0, 2.0, 3.0, 4.0]);
    let (low, rec) = smart_downsample(&img, 2, 2).unwrap();
    ensure!(rec.selected == [Some(0)] && low.coords()[0].r == 4.0 && low.features() == [1.0], "tie example picked {:?}", rec.selected);
    let img = image(2, 2, &[Some(4.0), Some(7.0), Some(5.0), None], &[1.0, 2.0, 3.0, 4.0]);
    ensure!(smart_downsample(&img, 2, 2).unwrap().1.selected == [Some(2)], "closest-to-mean example");
    let img = image(2, 2, &[None, None, Some(9.0), None], &[1.0, 2.0, 3.0, 4.0]);
    ensure!(smart_downsample(&img, 2, 2).unwrap().1.selected == [Some(2)], "singleton example");
    let img = image(2, 2, &[None; 4], &[1.0, 2.0, 3.0, 4.0]);
    let (low, _) = smart_downsample(&img, 2, 2).unwrap();
    ensure!(!low.mask()[0] && low.features() == [0.0], "all-invalid window must give an invalid zero pixel");

    // scatter of 3.5 back to the recorded index
    let img = image(2, 2, &[Some(8.0), Some(3.0), Some(4.0), Some(5.0)], &[0.0; 4]);
    let (mut low, rec) = smart_downsample(&img, 2, 2).unwrap();
    let at = rec.selected[0].unwrap();
    low.features_mut()[0] = 3.5;
    let up = smart_upsample(&low, &rec).unwrap();
    let want: Vec<f64> = (0..4).map(|i| if i == at { 3.5 } else { 0.0 }).collect();
    ensure!(up.features() == want, "scatter gave {:?}", up.features());

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut windows = 0;
    for trial in 0..500 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let (sh, sw) = (rng.random_range(1..4), rng.random_range(1..4));
        let p = rng.random_range(0.0..1.0);
        let ranges: Vec<Option<f64>> = (0..h * w).map(|_| rng.random_bool(p).then(|| rng.random_range(1.0..50.0))).collect();
        let feats: Vec<f64> = (0..h * w * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let img = image(h, w, &ranges, &feats);
        let (low, rec) = smart_downsample(&img, sh, sw).unwrap();
        for (o, sel) in rec.selected.iter().enumerate() {
            let (r0, c0) = (o / rec.out_width * sh, o % rec.out_width * sw);
            let any_valid = (r0..(r0 + sh).min(h)).any(|r| (c0..(c0 + sw).min(w)).any(|c| img.mask()[r * w + c]));
            let picked_valid = sel.is_some_and(|i| img.mask()[i]);
            ensure!(any_valid == picked_valid && any_valid == low.mask()[o], "trial {trial}: window {o} validity");
            windows += 1;
        }
        let up = smart_upsample(&low, &rec).unwrap();
        let bits = |im: &RangeImage| -> Vec<[u64; 3]> { im.coords().iter().map(|c| [c.theta.to_bits(), c.phi.to_bits(), c.r.to_bits()]).collect() };
        ensure!(bits(&up) == bits(&img) && up.mask() == img.mask(), "trial {trial}: round trip changed coords or mask");
    }
    Ok(format!("4 worked examples, scatter example, {windows} random windows, 500 round trips"))
}

fn fuzz_invalid(rng: &mut ChaCha8Rng, values: &mut [f64], mask: &[bool], d: usize) {
    for (i, v) in values.iter_mut().enumerate() {
        if !mask[i / d] {
            *v = rng.random_range(-1e3..1e3);
        }
    }
}

fn mask_soundness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let gated: Vec<Variant> = VARIANTS.into_iter().filter(|v| v.gated()).collect();
    for trial in 0..1000 {
        let g = Grid::random(&mut rng, 8, 8, 4);
        let geo = g.geometry();
        let x = g.features();
        let mut y = x.clone();
        fuzz_invalid(&mut rng, y.data_mut(), &g.mask, 4);
        for &v in &gated {
            let p = v.params(&mut rng, 4, 3);
            ensure!(apply_kernel(&geo, &x, &p).unwrap() == apply_kernel(&geo, &y, &p).unwrap(), "trial {trial}: {v:?} output changed");
        }
    }

    let spec = NetworkSpec::pedestrian(KernelKind::EdgeConv, 0.25);
    let model = Model::build(&spec, DetectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let (img, labels) = labeled_small_frame(&model);
    let loss_of = |im: &RangeImage| {
        let frame = model.prepare(im, &labels).unwrap();
        let mut tape = Tape::new();
        let vars: Vec<Var> = model.named_params().map(|(_, t)| tape.constant(t.clone())).collect();
        let l = model.loss_tape(&mut tape, &vars, &frame).unwrap();
        (frame.targets, tape.value(l.total).data()[0])
    };
    let (base_targets, base_loss) = loss_of(&img);
    for trial in 0..1000 {
        let mut fuzzed = img.clone();
        let (d, mask) = (fuzzed.channels(), fuzzed.mask().to_vec());
        fuzz_invalid(&mut rng, fuzzed.features_mut(), &mask, d);
        let (t, l) = loss_of(&fuzzed);
        ensure!(t == base_targets, "trial {trial}: targets changed");
        ensure!(l.to_bits() == base_loss.to_bits(), "trial {trial}: loss {l} vs {base_loss}");
    }
    Ok(format!("1000 trials over {} gated kernels, 1000 trials of targets and network loss", gated.len()))
}

fn targets() -> Check {
    let config = DetectorConfig { classes: vec![ClassSpec::pedestrian(), ClassSpec::vehicle()], ..Default::default() };
    let sigmas = config.sigmas();
    let sim = SimConfig::default();
    let (mut boxes_checked, mut pixels_checked) = (0, 0);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (img, labels) = generate_frame(&sim, 9, i).unwrap();
        let points = img.points();
        let boxes: Vec<TargetBox> = labels
            .iter()
            .filter_map(|l| config.class_index(&l.class).map(|class| TargetBox { class, bbox: l.bbox }))
            .collect();
        for frame in [RegressionFrame::Azimuth, RegressionFrame::World] {
            let t = make_targets(&points, img.mask(), &boxes, &sigmas, 2, frame);
            for b in &boxes {
                let inside: Vec<usize> = (0..points.len()).filter(|&p| img.mask()[p] && b.bbox.contains(points[p])).collect();
                if inside.is_empty() {
                    continue;
                }
                ensure!(inside.iter().any(|&p| t.cls[p * 2 + b.class] == 1.0), "frame {i}: occupied box without a unit target");
                boxes_checked += 1;
            }
            for p in (0..points.len()).filter(|&p| t.reg_valid[p]) {
                let got = decode_box(points[p], &t.reg[p * 8..(p + 1) * 8], frame);
                let err = |b: &Box7DoF| {
                    let d = got.center - b.center;
                    let c = d.norm();
                    let rest = [got.length - b.length, got.width - b.width, got.height - b.height, wrap_angle(got.yaw - b.yaw)];
                    c.max(rest.iter().fold(0.0, |m, v| m.max(v.abs())))
                };
                let e = boxes.iter().map(|b| err(&b.bbox)).fold(f64::INFINITY, f64::min);
                ensure!(e <= 1e-9, "frame {i}: decoded box is {e:e} from every label");
                worst = worst.max(e);
                pixels_checked += 1;
            }
        }
    }
    ensure!(boxes_checked > 0 && pixels_checked > 0, "no labels were exercised");
    Ok(format!("{boxes_checked} occupied boxes, {pixels_checked} round trips in both frames, max error {worst:.1e}"))
}

fn random_box(rng: &mut ChaCha8Rng) -> Box7DoF {
    Box7DoF::new(
        CartesianVec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-1.0..1.0)),
        rng.random_range(0.5..5.0),
        rng.random_range(0.5..3.0),
        rng.random_range(0.5..2.0),
        rng.random_range(-PI..PI),
    )
    .unwrap()
}

fn inside_bev(b: &Box7DoF, x: f64, y: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let (dx, dy) = (x - b.center.x, y - b.center.y);
    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
    u.abs() <= b.length / 2.0 && v.abs() <= b.width / 2.0
}

/// Intersection area from one jittered sample per cell of an `n x n` grid over
/// the first box's circumscribed square.
fn mc_intersection(a: &Box7DoF, b: &Box7DoF, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let half = 0.5 * a.length.hypot(a.width);
    let (x0, y0, cell) = (a.center.x - half, a.center.y - half, 2.0 * half / n as f64);
    let mut hits = 0usize;
    for i in 0..n {
        for j in 0..n {
            let x = x0 + (i as f64 + rng.random::<f64>()) * cell;
            let y = y0 + (j as f64 + rng.random::<f64>()) * cell;
            if inside_bev(a, x, y) && inside_bev(b, x, y) {
                hits += 1;
            }
        }
    }
    hits as f64 * cell * cell
}

fn overall(report: &rangeview::metrics::EvalReport) -> Vec<(f64, f64)> {
    report
        .classes
        .iter()
        .flat_map(|c| std::iter::once(&c.overall).chain(c.buckets.iter().map(|b| &b.1)))
        .filter_map(|s| Some((s.ap?, s.aph?)))
        .collect()
}

fn metrics() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for _ in 0..100 {
        let a = random_box(&mut rng);
        let b = if rng.random_bool(0.8) {
            let mut b = random_box(&mut rng);
            b.center.x = a.center.x + rng.random_range(-1.5..1.5);
            b.center.y = a.center.y + rng.random_range(-1.5..1.5);
            b.center.z = a.center.z + rng.random_range(-0.8..0.8);
            b
        } else {
            random_box(&mut rng)
        };
        let inter = mc_intersection(&a, &b, 1000, &mut rng);
        let bev = inter / (a.bev_area() + b.bev_area() - inter);
        let dz = (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0);
        let inter3 = inter * dz;
        let three_d = inter3 / (a.volume() + b.volume() - inter3);
        let e = (bev - iou_bev(&a, &b)).abs().max((three_d - iou_3d(&a, &b)).abs());
        ensure!(e <= 1e-3, "Monte Carlo disagrees by {e:e} for {a:?} / {b:?}");
        worst = worst.max(e);
        overlapping += usize::from(inter > 0.0);
    }

    let mut runs = 0;
    for _ in 0..200 {
        let frames = rng.random_range(1..4);
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..frames {
            let g: Vec<Label> = (0..rng.random_range(0..6)).map(|_| Label { class: "pedestrian".into(), bbox: random_box(&mut rng) }).collect();
            let mut d = Vec::new();
            for l in g.iter().filter(|_| rng.random_bool(0.8)).collect::<Vec<_>>() {
                let mut b = l.bbox;
                b.center.x += rng.random_range(-0.3..0.3);
                b.yaw += rng.random_range(-PI..PI);
                d.push(Detection { class: l.class.clone(), bbox: b, score: rng.random() });
            }
            d.extend((0..rng.random_range(0..3)).map(|_| Detection { class: "pedestrian".into(), bbox: random_box(&mut rng), score: rng.random() }));
            gts.push(g);
            dets.push(d);
        }
        for mode in [IouMode::Bev, IouMode::ThreeD] {
            let cfg = EvalConfig { mode, default_iou: 0.3, iou_thresholds: Default::default(), ..Default::default() };
            for (ap, aph) in overall(&evaluate(&dets, &gts, &cfg)) {
                ensure!(aph <= ap + 1e-12, "APH {aph} above AP {ap}");
                runs += 1;
            }
        }
    }

    let gts: Vec<Vec<Label>> = (0..3).map(|_| (0..4).map(|_| Label { class: "pedestrian".into(), bbox: random_box(&mut rng) }).collect()).collect();
    let flipped: Vec<Vec<Detection>> = gts
        .iter()
        .map(|f| {
            f.iter()
                .map(|l| {
                    let mut b = l.bbox;
                    b.yaw = wrap_angle(b.yaw + PI);
                    Detection { class: l.class.clone(), bbox: b, score: 0.9 }
                })
                .collect()
        })
        .collect();
    for mode in [IouMode::Bev, IouMode::ThreeD] {
        let cfg = EvalConfig { mode, ..Default::default() };
        let r = evaluate(&flipped, &gts, &cfg);
        let s = &r.classes[0].overall;
        let (ap, aph) = (s.ap.unwrap_or(0.0), s.aph.unwrap_or(1.0));
        ensure!(ap == 1.0 && aph.abs() <= 1e-12, "flipped headings in {mode:?}: AP {ap}, APH {aph}");
    }
    Ok(format!("100 pairs ({overlapping} overlapping) within {worst:.1e}; APH <= AP on {runs} scores; flipped headings AP 1, APH 0"))
}

fn desk_overfit() -> Check {
    let t0 = Instant::now();
    let train_data = generate_frames(&SimConfig::default(), 10, 1).map_err(|e| e.to_string())?;
    let held_out = generate_frames(&SimConfig::default(), 50, 2).map_err(|e| e.to_string())?;
    let mut bev = EvalConfig { mode: IouMode::Bev, ..Default::default() };
    bev.iou_thresholds.insert("pedestrian".into(), 0.5);
    let cfg = TrainConfig { batch_size: Some(1), epochs: Some(100), lr: 1e-2, ..Default::default() };
    let fit = |kind: KernelKind, seed: u64| -> Result<Model, String> {
        let spec = NetworkSpec::pedestrian(kind, 0.25);
        let mut model = Model::build(&spec, DetectorConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(|e| e.to_string())?;
        let mut state = TrainState::fresh(&model);
        train(&mut model, &train_data, &cfg, seed, &mut state, &RunFiles::default(), |_| {}).map_err(|e| e.to_string())?;
        Ok(model)
    };
    let ap = |model: &Model, data: &[(RangeImage, Vec<Label>)]| -> Result<f64, String> {
        let r = evaluate_model(model, data, &bev).map_err(|e| e.to_string())?;
        Ok(r.ap(IouMode::Bev, "pedestrian").unwrap_or(0.0))
    };

    let edge0 = fit(KernelKind::EdgeConv, 0)?;
    let fit_secs = t0.elapsed().as_secs_f64();
    let train_ap = ap(&edge0, &train_data)?;
    println!("  overfit: EdgeConv BEV AP {train_ap:.3} on the training frames after {fit_secs:.0} s");

    let mut edge_aps = vec![ap(&edge0, &held_out)?];
    let mut conv_aps = Vec::new();
    for seed in 0..3 {
        if seed > 0 {
            edge_aps.push(ap(&fit(KernelKind::EdgeConv, seed)?, &held_out)?);
        }
        conv_aps.push(ap(&fit(KernelKind::Conv2d, seed)?, &held_out)?);
        println!("  seed {seed}: held-out AP EdgeConv {:.3}, Conv2D {:.3}", edge_aps[seed as usize], conv_aps[seed as usize]);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (me, mc) = (mean(&edge_aps), mean(&conv_aps));
    ensure!(fit_secs <= 900.0, "overfit took {fit_secs:.0} s, budget 900 s (AP {train_ap:.3})");
    ensure!(train_ap >= 0.95, "training-frame BEV AP {train_ap:.3} < 0.95 after {fit_secs:.0} s");
    ensure!(me >= mc, "held-out mean AP EdgeConv {me:.3} < Conv2D {mc:.3}");
    Ok(format!("train AP {train_ap:.3} in {fit_secs:.0} s; held-out mean AP EdgeConv {me:.3} vs Conv2D {mc:.3}"))
}

fn complexity() -> Check {
    let csv = bench_csv(&RunConfig::default()).map_err(|e| e.to_string())?;
    ensure!(csv.lines().any(|l| l.starts_with('#')), "no convention comment in the header");
    let rows: Vec<Vec<&str>> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').collect()).collect();
    let find = |preset: &str, kernel: &str, m: &str| rows.iter().find(|r| r[0] == preset && r[1] == kernel && r[2] == m);
    let mults = ["0.25", "0.5", "1", "2"];
    let mut compared = 0;
    for preset in ["pedestrian", "vehicle"] {
        for m in mults {
            let (Some(conv), Some(rq)) = (find(preset, "conv2d", m), find(preset, "rqconv2d", m)) else {
                return Err(format!("missing {preset} row at multiplier {m}"));
            };
            let k: u64 = rq[5].parse().map_err(|_| "bad K")?;
            let (rf, cf): (u64, u64) = (rq[8].parse().map_err(|_| "bad flops")?, conv[8].parse().map_err(|_| "bad flops")?);
            ensure!(rf == k * cf, "{preset} x{m}: RQ kernel flops {rf} != {k} x {cf}");
            compared += 1;
        }
        for kernel in ["conv2d", "rqconv2d", "selfattention", "pointnet", "edgeconv"] {
            for col in [6, 7] {
                let v: Vec<u64> = mults.iter().filter_map(|m| find(preset, kernel, m)?[col].parse().ok()).collect();
                ensure!(v.len() == 4 && v.windows(2).all(|w| w[0] < w[1]), "{preset} {kernel} column {col} not increasing: {v:?}");
            }
        }
    }
    Ok(format!("RQ = K x Conv2D kernel flops on {compared} rows; params and flops strictly increase with the multiplier"))
}
