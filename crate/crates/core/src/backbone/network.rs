use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use rand::Rng;

use super::spec::{BlockKind, NetworkSpec, INPUT};
use crate::error::{Error, Result};
use crate::kernels::{KernelConfig, KernelKind, KernelParams, LevelGeometry, RqBuckets};
use crate::rangeimage::{downsample_geometry, RangeImage, SamplingRecord};
use crate::tensorcore::{Tape, Tensor, Var};

/// A resolution level: the input grid or the result of one entry stride.
#[derive(Clone, Debug)]
pub(crate) struct LevelSpec {
    pub parent: Option<usize>,
    pub stride: (usize, usize),
}

#[derive(Clone, Debug)]
pub(crate) struct LayerPlan {
    pub config: KernelConfig,
    pub params: Range<usize>,
    pub level: usize,
    pub di: usize,
    pub dout: usize,
}

/// `relu(layers(x) + shortcut(x))` with ReLU between the layers.
#[derive(Clone, Debug)]
pub(crate) struct Unit {
    pub layers: Vec<LayerPlan>,
    /// 1x1 projection on the shortcut when widths differ.
    pub proj: Option<usize>,
}

#[derive(Clone, Debug)]
pub(crate) enum BlockBody {
    Fe {
        source: Option<usize>,
        downsample: bool,
    },
    Fa {
        low: usize,
        skip: Option<usize>,
        /// Levels whose records are replayed in reverse, lowest first.
        up_chain: Vec<usize>,
        agg: LayerPlan,
    },
}

#[derive(Clone, Debug)]
pub(crate) struct BlockPlan {
    pub name: String,
    pub body: BlockBody,
    pub units: Vec<Unit>,
    pub level: usize,
    pub channels: usize,
    /// Parameter indices owned by this block.
    pub params: Range<usize>,
}

/// Per-sample coordinate/mask pyramid, one geometry per resolution level. It
/// depends on the input only, so it can be cached across epochs.
#[derive(Clone, Debug)]
pub struct FramePlan {
    pub levels: Vec<Arc<LevelGeometry>>,
    /// Sampling record that produced each level from its parent.
    pub records: Vec<Option<SamplingRecord>>,
}

/// A parameterized backbone.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: NetworkSpec,
    params: Vec<(String, Tensor)>,
    pub(crate) levels: Vec<LevelSpec>,
    pub(crate) blocks: Vec<BlockPlan>,
    /// RQ bucket boundaries per level.
    pub(crate) buckets: Vec<RqBuckets>,
    output: usize,
}

/// Buckets used before calibration: fixed 0.5 m widths around zero.
pub fn default_buckets(k: usize) -> RqBuckets {
    let half = k as f64 / 2.0;
    RqBuckets::from_cuts((1..k).map(|i| (i as f64 - half) * 0.5).collect()).expect("increasing cuts")
}

struct Builder<'a, R: Rng + ?Sized> {
    spec: &'a NetworkSpec,
    params: Vec<(String, Tensor)>,
    buckets: RqBuckets,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn layer(&mut self, prefix: &str, kind: KernelKind, level: usize, di: usize, dout: usize, gain: f64) -> LayerPlan {
        let p = KernelParams::init(
            kind,
            di,
            dout,
            self.spec.neighborhood,
            &self.spec.kernel_options,
            Some(self.buckets.clone()),
            gain,
            self.rng,
        );
        let start = self.params.len();
        for (name, t) in p.tensor_names().iter().zip(p.tensors) {
            self.params.push((format!("{prefix}.{name}"), t));
        }
        LayerPlan {
            config: p.config,
            params: start..self.params.len(),
            level,
            di,
            dout,
        }
    }

    fn units(&mut self, block: &str, kind: KernelKind, level: usize, di: usize, d: usize, count: usize) -> Vec<Unit> {
        let mut units = Vec::new();
        let mut width = di;
        let mut index = 0;
        while index < count {
            let n = (count - index).min(2);
            let proj = (width != d).then(|| {
                let std = (2.0 / width as f64).sqrt();
                let dist = rand_distr::Normal::new(0.0, std).expect("finite std");
                let t = Tensor::from_fn(&[width, d], |_| rand_distr::Distribution::sample(&dist, &mut *self.rng));
                self.params.push((format!("{block}.u{}.proj", units.len()), t));
                self.params.len() - 1
            });
            let mut layers = Vec::new();
            for j in 0..n {
                let gain = if j + 1 == n { 0.5 } else { 1.0 };
                let input = if j == 0 { width } else { d };
                layers.push(self.layer(&format!("{block}.l{}", index + j), kind, level, input, d, gain));
            }
            units.push(Unit { layers, proj });
            width = d;
            index += n;
        }
        units
    }
}

impl Network {
    /// Validates the wiring and draws initial weights.
    pub fn build<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        if !(spec.multiplier > 0.0 && spec.multiplier.is_finite()) {
            return Err(Error::Config(format!("depth multiplier must be positive, got {}", spec.multiplier)));
        }
        if spec.input_scale.len() != spec.input_channels {
            return Err(Error::Config(format!(
                "input_scale has {} entries for {} input channels",
                spec.input_scale.len(),
                spec.input_channels
            )));
        }
        if spec.kernel_options.rq_buckets == 0 {
            return Err(Error::Config("rq_buckets must be at least 1".into()));
        }
        let wiring = |msg: String| Error::Config(format!("network {:?}: {msg}", spec.name));
        let mut b = Builder {
            spec,
            params: Vec::new(),
            buckets: default_buckets(spec.kernel_options.rq_buckets),
            rng,
        };
        let mut levels = vec![LevelSpec { parent: None, stride: (1, 1) }];
        let mut blocks: Vec<BlockPlan> = Vec::new();
        let mut by_name: HashMap<&str, usize> = HashMap::new();
        let in_channels = spec.input_channels + spec.external_channels;
        // (level, channels) of a source
        let source = |blocks: &[BlockPlan], by_name: &HashMap<&str, usize>, name: &str| -> Result<(Option<usize>, usize, usize)> {
            if name == INPUT {
                return Ok((None, 0, in_channels));
            }
            let &i = by_name
                .get(name)
                .ok_or_else(|| wiring(format!("unknown or later block {name:?}")))?;
            Ok((Some(i), blocks[i].level, blocks[i].channels))
        };
        for bs in &spec.blocks {
            if bs.name == INPUT || by_name.contains_key(bs.name.as_str()) {
                return Err(wiring(format!("duplicate block name {:?}", bs.name)));
            }
            if bs.layers == 0 {
                return Err(wiring(format!("block {:?} has no layers", bs.name)));
            }
            if bs.channels == 0 {
                return Err(wiring(format!("block {:?} has zero channels", bs.name)));
            }
            let kind = spec.block_kernel(bs);
            let d = spec.width(bs.channels);
            let start = b.params.len();
            let (body, level, di) = match bs.kind {
                BlockKind::Fe => {
                    if bs.skip.is_some() {
                        return Err(wiring(format!("FE block {:?} cannot take a skip input", bs.name)));
                    }
                    let [sh, sw] = bs.stride;
                    if !(sh.is_power_of_two() && sw.is_power_of_two()) {
                        return Err(wiring(format!("stride {:?} of {:?} is not a power of two", bs.stride, bs.name)));
                    }
                    let (src, src_level, di) = source(&blocks, &by_name, &bs.input)?;
                    let downsample = (sh, sw) != (1, 1);
                    let level = if downsample {
                        levels.push(LevelSpec {
                            parent: Some(src_level),
                            stride: (sh, sw),
                        });
                        levels.len() - 1
                    } else {
                        src_level
                    };
                    (BlockBody::Fe { source: src, downsample }, level, di)
                }
                BlockKind::Fa => {
                    if bs.stride != [1, 1] {
                        return Err(wiring(format!("FA block {:?} cannot stride", bs.name)));
                    }
                    let skip_name = bs
                        .skip
                        .as_deref()
                        .ok_or_else(|| wiring(format!("FA block {:?} needs a skip source", bs.name)))?;
                    let (low, low_level, low_c) = source(&blocks, &by_name, &bs.input)?;
                    let low = low.ok_or_else(|| wiring(format!("FA block {:?} cannot up-sample the input", bs.name)))?;
                    let (skip, skip_level, skip_c) = source(&blocks, &by_name, skip_name)?;
                    let mut up_chain = Vec::new();
                    let mut l = low_level;
                    while l != skip_level {
                        up_chain.push(l);
                        l = levels[l].parent.ok_or_else(|| {
                            wiring(format!(
                                "FA block {:?}: skip {skip_name:?} is not at a higher resolution than {:?}",
                                bs.name, bs.input
                            ))
                        })?;
                    }
                    if up_chain.is_empty() {
                        return Err(wiring(format!(
                            "FA block {:?}: sources {:?} and {skip_name:?} share a resolution",
                            bs.name, bs.input
                        )));
                    }
                    let agg = b.layer(&format!("{}.agg", bs.name), kind, skip_level, low_c, d, 1.0);
                    (
                        BlockBody::Fa {
                            low,
                            skip,
                            up_chain,
                            agg,
                        },
                        skip_level,
                        d + skip_c,
                    )
                }
            };
            let units = b.units(&bs.name, kind, level, di, d, bs.layers);
            blocks.push(BlockPlan {
                name: bs.name.clone(),
                body,
                units,
                level,
                channels: d,
                params: start..b.params.len(),
            });
            by_name.insert(&bs.name, blocks.len() - 1);
        }
        let output = *by_name
            .get(spec.output.as_str())
            .ok_or_else(|| wiring(format!("output block {:?} not found", spec.output)))?;
        let buckets = vec![b.buckets.clone(); levels.len()];
        Ok(Self {
            spec: spec.clone(),
            params: b.params,
            levels,
            blocks,
            buckets,
            output,
        })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn output_channels(&self) -> usize {
        self.blocks[self.output].channels
    }

    /// Level index of the output feature map.
    pub fn output_level(&self) -> usize {
        self.blocks[self.output].level
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Input channels including the external hook.
    pub fn input_channels(&self) -> usize {
        self.spec.input_channels + self.spec.external_channels
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    /// RQ bucket boundaries per level.
    pub fn buckets(&self) -> &[RqBuckets] {
        &self.buckets
    }

    /// Replaces the RQ boundaries of every level. Each entry needs the
    /// configured bucket count.
    pub fn set_buckets(&mut self, buckets: Vec<RqBuckets>) -> Result<()> {
        let k = self.spec.kernel_options.rq_buckets;
        if buckets.len() != self.levels.len() || buckets.iter().any(|b| b.len() != k) {
            return Err(Error::Config(format!(
                "expected {} levels of {k} buckets, got {:?}",
                self.levels.len(),
                buckets.iter().map(RqBuckets::len).collect::<Vec<_>>()
            )));
        }
        for block in &mut self.blocks {
            let agg = match &mut block.body {
                BlockBody::Fa { agg, .. } => Some(agg),
                BlockBody::Fe { .. } => None,
            };
            for layer in agg.into_iter().chain(block.units.iter_mut().flat_map(|u| u.layers.iter_mut())) {
                if let KernelConfig::RqConv2d { buckets: b } = &mut layer.config {
                    *b = buckets[layer.level].clone();
                }
            }
        }
        self.buckets = buckets;
        Ok(())
    }

    /// Equal-mass RQ boundaries per level from the range differences of
    /// `samples` at every level's resolution.
    pub fn calibrate_buckets<'a>(&mut self, samples: impl IntoIterator<Item = &'a RangeImage>) -> Result<()> {
        let mut diffs: Vec<Vec<f64>> = vec![Vec::new(); self.levels.len()];
        for img in samples {
            let plan = self.plan(img)?;
            for (l, geo) in plan.levels.iter().enumerate() {
                diffs[l].extend(crate::rangeimage::collect_delta_r(
                    &geo.coords,
                    &geo.mask,
                    geo.height,
                    geo.width,
                    self.spec.neighborhood,
                ));
            }
        }
        let k = self.spec.kernel_options.rq_buckets;
        let buckets = diffs
            .iter_mut()
            .map(|d| crate::rangeimage::quantile_buckets(d, k))
            .collect::<Result<Vec<_>>>()?;
        // too few samples can leave fewer distinct buckets than configured
        let buckets = buckets
            .into_iter()
            .map(|b| if b.len() == k { b } else { default_buckets(k) })
            .collect();
        self.set_buckets(buckets)
    }

    /// Geometry pyramid for one input image.
    pub fn plan(&self, img: &RangeImage) -> Result<FramePlan> {
        let nbhd = self.spec.neighborhood;
        let enc = self.spec.encoding;
        let mut levels: Vec<Arc<LevelGeometry>> = Vec::with_capacity(self.levels.len());
        let mut records = Vec::with_capacity(self.levels.len());
        levels.push(Arc::new(LevelGeometry::from_image(img, nbhd, enc)?));
        records.push(None);
        for spec in &self.levels[1..] {
            let parent = &levels[spec.parent.expect("non-root level")];
            let rec = downsample_geometry(
                &parent.coords,
                &parent.mask,
                parent.height,
                parent.width,
                spec.stride,
                self.spec.sampling,
            )?;
            let (coords, mask) = rec.output_geometry();
            levels.push(Arc::new(LevelGeometry::new(
                coords,
                mask,
                rec.out_height,
                rec.out_width,
                nbhd,
                enc,
            )?));
            records.push(Some(rec));
        }
        Ok(FramePlan { levels, records })
    }

    /// Scaled image channels followed by the external features (zeros when
    /// the hook is enabled but nothing is supplied).
    pub fn input_tensor(&self, img: &RangeImage, external: Option<&Tensor>) -> Result<Tensor> {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        if c != self.spec.input_channels {
            return Err(Error::shape("network input", &[h, w, self.spec.input_channels], &[h, w, c]));
        }
        let e = self.spec.external_channels;
        if let Some(ext) = external {
            if ext.shape() != [h, w, e] {
                return Err(Error::shape("external features", &[h, w, e], ext.shape()));
            }
        }
        let mut data = Vec::with_capacity(h * w * (c + e));
        for p in 0..h * w {
            data.extend(img.pixel_features(p).iter().zip(&self.spec.input_scale).map(|(v, s)| v * s));
            match external {
                Some(ext) => data.extend_from_slice(&ext.data()[p * e..(p + 1) * e]),
                None => data.extend(std::iter::repeat_n(0.0, e)),
            }
        }
        Tensor::new(&[h, w, c + e], data)
    }

    fn apply_layer(&self, tape: &mut Tape, vars: &[Var], plan: &FramePlan, layer: &LayerPlan, x: Var) -> Result<Var> {
        tape.kernel(&plan.levels[layer.level], &layer.config, x, &vars[layer.params.clone()])
    }

    fn apply_units(&self, tape: &mut Tape, vars: &[Var], plan: &FramePlan, units: &[Unit], mut x: Var) -> Result<Var> {
        for unit in units {
            let mut h = x;
            for (j, layer) in unit.layers.iter().enumerate() {
                h = self.apply_layer(tape, vars, plan, layer, h)?;
                if j + 1 < unit.layers.len() {
                    h = tape.relu(h);
                }
            }
            let shortcut = match unit.proj {
                Some(pi) => {
                    let s = tape.value(x).shape().to_vec();
                    let flat = tape.reshape(x, &[s[0] * s[1], s[2]])?;
                    let y = tape.matmul(flat, vars[pi])?;
                    let d = tape.value(vars[pi]).shape()[1];
                    tape.reshape(y, &[s[0], s[1], d])?
                }
                None => x,
            };
            let sum = tape.add(h, shortcut)?;
            x = tape.relu(sum);
        }
        Ok(x)
    }

    /// Records the backbone on `tape`. `vars` are the parameters in
    /// [`Network::params`] order and `input` the `[H, W, C]` input map.
    /// Returns the output feature map at [`Network::output_level`].
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], plan: &FramePlan, input: Var) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(Error::Contract(format!("expected {} parameter vars, got {}", self.params.len(), vars.len())));
        }
        if plan.levels.len() != self.levels.len() {
            return Err(Error::Contract("frame plan built for another network".into()));
        }
        let mut outputs: Vec<Var> = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let x = match &block.body {
                BlockBody::Fe { source, downsample } => {
                    let mut x = source.map_or(input, |s| outputs[s]);
                    if *downsample {
                        let rec = plan.records[block.level].as_ref().expect("strided level has a record");
                        let c = *tape.value(x).shape().last().unwrap();
                        x = tape.gather_rows(x, &rec.selected, &[rec.out_height, rec.out_width, c])?;
                    }
                    x
                }
                BlockBody::Fa {
                    low,
                    skip,
                    up_chain,
                    agg,
                } => {
                    let mut x = outputs[*low];
                    for &l in up_chain {
                        let rec = plan.records[l].as_ref().expect("strided level has a record");
                        let c = *tape.value(x).shape().last().unwrap();
                        x = tape.scatter_rows(x, &rec.selected, &[rec.source_height, rec.source_width, c])?;
                    }
                    x = self.apply_layer(tape, vars, plan, agg, x)?;
                    x = tape.relu(x);
                    let s = skip.map_or(input, |s| outputs[s]);
                    tape.concat_last(&[x, s])?
                }
            };
            let y = self.apply_units(tape, vars, plan, &block.units, x)?;
            outputs.push(y);
        }
        Ok(outputs[self.output])
    }

    /// Inference without gradients.
    pub fn forward(&self, img: &RangeImage, external: Option<&Tensor>) -> Result<BackboneOutput> {
        let plan = self.plan(img)?;
        let input = self.input_tensor(img, external)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|(_, t)| tape.constant(t.clone())).collect();
        let x = tape.constant(input);
        let y = self.forward_tape(&mut tape, &vars, &plan, x)?;
        Ok(BackboneOutput {
            features: tape.value(y).clone(),
            geometry: Arc::clone(&plan.levels[self.output_level()]),
        })
    }

    /// Per-block parameter counts and FLOPs for an `h x w` input.
    pub fn cost(&self, h: usize, w: usize) -> super::CostReport {
        super::cost::report(self, h, w)
    }
}

/// Backbone features with the coordinates and mask of their grid.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    pub features: Tensor,
    pub geometry: Arc<LevelGeometry>,
}
