//! 1-D residual network that regresses the alignment angles from a window
//! of paired DVL / INS velocities.
//!
//! Input is `[N, 6, W]` (DVL xyz, INS xyz), output `[N, 3]` roll / pitch /
//! yaw in degrees. Parameters live in one flat `f64` array described by a
//! name/offset layout; batch-norm running statistics live in a separate
//! buffer array. Gradients are computed by hand.

mod layers;
mod train;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::so3::EulerAngles;

pub use layers::{
    batchnorm_backward, batchnorm_eval, batchnorm_train, conv1d_forward, relu, relu_backward, BnCache, Conv1d,
    Tensor, BN_EPS, BN_MOMENTUM,
};
pub use train::{overfit, train, train_with_progress, write_history_csv, AdamState, EpochRecord, TrainConfig, TrainOutcome};

pub const INPUT_CHANNELS: usize = 6;
pub const OUTPUTS: usize = 3;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"IDVLNN01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub window_len: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub block_kernel: usize,
    /// Per-channel input standardization fitted on the training split.
    pub standardize_inputs: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// ResNet-18 layout: 64-filter stem, four stages of two basic blocks.
    pub fn full() -> Self {
        Self {
            window_len: 125,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![2, 2, 2, 2],
            block_kernel: 3,
            standardize_inputs: false,
        }
    }

    /// Same topology at reduced width, sized for CPU training.
    pub fn desk() -> Self {
        Self {
            stem_channels: 16,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: vec![1, 1, 1, 1],
            ..Self::full()
        }
    }

    /// Small enough for gradient checks and unit tests.
    pub fn tiny() -> Self {
        Self {
            window_len: 16,
            stem_channels: 4,
            stem_kernel: 3,
            stem_stride: 1,
            stage_channels: vec![4, 8],
            blocks_per_stage: vec![1, 1],
            block_kernel: 3,
            standardize_inputs: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::InvalidArgument(format!(
                "unknown model preset '{other}' (expected full, desk or tiny)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.window_len == 0
            || self.stem_channels == 0
            || self.stem_kernel == 0
            || self.stem_stride == 0
            || self.block_kernel == 0
            || self.stage_channels.is_empty()
            || self.stage_channels.len() != self.blocks_per_stage.len()
            || self.stage_channels.contains(&0)
            || self.blocks_per_stage.contains(&0);
        if bad {
            return Err(Error::InvalidArgument(format!("invalid model config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct BnUnit {
    channels: usize,
    /// `gamma` then `beta` in the parameter array.
    affine: usize,
    /// Running `mean` then `var` in the buffer array.
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBn {
    conv: Conv1d,
    weight: usize,
    bn: BnUnit,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    a: ConvBn,
    b: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    features: usize,
    weight: usize,
    bias: usize,
}

#[derive(Default)]
struct Alloc {
    params: usize,
    buffers: usize,
    layout: Vec<ParamEntry>,
}

impl Alloc {
    fn param(&mut self, name: String, len: usize) -> usize {
        let offset = self.params;
        self.layout.push(ParamEntry { name, offset, len });
        self.params += len;
        offset
    }

    fn conv_bn(&mut self, name: &str, conv: Conv1d) -> ConvBn {
        let weight = self.param(format!("{name}.conv.weight"), conv.weight_len());
        let affine = self.param(format!("{name}.bn.gamma"), conv.c_out);
        self.param(format!("{name}.bn.beta"), conv.c_out);
        let stats = self.buffers;
        self.buffers += 2 * conv.c_out;
        ConvBn {
            conv,
            weight,
            bn: BnUnit {
                channels: conv.c_out,
                affine,
                stats,
            },
        }
    }
}

/// Network topology with parameter offsets; holds no weights.
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    stem: ConvBn,
    blocks: Vec<Block>,
    head: Head,
    layout: Vec<ParamEntry>,
    n_params: usize,
    n_buffers: usize,
}

struct ConvBnCache {
    l_in: usize,
    cols: Vec<f64>,
    bn: BnCache,
}

struct BlockCache {
    a: ConvBnCache,
    a_out: Tensor,
    b: ConvBnCache,
    proj: Option<ConvBnCache>,
    out: Tensor,
}

struct ForwardCache {
    stem: ConvBnCache,
    stem_out: Tensor,
    blocks: Vec<BlockCache>,
    pooled: Vec<f64>,
    last: (usize, usize),
}

/// Either running statistics to read (inference) or an optional buffer to
/// update (training).
enum BnMode<'a> {
    Eval(&'a [f64]),
    Train(Option<&'a mut [f64]>),
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut alloc = Alloc::default();
        let stem = alloc.conv_bn(
            "stem",
            Conv1d {
                c_in: INPUT_CHANNELS,
                c_out: config.stem_channels,
                kernel: config.stem_kernel,
                stride: config.stem_stride,
                padding: config.stem_kernel / 2,
            },
        );
        let mut blocks = Vec::new();
        let mut c_in = config.stem_channels;
        let k = config.block_kernel;
        for (s, (&c_out, &n)) in config.stage_channels.iter().zip(&config.blocks_per_stage).enumerate() {
            for i in 0..n {
                let stride = if s > 0 && i == 0 { 2 } else { 1 };
                let name = format!("stage{s}.block{i}");
                let conv = |c_in, stride| Conv1d {
                    c_in,
                    c_out,
                    kernel: k,
                    stride,
                    padding: k / 2,
                };
                let a = alloc.conv_bn(&format!("{name}.a"), conv(c_in, stride));
                let b = alloc.conv_bn(&format!("{name}.b"), conv(c_out, 1));
                let proj = (stride != 1 || c_in != c_out).then(|| {
                    alloc.conv_bn(
                        &format!("{name}.proj"),
                        Conv1d {
                            c_in,
                            c_out,
                            kernel: 1,
                            stride,
                            padding: 0,
                        },
                    )
                });
                blocks.push(Block { a, b, proj });
                c_in = c_out;
            }
        }
        let head = Head {
            features: c_in,
            weight: alloc.param("head.weight".into(), OUTPUTS * c_in),
            bias: alloc.param("head.bias".into(), OUTPUTS),
        };
        Ok(Self {
            config: config.clone(),
            stem,
            blocks,
            head,
            layout: alloc.layout,
            n_params: alloc.params,
            n_buffers: alloc.buffers,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_buffers(&self) -> usize {
        self.n_buffers
    }

    fn conv_bn_forward(
        &self,
        cb: &ConvBn,
        params: &[f64],
        x: &Tensor,
        mode: &mut BnMode,
    ) -> Result<(Tensor, Option<ConvBnCache>)> {
        let w = &params[cb.weight..cb.weight + cb.conv.weight_len()];
        let c = cb.bn.channels;
        let (gamma, beta) = params[cb.bn.affine..cb.bn.affine + 2 * c].split_at(c);
        let stats = cb.bn.stats..cb.bn.stats + 2 * c;
        match mode {
            BnMode::Eval(buffers) => {
                let mut y = cb.conv.forward(x, w, None, None)?;
                batchnorm_eval(&mut y, gamma, beta, &buffers[stats]);
                Ok((y, None))
            }
            BnMode::Train(running) => {
                let mut cols = Vec::new();
                let mut y = cb.conv.forward(x, w, None, Some(&mut cols))?;
                let bn = batchnorm_train(&mut y, gamma, beta, running.as_deref_mut().map(|r| &mut r[stats]));
                Ok((y, Some(ConvBnCache { l_in: x.l, cols, bn })))
            }
        }
    }

    fn conv_bn_backward(&self, cb: &ConvBn, params: &[f64], grads: &mut [f64], cache: &ConvBnCache, mut dy: Tensor) -> Tensor {
        let c = cb.bn.channels;
        let gamma = &params[cb.bn.affine..cb.bn.affine + c];
        let (dgamma, dbeta) = grads[cb.bn.affine..cb.bn.affine + 2 * c].split_at_mut(c);
        batchnorm_backward(&mut dy, &cache.bn, gamma, dgamma, dbeta);
        let len = cb.conv.weight_len();
        let w = &params[cb.weight..cb.weight + len];
        cb.conv
            .backward(cache.l_in, &cache.cols, w, &mut grads[cb.weight..cb.weight + len], None, &dy)
    }

    fn forward_impl(&self, params: &[f64], x: &Tensor, mut mode: BnMode) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        if params.len() != self.n_params {
            return Err(Error::ShapeMismatch(format!(
                "network needs {} parameters, got {}",
                self.n_params,
                params.len()
            )));
        }
        if x.c != INPUT_CHANNELS {
            return Err(Error::ShapeMismatch(format!("expected {INPUT_CHANNELS} input channels, got {}", x.c)));
        }
        let (mut h, stem_cache) = self.conv_bn_forward(&self.stem, params, x, &mut mode)?;
        relu(&mut h);
        let stem_out = h.clone();
        let mut block_caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (mut a, a_cache) = self.conv_bn_forward(&block.a, params, &h, &mut mode)?;
            relu(&mut a);
            let (mut out, b_cache) = self.conv_bn_forward(&block.b, params, &a, &mut mode)?;
            let proj_cache = match &block.proj {
                Some(p) => {
                    let (skip, cache) = self.conv_bn_forward(p, params, &h, &mut mode)?;
                    out.data.iter_mut().zip(&skip.data).for_each(|(o, s)| *o += s);
                    cache
                }
                None => {
                    out.data.iter_mut().zip(&h.data).for_each(|(o, s)| *o += s);
                    None
                }
            };
            relu(&mut out);
            if let (Some(a_c), Some(b_c)) = (a_cache, b_cache) {
                block_caches.push(BlockCache {
                    a: a_c,
                    a_out: a,
                    b: b_c,
                    proj: proj_cache,
                    out: out.clone(),
                });
            }
            h = out;
        }

        let (n, c, l) = (h.n, h.c, h.l);
        let mut pooled = vec![0.0; n * c];
        for s in 0..n {
            for ch in 0..c {
                pooled[s * c + ch] = h.sample(s)[ch * l..(ch + 1) * l].iter().sum::<f64>() / l as f64;
            }
        }
        let hw = &params[self.head.weight..self.head.weight + OUTPUTS * c];
        let hb = &params[self.head.bias..self.head.bias + OUTPUTS];
        let mut y = vec![0.0; n * OUTPUTS];
        for s in 0..n {
            for o in 0..OUTPUTS {
                y[s * OUTPUTS + o] = hb[o] + (0..c).map(|ch| hw[o * c + ch] * pooled[s * c + ch]).sum::<f64>();
            }
        }
        let cache = stem_cache.map(|stem| ForwardCache {
            stem,
            stem_out,
            blocks: block_caches,
            pooled,
            last: (c, l),
        });
        Ok((y, cache))
    }

    fn backward(&self, params: &[f64], cache: &ForwardCache, dy: &[f64], n: usize) -> Vec<f64> {
        let mut grads = vec![0.0; self.n_params];
        let (c, l) = cache.last;
        let hw = &params[self.head.weight..self.head.weight + OUTPUTS * c];
        let mut dh = Tensor::zeros(n, c, l);
        for s in 0..n {
            for o in 0..OUTPUTS {
                let g = dy[s * OUTPUTS + o];
                grads[self.head.bias + o] += g;
                for ch in 0..c {
                    grads[self.head.weight + o * c + ch] += g * cache.pooled[s * c + ch];
                }
            }
            let ds = dh.sample_mut(s);
            for ch in 0..c {
                let d = (0..OUTPUTS).map(|o| dy[s * OUTPUTS + o] * hw[o * c + ch]).sum::<f64>() / l as f64;
                ds[ch * l..(ch + 1) * l].iter_mut().for_each(|v| *v = d);
            }
        }
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            relu_backward(&mut dh, &bc.out);
            let mut da = self.conv_bn_backward(&block.b, params, &mut grads, &bc.b, dh.clone());
            relu_backward(&mut da, &bc.a_out);
            let mut dx = self.conv_bn_backward(&block.a, params, &mut grads, &bc.a, da);
            let skip = match (&block.proj, &bc.proj) {
                (Some(p), Some(pc)) => self.conv_bn_backward(p, params, &mut grads, pc, dh),
                _ => dh,
            };
            dx.data.iter_mut().zip(&skip.data).for_each(|(a, b)| *a += b);
            dh = dx;
        }
        relu_backward(&mut dh, &cache.stem_out);
        self.conv_bn_backward(&self.stem, params, &mut grads, &cache.stem, dh);
        grads
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: [f64; INPUT_CHANNELS],
    pub std: [f64; INPUT_CHANNELS],
}

impl InputNorm {
    pub fn fit(samples: &[WindowSample]) -> Self {
        let mut sum = [0.0; INPUT_CHANNELS];
        let mut sq = [0.0; INPUT_CHANNELS];
        let mut count = 0.0;
        for s in samples {
            for i in 0..s.window_len() {
                for (c, v) in s.input_row(i).iter().enumerate() {
                    sum[c] += *v as f64;
                    sq[c] += (*v as f64).powi(2);
                }
                count += 1.0;
            }
        }
        let count = f64::max(count, 1.0);
        let mean = sum.map(|s| s / count);
        let mut std = [1.0; INPUT_CHANNELS];
        for c in 0..INPUT_CHANNELS {
            let var = sq[c] / count - mean[c] * mean[c];
            std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    n_params: usize,
    n_buffers: usize,
    input_norm: Option<InputNorm>,
}

/// Network topology plus weights and batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Model {
    pub network: Network,
    pub params: Vec<f64>,
    pub buffers: Vec<f64>,
    pub input_norm: Option<InputNorm>,
}

impl Model {
    /// He-normal convolution weights, unit batch-norm scale, small uniform
    /// head weights and zero head bias.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let network = Network::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; network.n_params];
        let mut init_conv = |cb: &ConvBn, params: &mut [f64]| {
            let fan_in = (cb.conv.c_in * cb.conv.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for w in &mut params[cb.weight..cb.weight + cb.conv.weight_len()] {
                *w = normal.sample(&mut rng);
            }
            params[cb.bn.affine..cb.bn.affine + cb.bn.channels].fill(1.0);
        };
        init_conv(&network.stem, &mut params);
        for b in &network.blocks {
            init_conv(&b.a, &mut params);
            init_conv(&b.b, &mut params);
            if let Some(p) = &b.proj {
                init_conv(p, &mut params);
            }
        }
        let bound = 1.0 / (network.head.features as f64).sqrt();
        let uniform = Uniform::new(-bound, bound).expect("valid bounds");
        for w in &mut params[network.head.weight..network.head.weight + OUTPUTS * network.head.features] {
            *w = uniform.sample(&mut rng);
        }
        let mut buffers = vec![0.0; network.n_buffers];
        let mut set_var = |cb: &ConvBn| {
            let c = cb.bn.channels;
            buffers[cb.bn.stats + c..cb.bn.stats + 2 * c].fill(1.0);
        };
        set_var(&network.stem);
        for b in &network.blocks {
            set_var(&b.a);
            set_var(&b.b);
            if let Some(p) = &b.proj {
                set_var(p);
            }
        }
        Ok(Self {
            network,
            params,
            buffers,
            input_norm: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.network.config
    }

    pub fn n_params(&self) -> usize {
        self.network.n_params
    }

    /// Packs windows into a `[N, 6, W]` tensor.
    pub fn input_tensor(&self, batch: &[&WindowSample]) -> Result<Tensor> {
        let w = self.config().window_len;
        let mut x = Tensor::zeros(batch.len(), INPUT_CHANNELS, w);
        for (s, sample) in batch.iter().enumerate() {
            if sample.window_len() != w || sample.ins.len() != 3 * w {
                return Err(Error::ShapeMismatch(format!(
                    "model expects W={w}, window has {} rows",
                    sample.window_len()
                )));
            }
            let xs = x.sample_mut(s);
            for i in 0..w {
                for (c, v) in sample.input_row(i).iter().enumerate() {
                    xs[c * w + i] = match &self.input_norm {
                        Some(norm) => (*v as f64 - norm.mean[c]) / norm.std[c],
                        None => *v as f64,
                    };
                }
            }
        }
        Ok(x)
    }

    /// Inference-mode outputs `[N * 3]` in degrees.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.network.forward_impl(&self.params, x, BnMode::Eval(&self.buffers))?.0)
    }

    pub fn predict_deg(&self, samples: &[WindowSample]) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(64) {
            let refs: Vec<&WindowSample> = chunk.iter().collect();
            let y = self.forward(&self.input_tensor(&refs)?)?;
            out.extend(y.chunks_exact(OUTPUTS).map(|r| [r[0], r[1], r[2]]));
        }
        Ok(out)
    }

    pub fn predict(&self, samples: &[WindowSample]) -> Result<Vec<EulerAngles>> {
        Ok(self
            .predict_deg(samples)?
            .into_iter()
            .map(EulerAngles::from_degrees_array)
            .collect())
    }

    fn targets(batch: &[&WindowSample]) -> Vec<f64> {
        batch.iter().flat_map(|s| s.label_deg.map(f64::from)).collect()
    }

    fn sq_loss(y: &[f64], t: &[f64], n: usize) -> f64 {
        y.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n.max(1) as f64
    }

    /// Training-mode loss (batch statistics) and its gradient with respect to
    /// every parameter. Running statistics are updated when `update_running`.
    pub fn loss_and_gradients(&mut self, batch: &[&WindowSample], update_running: bool) -> Result<(f64, Vec<f64>)> {
        let x = self.input_tensor(batch)?;
        let running = update_running.then_some(self.buffers.as_mut_slice());
        let (y, cache) = self.network.forward_impl(&self.params, &x, BnMode::Train(running))?;
        let t = Self::targets(batch);
        let n = batch.len();
        let loss = Self::sq_loss(&y, &t, n);
        let dy: Vec<f64> = y.iter().zip(&t).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        let grads = self.network.backward(&self.params, &cache.expect("training pass caches"), &dy, n);
        Ok((loss, grads))
    }

    /// Training-mode loss without touching running statistics.
    pub fn train_loss(&self, batch: &[&WindowSample]) -> Result<f64> {
        let x = self.input_tensor(batch)?;
        let (y, _) = self.network.forward_impl(&self.params, &x, BnMode::Train(None))?;
        Ok(Self::sq_loss(&y, &Self::targets(batch), batch.len()))
    }

    /// Inference-mode mean over samples of the summed squared angle error.
    pub fn eval_loss(&self, samples: &[WindowSample]) -> Result<f64> {
        let pred = self.predict_deg(samples)?;
        let total: f64 = pred
            .iter()
            .zip(samples)
            .map(|(p, s)| (0..3).map(|j| (p[j] - s.label_deg[j] as f64).powi(2)).sum::<f64>())
            .sum();
        Ok(total / samples.len().max(1) as f64)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            config: self.config().clone(),
            n_params: self.params.len(),
            n_buffers: self.buffers.len(),
            input_norm: self.input_norm,
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + 8 * (self.params.len() + self.buffers.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.iter().chain(&self.buffers) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptManifest(format!("checkpoint: {m}"));
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| corrupt(&e.to_string()))?;
        let network = Network::new(&header.config)?;
        if header.n_params != network.n_params || header.n_buffers != network.n_buffers {
            return Err(corrupt("parameter count does not match config"));
        }
        let values = &bytes[12 + hlen..];
        if values.len() != 8 * (header.n_params + header.n_buffers) {
            return Err(corrupt("parameter block has wrong length"));
        }
        let mut floats = values.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let params = floats.by_ref().take(header.n_params).collect();
        let buffers = floats.collect();
        Ok(Self {
            network,
            params,
            buffers,
            input_norm: header.input_norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests;
