//! The degradation estimation network: a U-Net whose encoder stages also feed
//! a pooled-statistics regression head.
//!
//! Frames go through the encoder/decoder independently. For the head, every
//! encoder stage output is summarised per channel by its spatial mean, the log
//! spatial standard deviation, the log standard deviation of its column
//! profile (mean over rows) and the log standard deviation weighted by the
//! smoothed input brightness. Those per-frame numbers are then pooled over time.
//! In `MeanStd` mode the log standard deviation over time of each of them is
//! appended, together with the log column-profile deviation of the
//! time-averaged features, which separates clip-constant from per-frame
//! structure.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::{DenConfig, TemporalPooling};
use super::layers::{
    avg_pool2, avg_pool2_backward, leaky, leaky_backward, leaky_inplace, sigmoid, upsample2,
    upsample2_backward, Conv, Linear, Tensor, LEAKY_SLOPE,
};
use crate::clip::VideoClip;
use crate::error::{Error, Result};
use crate::params::NOISE_VECTOR_LEN;
use crate::rng::RandomSource;

pub(crate) const LOG_EPS: f64 = 1e-8;

pub type Normalized = [f64; NOISE_VECTOR_LEN];

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub enc: Vec<[Conv; 2]>,
    pub dec: Vec<[Conv; 2]>,
    pub head: Option<Conv>,
    pub mlp: Vec<Linear>,
    pub n_params: usize,
}

impl Layout {
    fn new(cfg: &DenConfig) -> Self {
        let mut off = 0;
        let mut conv = |cin: usize, cout: usize, k: usize| {
            let c = Conv {
                cin,
                cout,
                k,
                w_off: off,
                b_off: off + cout * cin * k * k,
            };
            off = c.b_off + cout;
            c
        };
        let mut enc = Vec::new();
        for l in 0..=cfg.depth {
            let cin = if l == 0 { cfg.channels } else { cfg.level_channels(l - 1) };
            let ch = cfg.level_channels(l);
            enc.push([conv(cin, ch, 3), conv(ch, ch, 3)]);
        }
        let mut dec = Vec::new();
        let mut head = None;
        if cfg.variant.has_decoder() {
            for l in 0..cfg.depth {
                let ch = cfg.level_channels(l);
                dec.push([conv(cfg.level_channels(l + 1) + ch, ch, 3), conv(ch, ch, 3)]);
            }
            head = Some(conv(cfg.base_channels, cfg.channels, 1));
        }
        let mut mlp = Vec::new();
        if cfg.variant.has_head() {
            let mut inputs = cfg.descriptor_len();
            for &outputs in cfg.mlp_hidden.iter().chain(std::iter::once(&NOISE_VECTOR_LEN)) {
                let w_off = off;
                let b_off = w_off + inputs * outputs;
                off = b_off + outputs;
                mlp.push(Linear {
                    inputs,
                    outputs,
                    w_off,
                    b_off,
                });
                inputs = outputs;
            }
        }
        Self {
            enc,
            dec,
            head,
            mlp,
            n_params: off,
        }
    }
}

/// Summary statistics of one feature map, per channel.
#[derive(Debug, Clone)]
struct MapStats {
    mean: Vec<f64>,
    var: Vec<f64>,
    cols: Vec<Vec<f64>>,
    col_var: Vec<f64>,
    /// Variance weighted by local input brightness.
    bright_var: Vec<f64>,
    /// Brightness weights of this stage, summing to one.
    weights: Vec<f64>,
}

impl MapStats {
    fn of(t: &Tensor, weights: Vec<f64>) -> Self {
        let n = t.plane_len() as f64;
        let mut out = Self {
            mean: Vec::with_capacity(t.c),
            var: Vec::with_capacity(t.c),
            cols: Vec::with_capacity(t.c),
            col_var: Vec::with_capacity(t.c),
            bright_var: Vec::with_capacity(t.c),
            weights,
        };
        for c in 0..t.c {
            let p = t.plane(c);
            let m = p.iter().sum::<f64>() / n;
            let var = p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            let bright = p.iter().zip(&out.weights).map(|(v, w)| w * (v - m).powi(2)).sum::<f64>();
            let mut cols = vec![0.0; t.w];
            for row in p.chunks_exact(t.w) {
                for (a, v) in cols.iter_mut().zip(row) {
                    *a += v;
                }
            }
            cols.iter_mut().for_each(|a| *a /= t.h as f64);
            let col_var = cols.iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.w as f64;
            out.mean.push(m);
            out.var.push(var);
            out.cols.push(cols);
            out.col_var.push(col_var);
            out.bright_var.push(bright);
        }
        out
    }

    /// Per-frame scalars of channel `c`: mean, then log deviations (spatial, column, bright-weighted).
    fn scalars(&self, c: usize) -> [f64; FRAME_SCALARS] {
        [
            self.mean[c],
            log_std(self.var[c]),
            log_std(self.col_var[c]),
            log_std(self.bright_var[c]),
        ]
    }
}

const FRAME_SCALARS: usize = 4;
const WEIGHT_FLOOR: f64 = 1e-3;

/// Brightness weights for every encoder stage, from the frame's
/// channel-averaged input smoothed over `2^depth` blocks.
fn brightness_weights(x: &Tensor, depth: usize) -> Vec<Vec<f64>> {
    let block = 1usize << depth;
    let (bh, bw) = (x.h / block, x.w / block);
    let mut coarse = vec![0.0; bh * bw];
    for c in 0..x.c {
        for (i, v) in x.plane(c).iter().enumerate() {
            let (y, xx) = (i / x.w, i % x.w);
            coarse[(y / block) * bw + xx / block] += v;
        }
    }
    let per_block = (x.c * block * block) as f64;
    coarse.iter_mut().for_each(|v| *v = (*v / per_block).max(0.0) + WEIGHT_FLOOR);
    (0..=depth)
        .map(|l| {
            let (h, w) = (x.h >> l, x.w >> l);
            let scale = block >> l;
            let mut wts: Vec<f64> = (0..h * w).map(|i| coarse[(i / w / scale) * bw + (i % w) / scale]).collect();
            let total: f64 = wts.iter().sum();
            wts.iter_mut().for_each(|v| *v /= total);
            wts
        })
        .collect()
}

fn log_std(var: f64) -> f64 {
    0.5 * (var + LOG_EPS).ln()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
}

/// Column-profile mean over frames and its variance around its own mean.
fn time_mean_cols(frames: &[&MapStats], c: usize) -> (Vec<f64>, f64, f64) {
    let w = frames[0].cols[c].len();
    let t = frames.len() as f64;
    let mut cols = vec![0.0; w];
    for f in frames {
        for (a, v) in cols.iter_mut().zip(&f.cols[c]) {
            *a += v;
        }
    }
    cols.iter_mut().for_each(|a| *a /= t);
    let (m, var) = mean_var(&cols);
    (cols, m, var)
}

/// Descriptor entries for one stage: `frames[t]` holds that stage's stats at frame `t`.
fn stage_descriptor(frames: &[&MapStats], pooling: TemporalPooling, out: &mut Vec<f64>) {
    let channels = frames[0].mean.len();
    for c in 0..channels {
        let per_frame: Vec<[f64; FRAME_SCALARS]> = frames.iter().map(|f| f.scalars(c)).collect();
        let series: Vec<Vec<f64>> = (0..FRAME_SCALARS)
            .map(|j| per_frame.iter().map(|s| s[j]).collect())
            .collect();
        let pooled: Vec<(f64, f64)> = series.iter().map(|s| mean_var(s)).collect();
        out.extend(pooled.iter().map(|p| p.0));
        if pooling == TemporalPooling::MeanStd {
            out.extend(pooled.iter().map(|p| log_std(p.1)));
            let (_, _, col_var) = time_mean_cols(frames, c);
            out.push(log_std(col_var));
        }
    }
}

/// Backward of [`stage_descriptor`] for one stage; `d` holds that stage's descriptor gradient.
fn stage_descriptor_backward(
    frames: &[&MapStats],
    maps: &[&Tensor],
    pooling: TemporalPooling,
    d: &[f64],
) -> Vec<Tensor> {
    let t_len = frames.len();
    let tf = t_len as f64;
    let (c_len, h, w) = (maps[0].c, maps[0].h, maps[0].w);
    let n = (h * w) as f64;
    let per = d.len() / c_len;
    let mut grads: Vec<Tensor> = maps.iter().map(|m| Tensor::zeros(m.c, m.h, m.w)).collect();
    for c in 0..c_len {
        let g = &d[c * per..(c + 1) * per];
        let per_frame: Vec<[f64; FRAME_SCALARS]> = frames.iter().map(|f| f.scalars(c)).collect();
        // gradient with respect to each per-frame scalar
        let mut dsc = vec![[0.0; FRAME_SCALARS]; t_len];
        for j in 0..FRAME_SCALARS {
            let series: Vec<f64> = per_frame.iter().map(|s| s[j]).collect();
            let (mu, var) = mean_var(&series);
            for t in 0..t_len {
                dsc[t][j] = g[j] / tf;
                if pooling == TemporalPooling::MeanStd {
                    dsc[t][j] += g[FRAME_SCALARS + j] * (series[t] - mu) / (tf * (var + LOG_EPS));
                }
            }
        }
        let mut d_time_cols: Option<Vec<f64>> = None;
        if pooling == TemporalPooling::MeanStd {
            let (cols, mu, var) = time_mean_cols(frames, c);
            let d_var = g[2 * FRAME_SCALARS] * 0.5 / (var + LOG_EPS);
            d_time_cols = Some(cols.iter().map(|v| d_var * 2.0 * (v - mu) / w as f64 / tf).collect());
        }
        for t in 0..t_len {
            let f = frames[t];
            let [dm, ds, dk, dq] = dsc[t];
            let d_var = ds * 0.5 / (f.var[c] + LOG_EPS);
            let d_col_var = dk * 0.5 / (f.col_var[c] + LOG_EPS);
            let d_bright = dq * 0.5 / (f.bright_var[c] + LOG_EPS);
            let mean = f.mean[c];
            let mut d_cols: Vec<f64> = f.cols[c]
                .iter()
                .map(|v| d_col_var * 2.0 * (v - mean) / w as f64)
                .collect();
            if let Some(extra) = &d_time_cols {
                for (a, b) in d_cols.iter_mut().zip(extra) {
                    *a += b;
                }
            }
            let src = maps[t].plane(c);
            let wts = &f.weights;
            let weighted_dev: f64 = src.iter().zip(wts).map(|(v, wt)| wt * (v - mean)).sum();
            let dst = &mut grads[t].data[c * h * w..(c + 1) * h * w];
            let a = dm / n - d_bright * 2.0 * weighted_dev / n;
            let b = d_var * 2.0 / n;
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    dst[i] = a + (b + d_bright * 2.0 * wts[i]) * (src[i] - mean) + d_cols[x] / h as f64;
                }
            }
        }
    }
    grads
}

/// Activations of one frame kept for the backward pass.
#[derive(Debug, Clone)]
struct FrameCache {
    enc_in: Vec<Tensor>,
    enc_mid: Vec<Tensor>,
    enc_out: Vec<Tensor>,
    dec_in: Vec<Tensor>,
    dec_mid: Vec<Tensor>,
    dec_out: Vec<Tensor>,
    recon: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct HeadCache {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
    normalized: Normalized,
}

/// Loss weights and targets for one training clip.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub vector: Option<&'a Normalized>,
    pub image: &'a VideoClip,
    pub lambda_head: f64,
    pub lambda_rec: f64,
    /// Multiplier on every gradient (e.g. `1 / batch`).
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub head: f64,
    pub rec: f64,
    pub total: f64,
}

/// Network output for a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Head output in `[0, 1]^8`, pooled over all frames.
    pub normalized: Option<Normalized>,
    /// Head output computed from each frame alone.
    pub per_frame: Vec<Normalized>,
    pub reconstruction: Option<VideoClip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Den {
    config: DenConfig,
    layout: Layout,
    params: Vec<f64>,
    feature_shift: Vec<f64>,
    feature_scale: Vec<f64>,
}

impl Den {
    /// Fresh network with He-initialised weights drawn from `rng`.
    pub fn new(config: DenConfig, rng: &RandomSource) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.n_params];
        let mut g = rng.rng();
        for [a, b] in layout.enc.iter().chain(&layout.dec) {
            for conv in [a, b] {
                let std = (2.0 / conv.fan_in() as f64).sqrt();
                for p in &mut params[conv.w_off..conv.w_off + conv.weight_len()] {
                    *p = std * g.sample::<f64, _>(StandardNormal);
                }
            }
        }
        // the reconstruction head starts as the identity residual, weights stay zero
        let last = layout.mlp.len().saturating_sub(1);
        for (i, lin) in layout.mlp.iter().enumerate() {
            let gain = if i == last { 1.0 } else { 2.0 };
            let std = (gain / lin.inputs as f64).sqrt();
            for p in &mut params[lin.w_off..lin.w_off + lin.inputs * lin.outputs] {
                *p = std * g.sample::<f64, _>(StandardNormal);
            }
        }
        let d = config.descriptor_len();
        Ok(Self {
            config,
            layout,
            params,
            feature_shift: vec![0.0; d],
            feature_scale: vec![1.0; d],
        })
    }

    pub fn from_parts(config: DenConfig, params: Vec<f64>, shift: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.n_params {
            return Err(Error::Checkpoint(format!(
                "expected {} weights for this configuration, found {}",
                layout.n_params,
                params.len()
            )));
        }
        let d = config.descriptor_len();
        if shift.len() != d || scale.len() != d {
            return Err(Error::Checkpoint(format!(
                "feature standardisation needs {d} entries, found {} / {}",
                shift.len(),
                scale.len()
            )));
        }
        if params.iter().chain(&shift).chain(&scale).any(|v| !v.is_finite()) || scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Checkpoint("weights contain non-finite values".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
            feature_shift: shift,
            feature_scale: scale,
        })
    }

    pub fn config(&self) -> &DenConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn feature_shift(&self) -> &[f64] {
        &self.feature_shift
    }

    pub fn feature_scale(&self) -> &[f64] {
        &self.feature_scale
    }

    fn frame_tensor(clip: &VideoClip, t: usize) -> Tensor {
        let s = clip.shape();
        Tensor::from_vec(s.channels, s.height, s.width, clip.frame(t).to_vec())
    }

    fn check_input(&self, clip: &VideoClip) -> Result<()> {
        let s = clip.shape();
        let step = 1usize << self.config.depth;
        if s.channels != self.config.channels {
            return Err(Error::shape(format!(
                "network expects {} channels, clip has {}",
                self.config.channels, s.channels
            )));
        }
        if s.height % step != 0 || s.width % step != 0 {
            return Err(Error::shape(format!(
                "frame size {}x{} is not a multiple of {step}",
                s.height, s.width
            )));
        }
        Ok(())
    }

    fn forward_frame(&self, x: Tensor) -> FrameCache {
        let p = &self.params;
        let lay = &self.layout;
        let mut cache = FrameCache {
            enc_in: Vec::new(),
            enc_mid: Vec::new(),
            enc_out: Vec::new(),
            dec_in: Vec::new(),
            dec_mid: Vec::new(),
            dec_out: Vec::new(),
            recon: None,
        };
        let mut input = x;
        for (l, [c1, c2]) in lay.enc.iter().enumerate() {
            if l > 0 {
                input = avg_pool2(&cache.enc_out[l - 1]);
            }
            let mut mid = c1.forward(p, &input);
            leaky_inplace(&mut mid);
            let mut out = c2.forward(p, &mid);
            leaky_inplace(&mut out);
            cache.enc_in.push(std::mem::replace(&mut input, Tensor::zeros(0, 0, 0)));
            cache.enc_mid.push(mid);
            cache.enc_out.push(out);
        }
        if let Some(head) = &lay.head {
            let depth = self.config.depth;
            // decoder stages are built coarse to fine, then stored fine to coarse
            let mut dec_in = vec![None; depth];
            let mut dec_mid = vec![None; depth];
            let mut dec_out: Vec<Option<Tensor>> = vec![None; depth];
            for l in (0..depth).rev() {
                let below = if l + 1 == depth {
                    &cache.enc_out[depth]
                } else {
                    dec_out[l + 1].as_ref().expect("coarser stage computed")
                };
                let cat = upsample2(below).concat(&cache.enc_out[l]);
                let [c1, c2] = &lay.dec[l];
                let mut mid = c1.forward(p, &cat);
                leaky_inplace(&mut mid);
                let mut out = c2.forward(p, &mid);
                leaky_inplace(&mut out);
                dec_in[l] = Some(cat);
                dec_mid[l] = Some(mid);
                dec_out[l] = Some(out);
            }
            cache.dec_in = dec_in.into_iter().map(Option::unwrap).collect();
            cache.dec_mid = dec_mid.into_iter().map(Option::unwrap).collect();
            cache.dec_out = dec_out.into_iter().map(Option::unwrap).collect();
            let mut recon = head.forward(p, &cache.dec_out[0]);
            recon.add_assign(&cache.enc_in[0]);
            cache.recon = Some(recon);
        }
        cache
    }

    fn descriptor(&self, stats: &[Vec<MapStats>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.config.descriptor_len());
        for l in 0..=self.config.depth {
            let frames: Vec<&MapStats> = stats.iter().map(|s| &s[l]).collect();
            stage_descriptor(&frames, self.config.temporal_pooling, &mut out);
        }
        out
    }

    fn head_forward(&self, descriptor: &[f64]) -> HeadCache {
        let mut x: Vec<f64> = descriptor
            .iter()
            .zip(&self.feature_shift)
            .zip(&self.feature_scale)
            .map(|((d, s), k)| (d - s) / k)
            .collect();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let last = self.layout.mlp.len() - 1;
        for (i, lin) in self.layout.mlp.iter().enumerate() {
            let mut y = lin.forward(&self.params, &x);
            if i == last {
                y.iter_mut().for_each(|v| *v = sigmoid(*v));
            } else {
                y.iter_mut().for_each(|v| *v = leaky(*v));
            }
            inputs.push(std::mem::replace(&mut x, y.clone()));
            outputs.push(y);
        }
        let normalized = std::array::from_fn(|i| x[i]);
        HeadCache {
            inputs,
            outputs,
            normalized,
        }
    }

    /// Gradient of the loss with respect to the raw descriptor.
    fn head_backward(&self, cache: &HeadCache, d_out: &Normalized, grad: &mut [f64]) -> Vec<f64> {
        let last = self.layout.mlp.len() - 1;
        let mut d: Vec<f64> = d_out
            .iter()
            .zip(&cache.normalized)
            .map(|(g, u)| g * u * (1.0 - u))
            .collect();
        for i in (0..=last).rev() {
            let lin = &self.layout.mlp[i];
            if i != last {
                for (g, &y) in d.iter_mut().zip(&cache.outputs[i]) {
                    if y <= 0.0 {
                        *g *= LEAKY_SLOPE;
                    }
                }
            }
            d = lin.backward(&self.params, &cache.inputs[i], &d, grad);
        }
        d.iter().zip(&self.feature_scale).map(|(g, k)| g / k).collect()
    }

    fn stats_of(cache: &FrameCache) -> Vec<MapStats> {
        let weights = brightness_weights(&cache.enc_in[0], cache.enc_out.len() - 1);
        cache.enc_out.iter().zip(weights).map(|(t, w)| MapStats::of(t, w)).collect()
    }

    /// Raw pooled descriptor of a clip (before standardisation).
    pub fn describe(&self, clip: &VideoClip) -> Result<Vec<f64>> {
        self.check_input(clip)?;
        let stats: Vec<Vec<MapStats>> = (0..clip.shape().frames)
            .map(|t| Self::stats_of(&self.forward_frame(Self::frame_tensor(clip, t))))
            .collect();
        Ok(self.descriptor(&stats))
    }

    /// Replaces the fixed per-feature standardisation applied before the head.
    pub fn set_standardization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        let d = self.config.descriptor_len();
        if shift.len() != d || scale.len() != d || scale.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("standardisation vectors must match the descriptor and be positive"));
        }
        self.feature_shift = shift;
        self.feature_scale = scale;
        Ok(())
    }

    pub fn predict(&self, clip: &VideoClip) -> Result<Prediction> {
        self.check_input(clip)?;
        let s = clip.shape();
        let caches: Vec<FrameCache> = (0..s.frames)
            .map(|t| self.forward_frame(Self::frame_tensor(clip, t)))
            .collect();
        let reconstruction = if self.config.variant.has_decoder() {
            let mut data = Vec::with_capacity(s.len());
            for c in &caches {
                data.extend_from_slice(&c.recon.as_ref().expect("decoder output").data);
            }
            Some(VideoClip::new(s, data)?)
        } else {
            None
        };
        let (normalized, per_frame) = if self.config.variant.has_head() {
            let stats: Vec<Vec<MapStats>> = caches.iter().map(Self::stats_of).collect();
            let pooled = self.head_forward(&self.descriptor(&stats)).normalized;
            let per_frame = stats
                .iter()
                .map(|st| self.head_forward(&self.descriptor(std::slice::from_ref(st))).normalized)
                .collect();
            (Some(pooled), per_frame)
        } else {
            (None, Vec::new())
        };
        Ok(Prediction {
            normalized,
            per_frame,
            reconstruction,
        })
    }

    /// Loss on one clip; accumulates `targets.scale · dLoss/dParams` into `grad`.
    pub fn loss_and_grad(&self, input: &VideoClip, targets: Targets<'_>, grad: &mut [f64]) -> Result<LossParts> {
        self.check_input(input)?;
        let s = input.shape();
        if targets.image.shape() != s {
            return Err(Error::shape(format!(
                "reconstruction target {} does not match input {s}",
                targets.image.shape()
            )));
        }
        let use_head = self.config.variant.has_head() && targets.lambda_head > 0.0;
        let use_rec = self.config.variant.has_decoder() && targets.lambda_rec > 0.0;
        let mut caches: Vec<FrameCache> = (0..s.frames)
            .map(|t| self.forward_frame(Self::frame_tensor(input, t)))
            .collect();
        let mut parts = LossParts::default();

        let mut stage_grads: Option<Vec<Vec<Tensor>>> = None;
        if use_head {
            let target = targets
                .vector
                .ok_or_else(|| Error::invalid("head loss requested without a target vector"))?;
            let stats: Vec<Vec<MapStats>> = caches.iter().map(Self::stats_of).collect();
            let head = self.head_forward(&self.descriptor(&stats));
            let n = NOISE_VECTOR_LEN as f64;
            parts.head = super::loss::loss_mlp(target, &head.normalized);
            let coef = targets.scale * targets.lambda_head * 2.0 / n;
            let d_out: Normalized = std::array::from_fn(|i| coef * (head.normalized[i] - target[i]));
            let d_desc = self.head_backward(&head, &d_out, grad);
            // split descriptor gradient by stage and push it onto the stage outputs
            let per = self.config.stats_per_channel();
            let mut offset = 0;
            let mut per_frame: Vec<Vec<Tensor>> = vec![Vec::new(); s.frames];
            for l in 0..=self.config.depth {
                let len = self.config.level_channels(l) * per;
                let frames: Vec<&MapStats> = stats.iter().map(|st| &st[l]).collect();
                let maps: Vec<&Tensor> = caches.iter().map(|c| &c.enc_out[l]).collect();
                let g = stage_descriptor_backward(
                    &frames,
                    &maps,
                    self.config.temporal_pooling,
                    &d_desc[offset..offset + len],
                );
                for (t, gt) in g.into_iter().enumerate() {
                    per_frame[t].push(gt);
                }
                offset += len;
            }
            stage_grads = Some(per_frame);
        }

        let mut d_recon: Vec<Option<Tensor>> = vec![None; s.frames];
        if use_rec {
            let n = s.len() as f64;
            let mut sum = 0.0;
            let coef = targets.scale * targets.lambda_rec / n;
            for (t, cache) in caches.iter().enumerate() {
                let recon = cache.recon.as_ref().expect("decoder output");
                let target = targets.image.frame(t);
                let mut d = Tensor::zeros(recon.c, recon.h, recon.w);
                for ((g, r), x) in d.data.iter_mut().zip(&recon.data).zip(target) {
                    let diff = r - x;
                    sum += diff.abs();
                    *g = if diff > 0.0 {
                        coef
                    } else if diff < 0.0 {
                        -coef
                    } else {
                        0.0
                    };
                }
                d_recon[t] = Some(d);
            }
            parts.rec = sum / n;
        }
        parts.total = super::loss::loss_total(parts.head, parts.rec, targets.lambda_head, targets.lambda_rec);

        if use_head || use_rec {
            for (t, cache) in caches.iter_mut().enumerate() {
                let stage = stage_grads.as_mut().map(|g| std::mem::take(&mut g[t]));
                self.backward_frame(cache, stage, d_recon[t].take(), grad);
            }
        }
        Ok(parts)
    }

    fn backward_frame(&self, cache: &FrameCache, stage: Option<Vec<Tensor>>, d_recon: Option<Tensor>, grad: &mut [f64]) {
        let p = &self.params;
        let lay = &self.layout;
        let depth = self.config.depth;
        let mut d_enc: Vec<Option<Tensor>> = match stage {
            Some(g) => g.into_iter().map(Some).collect(),
            None => vec![None; depth + 1],
        };
        let add = |slot: &mut Option<Tensor>, g: Tensor| match slot {
            Some(t) => t.add_assign(&g),
            None => *slot = Some(g),
        };

        if let (Some(d_out), Some(head)) = (d_recon, &lay.head) {
            let mut d = head
                .backward(p, &cache.dec_out[0], &d_out, grad, true)
                .expect("input gradient");
            for l in 0..depth {
                let [c1, c2] = &lay.dec[l];
                leaky_backward(&cache.dec_out[l].data, &mut d.data);
                let mut d_mid = c2.backward(p, &cache.dec_mid[l], &d, grad, true).expect("input gradient");
                leaky_backward(&cache.dec_mid[l].data, &mut d_mid.data);
                let d_cat = c1.backward(p, &cache.dec_in[l], &d_mid, grad, true).expect("input gradient");
                let up_channels = self.config.level_channels(l + 1);
                let (d_up, d_skip) = d_cat.split(up_channels);
                add(&mut d_enc[l], d_skip);
                d = upsample2_backward(&d_up);
                if l + 1 == depth {
                    add(&mut d_enc[depth], d);
                    break;
                }
            }
        }

        for l in (0..=depth).rev() {
            let Some(mut d) = d_enc[l].take() else { continue };
            let [c1, c2] = &lay.enc[l];
            leaky_backward(&cache.enc_out[l].data, &mut d.data);
            let mut d_mid = c2.backward(p, &cache.enc_mid[l], &d, grad, true).expect("input gradient");
            leaky_backward(&cache.enc_mid[l].data, &mut d_mid.data);
            if let Some(d_in) = c1.backward(p, &cache.enc_in[l], &d_mid, grad, l > 0) {
                add(&mut d_enc[l - 1], avg_pool2_backward(&d_in));
            }
        }
    }
}
