//! Layer attention aggregation (LAA) and simple spatial attention (SSA).
//!
//! LAA: `X_cat = [X_fpn, X_conv1..X_convN]`, `w = producer(gap(X_cat))` with
//! no activation, then `reducer(w ⊙ X_cat)` back to `C` channels.
//!
//! SSA: `A = sigmoid(conv7x7([mean_c(x), max_c(x)]))`, output
//! `x + layer_scale[c] · A · x`.

use rand::Rng;

use super::ops::{
    channel_max_map, channel_max_map_backward, channel_mean_map, channel_mean_map_backward, conv1x1,
    conv1x1_backward, conv_kxk, conv_kxk_backward, gap, gap_backward, sigmoid, Conv1x1, ConvKxK,
};
use super::tensor::{take, Flat, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_LAYER_SCALE: f64 = 1e-5;
pub const SSA_KERNEL: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct LaaParams {
    /// `(N+1)C → (N+1)C`, applied to the pooled vector.
    pub producer: Conv1x1,
    /// `(N+1)C → C`.
    pub reducer: Conv1x1,
}

pub type LaaGrads = LaaParams;

impl LaaParams {
    pub fn random(ch: usize, n: usize, rng: &mut impl Rng) -> Self {
        let k = (n + 1) * ch;
        Self {
            producer: Conv1x1::random(k, k, rng),
            reducer: Conv1x1::random(k, ch, rng),
        }
    }
}

impl Flat for LaaParams {
    fn flat_len(&self) -> usize {
        self.producer.flat_len() + self.reducer.flat_len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.producer.write_flat(out);
        self.reducer.write_flat(out);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        self.producer.read_flat(src);
        self.reducer.read_flat(src);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsaParams {
    /// Two input maps (channel mean, channel max), one output.
    pub kernel: ConvKxK,
    pub layer_scale: Vec<f64>,
}

impl SsaParams {
    pub fn new(kernel: ConvKxK, ch: usize) -> Self {
        Self {
            kernel,
            layer_scale: vec![DEFAULT_LAYER_SCALE; ch],
        }
    }

    pub fn random(ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: ConvKxK::random(2, 1, SSA_KERNEL, rng),
            layer_scale: (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }
}

impl Flat for SsaParams {
    fn flat_len(&self) -> usize {
        self.kernel.flat_len() + self.layer_scale.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.kernel.write_flat(out);
        out.extend_from_slice(&self.layer_scale);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        self.kernel.read_flat(src);
        let n = self.layer_scale.len();
        self.layer_scale.copy_from_slice(take(src, n));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdamParams {
    pub laa: LaaParams,
    pub ssa: SsaParams,
}

impl LdamParams {
    pub fn random(ch: usize, n: usize, rng: &mut impl Rng) -> Self {
        Self {
            laa: LaaParams::random(ch, n, rng),
            ssa: SsaParams::random(ch, rng),
        }
    }
}

impl Flat for LdamParams {
    fn flat_len(&self) -> usize {
        self.laa.flat_len() + self.ssa.flat_len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.laa.write_flat(out);
        self.ssa.write_flat(out);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        self.laa.read_flat(src);
        self.ssa.read_flat(src);
    }
}

struct LaaCache {
    cat: Tensor,
    pooled: Tensor,
    attn: Vec<f64>,
    scaled: Tensor,
}

fn laa_cached(x_fpn: &Tensor, x_convs: &[Tensor], p: &LaaParams) -> Result<(Tensor, LaaCache)> {
    if x_convs.is_empty() {
        return Err(Error::InvalidInput("layer attention needs at least one conv map".into()));
    }
    for x in x_convs {
        x.expect_shape(x_fpn, "layer attention inputs")?;
    }
    let mut parts = vec![x_fpn];
    parts.extend(x_convs.iter());
    let cat = Tensor::concat_channels(&parts)?;
    let k = cat.channels();
    let pooled = Tensor::from_vec(k, 1, 1, gap(&cat))?;
    let attn = conv1x1(&pooled, &p.producer)?.into_data();
    if attn.len() != k {
        return Err(Error::Shape(format!("attention producer yields {} of {k} weights", attn.len())));
    }
    let mut scaled = cat.clone();
    for (ch, &a) in attn.iter().enumerate() {
        for v in scaled.plane_mut(ch) {
            *v *= a;
        }
    }
    let out = conv1x1(&scaled, &p.reducer)?;
    Ok((out, LaaCache { cat, pooled, attn, scaled }))
}

pub fn laa(x_fpn: &Tensor, x_convs: &[Tensor], p: &LaaParams) -> Result<Tensor> {
    Ok(laa_cached(x_fpn, x_convs, p)?.0)
}

/// Returns `(d_fpn, d_convs, grads)`.
pub fn laa_backward(
    x_fpn: &Tensor,
    x_convs: &[Tensor],
    p: &LaaParams,
    dy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>, LaaGrads)> {
    let (_, cache) = laa_cached(x_fpn, x_convs, p)?;
    let (d_scaled, g_reducer) = conv1x1_backward(&cache.scaled, &p.reducer, dy)?;
    let k = cache.cat.channels();
    let mut d_cat = d_scaled.clone();
    let mut d_attn = vec![0.0; k];
    for ch in 0..k {
        let a = cache.attn[ch];
        d_attn[ch] = d_scaled.plane(ch).iter().zip(cache.cat.plane(ch)).map(|(g, x)| g * x).sum();
        for v in d_cat.plane_mut(ch) {
            *v *= a;
        }
    }
    let d_attn = Tensor::from_vec(k, 1, 1, d_attn)?;
    let (d_pooled, g_producer) = conv1x1_backward(&cache.pooled, &p.producer, &d_attn)?;
    d_cat.add_assign(&gap_backward(cache.cat.shape(), d_pooled.data()));

    let c = x_fpn.channels();
    let d_fpn = d_cat.slice_channels(0..c);
    let d_convs = (0..x_convs.len())
        .map(|i| d_cat.slice_channels((i + 1) * c..(i + 2) * c))
        .collect();
    Ok((
        d_fpn,
        d_convs,
        LaaParams {
            producer: g_producer,
            reducer: g_reducer,
        },
    ))
}

struct SsaCache {
    maps: Tensor,
    attn: Tensor,
}

fn ssa_cached(x: &Tensor, p: &SsaParams) -> Result<(Tensor, SsaCache)> {
    if p.layer_scale.len() != x.channels() {
        return Err(Error::Shape(format!(
            "layer scale of length {} for {} channels",
            p.layer_scale.len(),
            x.channels()
        )));
    }
    if p.kernel.in_ch != 2 || p.kernel.out_ch != 1 {
        return Err(Error::Shape("spatial attention kernel must be 2 -> 1".into()));
    }
    let maps = Tensor::concat_channels(&[&channel_mean_map(x), &channel_max_map(x)])?;
    let mut attn = conv_kxk(&maps, &p.kernel)?;
    for v in attn.data_mut() {
        *v = sigmoid(*v);
    }
    let mut out = x.clone();
    for (ch, &s) in p.layer_scale.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for (o, a) in out.plane_mut(ch).iter_mut().zip(attn.data()) {
            *o += s * a * *o;
        }
    }
    Ok((out, SsaCache { maps, attn }))
}

pub fn ssa(x: &Tensor, p: &SsaParams) -> Result<Tensor> {
    Ok(ssa_cached(x, p)?.0)
}

/// Returns `(dx, grads)`.
pub fn ssa_backward(x: &Tensor, p: &SsaParams, dy: &Tensor) -> Result<(Tensor, SsaParams)> {
    x.expect_shape(dy, "spatial attention backward")?;
    let (_, cache) = ssa_cached(x, p)?;
    let a = cache.attn.data();
    let n = x.plane_len();
    let mut dx = Tensor::zeros(x.channels(), x.height(), x.width());
    let mut d_scale = vec![0.0; x.channels()];
    let mut d_attn = Tensor::zeros(1, x.height(), x.width());
    for (ch, &s) in p.layer_scale.iter().enumerate() {
        let (xs, gs) = (x.plane(ch), dy.plane(ch));
        let da = d_attn.data_mut();
        let mut acc = 0.0;
        for i in 0..n {
            acc += gs[i] * a[i] * xs[i];
            da[i] += gs[i] * s * xs[i];
        }
        d_scale[ch] = acc;
        for (d, i) in dx.plane_mut(ch).iter_mut().zip(0..n) {
            *d = gs[i] * (1.0 + s * a[i]);
        }
    }
    for (g, &av) in d_attn.data_mut().iter_mut().zip(a) {
        *g *= av * (1.0 - av);
    }
    let (d_maps, g_kernel) = conv_kxk_backward(&cache.maps, &p.kernel, &d_attn)?;
    dx.add_assign(&channel_mean_map_backward(x.shape(), &d_maps.slice_channels(0..1)));
    dx.add_assign(&channel_max_map_backward(x, &d_maps.slice_channels(1..2)));
    Ok((
        dx,
        SsaParams {
            kernel: g_kernel,
            layer_scale: d_scale,
        },
    ))
}

/// `ssa(laa(x_fpn, x_convs))`.
pub fn ldam(x_fpn: &Tensor, x_convs: &[Tensor], p: &LdamParams) -> Result<Tensor> {
    ssa(&laa(x_fpn, x_convs, &p.laa)?, &p.ssa)
}

/// Returns `(d_fpn, d_convs, grads)`.
pub fn ldam_backward(
    x_fpn: &Tensor,
    x_convs: &[Tensor],
    p: &LdamParams,
    dy: &Tensor,
) -> Result<(Tensor, Vec<Tensor>, LdamParams)> {
    let mid = laa(x_fpn, x_convs, &p.laa)?;
    let (d_mid, g_ssa) = ssa_backward(&mid, &p.ssa, dy)?;
    let (d_fpn, d_convs, g_laa) = laa_backward(x_fpn, x_convs, &p.laa, &d_mid)?;
    Ok((d_fpn, d_convs, LdamParams { laa: g_laa, ssa: g_ssa }))
}
