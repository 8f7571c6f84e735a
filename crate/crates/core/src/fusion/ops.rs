use rand::Rng;

use super::tensor::{take, Flat, Tensor};
use crate::error::{Error, Result};

/// Per-pixel linear map `out = W x + b`, `W` stored `(out, in)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1x1 {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; in_ch * out_ch],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn identity(ch: usize) -> Self {
        let mut c = Self::zeros(ch, ch);
        for i in 0..ch {
            c.weight[i * ch + i] = 1.0;
        }
        c
    }

    /// Weights uniform in `±1/sqrt(in)`, biases in `±0.1`.
    pub fn random(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / (in_ch as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            weight: (0..in_ch * out_ch).map(|_| rng.random_range(-s..s)).collect(),
            bias: (0..out_ch).map(|_| rng.random_range(-0.1..0.1)).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.weight.len() != self.in_ch * self.out_ch || self.bias.len() != self.out_ch {
            return Err(Error::Shape(format!(
                "1x1 conv {}->{} with {} weights and {} biases",
                self.in_ch,
                self.out_ch,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

impl Flat for Conv1x1 {
    fn flat_len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
        out.extend_from_slice(&self.bias);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        let (nw, nb) = (self.weight.len(), self.bias.len());
        self.weight.copy_from_slice(take(src, nw));
        self.bias.copy_from_slice(take(src, nb));
    }
}

pub fn conv1x1(x: &Tensor, conv: &Conv1x1) -> Result<Tensor> {
    conv.check()?;
    if x.channels() != conv.in_ch {
        return Err(Error::Shape(format!(
            "1x1 conv expects {} channels, got {}",
            conv.in_ch,
            x.channels()
        )));
    }
    let (_, h, w) = x.shape();
    let mut y = Tensor::zeros(conv.out_ch, h, w);
    for o in 0..conv.out_ch {
        let out = y.plane_mut(o);
        out.fill(conv.bias[o]);
        for i in 0..conv.in_ch {
            let k = conv.weight[o * conv.in_ch + i];
            for (d, s) in out.iter_mut().zip(x.plane(i)) {
                *d += k * s;
            }
        }
    }
    Ok(y)
}

/// Returns `(dx, dparams)`.
pub fn conv1x1_backward(x: &Tensor, conv: &Conv1x1, dy: &Tensor) -> Result<(Tensor, Conv1x1)> {
    conv.check()?;
    let (_, h, w) = x.shape();
    if dy.shape() != (conv.out_ch, h, w) || x.channels() != conv.in_ch {
        return Err(Error::Shape(format!(
            "1x1 conv backward: x {:?}, dy {:?}, conv {}->{}",
            x.shape(),
            dy.shape(),
            conv.in_ch,
            conv.out_ch
        )));
    }
    let mut dx = Tensor::zeros(conv.in_ch, h, w);
    let mut grad = Conv1x1::zeros(conv.in_ch, conv.out_ch);
    for o in 0..conv.out_ch {
        let g = dy.plane(o);
        grad.bias[o] = g.iter().sum();
        for i in 0..conv.in_ch {
            let k = conv.weight[o * conv.in_ch + i];
            grad.weight[o * conv.in_ch + i] = g.iter().zip(x.plane(i)).map(|(a, b)| a * b).sum();
            for (d, gv) in dx.plane_mut(i).iter_mut().zip(g) {
                *d += k * gv;
            }
        }
    }
    Ok((dx, grad))
}

/// Square `k × k` cross-correlation kernel without bias, `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKxK {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub weight: Vec<f64>,
}

impl ConvKxK {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            k,
            weight: vec![0.0; out_ch * in_ch * k * k],
        }
    }

    pub fn random(in_ch: usize, out_ch: usize, k: usize, rng: &mut impl Rng) -> Self {
        let s = 1.0 / ((in_ch * k * k) as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            k,
            weight: (0..out_ch * in_ch * k * k).map(|_| rng.random_range(-s..s)).collect(),
        }
    }

    fn idx(&self, o: usize, i: usize, u: usize, v: usize) -> usize {
        ((o * self.in_ch + i) * self.k + u) * self.k + v
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::Shape(format!("kernel size {} must be odd", self.k)));
        }
        if self.weight.len() != self.out_ch * self.in_ch * self.k * self.k || x.channels() != self.in_ch {
            return Err(Error::Shape(format!(
                "{k}x{k} conv {}->{} with {} weights on {:?}",
                self.in_ch,
                self.out_ch,
                self.weight.len(),
                x.shape(),
                k = self.k
            )));
        }
        Ok(())
    }
}

impl Flat for ConvKxK {
    fn flat_len(&self) -> usize {
        self.weight.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        let n = self.weight.len();
        self.weight.copy_from_slice(take(src, n));
    }
}

/// Visits every (output pixel, kernel tap) pair whose input lies inside the
/// zero-padded image, with padding `k / 2`.
fn for_each_tap(h: usize, w: usize, k: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
    let pad = (k / 2) as isize;
    for r in 0..h {
        for c in 0..w {
            for u in 0..k {
                let ry = r as isize + u as isize - pad;
                if ry < 0 || ry >= h as isize {
                    continue;
                }
                for v in 0..k {
                    let cx = c as isize + v as isize - pad;
                    if cx < 0 || cx >= w as isize {
                        continue;
                    }
                    f(r, c, u, v, ry as usize, cx as usize);
                }
            }
        }
    }
}

/// Same-size cross-correlation with zero padding `k / 2`.
pub fn conv_kxk(x: &Tensor, conv: &ConvKxK) -> Result<Tensor> {
    conv.check(x)?;
    let (_, h, w) = x.shape();
    let mut y = Tensor::zeros(conv.out_ch, h, w);
    let out = y.data_mut();
    for o in 0..conv.out_ch {
        for i in 0..conv.in_ch {
            let src = x.plane(i);
            for_each_tap(h, w, conv.k, |r, c, u, v, ry, cx| {
                out[(o * h + r) * w + c] += conv.weight[conv.idx(o, i, u, v)] * src[ry * w + cx];
            });
        }
    }
    Ok(y)
}

/// Returns `(dx, dkernel)`.
pub fn conv_kxk_backward(x: &Tensor, conv: &ConvKxK, dy: &Tensor) -> Result<(Tensor, ConvKxK)> {
    conv.check(x)?;
    let (_, h, w) = x.shape();
    if dy.shape() != (conv.out_ch, h, w) {
        return Err(Error::Shape(format!("conv backward: dy {:?}", dy.shape())));
    }
    let mut dx = Tensor::zeros(conv.in_ch, h, w);
    let mut grad = ConvKxK::zeros(conv.in_ch, conv.out_ch, conv.k);
    for o in 0..conv.out_ch {
        let g = dy.plane(o);
        for i in 0..conv.in_ch {
            let src = x.plane(i);
            let dst = dx.plane_mut(i);
            for_each_tap(h, w, conv.k, |r, c, u, v, ry, cx| {
                let gi = g[r * w + c];
                let wi = conv.idx(o, i, u, v);
                dst[ry * w + cx] += conv.weight[wi] * gi;
                grad.weight[wi] += gi * src[ry * w + cx];
            });
        }
    }
    Ok((dx, grad))
}

/// Global average pooling, one value per channel.
pub fn gap(x: &Tensor) -> Vec<f64> {
    let n = x.plane_len() as f64;
    (0..x.channels()).map(|c| x.plane(c).iter().sum::<f64>() / n).collect()
}

pub fn gap_backward(shape: (usize, usize, usize), d: &[f64]) -> Tensor {
    let (c, h, w) = shape;
    let n = (h * w) as f64;
    let mut dx = Tensor::zeros(c, h, w);
    for (ch, g) in d.iter().enumerate().take(c) {
        dx.plane_mut(ch).fill(g / n);
    }
    dx
}

fn argmax_first(v: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Global max pooling, one value per channel.
pub fn gmp(x: &Tensor) -> Vec<f64> {
    (0..x.channels())
        .map(|c| x.plane(c).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Routes each channel's gradient to its lowest-index maximizer.
pub fn gmp_backward(x: &Tensor, d: &[f64]) -> Tensor {
    let (c, h, w) = x.shape();
    let mut dx = Tensor::zeros(c, h, w);
    for (ch, g) in d.iter().enumerate().take(c) {
        let i = argmax_first(x.plane(ch).iter().copied());
        dx.plane_mut(ch)[i] = *g;
    }
    dx
}

pub fn upsample2x_nearest(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let mut y = Tensor::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        let src = x.plane(ch);
        let dst = y.plane_mut(ch);
        for r in 0..2 * h {
            for col in 0..2 * w {
                dst[r * 2 * w + col] = src[(r / 2) * w + col / 2];
            }
        }
    }
    y
}

/// 2×2 block sums of the upstream gradient.
pub fn upsample2x_nearest_backward(dy: &Tensor) -> Result<Tensor> {
    let (c, h2, w2) = dy.shape();
    if h2 % 2 != 0 || w2 % 2 != 0 {
        return Err(Error::Shape(format!("upsample backward on odd size {:?}", dy.shape())));
    }
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = dy.plane(ch);
        let dst = dx.plane_mut(ch);
        for r in 0..h2 {
            for col in 0..w2 {
                dst[(r / 2) * w + col / 2] += src[r * w2 + col];
            }
        }
    }
    Ok(dx)
}

/// Per-pixel mean over channels, shape `(1, H, W)`.
pub fn channel_mean_map(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let mut m = Tensor::zeros(1, h, w);
    let dst = m.data_mut();
    for ch in 0..c {
        for (d, s) in dst.iter_mut().zip(x.plane(ch)) {
            *d += s;
        }
    }
    for d in dst.iter_mut() {
        *d /= c as f64;
    }
    m
}

pub fn channel_mean_map_backward(shape: (usize, usize, usize), dm: &Tensor) -> Tensor {
    let (c, h, w) = shape;
    let mut dx = Tensor::zeros(c, h, w);
    for ch in 0..c {
        for (d, g) in dx.plane_mut(ch).iter_mut().zip(dm.data()) {
            *d = g / c as f64;
        }
    }
    dx
}

/// Per-pixel max over channels, shape `(1, H, W)`.
pub fn channel_max_map(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let mut m = Tensor::filled(1, h, w, f64::NEG_INFINITY);
    let dst = m.data_mut();
    for ch in 0..c {
        for (d, s) in dst.iter_mut().zip(x.plane(ch)) {
            *d = d.max(*s);
        }
    }
    m
}

/// Gradient goes to the lowest channel index attaining the max.
pub fn channel_max_map_backward(x: &Tensor, dm: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let n = h * w;
    let mut dx = Tensor::zeros(c, h, w);
    for p in 0..n {
        let ch = argmax_first((0..c).map(|ch| x.data()[ch * n + p]));
        dx.data_mut()[ch * n + p] = dm.data()[p];
    }
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
