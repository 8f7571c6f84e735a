//! Channel interaction (half-channel swap between adjacent levels) and
//! bilinear channel fusion `h(f(X_L) ⊙ g(X_H)) + P_i`.

use rand::Rng;

use super::ops::{conv1x1, conv1x1_backward, upsample2x_nearest, upsample2x_nearest_backward, Conv1x1};
use super::tensor::{Flat, Tensor};
use crate::error::{Error, Result};

/// Swaps channel halves between the low-level map and the upsampled
/// high-level map: `X_L = [low₁, up(high)₂]`, `X_H = [up(high)₁, low₂]`.
pub fn cim(p_low: &Tensor, p_high: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = p_low.shape();
    if c % 2 != 0 {
        return Err(Error::Shape(format!("channel interaction needs even C, got {c}")));
    }
    if p_high.shape() != (c, h / 2, w / 2) || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "adjacent levels {:?} and {:?} are not a 2x pair",
            p_low.shape(),
            p_high.shape()
        )));
    }
    let up = upsample2x_nearest(p_high);
    let half = c / 2;
    let x_l = Tensor::concat_channels(&[&p_low.slice_channels(0..half), &up.slice_channels(half..c)])?;
    let x_h = Tensor::concat_channels(&[&up.slice_channels(0..half), &p_low.slice_channels(half..c)])?;
    Ok((x_l, x_h))
}

/// Returns `(d_low, d_high)`.
pub fn cim_backward(d_xl: &Tensor, d_xh: &Tensor) -> Result<(Tensor, Tensor)> {
    d_xl.expect_shape(d_xh, "channel interaction backward")?;
    let c = d_xl.channels();
    let half = c / 2;
    let d_low = Tensor::concat_channels(&[&d_xl.slice_channels(0..half), &d_xh.slice_channels(half..c)])?;
    let d_up = Tensor::concat_channels(&[&d_xh.slice_channels(0..half), &d_xl.slice_channels(half..c)])?;
    Ok((d_low, upsample2x_nearest_backward(&d_up)?))
}

/// The three channel maps of one fusion level. `f` and `g` map `C → D`,
/// `h` maps `D → C`.
#[derive(Debug, Clone, PartialEq)]
pub struct BcfParams {
    pub f: Conv1x1,
    pub g: Conv1x1,
    pub h: Conv1x1,
}

pub type BcfGrads = BcfParams;

impl BcfParams {
    pub fn zeros(ch: usize) -> Self {
        Self {
            f: Conv1x1::zeros(ch, ch),
            g: Conv1x1::zeros(ch, ch),
            h: Conv1x1::zeros(ch, ch),
        }
    }

    pub fn random(ch: usize, rng: &mut impl Rng) -> Self {
        Self {
            f: Conv1x1::random(ch, ch, rng),
            g: Conv1x1::random(ch, ch, rng),
            h: Conv1x1::random(ch, ch, rng),
        }
    }
}

impl Flat for BcfParams {
    fn flat_len(&self) -> usize {
        self.f.flat_len() + self.g.flat_len() + self.h.flat_len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        self.f.write_flat(out);
        self.g.write_flat(out);
        self.h.write_flat(out);
    }

    fn read_flat(&mut self, src: &mut &[f64]) {
        self.f.read_flat(src);
        self.g.read_flat(src);
        self.h.read_flat(src);
    }
}

/// `h(f(x_l) ⊙ g(x_h)) + shortcut`.
pub fn bcf(x_l: &Tensor, x_h: &Tensor, shortcut: &Tensor, p: &BcfParams) -> Result<Tensor> {
    x_l.expect_shape(x_h, "bilinear fusion inputs")?;
    let u = conv1x1(x_l, &p.f)?;
    let v = conv1x1(x_h, &p.g)?;
    u.expect_shape(&v, "bilinear fusion branches")?;
    let mut out = conv1x1(&u.hadamard(&v), &p.h)?;
    out.expect_shape(shortcut, "bilinear fusion shortcut")?;
    out.add_assign(shortcut);
    Ok(out)
}

/// Returns `(d_xl, d_xh, d_shortcut, grads)`.
pub fn bcf_backward(
    x_l: &Tensor,
    x_h: &Tensor,
    p: &BcfParams,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor, BcfGrads)> {
    let u = conv1x1(x_l, &p.f)?;
    let v = conv1x1(x_h, &p.g)?;
    let z = u.hadamard(&v);
    let (dz, gh) = conv1x1_backward(&z, &p.h, dy)?;
    let (dxl, gf) = conv1x1_backward(x_l, &p.f, &dz.hadamard(&v))?;
    let (dxh, gg) = conv1x1_backward(x_h, &p.g, &dz.hadamard(&u))?;
    Ok((dxl, dxh, dy.clone(), BcfParams { f: gf, g: gg, h: gh }))
}

fn check_pyramid(pyramid: &[Tensor], params: &[BcfParams]) -> Result<()> {
    if pyramid.len() < 2 {
        return Err(Error::InvalidInput("fusion needs at least two pyramid levels".into()));
    }
    if params.len() != pyramid.len() - 1 {
        return Err(Error::InvalidInput(format!(
            "{} parameter sets for {} fused levels",
            params.len(),
            pyramid.len() - 1
        )));
    }
    Ok(())
}

/// Fuses each level with the next coarser one: `B_i = bcf(cim(P_i, P_{i+1}))`
/// with `P_i` as the shortcut. `L` input levels give `L - 1` outputs, each
/// the shape of its low-level input; `params[i]` belongs to output `i`.
pub fn bcfn_forward(pyramid: &[Tensor], params: &[BcfParams]) -> Result<Vec<Tensor>> {
    check_pyramid(pyramid, params)?;
    pyramid
        .windows(2)
        .zip(params)
        .map(|(pair, p)| {
            let (x_l, x_h) = cim(&pair[0], &pair[1])?;
            bcf(&x_l, &x_h, &pair[0], p)
        })
        .collect()
}

/// Accumulates gradients into every pyramid level (each inner level is both
/// a low and a high input). Returns `(d_pyramid, d_params)`.
pub fn bcfn_backward(
    pyramid: &[Tensor],
    params: &[BcfParams],
    d_out: &[Tensor],
) -> Result<(Vec<Tensor>, Vec<BcfGrads>)> {
    check_pyramid(pyramid, params)?;
    if d_out.len() != params.len() {
        return Err(Error::InvalidInput("one upstream gradient per fused level".into()));
    }
    let mut d_pyr: Vec<Tensor> = pyramid
        .iter()
        .map(|t| {
            let (c, h, w) = t.shape();
            Tensor::zeros(c, h, w)
        })
        .collect();
    let mut grads = Vec::with_capacity(params.len());
    for (i, (p, dy)) in params.iter().zip(d_out).enumerate() {
        let (x_l, x_h) = cim(&pyramid[i], &pyramid[i + 1])?;
        let (dxl, dxh, dshort, g) = bcf_backward(&x_l, &x_h, p, dy)?;
        let (d_low, d_high) = cim_backward(&dxl, &dxh)?;
        d_pyr[i].add_assign(&d_low);
        d_pyr[i].add_assign(&dshort);
        d_pyr[i + 1].add_assign(&d_high);
        grads.push(g);
    }
    Ok((d_pyr, grads))
}
