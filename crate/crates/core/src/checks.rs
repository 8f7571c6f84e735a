//! Seeded gradient-check reports for the losses and the fusion kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fusion::{
    bcf, bcf_backward, bcfn_backward, bcfn_forward, conv1x1, conv1x1_backward, conv_kxk, conv_kxk_backward,
    finite_diff_check, gap, gap_backward, gmp, gmp_backward, laa, laa_backward, ldam, ldam_backward, rel_error,
    ssa, ssa_backward, upsample2x_nearest, upsample2x_nearest_backward, BcfParams, Conv1x1, ConvKxK, Coords, Flat,
    LaaParams, LdamParams, SsaParams, Tensor,
};
use crate::losses::{arl, focal_loss, LossParams};

pub const LOSS_TOL: f64 = 1e-6;
pub const LOSS_STEP: f64 = 1e-6;
pub const FUSION_TOL: f64 = 1e-4;
pub const FUSION_STEP: f64 = 1e-5;
/// Coordinates probed per component and shape.
const FUSION_PROBES: usize = 48;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCheckReport {
    pub configs: usize,
    pub step: f64,
    pub tolerance: f64,
    pub focal_d_p: f64,
    pub arl_d_p: f64,
    pub arl_d_t: f64,
    pub pass: bool,
}

/// One random loss configuration. Every fourth uses the recognition-loss
/// defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub p: f64,
    pub t: f64,
    pub y: u8,
    pub params: LossParams,
}

pub fn loss_configs(n: usize, seed: u64) -> Vec<LossConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let params = if i % 4 == 0 {
                LossParams::arl()
            } else {
                LossParams {
                    alpha: rng.random_range(0.05..=1.0),
                    gamma: rng.random_range(0.0..3.0),
                    beta: rng.random_range(0.0..4.0),
                }
            };
            LossConfig {
                p: rng.random_range(0.02..0.98),
                t: rng.random_range(0.02..0.98),
                y: u8::from(rng.random_bool(0.5)),
                params,
            }
        })
        .collect()
}

fn central(f: impl Fn(f64) -> Result<f64>, x: f64, h: f64) -> Result<f64> {
    Ok((f(x + h)? - f(x - h)?) / (2.0 * h))
}

pub fn loss_gradcheck(n: usize, seed: u64) -> Result<LossCheckReport> {
    let h = LOSS_STEP;
    let (mut fp, mut ap, mut at) = (0.0f64, 0.0f64, 0.0f64);
    for c in loss_configs(n, seed) {
        let f = focal_loss(c.p, c.y, &c.params)?;
        let num = central(|p| Ok(focal_loss(p, c.y, &c.params)?.loss), c.p, h)?;
        fp = fp.max(rel_error(f.d_p, num));

        let a = arl(c.p, c.y, c.t, &c.params)?;
        let num_p = central(|p| Ok(arl(p, c.y, c.t, &c.params)?.loss), c.p, h)?;
        let num_t = central(|t| Ok(arl(c.p, c.y, t, &c.params)?.loss), c.t, h)?;
        ap = ap.max(rel_error(a.d_p, num_p));
        at = at.max(rel_error(a.d_t, num_t));
    }
    Ok(LossCheckReport {
        configs: n,
        step: h,
        tolerance: LOSS_TOL,
        focal_d_p: fp,
        arl_d_p: ap,
        arl_d_t: at,
        pass: fp.max(ap).max(at) <= LOSS_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionCheckReport {
    pub shapes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub conv1x1: f64,
    pub conv7x7: f64,
    pub gap: f64,
    pub gmp: f64,
    pub upsample: f64,
    pub bcf: f64,
    pub bcfn: f64,
    pub laa: f64,
    pub ssa: f64,
    pub ldam: f64,
    pub ssa_zero_scale_identity: bool,
    pub pass: bool,
}

impl FusionCheckReport {
    pub fn max_error(&self) -> f64 {
        [
            self.conv1x1,
            self.conv7x7,
            self.gap,
            self.gmp,
            self.upsample,
            self.bcf,
            self.bcfn,
            self.laa,
            self.ssa,
            self.ldam,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Maximum relative error of `grad` against central differences of `loss`
/// around `state`, over a seeded subset of coordinates.
pub fn check_flat<T: Flat + Clone>(state: &T, grad: &T, loss: impl Fn(&T) -> Result<f64>, seed: u64) -> Result<f64> {
    let x = state.to_flat();
    let g = grad.to_flat();
    let eval = |v: &[f64]| {
        let mut s = state.clone();
        s.read_flat(&mut &v[..]);
        loss(&s).expect("shapes fixed by the unperturbed state")
    };
    loss(state)?;
    Ok(finite_diff_check(eval, &x, &g, FUSION_STEP, Coords::Sample { count: FUSION_PROBES, seed }))
}

/// Small random shape: `(channels, height, width, conv maps)` with even
/// channels and sides divisible by 4.
pub fn fusion_shape(rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    (
        2 * rng.random_range(1..=2),
        4 * rng.random_range(1..=2),
        4 * rng.random_range(1..=2),
        rng.random_range(1..=2),
    )
}

pub fn fusion_gradcheck(n: usize, seed: u64) -> Result<FusionCheckReport> {
    let mut e = [0.0f64; 10];
    let mut identity = true;
    for s in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let r = &mut rng;
        let cs = seed.wrapping_add(s as u64);
        let (c, h, w, nc) = fusion_shape(r);
        let x = Tensor::random(c, h, w, r);

        // conv1x1
        let conv = Conv1x1::random(c, c + 1, r);
        let dy = Tensor::random(c + 1, h, w, r);
        let (dx, gc) = conv1x1_backward(&x, &conv, &dy)?;
        let st = (x.clone(), conv);
        e[0] = e[0].max(check_flat(&st, &(dx, gc), |(x, k)| Ok(conv1x1(x, k)?.dot(&dy)), cs)?);

        // conv7x7
        let conv = ConvKxK::random(c, 2, 7, r);
        let dy = Tensor::random(2, h, w, r);
        let (dx, gc) = conv_kxk_backward(&x, &conv, &dy)?;
        let st = (x.clone(), conv);
        e[1] = e[1].max(check_flat(&st, &(dx, gc), |(x, k)| Ok(conv_kxk(x, k)?.dot(&dy)), cs)?);

        // gap / gmp
        let dv: Vec<f64> = (0..c).map(|_| r.random_range(-1.0..1.0)).collect();
        let dot = |a: &[f64]| a.iter().zip(&dv).map(|(p, q)| p * q).sum::<f64>();
        e[2] = e[2].max(check_flat(&x, &gap_backward(x.shape(), &dv), |x| Ok(dot(&gap(x))), cs)?);
        e[3] = e[3].max(check_flat(&x, &gmp_backward(&x, &dv), |x| Ok(dot(&gmp(x))), cs)?);

        // upsample
        let dy = Tensor::random(c, 2 * h, 2 * w, r);
        let dx = upsample2x_nearest_backward(&dy)?;
        e[4] = e[4].max(check_flat(&x, &dx, |x| Ok(upsample2x_nearest(x).dot(&dy)), cs)?);

        // bcf
        let (xl, xh, sc) = (Tensor::random(c, h, w, r), Tensor::random(c, h, w, r), Tensor::random(c, h, w, r));
        let p = BcfParams::random(c, r);
        let dy = Tensor::random(c, h, w, r);
        let (dxl, dxh, dsc, gp) = bcf_backward(&xl, &xh, &p, &dy)?;
        let st = ((xl, xh), (sc, p));
        let gr = ((dxl, dxh), (dsc, gp));
        e[5] = e[5].max(check_flat(&st, &gr, |((a, b), (s, p))| Ok(bcf(a, b, s, p)?.dot(&dy)), cs)?);

        // bcfn over three levels
        let pyr = vec![
            Tensor::random(c, h, w, r),
            Tensor::random(c, h / 2, w / 2, r),
            Tensor::random(c, h / 4, w / 4, r),
        ];
        let params = vec![BcfParams::random(c, r), BcfParams::random(c, r)];
        let d_out = vec![Tensor::random(c, h, w, r), Tensor::random(c, h / 2, w / 2, r)];
        let (dp, gp) = bcfn_backward(&pyr, &params, &d_out)?;
        let st = (pyr, params);
        let loss = |(pyr, params): &(Vec<Tensor>, Vec<BcfParams>)| {
            Ok(bcfn_forward(pyr, params)?.iter().zip(&d_out).map(|(o, d)| o.dot(d)).sum())
        };
        e[6] = e[6].max(check_flat(&st, &(dp, gp), loss, cs)?);

        // laa
        let fpn = Tensor::random(c, h, w, r);
        let convs: Vec<Tensor> = (0..nc).map(|_| Tensor::random(c, h, w, r)).collect();
        let p = LaaParams::random(c, nc, r);
        let dy = Tensor::random(c, h, w, r);
        let (df, dc, gp) = laa_backward(&fpn, &convs, &p, &dy)?;
        let st = ((fpn.clone(), convs.clone()), p);
        let gr = ((df, dc), gp);
        e[7] = e[7].max(check_flat(&st, &gr, |((f, cv), p)| Ok(laa(f, cv, p)?.dot(&dy)), cs)?);

        // ssa
        let p = SsaParams::random(c, r);
        let (dx, gp) = ssa_backward(&x, &p, &dy)?;
        let st = (x.clone(), p.clone());
        e[8] = e[8].max(check_flat(&st, &(dx, gp), |(x, p)| Ok(ssa(x, p)?.dot(&dy)), cs)?);
        let zero = SsaParams {
            layer_scale: vec![0.0; c],
            ..p
        };
        identity &= ssa(&x, &zero)? == x;

        // full decoupled attention
        let p = LdamParams::random(c, nc, r);
        let (df, dc, gp) = ldam_backward(&fpn, &convs, &p, &dy)?;
        let st = ((fpn, convs), p);
        let gr = ((df, dc), gp);
        e[9] = e[9].max(check_flat(&st, &gr, |((f, cv), p)| Ok(ldam(f, cv, p)?.dot(&dy)), cs)?);
    }
    let mut report = FusionCheckReport {
        shapes: n,
        step: FUSION_STEP,
        tolerance: FUSION_TOL,
        conv1x1: e[0],
        conv7x7: e[1],
        gap: e[2],
        gmp: e[3],
        upsample: e[4],
        bcf: e[5],
        bcfn: e[6],
        laa: e[7],
        ssa: e[8],
        ldam: e[9],
        ssa_zero_scale_identity: identity,
        pass: false,
    };
    report.pass = identity && report.max_error() <= FUSION_TOL;
    Ok(report)
}
