//! Scalar classification and regression losses with analytic gradients.
//!
//! Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any
//! logarithm; gradients are those of the unclamped formula evaluated at the
//! clamped point. The quality weight `t` of the recognition loss is a sample
//! weight: it does not propagate into `p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotated_giou, OrientedBox};

pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Positive/negative balance, Focal only.
    pub alpha: f64,
    /// Focusing exponent.
    pub gamma: f64,
    /// Quality-weight sharpness, recognition loss only.
    pub beta: f64,
}

impl LossParams {
    pub const fn focal() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
            beta: 0.0,
        }
    }

    /// `gamma = 1.5`, `beta = 2.5`; `alpha` is unused by the recognition loss.
    pub const fn arl() -> Self {
        Self {
            alpha: 1.0,
            gamma: 1.5,
            beta: 2.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.gamma.is_finite() && self.beta.is_finite()) {
            return Err(Error::Domain(format!("non-finite loss parameter in {self:?}")));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) || self.gamma < 0.0 || self.beta < 0.0 {
            return Err(Error::Domain(format!("loss parameter out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Loss value with its partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossValue {
    pub loss: f64,
    pub d_p: f64,
    /// Derivative w.r.t. the quality weight; zero for losses without one.
    pub d_t: f64,
}

fn clamp_prob(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS))
}

fn check_label(y: u8) -> Result<bool> {
    match y {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(Error::Domain(format!("label {y} is not 0 or 1"))),
    }
}

/// `-p^γ log(1 - p)` and its derivative; shared negative branch.
fn negative_branch(p: f64, gamma: f64) -> (f64, f64) {
    let log_q = (-p).ln_1p();
    let pg = p.powf(gamma);
    let d_pg = if gamma == 0.0 { 0.0 } else { gamma * p.powf(gamma - 1.0) };
    (-pg * log_q, -d_pg * log_q + pg / (1.0 - p))
}

/// Focal loss: `-α (1-p)^γ log p` for positives, `-p^γ log(1-p)` otherwise.
pub fn focal_loss(p: f64, y: u8, params: &LossParams) -> Result<LossValue> {
    params.validate()?;
    let p = clamp_prob(p)?;
    let (loss, d_p) = if check_label(y)? {
        let (a, g) = (params.alpha, params.gamma);
        let q = 1.0 - p;
        let qg = q.powf(g);
        let d_qg = if g == 0.0 { 0.0 } else { -g * q.powf(g - 1.0) };
        let lp = p.ln();
        (-a * qg * lp, -a * (d_qg * lp + qg / p))
    } else {
        negative_branch(p, params.gamma)
    };
    Ok(LossValue { loss, d_p, d_t: 0.0 })
}

/// Joint proposal quality `sqrt(s * q)` from the first-stage score `s` and
/// the refined-box IoU `q`.
pub fn joint_quality(s: f64, q: f64) -> Result<f64> {
    for (name, v) in [("s", s), ("q", q)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok((s * q).sqrt())
}

/// Adaptive recognition loss: `-t e^{βt} log p` for positives, the Focal
/// negative branch otherwise. There is no `α`.
pub fn arl(p: f64, y: u8, t: f64, params: &LossParams) -> Result<LossValue> {
    params.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("quality t = {t} outside [0, 1]")));
    }
    let p = clamp_prob(p)?;
    if check_label(y)? {
        let e = (params.beta * t).exp();
        let lp = p.ln();
        Ok(LossValue {
            loss: -t * e * lp,
            d_p: -t * e / p,
            d_t: -e * (1.0 + params.beta * t) * lp,
        })
    } else {
        let (loss, d_p) = negative_branch(p, params.gamma);
        Ok(LossValue { loss, d_p, d_t: 0.0 })
    }
}

/// `1 - GIoU(pred, gt)`, in `[0, 2)`.
pub fn giou_loss(pred: &OrientedBox, gt: &OrientedBox) -> Result<f64> {
    Ok(1.0 - rotated_giou(pred, gt)?)
}

/// Pairwise sum, fixed association order for a given length.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Sum of per-sample losses divided by `max(num_pos, 1)`.
pub fn reduce_batch(per_sample: &[f64], num_pos: usize) -> f64 {
    pairwise_sum(per_sample) / num_pos.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_examples() {
        let fp = LossParams::focal();
        assert!(focal_loss(1.0, 1, &fp).unwrap().loss.abs() < 1e-20);
        let v = focal_loss(0.9, 1, &fp).unwrap().loss;
        let expect = 0.25 * 0.1f64.powi(2) * -(0.9f64.ln());
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 2.634e-4).abs() < 1e-7);
        let ce = LossParams { alpha: 1.0, gamma: 0.0, beta: 0.0 };
        for &p in &[0.01, 0.3, 0.77] {
            assert!((focal_loss(p, 1, &ce).unwrap().loss + f64::ln(p)).abs() < 1e-12);
            assert!((focal_loss(p, 0, &ce).unwrap().loss + f64::ln(1.0 - p)).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_errors() {
        let fp = LossParams::focal();
        assert!(matches!(focal_loss(1.1, 1, &fp), Err(Error::Domain(_))));
        assert!(focal_loss(-0.1, 0, &fp).is_err());
        assert!(focal_loss(0.5, 2, &fp).is_err());
        assert!(arl(0.5, 1, -0.1, &LossParams::arl()).is_err());
        assert!(joint_quality(1.2, 0.5).is_err());
        let bad = LossParams { alpha: 0.0, ..fp };
        assert!(focal_loss(0.5, 1, &bad).is_err());
    }

    #[test]
    fn joint_quality_examples() {
        assert_eq!(joint_quality(0.3, 0.3).unwrap(), 0.3);
        assert!((joint_quality(0.81, 0.64).unwrap() - 0.72).abs() < 1e-15);
        assert_eq!(joint_quality(0.7, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn arl_examples() {
        let ap = LossParams::arl();
        assert!(arl(1.0, 1, 0.6, &ap).unwrap().loss.abs() < 1e-10);
        let v = arl(0.5, 1, 0.72, &ap).unwrap().loss;
        assert!((v - 3.019).abs() < 1e-3, "{v}");
        let v = arl(0.5, 0, 0.72, &ap).unwrap().loss;
        assert!((v - 0.2451).abs() < 1e-4, "{v}");
    }

    #[test]
    fn arl_negative_branch_equals_focal() {
        for &g in &[0.0, 0.5, 1.5, 2.0] {
            let ap = LossParams { alpha: 1.0, gamma: g, beta: 2.5 };
            let fp = LossParams { alpha: 0.25, gamma: g, beta: 0.0 };
            for &p in &[0.0, 0.1, 0.5, 0.999, 1.0] {
                assert_eq!(arl(p, 0, 0.3, &ap).unwrap().loss, focal_loss(p, 0, &fp).unwrap().loss);
                assert_eq!(arl(p, 0, 0.3, &ap).unwrap().d_p, focal_loss(p, 0, &fp).unwrap().d_p);
            }
        }
    }

    #[test]
    fn arl_increasing_in_t() {
        let ap = LossParams::arl();
        for &p in &[0.05, 0.5, 0.95] {
            let vals: Vec<f64> = (0..=100).map(|i| arl(p, 1, i as f64 / 100.0, &ap).unwrap().loss).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn giou_loss_examples() {
        let a = OrientedBox::new(0., 0., 1., 1., 0.).unwrap();
        assert_eq!(giou_loss(&a, &a).unwrap(), 0.0);
        let b = OrientedBox::new(100., 0., 1., 1., 0.).unwrap();
        assert!((giou_loss(&a, &b).unwrap() - (1.0 + 99.0 / 101.0)).abs() < 1e-12);
        let far = OrientedBox::new(1e5, 0., 1., 1., 0.).unwrap();
        let l = giou_loss(&a, &far).unwrap();
        assert!(l > 1.999 && l < 2.0);
    }

    #[test]
    fn reduce_examples() {
        assert_eq!(reduce_batch(&[], 0), 0.0);
        assert_eq!(reduce_batch(&[1., 2., 3.], 2), 3.0);
        assert_eq!(reduce_batch(&[0.5, 0.25], 0), 0.75);
    }
}
