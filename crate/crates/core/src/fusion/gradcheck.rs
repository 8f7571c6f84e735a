//! Central finite-difference checks of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Gradients smaller than this are compared absolutely rather than
/// relatively.
pub const REL_FLOOR: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Which coordinates to perturb.
#[derive(Debug, Clone, Copy)]
pub enum Coords {
    All,
    /// A seeded random subset of this size (all coordinates if fewer).
    Sample { count: usize, seed: u64 },
}

/// Largest relative error between `analytic` and central differences of the
/// scalar function `f` at `x`, over the chosen coordinates.
pub fn finite_diff_check(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64, coords: Coords) -> f64 {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let idx: Vec<usize> = match coords {
        Coords::Sample { count, seed } if count < x.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, x.len(), count).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..x.len()).collect(),
    };
    let mut probe = x.to_vec();
    idx.into_iter()
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            rel_error(analytic[i], (up - down) / (2.0 * step))
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quadratic() {
        let f = |v: &[f64]| v[0] * v[0] + 3.0 * v[1];
        let e = finite_diff_check(f, &[0.5, 2.0], &[1.0, 3.0], 1e-3, Coords::All);
        assert!(e < 1e-10);
        let e = finite_diff_check(f, &[0.5, 2.0], &[1.1, 3.0], 1e-3, Coords::All);
        assert!(e > 0.05);
    }
}
