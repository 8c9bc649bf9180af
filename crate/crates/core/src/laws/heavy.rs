//! Burst component of the heavy mixture: `K = ceil(e^Y)` children at a
//! common displacement, `Y` with density proportional to `e^{-y} y^{-3}` on
//! `[y_min, inf)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::Result;
use crate::quad::{gk15_panel, semi_infinite, Tolerance};

/// Above this count the fractional part of `e^y` is treated as uniform.
const EXACT_COUNT_LIMIT: f64 = 65_536.0;
/// `ceil(e^y) e^{-y}` equals 1 to double precision beyond this.
const CEIL_NEGLIGIBLE_Y: f64 = 36.0;

fn rel_tol() -> Tolerance<f64> {
    Tolerance { abs: 0.0, rel: 1e-12 }
}

/// `∫_s^∞ e^{-y} y^{-3} dy`.
pub(crate) fn exp_cubic_tail(s: f64) -> Result<f64> {
    semi_infinite(|y: f64| (-y).exp() / (y * y * y), s, rel_tol())
}

/// `∫_s^∞ (ceil(e^y) - e^y) e^{-y} y^{-3} dy`, summed over the unit steps
/// of `ceil(e^y)` up to [`EXACT_COUNT_LIMIT`], then with the fractional part
/// replaced by its mean 1/2.
pub(crate) fn ceiling_excess(s: f64) -> Result<f64> {
    let cut = EXACT_COUNT_LIMIT.ln();
    if s >= cut {
        return Ok(0.5 * exp_cubic_tail(s)?);
    }
    let k0 = s.exp().ceil() as u64;
    let mut total = 0.0;
    for k in k0..=EXACT_COUNT_LIMIT as u64 {
        let kf = k as f64;
        let ln_k = kf.ln();
        let lo = if k > 1 { s.max((kf - 1.0).ln()) } else { s };
        if ln_k <= lo {
            continue;
        }
        // k e^{-y} - 1 written as expm1(ln k - y) to avoid cancellation
        let mut g = |y: f64| (ln_k - y).exp_m1() / (y * y * y);
        total += gk15_panel(&mut g, lo, ln_k).0;
    }
    Ok(total + 0.5 * exp_cubic_tail(cut)?)
}

/// `G(s) = ∫_s^∞ ceil(e^y) e^{-y} y^{-3} dy`.
pub(crate) fn count_weighted_tail(s: f64) -> Result<f64> {
    Ok(0.5 / (s * s) + ceiling_excess(s)?)
}

/// `ln ceil(e^y)`, equal to `y` once the ceiling is below double resolution.
pub(crate) fn ln_ceil_exp(y: f64) -> f64 {
    if y > CEIL_NEGLIGIBLE_Y {
        y
    } else {
        y.exp().ceil().ln()
    }
}

/// Smallest `y` such that `ln ceil(e^y) >= t`, i.e. the threshold on `Y`
/// matching `ln K >= t`.
pub(crate) fn y_threshold_for_ln_count(t: f64) -> f64 {
    if t > CEIL_NEGLIGIBLE_Y {
        t
    } else {
        // ceil(e^y) >= ceil(e^t)  <=>  e^y > ceil(e^t) - 1
        let m = t.exp().ceil() - 1.0;
        if m <= 0.0 {
            f64::NEG_INFINITY
        } else {
            m.ln()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstLaw {
    pub y_min: f64,
    /// `1 / ∫_{y_min}^∞ e^{-y} y^{-3} dy`
    pub norm: f64,
    /// `E[K]` under the untilted law.
    pub mean_count: f64,
}

impl BurstLaw {
    pub fn new(y_min: f64) -> Result<Self> {
        let norm = 1.0 / exp_cubic_tail(y_min)?;
        let mean_count = norm * count_weighted_tail(y_min)?;
        Ok(BurstLaw { y_min, norm, mean_count })
    }

    /// `E[K 1{Y > y}]`.
    pub fn count_tail(&self, y: f64) -> Result<f64> {
        if y <= self.y_min {
            return Ok(self.mean_count);
        }
        Ok(self.norm * count_weighted_tail(y)?)
    }

    /// Untilted `Y`: shifted exponential proposal, accepted with
    /// probability `(y_min / y)^3`.
    pub fn sample_y<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let e: f64 = Exp1.sample(rng);
            let y = self.y_min + e;
            let r = self.y_min / y;
            if rng.random::<f64>() < r * r * r {
                return y;
            }
        }
    }

    /// `Y` under the count-tilted law (density proportional to
    /// `ceil(e^y) e^{-y} y^{-3}`): Pareto(2) proposal with a bounded
    /// ceiling-correction acceptance step.
    pub fn sample_y_tilted<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let bound = 1.0 + (-self.y_min).exp();
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let y = self.y_min / u.sqrt();
            let ratio = if y > CEIL_NEGLIGIBLE_Y {
                1.0
            } else {
                y.exp().ceil() * (-y).exp()
            };
            if rng.random::<f64>() * bound < ratio {
                return y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_kronrod;

    #[test]
    fn exp_cubic_tail_matches_finite_range_quadrature() {
        let s = 2.0;
        let direct = gauss_kronrod(|y: f64| (-y).exp() / (y * y * y), s, 80.0, Tolerance::standard())
            .unwrap();
        assert!((exp_cubic_tail(s).unwrap() - direct).abs() < 1e-13);
    }

    #[test]
    fn ceiling_excess_is_bounded_by_its_envelope() {
        for &s in &[1.5, 2.0, 4.0, 12.0] {
            let ex = ceiling_excess(s).unwrap();
            assert!(ex > 0.0 && ex < exp_cubic_tail(s).unwrap(), "s = {s}");
        }
    }

    #[test]
    fn ceiling_excess_first_interval_by_brute_force() {
        // On [ln 7, ln 8] the count is exactly 8: brute-force the first
        // interval difference between s = ln 7 and s = ln 8.
        let a = 7f64.ln();
        let b = 8f64.ln();
        let direct = gauss_kronrod(
            |y: f64| (8.0 - y.exp()) * (-y).exp() / (y * y * y),
            a,
            b,
            Tolerance::standard(),
        )
        .unwrap();
        let diff = ceiling_excess(a).unwrap() - ceiling_excess(b).unwrap();
        assert!((diff - direct).abs() < 1e-13, "{diff} vs {direct}");
    }

    #[test]
    fn ln_count_threshold_is_consistent() {
        for &t in &[1.2, 2.0, 2.5, 5.0, 40.0] {
            let y = y_threshold_for_ln_count(t);
            assert!(ln_ceil_exp(y + 1e-9) >= t);
            if t < 30.0 {
                assert!(ln_ceil_exp(y - 1e-9) < t);
            }
        }
    }
}
