//! Transfer-matrix evaluation of spine expectations for lattice laws.
//!
//! Mass on lattice state `k` stands for position `k h`. Rows are kept as
//! `vals * exp(ln_scale)` and renormalized by their maximum after every
//! step, so corridor probabilities far below `f64::MIN_POSITIVE` stay
//! representable.

use super::MomentCorridor;
use crate::error::{Error, Result};
use crate::laws::{ReproductionLaw, SpineAtom};
use crate::real::log_add_exp;

pub const MAX_STATES: usize = 100_000;

#[derive(Debug, Clone)]
struct Row {
    kmin: i64,
    vals: Vec<f64>,
    ln_scale: f64,
}

impl Row {
    fn origin() -> Self {
        Row { kmin: 0, vals: vec![1.0], ln_scale: 0.0 }
    }

    fn kmax(&self) -> i64 {
        self.kmin + self.vals.len() as i64 - 1
    }

    fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// `ln Σ_k vals[k] e^{t k h}` plus the scale.
    fn ln_sum_tilted(&self, h: f64, tilt: f64, keep: impl Fn(i64) -> bool) -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for (i, &v) in self.vals.iter().enumerate() {
            let k = self.kmin + i as i64;
            if v > 0.0 && keep(k) {
                acc = log_add_exp(acc, v.ln() + tilt * k as f64 * h);
            }
        }
        acc + self.ln_scale
    }

    fn renormalize(&mut self) {
        let m = self.vals.iter().copied().fold(0.0, f64::max);
        if m > 0.0 {
            for v in &mut self.vals {
                *v /= m;
            }
            self.ln_scale += m.ln();
        }
    }
}

/// Smallest `k` with `k h ≥ x`.
pub(crate) fn first_state_at_or_above(x: f64, h: f64) -> i64 {
    let mut k = (x / h).ceil() as i64;
    while (k as f64) * h < x {
        k += 1;
    }
    while ((k - 1) as f64) * h >= x {
        k -= 1;
    }
    k
}

/// Largest `k` with `k h ≤ x`.
pub(crate) fn last_state_at_or_below(x: f64, h: f64) -> i64 {
    let mut k = (x / h).floor() as i64;
    while (k as f64) * h > x {
        k -= 1;
    }
    while ((k + 1) as f64) * h <= x {
        k += 1;
    }
    k
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpine {
    h: f64,
    atoms: Vec<SpineAtom>,
}

impl LatticeSpine {
    pub fn new(law: &ReproductionLaw) -> Result<Self> {
        let h = law
            .lattice_step()
            .ok_or_else(|| Error::UnsupportedFamily(format!("{} is not a lattice law", law.family().tag())))?;
        let atoms = law
            .spine_atoms()
            .ok_or_else(|| Error::UnsupportedFamily("lattice DP needs a finite offspring law".into()))?;
        Ok(LatticeSpine { h, atoms })
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Spine step law with atoms whose `ξ` exceeds `xi_max` removed
    /// (sub-probability).
    fn steps(&self, xi_max: f64) -> Vec<(i64, f64)> {
        let mut out: Vec<(i64, f64)> = Vec::new();
        for a in self.atoms.iter().filter(|a| a.xi <= xi_max) {
            match out.iter_mut().find(|s| s.0 == a.step) {
                Some(s) => s.1 += a.probability,
                None => out.push((a.step, a.probability)),
            }
        }
        out.sort_by_key(|s| s.0);
        out
    }

    /// One transition without restriction.
    fn propagate(&self, row: &Row, steps: &[(i64, f64)]) -> Result<Row> {
        let smin = steps.first().map_or(0, |s| s.0);
        let smax = steps.last().map_or(0, |s| s.0);
        let kmin = row.kmin + smin;
        let len = (row.kmax() + smax - kmin + 1) as usize;
        if len > MAX_STATES {
            return Err(Error::StateExplosion { states: len, limit: MAX_STATES });
        }
        let mut vals = vec![0.0; len];
        // fixed summation order: by step, then by source state
        for &(s, p) in steps {
            let off = (s - smin) as usize;
            for (i, &v) in row.vals.iter().enumerate() {
                vals[i + off] += p * v;
            }
        }
        Ok(Row { kmin, vals, ln_scale: row.ln_scale })
    }

    /// Keeps states `k` with `lo ≤ k h ≤ hi` and trims zero margins.
    fn restrict(&self, row: Row, lo: f64, hi: f64) -> Row {
        let klo = if lo < row.kmin as f64 * self.h { row.kmin } else { first_state_at_or_above(lo, self.h) };
        let khi = if hi > row.kmax() as f64 * self.h { row.kmax() } else { last_state_at_or_below(hi, self.h) };
        if khi < klo {
            return Row { kmin: 0, vals: Vec::new(), ln_scale: row.ln_scale };
        }
        let a = (klo - row.kmin) as usize;
        let b = (khi - row.kmin) as usize;
        let mut out = Row { kmin: klo, vals: row.vals[a..=b].to_vec(), ln_scale: row.ln_scale };
        out.renormalize();
        out
    }

    /// `ln Ê[e^{tilt S_n} 1{S_j ∈ [lo(j), hi(j)], ξ(w_{j-1}) ≤ xi_max, j ≤ n}]`.
    pub fn ln_constrained(
        &self,
        n: usize,
        lo: impl Fn(usize) -> f64,
        hi: impl Fn(usize) -> f64,
        xi_max: f64,
        tilt: f64,
    ) -> Result<f64> {
        if !(0.0 >= lo(0) && 0.0 <= hi(0)) {
            return Ok(f64::NEG_INFINITY);
        }
        let steps = self.steps(xi_max);
        let mut row = Row::origin();
        for j in 1..=n {
            let next = self.propagate(&row, &steps)?;
            row = self.restrict(next, lo(j), hi(j));
            if row.is_empty() {
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(row.ln_sum_tilted(self.h, tilt, |_| true))
    }

    /// `ln E[Z_n]`.
    pub fn ln_first_moment_zn(&self, c: &MomentCorridor) -> Result<f64> {
        self.ln_constrained(c.n, |j| c.lower(j), |_| c.upper(), c.xi_max(), 1.0)
    }

    /// `ln P̂(V(w_j) ∈ I_j, ξ(w_{j-1}) ≤ δ n^{1/3}, j ≤ n)`.
    pub fn ln_corridor_probability(&self, c: &MomentCorridor) -> Result<f64> {
        self.ln_constrained(c.n, |j| c.lower(j), |_| c.upper(), c.xi_max(), 0.0)
    }

    /// `ln Σ_{k≤n} Ê[e^{S_k} 1{S_k ≤ f(k/n) n^{1/3}, S_j ∈ I_j, j<k}]`, with
    /// the corridor taken as given (`δ = 0` for the union bound proper).
    pub fn ln_union_bound(&self, c: &MomentCorridor) -> Result<f64> {
        if !c.contains(0, 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let steps = self.steps(f64::INFINITY);
        let mut row = Row::origin();
        let mut total = f64::NEG_INFINITY;
        for k in 1..=c.n {
            let next = self.propagate(&row, &steps)?;
            let lo = c.lower(k);
            let h = self.h;
            total = log_add_exp(total, next.ln_sum_tilted(h, 1.0, |s| (s as f64) * h <= lo));
            row = self.restrict(next, lo, c.upper());
            if row.is_empty() {
                break;
            }
        }
        Ok(total)
    }
}

/// `ln Ê[e^{tilt S_n} 1{lo ≤ S_j ≤ hi, j ≤ n}]` for a constant band.
pub fn corridor_weighted_dp(law: &ReproductionLaw, n: usize, lo: f64, hi: f64, tilt: f64) -> Result<f64> {
    LatticeSpine::new(law)?.ln_constrained(n, |_| lo, |_| hi, f64::INFINITY, tilt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::make_lattice_binary;

    #[test]
    fn state_bounds_are_exact() {
        let h = 0.1;
        // 0.3 / 0.1 is 2.9999999999999996 in floating point
        let k = first_state_at_or_above(0.3, h);
        assert!((k as f64) * h >= 0.3 && ((k - 1) as f64) * h < 0.3);
        let k = last_state_at_or_below(0.3, h);
        assert!((k as f64) * h <= 0.3 && ((k + 1) as f64) * h > 0.3);
        assert_eq!(first_state_at_or_above(-1.0, 1.0), -1);
        assert_eq!(last_state_at_or_below(-1.0, 1.0), -1);
    }

    #[test]
    fn unconstrained_tilted_mass_is_population_size() {
        let law = make_lattice_binary();
        for n in 1..12 {
            let ln = corridor_weighted_dp(&law, n, f64::NEG_INFINITY, f64::INFINITY, 1.0).unwrap();
            assert!((ln - n as f64 * 2f64.ln()).abs() < 1e-12, "n = {n}");
            let ln = corridor_weighted_dp(&law, n, f64::NEG_INFINITY, f64::INFINITY, 0.0).unwrap();
            assert!(ln.abs() < 1e-14);
        }
    }
}
