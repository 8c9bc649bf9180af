//! Exact tree recursions for finite lattice laws at small `n`.
//!
//! Quantities are computed backwards over generations with the state being
//! a lattice position; one level costs (states × table size), so nothing
//! enumerates whole trees.

use super::lattice::{first_state_at_or_above, last_state_at_or_below, MAX_STATES};
use super::MomentCorridor;
use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;

#[derive(Debug, Clone, PartialEq)]
pub struct TreeTable {
    h: f64,
    configs: Vec<(f64, Vec<i64>, f64)>,
    smin: i64,
    smax: i64,
}

/// Values on a contiguous range of states; outside the range a fixed
/// default applies.
struct Level {
    kmin: i64,
    vals: Vec<f64>,
    outside: f64,
}

impl Level {
    fn get(&self, k: i64) -> f64 {
        if k < self.kmin || k >= self.kmin + self.vals.len() as i64 {
            self.outside
        } else {
            self.vals[(k - self.kmin) as usize]
        }
    }
}

/// `1 - Π (1 - p_i)` without cancellation for small `p_i`.
fn any_of(ps: impl Iterator<Item = f64>) -> f64 {
    let s: f64 = ps.map(|p| (-p).ln_1p()).sum();
    -s.exp_m1()
}

impl TreeTable {
    pub fn new(law: &ReproductionLaw) -> Result<Self> {
        let h = law
            .lattice_step()
            .ok_or_else(|| Error::UnsupportedFamily(format!("{} is not a lattice law", law.family().tag())))?;
        let configs: Vec<(f64, Vec<i64>, f64)> = law
            .finite_configurations()
            .ok_or_else(|| Error::UnsupportedFamily("exact recursion needs a finite offspring law".into()))?
            .into_iter()
            .map(|c| (c.probability, c.steps, c.xi))
            .collect();
        let all = configs.iter().flat_map(|c| c.1.iter().copied());
        let smin = all.clone().min().unwrap_or(0);
        let smax = all.max().unwrap_or(0);
        Ok(TreeTable { h, configs, smin, smax })
    }

    /// States at generation `j` that are reachable and satisfy `lo ≤ k h ≤ hi`.
    fn range(&self, j: usize, lo: f64, hi: f64) -> Result<(i64, i64)> {
        let mut a = self.smin * j as i64;
        let mut b = self.smax * j as i64;
        if lo > a as f64 * self.h {
            a = first_state_at_or_above(lo, self.h);
        }
        if hi < b as f64 * self.h {
            b = last_state_at_or_below(hi, self.h);
        }
        if b >= a && (b - a + 1) as usize > MAX_STATES {
            return Err(Error::StateExplosion { states: (b - a + 1) as usize, limit: MAX_STATES });
        }
        Ok((a, b))
    }

    /// Backward recursion. `leaf(k)` gives generation-`n` values inside the
    /// range, `node(k, next)` the value at an interior state.
    fn backward(
        &self,
        n: usize,
        lo: impl Fn(usize) -> f64,
        hi: impl Fn(usize) -> f64,
        outside: f64,
        leaf: impl Fn(i64) -> f64,
        node: impl Fn(i64, &Level) -> f64,
    ) -> Result<f64> {
        let (a, b) = self.range(n, lo(n), hi(n))?;
        let mut level = Level { kmin: a, vals: (a..=b).map(&leaf).collect(), outside };
        for j in (0..n).rev() {
            let (a, b) = self.range(j, lo(j), hi(j))?;
            let vals = (a..=b).map(|k| node(k, &level)).collect();
            level = Level { kmin: a, vals, outside };
        }
        Ok(level.get(0))
    }

    fn children<'a>(&'a self, k: i64, next: &'a Level) -> impl Iterator<Item = (f64, f64, Vec<f64>)> + 'a {
        self.configs.iter().map(move |(p, steps, xi)| (*p, *xi, steps.iter().map(|s| next.get(k + s)).collect()))
    }

    /// `E[Z_n]` counting generation-`n` individuals whose ancestry stays in
    /// the corridor and whose ancestors all have `ξ ≤ xi_max`.
    pub fn first_moment(&self, c: &MomentCorridor) -> Result<f64> {
        let xm = c.xi_max();
        self.backward(c.n, |j| c.lower(j), |_| c.upper(), 0.0, |_| 1.0, |k, next| {
            self.children(k, next).filter(|x| x.1 <= xm).map(|(p, _, v)| p * v.iter().sum::<f64>()).sum()
        })
    }

    /// `E[Z_n²]`.
    pub fn second_moment(&self, c: &MomentCorridor) -> Result<f64> {
        let xm = c.xi_max();
        let n = c.n;
        let (a, b) = self.range(n, c.lower(n), c.upper())?;
        let ones = Level { kmin: a, vals: vec![1.0; (b - a + 1).max(0) as usize], outside: 0.0 };
        let mut first = ones;
        let mut second = Level { kmin: a, vals: first.vals.clone(), outside: 0.0 };
        for j in (0..n).rev() {
            let (a, b) = self.range(j, c.lower(j), c.upper())?;
            let mut m = Vec::new();
            let mut s = Vec::new();
            for k in a..=b {
                let (mut mk, mut sk) = (0.0, 0.0);
                for (p, steps, xi) in &self.configs {
                    if *xi > xm {
                        continue;
                    }
                    let ms: Vec<f64> = steps.iter().map(|t| first.get(k + t)).collect();
                    let sum_m: f64 = ms.iter().sum();
                    let sum_m2: f64 = ms.iter().map(|x| x * x).sum();
                    let sum_s: f64 = steps.iter().map(|t| second.get(k + t)).sum();
                    mk += p * sum_m;
                    sk += p * (sum_s + sum_m * sum_m - sum_m2);
                }
                m.push(mk);
                s.push(sk);
            }
            first = Level { kmin: a, vals: m, outside: 0.0 };
            second = Level { kmin: a, vals: s, outside: 0.0 };
        }
        Ok(second.get(0))
    }

    /// `P(Z_n > 0)`.
    pub fn prob_positive(&self, c: &MomentCorridor) -> Result<f64> {
        let xm = c.xi_max();
        self.backward(c.n, |j| c.lower(j), |_| c.upper(), 0.0, |_| 1.0, |k, next| {
            self.children(k, next).filter(|x| x.1 <= xm).map(|(p, _, v)| p * any_of(v.into_iter())).sum()
        })
    }

    /// `P(L_n ≤ b)`: some generation-`n` individual whose ancestors all sit
    /// at or below `b`.
    pub fn cmd_cdf(&self, n: usize, b: f64) -> Result<f64> {
        self.backward(n, |_| f64::NEG_INFINITY, |_| b, 0.0, |_| 1.0, |k, next| {
            self.children(k, next).map(|(p, _, v)| p * any_of(v.into_iter())).sum()
        })
    }

    /// Union-bound sum by forward propagation of the mean measure.
    pub fn union_bound(&self, c: &MomentCorridor) -> Result<f64> {
        if !c.contains(0, 0.0) {
            return Ok(0.0);
        }
        let mut mean: Vec<(i64, f64)> = Vec::new();
        for (p, steps, _) in &self.configs {
            for &s in steps {
                match mean.iter_mut().find(|m| m.0 == s) {
                    Some(m) => m.1 += p,
                    None => mean.push((s, *p)),
                }
            }
        }
        let mut density = vec![(0i64, 1.0f64)];
        let mut total = 0.0;
        for k in 1..=c.n {
            let mut next: Vec<(i64, f64)> = Vec::new();
            for &(x, d) in &density {
                for &(s, m) in &mean {
                    match next.iter_mut().find(|e| e.0 == x + s) {
                        Some(e) => e.1 += d * m,
                        None => next.push((x + s, d * m)),
                    }
                }
            }
            if next.len() > MAX_STATES {
                return Err(Error::StateExplosion { states: next.len(), limit: MAX_STATES });
            }
            next.sort_by_key(|e| e.0);
            let lo = c.lower(k);
            total += next.iter().filter(|e| e.0 as f64 * self.h <= lo).map(|e| e.1).sum::<f64>();
            density = next.into_iter().filter(|e| c.contains(k, e.0 as f64 * self.h)).collect();
        }
        Ok(total)
    }
}

pub fn exact_first_moment_zn(law: &ReproductionLaw, c: &MomentCorridor) -> Result<f64> {
    TreeTable::new(law)?.first_moment(c)
}

/// `E[Z_n²]` for small instances of finite lattice laws.
pub fn second_moment_zn_small(law: &ReproductionLaw, c: &MomentCorridor) -> Result<f64> {
    TreeTable::new(law)?.second_moment(c)
}

pub fn exact_prob_zn_positive(law: &ReproductionLaw, c: &MomentCorridor) -> Result<f64> {
    TreeTable::new(law)?.prob_positive(c)
}

pub fn exact_cmd_cdf(law: &ReproductionLaw, n: usize, b: f64) -> Result<f64> {
    TreeTable::new(law)?.cmd_cdf(n, b)
}

pub fn exact_first_moment_xn(law: &ReproductionLaw, c: &MomentCorridor) -> Result<f64> {
    TreeTable::new(law)?.union_bound(c)
}
