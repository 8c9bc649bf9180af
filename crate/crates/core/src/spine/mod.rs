//! The size-biased law with a spine, the many-to-one identity, and the
//! first and second moment quantities built on it.
//!
//! Under the size-biased law the spine reproduces according to the
//! `W₁`-biased offspring law and the next spine individual is picked among
//! the children with probability `e^{-x}/W₁`. Its positions form a centred
//! walk with variance `σ²`, and
//! `E[Σ_{|u|=n} f(V(u_j), j≤n)] = Ê[e^{S_n} f(S_j, j≤n)]`.

mod exact;
mod lattice;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::laws::{Atom, ReproductionLaw, StepKind};
use crate::par::{par_draws, par_replicates};
use crate::rng::StreamKey;
use crate::stats::EstimateReport;

pub use exact::{
    exact_cmd_cdf, exact_first_moment_xn, exact_first_moment_zn, exact_prob_zn_positive,
    second_moment_zn_small, TreeTable,
};
pub use lattice::{corridor_weighted_dp, LatticeSpine};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineStep {
    pub spine_displacement: f64,
    /// Siblings grouped by displacement; a burst is one atom with a large count.
    pub siblings: Vec<Atom>,
    /// Log of `Σ e^{-x}` over all children, spine included.
    pub xi: f64,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineRealization {
    /// `V(w_j)`, `j = 0..=n`.
    pub positions: Vec<f64>,
    /// `ξ(w_{j-1})`, `j = 1..=n`.
    pub xis: Vec<f64>,
    pub kinds: Vec<StepKind>,
    /// `e^{V(w_n)}`
    pub endpoint_weight: f64,
}

pub fn sample_spine_step<R: Rng + ?Sized>(law: &ReproductionLaw, rng: &mut R) -> SpineStep {
    let raw = law.sample_spine_raw(rng);
    SpineStep { spine_displacement: raw.displacement, siblings: raw.siblings, xi: raw.xi, kind: raw.kind }
}

pub fn simulate_spine<R: Rng + ?Sized>(law: &ReproductionLaw, n: usize, rng: &mut R) -> SpineRealization {
    let mut positions = Vec::with_capacity(n + 1);
    let mut xis = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    positions.push(0.0);
    let mut s = 0.0;
    for _ in 0..n {
        let raw = law.sample_spine_raw(rng);
        s += raw.displacement;
        positions.push(s);
        xis.push(raw.xi);
        kinds.push(raw.kind);
    }
    SpineRealization { positions, xis, kinds, endpoint_weight: s.exp() }
}

/// Path functionals admitted by the many-to-one check. All are bounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Functional {
    Constant,
    /// `1{lo ≤ x_j ≤ hi, j = 0..=n}`; `lo` may be `-inf`.
    Corridor { lo: f64, hi: f64 },
    /// `exp(-max_j x_j)`
    MaxPenalty,
}

impl Functional {
    pub fn parse(id: &str) -> Result<Self> {
        let id = id.trim();
        if id == "constant" {
            return Ok(Functional::Constant);
        }
        if id == "max-penalty" {
            return Ok(Functional::MaxPenalty);
        }
        if let Some(rest) = id.strip_prefix("corridor:") {
            let (lo, hi) = rest
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("corridor functional needs lo:hi, got {rest:?}")))?;
            let num = |s: &str| -> Result<f64> {
                match s.trim() {
                    "-inf" => Ok(f64::NEG_INFINITY),
                    t => t.parse().map_err(|_| Error::invalid(format!("bad number {t:?}"))),
                }
            };
            let (lo, hi) = (num(lo)?, num(hi)?);
            if !(lo <= hi) {
                return Err(Error::invalid("corridor functional needs lo <= hi"));
            }
            return Ok(Functional::Corridor { lo, hi });
        }
        Err(Error::invalid(format!(
            "unknown functional {id:?} (expected constant, max-penalty or corridor:lo:hi)"
        )))
    }

    pub fn eval(&self, path: &[f64]) -> f64 {
        match *self {
            Functional::Constant => 1.0,
            Functional::Corridor { lo, hi } => {
                if path.iter().all(|&x| x >= lo && x <= hi) {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::MaxPenalty => (-path.iter().copied().fold(f64::NEG_INFINITY, f64::max)).exp(),
        }
    }

    /// Whether a lineage passing through `x` can still contribute.
    fn admits(&self, x: f64) -> bool {
        match *self {
            Functional::Corridor { lo, hi } => x >= lo && x <= hi,
            _ => true,
        }
    }
}

/// Both sides of the many-to-one identity by Monte Carlo.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManyToOne {
    pub lhs: EstimateReport,
    pub rhs: EstimateReport,
}

impl ManyToOne {
    pub fn agree_within(&self, k: f64) -> bool {
        self.lhs.agrees_with(&self.rhs, k)
    }
}

/// `Σ_{|u|=n} f(V(u_j))` over one forward tree, visiting only lineages in
/// the support of `f`.
fn forward_sum(
    law: &ReproductionLaw,
    n: usize,
    f: Functional,
    key: StreamKey,
    budget: u64,
) -> Result<f64> {
    let mut path = vec![0.0; n + 1];
    let mut nodes = 0u64;
    if !f.admits(0.0) {
        return Ok(0.0);
    }
    forward_rec(law, n, f, key, 0, &mut path, &mut nodes, budget)
}

#[allow(clippy::too_many_arguments)]
fn forward_rec(
    law: &ReproductionLaw,
    n: usize,
    f: Functional,
    key: StreamKey,
    depth: usize,
    path: &mut Vec<f64>,
    nodes: &mut u64,
    budget: u64,
) -> Result<f64> {
    if depth == n {
        return Ok(f.eval(path));
    }
    if *nodes >= budget {
        return Err(Error::BudgetExceeded { limit: budget, completed: 0, partial: None });
    }
    *nodes += 1;
    let config = law.sample_configuration(&mut key.rng());
    let mut total = 0.0;
    let mut child = 0u64;
    for atom in &config.atoms {
        let x = path[depth] + atom.displacement;
        let count = atom.count as u64;
        if f.admits(x) {
            for i in 0..count {
                path[depth + 1] = x;
                total += forward_rec(law, n, f, key.child(child + i), depth + 1, path, nodes, budget)?;
            }
        }
        child += count;
    }
    Ok(total)
}

/// Forward side over the whole tree versus `e^{S_n} f(S)` along the spine,
/// with independent streams for the two sides.
pub fn many_to_one_check(
    law: &ReproductionLaw,
    n: usize,
    f: Functional,
    replicates: usize,
    key: StreamKey,
    seed: u64,
    budget_nodes: u64,
) -> Result<ManyToOne> {
    if n == 0 || replicates == 0 {
        return Err(Error::invalid("many-to-one check needs n >= 1 and replicates >= 1"));
    }
    let fwd_key = key.derive(1);
    let spine_key = key.derive(2);
    let lhs: Vec<f64> = par_replicates(fwd_key, replicates, |_, k| forward_sum(law, n, f, k, budget_nodes))
        .into_iter()
        .collect::<Result<_>>()?;
    let rhs: Vec<f64> = par_draws(spine_key, replicates, |rng| {
        let r = simulate_spine(law, n, rng);
        r.endpoint_weight * f.eval(&r.positions)
    });
    Ok(ManyToOne { lhs: EstimateReport::from_samples(&lhs, seed), rhs: EstimateReport::from_samples(&rhs, seed) })
}

/// Exact forward side for finite lattice laws: recursion over the offspring
/// table, one level per generation.
pub fn many_to_one_forward_exact(law: &ReproductionLaw, n: usize, f: Functional) -> Result<f64> {
    let configs = law
        .finite_configurations()
        .ok_or_else(|| Error::UnsupportedFamily("exact forward side needs a finite lattice law".into()))?;
    fn rec(configs: &[crate::laws::FiniteConfiguration], n: usize, f: Functional, path: &mut Vec<f64>) -> f64 {
        let depth = path.len() - 1;
        if depth == n {
            return f.eval(path);
        }
        let x = path[depth];
        let mut total = 0.0;
        for c in configs {
            let mut inner = 0.0;
            for &d in &c.displacements {
                let y = x + d;
                if !f.admits(y) {
                    continue;
                }
                path.push(y);
                inner += rec(configs, n, f, path);
                path.pop();
            }
            total += c.probability * inner;
        }
        total
    }
    if !f.admits(0.0) {
        return Ok(0.0);
    }
    Ok(rec(&configs, n, f, &mut vec![0.0]))
}

/// Exact spine side: `Σ_paths P̂(path) e^{S_n} f(S)` over spine step
/// sequences.
pub fn many_to_one_spine_exact(law: &ReproductionLaw, n: usize, f: Functional) -> Result<f64> {
    let atoms = law
        .spine_atoms()
        .ok_or_else(|| Error::UnsupportedFamily("exact spine side needs a finite lattice law".into()))?;
    let h = law.lattice_step().expect("finite law is on a lattice");
    let mut steps: Vec<(i64, f64)> = Vec::new();
    for a in &atoms {
        match steps.iter_mut().find(|s| s.0 == a.step) {
            Some(s) => s.1 += a.probability,
            None => steps.push((a.step, a.probability)),
        }
    }
    fn rec(steps: &[(i64, f64)], h: f64, n: usize, f: Functional, path: &mut Vec<f64>, k: i64) -> f64 {
        if path.len() == n + 1 {
            return (k as f64 * h).exp() * f.eval(path);
        }
        let mut total = 0.0;
        for &(s, p) in steps {
            let k2 = k + s;
            let y = k2 as f64 * h;
            if !f.admits(y) {
                continue;
            }
            path.push(y);
            total += p * rec(steps, h, n, f, path, k2);
            path.pop();
        }
        total
    }
    if !f.admits(0.0) {
        return Ok(0.0);
    }
    Ok(rec(&steps, h, n, f, &mut vec![0.0], 0))
}

/// First-moment corridor `I_j = [f(j/n) n^{1/3}, λ n^{1/3}]` with
/// `f(t) = λ - λ*(1 + δ - t)^{1/3}`, and the `ξ ≤ δ n^{1/3}` constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCorridor {
    pub lambda: f64,
    pub lambda_star: f64,
    pub delta: f64,
    pub n: usize,
}

impl MomentCorridor {
    pub fn new(law: &ReproductionLaw, lambda: f64, delta: f64, n: usize) -> Result<Self> {
        if !(lambda > 0.0) || !(delta >= 0.0) || n == 0 {
            return Err(Error::invalid("need lambda > 0, delta >= 0, n >= 1"));
        }
        Ok(MomentCorridor { lambda, lambda_star: law.lambda_star(), delta, n })
    }

    pub fn scale(&self) -> f64 {
        (self.n as f64).cbrt()
    }

    pub fn lower(&self, j: usize) -> f64 {
        let t = j as f64 / self.n as f64;
        crate::tail::profile_f(self.lambda, self.lambda_star, self.delta, t) * self.scale()
    }

    pub fn upper(&self) -> f64 {
        self.lambda * self.scale()
    }

    /// `ξ` threshold `δ n^{1/3}`; infinite when `δ` is.
    pub fn xi_max(&self) -> f64 {
        self.delta * self.scale()
    }

    pub fn contains(&self, j: usize, x: f64) -> bool {
        x >= self.lower(j) && x <= self.upper()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Mc,
    Dp,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Method::Mc),
            "dp" => Ok(Method::Dp),
            other => Err(Error::invalid(format!("unknown method {other:?} (mc|dp)"))),
        }
    }
}

/// `E[Z_n] = Ê[e^{V(w_n)} 1{V(w_j) ∈ I_j, ξ(w_{j-1}) ≤ δ n^{1/3}, j ≤ n}]`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_first_moment_zn(
    law: &ReproductionLaw,
    lambda: f64,
    delta: f64,
    n: usize,
    method: Method,
    replicates: usize,
    key: StreamKey,
    seed: u64,
) -> Result<EstimateReport> {
    let c = MomentCorridor::new(law, lambda, delta, n)?;
    match method {
        Method::Dp => {
            let spine = LatticeSpine::new(law)?;
            Ok(EstimateReport::exact_from_ln(spine.ln_first_moment_zn(&c)?))
        }
        Method::Mc => {
            if replicates == 0 {
                return Err(Error::invalid("need at least one replicate"));
            }
            let xi_max = c.xi_max();
            let samples = par_draws(key, replicates, |rng| {
                let mut s = 0.0;
                if !c.contains(0, s) {
                    return 0.0;
                }
                for j in 1..=n {
                    let raw = law.sample_spine_raw(rng);
                    s += raw.displacement;
                    if raw.xi > xi_max || !c.contains(j, s) {
                        return 0.0;
                    }
                }
                s.exp()
            });
            Ok(EstimateReport::from_samples(&samples, seed))
        }
    }
}

/// The union-bound sum
/// `Σ_{k≤n} E[Σ_{|u|=k} 1{V(u) ≤ f(k/n) n^{1/3}, V(u_j) ∈ I_j, j<k}]` with
/// `f(t) = λ - λ*(1-t)^{1/3}`.
pub fn estimate_first_moment_xn(
    law: &ReproductionLaw,
    lambda: f64,
    n: usize,
    method: Method,
    replicates: usize,
    key: StreamKey,
    seed: u64,
) -> Result<EstimateReport> {
    let c = MomentCorridor::new(law, lambda, 0.0, n)?;
    match method {
        Method::Dp => {
            let spine = LatticeSpine::new(law)?;
            Ok(EstimateReport::exact_from_ln(spine.ln_union_bound(&c)?))
        }
        Method::Mc => {
            if replicates == 0 {
                return Err(Error::invalid("need at least one replicate"));
            }
            // a path contributes at its exit below f; touching f exactly
            // counts and continues
            let samples = par_draws(key, replicates, |rng| {
                let mut s = 0.0;
                let mut acc = 0.0;
                if !c.contains(0, s) {
                    return 0.0;
                }
                for k in 1..=n {
                    s += law.sample_spine_raw(rng).displacement;
                    if s <= c.lower(k) {
                        acc += s.exp();
                    }
                    if !c.contains(k, s) {
                        break;
                    }
                }
                acc
            });
            Ok(EstimateReport::from_samples(&samples, seed))
        }
    }
}

/// Monte Carlo moments of the spine step: mean and variance of the
/// displacement, each with a standard error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpineStepMoments {
    pub mean: EstimateReport,
    pub variance: f64,
    pub variance_se: f64,
}

pub fn spine_step_moments(law: &ReproductionLaw, steps: usize, key: StreamKey, seed: u64) -> SpineStepMoments {
    let xs = par_draws(key, steps, |rng| law.sample_spine_raw(rng).displacement);
    let (_, variance) = crate::stats::mean_and_variance(&xs);
    SpineStepMoments {
        mean: EstimateReport::from_samples(&xs, seed),
        variance,
        variance_se: crate::stats::variance_se(&xs),
    }
}
