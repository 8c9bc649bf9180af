//! Forward simulation of the branching random walk with branch-and-bound
//! pruning, for the consistent maximal displacement
//! `L_n = min_{|u|=n} max_{k≤n} V(u_k)`.
//!
//! Every individual samples its offspring from its own stream, keyed by its
//! path from the root. The realized tree is therefore a fixed function of
//! the replicate key, and pruning only decides which parts of it are looked
//! at. Different caps on the same key see the same tree.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::laws::ReproductionLaw;
use crate::par::par_replicates;
use crate::rng::StreamKey;
use crate::stats::{empirical_quantile, EstimateReport};

pub const DEFAULT_BUDGET_NODES: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParticleState {
    pub position: f64,
    pub running_max: f64,
    pub generation: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CmdValue {
    /// `L_n`; `+inf` when the population died out before generation `n`.
    Exact(f64),
    /// `L_n > cap`.
    Censored(f64),
}

impl CmdValue {
    /// The value with censored results mapped to `+inf`.
    pub fn or_infinite(self) -> f64 {
        match self {
            CmdValue::Exact(v) => v,
            CmdValue::Censored(_) => f64::INFINITY,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, CmdValue::Censored(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CmdResult {
    pub value: CmdValue,
    pub extinct_before_n: bool,
    pub nodes_expanded: u64,
}

/// Children of one parent still waiting to be visited. Bursts can hold far
/// more children than fit on a stack, so siblings sharing a displacement are
/// kept as a counted range.
struct Pending {
    parent: StreamKey,
    next_child: u64,
    remaining: u64,
    state: ParticleState,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Goal {
    Minimum,
    FirstHit,
}

struct Search<'a> {
    law: &'a ReproductionLaw,
    n: usize,
    cap: f64,
    budget: u64,
    nodes: u64,
}

impl Search<'_> {
    /// Best generation-`n` running max found that is `≤ cap`, or `+inf`.
    fn run(&mut self, root: StreamKey, goal: Goal) -> Result<f64> {
        let mut best = f64::INFINITY;
        if self.cap < 0.0 {
            return Ok(best);
        }
        let root_state = ParticleState { position: 0.0, running_max: 0.0, generation: 0 };
        let mut stack: Vec<Pending> = Vec::new();
        self.expand(root, root_state, &mut stack, &mut best)?;
        while let Some(top) = stack.last_mut() {
            let key = top.parent.child(top.next_child);
            let state = top.state;
            top.next_child += 1;
            top.remaining -= 1;
            if top.remaining == 0 {
                stack.pop();
            }
            // best may have improved since this range was pushed
            if state.running_max >= best {
                continue;
            }
            if goal == Goal::FirstHit && best <= self.cap {
                break;
            }
            self.expand(key, state, &mut stack, &mut best)?;
            if goal == Goal::FirstHit && best <= self.cap {
                break;
            }
        }
        Ok(best)
    }

    fn expand(
        &mut self,
        key: StreamKey,
        state: ParticleState,
        stack: &mut Vec<Pending>,
        best: &mut f64,
    ) -> Result<()> {
        if self.nodes >= self.budget {
            return Err(Error::BudgetExceeded { limit: self.budget, completed: 0, partial: None });
        }
        self.nodes += 1;
        let config = self.law.sample_configuration(&mut key.rng());
        let generation = state.generation + 1;
        let mut groups = Vec::with_capacity(config.atoms.len());
        let mut child = 0u64;
        for atom in &config.atoms {
            let count = atom.count as u64;
            let position = state.position + atom.displacement;
            let running_max = state.running_max.max(position);
            let first = child;
            child += count;
            if running_max > self.cap || running_max >= *best || count == 0 {
                continue;
            }
            if generation == self.n {
                *best = running_max;
                continue;
            }
            let state = ParticleState { position, running_max, generation };
            groups.push(Pending { parent: key, next_child: first, remaining: count, state });
        }
        // sampled order: first atom ends on top of the stack
        stack.extend(groups.into_iter().rev());
        Ok(())
    }
}

/// Exact `L_n` by depth-first branch and bound. Lineages whose running max
/// exceeds `min(best, cap)` are cut; a running max equal to `cap` passes.
pub fn exact_cmd(law: &ReproductionLaw, n: usize, cap: f64, key: StreamKey, budget_nodes: u64) -> Result<CmdResult> {
    if n == 0 {
        return Err(Error::invalid("exact_cmd needs n >= 1"));
    }
    if cap.is_nan() {
        return Err(Error::invalid("cap is NaN"));
    }
    let mut search = Search { law, n, cap, budget: budget_nodes, nodes: 0 };
    let best = search.run(key, Goal::Minimum)?;
    if best.is_finite() {
        return Ok(CmdResult { value: CmdValue::Exact(best), extinct_before_n: false, nodes_expanded: search.nodes });
    }
    let extinct = law.can_go_extinct() && !survives(law, n, key, &mut search)?;
    let value = if extinct || cap == f64::INFINITY { CmdValue::Exact(f64::INFINITY) } else { CmdValue::Censored(cap) };
    Ok(CmdResult { value, extinct_before_n: extinct, nodes_expanded: search.nodes })
}

fn survives(law: &ReproductionLaw, n: usize, key: StreamKey, search: &mut Search<'_>) -> Result<bool> {
    let mut probe = Search { law, n, cap: f64::INFINITY, budget: search.budget, nodes: search.nodes };
    let hit = probe.run(key, Goal::FirstHit)?;
    search.nodes = probe.nodes;
    Ok(hit.is_finite())
}

/// `1{L_n ≤ b}` for one replicate, stopping at the first qualifying leaf.
pub fn cmd_indicator(law: &ReproductionLaw, n: usize, b: f64, key: StreamKey, budget_nodes: u64) -> Result<(bool, u64)> {
    let mut search = Search { law, n, cap: b, budget: budget_nodes, nodes: 0 };
    let hit = search.run(key, Goal::FirstHit)?;
    Ok((hit <= b, search.nodes))
}

/// Monte Carlo estimate of `P(L_n ≤ b)` with binomial standard error.
/// Replicate `i` uses `key.replicate(i)`, so estimates at different `b` are
/// coupled.
pub fn estimate_cmd_cdf(
    law: &ReproductionLaw,
    n: usize,
    b: f64,
    replicates: usize,
    key: StreamKey,
    seed: u64,
    budget_nodes: u64,
) -> Result<EstimateReport> {
    if replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let outcomes = par_replicates(key, replicates, |_, k| cmd_indicator(law, n, b, k, budget_nodes));
    let hits: Vec<f64> = outcomes.iter().filter_map(|r| r.as_ref().ok()).map(|r| if r.0 { 1.0 } else { 0.0 }).collect();
    let report = binomial_report(&hits, seed);
    if hits.len() < replicates {
        return Err(Error::BudgetExceeded {
            limit: budget_nodes,
            completed: hits.len(),
            partial: (!hits.is_empty()).then(|| Box::new(report)),
        });
    }
    Ok(report)
}

fn binomial_report(hits: &[f64], seed: u64) -> EstimateReport {
    let m = hits.len() as f64;
    let p = hits.iter().sum::<f64>() / m;
    EstimateReport {
        estimate: p,
        se: (p * (1.0 - p) / m).sqrt(),
        replicates: hits.len(),
        seed,
        exact: false,
        ln_estimate: p.ln(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendRow {
    pub n: usize,
    /// Empirical quantile of `L_n / n^{1/3}`; extinct replicates count as `+inf`.
    pub quantile: f64,
    pub replicates: usize,
    pub extinct: usize,
    pub nodes_expanded: u64,
}

/// `L_n` with caps `1, 2, 3, ...` until the result is uncensored. Each cap
/// sees the same tree, so the answer equals the uncapped one.
pub fn cmd_adaptive(law: &ReproductionLaw, n: usize, key: StreamKey, budget_nodes: u64) -> Result<CmdResult> {
    let mut nodes = 0;
    let mut cap = 1.0;
    loop {
        let remaining = budget_nodes.saturating_sub(nodes);
        let mut r = exact_cmd(law, n, cap, key, remaining)?;
        nodes += r.nodes_expanded;
        if !r.value.is_censored() {
            r.nodes_expanded = nodes;
            return Ok(r);
        }
        cap += 1.0;
    }
}

/// Per `n`, the empirical `quantile` of `L_n / n^{1/3}` over replicates.
pub fn cmd_trend(
    law: &ReproductionLaw,
    n_list: &[usize],
    quantile: f64,
    replicates: usize,
    key: StreamKey,
    budget_nodes: u64,
) -> Result<Vec<TrendRow>> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list.contains(&0) {
        return Err(Error::invalid("n_list must be positive and strictly increasing"));
    }
    if !(0.0..=1.0).contains(&quantile) || replicates == 0 {
        return Err(Error::invalid("quantile must lie in [0,1] and replicates >= 1"));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let key_n = key.derive(n as u64);
        let results = par_replicates(key_n, replicates, |_, k| cmd_adaptive(law, n, k, budget_nodes));
        let results: Vec<CmdResult> = results.into_iter().collect::<Result<_>>()?;
        let scale = (n as f64).cbrt();
        let values: Vec<f64> = results.iter().map(|r| r.value.or_infinite() / scale).collect();
        rows.push(TrendRow {
            n,
            quantile: empirical_quantile(&values, quantile),
            replicates,
            extinct: results.iter().filter(|r| r.extinct_before_n).count(),
            nodes_expanded: results.iter().map(|r| r.nodes_expanded).sum(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::make_lattice_binary;
    use crate::rng::ModuleId;

    /// Whole tree without pruning, same per-node streams.
    fn brute_force(law: &ReproductionLaw, n: usize, key: StreamKey, pos: f64, rm: f64, depth: usize) -> f64 {
        if depth == n {
            return rm;
        }
        let c = law.sample_configuration(&mut key.rng());
        let mut best = f64::INFINITY;
        for (i, d) in c.displacements().into_iter().enumerate() {
            let p = pos + d;
            best = best.min(brute_force(law, n, key.child(i as u64), p, rm.max(p), depth + 1));
        }
        best
    }

    #[test]
    fn matches_unpruned_tree() {
        let law = make_lattice_binary();
        for seed in 0..50 {
            let key = StreamKey::new(seed, ModuleId::ForwardSim);
            let r = exact_cmd(&law, 5, f64::INFINITY, key, DEFAULT_BUDGET_NODES).unwrap();
            assert_eq!(r.value, CmdValue::Exact(brute_force(&law, 5, key, 0.0, 0.0, 0)));
        }
    }

    #[test]
    fn one_generation() {
        let law = make_lattice_binary();
        let h = law.lattice_step().unwrap();
        for seed in 0..20 {
            let key = StreamKey::new(seed, ModuleId::ForwardSim);
            let c = law.sample_configuration(&mut key.rng());
            let expect = if c.displacements().iter().any(|&d| d < 0.0) { 0.0 } else { h };
            let r = exact_cmd(&law, 1, 10.0, key, 100).unwrap();
            assert_eq!(r.value, CmdValue::Exact(expect));
            assert_eq!(r.nodes_expanded, 1);
        }
    }

    #[test]
    fn negative_cap_is_immediately_zero() {
        let law = make_lattice_binary();
        let key = StreamKey::new(1, ModuleId::ForwardSim);
        let r = estimate_cmd_cdf(&law, 4, -0.5, 100, key, 1, 1000).unwrap();
        assert_eq!(r.estimate, 0.0);
    }

    #[test]
    fn budget_is_enforced() {
        let law = make_lattice_binary();
        let key = StreamKey::new(2, ModuleId::ForwardSim);
        let err = exact_cmd(&law, 30, 100.0, key, 50).unwrap_err();
        assert!(err.is_budget());
        let err = estimate_cmd_cdf(&law, 30, 100.0, 4, key, 2, 10).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { completed: 0, .. }));
    }
}
