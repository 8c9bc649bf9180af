//! Left tail of the consistent maximal displacement:
//! `(1/n^{1/3}) log P(L_n ≤ λ n^{1/3}) → λ - λ*` with
//! `λ* = (3π²σ²/2)^{1/3}`, estimated directly or bracketed by moment
//! proxies, and the contrast between integrable and non-integrable laws.

use serde::Serialize;

use crate::corridor::{mogulskii_exponent, KnotBand};
use crate::error::{Error, Result};
use crate::forward_sim::estimate_cmd_cdf;
use crate::laws::{integrability_functional, ReproductionLaw};
use crate::par::par_draws;
use crate::real::Real;
use crate::rng::StreamKey;
use crate::spine::{LatticeSpine, MomentCorridor};
use crate::stats::EstimateReport;

/// `λ* = (3π²σ²/2)^{1/3}`.
pub fn lambda_star<T: Real>(sigma2: T) -> T {
    (T::lit(1.5) * T::PI() * T::PI() * sigma2).cbrt()
}

/// `λ - λ*(1 + δ - t)^{1/3}`; `δ = 0` gives the upper-bound profile.
pub fn profile_f<T: Real>(lambda: T, lambda_star: T, delta: T, t: T) -> T {
    lambda - lambda_star * (T::one() + delta - t).cbrt()
}

/// Largest `λ n^{1/3}` for which direct forward estimation is attempted.
pub const DIRECT_CAP_LIMIT: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TailMode {
    Direct { replicates: usize, budget_nodes: u64 },
    MomentDp { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub lambda: f64,
    /// `λ - λ*`
    pub target: f64,
    /// Direct mode: `P̂(L_n ≤ λ n^{1/3})` with its standard error.
    pub probability: Option<EstimateReport>,
    /// Direct mode: `(1/n^{1/3}) log` of the probability estimate.
    pub direct: Option<f64>,
    /// `(1/n^{1/3}) (f(1) n^{1/3} + log P̂(spine corridor))`, the first
    /// moment lower-bound route.
    pub lower_proxy: Option<f64>,
    /// `(1/n^{1/3}) log E[Z_n]`.
    pub ln_first_moment: Option<f64>,
    /// `(1/n^{1/3}) log` of the union-bound sum.
    pub upper_proxy: Option<f64>,
    /// The lower-proxy target `λ - λ*(1+δ)^{1/3}`.
    pub lower_target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub law: String,
    pub n: usize,
    pub lambda_star: f64,
    pub mode: TailMode,
    pub rows: Vec<TailRow>,
}

pub fn tail_curve(
    law: &ReproductionLaw,
    n: usize,
    lambdas: &[f64],
    mode: TailMode,
    key: StreamKey,
    seed: u64,
) -> Result<TailCurve> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    let ls = law.lambda_star();
    let scale = (n as f64).cbrt();
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut row = TailRow {
            lambda,
            target: lambda - ls,
            probability: None,
            direct: None,
            lower_proxy: None,
            ln_first_moment: None,
            upper_proxy: None,
            lower_target: None,
        };
        match mode {
            TailMode::Direct { replicates, budget_nodes } => {
                let b = lambda * scale;
                if b > DIRECT_CAP_LIMIT {
                    return Err(Error::invalid(format!(
                        "direct mode needs lambda n^(1/3) <= {DIRECT_CAP_LIMIT}, got {b}"
                    )));
                }
                // same key for every lambda: coupled replicates
                let p = estimate_cmd_cdf(law, n, b, replicates, key, seed, budget_nodes)?;
                row.direct = Some(p.estimate.ln() / scale);
                row.probability = Some(p);
            }
            TailMode::MomentDp { delta } => {
                let spine = LatticeSpine::new(law)?;
                let cz = MomentCorridor::new(law, lambda, delta, n)?;
                let f1 = profile_f(lambda, ls, delta, 1.0);
                row.lower_proxy = Some((f1 * scale + spine.ln_corridor_probability(&cz)?) / scale);
                row.ln_first_moment = Some(spine.ln_first_moment_zn(&cz)? / scale);
                let cx = MomentCorridor::new(law, lambda, 0.0, n)?;
                row.upper_proxy = Some(spine.ln_union_bound(&cx)? / scale);
                row.lower_target = Some(lambda - ls * (1.0 + delta).cbrt());
            }
        }
        rows.push(row);
    }
    Ok(TailCurve { law: law.family().tag().to_string(), n, lambda_star: ls, mode, rows })
}

/// One law, one `n` of the integrability contrast.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastRow {
    pub law: String,
    pub n: usize,
    pub a_n: f64,
    /// `ξ` threshold `A a_n`.
    pub tau: f64,
    /// `P̂(V(w_j) ∈ band a_n, j ≤ n)` without the `ξ` constraint.
    pub unconstrained: EstimateReport,
    /// `P̂(band, ξ(w_{j-1}) ≤ τ) / P̂(band)`.
    pub ratio: f64,
    pub ratio_se: f64,
    /// `-(a_n²/n) log ratio`
    pub deficit: f64,
    pub deficit_se: f64,
    /// `τ² P̂(ξ ≥ τ) / A²`, the first-order prediction of the deficit.
    pub predicted: f64,
    /// `(a_n²/n) log P̂(band)` against the strip exponent below.
    pub scaled_unconstrained: f64,
    pub mogulskii: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub a: f64,
    pub band_half_width: f64,
    pub rows: Vec<ContrastRow>,
}

impl ContrastReport {
    pub fn rows_for<'a>(&'a self, law: &'a str) -> impl Iterator<Item = &'a ContrastRow> + 'a {
        self.rows.iter().filter(move |r| r.law == law)
    }
}

/// Spine survival in `[-w a_n, w a_n]` with `a_n = n^{1/3}`, with and
/// without `ξ(w_{j-1}) ≤ A a_n`. The constraint enters through its exact
/// conditional probability given each spine step, so both estimates come
/// from the same paths.
#[allow(clippy::too_many_arguments)]
pub fn contrast_one(
    label: &str,
    law: &ReproductionLaw,
    n: usize,
    a: f64,
    half_width: f64,
    replicates: usize,
    key: StreamKey,
    seed: u64,
) -> Result<ContrastRow> {
    if n == 0 || replicates < 2 || !(a > 0.0) || !(half_width > 0.0) {
        return Err(Error::invalid("contrast needs n >= 1, replicates >= 2, A > 0, band width > 0"));
    }
    let a_n = (n as f64).cbrt();
    let tau = a * a_n;
    let hi = half_width * a_n;
    let survival = if tau.is_finite() { Some(law.spine_xi_survival_at(tau)?) } else { None };
    let draws: Vec<Result<(f64, f64)>> = par_draws(key, replicates, |rng| {
        let mut s = 0.0;
        let mut w = 1.0;
        for _ in 0..n {
            let raw = law.sample_spine_raw(rng);
            s += raw.displacement;
            if s.abs() > hi {
                return Ok((0.0, 0.0));
            }
            if let Some(q) = &survival {
                w *= q(raw.displacement, raw.kind)?;
            }
        }
        Ok((1.0, w))
    });
    let draws: Vec<(f64, f64)> = draws.into_iter().collect::<Result<_>>()?;
    let m = draws.len() as f64;
    let px = draws.iter().map(|d| d.0).sum::<f64>() / m;
    let py = draws.iter().map(|d| d.1).sum::<f64>() / m;
    if px == 0.0 {
        return Err(Error::invalid(format!("no spine path stayed in the band at n = {n}; widen it")));
    }
    let ratio = py / px;
    let resid = draws.iter().map(|d| (d.1 - ratio * d.0).powi(2)).sum::<f64>() / (m - 1.0);
    let ratio_se = (resid / m).sqrt() / px;
    let scale = n as f64 / (a_n * a_n);
    let deficit = (0.0 - ratio.ln()) / scale;
    let xs: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let band = KnotBand::constant(-half_width, half_width)?;
    let predicted = if tau.is_finite() { integrability_functional(law, tau)?.value / (a * a) } else { 0.0 };
    Ok(ContrastRow {
        law: label.to_string(),
        n,
        a_n,
        tau,
        unconstrained: EstimateReport::from_samples(&xs, seed),
        ratio,
        ratio_se,
        deficit,
        deficit_se: ratio_se / ratio / scale,
        predicted,
        scaled_unconstrained: px.ln() / scale,
        mogulskii: mogulskii_exponent(&band, law.sigma2())?,
    })
}

/// [`contrast_one`] for both laws over an `n` grid.
#[allow(clippy::too_many_arguments)]
pub fn nonintegrable_contrast(
    law_nice: &ReproductionLaw,
    law_heavy: &ReproductionLaw,
    n_grid: &[usize],
    a: f64,
    half_width: f64,
    replicates: usize,
    key: StreamKey,
    seed: u64,
) -> Result<ContrastReport> {
    let mut rows = Vec::with_capacity(2 * n_grid.len());
    for (tag, law, lane) in [("nice", law_nice, 1u64), ("heavy", law_heavy, 2u64)] {
        for &n in n_grid {
            let k = key.derive(lane).derive(n as u64);
            rows.push(contrast_one(tag, law, n, a, half_width, replicates, k, seed)?);
        }
    }
    Ok(ContrastReport { a, band_half_width: half_width, rows })
}
