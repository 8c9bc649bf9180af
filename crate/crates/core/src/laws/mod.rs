//! Reproduction laws of the branching random walk.
//!
//! A law is normalized to the boundary case when
//! `E[Σ e^{-V}] = 1` and `E[Σ V e^{-V}] = 0`. Each family exposes exact
//! sampling, closed-form or quadrature moments, and the integrability
//! functional `x² E[Σ e^{-V} 1{log W₁ ≥ x}]`. Any law with mild moment
//! conditions can be brought to this normalization by an affine change of
//! the displacements; the crate only ships laws that are already normalized
//! (or deliberately mistuned ones for diagnostics).

mod config;
mod heavy;
mod table;

use std::f64::consts::LN_2;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{semi_infinite, Tolerance};
use crate::rng::StreamKey;
use crate::stats::{normal_cdf, normal_sf, EstimateReport};
use crate::tail::lambda_star;

pub use config::{LawConfig, TableEntryConfig};
pub use heavy::BurstLaw;
pub use table::{TableEntry, UserTable};

/// Children sharing one displacement. `count` is integer valued; it is
/// stored as `f64` because burst sizes under the size-biased law exceed
/// `u64`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Atom {
    pub displacement: f64,
    pub count: f64,
}

impl Atom {
    pub fn single(displacement: f64) -> Self {
        Atom { displacement, count: 1.0 }
    }
}

/// One realized offspring set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointConfiguration {
    pub atoms: Vec<Atom>,
    /// `Σ e^{-x_i}`
    pub w1: f64,
    /// `log w1`
    pub xi: f64,
}

impl PointConfiguration {
    pub fn from_displacements(displacements: &[f64]) -> Self {
        let atoms: Vec<Atom> = displacements.iter().map(|&d| Atom::single(d)).collect();
        let w1: f64 = displacements.iter().map(|d| (-d).exp()).sum();
        PointConfiguration { atoms, w1, xi: w1.ln() }
    }

    /// A single cluster of `exp(ln_count)` children at `displacement`.
    pub(crate) fn cluster(displacement: f64, ln_count: f64) -> Self {
        let count = ln_count.exp().round();
        let xi = ln_count - displacement;
        PointConfiguration {
            atoms: vec![Atom { displacement, count }],
            w1: xi.exp(),
            xi,
        }
    }

    pub fn child_count(&self) -> f64 {
        self.atoms.iter().map(|a| a.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Expanded child displacements. Only meaningful for configurations of
    /// desk-scale size.
    pub fn displacements(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .flat_map(|a| std::iter::repeat_n(a.displacement, a.count as usize))
            .collect()
    }
}

/// `N(mean, variance)` displacements for two independent children.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianPair {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPair {
    /// `E[e^{-X}]`
    fn tilt(&self) -> f64 {
        (-self.mean + self.variance / 2.0).exp()
    }

    /// Mean of the `e^{-x}`-tilted displacement law.
    fn tilted_mean(&self) -> f64 {
        self.mean - self.variance
    }

    fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.sd() * z
    }

    fn sample_tilted<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.tilted_mean() + self.sd() * z
    }

    /// Per-child moments `(E e^{-X}, E X e^{-X}, E X² e^{-X})`.
    fn moments(&self) -> (f64, f64, f64) {
        let t = self.tilt();
        let m = self.tilted_mean();
        (t, t * m, t * (m * m + self.variance))
    }

    /// `P(log(e^{-X̃} + e^{-X₂}) ≥ x)` with `X̃` tilted and `X₂` untilted.
    fn log_w1_tail(&self, x: f64) -> Result<f64> {
        let sd = self.sd();
        let m_t = self.tilted_mean();
        // spine child alone already exceeds the level
        let direct = normal_cdf((-x - m_t) / sd);
        let tol = Tolerance { abs: 0.0, rel: 1e-10 };
        let rest = semi_infinite(
            |r: f64| {
                // a = -x + r; need X₂ ≤ -x - ln(1 - e^{-r})
                let a = -x + r;
                let dens = (-(a - m_t) * (a - m_t) / (2.0 * self.variance)).exp()
                    / (sd * (2.0 * std::f64::consts::PI).sqrt());
                if dens == 0.0 {
                    return 0.0;
                }
                let bound = -x - (-(-r).exp_m1()).ln();
                dens * normal_cdf((bound - self.mean) / sd)
            },
            0.0,
            tol,
        )?;
        Ok(direct + rest)
    }

    /// `P(log(e^{-x} + e^{-X₂}) ≤ tau)` for a fixed spine displacement.
    fn xi_survival_given(&self, x: f64, tau: f64) -> f64 {
        // e^{-X₂} ≤ e^tau - e^{-x}
        let gap = tau + (-(-(x + tau)).exp()).ln_1p();
        if !gap.is_finite() {
            return 0.0;
        }
        // X₂ ≥ -gap
        normal_sf((-gap - self.mean) / self.sd())
    }
}

/// Two independent children at `+h` (prob `p_up`) or `-h` (prob `p_down`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatticePair {
    pub step: f64,
    pub p_up: f64,
    pub p_down: f64,
}

impl LatticePair {
    fn tilted_up(&self) -> f64 {
        let up = self.p_up * (-self.step).exp();
        let down = self.p_down * self.step.exp();
        up / (up + down)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyMixture {
    pub epsilon: f64,
    pub y_min: f64,
    pub c0: f64,
    /// Base component after boundary retuning.
    pub base: GaussianPair,
    #[serde(skip)]
    pub burst: BurstLaw,
    /// `ε E[K] e^{-c0}`: probability that the spine sits in a burst.
    pub burst_mass: f64,
}

impl HeavyMixture {
    fn base_mass(&self) -> f64 {
        (1.0 - self.epsilon) * 2.0 * self.base.tilt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    GaussianBinary(GaussianPair),
    LatticeBinary(LatticePair),
    HeavyMixture(Box<HeavyMixture>),
    UserTable(UserTable),
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::GaussianBinary(_) => "gaussian-binary",
            Family::LatticeBinary(_) => "lattice-binary",
            Family::HeavyMixture(_) => "heavy-mixture",
            Family::UserTable(_) => "user-table",
        }
    }
}

/// Cached constants derived at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LawConstants {
    pub sigma2: f64,
    pub lambda_star: f64,
    pub mean_offspring: f64,
}

/// Offspring point-process law. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionLaw {
    family: Family,
    constants: LawConstants,
}

/// A configuration of a finitely supported law, on the lattice `h ℤ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteConfiguration {
    pub probability: f64,
    pub steps: Vec<i64>,
    pub displacements: Vec<f64>,
    pub xi: f64,
}

/// Joint atom of (spine step, ξ of the spine's parent configuration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpineAtom {
    pub step: i64,
    pub xi: f64,
    pub probability: f64,
}

/// Whether a spine step came from an ordinary configuration or a burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepKind {
    Regular,
    Burst,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawSpineStep {
    pub displacement: f64,
    pub siblings: Vec<Atom>,
    pub xi: f64,
    pub kind: StepKind,
}

/// Value of the integrability functional. `se` is zero when computed by
/// quadrature or finite summation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FunctionalValue {
    pub x: f64,
    pub value: f64,
    pub se: f64,
}

/// Boundary case Gaussian binary law: two i.i.d. `N(2 ln 2, 2 ln 2)` children.
pub fn make_gaussian_binary() -> ReproductionLaw {
    ReproductionLaw::gaussian_binary(2.0 * LN_2, 2.0 * LN_2)
}

/// Boundary case lattice law: two independent children at `±h`,
/// `h = arccosh 2`, with `P(+h) = e^h/4`, `P(-h) = e^{-h}/4`.
pub fn make_lattice_binary() -> ReproductionLaw {
    let h = 2f64.acosh();
    ReproductionLaw::lattice_pair(h, h.exp() / 4.0, (-h).exp() / 4.0)
}

/// Mixture violating the integrability condition: with probability `ε` a
/// burst of `ceil(e^Y)` children at `c0`, otherwise a Gaussian pair retuned
/// so that the mixture is in the boundary case.
pub fn make_heavy_mixture(epsilon: f64, y_min: f64, c0: f64) -> Result<ReproductionLaw> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0,1), got {epsilon}")));
    }
    if !(y_min > 1.0) || !c0.is_finite() {
        return Err(Error::invalid(format!("need y_min > 1 and finite c0, got {y_min}, {c0}")));
    }
    let burst = BurstLaw::new(y_min)?;
    let m0 = epsilon * burst.mean_count * (-c0).exp();
    let m1 = c0 * m0;
    let base_mass = 1.0 - m0;
    if base_mass <= 0.0 {
        return Err(Error::NoBoundarySolution(format!(
            "burst mass {m0} leaves nothing for the base component"
        )));
    }
    // base: (1-ε) 2 e^{-μ+s²/2} = 1 - m0 and (1-ε) 2 e^{-μ+s²/2} (μ - s²) = -m1
    let drift = -m1 / base_mass;
    let log_tilt = (base_mass / (2.0 * (1.0 - epsilon))).ln();
    let variance = -2.0 * (log_tilt + drift);
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::NoBoundarySolution(format!(
            "retuned base variance {variance} is not positive"
        )));
    }
    let base = GaussianPair { mean: variance + drift, variance };
    let mix = HeavyMixture { epsilon, y_min, c0, base, burst, burst_mass: m0 };
    Ok(ReproductionLaw::from_family(Family::HeavyMixture(Box::new(mix))))
}

impl ReproductionLaw {
    /// Two i.i.d. Gaussian children with arbitrary parameters. Not checked
    /// for the boundary case; see [`ReproductionLaw::validate`].
    pub fn gaussian_binary(mean: f64, variance: f64) -> Self {
        Self::from_family(Family::GaussianBinary(GaussianPair { mean, variance }))
    }

    pub fn lattice_pair(step: f64, p_up: f64, p_down: f64) -> Self {
        Self::from_family(Family::LatticeBinary(LatticePair { step, p_up, p_down }))
    }

    pub fn user_table(table: UserTable) -> Self {
        Self::from_family(Family::UserTable(table))
    }

    fn from_family(family: Family) -> Self {
        let mut law = ReproductionLaw {
            family,
            constants: LawConstants { sigma2: f64::NAN, lambda_star: f64::NAN, mean_offspring: f64::NAN },
        };
        let sigma2 = law.analytic_moments().2;
        law.constants = LawConstants {
            sigma2,
            lambda_star: if sigma2 > 0.0 { lambda_star(sigma2) } else { f64::NAN },
            mean_offspring: law.mean_offspring_exact(),
        };
        law
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn constants(&self) -> LawConstants {
        self.constants
    }

    pub fn sigma2(&self) -> f64 {
        self.constants.sigma2
    }

    pub fn lambda_star(&self) -> f64 {
        self.constants.lambda_star
    }

    pub fn mean_offspring(&self) -> f64 {
        self.constants.mean_offspring
    }

    /// `(E Σ e^{-V}, E Σ V e^{-V}, E Σ V² e^{-V})` from closed forms or
    /// finite sums.
    fn analytic_moments(&self) -> (f64, f64, f64) {
        match &self.family {
            Family::GaussianBinary(g) => {
                let (a, b, c) = g.moments();
                (2.0 * a, 2.0 * b, 2.0 * c)
            }
            Family::LatticeBinary(l) => {
                let up = l.p_up * (-l.step).exp();
                let down = l.p_down * l.step.exp();
                let h = l.step;
                (2.0 * (up + down), 2.0 * h * (up - down), 2.0 * h * h * (up + down))
            }
            Family::HeavyMixture(m) => {
                let (a, b, c) = m.base.moments();
                let w = (1.0 - m.epsilon) * 2.0;
                let m0 = m.burst_mass;
                (w * a + m0, w * b + m.c0 * m0, w * c + m.c0 * m.c0 * m0)
            }
            Family::UserTable(t) => t.moments(),
        }
    }

    fn mean_offspring_exact(&self) -> f64 {
        match &self.family {
            Family::GaussianBinary(_) | Family::LatticeBinary(_) => 2.0,
            Family::HeavyMixture(m) => 2.0 * (1.0 - m.epsilon) + m.epsilon * m.burst.mean_count,
            Family::UserTable(t) => t.mean_offspring(),
        }
    }

    /// True when some configuration has no children.
    pub fn can_go_extinct(&self) -> bool {
        match &self.family {
            Family::UserTable(t) => t.has_empty_configuration(),
            _ => false,
        }
    }

    /// Checks boundary residuals, `σ² ∈ (0,∞)` and supercriticality.
    pub fn validate(&self) -> Result<()> {
        let (r1, r2) = boundary_residuals(self)?;
        if r1.abs() > 1e-9 || r2.abs() > 1e-9 {
            return Err(Error::NoBoundarySolution(format!(
                "{}: boundary residuals ({r1:e}, {r2:e}) exceed 1e-9",
                self.family.tag()
            )));
        }
        let s2 = self.sigma2();
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::invalid(format!("sigma^2 = {s2} is not in (0, inf)")));
        }
        if !(self.mean_offspring() > 1.0) {
            return Err(Error::invalid(format!(
                "mean offspring {} is not supercritical",
                self.mean_offspring()
            )));
        }
        Ok(())
    }

    /// Lattice spacing when every displacement lies on `h ℤ`.
    pub fn lattice_step(&self) -> Option<f64> {
        match &self.family {
            Family::LatticeBinary(l) => Some(l.step),
            Family::UserTable(t) => t.lattice_step(),
            _ => None,
        }
    }

    /// All configurations with their probabilities, for finitely supported
    /// lattice laws.
    pub fn finite_configurations(&self) -> Option<Vec<FiniteConfiguration>> {
        match &self.family {
            Family::LatticeBinary(l) => {
                let mut out = Vec::with_capacity(4);
                for (s1, p1) in [(1i64, l.p_up), (-1, l.p_down)] {
                    for (s2, p2) in [(1i64, l.p_up), (-1, l.p_down)] {
                        let ds = vec![s1 as f64 * l.step, s2 as f64 * l.step];
                        let xi = ds.iter().map(|d| (-d).exp()).sum::<f64>().ln();
                        out.push(FiniteConfiguration {
                            probability: p1 * p2,
                            steps: vec![s1, s2],
                            displacements: ds,
                            xi,
                        });
                    }
                }
                Some(out)
            }
            Family::UserTable(t) => t.finite_configurations(),
            _ => None,
        }
    }

    /// Exact law of (spine step, ξ) under the size-biased measure:
    /// configuration `c` with spine child `i` has mass `p_c e^{-x_i}`.
    pub fn spine_atoms(&self) -> Option<Vec<SpineAtom>> {
        let configs = self.finite_configurations()?;
        let mut atoms: Vec<SpineAtom> = Vec::new();
        for c in &configs {
            for (&k, &d) in c.steps.iter().zip(&c.displacements) {
                let p = c.probability * (-d).exp();
                match atoms.iter_mut().find(|a| a.step == k && a.xi == c.xi) {
                    Some(a) => a.probability += p,
                    None => atoms.push(SpineAtom { step: k, xi: c.xi, probability: p }),
                }
            }
        }
        atoms.retain(|a| a.probability > 0.0);
        Some(atoms)
    }

    /// Intensity of the offspring point process: expected number of
    /// children at each lattice step.
    pub fn mean_measure_atoms(&self) -> Option<Vec<(i64, f64)>> {
        let configs = self.finite_configurations()?;
        let mut out: Vec<(i64, f64)> = Vec::new();
        for c in &configs {
            for &k in &c.steps {
                match out.iter_mut().find(|a| a.0 == k) {
                    Some(a) => a.1 += c.probability,
                    None => out.push((k, c.probability)),
                }
            }
        }
        out.sort_by_key(|a| a.0);
        Some(out)
    }

    pub(crate) fn sample_configuration<R: Rng + ?Sized>(&self, rng: &mut R) -> PointConfiguration {
        match &self.family {
            Family::GaussianBinary(g) => {
                PointConfiguration::from_displacements(&[g.sample(rng), g.sample(rng)])
            }
            Family::LatticeBinary(l) => {
                let mut pick = || if rng.random::<f64>() < l.p_up { l.step } else { -l.step };
                let a = pick();
                let b = pick();
                PointConfiguration::from_displacements(&[a, b])
            }
            Family::HeavyMixture(m) => {
                if rng.random::<f64>() < m.epsilon {
                    let y = m.burst.sample_y(rng);
                    PointConfiguration::cluster(m.c0, heavy::ln_ceil_exp(y))
                } else {
                    PointConfiguration::from_displacements(&[m.base.sample(rng), m.base.sample(rng)])
                }
            }
            Family::UserTable(t) => PointConfiguration::from_displacements(t.sample(rng)),
        }
    }

    /// One step of the size-biased spine: configuration from the
    /// `W₁`-biased law with the spine child chosen proportionally to
    /// `e^{-x}`, realized per family by (slot, tilted displacement,
    /// untilted siblings).
    pub(crate) fn sample_spine_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> RawSpineStep {
        let regular = |x: f64, sibs: Vec<f64>| {
            let w1 = (-x).exp() + sibs.iter().map(|d| (-d).exp()).sum::<f64>();
            RawSpineStep {
                displacement: x,
                siblings: sibs.into_iter().map(Atom::single).collect(),
                xi: w1.ln(),
                kind: StepKind::Regular,
            }
        };
        match &self.family {
            Family::GaussianBinary(g) => {
                let x = g.sample_tilted(rng);
                let s = g.sample(rng);
                regular(x, vec![s])
            }
            Family::LatticeBinary(l) => {
                let x = if rng.random::<f64>() < l.tilted_up() { l.step } else { -l.step };
                let s = if rng.random::<f64>() < l.p_up { l.step } else { -l.step };
                regular(x, vec![s])
            }
            Family::HeavyMixture(m) => {
                let base = m.base_mass();
                if rng.random::<f64>() * (base + m.burst_mass) < base {
                    let x = m.base.sample_tilted(rng);
                    let s = m.base.sample(rng);
                    regular(x, vec![s])
                } else {
                    let y = m.burst.sample_y_tilted(rng);
                    let ln_k = heavy::ln_ceil_exp(y);
                    let k = ln_k.exp().round();
                    RawSpineStep {
                        displacement: m.c0,
                        siblings: vec![Atom { displacement: m.c0, count: k - 1.0 }],
                        xi: ln_k - m.c0,
                        kind: StepKind::Burst,
                    }
                }
            }
            Family::UserTable(t) => {
                let (x, sibs) = t.sample_spine(rng);
                regular(x, sibs)
            }
        }
    }

    /// `P̂(ξ ≤ tau | spine displacement, step kind)`.
    pub fn spine_xi_survival(&self, displacement: f64, kind: StepKind, tau: f64) -> Result<f64> {
        match (&self.family, kind) {
            (Family::GaussianBinary(g), _) => Ok(g.xi_survival_given(displacement, tau)),
            (Family::HeavyMixture(m), StepKind::Regular) => Ok(m.base.xi_survival_given(displacement, tau)),
            (Family::HeavyMixture(m), StepKind::Burst) => {
                // ξ = ln K - c0 ≤ tau  <=>  Y < threshold
                let y = heavy::y_threshold_for_ln_count(tau + m.c0);
                let total = m.burst.mean_count;
                let above = m.burst.count_tail(y.next_up())?;
                Ok(1.0 - above / total)
            }
            (Family::LatticeBinary(_), _) | (Family::UserTable(_), _) => {
                let configs = self.finite_configurations().expect("finite family");
                let mut hit = 0.0;
                let mut all = 0.0;
                for c in &configs {
                    for &d in &c.displacements {
                        if d == displacement {
                            let p = c.probability * (-d).exp();
                            all += p;
                            if c.xi <= tau {
                                hit += p;
                            }
                        }
                    }
                }
                if all == 0.0 {
                    return Err(Error::invalid(format!("displacement {displacement} is not a spine atom")));
                }
                Ok(hit / all)
            }
        }
    }

    /// [`Self::spine_xi_survival`] at a fixed `tau`, with the parts that do
    /// not depend on the spine step evaluated once.
    pub fn spine_xi_survival_at(&self, tau: f64) -> Result<XiSurvival<'_>> {
        match &self.family {
            Family::GaussianBinary(g) => Ok(Box::new(move |x, _| Ok(g.xi_survival_given(x, tau)))),
            Family::HeavyMixture(m) => {
                let burst = self.spine_xi_survival(m.c0, StepKind::Burst, tau)?;
                Ok(Box::new(move |x, kind| match kind {
                    StepKind::Regular => Ok(m.base.xi_survival_given(x, tau)),
                    StepKind::Burst => Ok(burst),
                }))
            }
            Family::LatticeBinary(_) | Family::UserTable(_) => {
                let configs = self.finite_configurations().expect("finite family");
                let mut table: Vec<(f64, f64)> = Vec::new();
                for &d in configs.iter().flat_map(|c| &c.displacements) {
                    if !table.iter().any(|t| t.0 == d) {
                        table.push((d, self.spine_xi_survival(d, StepKind::Regular, tau)?));
                    }
                }
                Ok(Box::new(move |x, kind| match table.iter().find(|t| t.0 == x) {
                    Some(t) => Ok(t.1),
                    None => self.spine_xi_survival(x, kind, tau),
                }))
            }
        }
    }

    /// `P̂(ξ(w₀) ≥ x) = E[W₁ 1{log W₁ ≥ x}]`.
    pub fn spine_xi_tail(&self, x: f64) -> Result<f64> {
        match &self.family {
            Family::GaussianBinary(g) => Ok(2.0 * g.tilt() * g.log_w1_tail(x)?),
            Family::LatticeBinary(_) | Family::UserTable(_) => {
                let configs = self.finite_configurations().expect("finite family");
                Ok(configs
                    .iter()
                    .filter(|c| c.xi >= x)
                    .map(|c| c.probability * c.xi.exp())
                    .sum())
            }
            Family::HeavyMixture(m) => {
                let base = (1.0 - m.epsilon) * 2.0 * m.base.tilt() * m.base.log_w1_tail(x)?;
                let y = heavy::y_threshold_for_ln_count(x + m.c0);
                let burst = m.epsilon * (-m.c0).exp() * m.burst.count_tail(y)?;
                Ok(base + burst)
            }
        }
    }
}

/// `(E Σ e^{-V} - 1, E Σ V e^{-V})`.
pub fn boundary_residuals(law: &ReproductionLaw) -> Result<(f64, f64)> {
    let (a, b, _) = law.analytic_moments();
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::QuadratureFailure("non-finite boundary moments".into()));
    }
    Ok((a - 1.0, b))
}

/// `σ² = E Σ V² e^{-V}`.
pub fn sigma_squared(law: &ReproductionLaw) -> Result<f64> {
    let s2 = law.analytic_moments().2;
    if !s2.is_finite() {
        return Err(Error::QuadratureFailure("non-finite second moment".into()));
    }
    Ok(s2)
}

/// `x² E[Σ e^{-V} 1{log W₁ ≥ x}]`.
pub fn integrability_functional(law: &ReproductionLaw, x: f64) -> Result<FunctionalValue> {
    if !(x >= 0.0) {
        return Err(Error::invalid(format!("integrability functional needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(FunctionalValue { x, value: 0.0, se: 0.0 });
    }
    let tail = law.spine_xi_tail(x)?;
    Ok(FunctionalValue { x, value: x * x * tail, se: 0.0 })
}

pub fn sample_offspring<R: Rng + ?Sized>(law: &ReproductionLaw, rng: &mut R) -> PointConfiguration {
    law.sample_configuration(rng)
}

/// `P̂(ξ ≤ τ | spine displacement, step kind)` at a fixed `τ`.
pub type XiSurvival<'a> = Box<dyn Fn(f64, StepKind) -> Result<f64> + Send + Sync + 'a>;

/// Monte Carlo estimates of `E W₁`, `E Σ V e^{-V}`, `E Σ V² e^{-V}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimates {
    pub w1: EstimateReport,
    pub first: EstimateReport,
    pub second: EstimateReport,
    pub offspring: EstimateReport,
}

pub fn monte_carlo_moments(law: &ReproductionLaw, draws: usize, key: StreamKey, seed: u64) -> MomentEstimates {
    let rows: Vec<[f64; 4]> = crate::par::par_draws(key, draws, |rng| {
        let c = law.sample_configuration(rng);
        let mut m = [c.w1, 0.0, 0.0, c.child_count()];
        for a in &c.atoms {
            let w = a.count * (-a.displacement).exp();
            m[1] += a.displacement * w;
            m[2] += a.displacement * a.displacement * w;
        }
        m
    });
    let col = |i: usize| {
        let v: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        EstimateReport::from_samples(&v, seed)
    };
    MomentEstimates { w1: col(0), first: col(1), second: col(2), offspring: col(3) }
}

/// [`monte_carlo_moments`] with the burst tail of a heavy mixture taken
/// exactly: burst draws with `Y > y_cut` contribute nothing, and
/// `E[· 1{burst, Y > y_cut}]` is added to every draw. Unbiased, with finite
/// variance where the plain estimator has none. Other families fall back to
/// the plain estimator.
pub fn monte_carlo_moments_tail_exact(
    law: &ReproductionLaw,
    draws: usize,
    key: StreamKey,
    seed: u64,
    y_cut: f64,
) -> Result<MomentEstimates> {
    let Family::HeavyMixture(m) = &law.family else {
        return Ok(monte_carlo_moments(law, draws, key, seed));
    };
    let tail_count = m.epsilon * m.burst.count_tail(y_cut)?;
    let w = tail_count * (-m.c0).exp();
    let tail = [w, m.c0 * w, m.c0 * m.c0 * w, tail_count];
    let rows: Vec<[f64; 4]> = crate::par::par_draws(key, draws, |rng| {
        let c = if rng.random::<f64>() < m.epsilon {
            let y = m.burst.sample_y(rng);
            if y > y_cut {
                return tail;
            }
            PointConfiguration::cluster(m.c0, heavy::ln_ceil_exp(y))
        } else {
            PointConfiguration::from_displacements(&[m.base.sample(rng), m.base.sample(rng)])
        };
        let mut r = [c.w1 + tail[0], tail[1], tail[2], c.child_count() + tail[3]];
        for a in &c.atoms {
            let w = a.count * (-a.displacement).exp();
            r[1] += a.displacement * w;
            r[2] += a.displacement * a.displacement * w;
        }
        r
    });
    let col = |i: usize| {
        let v: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        EstimateReport::from_samples(&v, seed)
    };
    Ok(MomentEstimates { w1: col(0), first: col(1), second: col(2), offspring: col(3) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{gauss_kronrod, integrate};
    use crate::rng::ModuleId;

    fn gaussian_child_moment_by_quadrature(g: GaussianPair, power: i32) -> f64 {
        let sd = g.variance.sqrt();
        let lo = g.mean - 40.0 * sd;
        let hi = g.mean + 40.0 * sd;
        integrate(
            |x: f64| {
                let dens = (-(x - g.mean).powi(2) / (2.0 * g.variance)).exp()
                    / (sd * (2.0 * std::f64::consts::PI).sqrt());
                x.powi(power) * (-x).exp() * dens
            },
            lo,
            hi,
            Tolerance { abs: 1e-14, rel: 1e-12 },
        )
        .unwrap()
    }

    #[test]
    fn gaussian_binary_boundary_by_quadrature() {
        let law = make_gaussian_binary();
        let Family::GaussianBinary(g) = law.family() else { unreachable!() };
        let r1 = 2.0 * gaussian_child_moment_by_quadrature(*g, 0) - 1.0;
        let r2 = 2.0 * gaussian_child_moment_by_quadrature(*g, 1);
        let s2 = 2.0 * gaussian_child_moment_by_quadrature(*g, 2);
        assert!(r1.abs() < 1e-12 && r2.abs() < 1e-12, "{r1} {r2}");
        assert!((s2 - 2.0 * LN_2).abs() < 1e-12);
        let (a1, a2) = boundary_residuals(&law).unwrap();
        assert!(a1.abs() < 1e-12 && a2.abs() < 1e-12);
        assert!((law.sigma2() - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert!((law.lambda_star() - 2.737_8).abs() < 1e-4);
        law.validate().unwrap();
    }

    #[test]
    fn lattice_binary_constants() {
        let law = make_lattice_binary();
        let h = law.lattice_step().unwrap();
        assert!((h - 1.316_957_896_924_816_6).abs() < 1e-15);
        assert!((h - (2.0 + 3f64.sqrt()).ln()).abs() < 1e-15);
        let (r1, r2) = boundary_residuals(&law).unwrap();
        assert!(r1.abs() < 1e-15 && r2.abs() < 1e-15);
        assert_eq!(sigma_squared(&law).unwrap(), law.sigma2());
        assert!((law.sigma2() - h * h).abs() < 1e-15);
        assert!((law.lambda_star() - 2.950_155_641_582_904).abs() < 1e-12);
        let Family::LatticeBinary(l) = law.family() else { unreachable!() };
        assert!((l.tilted_up() - 0.5).abs() < 1e-15);
        law.validate().unwrap();
    }

    #[test]
    fn mistuned_gaussian_has_nonzero_residual() {
        let law = ReproductionLaw::gaussian_binary(1.0, 2.0 * LN_2);
        let (r1, _) = boundary_residuals(&law).unwrap();
        // 2 e^{-1 + ln 2} - 1 = 4/e - 1
        assert!((r1 - (4.0 / std::f64::consts::E - 1.0)).abs() < 1e-14);
        assert!(law.validate().is_err());
    }

    fn heavy() -> ReproductionLaw {
        make_heavy_mixture(0.01, 2.0, 3.0).unwrap()
    }

    #[test]
    fn heavy_mixture_is_in_boundary_case() {
        let law = heavy();
        let (r1, r2) = boundary_residuals(&law).unwrap();
        assert!(r1.abs() < 1e-12 && r2.abs() < 1e-12, "{r1} {r2}");
        law.validate().unwrap();
        let Family::HeavyMixture(m) = law.family() else { unreachable!() };
        // burst share of σ² is c0² times the burst mass
        let (_, _, base2) = m.base.moments();
        let burst_part = law.sigma2() - 2.0 * (1.0 - m.epsilon) * base2;
        assert!((burst_part - m.c0 * m.c0 * m.burst_mass).abs() < 1e-14);
    }

    #[test]
    fn heavy_mixture_mean_count_by_independent_quadrature() {
        // E[ceil(e^Y)] by brute-force panels on every unit step of the count
        // up to a cutoff plus the e^y envelope above it.
        let y_min: f64 = 2.0;
        let b = BurstLaw::new(y_min).unwrap();
        let dens = |y: f64| (-y).exp() / (y * y * y);
        let tol = Tolerance::standard();
        let norm = gauss_kronrod(dens, y_min, 60.0, tol).unwrap();
        let mut total = 0.0;
        let mut lo = y_min;
        let mut k = y_min.exp().ceil();
        while k <= 4096.0 {
            let hi = k.ln();
            total += gauss_kronrod(|y| k * dens(y), lo, hi, tol).unwrap();
            lo = hi;
            k += 1.0;
        }
        // above 4096: e^y plus an average fractional excess of 1/2
        total += gauss_kronrod(|y: f64| (1.0 + 0.5 * (-y).exp()) / (y * y * y), lo, 1e6, tol).unwrap()
            + 0.5 / 1e12;
        let oracle = total / norm;
        assert!((b.mean_count - oracle).abs() < 1e-7 * oracle, "{} vs {}", b.mean_count, oracle);
    }

    #[test]
    fn heavy_mixture_rejects_unsolvable_parameters() {
        assert!(matches!(make_heavy_mixture(0.9, 1.1, -3.0), Err(Error::NoBoundarySolution(_))));
        assert!(make_heavy_mixture(1.5, 2.0, 1.0).is_err());
        assert!(make_heavy_mixture(0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn integrability_functional_gaussian_vanishes() {
        let law = make_gaussian_binary();
        assert_eq!(integrability_functional(&law, 0.0).unwrap().value, 0.0);
        let v15 = integrability_functional(&law, 15.0).unwrap().value;
        assert!(v15 < 1e-6 && v15 > 0.0, "{v15}");
        let mut prev = f64::INFINITY;
        for x in (4..=30).map(|k| k as f64) {
            let v = integrability_functional(&law, x).unwrap().value;
            assert!(v < prev, "not decreasing at x = {x}");
            prev = v;
        }
    }

    #[test]
    fn gaussian_log_w1_tail_matches_double_quadrature() {
        // brute force: integrate both children over a 2-D grid of Gauss-Kronrod
        let g = GaussianPair { mean: 2.0 * LN_2, variance: 2.0 * LN_2 };
        let x: f64 = 1.5;
        let sd = g.variance.sqrt();
        let tol = Tolerance { abs: 1e-13, rel: 1e-11 };
        let phi = |z: f64| (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let outer = gauss_kronrod(
            |a: f64| {
                let dens = phi((a - (g.mean - g.variance)) / sd) / sd;
                let lim = (x.exp() - (-a).exp()).max(0.0);
                let p = if lim == 0.0 { 1.0 } else { normal_cdf((-lim.ln() - g.mean) / sd) };
                dens * p
            },
            -30.0,
            30.0,
            tol,
        )
        .unwrap();
        let got = g.log_w1_tail(x).unwrap();
        assert!((got - outer).abs() < 1e-10, "{got} vs {outer}");
    }

    #[test]
    fn integrability_functional_heavy_has_positive_limit() {
        let law = heavy();
        let Family::HeavyMixture(m) = law.family() else { unreachable!() };
        let limit = m.epsilon * m.burst.norm * (-m.c0).exp() / 2.0;
        let vals: Vec<f64> = [20.0, 40.0, 80.0]
            .iter()
            .map(|&x| integrability_functional(&law, x).unwrap().value)
            .collect();
        // x² ∫_{x+c0}^∞ y^{-3} dy scaled: limit x²/(x+c0)²
        for (v, x) in vals.iter().zip([20.0, 40.0, 80.0]) {
            let predicted = limit * x * x / ((x + m.c0) * (x + m.c0));
            assert!((v - predicted).abs() < 1e-6 * predicted, "{v} vs {predicted}");
        }
        assert!(vals[0] < vals[1] && vals[1] < vals[2] && vals[2] < limit);
        for x in (5..=100).step_by(5) {
            let v = integrability_functional(&law, x as f64).unwrap().value;
            assert!(v > 0.2 * limit, "floor violated at {x}");
        }
    }

    #[test]
    fn sampled_lattice_displacements_are_on_the_lattice() {
        let law = make_lattice_binary();
        let h = law.lattice_step().unwrap();
        let mut rng = StreamKey::new(1, ModuleId::Laws).rng();
        for _ in 0..1000 {
            let c = sample_offspring(&law, &mut rng);
            let ds = c.displacements();
            assert_eq!(ds.len(), 2);
            assert!(ds.iter().all(|&d| d == h || d == -h));
            assert_eq!(c.xi, c.w1.ln());
        }
    }

    #[test]
    fn monte_carlo_moments_gaussian() {
        let law = make_gaussian_binary();
        let est = monte_carlo_moments(&law, 200_000, StreamKey::new(3, ModuleId::Laws), 3);
        assert!((est.w1.estimate - 1.0).abs() < 3.0 * est.w1.se);
        assert!(est.first.estimate.abs() < 3.0 * est.first.se);
        assert!((est.second.estimate - law.sigma2()).abs() < 3.0 * est.second.se);
    }

    #[test]
    fn tail_exact_moments_heavy() {
        let law = make_heavy_mixture(0.05, 2.0, 1.0).unwrap();
        let est = monte_carlo_moments_tail_exact(&law, 200_000, StreamKey::new(3, ModuleId::Laws), 3, 8.0).unwrap();
        assert!((est.w1.estimate - 1.0).abs() < 3.0 * est.w1.se, "{:?}", est.w1);
        assert!(est.first.estimate.abs() < 3.0 * est.first.se, "{:?}", est.first);
        assert!((est.offspring.estimate - law.mean_offspring()).abs() < 3.0 * est.offspring.se);
        // below the cut the draws are the plain ones
        let plain = monte_carlo_moments(&law, 1000, StreamKey::new(4, ModuleId::Laws), 4);
        let cut = monte_carlo_moments_tail_exact(&law, 1000, StreamKey::new(4, ModuleId::Laws), 4, 1e6).unwrap();
        assert!((plain.w1.estimate - cut.w1.estimate).abs() < 1e-9);
    }

    #[test]
    fn heavy_burst_frequency() {
        let law = heavy();
        let key = StreamKey::new(11, ModuleId::Laws);
        let bursts: Vec<f64> = crate::par::par_draws(key, 100_000, |rng| {
            let c = sample_offspring(&law, rng);
            if c.atoms.len() == 1 { 1.0 } else { 0.0 }
        });
        let r = EstimateReport::from_samples(&bursts, 11);
        assert!((r.estimate - 0.01).abs() < 3.0 * r.se, "{r:?}");
    }

    #[test]
    fn spine_xi_survival_is_a_probability() {
        let law = heavy();
        for tau in [0.0, 2.0, 10.0, 50.0] {
            let p = law.spine_xi_survival(3.0, StepKind::Burst, tau).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
        let g = make_gaussian_binary();
        assert_eq!(g.spine_xi_survival(0.3, StepKind::Regular, 200.0).unwrap(), 1.0);
        assert_eq!(g.spine_xi_survival(-50.0, StepKind::Regular, 20.0).unwrap(), 0.0);
    }
}
