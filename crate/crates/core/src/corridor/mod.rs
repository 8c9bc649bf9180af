//! Small-deviation probabilities of (enriched) random walks in a corridor
//! `[f(j/n) a_n, g(j/n) a_n]`: exact transfer-matrix DP, Monte Carlo,
//! exponent fits in `1/a_n`, and the degradation caused by heavy marks.

mod band;

use std::ops::{Add, Mul};

use num_traits::{One, Zero};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::par_draws;
use crate::real::Real;
use crate::rng::StreamKey;
use crate::stats::EstimateReport;

pub use band::{mogulskii_exponent, Band, BandShape, KnotBand, PiecewiseLinear, ProfileBand};

pub const MAX_STATES: usize = 100_000;

/// `a_n` as a function of `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Scaling<T> {
    CubeRoot,
    FourthRoot,
    /// `a_n` constant, i.e. the band is given in absolute units.
    Fixed(T),
    /// Explicit `(n, a_n)` pairs.
    Table(Vec<(usize, T)>),
}

impl<T: Real> Scaling<T> {
    pub fn a_n(&self, n: usize) -> Result<T> {
        let nf = T::from_usize_lossy(n);
        match self {
            Scaling::CubeRoot => Ok(nf.cbrt()),
            Scaling::FourthRoot => Ok(nf.sqrt().sqrt()),
            Scaling::Fixed(a) => Ok(*a),
            Scaling::Table(rows) => rows
                .iter()
                .find(|r| r.0 == n)
                .map(|r| r.1)
                .ok_or_else(|| Error::invalid(format!("a_n table has no entry for n = {n}"))),
        }
    }
}

/// Step law of the walk. All built-in choices are centred.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Walk<T> {
    /// Steps `k h` with probability `p`.
    Lattice { h: T, steps: Vec<(i64, T)> },
    Gaussian { sigma2: T },
    /// Arbitrary finite step law `(value, probability)`.
    Table { steps: Vec<(T, T)> },
}

impl<T: Real> Walk<T> {
    /// Simple symmetric walk on `h ℤ`.
    pub fn symmetric(h: T) -> Self {
        let half = T::lit(0.5);
        Walk::Lattice { h, steps: vec![(-1, half), (1, half)] }
    }

    fn moments(&self) -> (T, T, T) {
        match self {
            Walk::Lattice { h, steps } => steps.iter().fold((T::zero(), T::zero(), T::zero()), |m, &(k, p)| {
                let x = T::from_i64_lossy(k) * *h;
                (m.0 + p, m.1 + p * x, m.2 + p * x * x)
            }),
            Walk::Gaussian { sigma2 } => (T::one(), T::zero(), *sigma2),
            Walk::Table { steps } => steps
                .iter()
                .fold((T::zero(), T::zero(), T::zero()), |m, &(x, p)| (m.0 + p, m.1 + p * x, m.2 + p * x * x)),
        }
    }

    pub fn variance(&self) -> T {
        self.moments().2
    }

    fn validate(&self) -> Result<()> {
        let (total, mean, var) = self.moments();
        let tol = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
        if (total - T::one()).abs() > tol {
            return Err(Error::invalid(format!("walk step probabilities sum to {total}")));
        }
        if mean.abs() > tol {
            return Err(Error::invalid(format!("walk is not centred: mean {mean}")));
        }
        if !(var > T::zero()) {
            return Err(Error::invalid("walk variance must be positive"));
        }
        if let Walk::Lattice { h, .. } = self {
            if !(*h > T::zero()) {
                return Err(Error::invalid("lattice step must be positive"));
            }
        }
        Ok(())
    }
}

/// Law of the marks `ξ_j ≥ 0`, i.i.d. and independent of the steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Mark<T> {
    None,
    /// Uniform on `[0, max]`.
    Bounded { max: T },
    /// `P(ξ > x) = min(1, c / x²)`.
    ParetoTail { c: T },
    /// `ξ = τ_n + 1` with probability `c / a_n²`, else 0.
    TwoPoint { c: T },
}

impl<T: Real> Mark<T> {
    /// `P(ξ > tau)`.
    pub fn tail(&self, tau: T, a_n: T) -> Result<T> {
        let p = match *self {
            Mark::None => T::zero(),
            Mark::Bounded { max } => {
                if tau >= max {
                    T::zero()
                } else if tau <= T::zero() {
                    T::one()
                } else {
                    (max - tau) / max
                }
            }
            Mark::ParetoTail { c } => {
                if tau <= T::zero() {
                    T::one()
                } else {
                    (c / (tau * tau)).min(T::one())
                }
            }
            Mark::TwoPoint { c } => c / (a_n * a_n),
        };
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::invalid(format!("mark tail probability {p} outside [0,1]")));
        }
        Ok(p)
    }
}

/// Mark threshold `τ_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Threshold<T> {
    Const(T),
    /// `A a_n`
    ScaledAn(T),
    /// `τ_n = n`
    Linear,
}

impl<T: Real> Threshold<T> {
    pub fn tau(&self, n: usize, a_n: T) -> T {
        match *self {
            Threshold::Const(t) => t,
            Threshold::ScaledAn(a) => a * a_n,
            Threshold::Linear => T::from_usize_lossy(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorridorSpec<T> {
    pub band: BandShape<T>,
    pub scaling: Scaling<T>,
    pub walk: Walk<T>,
    pub mark: Mark<T>,
    pub threshold: Threshold<T>,
    /// Start at `z a_n`.
    pub start: T,
    /// Optional endpoint window `[y, y']` in `a_n` units.
    pub endpoint: Option<(T, T)>,
}

impl<T: Real> CorridorSpec<T> {
    /// Band in `a_n` units, no marks, start at `start`.
    pub fn new(band: BandShape<T>, scaling: Scaling<T>, walk: Walk<T>, start: T) -> Result<Self> {
        let spec = CorridorSpec {
            band,
            scaling,
            walk,
            mark: Mark::None,
            threshold: Threshold::Linear,
            start,
            endpoint: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_mark(mut self, mark: Mark<T>, threshold: Threshold<T>) -> Self {
        self.mark = mark;
        self.threshold = threshold;
        self
    }

    pub fn with_endpoint(mut self, y: T, y2: T) -> Result<Self> {
        if !(y <= y2) {
            return Err(Error::invalid("endpoint window needs y <= y'"));
        }
        self.endpoint = Some((y, y2));
        Ok(self)
    }

    pub fn with_start(mut self, z: T) -> Result<Self> {
        self.start = z;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.walk.validate()?;
        let (f0, g0) = (self.band.lower(T::zero()), self.band.upper(T::zero()));
        if !(f0 <= self.start && self.start <= g0) {
            return Err(Error::invalid(format!("start {} outside the band [{f0}, {g0}] at s = 0", self.start)));
        }
        Ok(())
    }

    fn bounds(&self, j: usize, n: usize, a_n: T) -> (T, T) {
        let s = T::from_usize_lossy(j) / T::from_usize_lossy(n);
        let (mut lo, mut hi) = (self.band.lower(s) * a_n, self.band.upper(s) * a_n);
        if j == n {
            if let Some((y, y2)) = self.endpoint {
                lo = lo.max(y * a_n);
                hi = hi.min(y2 * a_n);
            }
        }
        (lo, hi)
    }

    /// `a_n² (-log(1 - P(ξ > τ_n)))`: the per-unit-time mark penalty on the
    /// scaled exponent.
    pub fn mark_penalty(&self, n: usize) -> Result<T> {
        let a = self.scaling.a_n(n)?;
        let q = self.mark.tail(self.threshold.tau(n, a), a)?;
        Ok(-(a * a) * (-q).ln_1p())
    }
}

/// Smallest `k` with `x0 + k h ≥ x`.
fn first_at_or_above<T: Real>(x: T, x0: T, h: T) -> i64 {
    let mut k = ((x - x0) / h).ceil().to_i64().unwrap_or(i64::MIN / 4);
    while x0 + T::from_i64_lossy(k) * h < x {
        k += 1;
    }
    while x0 + T::from_i64_lossy(k - 1) * h >= x {
        k -= 1;
    }
    k
}

/// Largest `k` with `x0 + k h ≤ x`.
fn last_at_or_below<T: Real>(x: T, x0: T, h: T) -> i64 {
    let mut k = ((x - x0) / h).floor().to_i64().unwrap_or(i64::MAX / 4);
    while x0 + T::from_i64_lossy(k) * h > x {
        k -= 1;
    }
    while x0 + T::from_i64_lossy(k + 1) * h <= x {
        k += 1;
    }
    k
}

/// Admissible lattice states `[klo_j, khi_j]` for `j = 0..=n`; positions
/// are `z a_n + k h`, membership is decided with the same float predicate
/// everywhere.
pub fn state_ranges<T: Real>(spec: &CorridorSpec<T>, n: usize) -> Result<Vec<(i64, i64)>> {
    let Walk::Lattice { h, .. } = &spec.walk else {
        return Err(Error::UnsupportedFamily("corridor DP needs a lattice walk".into()));
    };
    let h = *h;
    let a = spec.scaling.a_n(n)?;
    let x0 = spec.start * a;
    let mut out = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let (lo, hi) = spec.bounds(j, n, a);
        let klo = first_at_or_above(lo, x0, h);
        let khi = last_at_or_below(hi, x0, h);
        if khi >= klo && (khi - klo + 1) as usize > MAX_STATES {
            return Err(Error::StateExplosion { states: (khi - klo + 1) as usize, limit: MAX_STATES });
        }
        out.push((klo, khi));
    }
    Ok(out)
}

/// No-mark corridor probability in exact arithmetic over any semiring-like
/// weight type. No renormalization, so only for small `n`.
pub fn dp_corridor_linear<T, W>(spec: &CorridorSpec<T>, n: usize, steps: &[(i64, W)]) -> Result<W>
where
    T: Real,
    W: Clone + Zero + One + Add<Output = W> + Mul<Output = W>,
{
    let ranges = state_ranges(spec, n)?;
    let (a0, b0) = ranges[0];
    if !(a0 <= 0 && 0 <= b0) {
        return Ok(W::zero());
    }
    let mut kmin = a0;
    let mut row: Vec<W> = (a0..=b0).map(|k| if k == 0 { W::one() } else { W::zero() }).collect();
    for &(a, b) in &ranges[1..] {
        let mut next: Vec<W> = vec![W::zero(); (b - a + 1).max(0) as usize];
        for &(s, ref p) in steps {
            for (i, v) in row.iter().enumerate() {
                let k = kmin + i as i64 + s;
                if k >= a && k <= b {
                    let slot = &mut next[(k - a) as usize];
                    *slot = slot.clone() + p.clone() * v.clone();
                }
            }
        }
        row = next;
        kmin = a;
    }
    Ok(row.into_iter().fold(W::zero(), |acc, v| acc + v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorridorProbability<T> {
    pub n: usize,
    pub a_n: T,
    pub ln_p: T,
    /// The probability itself; underflows to zero where `ln_p` does not.
    pub p: T,
    /// Largest number of live states in any row.
    pub max_states: usize,
}

impl<T: Real> CorridorProbability<T> {
    fn zero(n: usize, a_n: T, max_states: usize) -> Self {
        CorridorProbability { n, a_n, ln_p: T::neg_infinity(), p: T::zero(), max_states }
    }

    pub fn p(&self) -> T {
        self.p
    }

    /// `(a_n² / n) log p`.
    pub fn scaled(&self) -> T {
        self.a_n * self.a_n / T::from_usize_lossy(self.n) * self.ln_p
    }
}

/// Exact `P_{z a_n}(T_j ∈ [f(j/n) a_n, g(j/n) a_n], ξ_j ≤ τ_n, j ≤ n)` for a
/// lattice walk, in log space with per-row renormalization.
pub fn dp_corridor<T: Real>(spec: &CorridorSpec<T>, n: usize) -> Result<CorridorProbability<T>> {
    if n == 0 {
        return Err(Error::invalid("corridor DP needs n >= 1"));
    }
    let Walk::Lattice { steps, .. } = &spec.walk else {
        return Err(Error::UnsupportedFamily("corridor DP needs a lattice walk".into()));
    };
    let a_n = spec.scaling.a_n(n)?;
    let ranges = state_ranges(spec, n)?;
    let (a0, b0) = ranges[0];
    let mut max_states = 1;
    if !(a0 <= 0 && 0 <= b0) {
        return Ok(CorridorProbability::zero(n, a_n, max_states));
    }
    let mut kmin = 0i64;
    let mut row = vec![T::one()];
    // rows are rescaled by powers of two only, so dyadic results stay exact
    let mut exp2: i64 = 0;
    let two = T::lit(2.0);
    for &(a, b) in &ranges[1..] {
        if b < a {
            return Ok(CorridorProbability::zero(n, a_n, max_states));
        }
        let mut next = vec![T::zero(); (b - a + 1) as usize];
        // fixed summation order: steps in declared order, states ascending
        for &(s, p) in steps {
            for (i, &v) in row.iter().enumerate() {
                let k = kmin + i as i64 + s;
                if k >= a && k <= b {
                    next[(k - a) as usize] = next[(k - a) as usize] + p * v;
                }
            }
        }
        let m = next.iter().copied().fold(T::zero(), T::max);
        if m == T::zero() {
            return Ok(CorridorProbability::zero(n, a_n, max_states));
        }
        let e = m.log2().floor().to_i64().unwrap_or(0);
        if e != 0 {
            let f = two.powi(-(e as i32));
            for v in &mut next {
                *v = *v * f;
            }
            exp2 += e;
        }
        max_states = max_states.max(next.len());
        row = next;
        kmin = a;
    }
    let sum = row.iter().fold(T::zero(), |acc, &v| acc + v);
    let mut ln_p = sum.ln() + T::from_i64_lossy(exp2) * T::LN_2();
    let mut p = sum * two.powi(exp2.clamp(-4000, 4000) as i32);
    let q = spec.mark.tail(spec.threshold.tau(n, a_n), a_n)?;
    if q > T::zero() {
        let survive = T::from_usize_lossy(n) * (-q).ln_1p();
        ln_p = ln_p + survive;
        p = p * survive.exp();
    }
    Ok(CorridorProbability { n, a_n, ln_p, p, max_states })
}

/// Largest DP probability over start offsets `z` on a grid.
pub fn dp_corridor_sup_start<T: Real>(spec: &CorridorSpec<T>, n: usize, starts: &[T]) -> Result<CorridorProbability<T>> {
    let mut best: Option<CorridorProbability<T>> = None;
    for &z in starts {
        let r = dp_corridor(&spec.clone().with_start(z)?, n)?;
        if best.is_none_or(|b| r.ln_p > b.ln_p) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::invalid("empty start grid"))
}

fn sample_step<R: Rng + ?Sized>(walk: &Walk<f64>, rng: &mut R) -> f64 {
    match walk {
        Walk::Lattice { h, steps } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for &(k, p) in steps {
                acc += p;
                if u < acc {
                    return k as f64 * h;
                }
            }
            steps[steps.len() - 1].0 as f64 * h
        }
        Walk::Gaussian { sigma2 } => {
            let z: f64 = StandardNormal.sample(rng);
            sigma2.sqrt() * z
        }
        Walk::Table { steps } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for &(x, p) in steps {
                acc += p;
                if u < acc {
                    return x;
                }
            }
            steps[steps.len() - 1].0
        }
    }
}

fn sample_mark<R: Rng + ?Sized>(mark: &Mark<f64>, tau: f64, a_n: f64, rng: &mut R) -> f64 {
    match *mark {
        Mark::None => 0.0,
        Mark::Bounded { max } => max * rng.random::<f64>(),
        Mark::ParetoTail { c } => (c / (1.0 - rng.random::<f64>())).sqrt(),
        Mark::TwoPoint { c } => {
            if rng.random::<f64>() < c / (a_n * a_n) {
                tau + 1.0
            } else {
                0.0
            }
        }
    }
}

/// Direct Monte Carlo of the corridor event, binomial standard error.
pub fn mc_corridor(spec: &CorridorSpec<f64>, n: usize, replicates: usize, key: StreamKey, seed: u64) -> Result<EstimateReport> {
    if n == 0 || replicates == 0 {
        return Err(Error::invalid("need n >= 1 and replicates >= 1"));
    }
    let a_n = spec.scaling.a_n(n)?;
    let tau = spec.threshold.tau(n, a_n);
    let bounds: Vec<(f64, f64)> = (0..=n).map(|j| spec.bounds(j, n, a_n)).collect();
    let x0 = spec.start * a_n;
    let hits = par_draws(key, replicates, |rng| {
        let mut x = x0;
        if x < bounds[0].0 || x > bounds[0].1 {
            return 0.0;
        }
        for (lo, hi) in &bounds[1..] {
            x += sample_step(&spec.walk, rng);
            if x < *lo || x > *hi || sample_mark(&spec.mark, tau, a_n, rng) > tau {
                return 0.0;
            }
        }
        1.0
    });
    let m = hits.len() as f64;
    let p = hits.iter().sum::<f64>() / m;
    Ok(EstimateReport {
        estimate: p,
        se: (p * (1.0 - p) / m).sqrt(),
        replicates,
        seed,
        exact: false,
        ln_estimate: p.ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FitStatus {
    Converged,
    /// The mark penalty grows without bound across the grid.
    Diverging,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitPoint<T> {
    pub n: usize,
    pub a_n: T,
    pub ln_p: T,
    /// `(a_n² / n) log p_n`
    pub scaled: T,
    pub mark_penalty: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExponentFit<T> {
    pub points: Vec<FitPoint<T>>,
    /// Intercept of the least-squares line `scaled ≈ L + b / a_n`.
    pub fitted_limit: T,
    /// `b`
    pub slope: T,
    pub residual_rms: T,
    pub status: FitStatus,
}

/// Least squares of `(a_n²/n) log p_n` on `1/a_n`, intercept reported as
/// the limit.
pub fn fit_exponent<T: Real>(spec: &CorridorSpec<T>, n_grid: &[usize]) -> Result<ExponentFit<T>> {
    if n_grid.len() < 4 {
        return Err(Error::invalid("exponent fit needs at least 4 grid points"));
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("n grid must be strictly increasing"));
    }
    let points: Vec<FitPoint<T>> = n_grid
        .par_iter()
        .map(|&n| {
            let r = dp_corridor(spec, n)?;
            Ok(FitPoint { n, a_n: r.a_n, ln_p: r.ln_p, scaled: r.scaled(), mark_penalty: spec.mark_penalty(n)? })
        })
        .collect::<Result<_>>()?;
    if let Some(p) = points.iter().find(|p| !p.scaled.is_finite()) {
        return Err(Error::invalid(format!("corridor probability is zero at n = {}", p.n)));
    }
    let xs: Vec<T> = points.iter().map(|p| T::one() / p.a_n).collect();
    let ys: Vec<T> = points.iter().map(|p| p.scaled).collect();
    let (limit, slope) = least_squares(&xs, &ys);
    let m = T::from_usize_lossy(xs.len());
    let ss = xs.iter().zip(&ys).fold(T::zero(), |acc, (&x, &y)| {
        let r = y - limit - slope * x;
        acc + r * r
    });
    let pen: Vec<T> = points.iter().map(|p| p.mark_penalty).collect();
    let growing = pen.windows(2).all(|w| w[1] > w[0]);
    let first = pen[0];
    let last = pen[pen.len() - 1];
    let status = if growing && last >= T::lit(2.0) * first && last > T::zero() {
        FitStatus::Diverging
    } else {
        FitStatus::Converged
    };
    Ok(ExponentFit { points, fitted_limit: limit, slope, residual_rms: (ss / m).sqrt(), status })
}

/// `(intercept, slope)` of the ordinary least-squares line.
fn least_squares<T: Real>(xs: &[T], ys: &[T]) -> (T, T) {
    let m = T::from_usize_lossy(xs.len());
    let mx = xs.iter().fold(T::zero(), |a, &x| a + x) / m;
    let my = ys.iter().fold(T::zero(), |a, &y| a + y) / m;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        sxy = sxy + (x - mx) * (y - my);
        sxx = sxx + (x - mx) * (x - mx);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailGap<T> {
    pub nice: ExponentFit<T>,
    pub heavy: ExponentFit<T>,
    /// `heavy.fitted_limit - nice.fitted_limit`
    pub gap: T,
}

/// Fits for two specs that differ only in the mark law and threshold.
pub fn heavy_tail_gap<T: Real>(nice: &CorridorSpec<T>, heavy: &CorridorSpec<T>, n_grid: &[usize]) -> Result<TailGap<T>> {
    let same = nice.band == heavy.band
        && nice.scaling == heavy.scaling
        && nice.walk == heavy.walk
        && nice.start == heavy.start
        && nice.endpoint == heavy.endpoint;
    if !same {
        return Err(Error::invalid("specs must agree except for the mark law"));
    }
    let fit_nice = fit_exponent(nice, n_grid)?;
    let fit_heavy = fit_exponent(heavy, n_grid)?;
    let gap = fit_heavy.fitted_limit - fit_nice.fitted_limit;
    Ok(TailGap { nice: fit_nice, heavy: fit_heavy, gap })
}
