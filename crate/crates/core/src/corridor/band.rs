//! Corridor shapes on `[0, 1]` and the strip exponent
//! `-(π²σ²/2) ∫_0^1 ds / (g(s) - f(s))²`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{tanh_sinh, Tolerance};
use crate::real::Real;

pub trait Band<T: Real> {
    fn lower(&self, s: T) -> T;
    fn upper(&self, s: T) -> T;

    fn width(&self, s: T) -> T {
        self.upper(s) - self.lower(s)
    }

    /// `width(1 - r)`, overridable where the subtraction loses accuracy
    /// near `s = 1`.
    fn width_from_end(&self, r: T) -> T {
        self.width(T::one() - r)
    }
}

/// Continuous piecewise-linear function through `(s, value)` knots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinear<T> {
    knots: Vec<(T, T)>,
}

impl<T: Real> PiecewiseLinear<T> {
    /// Knots must start at 0, end at 1 and be strictly increasing in `s`.
    pub fn new(knots: Vec<(T, T)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a piecewise-linear function needs at least two knots"));
        }
        if knots[0].0 != T::zero() || knots[knots.len() - 1].0 != T::one() {
            return Err(Error::invalid("knots must span exactly [0, 1]"));
        }
        if knots.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::invalid("knot abscissae must be strictly increasing"));
        }
        if knots.iter().any(|k| !k.1.is_finite()) {
            return Err(Error::invalid("knot values must be finite"));
        }
        Ok(PiecewiseLinear { knots })
    }

    pub fn constant(v: T) -> Self {
        PiecewiseLinear { knots: vec![(T::zero(), v), (T::one(), v)] }
    }

    pub fn knots(&self) -> &[(T, T)] {
        &self.knots
    }

    pub fn eval(&self, s: T) -> T {
        let k = &self.knots;
        if s <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((s0, v0), (s1, v1)) = (w[0], w[1]);
            if s <= s1 {
                if v0 == v1 {
                    return v0;
                }
                return v0 + (v1 - v0) * (s - s0) / (s1 - s0);
            }
        }
        k[k.len() - 1].1
    }

    fn abscissae(&self) -> impl Iterator<Item = T> + '_ {
        self.knots.iter().map(|k| k.0)
    }
}

/// Band with piecewise-linear edges `f < g`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KnotBand<T> {
    pub lower: PiecewiseLinear<T>,
    pub upper: PiecewiseLinear<T>,
}

const SEPARATION_GRID: usize = 1000;

impl<T: Real> KnotBand<T> {
    /// Checks `f < g` on a 1000-point grid and at every knot.
    pub fn new(lower: PiecewiseLinear<T>, upper: PiecewiseLinear<T>) -> Result<Self> {
        let band = KnotBand { lower, upper };
        let grid = (0..=SEPARATION_GRID).map(|i| T::from_usize_lossy(i) / T::from_usize_lossy(SEPARATION_GRID));
        let knots = band.lower.abscissae().chain(band.upper.abscissae());
        for s in grid.chain(knots) {
            if !(band.lower.eval(s) < band.upper.eval(s)) {
                return Err(Error::invalid(format!("band edges cross at s = {s}")));
            }
        }
        Ok(band)
    }

    pub fn constant(lo: T, hi: T) -> Result<Self> {
        Self::new(PiecewiseLinear::constant(lo), PiecewiseLinear::constant(hi))
    }

    /// Parses `"s:lo:hi,s:lo:hi,..."`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for item in text.split(',') {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(Error::invalid(format!("band knot {item:?} is not s:lo:hi")));
            }
            let num = |p: &str| -> Result<T> {
                p.parse::<f64>()
                    .map(T::lit)
                    .map_err(|_| Error::invalid(format!("bad number {p:?} in band knot {item:?}")))
            };
            let s = num(parts[0])?;
            lo.push((s, num(parts[1])?));
            hi.push((s, num(parts[2])?));
        }
        Self::new(PiecewiseLinear::new(lo)?, PiecewiseLinear::new(hi)?)
    }

    /// Both edges scaled by `k > 0`.
    pub fn scaled(&self, k: T) -> Result<Self> {
        let sc = |p: &PiecewiseLinear<T>| PiecewiseLinear { knots: p.knots.iter().map(|&(s, v)| (s, v * k)).collect() };
        Self::new(sc(&self.lower), sc(&self.upper))
    }
}

impl<T: Real> Band<T> for KnotBand<T> {
    fn lower(&self, s: T) -> T {
        self.lower.eval(s)
    }
    fn upper(&self, s: T) -> T {
        self.upper.eval(s)
    }
}

/// `f(s) = λ - λ*(1 + δ - s)^{1/3}`, `g = λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileBand<T> {
    pub lambda: T,
    pub lambda_star: T,
    pub delta: T,
}

impl<T: Real> Band<T> for ProfileBand<T> {
    fn lower(&self, s: T) -> T {
        crate::tail::profile_f(self.lambda, self.lambda_star, self.delta, s)
    }
    fn upper(&self, _s: T) -> T {
        self.lambda
    }
    fn width(&self, s: T) -> T {
        self.lambda_star * (T::one() + self.delta - s).cbrt()
    }
    fn width_from_end(&self, r: T) -> T {
        self.lambda_star * (self.delta + r).cbrt()
    }
}

/// Either shape, as carried by a corridor specification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BandShape<T> {
    Knots(KnotBand<T>),
    Profile(ProfileBand<T>),
}

impl<T: Real> Band<T> for BandShape<T> {
    fn lower(&self, s: T) -> T {
        match self {
            BandShape::Knots(b) => b.lower(s),
            BandShape::Profile(b) => b.lower(s),
        }
    }
    fn upper(&self, s: T) -> T {
        match self {
            BandShape::Knots(b) => b.upper(s),
            BandShape::Profile(b) => b.upper(s),
        }
    }
    fn width(&self, s: T) -> T {
        match self {
            BandShape::Knots(b) => b.width(s),
            BandShape::Profile(b) => b.width(s),
        }
    }
    fn width_from_end(&self, r: T) -> T {
        match self {
            BandShape::Knots(b) => b.width_from_end(r),
            BandShape::Profile(b) => b.width_from_end(r),
        }
    }
}

/// `-(π²σ²/2) ∫_0^1 ds / width(s)²`. The integral is split at `1/2` and the
/// right half is integrated in the distance to `s = 1`, so integrable
/// singularities at either end keep full accuracy.
pub fn mogulskii_exponent<T: Real, B: Band<T> + ?Sized>(band: &B, sigma2: T) -> Result<T> {
    if !(sigma2 > T::zero()) {
        return Err(Error::invalid("sigma^2 must be positive"));
    }
    let half = T::lit(0.5);
    let tol = Tolerance::standard();
    let inv_sq = |w: T| -> T {
        if w <= T::zero() {
            T::nan()
        } else {
            T::one() / (w * w)
        }
    };
    let left = tanh_sinh(|s, _, _| inv_sq(band.width(s)), T::zero(), half, tol)?;
    let right = tanh_sinh(|r, _, _| inv_sq(band.width_from_end(r)), T::zero(), half, tol)?;
    let integral = left + right;
    if !integral.is_finite() {
        return Err(Error::QuadratureFailure("band width vanishes inside [0, 1]".into()));
    }
    Ok(-(T::PI() * T::PI() * sigma2 / T::lit(2.0)) * integral)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_strip() {
        let band = KnotBand::constant(0.0, 1.0).unwrap();
        let e = mogulskii_exponent(&band, 1.0).unwrap();
        assert!((e + std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-12);
        let wide = band.scaled(2.0).unwrap();
        let e2 = mogulskii_exponent(&wide, 1.0).unwrap();
        assert!((e2 - e / 4.0).abs() < 1e-12);
    }

    #[test]
    fn linear_widening_band() {
        // width 1 + s: ∫ ds/(1+s)² = 1/2
        let band = KnotBand::new(
            PiecewiseLinear::constant(0.0),
            PiecewiseLinear::new(vec![(0.0, 1.0), (1.0, 2.0)]).unwrap(),
        )
        .unwrap();
        let e = mogulskii_exponent(&band, 2.0).unwrap();
        assert!((e + std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_edges_are_rejected() {
        let lo = PiecewiseLinear::new(vec![(0.0, 0.0), (1.0, 2.0)]).unwrap();
        let hi = PiecewiseLinear::constant(1.0);
        assert!(KnotBand::new(lo, hi).is_err());
        assert!(KnotBand::<f64>::parse("0:-1:1,1:-1:1").is_ok());
        assert!(KnotBand::<f64>::parse("0:-1:1,0.5:0:0.1").is_err());
        assert!(KnotBand::<f64>::parse("0:1").is_err());
    }

    #[test]
    fn single_precision_exponent() {
        let band = KnotBand::<f32>::constant(-0.5, 0.5).unwrap();
        let e = mogulskii_exponent(&band, 1.0f32).unwrap();
        assert!((e + std::f32::consts::PI.powi(2) / 2.0).abs() < 1e-5);
    }
}
