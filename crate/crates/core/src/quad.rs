//! Numerical integration: double-exponential (tanh-sinh) for endpoint
//! singularities and semi-infinite ranges, adaptive Gauss–Kronrod for
//! smooth panels.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance<T> {
    pub abs: T,
    pub rel: T,
}

impl<T: Real> Tolerance<T> {
    /// abs 1e-12, rel 1e-10 for `f64`; clamped to a few ulps for `f32`.
    pub fn standard() -> Self {
        let eps = T::epsilon();
        Tolerance {
            abs: T::lit(1e-12).max(eps * T::lit(16.0)),
            rel: T::lit(1e-10).max(eps * T::lit(16.0)),
        }
    }

    fn accepts(&self, diff: T, value: T) -> bool {
        diff <= self.abs.max(self.rel * value.abs())
    }
}

const TANH_SINH_MAX_LEVEL: u32 = 12;
const TANH_SINH_T_MAX: f64 = 8.0;

/// Tanh-sinh quadrature of `f` over `[a, b]`.
///
/// The integrand receives `(x, x - a, b - x)`, with the two distances
/// computed without cancellation so that integrands singular at an
/// endpoint can be evaluated in reflected coordinates.
pub fn tanh_sinh<T, F>(mut f: F, a: T, b: T, tol: Tolerance<T>) -> Result<T>
where
    T: Real,
    F: FnMut(T, T, T) -> T,
{
    if !(a < b) {
        if a == b {
            return Ok(T::zero());
        }
        return Err(Error::QuadratureFailure(format!("empty interval [{a}, {b}]")));
    }
    let len = b - a;
    let half_pi = T::FRAC_PI_2();
    let two = T::lit(2.0);
    let four = T::lit(4.0);

    let mut node = |t: T| -> Result<T> {
        let u = half_pi * t.sinh();
        let e = (-two * u.abs()).exp();
        // sech^2(u) = 4 e^{-2|u|} / (1 + e^{-2|u|})^2
        let w = len / two * half_pi * t.cosh() * four * e / ((T::one() + e) * (T::one() + e));
        // distance to the nearer endpoint is len * e / (1 + e)
        let near = len * e / (T::one() + e);
        let far = len - near;
        let (da, db) = if u < T::zero() { (near, far) } else { (far, near) };
        if w == T::zero() || da <= T::zero() || db <= T::zero() {
            return Ok(T::zero());
        }
        let x = if u < T::zero() { a + da } else { b - db };
        let v = f(x, da, db);
        if v == T::zero() {
            return Ok(T::zero());
        }
        let c = w * v;
        if !c.is_finite() {
            return Err(Error::QuadratureFailure(format!(
                "non-finite integrand contribution at x = {x}"
            )));
        }
        Ok(c)
    };

    let t_max = T::lit(TANH_SINH_T_MAX);
    let mut h = T::one();
    let mut raw = node(T::zero())?;
    let mut k = 1i64;
    loop {
        let t = T::from_i64_lossy(k);
        if t > t_max {
            break;
        }
        raw = raw + node(t)? + node(-t)?;
        k += 1;
    }
    let mut estimate = raw * h;
    for level in 1..=TANH_SINH_MAX_LEVEL {
        h = h / two;
        let mut added = T::zero();
        let mut j = 1i64;
        loop {
            let t = h * T::from_i64_lossy(j);
            if t > t_max {
                break;
            }
            added = added + node(t)? + node(-t)?;
            j += 2;
        }
        raw = raw + added;
        let next = raw * h;
        if level >= 3 && tol.accepts((next - estimate).abs(), next) {
            return Ok(next);
        }
        estimate = next;
    }
    Err(Error::QuadratureFailure(format!(
        "tanh-sinh did not reach tolerance on [{a}, {b}], last estimate {estimate}"
    )))
}

/// Integral of `f` over `[a, +inf)`; `f` must decay fast enough to be
/// integrable.
pub fn semi_infinite<T, F>(mut f: F, a: T, tol: Tolerance<T>) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> T,
{
    tanh_sinh(
        |_r, r, one_minus_r| {
            let y = a + r / one_minus_r;
            let v = f(y);
            if v == T::zero() {
                return T::zero();
            }
            v / (one_minus_r * one_minus_r)
        },
        T::zero(),
        T::one(),
        tol,
    )
}

/// Convenience wrapper when the integrand is regular at both endpoints.
pub fn integrate<T, F>(mut f: F, a: T, b: T, tol: Tolerance<T>) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> T,
{
    tanh_sinh(|x, _, _| f(x), a, b, tol)
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// One 15-point Kronrod panel: (estimate, |Kronrod - Gauss|).
pub fn gk15_panel<T, F>(f: &mut F, a: T, b: T) -> (T, T)
where
    T: Real,
    F: FnMut(T) -> T,
{
    let c = (a + b) / T::lit(2.0);
    let hw = (b - a) / T::lit(2.0);
    let fc = f(c);
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for i in 0..7 {
        let dx = hw * T::lit(XGK[i]);
        let s = f(c - dx) + f(c + dx);
        kronrod = kronrod + s * T::lit(WGK[i]);
        if i % 2 == 1 {
            gauss = gauss + s * T::lit(WG[i / 2]);
        }
    }
    (kronrod * hw, ((kronrod - gauss) * hw).abs())
}

/// Globally adaptive Gauss–Kronrod (G7/K15) on a finite interval.
pub fn gauss_kronrod<T, F>(mut f: F, a: T, b: T, tol: Tolerance<T>) -> Result<T>
where
    T: Real,
    F: FnMut(T) -> T,
{
    const MAX_PANELS: usize = 2000;
    let (v, e) = gk15_panel(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let total: T = panels.iter().fold(T::zero(), |s, p| s + p.2);
        let err: T = panels.iter().fold(T::zero(), |s, p| s + p.3);
        if !total.is_finite() {
            return Err(Error::QuadratureFailure("non-finite Gauss-Kronrod sum".into()));
        }
        if tol.accepts(err, total) {
            return Ok(total);
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::QuadratureFailure(format!(
                "Gauss-Kronrod exhausted {MAX_PANELS} panels, error estimate {err}"
            )));
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, p)| if p.3 > best.1 { (i, p.3) } else { best });
        let (pa, pb, _, _) = panels.swap_remove(idx);
        let mid = (pa + pb) / T::lit(2.0);
        let (v1, e1) = gk15_panel(&mut f, pa, mid);
        let (v2, e2) = gk15_panel(&mut f, mid, pb);
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}
