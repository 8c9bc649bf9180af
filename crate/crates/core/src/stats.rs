use serde::Serialize;

/// Point estimate with its uncertainty and provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    /// Standard error; zero for exact evaluations.
    pub se: f64,
    pub replicates: usize,
    pub seed: u64,
    /// True when the value comes from an exact (DP or enumeration) route.
    pub exact: bool,
    /// Natural log of the estimate, kept separately because exact values
    /// routinely underflow `f64`.
    pub ln_estimate: f64,
}

impl EstimateReport {
    pub fn exact_from_ln(ln_value: f64) -> Self {
        EstimateReport {
            estimate: ln_value.exp(),
            se: 0.0,
            replicates: 0,
            seed: 0,
            exact: true,
            ln_estimate: ln_value,
        }
    }

    pub fn exact(value: f64) -> Self {
        EstimateReport {
            estimate: value,
            se: 0.0,
            replicates: 0,
            seed: 0,
            exact: true,
            ln_estimate: value.ln(),
        }
    }

    /// Mean and standard error of i.i.d. samples, summed in index order.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let (mean, se) = mean_and_se(samples);
        EstimateReport {
            estimate: mean,
            se,
            replicates: samples.len(),
            seed,
            exact: false,
            ln_estimate: mean.ln(),
        }
    }

    /// `|a - b| <= k * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &EstimateReport, k: f64) -> bool {
        let combined = (self.se * self.se + other.se * other.se).sqrt();
        (self.estimate - other.estimate).abs() <= k * combined
    }
}

pub fn mean_and_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    let var = ss / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Sample mean and unbiased sample variance.
pub fn mean_and_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Standard error of the unbiased sample variance from the exact identity
/// `Var(s^2) = (μ4 - σ^4) / n + 2σ^4 / (n(n-1))` with plug-in moments. The
/// second term dominates for two-point laws, where `μ4 = σ^4`.
pub fn variance_se(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let (mean, var) = mean_and_variance(samples);
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let s4 = var * var;
    ((m4 - s4).max(0.0) / n + 2.0 * s4 / (n * (n - 1.0))).sqrt()
}

/// Lower empirical quantile: the `ceil(q n)`-th smallest value (first for
/// `q = 0`). Non-finite values sort last.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let idx = ((q * n as f64).ceil() as usize).saturating_sub(1).min(n - 1);
    v[idx]
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function `P(Z > x)`, accurate in the tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let lo = f - i as f64 / n;
            let hi = (i + 1) as f64 / n - f;
            lo.max(hi)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_edges() {
        let v = [3.0, 1.0, 2.0, f64::INFINITY];
        assert_eq!(empirical_quantile(&v, 0.0), 1.0);
        assert_eq!(empirical_quantile(&v, 0.5), 2.0);
        assert_eq!(empirical_quantile(&v, 1.0), f64::INFINITY);
        assert_eq!(empirical_quantile(&[4.5], 0.0), 4.5);
    }

    #[test]
    fn mean_and_se_of_constant_sample() {
        let (m, se) = mean_and_se(&[2.0; 10]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
        assert!((normal_sf(10.0) - 7.619_853_024_160_527e-24).abs() < 1e-35);
    }
}
