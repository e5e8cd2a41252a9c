//! Small numeric helpers shared across modules.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::Stream;

pub const LN_2PI: f64 = 1.8378770664093453;

/// log(sum(exp(xs))) without overflow. Empty input or all -inf gives -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
}

/// Standard normal density.
pub fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function, accurate in both tails.
pub fn std_normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// Normal sample with the given mean and standard deviation.
pub fn normal_sample(mean: f64, sd: f64, rng: &mut Stream) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// Normal law truncated to [lower, upper], sampled by rejection against the
/// untruncated law. Callers keep the center inside the window, so the
/// acceptance rate stays above Phi(0) and the loop terminates quickly.
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
    log_z: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lower: f64, upper: f64) -> Self {
        let a = (lower - mean) / sd;
        let b = (upper - mean) / sd;
        let z = std_normal_cdf(b) - std_normal_cdf(a);
        TruncatedNormal {
            mean,
            sd,
            lower,
            upper,
            log_z: z.max(f64::MIN_POSITIVE).ln(),
        }
    }

    pub fn sample(&self, rng: &mut Stream) -> f64 {
        loop {
            let x = normal_sample(self.mean, self.sd, rng);
            if x >= self.lower && x <= self.upper {
                return x;
            }
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return f64::NEG_INFINITY;
        }
        normal_log_pdf(x, self.mean, self.sd * self.sd) - self.log_z
    }
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::rng;

    #[test]
    fn log_sum_exp_matches_direct() {
        let xs: [f64; 3] = [-1.0, 0.5, 2.0];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&xs), direct, epsilon = 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let xs = [1000.0, 1000.0];
        assert_relative_eq!(log_sum_exp(&xs), 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn cdf_reference_points() {
        assert_relative_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-15);
        // Phi(1.96) from tables.
        assert_relative_eq!(std_normal_cdf(1.96), 0.9750021048517795, epsilon = 1e-12);
        assert!(std_normal_cdf(-37.0) > 0.0);
        assert!(std_normal_cdf(-37.0) < 1e-290);
    }

    #[test]
    fn truncated_normal_density_normalizes() {
        // Numerical integral over the window should be 1.
        let t = TruncatedNormal::new(0.3, 0.7, -1.0, 1.0);
        let n = 20_000;
        let h = 2.0 / n as f64;
        let integral: f64 = (0..n)
            .map(|i| {
                let x = -1.0 + (i as f64 + 0.5) * h;
                t.log_pdf(x).exp() * h
            })
            .sum();
        assert_relative_eq!(integral, 1.0, epsilon = 1e-6);
        assert_eq!(t.log_pdf(1.5), f64::NEG_INFINITY);
    }

    #[test]
    fn truncated_normal_samples_stay_inside() {
        let t = TruncatedNormal::new(0.9, 0.5, -1.0, 1.0);
        let mut r = rng::root(11);
        for _ in 0..2_000 {
            let x = t.sample(&mut r);
            assert!((-1.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn mean_se_of_constant() {
        let (m, se) = mean_se(&[2.0; 50]);
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
    }
}
