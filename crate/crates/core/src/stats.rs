//! Standard normal helpers. Evaluated in `f64` and converted, so `f32`
//! callers get the same tail accuracy.

use statrs::function::erf::erfc;

use crate::scalar::Real;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn norm_pdf_f64(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn norm_cdf_f64(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn log_norm_cdf_f64(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf_f64(x).ln()
    } else {
        // Asymptotic expansion of the Mills ratio.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// Inverse of the standard normal CDF. Returns ±∞ at 0 and 1.
pub fn norm_quantile_f64(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

pub fn norm_pdf<T: Real>(x: T) -> T {
    T::lit(norm_pdf_f64(x.to_f64_lossy()))
}

pub fn norm_cdf<T: Real>(x: T) -> T {
    T::lit(norm_cdf_f64(x.to_f64_lossy()))
}

pub fn log_norm_cdf<T: Real>(x: T) -> T {
    T::lit(log_norm_cdf_f64(x.to_f64_lossy()))
}

pub fn norm_quantile<T: Real>(p: T) -> T {
    let q = norm_quantile_f64(p.to_f64_lossy());
    if q.is_infinite() {
        if q > 0.0 {
            T::infinity()
        } else {
            T::neg_infinity()
        }
    } else {
        T::lit(q)
    }
}

/// Probability that a normal with mean `mean` and spread `std` lies at or
/// below `limit`. A zero spread degenerates to a step.
pub fn prob_below<T: Real>(limit: T, mean: T, std: T) -> T {
    if limit == T::infinity() {
        return T::one();
    }
    if std > T::zero() {
        norm_cdf((limit - mean) / std)
    } else if mean < limit {
        T::one()
    } else if mean > limit {
        T::zero()
    } else {
        T::lit(0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cdf_reference_values() {
        assert_relative_eq!(norm_cdf_f64(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(norm_cdf_f64(1.5), 0.933_192_798_731_141_9, epsilon = 1e-10);
        assert_relative_eq!(norm_cdf_f64(-3.0), 0.001_349_898_031_630_094_6, max_relative = 1e-10);
    }

    #[test]
    fn log_cdf_continuous_across_tail_switch() {
        let a = log_norm_cdf_f64(-29.999_999);
        let b = log_norm_cdf_f64(-30.000_001);
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        assert!(log_norm_cdf_f64(-60.0).is_finite());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for p in [0.05, 0.5, 0.93, 0.999] {
            assert_relative_eq!(norm_cdf_f64(norm_quantile_f64(p)), p, epsilon = 1e-10);
        }
        assert_eq!(norm_quantile_f64(1.0), f64::INFINITY);
    }

    #[test]
    fn prob_below_degenerate_spread() {
        assert_eq!(prob_below(1.0, 0.5, 0.0), 1.0);
        assert_eq!(prob_below(1.0, 1.5, 0.0), 0.0);
        assert_eq!(prob_below(f64::INFINITY, 1e9, 1.0), 1.0);
    }
}
