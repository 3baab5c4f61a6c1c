//! Beta-binomial posterior numerics.
//!
//! Every posterior quantity in the design is a difference of regularized
//! incomplete beta functions `I_x(y + 1, n - y + 1)`. Parameters are small
//! integers plus one, so a single continued-fraction branch is enough; the
//! supported range is `n <= 1_000_000`.

use serde::{Deserialize, Serialize};

use crate::error::{KeyboardError, Result};

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 100_000;

/// Patients treated (`n`) and DLTs observed (`y`) at one dose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DoseData {
    pub n: u32,
    pub y: u32,
}

impl DoseData {
    pub fn new(n: u32, y: u32) -> Result<Self> {
        if y > n {
            return Err(KeyboardError::domain(format!("{y} DLTs among {n} patients")));
        }
        Ok(DoseData { n, y })
    }

    /// Observed DLT rate, `None` before any patient is treated.
    pub fn rate(&self) -> Option<f64> {
        (self.n > 0).then(|| f64::from(self.y) / f64::from(self.n))
    }

    pub fn add_cohort(&mut self, size: u32, dlts: u32) {
        self.n += size;
        self.y += dlts;
    }

    /// Shape parameters of the posterior under a uniform prior.
    pub fn posterior_shape(&self) -> (f64, f64) {
        (f64::from(self.y) + 1.0, f64::from(self.n - self.y) + 1.0)
    }
}

/// Regularized incomplete beta function `I_x(a, b)`, i.e. the CDF of
/// `Beta(a, b)` evaluated at `x`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(KeyboardError::domain(format!("x = {x} outside [0, 1]")));
    }
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(KeyboardError::domain(format!(
            "shape parameters must be positive, got a = {a}, b = {b}"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }

    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let value = if x > a / (a + b) {
        1.0 - ln_front.exp() * continued_fraction(b, a, 1.0 - x)? / b
    } else {
        ln_front.exp() * continued_fraction(a, b, x)? / a
    };
    Ok(value.clamp(0.0, 1.0))
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Modified Lentz evaluation of the continued fraction for `I_x(a, b)`.
fn continued_fraction(a: f64, b: f64, x: f64) -> Result<f64> {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;

    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_EPS {
            return Ok(h);
        }
    }
    Err(KeyboardError::NonConvergence {
        what: "incomplete beta continued fraction",
        iterations: CF_MAX_ITER,
    })
}

/// Posterior CDF of the DLT probability at `x` under a uniform prior.
pub fn posterior_cdf(x: f64, data: DoseData) -> Result<f64> {
    let (a, b) = data.posterior_shape();
    regularized_incomplete_beta(x, a, b)
}

/// Posterior upper tail `Pr(p > x | data)`, accurate when it is tiny.
pub fn posterior_sf(x: f64, data: DoseData) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(KeyboardError::domain(format!("x = {x} outside [0, 1]")));
    }
    let (a, b) = data.posterior_shape();
    regularized_incomplete_beta(1.0 - x, b, a)
}

/// Posterior mean `(y + 1) / (n + 2)`.
pub fn posterior_mean(data: DoseData) -> f64 {
    let (a, b) = data.posterior_shape();
    a / (a + b)
}

/// `Pr(lo < p < hi | data)` under the `Beta(y + 1, n - y + 1)` posterior.
///
/// Intervals above the posterior mean are differenced in the upper tail so
/// that small probabilities keep their relative precision.
pub fn posterior_interval_prob(lo: f64, hi: f64, data: DoseData) -> Result<f64> {
    if !(lo < hi) {
        return Err(KeyboardError::domain(format!("empty interval ({lo}, {hi})")));
    }
    let diff = if lo >= posterior_mean(data) {
        posterior_sf(lo, data)? - posterior_sf(hi, data)?
    } else {
        posterior_cdf(hi, data)? - posterior_cdf(lo, data)?
    };
    Ok(diff.clamp(0.0, 1.0))
}

/// `Pr(p > phi | data)`, the overdose probability used for elimination.
pub fn posterior_exceed_prob(phi: f64, data: DoseData) -> Result<f64> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(KeyboardError::domain(format!("phi = {phi} outside (0, 1)")));
    }
    posterior_sf(phi, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn closed_forms() {
        close(regularized_incomplete_beta(0.4, 1.0, 1.0).unwrap(), 0.4, 1e-12);
        close(regularized_incomplete_beta(0.5, 2.0, 2.0).unwrap(), 0.5, 1e-12);
        close(regularized_incomplete_beta(0.3, 4.0, 1.0).unwrap(), 0.0081, 1e-12);
        // I_x(1, b) = 1 - (1 - x)^b
        close(
            regularized_incomplete_beta(0.3, 1.0, 4.0).unwrap(),
            1.0 - 0.7f64.powi(4),
            1e-12,
        );
    }

    #[test]
    fn endpoints_and_domain() {
        assert_eq!(regularized_incomplete_beta(0.0, 3.0, 2.0).unwrap(), 0.0);
        assert_eq!(regularized_incomplete_beta(1.0, 3.0, 2.0).unwrap(), 1.0);
        assert!(regularized_incomplete_beta(-0.1, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(1.1, 1.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 0.0, 1.0).is_err());
        assert!(regularized_incomplete_beta(0.5, 1.0, -2.0).is_err());
        assert!(regularized_incomplete_beta(f64::NAN, 1.0, 1.0).is_err());
    }

    #[test]
    fn interval_examples() {
        let none = DoseData::default();
        close(posterior_interval_prob(0.15, 0.25, none).unwrap(), 0.10, 1e-12);
        close(
            posterior_interval_prob(0.0, 1.0, DoseData::new(7, 3).unwrap()).unwrap(),
            1.0,
            1e-12,
        );
        assert!(posterior_interval_prob(0.3, 0.3, none).is_err());
        assert!(posterior_interval_prob(0.4, 0.3, none).is_err());
    }

    #[test]
    fn exceed_examples() {
        close(
            posterior_exceed_prob(0.3, DoseData::new(3, 3).unwrap()).unwrap(),
            1.0 - 0.3f64.powi(4),
            1e-12,
        );
        close(
            posterior_exceed_prob(0.3, DoseData::new(3, 0).unwrap()).unwrap(),
            0.7f64.powi(4),
            1e-12,
        );
        close(posterior_exceed_prob(0.5, DoseData::default()).unwrap(), 0.5, 1e-12);
        assert!(posterior_exceed_prob(0.0, DoseData::default()).is_err());
        assert!(posterior_exceed_prob(1.0, DoseData::default()).is_err());
    }

    #[test]
    fn dose_data_rejects_excess_dlts() {
        assert!(DoseData::new(2, 3).is_err());
        assert_eq!(DoseData::new(4, 1).unwrap().rate(), Some(0.25));
        assert_eq!(DoseData::default().rate(), None);
    }

    #[test]
    fn large_counts_converge() {
        // Normal approximation: Beta(3001, 7001) has mean ~0.3 and sd ~0.0046.
        let p = posterior_cdf(0.3, DoseData::new(10_000, 3_000).unwrap()).unwrap();
        assert!((p - 0.5).abs() < 0.05, "{p}");
        let p = posterior_cdf(0.5, DoseData::new(1_000_000, 300_000).unwrap()).unwrap();
        close(p, 1.0, 1e-12);
    }
}
