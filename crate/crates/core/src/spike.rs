//! Spike activations, their Gaussian surrogate derivatives, and the binary
//! cell-state threshold.

use crate::error::{Error, Result};
use crate::numerics::{gaussian_pdf, gaussian_pdf_unchecked};

/// Thresholds and surrogate widths for the two spike activations.
///
/// `sigma1` drives the forget, input and output gates, `sigma2` drives the
/// modulated input `g`. `gamma2` is the backward factor of the cell threshold
/// when the pre-threshold cell sum is 2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub gamma2: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            theta1: 0.1,
            theta2: 0.1,
            alpha1: 4.0,
            alpha2: 0.3,
            gamma2: 0.5,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite, got {v}")));
            }
        }
        if !(self.gamma2 > 0.0 && self.gamma2 <= 1.0) {
            return Err(Error::Domain(format!(
                "gamma2 must lie in (0, 1], got {}",
                self.gamma2
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn sigma1(&self, u: f64) -> f64 {
        spike_sigma(u, self.theta1)
    }

    #[inline]
    pub fn sigma2(&self, u: f64) -> f64 {
        spike_sigma(u, self.theta2)
    }

    /// σ₁′ at membrane potential `u`. Assumes a validated config.
    #[inline]
    pub fn sigma1_prime(&self, u: f64) -> f64 {
        gaussian_pdf_unchecked(u.abs() - self.theta1.abs(), self.alpha1)
    }

    #[inline]
    pub fn sigma2_prime(&self, u: f64) -> f64 {
        gaussian_pdf_unchecked(u.abs() - self.theta2.abs(), self.alpha2)
    }
}

/// 1 when `u` strictly exceeds `theta`, else 0.
#[inline]
pub fn spike_sigma(u: f64, theta: f64) -> f64 {
    if u > theta {
        1.0
    } else {
        0.0
    }
}

/// Gaussian surrogate for the spike derivative, evaluated at `|u| - |theta|`.
pub fn surrogate_deriv(u: f64, theta: f64, alpha: f64) -> Result<f64> {
    gaussian_pdf(u.abs() - theta.abs(), alpha)
}

fn check_cell_sum(v: u8) -> Result<()> {
    if v > 2 {
        return Err(Error::Invariant(format!(
            "pre-threshold cell value {v} outside {{0, 1, 2}}"
        )));
    }
    Ok(())
}

/// Maps the cell sum `f⊙c + i⊙g ∈ {0,1,2}` back to a binary state.
pub fn cell_threshold(v: u8) -> Result<u8> {
    check_cell_sum(v)?;
    Ok(v.min(1))
}

/// Backward factor of [`cell_threshold`]: 1 on {0, 1}, `gamma2` on 2.
pub fn cell_threshold_grad(v: u8, cfg: &SurrogateConfig) -> Result<f64> {
    check_cell_sum(v)?;
    Ok(if v == 2 { cfg.gamma2 } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    #[test]
    fn strict_threshold() {
        assert_eq!(spike_sigma(0.5, 0.1), 1.0);
        assert_eq!(spike_sigma(0.0, 0.1), 0.0);
        assert_eq!(spike_sigma(0.1, 0.1), 0.0);
    }

    #[test]
    fn surrogate_closed_forms() {
        let peak4 = surrogate_deriv(0.1, 0.1, 4.0).unwrap();
        assert!((peak4 - 0.099_735_570_1).abs() < 1e-10);
        let peak03 = surrogate_deriv(-0.1, 0.1, 0.3).unwrap();
        assert!((peak03 - 1.329_807_601_3).abs() < 1e-9);
        let off = surrogate_deriv(1.2, 0.1, 4.0).unwrap();
        assert_eq!(off, gaussian_pdf(1.1, 4.0).unwrap());
        assert!(surrogate_deriv(1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn surrogate_peaks_at_threshold() {
        let (theta, alpha) = (0.1, 0.3);
        let grid: Vec<f64> = (0..=4000).map(|k| -2.0 + k as f64 * 1e-3).collect();
        let best = grid
            .iter()
            .copied()
            .filter(|u| *u >= 0.0)
            .max_by(|a, b| {
                surrogate_deriv(*a, theta, alpha)
                    .unwrap()
                    .total_cmp(&surrogate_deriv(*b, theta, alpha).unwrap())
            })
            .unwrap();
        assert!((best - theta).abs() < 1e-9, "argmax at {best}");
    }

    #[test]
    fn cell_threshold_table() {
        assert_eq!(cell_threshold(0).unwrap(), 0);
        assert_eq!(cell_threshold(1).unwrap(), 1);
        assert_eq!(cell_threshold(2).unwrap(), 1);
        assert!(matches!(cell_threshold(3), Err(Error::Invariant(_))));

        let cfg = SurrogateConfig::default();
        assert_eq!(cell_threshold_grad(0, &cfg).unwrap(), 1.0);
        assert_eq!(cell_threshold_grad(1, &cfg).unwrap(), 1.0);
        assert_eq!(cell_threshold_grad(2, &cfg).unwrap(), 0.5);
        assert!(cell_threshold_grad(7, &cfg).is_err());
    }

    #[test]
    fn threshold_idempotent_on_binary() {
        for v in [0u8, 1] {
            assert_eq!(cell_threshold(cell_threshold(v).unwrap()).unwrap(), cell_threshold(v).unwrap());
        }
    }

    #[test]
    fn spike_output_is_binary_under_fuzz() {
        let mut rng = RngStream::new(5);
        for _ in 0..1_000_000 {
            let u = (rng.uniform() - 0.5) * 10f64.powi((rng.below(12) as i32) - 4);
            let s = spike_sigma(u, 0.1);
            assert!(s == 0.0 || s == 1.0);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SurrogateConfig::default().validate().is_ok());
        let bad = SurrogateConfig { gamma2: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SurrogateConfig { gamma2: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SurrogateConfig { alpha2: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn surrogate_is_even(u in -100.0f64..100.0, theta in -1.0f64..1.0, alpha in 0.05f64..8.0) {
            prop_assert_eq!(
                surrogate_deriv(u, theta, alpha).unwrap(),
                surrogate_deriv(-u, theta, alpha).unwrap()
            );
        }

        #[test]
        fn surrogate_matches_config_helpers(u in -10.0f64..10.0) {
            let cfg = SurrogateConfig::default();
            prop_assert_eq!(cfg.sigma1_prime(u), surrogate_deriv(u, cfg.theta1, cfg.alpha1).unwrap());
            prop_assert_eq!(cfg.sigma2_prime(u), surrogate_deriv(u, cfg.theta2, cfg.alpha2).unwrap());
        }
    }
}
