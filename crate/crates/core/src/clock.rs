//! Affine local clock model `tau = alpha * t + phi`.

use crate::time::Seconds;
use thiserror::Error;

/// Default plausibility bound on `|alpha - 1|`.
pub const DEFAULT_SKEW_BOUND: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("clock skew must be positive and finite, got {0}")]
    NonPositiveSkew(f64),
    #[error("clock skew {alpha} deviates from 1 by more than {bound}")]
    ImplausibleSkew { alpha: f64, bound: f64 },
    #[error("clock offset must be finite")]
    NonFiniteOffset,
}

/// Skew and offset of one node's local time base relative to global time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockParams {
    alpha: f64,
    phi: Seconds,
}

impl ClockParams {
    /// Builds a clock, rejecting skews further than [`DEFAULT_SKEW_BOUND`] from 1.
    pub fn new(alpha: f64, phi: impl Into<Seconds>) -> Result<Self, ClockError> {
        Self::with_bound(alpha, phi, DEFAULT_SKEW_BOUND)
    }

    pub fn with_bound(alpha: f64, phi: impl Into<Seconds>, bound: f64) -> Result<Self, ClockError> {
        let phi = phi.into();
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(ClockError::NonPositiveSkew(alpha));
        }
        if (alpha - 1.0).abs() >= bound {
            return Err(ClockError::ImplausibleSkew { alpha, bound });
        }
        if !phi.is_finite() {
            return Err(ClockError::NonFiniteOffset);
        }
        Ok(ClockParams { alpha, phi })
    }

    /// The ideal clock (`alpha = 1`, `phi = 0`).
    pub fn ideal() -> Self {
        ClockParams {
            alpha: 1.0,
            phi: Seconds::ZERO,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn phi(&self) -> Seconds {
        self.phi
    }

    /// Local reading at global time `t`.
    pub fn local_from_global(&self, t: Seconds) -> Seconds {
        t * self.alpha + self.phi
    }

    /// Global time at which the local clock reads `tau`.
    pub fn global_from_local(&self, tau: Seconds) -> Seconds {
        (tau - self.phi) / self.alpha
    }
}

/// Ground-truth ratio `alpha_b / alpha_a`.
pub fn true_relative_skew(a: &ClockParams, b: &ClockParams) -> f64 {
    b.alpha / a.alpha
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: Seconds, b: f64, tol: f64) -> bool {
        (a.as_f64() - b).abs() <= tol
    }

    #[test]
    fn identity_clock() {
        let c = ClockParams::ideal();
        assert_eq!(c.local_from_global(Seconds::new(3.7)).as_f64(), 3.7);
        assert_eq!(c.global_from_local(Seconds::new(42.0)).as_f64(), 42.0);
    }

    #[test]
    fn forward_examples() {
        let c = ClockParams::new(1.0 + 1e-6, 5e-6).unwrap();
        assert!(close(
            c.local_from_global(Seconds::new(1e-3)),
            1.005001e-3,
            1e-18
        ));
        let c = ClockParams::new(0.999999, -2e-6).unwrap();
        assert_eq!(c.local_from_global(Seconds::ZERO).as_f64(), -2e-6);
    }

    #[test]
    fn inverse_example() {
        let c = ClockParams::new(1.0 + 1e-6, 5e-6).unwrap();
        assert!(close(
            c.global_from_local(Seconds::new(1.005001e-3)),
            1e-3,
            1e-18
        ));
    }

    #[test]
    fn relative_skew_examples() {
        let one = ClockParams::ideal();
        assert_eq!(true_relative_skew(&one, &one), 1.0);
        let b = ClockParams::new(1.0 + 2e-6, 0.0).unwrap();
        assert_eq!(true_relative_skew(&one, &b), 1.0 + 2e-6);
        let a = ClockParams::new(1.0 + 1e-6, 0.0).unwrap();
        let b = ClockParams::new(1.0 - 1e-6, 0.0).unwrap();
        assert_eq!(true_relative_skew(&a, &b), (1.0 - 1e-6) / (1.0 + 1e-6));
    }

    #[test]
    fn rejects_bad_skew() {
        assert!(matches!(
            ClockParams::new(0.0, 0.0),
            Err(ClockError::NonPositiveSkew(_))
        ));
        assert!(matches!(
            ClockParams::new(-1.0, 0.0),
            Err(ClockError::NonPositiveSkew(_))
        ));
        assert!(matches!(
            ClockParams::new(1.01, 0.0),
            Err(ClockError::ImplausibleSkew { .. })
        ));
        assert!(ClockParams::with_bound(1.01, 0.0, 0.1).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip(alpha in 0.9995f64..1.0005, phi in -1.0f64..1.0, t in -1e4f64..1e4) {
            let c = ClockParams::new(alpha, phi).unwrap();
            let t = Seconds::new(t);
            let back = c.global_from_local(c.local_from_global(t));
            prop_assert!((back - t).abs().as_f64() < 1e-15 * t.as_f64().abs().max(1.0));
        }

        #[test]
        fn strictly_increasing(alpha in 0.9995f64..1.0005, phi in -1.0f64..1.0,
                               t in -1e3f64..1e3, dt in 1e-12f64..1.0) {
            let c = ClockParams::new(alpha, phi).unwrap();
            let t0 = Seconds::new(t);
            let t1 = t0 + dt;
            prop_assert!(c.local_from_global(t1) > c.local_from_global(t0));
        }

        #[test]
        fn a_to_b_is_affine_with_skew_ratio(
            aa in 0.9995f64..1.0005, pa in -1.0f64..1.0,
            ab in 0.9995f64..1.0005, pb in -1.0f64..1.0,
            tau1 in 0.0f64..100.0, tau2 in 0.0f64..100.0,
        ) {
            let a = ClockParams::new(aa, pa).unwrap();
            let b = ClockParams::new(ab, pb).unwrap();
            let to_b = |tau: f64| b.local_from_global(a.global_from_local(Seconds::new(tau)));
            let slope = (to_b(tau2) - to_b(tau1)).as_f64() / (tau2 - tau1);
            prop_assume!((tau2 - tau1).abs() > 1e-3);
            let expect = true_relative_skew(&a, &b);
            prop_assert!(((slope - expect) / expect).abs() < 1e-12);
        }
    }
}
