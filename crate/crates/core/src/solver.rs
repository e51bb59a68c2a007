//! Closed-form two-way time transfer estimator.
//!
//! One measurement holds A's transmit time, B's receive and reply times and
//! A's receive time, each in the local clock of the node that took it. Two
//! successive measurements give the relative skew `alpha_B / alpha_A`; each
//! measurement then gives the time of flight in A's clock domain and the
//! offset `tau_B - tau_A` at the instant of A's transmission.
//!
//! All arithmetic runs in double-double [`Seconds`].

use crate::clock::ClockParams;
use crate::time::Seconds;
use log::warn;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("measurement {index}: {reason}")]
    InvalidMeasurement { index: u64, reason: String },
    #[error("measurements {index} and {next}: A-side times coincide, skew is undefined")]
    DegenerateSkew { index: u64, next: u64 },
    #[error("measurements {index} and {next} are not consecutive")]
    NonConsecutive { index: u64, next: u64 },
    #[error("measurement {index}: time of flight {tof:e} s is negative beyond tolerance")]
    NegativeTof { index: u64, tof: f64 },
    #[error("skew ratio must be positive and finite, got {0}")]
    BadSkew(f64),
    #[error("need at least two measurements, got {0}")]
    InsufficientData(usize),
}

/// The four timestamps of one exchange.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwttMeasurement {
    pub tau_a_tx: Seconds,
    pub tau_b_rx: Seconds,
    pub tau_b_tx: Seconds,
    pub tau_a_rx: Seconds,
    pub index: u64,
}

impl TwttMeasurement {
    pub fn new(
        tau_a_tx: impl Into<Seconds>,
        tau_b_rx: impl Into<Seconds>,
        tau_b_tx: impl Into<Seconds>,
        tau_a_rx: impl Into<Seconds>,
        index: u64,
    ) -> Result<Self, SolverError> {
        let m = TwttMeasurement {
            tau_a_tx: tau_a_tx.into(),
            tau_b_rx: tau_b_rx.into(),
            tau_b_tx: tau_b_tx.into(),
            tau_a_rx: tau_a_rx.into(),
            index,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |reason: &str| {
            Err(SolverError::InvalidMeasurement {
                index: self.index,
                reason: reason.into(),
            })
        };
        let all = [self.tau_a_tx, self.tau_b_rx, self.tau_b_tx, self.tau_a_rx];
        if !all.iter().all(|t| t.is_finite()) {
            return bad("non-finite timestamp");
        }
        if self.tau_b_tx <= self.tau_b_rx {
            return bad("B replies before it receives");
        }
        if self.tau_a_rx <= self.tau_a_tx {
            return bad("A receives before it transmits");
        }
        Ok(())
    }

    /// Translates every timestamp of both nodes by `shift`.
    pub fn shifted(&self, shift: Seconds) -> TwttMeasurement {
        TwttMeasurement {
            tau_a_tx: self.tau_a_tx + shift,
            tau_b_rx: self.tau_b_rx + shift,
            tau_b_tx: self.tau_b_tx + shift,
            tau_a_rx: self.tau_a_rx + shift,
            index: self.index,
        }
    }
}

/// `((tau_b_rx + tau_b_tx) - (tau_a_rx + tau_a_tx)) / 2`; exact for equal
/// skews.
pub fn initial_offset(m: &TwttMeasurement) -> Seconds {
    ((m.tau_b_rx + m.tau_b_tx) - (m.tau_a_rx + m.tau_a_tx)) * 0.5
}

/// `alpha_B / alpha_A` from two successive measurements.
pub fn skew_ratio(m_n: &TwttMeasurement, m_n1: &TwttMeasurement) -> Result<f64, SolverError> {
    let num = (initial_offset(m_n1) - initial_offset(m_n)) * 2.0;
    let den = (m_n1.tau_a_tx - m_n.tau_a_tx) + (m_n1.tau_a_rx - m_n.tau_a_rx);
    // relative to the timestamp magnitudes the denominator must exceed the
    // double-double resolution by a wide margin
    let scale = [m_n.tau_a_tx, m_n1.tau_a_tx, m_n.tau_a_rx, m_n1.tau_a_rx]
        .iter()
        .map(|t| t.abs().as_f64())
        .fold(0.0, f64::max);
    if den.abs().as_f64() <= scale * 1e-28 || den.abs().as_f64() == 0.0 {
        return Err(SolverError::DegenerateSkew {
            index: m_n.index,
            next: m_n1.index,
        });
    }
    Ok((num.div_dd(den) + 1.0).as_f64())
}

/// `(tau_a_rx - tau_a_tx) / 2 - skew (tau_b_tx - tau_b_rx) / 2`, in A's
/// clock domain.
pub fn tof(m: &TwttMeasurement, skew: f64) -> Seconds {
    (m.tau_a_rx - m.tau_a_tx) * 0.5 - (m.tau_b_tx - m.tau_b_rx) * (skew * 0.5)
}

/// `(tau_b_rx + tau_b_tx) / 2 - (tau_a_tx + skew (tau_a_rx - tau_a_tx) / 2)`.
///
/// With the exact skew this equals `tau_B(t) - tau_A(t)` at the global
/// instant `t` of A's transmission.
pub fn offset(m: &TwttMeasurement, skew: f64) -> Seconds {
    (m.tau_b_rx + m.tau_b_tx) * 0.5 - (m.tau_a_tx + (m.tau_a_rx - m.tau_a_tx) * (skew * 0.5))
}

/// Estimates for one measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwttSolution {
    pub index: u64,
    /// `alpha_B / alpha_A`, after smoothing.
    pub skew_ratio: f64,
    /// Time of flight in A's clock domain.
    pub tof: Seconds,
    pub offset: Seconds,
    /// Skew-free offset estimate, kept for comparison.
    pub initial_offset: Seconds,
    /// Set when a small negative ToF was clamped to zero.
    pub tof_clamped: bool,
}

impl TwttSolution {
    pub fn distance_m(&self, c0: f64) -> f64 {
        self.tof.as_f64() * c0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Negative ToF estimates down to `-tolerance` are clamped to zero.
    pub negative_tof_tolerance: Seconds,
    /// Trailing sliding-mean length over pairwise skews; 1 disables it.
    pub skew_window: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            negative_tof_tolerance: Seconds::ZERO,
            skew_window: 1,
        }
    }
}

impl SolverConfig {
    /// Tolerance of three standard deviations of the ToA noise.
    pub fn with_toa_sigma(sigma: f64) -> Self {
        SolverConfig {
            negative_tof_tolerance: Seconds::new(3.0 * sigma),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TwttSolver {
    config: SolverConfig,
}

impl TwttSolver {
    pub fn new(config: SolverConfig) -> Self {
        TwttSolver { config }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Applies ToF and offset to one measurement with a known skew.
    pub fn solve_with_skew(
        &self,
        m: &TwttMeasurement,
        skew: f64,
    ) -> Result<TwttSolution, SolverError> {
        if !(skew.is_finite() && skew > 0.0) {
            return Err(SolverError::BadSkew(skew));
        }
        m.validate()?;
        let mut t = tof(m, skew);
        let mut clamped = false;
        if t < Seconds::ZERO {
            if -t > self.config.negative_tof_tolerance {
                return Err(SolverError::NegativeTof {
                    index: m.index,
                    tof: t.as_f64(),
                });
            }
            warn!(
                "measurement {}: clamping ToF {:e} s to zero",
                m.index,
                t.as_f64()
            );
            t = Seconds::ZERO;
            clamped = true;
        }
        Ok(TwttSolution {
            index: m.index,
            skew_ratio: skew,
            tof: t,
            offset: offset(m, skew),
            initial_offset: initial_offset(m),
            tof_clamped: clamped,
        })
    }

    /// Solution for `m_n` using the skew from `(m_n, m_n1)`.
    pub fn solve_pair(
        &self,
        m_n: &TwttMeasurement,
        m_n1: &TwttMeasurement,
    ) -> Result<TwttSolution, SolverError> {
        let skew = self.pair_skew(m_n, m_n1)?;
        self.solve_with_skew(m_n, skew)
    }

    fn pair_skew(&self, m_n: &TwttMeasurement, m_n1: &TwttMeasurement) -> Result<f64, SolverError> {
        if m_n1.index != m_n.index.wrapping_add(1) {
            return Err(SolverError::NonConsecutive {
                index: m_n.index,
                next: m_n1.index,
            });
        }
        m_n.validate()?;
        m_n1.validate()?;
        let skew = skew_ratio(m_n, m_n1)?;
        if !(skew.is_finite() && skew > 0.0) {
            return Err(SolverError::BadSkew(skew));
        }
        Ok(skew)
    }

    /// One solution per measurement. Measurement `i` uses the skew of pair
    /// `(i, i + 1)`; the last one reuses the final pair.
    pub fn solve_sequence(&self, ms: &[TwttMeasurement]) -> Result<Vec<TwttSolution>, SolverError> {
        if ms.len() < 2 {
            return Err(SolverError::InsufficientData(ms.len()));
        }
        let raw: Vec<f64> = ms
            .windows(2)
            .map(|w| self.pair_skew(&w[0], &w[1]))
            .collect::<Result<_, _>>()?;
        let window = self.config.skew_window.max(1);
        let smoothed: Vec<f64> = (0..raw.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(window);
                raw[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
            })
            .collect();
        ms.iter()
            .enumerate()
            .map(|(i, m)| self.solve_with_skew(m, smoothed[i.min(smoothed.len() - 1)]))
            .collect()
    }
}

/// Noiseless timestamps of one exchange from the forward clock model.
///
/// A transmits at global `t_a_tx`; B receives after `tof`, replies
/// `turnaround_b` later on its own clock and A receives after another
/// `tof`.
pub fn forward_measurement(
    clk_a: &ClockParams,
    clk_b: &ClockParams,
    t_a_tx: Seconds,
    tof: Seconds,
    turnaround_b: Seconds,
    index: u64,
) -> TwttMeasurement {
    let tau_a_tx = clk_a.local_from_global(t_a_tx);
    let tau_b_rx = clk_b.local_from_global(t_a_tx + tof);
    let tau_b_tx = tau_b_rx + turnaround_b;
    let t_b_tx = clk_b.global_from_local(tau_b_tx);
    let tau_a_rx = clk_a.local_from_global(t_b_tx + tof);
    TwttMeasurement {
        tau_a_tx,
        tau_b_rx,
        tau_b_tx,
        tau_a_rx,
        index,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(a: f64, b: f64, c: f64, d: f64) -> TwttMeasurement {
        TwttMeasurement::new(a, b, c, d, 0).unwrap()
    }

    fn clocks(aa: f64, pa: f64, ab: f64, pb: f64) -> (ClockParams, ClockParams) {
        (
            ClockParams::new(aa, pa).unwrap(),
            ClockParams::new(ab, pb).unwrap(),
        )
    }

    fn pair(
        a: &ClockParams,
        b: &ClockParams,
        tof_s: f64,
        turnaround: f64,
        interval: f64,
    ) -> (TwttMeasurement, TwttMeasurement) {
        let t0 = Seconds::new(0.3);
        let t = Seconds::new(tof_s);
        let d = Seconds::new(turnaround);
        (
            forward_measurement(a, b, t0, t, d, 0),
            forward_measurement(a, b, t0 + interval, t, d, 1),
        )
    }

    #[test]
    fn initial_offset_examples() {
        assert_eq!(initial_offset(&m(0.0, 1.0, 2.0, 3.0)).as_f64(), 0.0);
        assert_eq!(initial_offset(&m(0.0, 6.0, 7.0, 3.0)).as_f64(), 5.0);
    }

    #[test]
    fn initial_offset_exact_for_equal_skews() {
        let (a, b) = clocks(1.0, 0.0, 1.0, 5e-6);
        for tof_s in [0.0, 1e-9, 3.3e-6, 1e-3] {
            let (m0, _) = pair(&a, &b, tof_s, 1e-4, 1e-3);
            let err = (initial_offset(&m0) - 5e-6).abs().as_f64();
            assert!(err < 1e-21, "tof {tof_s}: {err}");
        }
    }

    #[test]
    fn skew_for_equal_clocks() {
        let (a, b) = clocks(1.0 + 3e-6, 0.1, 1.0 + 3e-6, -0.2);
        let (m0, m1) = pair(&a, &b, 1e-6, 1e-4, 1e-3);
        assert!((skew_ratio(&m0, &m1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn skew_recovery() {
        let (a, b) = clocks(1.0, 0.0, 1.0 + 1e-6, 5e-6);
        let (m0, m1) = pair(&a, &b, 1e-6, 1e-4, 1e-3);
        let r = skew_ratio(&m0, &m1).unwrap();
        let truth = crate::clock::true_relative_skew(&a, &b);
        assert!((r - truth).abs() < 1e-12, "residual {:e}", r - truth);
    }

    #[test]
    fn swapped_order_flips_skew_deviation() {
        let (a, b) = clocks(1.0, 0.0, 1.0 + 1e-6, 5e-6);
        let (m0, m1) = pair(&a, &b, 1e-6, 1e-4, 1e-3);
        let fwd = skew_ratio(&m0, &m1).unwrap() - 1.0;
        let back = skew_ratio(&m1, &m0).unwrap() - 1.0;
        // swapping negates numerator and denominator alike
        assert!((fwd - back).abs() < 1e-15);
        let r = 1.0 / skew_ratio(&m0, &m1).unwrap() - 1.0;
        assert!((r + fwd).abs() < 1e-11);
    }

    #[test]
    fn degenerate_denominator() {
        let m0 = m(0.0, 1.0, 2.0, 3.0);
        let mut m1 = m0;
        m1.index = 1;
        assert!(matches!(
            skew_ratio(&m0, &m1),
            Err(SolverError::DegenerateSkew { .. })
        ));
    }

    #[test]
    fn tof_examples() {
        assert_eq!(tof(&m(0.0, 1.0, 2.0, 3.0), 1.0).as_f64(), 1.0);
        let zero_turn = TwttMeasurement {
            tau_a_tx: Seconds::new(1.0),
            tau_b_rx: Seconds::new(4.0),
            tau_b_tx: Seconds::new(4.0),
            tau_a_rx: Seconds::new(1.5),
            index: 0,
        };
        assert_eq!(tof(&zero_turn, 1.0).as_f64(), 0.25);
    }

    #[test]
    fn tof_with_skew_close_to_truth() {
        let (a, b) = clocks(1.0, 0.0, 1.0 + 1e-6, 5e-6);
        // short turnaround keeps the printed-formula residual small
        let (m0, m1) = pair(&a, &b, 1e-6, 1e-5, 1e-3);
        let r = skew_ratio(&m0, &m1).unwrap();
        let err = (tof(&m0, r) - 1e-6).abs().as_f64();
        assert!(err < 1e-10, "error {err:e}");
    }

    #[test]
    fn tof_residual_matches_closed_form() {
        // with the exact skew the printed formula gives
        // alpha_A T + D/2 (alpha_A/alpha_B - alpha_B/alpha_A)
        let (aa, ab) = (1.0 + 2e-6, 1.0 - 3e-6);
        let (a, b) = clocks(aa, 0.4, ab, -0.1);
        let (t, d) = (2e-6, 1.3e-4);
        let (m0, m1) = pair(&a, &b, t, d, 1e-3);
        let r = skew_ratio(&m0, &m1).unwrap();
        let expect = aa * t + d / 2.0 * (aa / ab - ab / aa);
        assert!((tof(&m0, r).as_f64() - expect).abs() < 1e-18);
    }

    #[test]
    fn offset_examples() {
        assert_eq!(offset(&m(0.0, 1.0, 2.0, 3.0), 1.0).as_f64(), 0.0);
        let (a, b) = clocks(1.0, 0.0, 1.0, 5e-6);
        let (m0, _) = pair(&a, &b, 1e-6, 1e-4, 1e-3);
        assert!((offset(&m0, 1.0) - 5e-6).abs().as_f64() < 1e-21);
        assert_eq!(offset(&m0, 1.0), initial_offset(&m0));
    }

    #[test]
    fn offset_beats_initial_offset_with_unequal_skews() {
        let (a, b) = clocks(1.0, 0.0, 1.0 + 1e-6, 5e-6);
        let (m0, m1) = pair(&a, &b, 1e-6, 1e-4, 1e-3);
        let r = skew_ratio(&m0, &m1).unwrap();
        let t = Seconds::new(0.3);
        let truth = b.local_from_global(t) - a.local_from_global(t);
        let e5 = (offset(&m0, r) - truth).abs().as_f64();
        let e2 = (initial_offset(&m0) - truth).abs().as_f64();
        assert!(e5 < e2, "corrected {e5:e}, initial {e2:e}");
        assert!(e5 < 1e-18);
    }

    #[test]
    fn sequence_examples() {
        let (a, b) = clocks(1.0, 0.0, 1.0 + 1e-6, 5e-6);
        let (m0, m1) = pair(&a, &b, 1e-6, 1e-5, 1e-3);
        let sol = TwttSolver::default().solve_sequence(&[m0, m1]).unwrap();
        assert_eq!(sol.len(), 2);
        assert!((sol[0].skew_ratio - (1.0 + 1e-6)).abs() < 1e-12);
        assert!((sol[1].tof.as_f64() - 1e-6).abs() < 1e-10);

        let c = ClockParams::new(1.0 - 4e-6, 0.2).unwrap();
        let ms: Vec<_> = (0..10)
            .map(|i| {
                forward_measurement(
                    &c,
                    &c,
                    Seconds::new(1.0 + i as f64 * 1e-3),
                    Seconds::new(5e-9),
                    Seconds::new(1e-4),
                    i,
                )
            })
            .collect();
        for s in TwttSolver::default().solve_sequence(&ms).unwrap() {
            assert!((s.skew_ratio - 1.0).abs() < 1e-12);
        }
        assert_eq!(
            TwttSolver::default().solve_sequence(&ms[..1]),
            Err(SolverError::InsufficientData(1))
        );
    }

    #[test]
    fn sequence_checks_indices() {
        let (a, b) = clocks(1.0, 0.0, 1.0, 0.0);
        let (m0, mut m1) = pair(&a, &b, 1e-6, 1e-4, 1e-3);
        m1.index = 5;
        assert_eq!(
            TwttSolver::default().solve_sequence(&[m0, m1]),
            Err(SolverError::NonConsecutive { index: 0, next: 5 })
        );
    }

    #[test]
    fn skew_smoothing_averages_pairs() {
        let (a, b) = clocks(1.0, 0.0, 1.0 + 1e-6, 0.0);
        let mut ms: Vec<_> = (0..4)
            .map(|i| {
                forward_measurement(
                    &a,
                    &b,
                    Seconds::new(0.1 + i as f64 * 1e-3),
                    Seconds::new(1e-6),
                    Seconds::new(1e-4),
                    i,
                )
            })
            .collect();
        // perturb one B timestamp to give the pairs different skews
        ms[2].tau_b_rx = ms[2].tau_b_rx + 1e-12;
        let plain = TwttSolver::default().solve_sequence(&ms).unwrap();
        let smooth = TwttSolver::new(SolverConfig {
            skew_window: 2,
            ..Default::default()
        })
        .solve_sequence(&ms)
        .unwrap();
        assert_eq!(smooth[0].skew_ratio, plain[0].skew_ratio);
        let mean = (plain[1].skew_ratio + plain[2].skew_ratio) / 2.0;
        assert!((smooth[2].skew_ratio - mean).abs() < 1e-15);
    }

    #[test]
    fn negative_tof_tolerance() {
        // B's turnaround exceeds A's round trip by 2e-12 s: tof = -1e-12 s
        let meas = m(0.0, 1.0, 4.0 + 2e-12, 3.0);
        let strict = TwttSolver::default().solve_with_skew(&meas, 1.0);
        assert!(matches!(strict, Err(SolverError::NegativeTof { .. })));
        let lenient = TwttSolver::new(SolverConfig::with_toa_sigma(1e-12))
            .solve_with_skew(&meas, 1.0)
            .unwrap();
        assert!(lenient.tof_clamped);
        assert_eq!(lenient.tof, Seconds::ZERO);
    }

    #[test]
    fn rejects_acausal_measurement() {
        assert!(matches!(
            TwttMeasurement::new(0.0, 2.0, 1.0, 3.0, 7),
            Err(SolverError::InvalidMeasurement { index: 7, .. })
        ));
        assert!(TwttMeasurement::new(3.0, 1.0, 2.0, 2.0, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn translation_invariance(
            aa in 0.9999f64..1.0001, ab in 0.9999f64..1.0001,
            pa in -1.0f64..1.0, pb in -1.0f64..1.0,
            tof_s in 0.0f64..1e-3, shift in -10.0f64..10.0,
        ) {
            let (a, b) = clocks(aa, pa, ab, pb);
            let (m0, m1) = pair(&a, &b, tof_s, 1e-4, 1e-2);
            let s = Seconds::new(shift);
            let (n0, n1) = (m0.shifted(s), m1.shifted(s));
            let r = skew_ratio(&m0, &m1).unwrap();
            let rs = skew_ratio(&n0, &n1).unwrap();
            prop_assert!(((r - rs) / r).abs() < 1e-12);
            let t = tof(&m0, r).as_f64();
            let ts = tof(&n0, rs).as_f64();
            prop_assert!((t - ts).abs() <= 1e-12 * t.abs().max(1e-9));
        }

        #[test]
        fn equal_skew_consistency(
            alpha in 0.9999f64..1.0001, pa in -1.0f64..1.0, pb in -1.0f64..1.0,
            tof_s in 0.0f64..1e-3,
        ) {
            let (a, b) = clocks(alpha, pa, alpha, pb);
            let (m0, _) = pair(&a, &b, tof_s, 1e-4, 1e-2);
            let d = (offset(&m0, 1.0) - initial_offset(&m0)).abs().as_f64();
            prop_assert!(d < 1e-30, "difference {d:e}");
        }
    }
}
