//! Two-node propagation channel.
//!
//! A buffer emitted in the transmitter's time base is observed on the
//! receiver's sample grid. For a receiver sample at local time `tau` the
//! received value is
//!
//! ```text
//! s(rate * (tau - tau_rx_arrival)) * exp(j 2 pi f_err tau) * exp(j theta_c) * exp(j gamma) + w
//! ```
//!
//! with `rate = alpha_tx / alpha_rx`, `theta_c` the constant carrier phase
//! `-2 pi f_c (alpha_tx/alpha_rx (phi_rx + tof_rx) - phi_tx)` and `w` circular
//! complex Gaussian noise.

pub mod resampler;

use crate::clock::ClockParams;
use crate::iq::IqBuffer;
use crate::time::Seconds;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use resampler::{interpolate, HALF_TAPS};
use std::f64::consts::PI;
use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Largest `|alpha_tx / alpha_rx - 1|` the resampler accepts.
pub const RESAMPLER_RATE_RANGE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("relative clock rate {0} outside the resampler design range")]
    RateOutOfRange(f64),
    #[error("invalid link parameter: {0}")]
    InvalidLink(String),
    #[error("empty transmit buffer")]
    EmptyInput,
    #[error("delay {delay} samples exceeds buffer length {len}")]
    DelayTooLarge { delay: f64, len: usize },
}

/// Noise level of a link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Noiseless,
    /// Per-sample complex SNR in dB relative to the active signal power.
    Db(f64),
}

impl Snr {
    /// Noise variance for a given signal power, `None` when noiseless.
    pub fn noise_variance(&self, signal_power: f64) -> Option<f64> {
        match *self {
            Snr::Noiseless => None,
            Snr::Db(db) => Some(signal_power / 10f64.powf(db / 10.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub distance_m: f64,
    pub carrier_hz: f64,
    /// Carrier frequency offset seen by the receiver.
    pub cfo_hz: f64,
    pub phase_err_rad: f64,
    pub snr: Snr,
    pub c0: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            distance_m: 0.0,
            carrier_hz: 2.4e9,
            cfo_hz: 0.0,
            phase_err_rad: 0.0,
            snr: Snr::Noiseless,
            c0: SPEED_OF_LIGHT,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.distance_m.is_finite() && self.distance_m >= 0.0) {
            return Err(ChannelError::InvalidLink(format!(
                "distance must be finite and non-negative, got {}",
                self.distance_m
            )));
        }
        if !(self.c0.is_finite() && self.c0 > 0.0) {
            return Err(ChannelError::InvalidLink(format!(
                "propagation speed must be positive, got {}",
                self.c0
            )));
        }
        if !(self.carrier_hz.is_finite()
            && self.cfo_hz.is_finite()
            && self.phase_err_rad.is_finite())
        {
            return Err(ChannelError::InvalidLink(
                "carrier, CFO and phase must be finite".into(),
            ));
        }
        if let Snr::Db(db) = self.snr {
            if !db.is_finite() {
                return Err(ChannelError::InvalidLink(format!(
                    "SNR must be finite, got {db}"
                )));
            }
        }
        Ok(())
    }

    /// Time of flight `d / c0`.
    pub fn tof(&self) -> Seconds {
        Seconds::new(self.distance_m) / self.c0
    }

    /// The reverse direction of the same link: same geometry, opposite CFO.
    pub fn reversed(&self) -> LinkParams {
        LinkParams {
            cfo_hz: -self.cfo_hz,
            ..*self
        }
    }
}

/// What the receiver observes of one transmission.
#[derive(Debug, Clone)]
pub struct Reception {
    /// Receiver-grid samples; `samples[i]` is taken at local time
    /// `(first_index + i) / f_s`.
    pub samples: IqBuffer,
    pub first_index: i64,
    /// Global time at which the first transmitted sample arrives.
    pub arrival_global: Seconds,
    /// Same instant in the receiver's local time base.
    pub arrival_local: Seconds,
}

/// `exp(j 2 pi cycles)` with the integer part of `cycles` removed in
/// double-double before rounding to `f64`.
fn phasor_cycles(cycles: Seconds) -> Complex64 {
    let frac = (cycles - cycles.floor()).as_f64();
    Complex64::from_polar(1.0, 2.0 * PI * frac)
}

/// Observes `tx`, first emitted at global `tx_start_global` by a node with
/// clock `clk_tx`, on the sample grid of a node with clock `clk_rx`.
///
/// The returned window starts `HALF_TAPS` samples before the receiver-grid
/// sample at the transmit instant and ends `HALF_TAPS` samples after the
/// last arriving sample.
pub fn propagate(
    tx: &IqBuffer,
    tx_start_global: Seconds,
    clk_tx: &ClockParams,
    clk_rx: &ClockParams,
    link: &LinkParams,
    seed: u64,
) -> Result<Reception, ChannelError> {
    if tx.is_empty() {
        return Err(ChannelError::EmptyInput);
    }
    link.validate()?;
    let rate = clk_tx.alpha() / clk_rx.alpha();
    if (rate - 1.0).abs() > RESAMPLER_RATE_RANGE {
        return Err(ChannelError::RateOutOfRange(rate));
    }
    let fs = tx.sample_rate();
    let tof = link.tof();
    let arrival_global = tx_start_global + tof;
    let arrival_local = clk_rx.local_from_global(arrival_global);
    let tx_start_local_rx = clk_rx.local_from_global(tx_start_global);

    let half = HALF_TAPS as i64;
    let first_index = (tx_start_local_rx * fs).floor().as_f64() as i64 - half;
    let span = (tx.len() - 1) as f64 / rate;
    let last_index = ((arrival_local * fs) + span).floor().as_f64() as i64 + 1 + half;
    let n_out = (last_index - first_index + 1) as usize;

    // tof expressed in the receiver's clock domain
    let tof_rx = tof * clk_rx.alpha();
    let carrier_cycles = ((clk_rx.phi() + tof_rx) * rate - clk_tx.phi()) * link.carrier_hz;
    let constant = phasor_cycles(-carrier_cycles) * Complex64::from_polar(1.0, link.phase_err_rad);

    let arrival_samples = arrival_local * fs;
    let src = tx.samples();
    let mut out = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let j = first_index + i as i64;
        // position inside tx, in tx samples
        let offset = (Seconds::from_i64(j) - arrival_samples).as_f64();
        let mut v = interpolate(src, rate * offset);
        if v.re != 0.0 || v.im != 0.0 {
            if link.cfo_hz != 0.0 {
                let tau = Seconds::from_i64(j) / fs;
                v *= phasor_cycles(tau * link.cfo_hz);
            }
            v *= constant;
        }
        out.push(v);
    }

    let mut samples = IqBuffer::new(out, fs);
    if let Some(var) = link.snr.noise_variance(tx.active_power()) {
        add_noise_with_variance(&mut samples, var, seed);
    }
    Ok(Reception {
        samples,
        first_index,
        arrival_global,
        arrival_local,
    })
}

/// Delays `buf` by `delay_samples` with band-limited interpolation, keeping
/// the length: `out[n] = buf(n - delay)`.
pub fn fractional_delay(buf: &IqBuffer, delay_samples: f64) -> Result<IqBuffer, ChannelError> {
    if delay_samples.is_nan() || delay_samples.abs() >= buf.len() as f64 {
        return Err(ChannelError::DelayTooLarge {
            delay: delay_samples,
            len: buf.len(),
        });
    }
    let src = buf.samples();
    let out = (0..buf.len())
        .map(|n| interpolate(src, n as f64 - delay_samples))
        .collect();
    Ok(IqBuffer::new(out, buf.sample_rate()))
}

/// Adds circular complex Gaussian noise at `snr` relative to the buffer's
/// active power. Deterministic for a given seed.
pub fn add_awgn(buf: &IqBuffer, snr: Snr, seed: u64) -> IqBuffer {
    let mut out = buf.clone();
    if let Some(var) = snr.noise_variance(buf.active_power()) {
        add_noise_with_variance(&mut out, var, seed);
    }
    out
}

/// Adds circular complex Gaussian noise of total per-sample `variance`.
pub fn add_noise_with_variance(buf: &mut IqBuffer, variance: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (variance / 2.0).sqrt();
    for s in buf.samples_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += Complex64::new(re, im) * sigma;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::ChirpParams;

    const FS: f64 = 61.44e6;

    fn chirp() -> IqBuffer {
        ChirpParams::new(38e6, FS, 512).unwrap().generate()
    }

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn identity_channel_passes_through() {
        let tx = chirp();
        let c = ClockParams::ideal();
        let rx = propagate(&tx, Seconds::new(0.5), &c, &c, &LinkParams::default(), 0).unwrap();
        let lead = (rx.arrival_local * FS).as_f64() as i64 - rx.first_index;
        assert_eq!(lead, HALF_TAPS as i64);
        let got = &rx.samples.samples()[lead as usize..lead as usize + tx.len()];
        assert!(rel_l2(got, tx.samples()) < 1e-9);
        // nothing leaks outside the support for an on-grid arrival
        let energy: f64 = rx.samples.energy();
        assert!((energy - tx.energy()).abs() < 1e-9);
    }

    #[test]
    fn integer_distance_is_integer_shift() {
        let tx = chirp();
        let c = ClockParams::ideal();
        let link = LinkParams {
            distance_m: SPEED_OF_LIGHT * 10.0 / FS,
            // no carrier rotation, so the comparison is sample for sample
            carrier_hz: 0.0,
            ..Default::default()
        };
        let rx = propagate(&tx, Seconds::new(0.5), &c, &c, &link, 0).unwrap();
        // the window starts HALF_TAPS samples before the transmit instant
        let s = rx.samples.samples();
        let base = HALF_TAPS + 10;
        assert!(s[..base - 1].iter().all(|v| v.norm() < 1e-6));
        for n in 0..tx.len() {
            assert!((s[base + n] - tx.samples()[n]).norm() < 1e-6, "n={n}");
        }
    }

    #[test]
    fn rejects_excess_rate() {
        let a = ClockParams::ideal();
        let b = ClockParams::with_bound(1.01, 0.0, 0.1).unwrap();
        let r = propagate(&chirp(), Seconds::ZERO, &a, &b, &LinkParams::default(), 0);
        assert!(matches!(r, Err(ChannelError::RateOutOfRange(_))));
    }

    #[test]
    fn rejects_negative_distance() {
        let a = ClockParams::ideal();
        let link = LinkParams {
            distance_m: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            propagate(&chirp(), Seconds::ZERO, &a, &a, &link, 0),
            Err(ChannelError::InvalidLink(_))
        ));
    }

    #[test]
    fn fractional_delay_integer_and_zero() {
        let tx = chirp();
        let same = fractional_delay(&tx, 0.0).unwrap();
        assert_eq!(same, tx);
        let d5 = fractional_delay(&tx, 5.0).unwrap();
        for n in 5..tx.len() {
            assert_eq!(d5.samples()[n], tx.samples()[n - 5]);
        }
        assert!(fractional_delay(&tx, 600.0).is_err());
    }

    #[test]
    fn half_sample_delay_matches_analytic_chirp() {
        let p = ChirpParams::new(38e6, FS, 512).unwrap();
        let d = fractional_delay(&p.generate(), 0.5).unwrap();
        let max_err = (HALF_TAPS..512 - HALF_TAPS)
            .map(|n| (d.samples()[n] - p.evaluate_samples(n as f64 - 0.5)).norm())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn awgn_is_deterministic_and_calibrated() {
        let tx = chirp();
        let a = add_awgn(&tx, Snr::Db(30.0), 42);
        let b = add_awgn(&tx, Snr::Db(30.0), 42);
        assert_eq!(a, b);
        assert_eq!(add_awgn(&tx, Snr::Noiseless, 42), tx);
        assert_ne!(add_awgn(&tx, Snr::Db(30.0), 43), a);
    }

    #[test]
    fn awgn_variance_over_many_samples() {
        let n = 1_000_000;
        let p = ChirpParams::new(38e6, FS, 512).unwrap();
        let clean = IqBuffer::new(
            (0..n)
                .map(|i| p.evaluate_samples((i % 512) as f64))
                .collect(),
            FS,
        );
        let noisy = add_awgn(&clean, Snr::Db(30.0), 9);
        let var: f64 = noisy
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((var - 1e-3).abs() / 1e-3 < 0.05, "variance {var}");
    }

    /// 64x-oversampled analytic chirp, read back by linear interpolation.
    struct DenseChirp {
        grid: Vec<Complex64>,
    }

    const OVERSAMPLE: usize = 64;

    impl DenseChirp {
        fn new(p: &ChirpParams) -> Self {
            let n = p.length() * OVERSAMPLE;
            let grid = (0..=n)
                .map(|k| p.evaluate_samples(k as f64 / OVERSAMPLE as f64))
                .collect();
            DenseChirp { grid }
        }

        fn at(&self, pos: f64) -> Complex64 {
            let x = pos * OVERSAMPLE as f64;
            if x < 0.0 || x >= (self.grid.len() - 1) as f64 {
                return Complex64::new(0.0, 0.0);
            }
            let k = x.floor() as usize;
            let t = x - k as f64;
            self.grid[k] * (1.0 - t) + self.grid[k + 1] * t
        }
    }

    #[test]
    fn skewed_fractional_delay_matches_oversampled_reference() {
        let p = ChirpParams::new(20e6, FS, 512).unwrap();
        let dense = DenseChirp::new(&p);
        let a = ClockParams::ideal();
        let b = ClockParams::new(1.0 + 1e-6, 0.0).unwrap();
        let delay = 100.37;
        let link = LinkParams {
            distance_m: SPEED_OF_LIGHT * delay / FS,
            carrier_hz: 0.0,
            ..Default::default()
        };
        let rx = propagate(&p.generate(), Seconds::ZERO, &a, &b, &link, 0).unwrap();

        // B samples at local j / fs; the chirp's first sample reaches B at
        // local (1 + 1e-6) * delay / fs.
        let arrival = (1.0 + 1e-6) * delay;
        let rate = 1.0 / (1.0 + 1e-6);
        let margin = 32.0;
        let (mut got, mut want) = (Vec::new(), Vec::new());
        for (i, v) in rx.samples.samples().iter().enumerate() {
            let pos = rate * ((rx.first_index + i as i64) as f64 - arrival);
            if pos > margin && pos < 512.0 - margin {
                got.push(*v);
                want.push(dense.at(pos));
            }
        }
        assert!(got.len() > 400);
        let err = rel_l2(&got, &want);
        assert!(err < 1e-4, "relative L2 {err}");
    }

    #[test]
    fn noiseless_propagation_preserves_energy() {
        let tx = chirp();
        let a = ClockParams::new(1.0 - 3e-6, 1e-3).unwrap();
        let b = ClockParams::new(1.0 + 2e-6, -4e-4).unwrap();
        for d in [0.0, 1.8, 123.4567, 3e3] {
            let link = LinkParams {
                distance_m: d,
                ..Default::default()
            };
            let rx = propagate(&tx, Seconds::new(0.25), &a, &b, &link, 0).unwrap();
            let rel = (rx.samples.energy() - tx.energy()).abs() / tx.energy();
            assert!(rel < 1e-3, "distance {d}: energy change {rel}");
        }
    }

    fn smooth_pulse() -> IqBuffer {
        IqBuffer::new(
            (0..256)
                .map(|n| {
                    let x = (n as f64 - 128.0) / 12.0;
                    Complex64::from_polar((-0.5 * x * x).exp(), 0.05 * n as f64)
                })
                .collect(),
            FS,
        )
    }

    /// Relative L2 distance between `propagate(d1 + d2)` and two hops.
    fn composition_error(tx: &IqBuffer, d1: f64, d2: f64) -> f64 {
        let c = ClockParams::ideal();
        let at = |d: f64| LinkParams {
            distance_m: d * SPEED_OF_LIGHT / FS,
            carrier_hz: 0.0,
            ..Default::default()
        };
        let t0 = Seconds::new(1e-3);
        let direct = propagate(tx, t0, &c, &c, &at(d1 + d2), 0).unwrap();
        let hop = propagate(tx, t0, &c, &c, &at(d1), 0).unwrap();
        let hop_start = Seconds::from_i64(hop.first_index) / FS;
        let twice = propagate(&hop.samples, hop_start, &c, &c, &at(d2), 0).unwrap();

        let value = |r: &Reception, j: i64| {
            let i = j - r.first_index;
            if i < 0 || i as usize >= r.samples.len() {
                Complex64::new(0.0, 0.0)
            } else {
                r.samples.samples()[i as usize]
            }
        };
        let lo = direct.first_index.min(twice.first_index);
        let hi = (direct.first_index + direct.samples.len() as i64)
            .max(twice.first_index + twice.samples.len() as i64);
        let a: Vec<_> = (lo..hi).map(|j| value(&twice, j)).collect();
        let b: Vec<_> = (lo..hi).map(|j| value(&direct, j)).collect();
        rel_l2(&a, &b)
    }

    #[test]
    fn delays_compose() {
        for tx in [smooth_pulse(), chirp()] {
            let err = composition_error(&tx, 3.37, 6.0);
            assert!(err < 1e-6, "relative L2 {err}");
        }
    }

    #[test]
    fn fractional_delays_compose_within_interpolator_error() {
        // two fractional hops each carry the interpolator's own error
        let err = composition_error(&smooth_pulse(), 3.37, 5.81);
        assert!(err < 1e-4, "relative L2 {err}");
    }

    #[test]
    fn cfo_demodulates_to_zero_cfo_output() {
        let tx = chirp();
        let a = ClockParams::new(1.0 + 1e-6, 2e-3).unwrap();
        let b = ClockParams::new(1.0 - 2e-6, -1e-3).unwrap();
        let base = LinkParams {
            distance_m: 17.3,
            phase_err_rad: 0.4,
            ..Default::default()
        };
        let shifted = LinkParams {
            cfo_hz: 1234.5,
            ..base
        };
        let t0 = Seconds::new(0.75);
        let r0 = propagate(&tx, t0, &a, &b, &base, 0).unwrap();
        let r1 = propagate(&tx, t0, &a, &b, &shifted, 0).unwrap();
        assert_eq!(r0.first_index, r1.first_index);
        let demod: Vec<Complex64> = r1
            .samples
            .samples()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let tau = (r1.first_index + i as i64) as f64 / FS;
                v * Complex64::from_polar(1.0, -2.0 * PI * shifted.cfo_hz * tau)
            })
            .collect();
        let err = rel_l2(&demod, r0.samples.samples());
        assert!(err < 1e-9, "relative L2 {err}");
    }

    #[test]
    fn reversed_link_negates_cfo_only() {
        let l = LinkParams {
            distance_m: 4.0,
            cfo_hz: 50.0,
            ..Default::default()
        };
        let r = l.reversed();
        assert_eq!(r.cfo_hz, -50.0);
        assert_eq!(r.distance_m, 4.0);
        assert_eq!(r.reversed(), l);
    }
}
