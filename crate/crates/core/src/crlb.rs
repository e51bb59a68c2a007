//! Cramér-Rao bound on chirp time-of-arrival estimation.
//!
//! `sigma_tau = 1 / (2 pi beta sqrt(2 E / N0))` with `beta` the Gabor RMS
//! bandwidth of the sampled chirp.

use crate::channel::SPEED_OF_LIGHT;
use crate::waveform::ChirpParams;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Zero-padding factor of the spectrum used for the RMS bandwidth.
const SPECTRUM_OVERSAMPLE: usize = 16;

/// How the configured SNR relates to `E / N0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnrConvention {
    /// SNR per received sample: `E / N0 = l_c * SNR`.
    PerSample,
    /// SNR after the matched filter: `E / N0 = SNR`.
    PostIntegration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbConfig {
    pub chirp: ChirpParams,
    pub snr_db: f64,
    pub convention: SnrConvention,
}

impl CrlbConfig {
    pub fn new(chirp: ChirpParams, snr_db: f64) -> Self {
        CrlbConfig {
            chirp,
            snr_db,
            convention: SnrConvention::PerSample,
        }
    }

    pub fn energy_to_noise(&self) -> f64 {
        let snr = 10f64.powf(self.snr_db / 10.0);
        match self.convention {
            SnrConvention::PerSample => self.chirp.length() as f64 * snr,
            SnrConvention::PostIntegration => snr,
        }
    }
}

/// Gabor RMS bandwidth in Hz from the zero-padded DFT of the sampled chirp,
/// `sqrt(sum f^2 |S|^2 / sum |S|^2)` over `[-f_s/2, f_s/2)`.
pub fn rms_bandwidth(chirp: &ChirpParams) -> f64 {
    let n = (chirp.length() * SPECTRUM_OVERSAMPLE).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[..chirp.length()].copy_from_slice(chirp.generate().samples());
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let fs = chirp.sample_rate();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, s) in buf.iter().enumerate() {
        let bin = if k < n / 2 {
            k as f64
        } else {
            k as f64 - n as f64
        };
        let f = bin * fs / n as f64;
        let p = s.norm_sqr();
        num += f * f * p;
        den += p;
    }
    (num / den).sqrt()
}

/// Bound on the standard deviation of one ToA estimate, in seconds.
pub fn toa_crlb_std(cfg: &CrlbConfig) -> f64 {
    toa_crlb_std_with_beta(rms_bandwidth(&cfg.chirp), cfg.energy_to_noise())
}

pub fn toa_crlb_std_with_beta(beta: f64, energy_to_noise: f64) -> f64 {
    1.0 / (2.0 * PI * beta * (2.0 * energy_to_noise).sqrt())
}

/// Propagates a per-ToA bound to the ToF estimate.
///
/// The ToF error is the mean of the two ToA errors; the skew estimated over
/// `interval` adds `sigma * turnaround / (2 interval)`, uncorrelated with it.
pub fn tof_crlb_std(toa_std: f64, turnaround: f64, interval: f64) -> f64 {
    let skew_term = turnaround / (2.0 * interval);
    toa_std * (0.5 + skew_term * skew_term).sqrt()
}

/// One point of a bound curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbPoint {
    pub bandwidth: f64,
    pub length: usize,
    pub toa_std: f64,
    pub tof_std: f64,
}

impl CrlbPoint {
    pub fn tof_cm(&self) -> f64 {
        self.tof_std * SPEED_OF_LIGHT * 100.0
    }
}

/// Bounds over a bandwidth x length grid, ordered by length then bandwidth.
/// ToF values assume the given turnaround and measurement interval.
#[allow(clippy::too_many_arguments)]
pub fn crlb_table(
    bandwidths: &[f64],
    lengths: &[usize],
    sample_rate: f64,
    snr_db: f64,
    convention: SnrConvention,
    turnaround: f64,
    interval: f64,
) -> Result<Vec<CrlbPoint>, crate::waveform::WaveformError> {
    let mut out = Vec::with_capacity(bandwidths.len() * lengths.len());
    for &length in lengths {
        for &bandwidth in bandwidths {
            let chirp = ChirpParams::new(bandwidth, sample_rate, length)?;
            let cfg = CrlbConfig {
                chirp,
                snr_db,
                convention,
            };
            let toa_std = toa_crlb_std(&cfg);
            out.push(CrlbPoint {
                bandwidth,
                length,
                toa_std,
                tof_std: tof_crlb_std(toa_std, turnaround, interval),
            });
        }
    }
    Ok(out)
}
