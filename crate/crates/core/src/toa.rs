//! Time-of-arrival estimation: matched-filter correlation against the
//! reference chirp, integer peak detection and sub-sample refinement by a
//! sinc nonlinear least-squares fit to the correlation magnitude.

use crate::iq::IqBuffer;
use crate::time::Seconds;
use crate::waveform::ChirpParams;
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::cell::RefCell;
use std::f64::consts::PI;
use thiserror::Error;

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.5;
/// Upper limit on the fit half-width; see [`auto_halfwidth`].
pub const MAX_WINDOW_HALFWIDTH: usize = 3;
pub const MAX_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToaError {
    #[error("empty input to correlator")]
    EmptyInput,
    #[error("reference ({reference} samples) longer than received buffer ({received})")]
    ReferenceTooLong { reference: usize, received: usize },
    #[error("no detection: peak {peak:.3} below threshold {threshold:.3}")]
    NoDetection { peak: f64, threshold: f64 },
    #[error("threshold ratio must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("fit window around lag {lag} exceeds the correlation support")]
    WindowOutOfRange { lag: i64 },
    #[error("correlation magnitude is flat around lag {lag}")]
    FlatWindow { lag: i64 },
    #[error("sinc fit did not converge after {} iterations (gradient {:.3e})", .best.iterations, .best.gradient_norm)]
    NotConverged { best: PeakFit },
}

/// Full linear cross-correlation `d[k] = sum_n rx[n + k] * conj(ref[n])`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationResult {
    pub lags: Vec<i64>,
    pub complex_values: Vec<Complex64>,
    pub magnitude: Vec<f64>,
    /// Energy of the reference, i.e. the noiseless peak for a unit-gain
    /// channel.
    pub reference_energy: f64,
}

impl CorrelationResult {
    /// Array index of `lag`, if inside the support.
    pub fn index_of(&self, lag: i64) -> Option<usize> {
        let first = *self.lags.first()?;
        let idx = lag - first;
        (idx >= 0 && (idx as usize) < self.lags.len()).then_some(idx as usize)
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// FFT cross-correlation, zero padded to the next power of two.
pub fn correlate(reference: &IqBuffer, received: &IqBuffer) -> Result<CorrelationResult, ToaError> {
    correlate_slices(reference.samples(), received.samples())
}

pub fn correlate_slices(
    reference: &[Complex64],
    received: &[Complex64],
) -> Result<CorrelationResult, ToaError> {
    if reference.is_empty() || received.is_empty() {
        return Err(ToaError::EmptyInput);
    }
    if reference.len() > received.len() {
        return Err(ToaError::ReferenceTooLong {
            reference: reference.len(),
            received: received.len(),
        });
    }
    let m = reference.len();
    let n = received.len();
    let size = (n + m - 1).next_power_of_two();

    let mut rx = vec![Complex64::new(0.0, 0.0); size];
    rx[..n].copy_from_slice(received);
    let mut rf = vec![Complex64::new(0.0, 0.0); size];
    rf[..m].copy_from_slice(reference);

    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        fwd.process(&mut rx);
        fwd.process(&mut rf);
        for (a, b) in rx.iter_mut().zip(&rf) {
            *a *= b.conj();
        }
        inv.process(&mut rx);
    });

    let scale = 1.0 / size as f64;
    let first = -(m as i64 - 1);
    let lags: Vec<i64> = (first..n as i64).collect();
    let complex_values: Vec<Complex64> = lags
        .iter()
        .map(|&k| rx[k.rem_euclid(size as i64) as usize] * scale)
        .collect();
    let magnitude = complex_values.iter().map(|c| c.norm()).collect();
    Ok(CorrelationResult {
        lags,
        complex_values,
        magnitude,
        reference_energy: reference.iter().map(|c| c.norm_sqr()).sum(),
    })
}

/// Lag of the largest correlation magnitude; the smallest lag wins ties.
/// Fails with [`ToaError::NoDetection`] below `threshold_ratio` times the
/// reference energy.
pub fn detect_peak(corr: &CorrelationResult, threshold_ratio: f64) -> Result<i64, ToaError> {
    if !(threshold_ratio > 0.0 && threshold_ratio <= 1.0) {
        return Err(ToaError::BadThreshold(threshold_ratio));
    }
    let mut best = 0;
    for (i, &m) in corr.magnitude.iter().enumerate() {
        if m > corr.magnitude[best] {
            best = i;
        }
    }
    let peak = *corr.magnitude.get(best).ok_or(ToaError::EmptyInput)?;
    let threshold = threshold_ratio * corr.reference_energy;
    if peak < threshold {
        return Err(ToaError::NoDetection { peak, threshold });
    }
    Ok(corr.lags[best])
}

/// Result of the sinc fit around one correlation peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakFit {
    /// Refined lag in samples.
    pub lag: f64,
    /// Offset of the refined lag from the integer window centre.
    pub delta: f64,
    pub amplitude: f64,
    /// Fitted mainlobe width parameter (1 / first-null distance in samples).
    pub width: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - (PI * x).powi(2) / 6.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// d/dx sinc(x)
#[inline]
fn sinc_deriv(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        -PI * PI * x / 3.0
    } else {
        ((PI * x).cos() - sinc(x)) / x
    }
}

/// Solves the 3x3 system `a x = b` by Gaussian elimination with partial
/// pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct SincModel<'a> {
    offsets: &'a [f64],
    data: &'a [f64],
}

impl SincModel<'_> {
    fn cost(&self, p: &[f64; 3]) -> f64 {
        self.offsets
            .iter()
            .zip(self.data)
            .map(|(&k, &y)| {
                let r = y - p[0] * sinc(p[2] * (k - p[1])).abs();
                r * r
            })
            .sum()
    }

    /// Returns `(J^T J, J^T r)`.
    fn normal_equations(&self, p: &[f64; 3]) -> ([[f64; 3]; 3], [f64; 3]) {
        let [a, delta, w] = *p;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for (&k, &y) in self.offsets.iter().zip(self.data) {
            let x = w * (k - delta);
            let s = sinc(x);
            let sign = if s < 0.0 { -1.0 } else { 1.0 };
            let ds = sign * sinc_deriv(x);
            let r = y - a * s.abs();
            let j = [s.abs(), -a * ds * w, a * ds * (k - delta)];
            for row in 0..3 {
                jtr[row] += j[row] * r;
                for col in 0..3 {
                    jtj[row][col] += j[row] * j[col];
                }
            }
        }
        (jtj, jtr)
    }
}

fn fit_window(offsets: &[f64], data: &[f64], init: [f64; 3]) -> PeakFit {
    let model = SincModel { offsets, data };
    let mut p = init;
    let mut cost = model.cost(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        let (jtj, jtr) = model.normal_equations(&p);
        gradient_norm = jtr.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gradient_norm < GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        let mut improved = false;
        // Inner loop: raise damping until a step lowers the cost.
        for _ in 0..32 {
            let mut damped = jtj;
            for d in 0..3 {
                damped[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            let Some(step) = solve3(damped, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            let trial_cost = model.cost(&trial);
            if trial_cost <= cost && trial[2] > 0.0 {
                let stalled =
                    (cost - trial_cost) <= cost * 1e-15 && step.iter().all(|s| s.abs() < 1e-13);
                p = trial;
                cost = trial_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                if stalled {
                    // Further progress is below floating resolution.
                    let (_, g) = model.normal_equations(&p);
                    gradient_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            // No descent direction left at this resolution: a stationary point.
            let (_, g) = model.normal_equations(&p);
            gradient_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            converged = gradient_norm < GRADIENT_TOLERANCE.sqrt();
            break;
        }
    }

    PeakFit {
        lag: p[1],
        delta: p[1],
        amplitude: p[0],
        width: p[2],
        iterations,
        gradient_norm,
        converged,
    }
}

/// Refines `coarse_lag` by fitting `a * |sinc(W (k - delta))|` to the
/// normalized magnitudes in `coarse_lag ± halfwidth`.
///
/// `initial_width` is the expected mainlobe parameter, normally `B_c / f_s`.
/// If the fitted offset leaves `±0.5`, the window is re-centred on the
/// nearer integer and fitted once more.
pub fn interpolate_peak_sinc_nls(
    corr: &CorrelationResult,
    coarse_lag: i64,
    halfwidth: usize,
    initial_width: f64,
) -> Result<PeakFit, ToaError> {
    let mut centre = coarse_lag;
    let mut fit = fit_around(corr, centre, halfwidth, initial_width, None)?;
    if fit.delta.abs() > 0.5 {
        centre += fit.delta.round() as i64;
        let seed = [fit.amplitude, fit.delta - fit.delta.round(), fit.width];
        fit = fit_around(corr, centre, halfwidth, initial_width, Some(seed))?;
    }
    if !fit.converged {
        return Err(ToaError::NotConverged { best: fit });
    }
    Ok(fit)
}

fn fit_around(
    corr: &CorrelationResult,
    centre: i64,
    halfwidth: usize,
    initial_width: f64,
    seed: Option<[f64; 3]>,
) -> Result<PeakFit, ToaError> {
    let k = halfwidth as i64;
    let (Some(lo), Some(hi)) = (corr.index_of(centre - k), corr.index_of(centre + k)) else {
        return Err(ToaError::WindowOutOfRange { lag: centre });
    };
    let window = &corr.magnitude[lo..=hi];
    let peak = window.iter().cloned().fold(0.0, f64::max);
    let floor = window.iter().cloned().fold(f64::INFINITY, f64::min);
    if peak <= 0.0 || (peak - floor) <= 1e-12 * peak {
        return Err(ToaError::FlatWindow { lag: centre });
    }
    let data: Vec<f64> = window.iter().map(|m| m / peak).collect();
    let offsets: Vec<f64> = (-k..=k).map(|o| o as f64).collect();

    let init = seed.unwrap_or_else(|| {
        // parabolic vertex of the three central magnitudes as a start
        let c = halfwidth;
        let (y0, y1, y2) = (data[c - 1], data[c], data[c + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let d = if denom.abs() > 1e-12 {
            (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        [1.0, d, initial_width]
    });
    let mut fit = fit_window(&offsets, &data, init);
    fit.amplitude *= peak;
    fit.lag = centre as f64 + fit.delta;
    Ok(fit)
}

/// Sub-sample arrival estimate of the chirp in a receive buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaEstimate {
    /// Arrival position in samples relative to the first buffer sample.
    pub lag_samples: f64,
    pub toa_local_seconds: Seconds,
    pub peak_magnitude: f64,
    /// Per-sample SNR; infinite for a noiseless lead-in.
    pub snr_estimate_db: f64,
}

/// Largest half-width that keeps every fitted sample inside the
/// autocorrelation mainlobe (first null at `f_s / B_c` samples), capped at
/// [`MAX_WINDOW_HALFWIDTH`] and never below 1.
///
/// Samples beyond the first null sit on the kink of `|sinc|` and on chirp
/// sidelobes that a sinc does not describe, which biases the fit.
pub fn auto_halfwidth(chirp: &ChirpParams) -> usize {
    let null = 1.0 / chirp.normalized_bandwidth();
    let inside = (null.ceil() as usize).saturating_sub(1);
    inside.clamp(1, MAX_WINDOW_HALFWIDTH)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToaConfig {
    pub threshold_ratio: f64,
    /// Fit half-width in samples; `None` selects [`auto_halfwidth`].
    pub window_halfwidth: Option<usize>,
}

impl Default for ToaConfig {
    fn default() -> Self {
        ToaConfig {
            threshold_ratio: DEFAULT_DETECTION_THRESHOLD,
            window_halfwidth: None,
        }
    }
}

/// Matched filter for one chirp configuration; keeps the reference around
/// between calls.
#[derive(Debug, Clone)]
pub struct ToaEstimator {
    chirp: ChirpParams,
    reference: IqBuffer,
    config: ToaConfig,
}

impl ToaEstimator {
    pub fn new(chirp: ChirpParams, config: ToaConfig) -> Self {
        ToaEstimator {
            reference: chirp.generate(),
            chirp,
            config,
        }
    }

    pub fn chirp(&self) -> &ChirpParams {
        &self.chirp
    }

    pub fn reference(&self) -> &IqBuffer {
        &self.reference
    }

    pub fn halfwidth(&self) -> usize {
        self.config
            .window_halfwidth
            .unwrap_or_else(|| auto_halfwidth(&self.chirp))
    }

    /// Estimates the arrival of the chirp's first sample in the local time
    /// base, given the local time of `received[0]`.
    pub fn estimate(
        &self,
        received: &IqBuffer,
        buffer_start_local: Seconds,
    ) -> Result<ToaEstimate, ToaError> {
        let corr = correlate(&self.reference, received)?;
        let coarse = detect_peak(&corr, self.config.threshold_ratio)?;
        let fit = interpolate_peak_sinc_nls(
            &corr,
            coarse,
            self.halfwidth(),
            self.chirp.normalized_bandwidth(),
        )?;
        let toa = buffer_start_local + fit.lag / self.chirp.sample_rate();
        Ok(ToaEstimate {
            lag_samples: fit.lag,
            toa_local_seconds: toa,
            peak_magnitude: fit.amplitude,
            snr_estimate_db: self.snr_estimate(received, &corr, &fit),
        })
    }

    /// Per-sample SNR: the fitted peak gives the signal power, the samples
    /// ahead of the chirp give the noise power. Without enough leading
    /// samples the residual energy under the chirp is used instead.
    fn snr_estimate(&self, received: &IqBuffer, corr: &CorrelationResult, fit: &PeakFit) -> f64 {
        const MIN_LEAD: usize = 8;
        let l = self.chirp.length() as f64;
        let gain = fit.amplitude / corr.reference_energy;
        let signal = gain * gain * corr.reference_energy / l;
        let x = received.samples();
        let lead = (fit.lag.floor() - 2.0).clamp(0.0, x.len() as f64) as usize;
        let noise = if lead >= MIN_LEAD {
            x[..lead].iter().map(|s| s.norm_sqr()).sum::<f64>() / lead as f64
        } else {
            let start = fit.lag.round().clamp(0.0, x.len() as f64) as usize;
            let end = (start + self.chirp.length()).min(x.len());
            if end <= start {
                return f64::NAN;
            }
            let span: f64 = x[start..end].iter().map(|s| s.norm_sqr()).sum();
            (span / (end - start) as f64 - signal).max(0.0)
        };
        10.0 * (signal / noise).log10()
    }
}

/// One-shot convenience wrapper around [`ToaEstimator`] with default
/// configuration.
pub fn estimate_toa(
    received: &IqBuffer,
    buffer_start_local: Seconds,
    chirp: &ChirpParams,
) -> Result<ToaEstimate, ToaError> {
    ToaEstimator::new(*chirp, ToaConfig::default()).estimate(received, buffer_start_local)
}
