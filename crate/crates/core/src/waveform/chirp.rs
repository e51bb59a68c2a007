use super::WaveformError;
use crate::iq::IqBuffer;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Linear chirp sweeping `-B/2 .. +B/2` over `length` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChirpParams {
    bandwidth: f64,
    sample_rate: f64,
    length: usize,
}

impl ChirpParams {
    pub fn new(bandwidth: f64, sample_rate: f64, length: usize) -> Result<Self, WaveformError> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(WaveformError::InvalidChirp(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0 && bandwidth < sample_rate) {
            return Err(WaveformError::InvalidChirp(format!(
                "bandwidth {bandwidth} Hz must lie in (0, {sample_rate})"
            )));
        }
        if length < 2 {
            return Err(WaveformError::InvalidChirp(format!(
                "length must be at least 2 samples, got {length}"
            )));
        }
        Ok(ChirpParams {
            bandwidth,
            sample_rate,
            length,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn length(&self) -> usize {
        self.length
    }

    /// `T_c = l_c / f_s`.
    pub fn duration(&self) -> f64 {
        self.length as f64 / self.sample_rate
    }

    /// Frequency sweep rate `B_c / T_c` in Hz/s.
    pub fn sweep_rate(&self) -> f64 {
        self.bandwidth / self.duration()
    }

    /// Mainlobe width parameter of the autocorrelation in samples^-1.
    pub fn normalized_bandwidth(&self) -> f64 {
        self.bandwidth / self.sample_rate
    }

    /// The analytic chirp at time `t` seconds after its start; zero outside
    /// `[0, T_c)`.
    pub fn evaluate(&self, t: f64) -> Complex64 {
        self.evaluate_samples(t * self.sample_rate)
    }

    /// Same as [`evaluate`](Self::evaluate) with time given in (fractional)
    /// samples, which keeps the phase polynomial well conditioned.
    pub fn evaluate_samples(&self, x: f64) -> Complex64 {
        if !(0.0..self.length as f64).contains(&x) {
            return Complex64::new(0.0, 0.0);
        }
        // 2*pi*(B fs/(2 lc) t - B/2) t with t = x/fs
        let phase = PI * self.normalized_bandwidth() * (x * x / self.length as f64 - x);
        Complex64::from_polar(1.0, phase)
    }

    /// Samples `n = 0 .. l_c` of the chirp.
    pub fn generate(&self) -> IqBuffer {
        let samples = (0..self.length)
            .map(|n| self.evaluate_samples(n as f64))
            .collect();
        IqBuffer::new(samples, self.sample_rate)
    }
}

/// Free-function form of [`ChirpParams::generate`].
pub fn generate_chirp(params: &ChirpParams) -> IqBuffer {
    params.generate()
}
