//! Complex baseband sample buffers and their on-disk formats.
//!
//! Two formats are supported: raw interleaved little-endian `f32` I/Q
//! (`cf32`), and a whitespace separated text table with a `t real imag`
//! header, one row per sample.

use num_complex::Complex64;
use std::io::{self, BufRead, BufWriter, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IqError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("cf32 stream length {0} is not a multiple of 8 bytes")]
    TruncatedCf32(usize),
    #[error("malformed .dat line {line}: {reason}")]
    MalformedDat { line: usize, reason: String },
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
}

/// A run of complex baseband samples at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer {
    samples: Vec<Complex64>,
    sample_rate: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        debug_assert!(sample_rate.is_finite() && sample_rate > 0.0);
        IqBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        IqBuffer::new(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [Complex64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the buffer, `len / sample_rate`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Sum of `|x|^2`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power over the samples that are not exactly zero.
    ///
    /// For gated waveforms (chirp, gap, payload) this is the power of the
    /// active part, which is what an SNR figure refers to.
    pub fn active_power(&self) -> f64 {
        let (sum, n) = self
            .samples
            .iter()
            .filter(|s| s.re != 0.0 || s.im != 0.0)
            .fold((0.0, 0usize), |(acc, n), s| (acc + s.norm_sqr(), n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.re.is_finite() && s.im.is_finite())
    }

    pub fn slice(&self, start: usize, len: usize) -> IqBuffer {
        IqBuffer::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    /// Writes interleaved little-endian `f32` I/Q pairs.
    pub fn write_cf32<W: Write>(&self, writer: W) -> Result<(), IqError> {
        let mut w = BufWriter::new(writer);
        for s in &self.samples {
            w.write_all(&(s.re as f32).to_le_bytes())?;
            w.write_all(&(s.im as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cf32<R: Read>(mut reader: R, sample_rate: f64) -> Result<IqBuffer, IqError> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(IqError::BadSampleRate(sample_rate));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 {
            return Err(IqError::TruncatedCf32(bytes.len()));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        Ok(IqBuffer::new(samples, sample_rate))
    }

    /// Writes the `t real imag` text table; `t0` is the time of sample 0.
    pub fn write_dat<W: Write>(&self, writer: W, t0: f64) -> Result<(), IqError> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "t real imag")?;
        for (n, s) in self.samples.iter().enumerate() {
            let t = t0 + n as f64 / self.sample_rate;
            writeln!(w, "{} {} {}", t, s.re, s.im)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `t real imag` table. The sample rate is recovered from the
    /// first two time stamps.
    pub fn read_dat<R: BufRead>(reader: R) -> Result<IqBuffer, IqError> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if i == 0 && cols.first().is_some_and(|c| c.parse::<f64>().is_err()) {
                continue;
            }
            if cols.len() != 3 {
                return Err(IqError::MalformedDat {
                    line: i + 1,
                    reason: format!("expected 3 columns, found {}", cols.len()),
                });
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|e| IqError::MalformedDat {
                    line: i + 1,
                    reason: e.to_string(),
                })
            };
            times.push(parse(cols[0])?);
            samples.push(Complex64::new(parse(cols[1])?, parse(cols[2])?));
        }
        if times.len() < 2 {
            return Err(IqError::MalformedDat {
                line: 0,
                reason: "need at least two samples to infer the sample rate".into(),
            });
        }
        let sample_rate = 1.0 / (times[1] - times[0]);
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(IqError::BadSampleRate(sample_rate));
        }
        Ok(IqBuffer::new(samples, sample_rate))
    }
}
