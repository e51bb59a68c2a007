//! Synchronization waveform: chirp, DQPSK timestamp frame, and the
//! assembled reply `chirp | gap | frame`.

mod chirp;
mod frame;

pub use chirp::{generate_chirp, ChirpParams};
pub use frame::{
    decode_frame, encode_frame, SymbolConfig, TimestampFrame, DATA_SYMBOLS, FRAME_BITS,
    FRAME_SYMBOLS,
};

use crate::iq::IqBuffer;
use num_complex::Complex64;
use thiserror::Error;

/// Idle samples between the chirp and the frame.
pub const DEFAULT_GAP_SAMPLES: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveformError {
    #[error("invalid chirp parameters: {0}")]
    InvalidChirp(String),
    #[error("buffer too short for a frame: need {needed} samples, have {available}")]
    InsufficientLength { needed: usize, available: usize },
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(f64, f64),
}

/// Concatenates `chirp | zeros(gap) | payload`.
pub fn assemble_twtt_waveform(
    chirp: &IqBuffer,
    payload: &IqBuffer,
    gap_samples: usize,
) -> Result<IqBuffer, WaveformError> {
    // An empty payload carries no meaningful rate.
    if !payload.is_empty() && chirp.sample_rate() != payload.sample_rate() {
        return Err(WaveformError::SampleRateMismatch(
            chirp.sample_rate(),
            payload.sample_rate(),
        ));
    }
    let mut samples = Vec::with_capacity(chirp.len() + gap_samples + payload.len());
    samples.extend_from_slice(chirp.samples());
    samples.resize(chirp.len() + gap_samples, Complex64::new(0.0, 0.0));
    samples.extend_from_slice(payload.samples());
    Ok(IqBuffer::new(samples, chirp.sample_rate()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bare_chirp() {
        let p = ChirpParams::new(38e6, 61.44e6, 512).unwrap();
        let w = assemble_twtt_waveform(&p.generate(), &IqBuffer::zeros(0, 61.44e6), 0).unwrap();
        assert_eq!(w.len(), 512);
    }

    #[test]
    fn gap_is_zero() {
        let p = ChirpParams::new(38e6, 61.44e6, 512).unwrap();
        let payload = IqBuffer::new(vec![Complex64::new(1.0, 0.0); 800], 61.44e6);
        let w = assemble_twtt_waveform(&p.generate(), &payload, 64).unwrap();
        assert_eq!(w.len(), 1376);
        assert!(w.samples()[512..576].iter().all(|s| s.norm() == 0.0));
        assert_eq!(w.samples()[576], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn realistic_reply_spans_about_25_us() {
        let p = ChirpParams::new(38e6, 61.44e6, 512).unwrap();
        let frame = encode_frame(&TimestampFrame::default(), &SymbolConfig::new(61.44e6));
        let w = assemble_twtt_waveform(&p.generate(), &frame, DEFAULT_GAP_SAMPLES).unwrap();
        let d = w.duration();
        assert!((15e-6..35e-6).contains(&d), "duration {d}");
    }

    #[test]
    fn rate_mismatch() {
        let a = IqBuffer::zeros(4, 1.0);
        let b = IqBuffer::zeros(4, 2.0);
        assert!(matches!(
            assemble_twtt_waveform(&a, &b, 0),
            Err(WaveformError::SampleRateMismatch(..))
        ));
    }
}
