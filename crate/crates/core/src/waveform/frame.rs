//! DQPSK timestamp frame.
//!
//! Layout (200 bits, MSB first): 8 status bits, 64-bit TX timestamp in
//! rf_clk ticks, 128-bit RX timestamp as Q64.64 ticks. Bits are taken in
//! pairs and mapped to Gray-coded phase increments; a reference symbol of
//! phase 0 precedes the 100 data symbols. Pulses are rectangular.

use super::WaveformError;
use crate::iq::IqBuffer;
use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;

pub const FRAME_BITS: usize = 8 + 64 + 128;
pub const DATA_SYMBOLS: usize = FRAME_BITS / 2;
/// Data symbols plus the differential reference.
pub const FRAME_SYMBOLS: usize = DATA_SYMBOLS + 1;

/// Timestamp payload sent by the responding node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TimestampFrame {
    pub status: u8,
    /// Whole rf_clk ticks of the reply transmission.
    pub tx_timestamp: u64,
    /// Q64.64 rf_clk ticks of the estimated chirp arrival.
    pub rx_timestamp: u128,
}

impl TimestampFrame {
    /// The 200 payload bits in transmission order.
    pub fn to_bits(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(FRAME_BITS);
        bits.extend((0..8).rev().map(|i| (self.status >> i) & 1 == 1));
        bits.extend((0..64).rev().map(|i| (self.tx_timestamp >> i) & 1 == 1));
        bits.extend((0..128).rev().map(|i| (self.rx_timestamp >> i) & 1 == 1));
        bits
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        assert_eq!(bits.len(), FRAME_BITS);
        let fold = |acc: u128, &b: &bool| (acc << 1) | b as u128;
        TimestampFrame {
            status: bits[..8].iter().fold(0, fold) as u8,
            tx_timestamp: bits[8..72].iter().fold(0, fold) as u64,
            rx_timestamp: bits[72..].iter().fold(0, fold),
        }
    }
}

/// Symbol timing of the DQPSK section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolConfig {
    pub samples_per_symbol: usize,
    pub sample_rate: f64,
}

impl SymbolConfig {
    pub const DEFAULT_SAMPLES_PER_SYMBOL: usize = 8;

    pub fn new(sample_rate: f64) -> Self {
        SymbolConfig {
            samples_per_symbol: Self::DEFAULT_SAMPLES_PER_SYMBOL,
            sample_rate,
        }
    }

    /// Number of samples occupied by one encoded frame.
    pub fn frame_samples(&self) -> usize {
        FRAME_SYMBOLS * self.samples_per_symbol
    }
}

/// Quadrant index (multiples of pi/2) for a dibit, Gray mapped.
fn dibit_to_quadrant(b1: bool, b0: bool) -> u8 {
    match (b1, b0) {
        (false, false) => 0,
        (false, true) => 1,
        (true, true) => 2,
        (true, false) => 3,
    }
}

fn quadrant_to_dibit(q: u8) -> (bool, bool) {
    match q & 3 {
        0 => (false, false),
        1 => (false, true),
        2 => (true, true),
        _ => (true, false),
    }
}

/// Unit-magnitude symbol for an accumulated quadrant index; exact values
/// avoid drift over the 100 increments.
fn quadrant_symbol(q: u8) -> Complex64 {
    match q & 3 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

pub fn encode_frame(frame: &TimestampFrame, cfg: &SymbolConfig) -> IqBuffer {
    let bits = frame.to_bits();
    let sps = cfg.samples_per_symbol;
    let mut samples = Vec::with_capacity(cfg.frame_samples());
    let mut phase = 0u8;
    samples.extend(std::iter::repeat_n(quadrant_symbol(phase), sps));
    for pair in bits.chunks_exact(2) {
        phase = phase.wrapping_add(dibit_to_quadrant(pair[0], pair[1]));
        samples.extend(std::iter::repeat_n(quadrant_symbol(phase), sps));
    }
    IqBuffer::new(samples, cfg.sample_rate)
}

/// Integrate-and-dump symbol values, then nearest-quadrant decisions on the
/// differential phase. No error correction is attempted.
pub fn decode_frame(buf: &IqBuffer, cfg: &SymbolConfig) -> Result<TimestampFrame, WaveformError> {
    let sps = cfg.samples_per_symbol;
    let needed = cfg.frame_samples();
    if sps == 0 || buf.len() < needed {
        return Err(WaveformError::InsufficientLength {
            needed,
            available: buf.len(),
        });
    }
    let symbols: Vec<Complex64> = buf.samples()[..needed]
        .chunks_exact(sps)
        .map(|c| c.iter().sum())
        .collect();
    let mut bits = Vec::with_capacity(FRAME_BITS);
    for w in symbols.windows(2) {
        let diff = w[1] * w[0].conj();
        let q = (diff.arg() / FRAC_PI_2).round().rem_euclid(4.0) as u8;
        let (b1, b0) = quadrant_to_dibit(q);
        bits.push(b1);
        bits.push(b0);
    }
    Ok(TimestampFrame::from_bits(&bits))
}
