//! Behavioural model of a node's timing controller: a free-running tick
//! counter at `f_rf = 2 f_s`, timestamp-gated transmission and reception
//! triggered by a timestamp or by an RSSI threshold.
//!
//! Baseband sample `k` of any stream handled here sits on tick `2 k`
//! relative to the stream start, so every sample boundary is an even tick.

use crate::iq::IqBuffer;
use crate::time::Seconds;
use num_complex::Complex64;
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// rf_clk cycles per baseband sample.
pub const TICKS_PER_SAMPLE: u64 = 2;

const FRACTION_SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Unsigned Q64.64 tick value: 64 integer rf_clk cycles and a 64-bit binary
/// fraction of a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Ticks(u128);

impl Ticks {
    pub const ZERO: Ticks = Ticks(0);

    pub fn from_count(count: u64) -> Self {
        Ticks((count as u128) << 64)
    }

    pub fn from_parts(count: u64, fraction: u64) -> Self {
        Ticks(((count as u128) << 64) | fraction as u128)
    }

    pub fn from_raw(raw: u128) -> Self {
        Ticks(raw)
    }

    /// Tick of baseband sample `index`.
    pub fn from_sample(index: u64) -> Self {
        Ticks::from_count(index * TICKS_PER_SAMPLE)
    }

    pub fn raw(&self) -> u128 {
        self.0
    }

    pub fn count(&self) -> u64 {
        (self.0 >> 64) as u64
    }

    pub fn fraction(&self) -> u64 {
        self.0 as u64
    }

    pub fn is_integer(&self) -> bool {
        self.fraction() == 0
    }

    /// True on an even integer tick, i.e. a baseband sample boundary.
    pub fn is_sample_aligned(&self) -> bool {
        self.is_integer() && self.count().is_multiple_of(TICKS_PER_SAMPLE)
    }

    pub fn to_seconds(&self, f_rf: f64) -> Seconds {
        ticks_to_local_seconds(*self, f_rf)
    }

    /// Nearest-below Q64.64 value of `seconds * f_rf`; `None` for negative
    /// or out-of-range times.
    pub fn from_seconds(seconds: Seconds, f_rf: f64) -> Option<Ticks> {
        let x = seconds * f_rf;
        if !x.is_finite() || x.hi() < 0.0 || x.hi() >= FRACTION_SCALE {
            return None;
        }
        let whole = x.floor();
        let frac = (x - whole).as_f64();
        let count = whole.as_f64() as u64;
        // frac < 1 always, but rounding of frac * 2^64 may reach 2^64
        let fraction = (frac * FRACTION_SCALE).min(FRACTION_SCALE - 1.0) as u64;
        Some(Ticks::from_parts(count, fraction))
    }

    pub fn checked_add(self, other: Ticks) -> Option<Ticks> {
        self.0.checked_add(other.0).map(Ticks)
    }

    pub fn checked_sub(self, other: Ticks) -> Option<Ticks> {
        self.0.checked_sub(other.0).map(Ticks)
    }

    /// Adds a signed, possibly fractional number of ticks.
    pub fn offset_by(self, ticks: f64) -> Option<Ticks> {
        let delta = ticks * FRACTION_SCALE;
        if !delta.is_finite() || delta.abs() >= 2f64.powi(126) {
            return None;
        }
        let delta = delta.round() as i128;
        let base = i128::try_from(self.0).ok()?;
        u128::try_from(base.checked_add(delta)?).ok().map(Ticks)
    }

    /// Signed difference `self - other` in ticks.
    pub fn diff(self, other: Ticks) -> f64 {
        if self >= other {
            Ticks(self.0 - other.0).as_f64()
        } else {
            -Ticks(other.0 - self.0).as_f64()
        }
    }

    pub fn as_f64(&self) -> f64 {
        self.count() as f64 + self.fraction() as f64 / FRACTION_SCALE
    }
}

impl fmt::Display for Ticks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.count())
        } else {
            write!(f, "{}+{}/2^64", self.count(), self.fraction())
        }
    }
}

/// `count / f_rf + fraction / 2^64 / f_rf`.
pub fn ticks_to_local_seconds(t: Ticks, f_rf: f64) -> Seconds {
    (Seconds::from_u64(t.count()) + t.fraction() as f64 / FRACTION_SCALE) / f_rf
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("transmission scheduled at tick {requested} but the counter is already at {now}")]
    LateSchedule { requested: Ticks, now: Ticks },
    #[error("tick {0} is not on a sample boundary")]
    Misaligned(Ticks),
    #[error("transmitter busy until tick {busy_until}, requested {requested}")]
    TxBusy { requested: Ticks, busy_until: Ticks },
    #[error("no trigger within the receive stream")]
    NoTrigger,
    #[error(
        "stream too short: capture needs {needed} samples from the trigger, {available} available"
    )]
    StreamTooShort { needed: usize, available: usize },
    #[error("invalid trigger configuration: {0}")]
    InvalidConfig(String),
    #[error("tick counter overflow")]
    Overflow,
}

/// How reception starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TriggerMode {
    /// Capture begins exactly at `rx_start`.
    Timestamp { rx_start: Ticks },
    /// Capture begins at the first sample whose mean power over the last
    /// `window` samples (the sample itself included) reaches `threshold`.
    Rssi { threshold: f64, window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RxTriggerConfig {
    pub mode: TriggerMode,
    pub capture_length: usize,
    /// Samples kept ahead of an RSSI trigger; ignored in timestamp mode.
    pub pretrigger: usize,
}

impl RxTriggerConfig {
    pub fn rssi(threshold: f64, window: usize, capture_length: usize) -> Self {
        RxTriggerConfig {
            mode: TriggerMode::Rssi { threshold, window },
            capture_length,
            pretrigger: 0,
        }
    }

    pub fn timestamp(rx_start: Ticks, capture_length: usize) -> Self {
        RxTriggerConfig {
            mode: TriggerMode::Timestamp { rx_start },
            capture_length,
            pretrigger: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.capture_length == 0 {
            return Err(ControllerError::InvalidConfig(
                "capture length must be positive".into(),
            ));
        }
        match self.mode {
            TriggerMode::Rssi { threshold, window } => {
                if window == 0 {
                    return Err(ControllerError::InvalidConfig(
                        "RSSI window must be at least one sample".into(),
                    ));
                }
                if !(threshold.is_finite() && threshold >= 0.0) {
                    return Err(ControllerError::InvalidConfig(format!(
                        "RSSI threshold must be finite and non-negative, got {threshold}"
                    )));
                }
            }
            TriggerMode::Timestamp { rx_start } => {
                if !rx_start.is_sample_aligned() {
                    return Err(ControllerError::Misaligned(rx_start));
                }
            }
        }
        Ok(())
    }
}

/// Samples captured after a trigger.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    /// Tick of the first captured sample.
    pub ts_start: Ticks,
    pub samples: IqBuffer,
    /// Index in the input stream of the first captured sample.
    pub stream_offset: usize,
}

/// Windowed mean of `|x|^2` over the `window` samples ending at `index`;
/// samples before the stream start count as zero.
pub fn rssi_at(samples: &[Complex64], index: usize, window: usize) -> f64 {
    let first = (index + 1).saturating_sub(window);
    let sum: f64 = samples[first..=index].iter().map(|s| s.norm_sqr()).sum();
    sum / window as f64
}

/// Register names of the controller's PS-visible register file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Register {
    TxStart,
    RxStart,
    /// Bit pattern of the linear power threshold as an IEEE-754 double.
    RssiThreshold,
    RssiWindow,
    CaptureLength,
    /// Integer tick part of the last capture's ts_start.
    TsStart,
    Status,
}

pub mod status {
    pub const TX_ARMED: u64 = 1 << 0;
    pub const TX_DONE: u64 = 1 << 1;
    pub const RX_DONE: u64 = 1 << 2;
    pub const LATE: u64 = 1 << 3;
    pub const NO_TRIGGER: u64 = 1 << 4;
}

/// Atomic register file; clock-domain crossing is not modelled.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegisterFile {
    values: BTreeMap<Register, u64>,
}

impl RegisterFile {
    pub fn read(&self, reg: Register) -> u64 {
        self.values.get(&reg).copied().unwrap_or(0)
    }

    pub fn write(&mut self, reg: Register, value: u64) {
        self.values.insert(reg, value);
    }

    pub fn set_bits(&mut self, reg: Register, bits: u64) {
        let v = self.read(reg);
        self.write(reg, v | bits);
    }

    pub fn clear_bits(&mut self, reg: Register, bits: u64) {
        let v = self.read(reg);
        self.write(reg, v & !bits);
    }

    /// Loads an RSSI trigger configuration the way the PS would program it.
    pub fn write_rssi_config(&mut self, threshold: f64, window: usize, capture_length: usize) {
        self.write(Register::RssiThreshold, threshold.to_bits());
        self.write(Register::RssiWindow, window as u64);
        self.write(Register::CaptureLength, capture_length as u64);
    }

    pub fn rssi_config(&self) -> RxTriggerConfig {
        RxTriggerConfig::rssi(
            f64::from_bits(self.read(Register::RssiThreshold)),
            self.read(Register::RssiWindow) as usize,
            self.read(Register::CaptureLength) as usize,
        )
    }
}

/// One gated transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission {
    pub tx_start: Ticks,
    pub waveform: IqBuffer,
}

impl Emission {
    /// Tick just after the last sample.
    pub fn end(&self) -> Ticks {
        Ticks::from_count(self.tx_start.count() + self.waveform.len() as u64 * TICKS_PER_SAMPLE)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerEvent {
    TxScheduled { tx_start: Ticks, samples: usize },
    Captured { ts_start: Ticks, samples: usize },
}

/// One node's timing controller.
#[derive(Debug, Clone, Default)]
pub struct TimingController {
    counter: u64,
    busy_until: Ticks,
    emissions: Vec<Emission>,
    events: Vec<ControllerEvent>,
    registers: RegisterFile,
}

impl TimingController {
    pub fn new(start: u64) -> Self {
        TimingController {
            counter: start,
            ..Default::default()
        }
    }

    pub fn counter_now(&self) -> Ticks {
        Ticks::from_count(self.counter)
    }

    /// Moves the counter forward; earlier ticks are ignored.
    pub fn advance_to(&mut self, tick: u64) {
        self.counter = self.counter.max(tick);
    }

    pub fn registers(&self) -> &RegisterFile {
        &self.registers
    }

    pub fn registers_mut(&mut self) -> &mut RegisterFile {
        &mut self.registers
    }

    pub fn events(&self) -> &[ControllerEvent] {
        &self.events
    }

    pub fn emissions(&self) -> &[Emission] {
        &self.emissions
    }

    /// Queues `waveform` so its first sample leaves at exactly `tx_start`.
    pub fn schedule_tx(
        &mut self,
        waveform: IqBuffer,
        tx_start: Ticks,
    ) -> Result<usize, ControllerError> {
        if !tx_start.is_sample_aligned() {
            return Err(ControllerError::Misaligned(tx_start));
        }
        let now = self.counter_now();
        if tx_start < now {
            self.registers.set_bits(Register::Status, status::LATE);
            return Err(ControllerError::LateSchedule {
                requested: tx_start,
                now,
            });
        }
        if tx_start < self.busy_until {
            return Err(ControllerError::TxBusy {
                requested: tx_start,
                busy_until: self.busy_until,
            });
        }
        self.registers.write(Register::TxStart, tx_start.count());
        self.registers.set_bits(Register::Status, status::TX_ARMED);
        self.events.push(ControllerEvent::TxScheduled {
            tx_start,
            samples: waveform.len(),
        });
        let emission = Emission { tx_start, waveform };
        self.busy_until = emission.end();
        self.emissions.push(emission);
        Ok(self.emissions.len() - 1)
    }

    /// Removes and returns all queued emissions, marking them sent.
    pub fn drain_emissions(&mut self) -> Vec<Emission> {
        if let Some(last) = self.emissions.last() {
            self.counter = self.counter.max(last.end().count());
            self.registers
                .clear_bits(Register::Status, status::TX_ARMED);
            self.registers.set_bits(Register::Status, status::TX_DONE);
        }
        std::mem::take(&mut self.emissions)
    }

    /// DAC-side stream of `n_samples` starting at the sample-aligned tick
    /// `start`: zero except where queued emissions are active.
    pub fn output_stream(&self, start: Ticks, n_samples: usize, sample_rate: f64) -> IqBuffer {
        let mut out = vec![Complex64::new(0.0, 0.0); n_samples];
        let first = start.count() / TICKS_PER_SAMPLE;
        for e in &self.emissions {
            let e0 = e.tx_start.count() / TICKS_PER_SAMPLE;
            for (k, s) in e.waveform.samples().iter().enumerate() {
                let idx = e0 + k as u64;
                if idx >= first && idx < first + n_samples as u64 {
                    out[(idx - first) as usize] = *s;
                }
            }
        }
        IqBuffer::new(out, sample_rate)
    }

    /// Applies the trigger to an incoming stream whose first sample sits on
    /// tick `stream_start`, returning the capture. Samples are copied
    /// unmodified.
    pub fn run_rx(
        &mut self,
        stream: &IqBuffer,
        stream_start: Ticks,
        cfg: &RxTriggerConfig,
    ) -> Result<CaptureRecord, ControllerError> {
        cfg.validate()?;
        if !stream_start.is_sample_aligned() {
            return Err(ControllerError::Misaligned(stream_start));
        }
        let x = stream.samples();
        let offset = match cfg.mode {
            TriggerMode::Timestamp { rx_start } => {
                let d = rx_start
                    .checked_sub(stream_start)
                    .ok_or(ControllerError::NoTrigger)?;
                let idx = d.count() / TICKS_PER_SAMPLE;
                if idx >= x.len() as u64 {
                    return Err(self.no_trigger());
                }
                idx as usize
            }
            TriggerMode::Rssi { threshold, window } => {
                let hit = (0..x.len()).find(|&i| rssi_at(x, i, window) >= threshold);
                match hit {
                    Some(i) => i.saturating_sub(cfg.pretrigger),
                    None => return Err(self.no_trigger()),
                }
            }
        };
        let available = x.len() - offset;
        if available < cfg.capture_length {
            return Err(ControllerError::StreamTooShort {
                needed: cfg.capture_length,
                available,
            });
        }
        let ts_start = Ticks::from_count(
            stream_start
                .count()
                .checked_add(offset as u64 * TICKS_PER_SAMPLE)
                .ok_or(ControllerError::Overflow)?,
        );
        let samples = stream.slice(offset, cfg.capture_length);
        let end = ts_start.count() + cfg.capture_length as u64 * TICKS_PER_SAMPLE;
        self.counter = self.counter.max(end);
        self.registers.write(Register::TsStart, ts_start.count());
        self.registers.set_bits(Register::Status, status::RX_DONE);
        self.events.push(ControllerEvent::Captured {
            ts_start,
            samples: cfg.capture_length,
        });
        Ok(CaptureRecord {
            ts_start,
            samples,
            stream_offset: offset,
        })
    }

    fn no_trigger(&mut self) -> ControllerError {
        self.registers
            .set_bits(Register::Status, status::NO_TRIGGER);
        ControllerError::NoTrigger
    }
}
