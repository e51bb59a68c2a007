//! One full two-node exchange through waveform, controller, channel, ToA
//! estimator, frame codec and solver.

use super::{derive_seed, ConfigError};
use crate::channel::{add_noise_with_variance, propagate, ChannelError, LinkParams, Snr};
use crate::clock::ClockParams;
use crate::controller::{
    ticks_to_local_seconds, ControllerError, RxTriggerConfig, Ticks, TimingController, TriggerMode,
    TICKS_PER_SAMPLE,
};
use crate::crlb::{toa_crlb_std, CrlbConfig};
use crate::iq::IqBuffer;
use crate::solver::{SolverConfig, SolverError, TwttMeasurement, TwttSolution, TwttSolver};
use crate::time::Seconds;
use crate::toa::{ToaConfig, ToaError, ToaEstimator};
use crate::waveform::{
    assemble_twtt_waveform, decode_frame, encode_frame, ChirpParams, SymbolConfig, TimestampFrame,
    WaveformError,
};
use num_complex::Complex64;
use std::fmt;
use thiserror::Error;

/// Receiver samples kept ahead of the propagated window, so the trigger and
/// the SNR estimate see some noise before the burst.
const LISTEN_LEAD: usize = 64;
/// Samples captured beyond the reply frame.
const CAPTURE_MARGIN: usize = 32;

pub mod frame_status {
    pub const RX_VALID: u8 = 1 << 0;
    pub const TX_VALID: u8 = 1 << 1;
    /// Bits 2..8 carry the measurement index modulo 64.
    pub const SEQ_SHIFT: u8 = 2;

    pub fn encode(index: u64) -> u8 {
        RX_VALID | TX_VALID | (((index % 64) as u8) << SEQ_SHIFT)
    }
}

/// Everything that defines one exchange.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub clock_a: ClockParams,
    pub clock_b: ClockParams,
    /// Forward link A to B; the reply uses [`LinkParams::reversed`].
    pub link: LinkParams,
    pub chirp: ChirpParams,
    /// Receive trigger of both nodes. `capture_length` of 0 selects
    /// [`ScenarioConfig::required_capture`].
    pub trigger: RxTriggerConfig,
    /// B's reply delay after its trigger ts_start, in rf_clk ticks.
    pub turnaround_ticks: u64,
    /// A's transmit spacing between measurements N and N+1, in ticks.
    pub interval_ticks: u64,
    /// A's transmit tick for measurement N.
    pub start_tick: u64,
    pub gap_samples: usize,
    pub samples_per_symbol: usize,
    pub toa: ToaConfig,
    pub skew_window: usize,
    pub n_trials: usize,
    pub rng_seed: u64,
}

pub const DEFAULT_SAMPLE_RATE: f64 = 61.44e6;

impl Default for ScenarioConfig {
    fn default() -> Self {
        let mut trigger = RxTriggerConfig::rssi(0.25, 4, 0);
        trigger.pretrigger = 32;
        ScenarioConfig {
            clock_a: ClockParams::new(1.0 + 5e-8, 2.5e-3).expect("valid default clock"),
            clock_b: ClockParams::new(1.0 - 5e-8, 1.7e-3).expect("valid default clock"),
            link: LinkParams {
                distance_m: 1.8,
                snr: Snr::Db(30.0),
                ..Default::default()
            },
            chirp: ChirpParams::new(36e6, DEFAULT_SAMPLE_RATE, 512).expect("valid default chirp"),
            trigger,
            turnaround_ticks: 1 << 14,
            interval_ticks: 1 << 17,
            start_tick: 1 << 27,
            gap_samples: crate::waveform::DEFAULT_GAP_SAMPLES,
            samples_per_symbol: SymbolConfig::DEFAULT_SAMPLES_PER_SYMBOL,
            toa: ToaConfig::default(),
            skew_window: 1,
            n_trials: 1000,
            rng_seed: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn sample_rate(&self) -> f64 {
        self.chirp.sample_rate()
    }

    pub fn rf_clock(&self) -> f64 {
        TICKS_PER_SAMPLE as f64 * self.sample_rate()
    }

    pub fn symbol_config(&self) -> SymbolConfig {
        SymbolConfig {
            samples_per_symbol: self.samples_per_symbol,
            sample_rate: self.sample_rate(),
        }
    }

    /// Samples needed to hold pretrigger, chirp, gap and frame.
    pub fn required_capture(&self) -> usize {
        self.trigger.pretrigger
            + self.chirp.length()
            + self.gap_samples
            + self.symbol_config().frame_samples()
            + CAPTURE_MARGIN
    }

    pub fn trigger_config(&self) -> RxTriggerConfig {
        let mut t = self.trigger;
        if t.capture_length == 0 {
            t.capture_length = self.required_capture();
        }
        t
    }

    pub fn turnaround_seconds(&self) -> f64 {
        self.turnaround_ticks as f64 / self.rf_clock()
    }

    pub fn interval_seconds(&self) -> f64 {
        self.interval_ticks as f64 / self.rf_clock()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.link
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        let trig = self.trigger_config();
        trig.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !matches!(trig.mode, TriggerMode::Rssi { .. }) {
            return Err(ConfigError(
                "exchanges need an RSSI trigger: arrival times are unknown to the receiver".into(),
            ));
        }
        if trig.capture_length < self.required_capture() {
            return Err(ConfigError(format!(
                "capture length {} is shorter than the {} samples a reply needs",
                trig.capture_length,
                self.required_capture()
            )));
        }
        if self.n_trials == 0 {
            return Err(ConfigError("n_trials must be at least 1".into()));
        }
        if self.samples_per_symbol == 0 {
            return Err(ConfigError("samples per symbol must be positive".into()));
        }
        for (name, v) in [
            ("turnaround", self.turnaround_ticks),
            ("interval", self.interval_ticks),
            ("start", self.start_tick),
        ] {
            if v % TICKS_PER_SAMPLE != 0 {
                return Err(ConfigError(format!(
                    "{name} tick {v} is not on a sample boundary"
                )));
            }
        }
        let capture_ticks = trig.capture_length as u64 * TICKS_PER_SAMPLE;
        if self.turnaround_ticks <= capture_ticks {
            return Err(ConfigError(format!(
                "turnaround of {} ticks does not cover the {} tick capture",
                self.turnaround_ticks, capture_ticks
            )));
        }
        if self.interval_ticks == 0 {
            return Err(ConfigError("measurement interval must be positive".into()));
        }
        if self.start_tick < (LISTEN_LEAD as u64 + 64) * TICKS_PER_SAMPLE {
            return Err(ConfigError(
                "start tick leaves no room before the first burst".into(),
            ));
        }
        if let Some(k) = self.toa.window_halfwidth {
            if k == 0 {
                return Err(ConfigError("sinc fit half-width must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Per-ToA Cramér-Rao bound at the configured SNR; 0 when noiseless.
    pub fn toa_crlb(&self) -> f64 {
        match self.link.snr {
            Snr::Noiseless => 0.0,
            Snr::Db(db) => toa_crlb_std(&CrlbConfig::new(self.chirp, db)),
        }
    }

    /// ToF bound with the skew contribution of the configured timing.
    pub fn tof_crlb(&self) -> f64 {
        crate::crlb::tof_crlb_std(
            self.toa_crlb(),
            self.turnaround_seconds(),
            self.interval_seconds(),
        )
    }

    /// Negative ToF clamp tolerance: three ToA bounds plus the interpolator
    /// bias allowance of 1e-3 samples.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            negative_tof_tolerance: Seconds::new(3.0 * self.toa_crlb() + 1e-3 / self.sample_rate()),
            skew_window: self.skew_window,
        }
    }

    /// B's reply for a given frame: `chirp | gap | frame`.
    pub fn reply_waveform(&self, frame: &TimestampFrame) -> Result<IqBuffer, WaveformError> {
        assemble_twtt_waveform(
            &self.chirp.generate(),
            &encode_frame(frame, &self.symbol_config()),
            self.gap_samples,
        )
    }
}

/// Where in the exchange something failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    ATransmit,
    ForwardChannel,
    BTrigger,
    BToa,
    BReply,
    ReverseChannel,
    ATrigger,
    AToa,
    FrameDecode,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::ATransmit => "A transmit",
            Stage::ForwardChannel => "A->B channel",
            Stage::BTrigger => "B trigger",
            Stage::BToa => "B ToA",
            Stage::BReply => "B reply",
            Stage::ReverseChannel => "B->A channel",
            Stage::ATrigger => "A trigger",
            Stage::AToa => "A ToA",
            Stage::FrameDecode => "frame decode",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Toa(#[from] ToaError),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error("status bits {got:#010b}, expected {expected:#010b}")]
    FrameStatus { got: u8, expected: u8 },
    #[error("decoded {field} differs from B's record")]
    FrameMismatch { field: &'static str },
    #[error("receiver window starts before local time zero")]
    NegativeLocalTime,
    #[error("timestamp outside the representable tick range")]
    TickRange,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExchangeError {
    #[error("measurement {measurement}, {stage}: {source}")]
    Stage {
        measurement: u64,
        stage: Stage,
        #[source]
        source: StageError,
    },
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
}

/// Exact values the noiseless model would produce for one measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementTruth {
    pub t_a_tx: Seconds,
    pub timestamps: TwttMeasurement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub measurements: [TwttMeasurement; 2],
    pub truth: [MeasurementTruth; 2],
    /// Solution for measurement N using the pair (N, N+1).
    pub solution: TwttSolution,
    /// Frames as B recorded them and as A decoded them.
    pub frames_sent: [TimestampFrame; 2],
    pub frames_decoded: [TimestampFrame; 2],
}

impl ExchangeOutcome {
    /// ToF in A's clock domain implied by the link geometry.
    pub fn true_tof(&self, cfg: &ScenarioConfig) -> Seconds {
        cfg.link.tof() * cfg.clock_a.alpha()
    }

    /// `tau_B - tau_A` at A's first transmission.
    pub fn true_offset(&self, cfg: &ScenarioConfig) -> Seconds {
        let t = self.truth[0].t_a_tx;
        cfg.clock_b.local_from_global(t) - cfg.clock_a.local_from_global(t)
    }
}

/// Pre-built per-configuration state shared by all trials.
#[derive(Debug, Clone)]
pub struct ExchangeRunner {
    cfg: ScenarioConfig,
    estimator: ToaEstimator,
    solver: TwttSolver,
    chirp: IqBuffer,
    trigger: RxTriggerConfig,
}

struct Received {
    ts_start: Ticks,
    capture: IqBuffer,
    lag: f64,
    toa: Ticks,
}

impl ExchangeRunner {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(ExchangeRunner {
            estimator: ToaEstimator::new(cfg.chirp, cfg.toa),
            solver: TwttSolver::new(cfg.solver_config()),
            chirp: cfg.chirp.generate(),
            trigger: cfg.trigger_config(),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    /// Runs measurements N and N+1 and solves for N.
    pub fn run(&self, trial_seed: u64) -> Result<ExchangeOutcome, ExchangeError> {
        let mut node_a = TimingController::new(0);
        let mut node_b = TimingController::new(0);
        let mut measurements = Vec::with_capacity(2);
        let mut truth = Vec::with_capacity(2);
        let mut sent = Vec::with_capacity(2);
        let mut decoded = Vec::with_capacity(2);
        for n in 0..2u64 {
            let (m, t, s, d) = self.measure(&mut node_a, &mut node_b, n, trial_seed)?;
            measurements.push(m);
            truth.push(t);
            sent.push(s);
            decoded.push(d);
        }
        let solution = self.solver.solve_pair(&measurements[0], &measurements[1])?;
        Ok(ExchangeOutcome {
            measurements: [measurements[0], measurements[1]],
            truth: [truth[0], truth[1]],
            solution,
            frames_sent: [sent[0], sent[1]],
            frames_decoded: [decoded[0], decoded[1]],
        })
    }

    fn measure(
        &self,
        node_a: &mut TimingController,
        node_b: &mut TimingController,
        n: u64,
        trial_seed: u64,
    ) -> Result<
        (
            TwttMeasurement,
            MeasurementTruth,
            TimestampFrame,
            TimestampFrame,
        ),
        ExchangeError,
    > {
        let cfg = &self.cfg;
        let f_rf = cfg.rf_clock();
        let fail = |stage: Stage| {
            move |e: StageError| ExchangeError::Stage {
                measurement: n,
                stage,
                source: e,
            }
        };

        // A: gated chirp transmission
        let a_tx = Ticks::from_count(cfg.start_tick + n * cfg.interval_ticks);
        node_a
            .schedule_tx(self.chirp.clone(), a_tx)
            .map_err(|e| fail(Stage::ATransmit)(e.into()))?;
        let burst = node_a.drain_emissions().remove(0);
        let tau_a_tx = ticks_to_local_seconds(a_tx, f_rf);
        let t_a_tx = cfg.clock_a.global_from_local(tau_a_tx);

        // A -> B
        let (stream, stream_start, arrival_b) = self
            .receive(
                &burst.waveform,
                t_a_tx,
                &cfg.clock_a,
                &cfg.clock_b,
                &cfg.link,
                derive_seed(trial_seed, 2 * n, 0),
            )
            .map_err(fail(Stage::ForwardChannel))?;
        let rx_b = self
            .capture_and_estimate(node_b, &stream, stream_start)
            .map_err(|(stage, e)| fail(if stage { Stage::BToa } else { Stage::BTrigger })(e))?;

        // B: reply at ts_start + turnaround carrying its two timestamps
        let b_tx = Ticks::from_count(rx_b.ts_start.count() + cfg.turnaround_ticks);
        let frame = TimestampFrame {
            status: frame_status::encode(n),
            tx_timestamp: b_tx.count(),
            rx_timestamp: rx_b.toa.raw(),
        };
        let reply = cfg
            .reply_waveform(&frame)
            .map_err(|e| fail(Stage::BReply)(e.into()))?;
        node_b
            .schedule_tx(reply, b_tx)
            .map_err(|e| fail(Stage::BReply)(e.into()))?;
        let reply = node_b.drain_emissions().remove(0);
        let tau_b_tx = ticks_to_local_seconds(b_tx, f_rf);
        let t_b_tx = cfg.clock_b.global_from_local(tau_b_tx);

        // B -> A
        let (stream, stream_start, arrival_a) = self
            .receive(
                &reply.waveform,
                t_b_tx,
                &cfg.clock_b,
                &cfg.clock_a,
                &cfg.link.reversed(),
                derive_seed(trial_seed, 2 * n + 1, 0),
            )
            .map_err(fail(Stage::ReverseChannel))?;
        let rx_a = self
            .capture_and_estimate(node_a, &stream, stream_start)
            .map_err(|(stage, e)| fail(if stage { Stage::AToa } else { Stage::ATrigger })(e))?;

        // A: decode B's timestamps from the frame behind the chirp
        let got = self
            .decode_reply(&rx_a, n)
            .map_err(fail(Stage::FrameDecode))?;
        if got.tx_timestamp != frame.tx_timestamp {
            return Err(fail(Stage::FrameDecode)(StageError::FrameMismatch {
                field: "TX timestamp",
            }));
        }
        if got.rx_timestamp != frame.rx_timestamp {
            return Err(fail(Stage::FrameDecode)(StageError::FrameMismatch {
                field: "RX timestamp",
            }));
        }

        let measurement = TwttMeasurement {
            tau_a_tx,
            tau_b_rx: ticks_to_local_seconds(Ticks::from_raw(got.rx_timestamp), f_rf),
            tau_b_tx: ticks_to_local_seconds(Ticks::from_count(got.tx_timestamp), f_rf),
            tau_a_rx: ticks_to_local_seconds(rx_a.toa, f_rf),
            index: n,
        };
        let truth = MeasurementTruth {
            t_a_tx,
            timestamps: TwttMeasurement {
                tau_a_tx,
                tau_b_rx: arrival_b,
                tau_b_tx,
                tau_a_rx: arrival_a,
                index: n,
            },
        };
        Ok((measurement, truth, frame, got))
    }

    /// Receiver-side stream: the propagated window with `LISTEN_LEAD`
    /// samples ahead, padded to hold a full capture, plus noise. Returns the
    /// stream, its first tick and the exact local arrival time.
    fn receive(
        &self,
        tx: &IqBuffer,
        t_tx: Seconds,
        clk_tx: &ClockParams,
        clk_rx: &ClockParams,
        link: &LinkParams,
        seed: u64,
    ) -> Result<(IqBuffer, Ticks, Seconds), StageError> {
        let clean = LinkParams {
            snr: Snr::Noiseless,
            ..*link
        };
        let rx = propagate(tx, t_tx, clk_tx, clk_rx, &clean, 0)?;
        let first = rx.first_index - LISTEN_LEAD as i64;
        if first < 0 {
            return Err(StageError::NegativeLocalTime);
        }
        let body = rx
            .samples
            .len()
            .max(self.trigger.capture_length + self.trigger.pretrigger);
        let mut samples = vec![Complex64::new(0.0, 0.0); LISTEN_LEAD];
        samples.extend_from_slice(rx.samples.samples());
        samples.resize(
            LISTEN_LEAD + body + CAPTURE_MARGIN,
            Complex64::new(0.0, 0.0),
        );
        let mut stream = IqBuffer::new(samples, tx.sample_rate());
        if let Some(var) = link.snr.noise_variance(tx.active_power()) {
            add_noise_with_variance(&mut stream, var, seed);
        }
        Ok((stream, Ticks::from_sample(first as u64), rx.arrival_local))
    }

    /// Trigger, capture and ToA. The error flag is true for ToA failures.
    fn capture_and_estimate(
        &self,
        node: &mut TimingController,
        stream: &IqBuffer,
        stream_start: Ticks,
    ) -> Result<Received, (bool, StageError)> {
        let cap = node
            .run_rx(stream, stream_start, &self.trigger)
            .map_err(|e| (false, e.into()))?;
        let est = self
            .estimator
            .estimate(&cap.samples, Seconds::ZERO)
            .map_err(|e| (true, e.into()))?;
        let toa = cap
            .ts_start
            .offset_by(est.lag_samples * TICKS_PER_SAMPLE as f64)
            .ok_or((true, StageError::TickRange))?;
        Ok(Received {
            ts_start: cap.ts_start,
            capture: cap.samples,
            lag: est.lag_samples,
            toa,
        })
    }

    fn decode_reply(&self, rx: &Received, n: u64) -> Result<TimestampFrame, StageError> {
        let sym = self.cfg.symbol_config();
        let start = rx.lag.round() as i64 + (self.cfg.chirp.length() + self.cfg.gap_samples) as i64;
        let len = sym.frame_samples();
        if start < 0 || start as usize + len > rx.capture.len() {
            return Err(WaveformError::InsufficientLength {
                needed: len,
                available: rx.capture.len().saturating_sub(start.max(0) as usize),
            }
            .into());
        }
        let frame = decode_frame(&rx.capture.slice(start as usize, len), &sym)?;
        let expected = frame_status::encode(n);
        if frame.status != expected {
            return Err(StageError::FrameStatus {
                got: frame.status,
                expected,
            });
        }
        Ok(frame)
    }
}

/// Convenience wrapper: validates `cfg` and runs one exchange.
pub fn run_exchange(cfg: &ScenarioConfig, trial_seed: u64) -> Result<ExchangeOutcome, RunError> {
    let runner = ExchangeRunner::new(cfg)?;
    Ok(runner.run(trial_seed)?)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Exchange(#[from] ExchangeError),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless() -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.link.snr = Snr::Noiseless;
        c
    }

    fn sample(cfg: &ScenarioConfig) -> f64 {
        1.0 / cfg.sample_rate()
    }

    #[test]
    fn null_channel_gives_zero_tof() {
        let mut c = noiseless();
        c.link.distance_m = 0.0;
        c.clock_a = ClockParams::new(1.0, 1e-3).unwrap();
        c.clock_b = ClockParams::new(1.0, 1.25e-3).unwrap();
        let o = run_exchange(&c, 1).unwrap();
        let tof = o.solution.tof.as_f64();
        assert!(tof.abs() < 1e-3 * sample(&c), "{tof}");
        let off = o.solution.offset.as_f64() - 0.25e-3;
        assert!(off.abs() < 1e-3 * sample(&c), "{off}");
    }

    #[test]
    fn ranges_one_point_eight_metres() {
        let c = ScenarioConfig::default();
        for seed in 0..5 {
            let o = run_exchange(&c, seed).unwrap();
            let d = o.solution.distance_m(c.link.c0);
            assert!((d - 1.8).abs() < 0.05, "seed {seed}: {d} m");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = ScenarioConfig::default();
        assert_eq!(run_exchange(&c, 42).unwrap(), run_exchange(&c, 42).unwrap());
        assert_ne!(
            run_exchange(&c, 42).unwrap().solution,
            run_exchange(&c, 43).unwrap().solution
        );
    }

    #[test]
    fn noiseless_timestamps_match_truth() {
        let c = noiseless();
        let o = run_exchange(&c, 0).unwrap();
        let tol = 1e-3 * sample(&c);
        for (m, t) in o.measurements.iter().zip(&o.truth) {
            let t = &t.timestamps;
            assert_eq!(m.tau_a_tx, t.tau_a_tx);
            assert_eq!(m.tau_b_tx, t.tau_b_tx);
            assert!((m.tau_b_rx - t.tau_b_rx).abs().as_f64() < tol);
            assert!((m.tau_a_rx - t.tau_a_rx).abs().as_f64() < tol);
        }
    }

    #[test]
    fn noiseless_solution_matches_truth() {
        let c = noiseless();
        let o = run_exchange(&c, 0).unwrap();
        let s = sample(&c);
        let true_skew = c.clock_b.alpha() / c.clock_a.alpha();
        assert!((o.solution.skew_ratio - true_skew).abs() < 1e-8);
        let tof_err = (o.solution.tof - o.true_tof(&c)).as_f64();
        // timing error plus the closed-form skew residual
        assert!(tof_err.abs() < 2e-3 * s, "{tof_err}");
        let off_err = (o.solution.offset - o.true_offset(&c)).as_f64();
        assert!(off_err.abs() < 2e-3 * s, "{off_err}");
    }

    #[test]
    fn frames_survive_twenty_db() {
        let mut c = ScenarioConfig::default();
        c.link.snr = Snr::Db(20.0);
        for seed in 0..20 {
            let o = run_exchange(&c, seed).unwrap();
            assert_eq!(o.frames_sent, o.frames_decoded);
        }
    }

    #[test]
    fn frame_status_bits() {
        let s = frame_status::encode(65);
        assert_eq!(s & frame_status::RX_VALID, frame_status::RX_VALID);
        assert_eq!(s & frame_status::TX_VALID, frame_status::TX_VALID);
        assert_eq!(s >> frame_status::SEQ_SHIFT, 1);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ScenarioConfig::default();
        c.trigger.mode = TriggerMode::Timestamp {
            rx_start: Ticks::ZERO,
        };
        assert!(matches!(run_exchange(&c, 0), Err(RunError::Config(_))));

        let mut c = ScenarioConfig::default();
        c.turnaround_ticks = 100;
        assert!(ExchangeRunner::new(&c).is_err());

        let mut c = ScenarioConfig::default();
        c.trigger.capture_length = 100;
        assert!(ExchangeRunner::new(&c).is_err());

        let mut c = ScenarioConfig::default();
        c.start_tick = 3;
        assert!(ExchangeRunner::new(&c).is_err());
    }

    #[test]
    fn hopeless_snr_is_rejected_with_context() {
        let mut c = ScenarioConfig::default();
        c.link.snr = Snr::Db(-30.0);
        let rejected = (0..10).filter(|&s| run_exchange(&c, s).is_err()).count();
        assert!(rejected >= 9, "{rejected}");
        let err = run_exchange(&c, 0).unwrap_err().to_string();
        assert!(err.contains("measurement"), "{err}");
    }

    #[test]
    fn reply_layout() {
        let c = ScenarioConfig::default();
        let f = TimestampFrame {
            status: 3,
            tx_timestamp: 1,
            rx_timestamp: 2,
        };
        let w = c.reply_waveform(&f).unwrap();
        assert_eq!(
            w.len(),
            c.chirp.length() + c.gap_samples + c.symbol_config().frame_samples()
        );
    }
}
