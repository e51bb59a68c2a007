//! Flat `key = value` run configuration with dotted keys, e.g.
//!
//! ```text
//! chirp.bandwidth_hz = 36e6
//! chirp.length = 512
//! link.snr_db = 30
//! sweep.bandwidths_hz = [10e6, 20e6, 30e6, 36e6]
//! ```
//!
//! The syntax is TOML, so `[chirp]` tables work as well. Unknown keys are
//! errors.

use super::scenario::ScenarioConfig;
use super::sweep::DEFAULT_MAX_REJECTION_RATE;
use super::ConfigError;
use crate::channel::Snr;
use crate::clock::ClockParams;
use crate::controller::TriggerMode;
use crate::crlb::SnrConvention;
use crate::waveform::ChirpParams;
use std::collections::BTreeMap;
use toml::{Table, Value};

/// Everything a CLI invocation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub bandwidths: Vec<f64>,
    pub lengths: Vec<usize>,
    pub crlb_convention: SnrConvention,
    pub max_rejection_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: ScenarioConfig::default(),
            bandwidths: vec![10e6, 20e6, 30e6, 36e6],
            lengths: vec![256, 512, 1280],
            crlb_convention: SnrConvention::PerSample,
            max_rejection_rate: DEFAULT_MAX_REJECTION_RATE,
        }
    }
}

/// Every accepted key.
pub const KEYS: &[&str] = &[
    "clock_a.alpha",
    "clock_a.phi_s",
    "clock_b.alpha",
    "clock_b.phi_s",
    "link.distance_m",
    "link.carrier_hz",
    "link.cfo_hz",
    "link.phase_err_rad",
    "link.snr_db",
    "link.noiseless",
    "link.c0",
    "chirp.bandwidth_hz",
    "chirp.sample_rate_hz",
    "chirp.length",
    "trigger.rssi_threshold",
    "trigger.rssi_window",
    "trigger.pretrigger",
    "trigger.capture_length",
    "timing.turnaround_ticks",
    "timing.interval_ticks",
    "timing.start_tick",
    "waveform.gap_samples",
    "waveform.samples_per_symbol",
    "toa.threshold_ratio",
    "toa.window_halfwidth",
    "solver.skew_window",
    "run.trials",
    "run.seed",
    "run.max_rejection_rate",
    "sweep.bandwidths_hz",
    "sweep.lengths",
    "crlb.convention",
];

fn flatten(prefix: &str, table: &Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn float(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError(format!("{key}: expected a number, got {v}"))),
    }
}

fn unsigned(key: &str, v: &Value) -> Result<u64, ConfigError> {
    let bad = || ConfigError(format!("{key}: expected a non-negative integer, got {v}"));
    match v {
        Value::Integer(i) => u64::try_from(*i).map_err(|_| bad()),
        // 36e6-style literals for counts
        Value::Float(f) if f.fract() == 0.0 && *f >= 0.0 && *f < 2f64.powi(63) => Ok(*f as u64),
        _ => Err(bad()),
    }
}

fn usize_of(key: &str, v: &Value) -> Result<usize, ConfigError> {
    usize::try_from(unsigned(key, v)?).map_err(|_| ConfigError(format!("{key}: value too large")))
}

fn array<T>(
    key: &str,
    v: &Value,
    f: impl Fn(&str, &Value) -> Result<T, ConfigError>,
) -> Result<Vec<T>, ConfigError> {
    match v {
        Value::Array(items) if !items.is_empty() => items.iter().map(|x| f(key, x)).collect(),
        Value::Array(_) => Err(ConfigError(format!("{key}: list is empty"))),
        single => Ok(vec![f(key, single)?]),
    }
}

/// Parses a configuration file on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError(e.message().to_owned()))?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);

    let mut run = RunConfig::default();
    let s = &mut run.scenario;
    let (mut alpha_a, mut phi_a) = (s.clock_a.alpha(), s.clock_a.phi().as_f64());
    let (mut alpha_b, mut phi_b) = (s.clock_b.alpha(), s.clock_b.phi().as_f64());
    let (mut bw, mut fs, mut len) = (s.chirp.bandwidth(), s.chirp.sample_rate(), s.chirp.length());
    let TriggerMode::Rssi {
        mut threshold,
        mut window,
    } = s.trigger.mode
    else {
        unreachable!("default trigger is RSSI")
    };
    let mut snr_db = None;
    let mut noiseless = false;

    for (key, v) in &flat {
        let k = key.as_str();
        match k {
            "clock_a.alpha" => alpha_a = float(k, v)?,
            "clock_a.phi_s" => phi_a = float(k, v)?,
            "clock_b.alpha" => alpha_b = float(k, v)?,
            "clock_b.phi_s" => phi_b = float(k, v)?,
            "link.distance_m" => s.link.distance_m = float(k, v)?,
            "link.carrier_hz" => s.link.carrier_hz = float(k, v)?,
            "link.cfo_hz" => s.link.cfo_hz = float(k, v)?,
            "link.phase_err_rad" => s.link.phase_err_rad = float(k, v)?,
            "link.snr_db" => snr_db = Some(float(k, v)?),
            "link.noiseless" => {
                noiseless = v
                    .as_bool()
                    .ok_or_else(|| ConfigError(format!("{k}: expected true or false")))?
            }
            "link.c0" => s.link.c0 = float(k, v)?,
            "chirp.bandwidth_hz" => bw = float(k, v)?,
            "chirp.sample_rate_hz" => fs = float(k, v)?,
            "chirp.length" => len = usize_of(k, v)?,
            "trigger.rssi_threshold" => threshold = float(k, v)?,
            "trigger.rssi_window" => window = usize_of(k, v)?,
            "trigger.pretrigger" => s.trigger.pretrigger = usize_of(k, v)?,
            "trigger.capture_length" => s.trigger.capture_length = usize_of(k, v)?,
            "timing.turnaround_ticks" => s.turnaround_ticks = unsigned(k, v)?,
            "timing.interval_ticks" => s.interval_ticks = unsigned(k, v)?,
            "timing.start_tick" => s.start_tick = unsigned(k, v)?,
            "waveform.gap_samples" => s.gap_samples = usize_of(k, v)?,
            "waveform.samples_per_symbol" => s.samples_per_symbol = usize_of(k, v)?,
            "toa.threshold_ratio" => s.toa.threshold_ratio = float(k, v)?,
            "toa.window_halfwidth" => s.toa.window_halfwidth = Some(usize_of(k, v)?),
            "solver.skew_window" => s.skew_window = usize_of(k, v)?,
            "run.trials" => s.n_trials = usize_of(k, v)?,
            "run.seed" => s.rng_seed = unsigned(k, v)?,
            "run.max_rejection_rate" => run.max_rejection_rate = float(k, v)?,
            "sweep.bandwidths_hz" => run.bandwidths = array(k, v, float)?,
            "sweep.lengths" => run.lengths = array(k, v, usize_of)?,
            "crlb.convention" => {
                run.crlb_convention = match v.as_str() {
                    Some("per_sample") => SnrConvention::PerSample,
                    Some("post_integration") => SnrConvention::PostIntegration,
                    _ => {
                        return Err(ConfigError(format!(
                            "{k}: expected \"per_sample\" or \"post_integration\", got {v}"
                        )))
                    }
                }
            }
            _ => return Err(ConfigError(format!("unknown key {k:?}"))),
        }
    }

    let clock = |a, p| ClockParams::new(a, p).map_err(|e| ConfigError(e.to_string()));
    s.clock_a = clock(alpha_a, phi_a)?;
    s.clock_b = clock(alpha_b, phi_b)?;
    s.chirp = ChirpParams::new(bw, fs, len).map_err(|e| ConfigError(e.to_string()))?;
    s.trigger.mode = TriggerMode::Rssi { threshold, window };
    s.link.snr = match (noiseless, snr_db) {
        (true, Some(_)) => {
            return Err(ConfigError(
                "link.noiseless and link.snr_db are exclusive".into(),
            ))
        }
        (true, None) => Snr::Noiseless,
        (false, Some(db)) => Snr::Db(db),
        (false, None) => s.link.snr,
    };
    run.validate()?;
    Ok(run)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scenario.validate()?;
        if !(0.0..=1.0).contains(&self.max_rejection_rate) {
            return Err(ConfigError(format!(
                "run.max_rejection_rate must lie in [0, 1], got {}",
                self.max_rejection_rate
            )));
        }
        if self.bandwidths.is_empty() || self.lengths.is_empty() {
            return Err(ConfigError("sweep axes must not be empty".into()));
        }
        for &b in &self.bandwidths {
            ChirpParams::new(b, self.scenario.sample_rate(), self.scenario.chirp.length())
                .map_err(|e| ConfigError(format!("sweep.bandwidths_hz: {e}")))?;
        }
        for &l in &self.lengths {
            ChirpParams::new(
                self.scenario.chirp.bandwidth(),
                self.scenario.sample_rate(),
                l,
            )
            .map_err(|e| ConfigError(format!("sweep.lengths: {e}")))?;
        }
        Ok(())
    }

    /// Replaces the chirp with one of the given bandwidth and length.
    pub fn set_chirp(&mut self, bandwidth: f64, length: usize) -> Result<(), ConfigError> {
        self.scenario.chirp = ChirpParams::new(bandwidth, self.scenario.sample_rate(), length)
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
    }

    #[test]
    fn dotted_keys_and_tables_agree() {
        let flat = "chirp.bandwidth_hz = 20e6\nchirp.length = 1280\nlink.snr_db = 25\n";
        let tables = "[chirp]\nbandwidth_hz = 20e6\nlength = 1280\n[link]\nsnr_db = 25\n";
        let a = parse_config(flat).unwrap();
        assert_eq!(a, parse_config(tables).unwrap());
        assert_eq!(a.scenario.chirp.bandwidth(), 20e6);
        assert_eq!(a.scenario.chirp.length(), 1280);
        assert_eq!(a.scenario.link.snr, Snr::Db(25.0));
    }

    #[test]
    fn every_key_is_accepted() {
        let vals = |k: &str| match k {
            "link.noiseless" => "false".to_owned(),
            "crlb.convention" => "\"post_integration\"".to_owned(),
            "sweep.bandwidths_hz" => "[10e6, 36e6]".to_owned(),
            "sweep.lengths" => "[256, 1280]".to_owned(),
            "clock_a.alpha" | "clock_b.alpha" => "1.0".to_owned(),
            "clock_a.phi_s" | "clock_b.phi_s" => "1e-3".to_owned(),
            "chirp.bandwidth_hz" => "30e6".to_owned(),
            "chirp.sample_rate_hz" => "61.44e6".to_owned(),
            "chirp.length" => "512".to_owned(),
            "link.distance_m" => "3.0".to_owned(),
            "link.carrier_hz" => "2.4e9".to_owned(),
            "link.c0" => "299792458".to_owned(),
            "link.snr_db" => "30".to_owned(),
            "trigger.rssi_threshold" => "0.25".to_owned(),
            "trigger.rssi_window" => "4".to_owned(),
            "trigger.pretrigger" => "32".to_owned(),
            "trigger.capture_length" => "0".to_owned(),
            "timing.turnaround_ticks" => "16384".to_owned(),
            "timing.interval_ticks" => "131072".to_owned(),
            "timing.start_tick" => "134217728".to_owned(),
            "waveform.gap_samples" => "64".to_owned(),
            "waveform.samples_per_symbol" => "8".to_owned(),
            "toa.threshold_ratio" => "0.5".to_owned(),
            "toa.window_halfwidth" => "2".to_owned(),
            "solver.skew_window" => "1".to_owned(),
            "run.trials" => "10".to_owned(),
            "run.seed" => "99".to_owned(),
            "run.max_rejection_rate" => "0.2".to_owned(),
            _ => "0".to_owned(),
        };
        let text: String = KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", vals(k)))
            .collect();
        let c = parse_config(&text).unwrap();
        assert_eq!(c.lengths, [256, 1280]);
        assert_eq!(c.crlb_convention, SnrConvention::PostIntegration);
        assert_eq!(c.scenario.rng_seed, 99);
        assert_eq!(c.scenario.toa.window_halfwidth, Some(2));
        assert_eq!(c.max_rejection_rate, 0.2);
    }

    #[test]
    fn errors() {
        for bad in [
            "chirp.bandwith_hz = 1e6",
            "chirp.length = -5",
            "chirp.length = 12.5",
            "chirp.bandwidth_hz = \"wide\"",
            "chirp.bandwidth_hz = 90e6",
            "clock_a.alpha = -1",
            "link.noiseless = true\nlink.snr_db = 10",
            "run.trials = 0",
            "sweep.lengths = []",
            "crlb.convention = \"other\"",
            "timing.turnaround_ticks = 3",
            "trigger.capture_length = 10",
            "run.max_rejection_rate = 2",
            "not toml at all [",
        ] {
            assert!(parse_config(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn scalar_axis_is_a_one_element_list() {
        let c = parse_config("sweep.lengths = 512").unwrap();
        assert_eq!(c.lengths, [512]);
    }
}
