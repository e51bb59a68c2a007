//! Monte Carlo trials over a bandwidth x length grid.

use super::scenario::{ExchangeRunner, ScenarioConfig};
use super::{derive_seed, ConfigError};
use crate::channel::SPEED_OF_LIGHT;
use crate::waveform::ChirpParams;
use log::{debug, warn};
use rayon::prelude::*;

/// Fraction of rejected trials above which a cell is flagged.
pub const DEFAULT_MAX_REJECTION_RATE: f64 = 0.1;

/// Statistics of one (bandwidth, length) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub bandwidth: f64,
    pub length: usize,
    /// Sample standard deviation of the ToF estimates, seconds.
    pub sigma_tof: f64,
    pub sigma_tof_cm: f64,
    pub mean_tof: f64,
    /// ToF Cramér-Rao bound for this cell, seconds.
    pub crlb_std: f64,
    /// Accepted trials.
    pub n: usize,
    pub rejected: usize,
}

impl SweepResult {
    pub fn trials(&self) -> usize {
        self.n + self.rejected
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.trials() == 0 {
            0.0
        } else {
            self.rejected as f64 / self.trials() as f64
        }
    }

    pub fn flagged(&self, max_rejection_rate: f64) -> bool {
        self.rejection_rate() > max_rejection_rate
    }
}

/// Mean and sample standard deviation (`n - 1`); the deviation is 0 below
/// two samples.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Seed of trial `i` in the cell `(bandwidth, length)`. Independent of the
/// other cells in the sweep, so a cell reproduces on its own.
pub fn trial_seed(rng_seed: u64, bandwidth: f64, length: usize, i: usize) -> u64 {
    let cell = bandwidth.to_bits() ^ (length as u64).rotate_left(32);
    derive_seed(rng_seed, cell, i as u64)
}

/// Runs `cfg.n_trials` exchanges in parallel. Trial order and results do
/// not depend on the thread count.
pub fn run_cell(cfg: &ScenarioConfig) -> Result<SweepResult, ConfigError> {
    let runner = ExchangeRunner::new(cfg)?;
    let bw = cfg.chirp.bandwidth();
    let len = cfg.chirp.length();
    let outcomes: Vec<Option<f64>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| match runner.run(trial_seed(cfg.rng_seed, bw, len, i)) {
            Ok(o) => Some(o.solution.tof.as_f64()),
            Err(e) => {
                debug!("B={bw} Hz, l={len}, trial {i} rejected: {e}");
                None
            }
        })
        .collect();
    let tofs: Vec<f64> = outcomes.iter().flatten().copied().collect();
    let rejected = outcomes.len() - tofs.len();
    let (mean_tof, sigma_tof) = mean_std(&tofs);
    let result = SweepResult {
        bandwidth: bw,
        length: len,
        sigma_tof,
        sigma_tof_cm: sigma_tof * SPEED_OF_LIGHT * 100.0,
        mean_tof,
        crlb_std: cfg.tof_crlb(),
        n: tofs.len(),
        rejected,
    };
    if result.flagged(DEFAULT_MAX_REJECTION_RATE) {
        warn!(
            "B={bw} Hz, l={len}: {rejected} of {} trials rejected",
            result.trials()
        );
    }
    Ok(result)
}

/// One cell per (bandwidth, length), ordered by length then bandwidth.
pub fn monte_carlo_sweep(
    base: &ScenarioConfig,
    bandwidths: &[f64],
    lengths: &[usize],
) -> Result<Vec<SweepResult>, ConfigError> {
    if bandwidths.is_empty() || lengths.is_empty() {
        return Err(ConfigError(
            "sweep needs at least one bandwidth and one length".into(),
        ));
    }
    let mut out = Vec::with_capacity(bandwidths.len() * lengths.len());
    for &length in lengths {
        for &bandwidth in bandwidths {
            let mut cfg = base.clone();
            cfg.chirp = ChirpParams::new(bandwidth, base.sample_rate(), length)
                .map_err(|e| ConfigError(e.to_string()))?;
            out.push(run_cell(&cfg)?);
        }
    }
    Ok(out)
}
