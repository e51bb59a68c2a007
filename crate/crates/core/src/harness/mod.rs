//! Scenario execution, Monte Carlo sweeps and result files.

pub mod config;
pub mod output;
pub mod scenario;
pub mod sweep;

pub use config::{parse_config, RunConfig};
pub use output::{emit_crlb, emit_results, parse_results_csv, OutputError, ResultRow};
pub use scenario::{
    run_exchange, ExchangeError, ExchangeOutcome, ExchangeRunner, RunError, ScenarioConfig, Stage,
};
pub use sweep::{monte_carlo_sweep, run_cell, SweepResult, DEFAULT_MAX_REJECTION_RATE};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("configuration error: {0}")]
pub struct ConfigError(pub String);

/// Independent 64-bit seed for `(stream, index)` under `base`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}
