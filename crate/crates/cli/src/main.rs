use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use twtt_core::channel::Snr;
use twtt_core::controller::Ticks;
use twtt_core::crlb::crlb_table;
use twtt_core::harness::scenario::frame_status;
use twtt_core::harness::{
    emit_crlb, emit_results, monte_carlo_sweep, parse_config, ConfigError, ExchangeRunner,
    RunConfig,
};
use twtt_core::waveform::TimestampFrame;

const EXIT_CONFIG: u8 = 1;
const EXIT_REJECTED: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "twtt",
    version,
    about = "Two-way time transfer ranging simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one two-node exchange and print the solution.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Monte Carlo sweep over bandwidth x length; writes CSV and .dat files.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Cramér-Rao bound tables over the sweep axes.
    Crlb {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Dump B's assembled reply waveform (chirp, gap, frame).
    Waveform {
        #[command(flatten)]
        common: Common,
        /// Output file; `.cf32` selects binary I/Q, anything else text.
        #[arg(long, default_value = "twtt_waveform.dat")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` configuration file with dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Chirp bandwidth in Hz; a comma list sets the sweep axis.
    #[arg(long, value_delimiter = ',')]
    bandwidth: Vec<f64>,
    /// Chirp length in samples; a comma list sets the sweep axis.
    #[arg(long, value_delimiter = ',')]
    length: Vec<usize>,
    /// Monte Carlo trials per cell.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-sample SNR in dB.
    #[arg(long, allow_negative_numbers = true)]
    snr_db: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
                parse_config(&text)
                    .map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))?
            }
            None => RunConfig::default(),
        };
        if !self.bandwidth.is_empty() {
            cfg.bandwidths = self.bandwidth.clone();
        }
        if !self.length.is_empty() {
            cfg.lengths = self.length.clone();
        }
        let bw = self
            .bandwidth
            .first()
            .copied()
            .unwrap_or(cfg.scenario.chirp.bandwidth());
        let len = self
            .length
            .first()
            .copied()
            .unwrap_or(cfg.scenario.chirp.length());
        cfg.set_chirp(bw, len)?;
        if let Some(n) = self.trials {
            cfg.scenario.n_trials = n;
        }
        if let Some(s) = self.seed {
            cfg.scenario.rng_seed = s;
        }
        if let Some(db) = self.snr_db {
            cfg.scenario.link.snr = Snr::Db(db);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Failure {
    Config(ConfigError),
    Rejected(String),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let cfg = common.load()?;
    let s = &cfg.scenario;
    let runner = ExchangeRunner::new(s)?;
    let o = runner
        .run(s.rng_seed)
        .map_err(|e| Failure::Rejected(e.to_string()))?;
    let sol = &o.solution;
    println!("bandwidth_hz {}", s.chirp.bandwidth());
    println!("length {}", s.chirp.length());
    println!("skew_ratio {}", sol.skew_ratio);
    println!("tof_s {:e}", sol.tof.as_f64());
    println!("distance_m {}", sol.distance_m(s.link.c0));
    println!("offset_s {:e}", sol.offset.as_f64());
    println!("true_tof_s {:e}", o.true_tof(s).as_f64());
    println!("true_offset_s {:e}", o.true_offset(s).as_f64());
    if sol.tof_clamped {
        println!("note: small negative ToF clamped to zero");
    }
    Ok(())
}

fn cmd_sweep(common: &Common, out: &Path) -> Result<(), Failure> {
    let cfg = common.load()?;
    let results = monte_carlo_sweep(&cfg.scenario, &cfg.bandwidths, &cfg.lengths)?;
    let paths =
        emit_results(&results, out).with_context(|| format!("writing {}", out.display()))?;
    for r in &results {
        println!(
            "B={} Hz l={} sigma={:.4} cm crlb={:.4} cm n={} rejected={}",
            r.bandwidth,
            r.length,
            r.sigma_tof_cm,
            r.crlb_std * twtt_core::channel::SPEED_OF_LIGHT * 100.0,
            r.n,
            r.rejected
        );
    }
    for p in &paths {
        println!("wrote {}", p.display());
    }
    let flagged: Vec<String> = results
        .iter()
        .filter(|r| r.flagged(cfg.max_rejection_rate))
        .map(|r| {
            format!(
                "B={} Hz l={} ({:.1}%)",
                r.bandwidth,
                r.length,
                100.0 * r.rejection_rate()
            )
        })
        .collect();
    if !flagged.is_empty() {
        return Err(Failure::Rejected(format!(
            "rejection rate above {} in {}",
            cfg.max_rejection_rate,
            flagged.join(", ")
        )));
    }
    Ok(())
}

fn cmd_crlb(common: &Common, out: &Path) -> Result<(), Failure> {
    let cfg = common.load()?;
    let s = &cfg.scenario;
    let db = match s.link.snr {
        Snr::Db(db) => db,
        Snr::Noiseless => return Err(ConfigError("the bound needs a finite SNR".into()).into()),
    };
    let points = crlb_table(
        &cfg.bandwidths,
        &cfg.lengths,
        s.sample_rate(),
        db,
        cfg.crlb_convention,
        s.turnaround_seconds(),
        s.interval_seconds(),
    )
    .map_err(|e| ConfigError(e.to_string()))?;
    let paths = emit_crlb(&points, out).with_context(|| format!("writing {}", out.display()))?;
    for p in &points {
        println!(
            "B={} Hz l={} toa={:e} s tof={:e} s ({:.4} cm)",
            p.bandwidth,
            p.length,
            p.toa_std,
            p.tof_std,
            p.tof_cm()
        );
    }
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_waveform(common: &Common, out: &Path) -> Result<(), Failure> {
    let cfg = common.load()?;
    let s = &cfg.scenario;
    let frame = TimestampFrame {
        status: frame_status::encode(0),
        tx_timestamp: s.start_tick + s.turnaround_ticks,
        rx_timestamp: Ticks::from_count(s.start_tick).raw(),
    };
    let w = s
        .reply_waveform(&frame)
        .map_err(|e| ConfigError(e.to_string()))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    if out.extension().is_some_and(|e| e == "cf32") {
        w.write_cf32(file)
    } else {
        w.write_dat(file, 0.0)
    }
    .with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} samples to {}", w.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common),
        Command::Sweep { common, out } => cmd_sweep(common, out),
        Command::Crlb { common, out } => cmd_crlb(common, out),
        Command::Waveform { common, out } => cmd_waveform(common, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Rejected(msg)) => {
            eprintln!("rejected: {msg}");
            ExitCode::from(EXIT_REJECTED)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
