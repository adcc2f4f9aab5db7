//! Command resolution, execution and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ris_nlos::crb::crb_curve;
use ris_nlos::exec::Execution;
use ris_nlos::experiments::{
    calibrate_setup, cell_stream, detection_sweep, evaluate_trial, objective_cuts, rmse_sweep, run_hash,
    trial_input, trial_seeds, write_crb_csv, write_cut_csv, write_detection_csv, write_rmse_csv,
    EstimatorKind, EstimatorSelection, Setup, TrialOptions, TrialResult, STREAM_SIMULATE,
};
use ris_nlos::forward::write_matrix_binary;
use ris_nlos::schedule::PhaseSchedule;
use ris_nlos::units::watts_to_dbm;

use crate::config::{parse_config, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ris-nlos", version, about = "RIS-aided NLoS OFDM radar: bounds, estimators and Monte-Carlo sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: CommonOpts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Joint,
    Di,
    Both,
}

impl From<EstimatorArg> for EstimatorSelection {
    fn from(a: EstimatorArg) -> Self {
        match a {
            EstimatorArg::Joint => EstimatorSelection::Joint,
            EstimatorArg::Di => EstimatorSelection::Di,
            EstimatorArg::Both => EstimatorSelection::Both,
        }
    }
}

/// Flags shared by every subcommand; they override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonOpts {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Symbols per phase profile (repeatable).
    #[arg(long = "ml", global = true)]
    pub ml: Vec<usize>,
    /// Transmit power in dBm (repeatable).
    #[arg(long = "power", global = true, allow_negative_numbers = true)]
    pub power: Vec<f64>,
    /// Monte-Carlo trials per cell.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Reduced waveform (N=256, M=280, 200 trials).
    #[arg(long, global = true)]
    pub desk: bool,
    #[arg(long, global = true, value_enum)]
    pub estimators: Option<EstimatorArg>,
    /// False-alarm rate (repeatable).
    #[arg(long = "p-fa", global = true)]
    pub p_fa: Vec<f64>,
    /// Noise-only trials for threshold calibration.
    #[arg(long, global = true)]
    pub noise_trials: Option<usize>,
    /// Drop the receiver noise.
    #[arg(long, global = true)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Cramer-Rao bounds versus transmit power.
    Crb,
    /// RMSE versus transmit power for both estimators.
    RmseSweep,
    /// Detection probability versus transmit power.
    DetectSweep,
    /// Velocity cuts of the full and segment-wise objectives.
    ObjectiveCut {
        /// Half width of the cut around the true velocity, m/s.
        #[arg(long, default_value_t = 40.0)]
        half_width: f64,
        #[arg(long, default_value_t = 8001)]
        points: usize,
    },
    /// One trial: observation, truth and estimates.
    Simulate,
    /// Detection thresholds from noise-only runs.
    Calibrate,
    /// Re-run the job recorded in a manifest.
    Replay { manifest: PathBuf },
}

/// A command with every parameter resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    Crb {
        m_over_l: Vec<usize>,
        powers_dbm: Vec<f64>,
    },
    RmseSweep,
    DetectSweep,
    ObjectiveCut {
        m_over_l: Vec<usize>,
        half_width_mps: f64,
        points: usize,
    },
    Simulate {
        m_over_l: usize,
        power_dbm: f64,
        seed: u64,
    },
    Calibrate,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Crb { .. } => "crb",
            Job::RmseSweep => "rmse-sweep",
            Job::DetectSweep => "detect-sweep",
            Job::ObjectiveCut { .. } => "objective-cut",
            Job::Simulate { .. } => "simulate",
            Job::Calibrate => "calibrate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_path: Option<PathBuf>,
    pub config: RunConfig,
    pub job: Job,
    pub master_seed: u64,
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

/// Config file (or defaults) with flag overrides applied.
pub fn resolve_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut c = match &opts.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    let s = &mut c.sweep;
    if let Some(seed) = opts.seed {
        s.master_seed = seed;
    }
    if !opts.ml.is_empty() {
        s.m_over_l = opts.ml.clone();
    }
    if !opts.power.is_empty() {
        s.powers_dbm = opts.power.clone();
    }
    if let Some(t) = opts.trials {
        s.trials = t;
    }
    if opts.desk && s.desk.is_none() {
        s.desk = Some(Default::default());
    }
    if let Some(t) = opts.trials {
        if let Some(d) = s.desk.as_mut() {
            d.trials = t;
        }
    }
    if let Some(e) = opts.estimators {
        s.estimators = e.into();
    }
    if !opts.p_fa.is_empty() {
        s.p_fa = opts.p_fa.clone();
    }
    if let Some(n) = opts.noise_trials {
        s.noise_trials = n;
    }
    s.noiseless |= opts.noiseless;
    s.validate()?;
    if let [ml] = opts.ml[..] {
        c.scenario = c.scenario.with_m_over_l(ml);
    }
    if let [p] = opts.power[..] {
        c.scenario = c.scenario.with_power_dbm(p);
    }
    c.scenario.validate()?;
    Ok(c)
}

pub fn resolve_job(cmd: &Command, opts: &CommonOpts, cfg: &RunConfig) -> Result<Job> {
    let scenario_ml = || if opts.ml.is_empty() { vec![cfg.scenario.m_over_l] } else { opts.ml.clone() };
    Ok(match cmd {
        Command::Crb => Job::Crb {
            m_over_l: scenario_ml(),
            powers_dbm: cfg.sweep.powers_dbm.clone(),
        },
        Command::RmseSweep => Job::RmseSweep,
        Command::DetectSweep => Job::DetectSweep,
        Command::ObjectiveCut { half_width, points } => Job::ObjectiveCut {
            m_over_l: cfg.sweep.m_over_l.clone(),
            half_width_mps: *half_width,
            points: *points,
        },
        Command::Simulate => {
            if opts.ml.len() > 1 || opts.power.len() > 1 {
                bail!("simulate takes at most one --ml and one --power");
            }
            Job::Simulate {
                m_over_l: cfg.scenario.m_over_l,
                power_dbm: watts_to_dbm(cfg.scenario.transmit_power),
                seed: cfg.sweep.master_seed,
            }
        }
        Command::Calibrate => Job::Calibrate,
        Command::Replay { .. } => bail!("replay is resolved from its manifest"),
    })
}

/// Files written so far; removed again if the run fails.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn remove_all(&self) {
        for name in &self.written {
            let _ = fs::remove_file(self.dir.join(name));
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SimulationDump {
    rows: usize,
    cols: usize,
    sigma2: f64,
    trial: TrialResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ThresholdRow {
    m_over_l: usize,
    estimator: EstimatorKind,
    p_fa: f64,
    gamma: f64,
    noise_trials: usize,
}

fn execute(job: &Job, cfg: &RunConfig, out: &mut Outputs, exec: Execution) -> Result<String> {
    let sc = &cfg.scenario;
    let sw = &cfg.sweep;
    let set = &cfg.estimator;
    Ok(match job {
        Job::Crb { m_over_l, powers_dbm } => {
            let mut parts = Vec::new();
            for &ml in m_over_l {
                let c = sc.with_m_over_l(ml);
                let (theta_br, _) = c.bs_direction()?;
                let sched = PhaseSchedule::scanning(&c, theta_br)?;
                let rows = crb_curve(&c, &sched, powers_dbm)?;
                let name = if m_over_l.len() == 1 { "crb.csv".to_string() } else { format!("crb_ml{ml}.csv") };
                write_crb_csv(&rows, &out.path(&name))?;
                if let Some(last) = rows.last() {
                    parts.push(format!(
                        "M/L={ml} at {} dBm: range {:.4e} m, velocity {:.4e} m/s, az {:.4e} deg, el {:.4e} deg",
                        last.power_dbm, last.range_crb_m, last.velocity_crb_mps, last.az_crb_deg, last.el_crb_deg
                    ));
                }
            }
            format!("crb: {} power points; {}", powers_dbm.len(), parts.join("; "))
        }
        Job::RmseSweep => {
            let r = rmse_sweep(sc, set, sw, exec)?;
            write_rmse_csv(&r.rmse, &out.path("rmse.csv"))?;
            format!("rmse-sweep: {} rows, {} trials per cell", r.rmse.len(), sw.trial_count())
        }
        Job::DetectSweep => {
            let r = detection_sweep(sc, set, sw, exec)?;
            write_detection_csv(&r.detection, &out.path("detection.csv"))?;
            format!("detect-sweep: {} rows, {} trials per cell", r.detection.len(), sw.trial_count())
        }
        Job::ObjectiveCut {
            m_over_l,
            half_width_mps,
            points,
        } => {
            let rows = objective_cuts(sc, set, m_over_l, *half_width_mps, *points, exec)?;
            write_cut_csv(&rows, &out.path("objective_cut.csv"))?;
            format!("objective-cut: {} curves of {points} points", 2 * m_over_l.len())
        }
        Job::Simulate {
            m_over_l,
            power_dbm,
            seed,
        } => {
            let mut c = sw.scenario(sc, *m_over_l)?;
            c = c.with_power_dbm(*power_dbm);
            let setup = Setup::new(&c, set, exec)?;
            let opts = TrialOptions {
                estimators: sw.estimators,
                target_absent: false,
                noiseless: sw.noiseless,
            };
            let trial_seed = trial_seeds(*seed, cell_stream(STREAM_SIMULATE, *m_over_l, 0), 1)[0];
            let (alpha, y) = trial_input(&setup, trial_seed, *power_dbm, &opts)?;
            let trial = evaluate_trial(&setup, trial_seed, *power_dbm, &opts, alpha, &y)?;
            write_matrix_binary(&y, &out.path("observation.bin"))?;
            let dump = SimulationDump {
                rows: y.nrows(),
                cols: y.ncols(),
                sigma2: if sw.noiseless { 0.0 } else { setup.sigma2 },
                trial,
            };
            fs::write(out.path("trial.json"), serde_json::to_string_pretty(&dump)?)?;
            let j = dump.trial.joint.as_ref().or(dump.trial.di.as_ref()).map(|e| e.errors);
            match j {
                Some(e) => format!(
                    "simulate: {}x{} observation, errors range {:.3e} m, velocity {:.3e} m/s, az {:.3e} deg, el {:.3e} deg",
                    dump.rows, dump.cols, e.range_m, e.velocity_mps, e.az_deg, e.el_deg
                ),
                None => format!("simulate: {}x{} observation", dump.rows, dump.cols),
            }
        }
        Job::Calibrate => {
            let mut rows = Vec::new();
            for &ml in &sw.m_over_l {
                let setup = Setup::new(&sw.scenario(sc, ml)?, set, exec)?;
                for (estimator, p_fa, gamma) in calibrate_setup(&setup, sw, exec)? {
                    rows.push(ThresholdRow {
                        m_over_l: ml,
                        estimator,
                        p_fa,
                        gamma,
                        noise_trials: sw.noise_trials,
                    });
                }
            }
            let path = out.path("thresholds.csv");
            let mut w = csv_writer(&path)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
            format!("calibrate: {} thresholds from {} noise-only trials", rows.len(), sw.noise_trials)
        }
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Runs a job, writes its manifest, and returns the summary line.
/// On failure every file this run wrote is removed.
pub fn run_job(job: &Job, cfg: &RunConfig, config_path: Option<PathBuf>, out_dir: &Path, exec: Execution) -> Result<String> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut out = Outputs {
        dir: out_dir.to_path_buf(),
        written: Vec::new(),
    };
    let result = execute(job, cfg, &mut out, exec).and_then(|summary| {
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path,
            config: cfg.clone(),
            job: job.clone(),
            master_seed: cfg.sweep.master_seed,
            config_hash: run_hash(&cfg.scenario, &cfg.estimator, &cfg.sweep),
            output_dir: out_dir.to_path_buf(),
            outputs: out.written.clone(),
        };
        let path = out.path("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(summary)
    });
    if result.is_err() {
        out.remove_all();
    }
    result
}

/// Entry point behind `main`.
pub fn run(cli: &Cli, exec: Execution) -> Result<String> {
    if let Command::Replay { manifest } = &cli.command {
        let m = RunManifest::read(manifest)?;
        return run_job(&m.job, &m.config, m.config_path.clone(), &cli.opts.out, exec);
    }
    let cfg = resolve_config(&cli.opts)?;
    let job = resolve_job(&cli.command, &cli.opts, &cfg)?;
    run_job(&job, &cfg, cli.opts.config.clone(), &cli.opts.out, exec)
}
