//! Monte-Carlo harness: single trials, RMSE and detection sweeps, threshold
//! calibration and objective cuts.
//!
//! Every random draw descends from one master seed. Per-trial seeds are
//! generated up front from a ChaCha stream keyed by the sweep cell, so the
//! results do not depend on execution order or thread count.

mod cut;
mod report;

pub use cut::{first_sidelobe, objective_cut, objective_cuts, CutKind, CutPoint, Sidelobe};
pub use report::{
    read_crb_csv, read_cut_csv, read_detection_csv, read_rmse_csv, write_crb_csv, write_cut_csv,
    write_detection_csv, write_rmse_csv,
};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::crb::{scenario_crb, CrbReport};
use crate::error::{Error, Result};
use crate::estimator::{angle_error_deg, Estimate, EstimateRecord, Processor, RefinementSettings};
use crate::exec::Execution;
use crate::forward::{noise_variance, sample_observation, synthesize_mean};
use crate::geometry::{doppler_to_velocity, scene_to_path, PathGeometry, PathParams, ScenarioConfig};
use crate::schedule::PhaseSchedule;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorSelection {
    Joint,
    Di,
    #[default]
    Both,
}

impl EstimatorSelection {
    pub fn joint(self) -> bool {
        matches!(self, EstimatorSelection::Joint | EstimatorSelection::Both)
    }

    pub fn di(self) -> bool {
        matches!(self, EstimatorSelection::Di | EstimatorSelection::Both)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Joint,
    Di,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::Joint => "joint",
            EstimatorKind::Di => "di",
        })
    }
}

/// Reduced waveform for quick runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskScale {
    pub subcarriers: usize,
    pub symbols: usize,
    pub trials: usize,
}

impl Default for DeskScale {
    fn default() -> Self {
        DeskScale {
            subcarriers: 256,
            symbols: 280,
            trials: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub powers_dbm: Vec<f64>,
    pub m_over_l: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    pub estimators: EstimatorSelection,
    /// False-alarm rates for detection sweeps.
    pub p_fa: Vec<f64>,
    /// Noise-only trials used to calibrate each threshold.
    pub noise_trials: usize,
    pub desk: Option<DeskScale>,
    /// Drop the noise entirely (sanity runs).
    pub noiseless: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            powers_dbm: default_powers(),
            m_over_l: vec![2, 5],
            trials: 1000,
            master_seed: 1,
            estimators: EstimatorSelection::Both,
            p_fa: vec![1e-2],
            noise_trials: 2000,
            desk: None,
            noiseless: false,
        }
    }
}

/// 15 to 35 dBm in 2.5 dB steps.
pub fn default_powers() -> Vec<f64> {
    (0..9).map(|i| 15.0 + 2.5 * i as f64).collect()
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("transmit powers must be finite".into()));
        }
        if self.m_over_l.iter().any(|m| *m == 0) {
            return Err(Error::Config("m_over_l entries must be positive".into()));
        }
        if self.p_fa.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::Config("p_fa entries must lie in (0, 1]".into()));
        }
        if let Some(d) = &self.desk {
            if d.subcarriers == 0 || d.symbols == 0 || d.trials == 0 {
                return Err(Error::Config("desk-scale sizes must be positive".into()));
            }
        }
        Ok(())
    }

    /// Trials per cell after the desk-scale override.
    pub fn trial_count(&self) -> usize {
        self.desk.as_ref().map_or(self.trials, |d| d.trials)
    }

    /// Scenario for one `M/L` with the desk-scale waveform applied.
    pub fn scenario(&self, base: &ScenarioConfig, m_over_l: usize) -> Result<ScenarioConfig> {
        let mut cfg = match &self.desk {
            Some(d) => base.with_waveform(d.subcarriers, d.symbols),
            None => base.clone(),
        };
        cfg.m_over_l = m_over_l;
        if m_over_l != base.m_over_l || self.desk.is_some() {
            cfg.beam_grid = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seeds for `count` trials of one sweep cell. `stream` separates cells.
pub fn trial_seeds(master: u64, stream: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    (0..count).map(|_| rng.random()).collect()
}

/// Stream id of a sweep cell.
pub fn cell_stream(purpose: u8, m_over_l: usize, power_index: usize) -> u64 {
    ((purpose as u64) << 56) | ((m_over_l as u64 & 0xFF_FFFF) << 32) | power_index as u64
}

pub const STREAM_RMSE: u8 = 1;
pub const STREAM_NOISE_ONLY: u8 = 2;
pub const STREAM_DETECTION: u8 = 3;
pub const STREAM_VALIDATION: u8 = 4;
pub const STREAM_SIMULATE: u8 = 5;

/// Everything about one `(scenario, M/L)` that does not change per trial.
#[derive(Clone, Debug)]
pub struct Setup {
    pub cfg: ScenarioConfig,
    pub schedule: PhaseSchedule,
    pub processor: Processor,
    pub truth: PathGeometry,
    /// Noiseless observation for `alpha = 1`.
    unit_mean: Array2<Complex64>,
    pub sigma2: f64,
}

impl Setup {
    pub fn new(cfg: &ScenarioConfig, settings: &RefinementSettings, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let truth = scene_to_path(cfg)?;
        let schedule = PhaseSchedule::scanning(cfg, truth.theta_br)?;
        let processor = Processor::with_execution(cfg, &schedule, settings, exec)?;
        let mut unit = truth.path;
        unit.alpha = Complex64::new(1.0, 0.0);
        let unit_mean = synthesize_mean(&unit, &schedule, cfg)?;
        Ok(Setup {
            cfg: cfg.clone(),
            schedule,
            processor,
            truth,
            unit_mean,
            sigma2: noise_variance(cfg),
        })
    }

    /// Channel-gain magnitude at a transmit power.
    pub fn gain_at(&self, power_dbm: f64) -> Result<f64> {
        Ok(scene_to_path(&self.cfg.with_power_dbm(power_dbm))?.path.alpha.norm())
    }

    pub fn crb_at(&self, power_dbm: f64) -> Result<CrbReport> {
        scenario_crb(&self.cfg.with_power_dbm(power_dbm), &self.schedule)
    }

    /// Observation for a trial: `alpha Ybar_1 + Z`.
    pub fn observation(&self, alpha: Complex64, seed: u64, noiseless: bool) -> Result<Array2<Complex64>> {
        let mean = self.unit_mean.mapv(|z| z * alpha);
        let s2 = if noiseless { 0.0 } else { self.sigma2 };
        Ok(sample_observation(&mean, s2, seed)?.y)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialOptions {
    pub estimators: EstimatorSelection,
    /// No target: `alpha = 0` (noise-only calibration runs).
    pub target_absent: bool,
    pub noiseless: bool,
}

/// Signed errors in output units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    pub range_m: f64,
    pub velocity_mps: f64,
    pub az_deg: f64,
    pub el_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialEstimate {
    pub record: EstimateRecord,
    pub errors: ParamErrors,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub power_dbm: f64,
    pub truth: PathParams,
    pub target_present: bool,
    pub joint: Option<TrialEstimate>,
    pub di: Option<TrialEstimate>,
}

impl TrialResult {
    pub fn estimate(&self, kind: EstimatorKind) -> Option<&TrialEstimate> {
        match kind {
            EstimatorKind::Joint => self.joint.as_ref(),
            EstimatorKind::Di => self.di.as_ref(),
        }
    }
}

fn summarize(setup: &Setup, est: &Estimate) -> TrialEstimate {
    let p = &setup.processor;
    let record = p.record(est);
    let t = &setup.truth;
    let (da, de) = angle_error_deg(est.eta_hat.theta, t.path.theta);
    TrialEstimate {
        errors: ParamErrors {
            range_m: record.range_m - t.d,
            velocity_mps: record.velocity_mps - doppler_to_velocity(t.path.nu, setup.cfg.wavelength),
            az_deg: da,
            el_deg: de,
        },
        converged: est.converged(),
        record,
    }
}

/// Gain and observation of one trial: random gain phase, fresh noise.
pub fn trial_input(
    setup: &Setup,
    seed: u64,
    power_dbm: f64,
    opts: &TrialOptions,
) -> Result<(Complex64, Array2<Complex64>)> {
    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed);
    phase_rng.set_stream(1);
    let phi = phase_rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let alpha = if opts.target_absent {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::from_polar(setup.gain_at(power_dbm)?, phi)
    };
    Ok((alpha, setup.observation(alpha, seed, opts.noiseless)?))
}

/// Runs the selected estimators on `y` and scores them against the truth.
pub fn evaluate_trial(
    setup: &Setup,
    seed: u64,
    power_dbm: f64,
    opts: &TrialOptions,
    alpha: Complex64,
    y: &Array2<Complex64>,
) -> Result<TrialResult> {
    let joint = if opts.estimators.joint() {
        Some(summarize(setup, &setup.processor.estimate(y)?))
    } else {
        None
    };
    let di = if opts.estimators.di() {
        Some(summarize(setup, &setup.processor.di_estimate(y)?))
    } else {
        None
    };
    let mut truth = setup.truth.path;
    truth.alpha = alpha;
    Ok(TrialResult {
        seed,
        power_dbm,
        truth,
        target_present: !opts.target_absent,
        joint,
        di,
    })
}

/// One Monte-Carlo trial.
pub fn run_trial(setup: &Setup, seed: u64, power_dbm: f64, opts: &TrialOptions) -> Result<TrialResult> {
    let (alpha, y) = trial_input(setup, seed, power_dbm, opts)?;
    evaluate_trial(setup, seed, power_dbm, opts, alpha, &y)
}

pub fn run_batch(
    setup: &Setup,
    seeds: &[u64],
    power_dbm: f64,
    opts: &TrialOptions,
    exec: Execution,
) -> Result<Vec<TrialResult>> {
    exec.map(seeds.len(), |i| run_trial(setup, seeds[i], power_dbm, opts))
        .into_iter()
        .collect()
}

/// Root-mean-square errors over all trials, outliers included.
pub fn rmse(results: &[TrialResult], kind: EstimatorKind) -> Option<ParamErrors> {
    let errs: Vec<&ParamErrors> = results.iter().filter_map(|r| r.estimate(kind)).map(|e| &e.errors).collect();
    if errs.is_empty() {
        return None;
    }
    let n = errs.len() as f64;
    let ms = |f: fn(&ParamErrors) -> f64| (errs.iter().map(|e| f(e).powi(2)).sum::<f64>() / n).sqrt();
    Some(ParamErrors {
        range_m: ms(|e| e.range_m),
        velocity_mps: ms(|e| e.velocity_mps),
        az_deg: ms(|e| e.az_deg),
        el_deg: ms(|e| e.el_deg),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub power_dbm: f64,
    pub m_over_l: usize,
    pub estimator: EstimatorKind,
    pub range_rmse_m: f64,
    pub velocity_rmse_mps: f64,
    pub az_rmse_deg: f64,
    pub el_rmse_deg: f64,
    pub crb_range_m: f64,
    pub crb_velocity_mps: f64,
    pub crb_az_deg: f64,
    pub crb_el_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRow {
    pub power_dbm: f64,
    pub p_fa: f64,
    pub estimator: EstimatorKind,
    pub p_d: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub version: String,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rmse: Vec<RmseRow>,
    pub detection: Vec<DetectionRow>,
    pub metadata: ReportMetadata,
}

/// Hash over everything that determines a sweep's output.
pub fn run_hash(cfg: &ScenarioConfig, settings: &RefinementSettings, sweep: &SweepConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("serializable"));
    h.update(serde_json::to_vec(settings).expect("serializable"));
    h.update(serde_json::to_vec(sweep).expect("serializable"));
    hex::encode(h.finalize())
}

fn metadata(cfg: &ScenarioConfig, settings: &RefinementSettings, sweep: &SweepConfig) -> ReportMetadata {
    ReportMetadata {
        config_hash: run_hash(cfg, settings, sweep),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: sweep.master_seed,
    }
}

fn kinds(sel: EstimatorSelection) -> Vec<EstimatorKind> {
    let mut v = Vec::new();
    if sel.joint() {
        v.push(EstimatorKind::Joint);
    }
    if sel.di() {
        v.push(EstimatorKind::Di);
    }
    v
}

/// RMSE versus power for every `M/L`, with the matching bounds.
pub fn rmse_sweep(
    base: &ScenarioConfig,
    settings: &RefinementSettings,
    sweep: &SweepConfig,
    exec: Execution,
) -> Result<SweepReport> {
    sweep.validate()?;
    let opts = TrialOptions {
        estimators: sweep.estimators,
        target_absent: false,
        noiseless: sweep.noiseless,
    };
    let mut rows = Vec::new();
    for &ml in &sweep.m_over_l {
        let cfg = sweep.scenario(base, ml)?;
        let setup = Setup::new(&cfg, settings, exec)?;
        for (pi, &p) in sweep.powers_dbm.iter().enumerate() {
            let seeds = trial_seeds(sweep.master_seed, cell_stream(STREAM_RMSE, ml, pi), sweep.trial_count());
            let results = run_batch(&setup, &seeds, p, &opts, exec)?;
            let crb = setup.crb_at(p)?;
            for kind in kinds(sweep.estimators) {
                let e = rmse(&results, kind).expect("estimator selected");
                log::info!("M/L={ml} P={p} dBm {kind}: range {:.4e} m, vel {:.4e} m/s, az {:.4e} deg, el {:.4e} deg", e.range_m, e.velocity_mps, e.az_deg, e.el_deg);
                rows.push(RmseRow {
                    power_dbm: p,
                    m_over_l: ml,
                    estimator: kind,
                    range_rmse_m: e.range_m,
                    velocity_rmse_mps: e.velocity_mps,
                    az_rmse_deg: e.az_deg,
                    el_rmse_deg: e.el_deg,
                    crb_range_m: crb.range_m,
                    crb_velocity_mps: crb.velocity_mps,
                    crb_az_deg: crb.az_deg,
                    crb_el_deg: crb.el_deg,
                });
            }
        }
    }
    Ok(SweepReport {
        rmse: rows,
        detection: Vec::new(),
        metadata: metadata(base, settings, sweep),
    })
}

/// Empirical `(1 - p_fa)` quantile: the `ceil(n p_fa)`-th largest statistic.
pub fn calibrate_threshold(noise_stats: &[f64], p_fa: f64) -> Result<f64> {
    if !(p_fa > 0.0 && p_fa <= 1.0) {
        return Err(Error::InvalidArgument(format!("p_fa must lie in (0, 1], got {p_fa}")));
    }
    let n = noise_stats.len();
    let expected = n as f64 * p_fa;
    if expected < 1.0 - 1e-9 {
        return Err(Error::InsufficientSamples {
            available: n,
            p_fa,
            required: (1.0 / p_fa).ceil() as usize,
        });
    }
    let k = ((expected - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = noise_stats.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("statistics are not NaN"));
    Ok(sorted[n - k])
}

/// Batch size below which a calibrated threshold is too noisy to use.
pub fn min_noise_trials(p_fa: f64) -> usize {
    (10.0 / p_fa).ceil() as usize
}

/// Fraction of statistics strictly above `gamma`.
pub fn exceedance(stats: &[f64], gamma: f64) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    stats.iter().filter(|s| **s > gamma).count() as f64 / stats.len() as f64
}

fn statistics(results: &[TrialResult], kind: EstimatorKind) -> Vec<f64> {
    results.iter().filter_map(|r| r.estimate(kind)).map(|e| e.record.statistic).collect()
}

/// Thresholds for one setup from a noise-only batch, per estimator and p_fa.
pub fn calibrate_setup(
    setup: &Setup,
    sweep: &SweepConfig,
    exec: Execution,
) -> Result<Vec<(EstimatorKind, f64, f64)>> {
    let need = sweep.p_fa.iter().map(|p| min_noise_trials(*p)).max().unwrap_or(1);
    if sweep.noise_trials < need {
        let p = sweep.p_fa.iter().cloned().fold(1.0, f64::min);
        return Err(Error::InsufficientSamples {
            available: sweep.noise_trials,
            p_fa: p,
            required: need,
        });
    }
    let opts = TrialOptions {
        estimators: sweep.estimators,
        target_absent: true,
        noiseless: false,
    };
    let seeds = trial_seeds(sweep.master_seed, cell_stream(STREAM_NOISE_ONLY, setup.cfg.m_over_l, 0), sweep.noise_trials);
    let h0 = run_batch(setup, &seeds, f64::NAN, &opts, exec)?;
    let mut out = Vec::new();
    for kind in kinds(sweep.estimators) {
        let stats = statistics(&h0, kind);
        for &p in &sweep.p_fa {
            out.push((kind, p, calibrate_threshold(&stats, p)?));
        }
    }
    Ok(out)
}

/// Detection probability per (power, p_fa, estimator).
pub fn detection_sweep(
    base: &ScenarioConfig,
    settings: &RefinementSettings,
    sweep: &SweepConfig,
    exec: Execution,
) -> Result<SweepReport> {
    sweep.validate()?;
    let opts = TrialOptions {
        estimators: sweep.estimators,
        target_absent: false,
        noiseless: false,
    };
    let mut rows = Vec::new();
    for &ml in &sweep.m_over_l {
        let cfg = sweep.scenario(base, ml)?;
        let setup = Setup::new(&cfg, settings, exec)?;
        let thresholds = calibrate_setup(&setup, sweep, exec)?;
        for (pi, &p) in sweep.powers_dbm.iter().enumerate() {
            let seeds = trial_seeds(sweep.master_seed, cell_stream(STREAM_DETECTION, ml, pi), sweep.trial_count());
            let results = run_batch(&setup, &seeds, p, &opts, exec)?;
            for &(kind, p_fa, gamma) in &thresholds {
                rows.push(DetectionRow {
                    power_dbm: p,
                    p_fa,
                    estimator: kind,
                    p_d: exceedance(&statistics(&results, kind), gamma),
                    gamma,
                });
            }
        }
    }
    Ok(SweepReport {
        rmse: Vec::new(),
        detection: rows,
        metadata: metadata(base, settings, sweep),
    })
}
