//! TOML run configuration with unit-suffixed quantities.
//!
//! ```toml
//! [scenario]
//! transmit_power = "30 dBm"
//! subcarrier_spacing = "120 kHz"
//! target_range = "10 m"
//! target_azimuth = "45 deg"
//!
//! [sweep]
//! powers = ["15 dBm", "25 dBm", "35 dBm"]
//! m_over_l = [2, 5]
//! trials = 1000
//!
//! [estimator]
//! angle_step = "1 deg"
//! ```
//!
//! Every key is optional; an empty file gives the reference scenario.
//! Dimensional values must carry a unit.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use ris_nlos::estimator::ascent::StepPolicy;
use ris_nlos::estimator::RefinementSettings;
use ris_nlos::experiments::{DeskScale, EstimatorSelection, SweepConfig};
use ris_nlos::geometry::{polar_position, AnglePair, RisGeometry, ScenarioConfig, Vec3};
use ris_nlos::units::SPEED_OF_LIGHT;

use crate::quantity::{parse_dbm, parse_quantity, Dimension};

/// Everything a run needs, fully resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub sweep: SweepConfig,
    pub estimator: RefinementSettings,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    scenario: Option<RawScenario>,
    sweep: Option<RawSweep>,
    estimator: Option<RawEstimator>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    wavelength: Option<String>,
    carrier_frequency: Option<String>,
    transmit_power: Option<String>,
    bs_gain: Option<String>,
    ris_patch_gain: Option<String>,
    rcs: Option<String>,
    subcarriers: Option<usize>,
    subcarrier_spacing: Option<String>,
    symbols: Option<usize>,
    m_over_l: Option<usize>,
    cyclic_prefix: Option<String>,
    noise_psd: Option<String>,
    noise_figure: Option<String>,
    ris_rows: Option<usize>,
    ris_cols: Option<usize>,
    ris_spacing: Option<String>,
    ris_position: Option<[String; 3]>,
    bs_range: Option<String>,
    bs_azimuth: Option<String>,
    bs_elevation: Option<String>,
    target_range: Option<String>,
    target_azimuth: Option<String>,
    target_elevation: Option<String>,
    target_velocity: Option<[String; 3]>,
    beam_grid: Option<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawDesk {
    Enabled(bool),
    Sizes {
        subcarriers: Option<usize>,
        symbols: Option<usize>,
        trials: Option<usize>,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    powers: Option<Vec<String>>,
    m_over_l: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    estimators: Option<EstimatorSelection>,
    p_fa: Option<Vec<f64>>,
    noise_trials: Option<usize>,
    desk: Option<RawDesk>,
    noiseless: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEstimator {
    angle_step: Option<String>,
    az_range: Option<[String; 2]>,
    el_range: Option<[String; 2]>,
    doppler_padding: Option<usize>,
    step_policy: Option<StepPolicy>,
    max_iterations: Option<usize>,
    max_sweeps: Option<usize>,
    tolerance: Option<f64>,
    fd_delay_bins: Option<f64>,
    fd_doppler_bins: Option<f64>,
    fd_angle: Option<String>,
    max_step: Option<f64>,
}

fn quantity(key: &str, text: &Option<String>, dim: Dimension) -> Result<Option<f64>> {
    text.as_deref()
        .map(|t| parse_quantity(t, dim).map_err(|e| anyhow!("{key}: {e}")))
        .transpose()
}

fn set(dst: &mut f64, key: &str, text: &Option<String>, dim: Dimension) -> Result<()> {
    if let Some(v) = quantity(key, text, dim)? {
        *dst = v;
    }
    Ok(())
}

fn vector(key: &str, v: &[String; 3], dim: Dimension) -> Result<Vec3> {
    let mut out = [0.0; 3];
    for (o, t) in out.iter_mut().zip(v) {
        *o = parse_quantity(t, dim).map_err(|e| anyhow!("{key}: {e}"))?;
    }
    Ok(out)
}

fn angle_range(key: &str, v: &[String; 2]) -> Result<(f64, f64)> {
    let p = |t: &String| parse_quantity(t, Dimension::Angle).map_err(|e| anyhow!("{key}: {e}"));
    Ok((p(&v[0])?, p(&v[1])?))
}

/// Direction and range of `p` seen from `origin`.
fn polar(origin: Vec3, p: Vec3) -> Result<(f64, f64, f64)> {
    let (a, r) = AnglePair::from_vector([p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]])?;
    Ok((r, a.az_deg(), a.el_deg()))
}

fn place(
    origin: Vec3,
    default: (f64, f64, f64),
    range: &Option<String>,
    az: &Option<String>,
    el: &Option<String>,
    who: &str,
) -> Result<Vec3> {
    let (mut r, mut a, mut e) = default;
    set(&mut r, &format!("scenario.{who}_range"), range, Dimension::Length)?;
    set(&mut a, &format!("scenario.{who}_azimuth"), az, Dimension::Angle)?;
    set(&mut e, &format!("scenario.{who}_elevation"), el, Dimension::Angle)?;
    if !(r > 0.0) {
        bail!("scenario.{who}_range must be positive");
    }
    let dir = AnglePair::from_degrees(a, e).with_context(|| format!("scenario.{who} direction"))?;
    Ok(polar_position(origin, r, dir))
}

fn scenario(raw: &RawScenario) -> Result<ScenarioConfig> {
    let d = ScenarioConfig::default();
    let mut c = d.clone();
    if raw.wavelength.is_some() && raw.carrier_frequency.is_some() {
        bail!("scenario: give either wavelength or carrier_frequency, not both");
    }
    set(&mut c.wavelength, "scenario.wavelength", &raw.wavelength, Dimension::Length)?;
    if let Some(f) = quantity("scenario.carrier_frequency", &raw.carrier_frequency, Dimension::Frequency)? {
        c.wavelength = SPEED_OF_LIGHT / f;
    }
    set(&mut c.transmit_power, "scenario.transmit_power", &raw.transmit_power, Dimension::Power)?;
    set(&mut c.bs_gain, "scenario.bs_gain", &raw.bs_gain, Dimension::Gain)?;
    set(&mut c.ris_patch_gain, "scenario.ris_patch_gain", &raw.ris_patch_gain, Dimension::Gain)?;
    set(&mut c.rcs, "scenario.rcs", &raw.rcs, Dimension::Area)?;
    set(&mut c.subcarrier_spacing, "scenario.subcarrier_spacing", &raw.subcarrier_spacing, Dimension::Frequency)?;
    // The cyclic prefix follows the symbol duration unless given explicitly.
    if raw.subcarrier_spacing.is_some() {
        c.cyclic_prefix = 1.0 / c.subcarrier_spacing / 14.0;
    }
    set(&mut c.cyclic_prefix, "scenario.cyclic_prefix", &raw.cyclic_prefix, Dimension::Time)?;
    set(&mut c.noise_psd, "scenario.noise_psd", &raw.noise_psd, Dimension::Density)?;
    set(&mut c.noise_figure, "scenario.noise_figure", &raw.noise_figure, Dimension::Gain)?;
    c.subcarriers = raw.subcarriers.unwrap_or(d.subcarriers);
    c.symbols = raw.symbols.unwrap_or(d.symbols);
    c.m_over_l = raw.m_over_l.unwrap_or(d.m_over_l);
    c.beam_grid = raw.beam_grid.map(|[a, e]| (a, e));

    let lambda_given = raw.wavelength.is_some() || raw.carrier_frequency.is_some();
    if lambda_given || raw.ris_spacing.is_some() || raw.ris_rows.is_some() || raw.ris_cols.is_some() {
        let mut spacing = c.wavelength / 4.0;
        set(&mut spacing, "scenario.ris_spacing", &raw.ris_spacing, Dimension::Length)?;
        c.ris = RisGeometry::uniform_rectangular(
            raw.ris_cols.unwrap_or(d.ris.cols),
            raw.ris_rows.unwrap_or(d.ris.rows),
            spacing,
        );
    }

    let moved = |keys: [&Option<String>; 3]| keys.iter().any(|k| k.is_some());
    if let Some(p) = &raw.ris_position {
        c.ris_position = vector("scenario.ris_position", p, Dimension::Length)?;
    }
    if raw.ris_position.is_some() || moved([&raw.bs_range, &raw.bs_azimuth, &raw.bs_elevation]) {
        let bs0 = polar(d.ris_position, d.bs_position)?;
        c.bs_position = place(c.ris_position, bs0, &raw.bs_range, &raw.bs_azimuth, &raw.bs_elevation, "bs")?;
    }
    if raw.ris_position.is_some() || moved([&raw.target_range, &raw.target_azimuth, &raw.target_elevation]) {
        let tg0 = polar(d.ris_position, d.target_position)?;
        c.target_position = place(
            c.ris_position,
            tg0,
            &raw.target_range,
            &raw.target_azimuth,
            &raw.target_elevation,
            "target",
        )?;
    }
    if let Some(v) = &raw.target_velocity {
        c.target_velocity = vector("scenario.target_velocity", v, Dimension::Speed)?;
    }
    c.validate().context("scenario")?;
    Ok(c)
}

fn sweep(raw: &RawSweep) -> Result<SweepConfig> {
    let mut s = SweepConfig::default();
    if let Some(p) = &raw.powers {
        s.powers_dbm = p
            .iter()
            .map(|t| parse_dbm(t).map_err(|e| anyhow!("sweep.powers: {e}")))
            .collect::<Result<_>>()?;
    }
    if let Some(m) = &raw.m_over_l {
        s.m_over_l = m.clone();
    }
    s.trials = raw.trials.unwrap_or(s.trials);
    s.master_seed = raw.seed.unwrap_or(s.master_seed);
    s.estimators = raw.estimators.unwrap_or(s.estimators);
    if let Some(p) = &raw.p_fa {
        s.p_fa = p.clone();
    }
    s.noise_trials = raw.noise_trials.unwrap_or(s.noise_trials);
    s.noiseless = raw.noiseless.unwrap_or(false);
    s.desk = match &raw.desk {
        None | Some(RawDesk::Enabled(false)) => None,
        Some(RawDesk::Enabled(true)) => Some(DeskScale::default()),
        Some(RawDesk::Sizes {
            subcarriers,
            symbols,
            trials,
        }) => {
            let d = DeskScale::default();
            Some(DeskScale {
                subcarriers: subcarriers.unwrap_or(d.subcarriers),
                symbols: symbols.unwrap_or(d.symbols),
                trials: trials.unwrap_or(d.trials),
            })
        }
    };
    s.validate().context("sweep")?;
    Ok(s)
}

fn estimator(raw: &RawEstimator) -> Result<RefinementSettings> {
    let mut e = RefinementSettings::default();
    set(&mut e.angle_step_deg, "estimator.angle_step", &raw.angle_step, Dimension::Angle)?;
    set(&mut e.fd_angle_deg, "estimator.fd_angle", &raw.fd_angle, Dimension::Angle)?;
    if let Some(r) = &raw.az_range {
        e.az_range_deg = angle_range("estimator.az_range", r)?;
    }
    if let Some(r) = &raw.el_range {
        e.el_range_deg = angle_range("estimator.el_range", r)?;
    }
    e.doppler_padding = raw.doppler_padding.unwrap_or(e.doppler_padding);
    e.step_policy = raw.step_policy.unwrap_or(e.step_policy);
    e.max_iterations = raw.max_iterations.unwrap_or(e.max_iterations);
    e.max_sweeps = raw.max_sweeps.unwrap_or(e.max_sweeps);
    e.tolerance = raw.tolerance.unwrap_or(e.tolerance);
    e.fd_delay_bins = raw.fd_delay_bins.unwrap_or(e.fd_delay_bins);
    e.fd_doppler_bins = raw.fd_doppler_bins.unwrap_or(e.fd_doppler_bins);
    e.max_step = raw.max_step.unwrap_or(e.max_step);
    e.validate().context("estimator")?;
    Ok(e)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawFile = toml::from_str(text).map_err(|e| anyhow!("{}", e.to_string().trim_end()))?;
    Ok(RunConfig {
        scenario: scenario(&raw.scenario.unwrap_or_default())?,
        sweep: sweep(&raw.sweep.unwrap_or_default())?,
        estimator: estimator(&raw.estimator.unwrap_or_default())?,
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config_str(&text).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        format!("{:#}", parse_config_str(text).unwrap_err())
    }

    #[test]
    fn empty_file_gives_reference_scenario() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.scenario.subcarriers, 1024);
        assert_eq!(c.scenario.symbols, 1120);
        assert_eq!(c.scenario.ris.n_elements(), 441);
    }

    #[test]
    fn spelled_out_defaults_round_trip() {
        let text = r#"
            [scenario]
            wavelength = "1.07 cm"
            transmit_power = "30 dBm"
            bs_gain = "18.06 dB"
            ris_patch_gain = "0 dB"
            rcs = "2 m2"
            subcarriers = 1024
            subcarrier_spacing = "120 kHz"
            symbols = 1120
            m_over_l = 2
            noise_psd = "-174 dBm/Hz"
            noise_figure = "8 dB"
            ris_rows = 21
            ris_cols = 21
            ris_position = ["0 m", "0 m", "0 m"]
            bs_range = "5 m"
            bs_azimuth = "135 deg"
            bs_elevation = "30 deg"
            target_range = "10 m"
            target_azimuth = "45 deg"
            target_elevation = "60 deg"
            target_velocity = ["30 mps", "0 mps", "30 mps"]
        "#;
        let c = parse_config_str(text).unwrap().scenario;
        let d = ScenarioConfig::default();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        assert!(close(c.transmit_power, 1.0));
        assert!(close(c.bs_gain, d.bs_gain));
        assert!(close(c.noise_psd, d.noise_psd));
        assert!(close(c.cyclic_prefix, d.cyclic_prefix));
        for i in 0..3 {
            assert!(close(c.bs_position[i], d.bs_position[i]));
            assert!(close(c.target_position[i], d.target_position[i]));
        }
        assert_eq!((c.ris.rows, c.ris.cols), (21, 21));
        assert!(close(c.ris.spacing, d.ris.spacing));
    }

    #[test]
    fn power_in_dbm() {
        let c = parse_config_str("[scenario]\ntransmit_power = \"30 dBm\"").unwrap();
        assert!((c.scenario.transmit_power - 1.0).abs() < 1e-12);
        let s = parse_config_str("[sweep]\npowers = [\"15 dBm\", \"1 W\"]").unwrap().sweep;
        assert!((s.powers_dbm[0] - 15.0).abs() < 1e-12 && (s.powers_dbm[1] - 30.0).abs() < 1e-12);
    }

    #[test]
    fn divisibility_error() {
        let e = err("[scenario]\nsymbols = 1000\nm_over_l = 7");
        assert!(e.contains("1000") && e.contains("not divisible by 7"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = err("[scenario]\nsubcarier_spacing = \"120 kHz\"");
        assert!(e.contains("subcarier_spacing"), "{e}");
        let e = err("[sweeps]\ntrials = 3");
        assert!(e.contains("sweeps"), "{e}");
        let e = err("[estimator]\nstep = \"1 deg\"");
        assert!(e.contains("step"), "{e}");
    }

    #[test]
    fn missing_units_are_rejected() {
        let e = err("[scenario]\ntransmit_power = \"30\"");
        assert!(e.contains("scenario.transmit_power") && e.contains("missing unit"), "{e}");
        let e = err("[scenario]\nsubcarrier_spacing = \"120 m\"");
        assert!(e.contains("not a frequency unit"), "{e}");
    }

    #[test]
    fn sweep_and_estimator_sections() {
        let text = r#"
            [sweep]
            m_over_l = [5]
            trials = 12
            seed = 99
            estimators = "joint"
            p_fa = [0.01, 0.001]
            noise_trials = 10000
            desk = { trials = 50 }

            [estimator]
            angle_step = "0.5 deg"
            az_range = ["-60 deg", "60 deg"]
            step_policy = "gradient"
        "#;
        let c = parse_config_str(text).unwrap();
        assert_eq!(c.sweep.m_over_l, vec![5]);
        assert_eq!(c.sweep.master_seed, 99);
        assert_eq!(c.sweep.estimators, EstimatorSelection::Joint);
        assert_eq!(c.sweep.desk, Some(DeskScale { trials: 50, ..DeskScale::default() }));
        assert_eq!(c.sweep.trial_count(), 50);
        assert_eq!(c.estimator.angle_step_deg, 0.5);
        assert_eq!(c.estimator.az_range_deg, (-60.0, 60.0));
        assert_eq!(c.estimator.step_policy, StepPolicy::Gradient);
        let c = parse_config_str("[sweep]\ndesk = true").unwrap();
        assert_eq!(c.sweep.desk, Some(DeskScale::default()));
        assert!(parse_config_str("[sweep]\ntrials = 0").is_err());
        assert!(parse_config_str("[estimator]\nangle_step = \"0 deg\"").is_err());
    }

    #[test]
    fn carrier_frequency_sets_wavelength() {
        let c = parse_config_str("[scenario]\ncarrier_frequency = \"28 GHz\"").unwrap().scenario;
        assert!((c.wavelength - SPEED_OF_LIGHT / 28e9).abs() < 1e-15);
        assert!((c.ris.spacing - c.wavelength / 4.0).abs() < 1e-15);
        assert!(parse_config_str("[scenario]\ncarrier_frequency = \"28 GHz\"\nwavelength = \"1 cm\"").is_err());
    }
}
