//! One-dimensional velocity cuts of the estimator objectives.

use serde::{Deserialize, Serialize};

use super::Setup;
use crate::error::{Error, Result};
use crate::estimator::RefinementSettings;
use crate::exec::Execution;
use crate::geometry::{doppler_to_velocity, velocity_to_doppler, ScenarioConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutKind {
    /// The full GLRT statistic at the true delay and angles.
    Full,
    /// The segment-wise delay-Doppler objective at the true delay.
    Segment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutPoint {
    pub velocity_mps: f64,
    pub value: f64,
    pub which: CutKind,
    pub m_over_l: usize,
}

/// Objective of the noiseless observation along `velocities`, scaled so the
/// largest sample is 1.
pub fn objective_cut(setup: &Setup, kind: CutKind, velocities: &[f64]) -> Result<Vec<f64>> {
    let truth = &setup.truth.path;
    let y = setup.observation(truth.alpha, 0, true)?;
    let nus: Vec<f64> = velocities
        .iter()
        .map(|v| velocity_to_doppler(*v, setup.cfg.wavelength))
        .collect();
    let p = &setup.processor;
    let mut vals = match kind {
        CutKind::Full => p.statistic_cut(&y, truth.tau, truth.theta, &nus)?,
        CutKind::Segment => p.delay_doppler_cut(&y, truth.tau, &nus)?,
    };
    let peak = vals.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        vals.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(vals)
}

/// Both cuts for every `M/L`, on `points` velocities spanning
/// `true velocity +- half_width`.
pub fn objective_cuts(
    base: &ScenarioConfig,
    settings: &RefinementSettings,
    m_over_l: &[usize],
    half_width_mps: f64,
    points: usize,
    exec: Execution,
) -> Result<Vec<CutPoint>> {
    if points < 2 || !(half_width_mps > 0.0) {
        return Err(Error::InvalidArgument("a cut needs at least two points and a positive width".into()));
    }
    let mut out = Vec::new();
    for &ml in m_over_l {
        let setup = Setup::new(&base.with_m_over_l(ml), settings, exec)?;
        let v0 = doppler_to_velocity(setup.truth.path.nu, setup.cfg.wavelength);
        let step = 2.0 * half_width_mps / (points - 1) as f64;
        let vel: Vec<f64> = (0..points).map(|i| v0 - half_width_mps + i as f64 * step).collect();
        for kind in [CutKind::Full, CutKind::Segment] {
            let vals = objective_cut(&setup, kind, &vel)?;
            out.extend(vel.iter().zip(vals).map(|(&velocity_mps, value)| CutPoint {
                velocity_mps,
                value,
                which: kind,
                m_over_l: ml,
            }));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidelobe {
    /// Signed distance from the main peak.
    pub offset_mps: f64,
    pub level: f64,
}

/// Nearest local maximum to the global peak that lies more than
/// `min_offset` away and reaches `min_level`. Ties in distance go to the
/// positive side.
pub fn first_sidelobe(velocities: &[f64], values: &[f64], min_offset: f64, min_level: f64) -> Option<Sidelobe> {
    let n = values.len().min(velocities.len());
    if n < 3 {
        return None;
    }
    let peak = (0..n).fold(0, |b, i| if values[i] > values[b] { i } else { b });
    let is_max = |i: usize| values[i] >= values[i - 1] && values[i] > values[i + 1];
    let ok = |i: usize| (velocities[i] - velocities[peak]).abs() > min_offset && values[i] >= min_level;
    let right = (peak + 1..n - 1).find(|&i| is_max(i) && ok(i));
    let left = (1..peak).rev().find(|&i| is_max(i) && ok(i));
    let pick = match (right, left) {
        (Some(r), Some(l)) => {
            if velocities[peak] - velocities[l] < velocities[r] - velocities[peak] {
                l
            } else {
                r
            }
        }
        (Some(r), None) => r,
        (None, Some(l)) => l,
        (None, None) => return None,
    };
    Some(Sidelobe {
        offset_mps: velocities[pick] - velocities[peak],
        level: values[pick],
    })
}
