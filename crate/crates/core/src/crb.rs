//! Fisher information and Cramer-Rao bounds for `(alpha, tau, nu, theta)`.
//!
//! Real parameter order: `[Re alpha, Im alpha, tau, nu, az, el]`. Noise is
//! circular complex Gaussian with known per-entry variance `sigma2`, so
//! `FIM = (2 / sigma2) Re(J^H J)` with `J = d vec(Ybar) / d eta`.

use std::f64::consts::PI;

use nalgebra::{Matrix6, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::noise_variance;
use crate::geometry::{
    combined_steering, delay_steering, doppler_steering, scene_to_path, AnglePair, PathParams,
    ScenarioConfig,
};
use crate::schedule::PhaseSchedule;
use crate::units::{deg, dbm_to_watts, SPEED_OF_LIGHT};

pub const PARAM_NAMES: [&str; 6] = ["re_alpha", "im_alpha", "tau", "nu", "az", "el"];

const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Rank-one factors of each Jacobian column: column `k` of `J` is
/// `scale[k] * vec(col[k] row[k]^T)`.
struct Factors {
    scale: [Complex64; 6],
    col: [Vec<Complex64>; 6],
    row: [Vec<Complex64>; 6],
}

/// `(g, dg/daz, dg/del)` over slow time for a generic schedule.
fn gain_and_derivatives(
    theta: AnglePair,
    sched: &PhaseSchedule,
    theta_br: AnglePair,
    cfg: &ScenarioConfig,
) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
    let b = combined_steering(theta, theta_br, &cfg.ris, cfg.wavelength);
    let k = 2.0 * PI / cfg.wavelength;
    let (sa, ca) = theta.az.sin_cos();
    let (se, ce) = theta.el.sin_cos();
    // Phase derivatives of a_i(theta) along az and el.
    let daz: Vec<f64> = cfg.ris.positions.iter().map(|p| k * ce * (-sa * p[0] + ca * p[1])).collect();
    let del: Vec<f64> = cfg.ris.positions.iter().map(|p| -k * se * (ca * p[0] + sa * p[1])).collect();
    let per_profile: Vec<(Complex64, Complex64, Complex64)> = sched
        .profiles()
        .iter()
        .map(|p| {
            let mut s = Complex64::new(0.0, 0.0);
            let mut sa = Complex64::new(0.0, 0.0);
            let mut se = Complex64::new(0.0, 0.0);
            for i in 0..b.len() {
                let t = b[i] * p.weights[i];
                s += t;
                sa += J * daz[i] * t;
                se += J * del[i] * t;
            }
            (s * s, 2.0 * s * sa, 2.0 * s * se)
        })
        .collect();
    let reps = sched.reps();
    let m = sched.symbols();
    let g = (0..m).map(|i| per_profile[i / reps].0).collect();
    let ga = (0..m).map(|i| per_profile[i / reps].1).collect();
    let ge = (0..m).map(|i| per_profile[i / reps].2).collect();
    (g, ga, ge)
}

fn factors(eta: &PathParams, sched: &PhaseSchedule, cfg: &ScenarioConfig) -> Result<Factors> {
    let (theta_br, _) = cfg.bs_direction()?;
    let n = cfg.subcarriers;
    let ts = cfg.block_duration();
    let c = delay_steering(eta.tau, n, cfg.subcarrier_spacing);
    let d = doppler_steering(eta.nu, sched.symbols(), ts);
    let (g, ga, ge) = gain_and_derivatives(eta.theta, sched, theta_br, cfg);
    let h: Vec<Complex64> = d.iter().zip(&g).map(|(a, b)| a * b).collect();
    let c_tau: Vec<Complex64> = c
        .iter()
        .enumerate()
        .map(|(i, z)| z * (-J * 2.0 * PI * i as f64 * cfg.subcarrier_spacing))
        .collect();
    let h_nu: Vec<Complex64> = h
        .iter()
        .enumerate()
        .map(|(m, z)| z * (J * 2.0 * PI * m as f64 * ts))
        .collect();
    let h_az = d.iter().zip(&ga).map(|(a, b)| a * b).collect();
    let h_el = d.iter().zip(&ge).map(|(a, b)| a * b).collect();
    let a = eta.alpha;
    Ok(Factors {
        scale: [Complex64::new(1.0, 0.0), J, a, a, a, a],
        col: [c.clone(), c.clone(), c_tau, c.clone(), c.clone(), c],
        row: [h.clone(), h.clone(), h.clone(), h_nu, h_az, h_el],
    })
}

/// Full `NM x 6` Jacobian of `vec(Ybar)` (row-major: entry `n M + m`).
pub fn mean_jacobian(eta: &PathParams, sched: &PhaseSchedule, cfg: &ScenarioConfig) -> Result<Array2<Complex64>> {
    let f = factors(eta, sched, cfg)?;
    let (n, m) = (cfg.subcarriers, sched.symbols());
    let mut jac = Array2::zeros((n * m, 6));
    for k in 0..6 {
        for i in 0..n {
            let s = f.scale[k] * f.col[k][i];
            for j in 0..m {
                jac[[i * m + j, k]] = s * f.row[k][j];
            }
        }
    }
    Ok(jac)
}

/// `(2 / sigma2) Re(J^H J)`.
pub fn fisher_information(jac: &Array2<Complex64>, sigma2: f64) -> Result<Matrix6<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    if jac.ncols() != 6 {
        return Err(Error::Dimension {
            expected: "6 Jacobian columns".into(),
            actual: jac.ncols().to_string(),
        });
    }
    let mut fim = Matrix6::zeros();
    for a in 0..6 {
        for b in a..6 {
            let s: Complex64 = jac.column(a).iter().zip(jac.column(b)).map(|(x, y)| x.conj() * y).sum();
            fim[(a, b)] = 2.0 / sigma2 * s.re;
            fim[(b, a)] = fim[(a, b)];
        }
    }
    Ok(fim)
}

/// Same matrix as `fisher_information(mean_jacobian(..))` using the
/// rank-one structure: `<s1 c1 h1^T, s2 c2 h2^T> = conj(s1) s2 (c1^H c2)(h1^H h2)`.
pub fn fisher_information_factored(
    eta: &PathParams,
    sched: &PhaseSchedule,
    cfg: &ScenarioConfig,
    sigma2: f64,
) -> Result<Matrix6<f64>> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {sigma2}")));
    }
    let f = factors(eta, sched, cfg)?;
    let dot = |x: &[Complex64], y: &[Complex64]| -> Complex64 { x.iter().zip(y).map(|(a, b)| a.conj() * b).sum() };
    let mut fim = Matrix6::zeros();
    for a in 0..6 {
        for b in a..6 {
            let v = f.scale[a].conj() * f.scale[b] * dot(&f.col[a], &f.col[b]) * dot(&f.row[a], &f.row[b]);
            fim[(a, b)] = 2.0 / sigma2 * v.re;
            fim[(b, a)] = fim[(a, b)];
        }
    }
    Ok(fim)
}

/// Inverted Fisher information and bounds in output units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    pub fim: [[f64; 6]; 6],
    /// Variance bounds in parameter units `[.., s^2, Hz^2, rad^2, rad^2]`.
    pub crb_diag: [f64; 6],
    pub range_m: f64,
    pub velocity_mps: f64,
    pub az_deg: f64,
    pub el_deg: f64,
    /// Condition number of the diagonally normalized FIM.
    pub condition: f64,
}

/// Normalized eigenvalue floor below which the FIM counts as singular.
const SINGULAR_FLOOR: f64 = 1e-12;

pub fn crb_report(fim: &Matrix6<f64>, wavelength: f64) -> Result<CrbReport> {
    let d: Vec<f64> = (0..6).map(|i| fim[(i, i)]).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::SingularFisher {
            condition: f64::INFINITY,
            min_eigenvalue: d.iter().cloned().fold(f64::INFINITY, f64::min),
        });
    }
    let s: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let norm = Matrix6::from_fn(|i, j| fim[(i, j)] / (s[i] * s[j]));
    let eig = SymmetricEigen::new(norm);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(min > SINGULAR_FLOOR * max) {
        return Err(Error::SingularFisher {
            condition,
            min_eigenvalue: min / max,
        });
    }
    let inv_norm = norm.cholesky().ok_or(Error::SingularFisher {
        condition,
        min_eigenvalue: min / max,
    })?;
    let inv = inv_norm.inverse();
    let mut crb_diag = [0.0; 6];
    for i in 0..6 {
        crb_diag[i] = inv[(i, i)] / (s[i] * s[i]);
    }
    let mut out = [[0.0; 6]; 6];
    for i in 0..6 {
        for j in 0..6 {
            out[i][j] = fim[(i, j)];
        }
    }
    Ok(CrbReport {
        fim: out,
        crb_diag,
        range_m: SPEED_OF_LIGHT / 2.0 * crb_diag[2].sqrt(),
        velocity_mps: wavelength / 2.0 * crb_diag[3].sqrt(),
        az_deg: deg(crb_diag[4].sqrt()),
        el_deg: deg(crb_diag[5].sqrt()),
        condition,
    })
}

/// Bounds for the scenario's own target, schedule and noise level.
pub fn scenario_crb(cfg: &ScenarioConfig, sched: &PhaseSchedule) -> Result<CrbReport> {
    let geo = scene_to_path(cfg)?;
    let fim = fisher_information_factored(&geo.path, sched, cfg, noise_variance(cfg))?;
    crb_report(&fim, cfg.wavelength)
}

/// One row of a bound-versus-power curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrbPoint {
    pub power_dbm: f64,
    pub range_crb_m: f64,
    pub velocity_crb_mps: f64,
    pub az_crb_deg: f64,
    pub el_crb_deg: f64,
}

/// Bounds across transmit powers; the schedule does not depend on power.
pub fn crb_curve(cfg: &ScenarioConfig, sched: &PhaseSchedule, powers_dbm: &[f64]) -> Result<Vec<CrbPoint>> {
    powers_dbm
        .iter()
        .map(|&p| {
            let c = ScenarioConfig {
                transmit_power: dbm_to_watts(p),
                ..cfg.clone()
            };
            let r = scenario_crb(&c, sched)?;
            Ok(CrbPoint {
                power_dbm: p,
                range_crb_m: r.range_m,
                velocity_crb_mps: r.velocity_mps,
                az_crb_deg: r.az_deg,
                el_crb_deg: r.el_deg,
            })
        })
        .collect()
}
