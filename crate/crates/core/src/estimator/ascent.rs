//! Monotone maximizer over a few real variables.
//!
//! Works in normalized coordinates `z = x / scale` so that one unit is one
//! resolution cell in every direction. Gradient and Hessian come from
//! central finite differences of the objective itself. A Newton step is taken
//! when the Hessian is negative definite, a capped gradient step otherwise,
//! and every step passes an Armijo backtracking test, so accepted iterates
//! never decrease the objective.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// Newton direction when the FD Hessian is negative definite.
    Newton,
    /// Plain steepest ascent.
    Gradient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AscentOptions {
    pub policy: StepPolicy,
    pub max_iterations: usize,
    /// Stop once an accepted step is shorter than this (normalized units).
    pub step_tolerance: f64,
    /// Largest step, normalized units.
    pub max_step: f64,
    /// FD half-width per coordinate, normalized units.
    pub fd_steps: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AscentResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 40;

/// Maximizes `f` starting at `x0`; `scales` give the size of one normalized
/// unit per coordinate.
pub fn ascend<F>(mut f: F, x0: &[f64], scales: &[f64], opts: &AscentOptions) -> AscentResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(scales.len(), n);
    assert_eq!(opts.fd_steps.len(), n);
    let mut eval = |z: &[f64]| {
        let x: Vec<f64> = z.iter().zip(scales).map(|(a, s)| a * s).collect();
        f(&x)
    };

    let mut z: Vec<f64> = x0.iter().zip(scales).map(|(a, s)| a / s).collect();
    let mut fz = eval(&z);
    let mut history = vec![fz];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let (g, h) = fd_derivatives(&mut eval, &z, fz, &opts.fd_steps);
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        let gn = norm(&g);
        let newton = match opts.policy {
            StepPolicy::Newton => newton_direction(&g, &h),
            StepPolicy::Gradient => None,
        };
        // Gradient steps start at the trust length and rely on backtracking.
        let mut p = newton.unwrap_or_else(|| g.iter().map(|v| v * opts.max_step / gn).collect());
        let pn = norm(&p);
        if pn > opts.max_step {
            for v in p.iter_mut() {
                *v *= opts.max_step / pn;
            }
        }
        let slope: f64 = g.iter().zip(&p).map(|(a, b)| a * b).sum();

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = z.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            let ft = eval(&trial);
            if ft.is_finite() && ft >= fz + ARMIJO * t * slope && ft >= fz {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
            if t * norm(&p) < opts.step_tolerance * 1e-3 {
                break;
            }
        }
        match accepted {
            Some((trial, ft)) => {
                let moved = t * norm(&p);
                z = trial;
                fz = ft;
                history.push(fz);
                if moved < opts.step_tolerance {
                    converged = true;
                    break;
                }
            }
            None => {
                // No ascent along a valid direction at resolution: stationary.
                converged = true;
                break;
            }
        }
    }

    AscentResult {
        x: z.iter().zip(scales).map(|(a, s)| a * s).collect(),
        value: fz,
        history,
        iterations,
        converged,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn fd_derivatives<E>(eval: &mut E, z: &[f64], fz: f64, h: &[f64]) -> (Vec<f64>, DMatrix<f64>)
where
    E: FnMut(&[f64]) -> f64,
{
    let n = z.len();
    let mut g = vec![0.0; n];
    let mut hess = DMatrix::zeros(n, n);
    let shifted = |z: &[f64], moves: &[(usize, f64)]| {
        let mut w = z.to_vec();
        for &(i, d) in moves {
            w[i] += d;
        }
        w
    };
    for i in 0..n {
        let fp = eval(&shifted(z, &[(i, h[i])]));
        let fm = eval(&shifted(z, &[(i, -h[i])]));
        g[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * fz + fm) / (h[i] * h[i]);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let fpp = eval(&shifted(z, &[(i, h[i]), (j, h[j])]));
            let fpm = eval(&shifted(z, &[(i, h[i]), (j, -h[j])]));
            let fmp = eval(&shifted(z, &[(i, -h[i]), (j, h[j])]));
            let fmm = eval(&shifted(z, &[(i, -h[i]), (j, -h[j])]));
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (g, hess)
}

/// `-H^{-1} g` if `H` is negative definite.
fn newton_direction(g: &[f64], h: &DMatrix<f64>) -> Option<Vec<f64>> {
    let neg = -h.clone();
    let chol = neg.cholesky()?;
    let p = chol.solve(&DVector::from_column_slice(g));
    if p.iter().all(|v| v.is_finite()) {
        Some(p.iter().copied().collect())
    } else {
        None
    }
}
