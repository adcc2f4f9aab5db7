//! Per-profile beamspace gains `g_L(theta)` and a precomputed angle grid.

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;

use crate::exec::Execution;
use crate::geometry::{ris_steering, AnglePair, RisGeometry};
use crate::schedule::PhaseSchedule;
use crate::units::rad;

/// Evaluates `g_L(theta)` for a fixed schedule and BS direction.
///
/// Row `l` of `folded` is `a(theta_br) .* w_l`, so that
/// `b(theta)^T w_l = sum_i a_i(theta) folded[l, i]`.
#[derive(Clone, Debug)]
pub struct GainModel {
    folded: Array2<Complex64>,
    positions: Vec<[f64; 2]>,
    wavenumber: f64,
}

impl GainModel {
    pub fn new(sched: &PhaseSchedule, theta_br: AnglePair, geom: &RisGeometry, wavelength: f64) -> Self {
        let a_br = ris_steering(theta_br, geom, wavelength);
        let profiles = sched.profiles();
        let mut folded = Array2::zeros((profiles.len(), geom.n_elements()));
        for (l, p) in profiles.iter().enumerate() {
            for (i, w) in p.weights.iter().enumerate() {
                folded[[l, i]] = a_br[i] * w;
            }
        }
        GainModel {
            folded,
            positions: geom.positions.clone(),
            wavenumber: 2.0 * PI / wavelength,
        }
    }

    pub fn profiles(&self) -> usize {
        self.folded.nrows()
    }

    /// Steering vector for raw `(az, el)` radians; no range check.
    fn steering(&self, az: f64, el: f64) -> Vec<Complex64> {
        let u = self.wavenumber * el.cos() * az.cos();
        let v = self.wavenumber * el.cos() * az.sin();
        self.positions
            .iter()
            .map(|p| Complex64::from_polar(1.0, u * p[0] + v * p[1]))
            .collect()
    }

    /// `g_L` at raw `(az, el)` radians.
    pub fn gains(&self, az: f64, el: f64) -> Vec<Complex64> {
        let a = Array2::from_shape_vec((self.positions.len(), 1), self.steering(az, el))
            .expect("one column");
        self.folded.dot(&a).iter().map(|s| s * s).collect()
    }
}

/// `g_L` on a uniform az x el grid, stored conjugated with inverse norms.
#[derive(Clone, Debug)]
pub struct AngleDictionary {
    pub az_deg: Vec<f64>,
    pub el_deg: Vec<f64>,
    conj_gains: Array2<Complex64>,
    inv_norm: Vec<f64>,
}

/// Inclusive uniform samples from `lo` to `hi`.
pub fn uniform_samples(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor().max(0.0) as usize + 1;
    (0..count).map(|i| lo + i as f64 * step).collect()
}

const CHUNK: usize = 512;

impl AngleDictionary {
    pub fn build(
        model: &GainModel,
        az_range_deg: (f64, f64),
        el_range_deg: (f64, f64),
        step_deg: f64,
        exec: Execution,
    ) -> Self {
        let az_deg = uniform_samples(az_range_deg.0, az_range_deg.1, step_deg);
        let el_deg = uniform_samples(el_range_deg.0, el_range_deg.1, step_deg);
        let points: Vec<(f64, f64)> = el_deg
            .iter()
            .flat_map(|&e| az_deg.iter().map(move |&a| (rad(a), rad(e))))
            .collect();
        let l = model.profiles();
        let folded_t = model.folded.t().to_owned();
        let n_chunks = points.len().div_ceil(CHUNK);
        let chunks = exec.map(n_chunks, |c| {
            let pts = &points[c * CHUNK..((c + 1) * CHUNK).min(points.len())];
            let mut a = Array2::zeros((pts.len(), model.positions.len()));
            for (r, &(az, el)) in pts.iter().enumerate() {
                for (dst, v) in a.row_mut(r).iter_mut().zip(model.steering(az, el)) {
                    *dst = v;
                }
            }
            let mut g = a.dot(&folded_t);
            let mut inv = Vec::with_capacity(pts.len());
            for mut row in g.rows_mut() {
                let mut nrm = 0.0;
                for z in row.iter_mut() {
                    *z = (*z * *z).conj();
                    nrm += z.norm_sqr();
                }
                inv.push(if nrm > 0.0 { 1.0 / nrm } else { 0.0 });
            }
            (g, inv)
        });
        let mut conj_gains = Array2::zeros((points.len(), l));
        let mut inv_norm = Vec::with_capacity(points.len());
        for (c, (g, inv)) in chunks.into_iter().enumerate() {
            let start = c * CHUNK;
            conj_gains.slice_mut(s![start..start + g.nrows(), ..]).assign(&g);
            inv_norm.extend(inv);
        }
        AngleDictionary {
            az_deg,
            el_deg,
            conj_gains,
            inv_norm,
        }
    }

    pub fn len(&self) -> usize {
        self.inv_norm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_norm.is_empty()
    }

    /// Angle (degrees) of grid point `p`.
    pub fn point_deg(&self, p: usize) -> (f64, f64) {
        let na = self.az_deg.len();
        (self.az_deg[p % na], self.el_deg[p / na])
    }

    /// `|g_L(theta_p)^H w|^2 / ||g_L(theta_p)||^2` for every grid point;
    /// points with a zero gain vector score zero.
    pub fn scores(&self, w: &[Complex64]) -> Vec<f64> {
        let w = ndarray::ArrayView1::from(w);
        let proj = self.conj_gains.dot(&w);
        proj.iter()
            .zip(&self.inv_norm)
            .map(|(z, inv)| z.norm_sqr() * inv)
            .collect()
    }

    /// Best grid point; ties keep the first in storage order.
    pub fn best(&self, w: &[Complex64]) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (p, v) in self.scores(w).into_iter().enumerate() {
            if self.inv_norm[p] > 0.0 && v > best.1 {
                best = (p, v);
            }
        }
        best
    }
}
