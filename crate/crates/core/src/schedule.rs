//! Scanning beams and the repetitive RIS phase schedule `W`.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{combined_steering, AnglePair, RisGeometry, ScenarioConfig};

/// One RIS configuration: unit-modulus weight per element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    pub weights: Vec<Complex64>,
}

impl PhaseProfile {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Phase-conjugate beam toward `theta_b`: `w_i = exp(-j arg b_i(theta_b))`,
/// so that `b(theta_b)^T w = N_RIS`.
pub fn design_beam(
    theta_b: AnglePair,
    theta_br: AnglePair,
    geom: &RisGeometry,
    wavelength: f64,
) -> PhaseProfile {
    let b = combined_steering(theta_b, theta_br, geom, wavelength);
    PhaseProfile {
        weights: b
            .iter()
            .map(|z| Complex64::from_polar(1.0, -z.arg()))
            .collect(),
    }
}

/// Grid shape `(n_az, n_el)` for `l` beams: `n_az` is the divisor of `l`
/// nearest to `sqrt(2 l)` (ties go to the smaller divisor). A prime `l > 1`
/// would otherwise produce a single azimuth column; it becomes one
/// elevation row of `l` beams instead.
pub fn grid_shape(l: usize) -> (usize, usize) {
    assert!(l >= 1, "beam count must be positive");
    let target = (2.0 * l as f64).sqrt();
    let n_az = (1..=l)
        .filter(|d| l % d == 0)
        .min_by(|a, b| {
            let da = (*a as f64 - target).abs();
            let db = (*b as f64 - target).abs();
            da.partial_cmp(&db).unwrap().then(a.cmp(b))
        })
        .unwrap_or(1);
    let n_az = if n_az == 1 && l > 1 { l } else { n_az };
    (n_az, l / n_az)
}

/// Scanned sector: azimuth [-90, 90] deg, elevation [0, 90) deg.
pub const SCAN_AZ_DEG: (f64, f64) = (-90.0, 90.0);
pub const SCAN_EL_DEG: (f64, f64) = (0.0, 90.0);

/// Cell-center directions of a uniform `l`-beam grid over the given sector,
/// elevation rows outermost and azimuth innermost.
pub fn beam_grid(
    l: usize,
    az_range: (f64, f64),
    el_range: (f64, f64),
    shape: Option<(usize, usize)>,
) -> Result<Vec<AnglePair>> {
    if l == 0 {
        return Err(Error::InvalidArgument("beam count must be positive".into()));
    }
    let (n_az, n_el) = shape.unwrap_or_else(|| grid_shape(l));
    if n_az * n_el != l {
        return Err(Error::InvalidArgument(format!(
            "grid {n_az}x{n_el} does not hold {l} beams"
        )));
    }
    let daz = (az_range.1 - az_range.0) / n_az as f64;
    let del = (el_range.1 - el_range.0) / n_el as f64;
    let mut out = Vec::with_capacity(l);
    for j in 0..n_el {
        for i in 0..n_az {
            out.push(AnglePair::from_degrees(
                az_range.0 + (i as f64 + 0.5) * daz,
                el_range.0 + (j as f64 + 0.5) * del,
            )?);
        }
    }
    Ok(out)
}

/// The `N_RIS x M` control matrix with its repetition plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSchedule {
    w: Array2<Complex64>,
    profiles: Vec<PhaseProfile>,
    reps: usize,
    beam_directions: Vec<AnglePair>,
}

/// Repeats each beam `reps` consecutive times.
pub fn build_schedule(beams: &[PhaseProfile], m: usize, reps: usize) -> Result<PhaseSchedule> {
    if beams.is_empty() || reps == 0 {
        return Err(Error::InvalidArgument(
            "schedule needs at least one beam and one repetition".into(),
        ));
    }
    if beams.len() * reps != m {
        return Err(Error::Divisibility {
            what: "symbol count M",
            total: m,
            divisor: beams.len(),
        });
    }
    let n_ris = beams[0].len();
    if beams.iter().any(|b| b.len() != n_ris) {
        return Err(Error::Dimension {
            expected: format!("{n_ris} weights per beam"),
            actual: "beams of differing length".into(),
        });
    }
    let mut w = Array2::zeros((n_ris, m));
    for (col, mut column) in w.columns_mut().into_iter().enumerate() {
        let beam = &beams[col / reps];
        for (dst, src) in column.iter_mut().zip(&beam.weights) {
            *dst = *src;
        }
    }
    Ok(PhaseSchedule {
        w,
        profiles: beams.to_vec(),
        reps,
        beam_directions: Vec::new(),
    })
}

impl PhaseSchedule {
    /// Scanning schedule for a scenario: `L` phase-conjugate beams on the
    /// default (or configured) grid, each held for `M/L` symbols.
    pub fn scanning(cfg: &ScenarioConfig, theta_br: AnglePair) -> Result<Self> {
        cfg.validate()?;
        let l = cfg.profile_count();
        let dirs = beam_grid(l, SCAN_AZ_DEG, SCAN_EL_DEG, cfg.beam_grid)?;
        let beams: Vec<_> = dirs
            .iter()
            .map(|&t| design_beam(t, theta_br, &cfg.ris, cfg.wavelength))
            .collect();
        let mut s = build_schedule(&beams, cfg.symbols, cfg.m_over_l)?;
        s.beam_directions = dirs;
        Ok(s)
    }

    /// Wraps an arbitrary control matrix (no repetition structure assumed).
    pub fn from_matrix(w: Array2<Complex64>) -> Self {
        let profiles = w
            .columns()
            .into_iter()
            .map(|c| PhaseProfile {
                weights: c.to_vec(),
            })
            .collect();
        PhaseSchedule {
            w,
            profiles,
            reps: 1,
            beam_directions: Vec::new(),
        }
    }

    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.w
    }

    /// The `L` distinct profiles, in slow-time order.
    pub fn profiles(&self) -> &[PhaseProfile] {
        &self.profiles
    }

    pub fn profile_count(&self) -> usize {
        self.profiles.len()
    }

    /// Repetitions per profile, `M/L`.
    pub fn reps(&self) -> usize {
        self.reps
    }

    pub fn symbols(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_elements(&self) -> usize {
        self.w.nrows()
    }

    pub fn beam_directions(&self) -> &[AnglePair] {
        &self.beam_directions
    }

    /// Writes element phases (radians), one row per element, one column per symbol.
    pub fn write_phase_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for row in self.w.rows() {
            let line: Vec<String> = row.iter().map(|z| format!("{:.17e}", z.arg())).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads a phase CSV written by [`PhaseSchedule::write_phase_csv`].
    pub fn read_phase_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidArgument(format!("bad phase {v:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension {
                expected: format!("{m} columns in every row"),
                actual: "ragged rows".into(),
            });
        }
        let w = Array2::from_shape_fn((n, m), |(i, j)| Complex64::from_polar(1.0, rows[i][j]));
        Ok(Self::from_matrix(w))
    }
}

/// Beamspace gain over slow time: `g_m = (b(theta)^T w_m)^2` for every
/// symbol, and the per-profile vector `g_L`.
pub fn effective_gain(
    theta: AnglePair,
    sched: &PhaseSchedule,
    theta_br: AnglePair,
    geom: &RisGeometry,
    wavelength: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let b = combined_steering(theta, theta_br, geom, wavelength);
    let g_l: Vec<Complex64> = sched
        .profiles()
        .iter()
        .map(|p| {
            let s: Complex64 = b.iter().zip(&p.weights).map(|(x, y)| x * y).sum();
            s * s
        })
        .collect();
    let reps = sched.reps();
    let g = (0..sched.symbols()).map(|m| g_l[m / reps]).collect();
    (g, g_l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScenarioConfig;
    use proptest::prelude::*;

    fn small_geom() -> RisGeometry {
        RisGeometry::uniform_rectangular(5, 5, 0.0107 / 4.0)
    }

    #[test]
    fn all_ones_response_gives_all_ones_beam() {
        let g = RisGeometry::from_positions(vec![[0.0, 0.0]; 3], 0.0);
        let t = AnglePair::from_degrees(10.0, 20.0).unwrap();
        let w = design_beam(t, t, &g, 0.01);
        assert!(w.weights.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn designed_beam_is_aligned() {
        let geom = small_geom();
        let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
        let t = AnglePair::from_degrees(-30.0, 40.0).unwrap();
        let w = design_beam(t, tb, &geom, 0.0107);
        let b = combined_steering(t, tb, &geom, 0.0107);
        let s: Complex64 = b.iter().zip(&w.weights).map(|(x, y)| x * y).sum();
        assert!((s - Complex64::new(25.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_shape(1), (1, 1));
        assert_eq!(grid_shape(4), (2, 2));
        assert_eq!(grid_shape(224), (16, 14));
        assert_eq!(grid_shape(7), (7, 1));
        assert_eq!(grid_shape(2), (2, 1));
    }

    #[test]
    fn grid_shape_560_by_divisor_enumeration() {
        // Enumerate every divisor and pick the nearest to sqrt(1120) by hand.
        let divisors: Vec<usize> = (1..=560).filter(|d| 560 % d == 0).collect();
        let t = 1120f64.sqrt();
        let mut best = divisors[0];
        for &d in &divisors {
            if (d as f64 - t).abs() < (best as f64 - t).abs() {
                best = d;
            }
        }
        assert_eq!(best, 35);
        assert_eq!(grid_shape(560), (35, 16));
    }

    #[test]
    fn grid_cell_centers() {
        let one = beam_grid(1, SCAN_AZ_DEG, SCAN_EL_DEG, None).unwrap();
        assert!((one[0].az_deg()).abs() < 1e-12 && (one[0].el_deg() - 45.0).abs() < 1e-12);
        let four = beam_grid(4, SCAN_AZ_DEG, SCAN_EL_DEG, None).unwrap();
        let got: Vec<(f64, f64)> = four.iter().map(|a| (a.az_deg(), a.el_deg())).collect();
        let want = [(-45.0, 22.5), (45.0, 22.5), (-45.0, 67.5), (45.0, 67.5)];
        for (g, w) in got.iter().zip(want) {
            assert!((g.0 - w.0).abs() < 1e-12 && (g.1 - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn schedule_repeats_profiles() {
        let geom = small_geom();
        let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
        let beams: Vec<_> = [(0.0, 10.0), (40.0, 50.0)]
            .iter()
            .map(|&(a, e)| design_beam(AnglePair::from_degrees(a, e).unwrap(), tb, &geom, 0.0107))
            .collect();
        let s = build_schedule(&beams, 4, 2).unwrap();
        for (m, b) in [0, 0, 1, 1].iter().enumerate() {
            assert_eq!(s.matrix().column(m).to_vec(), beams[*b].weights);
        }
        let s1 = build_schedule(&beams, 2, 1).unwrap();
        assert_eq!(s1.matrix().column(1).to_vec(), beams[1].weights);
        let three = vec![beams[0].clone(), beams[1].clone(), beams[0].clone()];
        assert!(matches!(build_schedule(&three, 4, 1), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn gain_at_beam_direction_is_n_squared() {
        let mut cfg = ScenarioConfig::default().with_waveform(16, 8);
        cfg.ris = small_geom();
        cfg.m_over_l = 2;
        let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
        let s = PhaseSchedule::scanning(&cfg, tb).unwrap();
        let dir = s.beam_directions()[2];
        let (_, gl) = effective_gain(dir, &s, tb, &cfg.ris, cfg.wavelength);
        assert!((gl[2] - Complex64::new(625.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn arbitrary_schedule_matches_column_oracle() {
        let geom = small_geom();
        let n = geom.n_elements();
        let w = Array2::from_shape_fn((n, 6), |(i, j)| {
            Complex64::from_polar(1.0, 0.37 * (i * i + 3 * j) as f64)
        });
        let s = PhaseSchedule::from_matrix(w.clone());
        let t = AnglePair::from_degrees(20.0, 35.0).unwrap();
        let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
        let (g, _) = effective_gain(t, &s, tb, &geom, 0.0107);
        let b = combined_steering(t, tb, &geom, 0.0107);
        for m in 0..6 {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += b[i] * w[[i, m]];
            }
            assert!((g[m] - acc * acc).norm() < 1e-12 * acc.norm_sqr().max(1.0));
        }
    }

    #[test]
    fn phase_csv_round_trip() {
        let mut cfg = ScenarioConfig::default().with_waveform(16, 8);
        cfg.ris = small_geom();
        cfg.m_over_l = 4;
        let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
        let s = PhaseSchedule::scanning(&cfg, tb).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.csv");
        s.write_phase_csv(&p).unwrap();
        let back = PhaseSchedule::read_phase_csv(&p).unwrap();
        assert_eq!(back.matrix().dim(), (25, 8));
        for (a, b) in back.matrix().iter().zip(s.matrix().iter()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn beam_maximality(az in -90.0..90.0f64, el in 0.0..89.0f64,
                           az2 in -180.0..180.0f64, el2 in -90.0..90.0f64) {
            let geom = small_geom();
            let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
            let t = AnglePair::from_degrees(az, el).unwrap();
            let w = design_beam(t, tb, &geom, 0.0107);
            prop_assert!(w.weights.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            let probe = AnglePair::from_degrees(az2, el2).unwrap();
            let b = combined_steering(probe, tb, &geom, 0.0107);
            let s: Complex64 = b.iter().zip(&w.weights).map(|(x, y)| x * y).sum();
            prop_assert!(s.norm() <= 25.0 + 1e-9);
        }

        #[test]
        fn kronecker_gain_structure(az in -180.0..180.0f64, el in -90.0..90.0f64, reps in 1usize..5) {
            let mut cfg = ScenarioConfig::default().with_waveform(8, 6 * reps);
            cfg.ris = small_geom();
            cfg.m_over_l = reps;
            let tb = AnglePair::from_degrees(135.0, 30.0).unwrap();
            let s = PhaseSchedule::scanning(&cfg, tb).unwrap();
            prop_assert!(s.matrix().iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            let t = AnglePair::from_degrees(az, el).unwrap();
            let (g, gl) = effective_gain(t, &s, tb, &cfg.ris, cfg.wavelength);
            // Column-by-column evaluation against g_L (x) 1_{M/L}.
            let b = combined_steering(t, tb, &cfg.ris, cfg.wavelength);
            for m in 0..g.len() {
                let col = s.matrix().column(m);
                let acc: Complex64 = b.iter().zip(col.iter()).map(|(x, y)| x * y).sum();
                prop_assert!((acc * acc - gl[m / reps]).norm() <= 1e-12 * (1.0 + gl[m / reps].norm()));
                prop_assert_eq!(g[m], gl[m / reps]);
            }
        }
    }
}
