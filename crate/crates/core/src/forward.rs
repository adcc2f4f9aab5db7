//! Observation synthesis: noiseless mean `Y(eta)` and noisy draws.
//!
//! The frequency/slow-time matrix is `N x M` (subcarriers by symbols),
//! stored row-major.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{delay_steering, doppler_steering, AnglePair, PathParams, ScenarioConfig};
use crate::schedule::{effective_gain, PhaseSchedule};

/// Noisy observation plus where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub y: Array2<Complex64>,
    pub sigma2: f64,
    pub seed: u64,
    pub cfg_hash: String,
}

impl Observation {
    /// Wraps a matrix with no noise provenance (e.g. loaded from disk).
    pub fn from_matrix(y: Array2<Complex64>) -> Self {
        Observation {
            y,
            sigma2: 0.0,
            seed: 0,
            cfg_hash: String::new(),
        }
    }

    pub fn subcarriers(&self) -> usize {
        self.y.nrows()
    }

    pub fn symbols(&self) -> usize {
        self.y.ncols()
    }
}

/// Transmitted data symbols `X`; the estimators assume all ones.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolMatrix {
    pub x: Array2<Complex64>,
}

impl SymbolMatrix {
    pub fn all_ones(n: usize, m: usize) -> Self {
        SymbolMatrix {
            x: Array2::from_elem((n, m), Complex64::new(1.0, 0.0)),
        }
    }

    /// Applies `Y <- X .* Y` in place.
    pub fn modulate(&self, y: &mut Array2<Complex64>) -> Result<()> {
        if self.x.dim() != y.dim() {
            return Err(Error::Dimension {
                expected: format!("{:?}", y.dim()),
                actual: format!("{:?}", self.x.dim()),
            });
        }
        y.zip_mut_with(&self.x, |a, b| *a *= b);
        Ok(())
    }
}

/// Conditions under which the per-subcarrier model stops holding.
pub fn model_warnings(eta: &PathParams, cfg: &ScenarioConfig) -> Vec<String> {
    let mut w = Vec::new();
    if eta.tau >= cfg.cyclic_prefix {
        w.push(format!(
            "round-trip delay {:.3e} s exceeds the cyclic prefix {:.3e} s; inter-symbol interference is not modeled",
            eta.tau, cfg.cyclic_prefix
        ));
    }
    w
}

/// Slow-time signature `h(nu, theta) = d(nu) .* g(theta)`.
pub fn slow_time_signature(
    nu: f64,
    theta: AnglePair,
    sched: &PhaseSchedule,
    cfg: &ScenarioConfig,
    theta_br: AnglePair,
) -> Vec<Complex64> {
    let (g, _) = effective_gain(theta, sched, theta_br, &cfg.ris, cfg.wavelength);
    let d = doppler_steering(nu, sched.symbols(), cfg.block_duration());
    d.iter().zip(&g).map(|(a, b)| a * b).collect()
}

/// Noiseless mean `alpha c(tau) (d(nu) .* g(theta))^T` under all-ones symbols.
pub fn synthesize_mean(
    eta: &PathParams,
    sched: &PhaseSchedule,
    cfg: &ScenarioConfig,
) -> Result<Array2<Complex64>> {
    let (theta_br, _) = cfg.bs_direction()?;
    for w in model_warnings(eta, cfg) {
        log::warn!("{w}");
    }
    let c = delay_steering(eta.tau, cfg.subcarriers, cfg.subcarrier_spacing);
    let h = slow_time_signature(eta.nu, eta.theta, sched, cfg, theta_br);
    Ok(outer(eta.alpha, &c, &h))
}

pub(crate) fn outer(scale: Complex64, col: &[Complex64], row: &[Complex64]) -> Array2<Complex64> {
    let mut y = Array2::zeros((col.len(), row.len()));
    for (n, mut r) in y.rows_mut().into_iter().enumerate() {
        let s = scale * col[n];
        for (dst, h) in r.iter_mut().zip(row) {
            *dst = s * h;
        }
    }
    y
}

/// Per-entry noise variance `N0 N df NF`, watts.
pub fn noise_variance(cfg: &ScenarioConfig) -> f64 {
    cfg.noise_psd * cfg.subcarriers as f64 * cfg.subcarrier_spacing * cfg.noise_figure
}

/// Adds circularly-symmetric complex Gaussian noise of total variance `sigma2`.
pub fn add_noise<R: rand::Rng + ?Sized>(y: &mut Array2<Complex64>, sigma2: f64, rng: &mut R) {
    if sigma2 == 0.0 {
        return;
    }
    let s = (sigma2 / 2.0).sqrt();
    for v in y.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += Complex64::new(s * re, s * im);
    }
}

/// `Y = mean + Z` with noise drawn from a ChaCha8 stream seeded by `seed`.
pub fn sample_observation(mean: &Array2<Complex64>, sigma2: f64, seed: u64) -> Result<Observation> {
    if !(sigma2 >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise variance must be non-negative, got {sigma2}"
        )));
    }
    let mut y = mean.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    add_noise(&mut y, sigma2, &mut rng);
    Ok(Observation {
        y,
        sigma2,
        seed,
        cfg_hash: String::new(),
    })
}

/// Writes `y` as little-endian f64 pairs (re, im), row-major.
pub fn write_matrix_binary(y: &Array2<Complex64>, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for z in y.iter() {
        f.write_all(&z.re.to_le_bytes())?;
        f.write_all(&z.im.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path, rows: usize, cols: usize) -> Result<Array2<Complex64>> {
    let mut bytes = Vec::new();
    BufReader::new(std::fs::File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != rows * cols * 16 {
        return Err(Error::Dimension {
            expected: format!("{} bytes for {rows}x{cols}", rows * cols * 16),
            actual: format!("{} bytes", bytes.len()),
        });
    }
    let vals: Vec<Complex64> = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), vals).expect("length checked"))
}

/// CSV form: one line per subcarrier, `re0,im0,re1,im1,...`.
pub fn write_matrix_csv(y: &Array2<Complex64>, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    for row in y.rows() {
        let mut first = true;
        for z in row {
            if !first {
                f.write_all(b",")?;
            }
            first = false;
            write!(f, "{:e},{:e}", z.re, z.im)?;
        }
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<Complex64>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number {v:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if vals.len() % 2 != 0 {
            return Err(Error::Dimension {
                expected: "an even number of values per line".into(),
                actual: vals.len().to_string(),
            });
        }
        let c = vals.len() / 2;
        if *cols.get_or_insert(c) != c {
            return Err(Error::Dimension {
                expected: format!("{} complex columns", cols.unwrap()),
                actual: c.to_string(),
            });
        }
        data.extend(vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])));
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Array2::from_shape_vec((rows, cols), data).expect("rectangular"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{scene_to_path, RisGeometry};
    use crate::units::{db_to_linear, dbm_to_watts, linear_to_db};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn tiny() -> (ScenarioConfig, PhaseSchedule, PathParams) {
        let mut cfg = ScenarioConfig::default().with_waveform(12, 8);
        cfg.ris = RisGeometry::uniform_rectangular(3, 3, cfg.wavelength / 4.0);
        cfg.m_over_l = 2;
        let geo = scene_to_path(&cfg).unwrap();
        let s = PhaseSchedule::scanning(&cfg, geo.theta_br).unwrap();
        let mut eta = geo.path;
        eta.alpha = Complex64::from_polar(1.3, 0.4);
        (cfg, s, eta)
    }

    #[test]
    fn zero_gain_gives_zero_matrix() {
        let (cfg, s, mut eta) = tiny();
        eta.alpha = Complex64::new(0.0, 0.0);
        let y = synthesize_mean(&eta, &s, &cfg).unwrap();
        assert!(y.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn mean_matches_per_entry_formula() {
        let (cfg, s, eta) = tiny();
        let y = synthesize_mean(&eta, &s, &cfg).unwrap();
        let (tb, _) = cfg.bs_direction().unwrap();
        let k = 2.0 * PI / cfg.wavelength;
        let ts = cfg.block_duration();
        let phase = |t: AnglePair, p: &[f64; 2]| k * t.el.cos() * (t.az.cos() * p[0] + t.az.sin() * p[1]);
        for n in 0..cfg.subcarriers {
            for m in 0..cfg.symbols {
                // (a^T(tb) W_m a(t)) (a^T(t) W_m a(tb)) c_n d_m
                let w = s.matrix().column(m);
                let mut s1 = Complex64::new(0.0, 0.0);
                for (i, p) in cfg.ris.positions.iter().enumerate() {
                    s1 += Complex64::from_polar(1.0, phase(tb, p) + phase(eta.theta, p)) * w[i];
                }
                let e = eta.alpha
                    * s1
                    * s1
                    * Complex64::from_polar(1.0, -2.0 * PI * n as f64 * cfg.subcarrier_spacing * eta.tau)
                    * Complex64::from_polar(1.0, 2.0 * PI * m as f64 * ts * eta.nu);
                assert!((y[[n, m]] - e).norm() <= 1e-10 * e.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn mean_is_rank_one() {
        let (cfg, s, eta) = tiny();
        let y = synthesize_mean(&eta, &s, &cfg).unwrap();
        let dm = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[[i, j]]);
        let sv = dm.singular_values();
        let mut v: Vec<f64> = sv.iter().copied().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(v[1] <= 1e-12 * v[0], "{v:?}");
    }

    #[test]
    fn energy_identity() {
        let (cfg, s, eta) = tiny();
        let y = synthesize_mean(&eta, &s, &cfg).unwrap();
        let (tb, _) = cfg.bs_direction().unwrap();
        let h = slow_time_signature(eta.nu, eta.theta, &s, &cfg, tb);
        let e: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        let want = eta.alpha.norm_sqr() * cfg.subcarriers as f64 * h.iter().map(|z| z.norm_sqr()).sum::<f64>();
        assert_relative_eq!(e, want, max_relative = 1e-12);
    }

    #[test]
    fn segments_are_scaled_doppler_copies() {
        let (cfg, s, eta) = tiny();
        let y = synthesize_mean(&eta, &s, &cfg).unwrap();
        let reps = s.reps();
        let d = doppler_steering(eta.nu, reps, cfg.block_duration());
        for n in 0..cfg.subcarriers {
            for l in 0..s.profile_count() {
                let first = y[[n, l * reps]];
                for k in 0..reps {
                    assert!((y[[n, l * reps + k]] - first * d[k]).norm() <= 1e-12 * first.norm().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn delay_beyond_cp_is_flagged() {
        let (cfg, _, mut eta) = tiny();
        assert!(model_warnings(&eta, &cfg).is_empty());
        eta.tau = 2.0 * cfg.cyclic_prefix;
        assert_eq!(model_warnings(&eta, &cfg).len(), 1);
    }

    #[test]
    fn noise_variance_values() {
        let mut cfg = ScenarioConfig::default();
        let s2 = noise_variance(&cfg);
        // -174 dBm/Hz + 10 log10(1024 * 120e3) + 8 dB
        let dbm = -174.0 + linear_to_db(1024.0 * 120e3) + 8.0;
        assert_relative_eq!(s2, dbm_to_watts(dbm), max_relative = 1e-12);
        assert!((dbm - (-85.105)).abs() < 1e-3);
        assert!((s2 - 3.0866e-12).abs() < 1e-15);
        cfg.noise_figure = db_to_linear(0.0);
        assert_relative_eq!(noise_variance(&cfg), cfg.noise_psd * 1024.0 * 120e3, max_relative = 1e-15);
        let base = noise_variance(&cfg);
        cfg.subcarrier_spacing *= 2.0;
        assert_relative_eq!(noise_variance(&cfg), 2.0 * base, max_relative = 1e-15);
    }

    #[test]
    fn noiseless_sample_is_exact_and_seeded_sample_is_deterministic() {
        let (cfg, s, eta) = tiny();
        let y = synthesize_mean(&eta, &s, &cfg).unwrap();
        assert_eq!(sample_observation(&y, 0.0, 5).unwrap().y, y);
        let a = sample_observation(&y, 0.3, 11).unwrap();
        let b = sample_observation(&y, 0.3, 11).unwrap();
        assert_eq!(a.y, b.y);
        let c = sample_observation(&y, 0.3, 12).unwrap();
        assert_ne!(a.y, c.y);
        assert!(sample_observation(&y, -1.0, 1).is_err());
    }

    #[test]
    fn empirical_noise_variance() {
        let zero = Array2::zeros((250, 400));
        let obs = sample_observation(&zero, 2.5, 99).unwrap();
        let n = obs.y.len() as f64;
        let total: f64 = obs.y.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        let re: f64 = obs.y.iter().map(|z| z.re * z.re).sum::<f64>() / n;
        assert!((total / 2.5 - 1.0).abs() < 0.02, "{total}");
        assert!((re / 1.25 - 1.0).abs() < 0.02, "{re}");
    }

    #[test]
    fn symbol_matrix_modulates() {
        let mut y = Array2::from_elem((2, 3), Complex64::new(2.0, 0.0));
        SymbolMatrix::all_ones(2, 3).modulate(&mut y).unwrap();
        assert!(y.iter().all(|z| *z == Complex64::new(2.0, 0.0)));
        assert!(SymbolMatrix::all_ones(3, 3).modulate(&mut y).is_err());
    }

    #[test]
    fn matrix_dumps_round_trip() {
        let (cfg, s, eta) = tiny();
        let y = sample_observation(&synthesize_mean(&eta, &s, &cfg).unwrap(), 1e-3, 3).unwrap().y;
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("y.bin");
        write_matrix_binary(&y, &bin).unwrap();
        assert_eq!(read_matrix_binary(&bin, 12, 8).unwrap(), y);
        assert!(read_matrix_binary(&bin, 12, 9).is_err());
        // Layout check: second value in the file is Im(Y[0,0]).
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), y[[0, 0]].im);
        let csv = dir.path().join("y.csv");
        write_matrix_csv(&y, &csv).unwrap();
        let back = read_matrix_csv(&csv).unwrap();
        assert_eq!(back, y);
    }
}
