//! Scene geometry, steering vectors and the RIS-path link budget.
//!
//! Angles follow the direction-cosine convention
//! `(cos el cos az, cos el sin az, sin el)` in the RIS frame: the surface
//! lies in the local x-y plane and faces +z. Angles are stored in radians;
//! serialized forms use degrees.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::units::{db_to_linear, dbm_to_watts, wrap_pi, SPEED_OF_LIGHT};

pub type Vec3 = [f64; 3];

/// Azimuth/elevation pair in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "AngleDegrees", try_from = "AngleDegrees")]
pub struct AnglePair {
    pub az: f64,
    pub el: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct AngleDegrees {
    az_deg: f64,
    el_deg: f64,
}

impl From<AnglePair> for AngleDegrees {
    fn from(a: AnglePair) -> Self {
        AngleDegrees {
            az_deg: a.az_deg(),
            el_deg: a.el_deg(),
        }
    }
}

impl TryFrom<AngleDegrees> for AnglePair {
    type Error = Error;
    fn try_from(a: AngleDegrees) -> Result<Self> {
        AnglePair::from_degrees(a.az_deg, a.el_deg)
    }
}

const ANGLE_SLACK: f64 = 1e-12;

impl AnglePair {
    pub fn new(az: f64, el: f64) -> Result<Self> {
        let ok = az.is_finite()
            && el.is_finite()
            && az.abs() <= PI + ANGLE_SLACK
            && el.abs() <= PI / 2.0 + ANGLE_SLACK;
        if !ok {
            return Err(Error::AngleOutOfRange {
                az_deg: az.to_degrees(),
                el_deg: el.to_degrees(),
            });
        }
        Ok(AnglePair { az, el })
    }

    pub fn from_degrees(az_deg: f64, el_deg: f64) -> Result<Self> {
        Self::new(az_deg.to_radians(), el_deg.to_radians())
    }

    /// Builds a pair from unconstrained optimizer coordinates: azimuth is
    /// wrapped and elevation clamped into range.
    pub fn normalized(az: f64, el: f64) -> Self {
        AnglePair {
            az: wrap_pi(az),
            el: el.clamp(-PI / 2.0, PI / 2.0),
        }
    }

    pub fn az_deg(&self) -> f64 {
        self.az.to_degrees()
    }

    pub fn el_deg(&self) -> f64 {
        self.el.to_degrees()
    }

    /// Unit vector pointing along this direction.
    pub fn direction(&self) -> Vec3 {
        let (se, ce) = self.el.sin_cos();
        let (sa, ca) = self.az.sin_cos();
        [ce * ca, ce * sa, se]
    }

    /// Direction of `v`, together with its length.
    pub fn from_vector(v: Vec3) -> Result<(Self, f64)> {
        let r = norm(v);
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::Geometry(format!("zero-length direction {v:?}")));
        }
        let el = (v[2] / r).clamp(-1.0, 1.0).asin();
        let az = v[1].atan2(v[0]);
        Ok((AnglePair { az, el }, r))
    }
}

/// Element layout of the surface, positions relative to its center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RisGeometry {
    pub rows: usize,
    pub cols: usize,
    /// Element pitch in meters, identical along both axes.
    pub spacing: f64,
    /// `(p_x, p_y)` per element, meters.
    pub positions: Vec<[f64; 2]>,
}

impl RisGeometry {
    /// `cols` elements along x by `rows` along y, centered on the origin.
    /// Element `i = iy * cols + ix`.
    pub fn uniform_rectangular(cols: usize, rows: usize, spacing: f64) -> Self {
        let cx = (cols as f64 - 1.0) / 2.0;
        let cy = (rows as f64 - 1.0) / 2.0;
        let mut positions = Vec::with_capacity(rows * cols);
        for iy in 0..rows {
            for ix in 0..cols {
                positions.push([(ix as f64 - cx) * spacing, (iy as f64 - cy) * spacing]);
            }
        }
        RisGeometry {
            rows,
            cols,
            spacing,
            positions,
        }
    }

    /// Arbitrary layout; `rows`/`cols` are informational only.
    pub fn from_positions(positions: Vec<[f64; 2]>, spacing: f64) -> Self {
        RisGeometry {
            rows: 1,
            cols: positions.len(),
            spacing,
            positions,
        }
    }

    pub fn n_elements(&self) -> usize {
        self.positions.len()
    }
}

/// Unknowns of the single target path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub alpha: Complex64,
    /// Round-trip delay, seconds.
    pub tau: f64,
    /// Doppler shift, Hz.
    pub nu: f64,
    pub theta: AnglePair,
}

/// Physical and waveform parameterization of one sensing scenario.
///
/// Internal units are SI: meters, seconds, hertz, watts, linear gains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub bs_position: Vec3,
    pub ris_position: Vec3,
    pub target_position: Vec3,
    pub target_velocity: Vec3,
    pub ris: RisGeometry,
    pub wavelength: f64,
    pub transmit_power: f64,
    pub bs_gain: f64,
    pub ris_patch_gain: f64,
    pub rcs: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing: f64,
    pub symbols: usize,
    pub cyclic_prefix: f64,
    pub noise_psd: f64,
    pub noise_figure: f64,
    /// Consecutive symbols sharing one phase profile (M/L).
    pub m_over_l: usize,
    /// Beam grid shape `(n_az, n_el)`; `None` uses the default factorization.
    #[serde(default)]
    pub beam_grid: Option<(usize, usize)>,
}

/// Places a point at `range` meters from `origin` along `theta`.
pub fn polar_position(origin: Vec3, range: f64, theta: AnglePair) -> Vec3 {
    let u = theta.direction();
    [
        origin[0] + range * u[0],
        origin[1] + range * u[1],
        origin[2] + range * u[2],
    ]
}

impl Default for ScenarioConfig {
    /// Reference scenario: 28 GHz band, 21x21 quarter-wave RIS at the origin,
    /// BS 5 m away at (135, 30) deg, target 10 m away at (45, 60) deg moving
    /// at (30, 0, 30) m/s, 1024 subcarriers at 120 kHz, 1120 symbols.
    fn default() -> Self {
        let wavelength = 0.0107;
        let ris_position = [0.0; 3];
        let ris_to_bs = AnglePair::from_degrees(135.0, 30.0).expect("valid");
        let ris_to_target = AnglePair::from_degrees(45.0, 60.0).expect("valid");
        let subcarrier_spacing = 120e3;
        ScenarioConfig {
            bs_position: polar_position(ris_position, 5.0, ris_to_bs),
            ris_position,
            target_position: polar_position(ris_position, 10.0, ris_to_target),
            target_velocity: [30.0, 0.0, 30.0],
            ris: RisGeometry::uniform_rectangular(21, 21, wavelength / 4.0),
            wavelength,
            transmit_power: dbm_to_watts(30.0),
            bs_gain: db_to_linear(18.06),
            ris_patch_gain: 1.0,
            rcs: 2.0,
            subcarriers: 1024,
            subcarrier_spacing,
            symbols: 1120,
            cyclic_prefix: 1.0 / subcarrier_spacing / 14.0,
            noise_psd: dbm_to_watts(-174.0),
            noise_figure: db_to_linear(8.0),
            m_over_l: 2,
            beam_grid: None,
        }
    }
}

impl ScenarioConfig {
    /// Elementary symbol duration `T = 1/df`.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    /// `T_s = T + T_cp`.
    pub fn block_duration(&self) -> f64 {
        self.symbol_duration() + self.cyclic_prefix
    }

    /// Number of distinct phase profiles `L = M / (M/L)`.
    pub fn profile_count(&self) -> usize {
        self.symbols / self.m_over_l.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 || self.symbols == 0 || self.m_over_l == 0 {
            return Err(Error::Config(
                "subcarriers, symbols and m_over_l must be positive".into(),
            ));
        }
        if self.symbols % self.m_over_l != 0 {
            return Err(Error::Divisibility {
                what: "symbol count M",
                total: self.symbols,
                divisor: self.m_over_l,
            });
        }
        if let Some((na, ne)) = self.beam_grid {
            if na * ne != self.profile_count() {
                return Err(Error::Config(format!(
                    "beam grid {na}x{ne} does not hold L = {} profiles",
                    self.profile_count()
                )));
            }
        }
        let positive = [
            ("wavelength", self.wavelength),
            ("subcarrier spacing", self.subcarrier_spacing),
            ("RIS spacing", self.ris.spacing),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("transmit power", self.transmit_power),
            ("BS gain", self.bs_gain),
            ("RIS patch gain", self.ris_patch_gain),
            ("RCS", self.rcs),
            ("cyclic prefix", self.cyclic_prefix),
            ("noise PSD", self.noise_psd),
            ("noise figure", self.noise_figure),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.ris.n_elements() == 0 {
            return Err(Error::Config("RIS has no elements".into()));
        }
        Ok(())
    }

    pub fn with_power_dbm(&self, dbm: f64) -> Self {
        ScenarioConfig {
            transmit_power: dbm_to_watts(dbm),
            ..self.clone()
        }
    }

    pub fn with_m_over_l(&self, m_over_l: usize) -> Self {
        ScenarioConfig {
            m_over_l,
            beam_grid: None,
            ..self.clone()
        }
    }

    /// Same scene with a reduced waveform (N subcarriers, M symbols).
    pub fn with_waveform(&self, subcarriers: usize, symbols: usize) -> Self {
        ScenarioConfig {
            subcarriers,
            symbols,
            beam_grid: None,
            ..self.clone()
        }
    }

    /// Direction and distance from the RIS to the BS (the known leg).
    pub fn bs_direction(&self) -> Result<(AnglePair, f64)> {
        AnglePair::from_vector(sub(self.bs_position, self.ris_position))
            .map_err(|_| Error::Geometry("BS coincides with the RIS".into()))
    }

    /// Stable content hash (hex SHA-256 of the JSON form).
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// RIS array response `a(theta)`.
pub fn ris_steering(theta: AnglePair, geom: &RisGeometry, wavelength: f64) -> Vec<Complex64> {
    let k = 2.0 * PI / wavelength;
    let ce = theta.el.cos();
    let (sa, ca) = theta.az.sin_cos();
    let (kx, ky) = (k * ce * ca, k * ce * sa);
    geom.positions
        .iter()
        .map(|p| Complex64::from_polar(1.0, kx * p[0] + ky * p[1]))
        .collect()
}

/// Two-way RIS response `b(theta) = a(theta) .* a(theta_br)`.
pub fn combined_steering(
    theta: AnglePair,
    theta_br: AnglePair,
    geom: &RisGeometry,
    wavelength: f64,
) -> Vec<Complex64> {
    let a = ris_steering(theta, geom, wavelength);
    let abr = ris_steering(theta_br, geom, wavelength);
    a.iter().zip(&abr).map(|(x, y)| x * y).collect()
}

/// Frequency-domain delay response, entry n = exp(-j 2 pi n df tau).
pub fn delay_steering(tau: f64, n: usize, delta_f: f64) -> Vec<Complex64> {
    (0..n)
        .map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 * delta_f * tau))
        .collect()
}

/// Slow-time Doppler response, entry m = exp(+j 2 pi m T_s nu).
pub fn doppler_steering(nu: f64, m: usize, t_s: f64) -> Vec<Complex64> {
    (0..m)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * i as f64 * t_s * nu))
        .collect()
}

/// Normalized RIS power radiation pattern `(cos el)^0.285`.
pub fn radiation_pattern(theta: AnglePair) -> Result<f64> {
    let c = theta.el.cos();
    if c < -1e-12 {
        return Err(Error::AngleOutOfRange {
            az_deg: theta.az_deg(),
            el_deg: theta.el_deg(),
        });
    }
    Ok(c.max(0.0).powf(0.285))
}

/// Magnitude of the two-way channel gain over the BS-RIS-target path.
pub fn channel_gain(
    cfg: &ScenarioConfig,
    theta: AnglePair,
    theta_br: AnglePair,
    d_br: f64,
    d: f64,
) -> Result<f64> {
    if !(d_br > 0.0) || !(d > 0.0) {
        return Err(Error::Geometry(format!(
            "distances must be positive (d_br = {d_br}, d = {d})"
        )));
    }
    let f = radiation_pattern(theta)?;
    let fbr = radiation_pattern(theta_br)?;
    let dx = cfg.ris.spacing;
    let dy = cfg.ris.spacing;
    let num = cfg.transmit_power
        * cfg.bs_gain.powi(2)
        * cfg.ris_patch_gain.powi(2)
        * f.powi(2)
        * fbr.powi(2)
        * dx.powi(2)
        * dy.powi(2)
        * cfg.wavelength.powi(2)
        * cfg.rcs;
    let den = (4.0 * PI).powi(5) * d_br.powi(4) * d.powi(4);
    Ok((num / den).sqrt())
}

/// True path parameters derived from the scene, plus the known BS leg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub path: PathParams,
    pub theta_br: AnglePair,
    pub d_br: f64,
    pub d: f64,
    /// Target speed along the RIS-to-target line, m/s (positive receding).
    pub radial_velocity: f64,
}

/// Converts the Cartesian scene into path parameters. `alpha` carries zero
/// phase; trial code rotates it.
pub fn scene_to_path(cfg: &ScenarioConfig) -> Result<PathGeometry> {
    let to_target = sub(cfg.target_position, cfg.ris_position);
    let (theta, d) = AnglePair::from_vector(to_target)
        .map_err(|_| Error::Geometry("target coincides with the RIS".into()))?;
    let (theta_br, d_br) = cfg.bs_direction()?;
    let tau = 2.0 * (d_br + d) / SPEED_OF_LIGHT;
    let u = theta.direction();
    let radial_velocity = dot(cfg.target_velocity, u);
    let nu = -2.0 * radial_velocity / cfg.wavelength;
    let gain = channel_gain(cfg, theta, theta_br, d_br, d)?;
    Ok(PathGeometry {
        path: PathParams {
            alpha: Complex64::new(gain, 0.0),
            tau,
            nu,
            theta,
        },
        theta_br,
        d_br,
        d,
        radial_velocity,
    })
}

/// Range (RIS to target) implied by a round-trip delay.
pub fn delay_to_range(tau: f64, d_br: f64) -> f64 {
    SPEED_OF_LIGHT * tau / 2.0 - d_br
}

/// Radial velocity implied by a Doppler shift, `v = -nu lambda / 2`.
pub fn doppler_to_velocity(nu: f64, wavelength: f64) -> f64 {
    -nu * wavelength / 2.0
}

pub fn velocity_to_doppler(v: f64, wavelength: f64) -> f64 {
    -2.0 * v / wavelength
}
