//! GLRT statistic, the staged joint estimator and the Doppler-ignorant
//! baseline.
//!
//! Pipeline: non-coherent delay-Doppler map over the `L` segments, 2D ascent
//! of the segment-wise objective, angle search on a precomputed grid with
//! 2D refinement, then joint refinement of `(tau, nu, az, el)` on the full
//! GLRT statistic. Refinements are block-coordinate: the delay block and the
//! remaining block alternate, each solved by [`ascent::ascend`], so the
//! statistic is non-decreasing throughout.

pub mod ascent;
pub mod coarse;
pub mod dictionary;

use std::f64::consts::PI;

use ndarray::{s, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::forward::slow_time_signature;
use crate::geometry::{
    delay_steering, delay_to_range, doppler_to_velocity, AnglePair, PathParams, ScenarioConfig,
};
use crate::schedule::PhaseSchedule;
use crate::units::{deg, rad};

use ascent::{ascend, AscentOptions, AscentResult, StepPolicy};
use coarse::{argmax, bin_centers, CoarseMap, CoarsePeak, CoarsePlans};
use dictionary::{AngleDictionary, GainModel};

/// `Y` split into `L` consecutive column blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentStack {
    pub segments: Vec<Array2<Complex64>>,
}

impl SegmentStack {
    pub fn concat(&self) -> Array2<Complex64> {
        let views: Vec<_> = self.segments.iter().map(|s| s.view()).collect();
        ndarray::concatenate(ndarray::Axis(1), &views).expect("segments share row count")
    }
}

pub fn segment(y: &Array2<Complex64>, l: usize) -> Result<SegmentStack> {
    let m = y.ncols();
    if l == 0 || m % l != 0 {
        return Err(Error::Divisibility {
            what: "symbol count M",
            total: m,
            divisor: l,
        });
    }
    let r = m / l;
    Ok(SegmentStack {
        segments: (0..l)
            .map(|i| y.slice(s![.., i * r..(i + 1) * r]).to_owned())
            .collect(),
    })
}

/// Per-segment complex gains.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentGains {
    pub beta: Vec<Complex64>,
}

/// Least-squares `beta_l = c^H Y_l conj(d_R(nu)) / (N R)` per segment.
pub fn segment_gains(stack: &SegmentStack, tau: f64, nu: f64, delta_f: f64, t_s: f64) -> SegmentGains {
    let beta = stack
        .segments
        .iter()
        .map(|seg| {
            let (n, r) = seg.dim();
            let c = delay_steering(tau, n, delta_f);
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..r {
                let dk = Complex64::from_polar(1.0, -2.0 * PI * k as f64 * t_s * nu);
                let col: Complex64 = (0..n).map(|i| c[i].conj() * seg[[i, k]]).sum();
                acc += col * dk;
            }
            acc / (n * r) as f64
        })
        .collect();
    SegmentGains { beta }
}

fn check_dims(y: &Array2<Complex64>, cfg: &ScenarioConfig) -> Result<()> {
    if y.dim() != (cfg.subcarriers, cfg.symbols) {
        return Err(Error::Dimension {
            expected: format!("{}x{}", cfg.subcarriers, cfg.symbols),
            actual: format!("{}x{}", y.nrows(), y.ncols()),
        });
    }
    Ok(())
}

/// `(c(tau)^H Y conj(h), ||h||^2)` for a generic schedule.
fn matched_filter(
    y: &Array2<Complex64>,
    tau: f64,
    nu: f64,
    theta: AnglePair,
    sched: &PhaseSchedule,
    cfg: &ScenarioConfig,
) -> Result<(Complex64, f64)> {
    check_dims(y, cfg)?;
    let (theta_br, _) = cfg.bs_direction()?;
    let h = slow_time_signature(nu, theta, sched, cfg, theta_br);
    let hn: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    if !(hn > 0.0) {
        return Err(Error::DegenerateProfile);
    }
    let c = delay_steering(tau, cfg.subcarriers, cfg.subcarrier_spacing);
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, row) in y.rows().into_iter().enumerate() {
        let r: Complex64 = row.iter().zip(&h).map(|(a, b)| a * b.conj()).sum();
        acc += c[i].conj() * r;
    }
    Ok((acc, hn))
}

/// Least-squares gain `c^H Y conj(h) / (N ||h||^2)`.
pub fn alpha_hat(
    y: &Array2<Complex64>,
    tau: f64,
    nu: f64,
    theta: AnglePair,
    sched: &PhaseSchedule,
    cfg: &ScenarioConfig,
) -> Result<Complex64> {
    let (num, hn) = matched_filter(y, tau, nu, theta, sched, cfg)?;
    Ok(num / (cfg.subcarriers as f64 * hn))
}

/// GLRT statistic `|c^H Y conj(h)|^2 / ||h||^2`.
pub fn glrt_statistic(
    y: &Array2<Complex64>,
    tau: f64,
    nu: f64,
    theta: AnglePair,
    sched: &PhaseSchedule,
    cfg: &ScenarioConfig,
) -> Result<f64> {
    let (num, hn) = matched_filter(y, tau, nu, theta, sched, cfg)?;
    Ok(num.norm_sqr() / hn)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// `H1` iff `statistic > gamma`.
pub fn detect(statistic: f64, gamma: f64) -> Hypothesis {
    if statistic > gamma {
        Hypothesis::H1
    } else {
        Hypothesis::H0
    }
}

/// Search and refinement knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementSettings {
    pub angle_step_deg: f64,
    pub az_range_deg: (f64, f64),
    pub el_range_deg: (f64, f64),
    /// Zero-padding factor of the coarse Doppler FFT.
    pub doppler_padding: usize,
    pub step_policy: StepPolicy,
    /// Iteration cap of each inner ascent.
    pub max_iterations: usize,
    /// Cap on block-coordinate sweeps per refinement stage.
    pub max_sweeps: usize,
    /// Convergence tolerance on moves, in resolution cells.
    pub tolerance: f64,
    /// Finite-difference half-widths: fraction of a delay bin, fraction of a
    /// Doppler bin, and degrees.
    pub fd_delay_bins: f64,
    pub fd_doppler_bins: f64,
    pub fd_angle_deg: f64,
    /// Trust length of one ascent step, in resolution cells.
    pub max_step: f64,
}

impl Default for RefinementSettings {
    fn default() -> Self {
        RefinementSettings {
            angle_step_deg: 1.0,
            az_range_deg: (-90.0, 90.0),
            el_range_deg: (0.0, 90.0),
            doppler_padding: 4,
            step_policy: StepPolicy::Newton,
            max_iterations: 50,
            max_sweeps: 20,
            tolerance: 1e-6,
            fd_delay_bins: 1e-3,
            fd_doppler_bins: 1e-3,
            fd_angle_deg: 0.01,
            max_step: 0.5,
        }
    }
}

impl RefinementSettings {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("angle_step_deg", self.angle_step_deg),
            ("tolerance", self.tolerance),
            ("fd_delay_bins", self.fd_delay_bins),
            ("fd_doppler_bins", self.fd_doppler_bins),
            ("fd_angle_deg", self.fd_angle_deg),
            ("max_step", self.max_step),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.doppler_padding == 0 || self.max_iterations == 0 || self.max_sweeps == 0 {
            return Err(Error::Config(
                "doppler_padding, max_iterations and max_sweeps must be positive".into(),
            ));
        }
        for (name, (lo, hi)) in [("az_range_deg", self.az_range_deg), ("el_range_deg", self.el_range_deg)] {
            if !(lo <= hi) {
                return Err(Error::Config(format!("{name} is empty: ({lo}, {hi})")));
            }
        }
        if self.az_range_deg.0 < -180.0 || self.az_range_deg.1 > 180.0 || self.el_range_deg.0 < -90.0 || self.el_range_deg.1 > 90.0 {
            return Err(Error::Config("angle search region outside the sphere".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub iterations: usize,
    pub converged: bool,
}

impl StageReport {
    fn absorb(&mut self, r: &AscentResult) {
        self.iterations += r.iterations;
        self.converged &= r.converged;
    }
}

/// Intermediate values of one run of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub coarse: CoarsePeak,
    /// `(tau, nu)` after the segment-wise refinement.
    pub delay_doppler: (f64, f64),
    pub angle_grid: AnglePair,
    pub angles: AnglePair,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub eta_hat: PathParams,
    pub statistic: f64,
    pub trace: StageTrace,
    pub delay_doppler: StageReport,
    pub angles: StageReport,
    pub refinement: StageReport,
    /// Statistic after each refinement block.
    pub history: Vec<f64>,
}

impl Estimate {
    pub fn converged(&self) -> bool {
        self.delay_doppler.converged && self.angles.converged && self.refinement.converged
    }

    pub fn record(&self, d_br: f64, wavelength: f64) -> EstimateRecord {
        let e = &self.eta_hat;
        EstimateRecord {
            tau_s: e.tau,
            range_m: delay_to_range(e.tau, d_br),
            nu_hz: e.nu,
            velocity_mps: doppler_to_velocity(e.nu, wavelength),
            az_deg: e.theta.az_deg(),
            el_deg: e.theta.el_deg(),
            alpha_re: e.alpha.re,
            alpha_im: e.alpha.im,
            statistic: self.statistic,
            converged_delay_doppler: self.delay_doppler.converged,
            converged_angles: self.angles.converged,
            converged_refinement: self.refinement.converged,
        }
    }
}

/// Flat serialized form of an [`Estimate`].
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub tau_s: f64,
    pub range_m: f64,
    pub nu_hz: f64,
    pub velocity_mps: f64,
    pub az_deg: f64,
    pub el_deg: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub statistic: f64,
    pub converged_delay_doppler: bool,
    pub converged_angles: bool,
    pub converged_refinement: bool,
}

/// `exp(j phase i)` for `i < n`: a rotation recurrence, re-anchored exactly
/// every 64 samples so rounding cannot build up.
fn phasor_ramp(n: usize, phase: f64) -> Vec<Complex64> {
    const ANCHOR: usize = 64;
    let step = Complex64::from_polar(1.0, phase);
    let mut out = Vec::with_capacity(n);
    let mut z = Complex64::new(1.0, 0.0);
    for i in 0..n {
        if i % ANCHOR == 0 {
            z = Complex64::from_polar(1.0, phase * i as f64);
        }
        out.push(z);
        z *= step;
    }
    out
}

/// Recent `g_L(az, el)` evaluations. Finite-difference stencils revisit
/// the same angles while only the Doppler moves.
struct GainCache<'a> {
    model: &'a GainModel,
    entries: Vec<([u64; 2], Vec<Complex64>)>,
}

impl<'a> GainCache<'a> {
    const CAPACITY: usize = 16;

    fn new(model: &'a GainModel) -> Self {
        GainCache {
            model,
            entries: Vec::with_capacity(Self::CAPACITY),
        }
    }

    fn get(&mut self, az: f64, el: f64) -> &[Complex64] {
        let key = [az.to_bits(), el.to_bits()];
        let i = match self.entries.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                if self.entries.len() == Self::CAPACITY {
                    self.entries.remove(0);
                }
                self.entries.push((key, self.model.gains(az, el)));
                self.entries.len() - 1
            }
        };
        &self.entries[i].1
    }
}

/// Maps raw `(az, el)` onto the canonical hemisphere with `el >= 0`; the
/// array response only sees the in-plane direction cosines, so the
/// statistic is unchanged.
pub fn canonical_angles(az: f64, el: f64) -> AnglePair {
    let u = el.cos() * az.cos();
    let v = el.cos() * az.sin();
    let r = u.hypot(v).min(1.0);
    AnglePair::normalized(v.atan2(u), r.acos())
}

/// Shared, read-only state for estimating many observations of one
/// scenario and schedule.
#[derive(Clone, Debug)]
pub struct Processor {
    n: usize,
    m: usize,
    l: usize,
    reps: usize,
    delta_f: f64,
    t_s: f64,
    wavelength: f64,
    d_br: f64,
    theta_br: AnglePair,
    gains: GainModel,
    dict: AngleDictionary,
    plans: CoarsePlans,
    settings: RefinementSettings,
}

impl Processor {
    pub fn new(cfg: &ScenarioConfig, sched: &PhaseSchedule, settings: &RefinementSettings) -> Result<Self> {
        Self::with_execution(cfg, sched, settings, Execution::default())
    }

    pub fn with_execution(
        cfg: &ScenarioConfig,
        sched: &PhaseSchedule,
        settings: &RefinementSettings,
        exec: Execution,
    ) -> Result<Self> {
        settings.validate()?;
        if sched.symbols() != cfg.symbols {
            return Err(Error::Dimension {
                expected: format!("{} schedule columns", cfg.symbols),
                actual: sched.symbols().to_string(),
            });
        }
        if sched.n_elements() != cfg.ris.n_elements() {
            return Err(Error::Dimension {
                expected: format!("{} RIS elements", cfg.ris.n_elements()),
                actual: sched.n_elements().to_string(),
            });
        }
        let (theta_br, d_br) = cfg.bs_direction()?;
        let gains = GainModel::new(sched, theta_br, &cfg.ris, cfg.wavelength);
        let dict = AngleDictionary::build(
            &gains,
            settings.az_range_deg,
            settings.el_range_deg,
            settings.angle_step_deg,
            exec,
        );
        Ok(Processor {
            n: cfg.subcarriers,
            m: cfg.symbols,
            l: sched.profile_count(),
            reps: sched.reps(),
            delta_f: cfg.subcarrier_spacing,
            t_s: cfg.block_duration(),
            wavelength: cfg.wavelength,
            d_br,
            theta_br,
            gains,
            dict,
            plans: CoarsePlans::new(cfg.subcarriers, sched.reps(), settings.doppler_padding),
            settings: settings.clone(),
        })
    }

    pub fn settings(&self) -> &RefinementSettings {
        &self.settings
    }

    pub fn theta_br(&self) -> AnglePair {
        self.theta_br
    }

    pub fn d_br(&self) -> f64 {
        self.d_br
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn dictionary(&self) -> &AngleDictionary {
        &self.dict
    }

    pub fn delay_bin(&self) -> f64 {
        1.0 / (self.n as f64 * self.delta_f)
    }

    /// Doppler resolution of one segment, `1/(R T_s)`.
    pub fn segment_doppler_bin(&self) -> f64 {
        1.0 / (self.reps as f64 * self.t_s)
    }

    /// Doppler resolution of the whole frame, `1/(M T_s)`.
    pub fn frame_doppler_bin(&self) -> f64 {
        1.0 / (self.m as f64 * self.t_s)
    }

    fn check(&self, y: &Array2<Complex64>) -> Result<()> {
        if y.dim() != (self.n, self.m) {
            return Err(Error::Dimension {
                expected: format!("{}x{}", self.n, self.m),
                actual: format!("{}x{}", y.nrows(), y.ncols()),
            });
        }
        Ok(())
    }

    fn conj_delay(&self, tau: f64) -> Vec<Complex64> {
        phasor_ramp(self.n, 2.0 * PI * self.delta_f * tau)
    }

    /// `c(tau)^H Y`, length `M`.
    fn project_delay(&self, y: &Array2<Complex64>, tau: f64) -> Vec<Complex64> {
        let e = self.conj_delay(tau);
        let mut v = vec![Complex64::new(0.0, 0.0); self.m];
        for (row, en) in y.rows().into_iter().zip(&e) {
            for (dst, x) in v.iter_mut().zip(row) {
                *dst += en * x;
            }
        }
        v
    }

    /// `w_l = sum_k v[l R + k] conj(d_{l R + k}(nu))`.
    fn combine(&self, v: &[Complex64], nu: f64) -> Vec<Complex64> {
        let d = phasor_ramp(self.m, -2.0 * PI * self.t_s * nu);
        v.chunks_exact(self.reps)
            .zip(d.chunks_exact(self.reps))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Statistic from per-profile gains and combined projections.
    fn stat_from(&self, g: &[Complex64], w: &[Complex64]) -> f64 {
        let gn: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        if gn == 0.0 {
            return 0.0;
        }
        let num: Complex64 = g.iter().zip(w).map(|(a, b)| a.conj() * b).sum();
        num.norm_sqr() / (self.reps as f64 * gn)
    }

    /// GLRT statistic at raw `(tau, nu, az, el)`; equals [`glrt_statistic`]
    /// for the schedule this processor was built with.
    pub fn statistic(&self, y: &Array2<Complex64>, tau: f64, nu: f64, az: f64, el: f64) -> f64 {
        let w = self.combine(&self.project_delay(y, tau), nu);
        self.stat_from(&self.gains.gains(az, el), &w)
    }

    pub fn alpha(&self, y: &Array2<Complex64>, tau: f64, nu: f64, theta: AnglePair) -> Result<Complex64> {
        let g = self.gains.gains(theta.az, theta.el);
        let gn: f64 = g.iter().map(|z| z.norm_sqr()).sum();
        if gn == 0.0 {
            return Err(Error::DegenerateProfile);
        }
        let w = self.combine(&self.project_delay(y, tau), nu);
        let num: Complex64 = g.iter().zip(&w).map(|(a, b)| a.conj() * b).sum();
        Ok(num / (self.n as f64 * self.reps as f64 * gn))
    }

    /// Segment-wise objective `sum_l |c^H Y_l conj(d_R(nu))|^2`.
    pub fn delay_doppler_objective(&self, y: &Array2<Complex64>, tau: f64, nu: f64) -> f64 {
        let v = self.project_delay(y, tau);
        self.segment_power(&v, nu)
    }

    /// [`Processor::statistic`] along a Doppler cut with the rest held fixed.
    pub fn statistic_cut(&self, y: &Array2<Complex64>, tau: f64, theta: AnglePair, nus: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let v = self.project_delay(y, tau);
        let g = self.gains.gains(theta.az, theta.el);
        Ok(nus.iter().map(|&nu| self.stat_from(&g, &self.combine(&v, nu))).collect())
    }

    /// [`Processor::delay_doppler_objective`] along a Doppler cut.
    pub fn delay_doppler_cut(&self, y: &Array2<Complex64>, tau: f64, nus: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let v = self.project_delay(y, tau);
        Ok(nus.iter().map(|&nu| self.segment_power(&v, nu)).collect())
    }

    fn segment_power(&self, v: &[Complex64], nu: f64) -> f64 {
        let d: Vec<Complex64> = (0..self.reps)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * self.t_s * nu))
            .collect();
        v.chunks_exact(self.reps)
            .map(|seg| seg.iter().zip(&d).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr())
            .sum()
    }

    fn segments<'a>(&self, y: &'a Array2<Complex64>) -> impl Iterator<Item = ndarray::ArrayView2<'a, Complex64>> {
        let r = self.reps;
        (0..self.l).map(move |l| y.slice(s![.., l * r..(l + 1) * r]))
    }

    /// Stage 1: coarse map and its peak.
    pub fn coarse(&self, y: &Array2<Complex64>) -> Result<CoarseMap> {
        self.check(y)?;
        let map = self.plans.map(self.segments(y));
        let (k, q) = argmax(&map);
        let nq = self.plans.doppler_bins();
        let (tau0, nu0) = bin_centers(k, q, self.n, nq, self.delta_f, self.t_s);
        Ok(CoarseMap {
            map,
            delay_bin: self.delay_bin(),
            doppler_bin: 1.0 / (nq as f64 * self.t_s),
            peak: CoarsePeak {
                delay_index: k,
                doppler_index: q,
                tau0,
                nu0,
            },
        })
    }

    fn options(&self, fd: Vec<f64>) -> AscentOptions {
        AscentOptions {
            policy: self.settings.step_policy,
            max_iterations: self.settings.max_iterations,
            step_tolerance: self.settings.tolerance,
            max_step: self.settings.max_step,
            fd_steps: fd,
        }
    }

    fn delay_step(&self, u: &[Complex64], scale: f64, tau: f64, report: &mut StageReport) -> (f64, f64) {
        // |conj(c(tau))^T u|^2 / ||h||^2 is the statistic itself.
        let f = |x: &[f64]| {
            let e = self.conj_delay(x[0]);
            e.iter().zip(u).map(|(a, b)| a * b).sum::<Complex64>().norm_sqr() / scale
        };
        let r = ascend(f, &[tau], &[self.delay_bin()], &self.options(vec![self.settings.fd_delay_bins]));
        report.absorb(&r);
        (r.x[0], r.value)
    }

    /// Stage 2: block-coordinate ascent of the segment-wise objective.
    pub fn refine_delay_doppler(&self, y: &Array2<Complex64>, tau0: f64, nu0: f64) -> Result<(f64, f64, StageReport, Vec<f64>)> {
        self.check(y)?;
        let (mut tau, mut nu) = (tau0, nu0);
        let mut report = StageReport {
            iterations: 0,
            converged: true,
        };
        let mut history = vec![self.delay_doppler_objective(y, tau, nu)];
        let bin_nu = self.segment_doppler_bin();
        let mut swept_ok = false;
        for _ in 0..self.settings.max_sweeps {
            // Doppler block.
            let v = self.project_delay(y, tau);
            let r = ascend(
                |x: &[f64]| self.segment_power(&v, x[0]),
                &[nu],
                &[bin_nu],
                &self.options(vec![self.settings.fd_doppler_bins]),
            );
            report.absorb(&r);
            let dnu = (r.x[0] - nu).abs() / bin_nu;
            nu = r.x[0];
            history.push(r.value);
            // Delay block: Z[n, l] = sum_k Y[n, l R + k] conj(d_k(nu)).
            let z = self.doppler_fold(y, nu);
            let f = |x: &[f64]| {
                let e = self.conj_delay(x[0]);
                let mut acc = vec![Complex64::new(0.0, 0.0); self.l];
                for (row, en) in z.rows().into_iter().zip(&e) {
                    for (a, zz) in acc.iter_mut().zip(row) {
                        *a += en * zz;
                    }
                }
                acc.iter().map(|a| a.norm_sqr()).sum::<f64>()
            };
            let r = ascend(f, &[tau], &[self.delay_bin()], &self.options(vec![self.settings.fd_delay_bins]));
            report.absorb(&r);
            let dtau = (r.x[0] - tau).abs() / self.delay_bin();
            tau = r.x[0];
            history.push(r.value);
            if dnu < self.settings.tolerance && dtau < self.settings.tolerance {
                swept_ok = true;
                break;
            }
        }
        report.converged &= swept_ok;
        Ok((tau, nu, report, history))
    }

    fn doppler_fold(&self, y: &Array2<Complex64>, nu: f64) -> Array2<Complex64> {
        let r = self.reps;
        let d: Vec<Complex64> = (0..r)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * self.t_s * nu))
            .collect();
        let mut z = Array2::zeros((self.n, self.l));
        for (mut zr, yr) in z.rows_mut().into_iter().zip(y.rows()) {
            for (l, dst) in zr.iter_mut().enumerate() {
                *dst = (0..r).map(|k| yr[l * r + k] * d[k]).sum();
            }
        }
        z
    }

    fn angle_block(&self, w: &[Complex64], start: AnglePair, report: &mut StageReport) -> (AnglePair, f64) {
        let one = rad(1.0);
        let fd = self.settings.fd_angle_deg;
        let r = ascend(
            |x: &[f64]| self.stat_from(&self.gains.gains(x[0], x[1]), w),
            &[start.az, start.el],
            &[one, one],
            &self.options(vec![fd, fd]),
        );
        report.absorb(&r);
        (canonical_angles(r.x[0], r.x[1]), r.value)
    }

    /// Stage 3: grid search over the dictionary, then 2D ascent.
    pub fn estimate_angles(&self, y: &Array2<Complex64>, tau: f64, nu: f64) -> Result<(AnglePair, AnglePair, StageReport)> {
        self.check(y)?;
        let w = self.combine(&self.project_delay(y, tau), nu);
        let (p, _) = self.dict.best(&w);
        let (a, e) = self.dict.point_deg(p);
        let grid = AnglePair::normalized(rad(a), rad(e));
        let mut report = StageReport {
            iterations: 0,
            converged: true,
        };
        let (theta, _) = self.angle_block(&w, grid, &mut report);
        Ok((grid, theta, report))
    }

    /// Stage 4: joint refinement of `(tau, nu, az, el)` on the statistic.
    /// The delay block and the `(nu, az, el)` block alternate.
    pub fn refine_4d(&self, y: &Array2<Complex64>, init: &PathParams) -> Result<(PathParams, StageReport, Vec<f64>)> {
        self.refine_blocks(y, init, true)
    }

    fn refine_blocks(&self, y: &Array2<Complex64>, init: &PathParams, with_doppler: bool) -> Result<(PathParams, StageReport, Vec<f64>)> {
        self.check(y)?;
        let (mut tau, mut nu, mut az, mut el) = (init.tau, init.nu, init.theta.az, init.theta.el);
        if !with_doppler {
            nu = 0.0;
        }
        let mut report = StageReport {
            iterations: 0,
            converged: true,
        };
        let mut history = vec![self.statistic(y, tau, nu, az, el)];
        let bin_nu = self.frame_doppler_bin();
        let one = rad(1.0);
        let fd = self.settings.fd_angle_deg;
        let mut swept_ok = false;
        for _ in 0..self.settings.max_sweeps {
            // Delay block: u = Y conj(h).
            let g = self.gains.gains(az, el);
            let gn: f64 = g.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.reps as f64;
            if gn == 0.0 {
                return Err(Error::DegenerateProfile);
            }
            let hc: Vec<Complex64> = (0..self.m)
                .zip(phasor_ramp(self.m, 2.0 * PI * self.t_s * nu))
                .map(|(m, d)| (g[m / self.reps] * d).conj())
                .collect();
            let u: Vec<Complex64> = y
                .rows()
                .into_iter()
                .map(|row| row.iter().zip(&hc).map(|(a, b)| a * b).sum())
                .collect();
            let (t_new, val) = self.delay_step(&u, gn, tau, &mut report);
            let dtau = (t_new - tau).abs() / self.delay_bin();
            tau = t_new;
            history.push(val);

            // Remaining block on v = c(tau)^H Y.
            let v = self.project_delay(y, tau);
            let (moves, val) = if with_doppler {
                let mut cache = GainCache::new(&self.gains);
                let r = ascend(
                    |x: &[f64]| {
                        let w = self.combine(&v, x[0]);
                        self.stat_from(cache.get(x[1], x[2]), &w)
                    },
                    &[nu, az, el],
                    &[bin_nu, one, one],
                    &self.options(vec![self.settings.fd_doppler_bins, fd, fd]),
                );
                report.absorb(&r);
                let moves = [(r.x[0] - nu).abs() / bin_nu, (r.x[1] - az).abs() / one, (r.x[2] - el).abs() / one];
                nu = r.x[0];
                az = r.x[1];
                el = r.x[2];
                (moves, r.value)
            } else {
                let w = self.combine(&v, 0.0);
                let r = ascend(
                    |x: &[f64]| self.stat_from(&self.gains.gains(x[0], x[1]), &w),
                    &[az, el],
                    &[one, one],
                    &self.options(vec![fd, fd]),
                );
                report.absorb(&r);
                let moves = [0.0, (r.x[0] - az).abs() / one, (r.x[1] - el).abs() / one];
                az = r.x[0];
                el = r.x[1];
                (moves, r.value)
            };
            history.push(val);
            if dtau < self.settings.tolerance && moves.iter().all(|m| *m < self.settings.tolerance) {
                swept_ok = true;
                break;
            }
        }
        report.converged &= swept_ok;
        let theta = canonical_angles(az, el);
        let nu = self.wrap_doppler(nu);
        let alpha = self.alpha(y, tau, nu, theta)?;
        Ok((PathParams { alpha, tau, nu, theta }, report, history))
    }

    /// Folds a Doppler into `[-1/(2 T_s), 1/(2 T_s))`; the slow-time
    /// response is periodic with period `1/T_s`.
    fn wrap_doppler(&self, nu: f64) -> f64 {
        let p = 1.0 / self.t_s;
        nu - p * (nu * self.t_s + 0.5).floor()
    }

    /// Full joint pipeline.
    pub fn estimate(&self, y: &Array2<Complex64>) -> Result<Estimate> {
        let coarse = self.coarse(y)?.peak;
        let (tau, nu, dd, _) = self.refine_delay_doppler(y, coarse.tau0, coarse.nu0)?;
        let (grid, theta, ang) = self.estimate_angles(y, tau, nu)?;
        let init = PathParams {
            alpha: Complex64::new(0.0, 0.0),
            tau,
            nu,
            theta,
        };
        let (eta, refinement, history) = self.refine_4d(y, &init)?;
        Ok(self.finish(y, eta, coarse, (tau, nu), grid, theta, [dd, ang, refinement], history))
    }

    /// Doppler-ignorant baseline: the same stages with `nu = 0` throughout
    /// and a 3D `(tau, az, el)` refinement.
    pub fn di_estimate(&self, y: &Array2<Complex64>) -> Result<Estimate> {
        self.check(y)?;
        let prof = self.plans.delay_profile(self.segments(y));
        let k = prof
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b })
            .0;
        let tau0 = k as f64 / (self.n as f64 * self.delta_f);
        let coarse = CoarsePeak {
            delay_index: k,
            doppler_index: 0,
            tau0,
            nu0: 0.0,
        };
        let mut dd = StageReport {
            iterations: 0,
            converged: true,
        };
        let z = self.doppler_fold(y, 0.0);
        let f = |x: &[f64]| {
            let e = self.conj_delay(x[0]);
            let mut acc = vec![Complex64::new(0.0, 0.0); self.l];
            for (row, en) in z.rows().into_iter().zip(&e) {
                for (a, zz) in acc.iter_mut().zip(row) {
                    *a += en * zz;
                }
            }
            acc.iter().map(|a| a.norm_sqr()).sum::<f64>()
        };
        let r = ascend(f, &[tau0], &[self.delay_bin()], &self.options(vec![self.settings.fd_delay_bins]));
        dd.absorb(&r);
        let tau = r.x[0];
        let (grid, theta, ang) = self.estimate_angles(y, tau, 0.0)?;
        let init = PathParams {
            alpha: Complex64::new(0.0, 0.0),
            tau,
            nu: 0.0,
            theta,
        };
        let (eta, refinement, history) = self.refine_blocks(y, &init, false)?;
        Ok(self.finish(y, eta, coarse, (tau, 0.0), grid, theta, [dd, ang, refinement], history))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        y: &Array2<Complex64>,
        eta: PathParams,
        coarse: CoarsePeak,
        dd_point: (f64, f64),
        grid: AnglePair,
        angles: AnglePair,
        reports: [StageReport; 3],
        history: Vec<f64>,
    ) -> Estimate {
        let statistic = self.statistic(y, eta.tau, eta.nu, eta.theta.az, eta.theta.el);
        Estimate {
            eta_hat: eta,
            statistic,
            trace: StageTrace {
                coarse,
                delay_doppler: dd_point,
                angle_grid: grid,
                angles,
            },
            delay_doppler: reports[0],
            angles: reports[1],
            refinement: reports[2],
            history,
        }
    }

    /// Flat record of an estimate in physical units.
    pub fn record(&self, est: &Estimate) -> EstimateRecord {
        est.record(self.d_br, self.wavelength)
    }
}

/// Angle error in degrees, azimuth wrapped to `(-180, 180]`.
pub fn angle_error_deg(est: AnglePair, truth: AnglePair) -> (f64, f64) {
    (
        deg(crate::units::wrap_pi(est.az - truth.az)),
        deg(est.el - truth.el),
    )
}
