//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.
//!
//! The stochastic criteria run at full scale and take a while in release
//! mode; `RIS_NLOS_THREADS` is not read here, rayon uses its default pool.

use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;

use ris_nlos::crb::{crb_curve, mean_jacobian, scenario_crb, PARAM_NAMES};
use ris_nlos::estimator::{segment, Processor, RefinementSettings};
use ris_nlos::estimator::coarse::CoarsePlans;
use ris_nlos::exec::Execution;
use ris_nlos::experiments::{
    calibrate_setup, cell_stream, exceedance, first_sidelobe, objective_cuts, rmse, run_batch, trial_seeds, CutKind,
    DeskScale, EstimatorKind, EstimatorSelection, Setup, SweepConfig, TrialOptions, TrialResult, STREAM_DETECTION,
    STREAM_RMSE, STREAM_VALIDATION,
};
use ris_nlos::forward::synthesize_mean;
use ris_nlos::geometry::{
    delay_steering, doppler_steering, polar_position, scene_to_path, AnglePair, PathParams, RisGeometry,
    ScenarioConfig,
};
use ris_nlos::schedule::{effective_gain, PhaseSchedule};
use ris_nlos::units::rad;

const MASTER_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: &str, name: &str, started: Instant, o: &Outcome) {
    println!(
        "{} {id} {name}: {} [{:.1} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
}

fn exec() -> Execution {
    if Execution::available() {
        Execution::Parallel
    } else {
        Execution::Serial
    }
}

fn paper(ml: usize) -> ScenarioConfig {
    ScenarioConfig::default().with_m_over_l(ml)
}

fn crb_at_35(ml: usize) -> ris_nlos::crb::CrbReport {
    let cfg = paper(ml).with_power_dbm(35.0);
    let geo = scene_to_path(&cfg).unwrap();
    let s = PhaseSchedule::scanning(&cfg, geo.theta_br).unwrap();
    scenario_crb(&cfg, &s).unwrap()
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn crb_reproduction() -> Outcome {
    let a = crb_at_35(2);
    let b = crb_at_35(5);
    let checks = [
        ("range M/L=2 [m]", a.range_m, 0.0165),
        ("velocity M/L=2 [m/s]", a.velocity_mps, 0.0336),
        ("az M/L=5 [deg]", b.az_deg, 0.128),
        ("el M/L=5 [deg]", b.el_deg, 0.0798),
    ];
    let pass = checks.iter().all(|(_, v, t)| within(*v, *t, 0.15));
    let detail = checks
        .iter()
        .map(|(n, v, t)| format!("{n} {v:.4e} vs {t} (x{:.2})", v / t))
        .collect::<Vec<_>>()
        .join("; ");
    Outcome { pass, detail }
}

fn power_scaling() -> Outcome {
    let powers: Vec<f64> = (0..=8).map(|i| 15.0 + 2.5 * i as f64).collect();
    let mut worst = 0.0f64;
    for ml in [2, 5] {
        let cfg = paper(ml);
        let geo = scene_to_path(&cfg).unwrap();
        let s = PhaseSchedule::scanning(&cfg, geo.theta_br).unwrap();
        let c = crb_curve(&cfg, &s, &powers).unwrap();
        // Pairs 10 dB apart: index i and i + 4.
        for i in 0..c.len() - 4 {
            let (lo, hi) = (&c[i], &c[i + 4]);
            for (x, y) in [
                (lo.range_crb_m, hi.range_crb_m),
                (lo.velocity_crb_mps, hi.velocity_crb_mps),
                (lo.az_crb_deg, hi.az_crb_deg),
                (lo.el_crb_deg, hi.el_crb_deg),
            ] {
                worst = worst.max((x / y / 10f64.sqrt() - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: worst <= 0.01,
        detail: format!("largest deviation from sqrt(10) per 10 dB: {:.2e}", worst),
    }
}

struct DeskRun {
    joint: ris_nlos::experiments::ParamErrors,
    di: ris_nlos::experiments::ParamErrors,
    crb: ris_nlos::crb::CrbReport,
}

fn desk_run() -> DeskRun {
    let sweep = SweepConfig {
        powers_dbm: vec![35.0],
        m_over_l: vec![5],
        desk: Some(DeskScale::default()),
        ..SweepConfig::default()
    };
    let cfg = sweep.scenario(&ScenarioConfig::default(), 5).unwrap();
    let setup = Setup::new(&cfg, &RefinementSettings::default(), exec()).unwrap();
    let seeds = trial_seeds(MASTER_SEED, cell_stream(STREAM_RMSE, 5, 0), sweep.trial_count());
    let res = run_batch(&setup, &seeds, 35.0, &TrialOptions::default(), exec()).unwrap();
    DeskRun {
        joint: rmse(&res, EstimatorKind::Joint).unwrap(),
        di: rmse(&res, EstimatorKind::Di).unwrap(),
        crb: setup.crb_at(35.0).unwrap(),
    }
}

fn efficiency(d: &DeskRun) -> Outcome {
    let pairs = [
        ("range", d.joint.range_m, d.crb.range_m),
        ("velocity", d.joint.velocity_mps, d.crb.velocity_mps),
        ("az", d.joint.az_deg, d.crb.az_deg),
        ("el", d.joint.el_deg, d.crb.el_deg),
    ];
    Outcome {
        pass: pairs.iter().all(|(_, r, c)| *r <= 1.5 * c),
        detail: pairs
            .iter()
            .map(|(n, r, c)| format!("{n} {r:.4e}/{c:.4e}={:.2}", r / c))
            .collect::<Vec<_>>()
            .join("; "),
    }
}

fn di_degradation(d: &DeskRun) -> Outcome {
    let f = d.di.az_deg / d.joint.az_deg;
    Outcome {
        pass: f >= 3.0,
        detail: format!("DI az {:.4} deg, joint az {:.4} deg, factor {f:.1}", d.di.az_deg, d.joint.az_deg),
    }
}

fn waterfall() -> Outcome {
    let setup = Setup::new(&paper(2), &RefinementSettings::default(), exec()).unwrap();
    let opts = TrialOptions {
        estimators: EstimatorSelection::Joint,
        ..TrialOptions::default()
    };
    let run = |p: f64, idx: usize| {
        let seeds = trial_seeds(MASTER_SEED, cell_stream(STREAM_RMSE, 2, idx), 100);
        rmse(&run_batch(&setup, &seeds, p, &opts, exec()).unwrap(), EstimatorKind::Joint)
            .unwrap()
            .range_m
    };
    let low = run(15.0, 0);
    let high = run(35.0, 8);
    Outcome {
        pass: low >= 100.0 * high,
        detail: format!("range RMSE {low:.3e} m at 15 dBm, {high:.3e} m at 35 dBm, ratio {:.1}", low / high),
    }
}

/// Smallest `k` with `P(X <= k) >= q` for `X ~ Binomial(n, p)`.
fn binomial_quantile(n: usize, p: f64, q: f64) -> usize {
    let mut cdf = 0.0;
    let mut ln_pmf = n as f64 * (1.0 - p).ln();
    for k in 0..=n {
        cdf += ln_pmf.exp();
        if cdf >= q {
            return k;
        }
        ln_pmf += ((n - k) as f64 / (k + 1) as f64).ln() + (p / (1.0 - p)).ln();
    }
    n
}

fn detection() -> Outcome {
    let p_fa = 1e-2;
    let sweep = SweepConfig {
        powers_dbm: vec![25.0],
        m_over_l: vec![5],
        trials: 500,
        estimators: EstimatorSelection::Joint,
        p_fa: vec![p_fa],
        noise_trials: 2000,
        ..SweepConfig::default()
    };
    let setup = Setup::new(&paper(5), &RefinementSettings::default(), exec()).unwrap();
    let gamma = calibrate_setup(&setup, &sweep, exec()).unwrap()[0].2;
    let stats = |res: &[TrialResult]| -> Vec<f64> {
        res.iter().map(|r| r.joint.as_ref().unwrap().record.statistic).collect()
    };
    let opts = TrialOptions {
        estimators: EstimatorSelection::Joint,
        ..TrialOptions::default()
    };
    let seeds = trial_seeds(MASTER_SEED, cell_stream(STREAM_DETECTION, 5, 0), sweep.trials);
    let p_d = exceedance(&stats(&run_batch(&setup, &seeds, 25.0, &opts, exec()).unwrap()), gamma);

    let fresh = 1000;
    let h0 = TrialOptions {
        target_absent: true,
        ..opts
    };
    let seeds = trial_seeds(MASTER_SEED, cell_stream(STREAM_VALIDATION, 5, 0), fresh);
    let false_alarms = (exceedance(&stats(&run_batch(&setup, &seeds, f64::NAN, &h0, exec()).unwrap()), gamma)
        * fresh as f64)
        .round() as usize;
    let lo = binomial_quantile(fresh, p_fa, 0.025);
    let hi = binomial_quantile(fresh, p_fa, 0.975);
    Outcome {
        pass: p_d >= 0.95 && (lo..=hi).contains(&false_alarms),
        detail: format!(
            "gamma {gamma:.4e}, P_d {p_d:.3} at 25 dBm, {false_alarms}/{fresh} false alarms (95% region {lo}..={hi})"
        ),
    }
}

struct Tiny {
    cfg: ScenarioConfig,
    sched: PhaseSchedule,
    eta: PathParams,
}

fn tiny(n: usize, m: usize, ml: usize, side: usize, target: AnglePair, range: f64) -> Tiny {
    let mut cfg = ScenarioConfig::default().with_waveform(n, m);
    cfg.ris = RisGeometry::uniform_rectangular(side, side, cfg.wavelength / 4.0);
    cfg.m_over_l = ml;
    cfg.target_position = polar_position(cfg.ris_position, range, target);
    let geo = scene_to_path(&cfg).unwrap();
    let sched = PhaseSchedule::scanning(&cfg, geo.theta_br).unwrap();
    let mut eta = geo.path;
    eta.alpha = Complex64::from_polar(1.0, 0.7);
    Tiny { cfg, sched, eta }
}

/// Pipeline statistic against an exhaustive 4D grid over one full delay and
/// Doppler period and the whole angular domain.
fn exhaustive_grid(t: &Tiny) -> (f64, f64) {
    let y = synthesize_mean(&t.eta, &t.sched, &t.cfg).unwrap();
    let p = Processor::new(&t.cfg, &t.sched, &RefinementSettings::default()).unwrap();
    let est = p.estimate(&y).unwrap().statistic;
    let tau_period = 1.0 / t.cfg.subcarrier_spacing;
    let nu_period = 1.0 / t.cfg.block_duration();
    let mut best = 0.0f64;
    let (nt, nn) = (4 * t.cfg.subcarriers, 4 * t.cfg.symbols);
    for it in 0..nt {
        let tau = tau_period * it as f64 / nt as f64;
        for inu in 0..nn {
            let nu = -0.5 * nu_period + nu_period * inu as f64 / nn as f64;
            for ia in 0..37 {
                for ie in 0..19 {
                    let s = p.statistic(&y, tau, nu, rad(-90.0 + 5.0 * ia as f64), rad(5.0 * ie as f64));
                    best = best.max(s);
                }
            }
        }
    }
    (est, best)
}

fn naive_map_error(t: &Tiny, padding: usize) -> f64 {
    let y = synthesize_mean(&t.eta, &t.sched, &t.cfg).unwrap();
    let (n, l) = (t.cfg.subcarriers, t.sched.profile_count());
    let r = t.sched.reps();
    let q = r * padding;
    let segs = segment(&y, l).unwrap();
    let map = CoarsePlans::new(n, r, padding).map(segs.segments.iter().map(|s| s.view()));
    let ts = t.cfg.block_duration();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..n {
        let c = delay_steering(i as f64 / (n as f64 * t.cfg.subcarrier_spacing), n, t.cfg.subcarrier_spacing);
        for j in 0..q {
            let d = doppler_steering(j as f64 / (q as f64 * ts), r, ts);
            let mut v = 0.0;
            for s in &segs.segments {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..n {
                    for b in 0..r {
                        acc += c[a].conj() * s[[a, b]] * d[b].conj();
                    }
                }
                v += acc.norm_sqr();
            }
            num = num.max((map[[i, j]] - v).abs());
            den = den.max(v);
        }
    }
    num / den
}

fn kronecker_error(t: &Tiny) -> f64 {
    let (m, l, r) = (t.sched.symbols(), t.sched.profile_count(), t.sched.reps());
    let ts = t.cfg.block_duration();
    let d = doppler_steering(t.eta.nu, m, ts);
    let dl = doppler_steering(t.eta.nu, l, r as f64 * ts);
    let dr = doppler_steering(t.eta.nu, r, ts);
    let (theta_br, _) = t.cfg.bs_direction().unwrap();
    let (g, gl) = effective_gain(t.eta.theta, &t.sched, theta_br, &t.cfg.ris, t.cfg.wavelength);
    let mut worst = 0.0f64;
    for i in 0..l {
        for k in 0..r {
            let idx = i * r + k;
            worst = worst.max((d[idx] - dl[i] * dr[k]).norm());
            worst = worst.max((g[idx] - gl[i]).norm() / gl[i].norm().max(f64::MIN_POSITIVE));
        }
    }
    worst
}

fn jacobian_error(t: &Tiny) -> f64 {
    let jac = mean_jacobian(&t.eta, &t.sched, &t.cfg).unwrap();
    let steps = [1e-4, 1e-4, 1e-12, 1.0, rad(1e-4), rad(1e-4)];
    let mut worst = 0.0f64;
    for (k, &h) in steps.iter().enumerate() {
        let shifted = |s: f64| {
            let mut e = t.eta;
            match k {
                0 => e.alpha.re += s,
                1 => e.alpha.im += s,
                2 => e.tau += s,
                3 => e.nu += s,
                4 => e.theta.az += s,
                _ => e.theta.el += s,
            }
            synthesize_mean(&e, &t.sched, &t.cfg).unwrap()
        };
        let fd: Array2<Complex64> = (shifted(h) - shifted(-h)).mapv(|z| z / (2.0 * h));
        let diff: f64 = fd.iter().zip(jac.column(k)).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let rel = diff / norm;
        if rel > 1e-6 {
            eprintln!("jacobian column {} relative error {rel:.2e}", PARAM_NAMES[k]);
        }
        worst = worst.max(rel);
    }
    worst
}

fn oracles() -> Outcome {
    let instances = [
        tiny(16, 8, 4, 3, AnglePair::from_degrees(45.0, 60.0).unwrap(), 10.0),
        tiny(16, 8, 4, 3, AnglePair::from_degrees(-30.0, 25.0).unwrap(), 12.0),
    ];
    let mut grid_ok = true;
    let mut grid_gap = f64::NEG_INFINITY;
    for t in &instances {
        let (est, best) = exhaustive_grid(t);
        grid_ok &= est >= best * (1.0 - 1e-6);
        grid_gap = grid_gap.max(1.0 - est / best);
    }
    let paper_scale = tiny(1024, 1120, 5, 21, AnglePair::from_degrees(45.0, 60.0).unwrap(), 10.0);
    let small = tiny(32, 24, 4, 4, AnglePair::from_degrees(45.0, 60.0).unwrap(), 10.0);
    let map_err = [1, 4].iter().map(|&p| naive_map_error(&small, p)).fold(0.0, f64::max);
    let kron = kronecker_error(&paper_scale).max(kronecker_error(&instances[0]));
    let jac = jacobian_error(&tiny(12, 16, 4, 3, AnglePair::from_degrees(45.0, 60.0).unwrap(), 10.0));
    let parts = [
        ("(a) grid", grid_ok),
        ("(b) FFT map", map_err <= 1e-9),
        ("(c) Kronecker", kron <= 1e-12),
        ("(d) Jacobian", jac <= 1e-6),
    ];
    Outcome {
        pass: parts.iter().all(|(_, ok)| *ok),
        detail: format!(
            "{}; grid shortfall {grid_gap:.1e}, map err {map_err:.1e}, Kronecker err {kron:.1e}, Jacobian err {jac:.1e}",
            parts
                .iter()
                .map(|(n, ok)| format!("{n} {}", if *ok { "ok" } else { "bad" }))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn velocity_cuts() -> Outcome {
    let cuts = objective_cuts(&ScenarioConfig::default(), &RefinementSettings::default(), &[2, 5], 40.0, 8001, exec())
        .unwrap();
    let lobe = |ml: usize| {
        let (v, f): (Vec<f64>, Vec<f64>) = cuts
            .iter()
            .filter(|c| c.m_over_l == ml && c.which == CutKind::Full)
            .map(|c| (c.velocity_mps, c.value))
            .unzip();
        first_sidelobe(&v, &f, 0.01, 0.5)
    };
    match (lobe(2), lobe(5)) {
        (Some(a), Some(b)) => Outcome {
            pass: a.offset_mps.abs() > b.offset_mps.abs() && a.level > b.level,
            detail: format!(
                "M/L=2 sidelobe at {:+.3} m/s level {:.3}; M/L=5 at {:+.3} m/s level {:.3}",
                a.offset_mps, a.level, b.offset_mps, b.level
            ),
        },
        (a, b) => Outcome {
            pass: false,
            detail: format!("missing major sidelobe: M/L=2 {a:?}, M/L=5 {b:?}"),
        },
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut run = |id: &str, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        report(id, name, t, &o);
        all &= o.pass;
    };
    run("1", "CRB at 35 dBm within 15% of the reference endpoints", &crb_reproduction);
    run("2", "CRB scales as 1/sqrt(P) within 1%", &power_scaling);
    let t = Instant::now();
    let desk = desk_run();
    println!("desk M/L=5 batch: 200 trials at 35 dBm in {:.1} s", t.elapsed().as_secs_f64());
    run("3", "desk joint RMSE within 1.5x CRB", &|| efficiency(&desk));
    run("4", "range waterfall 15 vs 35 dBm >= 100x", &waterfall);
    run("5", "DI azimuth RMSE >= 3x joint", &|| di_degradation(&desk));
    run("6", "detection P_d >= 0.95 at 25 dBm, calibrated P_fa", &detection);
    run("7", "oracle equivalence", &oracles);
    run("8", "velocity cut sidelobes M/L=2 vs M/L=5", &velocity_cuts);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
