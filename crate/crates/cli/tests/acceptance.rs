//! Acceptance suite: every criterion checked against the reference
//! configuration in `configs/converge.json`, one verdict line per criterion.
//! Run `cargo test --test acceptance -- --nocapture` to see the lines for
//! passing criteria too; failed criteria print theirs in the panic output.
//!
//! Criteria 1 and 3 declare conservative first-order windows for the
//! matched-window orders and the corresponding short-window orders. The
//! matched comparison implemented here tracks the full dynamics more
//! tightly than that: the matching transient dies out within the memory
//! horizon and the remaining defect is quadratic in the scale ratio, so the
//! measured slopes land near 2 (matched window) and near 4 and 3 (short
//! window). Those assertions therefore fail against honest measurements.
//! The windows are asserted as declared rather than widened to fit; the
//! emitted slope reports carry the measured values.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use solwave::effective::{integrate_effective, ParticleState};
use solwave::fields::{
    finite_eps_field, flux_sphere_quadrature, limit_fields, radiated_power, retarded_time,
};
use solwave::fullfield::{
    integrate_full, kernel_time_integral, taylor_residual, MemoryKernel, TrajectoryHistory,
};
use solwave::kinematics::PotentialModel;
use solwave::lorentz_dirac::{
    backward_shooting_physical, decay_rate, integrate_on_manifold, integrate_third_order,
    CenterManifoldChart, ExtendedState,
};
use solwave::Vec3;
use solwave_cli::config::RunConfig;
use solwave_cli::orchestrate::{build_models, converge, kernel_for, run_comparison, Models};
use solwave_cli::report::ConvergenceReport;

struct Fixture {
    config: RunConfig,
    models: Models,
    kernel: MemoryKernel,
    report: ConvergenceReport,
    /// Holds the kernel cache directory for the lifetime of the process.
    _dir: tempfile::TempDir,
}

/// The reference sweep runs once; every criterion shares it.
fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let path = Path::new(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/converge.json"
        ));
        let config = RunConfig::load(path).expect("reference config loads");
        let dir = tempfile::tempdir().expect("tempdir for the kernel cache");
        let models = build_models(&config).expect("charge and coefficient models");
        let kernel = kernel_for(&config, &models.charge, dir.path()).expect("memory kernel");
        let report = run_comparison(&config, &models, &kernel).expect("comparison sweep");
        Fixture {
            config,
            models,
            kernel,
            report,
            _dir: dir,
        }
    })
}

fn slope(fix: &Fixture, name: &str) -> (f64, f64) {
    let (_, fit) = fix
        .report
        .slopes
        .iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("no fitted quantity named {name}"));
    (fit.slope, fit.half_width)
}

/// Prints the single verdict line for a criterion, then enforces it.
fn verdict(name: &str, pass: bool, detail: &str) {
    let flag = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {name}: {flag} ({detail})");
    assert!(pass, "{name}: {detail}");
}

#[test]
fn criterion_01_matched_window_position_velocity_order() {
    let fix = fixture();
    let (ps, pw) = slope(fix, "position");
    let (vs, vw) = slope(fix, "velocity");
    let pass = (0.7..=1.3).contains(&ps) && (0.7..=1.3).contains(&vs);
    verdict(
        "01 matched-window position/velocity order",
        pass,
        &format!(
            "position slope {ps:.4} +/- {pw:.4}, velocity slope {vs:.4} +/- {vw:.4}, \
             window [0.7, 1.3]"
        ),
    );
}

#[test]
fn criterion_02_energy_difference_order() {
    let fix = fixture();
    let (es, ew) = slope(fix, "energy");
    let pass = (1.7..=2.3).contains(&es);
    verdict(
        "02 energy-difference order",
        pass,
        &format!("energy slope {es:.4} +/- {ew:.4}, window [1.7, 2.3]"),
    );
}

#[test]
fn criterion_03_short_window_order() {
    let fix = fixture();
    let (ps, pw) = slope(fix, "short_position");
    let (vs, vw) = slope(fix, "short_velocity");
    let pass = (2.6..=3.4).contains(&ps) && (1.7..=2.3).contains(&vs);
    verdict(
        "03 short-window order",
        pass,
        &format!(
            "position slope {ps:.4} +/- {pw:.4} vs [2.6, 3.4], \
             velocity slope {vs:.4} +/- {vw:.4} vs [1.7, 2.3]"
        ),
    );
}

#[test]
fn criterion_04_self_force_taylor_residual() {
    let fix = fixture();
    let (ts, tw) = slope(fix, "taylor_residual");
    // A uniformly moving charge feels no self-force and has no derivative
    // terms; the residual there is pure quadrature noise.
    let v = Vec3::new(0.0, 0.3, 0.0);
    let t1 = fix.kernel.t1;
    let hist = TrajectoryHistory::from_fn(0.0, t1 + 1.2, 0.02, |s| (v * s, v, Vec3::ZERO))
        .expect("uniform worldline");
    let uniform = taylor_residual(&fix.kernel, &fix.models.coeffs, &hist, t1 + 0.6)
        .expect("residual inside the settled window")
        .norm();
    let pass = (2.6..=3.4).contains(&ts) && uniform < 1e-8;
    verdict(
        "04 self-force Taylor residual",
        pass,
        &format!(
            "slope {ts:.4} +/- {tw:.4} vs [2.6, 3.4], uniform-motion residual {uniform:.3e} \
             vs 1e-8"
        ),
    );
}

#[test]
fn criterion_05_kernel_time_integral_identity() {
    let fix = fixture();
    let e_sq = fix.models.charge.e_squared();
    let mut worst = 0.0f64;
    for &s in &[0.0, 0.3, 0.6, 0.9] {
        let value = kernel_time_integral(&fix.models.charge, Vec3::new(s, 0.0, 0.0))
            .expect("kernel time integral");
        let closed = e_sq / (4.0 * PI) / (1.0 - s * s);
        worst = worst.max(((value - closed) / closed).abs());
    }
    let pass = worst <= 1e-4;
    verdict(
        "05 kernel time-integral identity",
        pass,
        &format!("worst relative gap {worst:.3e} over speeds {{0, 0.3, 0.6, 0.9}} vs 1e-4"),
    );
}

#[test]
fn criterion_06_lyapunov_decay_along_manifold_runs() {
    let fix = fixture();
    let eps = 5e-4;
    let step = 2e-3;
    let runs: [(PotentialModel, Vec3, Vec3); 5] = [
        (
            PotentialModel::Harmonic { stiffness: 1.0 },
            Vec3::new(0.8, 0.0, 0.0),
            Vec3::new(0.0, 0.25, 0.0),
        ),
        (
            PotentialModel::Harmonic { stiffness: 1.0 },
            Vec3::new(0.3, 0.4, 0.0),
            Vec3::new(-0.2, 0.1, 0.1),
        ),
        (
            PotentialModel::GaussianWell {
                depth: 0.8,
                width: 1.2,
            },
            Vec3::new(0.5, 0.0, 0.2),
            Vec3::new(0.1, -0.2, 0.0),
        ),
        (
            PotentialModel::DoubleWell {
                height: 0.5,
                separation: 1.0,
            },
            Vec3::new(1.2, 0.1, 0.0),
            Vec3::new(0.0, 0.15, -0.1),
        ),
        (
            PotentialModel::ConfiningQuartic { stiffness: 1.0 },
            Vec3::new(0.9, 0.0, 0.0),
            Vec3::new(0.0, 0.2, 0.0),
        ),
    ];
    let mut worst_gap = 0.0f64;
    let mut worst_rise = 0.0f64;
    for (potential, r0, u0) in runs {
        let run = integrate_on_manifold(
            ParticleState::new(r0, u0),
            eps,
            &fix.models.coeffs,
            &potential,
            1.0,
            step,
        )
        .expect("on-manifold run");
        let g = &run.lyapunov;
        let n = g.len();
        assert!(n > 8, "run too short to difference");
        for i in 2..n - 2 {
            let fd = (g[i - 2] - 8.0 * g[i - 1] + 8.0 * g[i + 1] - g[i + 2]) / (12.0 * step);
            worst_gap = worst_gap.max((fd - run.decay[i]).abs());
        }
        for i in 0..n - 1 {
            worst_rise = worst_rise.max(g[i + 1] - g[i]);
        }
    }
    // Allowed rise per step mirrors the rate tolerance integrated over a step.
    let rise_tol = 1e-6 * step;
    let pass = worst_gap <= 1e-6 && worst_rise <= rise_tol;
    verdict(
        "06 Lyapunov decay along on-manifold runs",
        pass,
        &format!(
            "worst |finite difference - closed rate| {worst_gap:.3e} vs 1e-6, \
             worst per-step rise {worst_rise:.3e} vs {rise_tol:.1e}"
        ),
    );
}

#[test]
fn criterion_07_runaway_rate_and_detection() {
    let fix = fixture();
    let coeffs = &fix.models.coeffs;
    let e_sq = fix.models.charge.e_squared();
    let eps = 1e-2;
    let expected = 12.0 * PI * (1.0 + coeffs.m_e) / (eps * e_sq);
    let potential = PotentialModel::Zero;
    let x0 = ParticleState::new(Vec3::ZERO, Vec3::ZERO);
    let delta = 1e-8_f64;
    let step = 2e-6;
    // Divergence trips when the chart distance reaches 1; allow twice that
    // time so every sign is caught even if the rate came out low.
    let t_final = 2.2 * (1.0 / delta).ln() / expected;
    let dirs = [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let mut detected = 0;
    let mut worst_rel = 0.0f64;
    for dir in dirs {
        let run = integrate_third_order(x0, dir * delta, eps, coeffs, &potential, t_final, step)
            .expect("free third-order run");
        if run.runaway.is_some() {
            detected += 1;
        }
        // With V = 0 the chart vanishes, so the recorded chart distance is
        // |y| itself; fit its log over a window clear of both endpoints.
        let mut st = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..run.chart_distance.len() {
            let d = run.chart_distance[i];
            if (1e-7..=1e-3).contains(&d) {
                let (t, x) = (run.path.time_at(i), d.ln());
                st = (st.0 + 1.0, st.1 + t, st.2 + x, st.3 + t * t, st.4 + t * x);
            }
        }
        let (n, s_t, s_x, s_tt, s_tx) = st;
        assert!(n >= 10.0, "too few nodes in the growth window");
        let rate = (n * s_tx - s_t * s_x) / (n * s_tt - s_t * s_t);
        worst_rel = worst_rel.max(((rate - expected) / expected).abs());
    }
    let pass = detected == dirs.len() && worst_rel <= 0.10;
    verdict(
        "07 run-away rate and detection",
        pass,
        &format!(
            "divergence detected {detected}/6, worst relative rate gap {worst_rel:.3e} \
             vs 0.10 (expected rate {expected:.1})"
        ),
    );
}

#[test]
fn criterion_08_chart_consistency() {
    let fix = fixture();
    let coeffs = &fix.models.coeffs;
    let potential = PotentialModel::Harmonic { stiffness: 1.0 };
    let x0 = ParticleState::new(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO);
    let rate = coeffs.hyperbolicity_rate(Vec3::ZERO);
    let gap = |eps: f64| {
        let y = backward_shooting_physical(x0, eps, coeffs, &potential, 30.0 * eps / rate)
            .expect("backward shooting converges");
        (y - CenterManifoldChart::new(eps, coeffs, &potential).chart(x0)).norm()
    };
    let shoot_slope = (gap(1e-2) / gap(5e-3)).log2();
    let x_res = ParticleState::new(Vec3::new(0.8, -0.2, 0.4), Vec3::new(0.1, 0.25, -0.05));
    let r1 = CenterManifoldChart::new(1e-3, coeffs, &potential).invariance_residual(x_res);
    let r2 = CenterManifoldChart::new(5e-4, coeffs, &potential).invariance_residual(x_res);
    let residual_slope = (r1 / r2).log2();
    let pass = (1.7..=2.3).contains(&shoot_slope) && (1.7..=2.3).contains(&residual_slope);
    verdict(
        "08 chart consistency",
        pass,
        &format!(
            "backward-shooting gap slope {shoot_slope:.4}, invariance residual slope \
             {residual_slope:.4}, window [1.7, 2.3]"
        ),
    );
}

#[test]
fn criterion_09_radiated_power_flux_and_decay_identity() {
    let fix = fixture();
    let coeffs = &fix.models.coeffs;
    let e_sq = fix.models.charge.e_squared();
    let mut rng = ChaCha8Rng::seed_from_u64(fix.config.seed);
    let eps = 0.37;
    let mut worst_flux = 0.0f64;
    let mut worst_ident = 0.0f64;
    for _ in 0..100 {
        let u = loop {
            let cand = Vec3::new(
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
                rng.random_range(-0.9..0.9),
            );
            if cand.norm() <= 0.9 {
                break cand;
            }
        };
        let y = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let power = radiated_power(u, y, e_sq);
        let flux = flux_sphere_quadrature(u, y, e_sq, fix.config.flux_nodes);
        worst_flux = worst_flux.max((flux - power).abs() / power.max(1.0));
        let state = ExtendedState::new(ParticleState::new(Vec3::new(0.4, -1.0, 2.0), u), y);
        let rate = decay_rate(&state, eps, coeffs);
        worst_ident = worst_ident.max((-rate / eps - power).abs() / power.max(1.0));
    }
    let pass = worst_flux <= 1e-8 && worst_ident <= 1e-12;
    verdict(
        "09 radiated power",
        pass,
        &format!(
            "worst flux-vs-closed gap {worst_flux:.3e} vs 1e-8, worst decay-identity gap \
             {worst_ident:.3e} vs 1e-12, 100 states"
        ),
    );
}

#[test]
fn criterion_10_field_limits() {
    let fix = fixture();
    let config = &fix.config;
    let e = config.charge.total_charge;
    let q0 = config.initial_position_vec();
    let v0 = config.initial_velocity_vec();
    let potential = config.potential_model();
    let t_max = 2.7;
    let eff = integrate_effective(
        ParticleState::new(q0, v0),
        &fix.models.coeffs,
        &potential,
        t_max,
        config.effective_step,
    )
    .expect("limit trajectory");
    let hist = TrajectoryHistory::from_fn(0.0, t_max, config.effective_step, |s| {
        let st = eff.state(s).expect("inside the integrated span");
        let a = eff.acceleration(s).expect("inside the integrated span");
        (st.r, st.u, a)
    })
    .expect("limit worldline");
    let eps_list = [0.2, 0.1, 0.05];
    let full: Vec<_> = eps_list
        .iter()
        .map(|&eps| {
            integrate_full(
                &fix.kernel,
                &potential,
                q0,
                v0,
                eps,
                t_max,
                config.micro_step,
            )
            .expect("microscopic run")
        })
        .collect();
    // Query times sit well past |x| so every retarded label lands inside
    // the sampled history and clear of the initial-data shell.
    let points = [
        (Vec3::new(1.2, 0.3, 0.2), 2.6),
        (Vec3::new(-1.1, 0.6, 0.0), 2.6),
        (Vec3::new(0.0, 1.3, 0.5), 2.7),
        (Vec3::new(0.5, -0.9, 0.3), 2.4),
        (Vec3::new(-0.6, -0.5, 0.4), 2.2),
    ];
    let mut monotone = true;
    let mut worst_final = 0.0f64;
    for (x, t) in points {
        let s_ret = retarded_time(&hist, x, t).expect("retarded label");
        let lim = limit_fields(
            e,
            x,
            t,
            hist.position(s_ret).expect("retarded position"),
            hist.velocity(s_ret).expect("retarded velocity"),
            hist.velocity_deriv(s_ret).expect("retarded acceleration"),
        )
        .expect("limit fields");
        assert!(!lim.on_cone, "query ({x:?}, {t}) sits on the initial shell");
        let errs: Vec<f64> = eps_list
            .iter()
            .zip(&full)
            .map(|(&eps, run)| {
                let phi =
                    finite_eps_field(
                        &fix.models.charge,
                        eps,
                        &run.history,
                        x,
                        t,
                        config.field_cells_per_radius,
                    )
                    .expect("scaled potential");
                (phi - lim.phi).abs()
            })
            .collect();
        monotone &= errs[0] > errs[1] && errs[1] > errs[2];
        worst_final = worst_final.max(errs[2] / lim.phi.abs());
    }
    // Static source: the scaled potential must reproduce the plain
    // inverse-distance form once the source is resolved.
    let r_src = Vec3::new(0.3, 0.0, 0.0);
    let static_hist = TrajectoryHistory::from_fn(0.0, 10.0, 0.01, |_| (r_src, Vec3::ZERO, Vec3::ZERO))
        .expect("static worldline");
    let x_probe = Vec3::new(2.3, 0.0, 0.0);
    let phi_static = finite_eps_field(&fix.models.charge, 1.0, &static_hist, x_probe, 8.0, 32)
        .expect("static potential");
    let coulomb = -e / (4.0 * PI * (x_probe - r_src).norm());
    let static_rel = ((phi_static - coulomb) / coulomb).abs();
    let pass = monotone && worst_final < 5e-2 && static_rel <= 1e-6;
    verdict(
        "10 field limits",
        pass,
        &format!(
            "monotone approach {monotone}, worst final relative gap {worst_final:.3e} vs 5e-2, \
             static inverse-distance gap {static_rel:.3e} vs 1e-6"
        ),
    );
}

#[test]
fn criterion_11_a_priori_derivative_bounds() {
    let fix = fixture();
    let (s1, w1) = slope(fix, "sup_vdot");
    let (s2, w2) = slope(fix, "sup_vddot");
    let (s3, w3) = slope(fix, "sup_vdddot");
    let pass = (0.7..=1.3).contains(&s1) && (1.7..=2.3).contains(&s2) && (2.5..=3.5).contains(&s3);
    verdict(
        "11 a priori derivative bounds",
        pass,
        &format!(
            "sup|vdot| slope {s1:.4} +/- {w1:.4} vs [0.7, 1.3], sup|vddot| slope {s2:.4} +/- \
             {w2:.4} vs [1.7, 2.3], sup|vdddot| slope {s3:.4} +/- {w3:.4} vs [2.5, 3.5]"
        ),
    );
}

fn dir_snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable output directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("under the output root")
                    .to_string_lossy()
                    .into_owned();
                map.insert(rel, std::fs::read(&path).expect("readable output file"));
            }
        }
    }
    map
}

#[test]
fn criterion_12_deterministic_reports() {
    let fix = fixture();
    // A trimmed sweep keeps the double run cheap; determinism must hold for
    // any valid configuration.
    let mut config = fix.config.clone();
    config.eps_list = vec![0.2, 0.1, 0.05];
    config.horizon = 1.0;
    config.micro_step = 0.05;
    config.effective_step = 0.005;
    config.validate().expect("trimmed config is valid");
    let dir_a = tempfile::tempdir().expect("first output dir");
    let dir_b = tempfile::tempdir().expect("second output dir");
    converge(&config, dir_a.path()).expect("first run");
    converge(&config, dir_b.path()).expect("second run");
    let snap_a = dir_snapshot(dir_a.path());
    let snap_b = dir_snapshot(dir_b.path());
    let same_names: Vec<&String> = snap_a.keys().collect();
    let mut mismatch = None;
    if snap_a.len() != snap_b.len() || !snap_b.keys().eq(same_names.iter().copied()) {
        mismatch = Some("file sets differ".to_string());
    } else {
        for (name, bytes) in &snap_a {
            if snap_b[name] != *bytes {
                mismatch = Some(format!("{name} differs"));
                break;
            }
        }
    }
    let pass = mismatch.is_none();
    verdict(
        "12 deterministic reports",
        pass,
        &format!(
            "{} files compared byte for byte{}",
            snap_a.len(),
            mismatch.map(|m| format!(", {m}")).unwrap_or_default()
        ),
    );
}
