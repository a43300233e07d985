//! Experiment orchestration: model assembly, kernel caching, the matched
//! full-vs-comparison sweep, trajectory exports, field grids, and the
//! radiation table. Sweep entries run on their own threads; assembly and
//! file emission stay single-threaded so outputs are deterministic.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use solwave::charge::{field_mass, ChargeModel};
use solwave::effective::{integrate_effective, ParticleState};
use solwave::fields::{
    finite_eps_field, flux_sphere_quadrature, limit_fields, radiated_power, retarded_time,
};
use solwave::fullfield::{integrate_full, taylor_residual, MemoryKernel, TrajectoryHistory};
use solwave::kinematics::{CoefficientSet, PotentialModel};
use solwave::lorentz_dirac::{
    decay_rate, integrate_on_manifold, integrate_third_order, lyapunov, CenterManifoldChart,
    ExtendedState,
};
use solwave::Vec3;

use crate::config::RunConfig;
use crate::report::{
    charge_hash, emit_report, eps_token, fmt_f64, sha256_hex, write_file, ComparisonSample,
    ConvergenceReport, EpsRunSummary,
};

/// Samples per matched window when measuring error maxima.
const WINDOW_SAMPLES: usize = 400;
/// Samples over the short window of length eps * horizon.
const SHORT_SAMPLES: usize = 100;
/// Samples of the self-force Taylor residual past the memory horizon.
const TAYLOR_SAMPLES: usize = 200;
/// Half-width of the acceleration finite-difference stencil inside
/// the Taylor residual, mirrored here to stay inside its window.
const TAYLOR_MARGIN: f64 = 0.5 + 1e-9;

pub struct Models {
    pub charge: ChargeModel,
    pub coeffs: CoefficientSet,
    pub potential: PotentialModel,
}

pub fn build_models(config: &RunConfig) -> Result<Models> {
    let charge = config.build_charge_model()?;
    let m_e = field_mass(&charge).context("computing the field mass")?;
    let coeffs = CoefficientSet::new(m_e, charge.e_squared());
    Ok(Models {
        charge,
        coeffs,
        potential: config.potential_model(),
    })
}

/// Builds the memory kernel or loads it from the on-disk cache. The cache
/// key covers the charge profile and the speed bound; a mismatched or
/// corrupt file falls back to a rebuild.
pub fn kernel_for(config: &RunConfig, charge: &ChargeModel, out_dir: &Path) -> Result<MemoryKernel> {
    let mut key_bytes = charge_hash(charge).into_bytes();
    key_bytes.extend_from_slice(&config.kernel_speed_bound.to_le_bytes());
    let key = sha256_hex(&key_bytes);
    let cache_dir = out_dir.join("kernel_cache");
    let path = cache_dir.join(format!("{key}.bin"));
    if path.exists() {
        if let Ok(kernel) = MemoryKernel::load(&path, charge) {
            if kernel.vbar == config.kernel_speed_bound {
                return Ok(kernel);
            }
        }
    }
    let kernel = MemoryKernel::build(charge, config.kernel_speed_bound)
        .context("tabulating the memory kernel")?;
    std::fs::create_dir_all(&cache_dir)
        .with_context(|| format!("creating {}", cache_dir.display()))?;
    kernel.save(&path).context("caching the memory kernel")?;
    Ok(kernel)
}

fn vec3_array(v: Vec3) -> [f64; 3] {
    [v.0[0], v.0[1], v.0[2]]
}

/// Runs the full dynamics for one eps, matches the comparison trajectory at
/// eps * t1, and measures every windowed error the report needs.
///
/// `t_align` and `t_end` are common macro times across the sweep: the
/// derivative sups and the expansion residual are measured over the same
/// macro window for every eps, otherwise each eps samples a different
/// segment of the orbit and the orbit-phase dependence of |grad V|
/// contaminates the order fits.
pub fn run_comparison_for_eps(
    config: &RunConfig,
    models: &Models,
    kernel: &MemoryKernel,
    eps: f64,
    t_align: f64,
    t_end: f64,
) -> Result<(EpsRunSummary, Vec<ComparisonSample>)> {
    let t_match = eps * kernel.t1;
    let t_total = t_end.max(t_match + config.horizon);
    let full = integrate_full(
        kernel,
        &models.potential,
        config.initial_position_vec(),
        config.initial_velocity_vec(),
        eps,
        t_total,
        config.micro_step,
    )?;

    let q_match = full.macro_position(t_match)?;
    let v_match = full.macro_velocity(t_match)?;
    let manifold = integrate_on_manifold(
        ParticleState::new(q_match, v_match),
        eps,
        &models.coeffs,
        &models.potential,
        config.horizon,
        config.effective_step,
    )?;
    let start = manifold.state(0.0)?;
    if (start.r - q_match).max_abs() > 1e-10 || (start.u - v_match).max_abs() > 1e-10 {
        bail!("comparison run does not start at the matched state");
    }

    let mut samples = Vec::with_capacity(WINDOW_SAMPLES + 1);
    let mut max_position_error = 0.0f64;
    let mut max_velocity_error = 0.0f64;
    let mut max_accel_error = 0.0f64;
    let mut max_energy_error = 0.0f64;
    for k in 0..=WINDOW_SAMPLES {
        let tw = config.horizon * k as f64 / WINDOW_SAMPLES as f64;
        let t_abs = t_match + tw;
        let q = full.macro_position(t_abs)?;
        let v = full.macro_velocity(t_abs)?;
        let vdot = full.macro_velocity_deriv(t_abs)?;
        let state = manifold.state(tw)?;
        let accel = manifold.acceleration(tw)?;
        let extended_full = ExtendedState::new(ParticleState::new(q, v), vdot);
        let extended_man = ExtendedState::new(state, accel);
        let energy_full = lyapunov(&extended_full, eps, &models.coeffs, &models.potential)?;
        let energy_man = lyapunov(&extended_man, eps, &models.coeffs, &models.potential)?;
        let decay_man = decay_rate(&extended_man, eps, &models.coeffs);
        let position_error = (q - state.r).norm();
        let velocity_error = (v - state.u).norm();
        max_position_error = max_position_error.max(position_error);
        max_velocity_error = max_velocity_error.max(velocity_error);
        max_accel_error = max_accel_error.max((vdot - accel).norm());
        max_energy_error = max_energy_error.max((energy_full - energy_man).abs());
        samples.push(ComparisonSample {
            t: t_abs,
            q_full: vec3_array(q),
            v_full: vec3_array(v),
            vdot_full: vec3_array(vdot),
            r_eff: vec3_array(state.r),
            u_eff: vec3_array(state.u),
            udot_eff: vec3_array(accel),
            energy_full,
            energy_manifold: energy_man,
            decay_manifold: decay_man,
            position_error,
            velocity_error,
        });
    }

    let mut short_position_error = 0.0f64;
    let mut short_velocity_error = 0.0f64;
    let t_short = (eps * config.horizon).min(config.horizon);
    for k in 0..=SHORT_SAMPLES {
        let tw = t_short * k as f64 / SHORT_SAMPLES as f64;
        let q = full.macro_position(t_match + tw)?;
        let v = full.macro_velocity(t_match + tw)?;
        let state = manifold.state(tw)?;
        short_position_error = short_position_error.max((q - state.r).norm());
        short_velocity_error = short_velocity_error.max((v - state.u).norm());
    }

    // Fast-time derivative bounds over the phase-aligned window, by central
    // differences of the stored node accelerations.
    let hist = &full.history;
    let h = hist.step();
    let first = ((t_align / eps - hist.t_start()) / h).ceil() as usize;
    let mut sup_vdot = 0.0f64;
    let mut sup_vddot = 0.0f64;
    let mut sup_vdddot = 0.0f64;
    for i in first.max(1)..hist.len().saturating_sub(1) {
        let behind = hist.node_velocity_deriv(i - 1);
        let here = hist.node_velocity_deriv(i);
        let ahead = hist.node_velocity_deriv(i + 1);
        sup_vdot = sup_vdot.max(here.norm());
        sup_vddot = sup_vddot.max(((ahead - behind) / (2.0 * h)).norm());
        sup_vdddot = sup_vdddot.max(((ahead - here * 2.0 + behind) / (h * h)).norm());
    }

    let lo = (t_align / eps).max(hist.t_start() + kernel.t1) + TAYLOR_MARGIN;
    let hi = hist.t_end() - TAYLOR_MARGIN;
    if hi <= lo {
        bail!("horizon too short to sample the self-force expansion past t1");
    }
    let mut max_taylor_residual = 0.0f64;
    for k in 0..=TAYLOR_SAMPLES {
        let s = lo + (hi - lo) * k as f64 / TAYLOR_SAMPLES as f64;
        let residual = taylor_residual(kernel, &models.coeffs, hist, s)?;
        max_taylor_residual = max_taylor_residual.max(residual.norm());
    }

    Ok((
        EpsRunSummary {
            eps,
            max_position_error,
            max_velocity_error,
            max_accel_error,
            max_energy_error,
            short_position_error,
            short_velocity_error,
            sup_vdot,
            sup_vddot,
            sup_vdddot,
            max_taylor_residual,
        },
        samples,
    ))
}

/// The full sweep: one comparison per eps, entries in parallel, assembled
/// in list order.
pub fn run_comparison(
    config: &RunConfig,
    models: &Models,
    kernel: &MemoryKernel,
) -> Result<ConvergenceReport> {
    if config.eps_list.is_empty() {
        bail!("the eps list is empty; nothing to sweep");
    }
    // eps_list is strictly decreasing, so the first entry fixes the common
    // alignment time and the common end of every run.
    let t_align = config.eps_list[0] * kernel.t1;
    let t_end = t_align + config.horizon;
    let outcomes: Vec<Result<(EpsRunSummary, Vec<ComparisonSample>)>> =
        std::thread::scope(|scope| {
            let handles: Vec<_> = config
                .eps_list
                .iter()
                .map(|&eps| {
                    scope.spawn(move || {
                        run_comparison_for_eps(config, models, kernel, eps, t_align, t_end)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|handle| {
                    handle
                        .join()
                        .unwrap_or_else(|_| Err(anyhow!("a sweep worker panicked")))
                })
                .collect()
        });
    let mut runs = Vec::new();
    let mut samples = Vec::new();
    for (&eps, outcome) in config.eps_list.iter().zip(outcomes) {
        let (summary, rows) =
            outcome.with_context(|| format!("comparison run at eps = {eps}"))?;
        runs.push(summary);
        samples.push((eps, rows));
    }
    let slopes = ConvergenceReport::fit_slopes(&runs)?;
    Ok(ConvergenceReport {
        runs,
        slopes,
        samples,
    })
}

/// `converge`: sweep, fit, and emit every report file.
pub fn converge(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let models = build_models(config)?;
    let kernel = kernel_for(config, &models.charge, out_dir)?;
    let report = run_comparison(config, &models, &kernel)?;
    emit_report(&report, out_dir, &config.canonical_json(), &models.charge)
}

pub fn simulate_effective(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let models = build_models(config)?;
    let trajectory = integrate_effective(
        ParticleState::new(config.initial_position_vec(), config.initial_velocity_vec()),
        &models.coeffs,
        &models.potential,
        config.horizon,
        config.effective_step,
    )?;
    let mut csv = String::from("t,r1,r2,r3,u1,u2,u3,udot1,udot2,udot3\n");
    for i in 0..trajectory.path.states.len() {
        let t = trajectory.path.time_at(i);
        let s = &trajectory.path.states[i];
        let d = &trajectory.path.derivs[i];
        let row: Vec<String> = [t, s[0], s[1], s[2], s[3], s[4], s[5], d[3], d[4], d[5]]
            .iter()
            .map(|&x| fmt_f64(x))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("effective.csv"), &csv)
}

pub fn simulate_manifold(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let models = build_models(config)?;
    std::fs::create_dir_all(out_dir)?;
    for &eps in &config.eps_list {
        let trajectory = integrate_on_manifold(
            ParticleState::new(config.initial_position_vec(), config.initial_velocity_vec()),
            eps,
            &models.coeffs,
            &models.potential,
            config.horizon,
            config.effective_step,
        )
        .with_context(|| format!("on-manifold run at eps = {eps}"))?;
        let mut csv = String::from("t,r1,r2,r3,u1,u2,u3,udot1,udot2,udot3,g,dg_dt\n");
        for i in 0..trajectory.path.states.len() {
            let t = trajectory.path.time_at(i);
            let s = &trajectory.path.states[i];
            let d = &trajectory.path.derivs[i];
            let row: Vec<String> = [
                t,
                s[0],
                s[1],
                s[2],
                s[3],
                s[4],
                s[5],
                d[3],
                d[4],
                d[5],
                trajectory.lyapunov[i],
                trajectory.decay[i],
            ]
            .iter()
            .map(|&x| fmt_f64(x))
            .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(&out_dir.join(format!("manifold_eps_{}.csv", eps_token(eps))), &csv)?;
    }
    Ok(())
}

pub fn simulate_third_order(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let models = build_models(config)?;
    std::fs::create_dir_all(out_dir)?;
    let x0 = ParticleState::new(config.initial_position_vec(), config.initial_velocity_vec());
    for &eps in &config.eps_list {
        let chart = CenterManifoldChart::new(eps, &models.coeffs, &models.potential);
        let y0 = chart.h0(x0) + chart.h1(x0) * eps;
        let trajectory = integrate_third_order(
            x0,
            y0,
            eps,
            &models.coeffs,
            &models.potential,
            config.horizon,
            config.effective_step,
        )
        .with_context(|| format!("third-order run at eps = {eps}"))?;
        let mut csv = String::from("t,r1,r2,r3,u1,u2,u3,y1,y2,y3,chart_distance\n");
        for i in 0..trajectory.path.states.len() {
            let t = trajectory.path.time_at(i);
            let s = &trajectory.path.states[i];
            let row: Vec<String> = [
                t,
                s[0],
                s[1],
                s[2],
                s[3],
                s[4],
                s[5],
                s[6],
                s[7],
                s[8],
                trajectory.chart_distance[i],
            ]
            .iter()
            .map(|&x| fmt_f64(x))
            .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(
            &out_dir.join(format!("third_order_eps_{}.csv", eps_token(eps))),
            &csv,
        )?;
        if let Some(runaway) = &trajectory.runaway {
            let note = format!(
                "third-order run at eps = {eps} left the chart at t = {}\n",
                fmt_f64(runaway.t_divergence),
            );
            write_file(
                &out_dir.join(format!("third_order_eps_{}_runaway.txt", eps_token(eps))),
                &note,
            )?;
        }
    }
    Ok(())
}

pub fn simulate_full(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let models = build_models(config)?;
    let kernel = kernel_for(config, &models.charge, out_dir)?;
    std::fs::create_dir_all(out_dir)?;
    for &eps in &config.eps_list {
        let t_total = eps * kernel.t1 + config.horizon;
        let full = integrate_full(
            &kernel,
            &models.potential,
            config.initial_position_vec(),
            config.initial_velocity_vec(),
            eps,
            t_total,
            config.micro_step,
        )
        .with_context(|| format!("full run at eps = {eps}"))?;
        let mut csv = String::from("t,q1,q2,q3,v1,v2,v3,vdot1,vdot2,vdot3,fs1,fs2,fs3\n");
        for i in 0..full.history.len() {
            let (q_micro, v) = full.history.node(i);
            let vdot_micro = full.history.node_velocity_deriv(i);
            let force = full.forces[i];
            let t = eps * full.history.time_at(i);
            let q = q_micro * eps;
            let vdot = vdot_micro / eps;
            let row: Vec<String> = [
                t, q.0[0], q.0[1], q.0[2], v.0[0], v.0[1], v.0[2], vdot.0[0], vdot.0[1],
                vdot.0[2], force.0[0], force.0[1], force.0[2],
            ]
            .iter()
            .map(|&x| fmt_f64(x))
            .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(&out_dir.join(format!("full_eps_{}.csv", eps_token(eps))), &csv)?;
    }
    Ok(())
}

/// `fields`: limit fields along the effective worldline plus the finite-eps
/// field from each full run, at the configured query points.
pub fn fields_grids(config: &RunConfig, out_dir: &Path) -> Result<()> {
    if config.field_points.is_empty() {
        bail!("no field points configured; add a field_points array to the config");
    }
    let models = build_models(config)?;
    let kernel = kernel_for(config, &models.charge, out_dir)?;
    std::fs::create_dir_all(out_dir)?;

    let horizon = config.eps_list.first().map_or(config.horizon, |&eps| {
        eps * kernel.t1 + config.horizon
    });
    let effective = integrate_effective(
        ParticleState::new(config.initial_position_vec(), config.initial_velocity_vec()),
        &models.coeffs,
        &models.potential,
        horizon,
        config.effective_step,
    )?;
    // Wrap the limit worldline for the retarded solver; before launch the
    // initial data are a uniformly moving dressed charge, which is exactly
    // the wrapper's straight-line prehistory.
    let limit_history = TrajectoryHistory::from_fn(
        0.0,
        effective.t_end(),
        config.effective_step,
        |s| {
            let state = effective.state(s).expect("inside the integrated span");
            let accel = effective.acceleration(s).expect("inside the integrated span");
            (state.r, state.u, accel)
        },
    )?;
    let e_total = models.charge.total_charge;

    let mut limits = Vec::with_capacity(config.field_points.len());
    for point in &config.field_points {
        let x = Vec3::new(point.x[0], point.x[1], point.x[2]);
        let s_ret = retarded_time(&limit_history, x, point.t)
            .with_context(|| format!("retarded solve for the point at t = {}", point.t))?;
        let fields = limit_fields(
            e_total,
            x,
            point.t,
            limit_history.position(s_ret)?,
            limit_history.velocity(s_ret)?,
            limit_history.velocity_deriv(s_ret)?,
        )?;
        limits.push((x, point.t, fields));
    }

    for &eps in &config.eps_list {
        let t_total = eps * kernel.t1 + config.horizon;
        let full = integrate_full(
            &kernel,
            &models.potential,
            config.initial_position_vec(),
            config.initial_velocity_vec(),
            eps,
            t_total,
            config.micro_step,
        )
        .with_context(|| format!("full run at eps = {eps}"))?;
        let mut csv = String::from("x1,x2,x3,t,phi_lim,pi_lim,phi_eps\n");
        for (x, t, fields) in &limits {
            let phi_eps = finite_eps_field(
                &models.charge,
                eps,
                &full.history,
                *x,
                *t,
                config.field_cells_per_radius,
            )
            .with_context(|| format!("finite-eps field at eps = {eps}, t = {t}"))?;
            let row: Vec<String> = [x.0[0], x.0[1], x.0[2], *t, fields.phi, fields.pi, phi_eps]
                .iter()
                .map(|&v| fmt_f64(v))
                .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        write_file(&out_dir.join(format!("fields_eps_{}.csv", eps_token(eps))), &csv)?;
    }
    Ok(())
}

/// `radiation`: closed-form power against the sphere quadrature along the
/// on-manifold run at the largest eps.
pub fn radiation_table(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let Some(&eps) = config.eps_list.first() else {
        bail!("the eps list is empty; radiation needs one entry");
    };
    let models = build_models(config)?;
    let trajectory = integrate_on_manifold(
        ParticleState::new(config.initial_position_vec(), config.initial_velocity_vec()),
        eps,
        &models.coeffs,
        &models.potential,
        config.horizon,
        config.effective_step,
    )?;
    let e_sq = models.charge.e_squared();
    let mut csv =
        String::from("t,u1,u2,u3,udot1,udot2,udot3,power,flux_quadrature,g,dg_dt\n");
    for i in 0..trajectory.path.states.len() {
        let t = trajectory.path.time_at(i);
        let s = &trajectory.path.states[i];
        let d = &trajectory.path.derivs[i];
        let u = Vec3::new(s[3], s[4], s[5]);
        let udot = Vec3::new(d[3], d[4], d[5]);
        let power = radiated_power(u, udot, e_sq);
        let flux = flux_sphere_quadrature(u, udot, e_sq, config.flux_nodes);
        let row: Vec<String> = [
            t,
            u.0[0],
            u.0[1],
            u.0[2],
            udot.0[0],
            udot.0[1],
            udot.0[2],
            power,
            flux,
            trajectory.lyapunov[i],
            trajectory.decay[i],
        ]
        .iter()
        .map(|&x| fmt_f64(x))
        .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::create_dir_all(out_dir)?;
    write_file(&out_dir.join("radiation.csv"), &csv)
}

/// Fast internal consistency checks; prints one line per check.
pub fn selftest() -> Result<()> {
    use solwave::charge::{build_charge, ChargeKind};
    use solwave::fullfield::kernel_time_integral;

    let fit = crate::report::fit_order(&[(1.0, 8.0), (0.5, 1.0), (0.25, 0.125)])?;
    if (fit.slope - 3.0).abs() > 1e-10 {
        bail!("order fitter missed an exact cubic: slope {}", fit.slope);
    }
    println!("selftest: order fitter reproduces an exact cubic ... ok");

    let u = Vec3::new(0.5, -0.3, 0.2);
    let udot = Vec3::new(0.8, 1.1, -0.4);
    let power = radiated_power(u, udot, 1.0);
    let flux = flux_sphere_quadrature(u, udot, 1.0, 64);
    if (power - flux).abs() > 1e-8 * power.max(1.0) {
        bail!("flux quadrature disagrees with the closed form: {flux} vs {power}");
    }
    println!("selftest: sphere flux matches the closed-form power ... ok");

    let charge = build_charge(ChargeKind::CompactBump, 1.0, 1.0, 256)?;
    let v = Vec3::new(0.3, 0.0, 0.0);
    let identity = kernel_time_integral(&charge, v)?;
    let gamma_sq = 1.0 / (1.0 - v.norm_sq());
    let expected = charge.e_squared() / (4.0 * std::f64::consts::PI) * gamma_sq;
    if ((identity - expected) / expected).abs() > 1e-4 {
        bail!("kernel time integral missed the closed form: {identity} vs {expected}");
    }
    println!("selftest: kernel time integral matches the closed form ... ok");

    let history = TrajectoryHistory::from_fn(-10.0, 10.0, 0.5, |_| {
        (Vec3::ZERO, Vec3::ZERO, Vec3::ZERO)
    })?;
    let s = retarded_time(&history, Vec3::new(2.0, 0.0, 0.0), 5.0)?;
    if (s - 3.0).abs() > 1e-12 {
        bail!("retarded solve missed the static delay: {s}");
    }
    println!("selftest: retarded time reproduces the static delay ... ok");
    Ok(())
}

/// Resolves the output directory: the `--out` override wins, then the
/// config's `output_dir`.
pub fn resolve_out_dir(config: &RunConfig, override_dir: Option<&Path>) -> PathBuf {
    override_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.output_dir))
}
