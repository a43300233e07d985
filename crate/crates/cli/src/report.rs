//! Order fitting and report emission. Every emitted file is a pure function
//! of the effective configuration, so identical configs reproduce identical
//! bytes.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use solwave::charge::ChargeModel;

/// Floats are serialized with 17 significant digits, enough to round-trip
/// an f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, Copy)]
pub struct FitResult {
    pub slope: f64,
    /// Two standard errors of the fitted slope, from the residual variance.
    pub half_width: f64,
    /// Pairs dropped because their error was exactly zero (below floating
    /// noise, no information about the order).
    pub dropped: usize,
}

/// Least-squares slope of log(err) against log(eps).
pub fn fit_order(pairs: &[(f64, f64)]) -> Result<FitResult> {
    let mut logs = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for &(eps, err) in pairs {
        if !(eps > 0.0 && eps.is_finite()) {
            bail!("fit_order needs positive finite eps, got {eps}");
        }
        if err == 0.0 {
            dropped += 1;
            continue;
        }
        if !(err > 0.0 && err.is_finite()) {
            bail!("fit_order needs nonnegative finite errors, got {err}");
        }
        logs.push((eps.ln(), err.ln()));
    }
    let n = logs.len();
    if n < 3 {
        bail!("fit_order needs at least 3 nonzero pairs, got {n} ({dropped} dropped)");
    }
    let nf = n as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx == 0.0 {
        bail!("fit_order needs at least two distinct eps values");
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let half_width = if n > 2 {
        2.0 * (ss_res / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(FitResult {
        slope,
        half_width,
        dropped,
    })
}

/// Everything measured for one scale ratio of the sweep.
#[derive(Debug, Clone)]
pub struct EpsRunSummary {
    pub eps: f64,
    /// Maxima over the matched window.
    pub max_position_error: f64,
    pub max_velocity_error: f64,
    pub max_accel_error: f64,
    pub max_energy_error: f64,
    /// Maxima over the short window of length eps * horizon.
    pub short_position_error: f64,
    pub short_velocity_error: f64,
    /// Fast-time derivative bounds past the memory horizon.
    pub sup_vdot: f64,
    pub sup_vddot: f64,
    pub sup_vdddot: f64,
    /// Largest self-force Taylor residual past the memory horizon.
    pub max_taylor_residual: f64,
}

impl EpsRunSummary {
    pub const CSV_HEADER: &'static str = "eps,max_position_error,max_velocity_error,\
        max_accel_error,max_energy_error,short_position_error,short_velocity_error,\
        sup_vdot,sup_vddot,sup_vdddot,max_taylor_residual";

    pub fn csv_row(&self) -> String {
        [
            self.eps,
            self.max_position_error,
            self.max_velocity_error,
            self.max_accel_error,
            self.max_energy_error,
            self.short_position_error,
            self.short_velocity_error,
            self.sup_vdot,
            self.sup_vddot,
            self.sup_vdddot,
            self.max_taylor_residual,
        ]
        .map(fmt_f64)
        .join(",")
    }
}

/// One sample row of a matched comparison trajectory.
#[derive(Debug, Clone)]
pub struct ComparisonSample {
    /// Macroscopic time (absolute, matching included).
    pub t: f64,
    pub q_full: [f64; 3],
    pub v_full: [f64; 3],
    pub vdot_full: [f64; 3],
    pub r_eff: [f64; 3],
    pub u_eff: [f64; 3],
    pub udot_eff: [f64; 3],
    pub energy_full: f64,
    pub energy_manifold: f64,
    pub decay_manifold: f64,
    pub position_error: f64,
    pub velocity_error: f64,
}

pub const COMPARISON_CSV_HEADER: &str = "t,q1,q2,q3,v1,v2,v3,vdot1,vdot2,vdot3,\
    r1,r2,r3,u1,u2,u3,udot1,udot2,udot3,g_full,g_manifold,decay_manifold,\
    position_error,velocity_error";

impl ComparisonSample {
    pub fn csv_row(&self) -> String {
        let mut row = String::new();
        let mut push = |x: f64| {
            if !row.is_empty() {
                row.push(',');
            }
            row.push_str(&fmt_f64(x));
        };
        push(self.t);
        for a in [&self.q_full, &self.v_full, &self.vdot_full] {
            a.iter().copied().for_each(&mut push);
        }
        for a in [&self.r_eff, &self.u_eff, &self.udot_eff] {
            a.iter().copied().for_each(&mut push);
        }
        push(self.energy_full);
        push(self.energy_manifold);
        push(self.decay_manifold);
        push(self.position_error);
        push(self.velocity_error);
        row
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub runs: Vec<EpsRunSummary>,
    /// (quantity name, fit) in a fixed emission order.
    pub slopes: Vec<(String, FitResult)>,
    pub samples: Vec<(f64, Vec<ComparisonSample>)>,
}

impl ConvergenceReport {
    /// Fits the standard slope set from the per-eps summaries.
    pub fn fit_slopes(runs: &[EpsRunSummary]) -> Result<Vec<(String, FitResult)>> {
        let quantities: [(&str, fn(&EpsRunSummary) -> f64); 10] = [
            ("position", |r| r.max_position_error),
            ("velocity", |r| r.max_velocity_error),
            ("acceleration", |r| r.max_accel_error),
            ("energy", |r| r.max_energy_error),
            ("short_position", |r| r.short_position_error),
            ("short_velocity", |r| r.short_velocity_error),
            ("sup_vdot", |r| r.sup_vdot),
            ("sup_vddot", |r| r.sup_vddot),
            ("sup_vdddot", |r| r.sup_vdddot),
            ("taylor_residual", |r| r.max_taylor_residual),
        ];
        let mut slopes = Vec::new();
        for (name, get) in quantities {
            let pairs: Vec<(f64, f64)> = runs.iter().map(|r| (r.eps, get(r))).collect();
            let fit = fit_order(&pairs)
                .with_context(|| format!("fitting the {name} error order"))?;
            slopes.push((name.to_string(), fit));
        }
        Ok(slopes)
    }
}

/// Short decimal form of eps used in file names (`0.05`, not `5e-2`).
pub fn eps_token(eps: f64) -> String {
    format!("{eps}")
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_sha256: &'a str,
    charge_sha256: &'a str,
    code_version: &'a str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("hex");
    }
    hex
}

/// Hash of the charge model: its defining parameters and the tabulated
/// form factor, so any change in the profile changes the manifest.
pub fn charge_hash(charge: &ChargeModel) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&charge.radius.to_le_bytes());
    bytes.extend_from_slice(&charge.total_charge.to_le_bytes());
    bytes.extend_from_slice(&charge.k_max.to_le_bytes());
    for value in &charge.form_factor_table {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    sha256_hex(&bytes)
}

/// Writes report.csv, slopes.csv, per-run trajectory CSVs, and the manifest.
/// Refuses an empty sweep before creating anything.
pub fn emit_report(
    report: &ConvergenceReport,
    dir: &Path,
    config_json: &str,
    charge: &ChargeModel,
) -> Result<()> {
    if report.runs.is_empty() {
        bail!("refusing to emit a report for an empty eps sweep");
    }
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;

    let mut report_csv = String::from(EpsRunSummary::CSV_HEADER);
    report_csv.push('\n');
    for run in &report.runs {
        report_csv.push_str(&run.csv_row());
        report_csv.push('\n');
    }
    write_file(&dir.join("report.csv"), &report_csv)?;

    let mut slopes_csv = String::from("quantity,slope,half_width,dropped\n");
    for (name, fit) in &report.slopes {
        slopes_csv.push_str(&format!(
            "{name},{},{},{}\n",
            fmt_f64(fit.slope),
            fmt_f64(fit.half_width),
            fit.dropped
        ));
    }
    write_file(&dir.join("slopes.csv"), &slopes_csv)?;

    for (eps, samples) in &report.samples {
        let mut csv = String::from(COMPARISON_CSV_HEADER);
        csv.push('\n');
        for sample in samples {
            csv.push_str(&sample.csv_row());
            csv.push('\n');
        }
        write_file(&dir.join(format!("comparison_eps_{}.csv", eps_token(*eps))), &csv)?;
    }

    let manifest = Manifest {
        config_sha256: &sha256_hex(config_json.as_bytes()),
        charge_sha256: &charge_hash(charge),
        code_version: env!("CARGO_PKG_VERSION"),
    };
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&dir.join("manifest.json"), &format!("{manifest_json}\n"))?;
    Ok(())
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
