//! With no external potential both the microscopic run and the comparison
//! dynamics are free motion, so every windowed error in the sweep collapses
//! to integrator and quadrature noise.

use solwave_cli::config::RunConfig;
use solwave_cli::orchestrate::{build_models, kernel_for, run_comparison};

#[test]
fn free_motion_errors_collapse_to_noise() {
    let config: RunConfig = serde_json::from_str(
        r#"{
            "charge": { "kind": "bump", "radius": 0.25, "total_charge": 1.0, "resolution": 256 },
            "potential": { "kind": "zero" },
            "eps_list": [0.2, 0.1, 0.05, 0.025],
            "initial_position": [1.0, 0.0, 0.0],
            "initial_velocity": [0.0, 0.3, 0.0],
            "horizon": 0.5,
            "micro_step": 0.05,
            "effective_step": 0.005,
            "kernel_speed_bound": 0.85,
            "field_cells_per_radius": 16,
            "flux_nodes": 64,
            "output_dir": "out",
            "seed": 7
        }"#,
    )
    .expect("free-motion config parses");
    config.validate().expect("valid");
    let dir = tempfile::tempdir().expect("kernel cache dir");
    let models = build_models(&config).expect("models");
    let kernel = kernel_for(&config, &models.charge, dir.path()).expect("kernel");
    let report = run_comparison(&config, &models, &kernel).expect("sweep");
    // The floor is the tabulated-kernel interpolation noise (~2e-9 per
    // force evaluation) integrated over a micro window of length 1/eps,
    // so the velocity floor grows toward small eps; physical errors at
    // these eps would sit near 1e-2.
    for run in &report.runs {
        let eps = run.eps;
        assert!(
            run.max_position_error < 5e-7,
            "position error {} at eps {eps}",
            run.max_position_error
        );
        assert!(
            run.max_velocity_error < 1e-6,
            "velocity error {} at eps {eps}",
            run.max_velocity_error
        );
        assert!(
            run.max_energy_error < 5e-7,
            "energy error {} at eps {eps}",
            run.max_energy_error
        );
        assert!(
            run.short_position_error < 1e-9,
            "short position error {} at eps {eps}",
            run.short_position_error
        );
        assert!(
            run.sup_vdot < 1e-7,
            "acceleration bound {} at eps {eps}",
            run.sup_vdot
        );
    }
}
