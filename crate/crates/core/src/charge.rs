//! Rigid charge distributions, their radial form factors, and the induced
//! field mass.
//!
//! The charge density is radial and fixed once and for all; everything
//! downstream (soliton charts, memory kernel, coefficient tensors) only sees
//! it through the radial form factor
//!
//! `rho_hat_r(k) = (2pi)^(-3/2) * (4pi/k) * int_0^inf r rho_r(r) sin(kr) dr`
//!
//! tabulated on a uniform k-grid. The zero-frequency value is the total
//! charge times `(2pi)^(-3/2)`.

use crate::error::{Error, Result};
use crate::quad::{lagrange_cubic_weights, sinc, trapezoid_uniform, GaussLegendre};
use rayon::prelude::*;
use std::f64::consts::PI;

/// `(2*pi)^(3/2)`.
pub const TWO_PI_POW_3_2: f64 = 15.749_609_945_722_419;

/// How many standard deviations of a gaussian profile count as its support
/// for memory-window purposes; the neglected tail mass is below 1e-15.
pub const GAUSSIAN_SUPPORT_SIGMAS: f64 = 8.0;

const TAIL_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeKind {
    CompactBump,
    Gaussian,
}

/// Whether a caller insists on exactly compactly supported densities
/// (the gaussian kind is then rejected instead of using its 8-sigma
/// effective radius).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportPolicy {
    StrictCompact,
    AllowEffective,
}

#[derive(Debug, Clone)]
pub struct ChargeModel {
    pub kind: ChargeKind,
    /// Support radius for the bump; the scale sigma for the gaussian.
    pub radius: f64,
    pub total_charge: f64,
    /// Spectral cutoff; the form factor has decayed below 1e-12 of its peak here.
    pub k_max: f64,
    /// `rho_hat_r` sampled uniformly on [0, k_max] (first entry is k = 0).
    pub form_factor_table: Vec<f64>,
    /// Peak amplitude of the real-space profile (the bump normalization C,
    /// or the gaussian prefactor), kept for cheap profile evaluation.
    amplitude: f64,
}

impl ChargeModel {
    /// Radius beyond which the density is zero (bump) or numerically zero
    /// (gaussian, 8 sigma); this is the radius entering memory windows.
    pub fn effective_radius(&self) -> f64 {
        match self.kind {
            ChargeKind::CompactBump => self.radius,
            ChargeKind::Gaussian => GAUSSIAN_SUPPORT_SIGMAS * self.radius,
        }
    }

    /// Whether `effective_radius` is exact or an 8-sigma tail cutoff;
    /// run metadata records this.
    pub fn support_is_approximate(&self) -> bool {
        self.kind == ChargeKind::Gaussian
    }

    /// Real-space radial profile `rho_r(r)`.
    pub fn rho_r(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0);
        match self.kind {
            ChargeKind::CompactBump => {
                let rr = self.radius * self.radius;
                if r >= self.radius {
                    0.0
                } else {
                    self.amplitude * (-rr / (rr - r * r)).exp()
                }
            }
            ChargeKind::Gaussian => {
                let s2 = self.radius * self.radius;
                self.amplitude * (-0.5 * r * r / s2).exp()
            }
        }
    }

    /// Continuous form-factor evaluation by radial quadrature (the table is
    /// a sample of this function).
    pub fn form_factor(&self, k: f64) -> f64 {
        radial_transform(|r| self.rho_r(r), self.effective_radius(), k)
    }

    pub fn dk(&self) -> f64 {
        self.k_max / (self.form_factor_table.len() - 1) as f64
    }

    /// Cubic interpolation of the tabulated form factor. Even in `k`, zero
    /// beyond the table (where the build guarantees a <= 1e-12 relative
    /// tail). Much cheaper than `form_factor` inside quadrature loops.
    pub fn form_factor_cubic(&self, k: f64) -> f64 {
        let k = k.abs();
        if k >= self.k_max {
            return 0.0;
        }
        let n = self.form_factor_table.len();
        let x = k / self.dk();
        let i1 = (x.floor() as usize).min(n - 2);
        let start = i1.saturating_sub(1).min(n - 4);
        let w = lagrange_cubic_weights(x - start as f64);
        (0..4)
            .map(|j| w[j] * self.form_factor_table[start + j])
            .sum()
    }

    /// `|rho|_{L^2}` of the full 3D density (reported as a diagnostic; the
    /// smallness hypothesis has no explicit threshold).
    pub fn l2_norm(&self) -> f64 {
        let gl = GaussLegendre::new(16);
        let r_max = self.effective_radius();
        let int =
            gl.integrate_composite(0.0, r_max, 64, |r| r * r * self.rho_r(r) * self.rho_r(r));
        (4.0 * PI * int).sqrt()
    }

    /// Squared total charge, the coupling constant in the radiation
    /// coefficients.
    pub fn e_squared(&self) -> f64 {
        self.total_charge * self.total_charge
    }
}

/// `(2pi)^(-3/2) * 4pi * int_0^{r_max} r^2 f(r) sinc(kr) dr`, the radial
/// 3D Fourier transform of a radial function supported in `[0, r_max]`.
fn radial_transform<F: Fn(f64) -> f64>(f: F, r_max: f64, k: f64) -> f64 {
    // Panel count tracks the oscillation count k*r_max/pi, min 16.
    let panels = ((k * r_max / PI).ceil() as usize).max(16);
    let gl = GaussLegendre::new(8);
    let int = gl.integrate_composite(0.0, r_max, panels, |r| r * r * f(r) * sinc(k * r));
    4.0 * PI * int / TWO_PI_POW_3_2
}

pub fn build_charge(
    kind: ChargeKind,
    radius: f64,
    total_charge: f64,
    spectral_resolution: usize,
) -> Result<ChargeModel> {
    build_charge_with_policy(
        kind,
        radius,
        total_charge,
        spectral_resolution,
        SupportPolicy::AllowEffective,
    )
}

pub fn build_charge_with_policy(
    kind: ChargeKind,
    radius: f64,
    total_charge: f64,
    spectral_resolution: usize,
    policy: SupportPolicy,
) -> Result<ChargeModel> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("charge radius must be positive, got {radius}")));
    }
    if total_charge == 0.0 || !total_charge.is_finite() {
        return Err(Error::invalid("total charge must be finite and nonzero"));
    }
    if spectral_resolution < 256 {
        return Err(Error::invalid(format!(
            "spectral resolution {spectral_resolution} below the minimum 256"
        )));
    }
    if kind == ChargeKind::Gaussian && policy == SupportPolicy::StrictCompact {
        return Err(Error::invalid(
            "gaussian charge has no compact support; use the compact-bump kind or relax the policy",
        ));
    }

    let amplitude = match kind {
        ChargeKind::CompactBump => {
            // C such that 4*pi*int_0^R r^2 C exp(-R^2/(R^2-r^2)) dr = e.
            let gl = GaussLegendre::new(16);
            let rr = radius * radius;
            let int = gl.integrate_composite(0.0, radius, 64, |r| {
                if r >= radius {
                    0.0
                } else {
                    r * r * (-rr / (rr - r * r)).exp()
                }
            });
            total_charge / (4.0 * PI * int)
        }
        ChargeKind::Gaussian => {
            let s2 = radius * radius;
            total_charge / (2.0 * PI * s2).powf(1.5)
        }
    };

    let mut model = ChargeModel {
        kind,
        radius,
        total_charge,
        k_max: 0.0,
        form_factor_table: Vec::new(),
        amplitude,
    };

    // Extend k_max (doubling, with proportionally more nodes so the grid
    // density is what the caller asked for) until the spectral tail has
    // decayed below 1e-12 of the peak.
    let r_eff = model.effective_radius();
    let mut k_max = 32.0 / r_eff;
    let mut nodes = spectral_resolution;
    const MAX_DOUBLINGS: usize = 8;
    for attempt in 0..=MAX_DOUBLINGS {
        let dk = k_max / (nodes - 1) as f64;
        let table: Vec<f64> = (0..nodes)
            .into_par_iter()
            .map(|i| model.form_factor(i as f64 * dk))
            .collect();
        let peak = table.iter().fold(0.0_f64, |a, x| a.max(x.abs()));
        let tail_start = nodes - (nodes / 50).max(2);
        let tail = table[tail_start..]
            .iter()
            .fold(0.0_f64, |a, x| a.max(x.abs()));
        if tail <= TAIL_FRACTION * peak {
            model.k_max = k_max;
            model.form_factor_table = table;
            return Ok(model);
        }
        if attempt == MAX_DOUBLINGS {
            break;
        }
        k_max *= 2.0;
        nodes = (nodes - 1) * 2 + 1;
    }
    Err(Error::NoConvergence(format!(
        "spectral tail of the form factor not below {TAIL_FRACTION} of peak by k_max = {k_max}"
    )))
}

/// Field mass `m_e = (1/3) int d^3k |rho_hat(k)|^2 / k^2
///               = (4pi/3) int_0^inf rho_hat_r(k)^2 dk`,
/// evaluated by trapezoid on the model's spectral table.
pub fn field_mass(model: &ChargeModel) -> Result<f64> {
    let sq: Vec<f64> = model
        .form_factor_table
        .iter()
        .map(|v| v * v)
        .collect();
    let total = trapezoid_uniform(&sq, model.dk());
    // Tail diagnostic: the last 5% of the grid must be negligible.
    let tail_start = sq.len() - (sq.len() / 20).max(2);
    let tail = trapezoid_uniform(&sq[tail_start..], model.dk());
    if !(total > 0.0) || tail > 1e-12 * total {
        return Err(Error::NoConvergence(format!(
            "spectral tail of |rho_hat|^2 not converged: tail {tail:e} vs total {total:e}"
        )));
    }
    Ok(4.0 * PI / 3.0 * total)
}

/// Real-space reconstruction via the inverse radial transform, used by the
/// round-trip diagnostics: `rho_r(r) = (2pi)^(-3/2) 4pi int_0^kmax k^2
/// rho_hat_r(k) sinc(kr) dk` evaluated by trapezoid on the table.
pub fn reconstruct_rho_r(model: &ChargeModel, r: f64) -> f64 {
    let dk = model.dk();
    let vals: Vec<f64> = model
        .form_factor_table
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let k = i as f64 * dk;
            k * k * v * sinc(k * r)
        })
        .collect();
    4.0 * PI * trapezoid_uniform(&vals, dk) / TWO_PI_POW_3_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_unit() -> ChargeModel {
        build_charge(ChargeKind::Gaussian, 1.0, 1.0, 512).unwrap()
    }

    #[test]
    fn gaussian_form_factor_closed_form() {
        let model = gaussian_unit();
        for &k in &[0.0f64, 1.0, 2.0] {
            let expect = (-0.5 * k * k).exp() / TWO_PI_POW_3_2;
            let got = model.form_factor(k);
            assert!(
                (got - expect).abs() < 1e-12,
                "k={k}: got {got}, expect {expect}"
            );
        }
    }

    #[test]
    fn zero_frequency_moment_is_total_charge() {
        for (kind, e) in [
            (ChargeKind::Gaussian, 1.0),
            (ChargeKind::CompactBump, 1.0),
            (ChargeKind::CompactBump, -2.5),
        ] {
            let model = build_charge(kind, 1.0, e, 512).unwrap();
            let expect = e / TWO_PI_POW_3_2;
            assert!(
                (model.form_factor_table[0] - expect).abs() < 1e-10 * e.abs(),
                "kind {kind:?}"
            );
        }
    }

    #[test]
    fn gaussian_field_mass_closed_form() {
        let model = gaussian_unit();
        let me = field_mass(&model).unwrap();
        let expect = 1.0 / (12.0 * PI.powf(1.5));
        assert!(
            (me - expect).abs() / expect < 1e-9,
            "got {me}, expect {expect}"
        );
    }

    #[test]
    fn field_mass_quadratic_in_charge() {
        let m1 = field_mass(&build_charge(ChargeKind::CompactBump, 1.0, 1.0, 512).unwrap()).unwrap();
        let m2 = field_mass(&build_charge(ChargeKind::CompactBump, 1.0, 2.0, 512).unwrap()).unwrap();
        assert!((m2 / m1 - 4.0).abs() < 1e-10);
    }

    #[test]
    fn field_mass_refinement_stable() {
        let lo = field_mass(&build_charge(ChargeKind::CompactBump, 1.0, 1.0, 2048).unwrap()).unwrap();
        let hi = field_mass(&build_charge(ChargeKind::CompactBump, 1.0, 1.0, 4096).unwrap()).unwrap();
        assert!((lo - hi).abs() / hi < 1e-6, "lo {lo}, hi {hi}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_charge(ChargeKind::CompactBump, -1.0, 1.0, 512).is_err());
        assert!(build_charge(ChargeKind::CompactBump, 0.0, 1.0, 512).is_err());
        assert!(build_charge(ChargeKind::CompactBump, 1.0, 0.0, 512).is_err());
        assert!(build_charge(ChargeKind::CompactBump, 1.0, 1.0, 128).is_err());
        assert!(build_charge_with_policy(
            ChargeKind::Gaussian,
            1.0,
            1.0,
            512,
            SupportPolicy::StrictCompact
        )
        .is_err());
        assert!(build_charge_with_policy(
            ChargeKind::CompactBump,
            1.0,
            1.0,
            512,
            SupportPolicy::StrictCompact
        )
        .is_ok());
    }

    #[test]
    fn bump_total_charge_normalized() {
        let model = build_charge(ChargeKind::CompactBump, 1.3, -0.7, 512).unwrap();
        let gl = GaussLegendre::new(16);
        let total =
            4.0 * PI * gl.integrate_composite(0.0, 1.3, 64, |r| r * r * model.rho_r(r));
        assert!((total - -0.7).abs() < 1e-10);
    }

    #[test]
    fn bump_reconstruction_round_trip() {
        let model = build_charge(ChargeKind::CompactBump, 1.0, 1.0, 4096).unwrap();
        for i in 0..10 {
            let r = 0.05 + 0.9 * i as f64 / 9.0;
            let back = reconstruct_rho_r(&model, r);
            let direct = model.rho_r(r);
            assert!(
                (back - direct).abs() < 1e-6,
                "r={r}: reconstructed {back}, direct {direct}"
            );
        }
    }

    #[test]
    fn spectral_tail_criterion_holds() {
        let model = build_charge(ChargeKind::CompactBump, 1.0, 1.0, 512).unwrap();
        let peak = model
            .form_factor_table
            .iter()
            .fold(0.0_f64, |a, x| a.max(x.abs()));
        let last = model.form_factor_table.last().unwrap().abs();
        assert!(last <= 1e-12 * peak);
        assert!(model.k_max > 0.0);
    }

    #[test]
    fn l2_norm_scales_linearly() {
        let m1 = build_charge(ChargeKind::CompactBump, 1.0, 1.0, 512).unwrap();
        let m3 = build_charge(ChargeKind::CompactBump, 1.0, 3.0, 512).unwrap();
        assert!((m3.l2_norm() / m1.l2_norm() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn cubic_table_lookup_matches_closed_form() {
        let model = gaussian_unit();
        let dk = model.dk();
        // Off-node queries, including the clamped stencils at both ends.
        for &k in &[
            0.3 * dk,
            1.4 * dk,
            0.517,
            1.93,
            3.211,
            model.k_max - 0.4 * dk,
        ] {
            let expect = (-0.5 * k * k).exp() / TWO_PI_POW_3_2;
            let got = model.form_factor_cubic(k);
            assert!(
                (got - expect).abs() < 1e-8 * model.form_factor_table[0],
                "k={k}: got {got}, expect {expect}"
            );
        }
        assert_eq!(model.form_factor_cubic(model.k_max + 1.0), 0.0);
        // Even extension.
        assert_eq!(
            model.form_factor_cubic(-0.773),
            model.form_factor_cubic(0.773)
        );
    }
}
