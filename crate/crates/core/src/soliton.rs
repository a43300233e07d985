//! Dressed-particle (soliton) charts: normalized energy, total momentum,
//! the bracket function of the speed, momentum inversion, and the co-moving
//! field of a uniformly moving charge.
//!
//! With `gamma = 1/sqrt(1-v^2)` and `s = |v|`:
//!
//! `E_s(v) = gamma - 1 + 3 m_e [ (2-s^2)/(2(1-s^2)) - (1/2s) log((1+s)/(1-s)) ]`
//! `P_s(v) = gamma v + 3 m_e v [ 1/(2 s^2 (1-s^2)) - (1/4s^3) log((1+s)/(1-s)) ]`
//!
//! The square bracket of `P_s` is `bracket_phi`; it tends to 1/3 as s -> 0,
//! so the effective rest mass is `1 + m_e` (bare mass 1 plus field mass).

use crate::charge::ChargeModel;
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::quad::GaussLegendre;
use std::f64::consts::PI;

/// Series switch for phi and psi themselves. The closed forms cancel to
/// eps/s^2 absolute, so below this speed the power series is the accurate
/// branch (and it converges to machine precision in a dozen terms).
pub const SERIES_SWITCH: f64 = 0.06;

/// Series switch for the bracket derivatives, whose closed forms cancel
/// much harder (eps/s^4 absolute and worse for the curvature ratio).
pub const DERIV_SERIES_SWITCH: f64 = 0.3;

fn check_speed(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::domain(format!("speed {s} outside [0, 1)")));
    }
    Ok(())
}

/// Sum `sum_{j>=0} coeff(j) * s^(2j)` until terms fall below 1e-18.
fn even_series(s: f64, coeff: impl Fn(f64) -> f64) -> f64 {
    let x = s * s;
    let mut xp = 1.0;
    let mut acc = 0.0;
    for j in 0..60 {
        let term = coeff(j as f64) * xp;
        acc += term;
        if term.abs() < 1e-18 * (1.0 + acc.abs()) {
            break;
        }
        xp *= x;
    }
    acc
}

fn log_ratio(s: f64) -> f64 {
    // log((1+s)/(1-s)) without loss near s = 0.
    (s).ln_1p() - (-s).ln_1p()
}

/// Momentum bracket `phi(s) = 1/(2s^2(1-s^2)) - (1/4s^3) log((1+s)/(1-s))`.
///
/// Series: `phi(s) = sum_{m>=0} (m+1)/(2m+3) s^(2m)`.
pub fn bracket_phi(s: f64) -> Result<f64> {
    check_speed(s)?;
    if s < SERIES_SWITCH {
        return Ok(even_series(s, |m| (m + 1.0) / (2.0 * m + 3.0)));
    }
    let l = log_ratio(s);
    Ok(1.0 / (2.0 * s * s * (1.0 - s * s)) - l / (4.0 * s * s * s))
}

/// `d phi / d s`. Series: `sum_{m>=1} 2m(m+1)/(2m+3) s^(2m-1)`.
pub fn bracket_phi_deriv(s: f64) -> Result<f64> {
    check_speed(s)?;
    if s < DERIV_SERIES_SWITCH {
        return Ok(s * bracket_phi_deriv_over_s(s)?);
    }
    let l = log_ratio(s);
    let om = 1.0 - s * s;
    Ok(-1.5 / (s * s * s * om) + 1.0 / (s * om * om) + 0.75 * l / (s * s * s * s))
}

/// `d^2 phi / d s^2`. Series: `sum_{m>=1} 2m(2m-1)(m+1)/(2m+3) s^(2m-2)`.
pub fn bracket_phi_deriv2(s: f64) -> Result<f64> {
    check_speed(s)?;
    if s < DERIV_SERIES_SWITCH {
        return Ok(even_series(s, |j| {
            let m = j + 1.0;
            2.0 * m * (2.0 * m - 1.0) * (m + 1.0) / (2.0 * m + 3.0)
        }));
    }
    let l = log_ratio(s);
    let om = 1.0 - s * s;
    let s2 = s * s;
    let s4 = s2 * s2;
    Ok(6.0 / (s4 * om) - 4.0 / (s2 * om * om) + 4.0 / (om * om * om) - 3.0 * l / (s4 * s))
}

/// `phi'(s)/s`, finite at s = 0 with limit 4/5. This is the longitudinal
/// correction weight in the field mass matrix.
pub fn bracket_phi_deriv_over_s(s: f64) -> Result<f64> {
    check_speed(s)?;
    if s < DERIV_SERIES_SWITCH {
        return Ok(even_series(s, |j| {
            let m = j + 1.0;
            2.0 * m * (m + 1.0) / (2.0 * m + 3.0)
        }));
    }
    Ok(bracket_phi_deriv(s)? / s)
}

/// `(phi''(s) - phi'(s)/s)/s^2`, finite at s = 0 with limit 24/7; the
/// radial curvature weight in the derivative of the mass matrix.
///
/// Series: `sum_{m>=2} 2m(m+1)(2m-2)/(2m+3) s^(2m-4)`.
pub fn bracket_phi_bend(s: f64) -> Result<f64> {
    check_speed(s)?;
    if s < DERIV_SERIES_SWITCH {
        return Ok(even_series(s, |j| {
            let m = j + 2.0;
            2.0 * m * (m + 1.0) * (2.0 * m - 2.0) / (2.0 * m + 3.0)
        }));
    }
    Ok((bracket_phi_deriv2(s)? - bracket_phi_deriv(s)? / s) / (s * s))
}

/// Energy bracket `psi(s) = (2-s^2)/(2(1-s^2)) - (1/2s) log((1+s)/(1-s))`.
///
/// Series: `psi(s) = sum_{n>=1} (2n-1)/(2(2n+1)) s^(2n)`.
pub fn bracket_psi(s: f64) -> Result<f64> {
    check_speed(s)?;
    if s < SERIES_SWITCH {
        let s2 = s * s;
        return Ok(s2
            * even_series(s, |j| {
                let n = j + 1.0;
                (2.0 * n - 1.0) / (2.0 * (2.0 * n + 1.0))
            }));
    }
    let l = log_ratio(s);
    Ok((2.0 - s * s) / (2.0 * (1.0 - s * s)) - l / (2.0 * s))
}

pub fn gamma_of(v: Vec3) -> f64 {
    1.0 / (1.0 - v.norm_sq()).sqrt()
}

/// Normalized soliton energy `E_s(v)`; zero at rest.
pub fn soliton_energy(m_e: f64, v: Vec3) -> Result<f64> {
    let s = v.norm();
    check_speed(s)?;
    Ok(gamma_of(v) - 1.0 + 3.0 * m_e * bracket_psi(s)?)
}

/// Total soliton momentum `P_s(v)`, parallel to `v`.
pub fn soliton_momentum(m_e: f64, v: Vec3) -> Result<Vec3> {
    let s = v.norm();
    check_speed(s)?;
    Ok(v * (gamma_of(v) + 3.0 * m_e * bracket_phi(s)?))
}

/// Scalar momentum profile `|P_s|(s)` for speed `s`.
pub fn momentum_profile(m_e: f64, s: f64) -> Result<f64> {
    check_speed(s)?;
    let gamma = 1.0 / (1.0 - s * s).sqrt();
    Ok(s * (gamma + 3.0 * m_e * bracket_phi(s)?))
}

/// `d|P_s|/ds = gamma^3 + 3 m_e (phi + s phi')`, the longitudinal mass.
pub fn momentum_profile_deriv(m_e: f64, s: f64) -> Result<f64> {
    check_speed(s)?;
    let gamma = 1.0 / (1.0 - s * s).sqrt();
    Ok(gamma * gamma * gamma + 3.0 * m_e * (bracket_phi(s)? + s * bracket_phi_deriv(s)?))
}

/// Invert `v -> P_s(v)` by damped Newton on the monotone scalar profile.
/// The result satisfies `|P_s(v) - P| < 1e-12`.
pub fn velocity_from_momentum(m_e: f64, p: Vec3) -> Result<Vec3> {
    let pn = p.norm();
    if pn == 0.0 {
        return Ok(Vec3::ZERO);
    }
    let dir = p / pn;
    // Seed stays strictly inside |v| < 1.
    let mut s = pn / (1.0 + m_e + pn);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64 - 1e-16;
    for _ in 0..200 {
        let f = momentum_profile(m_e, s)? - pn;
        if f.abs() < 1e-12 {
            return Ok(dir * s);
        }
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = momentum_profile_deriv(m_e, s)?;
        let mut next = s - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        s = next;
    }
    Err(Error::NoConvergence(format!(
        "momentum inversion stalled at |P| = {pn} (internal defect)"
    )))
}

/// `E(P) = E_s(v(P))`.
pub fn energy_of_momentum(m_e: f64, p: Vec3) -> Result<f64> {
    soliton_energy(m_e, velocity_from_momentum(m_e, p)?)
}

/// Co-moving scalar field and field momentum `(phi_v, pi_v)` of a charge in
/// eternal uniform motion, evaluated at offset `x_rel` from the charge
/// center.
///
/// The travelling-wave field is the convolution of `rho` with the boosted
/// point kernel `psi_v(z) = -gamma / (4 pi sqrt(|z|^2 + (gamma^2-1)(z.vhat)^2))`
/// (the closed form of the retarded integral for a straight worldline), and
/// `pi_v = -v . grad phi_v` with the gradient taken under the integral.
///
/// Returns `(phi, pi, inside_support)`; the flag marks evaluation points in
/// the self-field region `|x_rel| < R_rho` where the quadrature is not
/// singularity-free.
pub fn soliton_field(
    charge: &ChargeModel,
    v: Vec3,
    x_rel: Vec3,
) -> Result<(f64, f64, bool)> {
    let s = v.norm();
    check_speed(s)?;
    let gamma = gamma_of(v);
    let g2m1 = gamma * gamma - 1.0;
    let vhat = v.unit().unwrap_or(Vec3::new(0.0, 0.0, 1.0));

    let r_max = charge.effective_radius();
    let inside = x_rel.norm() < r_max;

    // Product quadrature in spherical coordinates around the charge center.
    let n_r = 48;
    let n_mu = 48;
    let n_az = 48;
    let gl = GaussLegendre::new(n_r);
    let gl_mu = GaussLegendre::new(n_mu);

    let mut phi = 0.0;
    let mut pi = 0.0;
    for (xr, wr) in gl.nodes.iter().zip(&gl.weights) {
        let r = 0.5 * r_max * (xr + 1.0);
        let wr = 0.5 * r_max * wr;
        let rho = charge.rho_r(r);
        if rho == 0.0 {
            continue;
        }
        for (xmu, wmu) in gl_mu.nodes.iter().zip(&gl_mu.weights) {
            let mu = *xmu;
            let sint = (1.0 - mu * mu).sqrt();
            for ia in 0..n_az {
                let az = 2.0 * PI * (ia as f64 + 0.5) / n_az as f64;
                let y = Vec3::new(r * sint * az.cos(), r * sint * az.sin(), r * mu);
                let z = x_rel - y;
                let zpar = z.dot(vhat);
                let s2 = z.norm_sq() + g2m1 * zpar * zpar;
                let sq = s2.sqrt();
                let w = wr * wmu * (2.0 * PI / n_az as f64) * r * r * rho;
                phi += w * (-gamma / (4.0 * PI * sq));
                // grad psi_v . v = gamma (z.v + (gamma^2-1)(z.vhat)(vhat.v)) / (4 pi s_b^3)
                let grad_dot_v =
                    gamma * (z.dot(v) + g2m1 * zpar * vhat.dot(v)) / (4.0 * PI * s2 * sq);
                pi += w * (-grad_dot_v);
            }
        }
    }
    Ok((phi, pi, inside))
}

/// Oracle helper: `phi_v` by direct 3D quadrature of the spectral
/// representation `phi_hat_v(k) = -rho_hat(k) / (k^2 - (v.k)^2)`.
/// Slow; used by tests to cross-check `soliton_field`.
pub fn soliton_field_spectral(charge: &ChargeModel, v: Vec3, x_rel: Vec3) -> Result<f64> {
    let s = v.norm();
    check_speed(s)?;
    let vhat = v.unit().unwrap_or(Vec3::new(0.0, 0.0, 1.0));
    let k_max = charge.k_max;
    let x_norm = x_rel.norm();

    let n_mu = 64;
    let n_az = 64;
    let gl_mu = GaussLegendre::new(n_mu);
    let gl_k = GaussLegendre::new(8);
    let panels = ((k_max * (1.0 + x_norm) / PI).ceil() as usize).max(64);

    let (e1, e2) = vhat.orthonormal_complement();

    let integral = gl_k.integrate_composite(0.0, k_max, panels, |k| {
        if k == 0.0 {
            return 0.0;
        }
        let ff = charge.form_factor(k);
        let mut ang = 0.0;
        for (xmu, wmu) in gl_mu.nodes.iter().zip(&gl_mu.weights) {
            let mu = *xmu;
            let sint = (1.0 - mu * mu).sqrt();
            for ia in 0..n_az {
                let az = 2.0 * PI * (ia as f64 + 0.5) / n_az as f64;
                let khat = vhat * mu + e1 * (sint * az.cos()) + e2 * (sint * az.sin());
                let denom = k * k * (1.0 - s * s * mu * mu);
                ang += wmu * (2.0 * PI / n_az as f64) * (k * khat.dot(x_rel)).cos() / denom;
            }
        }
        -k * k * ff * ang
    });
    Ok(integral / crate::charge::TWO_PI_POW_3_2)
}
