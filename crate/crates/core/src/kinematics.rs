//! Velocity-dependent coefficient objects of the effective dynamics: the
//! bare and field-dressed mass matrices, the radiation coefficients a and b,
//! the hyperbolicity rate of the fast subsystem, and the potential catalogue.
//!
//! Every matrix here has the form `alpha(s) I + beta(s) v v^T`, so the
//! eigenstructure is two transverse copies of alpha and one longitudinal
//! value `alpha + beta s^2` along v.
//!
//! Near light speed the coefficients are continued: the speed argument is
//! clamped at `clamp_speed` through a C^1 quadratic blend of half-width
//! `clamp_width`, which keeps ODE right-hand sides differentiable while
//! leaving everything below the blend ring untouched.

use crate::error::{Error, Result};
use crate::linalg::{generalized_eigenvalues, Mat3, Vec3};
use crate::soliton::{bracket_phi, bracket_phi_bend, bracket_phi_deriv_over_s};
use std::f64::consts::PI;

/// Default distance kept from light speed: clamp at |v| = 1 - 0.05.
pub const DEFAULT_DELTA_BAR: f64 = 0.05;

/// Default half-width of the C^1 clamp blend (full ring width 1e-3).
pub const DEFAULT_CLAMP_WIDTH: f64 = 5e-4;

/// Mass scale, charge, and near-light-speed clamp for all coefficient
/// evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientSet {
    /// Field (dressing) mass m_e.
    pub m_e: f64,
    /// Squared total charge e^2.
    pub e_sq: f64,
    /// Speeds are clamped to this value (1 - delta_bar).
    pub clamp_speed: f64,
    /// Half-width of the quadratic blend around `clamp_speed`.
    pub clamp_width: f64,
}

impl CoefficientSet {
    pub fn new(m_e: f64, e_sq: f64) -> Self {
        Self {
            m_e,
            e_sq,
            clamp_speed: 1.0 - DEFAULT_DELTA_BAR,
            clamp_width: DEFAULT_CLAMP_WIDTH,
        }
    }

    pub fn with_clamp(m_e: f64, e_sq: f64, clamp_speed: f64) -> Result<Self> {
        if !(0.0 < clamp_speed && clamp_speed < 1.0) {
            return Err(Error::invalid(format!(
                "clamp speed {clamp_speed} outside (0, 1)"
            )));
        }
        Ok(Self {
            m_e,
            e_sq,
            clamp_speed,
            clamp_width: DEFAULT_CLAMP_WIDTH,
        })
    }

    /// C^1 clamp of the speed: identity below the blend ring, constant
    /// `clamp_speed` above it, a quadratic joint inside.
    pub fn effective_speed(&self, s: f64) -> f64 {
        let (s_star, w) = (self.clamp_speed, self.clamp_width);
        if s <= s_star - w {
            s
        } else if s >= s_star + w {
            s_star
        } else {
            let xi = s - (s_star - w);
            s_star - w + xi - xi * xi / (4.0 * w)
        }
    }

    /// Velocity with clamped magnitude, direction preserved.
    pub fn clamped(&self, v: Vec3) -> Vec3 {
        let s = v.norm();
        if s <= self.clamp_speed - self.clamp_width {
            return v;
        }
        v * (self.effective_speed(s) / s)
    }

    /// Bare relativistic mass matrix: m0(v) w = gamma w + gamma^3 (v.w) v.
    pub fn m0(&self, v: Vec3) -> Mat3 {
        let v = self.clamped(v);
        let gamma = 1.0 / (1.0 - v.norm_sq()).sqrt();
        Mat3::IDENTITY * gamma + Mat3::outer(v, v) * (gamma * gamma * gamma)
    }

    /// Field dressing: m_f(v) w = 3 m_e (phi(s) w + phi'(s)/s (v.w) v).
    pub fn m_f(&self, v: Vec3) -> Mat3 {
        let v = self.clamped(v);
        let s = v.norm();
        let phi = bracket_phi(s).expect("clamped speed is subluminal");
        let over = bracket_phi_deriv_over_s(s).expect("clamped speed is subluminal");
        (Mat3::IDENTITY * phi + Mat3::outer(v, v) * over) * (3.0 * self.m_e)
    }

    /// Full effective mass m(v) = m0(v) + m_f(v).
    pub fn mass_matrix(&self, v: Vec3) -> Mat3 {
        self.m0(v) + self.m_f(v)
    }

    /// Radiation inertia: a(v) w = (e^2/12 pi)(gamma^4 w + 4 gamma^6 (v.w) v).
    pub fn coeff_a(&self, v: Vec3) -> Mat3 {
        let v = self.clamped(v);
        let g2 = 1.0 / (1.0 - v.norm_sq());
        let g4 = g2 * g2;
        (Mat3::IDENTITY * g4 + Mat3::outer(v, v) * (4.0 * g4 * g2)) * (self.e_sq / (12.0 * PI))
    }

    /// Quadratic radiation drag:
    /// b(v, w) = (e^2/4 pi)[2 gamma^6 (v.w) w + gamma^6 w^2 v + 6 gamma^8 (v.w)^2 v].
    pub fn coeff_b(&self, v: Vec3, vdot: Vec3) -> Vec3 {
        let v = self.clamped(v);
        let g2 = 1.0 / (1.0 - v.norm_sq());
        let g6 = g2 * g2 * g2;
        let vw = v.dot(vdot);
        (vdot * (2.0 * g6 * vw) + v * (g6 * vdot.norm_sq()) + v * (6.0 * g6 * g2 * vw * vw))
            * (self.e_sq / (4.0 * PI))
    }

    /// Polarization of `coeff_b` in its second slot:
    /// b_bilin(v; w, z) with b(v, w) = b_bilin(v; w, w).
    pub fn coeff_b_bilinear(&self, v: Vec3, w: Vec3, z: Vec3) -> Vec3 {
        let v = self.clamped(v);
        let g2 = 1.0 / (1.0 - v.norm_sq());
        let g6 = g2 * g2 * g2;
        let vw = v.dot(w);
        let vz = v.dot(z);
        (w * (g6 * vz) + z * (g6 * vw) + v * (g6 * w.dot(z)) + v * (6.0 * g6 * g2 * vw * vz))
            * (self.e_sq / (4.0 * PI))
    }

    /// Directional derivative of the mass matrix: B(w, z) = (D_w m)(u) z,
    /// symmetric in (w, z).
    ///
    /// With m = alpha(s) I + beta(s) u u^T one has alpha' = s beta, so
    /// B(w, z) = beta [(u.w) z + (u.z) w + (w.z) u] + (beta'/s)(u.w)(u.z) u
    /// where beta = gamma^3 + 3 m_e phi'/s and
    /// beta'/s = 3 gamma^5 + 3 m_e (phi'' - phi'/s)/s^2.
    ///
    /// The derivative is that of the unclamped coefficients evaluated at the
    /// clamped argument; callers operate at |u| <= v_bar inside the
    /// clamp-identity region where this is exact.
    pub fn mass_deriv_bilinear(&self, u: Vec3, w: Vec3, z: Vec3) -> Vec3 {
        let u = self.clamped(u);
        let s = u.norm();
        let g2 = 1.0 / (1.0 - s * s);
        let g3 = g2.sqrt() * g2;
        let over = bracket_phi_deriv_over_s(s).expect("clamped speed is subluminal");
        let bend = bracket_phi_bend(s).expect("clamped speed is subluminal");
        let beta = g3 + 3.0 * self.m_e * over;
        let beta_over = 3.0 * g3 * g2 + 3.0 * self.m_e * bend;
        let uw = u.dot(w);
        let uz = u.dot(z);
        z * (beta * uw) + w * (beta * uz) + u * (beta * w.dot(z)) + u * (beta_over * uw * uz)
    }

    /// Smallest eigenvalue of a(v)^{-1} m(v), the normal hyperbolicity rate
    /// of the fast subsystem. Bounded below by (3 pi / e^2) gamma^{-3}.
    pub fn hyperbolicity_rate(&self, v: Vec3) -> f64 {
        let a = self.coeff_a(v);
        let m = self.mass_matrix(v);
        let eig = generalized_eigenvalues(a, m).expect("a(v) is positive definite");
        eig[0]
    }
}

/// Fixed catalogue of external potentials. The first two derivative orders
/// feed the dynamics; the third is kept for bound bookkeeping and residual
/// checks.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialModel {
    Zero,
    /// V = k/2 |q|^2 (confining).
    Harmonic { stiffness: f64 },
    /// V = -depth exp(-|q|^2 / (2 width^2)) (bounded, relaxing).
    GaussianWell { depth: f64, width: f64 },
    /// V = height/(4 sep^2) (|q|^2 - sep^2)^2 (confining).
    DoubleWell { height: f64, separation: f64 },
    /// V = k/4 |q|^4 (confining).
    ConfiningQuartic { stiffness: f64 },
}

impl PotentialModel {
    pub fn value(&self, q: Vec3) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Harmonic { stiffness } => 0.5 * stiffness * q.norm_sq(),
            Self::GaussianWell { depth, width } => {
                -depth * (-q.norm_sq() / (2.0 * width * width)).exp()
            }
            Self::DoubleWell { height, separation } => {
                let x = q.norm_sq() - separation * separation;
                height / (4.0 * separation * separation) * x * x
            }
            Self::ConfiningQuartic { stiffness } => {
                0.25 * stiffness * q.norm_sq() * q.norm_sq()
            }
        }
    }

    pub fn gradient(&self, q: Vec3) -> Vec3 {
        match *self {
            Self::Zero => Vec3::ZERO,
            Self::Harmonic { stiffness } => q * stiffness,
            Self::GaussianWell { depth, width } => {
                let w2 = width * width;
                q * (depth / w2 * (-q.norm_sq() / (2.0 * w2)).exp())
            }
            Self::DoubleWell { height, separation } => {
                let s2 = separation * separation;
                q * (height / s2 * (q.norm_sq() - s2))
            }
            Self::ConfiningQuartic { stiffness } => q * (stiffness * q.norm_sq()),
        }
    }

    pub fn hessian(&self, q: Vec3) -> Mat3 {
        match *self {
            Self::Zero => Mat3::ZERO,
            Self::Harmonic { stiffness } => Mat3::IDENTITY * stiffness,
            Self::GaussianWell { depth, width } => {
                let w2 = width * width;
                let g = (-q.norm_sq() / (2.0 * w2)).exp() * depth / w2;
                (Mat3::IDENTITY - Mat3::outer(q, q) * (1.0 / w2)) * g
            }
            Self::DoubleWell { height, separation } => {
                let s2 = separation * separation;
                (Mat3::IDENTITY * (q.norm_sq() - s2) + Mat3::outer(q, q) * 2.0)
                    * (height / s2)
            }
            Self::ConfiningQuartic { stiffness } => {
                (Mat3::IDENTITY * q.norm_sq() + Mat3::outer(q, q) * 2.0) * stiffness
            }
        }
    }

    /// Third derivative as the array of matrices d(hessian)/dq_k.
    pub fn third_derivative(&self, q: Vec3) -> [Mat3; 3] {
        let sym = |c: f64| {
            // c * (delta_ij q_k + delta_ik q_j + delta_jk q_i) as [Mat3; 3]
            let mut out = [Mat3::ZERO; 3];
            for (k, m) in out.iter_mut().enumerate() {
                let mut ek = Vec3::ZERO;
                ek.0[k] = 1.0;
                *m = (Mat3::IDENTITY * q.0[k] + Mat3::outer(ek, q) + Mat3::outer(q, ek)) * c;
            }
            out
        };
        match *self {
            Self::Zero | Self::Harmonic { .. } => [Mat3::ZERO; 3],
            Self::GaussianWell { depth, width } => {
                let w2 = width * width;
                let g = (-q.norm_sq() / (2.0 * w2)).exp() * depth / w2;
                let mut out = sym(-g / w2);
                for (k, m) in out.iter_mut().enumerate() {
                    *m = *m + Mat3::outer(q, q) * (g / (w2 * w2) * q.0[k]);
                }
                out
            }
            Self::DoubleWell { height, separation } => {
                sym(2.0 * height / (separation * separation))
            }
            Self::ConfiningQuartic { stiffness } => sym(2.0 * stiffness),
        }
    }

    /// True for potentials growing without bound (the confining class);
    /// false for the globally bounded class.
    pub fn is_confining(&self) -> bool {
        matches!(
            self,
            Self::Harmonic { .. } | Self::DoubleWell { .. } | Self::ConfiningQuartic { .. }
        )
    }

    pub fn inf_value(&self) -> f64 {
        match *self {
            Self::Zero | Self::Harmonic { .. } | Self::ConfiningQuartic { .. } => 0.0,
            Self::GaussianWell { depth, .. } => -depth,
            Self::DoubleWell { .. } => 0.0,
        }
    }

    /// Global sup-norm bounds [|V|, |grad V|, |hess V|, |third V|] for the
    /// bounded kinds; None for confining potentials.
    pub fn derivative_bounds(&self) -> Option<[f64; 4]> {
        match *self {
            Self::Zero => Some([0.0; 4]),
            Self::GaussianWell { depth, width } => {
                // sup |x^n terms| exp(-x^2/2) worked out per order; the third
                // order uses the safe envelope (3x + x^3) exp(-x^2/2) <= 2.631.
                let a = depth.abs();
                Some([
                    a,
                    a / width * (-0.5_f64).exp(),
                    a / (width * width),
                    a / (width * width * width) * 2.631,
                ])
            }
            _ => None,
        }
    }
}
