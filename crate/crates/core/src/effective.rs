//! The leading-order effective particle dynamics: rdot = u,
//! m(u) udot = -grad V(r), which conserves H(r, u) = E_s(u) + V(r).

use crate::error::{Error, Result};
use crate::kinematics::{CoefficientSet, PotentialModel};
use crate::linalg::Vec3;
use crate::path::{rk4_step, SampledPath};
use crate::soliton::soliton_energy;

/// Position and velocity of the dressed particle, macroscopic units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleState {
    pub r: Vec3,
    pub u: Vec3,
}

impl ParticleState {
    pub fn new(r: Vec3, u: Vec3) -> Self {
        Self { r, u }
    }

    pub(crate) fn to_array(self) -> [f64; 6] {
        [
            self.r.0[0], self.r.0[1], self.r.0[2], self.u.0[0], self.u.0[1], self.u.0[2],
        ]
    }

    pub(crate) fn from_array(y: &[f64; 6]) -> Self {
        Self {
            r: Vec3::new(y[0], y[1], y[2]),
            u: Vec3::new(y[3], y[4], y[5]),
        }
    }
}

/// Right-hand side (rdot, udot) of the effective equations; udot solves
/// m(u) udot = -grad V(r) directly.
pub fn effective_rhs(
    state: ParticleState,
    coeffs: &CoefficientSet,
    potential: &PotentialModel,
) -> (Vec3, Vec3) {
    let m = coeffs.mass_matrix(state.u);
    let udot = m
        .solve(-potential.gradient(state.r))
        .expect("mass matrix is positive definite below the clamp");
    (state.u, udot)
}

/// Conserved energy H(r, u) = E_s(u) + V(r).
pub fn effective_energy(
    coeffs: &CoefficientSet,
    potential: &PotentialModel,
    state: ParticleState,
) -> Result<f64> {
    Ok(soliton_energy(coeffs.m_e, state.u)? + potential.value(state.r))
}

/// Integrated effective trajectory on a uniform grid with cubic dense
/// output.
#[derive(Debug, Clone)]
pub struct EffectiveTrajectory {
    pub path: SampledPath<6>,
}

impl EffectiveTrajectory {
    pub fn state(&self, t: f64) -> Result<ParticleState> {
        Ok(ParticleState::from_array(&self.path.eval(t)?))
    }

    /// (udot) of the interpolated trajectory at time t.
    pub fn acceleration(&self, t: f64) -> Result<Vec3> {
        let d = self.path.eval_deriv(t)?;
        Ok(Vec3::new(d[3], d[4], d[5]))
    }

    pub fn t_end(&self) -> f64 {
        self.path.t_end()
    }

    pub fn energy(
        &self,
        coeffs: &CoefficientSet,
        potential: &PotentialModel,
        t: f64,
    ) -> Result<f64> {
        effective_energy(coeffs, potential, self.state(t)?)
    }
}

/// Classical fixed-step 4th-order integration of the effective dynamics.
///
/// Aborts with a diagnostic if |u| reaches the clamp boundary, which energy
/// conservation rules out for valid initial data; hitting it means the
/// configuration (not the integrator) is outside the effective description.
pub fn integrate_effective(
    state0: ParticleState,
    coeffs: &CoefficientSet,
    potential: &PotentialModel,
    t_final: f64,
    step: f64,
) -> Result<EffectiveTrajectory> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::invalid(format!("step {step} must be positive")));
    }
    if state0.u.norm() >= 1.0 {
        return Err(Error::domain(format!(
            "initial speed {} is not subluminal",
            state0.u.norm()
        )));
    }
    let n_steps = (t_final / step).round() as usize;
    let mut rhs = |_t: f64, y: &[f64; 6]| {
        let s = ParticleState::from_array(y);
        let (rdot, udot) = effective_rhs(s, coeffs, potential);
        [
            rdot.0[0], rdot.0[1], rdot.0[2], udot.0[0], udot.0[1], udot.0[2],
        ]
    };
    let mut path = SampledPath::new(0.0, step);
    let mut y = state0.to_array();
    let mut t = 0.0;
    let d0 = rhs(0.0, &y);
    path.push(y, d0);
    for _ in 0..n_steps {
        y = rk4_step(t, &y, step, &mut rhs);
        t += step;
        let speed = Vec3::new(y[3], y[4], y[5]).norm();
        if speed >= coeffs.clamp_speed {
            return Err(Error::ClampBoundary {
                t,
                speed,
                limit: coeffs.clamp_speed,
            });
        }
        let d = rhs(t, &y);
        path.push(y, d);
    }
    Ok(EffectiveTrajectory { path })
}
