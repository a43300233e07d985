//! Fixed-step RK4 driving and densely sampled trajectories.
//!
//! All integrators in this crate use a fixed step so that parameter sweeps
//! stay bitwise reproducible; dense output between grid points is cubic
//! Hermite, matching state and derivative at both segment ends.

use crate::error::{Error, Result};

/// One classical RK4 step of size `dt` for `y' = f(t, y)`.
pub fn rk4_step<const N: usize, F: FnMut(f64, &[f64; N]) -> [f64; N]>(
    t: f64,
    y: &[f64; N],
    dt: f64,
    f: &mut F,
) -> [f64; N] {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &add_scaled(y, &k1, 0.5 * dt));
    let k3 = f(t + 0.5 * dt, &add_scaled(y, &k2, 0.5 * dt));
    let k4 = f(t + dt, &add_scaled(y, &k3, dt));
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn add_scaled<const N: usize>(y: &[f64; N], k: &[f64; N], s: f64) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += s * k[i];
    }
    out
}

/// Uniformly sampled trajectory with stored derivatives, supporting cubic
/// Hermite dense output on each segment.
#[derive(Debug, Clone)]
pub struct SampledPath<const N: usize> {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<[f64; N]>,
    pub derivs: Vec<[f64; N]>,
}

impl<const N: usize> SampledPath<N> {
    pub fn new(t0: f64, dt: f64) -> Self {
        assert!(dt > 0.0);
        SampledPath {
            t0,
            dt,
            states: Vec::new(),
            derivs: Vec::new(),
        }
    }

    pub fn push(&mut self, state: [f64; N], deriv: [f64; N]) {
        self.states.push(state);
        self.derivs.push(deriv);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.states.len().saturating_sub(1)) as f64
    }

    pub fn time_at(&self, idx: usize) -> f64 {
        self.t0 + self.dt * idx as f64
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let tol = 1e-9 * self.dt;
        if self.states.len() < 2 || t < self.t0 - tol || t > self.t_end() + tol {
            return Err(Error::domain(format!(
                "time {t} outside sampled range [{}, {}]",
                self.t0,
                self.t_end()
            )));
        }
        let raw = (t - self.t0) / self.dt;
        let idx = (raw.floor() as usize).min(self.states.len() - 2);
        let theta = (raw - idx as f64).clamp(0.0, 1.0);
        Ok((idx, theta))
    }

    /// Cubic Hermite interpolation of the state at time `t`.
    pub fn eval(&self, t: f64) -> Result<[f64; N]> {
        let (idx, th) = self.locate(t)?;
        let h = self.dt;
        let (y0, y1) = (&self.states[idx], &self.states[idx + 1]);
        let (d0, d1) = (&self.derivs[idx], &self.derivs[idx + 1]);
        let th2 = th * th;
        let th3 = th2 * th;
        let h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
        let h10 = th3 - 2.0 * th2 + th;
        let h01 = -2.0 * th3 + 3.0 * th2;
        let h11 = th3 - th2;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = h00 * y0[i] + h10 * h * d0[i] + h01 * y1[i] + h11 * h * d1[i];
        }
        Ok(out)
    }

    /// Time derivative of the Hermite interpolant at `t`.
    pub fn eval_deriv(&self, t: f64) -> Result<[f64; N]> {
        let (idx, th) = self.locate(t)?;
        let h = self.dt;
        let (y0, y1) = (&self.states[idx], &self.states[idx + 1]);
        let (d0, d1) = (&self.derivs[idx], &self.derivs[idx + 1]);
        let th2 = th * th;
        let dh00 = (6.0 * th2 - 6.0 * th) / h;
        let dh10 = 3.0 * th2 - 4.0 * th + 1.0;
        let dh01 = (-6.0 * th2 + 6.0 * th) / h;
        let dh11 = 3.0 * th2 - 2.0 * th;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = dh00 * y0[i] + dh10 * d0[i] + dh01 * y1[i] + dh11 * d1[i];
        }
        Ok(out)
    }
}
