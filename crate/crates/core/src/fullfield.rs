//! Microscopic charge dynamics with the wave field integrated out.
//!
//! For a radial charge density the field the particle has radiated acts
//! back on it through a scalar memory kernel of the elapsed time and the
//! spatial separation from each past position:
//!
//! `F(t) = - int_{t-t1}^t K(t - s, |d(s)|) dhat(s) ds`, `d(s) = q(t) - q(s)`,
//!
//! `K(tau, d) = 4 pi int_0^inf dk k^2 rhohat_r(k)^2 sin(k tau) j1(k d)`.
//!
//! Writing `j1` out and converting the trigonometric products to sums turns
//! `K` into four lookups of two one-dimensional cosine/sine transforms of
//! the squared form factor `f = rhohat_r^2`:
//!
//! `C(x) = int f(k) cos(kx) dk`, `S(x) = int k f(k) sin(kx) dk`,
//!
//! `K(tau, d) = (2 pi / d^2) [C(tau - d) - C(tau + d)]
//!            - (2 pi / d) [S(tau - d) + S(tau + d)]`.
//!
//! Since `C' = -S`, the bracket vanishes to second order as `d -> 0` and the
//! division is benign; `K(tau, 0) = 0` exactly. Both transforms are Fourier
//! transforms of the charge autocorrelation, so they vanish for
//! `|x| > 2 R_rho`: the kernel is supported on the band `|tau - d| <= 2 R_rho`,
//! and below speed `vbar` nothing older than `t1 = 2 R_rho / (1 - vbar)`
//! contributes. `C` and `S` are tabulated on the same uniform grid as
//! `(tau, d)`, so every table node of `K` uses exact transform values and
//! the assembly needs no interpolation; the trapezoid sums over the charge
//! table are alias-free because the transforms are band-limited to
//! `|x| <= 2 R_rho`, far inside the `2 pi / dk` alias period.
//!
//! All quantities here live in microscopic variables. `integrate_full`
//! accepts the initial position in macroscopic units (`q = q' / eps`) and
//! feels the external potential as the slowly varying force
//! `-eps grad V(eps q)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::charge::{ChargeKind, ChargeModel};
use crate::error::{Error, Result};
use crate::kinematics::{CoefficientSet, PotentialModel};
use crate::linalg::Vec3;
use crate::path::SampledPath;
use crate::quad::{lagrange_cubic_weights, GaussLegendre};

/// Grid step of the kernel table in both tau and d.
const KERNEL_GRID_STEP: f64 = 5e-3;
/// Table headroom beyond the memory depth t1.
const KERNEL_TAU_MARGIN: f64 = 0.5;
/// Table headroom beyond the largest reachable separation vbar * tau_max.
const KERNEL_D_MARGIN: f64 = 0.05;
/// Band half-width padding, in grid steps, kept around |tau - d| = 2 R_rho.
const KERNEL_BAND_PAD_STEPS: f64 = 2.0;
/// Separations below this contribute nothing (K vanishes linearly in d).
const MIN_SEPARATION: f64 = 1e-14;
/// Half-width of the central difference for the second velocity derivative
/// in `taylor_residual`, in microscopic time.
const TAYLOR_FD_HALFWIDTH: f64 = 0.5;
/// Damping parameters for `kernel_time_integral`, in units of (1 - |v|).
const ETA_LADDER: [f64; 4] = [0.04, 0.02, 0.01, 0.005];

const KERNEL_MAGIC: &[u8; 8] = b"SWKERN01";

fn gl8() -> &'static GaussLegendre {
    static CELL: OnceLock<GaussLegendre> = OnceLock::new();
    CELL.get_or_init(|| GaussLegendre::new(8))
}

fn gl16() -> &'static GaussLegendre {
    static CELL: OnceLock<GaussLegendre> = OnceLock::new();
    CELL.get_or_init(|| GaussLegendre::new(16))
}

fn gl32() -> &'static GaussLegendre {
    static CELL: OnceLock<GaussLegendre> = OnceLock::new();
    CELL.get_or_init(|| GaussLegendre::new(32))
}

/// A worldline sampled on a uniform grid, with cubic Hermite interpolation
/// between nodes and a straight-line extension before the first node: for
/// `s <= t0` the particle is taken to have moved freely with its initial
/// velocity, which is the stationary prehistory the memory force expects.
#[derive(Clone)]
pub struct TrajectoryHistory {
    path: SampledPath<6>,
    max_speed: f64,
}

impl TrajectoryHistory {
    fn new(t0: f64, dt: f64) -> Self {
        TrajectoryHistory {
            path: SampledPath::new(t0, dt),
            max_speed: 0.0,
        }
    }

    /// Sample a prescribed worldline `s -> (q, v, vdot)` on `[t0, t_end]`
    /// with spacing `dt`. Used to probe the memory force along known
    /// trajectories.
    pub fn from_fn<F: Fn(f64) -> (Vec3, Vec3, Vec3)>(
        t0: f64,
        t_end: f64,
        dt: f64,
        f: F,
    ) -> Result<Self> {
        if !(dt > 0.0) || !t0.is_finite() || !(t_end > t0) {
            return Err(Error::invalid("history grid needs t_end > t0 and dt > 0"));
        }
        let n = ((t_end - t0) / dt).round() as usize + 1;
        if n < 2 {
            return Err(Error::invalid("history needs at least two nodes"));
        }
        let mut hist = TrajectoryHistory::new(t0, dt);
        for i in 0..n {
            let (q, v, vdot) = f(t0 + i as f64 * dt);
            if v.norm() >= 1.0 {
                return Err(Error::invalid(format!(
                    "prescribed speed {} is not subluminal",
                    v.norm()
                )));
            }
            hist.push_node(q, v, vdot);
        }
        Ok(hist)
    }

    fn push_node(&mut self, q: Vec3, v: Vec3, vdot: Vec3) {
        self.max_speed = self.max_speed.max(v.norm());
        self.path
            .push([q.0[0], q.0[1], q.0[2], v.0[0], v.0[1], v.0[2]], [
                v.0[0], v.0[1], v.0[2], vdot.0[0], vdot.0[1], vdot.0[2],
            ]);
    }

    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.path.t0
    }

    pub fn t_end(&self) -> f64 {
        self.path.t_end()
    }

    pub fn step(&self) -> f64 {
        self.path.dt
    }

    pub fn time_at(&self, idx: usize) -> f64 {
        self.path.time_at(idx)
    }

    /// Largest node speed seen so far.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    pub fn node(&self, idx: usize) -> (Vec3, Vec3) {
        let s = &self.path.states[idx];
        (
            Vec3::new(s[0], s[1], s[2]),
            Vec3::new(s[3], s[4], s[5]),
        )
    }

    pub fn node_velocity_deriv(&self, idx: usize) -> Vec3 {
        let d = &self.path.derivs[idx];
        Vec3::new(d[3], d[4], d[5])
    }

    fn first_node(&self) -> (Vec3, Vec3) {
        self.node(0)
    }

    /// Position at any `s <= t_end`; times before the grid use the straight
    /// prehistory. Times past the end are a hard error: the memory force
    /// must never silently extrapolate forward.
    pub fn position(&self, s: f64) -> Result<Vec3> {
        if s <= self.t_start() {
            let (q0, v0) = self.first_node();
            return Ok(q0 + v0 * (s - self.t_start()));
        }
        let y = self.path.eval(s)?;
        Ok(Vec3::new(y[0], y[1], y[2]))
    }

    pub fn velocity(&self, s: f64) -> Result<Vec3> {
        if s <= self.t_start() {
            return Ok(self.first_node().1);
        }
        let y = self.path.eval(s)?;
        Ok(Vec3::new(y[3], y[4], y[5]))
    }

    pub fn velocity_deriv(&self, s: f64) -> Result<Vec3> {
        if s <= self.t_start() {
            return Ok(Vec3::ZERO);
        }
        let y = self.path.eval_deriv(s)?;
        Ok(Vec3::new(y[3], y[4], y[5]))
    }
}

#[derive(Clone, PartialEq)]
struct KernelMeta {
    kind_tag: u8,
    radius: f64,
    total_charge: f64,
    k_max: f64,
    n_table: usize,
}

fn kind_tag(kind: ChargeKind) -> u8 {
    match kind {
        ChargeKind::CompactBump => 0,
        ChargeKind::Gaussian => 1,
    }
}

/// Tabulated memory kernel `K(tau, d)` for one charge model and one speed
/// bound. Lookups are 4x4 cubic Lagrange interpolation on a uniform grid;
/// everything outside the causal band is stored as an exact zero.
#[derive(Clone)]
pub struct MemoryKernel {
    /// Speed bound the table was sized for; trajectories must stay below it.
    pub vbar: f64,
    /// Grid step in both tau and d.
    pub delta: f64,
    pub tau_max: f64,
    pub d_max: f64,
    /// Memory depth `2 R_rho / (1 - vbar)`: below `vbar` nothing older
    /// contributes.
    pub t1: f64,
    /// Band half-width `2 R_rho`: `K = 0` for `|tau - d| > support`.
    pub support: f64,
    n_tau: usize,
    n_d: usize,
    values: Vec<f64>,
    meta: KernelMeta,
}

impl MemoryKernel {
    /// Tabulate the kernel for `charge`, sized so that any trajectory with
    /// speed below `vbar` can be integrated.
    pub fn build(charge: &ChargeModel, vbar: f64) -> Result<Self> {
        if !vbar.is_finite() || vbar <= 0.0 || vbar > 0.95 {
            return Err(Error::invalid(format!(
                "speed bound vbar = {vbar} must lie in (0, 0.95]"
            )));
        }
        let delta = KERNEL_GRID_STEP;
        let support = 2.0 * charge.effective_radius();
        let t1 = support / (1.0 - vbar);
        let n_tau = ((t1 + KERNEL_TAU_MARGIN) / delta).ceil() as usize + 1;
        let tau_max = (n_tau - 1) as f64 * delta;
        let n_d = ((vbar * tau_max + KERNEL_D_MARGIN) / delta).ceil() as usize + 1;
        let d_max = (n_d - 1) as f64 * delta;
        if n_tau * n_d > 80_000_000 {
            return Err(Error::invalid(format!(
                "kernel table {n_tau} x {n_d} too large; lower vbar or shrink the charge"
            )));
        }

        // Transform tables C, S at all grid multiples that tau +- d can
        // reach. The trapezoid rule over the charge's own k-grid is exact
        // here up to the (<= 1e-12 relative) spectral tail: the integrands'
        // spectra live in |x| <= x_m + support, far below the alias period.
        let f2: Vec<f64> = charge
            .form_factor_table
            .iter()
            .map(|v| v * v)
            .collect();
        let dk = charge.dk();
        let nk = f2.len();
        let n_cs = n_tau + n_d - 1;
        let cs: Vec<(f64, f64)> = (0..n_cs)
            .into_par_iter()
            .map(|m| {
                let x = m as f64 * delta;
                let (dsin, dcos) = (dk * x).sin_cos();
                let mut c = 1.0_f64;
                let mut s = 0.0_f64;
                let mut acc_c = 0.5 * f2[0];
                let mut acc_s = 0.0_f64;
                for (i, &fi) in f2.iter().enumerate().skip(1) {
                    let (c_new, s_new) = (c * dcos - s * dsin, s * dcos + c * dsin);
                    c = c_new;
                    s = s_new;
                    let w = if i == nk - 1 { 0.5 } else { 1.0 };
                    acc_c += w * fi * c;
                    acc_s += w * fi * i as f64 * s;
                }
                (dk * acc_c, dk * dk * acc_s)
            })
            .collect();

        let band = support + KERNEL_BAND_PAD_STEPS * delta;
        let mut values = vec![0.0_f64; n_tau * n_d];
        values
            .par_chunks_mut(n_d)
            .enumerate()
            .for_each(|(i, row)| {
                for (j, slot) in row.iter_mut().enumerate().skip(1) {
                    let sep = i.abs_diff(j) as f64 * delta;
                    if sep > band {
                        continue;
                    }
                    let d = j as f64 * delta;
                    let (c_m, s_m_abs) = cs[i.abs_diff(j)];
                    let s_m = if i >= j { s_m_abs } else { -s_m_abs };
                    let (c_p, s_p) = cs[i + j];
                    *slot = 2.0 * PI * ((c_m - c_p) / (d * d) - (s_m + s_p) / d);
                }
            });

        Ok(MemoryKernel {
            vbar,
            delta,
            tau_max,
            d_max,
            t1,
            support,
            n_tau,
            n_d,
            values,
            meta: KernelMeta {
                kind_tag: kind_tag(charge.kind),
                radius: charge.radius,
                total_charge: charge.total_charge,
                k_max: charge.k_max,
                n_table: charge.form_factor_table.len(),
            },
        })
    }

    /// Raw table value at grid node `(i, j)`, i.e. `K(i delta, j delta)`.
    pub fn node_value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_d + j]
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        (self.n_tau, self.n_d)
    }

    /// Interpolated `K(tau, d)`. Queries beyond the table are hard errors:
    /// `d > d_max` means the trajectory moved faster than the `vbar` the
    /// table was sized for.
    pub fn evaluate(&self, tau: f64, d: f64) -> Result<f64> {
        if !tau.is_finite() || !d.is_finite() {
            return Err(Error::domain("non-finite kernel query"));
        }
        if tau < -1e-9 || tau > self.tau_max + 1e-9 {
            return Err(Error::domain(format!(
                "kernel query tau = {tau} outside table [0, {}]",
                self.tau_max
            )));
        }
        if d < -1e-9 || d > self.d_max + 1e-9 {
            return Err(Error::domain(format!(
                "kernel query d = {d} outside table [0, {}] (separation beyond the vbar = {} sizing)",
                self.d_max, self.vbar
            )));
        }
        let x = (tau / self.delta).clamp(0.0, (self.n_tau - 1) as f64);
        let y = (d / self.delta).clamp(0.0, (self.n_d - 1) as f64);
        let i0 = (x as usize).saturating_sub(1).min(self.n_tau - 4);
        let j0 = (y as usize).saturating_sub(1).min(self.n_d - 4);
        let wx = lagrange_cubic_weights(x - i0 as f64);
        let wy = lagrange_cubic_weights(y - j0 as f64);
        let mut acc = 0.0;
        for a in 0..4 {
            let row = (i0 + a) * self.n_d + j0;
            let mut r = 0.0;
            for b in 0..4 {
                r += wy[b] * self.values[row + b];
            }
            acc += wx[a] * r;
        }
        Ok(acc)
    }

    /// Largest absolute table entry, a scale for tolerances.
    pub fn peak(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Write the table to a binary cache file.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::with_capacity(128 + self.values.len() * 8);
        buf.extend_from_slice(KERNEL_MAGIC);
        buf.push(self.meta.kind_tag);
        for x in [self.meta.radius, self.meta.total_charge, self.meta.k_max] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&(self.meta.n_table as u64).to_le_bytes());
        for x in [
            self.vbar,
            self.delta,
            self.tau_max,
            self.d_max,
            self.t1,
            self.support,
        ] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(&(self.n_tau as u64).to_le_bytes());
        buf.extend_from_slice(&(self.n_d as u64).to_le_bytes());
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Read a cache written by `save`, verifying it belongs to `charge`.
    /// Every parameter must match bit for bit; the build is deterministic,
    /// so a mismatch means the cache is for a different model.
    pub fn load(path: &std::path::Path, charge: &ChargeModel) -> Result<Self> {
        let data = std::fs::read(path)?;
        let mut cur = ByteCursor { data: &data, pos: 0 };
        if cur.take(8)? != KERNEL_MAGIC.as_slice() {
            return Err(Error::invalid("not a kernel cache file"));
        }
        let meta = KernelMeta {
            kind_tag: cur.u8()?,
            radius: cur.f64()?,
            total_charge: cur.f64()?,
            k_max: cur.f64()?,
            n_table: cur.u64()? as usize,
        };
        let expected = KernelMeta {
            kind_tag: kind_tag(charge.kind),
            radius: charge.radius,
            total_charge: charge.total_charge,
            k_max: charge.k_max,
            n_table: charge.form_factor_table.len(),
        };
        if meta != expected {
            return Err(Error::invalid(
                "kernel cache does not match the charge model; rebuild it",
            ));
        }
        let vbar = cur.f64()?;
        let delta = cur.f64()?;
        let tau_max = cur.f64()?;
        let d_max = cur.f64()?;
        let t1 = cur.f64()?;
        let support = cur.f64()?;
        let n_tau = cur.u64()? as usize;
        let n_d = cur.u64()? as usize;
        let count = n_tau
            .checked_mul(n_d)
            .ok_or_else(|| Error::invalid("corrupt kernel cache header"))?;
        if data.len() - cur.pos != count * 8 {
            return Err(Error::invalid("kernel cache truncated or corrupt"));
        }
        let mut values = Vec::with_capacity(count);
        for chunk in data[cur.pos..].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        Ok(MemoryKernel {
            vbar,
            delta,
            tau_max,
            d_max,
            t1,
            support,
            n_tau,
            n_d,
            values,
            meta,
        })
    }
}

struct ByteCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::invalid("kernel cache truncated"));
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn default_panels(kernel: &MemoryKernel) -> usize {
    // Panel width of half a charge radius resolves the kernel's fastest
    // tau-structure comfortably at 8 nodes per panel.
    ((kernel.t1 / (kernel.support / 4.0)).ceil() as usize).max(4)
}

/// Memory force on the particle at time `t` given its past worldline.
pub fn self_force(kernel: &MemoryKernel, history: &TrajectoryHistory, t: f64) -> Result<Vec3> {
    let q_obs = history.position(t)?;
    self_force_at(
        kernel,
        &|s| history.position(s),
        q_obs,
        t,
        default_panels(kernel),
    )
}

/// Core quadrature: `-int_{t-t1}^t K(t - s, |d|) dhat ds` with the observer
/// position passed explicitly so integrator stages can query off-node
/// candidate positions against the same past.
fn self_force_at(
    kernel: &MemoryKernel,
    position: &dyn Fn(f64) -> Result<Vec3>,
    q_obs: Vec3,
    t: f64,
    panels: usize,
) -> Result<Vec3> {
    let gl = gl8();
    let width = kernel.t1 / panels as f64;
    let mut acc = Vec3::ZERO;
    for p in 0..panels {
        let mid = t - kernel.t1 + (p as f64 + 0.5) * width;
        let half = 0.5 * width;
        for (x, w) in gl.nodes.iter().zip(gl.weights.iter()) {
            let s = mid + half * x;
            let dq = q_obs - position(s)?;
            let d = dq.norm();
            if d < MIN_SEPARATION {
                continue;
            }
            acc += dq * (kernel.evaluate(t - s, d)? * w * half / d);
        }
    }
    Ok(-acc)
}

fn velocity_of(p: Vec3) -> Vec3 {
    p / (1.0 + p.norm_sq()).sqrt()
}

/// `dv/dt = (I - v v^T) pdot / gamma` for `v = p / sqrt(1 + p^2)`.
fn vdot_of(p: Vec3, pdot: Vec3) -> Vec3 {
    let gamma = (1.0 + p.norm_sq()).sqrt();
    let v = p / gamma;
    (pdot - v * v.dot(pdot)) / gamma
}

fn external_force(potential: &PotentialModel, q_micro: Vec3, eps: f64) -> Vec3 {
    -(potential.gradient(q_micro * eps) * eps)
}

/// A completed microscopic run: the sampled worldline plus the memory force
/// at every node.
pub struct FullTrajectory {
    pub eps: f64,
    pub history: TrajectoryHistory,
    /// Memory force at each history node.
    pub forces: Vec<Vec3>,
}

impl FullTrajectory {
    /// Position in macroscopic units at macroscopic time.
    pub fn macro_position(&self, t_macro: f64) -> Result<Vec3> {
        Ok(self.history.position(t_macro / self.eps)? * self.eps)
    }

    /// Velocity is not rescaled by the space-time zoom.
    pub fn macro_velocity(&self, t_macro: f64) -> Result<Vec3> {
        self.history.velocity(t_macro / self.eps)
    }

    /// Acceleration with respect to macroscopic time, `vdot / eps`.
    pub fn macro_velocity_deriv(&self, t_macro: f64) -> Result<Vec3> {
        Ok(self.history.velocity_deriv(t_macro / self.eps)? / self.eps)
    }
}

/// One RK4 step of `(q, p)` under external plus memory force. All four
/// stage forces are evaluated separately: even the two half-step stages see
/// different observer positions. Past the last confirmed node the worldline
/// is extended by its second-order Taylor polynomial from that node; the
/// step size keeps the extension error far below the stage accuracy.
#[allow(clippy::too_many_arguments)]
fn rk4_full_step(
    kernel: &MemoryKernel,
    potential: &PotentialModel,
    history: &TrajectoryHistory,
    eps: f64,
    panels: usize,
    tn: f64,
    step: f64,
    q: Vec3,
    p: Vec3,
    vdot_n: Vec3,
    force_n: Vec3,
) -> Result<(Vec3, Vec3, Vec3)> {
    let vn = velocity_of(p);
    let qv = |s: f64| -> Result<Vec3> {
        if s <= tn {
            history.position(s)
        } else {
            let d = s - tn;
            Ok(q + vn * d + vdot_n * (0.5 * d * d))
        }
    };

    let t_mid = tn + 0.5 * step;
    let t_next = tn + step;

    let k1q = vn;
    let k1p = external_force(potential, q, eps) + force_n;

    let q2 = q + k1q * (0.5 * step);
    let p2 = p + k1p * (0.5 * step);
    let f2 = self_force_at(kernel, &qv, q2, t_mid, panels)?;
    let k2q = velocity_of(p2);
    let k2p = external_force(potential, q2, eps) + f2;

    let q3 = q + k2q * (0.5 * step);
    let p3 = p + k2p * (0.5 * step);
    let f3 = self_force_at(kernel, &qv, q3, t_mid, panels)?;
    let k3q = velocity_of(p3);
    let k3p = external_force(potential, q3, eps) + f3;

    let q4 = q + k3q * step;
    let p4 = p + k3p * step;
    let f4 = self_force_at(kernel, &qv, q4, t_next, panels)?;
    let k4q = velocity_of(p4);
    let k4p = external_force(potential, q4, eps) + f4;

    let q_next = q + (k1q + (k2q + k3q) * 2.0 + k4q) * (step / 6.0);
    let p_next = p + (k1p + (k2p + k3p) * 2.0 + k4p) * (step / 6.0);
    let f_next = self_force_at(kernel, &qv, q_next, t_next, panels)?;
    Ok((q_next, p_next, f_next))
}

/// Integrate the microscopic equations of motion
/// `qdot = p / sqrt(1 + p^2)`, `pdot = -eps grad V(eps q) + F(t)`
/// from stationary-prehistory initial data. `q0_macro` is the initial
/// position in macroscopic units; `t_final_macro` the macroscopic horizon.
/// Aborts with `Error::SpeedBound` (time reported macroscopically) the
/// moment a node speed reaches the kernel's `vbar`.
pub fn integrate_full(
    kernel: &MemoryKernel,
    potential: &PotentialModel,
    q0_macro: Vec3,
    v0: Vec3,
    eps: f64,
    t_final_macro: f64,
    step: f64,
) -> Result<FullTrajectory> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::invalid(format!("eps = {eps} must be positive")));
    }
    if !(step > 0.0) || !step.is_finite() || !(t_final_macro > 0.0) {
        return Err(Error::invalid(
            "need a positive step and a positive horizon",
        ));
    }
    if !q0_macro.norm().is_finite() {
        return Err(Error::invalid("non-finite initial position"));
    }
    if v0.norm() >= kernel.vbar {
        return Err(Error::invalid(format!(
            "initial speed {} already at the kernel speed bound {}",
            v0.norm(),
            kernel.vbar
        )));
    }
    // Ceil so the sampled range always covers t_final_macro; callers query
    // the trajectory right up to the requested end.
    let n_steps = ((t_final_macro / eps / step).ceil() as usize).max(1);
    if n_steps > 20_000_000 {
        return Err(Error::invalid(format!(
            "{n_steps} steps requested; widen the step or shorten the horizon"
        )));
    }

    let panels = default_panels(kernel);
    let q0 = q0_macro / eps;
    let gamma0 = 1.0 / (1.0 - v0.norm_sq()).sqrt();
    let mut q = q0;
    let mut p = v0 * gamma0;
    let mut history = TrajectoryHistory::new(0.0, step);
    let mut forces = Vec::with_capacity(n_steps + 1);

    // The force at t = 0 sees only the straight prehistory.
    let f0 = self_force_at(kernel, &|s| Ok(q0 + v0 * s), q0, 0.0, panels)?;
    let mut vdot = vdot_of(p, external_force(potential, q0, eps) + f0);
    history.push_node(q, v0, vdot);
    forces.push(f0);

    for i in 0..n_steps {
        let tn = i as f64 * step;
        let (q_next, p_next, f_next) = rk4_full_step(
            kernel, potential, &history, eps, panels, tn, step, q, p, vdot, forces[i],
        )?;
        q = q_next;
        p = p_next;
        let v = velocity_of(p);
        let speed = v.norm();
        let t_next_macro = (tn + step) * eps;
        if !speed.is_finite() || !q.norm().is_finite() {
            return Err(Error::domain(format!(
                "non-finite state at t = {t_next_macro}"
            )));
        }
        if speed >= kernel.vbar {
            return Err(Error::SpeedBound {
                t: t_next_macro,
                speed,
                bound: kernel.vbar,
            });
        }
        vdot = vdot_of(p, external_force(potential, q, eps) + f_next);
        history.push_node(q, v, vdot);
        forces.push(f_next);
    }
    Ok(FullTrajectory {
        eps,
        history,
        forces,
    })
}

/// Defect of the local expansion of the memory force,
/// `F(t) + m_f(v) vdot - a(v) vddot - b(v, vdot)`.
///
/// After the memory has settled (one depth `t1` past the grid start) this
/// is third order in the slowness of the trajectory; its size against the
/// retained terms measures how well the memory force is captured by the
/// three local coefficients. `coeffs` must describe the same charge the
/// kernel was built from. `vddot` comes from a central difference of the
/// stored velocity derivative, so `t` must sit `TAYLOR_FD_HALFWIDTH` inside
/// the settled range.
pub fn taylor_residual(
    kernel: &MemoryKernel,
    coeffs: &CoefficientSet,
    history: &TrajectoryHistory,
    t: f64,
) -> Result<Vec3> {
    let delta = TAYLOR_FD_HALFWIDTH;
    let lo = history.t_start() + kernel.t1 + delta;
    let hi = history.t_end() - delta;
    if !(t >= lo - 1e-9 && t <= hi + 1e-9) {
        return Err(Error::invalid(format!(
            "residual time {t} outside the settled window [{lo}, {hi}]"
        )));
    }
    let v = history.velocity(t)?;
    let vdot = history.velocity_deriv(t)?;
    let vddot =
        (history.velocity_deriv(t + delta)? - history.velocity_deriv(t - delta)?) / (2.0 * delta);
    let force = self_force(kernel, history, t)?;
    Ok(force + coeffs.m_f(v) * vdot - coeffs.coeff_a(v) * vddot - coeffs.coeff_b(v, vdot))
}

fn squared_form_factor(charge: &ChargeModel, k: f64) -> f64 {
    let v = charge.form_factor_cubic(k);
    v * v
}

/// `int_lo^{k_max} g(R) dR` for integrands that are smooth past the damping
/// peak: geometric panels while the scale doubles, then fixed-width panels.
fn tail_integral(k_max: f64, lo: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let gl = gl16();
    let mut acc = 0.0;
    let mut a = lo;
    while a < 1.0_f64.min(k_max) {
        let b = (a * 2.0).min(1.0).min(k_max);
        acc += gl.integrate(a, b, |r| g(r));
        a = b;
    }
    while a < k_max {
        let b = (a + 0.5).min(k_max);
        acc += gl.integrate(a, b, |r| g(r));
        a = b;
    }
    acc
}

/// The eta-damped time integral of the kernel along a uniformly moving
/// observer, before extrapolation. Reduces to one-dimensional damped
/// integrals of the squared form factor; the damping peak at `R ~ eta / c`
/// is handled by an arctangent substitution.
fn damped_integral(charge: &ChargeModel, speed: f64, eta: f64) -> f64 {
    let k_max = charge.k_max;
    let u_split = 10.0_f64.atan();
    if speed < 1e-9 {
        // Limit form: 8 pi eta int R^2 f / (eta^2 + R^2)^2 dR.
        let peak = gl32().integrate(0.0, u_split, |u| {
            squared_form_factor(charge, eta * u.tan()) * u.sin().powi(2)
        });
        let tail = tail_integral(k_max, 10.0 * eta, &|r: f64| {
            let den = eta * eta + r * r;
            eta * r * r * squared_form_factor(charge, r) / (den * den)
        });
        return 8.0 * PI * (peak + tail);
    }
    let g = |c: f64| -> f64 {
        let peak = gl32().integrate(0.0, u_split, |u| {
            squared_form_factor(charge, eta / c * u.tan()) / c
        });
        let tail = tail_integral(k_max, 10.0 * eta / c, &|r: f64| {
            eta * squared_form_factor(charge, r) / (eta * eta + c * c * r * r)
        });
        peak + tail
    };
    2.0 * PI / speed * (g(1.0 - speed) - g(1.0 + speed))
}

/// Neville extrapolation of `(xs, ys)` to `x = 0`; also returns the change
/// from the previous column as a convergence estimate.
fn extrapolate_to_zero(xs: &[f64; 4], ys: &[f64; 4]) -> (f64, f64) {
    let mut p = *ys;
    let mut prev = p[0];
    for r in 1..4 {
        for i in 0..(4 - r) {
            p[i] = (xs[i] * p[i + 1] - xs[i + r] * p[i]) / (xs[i] - xs[i + r]);
        }
        if r == 2 {
            prev = p[0];
        }
    }
    (p[0], (p[0] - prev).abs())
}

/// Damped time integral of the kernel seen by a uniformly moving observer,
/// extrapolated to zero damping:
///
/// `lim_{eta -> 0+} int_0^inf e^{-eta tau} K(tau, |v| tau) dtau
///    = gamma^2 e^2 / (4 pi)`.
///
/// Only the speed enters; the direction is irrelevant by isotropy. The
/// closed value on the right is what callers should compare against.
pub fn kernel_time_integral(charge: &ChargeModel, v: Vec3) -> Result<f64> {
    let speed = v.norm();
    if !speed.is_finite() || speed >= 1.0 {
        return Err(Error::domain(format!(
            "observer speed {speed} outside [0, 1)"
        )));
    }
    let etas = ETA_LADDER.map(|x| x * (1.0 - speed));
    let vals = etas.map(|eta| damped_integral(charge, speed, eta));
    let (value, spread) = extrapolate_to_zero(&etas, &vals);
    if !value.is_finite() || spread > 1e-5 * value.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NoConvergence(format!(
            "zero-damping extrapolation spread {spread:.3e} against value {value:.6e}"
        )));
    }
    Ok(value)
}
