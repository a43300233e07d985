//! Dynamics of an extended relativistic charge coupled to a scalar wave
//! field, in the adiabatic regime where the external potential varies on a
//! scale `1/eps` much larger than the charge diameter.
//!
//! The crate is organized bottom-up:
//!
//! * [`charge`] - charge distributions and their radial form factors,
//! * [`soliton`] - the dressed travelling-charge solutions (energy,
//!   momentum, co-moving field),
//! * [`kinematics`] - velocity-dependent mass and radiation-reaction
//!   coefficient tensors, external potentials,
//! * [`effective`] - the conservative effective particle dynamics,
//! * [`lorentz_dirac`] - the third-order comparison dynamics, its
//!   center-manifold reduction and Lyapunov bookkeeping,
//! * [`fullfield`] - the microscopic memory-kernel dynamics with the wave
//!   field eliminated exactly,
//! * [`fields`] - retarded-time geometry, far-field limits, and radiated
//!   power.
//!
//! All formulas are in units with wave speed 1; velocities satisfy `|v| < 1`.

pub mod charge;
pub mod effective;
pub mod error;
pub mod fields;
pub mod fullfield;
pub mod kinematics;
pub mod linalg;
pub mod lorentz_dirac;
pub mod path;
pub mod quad;
pub mod soliton;

pub use error::{Error, Result};
pub use linalg::{Mat3, Vec3};
