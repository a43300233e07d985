//! Run configuration: a strict JSON schema. Unknown keys are rejected so a
//! sweep can always be reproduced from its config file alone.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use solwave::charge::{build_charge, ChargeKind, ChargeModel};
use solwave::kinematics::PotentialModel;
use solwave::Vec3;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub charge: ChargeConfig,
    pub potential: PotentialConfig,
    /// Scale ratios for the sweep, strictly decreasing.
    pub eps_list: Vec<f64>,
    /// Macroscopic initial position of the charge center.
    pub initial_position: [f64; 3],
    pub initial_velocity: [f64; 3],
    /// Length of the comparison window in macroscopic time.
    pub horizon: f64,
    /// Fast-time step of the full integrator.
    pub micro_step: f64,
    /// Macroscopic step of the effective and comparison integrators.
    pub effective_step: f64,
    /// Speed bound the memory kernel is tabulated for; full runs abort if
    /// the trajectory reaches it.
    pub kernel_speed_bound: f64,
    /// Source resolution of the finite-eps field quadrature.
    pub field_cells_per_radius: usize,
    /// Polar node count of the radiated-flux sphere quadrature.
    pub flux_nodes: usize,
    /// Space-time query points for the `fields` subcommand.
    #[serde(default)]
    pub field_points: Vec<FieldPoint>,
    pub output_dir: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ChargeConfig {
    pub kind: ChargeKindConfig,
    pub radius: f64,
    pub total_charge: f64,
    /// Form-factor table resolution.
    pub resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChargeKindConfig {
    Bump,
    Gaussian,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialConfig {
    Zero,
    Harmonic { stiffness: f64 },
    GaussianWell { depth: f64, width: f64 },
    DoubleWell { height: f64, separation: f64 },
    ConfiningQuartic { stiffness: f64 },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FieldPoint {
    pub x: [f64; 3],
    pub t: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.eps_list.windows(2) {
            if pair[1] >= pair[0] {
                bail!("eps list must be strictly decreasing, got {:?}", self.eps_list);
            }
        }
        for &eps in &self.eps_list {
            if !(eps > 0.0 && eps.is_finite()) {
                bail!("eps {eps} must be positive and finite");
            }
        }
        let v0 = self.initial_velocity_vec();
        if v0.norm() >= 1.0 {
            bail!("initial speed {} must be below 1", v0.norm());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("horizon {} must be positive", self.horizon);
        }
        if !(self.micro_step > 0.0) || !(self.effective_step > 0.0) {
            bail!("integrator steps must be positive");
        }
        if !(v0.norm() < self.kernel_speed_bound && self.kernel_speed_bound < 1.0) {
            bail!(
                "kernel speed bound {} must lie in (initial speed {}, 1)",
                self.kernel_speed_bound,
                v0.norm()
            );
        }
        if self.field_cells_per_radius < 4 {
            bail!(
                "field_cells_per_radius {} cannot resolve the source; need at least 4",
                self.field_cells_per_radius
            );
        }
        if self.flux_nodes < 4 {
            bail!("flux_nodes {} is too coarse; need at least 4", self.flux_nodes);
        }
        Ok(())
    }

    pub fn initial_position_vec(&self) -> Vec3 {
        Vec3::new(
            self.initial_position[0],
            self.initial_position[1],
            self.initial_position[2],
        )
    }

    pub fn initial_velocity_vec(&self) -> Vec3 {
        Vec3::new(
            self.initial_velocity[0],
            self.initial_velocity[1],
            self.initial_velocity[2],
        )
    }

    pub fn build_charge_model(&self) -> Result<ChargeModel> {
        let kind = match self.charge.kind {
            ChargeKindConfig::Bump => ChargeKind::CompactBump,
            ChargeKindConfig::Gaussian => ChargeKind::Gaussian,
        };
        build_charge(
            kind,
            self.charge.radius,
            self.charge.total_charge,
            self.charge.resolution,
        )
        .context("building the charge model")
    }

    pub fn potential_model(&self) -> PotentialModel {
        match self.potential {
            PotentialConfig::Zero => PotentialModel::Zero,
            PotentialConfig::Harmonic { stiffness } => PotentialModel::Harmonic { stiffness },
            PotentialConfig::GaussianWell { depth, width } => {
                PotentialModel::GaussianWell { depth, width }
            }
            PotentialConfig::DoubleWell { height, separation } => {
                PotentialModel::DoubleWell { height, separation }
            }
            PotentialConfig::ConfiningQuartic { stiffness } => {
                PotentialModel::ConfiningQuartic { stiffness }
            }
        }
    }

    /// Canonical serialization used for the manifest hash: the effective
    /// config after command-line overrides, not the raw file.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
