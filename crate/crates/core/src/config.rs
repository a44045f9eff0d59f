//! Scenario files.
//!
//! A scenario is a TOML document. Every key is optional; missing keys take the
//! value of the `dirichlet-paper` preset, or of the preset named by a top-level
//! `preset = "..."` key. Unknown keys are rejected.
//!
//! ```toml
//! preset = "neumann-paper"
//! modes = 10
//! disturbance = false
//!
//! [optimizer]
//! max_iters = 50
//! ```

use crate::actuation::{DisturbanceModel, ForcingHistory};
use crate::exec::Exec;
use crate::fleet::{FleetDynamics, GuidanceBounds};
use crate::grid::TimeGrid;
use crate::riccati::{LqrWeights, RiccatiOptions};
use crate::spectral::{
    assemble_operator, project_field, BasisSet, BoundaryCondition, CoefficientVector,
};
use crate::sweep::{ControlProblem, OptimizerConfig, QuadraticMobility};
use crate::{Error, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;

pub const PRESETS: [&str; 2] = ["dirichlet-paper", "neumann-paper"];

/// Named initial fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialField {
    /// `320 (x − x²)(y − y²)`, peak 20 at the centre.
    Bump,
    /// `1` everywhere.
    Constant,
    Zero,
}

impl InitialField {
    pub fn value(self, x: f64, y: f64) -> f64 {
        match self {
            InitialField::Bump => 320.0 * (x - x * x) * (y - y * y),
            InitialField::Constant => 1.0,
            InitialField::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSpec {
    pub position: [f64; 2],
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    /// Per-component guidance box.
    pub lower: f64,
    pub upper: f64,
    /// Bound on each actuator's guidance norm.
    pub p_max: f64,
    /// Bound on each actuator's guidance rate norm.
    pub a_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Raster points per axis for field snapshots.
    pub raster: usize,
    pub snapshot_times: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub boundary: BoundaryCondition,
    /// Basis functions per axis; the state dimension is its square.
    pub modes: usize,
    pub t_final: f64,
    pub grid_steps: usize,
    pub diffusivity: f64,
    pub velocity: [f64; 2],
    pub initial_field: InitialField,
    /// Scalar multiples of the identity for the state, terminal and control weights.
    pub state_weight: f64,
    pub terminal_weight: f64,
    pub control_weight: f64,
    pub actuators: Vec<ActuatorSpec>,
    pub bounds: BoundsSpec,
    pub mobility: QuadraticMobility,
    /// Whether the moving disturbance acts during strategy simulations.
    pub disturbance: bool,
    pub disturbance_model: DisturbanceModel,
    /// Proportional gain of the semi-naive and naive strategies.
    pub local_gain: f64,
    pub optimizer: OptimizerConfig,
    pub output: OutputSpec,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::dirichlet_paper()
    }
}

impl ScenarioConfig {
    pub fn dirichlet_paper() -> Self {
        let actuators = [[0.1, 0.1], [0.125, 0.1], [0.125, 0.125], [0.1, 0.125]]
            .into_iter()
            .map(|position| ActuatorSpec {
                position,
                sigma: 0.05,
            })
            .collect();
        Self {
            boundary: BoundaryCondition::Dirichlet,
            modes: 13,
            t_final: 1.0,
            grid_steps: 1000,
            diffusivity: 0.05,
            velocity: [0.1, -0.1],
            initial_field: InitialField::Bump,
            state_weight: 1.0,
            terminal_weight: 1.0,
            control_weight: 0.1,
            actuators,
            bounds: BoundsSpec {
                lower: -100.0,
                upper: 100.0,
                p_max: 100.0,
                a_max: 100.0,
            },
            mobility: QuadraticMobility {
                state: 0.0,
                guidance: 0.1,
                terminal: 0.0,
            },
            disturbance: true,
            disturbance_model: DisturbanceModel::default(),
            local_gain: 0.1,
            optimizer: OptimizerConfig::default(),
            output: OutputSpec {
                raster: 101,
                snapshot_times: [0.05, 0.2, 1.0],
            },
        }
    }

    pub fn neumann_paper() -> Self {
        Self {
            boundary: BoundaryCondition::Neumann,
            ..Self::dirichlet_paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dirichlet-paper" => Ok(Self::dirichlet_paper()),
            "neumann-paper" => Ok(Self::neumann_paper()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Parse a scenario document, fill defaults from the selected preset and
    /// validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let base = match table.remove("preset") {
            None => Self::dirichlet_paper(),
            Some(toml::Value::String(name)) => Self::preset(&name)?,
            Some(_) => return Err(Error::Config("`preset` must be a string".into())),
        };
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, table);
        // Re-parse the merged document so errors keep toml's messages.
        let doc = toml::to_string(&merged).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Self =
            toml::from_str(&doc).map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable as TOML")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(msg));
        if self.modes == 0 {
            return fail("modes must be at least 1".into());
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return fail(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.grid_steps == 0 {
            return fail("grid_steps must be at least 1".into());
        }
        if !(self.diffusivity > 0.0) {
            return fail(format!(
                "diffusivity must be positive, got {}",
                self.diffusivity
            ));
        }
        if !self.velocity.iter().all(|v| v.is_finite()) {
            return fail("velocity must be finite".into());
        }
        if !(self.state_weight >= 0.0 && self.terminal_weight >= 0.0) {
            return fail("state and terminal weights must be nonnegative".into());
        }
        if !(self.control_weight > 0.0) {
            return fail(format!(
                "control_weight must be positive, got {}",
                self.control_weight
            ));
        }
        if self.actuators.is_empty() {
            return fail("at least one actuator is required".into());
        }
        for (i, a) in self.actuators.iter().enumerate() {
            if !(a.sigma > 0.0 && a.sigma.is_finite()) {
                return fail(format!(
                    "actuator {i}: kernel width sigma must be positive, got {}",
                    a.sigma
                ));
            }
            if !a.position.iter().all(|c| (0.0..=1.0).contains(c)) {
                return fail(format!(
                    "actuator {i}: initial position {:?} lies outside the unit square",
                    a.position
                ));
            }
        }
        self.guidance_bounds()
            .map_err(|e| Error::Validation(e.to_string()))?;
        self.mobility
            .check()
            .map_err(|e| Error::Validation(e.to_string()))?;
        self.optimizer
            .check()
            .map_err(|e| Error::Validation(e.to_string()))?;
        let d = &self.disturbance_model;
        if !(d.sigma > 0.0) {
            return fail(format!(
                "disturbance kernel width must be positive, got {}",
                d.sigma
            ));
        }
        if !(d.amplitude.is_finite() && d.path.radius >= 0.0 && d.path.frequency.is_finite()) {
            return fail(
                "disturbance amplitude, radius and frequency must be finite, radius nonnegative"
                    .into(),
            );
        }
        if !(self.local_gain >= 0.0) {
            return fail(format!(
                "local_gain must be nonnegative, got {}",
                self.local_gain
            ));
        }
        if self.output.raster < 2 {
            return fail("output raster needs at least 2 points per axis".into());
        }
        if !self
            .output
            .snapshot_times
            .iter()
            .all(|t| (0.0..=self.t_final).contains(t))
        {
            return fail("snapshot times must lie in [0, t_final]".into());
        }
        Ok(())
    }

    pub fn guidance_bounds(&self) -> Result<GuidanceBounds> {
        let b = &self.bounds;
        GuidanceBounds::uniform(2 * self.actuators.len(), b.lower, b.upper, b.p_max, b.a_max)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_final, self.grid_steps)
    }

    pub fn initial_positions(&self) -> Vec<[f64; 2]> {
        self.actuators.iter().map(|a| a.position).collect()
    }

    pub fn initial_state(&self, basis: &BasisSet) -> CoefficientVector {
        let f = self.initial_field;
        project_field(move |x, y| f.value(x, y), basis)
    }

    /// Assemble the guidance problem at `modes` basis functions per axis.
    pub fn problem_with_modes(&self, modes: usize, exec: Exec) -> Result<ControlProblem> {
        let basis = BasisSet::new(self.boundary, modes)?;
        let operator = assemble_operator(&basis, self.diffusivity, self.velocity)?;
        let n = basis.dim();
        let m = self.actuators.len();
        let weights = LqrWeights::new(
            DMatrix::identity(n, n) * self.state_weight,
            DMatrix::identity(n, n) * self.terminal_weight,
            DMatrix::identity(m, m) * self.control_weight,
        )?;
        let problem = ControlProblem {
            operator,
            fleet: FleetDynamics::single_integrators(&self.initial_positions())?,
            sigmas: self.actuators.iter().map(|a| a.sigma).collect(),
            weights,
            mobility: Arc::new(self.mobility),
            bounds: self.guidance_bounds()?,
            z0: self.initial_state(&basis),
            grid: self.grid()?,
            riccati: RiccatiOptions::default(),
            exec,
            basis,
        };
        problem.check()?;
        Ok(problem)
    }

    pub fn problem(&self, exec: Exec) -> Result<ControlProblem> {
        self.problem_with_modes(self.modes, exec)
    }

    /// Disturbance forcing for strategy simulations, or `None` when disabled.
    pub fn forcing(&self, basis: &BasisSet, exec: Exec) -> Result<Option<ForcingHistory>> {
        if !self.disturbance {
            return Ok(None);
        }
        Ok(Some(self.disturbance_model.history(
            basis,
            &self.grid()?,
            exec,
        )?))
    }
}

/// Overlay `patch` onto `base`, recursing into tables present in both.
fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (key, value) in patch {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ScenarioConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_config(cfg: &ScenarioConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_toml_string()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_dirichlet_preset() {
        assert_eq!(
            ScenarioConfig::from_toml_str("").unwrap(),
            ScenarioConfig::dirichlet_paper()
        );
    }

    #[test]
    fn preset_key_selects_base() {
        let cfg = ScenarioConfig::from_toml_str("preset = \"neumann-paper\"\nmodes = 6").unwrap();
        assert_eq!(cfg.boundary, BoundaryCondition::Neumann);
        assert_eq!(cfg.modes, 6);
        assert_eq!(cfg.grid_steps, 1000);
    }

    #[test]
    fn nested_override_keeps_siblings() {
        let cfg = ScenarioConfig::from_toml_str("[optimizer]\nmax_iters = 7").unwrap();
        assert_eq!(cfg.optimizer.max_iters, 7);
        assert_eq!(cfg.optimizer.shrink, 0.5);
    }

    #[test]
    fn negative_sigma_rejected() {
        let doc = "actuators = [{ position = [0.1, 0.1], sigma = -0.05 }]";
        let err = ScenarioConfig::from_toml_str(doc).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("sigma")),
            "{err}"
        );
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let err = ScenarioConfig::from_toml_str("modes = 4\nbogus = 1").unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.contains("bogus")),
            "{err}"
        );
        let err = ScenarioConfig::from_toml_str("modes = = 4").unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.contains("line 1")),
            "{err}"
        );
    }

    #[test]
    fn round_trip_and_hash() {
        let mut cfg = ScenarioConfig::neumann_paper();
        cfg.velocity = [0.1 / 3.0, -1e-7];
        cfg.optimizer.max_iters = 12;
        let back = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), ScenarioConfig::neumann_paper().hash());
    }
}
