//! Scenario files: JSON documents describing plant, reference model, gains,
//! stacks and simulation settings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use mrac_core::controller::{ProjectionSpec, DEFAULT_K_PHI};
use mrac_core::identifier::{IdentifierGains, DEFAULT_K_M, DEFAULT_K_THETA};
use mrac_core::matrixlab::Matrix;
use mrac_core::memory::RecordingPolicy;
use mrac_core::simengine::{InitialConditions, SimConfig, SimMode, StackSettings};
use mrac_core::system::{PlantModel, ReferenceModel, ReferenceSignal};

use crate::error::CliError;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub plant: PlantSection,
    pub reference: ReferenceSection,
    #[serde(default)]
    pub gains: GainsSection,
    pub projection: ProjectionSection,
    #[serde(default)]
    pub stacks: StacksSection,
    pub sim: SimSection,
    #[serde(default = "default_mode")]
    pub mode: SimMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(rename = "A_m")]
    pub a_m: Rows,
    #[serde(rename = "B_m")]
    pub b_m: Rows,
    pub r: ReferenceSignal,
}

/// Missing gains fall back to the library defaults; missing matrices to
/// identities of the right size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_phi: Option<f64>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Rows>,
    #[serde(rename = "Gamma_phi", default, skip_serializing_if = "Option::is_none")]
    pub gamma_phi: Option<Rows>,
    #[serde(rename = "Gamma_x", default, skip_serializing_if = "Option::is_none")]
    pub gamma_x: Option<Rows>,
    #[serde(rename = "Gamma_r", default, skip_serializing_if = "Option::is_none")]
    pub gamma_r: Option<Rows>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionSection {
    pub radius: f64,
    pub band: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StacksSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_store: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dwell: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    pub initial_conditions: InitialSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub x0: Vec<f64>,
    /// Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xm0: Option<Vec<f64>>,
    /// Defaults to `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_hat0: Option<Vec<f64>>,
    /// Defaults to zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_hat0: Option<Vec<f64>>,
    pub phi0: Vec<f64>,
}

fn default_mode() -> SimMode {
    SimMode::Proposed
}

fn default_dt() -> f64 {
    1e-3
}

fn default_t_end() -> f64 {
    10.0
}

fn config_err(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn matrix(path: &str, rows: &Rows, shape: Option<(usize, usize)>) -> Result<Matrix, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(config_err(path, "matrix must be non-empty"));
    }
    let cols = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(config_err(path, format!("row {i} has {} entries, expected {cols}", rows[i].len())));
    }
    if let Some((r, c)) = shape {
        if (rows.len(), cols) != (r, c) {
            return Err(config_err(path, format!("expected {r}x{c}, got {}x{cols}", rows.len())));
        }
    }
    Matrix::from_rows(rows).map_err(|e| config_err(path, e.to_string()))
}

fn square_or_identity(path: &str, rows: &Option<Rows>, size: usize) -> Result<Matrix, CliError> {
    match rows {
        Some(r) => matrix(path, r, Some((size, size))),
        None => Ok(Matrix::identity(size)),
    }
}

fn vector(path: &str, v: Option<&Vec<f64>>, len: usize, default: Vec<f64>) -> Result<Vec<f64>, CliError> {
    match v {
        Some(v) if v.len() != len => Err(config_err(path, format!("expected length {len}, got {}", v.len()))),
        Some(v) => Ok(v.clone()),
        None => Ok(default),
    }
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err("scenario", e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Validates dimensions and builds the simulation config. Errors carry
    /// the dotted path of the offending field.
    pub fn to_sim_config(&self) -> Result<SimConfig, CliError> {
        let a = matrix("plant.A", &self.plant.a, None)?;
        let n = a.rows();
        if !a.is_square() {
            return Err(config_err("plant.A", format!("must be square, got {}x{}", n, a.cols())));
        }
        let b = matrix("plant.B", &self.plant.b, None)?;
        if b.rows() != n {
            return Err(config_err("plant.B", format!("expected {n} rows, got {}", b.rows())));
        }
        let d = b.cols();
        let plant = PlantModel::new(a, b).map_err(|e| config_err("plant.B", e.to_string()))?;

        let a_m = matrix("reference.A_m", &self.reference.a_m, Some((n, n)))?;
        let b_m = matrix("reference.B_m", &self.reference.b_m, Some((n, d)))?;
        if self.reference.r.dim() != d {
            return Err(config_err("reference.r", format!("signal has dimension {}, expected {d}", self.reference.r.dim())));
        }
        self.reference.r.validate().map_err(|e| config_err("reference.r", e.to_string()))?;
        let reference = ReferenceModel::new(a_m, b_m, self.reference.r.clone()).map_err(|e| config_err("reference.A_m", e.to_string()))?;

        let g = &self.gains;
        let p_len = n * (n + d);
        let q_len = d * (n + d);
        let identifier = IdentifierGains {
            k_theta: g.k_theta.unwrap_or(DEFAULT_K_THETA),
            k_m: g.k_m.unwrap_or(DEFAULT_K_M),
        };
        let ic = &self.sim.initial_conditions;
        let x0 = vector("sim.initial_conditions.x0", Some(&ic.x0), n, vec![])?;
        let initial = InitialConditions {
            xm0: vector("sim.initial_conditions.xm0", ic.xm0.as_ref(), n, vec![0.0; n])?,
            x_hat0: vector("sim.initial_conditions.x_hat0", ic.x_hat0.as_ref(), n, x0.clone())?,
            theta_hat0: vector("sim.initial_conditions.theta_hat0", ic.theta_hat0.as_ref(), p_len, vec![0.0; p_len])?,
            phi0: vector("sim.initial_conditions.phi0", Some(&ic.phi0), q_len, vec![])?,
            x0,
        };

        let mut policy = RecordingPolicy::with_dt(self.sim.dt);
        policy.eps_store = self.stacks.eps_store.unwrap_or(policy.eps_store);
        policy.min_dwell = self.stacks.min_dwell.unwrap_or(policy.min_dwell);
        policy.floor = self.stacks.floor.unwrap_or(policy.floor);
        if let Some(c) = self.stacks.capacity {
            if c < n + d {
                return Err(config_err("stacks.capacity", format!("must be at least {}", n + d)));
            }
        }

        let cfg = SimConfig {
            plant,
            reference,
            identifier,
            k_phi: g.k_phi.unwrap_or(DEFAULT_K_PHI),
            gamma_phi: square_or_identity("gains.Gamma_phi", &g.gamma_phi, q_len)?,
            q: square_or_identity("gains.Q", &g.q, n)?,
            gamma_x: square_or_identity("gains.Gamma_x", &g.gamma_x, n)?,
            gamma_r: square_or_identity("gains.Gamma_r", &g.gamma_r, d)?,
            projection: ProjectionSpec {
                radius: self.projection.radius,
                boundary_band: self.projection.band,
            },
            stacks: StackSettings {
                policy,
                capacity: self.stacks.capacity,
            },
            dt: self.sim.dt,
            t0: 0.0,
            t_end: self.sim.t_end,
            initial,
            mode: self.mode,
        };
        cfg.validate().map_err(|e| config_err(section_of(&e.to_string()), e.to_string()))?;
        Ok(cfg)
    }
}

/// Best-effort mapping from a kernel validation message to a section.
fn section_of(message: &str) -> &'static str {
    let table = [
        ("Gamma_phi", "gains.Gamma_phi"),
        ("Gamma_x", "gains.Gamma_x"),
        ("Gamma_r", "gains.Gamma_r"),
        ("Q ", "gains.Q"),
        ("k_theta", "gains"),
        ("projection", "projection"),
        ("phi0", "sim.initial_conditions.phi0"),
        ("stack policy", "stacks"),
        ("dt", "sim.dt"),
        ("t_end", "sim.t_end"),
    ];
    table.iter().find(|(k, _)| message.contains(k)).map_or("scenario", |(_, v)| v)
}
