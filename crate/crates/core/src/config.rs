//! Run configuration shared between the library defaults and the CLI.
//!
//! Configs are plain TOML with `[model]`, `[grid]`, `[solver]`, `[mc]` and
//! `[output]` sections; every field outside `[model]` has a default.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid1D, Grid2D};
use crate::model::ModelParams;

/// `[model]` section: market and loan parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "T")]
    pub maturity: f64,
}

/// `[grid]` section: discretization sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub nx: usize,
    pub npi: usize,
    pub nt: usize,
    /// Lower price bound; 0 means "derive from K".
    pub xmin: f64,
    /// Upper price bound; 0 means "derive from the contact bound".
    pub xmax: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            nx: 200,
            npi: 101,
            nt: 200,
            xmin: 0.0,
            xmax: 0.0,
        }
    }
}

/// `[solver]` section: regularization, penalty, and tolerances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    /// Decreasing regularization sequence for the refinement run.
    pub eps: Vec<f64>,
    /// Penalty coefficient; 0 means "derive as 1e8 * (gamma - r)".
    pub rho: f64,
    /// Contact tolerance relative to K.
    pub tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            eps: vec![1e-2, 1e-3, 1e-4],
            rho: 0.0,
            tol: 1e-6,
        }
    }
}

/// `[mc]` section: Monte Carlo and lattice oracle sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McSection {
    pub paths: usize,
    pub dates: usize,
    pub seed: u64,
    pub basis_x_degree: usize,
    pub basis_pi_degree: usize,
    /// Evaluation point; 0 means "use K".
    pub x0: f64,
    pub pi0: f64,
    pub lattice_time: usize,
    pub lattice_space: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            paths: 20_000,
            dates: 50,
            seed: 42,
            basis_x_degree: 3,
            basis_pi_degree: 2,
            x0: 0.0,
            pi0: 0.5,
            lattice_time: 4000,
            lattice_space: 1500,
        }
    }
}

/// `[output]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".to_string(),
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Domain(format!("config parse error: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Validated model parameters from the `[model]` section.
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(
            self.model.a,
            self.model.b,
            self.model.gamma,
            self.model.r,
            self.model.k,
            self.model.maturity,
        )
    }

    fn x_range(&self, params: &ModelParams) -> (f64, f64) {
        let xmin = if self.grid.xmin > 0.0 {
            self.grid.xmin
        } else {
            params.k / 50.0
        };
        let xmax = if self.grid.xmax > 0.0 {
            self.grid.xmax
        } else {
            4.0 * params.contact_upper_bound()
        };
        (xmin, xmax)
    }

    pub fn grid_1d(&self, params: &ModelParams) -> Result<Grid1D> {
        let (xmin, xmax) = self.x_range(params);
        Grid1D::new(
            xmin,
            xmax,
            self.grid.nx,
            params.maturity,
            self.grid.nt,
            params.k,
        )
    }

    pub fn grid_2d(&self, params: &ModelParams) -> Result<Grid2D> {
        let (xmin, xmax) = self.x_range(params);
        Grid2D::new(
            xmin,
            xmax,
            self.grid.nx,
            self.grid.npi,
            params.maturity,
            self.grid.nt,
            params.k,
        )
    }

    /// Penalty coefficient, deriving the default from the rate spread.
    pub fn rho(&self, params: &ModelParams) -> f64 {
        if self.solver.rho > 0.0 {
            self.solver.rho
        } else {
            1e8 * (params.gamma - params.r)
        }
    }

    /// Applies a `section.key=value` override to the serialized form.
    pub fn apply_override(&mut self, dotted: &str, value: &str) -> Result<()> {
        let (path, _) = (dotted, value);
        let mut doc: toml::Value = toml::Value::try_from(&*self)
            .map_err(|e| Error::Domain(format!("config serialize error: {e}")))?;
        let parts: Vec<&str> = path.split('.').collect();
        let (last, sections) = parts
            .split_last()
            .ok_or_else(|| Error::Domain(format!("empty override path {dotted}")))?;
        let mut node = &mut doc;
        for part in sections {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*part))
                .ok_or_else(|| {
                    Error::Domain(format!("unknown config section {part} in {dotted}"))
                })?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Domain(format!("override path {dotted} is not a table")))?;
        let parsed: toml::Value = value
            .parse::<i64>()
            .map(toml::Value::from)
            .or_else(|_| value.parse::<f64>().map(toml::Value::from))
            .or_else(|_| value.parse::<bool>().map(toml::Value::from))
            .unwrap_or_else(|_| toml::Value::from(value.to_string()));
        // Keep float fields floating even when the override looks integral.
        let coerced = match (table.get(*last), &parsed) {
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => toml::Value::from(*i as f64),
            (Some(toml::Value::Integer(_)), toml::Value::Float(f)) => toml::Value::from(*f as i64),
            _ => parsed,
        };
        table.insert(last.to_string(), coerced);
        *self = doc
            .try_into()
            .map_err(|e| Error::Domain(format!("override {dotted}={value} invalid: {e}")))?;
        Ok(())
    }
}
