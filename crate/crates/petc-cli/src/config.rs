//! Workbench configuration: a single TOML document describing the model, the
//! design knobs, and the simulation scenario.

use petc_core::etcsim::{DisturbanceSignal, InitialState};
use petc_core::matrix::Matrix;
use petc_core::sysmodel::{build_augmented, AugmentedSystem, ControllerModel, PlantModel};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub performance: PerformanceConfig,
    pub design: DesignConfig,
    pub simulation: SimulationConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub plant: PlantConfig,
    pub controller: ControllerConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceConfig {
    pub c_bar: Vec<Vec<f64>>,
    pub d_bar: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub h: f64,
    pub rho: f64,
    pub gamma: f64,
    pub mu: f64,
    pub theta: Vec<f64>,
    /// Geometric search range for `ϱ`.
    pub varrho_range: [f64; 2],
    #[serde(default = "default_varrho_steps")]
    pub varrho_steps: usize,
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Target set level `c`; derived from `eta_min` when absent.
    pub a_level: Option<f64>,
    /// Threshold floor; derived from `a_level` when absent.
    pub eta_min: Option<f64>,
}

fn default_varrho_steps() -> usize {
    64
}
fn default_grid_n() -> usize {
    64
}
fn default_max_iters() -> usize {
    600
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub duration: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    pub initial_xi_p: Vec<f64>,
    pub initial_xi_c: Vec<f64>,
    pub disturbance: DisturbanceConfig,
}

fn default_substeps() -> usize {
    petc_core::etcsim::DEFAULT_SUBSTEPS
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceConfig {
    Zero,
    WindowedSine {
        amplitude: f64,
        frequency_hz: f64,
        window: [f64; 2],
    },
    PiecewiseConstant {
        t0: f64,
        dt: f64,
        values: Vec<Vec<f64>>,
    },
}

impl WorkbenchConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: WorkbenchConfig = toml::from_str(text).map_err(|e| format!("config: {e}"))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "config: unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            ));
        }
        if cfg.design.a_level.is_none() && cfg.design.eta_min.is_none() {
            return Err("config: at least one of design.a_level / design.eta_min required".into());
        }
        Ok(cfg)
    }

    /// Assemble the augmented closed-loop model, checking dimensions.
    pub fn build_model(&self) -> Result<AugmentedSystem, String> {
        let m = |rows: &[Vec<f64>], what: &str| {
            Matrix::from_rows(rows).map_err(|e| format!("{what}: {e:?}"))
        };
        let plant = PlantModel {
            a: m(&self.model.plant.a, "plant.a")?,
            b: m(&self.model.plant.b, "plant.b")?,
            e: m(&self.model.plant.e, "plant.e")?,
            c: m(&self.model.plant.c, "plant.c")?,
        };
        let ctrl = ControllerModel {
            a: m(&self.model.controller.a, "controller.a")?,
            b: m(&self.model.controller.b, "controller.b")?,
            c: m(&self.model.controller.c, "controller.c")?,
            d: m(&self.model.controller.d, "controller.d")?,
        };
        let c_bar = m(&self.performance.c_bar, "performance.c_bar")?;
        let d_bar = m(&self.performance.d_bar, "performance.d_bar")?;
        build_augmented(&plant, &ctrl, &c_bar, &d_bar).map_err(|e| format!("model: {e:?}"))
    }

    pub fn disturbance(&self) -> DisturbanceSignal {
        match &self.simulation.disturbance {
            DisturbanceConfig::Zero => DisturbanceSignal::Zero,
            DisturbanceConfig::WindowedSine {
                amplitude,
                frequency_hz,
                window,
            } => DisturbanceSignal::WindowedSine {
                amplitude: *amplitude,
                frequency_hz: *frequency_hz,
                window: (window[0], window[1]),
            },
            DisturbanceConfig::PiecewiseConstant { t0, dt, values } => {
                DisturbanceSignal::PiecewiseConstant {
                    t0: *t0,
                    dt: *dt,
                    values: values.clone(),
                }
            }
        }
    }

    /// Initial state with hold values consistent with the initial plant and
    /// controller states.
    pub fn initial_state(&self, aug: &AugmentedSystem) -> Result<InitialState, String> {
        if self.simulation.initial_xi_p.len() != aug.dims.n_p
            || self.simulation.initial_xi_c.len() != aug.dims.n_c
        {
            return Err(format!(
                "config: initial state dims ({}, {}) do not match model ({}, {})",
                self.simulation.initial_xi_p.len(),
                self.simulation.initial_xi_c.len(),
                aug.dims.n_p,
                aug.dims.n_c
            ));
        }
        Ok(InitialState::hold_consistent(
            aug,
            self.simulation.initial_xi_p.clone(),
            self.simulation.initial_xi_c.clone(),
        ))
    }
}
