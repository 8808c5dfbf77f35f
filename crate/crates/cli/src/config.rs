//! Experiment configuration: JSON text in, validated plan out.
//!
//! Parsing is strict (unknown keys are rejected) and every rejection carries
//! the dotted path of the offending field.

use std::path::PathBuf;

use sdde_core::model::ModelParams;
use sdde_core::path_engine::{check_bem_preconditions, GridSpec};
use sdde_core::pricing::{BarrierOptionSpec, BondSpec};
use sdde_core::truncation::{default_mu, PowerMu, PowerPi, TruncationRule};
use sdde_core::{InitialSegment, Model, Scheme, VolatilityFunction};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    #[serde(default)]
    pub volatility: VolatilityBlock,
    pub initial: InitialBlock,
    pub truncation: TruncationBlock,
    pub grid: GridBlock,
    pub run: RunBlock,
    #[serde(default)]
    pub pricing: Option<PricingBlock>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub alpha_m1: f64,
    pub alpha_0: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
    pub alpha_3: f64,
    pub rho: f64,
    pub theta: f64,
    pub tau: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolatilityBlock {
    #[default]
    Sigmoid,
    Constant {
        value: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    /// Constant initial segment on `[-tau, 0]`.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationBlock {
    /// `pi(delta) = delta^(-pi_exponent)`.
    pub pi_exponent: f64,
    #[serde(default)]
    pub mu: MuBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuBlock {
    /// `mu(u) = (sum of |alpha|) u^2`.
    #[default]
    Quadratic,
    Power {
        scale: f64,
        exponent: f64,
    },
}

/// Step sizes are given as steps per delay, `delta = tau / m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub horizon: f64,
    /// Used by `simulate` and `moments`.
    #[serde(default)]
    pub m: Option<usize>,
    /// Coarse rungs for `converge`.
    #[serde(default)]
    pub ladder: Vec<usize>,
    #[serde(default)]
    pub reference_m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub n_paths: u64,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default = "default_error_order")]
    pub error_order: f64,
    #[serde(default = "default_moment_orders")]
    pub moment_orders: Vec<f64>,
    #[serde(default)]
    pub inverse_moment_orders: Vec<f64>,
    /// Largest tolerated fraction of paths lost to non-finite states.
    #[serde(default)]
    pub max_nonfinite_fraction: f64,
    /// Worker threads; the rayon default when absent.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_scheme() -> String {
    "tem".into()
}

fn default_error_order() -> f64 {
    2.0
}

fn default_moment_orders() -> Vec<f64> {
    vec![2.0, 4.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingBlock {
    #[serde(default)]
    pub bond: Option<BondBlock>,
    #[serde(default)]
    pub barrier: Option<BarrierBlock>,
    /// Steps per delay at which each instrument is priced, all driven by the
    /// noise of the finest rung.
    pub ladder: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BondBlock {
    pub maturity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierBlock {
    pub expiry: f64,
    pub strike: f64,
    /// `null` disables the knock-out.
    #[serde(default)]
    pub barrier: Option<f64>,
}

/// Largest number of steps per delay and of paths accepted from a config.
pub const MAX_M: usize = 1 << 24;
pub const MAX_STEPS: usize = 1 << 26;
pub const MAX_PATHS: u64 = 1 << 32;

fn invalid(path: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })
    }

    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams {
            alpha_m1: m.alpha_m1,
            alpha_0: m.alpha_0,
            alpha_1: m.alpha_1,
            alpha_2: m.alpha_2,
            alpha_3: m.alpha_3,
            rho: m.rho,
            theta: m.theta,
            tau: m.tau,
            lambda: m.lambda,
        }
    }

    /// Builds the model, checking every block that all commands share.
    pub fn build_model(&self) -> Result<Model, CliError> {
        let params = self.params();
        let report = params.validate();
        if !report.is_valid() {
            return Err(invalid(
                "model",
                format!("violates {}", report.names().join(", ")),
            ));
        }
        if self.run.n_paths == 0 {
            return Err(invalid("run.n_paths", "must be positive"));
        }
        if self.run.n_paths > MAX_PATHS {
            return Err(invalid(
                "run.n_paths",
                format!("must not exceed {MAX_PATHS}"),
            ));
        }
        let f = self.run.max_nonfinite_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(invalid("run.max_nonfinite_fraction", "must lie in [0, 1]"));
        }
        if self.run.workers == Some(0) {
            return Err(invalid("run.workers", "must be positive"));
        }
        self.scheme()?;
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            return Err(invalid("grid.horizon", "must be positive and finite"));
        }

        let vol = match self.volatility {
            VolatilityBlock::Sigmoid => VolatilityFunction::sigmoid(),
            VolatilityBlock::Constant { value } => VolatilityFunction::constant(value)
                .map_err(|e| invalid("volatility.value", e.to_string()))?,
        };
        let initial = InitialSegment::constant(self.initial.value)
            .map_err(|e| invalid("initial.value", e.to_string()))?;
        let pi = PowerPi::new(self.truncation.pi_exponent)
            .map_err(|e| invalid("truncation.pi_exponent", e.to_string()))?;
        let rule = match self.truncation.mu {
            MuBlock::Quadratic => {
                let mu =
                    default_mu(&params).map_err(|e| invalid("truncation.mu", e.to_string()))?;
                TruncationRule::new(&params, mu, pi)
            }
            MuBlock::Power { scale, exponent } => {
                let mu = PowerMu::new(scale, exponent)
                    .map_err(|e| invalid("truncation.mu", e.to_string()))?;
                TruncationRule::new(&params, mu, pi)
            }
        }
        .map_err(|e| invalid("truncation", e.to_string()))?;
        Model::new(params, rule, vol, initial).map_err(|e| invalid("model", e.to_string()))
    }

    pub fn scheme(&self) -> Result<Scheme, CliError> {
        self.run
            .scheme
            .parse()
            .map_err(|e: sdde_core::Error| invalid("run.scheme", e.to_string()))
    }

    /// Grid on `[0, horizon]` with `m` steps per delay, checked against the
    /// truncation threshold.
    pub fn grid_for(&self, model: &Model, m: usize, path: &str) -> Result<GridSpec, CliError> {
        if m == 0 || m > MAX_M {
            return Err(invalid(
                path,
                format!("steps per delay must lie in [1, {MAX_M}]"),
            ));
        }
        let grid = GridSpec::new(model.params.tau, m, self.grid.horizon).map_err(|_| {
            invalid(
                "grid.horizon",
                format!("T must be a multiple of delta = tau/{m}"),
            )
        })?;
        if grid.n_steps > MAX_STEPS {
            return Err(invalid(path, format!("more than {MAX_STEPS} steps")));
        }
        match self.scheme()? {
            Scheme::Tem => {
                model
                    .rule
                    .clamp_bounds(grid.delta())
                    .map_err(|e| invalid(path, e.to_string()))?;
            }
            Scheme::Bem => check_bem_preconditions(&model.params, grid.delta())
                .map_err(|e| invalid(path, e.to_string()))?,
            Scheme::Em => {}
        }
        Ok(grid)
    }

    pub fn simulation_grid(&self, model: &Model) -> Result<GridSpec, CliError> {
        let m = self
            .grid
            .m
            .ok_or_else(|| invalid("grid.m", "required by this command"))?;
        self.grid_for(model, m, "grid.m")
    }

    /// Reference grid and coarsening factors for `converge`.
    pub fn convergence_ladder(&self, model: &Model) -> Result<(GridSpec, Vec<usize>), CliError> {
        let ladder = &self.grid.ladder;
        if ladder.len() < 3 {
            return Err(invalid("grid.ladder", "needs at least 3 rungs"));
        }
        let reference = self
            .grid
            .reference_m
            .ok_or_else(|| invalid("grid.reference_m", "required by converge"))?;
        let fine = self.grid_for(model, reference, "grid.reference_m")?;
        let factors = rung_factors(ladder, reference, "grid.ladder", true)?;
        for (i, &m) in ladder.iter().enumerate() {
            self.grid_for(model, m, &format!("grid.ladder[{i}]"))?;
        }
        Ok((fine, factors))
    }

    pub fn pricing_plan(&self, model: &Model) -> Result<PricingPlan, CliError> {
        let block = self
            .pricing
            .as_ref()
            .ok_or_else(|| invalid("pricing", "block required by price"))?;
        if block.bond.is_none() && block.barrier.is_none() {
            return Err(invalid("pricing", "needs a bond or a barrier block"));
        }
        if block.ladder.is_empty() {
            return Err(invalid("pricing.ladder", "needs at least one rung"));
        }
        let finest = *block.ladder.iter().max().unwrap_or(&1);
        let fine = self.grid_for(model, finest, "pricing.ladder")?;
        let factors = rung_factors(&block.ladder, finest, "pricing.ladder", false)?;
        let mut grids = Vec::new();
        for (i, &m) in block.ladder.iter().enumerate() {
            grids.push(self.grid_for(model, m, &format!("pricing.ladder[{i}]"))?);
        }
        let horizon = self.grid.horizon;
        let bond = match block.bond {
            Some(b) => {
                check_instrument_time(b.maturity, horizon, &grids, "pricing.bond.maturity")?;
                Some(
                    BondSpec::new(b.maturity)
                        .map_err(|e| invalid("pricing.bond", e.to_string()))?,
                )
            }
            None => None,
        };
        let barrier = match block.barrier {
            Some(b) => {
                check_instrument_time(b.expiry, horizon, &grids, "pricing.barrier.expiry")?;
                Some(
                    BarrierOptionSpec::new(b.expiry, b.strike, b.barrier)
                        .map_err(|e| invalid("pricing.barrier", e.to_string()))?,
                )
            }
            None => None,
        };
        Ok(PricingPlan {
            fine,
            factors,
            bond,
            barrier,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PricingPlan {
    pub fine: GridSpec,
    pub factors: Vec<usize>,
    pub bond: Option<BondSpec>,
    pub barrier: Option<BarrierOptionSpec>,
}

/// `reference / m` for each rung; with `strict`, every rung must be coarser
/// than the reference by a power of two and rungs must be distinct.
fn rung_factors(
    ladder: &[usize],
    reference: usize,
    path: &str,
    strict: bool,
) -> Result<Vec<usize>, CliError> {
    let mut seen = Vec::with_capacity(ladder.len());
    for (i, &m) in ladder.iter().enumerate() {
        let at = format!("{path}[{i}]");
        if m == 0 || !reference.is_multiple_of(m) {
            return Err(invalid(
                &at,
                format!("rung {m} must divide the finest grid {reference}"),
            ));
        }
        let factor = reference / m;
        if strict && (factor < 2 || !factor.is_power_of_two()) {
            return Err(invalid(
                &at,
                format!(
                    "rung {m} must be coarser than the reference {reference} by a power of two"
                ),
            ));
        }
        if seen.contains(&m) {
            return Err(invalid(&at, format!("rung {m} appears twice")));
        }
        seen.push(m);
    }
    Ok(ladder.iter().map(|&m| reference / m).collect())
}

fn check_instrument_time(
    t: f64,
    horizon: f64,
    grids: &[GridSpec],
    path: &str,
) -> Result<(), CliError> {
    if !(t > 0.0 && t <= horizon * (1.0 + 1e-12)) {
        return Err(invalid(path, format!("must lie in (0, T = {horizon}]")));
    }
    for g in grids {
        let steps = t / g.delta();
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(
                path,
                format!("{t} is not a multiple of delta = {}", g.delta()),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TABLE1: &str = r#"{
        "model": {"alpha_m1": 0.2, "alpha_0": 0.3, "alpha_1": 0.2, "alpha_2": 0.5,
                  "alpha_3": 1.0, "rho": 2.0, "theta": 1.25, "tau": 1.0, "lambda": 0.1},
        "initial": {"value": 0.2},
        "truncation": {"pi_exponent": 0.6666666666666666},
        "grid": {"horizon": 1.0, "m": 100, "ladder": [16, 32, 64], "reference_m": 256},
        "run": {"seed": 1, "n_paths": 4}
    }"#;

    fn with(edit: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(TABLE1).unwrap();
        edit(&mut v);
        v.to_string()
    }

    fn config_path(r: Result<impl std::fmt::Debug, CliError>) -> String {
        match r {
            Err(CliError::Config { path, .. }) => path,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn parses_defaults() {
        let c = ExperimentConfig::from_json(TABLE1).unwrap();
        assert_eq!(c.volatility, VolatilityBlock::Sigmoid);
        assert_eq!(c.truncation.mu, MuBlock::Quadratic);
        assert_eq!(c.run.scheme, "tem");
        assert_eq!(c.run.moment_orders, vec![2.0, 4.0]);
        let model = c.build_model().unwrap();
        assert_eq!(c.simulation_grid(&model).unwrap().n_steps, 100);
        let (fine, factors) = c.convergence_ladder(&model).unwrap();
        assert_eq!(fine.m, 256);
        assert_eq!(factors, vec![16, 8, 4]);
    }

    #[test]
    fn unknown_field_is_named() {
        let text = with(|v| v["run"]["n_path"] = 3.into());
        assert_eq!(
            config_path(ExperimentConfig::from_json(&text)),
            "run.n_path"
        );
        let text = with(|v| v["model"]["theta"] = "x".into());
        assert_eq!(
            config_path(ExperimentConfig::from_json(&text)),
            "model.theta"
        );
    }

    #[test]
    fn seed_is_required() {
        let text = with(|v| {
            v["run"].as_object_mut().unwrap().remove("seed");
        });
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }

    #[test]
    fn zero_paths_rejected() {
        let c = ExperimentConfig::from_json(&with(|v| v["run"]["n_paths"] = 0.into())).unwrap();
        assert_eq!(config_path(c.build_model()), "run.n_paths");
    }

    #[test]
    fn invalid_model_names_condition() {
        let c = ExperimentConfig::from_json(&with(|v| v["model"]["theta"] = 1.6.into())).unwrap();
        let err = c.build_model().unwrap_err();
        assert!(err.to_string().contains("1 + rho > 2 theta"), "{err}");
    }

    #[test]
    fn ladder_checks() {
        let c =
            ExperimentConfig::from_json(&with(|v| v["grid"]["ladder"] = serde_json::json!([16])))
                .unwrap();
        let model = c.build_model().unwrap();
        assert_eq!(config_path(c.convergence_ladder(&model)), "grid.ladder");

        let c = ExperimentConfig::from_json(&with(|v| {
            v["grid"]["ladder"] = serde_json::json!([16, 32, 48])
        }))
        .unwrap();
        assert_eq!(config_path(c.convergence_ladder(&model)), "grid.ladder[2]");

        let c = ExperimentConfig::from_json(&with(|v| {
            v["grid"]["ladder"] = serde_json::json!([16, 32, 256])
        }))
        .unwrap();
        assert_eq!(config_path(c.convergence_ladder(&model)), "grid.ladder[2]");

        // delta = 1/4 exceeds the truncation threshold
        let c = ExperimentConfig::from_json(&with(|v| {
            v["grid"]["ladder"] = serde_json::json!([4, 16, 32])
        }))
        .unwrap();
        assert_eq!(config_path(c.convergence_ladder(&model)), "grid.ladder[0]");
    }

    #[test]
    fn horizon_must_fit_grid() {
        let c =
            ExperimentConfig::from_json(&with(|v| v["grid"]["horizon"] = 0.015.into())).unwrap();
        let model = c.build_model().unwrap();
        assert_eq!(config_path(c.simulation_grid(&model)), "grid.horizon");
    }

    #[test]
    fn pricing_block_required() {
        let c = ExperimentConfig::from_json(TABLE1).unwrap();
        let model = c.build_model().unwrap();
        assert_eq!(config_path(c.pricing_plan(&model)), "pricing");

        let c = ExperimentConfig::from_json(&with(|v| {
            v["pricing"] = serde_json::json!({
                "bond": {"maturity": 1.0},
                "barrier": {"expiry": 0.5, "strike": 0.1, "barrier": null},
                "ladder": [16, 32, 64]
            })
        }))
        .unwrap();
        let plan = c.pricing_plan(&model).unwrap();
        assert_eq!(plan.fine.m, 64);
        assert_eq!(plan.factors, vec![4, 2, 1]);
        assert_eq!(plan.barrier.unwrap().barrier, None);

        let c = ExperimentConfig::from_json(&with(|v| {
            v["pricing"] = serde_json::json!({"bond": {"maturity": 2.0}, "ladder": [16]})
        }))
        .unwrap();
        assert_eq!(config_path(c.pricing_plan(&model)), "pricing.bond.maturity");
    }

    #[test]
    fn constant_volatility_and_power_mu() {
        let c = ExperimentConfig::from_json(&with(|v| {
            v["volatility"] = serde_json::json!({"kind": "constant", "value": 0.0});
            v["truncation"]["mu"] =
                serde_json::json!({"kind": "power", "scale": 3.0, "exponent": 2.0});
        }))
        .unwrap();
        let model = c.build_model().unwrap();
        assert_eq!(model.vol.eval(1.0), 0.0);
        let c = ExperimentConfig::from_json(&with(|v| {
            v["volatility"] = serde_json::json!({"kind": "constant", "value": -1.0})
        }))
        .unwrap();
        assert_eq!(config_path(c.build_model()), "volatility.value");
    }
}
