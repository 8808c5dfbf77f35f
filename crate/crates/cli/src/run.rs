//! The four experiment commands. Each writes its CSVs plus `manifest.json`
//! into the output directory and returns the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sdde_core::analysis::{ConvergenceReport, MomentAccumulator, MomentKind, MAX_ERROR_ORDER};
use sdde_core::experiment::{convergence_report, for_each_simulated, pricing_study, Failures};
use sdde_core::pricing::{write_price_csv, PriceRow};
use sdde_core::Model;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Converge,
    Moments,
    Price,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::Moments => "moments",
            Command::Price => "price",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureSummary {
    pub count: usize,
    pub attempted: usize,
    pub fraction: f64,
    pub first: Option<String>,
}

impl From<&Failures> for FailureSummary {
    fn from(f: &Failures) -> Self {
        Self {
            count: f.count,
            attempted: f.attempted,
            fraction: f.fraction(),
            first: f.first.as_ref().map(|(i, e)| format!("path {i}: {e}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergeSummary {
    pub p: f64,
    pub slope: f64,
    pub intercept: f64,
    pub strictly_decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub file: String,
    pub p: f64,
    pub inverse: bool,
    pub sup_estimate: f64,
    pub n_paths: usize,
    pub n_excluded: usize,
}

/// `|price(rung i) - price(rung i+1)|` for consecutive rungs of one instrument.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceDifferences {
    pub instrument: String,
    pub deltas: Vec<f64>,
    pub differences: Vec<f64>,
    pub decreasing: bool,
}

/// Everything needed to tie an output directory back to its inputs. Contains
/// no timestamps or host data so that reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub scheme: String,
    pub n_paths: u64,
    pub delta_star: f64,
    pub deltas: Vec<f64>,
    pub pi_admissible: bool,
    pub warnings: Vec<String>,
    pub failures: FailureSummary,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergeSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub moments: Vec<MomentSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub price_differences: Vec<PriceDifferences>,
}

pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_with<F>(dir: &Path, name: &str, outputs: &mut Vec<String>, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let path = dir.join(name);
    let mut w = create(&path)?;
    f(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn check_failures(failures: &Failures, tolerance: f64) -> Result<(), CliError> {
    if failures.count > 0 && failures.fraction() > tolerance {
        let first = failures
            .first
            .as_ref()
            .map(|(i, e)| format!("; first at path {i}: {e}"))
            .unwrap_or_default();
        return Err(CliError::Numerical(format!(
            "{} of {} paths failed ({:.3e} > tolerance {}){first}",
            failures.count,
            failures.attempted,
            failures.fraction(),
            tolerance
        )));
    }
    Ok(())
}

/// Parses, validates and runs `command`, writing into the configured (or
/// overridden) output directory.
pub fn execute(command: Command, text: &str, overrides: &Overrides) -> Result<Manifest, CliError> {
    let config = ExperimentConfig::from_json(text)?;
    let out = overrides
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config {
            path: "output_dir".into(),
            message: "no output directory in the config and no --out given".into(),
        })?;
    let seed = overrides.seed.unwrap_or(config.run.seed);
    let model = config.build_model()?;
    let runner = Runner {
        command,
        config: &config,
        model: &model,
        seed,
        hash: config_hash(text),
        out,
    };
    match config.run.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config {
                    path: "run.workers".into(),
                    message: e.to_string(),
                })?;
            pool.install(|| runner.run())
        }
        None => runner.run(),
    }
}

struct Runner<'a> {
    command: Command,
    config: &'a ExperimentConfig,
    model: &'a Model,
    seed: u64,
    hash: String,
    out: PathBuf,
}

impl Runner<'_> {
    fn run(&self) -> Result<Manifest, CliError> {
        // validate everything before touching the filesystem
        match self.command {
            Command::Simulate => {
                let grid = self.config.simulation_grid(self.model)?;
                self.prepare()?;
                self.simulate(grid)
            }
            Command::Moments => {
                let grid = self.config.simulation_grid(self.model)?;
                let requests = self.moment_requests(grid)?;
                self.prepare()?;
                self.moments(grid, requests)
            }
            Command::Converge => {
                let (fine, factors) = self.config.convergence_ladder(self.model)?;
                let p = self.config.run.error_order;
                if !(2.0..=MAX_ERROR_ORDER).contains(&p) {
                    return Err(CliError::Config {
                        path: "run.error_order".into(),
                        message: format!("must lie in [2, {MAX_ERROR_ORDER}]"),
                    });
                }
                self.prepare()?;
                self.converge(fine, &factors, p)
            }
            Command::Price => {
                let plan = self.config.pricing_plan(self.model)?;
                self.prepare()?;
                self.price(plan)
            }
        }
    }

    fn prepare(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))
    }

    fn manifest(&self, deltas: Vec<f64>, failures: &Failures, outputs: Vec<String>) -> Manifest {
        let report = self.model.rule.verify_pi_admissibility(&deltas);
        Manifest {
            command: self.command.name().into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: self.hash.clone(),
            seed: self.seed,
            scheme: self.config.run.scheme.to_ascii_lowercase(),
            n_paths: self.config.run.n_paths,
            delta_star: self.model.rule.delta_star(),
            deltas,
            pi_admissible: report.all_admissible(),
            warnings: report.warnings(),
            failures: failures.into(),
            outputs,
            convergence: None,
            moments: Vec::new(),
            price_differences: Vec::new(),
        }
    }

    fn finish(&self, mut manifest: Manifest) -> Result<Manifest, CliError> {
        manifest.outputs.push("manifest.json".into());
        let path = self.out.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }

    fn simulate(&self, grid: sdde_core::GridSpec) -> Result<Manifest, CliError> {
        let scheme = self.config.scheme()?;
        let dir = self.out.join("paths");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let width = (self.config.run.n_paths - 1).to_string().len().max(5);
        let mut outputs = Vec::new();
        let mut io_error = None;
        let result = for_each_simulated(
            self.model,
            &grid,
            scheme,
            self.seed,
            0..self.config.run.n_paths,
            |path| {
                let name = format!("paths/path_{:0width$}.csv", path.path_index);
                write_with(&self.out, &name, &mut outputs, |w| path.write_csv(w)).map_err(|e| {
                    let message = e.to_string();
                    io_error = Some(e);
                    sdde_core::Error::Mismatch(message)
                })
            },
        );
        if let Some(e) = io_error {
            return Err(e);
        }
        let failures = result?;
        check_failures(&failures, self.config.run.max_nonfinite_fraction)?;
        self.finish(self.manifest(vec![grid.delta()], &failures, outputs))
    }

    fn moment_requests(
        &self,
        grid: sdde_core::GridSpec,
    ) -> Result<Vec<(f64, MomentKind)>, CliError> {
        let run = &self.config.run;
        let direct = run
            .moment_orders
            .iter()
            .map(|&p| (p, MomentKind::Direct, "run.moment_orders"));
        let inverse = run.inverse_moment_orders.iter().map(|&p| {
            (
                p,
                MomentKind::Inverse {
                    rho: self.model.params.rho,
                },
                "run.inverse_moment_orders",
            )
        });
        let requests: Vec<_> = direct.chain(inverse).collect();
        if requests.is_empty() {
            return Err(CliError::Config {
                path: "run.moment_orders".into(),
                message: "no moment orders requested".into(),
            });
        }
        for &(p, kind, path) in &requests {
            MomentAccumulator::new(grid, p, kind).map_err(|e| CliError::Config {
                path: path.into(),
                message: e.to_string(),
            })?;
        }
        Ok(requests.into_iter().map(|(p, k, _)| (p, k)).collect())
    }

    fn moments(
        &self,
        grid: sdde_core::GridSpec,
        requests: Vec<(f64, MomentKind)>,
    ) -> Result<Manifest, CliError> {
        let scheme = self.config.scheme()?;
        let mut accs = requests
            .iter()
            .map(|&(p, kind)| MomentAccumulator::new(grid, p, kind))
            .collect::<sdde_core::Result<Vec<_>>>()?;
        let failures = for_each_simulated(
            self.model,
            &grid,
            scheme,
            self.seed,
            0..self.config.run.n_paths,
            |path| accs.iter_mut().try_for_each(|a| a.push(&path)),
        )?;
        check_failures(&failures, self.config.run.max_nonfinite_fraction)?;
        let mut outputs = Vec::new();
        let mut summaries = Vec::new();
        for acc in accs {
            let report = acc.finish()?;
            let inverse = matches!(report.kind, MomentKind::Inverse { .. });
            let name = format!(
                "{}moments_p{}.csv",
                if inverse { "inverse_" } else { "" },
                report.p
            );
            write_with(&self.out, &name, &mut outputs, |w| report.write_csv(w))?;
            summaries.push(MomentSummary {
                file: name,
                p: report.p,
                inverse,
                sup_estimate: report.sup_estimate,
                n_paths: report.n_paths,
                n_excluded: report.n_excluded,
            });
        }
        let mut manifest = self.manifest(vec![grid.delta()], &failures, outputs);
        manifest.moments = summaries;
        self.finish(manifest)
    }

    fn converge(
        &self,
        fine: sdde_core::GridSpec,
        factors: &[usize],
        p: f64,
    ) -> Result<Manifest, CliError> {
        let scheme = self.config.scheme()?;
        let (report, failures): (ConvergenceReport, Failures) = convergence_report(
            self.model,
            &fine,
            factors,
            scheme,
            self.seed,
            0..self.config.run.n_paths,
            p,
        )?;
        check_failures(&failures, self.config.run.max_nonfinite_fraction)?;
        let mut outputs = Vec::new();
        write_with(&self.out, "convergence.csv", &mut outputs, |w| {
            report.write_csv(w)
        })?;
        let mut deltas = report.deltas();
        deltas.push(fine.delta());
        let mut manifest = self.manifest(deltas, &failures, outputs);
        manifest.convergence = Some(ConvergeSummary {
            p,
            slope: report.slope,
            intercept: report.intercept,
            strictly_decreasing: report.strictly_decreasing(),
        });
        self.finish(manifest)
    }

    fn price(&self, plan: crate::config::PricingPlan) -> Result<Manifest, CliError> {
        let scheme = self.config.scheme()?;
        let (rows, failures) = pricing_study(
            self.model,
            &plan.fine,
            &plan.factors,
            scheme,
            self.seed,
            0..self.config.run.n_paths,
            plan.bond.as_ref(),
            plan.barrier.as_ref(),
        )?;
        check_failures(&failures, self.config.run.max_nonfinite_fraction)?;
        let mut outputs = Vec::new();
        write_with(&self.out, "prices.csv", &mut outputs, |w| {
            write_price_csv(&rows, w)
        })?;
        let deltas: Vec<f64> = plan
            .factors
            .iter()
            .map(|&f| plan.fine.delta() * f as f64)
            .collect();
        let mut manifest = self.manifest(deltas, &failures, outputs);
        manifest.price_differences = ["bond", "barrier"]
            .iter()
            .filter_map(|name| price_differences(&rows, name))
            .collect();
        self.finish(manifest)
    }
}

/// Differences between successive rungs, ordered from coarsest to finest.
pub fn price_differences(rows: &[PriceRow], instrument: &str) -> Option<PriceDifferences> {
    let mut mine: Vec<_> = rows
        .iter()
        .filter(|r| r.instrument == instrument)
        .map(|r| (r.estimate.delta, r.estimate.value))
        .collect();
    if mine.is_empty() {
        return None;
    }
    mine.sort_by(|a, b| b.0.total_cmp(&a.0));
    let differences: Vec<f64> = mine.windows(2).map(|w| (w[0].1 - w[1].1).abs()).collect();
    Some(PriceDifferences {
        instrument: instrument.into(),
        deltas: mine.iter().map(|m| m.0).collect(),
        decreasing: differences.windows(2).all(|w| w[1] < w[0]),
        differences,
    })
}
