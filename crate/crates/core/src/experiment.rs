//! Ensemble drivers shared by the command line tool and the test suites.
//!
//! Paths are produced in fixed-size chunks of consecutive indices on the
//! current rayon pool and reduced in index order, so the output does not
//! depend on the number of worker threads.

use std::ops::Range;

use crate::analysis::{
    ComparisonAccumulator, ConvergenceReport, ErrorPoint, MomentAccumulator, MomentKind,
    MomentReport, SchemeComparison, StrongErrorAccumulator,
};
use crate::error::{Error, Result};
use crate::path_engine::{
    coupled_ladder, par_map_paths, simulate_path, GridSpec, Model, NoiseStream, Scheme, SimPath,
};
use crate::pricing::{
    barrier_payoff, bond_discount, BarrierOptionSpec, BondSpec, PriceAccumulator, PriceRow,
};

/// Paths simulated per parallel batch.
pub const CHUNK: u64 = 256;

/// Paths dropped because a step failed numerically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Failures {
    pub count: usize,
    pub attempted: usize,
    /// Lowest failing path index and its error.
    pub first: Option<(u64, Error)>,
}

impl Failures {
    pub fn fraction(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.count as f64 / self.attempted as f64
        }
    }
}

/// Produces one item per path index in parallel chunks and hands them to
/// `consume` in index order. Numerical failures are counted and skipped;
/// any other error aborts.
pub fn for_each_path<T, P, C>(range: Range<u64>, produce: P, mut consume: C) -> Result<Failures>
where
    T: Send,
    P: Fn(u64) -> Result<T> + Sync + Send,
    C: FnMut(u64, T) -> Result<()>,
{
    let mut failures = Failures::default();
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        let batch = par_map_paths(start..end, &produce);
        for (i, item) in (start..end).zip(batch) {
            failures.attempted += 1;
            match item {
                Ok(v) => consume(i, v)?,
                Err(e) if e.is_numerical() => {
                    failures.count += 1;
                    if failures.first.is_none() {
                        failures.first = Some((i, e));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        start = end;
    }
    Ok(failures)
}

/// Simulates `range` and hands each path to `consume` in index order.
pub fn for_each_simulated<C>(
    model: &Model,
    grid: &GridSpec,
    scheme: Scheme,
    seed: u64,
    range: Range<u64>,
    mut consume: C,
) -> Result<Failures>
where
    C: FnMut(SimPath) -> Result<()>,
{
    for_each_path(
        range,
        |i| simulate_path(model, grid, &NoiseStream::new(seed, i), scheme),
        |_, p| consume(p),
    )
}

/// Strong errors of each coarse grid `fine.m / factor` against the fine
/// reference, all driven by the fine noise.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    model: &Model,
    fine: &GridSpec,
    factors: &[usize],
    scheme: Scheme,
    seed: u64,
    range: Range<u64>,
    p: f64,
) -> Result<(Vec<ErrorPoint>, Failures)> {
    let mut accs = factors
        .iter()
        .map(|&f| StrongErrorAccumulator::new(p, fine.coarsen(f)?.delta()))
        .collect::<Result<Vec<_>>>()?;
    let failures = for_each_path(
        range,
        |i| {
            coupled_ladder(
                model,
                fine,
                factors,
                &NoiseStream::new(seed, i),
                scheme,
                scheme,
            )
        },
        |_, ladder| {
            for (acc, coarse) in accs.iter_mut().zip(&ladder.coarse) {
                acc.push(coarse, &ladder.fine)?;
            }
            Ok(())
        },
    )?;
    let points = accs
        .iter()
        .map(|a| a.finish())
        .collect::<Result<Vec<_>>>()?;
    Ok((points, failures))
}

/// [`convergence_study`] followed by the log-log fit.
#[allow(clippy::too_many_arguments)]
pub fn convergence_report(
    model: &Model,
    fine: &GridSpec,
    factors: &[usize],
    scheme: Scheme,
    seed: u64,
    range: Range<u64>,
    p: f64,
) -> Result<(ConvergenceReport, Failures)> {
    let (points, failures) = convergence_study(model, fine, factors, scheme, seed, range, p)?;
    Ok((ConvergenceReport::from_points(points, p)?, failures))
}

/// Moment reports for each `(p, kind)` request over one ensemble.
pub fn moment_study(
    model: &Model,
    grid: &GridSpec,
    scheme: Scheme,
    seed: u64,
    range: Range<u64>,
    requests: &[(f64, MomentKind)],
) -> Result<(Vec<MomentReport>, Failures)> {
    let mut accs = requests
        .iter()
        .map(|&(p, kind)| MomentAccumulator::new(*grid, p, kind))
        .collect::<Result<Vec<_>>>()?;
    let failures = for_each_simulated(model, grid, scheme, seed, range, |path| {
        accs.iter_mut().try_for_each(|a| a.push(&path))
    })?;
    let reports = accs
        .into_iter()
        .map(|a| a.finish())
        .collect::<Result<Vec<_>>>()?;
    Ok((reports, failures))
}

/// Runs schemes `a` and `b` on identical noise and compares them path by path.
pub fn scheme_comparison(
    model: &Model,
    grid: &GridSpec,
    a: Scheme,
    b: Scheme,
    seed: u64,
    range: Range<u64>,
) -> Result<(SchemeComparison, Failures)> {
    let mut acc = ComparisonAccumulator::new(*grid);
    let failures = for_each_path(
        range,
        |i| {
            let noise = NoiseStream::new(seed, i);
            let inc = noise.increments(grid.delta(), model.params.lambda, grid.n_steps)?;
            let pa = crate::path_engine::simulate_with_increments(model, grid, inc.clone(), a, i)?;
            let pb = crate::path_engine::simulate_with_increments(model, grid, inc, b, i)?;
            Ok((pa, pb))
        },
        |_, (pa, pb)| acc.push(&pa, &pb),
    )?;
    Ok((acc.finish()?, failures))
}

/// Bond and barrier prices on each coarse grid `fine.m / factor`, with every
/// rung driven by the fine noise. Rows come out rung by rung in `factors`
/// order, bond before barrier.
#[allow(clippy::too_many_arguments)]
pub fn pricing_study(
    model: &Model,
    fine: &GridSpec,
    factors: &[usize],
    scheme: Scheme,
    seed: u64,
    range: Range<u64>,
    bond: Option<&BondSpec>,
    barrier: Option<&BarrierOptionSpec>,
) -> Result<(Vec<PriceRow>, Failures)> {
    let mut bond_accs = vec![PriceAccumulator::new(); factors.len()];
    let mut barrier_accs = vec![PriceAccumulator::new(); factors.len()];
    let failures = for_each_path(
        range,
        |i| {
            let ladder = coupled_ladder(
                model,
                fine,
                factors,
                &NoiseStream::new(seed, i),
                scheme,
                scheme,
            )?;
            ladder
                .coarse
                .iter()
                .map(|p| {
                    let b = bond.map(|s| bond_discount(p, s)).transpose()?;
                    let o = barrier.map(|s| barrier_payoff(p, s)).transpose()?;
                    Ok((p.grid.delta(), b, o))
                })
                .collect::<Result<Vec<_>>>()
        },
        |_, payoffs| {
            for (j, (delta, b, o)) in payoffs.into_iter().enumerate() {
                if let Some(v) = b {
                    bond_accs[j].push(delta, v)?;
                }
                if let Some(v) = o {
                    barrier_accs[j].push(delta, v)?;
                }
            }
            Ok(())
        },
    )?;
    let mut rows = Vec::new();
    for j in 0..factors.len() {
        if bond.is_some() {
            rows.push(PriceRow {
                instrument: "bond".into(),
                estimate: bond_accs[j].finish()?,
            });
        }
        if barrier.is_some() {
            rows.push(PriceRow {
                instrument: "barrier".into(),
                estimate: barrier_accs[j].finish()?,
            });
        }
    }
    Ok((rows, failures))
}
