//! Ensemble statistics: moments and inverse moments over time, strong errors
//! between coupled coarse/fine paths, log-log convergence fits and
//! scheme-versus-scheme comparisons.
//!
//! Every estimator reduces in path-index order. The slice entry points sort
//! first; the accumulators expect the caller to push in index order.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::path_engine::{GridSpec, SimPath};
use crate::stats::RunningStats;

/// Fewest usable paths accepted by the moment estimator.
pub const MIN_MOMENT_PATHS: usize = 100;

/// Largest supported error norm order.
pub const MAX_ERROR_ORDER: f64 = 8.0;

fn sorted(paths: &[SimPath]) -> Vec<&SimPath> {
    let mut v: Vec<&SimPath> = paths.iter().collect();
    v.sort_by_key(|p| p.path_index);
    v
}

fn same_grid(a: &GridSpec, b: &GridSpec) -> bool {
    a.m == b.m && a.n_steps == b.n_steps && a.tau == b.tau
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentKind {
    /// `E|x|^p`.
    Direct,
    /// `E|1/x|^p`; needs `p > 2 v (rho - 1)`.
    Inverse { rho: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub p: f64,
    pub kind: MomentKind,
    /// `t_0, ..., t_n`.
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    pub ci_halfwidth: Vec<f64>,
    pub sup_estimate: f64,
    pub n_paths: usize,
    /// Paths dropped from an inverse estimate for touching `x <= 0`.
    pub n_excluded: usize,
}

impl MomentReport {
    /// `t,estimate,ci_halfwidth`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,estimate,ci_halfwidth")?;
        for ((t, e), h) in self
            .times
            .iter()
            .zip(&self.estimates)
            .zip(&self.ci_halfwidth)
        {
            writeln!(w, "{t},{e},{h}")?;
        }
        Ok(())
    }

    pub fn excluded_fraction(&self) -> f64 {
        let total = self.n_paths + self.n_excluded;
        if total == 0 {
            0.0
        } else {
            self.n_excluded as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    p: f64,
    kind: MomentKind,
    grid: GridSpec,
    per_time: Vec<RunningStats>,
    used: usize,
    excluded: usize,
}

impl MomentAccumulator {
    pub fn new(grid: GridSpec, p: f64, kind: MomentKind) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(Error::Precondition(format!(
                "moment order must be >= 2, got {p}"
            )));
        }
        if let MomentKind::Inverse { rho } = kind {
            let floor = 2.0f64.max(rho - 1.0);
            if !(p > floor) {
                return Err(Error::Precondition(format!(
                    "inverse moment order must exceed 2 v (rho - 1) = {floor}, got {p}"
                )));
            }
        }
        Ok(Self {
            p,
            kind,
            grid,
            per_time: vec![RunningStats::new(); grid.n_steps + 1],
            used: 0,
            excluded: 0,
        })
    }

    pub fn push(&mut self, path: &SimPath) -> Result<()> {
        if !same_grid(&path.grid, &self.grid) {
            return Err(Error::Mismatch(format!(
                "path {} has grid {:?}, expected {:?}",
                path.path_index, path.grid, self.grid
            )));
        }
        match self.kind {
            MomentKind::Direct => {
                for (s, &x) in self.per_time.iter_mut().zip(path.forward()) {
                    s.push(x.abs().powf(self.p));
                }
            }
            MomentKind::Inverse { .. } => {
                if path.states.iter().any(|&x| !(x > 0.0)) {
                    self.excluded += 1;
                    return Ok(());
                }
                for (s, &x) in self.per_time.iter_mut().zip(path.forward()) {
                    s.push(x.recip().powf(self.p));
                }
            }
        }
        self.used += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<MomentReport> {
        if self.used < MIN_MOMENT_PATHS {
            return Err(Error::InsufficientSample {
                usable: self.used,
                required: MIN_MOMENT_PATHS,
            });
        }
        let estimates: Vec<f64> = self.per_time.iter().map(|s| s.mean()).collect();
        let sup_estimate = estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(MomentReport {
            p: self.p,
            kind: self.kind,
            times: (0..=self.grid.n_steps)
                .map(|k| self.grid.time(k as isize))
                .collect(),
            ci_halfwidth: self.per_time.iter().map(|s| s.ci_halfwidth()).collect(),
            estimates,
            sup_estimate,
            n_paths: self.used,
            n_excluded: self.excluded,
        })
    }
}

/// Per-time Monte Carlo estimate of `E|x(t_k)|^p` (or of `E|1/x(t_k)|^p`).
pub fn estimate_moments(paths: &[SimPath], p: f64, kind: MomentKind) -> Result<MomentReport> {
    let first = paths.first().ok_or(Error::InsufficientSample {
        usable: 0,
        required: MIN_MOMENT_PATHS,
    })?;
    let mut acc = MomentAccumulator::new(first.grid, p, kind)?;
    for path in sorted(paths) {
        acc.push(path)?;
    }
    acc.finish()
}

/// Ratio between the fine and coarse grids, after checking that the coarse
/// grid points are a subset of the fine ones.
fn refinement_factor(coarse: &GridSpec, fine: &GridSpec) -> Result<usize> {
    if coarse.tau != fine.tau || coarse.m == 0 || !fine.m.is_multiple_of(coarse.m) {
        return Err(Error::Mismatch(format!(
            "coarse grid {coarse:?} is not nested in fine grid {fine:?}"
        )));
    }
    let factor = fine.m / coarse.m;
    if coarse.n_steps * factor != fine.n_steps {
        return Err(Error::Mismatch(format!(
            "horizons differ: {} coarse steps vs {} fine steps at ratio {factor}",
            coarse.n_steps, fine.n_steps
        )));
    }
    Ok(factor)
}

/// `sup_k |x_coarse(t_k) - x_fine(t_k)|^p` over the coarse grid points `t_0..t_n`.
pub fn pathwise_sup_error(coarse: &SimPath, fine: &SimPath, p: f64) -> Result<f64> {
    if coarse.path_index != fine.path_index {
        return Err(Error::Mismatch(format!(
            "coupled paths have different indices {} and {}",
            coarse.path_index, fine.path_index
        )));
    }
    let factor = refinement_factor(&coarse.grid, &fine.grid)?;
    let fine_fwd = fine.forward();
    let sup = coarse
        .forward()
        .iter()
        .enumerate()
        .map(|(k, &xc)| (xc - fine_fwd[k * factor]).abs())
        .fold(0.0f64, f64::max);
    Ok(sup.powf(p))
}

/// One rung of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPoint {
    pub delta: f64,
    /// `(E sup |e|^p)^(1/p)`.
    pub error: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_paths: usize,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct StrongErrorAccumulator {
    p: f64,
    delta: f64,
    stats: RunningStats,
}

impl StrongErrorAccumulator {
    pub fn new(p: f64, delta: f64) -> Result<Self> {
        if !(2.0..=MAX_ERROR_ORDER).contains(&p) {
            return Err(Error::Precondition(format!(
                "error order must lie in [2, {MAX_ERROR_ORDER}], got {p}"
            )));
        }
        Ok(Self {
            p,
            delta,
            stats: RunningStats::new(),
        })
    }

    pub fn push(&mut self, coarse: &SimPath, fine: &SimPath) -> Result<()> {
        if (coarse.grid.delta() - self.delta).abs() > 1e-12 * self.delta {
            return Err(Error::Mismatch(format!(
                "coarse step {} differs from accumulator step {}",
                coarse.grid.delta(),
                self.delta
            )));
        }
        self.stats.push(pathwise_sup_error(coarse, fine, self.p)?);
        Ok(())
    }

    pub fn finish(&self) -> Result<ErrorPoint> {
        if self.stats.count() == 0 {
            return Err(Error::InsufficientSample {
                usable: 0,
                required: 1,
            });
        }
        let mean = self.stats.mean();
        let hw = self.stats.ci_halfwidth();
        let inv = 1.0 / self.p;
        Ok(ErrorPoint {
            delta: self.delta,
            error: mean.powf(inv),
            ci_lo: (mean - hw).max(0.0).powf(inv),
            ci_hi: (mean + hw).powf(inv),
            n_paths: self.stats.count() as usize,
            p: self.p,
        })
    }
}

/// Strong error of an ensemble of `(coarse, fine)` couplings.
pub fn estimate_strong_error(pairs: &[(SimPath, SimPath)], p: f64) -> Result<ErrorPoint> {
    let (first, _) = pairs.first().ok_or(Error::InsufficientSample {
        usable: 0,
        required: 1,
    })?;
    let mut acc = StrongErrorAccumulator::new(p, first.grid.delta())?;
    let mut order: Vec<&(SimPath, SimPath)> = pairs.iter().collect();
    order.sort_by_key(|(c, _)| c.path_index);
    for (c, f) in order {
        acc.push(c, f)?;
    }
    acc.finish()
}

/// Least-squares line through `(log delta, log error)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub p: f64,
    /// Strictly decreasing in `delta`.
    pub points: Vec<ErrorPoint>,
    pub slope: f64,
    pub intercept: f64,
    /// `log error - (intercept + slope log delta)` per point.
    pub residuals: Vec<f64>,
}

impl ConvergenceReport {
    pub fn deltas(&self) -> Vec<f64> {
        self.points.iter().map(|e| e.delta).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.points.iter().map(|e| e.error).collect()
    }

    /// True when the error shrinks strictly at every refinement.
    pub fn strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].error < w[0].error)
    }

    /// `delta,error,ci_lo,ci_hi`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "delta,error,ci_lo,ci_hi")?;
        for e in &self.points {
            writeln!(w, "{},{},{},{}", e.delta, e.error, e.ci_lo, e.ci_hi)?;
        }
        Ok(())
    }
}

/// Fits the empirical order on `(delta, error)` pairs.
pub fn fit_convergence_order(points: &[(f64, f64)]) -> Result<(f64, f64, Vec<f64>)> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some((d, e)) = points.iter().find(|(d, e)| !(*d > 0.0 && *e > 0.0)) {
        return Err(Error::DegenerateFit(format!(
            "log undefined at delta = {d}, error = {e}"
        )));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(d, _)| d.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all step sizes are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + slope * x))
        .collect();
    Ok((slope, intercept, residuals))
}

impl ConvergenceReport {
    pub fn from_points(mut points: Vec<ErrorPoint>, p: f64) -> Result<Self> {
        points.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        if points.windows(2).any(|w| w[0].delta == w[1].delta) {
            return Err(Error::DegenerateFit("duplicate step sizes".into()));
        }
        let pairs: Vec<(f64, f64)> = points.iter().map(|e| (e.delta, e.error)).collect();
        let (slope, intercept, residuals) = fit_convergence_order(&pairs)?;
        Ok(Self {
            p,
            points,
            slope,
            intercept,
            residuals,
        })
    }
}

/// Differences between two schemes run on the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeComparison {
    pub times: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub rms: Vec<f64>,
    pub max_abs: Vec<f64>,
    /// Mean over paths of `sup_k |x_a - x_b|`.
    pub mean_sup: f64,
    /// Root mean square of `x_a - x_b` over all paths and times.
    pub rms_overall: f64,
    pub max_overall: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone)]
pub struct ComparisonAccumulator {
    grid: GridSpec,
    abs: Vec<RunningStats>,
    sq: Vec<RunningStats>,
    sup: RunningStats,
}

impl ComparisonAccumulator {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n_steps + 1;
        Self {
            grid,
            abs: vec![RunningStats::new(); n],
            sq: vec![RunningStats::new(); n],
            sup: RunningStats::new(),
        }
    }

    pub fn push(&mut self, a: &SimPath, b: &SimPath) -> Result<()> {
        if a.path_index != b.path_index {
            return Err(Error::Mismatch(format!(
                "paths {} and {} do not share noise",
                a.path_index, b.path_index
            )));
        }
        if !same_grid(&a.grid, &self.grid) || !same_grid(&b.grid, &self.grid) {
            return Err(Error::Mismatch("compared paths must share one grid".into()));
        }
        let mut sup = 0.0f64;
        for (k, (&xa, &xb)) in a.forward().iter().zip(b.forward()).enumerate() {
            let d = (xa - xb).abs();
            self.abs[k].push(d);
            self.sq[k].push(d * d);
            sup = sup.max(d);
        }
        self.sup.push(sup);
        Ok(())
    }

    pub fn finish(&self) -> Result<SchemeComparison> {
        let n = self.sup.count() as usize;
        if n == 0 {
            return Err(Error::InsufficientSample {
                usable: 0,
                required: 1,
            });
        }
        let rms: Vec<f64> = self.sq.iter().map(|s| s.mean().sqrt()).collect();
        let mean_sq = self.sq.iter().map(|s| s.mean()).sum::<f64>() / self.sq.len() as f64;
        let max_abs: Vec<f64> = self.abs.iter().map(|s| s.max()).collect();
        Ok(SchemeComparison {
            times: (0..=self.grid.n_steps)
                .map(|k| self.grid.time(k as isize))
                .collect(),
            mean_abs: self.abs.iter().map(|s| s.mean()).collect(),
            rms,
            max_overall: max_abs.iter().cloned().fold(0.0, f64::max),
            max_abs,
            mean_sup: self.sup.mean(),
            rms_overall: mean_sq.sqrt(),
            n_paths: n,
        })
    }
}

/// Compares two ensembles path by path; both must contain the same path
/// indices on the same grid.
pub fn compare_schemes(a: &[SimPath], b: &[SimPath]) -> Result<SchemeComparison> {
    let (sa, sb) = (sorted(a), sorted(b));
    if sa.len() != sb.len() {
        return Err(Error::Mismatch(format!(
            "ensembles have {} and {} paths",
            sa.len(),
            sb.len()
        )));
    }
    let first = sa.first().ok_or(Error::InsufficientSample {
        usable: 0,
        required: 1,
    })?;
    let mut acc = ComparisonAccumulator::new(first.grid);
    for (x, y) in sa.into_iter().zip(sb) {
        acc.push(x, y)?;
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::{Increments, Scheme};

    fn constant_path(grid: GridSpec, index: u64, c: f64) -> SimPath {
        SimPath {
            grid,
            states: vec![c; grid.len()],
            increments: Increments {
                brownian: vec![0.0; grid.n_steps],
                jumps: vec![0; grid.n_steps],
            },
            scheme: Scheme::Tem,
            path_index: index,
            negativity_count: 0,
        }
    }

    fn grid() -> GridSpec {
        GridSpec::new(1.0, 10, 2.0).unwrap()
    }

    #[test]
    fn constant_moments() {
        let paths: Vec<SimPath> = (0..150).map(|i| constant_path(grid(), i, 0.3)).collect();
        let r = estimate_moments(&paths, 3.0, MomentKind::Direct).unwrap();
        assert!(r.estimates.iter().all(|&e| e == 0.3f64.powf(3.0)));
        assert!(r.ci_halfwidth.iter().all(|&h| h == 0.0));
        assert_eq!(r.sup_estimate, 0.3f64.powf(3.0));
        assert_eq!(r.times.len(), 21);
        let inv = estimate_moments(&paths, 3.0, MomentKind::Inverse { rho: 2.0 }).unwrap();
        assert!((inv.estimates[0] - 0.3f64.powf(-3.0)).abs() < 1e-12);
    }

    #[test]
    fn moment_preconditions() {
        let few: Vec<SimPath> = (0..99).map(|i| constant_path(grid(), i, 0.3)).collect();
        assert!(matches!(
            estimate_moments(&few, 2.0, MomentKind::Direct),
            Err(Error::InsufficientSample { usable: 99, .. })
        ));
        assert!(estimate_moments(&few, 1.5, MomentKind::Direct).is_err());
        // p must exceed 2 v (rho - 1)
        assert!(estimate_moments(&few, 2.0, MomentKind::Inverse { rho: 2.0 }).is_err());
        assert!(estimate_moments(&few, 3.5, MomentKind::Inverse { rho: 5.0 }).is_err());
    }

    #[test]
    fn inverse_excludes_nonpositive_paths() {
        let mut paths: Vec<SimPath> = (0..120).map(|i| constant_path(grid(), i, 0.5)).collect();
        for p in paths.iter_mut().take(10) {
            p.states[15] = -0.01;
        }
        let r = estimate_moments(&paths, 3.0, MomentKind::Inverse { rho: 2.0 }).unwrap();
        assert_eq!(r.n_paths, 110);
        assert_eq!(r.n_excluded, 10);
        assert!((r.excluded_fraction() - 10.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn strong_error_zero_for_identical() {
        let pairs: Vec<(SimPath, SimPath)> = (0..5)
            .map(|i| (constant_path(grid(), i, 0.2), constant_path(grid(), i, 0.2)))
            .collect();
        let e = estimate_strong_error(&pairs, 2.0).unwrap();
        assert_eq!(e.error, 0.0);
        assert_eq!(e.ci_hi, 0.0);
    }

    #[test]
    fn strong_error_uses_coarse_points() {
        let fine_grid = GridSpec::new(1.0, 20, 2.0).unwrap();
        let coarse = constant_path(grid(), 0, 0.0);
        let mut fine = constant_path(fine_grid, 0, 0.0);
        // only off-grid fine points differ
        for k in (1..fine_grid.len()).step_by(2) {
            fine.states[k] = 5.0;
        }
        assert_eq!(pathwise_sup_error(&coarse, &fine, 2.0).unwrap(), 0.0);
        fine.states[20 + 4] = 0.5; // t = 0.2, coarse index 2
        assert_eq!(pathwise_sup_error(&coarse, &fine, 2.0).unwrap(), 0.25);
        let bad = GridSpec::new(1.0, 15, 2.0).unwrap();
        assert!(pathwise_sup_error(&coarse, &constant_path(bad, 0, 0.0), 2.0).is_err());
        assert!(pathwise_sup_error(&coarse, &constant_path(fine_grid, 1, 0.0), 2.0).is_err());
        assert!(StrongErrorAccumulator::new(9.0, 0.1).is_err());
    }

    #[test]
    fn fit_synthetic() {
        let pts: Vec<(f64, f64)> = (3..9)
            .map(|j| {
                let d = 2f64.powi(-j);
                (d, d.powf(0.25))
            })
            .collect();
        let (s, _, _) = fit_convergence_order(&pts).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
        let pts: Vec<(f64, f64)> = (3..9)
            .map(|j| {
                let d = 2f64.powi(-j);
                (d, 7.0 * d.sqrt())
            })
            .collect();
        let (s, b, r) = fit_convergence_order(&pts).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
        assert!((b - 7f64.ln()).abs() < 1e-12);
        assert!(r.iter().all(|x| x.abs() < 1e-12));
        assert!(fit_convergence_order(&pts[..2]).is_err());
        assert!(fit_convergence_order(&[(0.1, 1.0), (0.05, 0.0), (0.01, 0.1)]).is_err());
    }

    #[test]
    fn report_sorted_and_csv() {
        let mk = |delta: f64, error: f64| ErrorPoint {
            delta,
            error,
            ci_lo: error * 0.9,
            ci_hi: error * 1.1,
            n_paths: 10,
            p: 2.0,
        };
        let r =
            ConvergenceReport::from_points(vec![mk(0.01, 0.1), mk(0.04, 0.2), mk(0.02, 0.14)], 2.0)
                .unwrap();
        assert_eq!(r.deltas(), vec![0.04, 0.02, 0.01]);
        assert!(r.strictly_decreasing());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "delta,error,ci_lo,ci_hi");
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "0.04,0.2,0.18000000000000002,0.22000000000000003"
        );
        assert!(ConvergenceReport::from_points(
            vec![mk(0.01, 0.1), mk(0.01, 0.2), mk(0.02, 0.3)],
            2.0
        )
        .is_err());
    }

    #[test]
    fn comparison() {
        let a: Vec<SimPath> = (0..4).map(|i| constant_path(grid(), i, 0.2)).collect();
        let same = compare_schemes(&a, &a).unwrap();
        assert_eq!(same.mean_sup, 0.0);
        assert_eq!(same.rms_overall, 0.0);
        assert_eq!(same.max_overall, 0.0);
        let b: Vec<SimPath> = (0..4)
            .map(|i| constant_path(grid(), i, 0.2 + 0.1 * i as f64))
            .collect();
        let c = compare_schemes(&a, &b).unwrap();
        assert!((c.mean_sup - 0.15).abs() < 1e-12);
        assert!((c.max_overall - 0.3).abs() < 1e-12);
        assert!((c.rms_overall - (0.14f64 / 4.0).sqrt()).abs() < 1e-12);
        assert!(compare_schemes(&a, &b[..3]).is_err());
    }
}
