//! Path simulation on a delay-aligned grid.
//!
//! The grid step is `delta = tau / m`, so the delayed state of step `k` is
//! exactly the stored state at `k - m`. States for `k = -m..=0` come from the
//! initial segment.

mod noise;
mod step;

use std::fmt;
use std::io::{self, Write};
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;

pub use noise::{poisson_inversion, Increments, NoiseStream, MAX_POISSON_MEAN};
pub use step::{
    bem_step, bem_step_with, check_bem_preconditions, em_step, em_step_with, tem_step,
    tem_step_with,
};

use crate::error::{Error, Result};
use crate::model::{InitialSegment, ModelParams, VolatilityFunction};
use crate::truncation::{ClampBounds, TruncationRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    /// Truncated Euler-Maruyama.
    Tem,
    /// Backward (drift-implicit) Euler-Maruyama.
    Bem,
    /// Classical Euler-Maruyama.
    Em,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Tem => "TEM",
            Scheme::Bem => "BEM",
            Scheme::Em => "EM",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tem" => Ok(Scheme::Tem),
            "bem" => Ok(Scheme::Bem),
            "em" => Ok(Scheme::Em),
            other => Err(Error::Precondition(format!(
                "unknown scheme {other:?}, expected tem, bem or em"
            ))),
        }
    }
}

/// Time grid `t_k = k delta`, `k = -m..=n_steps`, with `delta = tau / m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub tau: f64,
    /// Steps per delay.
    pub m: usize,
    pub n_steps: usize,
}

impl GridSpec {
    /// Grid covering `[0, horizon]`; `horizon` must be a whole number of steps.
    pub fn new(tau: f64, m: usize, horizon: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::GridIncompatible(format!(
                "tau must be positive, got {tau}"
            )));
        }
        if m == 0 {
            return Err(Error::GridIncompatible(
                "steps per delay must be positive".into(),
            ));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::GridIncompatible(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        let delta = tau / m as f64;
        let steps = horizon / delta;
        let n = steps.round();
        if (steps - n).abs() > 1e-9 * steps.max(1.0) || n < 1.0 {
            return Err(Error::GridIncompatible(format!(
                "horizon {horizon} is not a multiple of delta = {tau}/{m}"
            )));
        }
        Ok(Self {
            tau,
            m,
            n_steps: n as usize,
        })
    }

    pub fn delta(&self) -> f64 {
        self.tau / self.m as f64
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.delta()
    }

    /// `t_k` for `k >= -m`.
    pub fn time(&self, k: isize) -> f64 {
        k as f64 * self.delta()
    }

    /// Number of stored states, `m + n_steps + 1`.
    pub fn len(&self) -> usize {
        self.m + self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The grid `factor` times coarser over the same delay and horizon.
    pub fn coarsen(&self, factor: usize) -> Result<GridSpec> {
        if factor == 0 || !self.m.is_multiple_of(factor) || !self.n_steps.is_multiple_of(factor) {
            return Err(Error::GridIncompatible(format!(
                "grid with m = {} and {} steps cannot be coarsened by {factor}",
                self.m, self.n_steps
            )));
        }
        Ok(GridSpec {
            tau: self.tau,
            m: self.m / factor,
            n_steps: self.n_steps / factor,
        })
    }
}

/// Everything that defines the dynamics of a path apart from the grid and noise.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub rule: TruncationRule,
    pub vol: VolatilityFunction,
    pub initial: InitialSegment,
}

impl Model {
    pub fn new(
        params: ModelParams,
        rule: TruncationRule,
        vol: VolatilityFunction,
        initial: InitialSegment,
    ) -> Result<Self> {
        params.validate().into_result()?;
        Ok(Self {
            params,
            rule,
            vol,
            initial,
        })
    }

    /// Quadratic `mu`, `pi(delta) = delta^(-pi_exponent)`, sigmoid volatility
    /// and constant initial data `xi0`.
    pub fn sigmoid_example(params: ModelParams, pi_exponent: f64, xi0: f64) -> Result<Self> {
        let rule = TruncationRule::with_default_mu(&params, pi_exponent)?;
        Self::new(
            params,
            rule,
            VolatilityFunction::sigmoid(),
            InitialSegment::constant(xi0)?,
        )
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        let rel = (grid.tau - self.params.tau).abs() / self.params.tau;
        if rel > 1e-12 {
            return Err(Error::GridIncompatible(format!(
                "grid delay {} differs from model delay {}",
                grid.tau, self.params.tau
            )));
        }
        Ok(())
    }
}

/// Scheme-specific data prepared once per grid.
#[derive(Debug, Clone, Copy)]
enum Kernel {
    Tem(ClampBounds),
    Bem,
    Em,
}

impl Kernel {
    fn prepare(model: &Model, scheme: Scheme, delta: f64) -> Result<Self> {
        match scheme {
            Scheme::Tem => Ok(Kernel::Tem(model.rule.clamp_bounds(delta)?)),
            Scheme::Bem => {
                check_bem_preconditions(&model.params, delta)?;
                Ok(Kernel::Bem)
            }
            Scheme::Em => Ok(Kernel::Em),
        }
    }

    #[inline]
    fn step(&self, p: &ModelParams, delta: f64, phi: f64, x: f64, db: f64, dn: u32) -> Result<f64> {
        match self {
            Kernel::Tem(bounds) => tem_step_with(p, bounds, phi, x, db, dn),
            Kernel::Bem => bem_step_with(p, delta, phi, x, db, dn),
            Kernel::Em => em_step_with(p, delta, phi, x, db, dn),
        }
    }
}

/// One simulated path with its driving increments.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub grid: GridSpec,
    /// `X(t_k)` for `k = -m..=n_steps`.
    pub states: Vec<f64>,
    pub increments: Increments,
    pub scheme: Scheme,
    pub path_index: u64,
    /// Number of stored states below zero.
    pub negativity_count: usize,
}

impl SimPath {
    /// `X(t_k)` for `k >= -m`.
    pub fn state(&self, k: isize) -> f64 {
        self.states[(k + self.grid.m as isize) as usize]
    }

    /// States at `t_0, ..., t_n`.
    pub fn forward(&self) -> &[f64] {
        &self.states[self.grid.m..]
    }

    /// Writes `k,t,x,dB,dN`, one row per grid point. Rows without a forward
    /// increment (history and the final point) leave `dB` and `dN` empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,t,x,dB,dN")?;
        let m = self.grid.m as isize;
        for (i, x) in self.states.iter().enumerate() {
            let k = i as isize - m;
            let t = self.grid.time(k);
            if k >= 0 && (k as usize) < self.increments.len() {
                let j = k as usize;
                writeln!(
                    w,
                    "{k},{t},{x},{},{}",
                    self.increments.brownian[j], self.increments.jumps[j]
                )?;
            } else {
                writeln!(w, "{k},{t},{x},,")?;
            }
        }
        Ok(())
    }
}

/// Advances a path under `scheme` using the given increments.
pub fn simulate_with_increments(
    model: &Model,
    grid: &GridSpec,
    increments: Increments,
    scheme: Scheme,
    path_index: u64,
) -> Result<SimPath> {
    model.check_grid(grid)?;
    if increments.len() != grid.n_steps || increments.jumps.len() != grid.n_steps {
        return Err(Error::GridIncompatible(format!(
            "{} increments supplied for {} steps",
            increments.len(),
            grid.n_steps
        )));
    }
    let delta = grid.delta();
    let kernel = Kernel::prepare(model, scheme, delta)?;
    let m = grid.m;
    let mut states = Vec::with_capacity(grid.len());
    for i in 0..=m {
        states.push(model.initial.value(grid.time(i as isize - m as isize)));
    }
    for k in 0..grid.n_steps {
        let x = states[m + k];
        let phi = model.vol.eval(states[k]);
        let next = kernel
            .step(
                &model.params,
                delta,
                phi,
                x,
                increments.brownian[k],
                increments.jumps[k],
            )
            .map_err(|e| Error::Step {
                index: k,
                source: Box::new(e),
            })?;
        states.push(next);
    }
    let negativity_count = states.iter().filter(|&&x| x < 0.0).count();
    Ok(SimPath {
        grid: *grid,
        states,
        increments,
        scheme,
        path_index,
        negativity_count,
    })
}

pub fn simulate_path(
    model: &Model,
    grid: &GridSpec,
    noise: &NoiseStream,
    scheme: Scheme,
) -> Result<SimPath> {
    let inc = noise.increments(grid.delta(), model.params.lambda, grid.n_steps)?;
    simulate_with_increments(model, grid, inc, scheme, noise.path_index)
}

/// Coarse and fine paths driven by the same Brownian motion and Poisson
/// process. The coarse step is `2^refinement` fine steps and its increments
/// are sums of the fine ones. Returns `(coarse, fine)`.
pub fn coupled_paths(
    model: &Model,
    grid_fine: &GridSpec,
    refinement: u32,
    noise: &NoiseStream,
    scheme: Scheme,
) -> Result<(SimPath, SimPath)> {
    let factor = 1usize
        .checked_shl(refinement)
        .ok_or_else(|| Error::GridIncompatible(format!("refinement {refinement} too large")))?;
    let mut ladder = coupled_ladder(model, grid_fine, &[factor], noise, scheme, scheme)?;
    let fine = ladder.fine;
    let coarse = ladder.coarse.pop().expect("one rung requested");
    Ok((coarse, fine))
}

/// A fine path and several coarser paths sharing its noise.
#[derive(Debug, Clone)]
pub struct CoupledLadder {
    pub fine: SimPath,
    /// One path per requested coarsening factor, in request order.
    pub coarse: Vec<SimPath>,
}

/// Simulates the fine path with `fine_scheme` and, for each factor, a coarse
/// path with `coarse_scheme` on aggregated increments.
pub fn coupled_ladder(
    model: &Model,
    grid_fine: &GridSpec,
    factors: &[usize],
    noise: &NoiseStream,
    coarse_scheme: Scheme,
    fine_scheme: Scheme,
) -> Result<CoupledLadder> {
    let grids = factors
        .iter()
        .map(|&f| grid_fine.coarsen(f))
        .collect::<Result<Vec<_>>>()?;
    let inc = noise.increments(grid_fine.delta(), model.params.lambda, grid_fine.n_steps)?;
    let coarse = factors
        .iter()
        .zip(&grids)
        .map(|(&f, g)| {
            let agg = inc.aggregate(f)?;
            simulate_with_increments(model, g, agg, coarse_scheme, noise.path_index)
        })
        .collect::<Result<Vec<_>>>()?;
    let fine = simulate_with_increments(model, grid_fine, inc, fine_scheme, noise.path_index)?;
    Ok(CoupledLadder { fine, coarse })
}

/// Runs `f` for every path index in `range` on the current rayon pool and
/// returns the results in index order.
pub fn par_map_paths<T, F>(range: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    range.into_par_iter().map(f).collect()
}

/// Simulates paths `range` with master seed `seed`, in index order.
pub fn simulate_ensemble(
    model: &Model,
    grid: &GridSpec,
    seed: u64,
    range: Range<u64>,
    scheme: Scheme,
) -> Vec<Result<SimPath>> {
    par_map_paths(range, |i| {
        simulate_path(model, grid, &NoiseStream::new(seed, i), scheme)
    })
}
