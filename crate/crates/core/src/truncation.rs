//! Step-size dependent truncation of the drift and diffusion coefficients.
//!
//! A dominating function `mu` bounds `|f| v g` on `[1/r, r]`; a decreasing
//! map `pi` sends the step size to a coefficient budget. For a step `delta`
//! the state is clamped into `[1/mu^-1(pi(delta)), mu^-1(pi(delta))]` before
//! the coefficients are evaluated, so both truncated maps stay below
//! `pi(delta)` everywhere.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Upper limit used when searching for the admissible step threshold.
pub const DELTA_STAR_CAP: f64 = 0.1;

/// Slack allowed in the `delta^(1/4) pi(delta) <= 1` comparison.
const ADMISSIBILITY_SLACK: f64 = 1e-12;

/// Strictly increasing `mu` with `mu(r) -> inf`, dominating `|f| v g` on `[1/r, r]`.
pub trait DominatingFunction: Send + Sync + fmt::Debug {
    fn mu(&self, r: f64) -> f64;
    fn mu_inv(&self, v: f64) -> f64;
}

/// Strictly decreasing `pi` on `(0, 1)` with `pi(delta) -> inf` as `delta -> 0`.
pub trait StepBudget: Send + Sync + fmt::Debug {
    fn pi(&self, delta: f64) -> f64;
}

/// `mu(u) = scale * u^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerMu {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerMu {
    pub fn new(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Truncation(format!(
                "power mu needs positive scale and exponent, got scale {scale}, exponent {exponent}"
            )));
        }
        Ok(Self { scale, exponent })
    }
}

impl DominatingFunction for PowerMu {
    fn mu(&self, r: f64) -> f64 {
        self.scale * r.powf(self.exponent)
    }

    fn mu_inv(&self, v: f64) -> f64 {
        if self.exponent == 2.0 {
            (v / self.scale).sqrt()
        } else {
            (v / self.scale).powf(1.0 / self.exponent)
        }
    }
}

/// `pi(delta) = delta^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPi {
    pub exponent: f64,
}

impl PowerPi {
    pub fn new(exponent: f64) -> Result<Self> {
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(Error::Truncation(format!(
                "pi exponent must be positive, got {exponent}"
            )));
        }
        Ok(Self { exponent })
    }
}

impl StepBudget for PowerPi {
    fn pi(&self, delta: f64) -> f64 {
        delta.powf(-self.exponent)
    }
}

/// Sum of the coefficient magnitudes, `a_{-1} + a_0 + a_1 + a_2 + a_3`.
pub fn quadratic_mu_scale(params: &ModelParams) -> f64 {
    params.alpha_m1 + params.alpha_0 + params.alpha_1 + params.alpha_2 + params.alpha_3
}

/// Radii on which a dominating function is spot-checked.
pub const DOMINATION_RADII: [f64; 9] = [1.01, 1.5, 2.0, 5.0, 10.0, 50.0, 100.0, 1e3, 1e4];

/// `mu(u) = K u^2` with `K` the coefficient sum, valid for the quadratic
/// drift / `theta <= 2` family. Rejected if the domination spot check fails.
pub fn default_mu(params: &ModelParams) -> Result<PowerMu> {
    let mu = PowerMu::new(quadratic_mu_scale(params), 2.0)?;
    check_domination(params, &mu, &DOMINATION_RADII)?;
    Ok(mu)
}

/// Verifies `sup_{1/r <= x <= r} |f(x)| v g(x) <= mu(r)` on a log grid for
/// each radius.
pub fn check_domination(
    params: &ModelParams,
    mu: &dyn DominatingFunction,
    radii: &[f64],
) -> Result<()> {
    const POINTS: usize = 2001;
    for &r in radii {
        let bound = mu.mu(r);
        let (lo, hi) = ((1.0 / r).ln(), r.ln());
        for i in 0..POINTS {
            let x = (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp();
            let v = params
                .drift_unchecked(x)
                .abs()
                .max(params.diffusion_unchecked(x));
            if !(v <= bound * (1.0 + 1e-12)) {
                return Err(Error::Truncation(format!(
                    "mu does not dominate the coefficients: at r = {r}, x = {x}, |f| v g = {v} > mu(r) = {bound}"
                )));
            }
        }
    }
    Ok(())
}

/// Clamp interval for one step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampBounds {
    pub lower: f64,
    pub upper: f64,
    pub delta: f64,
}

impl ClampBounds {
    /// `lower v (x ^ upper)`, inclusive at both ends.
    #[inline]
    pub fn clamp(&self, x: f64) -> f64 {
        if x <= self.lower {
            self.lower
        } else if x >= self.upper {
            self.upper
        } else {
            x
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Clone)]
pub struct TruncationRule {
    mu: Arc<dyn DominatingFunction>,
    pi: Arc<dyn StepBudget>,
    delta_star: f64,
}

impl fmt::Debug for TruncationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TruncationRule")
            .field("mu", &self.mu)
            .field("pi", &self.pi)
            .field("delta_star", &self.delta_star)
            .finish()
    }
}

impl TruncationRule {
    /// Builds a rule and derives the step threshold with [`find_delta_star`].
    pub fn new(
        params: &ModelParams,
        mu: impl DominatingFunction + 'static,
        pi: impl StepBudget + 'static,
    ) -> Result<Self> {
        let delta_star = find_delta_star(params, &mu, &pi)?;
        Ok(Self {
            mu: Arc::new(mu),
            pi: Arc::new(pi),
            delta_star,
        })
    }

    /// Quadratic `mu` and `pi(delta) = delta^(-pi_exponent)`.
    pub fn with_default_mu(params: &ModelParams, pi_exponent: f64) -> Result<Self> {
        Self::new(params, default_mu(params)?, PowerPi::new(pi_exponent)?)
    }

    /// Uses a caller-chosen threshold instead of the bisection search.
    pub fn with_delta_star(
        mu: impl DominatingFunction + 'static,
        pi: impl StepBudget + 'static,
        delta_star: f64,
    ) -> Result<Self> {
        if !(delta_star > 0.0 && delta_star < 1.0) {
            return Err(Error::Truncation(format!(
                "delta* must lie in (0, 1), got {delta_star}"
            )));
        }
        if !(mu.mu_inv(pi.pi(delta_star)) > 1.0) {
            return Err(Error::Truncation(format!(
                "mu^-1(pi(delta*)) must exceed 1 at delta* = {delta_star}"
            )));
        }
        Ok(Self {
            mu: Arc::new(mu),
            pi: Arc::new(pi),
            delta_star,
        })
    }

    pub fn mu(&self, r: f64) -> f64 {
        self.mu.mu(r)
    }

    pub fn mu_inv(&self, v: f64) -> f64 {
        self.mu.mu_inv(v)
    }

    pub fn pi(&self, delta: f64) -> f64 {
        self.pi.pi(delta)
    }

    pub fn delta_star(&self) -> f64 {
        self.delta_star
    }

    pub fn clamp_bounds(&self, delta: f64) -> Result<ClampBounds> {
        if !(delta > 0.0 && delta <= self.delta_star) {
            return Err(Error::StepSize {
                delta,
                reason: format!("must lie in (0, delta* = {}]", self.delta_star),
            });
        }
        let upper = self.mu_inv(self.pi(delta));
        if !(upper > 1.0 && upper.is_finite()) {
            return Err(Error::StepSize {
                delta,
                reason: format!("mu^-1(pi(delta)) = {upper} must exceed 1"),
            });
        }
        Ok(ClampBounds {
            lower: 1.0 / upper,
            upper,
            delta,
        })
    }

    pub fn verify_pi_admissibility(&self, deltas: &[f64]) -> AdmissibilityReport {
        verify_pi_admissibility(self.pi.as_ref(), deltas)
    }
}

/// Largest `delta <= DELTA_STAR_CAP` with `mu^-1(pi(delta)) > 1` and, when
/// `a_{-1} > 0`, `f > 0` on `(0, delta)`. Found by bisection.
pub fn find_delta_star(
    params: &ModelParams,
    mu: &dyn DominatingFunction,
    pi: &dyn StepBudget,
) -> Result<f64> {
    let ok = |d: f64| -> bool {
        if !(mu.mu_inv(pi.pi(d)) > 1.0) {
            return false;
        }
        params.alpha_m1 <= 0.0 || drift_positive_below(params, d)
    };
    if ok(DELTA_STAR_CAP) {
        return Ok(DELTA_STAR_CAP);
    }
    let mut lo = DELTA_STAR_CAP;
    while !ok(lo) {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::Truncation(
                "no admissible step threshold delta* found above 1e-12".into(),
            ));
        }
    }
    let mut hi = lo * 2.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn drift_positive_below(params: &ModelParams, d: f64) -> bool {
    const POINTS: usize = 512;
    let (lo, hi) = ((d * 1e-9).ln(), d.ln());
    (0..POINTS).all(|i| {
        let x = (lo + (hi - lo) * i as f64 / (POINTS - 1) as f64).exp();
        params.drift_unchecked(x) > 0.0
    })
}

/// `f` evaluated at the clamped state; defined for every real `x`.
#[inline]
pub fn truncated_drift_with(params: &ModelParams, bounds: &ClampBounds, x: f64) -> f64 {
    params.drift_unchecked(bounds.clamp(x))
}

/// `g(min(x, upper))` for `x >= 0`, zero for negative states.
#[inline]
pub fn truncated_diffusion_with(params: &ModelParams, bounds: &ClampBounds, x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        params.diffusion_unchecked(x.min(bounds.upper))
    }
}

pub fn truncated_drift(
    params: &ModelParams,
    rule: &TruncationRule,
    delta: f64,
    x: f64,
) -> Result<f64> {
    Ok(truncated_drift_with(params, &rule.clamp_bounds(delta)?, x))
}

pub fn truncated_diffusion(
    params: &ModelParams,
    rule: &TruncationRule,
    delta: f64,
    x: f64,
) -> Result<f64> {
    Ok(truncated_diffusion_with(
        params,
        &rule.clamp_bounds(delta)?,
        x,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmissibilityEntry {
    pub delta: f64,
    /// `delta^(1/4) * pi(delta)`.
    pub product: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmissibilityReport {
    pub entries: Vec<AdmissibilityEntry>,
}

impl AdmissibilityReport {
    pub fn all_admissible(&self) -> bool {
        self.entries.iter().all(|e| e.admissible)
    }

    pub fn warnings(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| !e.admissible)
            .map(|e| {
                format!(
                    "pi budget too large at delta = {}: delta^(1/4) * pi(delta) = {} > 1",
                    e.delta, e.product
                )
            })
            .collect()
    }
}

/// Checks `delta^(1/4) pi(delta) <= 1` for each step size. Violations are
/// reported, never fatal.
pub fn verify_pi_admissibility(pi: &dyn StepBudget, deltas: &[f64]) -> AdmissibilityReport {
    let entries = deltas
        .iter()
        .map(|&delta| {
            let product = delta.powf(0.25) * pi.pi(delta);
            AdmissibilityEntry {
                delta,
                product,
                admissible: product <= 1.0 + ADMISSIBILITY_SLACK,
            }
        })
        .collect();
    AdmissibilityReport { entries }
}
