//! Single-step maps of the three schemes.

use crate::error::{Error, Result};
use crate::model::{ModelParams, VolatilityFunction};
use crate::truncation::{
    truncated_diffusion_with, truncated_drift_with, ClampBounds, TruncationRule,
};

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} step returned {x}")))
    }
}

/// Truncated EM step with the volatility already evaluated at the delayed state.
#[inline]
pub fn tem_step_with(
    params: &ModelParams,
    bounds: &ClampBounds,
    phi_delayed: f64,
    x_now: f64,
    db: f64,
    dn: u32,
) -> Result<f64> {
    let drift = truncated_drift_with(params, bounds, x_now) * bounds.delta;
    let diffusion = phi_delayed * truncated_diffusion_with(params, bounds, x_now) * db;
    let jump = params.jump(x_now) * dn as f64;
    finite(x_now + drift + diffusion + jump, "truncated EM")
}

/// `X' = X + f_D(X) D + phi(X_delayed) g_D(X) dB + h(X) dN`.
#[allow(clippy::too_many_arguments)]
pub fn tem_step(
    params: &ModelParams,
    rule: &TruncationRule,
    vol: &VolatilityFunction,
    delta: f64,
    x_now: f64,
    x_delayed: f64,
    db: f64,
    dn: u32,
) -> Result<f64> {
    let bounds = rule.clamp_bounds(delta)?;
    tem_step_with(params, &bounds, vol.eval(x_delayed), x_now, db, dn)
}

/// Checks that the implicit step applies: no `1/x` term, quadratic drift and
/// `a_1 delta < 1`.
pub fn check_bem_preconditions(params: &ModelParams, delta: f64) -> Result<()> {
    if params.alpha_m1 != 0.0 {
        return Err(Error::Precondition(format!(
            "backward EM needs alpha_-1 = 0, got {}",
            params.alpha_m1
        )));
    }
    if params.rho != 2.0 {
        return Err(Error::Precondition(format!(
            "backward EM needs rho = 2, got {}",
            params.rho
        )));
    }
    if !(params.alpha_1 * delta < 1.0) {
        return Err(Error::Precondition(format!(
            "backward EM needs alpha_1 * delta < 1, got {}",
            params.alpha_1 * delta
        )));
    }
    Ok(())
}

/// Backward EM step, implicit in the drift only. Solves
/// `a_2 D X^2 + (1 - a_1 D) X - C = 0` and returns the larger root, which is
/// the one that tends to `x_now` as `D -> 0`. Preconditions are not rechecked.
#[inline]
pub fn bem_step_with(
    params: &ModelParams,
    delta: f64,
    phi_delayed: f64,
    x_now: f64,
    db: f64,
    dn: u32,
) -> Result<f64> {
    let a = params.alpha_2 * delta;
    let b = 1.0 - params.alpha_1 * delta;
    let c = x_now - params.alpha_0 * delta
        + phi_delayed * params.diffusion_unchecked(x_now.max(0.0)) * db
        + params.jump(x_now) * dn as f64;
    let disc = b * b + 4.0 * a * c;
    if !(disc >= 0.0) {
        return Err(Error::NoRealRoot { discriminant: disc });
    }
    // (-b + sqrt(disc)) / 2a without cancellation; also covers a = 0
    finite(2.0 * c / (b + disc.sqrt()), "backward EM")
}

#[allow(clippy::too_many_arguments)]
pub fn bem_step(
    params: &ModelParams,
    vol: &VolatilityFunction,
    delta: f64,
    x_now: f64,
    x_delayed: f64,
    db: f64,
    dn: u32,
) -> Result<f64> {
    check_bem_preconditions(params, delta)?;
    bem_step_with(params, delta, vol.eval(x_delayed), x_now, db, dn)
}

/// Classical EM step on the untruncated coefficients; fails once the state
/// leaves `(0, inf)`.
#[inline]
pub fn em_step_with(
    params: &ModelParams,
    delta: f64,
    phi_delayed: f64,
    x_now: f64,
    db: f64,
    dn: u32,
) -> Result<f64> {
    let drift = params.drift(x_now)? * delta;
    let diffusion = phi_delayed * params.diffusion(x_now)? * db;
    let jump = params.jump(x_now) * dn as f64;
    finite(x_now + drift + diffusion + jump, "EM")
}

#[allow(clippy::too_many_arguments)]
pub fn em_step(
    params: &ModelParams,
    vol: &VolatilityFunction,
    delta: f64,
    x_now: f64,
    x_delayed: f64,
    db: f64,
    dn: u32,
) -> Result<f64> {
    em_step_with(params, delta, vol.eval(x_delayed), x_now, db, dn)
}
