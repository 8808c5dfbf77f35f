//! Coefficients of the delay Ait-Sahalia short-rate model with Poisson jumps,
//!
//! ```text
//! dx(t) = f(x(t-)) dt + phi(x((t - tau)-)) g(x(t-)) dB(t) + h(x(t-)) dN(t)
//! f(x)  = a_{-1}/x - a_0 + a_1 x - a_2 x^rho
//! g(x)  = x^theta
//! h(x)  = a_3 x
//! ```
//!
//! together with the delayed volatility map `phi` and the initial segment on
//! `[-tau, 0]`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Largest value of the built-in sigmoid volatility (`sqrt(5)/4`, attained
/// at `y = ln(2 + sqrt(5))`), rounded up.
pub const SIGMOID_SIGMA_BOUND: f64 = 0.5591;

/// `x^e`, using repeated multiplication when `e` is a small integer.
#[inline]
pub(crate) fn pow(x: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() <= 64.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub alpha_m1: f64,
    pub alpha_0: f64,
    pub alpha_1: f64,
    pub alpha_2: f64,
    /// Relative jump size.
    pub alpha_3: f64,
    /// Drift exponent.
    pub rho: f64,
    /// Diffusion exponent.
    pub theta: f64,
    /// Delay.
    pub tau: f64,
    /// Jump intensity (events per unit time).
    pub lambda: f64,
}

impl ModelParams {
    /// Coefficients with the `1/x` floor term: `a_{-1}=0.2, a_0=0.3,
    /// a_1=0.2, a_2=0.5, a_3=1`, quadratic drift, `theta = 5/4` and unit
    /// delay. The intensity is not part of the published table; `0.1` (rare
    /// jumps) is used as the default.
    pub fn table1() -> Self {
        Self {
            alpha_m1: 0.2,
            alpha_0: 0.3,
            alpha_1: 0.2,
            alpha_2: 0.5,
            alpha_3: 1.0,
            rho: 2.0,
            theta: 1.25,
            tau: 1.0,
            lambda: 0.1,
        }
    }

    /// Same as [`ModelParams::table1`] without the floor term.
    pub fn table2() -> Self {
        Self {
            alpha_m1: 0.0,
            ..Self::table1()
        }
    }

    /// Drift `f(x)`; requires `x > 0`.
    pub fn drift(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x <= 0.0 {
            return Err(Error::Domain(format!("drift requires x > 0, got {x}")));
        }
        Ok(self.drift_unchecked(x))
    }

    #[inline]
    pub(crate) fn drift_unchecked(&self, x: f64) -> f64 {
        self.alpha_m1 / x - self.alpha_0 + self.alpha_1 * x - self.alpha_2 * pow(x, self.rho)
    }

    /// Diffusion `g(x) = x^theta`; requires `x >= 0`.
    pub fn diffusion(&self, x: f64) -> Result<f64> {
        if x.is_nan() || x < 0.0 {
            return Err(Error::Domain(format!("diffusion requires x >= 0, got {x}")));
        }
        Ok(self.diffusion_unchecked(x))
    }

    #[inline]
    pub(crate) fn diffusion_unchecked(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            pow(x, self.theta)
        }
    }

    /// Jump coefficient `h(x) = a_3 x`, extended by zero to negative states.
    #[inline]
    pub fn jump(&self, x: f64) -> f64 {
        if x < 0.0 {
            0.0
        } else {
            self.alpha_3 * x
        }
    }

    pub fn validate(&self) -> ValidationReport {
        validate_params(self)
    }
}

/// One violated parameter condition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub condition: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.violations.iter().map(|v| v.condition).collect()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            return Ok(());
        }
        let msg = self
            .violations
            .iter()
            .map(|v| format!("{} ({})", v.condition, v.detail))
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::InvalidParams(msg))
    }
}

pub const COND_RHO: &str = "rho > 1";
pub const COND_THETA: &str = "theta > 1";
pub const COND_GROWTH: &str = "1 + rho > 2 theta";
pub const COND_ALPHA_NONNEG: &str = "alpha_-1, alpha_0, alpha_1 >= 0";
pub const COND_ALPHA2: &str = "alpha_2 > 0";
pub const COND_ALPHA3: &str = "alpha_3 > 0";
pub const COND_TAU: &str = "tau > 0";
pub const COND_LAMBDA: &str = "lambda >= 0";

/// Checks every parameter invariant and names each one that fails.
pub fn validate_params(p: &ModelParams) -> ValidationReport {
    let mut violations = Vec::new();
    let mut check = |ok: bool, condition: &'static str, detail: String| {
        if !ok {
            violations.push(Violation { condition, detail });
        }
    };
    check(p.rho > 1.0, COND_RHO, format!("rho = {}", p.rho));
    check(p.theta > 1.0, COND_THETA, format!("theta = {}", p.theta));
    check(
        1.0 + p.rho > 2.0 * p.theta,
        COND_GROWTH,
        format!("1 + rho = {}, 2 theta = {}", 1.0 + p.rho, 2.0 * p.theta),
    );
    check(
        p.alpha_m1 >= 0.0 && p.alpha_0 >= 0.0 && p.alpha_1 >= 0.0,
        COND_ALPHA_NONNEG,
        format!(
            "alpha_-1 = {}, alpha_0 = {}, alpha_1 = {}",
            p.alpha_m1, p.alpha_0, p.alpha_1
        ),
    );
    check(
        p.alpha_2 > 0.0,
        COND_ALPHA2,
        format!("alpha_2 = {}", p.alpha_2),
    );
    check(
        p.alpha_3 > 0.0,
        COND_ALPHA3,
        format!("alpha_3 = {}", p.alpha_3),
    );
    check(
        p.tau > 0.0 && p.tau.is_finite(),
        COND_TAU,
        format!("tau = {}", p.tau),
    );
    check(
        p.lambda >= 0.0 && p.lambda.is_finite(),
        COND_LAMBDA,
        format!("lambda = {}", p.lambda),
    );
    ValidationReport { violations }
}

/// Sigmoid-type volatility: `(1 + e^y - e^-y) / (2 (e^y + e^-y))` for
/// `y >= 0`, and `1/4` otherwise.
pub fn sigmoid_phi(y: f64) -> f64 {
    if y >= 0.0 {
        let u = (-y).exp();
        0.5 * (u + 1.0 - u * u) / (1.0 + u * u)
    } else {
        0.25
    }
}

type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Delayed volatility map with a declared global bound.
#[derive(Clone)]
pub struct VolatilityFunction {
    eval: Arc<ScalarFn>,
    sigma_bound: f64,
    description: String,
}

impl VolatilityFunction {
    pub fn new<F>(description: impl Into<String>, sigma_bound: f64, eval: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(sigma_bound >= 0.0 && sigma_bound.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "volatility bound must be finite and nonnegative, got {sigma_bound}"
            )));
        }
        Ok(Self {
            eval: Arc::new(eval),
            sigma_bound,
            description: description.into(),
        })
    }

    pub fn sigmoid() -> Self {
        Self {
            eval: Arc::new(sigmoid_phi),
            sigma_bound: SIGMOID_SIGMA_BOUND,
            description: "sigmoid".into(),
        }
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "constant volatility must be finite and nonnegative, got {c}"
            )));
        }
        Self::new(format!("constant({c})"), c, move |_| c)
    }

    /// `phi(y)`, with `phi(y) = phi(0)` for negative arguments.
    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        let y = if y < 0.0 { 0.0 } else { y };
        (self.eval)(y)
    }

    pub fn sigma_bound(&self) -> f64 {
        self.sigma_bound
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    /// Fails if `phi` leaves `[0, sigma]` at any of the sampled points.
    pub fn check_bound(&self, ys: impl IntoIterator<Item = f64>) -> Result<()> {
        for y in ys {
            let v = self.eval(y);
            if !(v >= 0.0 && v <= self.sigma_bound) {
                return Err(Error::InvalidParams(format!(
                    "volatility {} at y = {y} is {v}, outside [0, {}]",
                    self.description, self.sigma_bound
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for VolatilityFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolatilityFunction")
            .field("description", &self.description)
            .field("sigma_bound", &self.sigma_bound)
            .finish()
    }
}

/// Initial data on `[-tau, 0]` with its Hölder metadata.
#[derive(Clone)]
pub struct InitialSegment {
    values: Arc<ScalarFn>,
    holder_gamma: f64,
    holder_const: f64,
    constant: Option<f64>,
}

impl InitialSegment {
    pub fn new<F>(values: F, holder_gamma: f64, holder_const: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(holder_gamma > 0.0 && holder_gamma <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "Hölder exponent must lie in (0, 1], got {holder_gamma}"
            )));
        }
        if !(holder_const >= 0.0 && holder_const.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "Hölder constant must be finite and nonnegative, got {holder_const}"
            )));
        }
        Ok(Self {
            values: Arc::new(values),
            holder_gamma,
            holder_const,
            constant: None,
        })
    }

    /// `xi(t) = value` on the whole segment (Hölder with `gamma = 1`, `K = 0`).
    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "initial value must be positive, got {value}"
            )));
        }
        let mut seg = Self::new(move |_| value, 1.0, 0.0)?;
        seg.constant = Some(value);
        Ok(seg)
    }

    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        (self.values)(t)
    }

    pub fn holder_gamma(&self) -> f64 {
        self.holder_gamma
    }

    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    pub fn constant_value(&self) -> Option<f64> {
        self.constant
    }

    /// Positivity and the Hölder estimate, checked over all pairs of `samples`
    /// equally spaced points of `[-tau, 0]`.
    pub fn check(&self, tau: f64, samples: usize) -> Result<()> {
        let n = samples.max(2);
        let ts: Vec<f64> = (0..n)
            .map(|i| -tau + tau * i as f64 / (n - 1) as f64)
            .collect();
        let xs: Vec<f64> = ts.iter().map(|&t| self.value(t)).collect();
        if let Some((t, x)) = ts
            .iter()
            .zip(&xs)
            .find(|(_, x)| !(**x > 0.0 && x.is_finite()))
        {
            return Err(Error::InvalidParams(format!(
                "initial segment must be positive, xi({t}) = {x}"
            )));
        }
        // relative slack for rounding in the constant evaluation
        let slack = 1e-12;
        for i in 0..n {
            for j in (i + 1)..n {
                let lhs = (xs[i] - xs[j]).abs();
                let rhs = self.holder_const * (ts[j] - ts[i]).powf(self.holder_gamma);
                if lhs > rhs * (1.0 + slack) + slack * xs[i].abs().max(xs[j].abs()) {
                    return Err(Error::InvalidParams(format!(
                        "Hölder estimate fails between t = {} and t = {}: {lhs} > {rhs}",
                        ts[i], ts[j]
                    )));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for InitialSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialSegment")
            .field("constant", &self.constant)
            .field("holder_gamma", &self.holder_gamma)
            .field("holder_const", &self.holder_const)
            .finish()
    }
}
