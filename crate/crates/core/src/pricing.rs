//! Monte Carlo valuation on simulated short-rate paths.
//!
//! Both instruments read the piecewise-constant step process, so the
//! discount integral is the left-endpoint sum `delta * sum_{k<n} X_k` and the
//! barrier is monitored at grid points.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::path_engine::SimPath;
use crate::stats::RunningStats;

/// Zero-coupon bond paying 1 at `maturity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondSpec {
    pub maturity: f64,
}

/// Up-and-out call on the short rate, undiscounted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptionSpec {
    pub expiry: f64,
    pub strike: f64,
    /// `None` means the payoff is never knocked out.
    pub barrier: Option<f64>,
}

impl BondSpec {
    pub fn new(maturity: f64) -> Result<Self> {
        if !(maturity > 0.0 && maturity.is_finite()) {
            return Err(Error::Precondition(format!(
                "bond maturity must be positive, got {maturity}"
            )));
        }
        Ok(Self { maturity })
    }
}

impl BarrierOptionSpec {
    pub fn new(expiry: f64, strike: f64, barrier: Option<f64>) -> Result<Self> {
        if !(expiry > 0.0 && expiry.is_finite()) {
            return Err(Error::Precondition(format!(
                "option expiry must be positive, got {expiry}"
            )));
        }
        if !(strike >= 0.0 && strike.is_finite()) {
            return Err(Error::Precondition(format!(
                "strike must be nonnegative, got {strike}"
            )));
        }
        if let Some(b) = barrier {
            if !(b > 0.0) {
                return Err(Error::Precondition(format!(
                    "barrier must be positive, got {b}"
                )));
            }
        }
        Ok(Self {
            expiry,
            strike,
            barrier,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceEstimate {
    pub value: f64,
    pub ci_halfwidth: f64,
    pub n_paths: usize,
    pub delta: f64,
}

impl PriceEstimate {
    pub fn ci_lo(&self) -> f64 {
        self.value - self.ci_halfwidth
    }

    pub fn ci_hi(&self) -> f64 {
        self.value + self.ci_halfwidth
    }
}

/// Number of grid steps up to `horizon`.
fn steps_to(path: &SimPath, horizon: f64) -> Result<usize> {
    let delta = path.grid.delta();
    let steps = horizon / delta;
    let n = steps.round();
    if (steps - n).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::Horizon {
            requested: horizon,
            available: path.grid.horizon(),
        });
    }
    if n as usize > path.grid.n_steps {
        return Err(Error::Horizon {
            requested: horizon,
            available: path.grid.horizon(),
        });
    }
    Ok(n as usize)
}

/// `exp(-delta * sum_{k=0}^{n-1} X(t_k))`.
pub fn bond_discount(path: &SimPath, spec: &BondSpec) -> Result<f64> {
    let n = steps_to(path, spec.maturity)?;
    let integral: f64 = path.forward()[..n].iter().sum::<f64>() * path.grid.delta();
    Ok((-integral).exp())
}

/// `(X(T) - E)^+` if the grid maximum on `[0, T]` stays below the barrier, else 0.
pub fn barrier_payoff(path: &SimPath, spec: &BarrierOptionSpec) -> Result<f64> {
    let n = steps_to(path, spec.expiry)?;
    let fwd = &path.forward()[..=n];
    if let Some(b) = spec.barrier {
        let running_max = fwd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(running_max < b) {
            return Ok(0.0);
        }
    }
    Ok((fwd[n] - spec.strike).max(0.0))
}

#[derive(Debug, Clone)]
pub struct PriceAccumulator {
    delta: Option<f64>,
    stats: RunningStats,
}

impl Default for PriceAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl PriceAccumulator {
    pub fn new() -> Self {
        Self {
            delta: None,
            stats: RunningStats::new(),
        }
    }

    pub fn push(&mut self, delta: f64, payoff: f64) -> Result<()> {
        match self.delta {
            Some(d) if d != delta => {
                return Err(Error::Mismatch(format!(
                    "ensemble mixes step sizes {d} and {delta}"
                )))
            }
            _ => self.delta = Some(delta),
        }
        self.stats.push(payoff);
        Ok(())
    }

    pub fn finish(&self) -> Result<PriceEstimate> {
        let delta = self.delta.ok_or(Error::InsufficientSample {
            usable: 0,
            required: 1,
        })?;
        Ok(PriceEstimate {
            value: self.stats.mean(),
            ci_halfwidth: self.stats.ci_halfwidth(),
            n_paths: self.stats.count() as usize,
            delta,
        })
    }
}

fn price_with<F>(paths: &[SimPath], payoff: F) -> Result<PriceEstimate>
where
    F: Fn(&SimPath) -> Result<f64>,
{
    let mut order: Vec<&SimPath> = paths.iter().collect();
    order.sort_by_key(|p| p.path_index);
    let mut acc = PriceAccumulator::new();
    for p in order {
        acc.push(p.grid.delta(), payoff(p)?)?;
    }
    acc.finish()
}

pub fn price_bond(paths: &[SimPath], spec: &BondSpec) -> Result<PriceEstimate> {
    price_with(paths, |p| bond_discount(p, spec))
}

pub fn price_barrier(paths: &[SimPath], spec: &BarrierOptionSpec) -> Result<PriceEstimate> {
    price_with(paths, |p| barrier_payoff(p, spec))
}

/// One row of the price table.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceRow {
    pub instrument: String,
    pub estimate: PriceEstimate,
}

/// `instrument,delta,n_paths,value,ci_lo,ci_hi`.
pub fn write_price_csv<W: Write>(rows: &[PriceRow], mut w: W) -> io::Result<()> {
    writeln!(w, "instrument,delta,n_paths,value,ci_lo,ci_hi")?;
    for r in rows {
        let e = &r.estimate;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.instrument,
            e.delta,
            e.n_paths,
            e.value,
            e.ci_lo(),
            e.ci_hi()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::{GridSpec, Increments, Scheme};

    fn path(index: u64, states_fwd: &[f64], m: usize) -> SimPath {
        let n = states_fwd.len() - 1;
        let grid = GridSpec {
            tau: 1.0,
            m,
            n_steps: n,
        };
        let mut states = vec![states_fwd[0]; m];
        states.extend_from_slice(states_fwd);
        SimPath {
            grid,
            states,
            increments: Increments {
                brownian: vec![0.0; n],
                jumps: vec![0; n],
            },
            scheme: Scheme::Tem,
            path_index: index,
            negativity_count: 0,
        }
    }

    #[test]
    fn bond_constant_rate() {
        let paths: Vec<SimPath> = (0..3).map(|i| path(i, &[0.05; 1001], 1000)).collect();
        let est = price_bond(&paths, &BondSpec::new(1.0).unwrap()).unwrap();
        assert!((est.value - (-0.05f64).exp()).abs() < 1e-12);
        assert_eq!(est.ci_halfwidth, 0.0);
        let zero: Vec<SimPath> = (0..3).map(|i| path(i, &[0.0; 11], 10)).collect();
        assert_eq!(
            price_bond(&zero, &BondSpec::new(1.0).unwrap())
                .unwrap()
                .value,
            1.0
        );
    }

    #[test]
    fn bond_uses_left_endpoints() {
        // states 1, 2, 3, 4 on delta = 0.5: integral over [0, 1.5] = 0.5 * (1 + 2 + 3)
        let p = path(0, &[1.0, 2.0, 3.0, 4.0], 2);
        let d = bond_discount(&p, &BondSpec::new(1.5).unwrap()).unwrap();
        assert!((d - (-3.0f64).exp()).abs() < 1e-15);
        assert!(matches!(
            bond_discount(&p, &BondSpec::new(2.0).unwrap()),
            Err(Error::Horizon { .. })
        ));
        assert!(bond_discount(&p, &BondSpec::new(0.7).unwrap()).is_err());
    }

    #[test]
    fn barrier_cases() {
        let flat: Vec<SimPath> = (0..5).map(|i| path(i, &[0.2; 11], 10)).collect();
        let spec = BarrierOptionSpec::new(1.0, 0.1, Some(0.3)).unwrap();
        let est = price_barrier(&flat, &spec).unwrap();
        assert!((est.value - 0.1).abs() < 1e-15);
        assert_eq!(est.ci_halfwidth, 0.0);
        let knocked = BarrierOptionSpec::new(1.0, 0.0, Some(0.2)).unwrap();
        assert_eq!(price_barrier(&flat, &knocked).unwrap().value, 0.0);

        let p = path(0, &[0.2, 0.9, 0.4], 2);
        let open = BarrierOptionSpec::new(1.0, 0.1, None).unwrap();
        assert!((barrier_payoff(&p, &open).unwrap() - 0.3).abs() < 1e-15);
        let low = BarrierOptionSpec::new(1.0, 0.1, Some(0.8)).unwrap();
        assert_eq!(barrier_payoff(&p, &low).unwrap(), 0.0);
        // monitoring stops at expiry
        let late_breach = path(1, &[0.2, 0.3, 0.9], 2);
        let early = BarrierOptionSpec::new(0.5, 0.1, Some(0.5)).unwrap();
        assert!((barrier_payoff(&late_breach, &early).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(barrier_payoff(&p, &early).unwrap(), 0.0);
    }

    #[test]
    fn spec_validation() {
        assert!(BondSpec::new(0.0).is_err());
        assert!(BarrierOptionSpec::new(1.0, -0.1, None).is_err());
        assert!(BarrierOptionSpec::new(1.0, 0.1, Some(0.0)).is_err());
        assert!(price_bond(&[], &BondSpec::new(1.0).unwrap()).is_err());
    }

    #[test]
    fn csv_rows() {
        let rows = vec![PriceRow {
            instrument: "bond".into(),
            estimate: PriceEstimate {
                value: 0.5,
                ci_halfwidth: 0.25,
                n_paths: 10,
                delta: 0.001,
            },
        }];
        let mut buf = Vec::new();
        write_price_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "instrument,delta,n_paths,value,ci_lo,ci_hi\nbond,0.001,10,0.5,0.25,0.75\n"
        );
    }
}
