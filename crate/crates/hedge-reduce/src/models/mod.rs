//! Toy Monte-Carlo market model: exact-scheme geometric Brownian motion
//! with deterministic discounting, forward-mode differentiation of the
//! pathwise discounted payoff, and closed-form oracles.
//!
//! Discounting convention: the on-path value at the observation time is
//! the discounted payoff `V(t) = e^{-r (T - t)} payoff(S(T))`.

pub mod dual;
pub mod rng;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::StateTable;
use crate::tensors::{PrimitiveSensitivities, SensitivityTensor};
use dual::Dual;

/// State variable names produced by [`GbmModel::simulate`].
pub const STATE_SPOT: &str = "S_t";
pub const STATE_TERMINAL: &str = "S_T";
pub const STATE_DISCOUNT: &str = "D_tT";

/// Geometric Brownian motion under the risk-neutral measure, sampled with
/// the exact log-normal scheme at the observation time and the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub spot: f64,
    pub rate: f64,
    pub volatility: f64,
    pub horizon: f64,
    pub observation_time: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl GbmModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0) {
            return Err(Error::Config(format!("spot must be positive, got {}", self.spot)));
        }
        if !(self.volatility >= 0.0) {
            return Err(Error::Config(format!(
                "volatility must be nonnegative, got {}",
                self.volatility
            )));
        }
        if !(self.observation_time >= 0.0 && self.observation_time < self.horizon) {
            return Err(Error::Config(format!(
                "need 0 <= t < T, got t = {}, T = {}",
                self.observation_time, self.horizon
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        Ok(())
    }

    /// Simulate per-path states `S(t)`, `S(T)` and the discount factor
    /// `D(t,T) = e^{-r (T - t)}`. Same seed, same paths.
    pub fn simulate(&self) -> Result<StateTable> {
        self.validate()?;
        let t = self.observation_time;
        let tau = self.horizon - t;
        let drift_t = (self.rate - 0.5 * self.volatility * self.volatility) * t;
        let drift_tau = (self.rate - 0.5 * self.volatility * self.volatility) * tau;
        let vol_t = self.volatility * t.sqrt();
        let vol_tau = self.volatility * tau.sqrt();
        let discount = (-self.rate * tau).exp();

        let rows: Vec<(f64, f64)> = (0..self.n_paths)
            .into_par_iter()
            .map(|l| {
                let z1 = rng::gaussian(self.seed, l as u64, 0);
                let z2 = rng::gaussian(self.seed, l as u64, 1);
                let s_t = self.spot * (drift_t + vol_t * z1).exp();
                let s_cap = s_t * (drift_tau + vol_tau * z2).exp();
                (s_t, s_cap)
            })
            .collect();

        let mut table = StateTable::new(self.n_paths);
        table.add_column(STATE_SPOT, rows.iter().map(|r| r.0).collect())?;
        table.add_column(STATE_TERMINAL, rows.iter().map(|r| r.1).collect())?;
        table.add_column(STATE_DISCOUNT, vec![discount; self.n_paths])?;
        Ok(table)
    }
}

/// Payoff specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProductSpec {
    Forward { strike: f64 },
    EuropeanCall { strike: f64 },
}

impl ProductSpec {
    pub fn strike(&self) -> f64 {
        match self {
            ProductSpec::Forward { strike } | ProductSpec::EuropeanCall { strike } => *strike,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.strike().is_finite() {
            return Err(Error::Config("strike must be finite".into()));
        }
        Ok(())
    }
}

/// Model primitives the sensitivities are seeded against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    /// Spot at the observation time, `S(t)`.
    Spot,
    /// Discount factor `D(t,T)`.
    Discount,
}

impl Primitive {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            STATE_SPOT => Ok(Primitive::Spot),
            STATE_DISCOUNT => Ok(Primitive::Discount),
            other => Err(Error::Config(format!(
                "unknown primitive '{}' (expected '{}' or '{}')",
                other, STATE_SPOT, STATE_DISCOUNT
            ))),
        }
    }
}

/// Hedge instruments as functions of the declared primitives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Instrument {
    /// The stock itself, `P = S(t)`.
    Stock,
    /// Zero-coupon bond with unit notional, `P = D(t,T)`.
    Bond,
    /// `P = factor * S(t)`.
    ScaledStock { factor: f64 },
}

/// Paths whose terminal spot fell inside the relative band around the
/// payoff kink, where the pathwise derivative convention matters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KinkReport {
    pub relative_band: f64,
    pub paths: Vec<usize>,
}

/// Default relative band around the strike for kink reporting.
pub const KINK_BAND: f64 = 1e-3;

fn discounted_payoff(product: &ProductSpec, s_cap: &Dual, discount: &Dual) -> Dual {
    let strike = product.strike();
    let payoff = match product {
        ProductSpec::Forward { .. } => s_cap - strike,
        ProductSpec::EuropeanCall { .. } => (s_cap - strike).max_const(0.0),
    };
    discount * &payoff
}

/// Pathwise primitive sensitivities `b[l][i] = dV(t, path l) / dM_i` via
/// dual-number propagation through the discounted payoff. Also reports
/// paths within the kink band of the strike.
pub fn primitive_sensitivities(
    states: &StateTable,
    product: &ProductSpec,
    primitives: &[Primitive],
) -> Result<(PrimitiveSensitivities, KinkReport)> {
    product.validate()?;
    if primitives.is_empty() {
        return Err(Error::Config("primitive set is empty".into()));
    }
    let s_t = states.column(STATE_SPOT)?;
    let s_cap = states.column(STATE_TERMINAL)?;
    let discount = states.column(STATE_DISCOUNT)?;
    let n_paths = states.n_paths();
    let n = primitives.len();
    let strike = product.strike();

    let mut b = DMatrix::zeros(n_paths, n);
    let mut kinks = Vec::new();
    for l in 0..n_paths {
        let seed = |p: Primitive, value: f64| -> Dual {
            match primitives.iter().position(|&q| q == p) {
                Some(idx) => Dual::variable(value, n, idx),
                None => Dual::constant(value, n),
            }
        };
        let spot_dual = seed(Primitive::Spot, s_t[l]);
        let disc_dual = seed(Primitive::Discount, discount[l]);
        // S(T) as a function of S(t): multiplicative in the fixed
        // Brownian increment, S(T) = S(t) * g_l.
        let growth = s_cap[l] / s_t[l];
        let s_cap_dual = &spot_dual * growth;
        let v = discounted_payoff(product, &s_cap_dual, &disc_dual);
        for i in 0..n {
            b[(l, i)] = v.grad[i];
        }
        if matches!(product, ProductSpec::EuropeanCall { .. })
            && ((s_cap[l] - strike) / strike).abs() < KINK_BAND
        {
            kinks.push(l);
        }
    }
    Ok((
        PrimitiveSensitivities::new(b)?,
        KinkReport {
            relative_band: KINK_BAND,
            paths: kinks,
        },
    ))
}

/// Hedge-instrument sensitivity tensor `A[l][i][j] = dP_j / dM_i`. The
/// instruments here are explicit functions of the primitives, so the
/// Jacobian is path-independent; it is still stored pathwise because the
/// reductions make no such assumption.
pub fn hedge_instrument_sensitivities(
    n_paths: usize,
    primitives: &[Primitive],
    instruments: &[Instrument],
) -> Result<SensitivityTensor> {
    if instruments.is_empty() {
        return Err(Error::Config("instrument set is empty".into()));
    }
    let n = primitives.len();
    let m = instruments.len();
    let entry = |i: usize, j: usize| -> f64 {
        match (&instruments[j], primitives[i]) {
            (Instrument::Stock, Primitive::Spot) => 1.0,
            (Instrument::Bond, Primitive::Discount) => 1.0,
            (Instrument::ScaledStock { factor }, Primitive::Spot) => *factor,
            _ => 0.0,
        }
    };
    SensitivityTensor::from_fn(n_paths, n, m, |_, i, j| entry(i, j))
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Black-Scholes call delta `N(d1)` at `t = 0`. The `sigma = 0` limit is
/// the forward-moneyness indicator.
pub fn analytic_call_delta(model: &GbmModel, strike: f64) -> Result<f64> {
    model.validate()?;
    if model.observation_time != 0.0 {
        return Err(Error::Config(
            "analytic call delta is provided at t = 0 only".into(),
        ));
    }
    let t = model.horizon;
    if model.volatility == 0.0 {
        return Ok(if model.spot * (model.rate * t).exp() > strike {
            1.0
        } else {
            0.0
        });
    }
    let d1 = ((model.spot / strike).ln() + (model.rate + 0.5 * model.volatility * model.volatility) * t)
        / (model.volatility * t.sqrt());
    Ok(norm_cdf(d1))
}
