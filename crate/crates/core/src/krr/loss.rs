use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss `L(y, f)` between a response and a prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    /// `(y - f)²`
    Squared,
    /// `log(1 + exp(-y f))`, labels ±1
    Logistic,
    /// `exp(-y f)`, labels ±1
    Exponential,
    /// `ρ_τ(y - f)` with `ρ_τ(u) = u (τ - 1{u < 0})`
    Check { tau: f64 },
    /// `½u²` for `|u| ≤ threshold`, `threshold (|u| - threshold/2)` beyond, with `u = y - f`
    Huber { threshold: f64 },
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::Squared
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Check { tau } if !(tau > 0.0 && tau < 1.0) => {
                Err(Error::contract(format!("check loss needs 0 < tau < 1, got {tau}")))
            }
            LossSpec::Huber { threshold } if !(threshold.is_finite() && threshold > 0.0) => Err(
                Error::contract(format!("Huber threshold must be positive, got {threshold}")),
            ),
            _ => Ok(()),
        }
    }

    /// Margin losses expect labels in {-1, +1}.
    pub fn is_margin(&self) -> bool {
        matches!(self, LossSpec::Logistic | LossSpec::Exponential)
    }

    pub fn check_responses(&self, y: &[f64]) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("responses must be finite"));
        }
        if self.is_margin() && y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::contract(
                "logistic and exponential losses need labels in {-1, +1}",
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn value(&self, y: f64, f: f64) -> f64 {
        match *self {
            LossSpec::Squared => (y - f) * (y - f),
            LossSpec::Logistic => softplus(-y * f),
            LossSpec::Exponential => (-y * f).exp(),
            LossSpec::Check { tau } => {
                let u = y - f;
                if u < 0.0 {
                    (tau - 1.0) * u
                } else {
                    tau * u
                }
            }
            LossSpec::Huber { threshold } => {
                let a = (y - f).abs();
                if a <= threshold {
                    0.5 * a * a
                } else {
                    threshold * (a - 0.5 * threshold)
                }
            }
        }
    }

    /// Derivative (or chosen subgradient) of `L(y, ·)` at `f`. For the check
    /// loss the residual subgradient is `τ - 1` for `u ≤ 0` and `τ` for `u > 0`.
    #[inline]
    pub fn derivative(&self, y: f64, f: f64) -> f64 {
        match *self {
            LossSpec::Squared => 2.0 * (f - y),
            LossSpec::Logistic => -y * sigmoid(-y * f),
            LossSpec::Exponential => -y * (-y * f).exp(),
            LossSpec::Check { tau } => {
                let u = y - f;
                if u > 0.0 {
                    -tau
                } else {
                    1.0 - tau
                }
            }
            LossSpec::Huber { threshold } => {
                let u = y - f;
                -u.clamp(-threshold, threshold)
            }
        }
    }

    pub fn mean(&self, y: &[f64], f: &[f64]) -> f64 {
        y.iter().zip(f).map(|(&a, &b)| self.value(a, b)).sum::<f64>() / y.len() as f64
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
