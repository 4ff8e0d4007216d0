//! Margin losses `L(y, f)` and their derivatives in `f`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Hinge,
    Logistic,
    Exponential,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Hinge, LossKind::Logistic, LossKind::Exponential];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::Logistic => "logistic",
            LossKind::Exponential => "exponential",
        }
    }

    /// Loss of score `f` on a point labeled `y` (±1).
    #[inline]
    pub fn value(self, y: f64, f: f64) -> f64 {
        let margin = y * f;
        match self {
            LossKind::Hinge => (1.0 - margin).max(0.0),
            // ln(1 + e^{-z}) = max(-z, 0) + ln(1 + e^{-|z|})
            LossKind::Logistic => (-margin).max(0.0) + (-margin.abs()).exp().ln_1p(),
            LossKind::Exponential => (-margin).exp(),
        }
    }

    /// dL/df. At the hinge kink (`y·f = 1`) this returns 0.
    #[inline]
    pub fn derivative(self, y: f64, f: f64) -> f64 {
        let margin = y * f;
        match self {
            LossKind::Hinge => {
                if margin < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            LossKind::Logistic => -y * sigmoid(-margin),
            LossKind::Exponential => -y * (-margin).exp(),
        }
    }
}

/// 1 / (1 + e^{-z}) without overflow for either sign of `z`.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "logistic" => Ok(LossKind::Logistic),
            "exponential" => Ok(LossKind::Exponential),
            other => Err(Error::InvalidHyperparam(format!("unknown loss `{other}`"))),
        }
    }
}

/// Checked form of [`LossKind::value`].
pub fn loss_value(kind: LossKind, y: i8, f: f64) -> Result<f64> {
    check_args(y, f)?;
    Ok(kind.value(y as f64, f))
}

/// Checked form of [`LossKind::derivative`].
pub fn loss_subgradient(kind: LossKind, y: i8, f: f64) -> Result<f64> {
    check_args(y, f)?;
    Ok(kind.derivative(y as f64, f))
}

fn check_args(y: i8, f: f64) -> Result<()> {
    if y != 1 && y != -1 {
        return Err(Error::InvalidLabel {
            value: y as i64,
            location: "loss argument".into(),
        });
    }
    if !f.is_finite() {
        return Err(Error::NonFinite("loss score".into()));
    }
    Ok(())
}
