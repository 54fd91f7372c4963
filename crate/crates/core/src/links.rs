//! Link functions g with derivative g′ and antiderivative Θ (Θ′ = g).

use std::f64::consts::{LN_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default half-width of the operating range on which the sigmoid's
/// derivative bounds are declared.
pub const DEFAULT_SIGMOID_RANGE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    AperiodicMonotone,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Value,
    Derivative,
    Antiderivative,
}

/// A known scalar nonlinearity applied entrywise to linear measurements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Identity,
    /// g(x) = (1 − e^{−x}) / (1 + e^{−x}) = tanh(x/2). `range` is the
    /// half-width of the operating interval used for the derivative bounds.
    Sigmoid {
        range: f64,
    },
    /// g(x) = sin(x), evaluated on the phase reduced modulo 2π.
    Sin,
    /// g(x) = x mod 2π, reported in raw phase.
    Sawtooth,
}

impl Link {
    pub fn sigmoid() -> Self {
        Link::Sigmoid {
            range: DEFAULT_SIGMOID_RANGE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Sigmoid { .. } => "sigmoid",
            Link::Sin => "sin",
            Link::Sawtooth => "sawtooth",
        }
    }

    pub fn kind(&self) -> LinkKind {
        match self {
            Link::Identity | Link::Sigmoid { .. } => LinkKind::AperiodicMonotone,
            Link::Sin | Link::Sawtooth => LinkKind::Periodic,
        }
    }

    pub fn is_periodic(&self) -> bool {
        self.kind() == LinkKind::Periodic
    }

    /// `(l, u)` with `l ≤ g′ ≤ u` on the operating range; `None` for periodic links.
    pub fn derivative_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Link::Identity => Some((1.0, 1.0)),
            Link::Sigmoid { range } => Some((sigmoid_prime(range), 0.5)),
            Link::Sin | Link::Sawtooth => None,
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            Link::Sin | Link::Sawtooth => Some(TAU),
            _ => None,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Link::Identity => x,
            Link::Sigmoid { .. } => (0.5 * x).tanh(),
            // Reducing first makes sin(sawtooth(x)) bitwise equal to sin(x).
            Link::Sin => x.rem_euclid(TAU).sin(),
            Link::Sawtooth => x.rem_euclid(TAU),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Link::Identity | Link::Sawtooth => 1.0,
            Link::Sigmoid { .. } => sigmoid_prime(x),
            Link::Sin => x.rem_euclid(TAU).cos(),
        }
    }

    #[inline]
    pub fn antiderivative(&self, x: f64) -> f64 {
        match self {
            Link::Identity => 0.5 * x * x,
            // 2 ln cosh(x/2) = |x| + 2 ln(1 + e^{−|x|}) − 2 ln 2
            Link::Sigmoid { .. } => {
                let a = x.abs();
                a + 2.0 * (-a).exp().ln_1p() - 2.0 * LN_2
            }
            Link::Sin => 1.0 - x.cos(),
            Link::Sawtooth => {
                let r = x.rem_euclid(TAU);
                let periods = ((x - r) / TAU).round();
                2.0 * PI * PI * periods + 0.5 * r * r
            }
        }
    }

    pub fn eval(&self, mode: EvalMode, x: f64) -> f64 {
        match mode {
            EvalMode::Value => self.value(x),
            EvalMode::Derivative => self.derivative(x),
            EvalMode::Antiderivative => self.antiderivative(x),
        }
    }
}

fn sigmoid_prime(x: f64) -> f64 {
    let t = (0.5 * x).tanh();
    0.5 * (1.0 - t * t)
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Link::Identity),
            "sigmoid" => Ok(Link::sigmoid()),
            "sin" => Ok(Link::Sin),
            "sawtooth" => Ok(Link::Sawtooth),
            other => Err(Error::Config(format!("unknown link '{other}'"))),
        }
    }
}

/// Entrywise evaluation. Rejects non-finite inputs.
pub fn eval_link(link: &Link, mode: EvalMode, x: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite link input {bad}")));
    }
    Ok(x.iter().map(|&v| link.eval(mode, v)).collect())
}

pub fn builtin_links() -> Vec<Link> {
    vec![Link::Identity, Link::sigmoid(), Link::Sin, Link::Sawtooth]
}
