//! Market primitives, parameter validation and the frictionless baselines.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frictionless market plus the two trading frictions.
///
/// Rates are annualized decimals: `mu = 0.08` means an 8% excess return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Expected excess return of the risky asset per year.
    pub mu: f64,
    /// Volatility per square-root year.
    pub sigma: f64,
    /// Relative risk aversion. Must differ from one.
    pub gamma: f64,
    /// Relative half-spread (proportional cost).
    pub epsilon: f64,
    /// Price-impact coefficient per unit of wealth turnover rate.
    pub lambda: f64,
}

/// A single violated parameter constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    NotFinite(&'static str),
    SigmaNotPositive,
    GammaNotPositive,
    GammaIsOne,
    EpsilonNegative,
    EpsilonTooLarge,
    LambdaNegative,
    MertonWeightNotFinite,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotFinite(name) => write!(f, "{name} must be finite"),
            Violation::SigmaNotPositive => f.write_str("sigma must be positive"),
            Violation::GammaNotPositive => f.write_str("gamma must be positive"),
            Violation::GammaIsOne => {
                f.write_str("gamma must differ from 1 (log utility is not supported)")
            }
            Violation::EpsilonNegative => f.write_str("epsilon must be non-negative"),
            Violation::EpsilonTooLarge => f.write_str("epsilon must be below 1"),
            Violation::LambdaNegative => f.write_str("lambda must be non-negative"),
            Violation::MertonWeightNotFinite => {
                f.write_str("merton weight mu/(gamma*sigma^2) must be finite")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid market parameters: {}", join(.violations))]
pub struct ParamError {
    pub violations: Vec<Violation>,
}

impl ParamError {
    pub fn contains(&self, v: Violation) -> bool {
        self.violations.contains(&v)
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl MarketParams {
    pub fn new(mu: f64, sigma: f64, gamma: f64, epsilon: f64, lambda: f64) -> Self {
        Self {
            mu,
            sigma,
            gamma,
            epsilon,
            lambda,
        }
    }

    /// Checks every constraint and returns the parameters unchanged when they all hold.
    pub fn validate(self) -> Result<Self, ParamError> {
        let mut violations = Vec::new();
        for (name, v) in [
            ("mu", self.mu),
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("epsilon", self.epsilon),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() {
                violations.push(Violation::NotFinite(name));
            }
        }
        if !violations.is_empty() {
            return Err(ParamError { violations });
        }
        if self.sigma <= 0.0 {
            violations.push(Violation::SigmaNotPositive);
        }
        if self.gamma <= 0.0 {
            violations.push(Violation::GammaNotPositive);
        } else if self.gamma == 1.0 {
            violations.push(Violation::GammaIsOne);
        }
        if self.epsilon < 0.0 {
            violations.push(Violation::EpsilonNegative);
        } else if self.epsilon >= 1.0 {
            violations.push(Violation::EpsilonTooLarge);
        }
        if self.lambda < 0.0 {
            violations.push(Violation::LambdaNegative);
        }
        if violations.is_empty() && !self.merton_weight().is_finite() {
            violations.push(Violation::MertonWeightNotFinite);
        }
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(ParamError { violations })
        }
    }

    /// Frictionless optimal risky weight `mu / (gamma sigma^2)`.
    #[inline]
    pub fn merton_weight(&self) -> f64 {
        self.mu / (self.gamma * self.sigma * self.sigma)
    }

    #[inline]
    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// Same market with different frictions.
    pub fn with_frictions(self, epsilon: f64, lambda: f64) -> Self {
        Self {
            epsilon,
            lambda,
            ..self
        }
    }

    pub fn baseline(&self) -> FrictionlessBaseline {
        baseline(self)
    }

    pub fn regime(&self) -> PortfolioRegime {
        degenerate_regime(self)
    }

    /// Lower and upper bound of the achievable equivalent safe rate.
    pub fn esr_bracket(&self) -> (f64, f64) {
        let b = self.baseline();
        (b.full_risky_esr.max(b.full_safe_esr), b.frictionless_esr)
    }
}

/// Closed-form quantities of the market without frictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionlessBaseline {
    pub merton_weight: f64,
    pub frictionless_esr: f64,
    pub full_safe_esr: f64,
    pub full_risky_esr: f64,
}

pub fn baseline(params: &MarketParams) -> FrictionlessBaseline {
    let var = params.variance();
    FrictionlessBaseline {
        merton_weight: params.merton_weight(),
        frictionless_esr: params.mu * params.mu / (2.0 * params.gamma * var),
        full_safe_esr: 0.0,
        full_risky_esr: params.mu - params.gamma * var / 2.0,
    }
}

/// Whether the free-boundary characterization applies or a buy-and-hold corner is optimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortfolioRegime {
    Interior,
    /// Merton weight at or below zero: stay fully in the safe asset.
    FullSafe,
    /// Merton weight at or above one: stay fully in the risky asset.
    FullRisky,
}

impl PortfolioRegime {
    /// Equivalent safe rate of the corner strategy, `None` for the interior case.
    pub fn corner_esr(self, params: &MarketParams) -> Option<f64> {
        match self {
            PortfolioRegime::Interior => None,
            PortfolioRegime::FullSafe => Some(0.0),
            PortfolioRegime::FullRisky => Some(baseline(params).full_risky_esr),
        }
    }
}

pub fn degenerate_regime(params: &MarketParams) -> PortfolioRegime {
    let y = params.merton_weight();
    if y <= 0.0 {
        PortfolioRegime::FullSafe
    } else if y >= 1.0 {
        PortfolioRegime::FullRisky
    } else {
        PortfolioRegime::Interior
    }
}
