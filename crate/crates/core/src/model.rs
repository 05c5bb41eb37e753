//! Market/loan parameters, payoff, regime classification, and the closed-form
//! constraints each regime imposes on the redemption region.
//!
//! Volatility is normalized to one and is not configurable; callers with a
//! different volatility must rescale drifts and rates before constructing
//! [`ModelParams`].

use std::fmt;

use crate::error::{Error, Result};

/// Market and loan parameters.
///
/// `a` and `b` are the bull/bear net drifts (per year) of the collateral,
/// `gamma` the loan rate, `r` the risk-free rate, `k` the loan principal and
/// `maturity` the horizon in years. The drift spread `a - b` must be strictly
/// positive and `gamma > r` is required throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub r: f64,
    pub k: f64,
    pub maturity: f64,
}

impl ModelParams {
    /// Validates and returns the parameter record.
    pub fn new(a: f64, b: f64, gamma: f64, r: f64, k: f64, maturity: f64) -> Result<Self> {
        ModelParams {
            a,
            b,
            gamma,
            r,
            k,
            maturity,
        }
        .validated()
    }

    /// Returns `self` iff every parameter invariant holds, otherwise a
    /// `Domain` error naming the violated inequality.
    pub fn validated(self) -> Result<Self> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("gamma", self.gamma),
            ("r", self.r),
            ("K", self.k),
            ("T", self.maturity),
        ] {
            if !v.is_finite() {
                return Err(Error::domain(format!("{name} must be finite, got {v}")));
            }
        }
        if self.delta() <= 0.0 {
            return Err(Error::domain(format!(
                "drift spread must be positive: a - b = {} <= 0",
                self.delta()
            )));
        }
        if self.gamma <= self.r {
            return Err(Error::domain(format!(
                "loan rate must exceed the risk-free rate: gamma = {} <= r = {}",
                self.gamma, self.r
            )));
        }
        if self.k <= 0.0 {
            return Err(Error::domain(format!(
                "principal must be positive: K = {} <= 0",
                self.k
            )));
        }
        if self.maturity <= 0.0 {
            return Err(Error::domain(format!(
                "maturity must be positive: T = {} <= 0",
                self.maturity
            )));
        }
        Ok(self)
    }

    /// Drift spread between the bull and bear trends.
    pub fn delta(&self) -> f64 {
        self.a - self.b
    }

    /// Redemption payoff in discounted-price units, `(x - K)^+`.
    pub fn payoff(&self, x: f64) -> f64 {
        (x - self.k).max(0.0)
    }

    /// Maps a spot price to the discounted coordinate `x = e^{-gamma t} s`.
    pub fn discount_price(&self, s: f64, t: f64) -> f64 {
        (-self.gamma * t).exp() * s
    }

    /// Recovers the undiscounted value `V = e^{gamma t} u` from a value-surface
    /// sample `u` at time `t`.
    pub fn undiscount_value(&self, u: f64, t: f64) -> f64 {
        (self.gamma * t).exp() * u
    }

    /// Analytic upper bound on the price extent of the contact set, used when
    /// sizing truncated domains: `(gamma - r)/(b - r) * K` when `b > r`, else
    /// `K` (regimes whose contact set is unbounded are truncated at the grid).
    pub fn contact_upper_bound(&self) -> f64 {
        if self.b > self.r {
            self.k * ((self.gamma - self.r) / (self.b - self.r)).max(1.0)
        } else {
            self.k
        }
    }
}

/// Exhaustive drift/rate regimes; exactly one holds for valid parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeId {
    /// `b >= gamma`: the loan rate is below even the bear drift.
    Case0,
    /// `r >= a`: the risk-free rate dominates even the bull drift.
    Case1,
    /// `gamma > b > r`.
    Case2,
    /// `gamma > r > b` and `a > r`.
    Case3,
    /// `gamma > r = b`.
    Case4,
}

impl fmt::Display for RegimeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegimeId::Case0 => "Case0",
            RegimeId::Case1 => "Case1",
            RegimeId::Case2 => "Case2",
            RegimeId::Case3 => "Case3",
            RegimeId::Case4 => "Case4",
        };
        f.write_str(s)
    }
}

/// Classification of a parameter set, including whether the bull drift
/// exceeds the loan rate (relevant in cases 2-4).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeCase {
    pub id: RegimeId,
    pub high_bull: bool,
}

impl fmt::Display for RegimeCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "case={} high_bull={}", self.id, self.high_bull)
    }
}

/// Returns the unique regime matching `params`.
///
/// Comparisons are exact: `r = b` selects `Case4` only under exact floating
/// equality. Callers wanting near-equality must snap their inputs first.
pub fn classify_regime(params: &ModelParams) -> RegimeCase {
    let high_bull = params.a > params.gamma;
    let id = if params.b >= params.gamma {
        RegimeId::Case0
    } else if params.r >= params.a {
        RegimeId::Case1
    } else if params.b > params.r {
        RegimeId::Case2
    } else if params.b == params.r {
        RegimeId::Case4
    } else {
        RegimeId::Case3
    };
    RegimeCase { id, high_bull }
}

/// Point predicate over `(x, pi)`, decidable at any grid node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Predicate {
    /// `x <= level`.
    PriceAtMost(f64),
    /// `pi >= level`.
    BeliefAtLeast(f64),
    /// `pi > coef / x + offset`.
    BeliefAboveHyperbola { coef: f64, offset: f64 },
}

impl Predicate {
    pub fn holds(&self, x: f64, pi: f64) -> bool {
        self.holds_with_margin(x, pi, 0.0)
    }

    /// Like [`Predicate::holds`], but belief thresholds are pushed out by
    /// `margin` (grid checks give one belief cell of slack, since a node
    /// arbitrarily close to the analytic envelope cannot be classified at
    /// finite resolution).
    pub fn holds_with_margin(&self, x: f64, pi: f64, margin: f64) -> bool {
        match *self {
            Predicate::PriceAtMost(level) => x <= level,
            Predicate::BeliefAtLeast(level) => pi >= level + margin,
            Predicate::BeliefAboveHyperbola { coef, offset } => pi > coef / x + offset + margin,
        }
    }
}

/// One analytic inclusion the computed solution must satisfy.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// Every node satisfying the predicate lies in the continuation region.
    ContinuationIncludes(Predicate),
    /// The redemption region is empty.
    RedeemEmpty,
    /// Redemption happens only at prices strictly above the principal.
    RedeemAboveK,
    /// The lower price boundary exceeds `K` wherever it exists.
    LowerBoundaryAboveK,
    /// The upper price boundary stays strictly below the level.
    UpperBoundaryBelow(f64),
    /// No upper price boundary: contact intervals reach the domain edge.
    UpperBoundaryAbsent,
    /// The critical belief stays strictly below the level.
    CriticalBeliefBelow(f64),
    /// The critical belief is positive at the largest interior price node for
    /// every fixed time before maturity.
    CriticalBeliefPositiveFarField,
}

/// Constraint plus a human-readable tag explaining where it comes from.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionConstraint {
    pub kind: ConstraintKind,
    pub tag: String,
}

impl RegionConstraint {
    fn new(kind: ConstraintKind, tag: &str) -> Self {
        RegionConstraint {
            kind,
            tag: tag.to_string(),
        }
    }
}

impl fmt::Display for RegionConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} [{}]", self.kind, self.tag)
    }
}

/// Emits the full list of analytic inclusions the computed solution must
/// satisfy in the given regime.
pub fn theoretical_constraints(case: &RegimeCase, params: &ModelParams) -> Vec<RegionConstraint> {
    let delta = params.delta();
    let mut out = vec![
        RegionConstraint::new(
            ConstraintKind::ContinuationIncludes(Predicate::PriceAtMost(params.k)),
            "holding is always strictly better at prices at or below the principal",
        ),
        RegionConstraint::new(
            ConstraintKind::RedeemAboveK,
            "redemption requires positive payoff, hence x > K",
        ),
    ];
    match case.id {
        RegimeId::Case0 => {
            out.push(RegionConstraint::new(
                ConstraintKind::RedeemEmpty,
                "bear drift at or above the loan rate: never redeem early",
            ));
        }
        RegimeId::Case1 => {
            out.push(RegionConstraint::new(
                ConstraintKind::UpperBoundaryAbsent,
                "risk-free rate dominates the bull drift: redeem at all high prices",
            ));
        }
        RegimeId::Case2 => {
            out.push(RegionConstraint::new(
                ConstraintKind::LowerBoundaryAboveK,
                "contact starts strictly above the principal",
            ));
            out.push(RegionConstraint::new(
                ConstraintKind::UpperBoundaryBelow(
                    (params.gamma - params.r) / (params.b - params.r) * params.k,
                ),
                "loss of loan-rate carry caps the contact interval",
            ));
            if case.high_bull {
                out.push(RegionConstraint::new(
                    ConstraintKind::ContinuationIncludes(Predicate::BeliefAtLeast(
                        (params.gamma - params.b) / delta,
                    )),
                    "confident bull beliefs make the expected drift beat the loan rate",
                ));
            }
        }
        RegimeId::Case3 => {
            out.push(RegionConstraint::new(
                ConstraintKind::ContinuationIncludes(Predicate::BeliefAboveHyperbola {
                    coef: (params.gamma - params.r) * params.k / delta,
                    offset: (params.r - params.b) / delta,
                }),
                "expected drift premium beats the loan-rate cost above this belief curve",
            ));
            if case.high_bull {
                out.push(RegionConstraint::new(
                    ConstraintKind::CriticalBeliefBelow((params.gamma - params.b) / delta),
                    "critical belief capped when the bull drift exceeds the loan rate",
                ));
            }
        }
        RegimeId::Case4 => {
            out.push(RegionConstraint::new(
                ConstraintKind::ContinuationIncludes(Predicate::BeliefAboveHyperbola {
                    coef: (params.gamma - params.r) * params.k / delta,
                    offset: 0.0,
                }),
                "bear drift equals the risk-free rate: hyperbolic continuation envelope",
            ));
            if case.high_bull {
                out.push(RegionConstraint::new(
                    ConstraintKind::CriticalBeliefBelow((params.gamma - params.r) / delta),
                    "critical belief capped when the bull drift exceeds the loan rate",
                ));
            }
            out.push(RegionConstraint::new(
                ConstraintKind::CriticalBeliefPositiveFarField,
                "redemption persists at arbitrarily high prices for low bull beliefs",
            ));
        }
    }
    out
}
