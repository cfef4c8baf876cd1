//! Ten-component antiviral immune-response model with five discrete delays.
//!
//! The state tracks an infection and the two immune branches fighting it:
//!
//! ```text
//! v1   free virus load
//! v2   antigen-stimulated macrophages
//! v3   cellular-branch helper cells        (delay τ3, resting level X3*)
//! v4   humoral-branch helper cells         (delay τ4, resting level X4*)
//! v5   cytotoxic effector cells            (delay τ5, resting level X5*)
//! v6   B lymphocytes                       (delay τ6, resting level X6*)
//! v7   plasma cells                        (delay τ7, resting level X7*)
//! v8   antibodies                          (resting level ρ8·X7*/α8)
//! v9   infected-cell fraction of the organ
//! v10  destroyed-cell fraction of the organ
//! ```
//!
//! Immune production terms are modulated by a non-increasing organ-efficiency
//! factor ξ(v10) with ξ(0) = 1 and ξ(1) = 0: the more of the organ is
//! destroyed, the weaker the response. Production also lags by the delays
//! τ3..τ7, which is what makes the system a delay differential equation.
//!
//! Two coordinate frames are provided:
//!
//! * **original** — raw quantities `x`, with the healthy stationary point
//!   `X* = (0, 0, X3*, X4*, X5*, X6*, X7*, ρ8·X7*/α8, 0, 0)`;
//! * **shifted** — deviations `y = x − X*`, so the stationary point sits at
//!   the origin. All stability machinery works in this frame.
//!
//! The stationary point is exponentially stable when the virus/infected-cell
//! block of the linearization wins against replication:
//! `a11·a99 > a19·a91` (see [`check_stability_condition`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Overshoot of the unit interval tolerated by the integrator-facing RHS
/// variants when evaluating the efficiency factor on component 10.
/// Integration rounding can push the component a few ulps past a boundary;
/// anything larger than this is a genuine domain escape and stays an error.
pub const XI_OVERSHOOT_TOL: f64 = 1e-12;

// ======================== Errors ========================

/// Errors from parameter validation and right-hand-side evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// A model parameter failed the strict-positivity requirement.
    #[error("parameter `{name}` must be a strictly positive finite real (got {value})")]
    NonPositiveParameter {
        /// Configuration-file name of the offending parameter.
        name: &'static str,
        /// Value that was rejected.
        value: f64,
    },
    /// The organ-efficiency factor was evaluated outside its domain [0, 1].
    #[error("efficiency argument {u} lies outside [0, 1]; the destroyed-cell fraction has left its domain")]
    XiDomain {
        /// Offending argument.
        u: f64,
    },
    /// A user-supplied efficiency table violates the shape invariants.
    #[error("invalid efficiency table: {reason}")]
    XiTable {
        /// Human-readable description of the violated invariant.
        reason: String,
    },
}

// ======================== State vector ========================

/// State of the ten-component model at one instant.
///
/// Component `j` of the mathematics is index `j - 1` here; the inner array is
/// public so right-hand sides can destructure it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub [f64; 10]);

impl StateVector {
    /// The origin (used as the stationary point of the shifted frame).
    pub const ZERO: Self = Self([0.0; 10]);

    /// Largest absolute component.
    #[must_use]
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute componentwise difference to `other`.
    #[must_use]
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let mut m = 0.0f64;
        for j in 0..10 {
            m = m.max((self.0[j] - other.0[j]).abs());
        }
        m
    }

    /// `self + c * other`, the workhorse of Runge–Kutta stage arithmetic.
    #[must_use]
    pub fn add_scaled(&self, c: f64, other: &Self) -> Self {
        let mut out = self.0;
        for j in 0..10 {
            out[j] += c * other.0[j];
        }
        Self(out)
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

impl std::ops::Add for StateVector {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        self.add_scaled(1.0, &rhs)
    }
}

impl std::ops::Sub for StateVector {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self.add_scaled(-1.0, &rhs)
    }
}

impl std::ops::Mul<f64> for StateVector {
    type Output = Self;

    fn mul(self, c: f64) -> Self {
        Self(self.0.map(|v| v * c))
    }
}

// ======================== Parameters ========================

/// Rate constants, delays, and resting levels of the model.
///
/// Every field must be strictly positive and finite (checked by
/// [`ModelParameters::validate`]). Serialized field names match the
/// configuration file exactly (`bigM`, `bigC` for the two capacities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParameters {
    /// Virus release per infected-cell death (natural path).
    pub nu: f64,
    /// Virus release per infected-cell kill by effectors.
    pub n: f64,
    /// Effector–infected-cell kill rate.
    pub b95: f64,
    /// Virus neutralization rate by antibodies.
    pub gamma18: f64,
    /// Virus absorption rate by macrophages.
    pub gamma12: f64,
    /// Macrophage capacity.
    #[serde(rename = "bigM")]
    pub big_m: f64,
    /// Virus uptake rate by healthy target cells.
    pub gamma19: f64,
    /// Target-organ cell capacity.
    #[serde(rename = "bigC")]
    pub big_c: f64,
    /// Macrophage stimulation rate per unit virus.
    pub gamma21: f64,
    /// Stimulated-macrophage decay rate.
    pub alpha2: f64,
    /// Cellular-helper stimulation coefficient.
    pub b32: f64,
    /// Cellular-helper production gain.
    pub rho32: f64,
    /// Cellular-helper consumption in effector production.
    pub b3: f64,
    /// Cellular-helper relaxation rate to the resting level.
    pub alpha3: f64,
    /// Humoral-helper stimulation coefficient.
    pub b42: f64,
    /// Humoral-helper production gain.
    pub rho42: f64,
    /// Humoral-helper consumption in B-cell production.
    pub b4: f64,
    /// Humoral-helper relaxation rate.
    pub alpha4: f64,
    /// Effector stimulation coefficient.
    pub b5: f64,
    /// Effector production gain.
    pub rho5: f64,
    /// Effector loss rate in kills of infected cells.
    pub b59: f64,
    /// Effector relaxation rate.
    pub alpha5: f64,
    /// B-cell stimulation coefficient.
    pub b6: f64,
    /// B-cell production gain.
    pub rho6: f64,
    /// B-cell relaxation rate.
    pub alpha6: f64,
    /// Plasma-cell stimulation coefficient.
    pub b7: f64,
    /// Plasma-cell production gain.
    pub rho7: f64,
    /// Plasma-cell relaxation rate.
    pub alpha7: f64,
    /// Antibody secretion rate per plasma cell.
    pub rho8: f64,
    /// Antibody consumption rate in virus neutralization.
    pub gamma81: f64,
    /// Antibody decay rate.
    pub alpha8: f64,
    /// Infection rate of healthy target cells.
    pub sigma: f64,
    /// Natural death rate of infected cells.
    pub b10: f64,
    /// Organ regeneration rate.
    pub alpha10: f64,
    /// Cellular-helper production delay.
    pub tau3: f64,
    /// Humoral-helper production delay.
    pub tau4: f64,
    /// Effector production delay.
    pub tau5: f64,
    /// B-cell production delay.
    pub tau6: f64,
    /// Plasma-cell production delay.
    pub tau7: f64,
    /// Resting level of cellular helpers.
    pub xstar3: f64,
    /// Resting level of humoral helpers.
    pub xstar4: f64,
    /// Resting level of effectors.
    pub xstar5: f64,
    /// Resting level of B cells.
    pub xstar6: f64,
    /// Resting level of plasma cells.
    pub xstar7: f64,
}

impl Default for ModelParameters {
    /// Desk-scale healthy-immune-system defaults: unit relaxation rates and
    /// resting levels, sub-unit infection rates, delays of half a day to a
    /// day. The stationary point is comfortably stable (margin 1.47).
    fn default() -> Self {
        Self {
            nu: 0.1,
            n: 2.0,
            b95: 0.1,
            gamma18: 1.0,
            gamma12: 1.0,
            big_m: 1.0,
            gamma19: 1.0,
            big_c: 1.0,
            gamma21: 1.0,
            alpha2: 1.0,
            b32: 1.0,
            rho32: 1.5,
            b3: 0.1,
            alpha3: 1.0,
            b42: 1.0,
            rho42: 1.5,
            b4: 0.1,
            alpha4: 1.0,
            b5: 0.5,
            rho5: 1.5,
            b59: 0.1,
            alpha5: 1.0,
            b6: 0.5,
            rho6: 1.5,
            alpha6: 1.0,
            b7: 0.5,
            rho7: 1.5,
            alpha7: 1.0,
            rho8: 1.0,
            gamma81: 1.0,
            alpha8: 1.0,
            sigma: 0.1,
            b10: 0.4,
            alpha10: 1.0,
            tau3: 0.5,
            tau4: 0.5,
            tau5: 1.0,
            tau6: 1.0,
            tau7: 0.5,
            xstar3: 1.0,
            xstar4: 1.0,
            xstar5: 1.0,
            xstar6: 1.0,
            xstar7: 1.0,
        }
    }
}

macro_rules! require_positive {
    ($p:ident, $($field:ident => $name:literal),+ $(,)?) => {
        $(
            if !($p.$field > 0.0) || !$p.$field.is_finite() {
                return Err(ModelError::NonPositiveParameter {
                    name: $name,
                    value: $p.$field,
                });
            }
        )+
    };
}

impl ModelParameters {
    /// Checks that every parameter is a strictly positive finite real.
    pub fn validate(&self) -> Result<(), ModelError> {
        require_positive!(self,
            nu => "nu", n => "n", b95 => "b95", gamma18 => "gamma18",
            gamma12 => "gamma12", big_m => "bigM", gamma19 => "gamma19",
            big_c => "bigC", gamma21 => "gamma21", alpha2 => "alpha2",
            b32 => "b32", rho32 => "rho32", b3 => "b3", alpha3 => "alpha3",
            b42 => "b42", rho42 => "rho42", b4 => "b4", alpha4 => "alpha4",
            b5 => "b5", rho5 => "rho5", b59 => "b59", alpha5 => "alpha5",
            b6 => "b6", rho6 => "rho6", alpha6 => "alpha6", b7 => "b7",
            rho7 => "rho7", alpha7 => "alpha7", rho8 => "rho8",
            gamma81 => "gamma81", alpha8 => "alpha8", sigma => "sigma",
            b10 => "b10", alpha10 => "alpha10", tau3 => "tau3",
            tau4 => "tau4", tau5 => "tau5", tau6 => "tau6", tau7 => "tau7",
            xstar3 => "xstar3", xstar4 => "xstar4", xstar5 => "xstar5",
            xstar6 => "xstar6", xstar7 => "xstar7",
        );
        Ok(())
    }

    /// The five production delays in component order `[τ3, τ4, τ5, τ6, τ7]`.
    #[must_use]
    pub fn delays(&self) -> [f64; 5] {
        [self.tau3, self.tau4, self.tau5, self.tau6, self.tau7]
    }

    /// Shortest delay (bounds the admissible integration step).
    #[must_use]
    pub fn tau_min(&self) -> f64 {
        self.delays().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Longest delay (depth of history the model looks back on).
    #[must_use]
    pub fn tau_max(&self) -> f64 {
        self.delays().into_iter().fold(0.0, f64::max)
    }
}

// ======================== Organ-efficiency factor ξ ========================

/// Non-increasing organ-efficiency factor ξ: [0, 1] → [0, 1] with ξ(0) = 1
/// and ξ(1) = 0, modulating all delayed immune-production terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "table", rename_all = "kebab-case", deny_unknown_fields)]
pub enum XiFunction {
    /// ξ(u) = 1 − u.
    Linear,
    /// ξ(u) = 1 − 3u² + 2u³ (flat at both endpoints).
    SmoothCubic,
    /// Piecewise-linear interpolation of user breakpoints `(u, ξ(u))`.
    UserTable(Vec<(f64, f64)>),
}

impl Default for XiFunction {
    fn default() -> Self {
        Self::Linear
    }
}

impl XiFunction {
    /// Builds a user-table efficiency factor, validating the invariants.
    pub fn user_table(points: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        let table = Self::UserTable(points);
        table.validate()?;
        Ok(table)
    }

    /// Checks the shape invariants; only the user-table kind can fail.
    ///
    /// Needed after deserialization, which bypasses [`XiFunction::user_table`].
    pub fn validate(&self) -> Result<(), ModelError> {
        let Self::UserTable(points) = self else {
            return Ok(());
        };
        let fail = |reason: String| Err(ModelError::XiTable { reason });
        if points.len() < 2 {
            return fail("need at least two breakpoints".into());
        }
        let first = points[0];
        let last = points[points.len() - 1];
        if first != (0.0, 1.0) {
            return fail(format!("first breakpoint must be (0, 1), got {first:?}"));
        }
        if last != (1.0, 0.0) {
            return fail(format!("last breakpoint must be (1, 0), got {last:?}"));
        }
        for w in points.windows(2) {
            let ((u0, v0), (u1, v1)) = (w[0], w[1]);
            if !(u1 > u0) {
                return fail(format!("breakpoint arguments must strictly increase ({u0} then {u1})"));
            }
            if v1 > v0 {
                return fail(format!("values must be non-increasing ({v0} then {v1})"));
            }
        }
        if points.iter().any(|&(u, v)| !u.is_finite() || !v.is_finite() || !(0.0..=1.0).contains(&v)) {
            return fail("all values must be finite and within [0, 1]".into());
        }
        Ok(())
    }

    /// Evaluates ξ(u). The argument must lie in [0, 1].
    pub fn eval(&self, u: f64) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(ModelError::XiDomain { u });
        }
        Ok(match self {
            Self::Linear => 1.0 - u,
            Self::SmoothCubic => 1.0 - 3.0 * u * u + 2.0 * u * u * u,
            Self::UserTable(points) => {
                // Invariants guarantee coverage of [0, 1] with increasing u's.
                let i = points.partition_point(|&(uk, _)| uk <= u).min(points.len() - 1);
                let (u0, v0) = points[i - 1];
                let (u1, v1) = points[i];
                v0 + (v1 - v0) * ((u - u0) / (u1 - u0))
            }
        })
    }

    /// Evaluates ξ at `u` clamped into [0, 1], provided the overshoot is at
    /// most `slack`; larger excursions are domain errors. Integration
    /// rounding legitimately produces overshoots of a few ulps, which is what
    /// the integrator-facing RHS variants forgive (slack [`XI_OVERSHOOT_TOL`]).
    pub fn eval_with_slack(&self, u: f64, slack: f64) -> Result<f64, ModelError> {
        if u < -slack || u > 1.0 + slack || u.is_nan() {
            return Err(ModelError::XiDomain { u });
        }
        self.eval(u.clamp(0.0, 1.0))
    }
}

// ======================== Stationary point ========================

/// The healthy stationary point of the original frame.
///
/// Virus, stimulated macrophages, infected and destroyed fractions vanish;
/// lymphocyte populations rest at their `X_k*` levels; antibodies rest at the
/// production/decay balance ρ8·X7*/α8.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryPoint(pub StateVector);

impl StationaryPoint {
    /// Per-component resting levels `X_j*` (zero for components 1, 2, 9, 10).
    #[must_use]
    pub fn levels(&self) -> [f64; 10] {
        (self.0).0
    }
}

/// Computes the stationary point of [`rhs_original`] for the given parameters.
#[must_use]
pub fn stationary_point(p: &ModelParameters) -> StationaryPoint {
    StationaryPoint(StateVector([
        0.0,
        0.0,
        p.xstar3,
        p.xstar4,
        p.xstar5,
        p.xstar6,
        p.xstar7,
        p.rho8 * p.xstar7 / p.alpha8,
        0.0,
        0.0,
    ]))
}

// ======================== Right-hand sides ========================

/// Right-hand side of the model in original coordinates.
///
/// `x_delayed[k]` is the state at `t − τ_{k+3}` for `k = 0..5`; only the
/// components that actually enter delayed production terms are read from it.
/// Errors when component 10 leaves [0, 1] (the efficiency factor would be
/// undefined).
pub fn rhs_original(
    p: &ModelParameters,
    xi: &XiFunction,
    x_now: &StateVector,
    x_delayed: &[StateVector; 5],
) -> Result<StateVector, ModelError> {
    rhs_original_impl(p, xi, x_now, x_delayed, 0.0)
}

/// Integrator-facing variant of [`rhs_original`]: forgives efficiency-factor
/// overshoot up to [`XI_OVERSHOOT_TOL`] (integration rounding), nothing more.
pub fn rhs_original_clamped(
    p: &ModelParameters,
    xi: &XiFunction,
    x_now: &StateVector,
    x_delayed: &[StateVector; 5],
) -> Result<StateVector, ModelError> {
    rhs_original_impl(p, xi, x_now, x_delayed, XI_OVERSHOOT_TOL)
}

fn rhs_original_impl(
    p: &ModelParameters,
    xi: &XiFunction,
    x_now: &StateVector,
    x_delayed: &[StateVector; 5],
    xi_slack: f64,
) -> Result<StateVector, ModelError> {
    let [x1, x2, x3, x4, x5, x6, x7, x8, x9, x10] = x_now.0;
    let xi_now = xi.eval_with_slack(x10, xi_slack)?;
    // Delayed factors entering the production terms.
    let (x2_d3, x3_d3) = (x_delayed[0][1], x_delayed[0][2]);
    let (x2_d4, x4_d4) = (x_delayed[1][1], x_delayed[1][3]);
    let (x2_d5, x3_d5, x5_d5) = (x_delayed[2][1], x_delayed[2][2], x_delayed[2][4]);
    let (x2_d6, x4_d6, x6_d6) = (x_delayed[3][1], x_delayed[3][3], x_delayed[3][5]);
    let (x2_d7, x4_d7, x6_d7) = (x_delayed[4][1], x_delayed[4][3], x_delayed[4][5]);

    let dx1 = p.nu * x9 + p.n * p.b95 * x5 * x9
        - p.gamma18 * x1 * x8
        - p.gamma12 * p.big_m * x1
        - p.gamma19 * p.big_c * (1.0 - x9 - x10) * x1;
    let dx2 = p.gamma21 * p.big_m * x1 - p.alpha2 * x2;
    let dx3 = p.b32 * (p.rho32 * xi_now * x2_d3 * x3_d3 - x2 * x3)
        - p.b3 * x2 * x3 * x5
        + p.alpha3 * (p.xstar3 - x3);
    let dx4 = p.b42 * (p.rho42 * xi_now * x2_d4 * x4_d4 - x2 * x4)
        - p.b4 * x2 * x4 * x6
        + p.alpha4 * (p.xstar4 - x4);
    let dx5 = p.b5 * (p.rho5 * xi_now * x2_d5 * x3_d5 * x5_d5 - x2 * x3 * x5)
        - p.b59 * x5 * x9
        + p.alpha5 * (p.xstar5 - x5);
    let dx6 = p.b6 * (p.rho6 * xi_now * x2_d6 * x4_d6 * x6_d6 - x2 * x4 * x6)
        + p.alpha6 * (p.xstar6 - x6);
    let dx7 = p.b7 * p.rho7 * xi_now * x2_d7 * x4_d7 * x6_d7 + p.alpha7 * (p.xstar7 - x7);
    let dx8 = p.rho8 * x7 - p.gamma81 * x1 * x8 - p.alpha8 * x8;
    let dx9 = p.sigma * p.big_c * x1 * (1.0 - x9 - x10) - p.b95 * x5 * x9 - p.b10 * x9;
    let dx10 = p.b95 * x5 * x9 + p.b10 * x9 - p.alpha10 * x10;

    Ok(StateVector([dx1, dx2, dx3, dx4, dx5, dx6, dx7, dx8, dx9, dx10]))
}

/// Right-hand side in shifted coordinates `y = x − X*`.
///
/// Algebraically identical to `rhs_original(p, xi, X* + y, X* + y_delayed)`
/// with the stationary contributions cancelled symbolically, so the origin is
/// an exact fixed point in floating point as well. Component 10 is unshifted
/// (`X10* = 0`), hence the efficiency factor takes `y10` directly and the
/// domain requirement is `y10 ∈ [0, 1]`.
pub fn rhs_shifted(
    p: &ModelParameters,
    xi: &XiFunction,
    y_now: &StateVector,
    y_delayed: &[StateVector; 5],
) -> Result<StateVector, ModelError> {
    rhs_shifted_impl(p, xi, y_now, y_delayed, 0.0)
}

/// Integrator-facing variant of [`rhs_shifted`]; see [`rhs_original_clamped`].
pub fn rhs_shifted_clamped(
    p: &ModelParameters,
    xi: &XiFunction,
    y_now: &StateVector,
    y_delayed: &[StateVector; 5],
) -> Result<StateVector, ModelError> {
    rhs_shifted_impl(p, xi, y_now, y_delayed, XI_OVERSHOOT_TOL)
}

fn rhs_shifted_impl(
    p: &ModelParameters,
    xi: &XiFunction,
    y_now: &StateVector,
    y_delayed: &[StateVector; 5],
    xi_slack: f64,
) -> Result<StateVector, ModelError> {
    let [y1, y2, y3, y4, y5, y6, y7, y8, y9, y10] = y_now.0;
    let xi_now = xi.eval_with_slack(y10, xi_slack)?;
    let x8star = p.rho8 * p.xstar7 / p.alpha8;
    let (y2_d3, y3_d3) = (y_delayed[0][1], y_delayed[0][2]);
    let (y2_d4, y4_d4) = (y_delayed[1][1], y_delayed[1][3]);
    let (y2_d5, y3_d5, y5_d5) = (y_delayed[2][1], y_delayed[2][2], y_delayed[2][4]);
    let (y2_d6, y4_d6, y6_d6) = (y_delayed[3][1], y_delayed[3][3], y_delayed[3][5]);
    let (y2_d7, y4_d7, y6_d7) = (y_delayed[4][1], y_delayed[4][3], y_delayed[4][5]);

    let dy1 = p.nu * y9 + p.n * p.b95 * (p.xstar5 + y5) * y9
        - p.gamma18 * y1 * (x8star + y8)
        - p.gamma12 * p.big_m * y1
        - p.gamma19 * p.big_c * (1.0 - y9 - y10) * y1;
    let dy2 = p.gamma21 * p.big_m * y1 - p.alpha2 * y2;
    let dy3 = p.b32
        * (p.rho32 * xi_now * y2_d3 * (p.xstar3 + y3_d3) - y2 * (p.xstar3 + y3))
        - p.b3 * y2 * (p.xstar3 + y3) * (p.xstar5 + y5)
        - p.alpha3 * y3;
    let dy4 = p.b42
        * (p.rho42 * xi_now * y2_d4 * (p.xstar4 + y4_d4) - y2 * (p.xstar4 + y4))
        - p.b4 * y2 * (p.xstar4 + y4) * (p.xstar6 + y6)
        - p.alpha4 * y4;
    let dy5 = p.b5
        * (p.rho5 * xi_now * y2_d5 * (p.xstar3 + y3_d5) * (p.xstar5 + y5_d5)
            - y2 * (p.xstar3 + y3) * (p.xstar5 + y5))
        - p.b59 * (p.xstar5 + y5) * y9
        - p.alpha5 * y5;
    let dy6 = p.b6
        * (p.rho6 * xi_now * y2_d6 * (p.xstar4 + y4_d6) * (p.xstar6 + y6_d6)
            - y2 * (p.xstar4 + y4) * (p.xstar6 + y6))
        - p.alpha6 * y6;
    let dy7 = p.b7 * p.rho7 * xi_now * y2_d7 * (p.xstar4 + y4_d7) * (p.xstar6 + y6_d7)
        - p.alpha7 * y7;
    let dy8 = p.rho8 * y7 - p.gamma81 * y1 * (x8star + y8) - p.alpha8 * y8;
    let dy9 = p.sigma * p.big_c * y1 * (1.0 - y9 - y10)
        - p.b95 * (p.xstar5 + y5) * y9
        - p.b10 * y9;
    let dy10 = p.b95 * (p.xstar5 + y5) * y9 + p.b10 * y9 - p.alpha10 * y10;

    Ok(StateVector([dy1, dy2, dy3, dy4, dy5, dy6, dy7, dy8, dy9, dy10]))
}

// ======================== Stability condition ========================

/// Linearization gains of the virus/infected-cell block at the stationary
/// point: `a11` and `a99` are the self-damping rates of components 1 and 9,
/// `a19` and `a91` the cross couplings that drive reinfection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearGains {
    /// Virus damping: γ12·M + γ18·(ρ8/α8)·X7* + γ19·C*.
    pub a11: f64,
    /// Infected-cell damping: b95·X5* + b10.
    pub a99: f64,
    /// Virus production per infected cell: ν + n·b95·X5*.
    pub a19: f64,
    /// Infection rate per unit virus: σ·C*.
    pub a91: f64,
}

/// Computes the four linearization gains at the stationary point.
#[must_use]
pub fn linear_gains(p: &ModelParameters) -> LinearGains {
    LinearGains {
        a11: p.gamma12 * p.big_m + p.gamma18 * (p.rho8 / p.alpha8) * p.xstar7 + p.gamma19 * p.big_c,
        a99: p.b95 * p.xstar5 + p.b10,
        a19: p.nu + p.n * p.b95 * p.xstar5,
        a91: p.sigma * p.big_c,
    }
}

/// Outcome of the exponential-stability test at the stationary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityCheck {
    /// Whether damping strictly dominates reinfection.
    pub satisfied: bool,
    /// `a11·a99 − a19·a91`; positive means stable.
    pub margin: f64,
}

/// Tests the strict stability condition `a11·a99 > a19·a91`.
#[must_use]
pub fn check_stability_condition(p: &ModelParameters) -> StabilityCheck {
    let g = linear_gains(p);
    let margin = g.a11 * g.a99 - g.a19 * g.a91;
    StabilityCheck {
        satisfied: margin > 0.0,
        margin,
    }
}

// ======================== Tests ========================

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Random parameter set with every rate in [0.2, 2.0); not necessarily
    /// stable in the sense of `check_stability_condition`.
    pub(crate) fn random_parameters(rng: &mut ChaCha8Rng) -> ModelParameters {
        let mut draw = || rng.random_range(0.2..2.0);
        ModelParameters {
            nu: draw(),
            n: draw(),
            b95: draw(),
            gamma18: draw(),
            gamma12: draw(),
            big_m: draw(),
            gamma19: draw(),
            big_c: draw(),
            gamma21: draw(),
            alpha2: draw(),
            b32: draw(),
            rho32: draw(),
            b3: draw(),
            alpha3: draw(),
            b42: draw(),
            rho42: draw(),
            b4: draw(),
            alpha4: draw(),
            b5: draw(),
            rho5: draw(),
            b59: draw(),
            alpha5: draw(),
            b6: draw(),
            rho6: draw(),
            alpha6: draw(),
            b7: draw(),
            rho7: draw(),
            alpha7: draw(),
            rho8: draw(),
            gamma81: draw(),
            alpha8: draw(),
            sigma: draw(),
            b10: draw(),
            alpha10: draw(),
            tau3: draw(),
            tau4: draw(),
            tau5: draw(),
            tau6: draw(),
            tau7: draw(),
            xstar3: draw(),
            xstar4: draw(),
            xstar5: draw(),
            xstar6: draw(),
            xstar7: draw(),
        }
    }

    #[test]
    fn xi_linear_endpoints_and_midpoint() {
        let xi = XiFunction::Linear;
        assert_eq!(xi.eval(0.0).unwrap(), 1.0);
        assert_eq!(xi.eval(1.0).unwrap(), 0.0);
        assert_eq!(xi.eval(0.5).unwrap(), 0.5);
    }

    #[test]
    fn xi_smooth_cubic_endpoints_and_midpoint() {
        let xi = XiFunction::SmoothCubic;
        assert_eq!(xi.eval(0.0).unwrap(), 1.0);
        assert_eq!(xi.eval(1.0).unwrap(), 0.0);
        assert!((xi.eval(0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn xi_kinds_non_increasing_on_grid() {
        let table = XiFunction::user_table(vec![(0.0, 1.0), (0.3, 0.9), (0.7, 0.2), (1.0, 0.0)])
            .unwrap();
        for xi in [XiFunction::Linear, XiFunction::SmoothCubic, table] {
            let mut prev = f64::INFINITY;
            for i in 0..=512 {
                let u = i as f64 / 512.0;
                let v = xi.eval(u).unwrap();
                assert!(v <= prev + 1e-15, "{xi:?} increased at u={u}");
                assert!((0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn xi_rejects_arguments_outside_unit_interval() {
        let xi = XiFunction::Linear;
        assert!(matches!(xi.eval(-0.01), Err(ModelError::XiDomain { .. })));
        assert!(matches!(xi.eval(1.01), Err(ModelError::XiDomain { .. })));
        assert!(matches!(xi.eval(f64::NAN), Err(ModelError::XiDomain { .. })));
    }

    #[test]
    fn xi_slack_forgives_rounding_overshoot_only() {
        let xi = XiFunction::Linear;
        assert_eq!(xi.eval_with_slack(1.0 + 5e-13, XI_OVERSHOOT_TOL).unwrap(), 0.0);
        assert_eq!(xi.eval_with_slack(-5e-13, XI_OVERSHOOT_TOL).unwrap(), 1.0);
        assert!(xi.eval_with_slack(1.0 + 1e-11, XI_OVERSHOOT_TOL).is_err());
        assert!(xi.eval_with_slack(f64::NAN, XI_OVERSHOOT_TOL).is_err());
    }

    #[test]
    fn xi_table_interpolates_linearly() {
        let xi = XiFunction::user_table(vec![(0.0, 1.0), (0.5, 0.4), (1.0, 0.0)]).unwrap();
        assert!((xi.eval(0.25).unwrap() - 0.7).abs() < 1e-15);
        assert!((xi.eval(0.75).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(xi.eval(0.5).unwrap(), 0.4);
        assert_eq!(xi.eval(1.0).unwrap(), 0.0);
    }

    #[test]
    fn xi_table_validation_rejects_bad_shapes() {
        // Wrong endpoints.
        assert!(XiFunction::user_table(vec![(0.0, 0.9), (1.0, 0.0)]).is_err());
        assert!(XiFunction::user_table(vec![(0.0, 1.0), (1.0, 0.1)]).is_err());
        // Non-increasing arguments.
        assert!(
            XiFunction::user_table(vec![(0.0, 1.0), (0.6, 0.5), (0.4, 0.3), (1.0, 0.0)]).is_err()
        );
        // Increasing values.
        assert!(
            XiFunction::user_table(vec![(0.0, 1.0), (0.4, 0.3), (0.6, 0.5), (1.0, 0.0)]).is_err()
        );
        // Too short.
        assert!(XiFunction::user_table(vec![(0.0, 1.0)]).is_err());
    }

    #[test]
    fn parameter_validation_accepts_defaults_and_names_offenders() {
        ModelParameters::default().validate().unwrap();
        let mut p = ModelParameters::default();
        p.big_m = 0.0;
        match p.validate() {
            Err(ModelError::NonPositiveParameter { name, .. }) => assert_eq!(name, "bigM"),
            other => panic!("expected positivity error, got {other:?}"),
        }
        let mut p = ModelParameters::default();
        p.tau5 = -1.0;
        assert!(p.validate().is_err());
        let mut p = ModelParameters::default();
        p.sigma = f64::NAN;
        assert!(p.validate().is_err());
    }

    #[test]
    fn stationary_point_levels_match_construction() {
        let p = ModelParameters::default();
        let levels = stationary_point(&p).levels();
        assert_eq!(levels, [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn original_rhs_vanishes_at_stationary_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..100 {
            let p = random_parameters(&mut rng);
            let xs = stationary_point(&p).0;
            let dx = rhs_original(&p, &XiFunction::Linear, &xs, &[xs; 5]).unwrap();
            assert!(
                dx.max_abs() <= 1e-12,
                "residual {} for {p:?}",
                dx.max_abs()
            );
        }
    }

    #[test]
    fn shifted_rhs_vanishes_exactly_at_origin() {
        let p = ModelParameters::default();
        let dy = rhs_shifted(&p, &XiFunction::Linear, &StateVector::ZERO, &[StateVector::ZERO; 5])
            .unwrap();
        for j in 0..10 {
            assert_eq!(dy[j], 0.0, "component {}", j + 1);
        }
    }

    #[test]
    fn shifted_rhs_matches_known_infected_cell_response() {
        // State with only the infected-cell fraction perturbed: y9 = 0.01.
        let p = ModelParameters::default();
        let mut y = StateVector::ZERO;
        y.0[8] = 0.01;
        let dy = rhs_shifted(&p, &XiFunction::Linear, &y, &[StateVector::ZERO; 5]).unwrap();
        // Frozen by hand: dy1 = (ν + n·b95·X5*)·c, dy5 = −b59·X5*·c,
        // dy9 = −(b95·X5* + b10)·c, dy10 = +(b95·X5* + b10)·c at c = 0.01.
        assert!((dy[0] - 0.003).abs() < 1e-15);
        assert!((dy[4] + 0.001).abs() < 1e-18);
        assert!((dy[8] + 0.005).abs() < 1e-18);
        assert!((dy[9] - 0.005).abs() < 1e-18);
        assert_eq!(dy[1], 0.0);
        assert_eq!(dy[2], 0.0);
    }

    #[test]
    fn shifted_rhs_equals_translated_original_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xi = XiFunction::SmoothCubic;
        for _ in 0..50 {
            let p = random_parameters(&mut rng);
            let xs = stationary_point(&p).0;
            let sample = |rng: &mut ChaCha8Rng| {
                let mut y = [0.0; 10];
                for (j, slot) in y.iter_mut().enumerate() {
                    *slot = if j == 9 {
                        rng.random_range(0.0..0.95)
                    } else {
                        rng.random_range(-0.1..0.1)
                    };
                }
                StateVector(y)
            };
            let y = sample(&mut rng);
            let yd = [
                sample(&mut rng),
                sample(&mut rng),
                sample(&mut rng),
                sample(&mut rng),
                sample(&mut rng),
            ];
            let lhs = rhs_shifted(&p, &xi, &y, &yd).unwrap();
            let xd = yd.map(|d| xs + d);
            let rhs = rhs_original(&p, &xi, &(xs + y), &xd).unwrap();
            for j in 0..10 {
                let (a, b) = (lhs[j], rhs[j]);
                let tol = 1e-12 * a.abs().max(b.abs()).max(1.0);
                assert!(
                    (a - b).abs() <= tol,
                    "component {}: shifted {a} vs translated {b}",
                    j + 1
                );
            }
        }
    }

    #[test]
    fn rhs_rejects_destroyed_fraction_outside_unit_interval() {
        let p = ModelParameters::default();
        let mut x = stationary_point(&p).0;
        x.0[9] = 1.5;
        let err = rhs_original(&p, &XiFunction::Linear, &x, &[x; 5]);
        assert!(matches!(err, Err(ModelError::XiDomain { .. })));
    }

    #[test]
    fn stability_condition_hand_example() {
        // Gains assembled to give a11 = 3, a99 = 2, a19 = 2, a91 = 1.
        let p = ModelParameters {
            gamma12: 1.0,
            big_m: 1.0,
            gamma18: 1.0,
            rho8: 1.0,
            alpha8: 1.0,
            xstar7: 1.0,
            gamma19: 1.0,
            big_c: 1.0,
            b95: 1.0,
            xstar5: 1.0,
            b10: 1.0,
            sigma: 1.0,
            nu: 1.0,
            n: 1.0,
            ..ModelParameters::default()
        };
        let gains = linear_gains(&p);
        assert_eq!((gains.a11, gains.a99, gains.a19, gains.a91), (3.0, 2.0, 2.0, 1.0));
        let check = check_stability_condition(&p);
        assert!(check.satisfied);
        assert!((check.margin - 4.0).abs() < 1e-15);
    }

    #[test]
    fn stability_condition_default_margin() {
        let check = check_stability_condition(&ModelParameters::default());
        assert!(check.satisfied);
        assert!((check.margin - 1.47).abs() < 1e-12);
    }

    #[test]
    fn stability_condition_fails_for_aggressive_infection() {
        let p = ModelParameters {
            sigma: 100.0,
            ..ModelParameters::default()
        };
        let check = check_stability_condition(&p);
        assert!(!check.satisfied);
        assert!(check.margin < 0.0);
    }

    #[test]
    fn parameters_round_trip_through_json_with_config_names() {
        let p = ModelParameters::default();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"bigM\""));
        assert!(json.contains("\"bigC\""));
        let back: ModelParameters = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn delay_helpers_agree_with_fields() {
        let p = ModelParameters::default();
        assert_eq!(p.delays(), [0.5, 0.5, 1.0, 1.0, 0.5]);
        assert_eq!(p.tau_min(), 0.5);
        assert_eq!(p.tau_max(), 1.0);
    }
}
