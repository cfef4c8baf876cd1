//! Evaluation of the Lyapunov–Krasovskii functional and the decay bounds it
//! certifies.
//!
//! Everything here works with a finished [`Certificate`]: the functional
//!
//! ```text
//! V(t) = Σ_{j=1..10} h_j·y_j²(t)
//!      + Σ_{k=3..7} h_k·β_k ∫_{t−τ_k}^{t} e^{−κ_k (t−s)}·y_2²(s) ds
//! ```
//!
//! is evaluated by composite Simpson quadrature, the attraction-basin
//! hypotheses are checked sample-wise on the initial history, and the
//! certified consequence
//!
//! ```text
//! V(t) ≤ V(0)·e^{−2ωt} / (1 − (q/2ω)·√V(0))²      (inside the basin)
//! ```
//!
//! is exposed both as a raw bound on V and as per-component envelopes
//! `|y_j(t)| ≤ C_j·e^{−ωt}`. A finite-difference monitor re-checks the
//! differential inequality `dV/dt ≤ −2ω·V + q·V^{3/2}` along a computed
//! trajectory, which catches disagreements between the certificate constants
//! and the actual dynamics without trusting either side.

use crate::certificate::Certificate;
use crate::dde::{DdeError, HistoryFunction, Trajectory};
use crate::model::{ModelParameters, StateVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples strictly inside the history interval for basin checks (the two
/// endpoints are appended, giving 514 evaluations).
const BASIN_GRID_INTERIOR: usize = 512;
/// Absolute floor of the finite-difference tolerance in the monitor.
const MONITOR_TOL_FLOOR: f64 = 1e-8;

// ======================== Errors ========================

/// Errors from functional evaluation and bound checking.
#[derive(Debug, Error)]
pub enum LyapunovError {
    /// Simpson quadrature needs an even number of intervals, at least 8.
    #[error("quadrature needs an even number of intervals, at least 8 (got {points})")]
    InvalidQuadPoints {
        /// The rejected interval count.
        points: usize,
    },
    /// The history does not reach back far enough for the integral terms.
    #[error("history must cover [{needed}, 0] but only starts at {start}")]
    HistoryTooShallow {
        /// Where the history starts.
        start: f64,
        /// Required start, `−max(τ_k)`.
        needed: f64,
    },
    /// The initial energy is too large for any exponential envelope.
    #[error(
        "initial energy is outside the certified basin: sqrt(V0) = {sqrt_v0} \
         is not below 2ω/q = {radius}"
    )]
    OutsideBasin {
        /// Square root of the initial functional value.
        sqrt_v0: f64,
        /// The basin radius `2ω/q`.
        radius: f64,
    },
    /// A functional value that should be a nonnegative energy is not.
    #[error("initial energy must be a finite nonnegative real (got {v0})")]
    InvalidEnergy {
        /// The rejected value.
        v0: f64,
    },
    /// A monitor grid point leaves the admissible stencil range.
    #[error(
        "monitor grid point {t} must lie in [{min}, {max}] so the \
         finite-difference stencil stays inside the trajectory"
    )]
    GridOutsideDomain {
        /// Offending grid point.
        t: f64,
        /// Smallest admissible time.
        min: f64,
        /// Largest admissible time.
        max: f64,
    },
    /// The trajectory has no integration segments to monitor.
    #[error("trajectory has no integration segments")]
    EmptyTrajectory,
    /// Evaluation of the underlying history or trajectory failed.
    #[error(transparent)]
    Dde(#[from] DdeError),
}

// ======================== Functional evaluation ========================

/// Value of the functional at one time, split into its summands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalValue {
    /// `quadratic_part + Σ integral_parts`.
    pub total: f64,
    /// `Σ_j h_j·y_j²`.
    pub quadratic_part: f64,
    /// The five weighted memory integrals, for k = 3..7.
    pub integral_parts: [f64; 5],
    /// Sum over the integrals of |Simpson(n) − Simpson(n/2)|, a conservative
    /// estimate of the quadrature error in `total`.
    pub quadrature_error_estimate: f64,
}

fn validate_quad_points(points: usize) -> Result<(), LyapunovError> {
    if points < 8 || points % 2 != 0 {
        return Err(LyapunovError::InvalidQuadPoints { points });
    }
    Ok(())
}

/// Half the interval count, rounded up to the next even number (Simpson
/// needs even counts, so 10 halves to 6, not 5).
fn half_points(points: usize) -> usize {
    let half = points / 2;
    if half % 2 == 0 {
        half
    } else {
        half + 1
    }
}

/// Composite Simpson rule with `n` (even) intervals on `[a, b]`. The final
/// abscissa is exactly `b` so that domain-edge evaluations never overshoot.
fn simpson<F>(a: f64, b: f64, n: usize, f: &F) -> Result<f64, LyapunovError>
where
    F: Fn(f64) -> Result<f64, LyapunovError>,
{
    let h = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let s = a + i as f64 * h;
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * f(s)?;
    }
    Ok(acc * h / 3.0)
}

/// Core evaluation shared by the initial-history and along-trajectory forms:
/// `state(s)` must be valid on `[t − max(τ_k), t]`.
fn functional_at<E>(
    cert: &Certificate,
    state: &E,
    t: f64,
    quad_points: usize,
) -> Result<FunctionalValue, LyapunovError>
where
    E: Fn(f64) -> Result<StateVector, DdeError>,
{
    validate_quad_points(quad_points)?;
    let y_now = state(t)?;
    let h = cert.h();
    let mut quadratic = 0.0;
    for j in 0..10 {
        quadratic += h[j] * y_now[j] * y_now[j];
    }

    let taus = cert.taus();
    let kappas = cert.kappas();
    let betas = cert.betas();
    let coarse_points = half_points(quad_points);
    let mut integral_parts = [0.0; 5];
    let mut quadrature_error_estimate = 0.0;
    for k in 0..5 {
        let weight = h[k + 2] * betas[k];
        let kappa = kappas[k];
        let integrand = |s: f64| -> Result<f64, LyapunovError> {
            let y2 = state(s)?[1];
            Ok((-kappa * (t - s)).exp() * y2 * y2)
        };
        let fine = simpson(t - taus[k], t, quad_points, &integrand)?;
        let coarse = simpson(t - taus[k], t, coarse_points, &integrand)?;
        integral_parts[k] = weight * fine;
        quadrature_error_estimate += (weight * (fine - coarse)).abs();
    }

    Ok(FunctionalValue {
        total: quadratic + integral_parts.iter().sum::<f64>(),
        quadratic_part: quadratic,
        integral_parts,
        quadrature_error_estimate,
    })
}

fn require_history_depth(
    cert: &Certificate,
    history: &HistoryFunction,
) -> Result<(), LyapunovError> {
    let needed = -cert.tau_max();
    let start = history.domain_start();
    if start > needed {
        return Err(LyapunovError::HistoryTooShallow { start, needed });
    }
    Ok(())
}

/// Evaluates the functional at `t = 0` on an initial history `ψ`, which must
/// cover `[−max(τ_k), 0]`.
pub fn eval_functional_initial(
    cert: &Certificate,
    psi: &HistoryFunction,
    quad_points: usize,
) -> Result<FunctionalValue, LyapunovError> {
    psi.validate()?;
    require_history_depth(cert, psi)?;
    functional_at(cert, &|s| psi.eval(s), 0.0, quad_points)
}

/// Evaluates the functional at time `t ∈ [0, end]` along a computed
/// trajectory (delegating to its pre-history where the memory integrals
/// reach below zero). At `t = 0` this agrees with
/// [`eval_functional_initial`] on the same history.
pub fn eval_functional_along(
    cert: &Certificate,
    trajectory: &Trajectory,
    t: f64,
    quad_points: usize,
) -> Result<FunctionalValue, LyapunovError> {
    if !(t >= 0.0 && t <= trajectory.end_time()) {
        return Err(LyapunovError::Dde(DdeError::OutOfDomain {
            t,
            start: 0.0,
            end: trajectory.end_time(),
        }));
    }
    functional_at(cert, &|s| trajectory.eval(s), t, quad_points)
}

// ======================== Basin check ========================

/// One attraction-set hypothesis, normalized so that `margin ≥ 0` (or
/// `margin > 0` when `strict`) is a pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinItem {
    /// Short stable identifier (`"a"`, `"b"`, `"c3"`..`"c6"`, `"d3"`..`"d6"`,
    /// `"e"`, `"f"`).
    pub code: String,
    /// What the hypothesis requires.
    pub description: String,
    /// The measured quantity.
    pub observed: f64,
    /// The bound it is compared against.
    pub bound: f64,
    /// Slack left under the bound (`≥ 0` passes; `> 0` needed when strict).
    pub margin: f64,
    /// Whether the comparison is strict.
    pub strict: bool,
    /// Verdict for this item.
    pub passed: bool,
}

/// Outcome of the attraction-set hypothesis check. Failures are reported
/// item by item, never thrown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    /// Conjunction of all item verdicts.
    pub passed: bool,
    /// Square root of the initial functional value.
    pub sqrt_v0: f64,
    /// Basin radius `2ω/q`.
    pub basin_radius: f64,
    /// The twelve hypotheses, in order a, b, c3..c6, d3..d6, e, f.
    pub items: Vec<BasinItem>,
}

fn basin_item(
    code: &str,
    description: String,
    observed: f64,
    bound: f64,
    strict: bool,
) -> BasinItem {
    let margin = bound - observed;
    let passed = if strict { margin > 0.0 } else { margin >= 0.0 };
    BasinItem {
        code: code.to_owned(),
        description,
        observed,
        bound,
        margin,
        strict,
        passed,
    }
}

/// Checks the attraction-set hypotheses for an initial history `ψ` with
/// initial energy `v0`:
///
/// - (a) every component stays at or above its floor `−X_j*` on the whole
///   history (the original coordinates stay nonnegative);
/// - (b) `√V0 < 2ω/q` strictly;
/// - (c) the history of each delayed lymphocyte component k = 3..6 stays at
///   or below its basin half-width θ_k;
/// - (d) the certified envelope amplitude C_k stays at or below θ_k for
///   k = 3..6 (so the bound keeps future excursions inside the basin);
/// - (e) the damage component stays strictly below 1 on the history;
/// - (f) its envelope amplitude C_10 stays strictly below 1.
///
/// The history is sampled at 512 uniform interior points plus both
/// endpoints of `[−max(τ_k), 0]`.
pub fn check_basin(
    cert: &Certificate,
    psi: &HistoryFunction,
    v0: f64,
) -> Result<BasinReport, LyapunovError> {
    psi.validate()?;
    require_history_depth(cert, psi)?;
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(LyapunovError::InvalidEnergy { v0 });
    }

    let tau_max = cert.tau_max();
    let m = (BASIN_GRID_INTERIOR + 1) as f64;
    let mut floor_clearance = f64::INFINITY; // min_j,s (ψ_j + X_j*)
    let mut component_max = [f64::NEG_INFINITY; 10];
    let xstars = cert.xstars();
    for i in 0..=BASIN_GRID_INTERIOR + 1 {
        let s = if i == BASIN_GRID_INTERIOR + 1 {
            0.0
        } else {
            -tau_max + i as f64 * (tau_max / m)
        };
        let y = psi.eval(s)?;
        for j in 0..10 {
            floor_clearance = floor_clearance.min(y[j] + xstars[j]);
            component_max[j] = component_max[j].max(y[j]);
        }
    }

    let sqrt_v0 = v0.sqrt();
    let radius = cert.basin_radius();
    let contraction = 1.0 - sqrt_v0 / radius;
    let h = cert.h();
    let thetas = cert.thetas();
    // Envelope amplitudes; unbounded when the contraction factor closes.
    let amplitude = |j: usize| {
        if contraction > 0.0 {
            sqrt_v0 / (h[j].sqrt() * contraction)
        } else {
            f64::INFINITY
        }
    };

    let mut items = Vec::with_capacity(12);
    items.push(basin_item(
        "a",
        "history stays at or above the component floors −X_j*".into(),
        -floor_clearance,
        0.0,
        false,
    ));
    items.push(basin_item(
        "b",
        "initial energy lies strictly inside the basin: sqrt(V0) < 2ω/q".into(),
        sqrt_v0,
        radius,
        true,
    ));
    for k in 0..4 {
        items.push(basin_item(
            &format!("c{}", k + 3),
            format!("history of component {} stays at or below θ{}", k + 3, k + 3),
            component_max[k + 2],
            thetas[k],
            false,
        ));
    }
    for k in 0..4 {
        items.push(basin_item(
            &format!("d{}", k + 3),
            format!("envelope amplitude C{} stays at or below θ{}", k + 3, k + 3),
            amplitude(k + 2),
            thetas[k],
            false,
        ));
    }
    items.push(basin_item(
        "e",
        "history of the damage component stays strictly below 1".into(),
        component_max[9],
        1.0,
        true,
    ));
    items.push(basin_item(
        "f",
        "envelope amplitude C10 stays strictly below 1".into(),
        amplitude(9),
        1.0,
        true,
    ));

    Ok(BasinReport {
        passed: items.iter().all(|item| item.passed),
        sqrt_v0,
        basin_radius: radius,
        items,
    })
}

// ======================== Envelopes ========================

/// The per-component exponential envelopes certified for one initial energy:
/// `|y_j(t)| ≤ C_j·e^{−ωt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBound {
    /// Initial functional value the envelopes start from.
    pub v0: f64,
    /// Decay rate shared by every component.
    pub omega: f64,
    /// `1 − (q/2ω)·√V0`, strictly positive inside the basin.
    pub contraction_factor: f64,
    /// Amplitudes `C_j = √V0 / (√h_j · contraction_factor)` (index j−1).
    pub amplitudes: [f64; 10],
}

impl EnvelopeBound {
    /// Envelope of component `j` (0-based) at time `t`: `C_j·e^{−ωt}`.
    #[must_use]
    pub fn bound(&self, j: usize, t: f64) -> f64 {
        self.amplitudes[j] * (-self.omega * t).exp()
    }

    /// Bound on `√V(t)`: `√V0·e^{−ωt} / contraction_factor`.
    #[must_use]
    pub fn sqrt_v_bound(&self, t: f64) -> f64 {
        self.v0.sqrt() * (-self.omega * t).exp() / self.contraction_factor
    }
}

/// Builds the per-component envelopes for initial energy `v0`, failing when
/// `√v0` is not strictly inside the basin radius `2ω/q`.
pub fn envelope(cert: &Certificate, v0: f64) -> Result<EnvelopeBound, LyapunovError> {
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(LyapunovError::InvalidEnergy { v0 });
    }
    let sqrt_v0 = v0.sqrt();
    let contraction = 1.0 - (cert.q / (2.0 * cert.omega)) * sqrt_v0;
    if contraction <= 0.0 {
        return Err(LyapunovError::OutsideBasin {
            sqrt_v0,
            radius: cert.basin_radius(),
        });
    }
    let mut amplitudes = [0.0; 10];
    for (j, h_j) in cert.h().into_iter().enumerate() {
        amplitudes[j] = sqrt_v0 / (h_j.sqrt() * contraction);
    }
    Ok(EnvelopeBound {
        v0,
        omega: cert.omega,
        contraction_factor: contraction,
        amplitudes,
    })
}

/// The closed-form decay bound on the functional itself:
/// `V(t) ≤ v0·e^{−2ωt} / (1 − (q/2ω)·√v0)²`.
///
/// Only meaningful inside the basin; when `√v0 ≥ 2ω/q` the bound does not
/// exist and `+∞` is returned ([`envelope`] is the gated entry point).
#[must_use]
pub fn gronwall_v_bound(cert: &Certificate, v0: f64, t: f64) -> f64 {
    let contraction = 1.0 - (cert.q / (2.0 * cert.omega)) * v0.sqrt();
    if contraction <= 0.0 {
        return f64::INFINITY;
    }
    v0 * (-2.0 * cert.omega * t).exp() / (contraction * contraction)
}

// ======================== Differential-inequality monitor ========================

/// One monitored grid point: the finite-difference derivative of the
/// functional against its certified bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    /// Grid time.
    pub t: f64,
    /// Functional value `V(t)`.
    pub v: f64,
    /// Centered finite-difference estimate of `dV/dt`.
    pub lhs: f64,
    /// Certified bound `−2ω·V + q·V^{3/2}`.
    pub rhs: f64,
    /// `rhs − lhs + tolerance`; negative means the inequality failed by more
    /// than the discretization tolerance.
    pub slack: f64,
    /// Whether this point violates the inequality.
    pub violation: bool,
}

/// Re-checks the differential inequality `dV/dt ≤ −2ω·V + q·V^{3/2}` along a
/// computed trajectory at the given grid times.
///
/// The derivative is a centered difference with spacing `h_fd = step/4`
/// (`step` is the trajectory's integration step, read from its first
/// segment), so every grid point must keep `t ± h_fd` inside `[0, end]`.
/// The comparison carries the tolerance `max(1e−8, 10·|V|·h_fd²)` for the
/// finite-difference truncation error; a violation is a negative slack
/// beyond that tolerance.
pub fn monitor_differential_inequality(
    cert: &Certificate,
    trajectory: &Trajectory,
    grid: &[f64],
    quad_points: usize,
) -> Result<Vec<MonitorRecord>, LyapunovError> {
    validate_quad_points(quad_points)?;
    let first = trajectory
        .segments()
        .first()
        .ok_or(LyapunovError::EmptyTrajectory)?;
    let h_fd = (first.t1 - first.t0) / 4.0;
    let end = trajectory.end_time();
    let mut records = Vec::with_capacity(grid.len());
    for &t in grid {
        if !t.is_finite() || t - h_fd < 0.0 || t + h_fd > end {
            return Err(LyapunovError::GridOutsideDomain {
                t,
                min: h_fd,
                max: end - h_fd,
            });
        }
        let v_minus = eval_functional_along(cert, trajectory, t - h_fd, quad_points)?.total;
        let v_center = eval_functional_along(cert, trajectory, t, quad_points)?.total;
        let v_plus = eval_functional_along(cert, trajectory, t + h_fd, quad_points)?.total;
        let lhs = (v_plus - v_minus) / (2.0 * h_fd);
        let rhs = -2.0 * cert.omega * v_center + cert.q * v_center.powf(1.5);
        let tolerance = MONITOR_TOL_FLOOR.max(10.0 * v_center.abs() * h_fd * h_fd);
        let slack = rhs - lhs + tolerance;
        records.push(MonitorRecord {
            t,
            v: v_center,
            lhs,
            rhs,
            slack,
            violation: slack < 0.0,
        });
    }
    Ok(records)
}

// ======================== Delayed-term residual (debug) ========================

/// Debug evaluator of the delayed-production residual `R_τ(t)`: the exact
/// amount by which the delayed gains at time `t` exceed their basin-edge
/// majorants used in the certificate,
///
/// ```text
/// R_τ(t) = Σ_{k=3..7} h_k·(e^{κ_k τ_k}/β_k)·g_k²
///          ·[ G_k(y(t−τ_k)) − G_k(θ) ]·y_{c(k)}²(t)
/// ```
///
/// with `G_k` the squared stationary-plus-perturbation products entering the
/// k-th production term. Under basin hypotheses (a) and (c) every bracket is
/// nonpositive, so `R_τ(t) ≤ 0`; a positive value pinpoints which delayed
/// excursion left the certified region, which makes this the first thing to
/// look at when the monitor reports violations.
pub fn delay_residual(
    p: &ModelParameters,
    cert: &Certificate,
    trajectory: &Trajectory,
    t: f64,
) -> Result<f64, LyapunovError> {
    let y = trajectory.eval(t)?;
    let taus = cert.taus();
    let mut delayed = [StateVector::ZERO; 5];
    for (k, tau) in taus.into_iter().enumerate() {
        delayed[k] = trajectory.eval(t - tau)?;
    }
    let h = cert.h();
    let betas = cert.betas();
    let kappas = cert.kappas();

    // Squared delayed gain minus its basin-edge majorant, per term.
    let sq = |v: f64| v * v;
    let brackets = [
        sq(p.xstar3 + delayed[0][2]) - sq(p.xstar3 + cert.theta3),
        sq(p.xstar4 + delayed[1][3]) - sq(p.xstar4 + cert.theta4),
        sq(p.xstar3 + delayed[2][2]) * sq(p.xstar5 + delayed[2][4])
            - sq(p.xstar3 + cert.theta3) * sq(p.xstar5 + cert.theta5),
        sq(p.xstar4 + delayed[3][3]) * sq(p.xstar6 + delayed[3][5])
            - sq(p.xstar4 + cert.theta4) * sq(p.xstar6 + cert.theta6),
        sq(p.xstar4 + delayed[4][3]) * sq(p.xstar6 + delayed[4][5])
            - sq(p.xstar4 + cert.theta4) * sq(p.xstar6 + cert.theta6),
    ];
    let gains = [
        sq(p.b32 * p.rho32),
        sq(p.b42 * p.rho42),
        sq(p.b5 * p.rho5),
        sq(p.b6 * p.rho6),
        sq(p.b7 * p.rho7),
    ];
    // Component whose square multiplies the k-th term (0-based indices 2..6).
    let mut residual = 0.0;
    for k in 0..5 {
        residual += h[k + 2] * ((kappas[k] * taus[k]).exp() / betas[k])
            * gains[k]
            * brackets[k]
            * sq(y[k + 2]);
    }
    Ok(residual)
}

// ======================== Tests ========================
