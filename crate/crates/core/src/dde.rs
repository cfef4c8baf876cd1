//! Constant-delay DDE integration by the method of steps.
//!
//! The integrator advances the ten-component state with the classical
//! four-stage Runge–Kutta scheme at a fixed step and keeps a cubic Hermite
//! dense output per step:
//!
//! ```text
//! y(t0 + u·h) ≈ h00(u)·y0 + h·h10(u)·f0 + h01(u)·y1 + h·h11(u)·f1
//! h00 = 2u³ − 3u² + 1      h10 = u³ − 2u² + u
//! h01 = −2u³ + 3u²         h11 = u³ − u²
//! ```
//!
//! Delayed stage values are fetched from that dense output (or from the
//! supplied history for times ≤ 0). Requiring `step ≤ min(delay)/4` keeps
//! every delayed lookup at least three steps behind the step being computed,
//! so the method never needs values it has not finished producing.
//!
//! An optional scalar event function is checked across each completed step;
//! a negative→non-negative crossing is refined by 60 bisection iterations on
//! the Hermite interpolant and the final segment is truncated at the crossing
//! (keeping the same cubic, so interpolation and knot consistency survive).

use crate::model::{ModelError, StateVector};
use thiserror::Error;

/// Bisection iterations used to refine an event crossing.
const EVENT_BISECTIONS: usize = 60;

// ======================== Errors ========================

/// Errors from integration setup, evaluation, and event handling.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdeError {
    /// The step does not satisfy `step ≤ min(delay)/4`.
    #[error("step {step} exceeds min(delay)/4 = {limit}; delayed lookups would outrun the dense output")]
    StepTooLarge {
        /// Requested step.
        step: f64,
        /// Largest admissible step.
        limit: f64,
    },
    /// The step is not a positive finite real.
    #[error("integration step must be positive and finite (got {step})")]
    InvalidStep {
        /// Offending step.
        step: f64,
    },
    /// The horizon is not a positive finite real.
    #[error("integration horizon must be positive and finite (got {t_end})")]
    InvalidHorizon {
        /// Offending horizon.
        t_end: f64,
    },
    /// A delay is not a positive finite real.
    #[error("delay #{index} must be positive and finite (got {value})")]
    InvalidDelay {
        /// Zero-based position in the delay list.
        index: usize,
        /// Offending value.
        value: f64,
    },
    /// The history does not reach back to `−max(delay)`.
    #[error("history starts at {start} but integration requires coverage from {needed}")]
    HistoryTooShort {
        /// Start of the history domain.
        start: f64,
        /// Required start, `−max(delay)`.
        needed: f64,
    },
    /// A history table violates its shape invariants.
    #[error("invalid history: {reason}")]
    InvalidHistory {
        /// Description of the violated invariant.
        reason: String,
    },
    /// Evaluation outside the trajectory (or history) domain.
    #[error("evaluation time {t} outside the domain [{start}, {end}]")]
    OutOfDomain {
        /// Requested time.
        t: f64,
        /// Domain start.
        start: f64,
        /// Domain end.
        end: f64,
    },
    /// The right-hand side rejected a state; the offending time is attached.
    #[error("right-hand side failed at t = {t}: {source}")]
    Rhs {
        /// Time of the failing evaluation.
        t: f64,
        /// Underlying model error.
        source: ModelError,
    },
    /// The event function produced a non-finite value, so a crossing cannot
    /// be bracketed. Cannot occur for continuous event functions on finite
    /// states.
    #[error("event function returned a non-finite value near t = {t}")]
    EventNotBracketed {
        /// Time near which bracketing failed.
        t: f64,
    },
}

// ======================== History ========================

/// Pre-history of the state on `[−τ, 0]`, supplied to the integrator.
#[derive(Debug, Clone, PartialEq)]
pub enum HistoryFunction {
    /// The same state at every past time (domain unbounded below).
    Constant(StateVector),
    /// Piecewise-linear interpolation of `(t, state)` breakpoints with
    /// strictly increasing times ending exactly at 0.
    Breakpoints(Vec<(f64, StateVector)>),
    /// Cubic Hermite segments (for example, the tail of an earlier
    /// trajectory), contiguous and ending exactly at 0.
    DenseSegments(Vec<Segment>),
}

impl HistoryFunction {
    /// Start of the usable domain (`−∞` for the constant kind).
    #[must_use]
    pub fn domain_start(&self) -> f64 {
        match self {
            Self::Constant(_) => f64::NEG_INFINITY,
            Self::Breakpoints(points) => points.first().map_or(0.0, |&(t, _)| t),
            Self::DenseSegments(segments) => segments.first().map_or(0.0, |s| s.t0),
        }
    }

    /// Checks the shape invariants of the table kinds.
    pub fn validate(&self) -> Result<(), DdeError> {
        let fail = |reason: String| Err(DdeError::InvalidHistory { reason });
        match self {
            Self::Constant(_) => Ok(()),
            Self::Breakpoints(points) => {
                if points.len() < 2 {
                    return fail("breakpoint history needs at least two points".into());
                }
                if points.last().unwrap().0 != 0.0 {
                    return fail(format!(
                        "breakpoint history must end exactly at t = 0 (ends at {})",
                        points.last().unwrap().0
                    ));
                }
                for w in points.windows(2) {
                    if !(w[1].0 > w[0].0) {
                        return fail(format!(
                            "breakpoint times must strictly increase ({} then {})",
                            w[0].0, w[1].0
                        ));
                    }
                }
                Ok(())
            }
            Self::DenseSegments(segments) => {
                if segments.is_empty() {
                    return fail("dense-segment history needs at least one segment".into());
                }
                if segments.last().unwrap().t1 != 0.0 {
                    return fail(format!(
                        "dense-segment history must end exactly at t = 0 (ends at {})",
                        segments.last().unwrap().t1
                    ));
                }
                for s in segments {
                    if !(s.t1 > s.t0) {
                        return fail(format!("segment [{}, {}] is not forward in time", s.t0, s.t1));
                    }
                }
                for w in segments.windows(2) {
                    if w[0].t1 != w[1].t0 {
                        return fail(format!(
                            "segments must tile without gaps ({} then {})",
                            w[0].t1, w[1].t0
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluates the history at `t ≤ 0` (within its domain).
    pub fn eval(&self, t: f64) -> Result<StateVector, DdeError> {
        let start = self.domain_start();
        if t < start || t > 0.0 {
            return Err(DdeError::OutOfDomain { t, start, end: 0.0 });
        }
        match self {
            Self::Constant(value) => Ok(*value),
            Self::Breakpoints(points) => {
                let i = points
                    .partition_point(|&(tk, _)| tk <= t)
                    .clamp(1, points.len() - 1);
                let (t0, v0) = points[i - 1];
                let (t1, v1) = points[i];
                let u = (t - t0) / (t1 - t0);
                Ok(v0.add_scaled(u, &(v1 - v0)))
            }
            Self::DenseSegments(segments) => {
                let i = segments
                    .partition_point(|s| s.t1 < t)
                    .min(segments.len() - 1);
                Ok(segments[i].eval(t))
            }
        }
    }
}

// ======================== Dense-output segments ========================

/// One integration step with the data for cubic Hermite interpolation:
/// endpoint states and endpoint derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Left endpoint time.
    pub t0: f64,
    /// Right endpoint time.
    pub t1: f64,
    /// State at `t0`.
    pub y0: StateVector,
    /// State at `t1`.
    pub y1: StateVector,
    /// Derivative at `t0`.
    pub f0: StateVector,
    /// Derivative at `t1`.
    pub f1: StateVector,
}

impl Segment {
    /// Interpolated state at `t ∈ [t0, t1]`. The Hermite basis is exact at
    /// the endpoints, so knot evaluations return the stored states bitwise.
    #[must_use]
    pub fn eval(&self, t: f64) -> StateVector {
        let h = self.t1 - self.t0;
        let u = (t - self.t0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        let mut out = [0.0; 10];
        for j in 0..10 {
            out[j] = h00 * self.y0[j]
                + h * h10 * self.f0[j]
                + h01 * self.y1[j]
                + h * h11 * self.f1[j];
        }
        StateVector(out)
    }

    /// Time derivative of the interpolant at `t ∈ [t0, t1]`.
    #[must_use]
    pub fn eval_derivative(&self, t: f64) -> StateVector {
        let h = self.t1 - self.t0;
        let u = (t - self.t0) / h;
        let u2 = u * u;
        let d00 = (6.0 * u2 - 6.0 * u) / h;
        let d10 = 3.0 * u2 - 4.0 * u + 1.0;
        let d01 = (-6.0 * u2 + 6.0 * u) / h;
        let d11 = 3.0 * u2 - 2.0 * u;
        let mut out = [0.0; 10];
        for j in 0..10 {
            out[j] = d00 * self.y0[j] + d10 * self.f0[j] + d01 * self.y1[j] + d11 * self.f1[j];
        }
        StateVector(out)
    }
}

// ======================== Trajectory ========================

/// How an integration finished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    /// The full horizon was reached.
    Completed,
    /// The event function crossed zero; integration stopped at the refined
    /// crossing time.
    EventStopped {
        /// Bisection-refined crossing time.
        t_prime: f64,
    },
}

/// Dense solution of a DDE initial-value problem on `[−τ, end]`.
///
/// Evaluation delegates to the owned history for `t ≤ 0` and to the Hermite
/// segments for `t > 0`, so the splice at zero is seamless for quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    history: HistoryFunction,
    segments: Vec<Segment>,
    t_begin: f64,
    t_end: f64,
    termination: Termination,
}

impl Trajectory {
    /// Start of the evaluable domain, `−max(delay)` (or the history start if
    /// that is later).
    #[must_use]
    pub fn begin_time(&self) -> f64 {
        self.t_begin
    }

    /// End of the evaluable domain: the horizon, or the event time `t′`.
    #[must_use]
    pub fn end_time(&self) -> f64 {
        self.t_end
    }

    /// How the integration finished.
    #[must_use]
    pub fn termination(&self) -> Termination {
        self.termination
    }

    /// The dense-output segments tiling `(0, end]`.
    #[must_use]
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// The pre-history the trajectory was integrated from.
    #[must_use]
    pub fn history(&self) -> &HistoryFunction {
        &self.history
    }

    /// Evaluates the solution anywhere in `[−τ, end]`.
    ///
    /// Times up to a relative slack of `1e−12` outside the domain are clamped
    /// (quadrature abscissae legitimately land there through rounding);
    /// anything farther out is a domain error.
    pub fn eval(&self, t: f64) -> Result<StateVector, DdeError> {
        let slack = 1e-12 * self.t_end.abs().max(self.t_begin.abs()).max(1.0);
        if !t.is_finite() || t < self.t_begin - slack || t > self.t_end + slack {
            return Err(DdeError::OutOfDomain {
                t,
                start: self.t_begin,
                end: self.t_end,
            });
        }
        let t = t.clamp(self.t_begin, self.t_end);
        if t <= 0.0 || self.segments.is_empty() {
            return self.history.eval(t);
        }
        let i = self
            .segments
            .partition_point(|s| s.t1 < t)
            .min(self.segments.len() - 1);
        Ok(self.segments[i].eval(t))
    }
}

// ======================== Integration ========================

/// Integrates a constant-delay system `y′(t) = rhs(t, y(t), y(t−τ_k))` from
/// the history at `t = 0` to `t_end`.
///
/// * `rhs` receives the current time, the current state, and one delayed
///   state per entry of `delays` (in the same order).
/// * `step` must be positive and, when delays are present, at most
///   `min(delay)/4` so delayed lookups stay behind the integration front.
///   The final step is shortened to land exactly on `t_end`.
/// * `event`, when supplied, is a scalar condition checked across each
///   completed step; a negative→non-negative crossing stops integration at
///   the bisection-refined time `t′`.
pub fn integrate<F>(
    rhs: F,
    delays: &[f64],
    history: HistoryFunction,
    t_end: f64,
    step: f64,
    event: Option<&dyn Fn(&StateVector) -> f64>,
) -> Result<Trajectory, DdeError>
where
    F: Fn(f64, &StateVector, &[StateVector]) -> Result<StateVector, ModelError>,
{
    if !step.is_finite() || step <= 0.0 {
        return Err(DdeError::InvalidStep { step });
    }
    if !t_end.is_finite() || t_end <= 0.0 {
        return Err(DdeError::InvalidHorizon { t_end });
    }
    for (index, &value) in delays.iter().enumerate() {
        if !value.is_finite() || value <= 0.0 {
            return Err(DdeError::InvalidDelay { index, value });
        }
    }
    let tau_max = delays.iter().fold(0.0f64, |m, &d| m.max(d));
    if !delays.is_empty() {
        let limit = delays.iter().fold(f64::INFINITY, |m, &d| m.min(d)) / 4.0;
        if step > limit {
            return Err(DdeError::StepTooLarge { step, limit });
        }
    }
    history.validate()?;
    if history.domain_start() > -tau_max {
        return Err(DdeError::HistoryTooShort {
            start: history.domain_start(),
            needed: -tau_max,
        });
    }

    // Knot grid: full steps at i·step (computed by multiplication so the grid
    // is exact and run-to-run identical), plus a shortened final step unless
    // the horizon already falls on the grid.
    let tiny = 1e-12 * t_end.max(1.0);
    let mut n_full = ((t_end / step) + 1e-9).floor() as usize;
    while n_full > 0 && (n_full as f64) * step > t_end + tiny {
        n_full -= 1;
    }
    let snapped = ((n_full as f64) * step - t_end).abs() <= tiny;
    let n_steps = n_full + usize::from(!snapped);
    let knot = |i: usize| -> f64 {
        if i >= n_steps || (snapped && i == n_full) {
            t_end
        } else {
            (i as f64) * step
        }
    };

    let mut segments: Vec<Segment> = Vec::with_capacity(n_steps);
    let mut delayed = vec![StateVector::ZERO; delays.len()];

    // Delayed lookups stay at least three steps behind the integration front,
    // so every request is resolvable from the history or a finished segment.
    fn lookup(
        history: &HistoryFunction,
        segments: &[Segment],
        t: f64,
    ) -> Result<StateVector, DdeError> {
        if t <= 0.0 || segments.is_empty() {
            return history.eval(t);
        }
        let i = segments.partition_point(|s| s.t1 < t);
        match segments.get(i.min(segments.len() - 1)) {
            Some(s) if t <= s.t1 => Ok(s.eval(t)),
            _ => Err(DdeError::OutOfDomain {
                t,
                start: history.domain_start(),
                end: segments.last().map_or(0.0, |s| s.t1),
            }),
        }
    }

    let eval_rhs = |t: f64,
                    y: &StateVector,
                    segments: &[Segment],
                    delayed: &mut Vec<StateVector>|
     -> Result<StateVector, DdeError> {
        for (slot, &tau) in delayed.iter_mut().zip(delays) {
            *slot = lookup(&history, segments, t - tau)?;
        }
        rhs(t, y, delayed).map_err(|source| DdeError::Rhs { t, source })
    };

    let mut y = history.eval(0.0)?;
    let mut f = eval_rhs(0.0, &y, &segments, &mut delayed)?;

    if let Some(g) = event {
        let g0 = g(&y);
        if !g0.is_finite() {
            return Err(DdeError::EventNotBracketed { t: 0.0 });
        }
        if g0 >= 0.0 {
            // The event condition already holds at the initial time.
            return Ok(Trajectory {
                history,
                segments,
                t_begin: -tau_max,
                t_end: 0.0,
                termination: Termination::EventStopped { t_prime: 0.0 },
            });
        }
    }

    for i in 0..n_steps {
        let t0 = knot(i);
        let t1 = knot(i + 1);
        let h = t1 - t0;
        let k1 = f;
        let k2 = eval_rhs(t0 + 0.5 * h, &y.add_scaled(0.5 * h, &k1), &segments, &mut delayed)?;
        let k3 = eval_rhs(t0 + 0.5 * h, &y.add_scaled(0.5 * h, &k2), &segments, &mut delayed)?;
        let k4 = eval_rhs(t1, &y.add_scaled(h, &k3), &segments, &mut delayed)?;
        let mut increment = k1;
        increment = increment.add_scaled(2.0, &k2);
        increment = increment.add_scaled(2.0, &k3);
        increment = increment.add_scaled(1.0, &k4);
        let y1 = y.add_scaled(h / 6.0, &increment);
        let f1 = eval_rhs(t1, &y1, &segments, &mut delayed)?;
        let segment = Segment {
            t0,
            t1,
            y0: y,
            y1,
            f0: k1,
            f1,
        };
        segments.push(segment);

        if let Some(g) = event {
            let g0 = g(&y);
            let g1 = g(&y1);
            if !g1.is_finite() {
                return Err(DdeError::EventNotBracketed { t: t1 });
            }
            if g0 < 0.0 && g1 >= 0.0 {
                // Refine on the interpolant: keep g(a) < 0 ≤ g(b).
                let (mut a, mut b) = (t0, t1);
                for _ in 0..EVENT_BISECTIONS {
                    let m = 0.5 * (a + b);
                    let gm = g(&segment.eval(m));
                    if !gm.is_finite() {
                        return Err(DdeError::EventNotBracketed { t: m });
                    }
                    if gm >= 0.0 {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                let t_prime = b;
                // Truncate to [t0, t′] on the SAME cubic: taking the value
                // and derivative of the original interpolant at t′ as the new
                // right-endpoint data reproduces it exactly on the subinterval.
                let truncated = Segment {
                    t0,
                    t1: t_prime,
                    y0: y,
                    y1: segment.eval(t_prime),
                    f0: k1,
                    f1: segment.eval_derivative(t_prime),
                };
                *segments.last_mut().unwrap() = truncated;
                return Ok(Trajectory {
                    history,
                    segments,
                    t_begin: -tau_max,
                    t_end: t_prime,
                    termination: Termination::EventStopped { t_prime },
                });
            }
        }

        y = y1;
        f = f1;
    }

    Ok(Trajectory {
        history,
        segments,
        t_begin: -tau_max,
        t_end,
        termination: Termination::Completed,
    })
}

/// Observed convergence order of the integrator on the given problem.
///
/// Integrates at two coarse steps (`τ_min/16` and `τ_min/32`, or fractions of
/// `t_probe` when there are no delays), measures both errors at `t_probe`
/// against a fine self-reference (`τ_min/128`), and returns
/// `log2(error(h) / error(h/2))` — approximately 4 where the scheme's
/// leading-order error term is active. Degenerate on problems the scheme
/// integrates exactly (both errors are then pure roundoff and the ratio is
/// noise).
pub fn convergence_order<F>(
    rhs: &F,
    delays: &[f64],
    history: &HistoryFunction,
    t_probe: f64,
) -> Result<f64, DdeError>
where
    F: Fn(f64, &StateVector, &[StateVector]) -> Result<StateVector, ModelError>,
{
    if !t_probe.is_finite() || t_probe <= 0.0 {
        return Err(DdeError::InvalidHorizon { t_end: t_probe });
    }
    let scale = if delays.is_empty() {
        t_probe
    } else {
        delays.iter().fold(f64::INFINITY, |m, &d| m.min(d))
    };
    let solve = |step: f64| -> Result<StateVector, DdeError> {
        integrate(rhs, delays, history.clone(), t_probe, step, None)?.eval(t_probe)
    };
    let reference = solve(scale / 128.0)?;
    let error_coarse = solve(scale / 16.0)?.max_abs_diff(&reference);
    let error_fine = solve(scale / 32.0)?.max_abs_diff(&reference);
    Ok((error_coarse / error_fine).log2())
}

// ======================== Tests ========================
