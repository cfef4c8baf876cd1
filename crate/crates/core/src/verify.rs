//! End-to-end verification runs and parameter sweeps.
//!
//! A verification run executes the whole pipeline against one configuration:
//!
//! 1. build the decay certificate (infeasibility is a verdict, not an error),
//! 2. measure the initial energy `V0` and check the attraction-set
//!    hypotheses on the initial history,
//! 3. integrate the shifted system with an event stop at damage `y10 = 1`,
//! 4. compare the trajectory against the certified envelopes, floors, and
//!    damage bound on the output grid, and re-check the differential
//!    inequality with the finite-difference monitor.
//!
//! The outcome is a [`VerificationReport`] that either claims nothing beyond
//! what was established (`hypotheses-failed` reports carry no
//! trajectory-derived fields at all) or pins every claim to a measured
//! number. Sweeps run many such verifications over a Cartesian grid of
//! config edits, in parallel, with deterministic ordering.

use crate::certificate::{build_certificate, Certificate, CertificateChoices};
use crate::dde::{integrate, HistoryFunction, Termination, Trajectory};
use crate::lyapunov::{
    check_basin, envelope, eval_functional_initial, monitor_differential_inequality, BasinReport,
    EnvelopeBound,
};
use crate::model::{
    check_stability_condition, rhs_shifted_clamped, ModelParameters, StateVector, XiFunction,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance granted to the envelope comparison `|y_j| ≤ B_j(t)`.
/// Envelopes are analytic; the trajectory error is O(step⁴), far below this.
const TOL_BOUND: f64 = 1e-6;
/// Absolute tolerance below the floors `−X_j*` before a sample counts as a
/// positivity violation.
const FLOOR_TOL: f64 = 1e-10;
/// Interior points of the differential-inequality monitor grid.
const MONITOR_POINTS: usize = 100;

// ======================== Report types ========================

/// Overall outcome of a verification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Hypotheses hold and every checked conclusion holds.
    Verified,
    /// The certificate is infeasible or the initial history fails the
    /// attraction-set hypotheses; nothing about trajectories is claimed.
    HypothesesFailed,
    /// Hypotheses hold but a checked conclusion fails (envelope exceeded,
    /// floor crossed, damage bound reached, monitor violation, or the
    /// integration itself broke down).
    BoundViolated,
    /// Integration stopped early at the damage threshold `y10 = 1`.
    EventStopped,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Verified => "verified",
            Verdict::HypothesesFailed => "hypotheses-failed",
            Verdict::BoundViolated => "bound-violated",
            Verdict::EventStopped => "event-stopped",
        })
    }
}

/// Shape of the computed trajectory a report's claims refer to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    /// Time actually reached: the horizon, or the event time t′.
    pub reached_time: f64,
    /// Integration step.
    pub step: f64,
    /// Number of output-grid samples the checks ran on.
    pub grid_points: usize,
    /// Whether the run stopped at the damage threshold.
    pub event_stopped: bool,
}

/// Aggregate of the differential-inequality monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary {
    /// Grid points evaluated.
    pub evaluated: usize,
    /// Points where the inequality failed beyond tolerance.
    pub violations: usize,
    /// Smallest slack seen (negative means a violation).
    pub min_slack: f64,
    /// Earliest violating time, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_violation_time: Option<f64>,
}

/// Complete, self-describing outcome of one verification run.
///
/// Fields that depend on stages the run never reached stay `None` and are
/// omitted from JSON: a `hypotheses-failed` report makes no trajectory
/// claims whatsoever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Overall outcome.
    pub verdict: Verdict,
    /// Stability margin `a11·a99 − a19·a91` (present whenever the parameters
    /// could be evaluated; nonpositive explains an infeasible certificate).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability_margin: Option<f64>,
    /// The decay certificate, when one exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    /// Initial functional value V0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_energy: Option<f64>,
    /// Itemized attraction-set hypothesis check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basin: Option<BasinReport>,
    /// Human-readable explanation of an early exit (infeasibility,
    /// validation failure, integration breakdown).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    /// Shape of the computed trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryMeta>,
    /// Per-component maximum of `|y_j(t)| / B_j(t)` over the output grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<[f64; 10]>,
    /// Largest of the per-component ratios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_max_ratio: Option<f64>,
    /// Number of grid samples below a component floor by more than `1e−10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_violations: Option<usize>,
    /// Largest damage value seen on the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x10_max: Option<f64>,
    /// Differential-inequality monitor aggregate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<MonitorSummary>,
    /// Set when an event stop occurred although the hypotheses held — the
    /// certified bounds forbid reaching the damage threshold, so this flags
    /// a numerics or implementation fault rather than a model outcome.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound_violated_by_event: Option<bool>,
}

impl VerificationReport {
    fn bare(verdict: Verdict) -> Self {
        VerificationReport {
            verdict,
            stability_margin: None,
            certificate: None,
            initial_energy: None,
            basin: None,
            diagnostic: None,
            trajectory: None,
            max_ratio: None,
            overall_max_ratio: None,
            floor_violations: None,
            x10_max: None,
            monitor: None,
            bound_violated_by_event: None,
        }
    }
}

// ======================== Numerics configuration ========================

/// Numerical settings of a verification run (the horizon is passed
/// separately so overrides stay explicit).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyNumerics {
    /// Integration step.
    pub step: f64,
    /// Simpson intervals per memory integral (even, ≥ 8).
    pub quad_points: usize,
    /// Spacing of the output grid the conclusions are checked on.
    pub output_grid_spacing: f64,
}

impl VerifyNumerics {
    /// Defaults for a parameter set: step `min(τ_k)/20`, 64 quadrature
    /// intervals, output grid at every step.
    #[must_use]
    pub fn for_parameters(p: &ModelParameters) -> Self {
        let step = p.tau_min() / 20.0;
        VerifyNumerics {
            step,
            quad_points: 64,
            output_grid_spacing: step,
        }
    }
}

// ======================== Verification ========================

/// Ratio `value/bound` with the convention that a zero bound is only met by
/// a zero value (0/0 counts as 0, anything else as +∞).
fn bound_ratio(value: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        value / bound
    } else if value == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

struct TrajectoryChecks {
    meta: TrajectoryMeta,
    max_ratio: [f64; 10],
    overall_max_ratio: f64,
    floor_violations: usize,
    x10_max: f64,
    monitor: MonitorSummary,
    event_stopped: bool,
}

/// Output grid over `[0, end]`: multiples of `spacing`, then the exact end
/// time (so the last sample always lands on the trajectory's final state).
pub(crate) fn output_grid(end: f64, spacing: f64) -> Vec<f64> {
    let mut grid = Vec::new();
    let tiny = 1e-12 * end.max(1.0);
    let mut i = 0usize;
    loop {
        let t = i as f64 * spacing;
        if t >= end - tiny {
            break;
        }
        grid.push(t);
        i += 1;
    }
    grid.push(end);
    grid
}

fn analyze_trajectory(
    cert: &Certificate,
    env: &EnvelopeBound,
    trajectory: &Trajectory,
    numerics: &VerifyNumerics,
) -> Result<TrajectoryChecks, String> {
    let end = trajectory.end_time();
    let event_stopped = matches!(trajectory.termination(), Termination::EventStopped { .. });

    let grid = output_grid(end, numerics.output_grid_spacing);

    let xstars = cert.xstars();
    let mut max_ratio = [0.0_f64; 10];
    let mut floor_violations = 0usize;
    let mut x10_max = f64::NEG_INFINITY;
    for &t in &grid {
        let y = trajectory.eval(t).map_err(|e| e.to_string())?;
        for j in 0..10 {
            let ratio = bound_ratio(y[j].abs(), env.bound(j, t));
            max_ratio[j] = max_ratio[j].max(ratio);
            if y[j] < -xstars[j] - FLOOR_TOL {
                floor_violations += 1;
            }
        }
        x10_max = x10_max.max(y[9]);
    }
    let overall_max_ratio = max_ratio.into_iter().fold(0.0, f64::max);

    // Monitor on up to MONITOR_POINTS uniform interior times, keeping the
    // finite-difference stencil inside the trajectory.
    let monitor = if trajectory.segments().is_empty() {
        MonitorSummary {
            evaluated: 0,
            violations: 0,
            min_slack: f64::INFINITY,
            first_violation_time: None,
        }
    } else {
        let h_fd = {
            let first = &trajectory.segments()[0];
            (first.t1 - first.t0) / 4.0
        };
        let monitor_grid: Vec<f64> = (1..=MONITOR_POINTS)
            .map(|i| end * i as f64 / (MONITOR_POINTS + 1) as f64)
            .filter(|&t| t - h_fd >= 0.0 && t + h_fd <= end)
            .collect();
        let records =
            monitor_differential_inequality(cert, trajectory, &monitor_grid, numerics.quad_points)
                .map_err(|e| e.to_string())?;
        let violations = records.iter().filter(|r| r.violation).count();
        MonitorSummary {
            evaluated: records.len(),
            violations,
            min_slack: records
                .iter()
                .map(|r| r.slack)
                .fold(f64::INFINITY, f64::min),
            first_violation_time: records.iter().find(|r| r.violation).map(|r| r.t),
        }
    };

    Ok(TrajectoryChecks {
        meta: TrajectoryMeta {
            reached_time: end,
            step: numerics.step,
            grid_points: grid.len(),
            event_stopped,
        },
        max_ratio,
        overall_max_ratio,
        floor_violations,
        x10_max,
        monitor,
        event_stopped,
    })
}

/// Final verdict from the trajectory checks (hypotheses already passed).
fn conclusion_verdict(checks: &TrajectoryChecks) -> Verdict {
    if checks.event_stopped {
        return Verdict::EventStopped;
    }
    let bounds_hold = checks.overall_max_ratio <= 1.0 + TOL_BOUND
        && checks.floor_violations == 0
        && checks.x10_max < 1.0
        && checks.monitor.violations == 0;
    if bounds_hold {
        Verdict::Verified
    } else {
        Verdict::BoundViolated
    }
}

/// Runs the full verification pipeline for one configuration.
///
/// Never panics and never returns an error: every failure mode is a verdict.
/// An infeasible certificate or a failed basin hypothesis yields
/// `hypotheses-failed` (with the stability margin and itemized basin check
/// when available) and makes no claims about trajectories. An integration
/// breakdown after the hypotheses passed yields `bound-violated` with a
/// diagnostic, since the certificate claimed the solution stays tame.
pub fn run_verification(
    p: &ModelParameters,
    xi: &XiFunction,
    choices: &CertificateChoices,
    psi: &HistoryFunction,
    t_end: f64,
    numerics: &VerifyNumerics,
) -> VerificationReport {
    let mut report = VerificationReport::bare(Verdict::HypothesesFailed);

    if let Err(e) = p.validate() {
        report.diagnostic = Some(e.to_string());
        return report;
    }
    report.stability_margin = Some(check_stability_condition(p).margin);

    if !(numerics.output_grid_spacing > 0.0 && numerics.output_grid_spacing.is_finite()) {
        report.diagnostic = Some(format!(
            "output grid spacing must be a positive real (got {})",
            numerics.output_grid_spacing
        ));
        return report;
    }

    let cert = match build_certificate(p, choices) {
        Ok(cert) => cert,
        Err(e) => {
            report.diagnostic = Some(e.to_string());
            return report;
        }
    };

    let v0 = match eval_functional_initial(&cert, psi, numerics.quad_points) {
        Ok(value) => value.total,
        Err(e) => {
            report.certificate = Some(cert);
            report.diagnostic = Some(e.to_string());
            return report;
        }
    };
    let basin = match check_basin(&cert, psi, v0) {
        Ok(basin) => basin,
        Err(e) => {
            report.certificate = Some(cert);
            report.initial_energy = Some(v0);
            report.diagnostic = Some(e.to_string());
            return report;
        }
    };
    report.initial_energy = Some(v0);
    let basin_passed = basin.passed;
    report.basin = Some(basin);
    if !basin_passed {
        report.certificate = Some(cert);
        return report;
    }
    let env = match envelope(&cert, v0) {
        Ok(env) => env,
        Err(e) => {
            report.certificate = Some(cert);
            report.diagnostic = Some(e.to_string());
            return report;
        }
    };

    let event = |y: &StateVector| y[9] - 1.0;
    let integration = integrate(
        |_t, y, yd: &[StateVector]| {
            rhs_shifted_clamped(p, xi, y, yd.try_into().expect("five delays"))
        },
        &p.delays(),
        psi.clone(),
        t_end,
        numerics.step,
        Some(&event),
    );
    let trajectory = match integration {
        Ok(trajectory) => trajectory,
        Err(e) => {
            report.certificate = Some(cert);
            report.verdict = Verdict::BoundViolated;
            report.diagnostic = Some(format!("integration failed: {e}"));
            return report;
        }
    };

    let checks = match analyze_trajectory(&cert, &env, &trajectory, numerics) {
        Ok(checks) => checks,
        Err(e) => {
            report.certificate = Some(cert);
            report.verdict = Verdict::BoundViolated;
            report.diagnostic = Some(format!("trajectory analysis failed: {e}"));
            return report;
        }
    };
    report.certificate = Some(cert);
    report.verdict = conclusion_verdict(&checks);
    report.trajectory = Some(checks.meta);
    report.max_ratio = Some(checks.max_ratio);
    report.overall_max_ratio = Some(checks.overall_max_ratio);
    report.floor_violations = Some(checks.floor_violations);
    report.x10_max = Some(checks.x10_max);
    report.monitor = Some(checks.monitor);
    if checks.event_stopped {
        report.bound_violated_by_event = Some(true);
    }
    report
}

// ======================== Sweeps ========================

/// One sweep axis: a dotted path into the run configuration and the values
/// it takes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    /// Dotted path of the config field to vary (e.g. `parameters.sigma`).
    pub path: String,
    /// Values the field takes, in sweep order.
    pub values: Vec<f64>,
}

/// Errors in the sweep specification itself (per-point failures are recorded
/// in that point's report instead).
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    /// No axes were given.
    #[error("sweep needs at least one axis")]
    NoAxes,
    /// An axis has no values.
    #[error("sweep axis `{path}` has no values")]
    EmptyAxis {
        /// Path of the empty axis.
        path: String,
    },
}

/// Coordinates of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Lexicographic index in the Cartesian product (last axis fastest).
    pub index: usize,
    /// One value per axis, in axis order.
    pub coordinates: Vec<f64>,
}

/// A sweep point together with its verification outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPointResult {
    /// Where in the product grid this run sits.
    pub point: SweepPoint,
    /// Outcome at this point.
    pub report: VerificationReport,
}

/// Everything one verification run needs, as materialized for a sweep point.
#[derive(Debug, Clone)]
pub struct VerifyInputs {
    /// Model parameters.
    pub parameters: ModelParameters,
    /// Treatment saturation function.
    pub xi: XiFunction,
    /// Resolved certificate choices.
    pub choices: CertificateChoices,
    /// Initial history in shifted coordinates.
    pub psi: HistoryFunction,
    /// Integration horizon.
    pub t_end: f64,
    /// Numerical settings.
    pub numerics: VerifyNumerics,
}

/// Runs one verification per point of the Cartesian product of `axes`.
///
/// `materialize` turns a point's coordinates (one value per axis, in axis
/// order) into concrete run inputs; a materialization error is recorded as
/// that point's `hypotheses-failed` report and never aborts the sweep.
/// Points run in parallel; results come back ordered by lexicographic point
/// index (last axis fastest), so identical specs give identical output.
pub fn run_sweep<F>(
    axes: &[SweepAxis],
    materialize: F,
) -> Result<Vec<SweepPointResult>, SweepError>
where
    F: Fn(&[f64]) -> Result<VerifyInputs, String> + Sync,
{
    if axes.is_empty() {
        return Err(SweepError::NoAxes);
    }
    for axis in axes {
        if axis.values.is_empty() {
            return Err(SweepError::EmptyAxis {
                path: axis.path.clone(),
            });
        }
    }
    let total: usize = axes.iter().map(|axis| axis.values.len()).product();

    let coordinates_of = |index: usize| -> Vec<f64> {
        let mut remainder = index;
        let mut coords = vec![0.0; axes.len()];
        for (k, axis) in axes.iter().enumerate().rev() {
            coords[k] = axis.values[remainder % axis.values.len()];
            remainder /= axis.values.len();
        }
        coords
    };

    Ok((0..total)
        .into_par_iter()
        .map(|index| {
            let coordinates = coordinates_of(index);
            let report = match materialize(&coordinates) {
                Ok(inputs) => run_verification(
                    &inputs.parameters,
                    &inputs.xi,
                    &inputs.choices,
                    &inputs.psi,
                    inputs.t_end,
                    &inputs.numerics,
                ),
                Err(message) => {
                    let mut report = VerificationReport::bare(Verdict::HypothesesFailed);
                    report.diagnostic = Some(message);
                    report
                }
            };
            SweepPointResult {
                point: SweepPoint {
                    index,
                    coordinates,
                },
                report,
            }
        })
        .collect())
}

// ======================== Tests ========================
