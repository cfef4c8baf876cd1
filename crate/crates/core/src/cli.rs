//! Command-line front end: configuration parsing, subcommands, and file
//! emission.
//!
//! One JSON configuration document drives every subcommand:
//!
//! ```text
//! immunocert simulate    --config run.json [--out DIR] [--t-end T] [--step H]
//! immunocert certify     --config run.json ...
//! immunocert check-basin --config run.json ...
//! immunocert verify      --config run.json ...
//! immunocert sweep       --config run.json ...
//! ```
//!
//! Every run echoes the fully resolved configuration (defaults filled) to
//! `effective-config.json` in the output directory, so any result can be
//! reproduced from its artifacts alone. Reports are plain JSON, trajectories
//! and envelopes plain CSV.
//!
//! Exit codes: `0` success/verified, `1` usage or validation error,
//! `2` infeasible certificate, `3` failed checks (basin hypothesis failure,
//! bound or monitor violation, damage-threshold stop, integration failure).

use crate::certificate::{
    build_certificate, resolve_choices, Certificate, CertificateChoices, CertificateError,
    ChoiceOverrides,
};
use crate::dde::{integrate, HistoryFunction, Termination, Trajectory};
use crate::lyapunov::{check_basin, envelope, eval_functional_initial};
use crate::model::{
    check_stability_condition, rhs_shifted_clamped, stationary_point, ModelParameters,
    StateVector, XiFunction,
};
use crate::verify::{
    output_grid, run_sweep, run_verification, SweepAxis, Verdict, VerificationReport,
    VerifyInputs, VerifyNumerics,
};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Default horizon (model time) when the config omits `numerics.t_end`.
const DEFAULT_T_END: f64 = 50.0;
/// Default Simpson intervals when the config omits `numerics.quad_points`.
const DEFAULT_QUAD_POINTS: usize = 64;
/// Default constant initial perturbation (shifted frame, damage zero).
const DEFAULT_INITIAL_AMPLITUDE: f64 = 1e-3;

// ======================== Errors and exit codes ========================

/// Front-end error carrying its process exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    /// Usage, configuration, or environment problem (exit 1).
    #[error("{0}")]
    Usage(String),
    /// The stationary point is not exponentially stable (exit 2).
    #[error("{0}")]
    Infeasible(String),
    /// A runtime check or computation failed (exit 3).
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Process exit code of this error class.
    #[must_use]
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Failed(_) => 3,
        }
    }
}

impl From<CertificateError> for CliError {
    fn from(e: CertificateError) -> Self {
        match e {
            CertificateError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            CertificateError::InternalConsistency { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

// ======================== Configuration document ========================

/// Initial history section of the configuration.
///
/// `kind` is `"constant"` (values: one 10-vector) or `"table"` (values: rows
/// `[t, v1..v10]` with strictly increasing `t` ending exactly at `0`).
/// `coordinate-frame` says whether the values are original populations `φ`
/// (converted internally via `ψ = φ − X*`) or already the shifted
/// perturbation `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    /// `"constant"` or `"table"`.
    pub kind: String,
    /// One 10-vector, or rows of `[t, v1..v10]`.
    pub values: serde_json::Value,
    /// `"original"` or `"shifted"`.
    #[serde(rename = "coordinate-frame")]
    pub coordinate_frame: String,
}

impl Default for InitialConfig {
    fn default() -> Self {
        let mut values = vec![DEFAULT_INITIAL_AMPLITUDE; 10];
        values[9] = 0.0;
        InitialConfig {
            kind: "constant".into(),
            values: serde_json::json!(values),
            coordinate_frame: "shifted".into(),
        }
    }
}

/// Numerical settings; every omitted field gets a default at load time
/// (step `min(τ)/20`, horizon 50, 64 quadrature intervals, output grid at
/// every step).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    /// Integration step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Integration horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Simpson intervals per memory integral (even, ≥ 8).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_points: Option<usize>,
    /// Output grid spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_grid_spacing: Option<f64>,
}

/// Output destination and artifact formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Directory all artifacts are written into (created if missing).
    pub directory: String,
    /// Artifact formats to emit: any subset of `"csv"`, `"json"`.
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: "out".into(),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

/// Sweep section: the Cartesian grid of config edits to verify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Axes of the grid, swept with the last axis fastest.
    pub axes: Vec<SweepAxis>,
}

/// The complete configuration document all subcommands consume.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model rate constants, delays, and resting levels.
    pub parameters: ModelParameters,
    /// Treatment/efficiency factor `ξ`.
    pub xi: XiFunction,
    /// Certificate freedoms; omitted entries use the canonical defaults
    /// (`θ_k = X_k*`, `κ_k = 2δ`, `delta_fraction = 0.5`).
    pub choices: ChoiceOverrides,
    /// Initial history.
    pub initial: InitialConfig,
    /// Numerical settings.
    pub numerics: NumericsConfig,
    /// Output destination.
    pub output: OutputConfig,
    /// Sweep grid (only the `sweep` subcommand reads it).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

// ======================== Loading and validation ========================

/// A parsed initial history in its declared frame.
enum InitialValues {
    Constant(StateVector),
    Table(Vec<(f64, StateVector)>),
}

fn parse_state(row: &[serde_json::Value], what: &str) -> Result<StateVector, CliError> {
    let mut out = [0.0; 10];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = row[j].as_f64().ok_or_else(|| {
            CliError::Usage(format!("initial.values: {what} entry {} is not a number", j + 1))
        })?;
    }
    Ok(StateVector(out))
}

fn parse_initial_values(initial: &InitialConfig) -> Result<InitialValues, CliError> {
    let fail = |msg: String| Err(CliError::Usage(msg));
    let rows = match initial.values.as_array() {
        Some(rows) => rows,
        None => return fail("initial.values must be an array".into()),
    };
    match initial.kind.as_str() {
        "constant" => {
            if rows.len() != 10 {
                return fail(format!(
                    "initial.values: constant history needs exactly 10 components (got {})",
                    rows.len()
                ));
            }
            Ok(InitialValues::Constant(parse_state(rows, "component")?))
        }
        "table" => {
            let mut table = Vec::with_capacity(rows.len());
            for (i, row) in rows.iter().enumerate() {
                let cells = match row.as_array() {
                    Some(cells) if cells.len() == 11 => cells,
                    _ => {
                        return fail(format!(
                            "initial.values: table row {i} must be [t, v1..v10] (11 numbers)"
                        ))
                    }
                };
                let t = cells[0].as_f64().ok_or_else(|| {
                    CliError::Usage(format!("initial.values: table row {i} has a non-numeric time"))
                })?;
                table.push((t, parse_state(&cells[1..], "table state")?));
            }
            if table.len() < 2 {
                return fail("initial.values: table history needs at least two rows".into());
            }
            if !table.windows(2).all(|w| w[0].0 < w[1].0) {
                return fail("initial.values: table times must be strictly increasing".into());
            }
            if table.last().map(|&(t, _)| t) != Some(0.0) {
                return fail("initial.values: table must end exactly at t = 0".into());
            }
            Ok(InitialValues::Table(table))
        }
        other => fail(format!(
            "initial.kind must be \"constant\" or \"table\" (got \"{other}\")"
        )),
    }
}

/// Converts original-frame populations `φ` to the shifted perturbation
/// `ψ = φ − X*`, rejecting unphysical data (negative populations, damage
/// outside `[0, 1]`).
fn shift_original(phi: &StateVector, xstar: &StateVector) -> Result<StateVector, CliError> {
    for j in 0..10 {
        if !(phi[j] >= 0.0) {
            return Err(CliError::Usage(format!(
                "initial.values: original-frame component {} must be non-negative (got {})",
                j + 1,
                phi[j]
            )));
        }
    }
    if phi[9] > 1.0 {
        return Err(CliError::Usage(format!(
            "initial.values: original-frame damage must lie in [0, 1] (got {})",
            phi[9]
        )));
    }
    let mut psi = [0.0; 10];
    for j in 0..10 {
        psi[j] = phi[j] - xstar[j];
    }
    Ok(StateVector(psi))
}

fn build_history(
    initial: &InitialConfig,
    p: &ModelParameters,
    amplitude: Option<f64>,
) -> Result<HistoryFunction, CliError> {
    let xstar = stationary_point(p).0;
    let original = match initial.coordinate_frame.as_str() {
        "original" => true,
        "shifted" => false,
        other => {
            return Err(CliError::Usage(format!(
                "initial.coordinate-frame must be \"original\" or \"shifted\" (got \"{other}\")"
            )))
        }
    };
    let mut history = match parse_initial_values(initial)? {
        InitialValues::Constant(state) => {
            let psi = if original { shift_original(&state, &xstar)? } else { state };
            HistoryFunction::Constant(psi)
        }
        InitialValues::Table(table) => {
            let depth = table.first().map_or(0.0, |&(t, _)| t);
            if depth > -p.tau_max() {
                return Err(CliError::Usage(format!(
                    "initial.values: table history starts at t = {depth} but must reach back \
                     to −max(τ) = {}",
                    -p.tau_max()
                )));
            }
            let mut shifted = Vec::with_capacity(table.len());
            for (t, state) in table {
                let psi = if original { shift_original(&state, &xstar)? } else { state };
                shifted.push((t, psi));
            }
            HistoryFunction::Breakpoints(shifted)
        }
    };
    if let Some(target) = amplitude {
        history = rescale_history(history, target)?;
    }
    history
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(history)
}

/// Rescales a shifted-frame history so its largest absolute sample equals
/// `target` (the `initial.amplitude` sweep axis).
fn rescale_history(history: HistoryFunction, target: f64) -> Result<HistoryFunction, CliError> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(CliError::Usage(format!(
            "initial.amplitude must be a non-negative real (got {target})"
        )));
    }
    let peak = match &history {
        HistoryFunction::Constant(state) => state.max_abs(),
        HistoryFunction::Breakpoints(points) => {
            points.iter().fold(0.0f64, |m, (_, s)| m.max(s.max_abs()))
        }
        HistoryFunction::DenseSegments(_) => {
            return Err(CliError::Usage(
                "initial.amplitude cannot rescale a dense-segment history".into(),
            ))
        }
    };
    if peak == 0.0 {
        return Err(CliError::Usage(
            "initial.amplitude is undefined for an identically zero initial history".into(),
        ));
    }
    let scale = target / peak;
    Ok(match history {
        HistoryFunction::Constant(state) => HistoryFunction::Constant(state * scale),
        HistoryFunction::Breakpoints(points) => HistoryFunction::Breakpoints(
            points.into_iter().map(|(t, s)| (t, s * scale)).collect(),
        ),
        HistoryFunction::DenseSegments(_) => unreachable!("rejected above"),
    })
}

fn resolve_numerics(
    numerics: &NumericsConfig,
    p: &ModelParameters,
) -> Result<(NumericsConfig, VerifyNumerics, f64), CliError> {
    let fail = |msg: String| Err(CliError::Usage(msg));
    let step = numerics.step.unwrap_or_else(|| p.tau_min() / 20.0);
    if !(step > 0.0) || !step.is_finite() {
        return fail(format!("numerics.step must be a positive real (got {step})"));
    }
    if step > p.tau_min() / 4.0 {
        return fail(format!(
            "numerics.step = {step} exceeds min(τ)/4 = {}; delayed lookups would outrun \
             the integration front",
            p.tau_min() / 4.0
        ));
    }
    let t_end = numerics.t_end.unwrap_or(DEFAULT_T_END);
    if !(t_end > 0.0) || !t_end.is_finite() {
        return fail(format!("numerics.t_end must be a positive real (got {t_end})"));
    }
    let quad_points = numerics.quad_points.unwrap_or(DEFAULT_QUAD_POINTS);
    if quad_points < 8 || quad_points % 2 != 0 {
        return fail(format!(
            "numerics.quad_points must be an even integer ≥ 8 (got {quad_points})"
        ));
    }
    let spacing = numerics.output_grid_spacing.unwrap_or(step);
    if !(spacing > 0.0) || !spacing.is_finite() {
        return fail(format!(
            "numerics.output_grid_spacing must be a positive real (got {spacing})"
        ));
    }
    let resolved = NumericsConfig {
        step: Some(step),
        t_end: Some(t_end),
        quad_points: Some(quad_points),
        output_grid_spacing: Some(spacing),
    };
    let verify = VerifyNumerics {
        step,
        quad_points,
        output_grid_spacing: spacing,
    };
    Ok((resolved, verify, t_end))
}

fn overrides_from(choices: &CertificateChoices) -> ChoiceOverrides {
    ChoiceOverrides {
        theta3: Some(choices.theta3),
        theta4: Some(choices.theta4),
        theta5: Some(choices.theta5),
        theta6: Some(choices.theta6),
        kappa3: Some(choices.kappa3),
        kappa4: Some(choices.kappa4),
        kappa5: Some(choices.kappa5),
        kappa6: Some(choices.kappa6),
        kappa7: Some(choices.kappa7),
        delta_fraction: Some(choices.delta_fraction),
    }
}

/// Which artifact formats the run emits.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Formats {
    csv: bool,
    json: bool,
}

/// A fully validated run: the effective (default-filled) configuration plus
/// the concrete inputs every subcommand consumes.
#[derive(Debug)]
pub struct PreparedRun {
    /// Effective configuration, echoed to the output directory.
    pub effective: RunConfig,
    parameters: ModelParameters,
    xi: XiFunction,
    /// Resolved choices, or the infeasibility message when the stationary
    /// point is unstable (simulation still works; certification exits 2).
    choices: Result<CertificateChoices, String>,
    psi: HistoryFunction,
    original_frame: bool,
    numerics: VerifyNumerics,
    t_end: f64,
    out_dir: PathBuf,
    formats: Formats,
}

/// Parses a configuration document from JSON text.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

/// Validates a parsed configuration and resolves every default.
pub fn prepare_run(mut config: RunConfig) -> Result<PreparedRun, CliError> {
    config
        .parameters
        .validate()
        .map_err(|e| CliError::Usage(format!("parameters: {e}")))?;
    config
        .xi
        .validate()
        .map_err(|e| CliError::Usage(format!("xi: {e}")))?;

    let mut formats = Formats {
        csv: false,
        json: false,
    };
    if config.output.formats.is_empty() {
        return Err(CliError::Usage(
            "output.formats must name at least one of \"csv\", \"json\"".into(),
        ));
    }
    for format in &config.output.formats {
        match format.as_str() {
            "csv" => formats.csv = true,
            "json" => formats.json = true,
            other => {
                return Err(CliError::Usage(format!(
                    "output.formats entries must be \"csv\" or \"json\" (got \"{other}\")"
                )))
            }
        }
    }

    let (resolved_numerics, numerics, t_end) =
        resolve_numerics(&config.numerics, &config.parameters)?;
    config.numerics = resolved_numerics;

    let psi = build_history(&config.initial, &config.parameters, None)?;
    let original_frame = config.initial.coordinate_frame == "original";

    let choices = match resolve_choices(&config.parameters, &config.choices) {
        Ok(resolved) => {
            config.choices = overrides_from(&resolved);
            Ok(resolved)
        }
        Err(e @ CertificateError::Infeasible { .. }) => Err(e.to_string()),
        Err(e) => return Err(CliError::Usage(format!("choices: {e}"))),
    };

    if let Some(sweep) = &config.sweep {
        validate_sweep_axes(&config, sweep)?;
    }

    let out_dir = PathBuf::from(&config.output.directory);
    Ok(PreparedRun {
        parameters: config.parameters.clone(),
        xi: config.xi.clone(),
        choices,
        psi,
        original_frame,
        numerics,
        t_end,
        out_dir,
        formats,
        effective: config,
    })
}

fn validate_sweep_axes(config: &RunConfig, sweep: &SweepConfig) -> Result<(), CliError> {
    if sweep.axes.is_empty() {
        return Err(CliError::Usage("sweep.axes must not be empty".into()));
    }
    let base = serde_json::to_value(RunConfig {
        sweep: None,
        ..config.clone()
    })
    .expect("config serializes");
    for axis in &sweep.axes {
        if axis.values.is_empty() {
            return Err(CliError::Usage(format!(
                "sweep axis `{}` has no values",
                axis.path
            )));
        }
        if axis.values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Usage(format!(
                "sweep axis `{}` has a non-finite value",
                axis.path
            )));
        }
        if axis.path != "initial.amplitude" {
            let allowed = ["parameters.", "choices.", "numerics."];
            if !allowed.iter().any(|prefix| axis.path.starts_with(prefix)) {
                return Err(CliError::Usage(format!(
                    "sweep axis path `{}` must be `initial.amplitude` or start with \
                     `parameters.`, `choices.`, or `numerics.`",
                    axis.path
                )));
            }
            let pointer = format!("/{}", axis.path.replace('.', "/"));
            if base.pointer(&pointer).is_none() {
                return Err(CliError::Usage(format!(
                    "sweep axis path `{}` does not name a config field",
                    axis.path
                )));
            }
        }
    }
    Ok(())
}

/// Sets one dotted-path field in a JSON config document. Integer-valued
/// numbers are written as JSON integers so integer fields accept them.
fn set_config_path(
    document: &mut serde_json::Value,
    path: &str,
    value: f64,
) -> Result<(), String> {
    let pointer = format!("/{}", path.replace('.', "/"));
    let slot = document
        .pointer_mut(&pointer)
        .ok_or_else(|| format!("sweep axis path `{path}` does not name a config field"))?;
    *slot = if value.fract() == 0.0 && value >= 0.0 && value <= u64::MAX as f64 {
        serde_json::json!(value as u64)
    } else {
        serde_json::json!(value)
    };
    Ok(())
}

/// Materializes the verification inputs for one sweep point: applies the
/// axis values to the base config, then re-runs the whole validation.
fn materialize_point(
    base: &serde_json::Value,
    axes: &[SweepAxis],
    coordinates: &[f64],
) -> Result<VerifyInputs, String> {
    let mut document = base.clone();
    let mut amplitude = None;
    for (axis, &value) in axes.iter().zip(coordinates) {
        if axis.path == "initial.amplitude" {
            amplitude = Some(value);
        } else {
            set_config_path(&mut document, &axis.path, value)?;
        }
    }
    let config: RunConfig =
        serde_json::from_value(document).map_err(|e| format!("invalid swept config: {e}"))?;
    config.parameters.validate().map_err(|e| e.to_string())?;
    config.xi.validate().map_err(|e| e.to_string())?;
    let (_, numerics, t_end) =
        resolve_numerics(&config.numerics, &config.parameters).map_err(|e| e.to_string())?;
    let psi =
        build_history(&config.initial, &config.parameters, amplitude).map_err(|e| e.to_string())?;
    let choices =
        resolve_choices(&config.parameters, &config.choices).map_err(|e| e.to_string())?;
    Ok(VerifyInputs {
        parameters: config.parameters,
        xi: config.xi,
        choices,
        psi,
        t_end,
        numerics,
    })
}

// ======================== Artifact writers ========================

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {dir:?}: {e}")))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {path:?}: {e}")))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Usage(format!("cannot serialize {name}: {e}")))?;
    text.push('\n');
    write_text(dir, name, &text)
}

fn echo_effective_config(run: &PreparedRun) -> Result<(), CliError> {
    ensure_out_dir(&run.out_dir)?;
    write_json(&run.out_dir, "effective-config.json", &run.effective)
}

/// CSV cell for a float (plain decimal `Display`, deterministic).
fn csv_cell(value: f64) -> String {
    format!("{value}")
}

fn trajectory_csv(
    trajectory: &Trajectory,
    spacing: f64,
    offset: &StateVector,
) -> Result<String, CliError> {
    let mut text = String::from("t,v1,v2,v3,v4,v5,v6,v7,v8,v9,v10\n");
    for t in output_grid(trajectory.end_time(), spacing) {
        let y = trajectory
            .eval(t)
            .map_err(|e| CliError::Failed(format!("trajectory evaluation failed: {e}")))?;
        write!(text, "{}", csv_cell(t)).expect("string write");
        for j in 0..10 {
            write!(text, ",{}", csv_cell(y[j] + offset[j])).expect("string write");
        }
        text.push('\n');
    }
    Ok(text)
}

fn require_certificate(run: &PreparedRun) -> Result<Certificate, CliError> {
    match &run.choices {
        Ok(choices) => Ok(build_certificate(&run.parameters, choices)?),
        Err(message) => Err(CliError::Infeasible(message.clone())),
    }
}

// ======================== Subcommands ========================

fn cmd_simulate(run: &PreparedRun) -> Result<u8, CliError> {
    echo_effective_config(run)?;
    let p = &run.parameters;
    let xi = &run.xi;
    let event = |y: &StateVector| y[9] - 1.0;
    let trajectory = integrate(
        |_t, y, yd: &[StateVector]| {
            rhs_shifted_clamped(p, xi, y, yd.try_into().expect("five delays"))
        },
        &p.delays(),
        run.psi.clone(),
        run.t_end,
        run.numerics.step,
        Some(&event),
    )
    .map_err(|e| CliError::Failed(format!("integration failed: {e}")))?;

    // Original-frame configs get original-frame columns back (x = X* + y).
    let offset = if run.original_frame {
        stationary_point(p).0
    } else {
        StateVector::ZERO
    };
    if run.formats.csv {
        let text = trajectory_csv(&trajectory, run.numerics.output_grid_spacing, &offset)?;
        write_text(&run.out_dir, "trajectory.csv", &text)?;
    } else {
        eprintln!("note: output.formats excludes \"csv\"; trajectory.csv not written");
    }
    match trajectory.termination() {
        Termination::Completed => Ok(0),
        Termination::EventStopped { t_prime } => {
            eprintln!("damage reached 1 at t = {t_prime}; integration stopped early");
            Ok(3)
        }
    }
}

fn cmd_certify(run: &PreparedRun) -> Result<u8, CliError> {
    echo_effective_config(run)?;
    let certificate = require_certificate(run)?;
    if run.formats.json {
        write_json(&run.out_dir, "certificate.json", &certificate)?;
    } else {
        eprintln!("note: output.formats excludes \"json\"; certificate.json not written");
    }
    Ok(0)
}

fn cmd_check_basin(run: &PreparedRun) -> Result<u8, CliError> {
    echo_effective_config(run)?;
    let certificate = require_certificate(run)?;
    let v0 = eval_functional_initial(&certificate, &run.psi, run.numerics.quad_points)
        .map_err(|e| CliError::Usage(format!("initial history: {e}")))?;
    let report = check_basin(&certificate, &run.psi, v0.total)
        .map_err(|e| CliError::Usage(format!("initial history: {e}")))?;
    if run.formats.json {
        write_json(&run.out_dir, "basin.json", &report)?;
    } else {
        eprintln!("note: output.formats excludes \"json\"; basin.json not written");
    }
    Ok(if report.passed { 0 } else { 3 })
}

fn envelope_csv(
    certificate: &Certificate,
    v0: f64,
    t_end: f64,
    spacing: f64,
) -> Result<String, CliError> {
    let env = envelope(certificate, v0)
        .map_err(|e| CliError::Failed(format!("envelope construction failed: {e}")))?;
    let mut text = String::from("t,B_1,B_2,B_3,B_4,B_5,B_6,B_7,B_8,B_9,B_10,sqrt_V_bound\n");
    for t in output_grid(t_end, spacing) {
        write!(text, "{}", csv_cell(t)).expect("string write");
        for j in 0..10 {
            write!(text, ",{}", csv_cell(env.bound(j, t))).expect("string write");
        }
        write!(text, ",{}", csv_cell(env.sqrt_v_bound(t))).expect("string write");
        text.push('\n');
    }
    Ok(text)
}

fn verify_exit_code(report: &VerificationReport) -> u8 {
    match report.verdict {
        Verdict::Verified => 0,
        // Hypotheses failed before a certificate existed ⇒ infeasible.
        Verdict::HypothesesFailed if report.certificate.is_none() => 2,
        _ => 3,
    }
}

fn cmd_verify(run: &PreparedRun) -> Result<u8, CliError> {
    echo_effective_config(run)?;
    let report = match &run.choices {
        Ok(choices) => run_verification(
            &run.parameters,
            &run.xi,
            choices,
            &run.psi,
            run.t_end,
            &run.numerics,
        ),
        // Unresolvable choices mean an infeasible certificate; report it the
        // same way run_verification itself would.
        Err(message) => VerificationReport {
            verdict: Verdict::HypothesesFailed,
            stability_margin: Some(check_stability_condition(&run.parameters).margin),
            certificate: None,
            initial_energy: None,
            basin: None,
            diagnostic: Some(message.clone()),
            trajectory: None,
            max_ratio: None,
            overall_max_ratio: None,
            floor_violations: None,
            x10_max: None,
            monitor: None,
            bound_violated_by_event: None,
        },
    };
    if run.formats.json {
        write_json(&run.out_dir, "report.json", &report)?;
    } else {
        eprintln!("note: output.formats excludes \"json\"; report.json not written");
    }
    if run.formats.csv {
        let basin_passed = report.basin.as_ref().map(|b| b.passed).unwrap_or(false);
        if let (Some(certificate), Some(v0), true) =
            (&report.certificate, report.initial_energy, basin_passed)
        {
            let text = envelope_csv(
                certificate,
                v0,
                run.t_end,
                run.numerics.output_grid_spacing,
            )?;
            write_text(&run.out_dir, "envelope.csv", &text)?;
        }
    }
    println!("verdict: {}", report.verdict);
    Ok(verify_exit_code(&report))
}

fn sweep_summary_csv(axes: &[SweepAxis], results: &[crate::verify::SweepPointResult]) -> String {
    let mut text = String::from("index");
    for axis in axes {
        write!(text, ",{}", axis.path).expect("string write");
    }
    text.push_str(",verdict,max_ratio,V0,omega,q\n");
    for result in results {
        write!(text, "{}", result.point.index).expect("string write");
        for &coordinate in &result.point.coordinates {
            write!(text, ",{}", csv_cell(coordinate)).expect("string write");
        }
        let report = &result.report;
        let optional = |value: Option<f64>| value.map(csv_cell).unwrap_or_default();
        write!(
            text,
            ",{},{},{},{},{}\n",
            report.verdict,
            optional(report.overall_max_ratio),
            optional(report.initial_energy),
            optional(report.certificate.as_ref().map(|c| c.omega)),
            optional(report.certificate.as_ref().map(|c| c.q)),
        )
        .expect("string write");
    }
    text
}

fn cmd_sweep(run: &PreparedRun) -> Result<u8, CliError> {
    echo_effective_config(run)?;
    let sweep = run
        .effective
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Usage("the sweep subcommand needs a `sweep.axes` section".into()))?;
    let base = serde_json::to_value(RunConfig {
        sweep: None,
        ..run.effective.clone()
    })
    .expect("config serializes");
    let results = run_sweep(&sweep.axes, |coordinates| {
        materialize_point(&base, &sweep.axes, coordinates)
    })
    .map_err(|e| CliError::Usage(e.to_string()))?;

    if run.formats.csv {
        write_text(
            &run.out_dir,
            "sweep-summary.csv",
            &sweep_summary_csv(&sweep.axes, &results),
        )?;
    }
    if run.formats.json {
        for result in &results {
            write_json(
                &run.out_dir,
                &format!("point-{:04}.json", result.point.index),
                result,
            )?;
        }
    }
    let all_verified = results
        .iter()
        .all(|r| r.report.verdict == Verdict::Verified);
    println!(
        "swept {} points: {} verified",
        results.len(),
        results
            .iter()
            .filter(|r| r.report.verdict == Verdict::Verified)
            .count()
    );
    Ok(if all_verified { 0 } else { 3 })
}

// ======================== Argument parsing and dispatch ========================

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Path of the JSON configuration document.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Integration horizon (overrides `numerics.t_end`).
    #[arg(long = "t-end", value_name = "REAL")]
    pub t_end: Option<f64>,
    /// Integration step (overrides `numerics.step`).
    #[arg(long, value_name = "REAL")]
    pub step: Option<f64>,
}

/// Subcommand set.
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the model and write the trajectory CSV.
    Simulate(CommonArgs),
    /// Compute the exponential-decay certificate and write it as JSON.
    Certify(CommonArgs),
    /// Check the attraction-set hypotheses for the configured initial history.
    CheckBasin(CommonArgs),
    /// Run the full verification pipeline (certificate, basin, trajectory,
    /// envelopes, monitor) and write the report.
    Verify(CommonArgs),
    /// Verify every point of the configured sweep grid.
    Sweep(CommonArgs),
}

/// Top-level argument parser.
#[derive(Debug, Parser)]
#[command(
    name = "immunocert",
    version,
    about = "Simulation and exponential-decay certification for a delayed immune-response model"
)]
pub struct Cli {
    /// Subcommand to run.
    #[command(subcommand)]
    pub command: Command,
}

fn load_run(args: &CommonArgs) -> Result<PreparedRun, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Usage(format!("cannot read config {:?}: {e}", args.config)))?;
    let mut config = parse_config(&text)?;
    if let Some(out) = &args.out {
        config.output.directory = out.display().to_string();
    }
    if let Some(t_end) = args.t_end {
        config.numerics.t_end = Some(t_end);
    }
    if let Some(step) = args.step {
        config.numerics.step = Some(step);
    }
    prepare_run(config)
}

fn execute(command: &Command) -> Result<u8, CliError> {
    match command {
        Command::Simulate(args) => cmd_simulate(&load_run(args)?),
        Command::Certify(args) => cmd_certify(&load_run(args)?),
        Command::CheckBasin(args) => cmd_check_basin(&load_run(args)?),
        Command::Verify(args) => cmd_verify(&load_run(args)?),
        Command::Sweep(args) => cmd_sweep(&load_run(args)?),
    }
}

/// Parses the process arguments, runs the requested subcommand, and returns
/// the process exit code (`0` success/verified, `1` usage/validation,
/// `2` infeasible certificate, `3` failed checks).
#[must_use]
pub fn run_cli() -> u8 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ======================== Tests ========================
