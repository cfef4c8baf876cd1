//! Simulation and exponential-decay certification for a ten-component
//! delayed antiviral immune-response model.
//!
//! The model couples virus, stimulated macrophages, two helper populations,
//! effectors, B cells, plasma cells, antibodies, infected cells, and organ
//! damage through delay differential equations with five discrete delays.
//! Around the healthy stationary state the crate provides, end to end:
//!
//! * [`model`] — parameters, right-hand sides in original and shifted
//!   coordinates, and the strict stability condition at the stationary
//!   point;
//! * [`dde`] — a method-of-steps Runge–Kutta integrator with cubic dense
//!   output and event detection at the organ-destruction threshold;
//! * [`certificate`] — the decay certificate: every constant
//!   (ε, δ, ε_k, β_k, h_j, ω, q, …) of an energy functional that
//!   contracts along solutions, plus the residual diagnostics proving the
//!   constants fit together;
//! * [`lyapunov`] — evaluation of the functional on histories and
//!   trajectories, the attraction-set hypothesis checks, the certified
//!   decay envelopes, and a finite-difference monitor of the differential
//!   inequality;
//! * [`verify`] — one-shot verification runs combining all of the above
//!   into a machine-readable report, and parallel parameter sweeps;
//! * [`cli`] — the `immunocert` command-line front end.
//!
//! Everything is deterministic: identical inputs produce byte-identical
//! reports.

pub mod certificate;
pub mod cli;
pub mod dde;
pub mod lyapunov;
pub mod model;
pub mod verify;
