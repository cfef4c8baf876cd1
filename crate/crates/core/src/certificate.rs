//! Exponential-decay certificate for the shifted immune-response system.
//!
//! A certificate is the complete set of constants entering the quadratic
//! Lyapunov–Krasovskii functional
//!
//! ```text
//! V(t, y) = Σ_{j=1..10} h_j·y_j²(t)
//!         + Σ_{k=3..7} ∫_{t−τ_k}^{t} h_k·β_k·e^{−κ_k (t−s)}·y_2²(s) ds
//! ```
//!
//! together with the decay rate ω and the nonlinearity gain q that bound its
//! derivative along solutions by `dV/dt ≤ −2ω·V + q·V^{3/2}` inside the
//! certified basin. The pipeline is
//!
//! ```text
//! a-gains → ε → δ → ε_k → β_k → h_j → ω → q → auxiliary ε's → r-diagnostics
//! ```
//!
//! The r-diagnostics re-evaluate the general balance expressions the constants
//! were chosen to annihilate. They must vanish (r2..r8, r10) or be nonnegative
//! (r1, r9) for every admissible input; a violation can only mean a
//! transcription bug somewhere in the pipeline, so building a certificate
//! re-checks them every time.

use crate::model::{check_stability_condition, linear_gains, LinearGains, ModelError, ModelParameters};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for the r-identities that must vanish (r2..r8, r10).
const R_IDENTITY_RTOL: f64 = 1e-8;
/// Absolute slack for the r-diagnostics that must be nonnegative (r1, r9).
const R_SIGN_ATOL: f64 = 1e-10;

// ======================== Errors ========================

/// Errors from certificate construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    /// The model parameters fail validation.
    #[error(transparent)]
    InvalidParameters(#[from] ModelError),
    /// A tunable choice is outside its admissible range.
    #[error("certificate choice `{name}` must be {requirement} (got {value})")]
    InvalidChoice {
        /// Name of the offending choice.
        name: &'static str,
        /// What the choice must satisfy.
        requirement: &'static str,
        /// Value that was rejected.
        value: f64,
    },
    /// The stationary point fails the strict stability condition, so no
    /// certificate exists for these parameters.
    #[error("stationary point is not exponentially stable: need a11*a99 > a19*a91 (margin = {margin}); no certificate exists")]
    Infeasible {
        /// `a11·a99 − a19·a91`, nonpositive here.
        margin: f64,
    },
    /// An r-diagnostic left its admissible range: the constant pipeline
    /// contradicts itself, which signals an implementation bug.
    #[error("internal consistency failure: diagnostic r{index} = {value} outside tolerance {tolerance}")]
    InternalConsistency {
        /// Index of the offending diagnostic (1-based).
        index: usize,
        /// Computed value.
        value: f64,
        /// Tolerance it had to meet.
        tolerance: f64,
    },
}

// ======================== Choices ========================

/// Tunable inputs of the certificate: basin half-widths θ_k for the four
/// delayed lymphocyte components, memory-decay exponents κ_k for the five
/// integral terms, and the fraction of the admissible δ-interval to use.
///
/// Any strictly positive values are admissible; they trade basin size against
/// decay rate but never threaten soundness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateChoices {
    /// Basin half-width for cellular helpers.
    pub theta3: f64,
    /// Basin half-width for humoral helpers.
    pub theta4: f64,
    /// Basin half-width for effectors.
    pub theta5: f64,
    /// Basin half-width for B cells.
    pub theta6: f64,
    /// Memory-decay exponent of the τ3 integral term.
    pub kappa3: f64,
    /// Memory-decay exponent of the τ4 integral term.
    pub kappa4: f64,
    /// Memory-decay exponent of the τ5 integral term.
    pub kappa5: f64,
    /// Memory-decay exponent of the τ6 integral term.
    pub kappa6: f64,
    /// Memory-decay exponent of the τ7 integral term.
    pub kappa7: f64,
    /// Fraction of the open admissible interval used for δ.
    pub delta_fraction: f64,
}

impl CertificateChoices {
    /// Checks positivity of θ/κ and `0 < delta_fraction < 1`.
    pub fn validate(&self) -> Result<(), CertificateError> {
        let positive: [(&'static str, f64); 9] = [
            ("theta3", self.theta3),
            ("theta4", self.theta4),
            ("theta5", self.theta5),
            ("theta6", self.theta6),
            ("kappa3", self.kappa3),
            ("kappa4", self.kappa4),
            ("kappa5", self.kappa5),
            ("kappa6", self.kappa6),
            ("kappa7", self.kappa7),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CertificateError::InvalidChoice {
                    name,
                    requirement: "a strictly positive finite real",
                    value,
                });
            }
        }
        if !(self.delta_fraction > 0.0 && self.delta_fraction < 1.0) {
            return Err(CertificateError::InvalidChoice {
                name: "delta_fraction",
                requirement: "strictly between 0 and 1",
                value: self.delta_fraction,
            });
        }
        Ok(())
    }
}

/// Optional overrides for [`CertificateChoices`], as written in configuration
/// files. Unset entries resolve to the defaults θ_k = X_k* (the healthy level
/// is the natural perturbation scale) and κ_k = 2δ (every term of the ω
/// minimum then binds equally).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoiceOverrides {
    /// Override for θ3.
    pub theta3: Option<f64>,
    /// Override for θ4.
    pub theta4: Option<f64>,
    /// Override for θ5.
    pub theta5: Option<f64>,
    /// Override for θ6.
    pub theta6: Option<f64>,
    /// Override for κ3.
    pub kappa3: Option<f64>,
    /// Override for κ4.
    pub kappa4: Option<f64>,
    /// Override for κ5.
    pub kappa5: Option<f64>,
    /// Override for κ6.
    pub kappa6: Option<f64>,
    /// Override for κ7.
    pub kappa7: Option<f64>,
    /// Override for the δ fraction (default ½).
    pub delta_fraction: Option<f64>,
}

/// Resolves configuration overrides into concrete certificate choices.
///
/// The κ default needs δ, which needs ε, so resolution runs the head of the
/// certificate pipeline; infeasible parameters surface here already.
pub fn resolve_choices(
    p: &ModelParameters,
    overrides: &ChoiceOverrides,
) -> Result<CertificateChoices, CertificateError> {
    p.validate()?;
    let fraction = overrides.delta_fraction.unwrap_or(0.5);
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CertificateError::InvalidChoice {
            name: "delta_fraction",
            requirement: "strictly between 0 and 1",
            value: fraction,
        });
    }
    let epsilon = compute_epsilon(&compute_a_constants(p));
    let delta = compute_delta(epsilon, p, fraction)?;
    let choices = CertificateChoices {
        theta3: overrides.theta3.unwrap_or(p.xstar3),
        theta4: overrides.theta4.unwrap_or(p.xstar4),
        theta5: overrides.theta5.unwrap_or(p.xstar5),
        theta6: overrides.theta6.unwrap_or(p.xstar6),
        kappa3: overrides.kappa3.unwrap_or(2.0 * delta),
        kappa4: overrides.kappa4.unwrap_or(2.0 * delta),
        kappa5: overrides.kappa5.unwrap_or(2.0 * delta),
        kappa6: overrides.kappa6.unwrap_or(2.0 * delta),
        kappa7: overrides.kappa7.unwrap_or(2.0 * delta),
        delta_fraction: fraction,
    };
    choices.validate()?;
    Ok(choices)
}

// ======================== Certificate ========================

/// The complete constant set of the decay certificate, plus the resolved
/// choices, delays, and stationary levels it was built against — everything
/// downstream evaluation of the functional, the basin, and the envelopes
/// needs. Serializes to one flat JSON document for diffing across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Virus self-damping gain at the stationary point.
    pub a11: f64,
    /// Infected-cell self-damping gain.
    pub a99: f64,
    /// Virus production per infected cell.
    pub a19: f64,
    /// Infection rate per unit virus.
    pub a91: f64,
    /// Linear decay rate of the virus/infected-cell block.
    pub epsilon: f64,
    /// Margin kept between every decay rate and the functional's weights.
    pub delta: f64,
    /// Balance weight for the τ3 production term.
    pub eps3: f64,
    /// Balance weight for the τ4 production term.
    pub eps4: f64,
    /// Balance weight for the τ5 production term.
    pub eps5: f64,
    /// Balance weight for the τ6 production term.
    pub eps6: f64,
    /// Balance weight for the τ7 production term.
    pub eps7: f64,
    /// Integral-term weight for k = 3.
    pub beta3: f64,
    /// Integral-term weight for k = 4.
    pub beta4: f64,
    /// Integral-term weight for k = 5.
    pub beta5: f64,
    /// Integral-term weight for k = 6.
    pub beta6: f64,
    /// Integral-term weight for k = 7.
    pub beta7: f64,
    /// Quadratic weight of component 1.
    pub h1: f64,
    /// Quadratic weight of component 2.
    pub h2: f64,
    /// Quadratic weight of component 3.
    pub h3: f64,
    /// Quadratic weight of component 4.
    pub h4: f64,
    /// Quadratic weight of component 5.
    pub h5: f64,
    /// Quadratic weight of component 6.
    pub h6: f64,
    /// Quadratic weight of component 7.
    pub h7: f64,
    /// Quadratic weight of component 8.
    pub h8: f64,
    /// Quadratic weight of component 9.
    pub h9: f64,
    /// Quadratic weight of component 10.
    pub h10: f64,
    /// Exponential decay rate of the functional.
    pub omega: f64,
    /// Gain of the cubic nonlinearity in the functional's derivative bound.
    pub q: f64,
    /// Rate split between the virus and infected-cell damping terms.
    pub eps1: f64,
    /// Weight balancing macrophage stimulation.
    pub eps2: f64,
    /// Reciprocal of `eps1` (the infected-cell side of the split).
    pub eps9: f64,
    /// Weight balancing effector losses to kills.
    pub eps59: f64,
    /// Weight balancing antibody production.
    pub eps87: f64,
    /// Weight balancing antibody consumption.
    pub eps81: f64,
    /// Weight balancing organ destruction inflow.
    pub eps10: f64,
    /// Balance diagnostic of component 1 (must be ≥ 0).
    pub r1: f64,
    /// Balance diagnostic of component 2 (must vanish).
    pub r2: f64,
    /// Balance diagnostic of component 3 (must vanish).
    pub r3: f64,
    /// Balance diagnostic of component 4 (must vanish).
    pub r4: f64,
    /// Balance diagnostic of component 5 (must vanish).
    pub r5: f64,
    /// Balance diagnostic of component 6 (must vanish).
    pub r6: f64,
    /// Balance diagnostic of component 7 (must vanish).
    pub r7: f64,
    /// Balance diagnostic of component 8 (must vanish).
    pub r8: f64,
    /// Balance diagnostic of component 9 (must be ≥ 0).
    pub r9: f64,
    /// Balance diagnostic of component 10 (must vanish).
    pub r10: f64,
    /// Resolved basin half-width θ3.
    pub theta3: f64,
    /// Resolved basin half-width θ4.
    pub theta4: f64,
    /// Resolved basin half-width θ5.
    pub theta5: f64,
    /// Resolved basin half-width θ6.
    pub theta6: f64,
    /// Resolved memory-decay exponent κ3.
    pub kappa3: f64,
    /// Resolved memory-decay exponent κ4.
    pub kappa4: f64,
    /// Resolved memory-decay exponent κ5.
    pub kappa5: f64,
    /// Resolved memory-decay exponent κ6.
    pub kappa6: f64,
    /// Resolved memory-decay exponent κ7.
    pub kappa7: f64,
    /// Production delay τ3.
    pub tau3: f64,
    /// Production delay τ4.
    pub tau4: f64,
    /// Production delay τ5.
    pub tau5: f64,
    /// Production delay τ6.
    pub tau6: f64,
    /// Production delay τ7.
    pub tau7: f64,
    /// Stationary level of component 1 (zero).
    pub xstar1: f64,
    /// Stationary level of component 2 (zero).
    pub xstar2: f64,
    /// Stationary level of component 3.
    pub xstar3: f64,
    /// Stationary level of component 4.
    pub xstar4: f64,
    /// Stationary level of component 5.
    pub xstar5: f64,
    /// Stationary level of component 6.
    pub xstar6: f64,
    /// Stationary level of component 7.
    pub xstar7: f64,
    /// Stationary level of component 8 (ρ8·X7*/α8).
    pub xstar8: f64,
    /// Stationary level of component 9 (zero).
    pub xstar9: f64,
    /// Stationary level of component 10 (zero).
    pub xstar10: f64,
}

impl Certificate {
    /// The ten quadratic weights as an array (index j−1 holds h_j).
    #[must_use]
    pub fn h(&self) -> [f64; 10] {
        [
            self.h1, self.h2, self.h3, self.h4, self.h5, self.h6, self.h7, self.h8, self.h9,
            self.h10,
        ]
    }

    /// The ten balance diagnostics as an array (index j−1 holds r_j).
    #[must_use]
    pub fn r(&self) -> [f64; 10] {
        [
            self.r1, self.r2, self.r3, self.r4, self.r5, self.r6, self.r7, self.r8, self.r9,
            self.r10,
        ]
    }

    /// The five integral-term weights `[β3..β7]`.
    #[must_use]
    pub fn betas(&self) -> [f64; 5] {
        [self.beta3, self.beta4, self.beta5, self.beta6, self.beta7]
    }

    /// The five memory-decay exponents `[κ3..κ7]`.
    #[must_use]
    pub fn kappas(&self) -> [f64; 5] {
        [self.kappa3, self.kappa4, self.kappa5, self.kappa6, self.kappa7]
    }

    /// The five production delays `[τ3..τ7]`.
    #[must_use]
    pub fn taus(&self) -> [f64; 5] {
        [self.tau3, self.tau4, self.tau5, self.tau6, self.tau7]
    }

    /// The four basin half-widths `[θ3..θ6]`.
    #[must_use]
    pub fn thetas(&self) -> [f64; 4] {
        [self.theta3, self.theta4, self.theta5, self.theta6]
    }

    /// Stationary levels per component (floors of the shifted frame are the
    /// negatives of these).
    #[must_use]
    pub fn xstars(&self) -> [f64; 10] {
        [
            self.xstar1,
            self.xstar2,
            self.xstar3,
            self.xstar4,
            self.xstar5,
            self.xstar6,
            self.xstar7,
            self.xstar8,
            self.xstar9,
            self.xstar10,
        ]
    }

    /// Longest delay (history depth the functional integrates over).
    #[must_use]
    pub fn tau_max(&self) -> f64 {
        self.taus().into_iter().fold(0.0, f64::max)
    }

    /// Radius `2ω/q` whose strict comparison with √V0 gates every envelope.
    #[must_use]
    pub fn basin_radius(&self) -> f64 {
        2.0 * self.omega / self.q
    }
}

// ======================== Pipeline stages ========================

/// Linearization gains at the stationary point (the a-constants).
#[must_use]
pub fn compute_a_constants(p: &ModelParameters) -> LinearGains {
    linear_gains(p)
}

/// Joint decay rate ε of the virus/infected-cell block:
/// `ε = ½(a11 + a99 − √((a11 − a99)² + 4·a19·a91))`.
/// Positive exactly when `a11·a99 > a19·a91`.
#[must_use]
pub fn compute_epsilon(a: &LinearGains) -> f64 {
    let diff = a.a11 - a.a99;
    0.5 * (a.a11 + a.a99 - (diff * diff + 4.0 * a.a19 * a.a91).sqrt())
}

/// Margin δ kept between every decay rate and the functional weights:
/// `δ = fraction · min{ε, α2..α8, α10}`, strictly inside the open interval
/// because `fraction < 1`.
///
/// A nonpositive ε means the stability condition fails and no admissible δ
/// exists: certificate-infeasible.
pub fn compute_delta(
    epsilon: f64,
    p: &ModelParameters,
    delta_fraction: f64,
) -> Result<f64, CertificateError> {
    if !(epsilon > 0.0) {
        return Err(CertificateError::Infeasible {
            margin: check_stability_condition(p).margin,
        });
    }
    let bound = [
        epsilon, p.alpha2, p.alpha3, p.alpha4, p.alpha5, p.alpha6, p.alpha7, p.alpha8, p.alpha10,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    Ok(delta_fraction * bound)
}

/// Denominators shared by the ε_k, β_k, and h_k formulas: the delayed
/// production gain at the basin edge plus the undelayed consumption terms.
fn balance_denominators(p: &ModelParameters, c: &CertificateChoices) -> [f64; 5] {
    let d3 = p.b32 * p.rho32 * (p.xstar3 + c.theta3) * (c.kappa3 * p.tau3 / 2.0).exp()
        + (p.b32 + p.b3 * p.xstar5) * p.xstar3;
    let d4 = p.b42 * p.rho42 * (p.xstar4 + c.theta4) * (c.kappa4 * p.tau4 / 2.0).exp()
        + (p.b42 + p.b4 * p.xstar6) * p.xstar4;
    let d5 = p.b5
        * p.rho5
        * (p.xstar3 + c.theta3)
        * (p.xstar5 + c.theta5)
        * (c.kappa5 * p.tau5 / 2.0).exp()
        + p.b5 * p.xstar3 * p.xstar5;
    let d6 = p.b6
        * p.rho6
        * (p.xstar4 + c.theta4)
        * (p.xstar6 + c.theta6)
        * (c.kappa6 * p.tau6 / 2.0).exp()
        + p.b6 * p.xstar4 * p.xstar6;
    let d7 = p.b7
        * p.rho7
        * (p.xstar4 + c.theta4)
        * (p.xstar6 + c.theta6)
        * (c.kappa7 * p.tau7 / 2.0).exp();
    [d3, d4, d5, d6, d7]
}

/// Balance weights `[ε3..ε7]`; components 5 and 7 carry coefficient 1, the
/// others 2.
#[must_use]
pub fn compute_eps_k(p: &ModelParameters, c: &CertificateChoices, delta: f64) -> [f64; 5] {
    let [d3, d4, d5, d6, d7] = balance_denominators(p, c);
    [
        2.0 * (p.alpha3 - delta) / d3,
        2.0 * (p.alpha4 - delta) / d4,
        (p.alpha5 - delta) / d5,
        2.0 * (p.alpha6 - delta) / d6,
        (p.alpha7 - delta) / d7,
    ]
}

/// Integral-term weights `[β3..β7]`: the delayed production gain divided by
/// the matching ε_k.
#[must_use]
pub fn compute_beta_k(p: &ModelParameters, c: &CertificateChoices, eps_k: &[f64; 5]) -> [f64; 5] {
    [
        p.b32 * p.rho32 * (p.xstar3 + c.theta3) * (c.kappa3 * p.tau3 / 2.0).exp() / eps_k[0],
        p.b42 * p.rho42 * (p.xstar4 + c.theta4) * (c.kappa4 * p.tau4 / 2.0).exp() / eps_k[1],
        p.b5 * p.rho5 * (p.xstar3 + c.theta3) * (p.xstar5 + c.theta5)
            * (c.kappa5 * p.tau5 / 2.0).exp()
            / eps_k[2],
        p.b6 * p.rho6 * (p.xstar4 + c.theta4) * (p.xstar6 + c.theta6)
            * (c.kappa6 * p.tau6 / 2.0).exp()
            / eps_k[3],
        p.b7 * p.rho7 * (p.xstar4 + c.theta4) * (p.xstar6 + c.theta6)
            * (c.kappa7 * p.tau7 / 2.0).exp()
            / eps_k[4],
    ]
}

/// The plasma-cell gain block `(b7·ρ7)²·(X4*+θ4)²·(X6*+θ6)²·e^{κ7·τ7}`
/// shared by h7, h8, and the h1 antibody argument.
fn plasma_gain_squared(p: &ModelParameters, c: &CertificateChoices) -> f64 {
    let base = p.b7 * p.rho7 * (p.xstar4 + c.theta4) * (p.xstar6 + c.theta6);
    base * base * (c.kappa7 * p.tau7).exp()
}

/// Quadratic weights `[h1..h10]` of the functional.
///
/// `h1` takes the larger of two lower bounds: one making the infected-cell
/// balance r9 close (scaled by a91/a19), one making the virus balance r1
/// close (macrophage stimulation + antibody consumption); `h9 = h1·a19/a91`
/// transfers the same bound to component 9.
#[must_use]
pub fn compute_h(
    p: &ModelParameters,
    c: &CertificateChoices,
    delta: f64,
    epsilon: f64,
    a: &LinearGains,
) -> [f64; 10] {
    let [d3, d4, d5, d6, _] = balance_denominators(p, c);
    let g7 = plasma_gain_squared(p, c);
    let x8star = (p.rho8 / p.alpha8) * p.xstar7;
    let effector_loss = p.b59 * p.xstar5;
    let infected_arg = (a.a91 / a.a19) * (effector_loss * effector_loss / (d5 * d5) + 1.0);
    let stim = p.gamma21 * p.big_m;
    let absorb = p.gamma81 * x8star;
    let virus_arg = 5.0 * stim * stim / ((p.alpha2 - delta) * (p.alpha2 - delta))
        + absorb * absorb * (p.alpha7 - delta) * (p.alpha7 - delta) / (g7 * p.rho8 * p.rho8);
    let h1 = infected_arg.max(virus_arg) / (2.0 * (epsilon - delta));
    let h2 = 5.0 / (p.alpha2 - delta);
    let h3 = 2.0 * (p.alpha3 - delta) / (d3 * d3);
    let h4 = 2.0 * (p.alpha4 - delta) / (d4 * d4);
    let h5 = (p.alpha5 - delta) / (d5 * d5);
    let h6 = 2.0 * (p.alpha6 - delta) / (d6 * d6);
    let h7 = (p.alpha7 - delta) / g7;
    let h8 = (p.alpha7 - delta) * (p.alpha7 - delta) * (p.alpha8 - delta)
        / (g7 * p.rho8 * p.rho8);
    let h9 = h1 * a.a19 / a.a91;
    let sink = p.b95 * p.xstar5 + p.b10;
    let h10 = 2.0 * (p.alpha10 - delta) / (sink * sink);
    [h1, h2, h3, h4, h5, h6, h7, h8, h9, h10]
}

/// Decay rate of the functional: `ω = ½·min{2δ, κ3..κ7}`.
#[must_use]
pub fn compute_omega(delta: f64, c: &CertificateChoices) -> f64 {
    0.5 * [2.0 * delta, c.kappa3, c.kappa4, c.kappa5, c.kappa6, c.kappa7]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Gain q of the cubic term in the derivative bound: twice the ten-term sum
/// of weighted coupling coefficients.
#[must_use]
pub fn compute_q(p: &ModelParameters, h: &[f64; 10]) -> f64 {
    let [h1, h2, h3, h4, h5, h6, h7, h8, h9, h10] = *h;
    let _ = h7; // component 7 couples only linearly; no cubic term.
    2.0 * (p.n * p.b95 * h1.sqrt() / (h5 * h9).sqrt()
        + p.gamma18 / h8.sqrt()
        + p.gamma19 * p.big_c / h9.sqrt()
        + p.gamma19 * p.big_c / h10.sqrt()
        + p.b3 * p.xstar3 * h3.sqrt() / (h2 * h5).sqrt()
        + p.b4 * p.xstar4 * h4.sqrt() / (h2 * h6).sqrt()
        + p.b5 * p.xstar5 * h5.sqrt() / (h2 * h3).sqrt()
        + p.b6 * p.xstar6 * h6.sqrt() / (h2 * h4).sqrt()
        + p.b95 / h5.sqrt()
        + p.b95 * h10.sqrt() / (h5 * h9).sqrt())
}

/// The seven auxiliary balance weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxEps {
    /// Rate split of the virus equation: the root balancing
    /// `2a11 − a19(ε1 + 1/ε9) = 2a99 − a91(ε9 + 1/ε1) = 2ε`.
    pub eps1: f64,
    /// Macrophage-stimulation weight `(α2−δ)/(γ21·M)`.
    pub eps2: f64,
    /// Infected-cell side of the rate split, `1/ε1`.
    pub eps9: f64,
    /// Effector-loss weight `(α5−δ)/(b59·X5*)`.
    pub eps59: f64,
    /// Antibody-production weight `(α8−δ)/ρ8`.
    pub eps87: f64,
    /// Antibody-consumption weight `(α8−δ)·α8/(γ81·ρ8·X7*)`.
    pub eps81: f64,
    /// Destruction-inflow weight `2(α10−δ)/(b95·X5*+b10)`.
    pub eps10: f64,
}

/// Computes the auxiliary balance weights.
#[must_use]
pub fn compute_aux_eps(p: &ModelParameters, a: &LinearGains, delta: f64) -> AuxEps {
    let diff = a.a11 - a.a99;
    let eps1 = (diff + (diff * diff + 4.0 * a.a19 * a.a91).sqrt()) / (2.0 * a.a19);
    AuxEps {
        eps1,
        eps2: (p.alpha2 - delta) / (p.gamma21 * p.big_m),
        eps9: 1.0 / eps1,
        eps59: (p.alpha5 - delta) / (p.b59 * p.xstar5),
        eps87: (p.alpha8 - delta) / p.rho8,
        eps81: (p.alpha8 - delta) * p.alpha8 / (p.gamma81 * p.rho8 * p.xstar7),
        eps10: 2.0 * (p.alpha10 - delta) / (p.b95 * p.xstar5 + p.b10),
    }
}

/// Re-evaluates the ten balance diagnostics from their general forms on a
/// certificate-in-progress (r-fields of `cert` are ignored).
///
/// These are the raw coefficient balances of each component's derivative
/// estimate before the constants are substituted; the pipeline's choices make
/// r2..r8 and r10 vanish identically and keep r1, r9 nonnegative, so anything
/// else is an internal transcription bug, not a model property.
#[must_use]
pub fn compute_r_diagnostics(
    p: &ModelParameters,
    c: &CertificateChoices,
    cert: &Certificate,
) -> [f64; 10] {
    let x8star = (p.rho8 / p.alpha8) * p.xstar7;
    let stim = p.gamma21 * p.big_m;
    let sink = p.b95 * p.xstar5 + p.b10;
    let (e, d) = (cert.epsilon, cert.delta);

    let r1 = 2.0 * (e - d)
        - (1.0 / cert.eps2) * stim * (cert.h2 / cert.h1)
        - (1.0 / cert.eps81) * p.gamma81 * x8star * (cert.h8 / cert.h1);
    let integral_load = cert.beta3 * cert.h3
        + cert.beta4 * cert.h4
        + cert.beta5 * cert.h5
        + cert.beta6 * cert.h6
        + cert.beta7 * cert.h7;
    let r2 = 2.0 * (p.alpha2 - d)
        - cert.eps2 * stim
        - integral_load / cert.h2
        - (1.0 / cert.eps3) * (p.b32 + p.b3 * p.xstar5) * p.xstar3 * (cert.h3 / cert.h2)
        - (1.0 / cert.eps4) * (p.b42 + p.b4 * p.xstar6) * p.xstar4 * (cert.h4 / cert.h2)
        - (1.0 / cert.eps5) * p.b5 * p.xstar3 * p.xstar5 * (cert.h5 / cert.h2)
        - (1.0 / cert.eps6) * p.b6 * p.xstar4 * p.xstar6 * (cert.h6 / cert.h2);
    let gain3 = p.b32 * p.rho32 * (p.xstar3 + c.theta3);
    let r3 = 2.0 * (p.alpha3 - d)
        - ((c.kappa3 * p.tau3).exp() / cert.beta3) * gain3 * gain3
        - cert.eps3 * (p.b32 + p.b3 * p.xstar5) * p.xstar3;
    let gain4 = p.b42 * p.rho42 * (p.xstar4 + c.theta4);
    let r4 = 2.0 * (p.alpha4 - d)
        - ((c.kappa4 * p.tau4).exp() / cert.beta4) * gain4 * gain4
        - cert.eps4 * (p.b42 + p.b4 * p.xstar6) * p.xstar4;
    let gain5 = p.b5 * p.rho5 * (p.xstar3 + c.theta3) * (p.xstar5 + c.theta5);
    let r5 = 2.0 * (p.alpha5 - d)
        - ((c.kappa5 * p.tau5).exp() / cert.beta5) * gain5 * gain5
        - cert.eps5 * p.b5 * p.xstar3 * p.xstar5
        - cert.eps59 * p.b59 * p.xstar5;
    let gain6 = p.b6 * p.rho6 * (p.xstar4 + c.theta4) * (p.xstar6 + c.theta6);
    let r6 = 2.0 * (p.alpha6 - d)
        - ((c.kappa6 * p.tau6).exp() / cert.beta6) * gain6 * gain6
        - cert.eps6 * p.b6 * p.xstar4 * p.xstar6;
    let gain7 = p.b7 * p.rho7 * (p.xstar4 + c.theta4) * (p.xstar6 + c.theta6);
    let r7 = 2.0 * (p.alpha7 - d)
        - ((c.kappa7 * p.tau7).exp() / cert.beta7) * gain7 * gain7
        - (1.0 / cert.eps87) * p.rho8 * (cert.h8 / cert.h7);
    let r8 = 2.0 * (p.alpha8 - d)
        - cert.eps87 * p.rho8
        - cert.eps81 * p.gamma81 * x8star;
    let r9 = 2.0 * (e - d)
        - (1.0 / cert.eps59) * p.b59 * p.xstar5 * (cert.h5 / cert.h9)
        - (1.0 / cert.eps10) * sink * (cert.h10 / cert.h9);
    let r10 = 2.0 * (p.alpha10 - d) - cert.eps10 * sink;

    [r1, r2, r3, r4, r5, r6, r7, r8, r9, r10]
}

/// Runs the full pipeline and returns a certificate passing its invariants.
///
/// Fails with [`CertificateError::Infeasible`] when the stationary point is
/// not exponentially stable (no certificate exists), and with
/// [`CertificateError::InternalConsistency`] when an r-diagnostic leaves its
/// admissible range (an implementation bug by definition).
pub fn build_certificate(
    p: &ModelParameters,
    choices: &CertificateChoices,
) -> Result<Certificate, CertificateError> {
    p.validate()?;
    choices.validate()?;
    let stability = check_stability_condition(p);
    if !stability.satisfied {
        return Err(CertificateError::Infeasible {
            margin: stability.margin,
        });
    }
    let a = compute_a_constants(p);
    let epsilon = compute_epsilon(&a);
    let delta = compute_delta(epsilon, p, choices.delta_fraction)?;
    let eps_k = compute_eps_k(p, choices, delta);
    let betas = compute_beta_k(p, choices, &eps_k);
    let h = compute_h(p, choices, delta, epsilon, &a);
    let omega = compute_omega(delta, choices);
    let q = compute_q(p, &h);
    let aux = compute_aux_eps(p, &a, delta);

    let mut cert = Certificate {
        a11: a.a11,
        a99: a.a99,
        a19: a.a19,
        a91: a.a91,
        epsilon,
        delta,
        eps3: eps_k[0],
        eps4: eps_k[1],
        eps5: eps_k[2],
        eps6: eps_k[3],
        eps7: eps_k[4],
        beta3: betas[0],
        beta4: betas[1],
        beta5: betas[2],
        beta6: betas[3],
        beta7: betas[4],
        h1: h[0],
        h2: h[1],
        h3: h[2],
        h4: h[3],
        h5: h[4],
        h6: h[5],
        h7: h[6],
        h8: h[7],
        h9: h[8],
        h10: h[9],
        omega,
        q,
        eps1: aux.eps1,
        eps2: aux.eps2,
        eps9: aux.eps9,
        eps59: aux.eps59,
        eps87: aux.eps87,
        eps81: aux.eps81,
        eps10: aux.eps10,
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
        r4: 0.0,
        r5: 0.0,
        r6: 0.0,
        r7: 0.0,
        r8: 0.0,
        r9: 0.0,
        r10: 0.0,
        theta3: choices.theta3,
        theta4: choices.theta4,
        theta5: choices.theta5,
        theta6: choices.theta6,
        kappa3: choices.kappa3,
        kappa4: choices.kappa4,
        kappa5: choices.kappa5,
        kappa6: choices.kappa6,
        kappa7: choices.kappa7,
        tau3: p.tau3,
        tau4: p.tau4,
        tau5: p.tau5,
        tau6: p.tau6,
        tau7: p.tau7,
        xstar1: 0.0,
        xstar2: 0.0,
        xstar3: p.xstar3,
        xstar4: p.xstar4,
        xstar5: p.xstar5,
        xstar6: p.xstar6,
        xstar7: p.xstar7,
        xstar8: p.rho8 * p.xstar7 / p.alpha8,
        xstar9: 0.0,
        xstar10: 0.0,
    };

    let r = compute_r_diagnostics(p, choices, &cert);
    // Scale of each balance: its leading positive term.
    let scales = [
        2.0 * (epsilon - delta),
        2.0 * (p.alpha2 - delta),
        2.0 * (p.alpha3 - delta),
        2.0 * (p.alpha4 - delta),
        2.0 * (p.alpha5 - delta),
        2.0 * (p.alpha6 - delta),
        2.0 * (p.alpha7 - delta),
        2.0 * (p.alpha8 - delta),
        2.0 * (epsilon - delta),
        2.0 * (p.alpha10 - delta),
    ];
    for j in 0..10 {
        let (value, scale) = (r[j], scales[j]);
        if j == 0 || j == 8 {
            if value < -R_SIGN_ATOL {
                return Err(CertificateError::InternalConsistency {
                    index: j + 1,
                    value,
                    tolerance: R_SIGN_ATOL,
                });
            }
        } else {
            let tolerance = R_IDENTITY_RTOL * scale;
            if value.abs() > tolerance {
                return Err(CertificateError::InternalConsistency {
                    index: j + 1,
                    value,
                    tolerance,
                });
            }
        }
    }
    [
        cert.r1, cert.r2, cert.r3, cert.r4, cert.r5, cert.r6, cert.r7, cert.r8, cert.r9, cert.r10,
    ] = r;

    Ok(cert)
}

// ======================== Tests ========================

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Unit choices: θ = κ = 1 everywhere, centered δ.
    fn unit_choices() -> CertificateChoices {
        CertificateChoices {
            theta3: 1.0,
            theta4: 1.0,
            theta5: 1.0,
            theta6: 1.0,
            kappa3: 1.0,
            kappa4: 1.0,
            kappa5: 1.0,
            kappa6: 1.0,
            kappa7: 1.0,
            delta_fraction: 0.5,
        }
    }

    fn default_certificate() -> Certificate {
        let p = ModelParameters::default();
        let choices = resolve_choices(&p, &ChoiceOverrides::default()).unwrap();
        build_certificate(&p, &choices).unwrap()
    }

    fn assert_close(got: f64, want: f64, rtol: f64, what: &str) {
        let tol = rtol * want.abs().max(1.0);
        assert!(
            (got - want).abs() <= tol,
            "{what}: got {got}, want {want} (tolerance {tol})"
        );
    }

    #[test]
    fn a_constants_default_set() {
        let a = compute_a_constants(&ModelParameters::default());
        assert_close(a.a11, 3.0, 1e-15, "a11");
        assert_close(a.a99, 0.5, 1e-15, "a99");
        assert_close(a.a19, 0.3, 1e-15, "a19");
        assert_close(a.a91, 0.1, 1e-15, "a91");
    }

    #[test]
    fn a_constants_single_term_survival() {
        // Zero every contributor except the natural infected-cell death rate.
        let p = ModelParameters {
            b95: 0.0,
            b10: 1.0,
            gamma12: 0.0,
            gamma18: 0.0,
            gamma19: 0.0,
            nu: 0.0,
            n: 0.0,
            sigma: 0.0,
            ..ModelParameters::default()
        };
        let a = compute_a_constants(&p);
        assert_eq!(a.a99, 1.0);
        assert_eq!(a.a11, 0.0);
        assert_eq!(a.a19, 0.0);
        assert_eq!(a.a91, 0.0);
    }

    #[test]
    fn epsilon_hand_values() {
        let eps = |a11, a99, a19, a91| {
            compute_epsilon(&LinearGains { a11, a99, a19, a91 })
        };
        assert_eq!(eps(3.0, 2.0, 2.0, 1.0), 1.0);
        // Symmetric case collapses the square root: a − s.
        assert_eq!(eps(2.0, 2.0, 1.0, 1.0), 1.0);
        // Stability boundary.
        assert_eq!(eps(1.0, 1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn epsilon_sign_matches_stability_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let p = crate::model::tests::random_parameters(&mut rng);
            let check = check_stability_condition(&p);
            let eps = compute_epsilon(&compute_a_constants(&p));
            assert_eq!(
                eps > 0.0,
                check.margin > 0.0,
                "sign mismatch: eps {eps}, margin {}",
                check.margin
            );
        }
    }

    #[test]
    fn delta_examples_and_strictness() {
        let p = ModelParameters::default(); // all α = 1
        assert_eq!(compute_delta(1.0, &p, 0.5).unwrap(), 0.5);
        assert_eq!(compute_delta(0.2, &p, 0.5).unwrap(), 0.1);
        let nearly_one = compute_delta(0.2, &p, 0.999_999).unwrap();
        assert!(nearly_one < 0.2, "δ must stay strictly below the minimum");
        assert!(matches!(
            compute_delta(0.0, &p, 0.5),
            Err(CertificateError::Infeasible { .. })
        ));
        assert!(matches!(
            compute_delta(-1.0, &p, 0.5),
            Err(CertificateError::Infeasible { .. })
        ));
    }

    #[test]
    fn eps3_beta3_h3_hand_value() {
        // α3 = 1, δ = ½, b32 = ρ32 = X3* = θ3 = 1, b3 = 0, κ3·τ3 = 2:
        // denominator D3 = 2e + 1, so ε3 = 1/(2e+1), β3 = 2e(2e+1),
        // h3 = (2e+1)^{-2}.
        let p = ModelParameters {
            b32: 1.0,
            rho32: 1.0,
            b3: 0.0,
            alpha3: 1.0,
            xstar3: 1.0,
            tau3: 1.0,
            ..ModelParameters::default()
        };
        let c = CertificateChoices {
            theta3: 1.0,
            kappa3: 2.0,
            ..unit_choices()
        };
        let eps_k = compute_eps_k(&p, &c, 0.5);
        assert_close(eps_k[0], 0.155_362_403_496_963_62, 1e-15, "eps3");
        let betas = compute_beta_k(&p, &c, &eps_k);
        assert_close(betas[0], 34.992_788_052_640_69, 1e-14, "beta3");
        let a = compute_a_constants(&p);
        let h = compute_h(&p, &c, 0.5, compute_epsilon(&a), &a);
        assert_close(h[2], 0.024_137_476_420_353_33, 1e-14, "h3");
    }

    #[test]
    fn eps_k_limits_and_monotonicity() {
        let p = ModelParameters::default();
        let delta = 0.25;
        // Doubling θ3 strictly decreases ε3 (denominator grows).
        let narrow = compute_eps_k(&p, &unit_choices(), delta)[0];
        let wide = compute_eps_k(
            &p,
            &CertificateChoices {
                theta3: 2.0,
                ..unit_choices()
            },
            delta,
        )[0];
        assert!(wide < narrow);
        // θ → 0, τ → 0: plain coefficient sums remain.
        let mut p0 = p.clone();
        p0.tau3 = 1e-300;
        let c0 = CertificateChoices {
            theta3: 1e-300,
            ..unit_choices()
        };
        let eps3 = compute_eps_k(&p0, &c0, delta)[0];
        let want = 2.0 * (p0.alpha3 - delta)
            / (p0.b32 * p0.rho32 * p0.xstar3 + (p0.b32 + p0.b3 * p0.xstar5) * p0.xstar3);
        assert_close(eps3, want, 1e-12, "eps3 limit");
    }

    #[test]
    fn h_weights_hand_values() {
        let p = ModelParameters::default(); // α2 = 1
        let a = compute_a_constants(&p);
        let h = compute_h(&p, &unit_choices(), 0.5, compute_epsilon(&a), &a);
        assert_eq!(h[1], 10.0, "h2 = 5/(α2−δ) at δ = ½");
        assert_close(h[8] / h[0], a.a19 / a.a91, 1e-14, "h9/h1 = a19/a91");
    }

    #[test]
    fn omega_examples() {
        let c_ones = unit_choices();
        assert_eq!(compute_omega(0.25, &c_ones), 0.25); // 2δ binds
        let c_k5 = CertificateChoices {
            kappa5: 0.4,
            ..unit_choices()
        };
        assert_eq!(compute_omega(1.0, &c_k5), 0.2); // κ5 binds
        // Homogeneity: scaling δ and all κ by c scales ω by c.
        let c_scaled = CertificateChoices {
            kappa3: 3.0,
            kappa4: 3.0,
            kappa5: 1.2,
            kappa6: 3.0,
            kappa7: 3.0,
            ..unit_choices()
        };
        assert_close(
            compute_omega(3.0, &c_scaled),
            3.0 * compute_omega(1.0, &c_k5),
            1e-15,
            "ω homogeneity under joint scaling of δ and κ",
        );
    }

    #[test]
    fn q_equals_twenty_for_unit_couplings() {
        // Every coefficient group = 1 and every h_j = 1: ten unit terms.
        let p = ModelParameters {
            n: 1.0,
            b95: 1.0,
            gamma18: 1.0,
            gamma19: 1.0,
            big_c: 1.0,
            b3: 1.0,
            b4: 1.0,
            b5: 1.0,
            b6: 1.0,
            xstar3: 1.0,
            xstar4: 1.0,
            xstar5: 1.0,
            xstar6: 1.0,
            ..ModelParameters::default()
        };
        let q = compute_q(&p, &[1.0; 10]);
        assert_close(q, 20.0, 1e-15, "q");
    }

    #[test]
    fn q_scaling_and_term_removal() {
        let p = ModelParameters::default();
        let h = {
            let a = compute_a_constants(&p);
            compute_h(&p, &unit_choices(), 0.25, compute_epsilon(&a), &a)
        };
        // Multiplying every h_j by 4 halves q.
        let h4 = h.map(|v| 4.0 * v);
        assert_close(compute_q(&p, &h4), 0.5 * compute_q(&p, &h), 1e-12, "q scaling");
        // Zeroing b3 removes exactly its term.
        let p_no_b3 = ModelParameters { b3: 0.0, ..p.clone() };
        let removed = 2.0 * p.b3 * p.xstar3 * h[2].sqrt() / (h[1] * h[4]).sqrt();
        assert_close(
            compute_q(&p_no_b3, &h),
            compute_q(&p, &h) - removed,
            1e-12,
            "q term removal",
        );
    }

    #[test]
    fn aux_eps_hand_values_and_balance_identity() {
        let a = LinearGains {
            a11: 3.0,
            a99: 2.0,
            a19: 2.0,
            a91: 1.0,
        };
        let p = ModelParameters::default();
        let aux = compute_aux_eps(&p, &a, 0.5);
        assert_eq!(aux.eps1, 1.0);
        assert_eq!(aux.eps9, 1.0);
        // Balanced-rate identity at these gains: both sides equal 2ε = 2.
        let eps = compute_epsilon(&a);
        let lhs = 2.0 * a.a11 - a.a19 * (aux.eps1 + 1.0 / aux.eps9);
        let rhs = 2.0 * a.a99 - a.a91 * (aux.eps9 + 1.0 / aux.eps1);
        assert_close(lhs, 2.0 * eps, 1e-14, "virus side");
        assert_close(rhs, 2.0 * eps, 1e-14, "infected side");
        // ε2 ratio example: α2 = 1, δ = ½, γ21·M = 2.
        let p2 = ModelParameters {
            gamma21: 2.0,
            ..ModelParameters::default()
        };
        assert_eq!(compute_aux_eps(&p2, &a, 0.5).eps2, 0.25);
    }

    #[test]
    fn balance_identity_on_randomized_stable_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tested = 0;
        while tested < 50 {
            let p = crate::model::tests::random_parameters(&mut rng);
            if !check_stability_condition(&p).satisfied {
                continue;
            }
            tested += 1;
            let a = compute_a_constants(&p);
            let eps = compute_epsilon(&a);
            let aux = compute_aux_eps(&p, &a, 0.0);
            let lhs = 2.0 * a.a11 - a.a19 * (aux.eps1 + 1.0 / aux.eps9);
            let rhs = 2.0 * a.a99 - a.a91 * (aux.eps9 + 1.0 / aux.eps1);
            assert_close(lhs, 2.0 * eps, 1e-10, "virus side");
            assert_close(rhs, 2.0 * eps, 1e-10, "infected side");
        }
    }

    #[test]
    fn default_certificate_matches_frozen_pipeline_values() {
        // Frozen from an independent evaluation of the formulas (see the
        // repository tests for the same values at acceptance level).
        let cert = default_certificate();
        assert_close(cert.epsilon, 0.488_057_053_587_603_65, 1e-13, "epsilon");
        assert_close(cert.delta, 0.244_028_526_793_801_83, 1e-13, "delta");
        assert_close(cert.omega, 0.244_028_526_793_801_83, 1e-13, "omega");
        assert_close(cert.h1, 18.028_148_399_746_588, 1e-12, "h1");
        assert_close(cert.h2, 6.614_006_185_701_935, 1e-12, "h2");
        assert_close(cert.h5, 0.040_336_824_000_596_56, 1e-12, "h5");
        assert_close(cert.h10, 6.047_771_785_649_585, 1e-12, "h10");
        assert_close(cert.beta5, 21.927_945_515_792_445, 1e-12, "beta5");
        assert_close(cert.q, 14.746_253_213_488_147, 1e-12, "q");
        assert_close(cert.eps1, 8.373_143_154_707_986, 1e-12, "eps1");
        assert_close(cert.eps10, 3.023_885_892_824_792_7, 1e-12, "eps10");
        assert_close(cert.r9, 0.469_557_583_502_978_16, 1e-10, "r9");
        assert!(cert.r1.abs() <= 1e-12, "r1 = {} should vanish here", cert.r1);
    }

    #[test]
    fn r_diagnostics_vanish_for_default_and_unit_choices() {
        let p = ModelParameters::default();
        for choices in [
            resolve_choices(&p, &ChoiceOverrides::default()).unwrap(),
            unit_choices(),
        ] {
            let cert = build_certificate(&p, &choices).unwrap();
            let r = cert.r();
            for j in [1, 2, 3, 4, 5, 6, 7, 9] {
                assert!(
                    r[j].abs() <= 1e-12,
                    "r{} = {} should vanish identically",
                    j + 1,
                    r[j]
                );
            }
            assert!(r[0] >= -1e-10, "r1 = {}", r[0]);
            assert!(r[8] >= -1e-10, "r9 = {}", r[8]);
        }
    }

    #[test]
    fn r1_increases_when_h1_is_inflated() {
        let p = ModelParameters::default();
        let choices = resolve_choices(&p, &ChoiceOverrides::default()).unwrap();
        let cert = build_certificate(&p, &choices).unwrap();
        let mut inflated = cert.clone();
        inflated.h1 *= 1.1;
        let r = compute_r_diagnostics(&p, &choices, &inflated);
        assert!(
            r[0] > cert.r1 + 1e-6,
            "r1 must strictly grow when h1 grows: {} vs {}",
            r[0],
            cert.r1
        );
    }

    #[test]
    fn randomized_r_identities_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut tested = 0;
        while tested < 25 {
            let p = crate::model::tests::random_parameters(&mut rng);
            if !check_stability_condition(&p).satisfied {
                continue;
            }
            tested += 1;
            let choices = CertificateChoices {
                theta3: rng.random_range(0.1..2.0),
                theta4: rng.random_range(0.1..2.0),
                theta5: rng.random_range(0.1..2.0),
                theta6: rng.random_range(0.1..2.0),
                kappa3: rng.random_range(0.1..2.0),
                kappa4: rng.random_range(0.1..2.0),
                kappa5: rng.random_range(0.1..2.0),
                kappa6: rng.random_range(0.1..2.0),
                kappa7: rng.random_range(0.1..2.0),
                delta_fraction: rng.random_range(0.05..0.95),
            };
            // build_certificate runs the internal r-gate; reaching Ok proves
            // the identities within the gate tolerances.
            let cert = build_certificate(&p, &choices).unwrap();
            assert!(cert.r1 >= -1e-10 && cert.r9 >= -1e-10);
        }
    }

    #[test]
    fn build_rejects_infeasible_parameters() {
        let p = ModelParameters {
            sigma: 100.0,
            ..ModelParameters::default()
        };
        match build_certificate(&p, &unit_choices()) {
            Err(CertificateError::Infeasible { margin }) => assert!(margin <= 0.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn build_is_deterministic() {
        let p = ModelParameters::default();
        let choices = unit_choices();
        assert_eq!(
            build_certificate(&p, &choices).unwrap(),
            build_certificate(&p, &choices).unwrap()
        );
    }

    #[test]
    fn certificate_fields_positive_and_delta_inside_interval() {
        let cert = default_certificate();
        let p = ModelParameters::default();
        for (name, v) in [
            ("epsilon", cert.epsilon),
            ("delta", cert.delta),
            ("omega", cert.omega),
            ("q", cert.q),
            ("eps1", cert.eps1),
            ("eps2", cert.eps2),
            ("eps9", cert.eps9),
            ("eps59", cert.eps59),
            ("eps87", cert.eps87),
            ("eps81", cert.eps81),
            ("eps10", cert.eps10),
        ] {
            assert!(v > 0.0, "{name} = {v} must be positive");
        }
        for (j, v) in cert.h().into_iter().enumerate() {
            assert!(v > 0.0, "h{} = {v} must be positive", j + 1);
        }
        for (k, v) in cert.betas().into_iter().enumerate() {
            assert!(v > 0.0, "beta{} = {v} must be positive", k + 3);
        }
        let upper = [
            cert.epsilon,
            p.alpha2,
            p.alpha3,
            p.alpha4,
            p.alpha5,
            p.alpha6,
            p.alpha7,
            p.alpha8,
            p.alpha10,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        assert!(cert.delta > 0.0 && cert.delta < upper);
        assert!(cert.omega <= cert.delta + 1e-15);
        for kappa in cert.kappas() {
            assert!(cert.omega <= kappa / 2.0 + 1e-15);
        }
    }

    #[test]
    fn resolved_defaults_use_resting_levels_and_two_delta() {
        let p = ModelParameters::default();
        let choices = resolve_choices(&p, &ChoiceOverrides::default()).unwrap();
        assert_eq!(choices.theta3, p.xstar3);
        assert_eq!(choices.theta6, p.xstar6);
        let cert = build_certificate(&p, &choices).unwrap();
        assert_close(choices.kappa5, 2.0 * cert.delta, 1e-15, "kappa default");
        // Explicit overrides pass through untouched.
        let custom = resolve_choices(
            &p,
            &ChoiceOverrides {
                theta4: Some(0.7),
                kappa6: Some(1.3),
                delta_fraction: Some(0.25),
                ..ChoiceOverrides::default()
            },
        )
        .unwrap();
        assert_eq!(custom.theta4, 0.7);
        assert_eq!(custom.kappa6, 1.3);
        assert_eq!(custom.delta_fraction, 0.25);
    }

    #[test]
    fn invalid_choices_are_rejected() {
        let p = ModelParameters::default();
        let bad_theta = CertificateChoices {
            theta3: 0.0,
            ..unit_choices()
        };
        assert!(matches!(
            build_certificate(&p, &bad_theta),
            Err(CertificateError::InvalidChoice { name: "theta3", .. })
        ));
        let bad_fraction = CertificateChoices {
            delta_fraction: 1.0,
            ..unit_choices()
        };
        assert!(matches!(
            build_certificate(&p, &bad_fraction),
            Err(CertificateError::InvalidChoice {
                name: "delta_fraction",
                ..
            })
        ));
    }

    #[test]
    fn certificate_serializes_flat() {
        let cert = default_certificate();
        let json = serde_json::to_value(&cert).unwrap();
        let map = json.as_object().unwrap();
        for key in ["epsilon", "delta", "omega", "q", "h1", "h10", "beta7", "r9", "kappa3", "tau7", "xstar8"] {
            assert!(map.contains_key(key), "missing flat key {key}");
            assert!(map[key].is_number(), "{key} must be a plain number");
        }
    }
}
