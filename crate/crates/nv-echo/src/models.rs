//! Closed-form physics of Hahn-echo decay under OU-correlated dephasing
//! noise.
//!
//! Unit conventions, fixed across the crate:
//!
//! * time and coherence times: µs
//! * rates: µs⁻¹
//! * noise amplitude λ: rad·µs⁻¹
//! * spin densities: cm⁻³ (converted to m⁻³ internally where SI constants
//!   enter)
//!
//! All functions here are pure; identical inputs give bit-identical outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinned physical constants (CODATA 2018).
pub mod constants {
    /// Vacuum permeability µ₀ = 4π×10⁻⁷ T·m/A.
    pub const MU_0: f64 = 1.256_637_061_435_917_3e-6;
    /// Bohr magneton β_e in J/T.
    pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
    /// Reduced Planck constant ħ in J·s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Electron gyromagnetic ratio, cyclic: 28 MHz/mT = 2.8×10¹⁰ Hz/T.
    pub const GAMMA_E_HZ_PER_T: f64 = 2.8e10;
    /// cm⁻³ → m⁻³.
    pub const PER_CM3_TO_PER_M3: f64 = 1e6;
}

/// Noise amplitude and correlation time of the electron spin bath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    /// Noise amplitude λ in rad·µs⁻¹.
    pub lambda: f64,
    /// Bath correlation time τ_c in µs.
    pub tau_c: f64,
}

impl NoiseModelParams {
    pub fn new(lambda: f64, tau_c: f64) -> Result<Self> {
        // λ = 0 is allowed: it degenerates to the no-dephasing curve,
        // useful as a null case for simulation.
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::domain(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if !(tau_c.is_finite() && tau_c > 0.0) {
            return Err(Error::domain(format!("tau_c must be finite and > 0, got {tau_c}")));
        }
        Ok(Self { lambda, tau_c })
    }
}

/// Stretched-exponential decay exp(−(τ/T₂)^p).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StretchedExpParams {
    /// Coherence time T₂ in µs.
    pub t2: f64,
    /// Dimensionless stretch exponent, within the fitting bounds [0.5, 4].
    pub p: f64,
}

impl StretchedExpParams {
    pub fn new(t2: f64, p: f64) -> Result<Self> {
        if !(t2.is_finite() && t2 > 0.0) {
            return Err(Error::domain(format!("t2 must be finite and > 0, got {t2}")));
        }
        if !(p.is_finite() && (0.5..=4.0).contains(&p)) {
            return Err(Error::domain(format!("stretch exponent must be in [0.5, 4], got {p}")));
        }
        Ok(Self { t2, p })
    }
}

/// Inputs of the instantaneous-diffusion rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstantaneousDiffusionInput {
    /// Resonant spin density in cm⁻³.
    pub n_resonant: f64,
    /// g-factors of the two resonant spins.
    pub g1: f64,
    pub g2: f64,
    /// Flip angle of the refocusing microwave pulse, radians, in [0, π].
    pub beta: f64,
}

impl InstantaneousDiffusionInput {
    pub fn new(n_resonant: f64, g1: f64, g2: f64, beta: f64) -> Result<Self> {
        if !(n_resonant.is_finite() && n_resonant >= 0.0) {
            return Err(Error::domain(format!("n_resonant must be >= 0, got {n_resonant}")));
        }
        for (name, g) in [("g1", g1), ("g2", g2)] {
            if !(g.is_finite() && (1.9..=2.1).contains(&g)) {
                return Err(Error::domain(format!("{name} must be in [1.9, 2.1], got {g}")));
            }
        }
        if !(beta.is_finite() && (0.0..=std::f64::consts::PI).contains(&beta)) {
            return Err(Error::domain(format!("beta must be in [0, pi], got {beta}")));
        }
        Ok(Self { n_resonant, g1, g2, beta })
    }
}

/// One row of the HPHT sample table.
///
/// Concentration columns are in units of 10¹⁷ cm⁻³; the irradiation dose
/// in 10¹⁶ e·cm⁻².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub p1_conc: f64,
    pub nv_conc: f64,
    pub dose: f64,
}

impl SampleRecord {
    pub fn new(id: impl Into<String>, p1_conc: f64, nv_conc: f64, dose: f64) -> Result<Self> {
        let id = id.into();
        for (name, v) in [("p1_conc", p1_conc), ("nv_conc", nv_conc), ("dose", dose)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(Self { id, p1_conc, nv_conc, dose })
    }

    /// Total spin concentration: NV plus P1 density, 10¹⁷ cm⁻³.
    pub fn spin_concentration(&self) -> f64 {
        self.p1_conc + self.nv_conc
    }
}

/// Dimensionless filter shape h(x) = x − 3 − e^{−x} + 4e^{−x/2}, where
/// x = τ/τ_c, so that the echo filter integral is F = τ_c²·h(τ/τ_c).
///
/// The naive expression loses all significance for x ≪ 1 (h ~ x³/12 while
/// the terms are O(1)), so small x goes through the Taylor series and the
/// rest through an expm1 form that subtracts only O(x²) quantities.
pub(crate) fn filter_shape(x: f64) -> f64 {
    if x < 0.1 {
        // h(x) = Σ_{n>=3} (−1)ⁿ (2^{2−n} − 1)/n! xⁿ, truncated at x⁸;
        // truncation is below 1e-12 relative for x < 0.1.
        let c3 = 1.0 / 12.0;
        let c4 = -1.0 / 32.0;
        let c5 = 7.0 / 960.0;
        let c6 = -1.0 / 768.0;
        let c7 = 31.0 / 161_280.0;
        let c8 = -63.0 / 2_580_480.0;
        x * x * x * (c3 + x * (c4 + x * (c5 + x * (c6 + x * (c7 + x * c8)))))
    } else {
        // With e_m = expm1(−x/2): h(x) = x + 2 e_m − e_m².
        let em = (-0.5 * x).exp_m1();
        x + em * (2.0 - em)
    }
}

/// dh/dx = 1 + e^{−x} − 2e^{−x/2} = expm1(−x/2)², which is free of
/// cancellation at any x.
pub(crate) fn filter_shape_deriv(x: f64) -> f64 {
    let em = (-0.5 * x).exp_m1();
    em * em
}

/// Echo filter integral F(τ, τ_c) = τ_c·τ + (−3 − e^{−τ/τ_c} +
/// 4e^{−τ/(2τ_c)})·τ_c², in µs².
///
/// This equals the double integral ∫₀^τ dt₁ ∫₀^{t₁} dt₂
/// e^{−(t₁−t₂)/τ_c} g(t₁)g(t₂) with the echo modulation g flipping sign at
/// τ/2. F ≥ 0 and is non-decreasing in τ.
pub fn echo_filter_integral(tau: f64, tau_c: f64) -> Result<f64> {
    check_tau(tau)?;
    check_tau_c(tau_c)?;
    Ok(tau_c * tau_c * filter_shape(tau / tau_c))
}

/// ∂F/∂τ_c = τ_c · (2 h(x) − x h'(x)) with x = τ/τ_c.
pub(crate) fn echo_filter_integral_dtau_c(tau: f64, tau_c: f64) -> f64 {
    let x = tau / tau_c;
    tau_c * (2.0 * filter_shape(x) - x * filter_shape_deriv(x))
}

/// Normalized Hahn-echo coherence exp(−4λ²·F(τ, τ_c)).
///
/// The raw off-diagonal density-matrix element carries an extra factor ½;
/// the library normalizes so that coherence(0) = 1, matching
/// contrast-normalized experimental traces.
pub fn hahn_echo_coherence(tau: f64, params: &NoiseModelParams) -> Result<f64> {
    let f = echo_filter_integral(tau, params.tau_c)?;
    Ok((-4.0 * params.lambda * params.lambda * f).exp())
}

/// Quasi-static limit exp(−λ²τ³/(3τ_c)), valid for τ ≪ τ_c.
pub fn short_time_coherence(tau: f64, params: &NoiseModelParams) -> Result<f64> {
    check_tau(tau)?;
    let l2 = params.lambda * params.lambda;
    Ok((-l2 * tau * tau * tau / (3.0 * params.tau_c)).exp())
}

/// Motional-narrowed limit exp(−4λ²τ_cτ), valid for τ ≫ τ_c.
pub fn long_time_coherence(tau: f64, params: &NoiseModelParams) -> Result<f64> {
    check_tau(tau)?;
    let l2 = params.lambda * params.lambda;
    Ok((-4.0 * l2 * params.tau_c * tau).exp())
}

/// Stretched exponential exp(−(τ/T₂)^p). Equals e⁻¹ at τ = T₂ for any p.
pub fn stretched_exp(tau: f64, params: &StretchedExpParams) -> Result<f64> {
    check_tau(tau)?;
    Ok((-(tau / params.t2).powf(params.p)).exp())
}

/// Instantaneous-diffusion rate 1/T_ID in µs⁻¹:
///
/// 1/T_ID = n · (π/9√3) · (µ₀ g₁ g₂ β_e² / ħ) · sin²(β/2)
///
/// with n the resonant spin density (converted cm⁻³ → m⁻³ internally).
/// The result is exactly linear in n and in sin²(β/2).
pub fn instantaneous_diffusion_rate(input: &InstantaneousDiffusionInput) -> Result<f64> {
    use constants::*;
    // Validate even for hand-built structs.
    let input = InstantaneousDiffusionInput::new(input.n_resonant, input.g1, input.g2, input.beta)?;
    let geometric = std::f64::consts::PI / (9.0 * 3.0_f64.sqrt());
    let material = MU_0 * input.g1 * input.g2 * BOHR_MAGNETON * BOHR_MAGNETON / HBAR; // m³/s
    let half = (input.beta / 2.0).sin();
    let per_density = geometric * material * half * half;
    let rate_per_s = per_density * (input.n_resonant * PER_CM3_TO_PER_M3);
    Ok(rate_per_s * 1e-6)
}

/// Resonant spin density: 1/12 of the NV density, from the ¹⁴N hyperfine
/// splitting and field alignment along one NV axis.
pub fn resonant_density(nv_conc: f64) -> Result<f64> {
    if !(nv_conc.is_finite() && nv_conc >= 0.0) {
        return Err(Error::domain(format!("nv_conc must be >= 0, got {nv_conc}")));
    }
    Ok(nv_conc / 12.0)
}

/// Non-resonant decoherence rate 1/T_non-reso = 1/T₂ − 1/T_ID, µs⁻¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonResonantRate {
    /// The rate difference, which may be non-positive for an inconsistent
    /// fit.
    pub per_us: f64,
    /// Set when 1/T_ID ≥ 1/T₂, i.e. instantaneous diffusion alone would
    /// exceed the measured decoherence.
    pub t_id_dominates: bool,
}

/// `t_id = None` means no instantaneous-diffusion correction (T_ID = ∞).
pub fn non_resonant_rate(t2: f64, t_id: Option<f64>) -> Result<NonResonantRate> {
    if !(t2.is_finite() && t2 > 0.0) {
        return Err(Error::domain(format!("t2 must be > 0, got {t2}")));
    }
    let id_rate = match t_id {
        Some(t) if !(t.is_finite() && t > 0.0) => {
            return Err(Error::domain(format!("t_id must be > 0, got {t}")));
        }
        Some(t) => 1.0 / t,
        None => 0.0,
    };
    let per_us = 1.0 / t2 - id_rate;
    Ok(NonResonantRate { per_us, t_id_dominates: per_us <= 0.0 })
}

/// T₂* = 1/(2πλ) in µs, with λ in rad·µs⁻¹.
///
/// The source relation does not state whether λ is angular or cyclic; the
/// formula is applied literally in this crate's unit convention (λ angular).
pub fn t2_star_from_lambda(lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be > 0, got {lambda}")));
    }
    Ok(1.0 / (2.0 * std::f64::consts::PI * lambda))
}

/// Order-of-magnitude dipole-dipole coupling between nearest electron
/// spins at the given density, in kHz (cyclic frequency).
///
/// Estimator: mean inter-spin distance r = n^{−1/3} for a uniform density
/// n, point-dipole coupling ν = (µ₀/4π)·ħγ²/r³ / (2π) with the angular
/// electron gyromagnetic ratio γ = 2π × 28 MHz/mT. Since r³ = 1/n this is
/// exactly linear in the density. At 10¹⁸ cm⁻³ it gives ≈ 52 kHz.
pub fn dipolar_coupling_scale(density: f64) -> Result<f64> {
    use constants::*;
    if !(density.is_finite() && density > 0.0) {
        return Err(Error::domain(format!("density must be > 0, got {density}")));
    }
    let gamma = 2.0 * std::f64::consts::PI * GAMMA_E_HZ_PER_T; // rad/(s·T)
    // (µ₀/4π)·ħγ² / (2π·1e3), per (m⁻³); multiplied by n = 1/r³ last so the
    // result is a single multiply in the density.
    let per_density =
        MU_0 / (4.0 * std::f64::consts::PI) * HBAR * gamma * gamma / (2.0 * std::f64::consts::PI) / 1e3;
    Ok(per_density * (density * PER_CM3_TO_PER_M3))
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::domain(format!("tau must be finite and >= 0, got {tau}")));
    }
    Ok(())
}

fn check_tau_c(tau_c: f64) -> Result<()> {
    if !(tau_c.is_finite() && tau_c > 0.0) {
        return Err(Error::domain(format!("tau_c must be finite and > 0, got {tau_c}")));
    }
    Ok(())
}
