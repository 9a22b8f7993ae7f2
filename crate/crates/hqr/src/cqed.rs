//! Semiclassical atom–cavity interaction: a bright coherent pulse reflects off
//! a cavity holding a two-level emitter, and picks up a phase conditioned on
//! the qubit state.
//!
//! All parameters are stored in SI units (angular frequencies in rad/s, times
//! in s). The solver works internally in units of the effective coupling
//! g′ = g√(κ/γ), so results are invariant under a common rescaling of rates.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ode::{self, OdeError, OdeOptions};
use crate::quad;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Pulse truncation, in units of σ_p on each side of the peak.
pub const PULSE_TRUNCATION_SIGMAS: f64 = 6.0;
/// Ring-down is followed until the filtered pulse has fallen by this factor.
pub const RINGDOWN_FLOOR: f64 = 1e-6;
const TRAJECTORY_SAMPLES: usize = 2000;
/// Coherence of the qubit superposition before the interaction.
const RHO_10_INITIAL: f64 = 0.5;
/// Allowed overshoot of D(t) above 1 before the coherence counts as unphysical.
const DAMPING_BOUND_TOL: f64 = 1e-6;
/// Population of the coupled qubit level before the interaction.
const RHO_11: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CqedError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("Bloch integration failed: {0}")]
    Solver(#[from] OdeError),
    #[error("trajectory did not reach its asymptote (|S| = {residual:e} of peak)")]
    NotConverged { residual: f64 },
}

fn invalid(msg: impl Into<String>) -> CqedError {
    CqedError::InvalidParams(msg.into())
}

/// Emitter and cavity, all in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterCavityParams {
    /// Atom–cavity coupling (rad/s).
    pub g: f64,
    /// Output-coupling rate (rad/s).
    pub kappa: f64,
    /// Total cavity decay rate γ (rad/s).
    pub gamma_cav: f64,
    /// Atom–cavity detuning (rad/s).
    pub omega0: f64,
    /// Radiative lifetime (s).
    pub tau_r: f64,
    /// Non-radiative lifetime (s); `f64::INFINITY` when absent.
    pub tau_nr: f64,
    /// Ground-state splitting Δ (rad/s). Only enters through a phase that the
    /// rotating frame removes exactly.
    pub delta: f64,
    pub q_factor: f64,
    pub lambda_nm: f64,
    pub n_index: f64,
    /// Mode volume (m³).
    pub v_mode: f64,
}

impl EmitterCavityParams {
    pub fn validate(&self) -> Result<(), CqedError> {
        for (name, v) in [
            ("g", self.g),
            ("kappa", self.kappa),
            ("gamma_cav", self.gamma_cav),
            ("tau_r", self.tau_r),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.kappa > self.gamma_cav * (1.0 + 1e-12) {
            return Err(invalid(format!(
                "kappa ({}) cannot exceed the total cavity decay ({})",
                self.kappa, self.gamma_cav
            )));
        }
        if !(self.tau_nr > 0.0) || self.tau_nr.is_nan() {
            return Err(invalid(format!(
                "tau_nr must be positive, got {}",
                self.tau_nr
            )));
        }
        if !self.omega0.is_finite() || !self.delta.is_finite() {
            return Err(invalid("omega0 and delta must be finite"));
        }
        Ok(())
    }

    /// Effective coupling g′ = g√(κ/γ), the natural rate unit.
    pub fn g_prime(&self) -> f64 {
        self.g * (self.kappa / self.gamma_cav).sqrt()
    }

    /// Total excited-state lifetime without cavity enhancement.
    pub fn lifetime(&self) -> f64 {
        1.0 / (1.0 / self.tau_r + 1.0 / self.tau_nr)
    }

    pub fn with_detuning(mut self, omega0: f64) -> Self {
        self.omega0 = omega0;
        self
    }

    /// Multiply every rate by `c` and every time by `1/c`.
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            g: self.g * c,
            kappa: self.kappa * c,
            gamma_cav: self.gamma_cav * c,
            omega0: self.omega0 * c,
            tau_r: self.tau_r / c,
            tau_nr: self.tau_nr / c,
            delta: self.delta * c,
            ..*self
        }
    }
}

/// Gaussian input pulse, centered on the cavity resonance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Real input amplitude; |α|² is the mean photon number.
    pub alpha: f64,
    /// RMS width of the intensity envelope (s).
    pub sigma_p: f64,
}

impl PulseParams {
    pub fn validate(&self) -> Result<(), CqedError> {
        if !(self.sigma_p.is_finite() && self.sigma_p > 0.0) {
            return Err(invalid(format!(
                "sigma_p must be positive, got {}",
                self.sigma_p
            )));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(invalid(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Normalized envelope F_in(t), with ∫F_in² dt = 1.
    pub fn envelope(&self, t: f64) -> f64 {
        let s = self.sigma_p;
        (2.0 * PI * s * s).powf(-0.25) * (-t * t / (4.0 * s * s)).exp()
    }

    /// |F_in(−iω)|², the power spectrum of the envelope.
    pub fn power_spectrum(&self, omega: f64) -> f64 {
        let s = self.sigma_p;
        2.0 * (2.0 * PI).sqrt() * s * (-2.0 * s * s * omega * omega).exp()
    }
}

/// g² = (3/(4π)²)(ω_a/τ_r)(λ³/n³V) for vacuum wavelength `lambda_nm` and mode
/// volume `v_mode` in m³.
pub fn coupling_g(lambda_nm: f64, n_index: f64, v_mode: f64, tau_r: f64) -> f64 {
    let lambda = lambda_nm * 1e-9;
    let omega_a = 2.0 * PI * SPEED_OF_LIGHT / lambda;
    let g2 =
        3.0 / (4.0 * PI).powi(2) * (omega_a / tau_r) * lambda.powi(3) / (n_index.powi(3) * v_mode);
    g2.sqrt()
}

/// Cavity decay rate ω_a/Q.
pub fn cavity_decay_from_q(lambda_nm: f64, q_factor: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / (lambda_nm * 1e-9) / q_factor
}

pub fn purcell_factor(omega: f64, p: &EmitterCavityParams) -> f64 {
    p.tau_r * p.gamma_cav * p.g * p.g / (omega * omega + p.gamma_cav * p.gamma_cav / 4.0)
}

/// Cooperativity Φ = (τ/τ_r)(κ/γ)F(0).
pub fn cooperativity(p: &EmitterCavityParams) -> f64 {
    p.lifetime() / p.tau_r * (p.kappa / p.gamma_cav) * purcell_factor(0.0, p)
}

/// Γ with 2Γ = (1 + F(ω₀))/τ_r + 1/τ_nr; the pulse sits on the cavity
/// resonance, so the pulse–atom offset is ω₀.
pub fn total_decay(p: &EmitterCavityParams) -> f64 {
    let nr = if p.tau_nr.is_infinite() {
        0.0
    } else {
        1.0 / p.tau_nr
    };
    0.5 * ((1.0 + purcell_factor(p.omega0, p)) / p.tau_r + nr)
}

/// Ω = ω₀[1 + F(ω₀)/(γτ_r)], the offset including the ac-Stark shift.
pub fn stark_detuning(p: &EmitterCavityParams) -> f64 {
    p.omega0 * (1.0 + purcell_factor(p.omega0, p) / (p.gamma_cav * p.tau_r))
}

/// Cavity-filtered pulse S(t) = √κ ∫_{−∞}^t e^{−γ(t−t′)/2} F_in(t′) dt′ for the
/// untruncated Gaussian, in units of 1/√s.
pub fn cavity_filtered_pulse(pulse: &PulseParams, p: &EmitterCavityParams, t: f64) -> f64 {
    let s = pulse.sigma_p;
    let a = p.gamma_cav / 2.0;
    let norm = (2.0 * PI * s * s).powf(-0.25);
    let x = (2.0 * a * s * s - t) / (2.0 * s);
    let conv = if x > 0.0 {
        s * PI.sqrt() * (-t * t / (4.0 * s * s)).exp() * erfcx(x)
    } else {
        s * PI.sqrt() * (a * a * s * s - a * t).exp() * libm::erfc(x)
    };
    p.kappa.sqrt() * norm * conv
}

/// Scaled complementary error function e^{x²} erfc(x) for x ≥ 0.
fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        let r = 1.0 / (x * x);
        (1.0 - r / 2.0 + 0.75 * r * r - 1.875 * r * r * r + 6.5625 * r.powi(4)) / (x * PI.sqrt())
    }
}

/// One recorded point of a Bloch trajectory. Complex quantities are
/// dimensionless; `s` is in 1/√s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochSample {
    pub t: f64,
    pub s: f64,
    pub alpha_tilde: C64,
    pub rho_ee: f64,
    pub rho_e1: C64,
    pub varrho_e0: C64,
    pub varrho_10: C64,
    /// Damping factor D(t) of the qubit coherence.
    pub damping: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlochTrajectory {
    pub alpha: f64,
    /// Decimated samples, at most about 2000 of them; the last one is the
    /// final state.
    pub samples: Vec<BlochSample>,
    /// Photons lost through emitter decay, 2Γ∫ρ_ee dt/ρ₁₁(0), including the
    /// population still excited at the end of the horizon.
    pub lost_photons: f64,
    /// |α̃|² + lost − |α|², relative to max(|α|², 1).
    pub loss_identity_residual: f64,
    /// |S| at the end of the horizon relative to its peak.
    pub ringdown_residual: f64,
    /// Largest D(t) seen along the trajectory. A physical coherence never
    /// exceeds its initial value, so anything above 1 means the coherent
    /// field ansatz has broken down (heavy loss deep in saturation).
    pub peak_damping: f64,
    pub gamma: f64,
    pub omega: f64,
    pub accepted_steps: usize,
}

impl BlochTrajectory {
    pub fn final_sample(&self) -> &BlochSample {
        self.samples.last().expect("trajectory always has samples")
    }

    pub fn converged(&self) -> bool {
        self.ringdown_residual <= RINGDOWN_FLOOR
    }
}

/// Coherent-state overlap exp(−|α − α̃|²/2) already contained in ϱ.
fn overlap(alpha: f64, alpha_tilde: C64) -> f64 {
    (-(alpha - alpha_tilde).norm_sqr() / 2.0).exp()
}

/// Integrate the optical Bloch equations over the truncated pulse plus the
/// cavity ring-down.
pub fn solve_bloch(
    p: &EmitterCavityParams,
    pulse: &PulseParams,
) -> Result<BlochTrajectory, CqedError> {
    solve_bloch_with(p, pulse, OdeOptions::default())
}

pub fn solve_bloch_with(
    p: &EmitterCavityParams,
    pulse: &PulseParams,
    opts: OdeOptions,
) -> Result<BlochTrajectory, CqedError> {
    p.validate()?;
    pulse.validate()?;
    // A vanishing coupling would blow up the normalized rates.
    let unit = p.g_prime().max(1e-3 * p.gamma_cav);
    let g = p.g / unit;
    let kappa = p.kappa / unit;
    let gamma = p.gamma_cav / unit;
    let big_gamma = total_decay(p) / unit;
    let omega = stark_detuning(p) / unit;
    let sigma = pulse.sigma_p * unit;
    let alpha = pulse.alpha;
    let norm_pulse = PulseParams {
        alpha,
        sigma_p: sigma,
    };
    let sqrt_kappa = kappa.sqrt();

    let t0 = -PULSE_TRUNCATION_SIGMAS * sigma;
    let t_cut = PULSE_TRUNCATION_SIGMAS * sigma;
    let ringdown = (8.0f64).max(2.0 * (1.0 / RINGDOWN_FLOOR).ln()) / gamma;
    let t1 = t_cut + ringdown;

    // State: S, α̃, ρ_ee, ρ_e1, ϱ_e0/c, ϱ_10/c, 2Γ∫ρ_ee/ρ₁₁, where c is the
    // coherent overlap. ϱ itself underflows the tolerances once |α − α̃| is
    // large, while ϱ/c is the O(1) damping we are after.
    let rhs = |t: f64, y: &[f64; 12]| -> [f64; 12] {
        let s = y[0];
        let a = C64::new(y[1], y[2]);
        let ree = y[3];
        let re1 = C64::new(y[4], y[5]);
        let e0 = C64::new(y[6], y[7]);
        let r10 = C64::new(y[8], y[9]);
        let drive = if t.abs() <= t_cut {
            norm_pulse.envelope(t)
        } else {
            0.0
        };
        let ds = -gamma / 2.0 * s + sqrt_kappa * drive;
        let decay = C64::new(-big_gamma, omega);
        let i = C64::i();
        let dree = -2.0 * g * (s * a.conj() * re1).im - 2.0 * big_gamma * ree;
        let dre1 = i * g * s * a * (2.0 * ree - RHO_11) + decay * re1;
        let da = -i * g * s * re1 / RHO_11;
        let overlap_rate = ((alpha - a).conj() * da).re;
        let de0 = -i * g * a * s * r10 + decay * e0 - overlap_rate * e0;
        let d10 = -i * g * alpha * s * e0 - overlap_rate * r10;
        [
            ds,
            da.re,
            da.im,
            dree,
            dre1.re,
            dre1.im,
            de0.re,
            de0.im,
            d10.re,
            d10.im,
            2.0 * big_gamma * ree / RHO_11,
            0.0,
        ]
    };

    let sqrt_unit = unit.sqrt();
    let to_sample = |t: f64, y: &[f64; 12]| {
        let a = C64::new(y[1], y[2]);
        let c = overlap(alpha, a);
        let r10 = C64::new(y[8], y[9]);
        BlochSample {
            t: t / unit,
            s: y[0] * sqrt_unit,
            alpha_tilde: a,
            rho_ee: y[3],
            rho_e1: C64::new(y[4], y[5]),
            varrho_e0: C64::new(y[6], y[7]) * c,
            varrho_10: r10 * c,
            damping: r10.norm() / RHO_10_INITIAL,
        }
    };

    let mut y0 = [0.0; 12];
    y0[1] = alpha;
    y0[8] = RHO_10_INITIAL;
    let spacing = (t1 - t0) / TRAJECTORY_SAMPLES as f64;
    let mut next_mark = t0;
    let mut samples = Vec::with_capacity(TRAJECTORY_SAMPLES + 2);
    let mut s_peak = 0.0f64;
    let mut peak_damping = 0.0f64;
    let opts = OdeOptions {
        h_init: opts.h_init.or(Some(
            (0.1 / omega.abs().max(gamma).max(g)).min(sigma / 10.0),
        )),
        ..opts
    };
    let (y_end, stats) = ode::integrate(rhs, t0, y0, t1, opts, |t, y| {
        s_peak = s_peak.max(y[0].abs());
        peak_damping = peak_damping.max(y[8].hypot(y[9]) / RHO_10_INITIAL);
        if t >= next_mark {
            samples.push(to_sample(t, y));
            next_mark = t + spacing;
        }
    })?;
    if samples.last().map(|s| s.t) != Some(t1 / unit) {
        samples.push(to_sample(t1, &y_end));
    }

    let a_end = C64::new(y_end[1], y_end[2]);
    let lost = y_end[10] + y_end[3] / RHO_11;
    let residual = (a_end.norm_sqr() + lost - alpha * alpha) / (alpha * alpha).max(1.0);
    let ringdown_residual = if s_peak > 0.0 {
        y_end[0].abs() / s_peak
    } else {
        0.0
    };
    Ok(BlochTrajectory {
        alpha,
        samples,
        lost_photons: lost,
        loss_identity_residual: residual,
        ringdown_residual,
        peak_damping,
        gamma: big_gamma * unit,
        omega: omega * unit,
        accepted_steps: stats.accepted,
    })
}

/// Figures of merit extracted from the asymptote of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionResult {
    /// Conditional phase, −arg(α̃/α).
    pub theta: f64,
    /// Amplitude loss exponent, −ln|α̃/α|.
    pub loss: f64,
    /// Distinguishability |Im α̃|.
    pub d: f64,
    /// D(∞); NaN when the coherence left the physical range.
    pub damping: f64,
    /// NaN when the coherence left the physical range.
    pub fidelity: f64,
    pub coherence_valid: bool,
}

pub fn interaction_result(traj: &BlochTrajectory) -> Result<InteractionResult, CqedError> {
    if !traj.converged() {
        return Err(CqedError::NotConverged {
            residual: traj.ringdown_residual,
        });
    }
    let last = traj.final_sample();
    let a = last.alpha_tilde;
    let (theta, loss) = if traj.alpha > 0.0 {
        let ratio = a / traj.alpha;
        (-ratio.arg(), -ratio.norm().ln())
    } else {
        (0.0, 0.0)
    };
    let coherence_valid = traj.peak_damping <= 1.0 + DAMPING_BOUND_TOL;
    // Small overshoot is integration error; large overshoot is reported, not
    // clamped, since a clamp would turn a broken model into a perfect gate.
    let damping = if coherence_valid {
        last.damping.min(1.0)
    } else {
        f64::NAN
    };
    Ok(InteractionResult {
        theta,
        loss,
        d: a.im.abs(),
        damping,
        fidelity: 1.0 - 2.0 * RHO_10_INITIAL * RHO_10_INITIAL * (1.0 - damping),
        coherence_valid,
    })
}

/// Low-amplitude perturbative predictions for the phase and loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbativeEstimate {
    /// Principal-value integral over the pulse spectrum.
    pub theta2: f64,
    /// Narrow-band closed form g²κ/(ω_p γ²/4) with ω_p = ω₀.
    pub theta2_narrowband: f64,
    pub l2: f64,
    /// Third-order dephasing loss Γθ₂/Ω, which is θ₂/(2ω_pτ) without Purcell
    /// enhancement.
    pub l3: f64,
    /// The same term written as θ₂/(ω_pτ); kept for comparison, it is twice
    /// the value implied by the exponentiated low-order solution.
    pub l3_quoted: f64,
    /// |αθ₂|²; the expansion is only meaningful well below 1.
    pub expansion_parameter: f64,
}

impl PerturbativeEstimate {
    pub fn valid(&self) -> bool {
        self.expansion_parameter <= 0.1
    }
}

pub fn perturbative_oracle(
    p: &EmitterCavityParams,
    pulse: &PulseParams,
) -> Result<PerturbativeEstimate, CqedError> {
    p.validate()?;
    pulse.validate()?;
    if p.omega0 == 0.0 {
        return Err(invalid(
            "the perturbative expansion needs a nonzero atom–cavity offset",
        ));
    }
    let w0 = p.omega0;
    let half = p.gamma_cav / 2.0;
    let sigma = pulse.sigma_p;
    let prefactor = p.g * p.g * p.kappa / (2.0 * PI);
    // The pulse is centered on the cavity, ω₀ away from the atom.
    let weight = |w: f64| pulse.power_spectrum(w - w0) / ((w - w0).powi(2) + half * half);
    let span = 7.0 / sigma;

    let pv = if w0.abs() > span {
        // The pole at ω = 0 lies far outside the spectral window.
        quad::integrate(|w| [weight(w) / w], w0 - span, w0 + span, 1e-12).values[0]
    } else {
        let reach = w0.abs() + span;
        quad::integrate(
            |w| {
                [if w == 0.0 {
                    0.0
                } else {
                    (weight(w) - weight(-w)) / w
                }]
            },
            0.0,
            reach,
            1e-12,
        )
        .values[0]
    };
    let theta2 = prefactor * pv;
    let theta2_narrowband = p.g * p.g * p.kappa / (w0 * half * half);
    let l2 = p.g * p.g * p.kappa / 2.0 * pulse.power_spectrum(w0) / (w0 * w0 + half * half);
    let l3 = theta2 * total_decay(p) / stark_detuning(p);
    let l3_quoted = theta2 / (w0 * p.lifetime());
    Ok(PerturbativeEstimate {
        theta2,
        theta2_narrowband,
        l2,
        l3,
        l3_quoted,
        expansion_parameter: (pulse.alpha * theta2).powi(2),
    })
}

/// Order-of-magnitude saturation model used to seed solver sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SaturationEstimate {
    /// Upper bound on the distinguishability.
    pub d_m: f64,
    /// Ω/Γ at the suggested seed.
    pub y: f64,
    /// αΦ/(2d_m) at the suggested seed.
    pub x: f64,
    /// Distinguishability predicted at the seed.
    pub d: f64,
    pub damping_estimate: f64,
    pub seed_alpha: f64,
    pub seed_omega0: f64,
    pub feasible: bool,
}

/// Mean-square filtered pulse ∫|S|²dt/(2√π σ_p) in 1/s.
fn mean_square_pulse(p: &EmitterCavityParams, pulse: &PulseParams) -> f64 {
    let s = pulse.sigma_p;
    let lo = -PULSE_TRUNCATION_SIGMAS * s;
    let hi = PULSE_TRUNCATION_SIGMAS * s + 2.0 * (1.0 / RINGDOWN_FLOOR).ln() / p.gamma_cav;
    let energy = quad::integrate(
        |t| [cavity_filtered_pulse(pulse, p, t).powi(2)],
        lo,
        hi,
        1e-10,
    )
    .values[0];
    energy / (2.0 * PI.sqrt() * s)
}

/// Estimate d at given (α, Ω/Γ) from the saturation model.
pub fn saturation_distinguishability(phi: f64, d_m: f64, alpha: f64, y: f64) -> f64 {
    let x = alpha * phi / (2.0 * d_m);
    alpha * phi * y / (1.0 + y * y + x * x)
}

/// Damping estimate exp[−(d²/Φ)(1 + d²/2d_m²)].
pub fn saturation_damping(phi: f64, d_m: f64, d: f64) -> f64 {
    (-(d * d / phi) * (1.0 + d * d / (2.0 * d_m * d_m))).exp()
}

/// Seed (α, ω₀) reaching `target_d` with the smallest amplitude, taking the
/// optimal offset y = √(1+x²) at each x.
pub fn saturation_estimate(
    p: &EmitterCavityParams,
    pulse: &PulseParams,
    target_d: f64,
) -> SaturationEstimate {
    let phi = cooperativity(p);
    let big_gamma = total_decay(p);
    let s2 = mean_square_pulse(p, pulse);
    let d_m = (phi * phi * big_gamma * big_gamma / (8.0 * p.g * p.g * s2)).sqrt();
    let feasible = target_d < d_m;
    let ratio = (target_d / d_m).min(1.0 - 1e-9);
    let x = ratio / (1.0 - ratio * ratio).sqrt();
    let y = (1.0 + x * x).sqrt();
    let seed_alpha = 2.0 * d_m * x / phi;
    // Ω depends on ω₀ through the Purcell shift; a few fixed-point steps suffice.
    let omega_target = y * big_gamma;
    let mut w0 = omega_target;
    for _ in 0..50 {
        let next = omega_target / (1.0 + purcell_factor(w0, p) / (p.gamma_cav * p.tau_r));
        if (next - w0).abs() <= 1e-14 * w0.abs() {
            break;
        }
        w0 = next;
    }
    let d = saturation_distinguishability(phi, d_m, seed_alpha, y);
    SaturationEstimate {
        d_m,
        y,
        x,
        d,
        damping_estimate: saturation_damping(phi, d_m, d),
        seed_alpha,
        seed_omega0: w0,
        feasible,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Material {
    Silicon,
    ZincSelenide,
    TrappedIon,
}

impl Material {
    pub const ALL: [Material; 3] = [
        Material::Silicon,
        Material::ZincSelenide,
        Material::TrappedIon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Material::Silicon => "si",
            Material::ZincSelenide => "znse",
            Material::TrappedIon => "ion",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaterialPreset {
    pub material: Material,
    pub params: EmitterCavityParams,
    pub description: &'static str,
    /// Coupling and cavity decay come from an external experiment rather than
    /// the cavity formulas.
    pub externally_sourced: bool,
}

fn cubic_wavelength_volume(lambda_nm: f64, n_index: f64) -> f64 {
    (lambda_nm * 1e-9 / n_index).powi(3)
}

impl MaterialPreset {
    pub fn get(material: Material) -> Self {
        let two_pi = 2.0 * PI;
        match material {
            Material::Silicon => {
                let (lambda_nm, n_index, tau_r, tau) = (1078.0, 3.5, 2e-3, 300e-9);
                let gamma = two_pi * 280e6;
                Self {
                    material,
                    params: EmitterCavityParams {
                        g: two_pi * 20e6,
                        kappa: gamma,
                        gamma_cav: gamma,
                        omega0: 0.0,
                        tau_r,
                        tau_nr: 1.0 / (1.0 / tau - 1.0 / tau_r),
                        delta: 0.0,
                        q_factor: 1e6,
                        lambda_nm,
                        n_index,
                        v_mode: cubic_wavelength_volume(lambda_nm, n_index),
                    },
                    description: "donor-bound exciton in silicon, Auger-limited lifetime 300 ns",
                    externally_sourced: false,
                }
            }
            Material::ZincSelenide => {
                let (lambda_nm, n_index, tau_r, q_factor) = (440.0, 2.67, 500e-12, 1e3);
                let v_mode = cubic_wavelength_volume(lambda_nm, n_index);
                let gamma = cavity_decay_from_q(lambda_nm, q_factor);
                Self {
                    material,
                    params: EmitterCavityParams {
                        g: coupling_g(lambda_nm, n_index, v_mode, tau_r),
                        kappa: gamma,
                        gamma_cav: gamma,
                        omega0: 0.0,
                        tau_r,
                        tau_nr: f64::INFINITY,
                        delta: 0.0,
                        q_factor,
                        lambda_nm,
                        n_index,
                        v_mode,
                    },
                    description: "fluorine donor in ZnSe, radiatively limited",
                    externally_sourced: false,
                }
            }
            Material::TrappedIon => {
                let (lambda_nm, q_factor, tau) = (866.0, 3e8, 7.1e-9);
                let gamma = cavity_decay_from_q(lambda_nm, q_factor);
                let g = two_pi * 3.3e6;
                Self {
                    material,
                    params: EmitterCavityParams {
                        g,
                        kappa: gamma,
                        gamma_cav: gamma,
                        omega0: 0.0,
                        tau_r: tau,
                        tau_nr: f64::INFINITY,
                        delta: 0.0,
                        q_factor,
                        lambda_nm,
                        n_index: 1.0,
                        // Mode volume implied by the measured coupling.
                        v_mode: (coupling_g(lambda_nm, 1.0, 1.0, tau) / g).powi(2),
                    },
                    description: "calcium ion in a high-finesse optical cavity",
                    externally_sourced: true,
                }
            }
        }
    }
}

pub fn material_presets() -> Vec<MaterialPreset> {
    Material::ALL.into_iter().map(MaterialPreset::get).collect()
}

/// One point of a saturation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    /// αg′/ω₀.
    pub saturation_param: f64,
    pub alpha: f64,
    /// Atom–cavity offset (rad/s).
    pub omega0: f64,
    pub sigma_p: f64,
    pub d: f64,
    pub fidelity: f64,
    pub theta: f64,
    pub loss: f64,
    pub coherence_valid: bool,
}

/// (α, ω₀) with αω₀ = `product`·g′ and saturation parameter `s`.
pub fn sweep_point(params: &EmitterCavityParams, product: f64, s: f64) -> (f64, f64) {
    (
        (product * s).sqrt(),
        (product / s).sqrt() * params.g_prime(),
    )
}

/// Solve along constant-(αω₀) families: `products` are αω₀/g′ and each family
/// visits every saturation parameter in `saturation_grid`.
pub fn saturation_sweep(
    params: &EmitterCavityParams,
    products: &[f64],
    sigma_p_list: &[f64],
    saturation_grid: &[f64],
) -> Result<Vec<SweepRow>, CqedError> {
    if products.is_empty() || sigma_p_list.is_empty() || saturation_grid.is_empty() {
        return Err(invalid("sweep grids must be nonempty"));
    }
    let mut points = Vec::new();
    for &sigma_p in sigma_p_list {
        for &product in products {
            for &s in saturation_grid {
                points.push((sigma_p, product, s));
            }
        }
    }
    points
        .into_par_iter()
        .map(|(sigma_p, product, s)| {
            let (alpha, omega0) = sweep_point(params, product, s);
            let p = params.with_detuning(omega0);
            let traj = solve_bloch(&p, &PulseParams { alpha, sigma_p })?;
            let r = interaction_result(&traj)?;
            Ok(SweepRow {
                saturation_param: s,
                alpha,
                omega0,
                sigma_p,
                d: r.d,
                fidelity: r.fidelity,
                theta: r.theta,
                loss: r.loss,
                coherence_valid: r.coherence_valid,
            })
        })
        .collect()
}

/// Point on a constant-(αω₀) family whose distinguishability equals
/// `target_d`, on the rising side of the saturation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TunedPoint {
    pub saturation_param: f64,
    pub alpha: f64,
    pub omega0: f64,
    pub result: InteractionResult,
}

/// Find the saturation parameter giving `target_d` by scanning upward from
/// `s_start` in factors of two, then bisecting in log(s).
pub fn tune_to_distinguishability(
    params: &EmitterCavityParams,
    sigma_p: f64,
    product: f64,
    target_d: f64,
    s_start: f64,
) -> Result<Option<TunedPoint>, CqedError> {
    let eval = |s: f64| -> Result<TunedPoint, CqedError> {
        let (alpha, omega0) = sweep_point(params, product, s);
        let traj = solve_bloch(
            &params.with_detuning(omega0),
            &PulseParams { alpha, sigma_p },
        )?;
        Ok(TunedPoint {
            saturation_param: s,
            alpha,
            omega0,
            result: interaction_result(&traj)?,
        })
    };
    let mut lo = eval(s_start)?;
    if lo.result.d >= target_d {
        return Ok(Some(lo));
    }
    let mut hi = None;
    for _ in 0..30 {
        let next = eval(lo.saturation_param * 2.0)?;
        if next.result.d >= target_d {
            hi = Some(next);
            break;
        }
        if next.result.d < lo.result.d {
            // Past the peak without reaching the target.
            return Ok(None);
        }
        lo = next;
    }
    let Some(mut hi) = hi else { return Ok(None) };
    while hi.saturation_param / lo.saturation_param > 1.0 + 1e-6
        && (hi.result.d - target_d) > 1e-6 * target_d
    {
        let mid = eval((lo.saturation_param * hi.saturation_param).sqrt())?;
        if mid.result.d >= target_d {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silicon() -> EmitterCavityParams {
        MaterialPreset::get(Material::Silicon).params
    }

    #[test]
    fn purcell_lorentzian() {
        let p = silicon();
        let f0 = purcell_factor(0.0, &p);
        assert!((f0 - 4.0 * p.tau_r * p.g * p.g / p.gamma_cav).abs() < 1e-9 * f0);
        assert!((purcell_factor(p.gamma_cav / 2.0, &p) - f0 / 2.0).abs() < 1e-9 * f0);
    }

    #[test]
    fn free_space_decay() {
        let mut p = silicon();
        p.g = 1e-30;
        p.tau_nr = f64::INFINITY;
        assert!((2.0 * total_decay(&p) - 1.0 / p.tau_r).abs() < 1e-12 / p.tau_r);
        p.omega0 = 1e9;
        assert!((stark_detuning(&p) - 1e9).abs() < 1e-3);
    }

    #[test]
    fn preset_cooperativities() {
        let si = cooperativity(&silicon());
        assert!((si - 11.0).abs() < 0.5, "{si}");
        let ion = cooperativity(&MaterialPreset::get(Material::TrappedIon).params);
        assert!((ion - 1.7).abs() < 0.05, "{ion}");
        let ion_p = MaterialPreset::get(Material::TrappedIon).params;
        let g = coupling_g(ion_p.lambda_nm, ion_p.n_index, ion_p.v_mode, ion_p.tau_r);
        assert!((g / ion_p.g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn filtered_pulse_adiabatic_limit() {
        let p = silicon();
        let pulse = PulseParams {
            alpha: 1.0,
            sigma_p: 300e-9,
        };
        for t in [-600e-9, 0.0, 450e-9] {
            let s = cavity_filtered_pulse(&pulse, &p, t);
            let adiabatic = 2.0 * p.kappa.sqrt() / p.gamma_cav * pulse.envelope(t);
            assert!((s / adiabatic - 1.0).abs() < 2.0 / (p.gamma_cav * pulse.sigma_p));
        }
    }

    #[test]
    fn decoupled_atom_is_untouched() {
        let mut p = silicon().with_detuning(1e9);
        p.g = 1e-9;
        let pulse = PulseParams {
            alpha: 3.0,
            sigma_p: 20e-9,
        };
        let r = interaction_result(&solve_bloch(&p, &pulse).unwrap()).unwrap();
        assert!(r.theta.abs() < 1e-12 && r.loss.abs() < 1e-12);
        assert!((r.fidelity - 1.0).abs() < 1e-12);
    }
}
