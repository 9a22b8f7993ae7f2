//! Entanglement distribution with a bright coherent pulse and weak
//! homodyne post-selection.
//!
//! A probe pulse of amplitude `α` reflects off cavity 1, travels down a
//! fiber with transmission `T`, picks up a small tuning displacement and
//! reflects off cavity 2. Each reflection imprints a qubit-dependent phase
//! `±θ/2`. A `p`-quadrature homodyne measurement then accepts outcomes with
//! `|p| ≤ p_c`, which projects the two qubits close to `|Ψ⁺⟩`.
//!
//! Homodyne units follow `p = (a − a†)/2i`, so `[x, p] = i/2` and a coherent
//! state gives a Gaussian of variance 1/4 in `p`.

use crate::densmat::{gates, Bell, CMatrix, DensityMatrix, KrausSet, C64};
use crate::quad;
use libm::erf;
use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};
use thiserror::Error;

/// Upper end of the distinguishability search in [`optimize_d`].
pub const D_UPPER: f64 = 10.0;

/// Attenuation length of telecom fiber in km.
pub const ELL0_KM: f64 = 25.0;

/// Angles above this leave the small-angle regime the closed forms assume.
pub const SMALL_ANGLE_LIMIT: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntangleError {
    #[error("transmission {0} outside (0, 1]")]
    Transmission(f64),
    #[error("post-selection window {0} must be non-negative")]
    Window(f64),
    #[error("amplitude {0} must be non-negative")]
    Amplitude(f64),
    #[error("θ₂ = {0} makes the tuning displacement singular")]
    SingularTuning(f64),
    #[error("quadrature stalled at relative tolerance {achieved:e}")]
    Quadrature { achieved: f64 },
    #[error("post-selection window accepts no events")]
    EmptyWindow,
}

/// Where the homodyne detector sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    /// Detector at the far station; the pulse crosses the full fiber.
    #[default]
    EndDetection,
    /// Both stations send toward a detector half-way between them. Each
    /// pulse crosses half the fiber, but both suffer loss, which doubles γ₁.
    MidPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkParams {
    pub alpha: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Transmission seen by one pulse, already halved-length for
    /// [`Geometry::MidPoint`].
    pub transmission: f64,
    pub pc: f64,
    pub geometry: Geometry,
}

impl LinkParams {
    pub fn new(
        alpha: f64,
        theta1: f64,
        theta2: f64,
        transmission: f64,
        pc: f64,
    ) -> Result<Self, EntangleError> {
        let p = Self {
            alpha,
            theta1,
            theta2,
            transmission,
            pc,
            geometry: Geometry::EndDetection,
        };
        p.validate()?;
        Ok(p)
    }

    /// Link across `ell_km` of fiber with attenuation length `ell0_km`.
    pub fn over_fiber(
        alpha: f64,
        theta1: f64,
        theta2: f64,
        ell_km: f64,
        ell0_km: f64,
        pc: f64,
        geometry: Geometry,
    ) -> Result<Self, EntangleError> {
        let p = Self {
            alpha,
            theta1,
            theta2,
            transmission: fiber_transmission(ell_km / ell0_km, geometry),
            pc,
            geometry,
        };
        p.validate()?;
        Ok(p)
    }

    /// Link across `ell_km` of fiber with equal cavity angles `theta` and the
    /// coherent amplitude chosen so that `d` maximizes the fidelity for `pc`.
    pub fn optimized_over_fiber(
        ell_km: f64,
        ell0_km: f64,
        pc: f64,
        theta: f64,
        geometry: Geometry,
    ) -> Result<Self, EntangleError> {
        let t = fiber_transmission(ell_km / ell0_km, geometry);
        let (d, _) = optimize_d_with(t, pc, geometry.loss_factor());
        let alpha = d / theta.sin();
        Self::over_fiber(alpha, theta, theta, ell_km, ell0_km, pc, geometry)
    }

    pub fn validate(&self) -> Result<(), EntangleError> {
        if !(self.transmission > 0.0 && self.transmission <= 1.0) {
            return Err(EntangleError::Transmission(self.transmission));
        }
        if !(self.pc >= 0.0) {
            return Err(EntangleError::Window(self.pc));
        }
        if !(self.alpha >= 0.0) {
            return Err(EntangleError::Amplitude(self.alpha));
        }
        Ok(())
    }

    /// True when an angle leaves the small-angle regime.
    pub fn large_angle(&self) -> bool {
        self.theta1.abs() > SMALL_ANGLE_LIMIT || self.theta2.abs() > SMALL_ANGLE_LIMIT
    }

    /// Multiplier on γ₁ from the detection geometry.
    pub fn loss_factor(&self) -> f64 {
        self.geometry.loss_factor()
    }
}

impl Geometry {
    pub fn loss_factor(self) -> f64 {
        match self {
            Geometry::EndDetection => 1.0,
            Geometry::MidPoint => 2.0,
        }
    }
}

/// Single-pulse transmission for a link of length `ell_over_ell0`.
pub fn fiber_transmission(ell_over_ell0: f64, geometry: Geometry) -> f64 {
    match geometry {
        Geometry::EndDetection => (-ell_over_ell0).exp(),
        Geometry::MidPoint => (-ell_over_ell0 / 2.0).exp(),
    }
}

/// Quantities derived from a link that the post-selection does not see.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LinkDerived {
    pub gamma1: f64,
    pub xi1: f64,
    pub beta_t: f64,
    pub d: f64,
    pub phi_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostSelectionResult {
    pub ps: f64,
    pub fidelity: f64,
    pub rho12: DensityMatrix,
    /// Relative change at the last quadrature refinement.
    pub quadrature_tol: f64,
}

/// Dephasing exponent γ₁ and deterministic rotation ξ₁ of qubit 1 caused by
/// photons lost between the two cavities.
pub fn external_loss_params(p: &LinkParams) -> (f64, f64) {
    let a2 = p.alpha * p.alpha;
    let lost = 1.0 - p.transmission;
    let gamma1 = a2 * lost * (1.0 - p.theta1.cos()) * p.loss_factor();
    let xi1 = a2 * lost * p.theta1.sin();
    (gamma1, xi1)
}

/// Dephasing with probability λ₋ = (1 − e^{−γ₁})/2 after a Z rotation by ξ₁.
pub fn q1_channel(gamma1: f64, xi1: f64) -> KrausSet {
    let keep = (1.0 + (-gamma1).exp()) / 2.0;
    let flip = 1.0 - keep;
    let rot = gates::z_rotation(xi1);
    KrausSet::new(vec![
        &rot * C64::from(keep.sqrt()),
        gates::pauli_z() * &rot * C64::from(flip.sqrt()),
    ])
    .expect("dephasing channel is complete by construction")
}

/// Displacement that equalizes unequal cavity angles.
pub fn tuning_displacement(p: &LinkParams) -> Result<f64, EntangleError> {
    let s2 = (p.theta2 / 2.0).sin();
    if s2.abs() < 1e-12 {
        return Err(EntangleError::SingularTuning(p.theta2));
    }
    Ok(p.transmission.sqrt() * p.alpha * ((p.theta1 - p.theta2) / 2.0).sin() / s2)
}

/// Z-rotation angle on qubit 1 left behind by the tuning displacement.
pub fn tuning_rotation(p: &LinkParams) -> Result<f64, EntangleError> {
    let s2 = (p.theta2 / 2.0).sin();
    if s2.abs() < 1e-12 {
        return Err(EntangleError::SingularTuning(p.theta2));
    }
    let a2 = p.transmission * p.alpha * p.alpha;
    Ok(-a2 * ((p.theta1 - p.theta2) / 2.0).sin() * (p.theta1 / 2.0).sin() / s2)
}

/// Homodyne separation of the two branches that carry which-path information.
pub fn distinguishability(p: &LinkParams) -> f64 {
    (2.0 * p.alpha * (p.theta1 / 2.0).sin() * (p.theta2 / 2.0).cos()).abs()
}

pub fn derived(p: &LinkParams) -> Result<LinkDerived, EntangleError> {
    let (gamma1, xi1) = external_loss_params(p);
    Ok(LinkDerived {
        gamma1,
        xi1,
        beta_t: tuning_displacement(p)?,
        d: distinguishability(p),
        phi_t: tuning_rotation(p)?,
    })
}

fn window_bracket(d: f64, t: f64, pc: f64) -> f64 {
    let shift = t.sqrt() * d;
    2.0 * erf(SQRT_2 * pc) + erf(SQRT_2 * (pc + shift)) + erf(SQRT_2 * (pc - shift))
}

/// Probability that the homodyne outcome lands in `[−p_c, p_c]`.
pub fn success_probability(d: f64, t: f64, pc: f64) -> f64 {
    (window_bracket(d, t, pc) / 4.0).clamp(0.0, 1.0)
}

/// |Ψ⁺⟩ fidelity of the post-selected pair.
///
/// At `p_c = 0` numerator and denominator both vanish; the returned value is
/// their ratio of slopes, `(1 + e^{−γ₁}) / (2 + 2e^{−2Td²})`.
pub fn entanglement_fidelity(d: f64, t: f64, pc: f64, gamma1: f64) -> f64 {
    let coherence = 1.0 + (-gamma1).exp();
    if pc == 0.0 {
        return (coherence / (2.0 + 2.0 * (-2.0 * t * d * d).exp())).clamp(0.0, 1.0);
    }
    (coherence * erf(SQRT_2 * pc) / window_bracket(d, t, pc)).clamp(0.0, 1.0)
}

/// Knobs for the numeric post-selection integral.
#[derive(Debug, Clone, Copy)]
pub struct PostSelectOptions {
    pub rel_tol: f64,
    /// Undo the large deterministic rotations ξ₁ and φ_T before projecting.
    pub correct_rotations: bool,
}

impl Default for PostSelectOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            correct_rotations: true,
        }
    }
}

/// Shift `I` and phase slope `R` of the homodyne branch for basis state `k`.
fn branch(p: &LinkParams, k: usize) -> (f64, f64) {
    let z1 = if k & 2 == 0 { 1.0 } else { -1.0 };
    let z2 = if k & 1 == 0 { 1.0 } else { -1.0 };
    let amp = p.transmission.sqrt() * p.alpha * (p.theta1 / 2.0).sin();
    let (s2, c2) = (p.theta2 / 2.0).sin_cos();
    let r = if s2 == 0.0 {
        // cot² diverges but only the difference between branches matters and
        // R is common to all branches at θ₂ = 0.
        0.0
    } else {
        amp * s2 * ((c2 / s2).powi(2) - z1 * z2)
    };
    let i = amp * c2 * (z1 + z2);
    (i, r)
}

/// Two-qubit state kept by the homodyne window, by numeric integration of
/// `G(p) U(p) [Q₁(ρ₁) ⊗ ρ₂] U†(p) G(p)` over `|p| ≤ p_c`.
pub fn post_selected_state(p: &LinkParams) -> Result<PostSelectionResult, EntangleError> {
    post_selected_state_with(p, PostSelectOptions::default())
}

pub fn post_selected_state_with(
    p: &LinkParams,
    opts: PostSelectOptions,
) -> Result<PostSelectionResult, EntangleError> {
    p.validate()?;
    let (gamma1, xi1) = external_loss_params(p);
    let plus = {
        let h = C64::from(0.5);
        DensityMatrix::new(CMatrix::from_element(2, 2, h)).expect("|+⟩ is a valid state")
    };
    let (xi, phi_t) = if opts.correct_rotations {
        (0.0, 0.0)
    } else {
        let phi = if p.theta2 == 0.0 {
            0.0
        } else {
            tuning_rotation(p)?
        };
        (xi1, phi)
    };
    let rho1 = plus
        .apply_kraus(&q1_channel(gamma1, xi))
        .and_then(|r| r.apply_unitary(&gates::z_rotation(phi_t)))
        .expect("single-qubit channel dimensions match");
    let rho0 = rho1.tensor(&plus).expect("two qubits fit");
    let branches: Vec<(f64, f64)> = (0..4).map(|k| branch(p, k)).collect();
    let norm = (2.0 / PI).sqrt();

    // Integrate the upper triangle (real and imaginary parts) plus diagonal.
    let integrand = |x: f64| {
        let mut out = [0.0; 32];
        for a in 0..4 {
            let (ia, ra) = branches[a];
            for b in a..4 {
                let (ib, rb) = branches[b];
                let g = norm * (-(x + ia).powi(2) - (x + ib).powi(2)).exp();
                let phase = -(2.0 * x + ia) * ra + (2.0 * x + ib) * rb;
                let w = C64::from_polar(g, phase);
                let idx = 2 * (4 * a + b);
                out[idx] = w.re;
                out[idx + 1] = w.im;
            }
        }
        out
    };
    let integral = quad::integrate(integrand, -p.pc, p.pc, opts.rel_tol);
    if !integral.converged {
        return Err(EntangleError::Quadrature {
            achieved: integral.achieved_tol,
        });
    }
    let v = integral.values;
    let mut m = CMatrix::zeros(4, 4);
    for a in 0..4 {
        for b in a..4 {
            let idx = 2 * (4 * a + b);
            let w = C64::new(v[idx], v[idx + 1]);
            m[(a, b)] = w * rho0.matrix()[(a, b)];
            m[(b, a)] = m[(a, b)].conj();
        }
    }
    let ps = m.trace().re;
    if ps <= 0.0 {
        return Err(EntangleError::EmptyWindow);
    }
    let rho12 = DensityMatrix::new(m / C64::from(ps))
        .expect("post-selected state is a valid density matrix");
    Ok(PostSelectionResult {
        ps,
        fidelity: rho12.bell_weight(Bell::PsiPlus),
        rho12,
        quadrature_tol: integral.achieved_tol,
    })
}

/// Small-angle fidelity as a function of `d` only, with γ₁ tied to `d`.
pub fn small_angle_fidelity(d: f64, t: f64, pc: f64, loss_factor: f64) -> f64 {
    let gamma1 = loss_factor * d * d * (1.0 - t) / 2.0;
    entanglement_fidelity(d, t, pc, gamma1)
}

/// Distinguishability that maximizes the post-selected fidelity.
///
/// γ₁ follows `d` through its small-angle form `d²(1−T)/2`. The fidelity is
/// not unimodal in `d` (it falls back to 1/2 for large `d` but can ripple
/// near the optimum), so a coarse scan brackets the peak before a golden
/// section search polishes it.
pub fn optimize_d(t: f64, pc: f64) -> (f64, f64) {
    optimize_d_with(t, pc, 1.0)
}

pub fn optimize_d_with(t: f64, pc: f64, loss_factor: f64) -> (f64, f64) {
    const SCAN: usize = 2000;
    let f = |d: f64| small_angle_fidelity(d, t, pc, loss_factor);
    let step = D_UPPER / SCAN as f64;
    let (best, _) = (1..=SCAN).map(|k| k as f64 * step).map(|d| (d, f(d))).fold(
        (step, f64::MIN),
        |acc, (d, v)| if v >= acc.1 { (d, v) } else { acc },
    );
    let (mut lo, mut hi) = ((best - step).max(1e-9), (best + step).min(D_UPPER));
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - golden * (hi - lo);
    let mut x2 = lo + golden * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-6 {
        if f1 <= f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + golden * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - golden * (hi - lo);
            f1 = f(x1);
        }
    }
    let d = 0.5 * (lo + hi);
    (d, f(d))
}

/// One row of a fidelity/success-probability trade-off curve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CurveRow {
    pub ell_over_ell0: f64,
    pub pc: f64,
    pub d: f64,
    pub ps: f64,
    pub fidelity: f64,
}

/// Optimized fidelity against success probability as the window widens.
pub fn fidelity_ps_curve(ell_over_ell0: f64, pc_grid: &[f64], geometry: Geometry) -> Vec<CurveRow> {
    let t = fiber_transmission(ell_over_ell0, geometry);
    pc_grid
        .iter()
        .map(|&pc| {
            let (d, fidelity) = optimize_d_with(t, pc, geometry.loss_factor());
            CurveRow {
                ell_over_ell0,
                pc,
                d,
                ps: success_probability(d, t, pc),
                fidelity,
            }
        })
        .collect()
}

/// Entanglement (in bits) that a single cavity interaction can create.
pub fn entanglement_entropy_bound(alpha: f64, theta1: f64) -> f64 {
    1.0 - (-4.0 * alpha * alpha * (theta1 / 2.0).sin().powi(2)).exp()
}

/// Density of the homodyne outcome `p` for the initial `|++⟩` state.
pub fn homodyne_density(d: f64, t: f64, p: f64) -> f64 {
    let shift = t.sqrt() * d;
    let g = |m: f64| FRAC_2_SQRT_PI * SQRT_2 / 2.0 * (-2.0 * (p - m).powi(2)).exp();
    (2.0 * g(0.0) + g(shift) + g(-shift)) / 4.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lossless_channel_has_no_loss_terms() {
        let p = LinkParams::new(10.0, 0.1, 0.1, 1.0, 0.5).unwrap();
        assert_eq!(external_loss_params(&p), (0.0, 0.0));
    }

    #[test]
    fn loss_terms_by_hand() {
        let p = LinkParams::new(10.0, 0.1, 0.1, 0.67, 0.5).unwrap();
        let (g, x) = external_loss_params(&p);
        // 100 · 0.33 · (1 − cos 0.1) and 100 · 0.33 · sin 0.1
        assert_abs_diff_eq!(g, 33.0 * 0.004_995_834_721_974_179, epsilon = 1e-12);
        assert_abs_diff_eq!(x, 33.0 * 0.099_833_416_646_828_15, epsilon = 1e-12);
    }

    #[test]
    fn small_angle_loss_matches_d() {
        let t = 0.8;
        let d: f64 = 1.5;
        for theta in [0.04f64, 0.01, 0.001] {
            let p = LinkParams::new(d / theta.sin(), theta, theta, t, 0.5).unwrap();
            let (g, _) = external_loss_params(&p);
            let small = d * d * (1.0 - t) / 2.0;
            assert!((g - small).abs() / small < 0.01);
        }
    }

    #[test]
    fn midpoint_doubles_gamma() {
        let end =
            LinkParams::over_fiber(50.0, 0.02, 0.02, 20.0, ELL0_KM, 0.5, Geometry::EndDetection)
                .unwrap();
        let mid = LinkParams::over_fiber(50.0, 0.02, 0.02, 40.0, ELL0_KM, 0.5, Geometry::MidPoint)
            .unwrap();
        assert_abs_diff_eq!(end.transmission, mid.transmission, epsilon = 1e-15);
        assert_abs_diff_eq!(
            external_loss_params(&mid).0,
            2.0 * external_loss_params(&end).0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn q1_channel_shrinks_coherence() {
        let plus = DensityMatrix::new(CMatrix::from_element(2, 2, C64::from(0.5))).unwrap();
        let out = plus.apply_kraus(&q1_channel(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(
            out.matrix()[(0, 1)].norm(),
            (-0.5f64).exp() / 2.0,
            epsilon = 1e-14
        );
        let dead = plus.apply_kraus(&q1_channel(80.0, 0.0)).unwrap();
        assert!(dead.matrix()[(0, 1)].norm() < 1e-15);
        assert_eq!(q1_channel(0.0, 0.0).operators().len(), 2);
    }

    #[test]
    fn tuning_displacement_cases() {
        let same = LinkParams::new(30.0, 0.02, 0.02, 0.7, 0.5).unwrap();
        assert_eq!(tuning_displacement(&same).unwrap(), 0.0);
        assert_eq!(tuning_rotation(&same).unwrap(), 0.0);
        let double = LinkParams::new(30.0, 0.002, 0.001, 0.7, 0.5).unwrap();
        let expect = 0.7f64.sqrt() * 30.0;
        assert!((tuning_displacement(&double).unwrap() - expect).abs() / expect < 1e-6);
        let flat = LinkParams::new(30.0, 0.02, 0.0, 0.7, 0.5).unwrap();
        assert!(tuning_displacement(&flat).is_err());
    }

    #[test]
    fn distinguishability_cases() {
        let p = LinkParams::new(100.0, 0.0, 0.1, 1.0, 0.5).unwrap();
        assert_eq!(distinguishability(&p), 0.0);
        let p = LinkParams::new(100.0, 0.016, 0.016, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(
            distinguishability(&p),
            100.0 * 0.016f64.sin(),
            epsilon = 1e-12
        );
        assert!((distinguishability(&p) - 1.6).abs() < 1e-3);
    }

    #[test]
    fn window_limits() {
        assert_eq!(success_probability(1.0, 0.8, 0.0), 0.0);
        assert_abs_diff_eq!(success_probability(1.0, 0.8, 50.0), 1.0, epsilon = 1e-15);
        let f = entanglement_fidelity(8.0, 1.0, 1e-3, 0.0);
        assert!(f > 0.999_999);
        // the p_c → 0 limit is continuous
        let near = entanglement_fidelity(1.0, 0.7, 1e-7, 0.2);
        let at = entanglement_fidelity(1.0, 0.7, 0.0, 0.2);
        assert_abs_diff_eq!(near, at, epsilon = 1e-9);
    }

    #[test]
    fn lossless_wide_separation_gives_bell_state() {
        let p = LinkParams::new(400.0, 0.02, 0.02, 1.0, 0.05).unwrap();
        let r = post_selected_state(&p).unwrap();
        assert!(r.fidelity > 0.9999);
    }

    #[test]
    fn closed_form_matches_integral() {
        let p = LinkParams::new(80.0, 0.02, 0.015, 0.7, 0.6).unwrap();
        let d = distinguishability(&p);
        let (g, _) = external_loss_params(&p);
        let r = post_selected_state(&p).unwrap();
        assert_abs_diff_eq!(
            r.fidelity,
            entanglement_fidelity(d, p.transmission, p.pc, g),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            r.ps,
            success_probability(d, p.transmission, p.pc),
            epsilon = 1e-9
        );
    }

    #[test]
    fn entropy_bound_cases() {
        assert_eq!(entanglement_entropy_bound(0.0, 1.0), 0.0);
        assert_eq!(entanglement_entropy_bound(5.0, 0.0), 0.0);
        assert_abs_diff_eq!(
            entanglement_entropy_bound(1.0, PI),
            1.0 - (-4.0f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn lossless_optimum_hits_the_cap() {
        let (d, f) = optimize_d(1.0, 0.5);
        assert!(d > D_UPPER - 1e-3);
        assert!(f > 0.999);
    }

    #[test]
    fn homodyne_density_integrates_to_window_probability() {
        let r = quad::integrate(|p| [homodyne_density(1.2, 0.8, p)], -0.4, 0.4, 1e-12);
        assert_abs_diff_eq!(
            r.values[0],
            success_probability(1.2, 0.8, 0.4),
            epsilon = 1e-12
        );
    }
}
