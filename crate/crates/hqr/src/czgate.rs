//! Loss model of the measurement-free C-Z gate.
//!
//! A coherent bus of amplitude α₀ interacts with qubit 1, qubit 2, qubit 1
//! and qubit 2 again, with displacements `(i−1)α₁`, `−(i+1)α₂`, `−(i−1)α₃`
//! between interactions. Without loss the bus returns to its initial state
//! and the qubits pick up a geometric phase proportional to `Z₁Z₂`. Photons
//! lost along the way carry which-path information, which shows up as a
//! Schur-product (element-wise) map on the two-qubit density matrix in the
//! computational basis.
//!
//! The deterministic part of that map (global phase, single-qubit Z
//! rotations and the intended `Z₁Z₂` phase) is separated from the
//! distortion by a least-squares fit of `χ(a) − χ(b)` to the unwrapped
//! element phases. The fit is the row mean, see [`distortion_matrix`].

use crate::densmat::{gates, CMatrix, DensError, DensityMatrix, KrausSet, C64};
use nalgebra::DVector;
use std::f64::consts::{FRAC_PI_4, PI};
use thiserror::Error;

/// Basis states in computational order with their `(Z₁, Z₂)` eigenvalues.
pub const BASIS: [(f64, f64); 4] = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

const EIGEN_CLAMP: f64 = -1e-9;
const NEGLIGIBLE_WEIGHT: f64 = 1e-15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CzError {
    #[error("transmission {0} outside (0, 1]")]
    Transmission(f64),
    #[error("transmission {0} too low for a usable gate (need T ≥ 0.05)")]
    NoTransmission(f64),
    #[error("distortion matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("distortion matrix must be Hermitian with unit diagonal (deviation {0:e})")]
    NotDistortion(f64),
    #[error("theta must be nonzero to meet the gate condition")]
    ZeroTheta,
    #[error(transparent)]
    State(#[from] DensError),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CZParams {
    pub alpha: [C64; 4],
    pub theta: [f64; 4],
    pub transmission: [f64; 4],
}

impl CZParams {
    pub fn new(alpha: [C64; 4], theta: [f64; 4], transmission: [f64; 4]) -> Result<Self, CzError> {
        for t in transmission {
            if !(t > 0.0 && t <= 1.0) {
                return Err(CzError::Transmission(t));
            }
        }
        Ok(Self {
            alpha,
            theta,
            transmission,
        })
    }

    /// Equal amplitudes, angles and transmissions.
    pub fn semi_ideal(alpha: f64, theta: f64, transmission: f64) -> Result<Self, CzError> {
        Self::new([C64::from(alpha); 4], [theta; 4], [transmission; 4])
    }

    /// Semi-ideal gate with |α| chosen so that `T(1+T)|αθ|² = π`.
    pub fn semi_ideal_gate(theta: f64, transmission: f64) -> Result<Self, CzError> {
        if theta == 0.0 {
            return Err(CzError::ZeroTheta);
        }
        let alpha = gate_condition(transmission)?.sqrt() / theta.abs();
        Self::semi_ideal(alpha, theta, transmission)
    }

    pub fn is_semi_ideal(&self) -> bool {
        self.alpha.iter().all(|a| *a == self.alpha[0])
            && self.theta.iter().all(|t| *t == self.theta[0])
            && self.transmission.iter().all(|t| *t == self.transmission[0])
    }
}

/// `|αθ|²` required for a C-Z at transmission `T`.
pub fn gate_condition(t: f64) -> Result<f64, CzError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(CzError::Transmission(t));
    }
    if t < 0.05 {
        return Err(CzError::NoTransmission(t));
    }
    Ok(PI / (t * (1.0 + t)))
}

/// Bus amplitudes after each of the four interactions, in units where the
/// accumulated transmission has been factored out.
pub fn beta_sequence(p: &CZParams, z1: f64, z2: f64) -> [C64; 4] {
    let i = C64::i();
    let one = C64::from(1.0);
    let kick = |z: f64, theta: f64| C64::from_polar(1.0, z * theta / 2.0);
    let b1 = p.alpha[0] * kick(z1, p.theta[0]);
    let b2 = kick(z2, p.theta[1]) * (b1 + (i - one) * p.alpha[1]);
    let b3 = kick(z1, p.theta[2]) * (b2 - (i + one) * p.alpha[2]);
    let b4 = kick(z2, p.theta[3]) * (b3 - (i - one) * p.alpha[3]);
    [b1, b2, b3, b4]
}

/// Geometric phase collected by the displacements.
pub fn berry_phase(p: &CZParams, z1: f64, z2: f64) -> f64 {
    let [b1, b2, b3, _] = beta_sequence(p, z1, z2);
    let [t1, t2, t3, _] = p.transmission;
    let i = C64::i();
    let one = C64::from(1.0);
    ((i - one) * t1 * b1.conj() * p.alpha[1]
        - (i + one) * t1 * t2 * b2.conj() * p.alpha[2]
        - (i - one) * t1 * t2 * t3 * b3.conj() * p.alpha[3])
        .im
}

/// Decomposition of a diagonal phase `φ(Z₁, Z₂)` as
/// `c + z1·Z₁ + z2·Z₂ + zz·Z₁Z₂`.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct PhaseCoefficients {
    pub constant: f64,
    pub z1: f64,
    pub z2: f64,
    pub zz: f64,
}

impl PhaseCoefficients {
    pub fn from_values(phi: [f64; 4]) -> Self {
        let proj = |f: fn(f64, f64) -> f64| {
            BASIS
                .iter()
                .zip(phi)
                .map(|(&(z1, z2), v)| f(z1, z2) * v)
                .sum::<f64>()
                / 4.0
        };
        Self {
            constant: proj(|_, _| 1.0),
            z1: proj(|z1, _| z1),
            z2: proj(|_, z2| z2),
            zz: proj(|z1, z2| z1 * z2),
        }
    }
}

pub fn berry_coefficients(p: &CZParams) -> PhaseCoefficients {
    PhaseCoefficients::from_values(BASIS.map(|(z1, z2)| berry_phase(p, z1, z2)))
}

/// The full loss map before any phase separation: element `(a, b)` is
/// `exp(log_magnitude + i·phase)`, with the phase left unwrapped so the
/// large single-qubit rotations survive the fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    pub log_magnitude: [[f64; 4]; 4],
    pub phase: [[f64; 4]; 4],
}

/// Evaluate the product of the four per-interaction loss factors, with the
/// bus discarded after the last one, together with the Berry phase.
pub fn loss_map(p: &CZParams) -> LossMap {
    let betas = BASIS.map(|(z1, z2)| beta_sequence(p, z1, z2));
    let berry = BASIS.map(|(z1, z2)| berry_phase(p, z1, z2));
    let [t1, t2, t3, _] = p.transmission;
    // The final "loss" is the whole bus: T₄ = 0.
    let kept = [t1, t2, t3, 0.0];
    let mut weight = [0.0; 4];
    let mut through = 1.0;
    for n in 0..4 {
        weight[n] = (1.0 - kept[n]) * through;
        through *= kept[n];
    }
    let mut log_magnitude = [[0.0; 4]; 4];
    let mut phase = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let (mut lm, mut ph) = (0.0, berry[a] - berry[b]);
            for n in 0..4 {
                let (x, y) = (betas[a][n], betas[b][n]);
                lm -= weight[n] * (x - y).norm_sqr() / 2.0;
                ph -= weight[n] * (x.conj() * y).im;
            }
            log_magnitude[a][b] = lm;
            phase[a][b] = ph;
        }
    }
    LossMap {
        log_magnitude,
        phase,
    }
}

/// Distortion left after removing the deterministic diagonal unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionMatrix {
    entries: CMatrix,
    /// Diagonal phases `χ(a)` that were divided out: the map is
    /// `e^{iχ} D(ρ) e^{−iχ}`.
    pub deterministic: PhaseCoefficients,
}

impl DistortionMatrix {
    /// Wrap a Hermitian, unit-diagonal 4×4 matrix.
    pub fn from_matrix(entries: CMatrix) -> Result<Self, CzError> {
        if entries.nrows() != 4 || entries.ncols() != 4 {
            return Err(CzError::NotDistortion(f64::INFINITY));
        }
        let mut dev = crate::densmat::hermiticity_error(&entries);
        for k in 0..4 {
            dev = dev.max((entries[(k, k)] - C64::from(1.0)).norm());
        }
        if dev > 1e-12 {
            return Err(CzError::NotDistortion(dev));
        }
        Ok(Self {
            entries,
            deterministic: PhaseCoefficients::default(),
        })
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    /// Element `(a, b)` indexed by `(Z₁, Z₂)` signs, e.g. `(+,+)` vs `(−,−)`.
    pub fn element(&self, a: (i8, i8), b: (i8, i8)) -> C64 {
        let idx = |(z1, z2): (i8, i8)| usize::from(z1 < 0) * 2 + usize::from(z2 < 0);
        self.entries[(idx(a), idx(b))]
    }
}

/// Separate the loss map into a deterministic diagonal unitary and a
/// distortion with no systematic phase.
///
/// The deterministic phases are chosen to minimize
/// `Σ_ab |Ψ_ab − χ_a + χ_b|²`, whose solution is `χ_a = mean_b Ψ_ab`. In
/// the semi-ideal case this reproduces the closed-form split into
/// single-qubit rotations, the `Z₁Z₂` phase and the three distortion
/// elements.
pub fn distortion_matrix(p: &CZParams) -> DistortionMatrix {
    let map = loss_map(p);
    let chi: [f64; 4] = std::array::from_fn(|a| map.phase[a].iter().sum::<f64>() / 4.0);
    let entries = CMatrix::from_fn(4, 4, |a, b| {
        let residual = map.phase[a][b] - chi[a] + chi[b];
        C64::from_polar(map.log_magnitude[a][b].exp(), residual)
    });
    DistortionMatrix {
        entries,
        deterministic: PhaseCoefficients::from_values(chi),
    }
}

/// Noise model of one two-qubit gate, as Kraus operators on the computational
/// basis of (control, target) before the ideal gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateChannel {
    /// Diagonal distortion operators `D_m`, ordered by decreasing weight.
    pub kraus: KrausSet,
    pub lambdas: Vec<f64>,
    pub lambda0: f64,
    pub berry: PhaseCoefficients,
    /// Coherent over- or under-rotation of the `Z₁Z₂` phase relative to π/4.
    pub residual_zz: f64,
}

impl GateChannel {
    /// A perfect gate.
    pub fn ideal() -> Self {
        Self {
            kraus: KrausSet::identity(4),
            lambdas: vec![1.0, 0.0, 0.0, 0.0],
            lambda0: 1.0,
            berry: PhaseCoefficients::default(),
            residual_zz: 0.0,
        }
    }

    /// Semi-ideal gate meeting the gate condition.
    pub fn semi_ideal(theta: f64, transmission: f64) -> Result<Self, CzError> {
        let p = CZParams::semi_ideal_gate(theta, transmission)?;
        let d = distortion_matrix(&p);
        let mut ch = kraus_decompose(&d)?;
        ch.berry = berry_coefficients(&p);
        ch.residual_zz = d.deterministic.zz - FRAC_PI_4;
        Ok(ch)
    }

    pub fn from_params(p: &CZParams) -> Result<Self, CzError> {
        let d = distortion_matrix(p);
        let mut ch = kraus_decompose(&d)?;
        ch.berry = berry_coefficients(p);
        ch.residual_zz = d.deterministic.zz - FRAC_PI_4;
        Ok(ch)
    }

    pub fn is_ideal(&self) -> bool {
        self.lambda0 == 1.0 && self.residual_zz == 0.0
    }

    /// Kraus operators of the full noisy C-X with qubit 0 as control:
    /// `U_CX · H₂ · e^{iεZ₁Z₂} D_m · H₂`, where the Hadamard on the target
    /// turns every `Z₂` into `X₂`.
    pub fn cx_kraus(&self) -> KrausSet {
        let h2 = gates::kron(&gates::identity(2), &gates::hadamard());
        let eps = self.residual_zz;
        let residual = CMatrix::from_diagonal(&DVector::from_iterator(
            4,
            BASIS
                .iter()
                .map(|&(z1, z2)| C64::from_polar(1.0, eps * z1 * z2)),
        ));
        let cx = gates::cnot();
        let ops = self
            .kraus
            .operators()
            .iter()
            .map(|d| &cx * &h2 * &residual * d * &h2)
            .collect();
        KrausSet::new(ops).expect("conjugating a complete set keeps it complete")
    }
}

/// Kraus form of a distortion: `D_m = √λ_m Σ_P (H₂ v_m)_P P` with `P` over
/// `I, Z₂, Z₁, Z₁Z₂` and `(λ_m, v_m)` the eigenpairs of `𝒟/4`. This is the
/// diagonal matrix `2√λ_m diag(v_m)`.
pub fn kraus_decompose(d: &DistortionMatrix) -> Result<GateChannel, CzError> {
    let eig = (d.entries.clone() / C64::from(4.0)).symmetric_eigen();
    let mut pairs: Vec<(f64, DVector<C64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &l)| (l, eig.eigenvectors.column(k).into_owned()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let h = hadamard2();
    let paulis = pauli_z_basis();
    let mut ops = Vec::with_capacity(4);
    let mut lambdas = Vec::with_capacity(4);
    for (lambda, v) in pairs {
        if lambda < EIGEN_CLAMP {
            return Err(CzError::NotPositive(lambda));
        }
        let lambda = lambda.max(0.0);
        lambdas.push(lambda);
        // Operators this small change nothing but would bloat every
        // downstream channel application.
        if lambda < NEGLIGIBLE_WEIGHT {
            continue;
        }
        let coeffs = &h * &v;
        let op = paulis
            .iter()
            .zip(coeffs.iter())
            .fold(CMatrix::zeros(4, 4), |acc, (p, a)| acc + p * *a)
            * C64::from(lambda.sqrt());
        ops.push(op);
    }
    let lambda0 = lambdas[0];
    Ok(GateChannel {
        kraus: KrausSet::new(ops)?,
        lambdas,
        lambda0,
        berry: PhaseCoefficients::default(),
        residual_zz: 0.0,
    })
}

/// Normalized two-qubit Hadamard, rows and columns in computational order.
fn hadamard2() -> CMatrix {
    gates::kron(&gates::hadamard(), &gates::hadamard())
}

/// `I, Z₂, Z₁, Z₁Z₂` on two qubits, matching the rows of `H₂`.
fn pauli_z_basis() -> [CMatrix; 4] {
    let z = gates::pauli_z();
    let i = gates::identity(2);
    [
        gates::kron(&i, &i),
        gates::kron(&i, &z),
        gates::kron(&z, &i),
        gates::kron(&z, &z),
    ]
}

/// Apply a distortion by definition: element-wise product with `𝒟`.
pub fn apply_distortion(
    rho: &DensityMatrix,
    d: &DistortionMatrix,
) -> Result<DensityMatrix, CzError> {
    if rho.n_qubits() != 2 {
        return Err(CzError::State(DensError::DimensionMismatch {
            expected: 4,
            found: rho.dim(),
        }));
    }
    Ok(DensityMatrix::from_computed(
        rho.matrix().component_mul(d.entries()),
    ))
}

/// Noisy C-X on `(control, target)` of a 2- or 4-qubit state.
pub fn noisy_cx(
    rho: &DensityMatrix,
    ch: &GateChannel,
    control: usize,
    target: usize,
) -> Result<DensityMatrix, CzError> {
    noisy_cx_with(rho, &ch.cx_kraus(), control, target)
}

/// As [`noisy_cx`] with the C-X Kraus set already built.
pub fn noisy_cx_with(
    rho: &DensityMatrix,
    cx_kraus: &KrausSet,
    control: usize,
    target: usize,
) -> Result<DensityMatrix, CzError> {
    Ok(rho.apply_kraus_on(cx_kraus, &[control, target])?)
}

/// Noisy C-X as a single embedded Kraus set on an `n`-qubit register.
pub fn embedded_cx(
    ch: &GateChannel,
    control: usize,
    target: usize,
    n: usize,
) -> Result<KrausSet, CzError> {
    Ok(ch.cx_kraus().embed(&[control, target], n)?)
}

/// One point of the gate-error map.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CzErrorRow {
    pub loss: f64,
    pub theta: f64,
    pub one_minus_lambda0: f64,
}

/// Gate infidelity `1 − λ₀` of the semi-ideal gate over loss and angle.
pub fn cz_error_curve(theta_list: &[f64], loss_grid: &[f64]) -> Result<Vec<CzErrorRow>, CzError> {
    let mut rows = Vec::with_capacity(theta_list.len() * loss_grid.len());
    for &theta in theta_list {
        for &loss in loss_grid {
            let ch = GateChannel::semi_ideal(theta, 1.0 - loss)?;
            rows.push(CzErrorRow {
                loss,
                theta,
                one_minus_lambda0: (1.0 - ch.lambda0).max(0.0),
            });
        }
    }
    Ok(rows)
}

/// The approximate largest eigenvalue quoted for the regime `θ² ≪ √T`.
/// Kept for comparison only; it does not reach 1 as `T → 1`.
pub fn lambda0_quoted(t: f64) -> f64 {
    (1.0 + (-PI * t.sqrt() / 4.0).exp()).powi(2) / 4.0
}
