//! Dense density operators for up to four qubits, plus Kraus channels.
//!
//! Qubit 0 is the most significant bit of a basis index, so for two qubits
//! the computational basis is ordered `|00⟩, |01⟩, |10⟩, |11⟩` and
//! `a.tensor(&b)` puts `a` on the leading qubits. Every module in the crate
//! uses this convention.
//!
//! The largest state we ever carry is 16-dimensional (two Bell pairs during
//! purification or swapping), so everything is a plain dense matrix.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type Ket = DVector<C64>;

pub const MAX_QUBITS: usize = 4;

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = 1e-10;
const COMPLETENESS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DensError {
    #[error("state of {0} qubits exceeds the {MAX_QUBITS}-qubit cap")]
    DimensionOverflow(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("dimension {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace deviates from one by {0:e}")]
    BadTrace(f64),
    #[error("negative eigenvalue {0:e}")]
    NotPositive(f64),
    #[error("Kraus set is incomplete (deviation from identity {0:e})")]
    IncompleteKraus(f64),
    #[error("Kraus set is empty")]
    EmptyKraus,
    #[error("qubit index {index} out of range for {n} qubits")]
    QubitIndex { index: usize, n: usize },
    #[error("qubit index {0} listed twice")]
    DuplicateQubit(usize),
    #[error("ket norm is {0}, expected 1")]
    UnnormalizedKet(f64),
}

pub type Result<T> = std::result::Result<T, DensError>;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn qubits_for_dim(dim: usize) -> Result<usize> {
    if dim == 0 || !dim.is_power_of_two() {
        return Err(DensError::NotPowerOfTwo(dim));
    }
    Ok(dim.trailing_zeros() as usize)
}

fn check_indices(qubits: &[usize], n: usize) -> Result<()> {
    for (pos, &q) in qubits.iter().enumerate() {
        if q >= n {
            return Err(DensError::QubitIndex { index: q, n });
        }
        if qubits[..pos].contains(&q) {
            return Err(DensError::DuplicateQubit(q));
        }
    }
    Ok(())
}

/// Largest absolute deviation of `m` from its own adjoint.
pub fn hermiticity_error(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Bit of qubit `q` in basis index `idx` of an `n`-qubit register.
#[inline]
fn bit(idx: usize, q: usize, n: usize) -> usize {
    (idx >> (n - 1 - q)) & 1
}

/// Lift `op`, acting on the listed qubits, to the full `n`-qubit space.
///
/// The first listed qubit is the most significant bit of `op`'s own index,
/// so `embed(&cnot(), &[2, 0], 4)` is a C-X with control 2 and target 0.
pub fn embed(op: &CMatrix, qubits: &[usize], n: usize) -> Result<CMatrix> {
    check_indices(qubits, n)?;
    let k = qubits.len();
    if op.nrows() != 1 << k || op.ncols() != 1 << k {
        return Err(DensError::DimensionMismatch {
            expected: 1 << k,
            found: op.nrows(),
        });
    }
    let dim = 1 << n;
    let mask: usize = qubits.iter().map(|&q| 1 << (n - 1 - q)).sum();
    let sub = |idx: usize| {
        qubits
            .iter()
            .fold(0usize, |acc, &q| (acc << 1) | bit(idx, q, n))
    };
    let mut full = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            if i & !mask == j & !mask {
                full[(i, j)] = op[(sub(i), sub(j))];
            }
        }
    }
    Ok(full)
}

/// Standard single- and two-qubit gates in the shared basis convention.
pub mod gates {
    use super::{c, CMatrix, C64};

    pub fn identity(dim: usize) -> CMatrix {
        CMatrix::identity(dim, dim)
    }

    pub fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
    }

    pub fn pauli_y() -> CMatrix {
        let i = C64::i();
        CMatrix::from_row_slice(2, 2, &[c(0.0), -i, i, c(0.0)])
    }

    pub fn pauli_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
    }

    pub fn hadamard() -> CMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        CMatrix::from_row_slice(2, 2, &[c(h), c(h), c(h), c(-h)])
    }

    /// `exp(i φ Z / 2)`.
    pub fn z_rotation(phi: f64) -> CMatrix {
        let p = C64::from_polar(1.0, phi / 2.0);
        CMatrix::from_row_slice(2, 2, &[p, c(0.0), c(0.0), p.conj()])
    }

    /// C-X with qubit 0 as control.
    pub fn cnot() -> CMatrix {
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 0)] = c(1.0);
        m[(1, 1)] = c(1.0);
        m[(2, 3)] = c(1.0);
        m[(3, 2)] = c(1.0);
        m
    }

    pub fn cz() -> CMatrix {
        CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            c(1.0),
            c(1.0),
            c(1.0),
            c(-1.0),
        ]))
    }

    pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a.kronecker(b)
    }
}

/// The four Bell states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bell {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl Bell {
    pub const ALL: [Bell; 4] = [Bell::PhiPlus, Bell::PhiMinus, Bell::PsiPlus, Bell::PsiMinus];

    pub fn ket(self) -> Ket {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = match self {
            Bell::PhiPlus => [h, 0.0, 0.0, h],
            Bell::PhiMinus => [h, 0.0, 0.0, -h],
            Bell::PsiPlus => [0.0, h, h, 0.0],
            Bell::PsiMinus => [0.0, h, -h, 0.0],
        };
        Ket::from_iterator(4, v.iter().map(|&x| c(x)))
    }

    /// Single-qubit Pauli that maps this Bell state to |Ψ⁺⟩ when applied to
    /// qubit 1 (up to a global phase).
    pub fn correction_to_psi_plus(self) -> CMatrix {
        match self {
            Bell::PsiPlus => gates::identity(2),
            Bell::PsiMinus => gates::pauli_z(),
            Bell::PhiPlus => gates::pauli_x(),
            Bell::PhiMinus => gates::pauli_y(),
        }
    }
}

/// A valid density operator on 0 to 4 qubits.
///
/// Zero qubits is the trivial 1×1 state left after measuring every qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    matrix: CMatrix,
}

/// Outcome of a projective Z measurement on a subset of qubits.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub probability: f64,
    /// Renormalized state of the unmeasured qubits, `None` when the outcome
    /// has zero probability.
    pub state: Option<DensityMatrix>,
}

impl DensityMatrix {
    /// Validate and wrap a matrix: Hermitian, unit trace, positive.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let n_qubits = Self::check_shape(&matrix)?;
        let herm = hermiticity_error(&matrix);
        if herm > HERMITIAN_TOL {
            return Err(DensError::NotHermitian(herm));
        }
        let state = Self { n_qubits, matrix };
        let dev = (state.trace() - 1.0).abs();
        if dev > TRACE_TOL {
            return Err(DensError::BadTrace(dev));
        }
        let min = state.min_eigenvalue();
        if min < -POSITIVITY_TOL {
            return Err(DensError::NotPositive(min));
        }
        Ok(state)
    }

    fn check_shape(matrix: &CMatrix) -> Result<usize> {
        if matrix.nrows() != matrix.ncols() {
            return Err(DensError::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let n = qubits_for_dim(matrix.nrows())?;
        if n > MAX_QUBITS {
            return Err(DensError::DimensionOverflow(n));
        }
        Ok(n)
    }

    /// Wrap the result of a trace-preserving computation: re-symmetrize and
    /// renormalize so rounding drift cannot accumulate over long chains.
    pub(crate) fn from_computed(mut matrix: CMatrix) -> Self {
        let n_qubits = qubits_for_dim(matrix.nrows()).expect("computed state has a valid shape");
        let adj = matrix.adjoint();
        matrix = (matrix + adj) * c(0.5);
        let tr = matrix.trace().re;
        if tr > 0.0 {
            matrix /= c(tr);
        }
        Self { n_qubits, matrix }
    }

    pub fn from_ket(ket: &Ket) -> Result<Self> {
        let norm = ket.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(DensError::UnnormalizedKet(norm));
        }
        let n = qubits_for_dim(ket.len())?;
        if n > MAX_QUBITS {
            return Err(DensError::DimensionOverflow(n));
        }
        Ok(Self::from_computed(ket * ket.adjoint()))
    }

    pub fn bell(b: Bell) -> Self {
        Self::from_ket(&b.ket()).expect("Bell kets are normalized")
    }

    pub fn maximally_mixed(n_qubits: usize) -> Result<Self> {
        if n_qubits > MAX_QUBITS {
            return Err(DensError::DimensionOverflow(n_qubits));
        }
        let dim = 1 << n_qubits;
        Ok(Self {
            n_qubits,
            matrix: CMatrix::identity(dim, dim) / c(dim as f64),
        })
    }

    /// Werner state with |Ψ⁺⟩ weight `f`: `f|Ψ⁺⟩⟨Ψ⁺| + (1−f)/3 (I − |Ψ⁺⟩⟨Ψ⁺|)`.
    pub fn werner(f: f64) -> Self {
        let psi = Self::bell(Bell::PsiPlus).matrix;
        let rest = CMatrix::identity(4, 4) - &psi;
        Self::from_computed(psi * c(f) + rest * c((1.0 - f) / 3.0))
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(1.0)
    }

    /// Re-run the full validity check (used for spot checks in long runs).
    pub fn validate(&self) -> Result<()> {
        Self::new(self.matrix.clone()).map(|_| ())
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let n = self.n_qubits + other.n_qubits;
        if n > MAX_QUBITS {
            return Err(DensError::DimensionOverflow(n));
        }
        Ok(Self {
            n_qubits: n,
            matrix: self.matrix.kronecker(&other.matrix),
        })
    }

    pub fn apply_kraus(&self, kraus: &KrausSet) -> Result<DensityMatrix> {
        if kraus.dim() != self.dim() {
            return Err(DensError::DimensionMismatch {
                expected: self.dim(),
                found: kraus.dim(),
            });
        }
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for op in kraus.operators() {
            out += op * &self.matrix * op.adjoint();
        }
        Ok(Self::from_computed(out))
    }

    /// Apply a channel acting on the listed qubits only.
    pub fn apply_kraus_on(&self, kraus: &KrausSet, qubits: &[usize]) -> Result<DensityMatrix> {
        self.apply_kraus(&kraus.embed(qubits, self.n_qubits)?)
    }

    /// Conjugate by a unitary on the full space.
    pub fn apply_unitary(&self, u: &CMatrix) -> Result<DensityMatrix> {
        if u.nrows() != self.dim() {
            return Err(DensError::DimensionMismatch {
                expected: self.dim(),
                found: u.nrows(),
            });
        }
        Ok(Self::from_computed(u * &self.matrix * u.adjoint()))
    }

    /// Conjugate by a unitary acting on the listed qubits.
    pub fn apply_local(&self, u: &CMatrix, qubits: &[usize]) -> Result<DensityMatrix> {
        self.apply_unitary(&embed(u, qubits, self.n_qubits)?)
    }

    /// Measure `qubits` in the Z basis and post-select on `outcomes`.
    pub fn measure(&self, qubits: &[usize], outcomes: &[u8]) -> Result<Measurement> {
        let n = self.n_qubits;
        check_indices(qubits, n)?;
        if qubits.len() != outcomes.len() {
            return Err(DensError::DimensionMismatch {
                expected: qubits.len(),
                found: outcomes.len(),
            });
        }
        let keep: Vec<usize> = (0..n).filter(|q| !qubits.contains(q)).collect();
        let matches = |idx: usize| {
            qubits
                .iter()
                .zip(outcomes)
                .all(|(&q, &o)| bit(idx, q, n) == o as usize)
        };
        let selected: Vec<usize> = (0..self.dim()).filter(|&i| matches(i)).collect();
        let probability: f64 = selected.iter().map(|&i| self.matrix[(i, i)].re).sum();
        let probability = probability.clamp(0.0, 1.0);
        if probability <= 1e-15 {
            return Ok(Measurement {
                probability: 0.0,
                state: None,
            });
        }
        // `selected` is in increasing order, which is also increasing order of
        // the remaining qubits' sub-index, so the block maps straight across.
        debug_assert_eq!(selected.len(), 1 << keep.len());
        let k = selected.len();
        let block = CMatrix::from_fn(k, k, |a, b| self.matrix[(selected[a], selected[b])]);
        Ok(Measurement {
            probability,
            state: Some(Self::from_computed(block)),
        })
    }

    /// Reduced state on `keep` (in the listed order).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix> {
        let n = self.n_qubits;
        check_indices(keep, n)?;
        let traced: Vec<usize> = (0..n).filter(|q| !keep.contains(q)).collect();
        let k = keep.len();
        let t = traced.len();
        let compose = |kept: usize, env: usize| {
            let mut idx = 0usize;
            for (pos, &q) in keep.iter().enumerate() {
                idx |= ((kept >> (k - 1 - pos)) & 1) << (n - 1 - q);
            }
            for (pos, &q) in traced.iter().enumerate() {
                idx |= ((env >> (t - 1 - pos)) & 1) << (n - 1 - q);
            }
            idx
        };
        let m = CMatrix::from_fn(1 << k, 1 << k, |a, b| {
            (0..1 << t)
                .map(|e| self.matrix[(compose(a, e), compose(b, e))])
                .sum()
        });
        Ok(Self::from_computed(m))
    }

    /// `⟨ψ|ρ|ψ⟩`, clamped to [0, 1].
    pub fn fidelity_with_pure(&self, ket: &Ket) -> Result<f64> {
        if ket.len() != self.dim() {
            return Err(DensError::DimensionMismatch {
                expected: self.dim(),
                found: ket.len(),
            });
        }
        let norm = ket.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(DensError::UnnormalizedKet(norm));
        }
        let f = (ket.adjoint() * &self.matrix * ket)[(0, 0)].re;
        Ok(f.clamp(0.0, 1.0))
    }

    /// Fidelity with |Ψ⁺⟩ for a two-qubit state.
    pub fn bell_fidelity(&self) -> f64 {
        self.bell_weight(Bell::PsiPlus)
    }

    /// Weight of a Bell state in a two-qubit state.
    pub fn bell_weight(&self, b: Bell) -> f64 {
        assert_eq!(self.n_qubits, 2, "Bell weights need a two-qubit state");
        self.fidelity_with_pure(&b.ket())
            .expect("dimensions checked")
    }
}

/// A completeness-checked set of Kraus operators.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    operators: Vec<CMatrix>,
}

impl KrausSet {
    pub fn new(operators: Vec<CMatrix>) -> Result<Self> {
        let first = operators.first().ok_or(DensError::EmptyKraus)?;
        let dim = first.nrows();
        qubits_for_dim(dim)?;
        for op in &operators {
            if op.nrows() != dim || op.ncols() != dim {
                return Err(DensError::DimensionMismatch {
                    expected: dim,
                    found: op.nrows().max(op.ncols()),
                });
            }
        }
        let set = Self { operators };
        let err = set.completeness_error();
        if err > COMPLETENESS_TOL {
            return Err(DensError::IncompleteKraus(err));
        }
        Ok(set)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            operators: vec![CMatrix::identity(dim, dim)],
        }
    }

    /// A single unitary as a channel.
    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn dim(&self) -> usize {
        self.operators[0].nrows()
    }

    /// Largest entry of `Σ D†D − I`.
    pub fn completeness_error(&self) -> f64 {
        let dim = self.dim();
        let sum = self
            .operators
            .iter()
            .fold(CMatrix::zeros(dim, dim), |acc, op| acc + op.adjoint() * op);
        max_abs(&(sum - CMatrix::identity(dim, dim)))
    }

    /// Lift every operator onto the listed qubits of an `n`-qubit register.
    pub fn embed(&self, qubits: &[usize], n: usize) -> Result<KrausSet> {
        let operators = self
            .operators
            .iter()
            .map(|op| embed(op, qubits, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { operators })
    }

    /// Follow every operator by the unitary `u`.
    pub fn then(&self, u: &CMatrix) -> KrausSet {
        Self {
            operators: self.operators.iter().map(|op| u * op).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn plus() -> DensityMatrix {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        DensityMatrix::from_ket(&Ket::from_vec(vec![c(h), c(h)])).unwrap()
    }

    #[test]
    fn maximally_mixed_tensor() {
        let half = DensityMatrix::maximally_mixed(1).unwrap();
        let quarter = half.tensor(&half).unwrap();
        assert_eq!(quarter, DensityMatrix::maximally_mixed(2).unwrap());
    }

    #[test]
    fn pure_tensor_is_pure() {
        let pp = plus().tensor(&plus()).unwrap();
        assert_abs_diff_eq!(pp.purity(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pp.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_bell_pairs_expand_by_hand() {
        let psi = DensityMatrix::bell(Bell::PsiPlus);
        let two = psi.tensor(&psi).unwrap();
        assert_eq!(two.dim(), 16);
        assert_abs_diff_eq!(two.trace(), 1.0, epsilon = 1e-12);
        // |Ψ⁺⟩|Ψ⁺⟩ = (|0101⟩ + |0110⟩ + |1001⟩ + |1010⟩)/2
        let support = [0b0101, 0b0110, 0b1001, 0b1010];
        for i in 0..16 {
            for j in 0..16 {
                let expect = if support.contains(&i) && support.contains(&j) {
                    0.25
                } else {
                    0.0
                };
                assert_abs_diff_eq!(two.matrix()[(i, j)].re, expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn five_qubits_overflow() {
        let psi = DensityMatrix::bell(Bell::PsiPlus);
        let four = psi.tensor(&psi).unwrap();
        assert_eq!(
            four.tensor(&DensityMatrix::maximally_mixed(1).unwrap()),
            Err(DensError::DimensionOverflow(5))
        );
    }

    #[test]
    fn identity_channel_is_noop() {
        let rho = DensityMatrix::werner(0.8);
        let out = rho.apply_kraus(&KrausSet::identity(4)).unwrap();
        assert_abs_diff_eq!(
            max_abs(&(out.matrix() - rho.matrix())),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn dephasing_scales_coherence() {
        for lm in [0.1f64, 0.3, 0.5] {
            let lp = 1.0 - lm;
            let k = KrausSet::new(vec![
                gates::identity(2) * c(lp.sqrt()),
                gates::pauli_z() * c(lm.sqrt()),
            ])
            .unwrap();
            let out = plus().apply_kraus(&k).unwrap();
            assert_abs_diff_eq!(out.matrix()[(0, 1)].re, 0.5 * (lp - lm), epsilon = 1e-14);
        }
        let full = KrausSet::new(vec![
            gates::identity(2) * c(0.5f64.sqrt()),
            gates::pauli_z() * c(0.5f64.sqrt()),
        ])
        .unwrap();
        let mixed = plus().apply_kraus(&full).unwrap();
        assert_eq!(mixed, DensityMatrix::maximally_mixed(1).unwrap());
    }

    #[test]
    fn incomplete_kraus_rejected() {
        let err = KrausSet::new(vec![gates::identity(2) * c(0.9)]).unwrap_err();
        assert!(matches!(err, DensError::IncompleteKraus(_)));
    }

    #[test]
    fn measure_basis_and_plus() {
        let zero = DensityMatrix::from_ket(&Ket::from_vec(vec![c(1.0), c(0.0)])).unwrap();
        let m = zero.measure(&[0], &[0]).unwrap();
        assert_abs_diff_eq!(m.probability, 1.0);
        assert_eq!(m.state.unwrap().n_qubits(), 0);
        let m = plus().measure(&[0], &[0]).unwrap();
        assert_abs_diff_eq!(m.probability, 0.5, epsilon = 1e-14);
        assert!(zero.measure(&[0], &[1]).unwrap().state.is_none());
    }

    #[test]
    fn bilateral_cx_target_parity_is_even() {
        // Qubits: a1 a2 (pair A), b1 b2 (pair B). Pair A controls pair B on
        // both sides: a1 -> b1 and a2 -> b2.
        let psi = DensityMatrix::bell(Bell::PsiPlus);
        let two = psi.tensor(&psi).unwrap();
        let after = two
            .apply_local(&gates::cnot(), &[0, 2])
            .unwrap()
            .apply_local(&gates::cnot(), &[1, 3])
            .unwrap();
        let even: f64 = [[0u8, 0u8], [1, 1]]
            .iter()
            .map(|o| after.measure(&[2, 3], o).unwrap().probability)
            .sum();
        assert_abs_diff_eq!(even, 1.0, epsilon = 1e-14);
        let kept = after.measure(&[2, 3], &[0, 0]).unwrap().state.unwrap();
        assert_abs_diff_eq!(kept.bell_fidelity(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn werner_fidelity_by_construction() {
        for f in [0.25, 0.6, 0.9] {
            assert_abs_diff_eq!(DensityMatrix::werner(f).bell_fidelity(), f, epsilon = 1e-14);
        }
        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        assert_abs_diff_eq!(mixed.bell_fidelity(), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn unnormalized_ket_rejected() {
        let rho = DensityMatrix::bell(Bell::PsiPlus);
        let ket = Bell::PsiPlus.ket() * c(2.0);
        assert!(matches!(
            rho.fidelity_with_pure(&ket),
            Err(DensError::UnnormalizedKet(_))
        ));
    }

    #[test]
    fn embed_respects_qubit_order() {
        // C-X with control 1 and target 0 on |01⟩ gives |11⟩.
        let u = embed(&gates::cnot(), &[1, 0], 2).unwrap();
        assert_eq!(u[(3, 1)], c(1.0));
        assert_eq!(u[(1, 1)], c(0.0));
    }

    #[test]
    fn partial_trace_of_bell_is_mixed() {
        let psi = DensityMatrix::bell(Bell::PsiPlus);
        let one = psi.partial_trace(&[1]).unwrap();
        assert_eq!(one, DensityMatrix::maximally_mixed(1).unwrap());
        let two = psi
            .tensor(&DensityMatrix::maximally_mixed(1).unwrap())
            .unwrap();
        let back = two.partial_trace(&[0, 1]).unwrap();
        assert_abs_diff_eq!(
            max_abs(&(back.matrix() - psi.matrix())),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn bell_corrections_map_to_psi_plus() {
        for b in Bell::ALL {
            let rho = DensityMatrix::bell(b)
                .apply_local(&b.correction_to_psi_plus(), &[1])
                .unwrap();
            assert_abs_diff_eq!(rho.bell_fidelity(), 1.0, epsilon = 1e-14);
        }
    }
}
