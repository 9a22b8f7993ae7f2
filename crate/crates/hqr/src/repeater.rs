//! Nested purification and entanglement swapping across a chain of repeater
//! stations, simulated slot by slot.
//!
//! Every station holds `qubits_per_station` memories, half facing left and
//! half facing right. A pair between stations `i < j` occupies one
//! right-facing memory at `i` and one left-facing memory at `j`, and its
//! state is stored with qubit 0 at `i`. Swapping keeps the outer memories,
//! so only generation ever allocates new ones.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::czgate::{self, CzError, GateChannel};
use crate::densmat::{gates, Bell, CMatrix, DensError, DensityMatrix, KrausSet};
use crate::entangle::{self, EntangleError, LinkParams};

/// Classical one-hop communication time for 10 km of fiber.
pub const DEFAULT_SLOT_TIME_S: f64 = 50e-6;

/// Upper bound on purification rounds per level when targeting a policy.
pub const MAX_ROUNDS_PER_LEVEL: u32 = 5;

#[derive(Debug, Error)]
pub enum RepeaterError {
    #[error("invalid network: {0}")]
    InvalidConfig(String),
    #[error("policy has {found} levels but the network needs {expected}")]
    PolicyLevels { expected: usize, found: usize },
    #[error("pairs at levels {0} and {1} cannot be purified together")]
    LevelMismatch(usize, usize),
    #[error("pairs {0:?} and {1:?} do not share exactly one station")]
    NoSharedStation((usize, usize), (usize, usize)),
    #[error("purification needs pairs with the same endpoints, got {0:?} and {1:?}")]
    EndpointMismatch((usize, usize), (usize, usize)),
    #[error("simulation stalled: {delivered} of {wanted} pairs after {slots} slots")]
    Stalled {
        delivered: usize,
        wanted: usize,
        slots: u64,
    },
    #[error("rate study needs at least {needed} successful grid points, got {got}")]
    InsufficientRuns { needed: usize, got: usize },
    #[error(transparent)]
    State(#[from] DensError),
    #[error(transparent)]
    Gate(#[from] CzError),
    #[error(transparent)]
    Link(#[from] EntangleError),
}

type Result<T> = std::result::Result<T, RepeaterError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of segments N, a power of two; there are N + 1 stations.
    pub n_segments: usize,
    pub spacing_km: f64,
    pub slot_time_s: f64,
    pub qubits_per_station: usize,
}

impl NetworkConfig {
    /// Network with the minimal memory 2 + 2log₂N per station.
    pub fn new(n_segments: usize, spacing_km: f64) -> Self {
        let levels = if n_segments.is_power_of_two() {
            n_segments.trailing_zeros() as usize
        } else {
            0
        };
        Self {
            n_segments,
            spacing_km,
            slot_time_s: DEFAULT_SLOT_TIME_S,
            qubits_per_station: 2 + 2 * levels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RepeaterError::InvalidConfig(m));
        if self.n_segments == 0 || !self.n_segments.is_power_of_two() {
            return bad(format!(
                "segment count must be a power of two, got {}",
                self.n_segments
            ));
        }
        if !(self.spacing_km > 0.0 && self.spacing_km.is_finite()) {
            return bad(format!(
                "spacing must be positive, got {} km",
                self.spacing_km
            ));
        }
        if !(self.slot_time_s > 0.0 && self.slot_time_s.is_finite()) {
            return bad(format!(
                "slot time must be positive, got {} s",
                self.slot_time_s
            ));
        }
        let min = 2 + 2 * self.levels();
        if self.qubits_per_station < min || self.qubits_per_station % 2 != 0 {
            return bad(format!(
                "need an even number of at least {min} qubits per station, got {}",
                self.qubits_per_station
            ));
        }
        Ok(())
    }

    /// log₂N, the highest nesting level.
    pub fn levels(&self) -> usize {
        self.n_segments.trailing_zeros() as usize
    }

    pub fn total_km(&self) -> f64 {
        self.n_segments as f64 * self.spacing_km
    }

    fn per_side(&self) -> usize {
        self.qubits_per_station / 2
    }
}

/// Purification rounds to perform at each nesting level.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolPolicy {
    pub purification_rounds: Vec<u32>,
}

impl ProtocolPolicy {
    pub fn new(purification_rounds: Vec<u32>) -> Self {
        Self {
            purification_rounds,
        }
    }

    pub fn no_purification(cfg: &NetworkConfig) -> Self {
        Self::new(vec![0; cfg.levels() + 1])
    }

    fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        let expected = cfg.levels() + 1;
        if self.purification_rounds.len() != expected {
            return Err(RepeaterError::PolicyLevels {
                expected,
                found: self.purification_rounds.len(),
            });
        }
        Ok(())
    }

    fn rounds(&self, level: usize) -> u32 {
        self.purification_rounds[level]
    }
}

/// How local two-qubit gates fail.
#[derive(Debug, Clone, PartialEq)]
pub enum GateNoise {
    Ideal,
    /// Ideal C-X followed by two-qubit white noise of strength ε.
    WhiteNoise {
        eps: f64,
    },
    /// The loss-distorted dispersive C-Z gate, used as a C-X.
    Channel(GateChannel),
}

impl GateNoise {
    /// Kraus operators of the complete C-X on (control, target).
    fn cx_kraus(&self) -> KrausSet {
        match self {
            GateNoise::Ideal => KrausSet::unitary(gates::cnot()).expect("C-X is unitary"),
            GateNoise::WhiteNoise { eps } => {
                let cx = gates::cnot();
                let paulis = two_qubit_paulis();
                let ops = paulis
                    .iter()
                    .enumerate()
                    .map(|(k, p)| {
                        let w = if k == 0 {
                            1.0 - eps + eps / 16.0
                        } else {
                            eps / 16.0
                        };
                        p * &cx * C64::from(w.sqrt())
                    })
                    .filter(|op| op.iter().any(|z| z.norm() > 0.0))
                    .collect();
                KrausSet::new(ops).expect("Pauli twirl is complete")
            }
            GateNoise::Channel(ch) => ch.cx_kraus(),
        }
    }
}

fn two_qubit_paulis() -> Vec<CMatrix> {
    let singles = [
        gates::identity(2),
        gates::pauli_x(),
        gates::pauli_y(),
        gates::pauli_z(),
    ];
    let mut out = Vec::with_capacity(16);
    for a in &singles {
        for b in &singles {
            out.push(gates::kron(a, b));
        }
    }
    out
}

/// Source of elementary pairs on one link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSource {
    pub success_probability: f64,
    pub state: DensityMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseModel {
    /// Pairs are white-noised |Ψ⁺⟩ and gates suffer white noise.
    WhiteNoise {
        eps_init: f64,
        eps_gate: f64,
        success_probability: f64,
    },
    /// Pairs come from the homodyne post-selection and gates from the
    /// loss-distorted C-Z channel.
    Physical { link: LinkParams, gate: GateChannel },
}

impl NoiseModel {
    pub fn resolve(&self) -> Result<(LinkSource, GateNoise)> {
        match self {
            NoiseModel::WhiteNoise {
                eps_init,
                eps_gate,
                success_probability,
            } => {
                for (name, v) in [
                    ("eps_init", eps_init),
                    ("eps_gate", eps_gate),
                    ("success_probability", success_probability),
                ] {
                    if !(0.0..=1.0).contains(v) {
                        return Err(RepeaterError::InvalidConfig(format!(
                            "{name} must lie in [0, 1], got {v}"
                        )));
                    }
                }
                let state = white_noise(&DensityMatrix::bell(Bell::PsiPlus), *eps_init);
                let gate = if *eps_gate == 0.0 {
                    GateNoise::Ideal
                } else {
                    GateNoise::WhiteNoise { eps: *eps_gate }
                };
                Ok((
                    LinkSource {
                        success_probability: *success_probability,
                        state,
                    },
                    gate,
                ))
            }
            NoiseModel::Physical { link, gate } => {
                let post = entangle::post_selected_state(link)?;
                Ok((
                    LinkSource {
                        success_probability: post.ps,
                        state: post.rho12,
                    },
                    if gate.is_ideal() {
                        GateNoise::Ideal
                    } else {
                        GateNoise::Channel(gate.clone())
                    },
                ))
            }
        }
    }
}

/// An entangled pair held by two stations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub level: usize,
    pub endpoints: (usize, usize),
    pub rho: DensityMatrix,
    pub purification_round: u32,
    /// Slot from which the pair may be used.
    pub ready_at: u64,
}

/// `(1−ε)ρ + ε·1/d`.
pub fn white_noise(rho: &DensityMatrix, eps: f64) -> DensityMatrix {
    let d = rho.dim();
    let m =
        rho.matrix() * C64::from(1.0 - eps) + CMatrix::identity(d, d) * C64::from(eps / d as f64);
    DensityMatrix::from_computed(m)
}

/// One generation attempt on the link `endpoints`.
pub fn attempt_generation(
    source: &LinkSource,
    endpoints: (usize, usize),
    now: u64,
    rng: &mut impl Rng,
) -> Option<PairRecord> {
    rng.random_bool(source.success_probability)
        .then(|| PairRecord {
            level: 0,
            endpoints,
            rho: source.state.clone(),
            purification_round: 0,
            ready_at: now + 1,
        })
}

/// The 24 single-qubit Clifford rotations, identity first.
pub fn clifford_group() -> &'static [CMatrix] {
    static GROUP: OnceLock<Vec<CMatrix>> = OnceLock::new();
    GROUP.get_or_init(|| {
        let h = gates::hadamard();
        let s = gates::z_rotation(std::f64::consts::FRAC_PI_2);
        let mut group = vec![gates::identity(2)];
        let mut frontier = group.clone();
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for g in &frontier {
                for gen in [&h, &s] {
                    let cand = gen * g;
                    if !group.iter().any(|u| same_up_to_phase(u, &cand)) {
                        group.push(cand.clone());
                        next.push(cand);
                    }
                }
            }
            frontier = next;
        }
        debug_assert_eq!(group.len(), 24);
        group
    })
}

fn same_up_to_phase(a: &CMatrix, b: &CMatrix) -> bool {
    // |tr(a†b)| = 2 exactly when b = e^{iφ}a for 2×2 unitaries.
    ((a.adjoint() * b).trace().norm() - 2.0).abs() < 1e-9
}

/// Bell state with the largest weight.
fn dominant_bell(rho: &DensityMatrix) -> Bell {
    Bell::ALL
        .into_iter()
        .max_by(|a, b| rho.bell_weight(*a).total_cmp(&rho.bell_weight(*b)))
        .expect("four Bell states")
}

fn correct_to_psi_plus(rho: &DensityMatrix) -> DensityMatrix {
    let b = dominant_bell(rho);
    rho.apply_local(&b.correction_to_psi_plus(), &[1])
        .expect("single-qubit correction fits")
}

/// Result of one purification step on states.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyOutcome {
    pub success_probability: f64,
    /// Kept pair after the parity check and Pauli correction.
    pub state: Option<DensityMatrix>,
    /// Index into [`clifford_group`] of the chosen pre-rotation.
    pub rotation: usize,
}

impl PurifyOutcome {
    pub fn fidelity(&self) -> f64 {
        self.state.as_ref().map_or(0.0, |s| s.bell_fidelity())
    }
}

/// Recurrence purification of `keep` with `sacrifice`, trying every Clifford
/// pre-rotation (the same one on all four qubits) and keeping the one whose
/// output is closest to |Ψ⁺⟩.
pub fn purify_states(
    keep: &DensityMatrix,
    sacrifice: &DensityMatrix,
    gate: &GateNoise,
) -> Result<PurifyOutcome> {
    purify_states_with(keep, sacrifice, &gate.cx_kraus())
}

fn purify_states_with(
    keep: &DensityMatrix,
    sacrifice: &DensityMatrix,
    cx: &KrausSet,
) -> Result<PurifyOutcome> {
    // Qubits: 0,1 = kept pair (left, right); 2,3 = sacrificed pair.
    let joint = keep.tensor(sacrifice)?;
    let mut best: Option<PurifyOutcome> = None;
    for (idx, c) in clifford_group().iter().enumerate() {
        let rotated_pair = gates::kron(c, c);
        let u = gates::kron(&rotated_pair, &rotated_pair);
        let rho = joint.apply_unitary(&u)?;
        let rho = czgate::noisy_cx_with(&rho, cx, 0, 2)?;
        let rho = czgate::noisy_cx_with(&rho, cx, 1, 3)?;
        let mut kept = CMatrix::zeros(4, 4);
        let mut p_total = 0.0;
        for bit in [0u8, 1] {
            let m = rho.measure(&[2, 3], &[bit, bit])?;
            if let Some(state) = m.state {
                kept += correct_to_psi_plus(&state).matrix() * C64::from(m.probability);
                p_total += m.probability;
            }
        }
        let outcome = if p_total > 0.0 {
            PurifyOutcome {
                success_probability: p_total,
                state: Some(DensityMatrix::from_computed(kept / C64::from(p_total))),
                rotation: idx,
            }
        } else {
            PurifyOutcome {
                success_probability: 0.0,
                state: None,
                rotation: idx,
            }
        };
        if best
            .as_ref()
            .is_none_or(|b| outcome.fidelity() > b.fidelity() + 1e-12)
        {
            best = Some(outcome);
        }
    }
    Ok(best.expect("group is nonempty"))
}

/// Outcome-averaged, Pauli-corrected swap of pairs `(i, j)` and `(j, k)`.
///
/// The Bell-measurement result only selects the correction applied at the
/// far end, so the corrected output is the same density matrix whichever
/// result occurred on average, and no randomness is needed.
pub fn swap_states(
    left: &DensityMatrix,
    right: &DensityMatrix,
    gate: &GateNoise,
) -> Result<DensityMatrix> {
    swap_states_with(left, right, &gate.cx_kraus())
}

fn swap_states_with(
    left: &DensityMatrix,
    right: &DensityMatrix,
    cx: &KrausSet,
) -> Result<DensityMatrix> {
    // Qubits: 0 = far left, 1 and 2 at the shared station, 3 = far right.
    let rho = left.tensor(right)?;
    let rho = czgate::noisy_cx_with(&rho, cx, 1, 2)?;
    let rho = rho.apply_local(&gates::hadamard(), &[1])?;
    let table = swap_corrections();
    let mut out = CMatrix::zeros(4, 4);
    for (k, correction) in table.iter().enumerate() {
        let outcome = [(k >> 1) as u8, (k & 1) as u8];
        let m = rho.measure(&[1, 2], &outcome)?;
        if let Some(state) = m.state {
            out += state.apply_local(correction, &[1])?.matrix() * C64::from(m.probability);
        }
    }
    Ok(DensityMatrix::from_computed(out))
}

/// Correction on the far-right qubit for each Bell-measurement outcome
/// `(m₁, m₂)`, derived from perfect |Ψ⁺⟩ inputs and an ideal gate.
fn swap_corrections() -> &'static [CMatrix; 4] {
    static TABLE: OnceLock<[CMatrix; 4]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let psi = DensityMatrix::bell(Bell::PsiPlus);
        let rho = psi.tensor(&psi).expect("four qubits fit");
        let rho = rho
            .apply_local(&gates::cnot(), &[1, 2])
            .expect("valid qubits");
        let rho = rho
            .apply_local(&gates::hadamard(), &[1])
            .expect("valid qubit");
        std::array::from_fn(|k| {
            let m = rho
                .measure(&[1, 2], &[(k >> 1) as u8, (k & 1) as u8])
                .expect("valid measurement");
            let state = m.state.expect("every outcome occurs for Bell inputs");
            dominant_bell(&state).correction_to_psi_plus()
        })
    })
}

/// Purify two pairs with the same endpoints. The pair with the higher round
/// is kept and advances one round; returns `None` when the parity check fails.
pub fn purify(
    a: &PairRecord,
    b: &PairRecord,
    gate: &GateNoise,
    rng: &mut impl Rng,
) -> Result<Option<PairRecord>> {
    if a.level != b.level {
        return Err(RepeaterError::LevelMismatch(a.level, b.level));
    }
    if a.endpoints != b.endpoints {
        return Err(RepeaterError::EndpointMismatch(a.endpoints, b.endpoints));
    }
    let (keep, other) = if b.purification_round > a.purification_round {
        (b, a)
    } else {
        (a, b)
    };
    let outcome = purify_states(&keep.rho, &other.rho, gate)?;
    Ok(purify_record(keep, other, outcome, rng))
}

fn purify_record(
    keep: &PairRecord,
    other: &PairRecord,
    outcome: PurifyOutcome,
    rng: &mut impl Rng,
) -> Option<PairRecord> {
    let success = rng.random_bool(outcome.success_probability.clamp(0.0, 1.0));
    match (success, outcome.state) {
        (true, Some(rho)) => Some(PairRecord {
            level: keep.level,
            endpoints: keep.endpoints,
            rho,
            purification_round: keep.purification_round + 1,
            ready_at: keep.ready_at.max(other.ready_at) + (1 << keep.level),
        }),
        _ => None,
    }
}

/// Swap `(i, j)` with `(j, k)` into `(i, k)` one level up.
pub fn swap(a: &PairRecord, b: &PairRecord, gate: &GateNoise) -> Result<PairRecord> {
    let (left, right) = if a.endpoints.1 == b.endpoints.0 {
        (a, b)
    } else if b.endpoints.1 == a.endpoints.0 {
        (b, a)
    } else {
        return Err(RepeaterError::NoSharedStation(a.endpoints, b.endpoints));
    };
    if left.level != right.level {
        return Err(RepeaterError::LevelMismatch(left.level, right.level));
    }
    Ok(PairRecord {
        level: left.level + 1,
        endpoints: (left.endpoints.0, right.endpoints.1),
        rho: swap_states(&left.rho, &right.rho, gate)?,
        purification_round: 0,
        ready_at: left.ready_at.max(right.ready_at) + (1 << left.level),
    })
}

/// Key identifying a state exactly, for memoizing deterministic operations.
fn state_key(a: &DensityMatrix, b: &DensityMatrix) -> Vec<u64> {
    a.matrix()
        .iter()
        .chain(b.matrix().iter())
        .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
        .collect()
}

/// Gate noise with memoized purification and swap results. Within one run
/// the same few states recur constantly, so this turns the 16-dimensional
/// algebra into lookups.
pub struct PairOps {
    cx: KrausSet,
    purify_cache: HashMap<Vec<u64>, PurifyOutcome>,
    swap_cache: HashMap<Vec<u64>, DensityMatrix>,
}

impl PairOps {
    pub fn new(gate: &GateNoise) -> Self {
        Self {
            cx: gate.cx_kraus(),
            purify_cache: HashMap::new(),
            swap_cache: HashMap::new(),
        }
    }

    pub fn purify(
        &mut self,
        keep: &DensityMatrix,
        sacrifice: &DensityMatrix,
    ) -> Result<PurifyOutcome> {
        let key = state_key(keep, sacrifice);
        if let Some(hit) = self.purify_cache.get(&key) {
            return Ok(hit.clone());
        }
        let out = purify_states_with(keep, sacrifice, &self.cx)?;
        self.purify_cache.insert(key, out.clone());
        Ok(out)
    }

    pub fn swap(&mut self, left: &DensityMatrix, right: &DensityMatrix) -> Result<DensityMatrix> {
        let key = state_key(left, right);
        if let Some(hit) = self.swap_cache.get(&key) {
            return Ok(hit.clone());
        }
        let out = swap_states_with(left, right, &self.cx)?;
        self.swap_cache.insert(key, out.clone());
        Ok(out)
    }

    pub fn distinct_states(&self) -> usize {
        self.purify_cache.len() + self.swap_cache.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// Mean time between consecutive deliveries, skipping the warm-up
    /// before the first one.
    pub mean_interval_s: f64,
    pub std_interval_s: f64,
    pub rate_hz: f64,
    /// Mean |Ψ⁺⟩ fidelity of the delivered pairs.
    pub final_fidelity: f64,
    pub pairs_delivered: usize,
    pub delivery_times_s: Vec<f64>,
    pub slots: u64,
    /// Pairs discarded to break a memory deadlock.
    pub evictions: u64,
}

#[derive(Debug, Clone)]
struct Slot {
    pair: PairRecord,
    /// Creation order, used for "eldest first".
    serial: u64,
    /// Failed purification awaiting its classical confirmation.
    doomed: bool,
}

/// Mutable state of one run.
struct Network {
    cfg: NetworkConfig,
    pairs: Vec<Option<Slot>>,
    free_ids: Vec<usize>,
    /// Pair ids per level and per segment index at that level.
    groups: Vec<Vec<Vec<usize>>>,
    right_used: Vec<usize>,
    left_used: Vec<usize>,
    /// Generation attempts started last slot, per link.
    pending_attempts: Vec<usize>,
    /// Pairs whose purification failed, to be released at the given slot.
    doomed: BTreeMap<u64, Vec<usize>>,
    /// Slots at which some pair becomes ready.
    wake: BTreeSet<u64>,
    serial: u64,
}

impl Network {
    fn new(cfg: NetworkConfig) -> Self {
        let n = cfg.n_segments;
        let groups = (0..=cfg.levels())
            .map(|k| vec![Vec::new(); n >> k])
            .collect();
        Self {
            cfg,
            pairs: Vec::new(),
            free_ids: Vec::new(),
            groups,
            right_used: vec![0; n + 1],
            left_used: vec![0; n + 1],
            pending_attempts: vec![0; n],
            doomed: BTreeMap::new(),
            wake: BTreeSet::new(),
            serial: 0,
        }
    }

    fn group_of(endpoints: (usize, usize), level: usize) -> usize {
        endpoints.0 >> level
    }

    /// Insert a pair whose memories are already counted as used.
    fn insert(&mut self, pair: PairRecord) -> usize {
        let (level, g) = (pair.level, Self::group_of(pair.endpoints, pair.level));
        self.serial += 1;
        self.wake.insert(pair.ready_at);
        let slot = Slot {
            pair,
            serial: self.serial,
            doomed: false,
        };
        let id = match self.free_ids.pop() {
            Some(id) => {
                self.pairs[id] = Some(slot);
                id
            }
            None => {
                self.pairs.push(Some(slot));
                self.pairs.len() - 1
            }
        };
        self.groups[level][g].push(id);
        id
    }

    /// Remove a pair from the books; memory accounting is the caller's job.
    fn take(&mut self, id: usize) -> PairRecord {
        let slot = self.pairs[id].take().expect("live pair");
        let (level, g) = (
            slot.pair.level,
            Self::group_of(slot.pair.endpoints, slot.pair.level),
        );
        self.groups[level][g].retain(|&x| x != id);
        self.free_ids.push(id);
        slot.pair
    }

    fn release(&mut self, endpoints: (usize, usize)) {
        self.right_used[endpoints.0] -= 1;
        self.left_used[endpoints.1] -= 1;
    }

    fn pair(&self, id: usize) -> &Slot {
        self.pairs[id].as_ref().expect("live pair")
    }

    /// Ready pairs of a group, eldest first.
    fn ready(&self, level: usize, g: usize, now: u64) -> Vec<usize> {
        let mut ids: Vec<usize> = self.groups[level][g]
            .iter()
            .copied()
            .filter(|&id| self.pair(id).pair.ready_at <= now && !self.is_doomed(id))
            .collect();
        ids.sort_by_key(|&id| self.pair(id).serial);
        ids
    }

    fn is_doomed(&self, id: usize) -> bool {
        self.pair(id).doomed
    }

    /// Whether anything became ready by `now`, consuming the wake-ups.
    fn wake_due(&mut self, now: u64) -> bool {
        let due = self.wake.first().is_some_and(|&w| w <= now);
        while self.wake.first().is_some_and(|&w| w <= now) {
            self.wake.pop_first();
        }
        due
    }

    /// Groups whose pairs use the given side of `station`.
    fn side_groups(&self, station: usize, right: bool) -> Vec<(usize, usize)> {
        let n = self.cfg.n_segments;
        (0..=self.cfg.levels())
            .filter_map(|k| {
                let span = 1 << k;
                if station % span != 0 {
                    return None;
                }
                if right && station + span <= n {
                    Some((k, station >> k))
                } else if !right && station >= span {
                    Some((k, (station >> k) - 1))
                } else {
                    None
                }
            })
            .collect()
    }
}

/// Run the protocol until `n_deliver` end-to-end pairs have been delivered.
pub fn run_simulation(
    cfg: &NetworkConfig,
    policy: &ProtocolPolicy,
    noise: &NoiseModel,
    n_deliver: usize,
    seed: u64,
) -> Result<SimResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_simulation_with_rng(cfg, policy, noise, n_deliver, &mut rng, None)
}

/// As [`run_simulation`] with an explicit generator and an optional slot
/// budget (default: generous enough for any sensible configuration).
pub fn run_simulation_with_rng(
    cfg: &NetworkConfig,
    policy: &ProtocolPolicy,
    noise: &NoiseModel,
    n_deliver: usize,
    rng: &mut ChaCha8Rng,
    max_slots: Option<u64>,
) -> Result<SimResult> {
    cfg.validate()?;
    policy.check(cfg)?;
    let (source, gate) = noise.resolve()?;
    let mut ops = PairOps::new(&gate);
    let max_slots = max_slots.unwrap_or(50_000_000);
    let n = cfg.n_segments;
    let top = cfg.levels();
    let cap = cfg.per_side();
    let mut net = Network::new(*cfg);
    let mut deliveries: Vec<(u64, f64)> = Vec::new();
    let mut evictions = 0u64;
    let mut t: u64 = 0;

    loop {
        // Failed purifications release their memories once the result is known.
        // Pair bookkeeping is skipped on slots where nothing changed.
        let mut dirty = net.wake_due(t);
        let due: Vec<u64> = net.doomed.range(..=t).map(|(k, _)| *k).collect();
        dirty |= !due.is_empty();
        for k in due {
            for id in net.doomed.remove(&k).unwrap_or_default() {
                let p = net.take(id);
                net.release(p.endpoints);
            }
        }

        // Heralds of last slot's attempts arrive.
        for link in 0..n {
            let attempts = std::mem::take(&mut net.pending_attempts[link]);
            for _ in 0..attempts {
                match attempt_generation(&source, (link, link + 1), t.saturating_sub(1), rng) {
                    Some(pair) => {
                        net.insert(pair);
                        dirty = true;
                    }
                    None => net.release((link, link + 1)),
                }
            }
        }

        if dirty {
            // Deliver finished end-to-end pairs.
            for id in net.ready(top, 0, t) {
                if net.pair(id).pair.purification_round >= policy.rounds(top) {
                    let p = net.take(id);
                    net.release(p.endpoints);
                    deliveries.push((t, p.rho.bell_fidelity()));
                }
            }
            if deliveries.len() >= n_deliver {
                break;
            }

            // Swaps, lowest level first so freshly doubled pairs wait their latency.
            for k in 0..top {
                let span = 1 << k;
                for g in (0..n >> k).step_by(2) {
                    let finished = |net: &Network, g: usize| -> Vec<usize> {
                        net.ready(k, g, t)
                            .into_iter()
                            .filter(|&id| net.pair(id).pair.purification_round >= policy.rounds(k))
                            .collect()
                    };
                    let lefts = finished(&net, g);
                    let rights = finished(&net, g + 1);
                    for (l, r) in lefts.into_iter().zip(rights) {
                        let a = net.take(l);
                        let b = net.take(r);
                        let rho = ops.swap(&a.rho, &b.rho)?;
                        // The shared station's memories are free once measured.
                        let mid = a.endpoints.1;
                        net.left_used[mid] -= 1;
                        net.right_used[mid] -= 1;
                        net.insert(PairRecord {
                            level: k + 1,
                            endpoints: (a.endpoints.0, b.endpoints.1),
                            rho,
                            purification_round: 0,
                            ready_at: t + span,
                        });
                    }
                }
            }

            // Purify within each group while two unfinished pairs are ready.
            for k in 0..=top {
                let rounds = policy.rounds(k);
                if rounds == 0 {
                    continue;
                }
                for g in 0..n >> k {
                    loop {
                        let mut cands: Vec<usize> = net
                            .ready(k, g, t)
                            .into_iter()
                            .filter(|&id| net.pair(id).pair.purification_round < rounds)
                            .collect();
                        if cands.len() < 2 {
                            break;
                        }
                        // Highest round is kept; the eldest wins ties.
                        cands.sort_by_key(|&id| {
                            (
                                std::cmp::Reverse(net.pair(id).pair.purification_round),
                                net.pair(id).serial,
                            )
                        });
                        let keep_id = cands[0];
                        let other_id = cands[1];
                        let other = net.take(other_id);
                        net.release(other.endpoints);
                        let outcome = {
                            let keep = &net.pair(keep_id).pair;
                            ops.purify(&keep.rho, &other.rho)?
                        };
                        let latency = 1u64 << k;
                        let keep_slot = net.pairs[keep_id].as_mut().expect("live pair");
                        let success = rng.random_bool(outcome.success_probability.clamp(0.0, 1.0));
                        keep_slot.pair.ready_at = t + latency;
                        match (success, outcome.state) {
                            (true, Some(rho)) => {
                                keep_slot.pair.rho = rho;
                                keep_slot.pair.purification_round += 1;
                                net.wake.insert(t + latency);
                            }
                            _ => {
                                keep_slot.doomed = true;
                                net.doomed.entry(t + latency).or_default().push(keep_id);
                            }
                        }
                    }
                }
            }

            // Break memory deadlocks: a full side whose every pair needs a
            // purification partner that could only be generated through it.
            for station in 0..=n {
                for right in [true, false] {
                    let used = if right {
                        net.right_used[station]
                    } else {
                        net.left_used[station]
                    };
                    if used < cap {
                        continue;
                    }
                    let pending = if right {
                        station < n && net.pending_attempts[station] > 0
                    } else {
                        station > 0 && net.pending_attempts[station - 1] > 0
                    };
                    if pending {
                        continue;
                    }
                    let mut stuck = true;
                    let mut candidates = Vec::new();
                    for (k, g) in net.side_groups(station, right) {
                        for &id in &net.groups[k][g] {
                            let p = &net.pair(id).pair;
                            if p.ready_at > t
                                || net.is_doomed(id)
                                || p.purification_round >= policy.rounds(k)
                            {
                                stuck = false;
                            } else if k > 0 {
                                candidates.push((k, std::cmp::Reverse(net.pair(id).serial), id));
                            }
                        }
                    }
                    if !stuck {
                        continue;
                    }
                    if let Some(&(_, _, id)) = candidates.iter().min() {
                        let p = net.take(id);
                        net.release(p.endpoints);
                        evictions += 1;
                    }
                }
            }
        }

        // Every free memory pair on every link starts a new attempt.
        for link in 0..n {
            let free = (cap - net.right_used[link]).min(cap - net.left_used[link + 1]);
            if free > 0 {
                net.pending_attempts[link] = free;
                net.right_used[link] += free;
                net.left_used[link + 1] += free;
            }
        }

        t += 1;
        if t > max_slots {
            return Err(RepeaterError::Stalled {
                delivered: deliveries.len(),
                wanted: n_deliver,
                slots: t,
            });
        }
    }

    let times: Vec<f64> = deliveries
        .iter()
        .map(|&(s, _)| s as f64 * cfg.slot_time_s)
        .collect();
    let intervals: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let (mean, std) = mean_std(&intervals);
    let final_fidelity =
        deliveries.iter().map(|d| d.1).sum::<f64>() / deliveries.len().max(1) as f64;
    Ok(SimResult {
        mean_interval_s: mean,
        std_interval_s: std,
        rate_hz: if mean > 0.0 {
            1.0 / mean
        } else {
            f64::INFINITY
        },
        final_fidelity,
        pairs_delivered: deliveries.len(),
        delivery_times_s: times,
        slots: t,
        evictions,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Fidelity and cost of a policy under deterministic state propagation,
/// where every purification pumps the current pair with a fresh pair of the
/// same level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyForecast {
    pub policy: ProtocolPolicy,
    pub final_fidelity: f64,
    /// Expected elementary pairs consumed per delivered pair.
    pub elementary_cost: f64,
}

pub fn forecast_policy(
    source: &LinkSource,
    gate: &GateNoise,
    policy: &ProtocolPolicy,
    levels: usize,
) -> Result<PolicyForecast> {
    let mut ops = PairOps::new(gate);
    forecast_with(&mut ops, source, policy, levels)
}

fn forecast_with(
    ops: &mut PairOps,
    source: &LinkSource,
    policy: &ProtocolPolicy,
    levels: usize,
) -> Result<PolicyForecast> {
    let mut fresh = source.state.clone();
    let mut fresh_cost = 1.0;
    let mut state = fresh.clone();
    let mut cost = fresh_cost;
    for k in 0..=levels {
        for _ in 0..policy.rounds(k) {
            let out = ops.purify(&state, &fresh)?;
            let Some(next) = out.state else {
                return Ok(PolicyForecast {
                    policy: policy.clone(),
                    final_fidelity: 0.0,
                    elementary_cost: f64::INFINITY,
                });
            };
            cost = (cost + fresh_cost) / out.success_probability;
            state = next;
        }
        if k < levels {
            state = ops.swap(&state, &state)?;
            cost *= 2.0;
            fresh = state.clone();
            fresh_cost = cost;
        }
    }
    Ok(PolicyForecast {
        policy: policy.clone(),
        final_fidelity: state.bell_fidelity(),
        elementary_cost: cost,
    })
}

impl ProtocolPolicy {
    /// Memories one side of a station must hold at once to build a finished
    /// top-level pair: the stored pair of every purified level on the way up,
    /// plus the fresh pair being generated.
    pub fn memory_need(&self) -> usize {
        1 + self.purification_rounds.iter().filter(|&&r| r > 0).count()
    }
}

/// Cheapest non-increasing policy (at most `max_rounds` per level) that fits
/// the station memory and whose forecast reaches `target_fidelity`; falls
/// back to the best reachable fidelity when none does.
pub fn target_policy(
    cfg: &NetworkConfig,
    source: &LinkSource,
    gate: &GateNoise,
    target_fidelity: f64,
    max_rounds: u32,
) -> Result<PolicyForecast> {
    cfg.validate()?;
    let levels = cfg.levels();
    let mut ops = PairOps::new(gate);
    let mut best_ok: Option<PolicyForecast> = None;
    let mut best_any: Option<PolicyForecast> = None;
    let mut rounds = vec![0u32; levels + 1];
    loop {
        let policy = ProtocolPolicy::new(rounds.clone());
        if policy.memory_need() > cfg.per_side() {
            if !next_non_increasing(&mut rounds, max_rounds) {
                break;
            }
            continue;
        }
        let f = forecast_with(&mut ops, source, &policy, levels)?;
        if f.final_fidelity >= target_fidelity
            && best_ok
                .as_ref()
                .is_none_or(|b| f.elementary_cost < b.elementary_cost)
        {
            best_ok = Some(f.clone());
        }
        if best_any
            .as_ref()
            .is_none_or(|b| f.final_fidelity > b.final_fidelity)
        {
            best_any = Some(f);
        }
        if !next_non_increasing(&mut rounds, max_rounds) {
            break;
        }
    }
    Ok(best_ok.or(best_any).expect("at least one policy evaluated"))
}

/// Advance to the next non-increasing sequence in lexicographic order.
fn next_non_increasing(seq: &mut [u32], max: u32) -> bool {
    for i in (0..seq.len()).rev() {
        let cap = if i == 0 { max } else { seq[i - 1] };
        if seq[i] < cap {
            seq[i] += 1;
            for x in seq.iter_mut().skip(i + 1) {
                *x = 0;
            }
            return true;
        }
    }
    false
}

/// White-noise family swept over success probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhiteNoiseFamily {
    pub eps_init: f64,
    pub eps_gate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub success_probability: f64,
    pub rate_hz: f64,
    pub rate_std_hz: f64,
    pub final_fidelity: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub rows: Vec<RateRow>,
    pub policy: PolicyForecast,
    pub exponent: PowerLawFit,
}

/// Least-squares slope of log y against log x with a 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub ci95: (f64, f64),
}

pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(RepeaterError::InsufficientRuns {
            needed: 3,
            got: pts.len(),
        });
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (ssr / (m - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, m - 2.0)
        .expect("positive dof")
        .inverse_cdf(0.975);
    Ok(PowerLawFit {
        exponent: slope,
        prefactor: intercept.exp(),
        ci95: (slope - t * se, slope + t * se),
    })
}

/// Rate against success probability for a white-noise family, with the
/// policy targeted once (it does not depend on the success probability).
pub fn rate_study(
    cfg: &NetworkConfig,
    family: WhiteNoiseFamily,
    ps_grid: &[f64],
    target_fidelity: f64,
    trials: usize,
    n_deliver: usize,
    seed: u64,
) -> Result<RateStudy> {
    if ps_grid.len() < 4 {
        return Err(RepeaterError::InsufficientRuns {
            needed: 4,
            got: ps_grid.len(),
        });
    }
    let probe = NoiseModel::WhiteNoise {
        eps_init: family.eps_init,
        eps_gate: family.eps_gate,
        success_probability: 1.0,
    };
    let (source, gate) = probe.resolve()?;
    let policy = target_policy(cfg, &source, &gate, target_fidelity, MAX_ROUNDS_PER_LEVEL)?;
    let jobs: Vec<(usize, usize)> = (0..ps_grid.len())
        .flat_map(|i| (0..trials).map(move |j| (i, j)))
        .collect();
    let results: Vec<(usize, Result<SimResult>)> = jobs
        .into_par_iter()
        .map(|(i, j)| {
            let noise = NoiseModel::WhiteNoise {
                eps_init: family.eps_init,
                eps_gate: family.eps_gate,
                success_probability: ps_grid[i],
            };
            let mut rng = trial_rng(seed, (i * trials + j) as u64);
            (
                i,
                run_simulation_with_rng(cfg, &policy.policy, &noise, n_deliver, &mut rng, None),
            )
        })
        .collect();
    let mut rows = Vec::new();
    for (i, &ps) in ps_grid.iter().enumerate() {
        let runs: Vec<&SimResult> = results
            .iter()
            .filter(|(k, _)| *k == i)
            .filter_map(|(_, r)| r.as_ref().ok())
            .collect();
        if runs.is_empty() {
            continue;
        }
        let rates: Vec<f64> = runs.iter().map(|r| r.rate_hz).collect();
        let (rate, rate_std) = mean_std(&rates);
        rows.push(RateRow {
            success_probability: ps,
            rate_hz: rate,
            rate_std_hz: if runs.len() > 1 {
                rate_std
            } else {
                runs[0].std_interval_s / runs[0].mean_interval_s.powi(2)
            },
            final_fidelity: runs.iter().map(|r| r.final_fidelity).sum::<f64>() / runs.len() as f64,
            trials: runs.len(),
        });
    }
    if rows.len() < 4 {
        return Err(RepeaterError::InsufficientRuns {
            needed: 4,
            got: rows.len(),
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.success_probability).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.rate_hz).collect();
    let exponent = fit_power_law(&xs, &ys)?;
    Ok(RateStudy {
        rows,
        policy,
        exponent,
    })
}

/// Independent stream `trial` derived from a master seed.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}
