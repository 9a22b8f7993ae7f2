//! Property checks shared by the proptest suite and the acceptance run.
#![allow(dead_code)]

use hqr::cqed::{self, Material, MaterialPreset, PulseParams};
use hqr::czgate::{self, CZParams, GateChannel};
use hqr::densmat::{self, CMatrix, DensityMatrix, KrausSet, C64};
use hqr::entangle;
use hqr::repeater::{self, GateNoise, NetworkConfig, NoiseModel, ProtocolPolicy};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub type PropResult = Result<(), TestCaseError>;

/// Random mixed state of `n` qubits: `AA†/tr(AA†)` for a complex Gaussian-ish `A`.
pub fn density(n: usize) -> impl Strategy<Value = DensityMatrix> {
    let dim = 1 << n;
    prop::collection::vec(-1.0f64..1.0, 2 * dim * dim).prop_map(move |v| {
        let a = CMatrix::from_fn(dim, dim, |r, c| {
            let k = 2 * (r * dim + c);
            C64::new(v[k], v[k + 1])
        });
        let m = &a * a.adjoint();
        let tr = m.trace();
        DensityMatrix::new(m / tr).expect("AA† is a state")
    })
}

pub fn cz_params() -> impl Strategy<Value = CZParams> {
    (
        prop::array::uniform4((1.0f64..15.0, -3.2f64..3.2)),
        prop::array::uniform4(-0.05f64..0.05),
        prop::array::uniform4(0.7f64..1.0),
    )
        .prop_map(|(amps, theta, t)| {
            let alpha = amps.map(|(r, phi)| C64::from_polar(r, phi));
            CZParams::new(alpha, theta, t).expect("transmissions are in range")
        })
}

fn check_state(rho: &DensityMatrix, what: &str) -> PropResult {
    let m = rho.matrix();
    prop_assert!((rho.trace() - 1.0).abs() < 1e-10, "{what}: trace {}", rho.trace());
    prop_assert!(densmat::hermiticity_error(m) < 1e-12, "{what}: not Hermitian");
    prop_assert!(rho.min_eigenvalue() > -1e-10, "{what}: eigenvalue {}", rho.min_eigenvalue());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ChannelCase {
    pub rho: DensityMatrix,
    pub left: DensityMatrix,
    pub right: DensityMatrix,
    pub gamma1: f64,
    pub xi1: f64,
    pub qubit: usize,
    pub pair: (usize, usize),
    pub theta: f64,
    pub transmission: f64,
    pub eps: f64,
    pub cz: CZParams,
}

pub fn channel_case() -> impl Strategy<Value = ChannelCase> {
    (
        density(4),
        density(2),
        density(2),
        (0.0f64..5.0, -10.0f64..10.0, 0usize..4),
        (0usize..4, 1usize..4),
        (1e-3f64..0.05, 0.8f64..1.0, 0.0f64..0.2),
        cz_params(),
    )
        .prop_map(|(rho, left, right, (gamma1, xi1, qubit), (c, shift), (theta, transmission, eps), cz)| {
            ChannelCase {
                rho,
                left,
                right,
                gamma1,
                xi1,
                qubit,
                pair: (c, (c + shift) % 4),
                theta,
                transmission,
                eps,
                cz,
            }
        })
}

/// Every channel in the crate maps states to states.
pub fn channels_keep_states_valid(case: &ChannelCase) -> PropResult {
    let err = |e: &dyn std::fmt::Display| TestCaseError::fail(e.to_string());
    let dephased = case
        .rho
        .apply_kraus_on(&entangle::q1_channel(case.gamma1, case.xi1), &[case.qubit])
        .map_err(|e| err(&e))?;
    check_state(&dephased, "dephasing")?;

    let gate = GateChannel::semi_ideal(case.theta, case.transmission).map_err(|e| err(&e))?;
    let (c, t) = case.pair;
    let cx = czgate::noisy_cx(&case.rho, &gate, c, t).map_err(|e| err(&e))?;
    check_state(&cx, "semi-ideal C-X")?;

    let general = GateChannel::from_params(&case.cz).map_err(|e| err(&e))?;
    let two = case.left.apply_kraus(&general.cx_kraus()).map_err(|e| err(&e))?;
    check_state(&two, "general C-X")?;

    let noise = [
        GateNoise::WhiteNoise { eps: case.eps },
        GateNoise::Channel(gate),
    ];
    for g in &noise {
        let out = repeater::purify_states(&case.left, &case.right, g).map_err(|e| err(&e))?;
        prop_assert!((0.0..=1.0).contains(&out.success_probability));
        if let Some(kept) = &out.state {
            check_state(kept, "purification")?;
        }
        let swapped = repeater::swap_states(&case.left, &case.right, g).map_err(|e| err(&e))?;
        check_state(&swapped, "swap")?;
    }

    let m = case.rho.measure(&[case.qubit], &[1]).map_err(|e| err(&e))?;
    if let Some(post) = &m.state {
        check_state(post, "measurement")?;
    }
    Ok(())
}

fn check_complete(k: &KrausSet, what: &str) -> PropResult {
    prop_assert!(k.completeness_error() < 1e-10, "{what}: Σ K†K − I = {:e}", k.completeness_error());
    Ok(())
}

/// Σ K†K = I for every Kraus set the crate builds.
pub fn kraus_sets_complete(case: &ChannelCase) -> PropResult {
    let err = |e: &dyn std::fmt::Display| TestCaseError::fail(e.to_string());
    check_complete(&entangle::q1_channel(case.gamma1, case.xi1), "dephasing")?;
    let semi = GateChannel::semi_ideal(case.theta, case.transmission).map_err(|e| err(&e))?;
    check_complete(&semi.kraus, "semi-ideal distortion")?;
    check_complete(&semi.cx_kraus(), "semi-ideal C-X")?;
    let general = GateChannel::from_params(&case.cz).map_err(|e| err(&e))?;
    check_complete(&general.kraus, "general distortion")?;
    let (c, t) = case.pair;
    let embedded = czgate::embedded_cx(&general, c, t, 4).map_err(|e| err(&e))?;
    check_complete(&embedded, "embedded C-X")?;
    let lambda_sum: f64 = general.lambdas.iter().sum();
    prop_assert!((lambda_sum - 1.0).abs() < 1e-10, "λ sum {lambda_sum}");
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct SimCase {
    pub seed: u64,
    pub success_probability: f64,
    pub rounds: u32,
}

pub fn sim_case() -> impl Strategy<Value = SimCase> {
    (any::<u64>(), 0.05f64..0.6, 0u32..3).prop_map(|(seed, success_probability, rounds)| SimCase {
        seed,
        success_probability,
        rounds,
    })
}

/// The same seed reproduces a simulation bit for bit.
pub fn simulation_deterministic(case: &SimCase) -> PropResult {
    let cfg = NetworkConfig::new(4, 10.0);
    let policy = ProtocolPolicy::new(vec![case.rounds, 0, 0]);
    let noise = NoiseModel::WhiteNoise {
        eps_init: 0.1,
        eps_gate: 0.01,
        success_probability: case.success_probability,
    };
    let run = || repeater::run_simulation(&cfg, &policy, &noise, 4, case.seed);
    let (a, b) = (run(), run());
    let (a, b) = match (a, b) {
        (Ok(a), Ok(b)) => (a, b),
        (a, b) => return Err(TestCaseError::fail(format!("{a:?} / {b:?}"))),
    };
    prop_assert_eq!(a, b);
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ScaleCase {
    pub factor: f64,
    pub alpha: f64,
    pub detuning: f64,
    pub sigma_p: f64,
}

pub fn scale_case() -> impl Strategy<Value = ScaleCase> {
    (-2.0f64..2.0, 0.5f64..20.0, 20.0f64..200.0, 10e-9f64..60e-9).prop_map(
        |(log_c, alpha, detuning, sigma_p)| ScaleCase {
            factor: 10f64.powf(log_c),
            alpha,
            detuning,
            sigma_p,
        },
    )
}

/// Speeding every rate up by `c` and shortening the pulse by `c` leaves the
/// phase, loss, distinguishability and fidelity unchanged.
pub fn cqed_scale_invariant(case: &ScaleCase) -> PropResult {
    let err = |e: &dyn std::fmt::Display| TestCaseError::fail(e.to_string());
    let si = MaterialPreset::get(Material::Silicon).params;
    let p = si.with_detuning(case.detuning * si.g_prime());
    let pulse = PulseParams {
        alpha: case.alpha,
        sigma_p: case.sigma_p,
    };
    let fast = PulseParams {
        sigma_p: case.sigma_p / case.factor,
        ..pulse
    };
    let base = cqed::solve_bloch(&p, &pulse).map_err(|e| err(&e))?;
    let scaled = cqed::solve_bloch(&p.rescaled(case.factor), &fast).map_err(|e| err(&e))?;
    let a = cqed::interaction_result(&base).map_err(|e| err(&e))?;
    let b = cqed::interaction_result(&scaled).map_err(|e| err(&e))?;
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1e-12);
    prop_assert!(close(a.theta, b.theta), "θ {} vs {}", a.theta, b.theta);
    prop_assert!(close(a.loss, b.loss), "loss {} vs {}", a.loss, b.loss);
    prop_assert!(close(a.d, b.d), "d {} vs {}", a.d, b.d);
    prop_assert!(close(a.fidelity, b.fidelity), "F {} vs {}", a.fidelity, b.fidelity);
    prop_assert!(base.loss_identity_residual.abs() < 1e-6);
    prop_assert!(scaled.loss_identity_residual.abs() < 1e-6);
    Ok(())
}
