mod common;

use common::*;
use hqr::densmat::DensityMatrix;
use hqr::entangle;
use hqr::repeater::{self, GateNoise};
use proptest::prelude::*;

fn werner_purified(f: f64) -> (f64, f64) {
    let b = (1.0 - f) / 3.0;
    let p = f * f + 2.0 * f * b + 5.0 * b * b;
    ((f * f + b * b) / p, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channels_map_states_to_states(case in channel_case()) {
        channels_keep_states_valid(&case)?;
    }

    #[test]
    fn kraus_sets_are_complete(case in channel_case()) {
        kraus_sets_complete(&case)?;
    }

    #[test]
    fn same_seed_same_run(case in sim_case()) {
        simulation_deterministic(&case)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cavity_response_is_scale_free(case in scale_case()) {
        cqed_scale_invariant(&case)?;
    }
}

proptest! {
    #[test]
    fn noiseless_purification_follows_werner_map(f in 0.3f64..1.0) {
        let w = DensityMatrix::werner(f);
        let out = repeater::purify_states(&w, &w, &GateNoise::Ideal).unwrap();
        let (f_next, p) = werner_purified(f);
        prop_assert!((out.fidelity() - f_next).abs() < 1e-9);
        prop_assert!((out.success_probability - p).abs() < 1e-9);
        if f > 0.5 + 1e-9 {
            prop_assert!(out.fidelity() > f);
        }
    }

    #[test]
    fn noiseless_swap_of_werner_pairs(fa in 0.25f64..1.0, fb in 0.25f64..1.0) {
        let out = repeater::swap_states(
            &DensityMatrix::werner(fa),
            &DensityMatrix::werner(fb),
            &GateNoise::Ideal,
        )
        .unwrap();
        let expect = fa * fb + (1.0 - fa) * (1.0 - fb) / 3.0;
        prop_assert!((out.bell_fidelity() - expect).abs() < 1e-12);
    }

    #[test]
    fn gate_noise_never_helps(f in 0.55f64..1.0, eps in 0.0f64..0.3) {
        let w = DensityMatrix::werner(f);
        let clean = repeater::purify_states(&w, &w, &GateNoise::Ideal).unwrap().fidelity();
        let noisy = repeater::purify_states(&w, &w, &GateNoise::WhiteNoise { eps }).unwrap().fidelity();
        prop_assert!(noisy <= clean + 1e-12);
    }

    #[test]
    fn wider_window_accepts_more(d in 0.1f64..4.0, t in 0.2f64..1.0, pc in 0.0f64..2.0, extra in 0.0f64..1.0) {
        let narrow = entangle::success_probability(d, t, pc);
        let wide = entangle::success_probability(d, t, pc + extra);
        prop_assert!(wide >= narrow - 1e-15);
        prop_assert!((0.0..=1.0).contains(&narrow));
    }

    #[test]
    fn fidelity_stays_in_unit_interval(d in 0.0f64..6.0, t in 0.05f64..1.0, pc in 0.0f64..3.0, g in 0.0f64..10.0) {
        let f = entangle::entanglement_fidelity(d, t, pc, g);
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
