//! One recurrence purification step and one entanglement swap, on Werner
//! pairs and on the pairs a 10 km link actually produces.

use hqr::czgate::GateChannel;
use hqr::densmat::DensityMatrix;
use hqr::entangle::{self, Geometry, LinkParams, ELL0_KM};
use hqr::repeater::{self, GateNoise};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>6} {:>10} {:>10} {:>10}", "F", "purified", "p_success", "swapped");
    for f in [0.6, 0.7, 0.8, 0.9, 0.99] {
        let w = DensityMatrix::werner(f);
        let out = repeater::purify_states(&w, &w, &GateNoise::Ideal)?;
        let swapped = repeater::swap_states(&w, &w, &GateNoise::Ideal)?;
        println!(
            "{f:>6.2} {:>10.5} {:>10.5} {:>10.5}",
            out.fidelity(),
            out.success_probability,
            swapped.bell_fidelity()
        );
    }

    let link = LinkParams::optimized_over_fiber(10.0, ELL0_KM, 0.5, 0.01, Geometry::EndDetection)?;
    let pair = entangle::post_selected_state(&link)?.rho12;
    println!("\nlink pair: F = {:.4}", pair.bell_fidelity());
    for (label, gate) in [
        ("ideal gates", GateNoise::Ideal),
        ("0.5% local loss", GateNoise::Channel(GateChannel::semi_ideal(0.01, 0.995)?)),
    ] {
        let mut state = pair.clone();
        print!("{label:>16}:");
        for _ in 0..4 {
            let out = repeater::purify_states(&state, &pair, &gate)?;
            state = out.state.expect("parity check can pass");
            print!("  {:.4} (p = {:.3})", state.bell_fidelity(), out.success_probability);
        }
        println!();
    }
    Ok(())
}
