//! Fidelity against success probability for a 10 km fiber link.
//!
//! Widening the homodyne window raises the success probability but admits
//! more ambiguous outcomes; `d` is re-optimized for every window.

use hqr::entangle::{self, Geometry, LinkParams, ELL0_KM};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let link = LinkParams::optimized_over_fiber(10.0, ELL0_KM, 0.5, 0.01, Geometry::EndDetection)?;
    let derived = entangle::derived(&link)?;
    let state = entangle::post_selected_state(&link)?;
    println!(
        "10 km, pc = 0.5: T = {:.3}, d = {:.3}, Ps = {:.4}, F = {:.4} (closed form {:.4})",
        link.transmission,
        derived.d,
        state.ps,
        state.fidelity,
        entangle::entanglement_fidelity(derived.d, link.transmission, link.pc, derived.gamma1),
    );

    println!("\n{:>8} {:>6} {:>7} {:>7} {:>7}", "l/l0", "pc", "d", "Ps", "F");
    let windows: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
    for ell in [0.2, 0.4, 0.8] {
        for row in entangle::fidelity_ps_curve(ell, &windows, Geometry::EndDetection) {
            println!(
                "{:>8.2} {:>6.2} {:>7.3} {:>7.4} {:>7.4}",
                row.ell_over_ell0, row.pc, row.d, row.ps, row.fidelity
            );
        }
    }
    Ok(())
}
