//! Phase shift and loss of a bright pulse reflected off a silicon donor
//! cavity, from the semiclassical Bloch equations and from perturbation
//! theory, then the pulse settings needed for a target distinguishability.

use hqr::cqed::{self, Material, MaterialPreset, PulseParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let si = MaterialPreset::get(Material::Silicon).params;
    let g = si.g_prime();
    println!("silicon: Φ = {:.2}, g' = {:.3e} rad/s", cqed::cooperativity(&si), g);

    let pulse = PulseParams {
        alpha: 0.5,
        sigma_p: 300e-9,
    };
    println!("\n{:>8} {:>12} {:>12} {:>12} {:>12}", "ω₀/g'", "θ", "θ (pert.)", "loss", "loss (pert.)");
    for w in [20.0, 56.0, 200.0] {
        let p = si.with_detuning(w * g);
        let traj = cqed::solve_bloch(&p, &pulse)?;
        let r = cqed::interaction_result(&traj)?;
        let est = cqed::perturbative_oracle(&p, &pulse)?;
        println!(
            "{w:>8} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}",
            r.theta,
            est.theta2,
            r.loss,
            est.l2 + est.l3
        );
    }

    println!("\nreaching d = 1.6 along αω₀ = 10⁶ g':");
    for sigma_ns in [100.0, 300.0, 1000.0] {
        match cqed::tune_to_distinguishability(&si, sigma_ns * 1e-9, 1e6, 1.6, 4.0)? {
            Some(pt) => println!(
                "  σ = {sigma_ns:>6} ns: α = {:>8.1}, ω₀/g' = {:>8.2}, F = {:.4}",
                pt.alpha,
                pt.omega0 / g,
                pt.result.fidelity
            ),
            None => println!("  σ = {sigma_ns:>6} ns: d = 1.6 is out of reach"),
        }
    }
    Ok(())
}
