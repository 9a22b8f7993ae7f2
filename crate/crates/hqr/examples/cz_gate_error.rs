//! Infidelity of the measurement-free C-Z gate caused by local photon loss.

use hqr::czgate::{self, GateChannel};
use hqr::densmat::{Bell, DensityMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let losses = [1e-4, 1e-3, 3e-3, 1e-2, 3e-2];
    let thetas = [1e-3, 1e-2, 1e-1];
    print!("{:>8}", "loss");
    for t in thetas {
        print!("  θ = {t:<8}");
    }
    println!();
    let rows = czgate::cz_error_curve(&thetas, &losses)?;
    for (i, loss) in losses.iter().enumerate() {
        print!("{loss:>8.0e}");
        for j in 0..thetas.len() {
            print!("  {:<12.4e}", rows[j * losses.len() + i].one_minus_lambda0);
        }
        println!();
    }

    // A C-X built from the lossy C-Z, acting on half of each of two Bell pairs.
    let gate = GateChannel::semi_ideal(0.01, 0.99)?;
    let psi = DensityMatrix::bell(Bell::PsiPlus);
    let pairs = psi.tensor(&psi)?;
    let ideal = czgate::noisy_cx(&pairs, &GateChannel::ideal(), 0, 2)?;
    let noisy = czgate::noisy_cx(&pairs, &gate, 0, 2)?;
    let overlap = (ideal.matrix() * noisy.matrix()).trace().re;
    println!("\nT = 0.99: λ₀ = {:.6}, overlap with the ideal output = {overlap:.6}", gate.lambda0);
    Ok(())
}
