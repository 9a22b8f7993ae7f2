//! Dormand–Prince 5(4) integrator with an embedded error estimate.
//!
//! Small, fixed-size real state vectors only; complex states are packed as
//! interleaved real and imaginary parts by the caller.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size collapsed to {h:e} at t = {t} after {rejected} consecutive rejections")]
    StepCollapse { t: f64, h: f64, rejected: usize },
    #[error("exceeded {0} steps")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    /// Smallest step, relative to the span, before giving up.
    pub h_min_rel: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: None,
            h_min_rel: 1e-14,
            max_steps: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// Integrate `y' = f(t, y)` from `t0` to `t1`, calling `observe` after
/// every accepted step (and once at `t0`).
pub fn integrate<const N: usize>(
    mut f: impl FnMut(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t1: f64,
    opts: OdeOptions,
    mut observe: impl FnMut(f64, &[f64; N]),
) -> Result<([f64; N], OdeStats), OdeError> {
    let span = t1 - t0;
    let mut stats = OdeStats::default();
    let mut t = t0;
    let mut y = y0;
    observe(t, &y);
    if span == 0.0 {
        return Ok((y, stats));
    }
    let dir = span.signum();
    let h_min = span.abs() * opts.h_min_rel;
    let mut k1 = f(t, &y);
    stats.evaluations += 1;
    let mut h = opts
        .h_init
        .unwrap_or_else(|| initial_step(&y, &k1, opts, span.abs()))
        * dir;
    let mut rejected_run = 0;

    while (t1 - t) * dir > 0.0 {
        if stats.accepted >= opts.max_steps {
            return Err(OdeError::TooManySteps(opts.max_steps));
        }
        if (t + h - t1) * dir > 0.0 {
            h = t1 - t;
        }
        let k2 = f(t + C2 * h, &axpy(&y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(&y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &axpy(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y_new = axpy(
            &y,
            h,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = f(t + h, &y_new);
        stats.evaluations += 6;

        let mut err = 0.0;
        for i in 0..N {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / scale).powi(2);
        }
        let err = (err / N as f64).sqrt();
        if !err.is_finite() {
            return Err(OdeError::NonFinite(t));
        }

        if err <= 1.0 {
            t += h;
            y = y_new;
            k1 = k7;
            stats.accepted += 1;
            rejected_run = 0;
            observe(t, &y);
            let grow = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= grow;
        } else {
            stats.rejected += 1;
            rejected_run += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
            if h.abs() < h_min {
                return Err(OdeError::StepCollapse {
                    t,
                    h: h.abs(),
                    rejected: rejected_run,
                });
            }
        }
    }
    Ok((y, stats))
}

fn initial_step<const N: usize>(y: &[f64; N], dy: &[f64; N], opts: OdeOptions, span: f64) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let sc = opts.atol + opts.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (dy[i] / sc).powi(2);
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    h.min(span / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let (y, stats) = integrate(
            |_, y: &[f64; 1]| [-y[0]],
            0.0,
            [1.0],
            5.0,
            OdeOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-10);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn harmonic_oscillator_conserves_phase() {
        let w = 30.0;
        let (y, _) = integrate(
            |_, y: &[f64; 2]| [-w * y[1], w * y[0]],
            0.0,
            [1.0, 0.0],
            10.0,
            OdeOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - (w * 10.0f64).cos()).abs() < 1e-7);
        assert!((y[1] - (w * 10.0f64).sin()).abs() < 1e-7);
    }

    #[test]
    fn backward_integration() {
        let (y, _) = integrate(
            |t, _: &[f64; 1]| [2.0 * t],
            2.0,
            [4.0],
            0.0,
            OdeOptions::default(),
            |_, _| {},
        )
        .unwrap();
        assert!(y[0].abs() < 1e-10);
    }

    #[test]
    fn blow_up_is_reported() {
        let res = integrate(
            |_, y: &[f64; 1]| [y[0] * y[0]],
            0.0,
            [1.0],
            2.0,
            OdeOptions::default(),
            |_, _| {},
        );
        assert!(res.is_err());
    }
}
