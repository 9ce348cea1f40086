//! Reference computations shared by integration tests.

use num_complex::Complex64;
use omm_core::dynamics::SystemParams;

/// Cavity phase for photon number `l` at a complex trap frequency, with the
/// couplings scaled as ω^{-1/2} from their values at `omega0`.
fn phase(l: f64, w: Complex64, t: f64, chi0: f64, s0: f64, omega0: f64) -> Complex64 {
    let scale = (Complex64::new(omega0, 0.0) / w).sqrt();
    let k = (scale * chi0 * l + scale * s0) / w;
    k * k * (w * t - (w * t).sin())
}

/// `4 Var_l(∂φ_l/∂ω)` over a Poisson photon distribution, derivative by complex step.
pub fn poisson_oracle(p: &SystemParams, n: u32) -> f64 {
    let big_n = p.photon_number();
    let t = 2.0 * std::f64::consts::PI * n as f64 / p.omega;
    let h = 1e-20 * p.omega;
    let top = (big_n + 10.0 * big_n.sqrt() + 50.0).ceil() as usize;
    let mut ln_fact = 0.0;
    let mut weights = Vec::with_capacity(top + 1);
    let mut slopes = Vec::with_capacity(top + 1);
    for l in 0..=top {
        if l > 0 {
            ln_fact += (l as f64).ln();
        }
        let ln_w = if big_n > 0.0 { -big_n + l as f64 * big_n.ln() - ln_fact } else if l == 0 { 0.0 } else { f64::NEG_INFINITY };
        weights.push(ln_w.exp());
        let z = phase(l as f64, Complex64::new(p.omega, h), t, p.chi, p.s, p.omega);
        slopes.push(z.im / h);
    }
    let total: f64 = weights.iter().sum();
    let mean: f64 = weights.iter().zip(&slopes).map(|(w, s)| w * s).sum::<f64>() / total;
    let var: f64 = weights.iter().zip(&slopes).map(|(w, s)| w * (s - mean).powi(2)).sum::<f64>() / total;
    4.0 * var
}
