//! Quantum and classical Fisher information for estimating the trap
//! frequency ω, and through `dω/dd` the array separation `d`.
//!
//! Time-domain quantities are computed with respect to ω (χ and S co-vary
//! with ω through [`ScalingLaw`]) and converted to `d` at the end.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::channels::{CollisionConfig, CollisionModel};
use crate::dynamics::{self, kerr_phase, ScalingLaw, SystemParams, ThermalFactor};
use crate::error::{Error, Result};
use crate::hilbert::{self, coherent_state, eig_hermitian, quadrature, CMatrix, CVector, DensityMatrix, StateVector};

/// Pair cutoff `p_i + p_j` below which terms of the mixed-state QFI and SLD are dropped.
pub const EIGEN_CUTOFF: f64 = 1e-12;
/// Default relative step of central differences in ω.
pub const DERIVATIVE_STEP: f64 = 1e-6;
/// Relative step for the numerically traced joint evolution. At `1e-6` its
/// rounding noise fails the `h` vs `h/2` check near small eigenvalues of ρ;
/// much above `1e-5` the second-difference check fails after a few periods.
pub const JOINT_DERIVATIVE_STEP: f64 = 1e-5;
/// Relative step for collision-model families, whose rounding error also
/// grows with the number of steps.
pub const LOSSY_DERIVATIVE_STEP: f64 = 1e-5;
/// Agreement demanded between derivative estimates at `h` and `h/2`.
pub const RICHARDSON_TOL: f64 = 1e-6;
/// Second-difference residual above which a derivative step is rejected.
pub const SECOND_DIFFERENCE_LIMIT: f64 = 1e-4;
/// Probability floor for classical Fisher information.
pub const PROBABILITY_FLOOR: f64 = 1e-14;
/// QFI for `d` quoted for the device parameters with `|α|² = 10⁶`, m⁻².
pub const HEADLINE_QFI_D: f64 = 7.6e38;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    Omega,
    D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PureAnalytic,
    PureOverlap,
    MixedEigen,
    FidelityOracle,
    SldProjective,
    Homodyne,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::PureAnalytic => "pure-analytic",
            Method::PureOverlap => "pure-overlap",
            Method::MixedEigen => "mixed-eigen",
            Method::FidelityOracle => "fidelity-oracle",
            Method::SldProjective => "sld-projective",
            Method::Homodyne => "homodyne",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Per squared unit of ω (s² for physical ω, dimensionless in scaled units).
    PerOmegaSquared,
    PerMeterSquared,
}

impl Units {
    pub fn label(self) -> &'static str {
        match self {
            Units::PerOmegaSquared => "1/omega^2",
            Units::PerMeterSquared => "1/m^2",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Metadata {
    pub t: Option<f64>,
    pub alpha: Option<Complex64>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub n: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub value: f64,
    pub parameter: Parameter,
    pub units: Units,
    pub method: Method,
    /// Relative step of the finite difference that produced the derivative, if any.
    pub derivative_step: Option<f64>,
    pub metadata: Metadata,
    pub warnings: Vec<String>,
}

impl EstimationResult {
    fn omega(value: f64, method: Method) -> Self {
        Self {
            value,
            parameter: Parameter::Omega,
            units: Units::PerOmegaSquared,
            method,
            derivative_step: None,
            metadata: Metadata::default(),
            warnings: Vec::new(),
        }
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{}: {msg}", self.method.label());
        self.warnings.push(msg);
    }

    /// Converts information about ω into information about `d`.
    pub fn to_distance(&self, dwdd: f64) -> Self {
        match self.parameter {
            Parameter::D => self.clone(),
            Parameter::Omega => Self {
                value: self.value * dwdd * dwdd,
                parameter: Parameter::D,
                units: Units::PerMeterSquared,
                ..self.clone()
            },
        }
    }
}

/// States at `x − h`, `x`, `x + h`.
#[derive(Debug, Clone)]
pub struct DerivativePair<T> {
    pub minus: T,
    pub center: T,
    pub plus: T,
    /// Absolute step `h`.
    pub step: f64,
    /// Relative step `h / x`.
    pub relative_step: f64,
    pub warnings: Vec<String>,
}

impl DerivativePair<DensityMatrix> {
    /// Central difference `(ρ₊/tr ρ₊ − ρ₋/tr ρ₋)/2h`, with the remaining
    /// rounding-level trace removed from the diagonal.
    pub fn derivative(&self) -> CMatrix {
        let unit = |r: &DensityMatrix| r.matrix() / r.trace();
        let mut d = hilbert::hermitize(&((unit(&self.plus) - unit(&self.minus)) / Complex64::new(2.0 * self.step, 0.0)));
        let n = d.nrows();
        let shift = hilbert::trace(&d) / Complex64::new(n as f64, 0.0);
        for i in 0..n {
            d[(i, i)] -= shift;
        }
        d
    }
}

impl DerivativePair<StateVector> {
    pub fn derivative(&self) -> CVector {
        (self.plus.amplitudes() - self.minus.amplitudes()) / Complex64::new(2.0 * self.step, 0.0)
    }
}

/// Anything a central difference can be taken of.
pub trait Differentiable: Clone {
    fn flat(&self) -> Vec<Complex64>;
}

impl Differentiable for DensityMatrix {
    fn flat(&self) -> Vec<Complex64> {
        self.matrix().iter().cloned().collect()
    }
}

impl Differentiable for StateVector {
    fn flat(&self) -> Vec<Complex64> {
        self.amplitudes().iter().cloned().collect()
    }
}

fn norm(v: impl Iterator<Item = Complex64>) -> f64 {
    v.map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Samples `family` around `x` with relative step `rel_step` and checks the
/// central difference against the one at half the step.
///
/// A second-difference residual `‖f₊ − 2f₀ + f₋‖ / ‖f₊ − f₋‖` above
/// [`SECOND_DIFFERENCE_LIMIT`] rejects the step; disagreement of the `h` and
/// `h/2` estimates above [`RICHARDSON_TOL`] is reported as a warning.
pub fn derivative_pair<T, F>(family: F, x: f64, rel_step: f64) -> Result<DerivativePair<T>>
where
    T: Differentiable,
    F: Fn(f64) -> Result<T>,
{
    if !(rel_step > 0.0) || rel_step > 0.1 {
        return Err(Error::DerivativeStep(format!("relative step {rel_step} outside (0, 0.1]")));
    }
    let h = rel_step * x.abs().max(f64::MIN_POSITIVE);
    let (minus, center, plus) = (family(x - h)?, family(x)?, family(x + h)?);
    let (fm, f0, fp) = (minus.flat(), center.flat(), plus.flat());
    let first = norm(fp.iter().zip(&fm).map(|(a, b)| a - b));
    let second = norm(fp.iter().zip(&fm).zip(&f0).map(|((a, b), c)| a - 2.0 * c + b));
    let mut warnings = Vec::new();
    // a parameter-independent family has no meaningful derivative scale to compare with
    let scale = norm(f0.iter().cloned());
    if first > 1e-13 * scale {
        let residual = second / first;
        if residual > SECOND_DIFFERENCE_LIMIT {
            return Err(Error::DerivativeStep(format!(
                "second-difference residual {residual:.3e} > {SECOND_DIFFERENCE_LIMIT:.0e} at h = {h:.3e}"
            )));
        }
        let (hm, hp) = (family(x - h / 2.0)?.flat(), family(x + h / 2.0)?.flat());
        let coarse: Vec<Complex64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        let fine: Vec<Complex64> = hp.iter().zip(&hm).map(|(a, b)| (a - b) / h).collect();
        let disagreement = norm(coarse.iter().zip(&fine).map(|(a, b)| a - b)) / norm(fine.iter().cloned());
        if disagreement > RICHARDSON_TOL {
            let msg = format!("h and h/2 derivatives differ by {disagreement:.3e} (relative)");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(DerivativePair {
        minus,
        center,
        plus,
        step: h,
        relative_step: rel_step,
        warnings,
    })
}

/// Closed-form QFI of the decoupled cavity state at `t_n = 2πn/ω`:
/// `4(6πn/ω³)² N χ² [6χ²N + 4χ²N² + (χ+2S)² + 8χSN] (dω/dd)²`, `N = |α|²`.
/// With `dwdd = 1` the result is per unit ω.
pub fn qfi_pure_analytic(p: &SystemParams, n: u32, dwdd: f64) -> EstimationResult {
    let big_n = p.photon_number();
    let (chi, s, w) = (p.chi, p.s, p.omega);
    let prefactor = (6.0 * PI * n as f64 / w.powi(3)).powi(2);
    let bracket = 6.0 * chi * chi * big_n + 4.0 * chi * chi * big_n * big_n + (chi + 2.0 * s).powi(2) + 8.0 * chi * s * big_n;
    let value = 4.0 * prefactor * big_n * chi * chi * bracket;
    let mut r = EstimationResult::omega(value, Method::PureAnalytic);
    r.metadata = Metadata {
        t: Some(p.decoupling_time(n)),
        alpha: Some(p.alpha),
        n: Some(n),
        ..Metadata::default()
    };
    if dwdd != 1.0 {
        r = r.to_distance(dwdd);
    }
    r
}

/// `dω/dd` at which the closed form reproduces [`HEADLINE_QFI_D`] for the
/// device parameters, `|α|² = 10⁶` and `n = 1`.
pub fn backsolved_dwdd() -> f64 {
    let per_omega = qfi_pure_analytic(&SystemParams::table1(), 1, 1.0).value;
    (HEADLINE_QFI_D / per_omega).sqrt()
}

/// Decoupled cavity state `Σ c_l e^{iφ_l(t)} |l⟩`, neglecting the
/// mechanical decoherence factor (exact at `t = 2πn/ω`).
pub fn kerr_state(t: f64, p: &SystemParams) -> Result<StateVector> {
    let psi = coherent_state(p.alpha, p.dims.0)?.warn("kerr state");
    let amps = CVector::from_fn(p.dims.0, |l, _| psi.amplitudes()[l] * Complex64::from_polar(1.0, kerr_phase(l, t, p)));
    StateVector::new(amps, vec![p.dims.0])
}

/// `∂φ_l/∂ω / k_l²` for `φ_l = k_l²(ωt − sin ωt)` with `k_l² ∝ ω⁻³`:
/// `t[(1 − cos x) − 3(x − sin x)/x]`, `x = ωt`, by series where it cancels.
fn kerr_phase_slope_factor(omega: f64, t: f64) -> f64 {
    let x = omega * t;
    if x.abs() < 0.1 {
        let x2 = x * x;
        t * x2 * x2 * (-1.0 / 60.0 + x2 * (1.0 / 1260.0 - x2 / 60480.0))
    } else {
        t * ((1.0 - x.cos()) - 3.0 * (x - x.sin()) / x)
    }
}

/// QFI in ω carried by the Kerr phases alone, `4 Var_l(∂φ_l/∂ω)` over the
/// truncated coherent-state weights, with χ, S ∝ ω^{-1/2}. It ignores the
/// mechanical entanglement and so coincides with the state QFI only at
/// `t = 2πn/ω`, where it equals [`qfi_pure_analytic`] up to truncation.
pub fn phase_qfi(t: f64, p: &SystemParams) -> Result<EstimationResult> {
    p.validate()?;
    let psi = coherent_state(p.alpha, p.dims.0)?.warn("phase qfi");
    let factor = kerr_phase_slope_factor(p.omega, t);
    let weights: Vec<f64> = psi.amplitudes().iter().map(|c| c.norm_sqr()).collect();
    let slopes: Vec<f64> = (0..p.dims.0).map(|l| ((p.chi * l as f64 + p.s) / p.omega).powi(2) * factor).collect();
    let mean: f64 = weights.iter().zip(&slopes).map(|(w, s)| w * s).sum();
    let var: f64 = weights.iter().zip(&slopes).map(|(w, s)| w * (s - mean).powi(2)).sum();
    let mut r = EstimationResult::omega(4.0 * var, Method::PureAnalytic);
    r.metadata.t = Some(t);
    r.metadata.alpha = Some(p.alpha);
    Ok(r)
}

/// `4[⟨∂ψ|∂ψ⟩ − |⟨ψ|∂ψ⟩|²]`.
pub fn qfi_pure_overlap(pair: &DerivativePair<StateVector>) -> Result<EstimationResult> {
    let psi = pair.center.amplitudes();
    let dpsi = pair.derivative();
    let value = 4.0 * (dpsi.dotc(&dpsi).re - psi.dotc(&dpsi).norm_sqr());
    let mut r = EstimationResult::omega(value.max(0.0), Method::PureOverlap);
    r.derivative_step = Some(pair.relative_step);
    r.warnings = pair.warnings.clone();
    Ok(r)
}

fn validate_drho(rho: &DensityMatrix, drho: &CMatrix) -> Result<()> {
    if drho.shape() != rho.matrix().shape() {
        return Err(Error::InvalidDimension(format!("drho {:?} vs rho {:?}", drho.shape(), rho.matrix().shape())));
    }
    let scale = drho.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if hilbert::hermiticity_defect(drho) > 1e-9 * scale {
        return Err(Error::InvalidState("drho is not Hermitian".into()));
    }
    if hilbert::trace(drho).norm() > 1e-9 * scale {
        return Err(Error::InvalidState(format!("drho has trace {}", hilbert::trace(drho))));
    }
    Ok(())
}

fn qfi_sum(p: &[f64], d: &CMatrix, cutoff: f64) -> f64 {
    let n = p.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let s = p[i] + p[j];
            if s > cutoff {
                acc += d[(i, j)].norm_sqr() / s;
            }
        }
    }
    2.0 * acc
}

/// `2 Σ_ij |⟨i|∂ρ|j⟩|² / (p_i + p_j)` over pairs with `p_i + p_j > cutoff`.
pub fn qfi_mixed(rho: &DensityMatrix, drho: &CMatrix, cutoff: f64) -> Result<EstimationResult> {
    validate_drho(rho, drho)?;
    let eig = rho.eigen()?;
    let d = eig.vectors.adjoint() * drho * &eig.vectors;
    let p: Vec<f64> = eig.values.iter().cloned().collect();
    let value = qfi_sum(&p, &d, cutoff);
    let mut r = EstimationResult::omega(value, Method::MixedEigen);
    let coarser = qfi_sum(&p, &d, cutoff * 10.0);
    if value > 0.0 && (coarser - value).abs() > 0.01 * value {
        r.warn(format!(
            "ill-conditioned: QFI changes from {value:.6e} to {coarser:.6e} when the cutoff grows tenfold"
        ));
    }
    Ok(r)
}

/// QFI of a sampled family, with the step metadata attached.
pub fn qfi_from_pair(pair: &DerivativePair<DensityMatrix>) -> Result<EstimationResult> {
    let mut r = qfi_mixed(&pair.center, &pair.derivative(), EIGEN_CUTOFF)?;
    r.derivative_step = Some(pair.relative_step);
    r.warnings.extend(pair.warnings.iter().cloned());
    Ok(r)
}

/// Symmetric logarithmic derivative in the original basis:
/// `L_ij = 2 (∂ρ)_ij / (p_i + p_j)` in the eigenbasis of ρ.
pub fn sld(rho: &DensityMatrix, drho: &CMatrix, cutoff: f64) -> Result<CMatrix> {
    validate_drho(rho, drho)?;
    let eig = rho.eigen()?;
    let d = eig.vectors.adjoint() * drho * &eig.vectors;
    let n = d.nrows();
    let l = CMatrix::from_fn(n, n, |i, j| {
        let s = eig.values[i] + eig.values[j];
        if s > cutoff {
            d[(i, j)] * (2.0 / s)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(hilbert::hermitize(&(&eig.vectors * l * eig.vectors.adjoint())))
}

/// Classical Fisher information of the projective measurement onto the
/// eigenvectors of `basis`: `Σ_k (∂p_k)²/p_k` over `p_k > floor`.
fn projective_cfi(rho: &DensityMatrix, drho: &CMatrix, basis: &CMatrix, floor: f64) -> (f64, f64) {
    let mut fisher = 0.0;
    let mut discarded = 0.0;
    for k in 0..basis.ncols() {
        let v = basis.column(k);
        let p = (v.adjoint() * rho.matrix() * v)[(0, 0)].re;
        let dp = (v.adjoint() * drho * v)[(0, 0)].re;
        if p > floor {
            fisher += dp * dp / p;
        } else {
            discarded += p.max(0.0);
        }
    }
    (fisher, discarded)
}

/// Fisher information of measuring in the eigenbasis of the SLD.
pub fn sld_projective_cfi(pair: &DerivativePair<DensityMatrix>) -> Result<EstimationResult> {
    let drho = pair.derivative();
    let l = sld(&pair.center, &drho, EIGEN_CUTOFF)?;
    let basis = eig_hermitian(&l)?.vectors;
    let (value, _) = projective_cfi(&pair.center, &drho, &basis, PROBABILITY_FLOOR);
    let mut r = EstimationResult::omega(value, Method::SldProjective);
    r.derivative_step = Some(pair.relative_step);
    r.warnings = pair.warnings.clone();
    Ok(r)
}

/// Homodyne detection of `x_θ = (a e^{−iθ} + a† e^{iθ})/√2`, with the
/// quadrature eigenprojectors of the truncated space as the POVM.
pub fn homodyne_cfi(pair: &DerivativePair<DensityMatrix>, theta: f64) -> Result<EstimationResult> {
    let dim = pair.center.dim();
    let basis = eig_hermitian(&quadrature(theta, dim)?)?.vectors;
    let (value, discarded) = projective_cfi(&pair.center, &pair.derivative(), &basis, PROBABILITY_FLOOR);
    let mut r = EstimationResult::omega(value, Method::Homodyne);
    r.derivative_step = Some(pair.relative_step);
    r.metadata.theta = Some(theta);
    r.warnings = pair.warnings.clone();
    if discarded > 0.01 {
        r.warn(format!("probability floor discards {:.2}% of the distribution", 100.0 * discarded));
    }
    Ok(r)
}

/// `F_Q ≈ 8[1 − F(ρ_x, ρ_{x+ε})]/ε²`, symmetrised over ±ε and Richardson-extrapolated from `ε` and `ε/2`.
pub fn qfi_fidelity<F>(family: F, x: f64, eps: f64) -> Result<EstimationResult>
where
    F: Fn(f64) -> Result<DensityMatrix>,
{
    let center = family(x)?;
    let estimate = |e: f64| -> Result<f64> {
        let up = 1.0 - hilbert::fidelity(&center, &family(x + e)?)?;
        let down = 1.0 - hilbert::fidelity(&center, &family(x - e)?)?;
        Ok(4.0 * (up + down) / (e * e))
    };
    let (coarse, fine) = (estimate(eps)?, estimate(eps / 2.0)?);
    let mut r = EstimationResult::omega(((4.0 * fine - coarse) / 3.0).max(0.0), Method::FidelityOracle);
    r.derivative_step = Some(eps / x.abs().max(f64::MIN_POSITIVE));
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    /// Largest |residual| of the fit in log10 F.
    pub max_residual: f64,
    pub warnings: Vec<String>,
}

/// Residual above which a fit is flagged as mixing regimes.
pub const REGIME_MIXING_RESIDUAL: f64 = 0.05;

/// Least-squares slope of log F against log N.
pub fn scaling_fit(n_values: &[f64], f_values: &[f64]) -> Result<ScalingFit> {
    if n_values.len() != f_values.len() || n_values.len() < 2 {
        return Err(Error::InvalidParameter("scaling fit needs matching arrays of at least two points".into()));
    }
    if n_values.iter().chain(f_values).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("scaling fit needs positive finite values".into()));
    }
    let x: Vec<f64> = n_values.iter().map(|v| v.log10()).collect();
    let y: Vec<f64> = f_values.iter().map(|v| v.log10()).collect();
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("N values must be strictly increasing".into()));
    }
    let decades = x[x.len() - 1] - x[0];
    if (x.len() - 1) as f64 / decades.max(f64::MIN_POSITIVE) < 5.0 - 1e-9 {
        return Err(Error::InvalidParameter(format!("{} points over {decades:.2} decades; need 5 per decade", x.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let max_residual = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - intercept - exponent * a).abs())
        .fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if max_residual > REGIME_MIXING_RESIDUAL {
        let msg = format!("fit residual {max_residual:.3} suggests mixed scaling regimes");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(ScalingFit {
        exponent,
        intercept,
        max_residual,
        warnings,
    })
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|k| 10f64.powf(a + (b - a) * k as f64 / (n - 1) as f64)).collect()
}

/// Where the photon-number scaling of the decoupled-state QFI changes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Crossovers {
    /// `(χ+2S)² = 8χSN`: shot-noise term meets the linear term.
    pub sql_to_linear_balance: f64,
    /// `8χSN = 4χ²N²`.
    pub linear_to_cubic_balance: f64,
    /// Local slope `d ln F / d ln N` equals 1.5.
    pub sql_to_linear_slope: f64,
    /// Local slope equals 2.5.
    pub linear_to_cubic_slope: f64,
}

/// Local slope `d ln F_Q / d ln N` of the closed form.
pub fn local_exponent(p: &SystemParams, big_n: f64) -> f64 {
    let (chi, s) = (p.chi, p.s);
    let c0 = (chi + 2.0 * s).powi(2);
    let c1 = 6.0 * chi * chi + 8.0 * chi * s;
    let c2 = 4.0 * chi * chi;
    let poly = c0 + c1 * big_n + c2 * big_n * big_n;
    1.0 + big_n * (c1 + 2.0 * c2 * big_n) / poly
}

pub fn crossovers(p: &SystemParams) -> Result<Crossovers> {
    let (chi, s) = (p.chi, p.s);
    if !(chi > 0.0 && s > 0.0) {
        return Err(Error::InvalidParameter("crossovers need chi > 0 and S > 0".into()));
    }
    let solve = |target: f64| -> Result<f64> {
        // the local exponent rises monotonically from 1 to 3
        let (mut lo, mut hi) = (-10.0f64, 40.0f64);
        if local_exponent(p, 10f64.powf(lo)) > target || local_exponent(p, 10f64.powf(hi)) < target {
            return Err(Error::NumericalFailure(format!("slope {target} not bracketed")));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if local_exponent(p, 10f64.powf(mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(10f64.powf(0.5 * (lo + hi)))
    };
    Ok(Crossovers {
        sql_to_linear_balance: (chi + 2.0 * s).powi(2) / (8.0 * chi * s),
        linear_to_cubic_balance: 2.0 * s / chi,
        sql_to_linear_slope: solve(1.5)?,
        linear_to_cubic_slope: solve(2.5)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceBound {
    pub variance: f64,
    pub std_dev: f64,
}

/// Quantum Cramér–Rao bound `Var ≥ 1/(M F)`.
pub fn qcrb_bound(fisher: f64, repetitions: u32) -> Result<VarianceBound> {
    if repetitions == 0 {
        return Err(Error::InvalidParameter("at least one repetition is needed".into()));
    }
    if !(fisher >= 0.0) || !fisher.is_finite() {
        return Err(Error::InvalidParameter(format!("Fisher information must be finite and >= 0, got {fisher}")));
    }
    if fisher == 0.0 {
        return Err(Error::UnboundedVariance);
    }
    let variance = 1.0 / (repetitions as f64 * fisher);
    Ok(VarianceBound {
        variance,
        std_dev: variance.sqrt(),
    })
}

/// Source of reduced cavity states as a function of ω.
#[derive(Debug, Clone, PartialEq)]
pub enum CavityModel {
    /// Closed-form reduced state.
    Analytic(ThermalFactor),
    /// Partial trace of the exact joint evolution.
    Joint,
}

impl CavityModel {
    /// Relative derivative step suited to the model's rounding level.
    pub fn derivative_step(&self) -> f64 {
        match self {
            CavityModel::Analytic(_) => DERIVATIVE_STEP,
            CavityModel::Joint => JOINT_DERIVATIVE_STEP,
        }
    }
}

/// Reduced cavity state at time `t` for trap frequency `omega`, with the
/// couplings following `law`.
pub fn cavity_state(model: &CavityModel, p: &SystemParams, law: &ScalingLaw, omega: f64, t: f64) -> Result<DensityMatrix> {
    let q = law.apply(p, omega);
    match model {
        CavityModel::Analytic(variant) => dynamics::reduced_cavity_analytic(t, &q, *variant),
        CavityModel::Joint => {
            let rho0 = dynamics::initial_state(&q)?;
            dynamics::reduced_cavity(&dynamics::evolve_joint(&rho0, t, &q)?)
        }
    }
}

/// `DerivativePair` in ω for the lossless evolution at time `t`.
pub fn unitary_pair(model: &CavityModel, p: &SystemParams, t: f64, rel_step: f64) -> Result<DerivativePair<DensityMatrix>> {
    let law = ScalingLaw::calibrate(p);
    derivative_pair(|w| cavity_state(model, p, &law, w, t), p.omega, rel_step)
}

/// QFI in ω of the lossless reduced cavity state at each time.
pub fn qfi_series(model: &CavityModel, p: &SystemParams, times: &[f64], rel_step: f64) -> Result<Vec<EstimationResult>> {
    use rayon::prelude::*;
    times
        .par_iter()
        .map(|&t| {
            let mut r = qfi_from_pair(&unitary_pair(model, p, t, rel_step)?)?;
            r.metadata.t = Some(t);
            r.metadata.alpha = Some(p.alpha);
            r.metadata.gamma = Some(0.0);
            Ok(r)
        })
        .collect()
}

/// Reduced cavity states of the lossy evolution at trap frequency `omega`,
/// recorded at the given step indices. The collision step length and angle
/// stay at their values for the reference frequency `p.omega`.
pub fn lossy_cavity_states(
    p: &SystemParams,
    c: &CollisionConfig,
    omega: f64,
    steps: &[usize],
) -> Result<Vec<DensityMatrix>> {
    c.validate()?;
    let law = ScalingLaw::calibrate(p);
    let q = law.apply(p, omega);
    let model = CollisionModel::new(&q, c.dt(p), c.phi(p), c.ancilla_dim)?;
    let last = steps.iter().cloned().max().unwrap_or(0);
    let rho0 = dynamics::initial_state(&q)?;
    let mut out: Vec<Option<DensityMatrix>> = vec![None; steps.len()];
    if let Some(k) = steps.iter().position(|&s| s == 0) {
        out[k] = Some(dynamics::reduced_cavity(&rho0)?);
    }
    model.run(&rho0, last, |k, _, rho| {
        let cavity = if steps.contains(&k) { Some(dynamics::reduced_cavity(rho)?) } else { None };
        for (slot, &s) in out.iter_mut().zip(steps) {
            if s == k {
                *slot = cavity.clone();
            }
        }
        Ok(())
    })?;
    Ok(out.into_iter().map(|s| s.expect("every requested step is visited")).collect())
}

/// Lossy-evolution derivative pairs in ω at the given step indices.
pub fn lossy_pairs(
    p: &SystemParams,
    c: &CollisionConfig,
    steps: &[usize],
    rel_step: f64,
) -> Result<Vec<DerivativePair<DensityMatrix>>> {
    use rayon::prelude::*;
    let h = rel_step * p.omega;
    let offsets = [-h, 0.0, h, -h / 2.0, h / 2.0];
    let runs: Vec<Vec<DensityMatrix>> = offsets
        .par_iter()
        .map(|&dw| lossy_cavity_states(p, c, p.omega + dw, steps))
        .collect::<Result<_>>()?;
    let mut pairs = Vec::with_capacity(steps.len());
    #[allow(clippy::needless_range_loop)]
    for k in 0..steps.len() {
        let lookup = |w: f64| -> Result<DensityMatrix> {
            let idx = offsets
                .iter()
                .position(|&dw| (p.omega + dw - w).abs() <= 1e-3 * h)
                .ok_or_else(|| Error::DerivativeStep(format!("no lossy run at omega = {w}")))?;
            Ok(runs[idx][k].clone())
        };
        pairs.push(derivative_pair(lookup, p.omega, rel_step)?);
    }
    Ok(pairs)
}

/// QFI in ω of the lossy reduced cavity state at the given step indices.
pub fn lossy_qfi_series(p: &SystemParams, c: &CollisionConfig, steps: &[usize], rel_step: f64) -> Result<Vec<EstimationResult>> {
    let dt = c.dt(p);
    lossy_pairs(p, c, steps, rel_step)?
        .iter()
        .zip(steps)
        .map(|(pair, &k)| {
            let mut r = qfi_from_pair(pair)?;
            r.metadata.t = Some(k as f64 * dt);
            r.metadata.alpha = Some(p.alpha);
            r.metadata.gamma = Some(c.gamma);
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scaled(alpha: f64) -> SystemParams {
        SystemParams::scaled(0.1, 0.1, c(alpha, 0.0), 0.1, (12, 20))
    }

    #[test]
    fn analytic_vanishes_without_coupling() {
        let mut p = SystemParams::table1();
        p.chi = 0.0;
        assert_eq!(qfi_pure_analytic(&p, 1, 1.0).value, 0.0);
    }

    #[test]
    fn headline_numbers() {
        let dwdd = backsolved_dwdd();
        let f = qfi_pure_analytic(&SystemParams::table1(), 1, dwdd);
        assert_eq!(f.parameter, Parameter::D);
        assert!((f.value / HEADLINE_QFI_D - 1.0).abs() < 1e-12);
        let bound = qcrb_bound(f.value, 1).unwrap();
        assert!((bound.variance - 1.3e-39).abs() < 0.05e-39);
        assert!((3.5e-20..3.7e-20).contains(&bound.std_dev));
    }

    #[test]
    fn qcrb_rules() {
        let one = qcrb_bound(7.6e38, 1).unwrap();
        let four = qcrb_bound(7.6e38, 4).unwrap();
        assert!((four.std_dev * 2.0 - one.std_dev).abs() < 1e-12 * one.std_dev);
        assert_eq!(qcrb_bound(0.0, 1), Err(Error::UnboundedVariance));
        assert!(qcrb_bound(1.0, 0).is_err());
    }

    #[test]
    fn phase_family_qfi_is_four_times_variance() {
        let alpha = c(0.7, 0.0);
        let dim = 30;
        let psi = coherent_state(alpha, dim).unwrap().into_inner();
        let family = |theta: f64| {
            let amps = CVector::from_fn(dim, |l, _| psi.amplitudes()[l] * Complex64::from_polar(1.0, theta * l as f64));
            StateVector::new(amps, vec![dim])
        };
        let pair = derivative_pair(family, 0.3, 1e-6).unwrap();
        let f = qfi_pure_overlap(&pair).unwrap().value;
        assert!((f - 4.0 * alpha.norm_sqr()).abs() < 1e-6 * f, "{f}");
    }

    #[test]
    fn constant_family_has_no_information() {
        let rho = DensityMatrix::maximally_mixed(vec![5]);
        assert_eq!(qfi_mixed(&rho, &CMatrix::zeros(5, 5), EIGEN_CUTOFF).unwrap().value, 0.0);
        let psi = coherent_state(c(0.4, 0.0), 8).unwrap().into_inner();
        let pair = derivative_pair(|_| Ok(psi.clone()), 1.0, 1e-6).unwrap();
        assert!(qfi_pure_overlap(&pair).unwrap().value.abs() < 1e-10);
        let pair = derivative_pair(|_| Ok(psi.to_density()), 1.0, 1e-6).unwrap();
        assert_eq!(homodyne_cfi(&pair, 0.4).unwrap().value, 0.0);
        assert!(sld(&pair.center, &pair.derivative(), EIGEN_CUTOFF).unwrap().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn overlap_matches_closed_form_at_decoupling() {
        for n in 1..=2 {
            let p = scaled(0.3);
            let law = ScalingLaw::calibrate(&p);
            let t = p.decoupling_time(n);
            let pair = derivative_pair(|w| kerr_state(t, &law.apply(&p, w)), p.omega, DERIVATIVE_STEP).unwrap();
            let numeric = qfi_pure_overlap(&pair).unwrap().value;
            // truncation of the coherent state moves the closed form slightly
            let exact = qfi_pure_analytic(&p, n, 1.0).value;
            assert!((numeric / exact - 1.0).abs() < 1e-6, "n={n}: {numeric} vs {exact}");
        }
    }

    #[test]
    fn methods_agree_on_pure_states() {
        let p = scaled(0.4);
        let law = ScalingLaw::calibrate(&p);
        let t = p.decoupling_time(1);
        let vec_pair = derivative_pair(|w| kerr_state(t, &law.apply(&p, w)), 1.0, DERIVATIVE_STEP).unwrap();
        let rho_family = |w: f64| kerr_state(t, &law.apply(&p, w)).map(|s| s.to_density());
        let rho_pair = derivative_pair(rho_family, 1.0, DERIVATIVE_STEP).unwrap();
        let overlap = qfi_pure_overlap(&vec_pair).unwrap().value;
        let mixed = qfi_from_pair(&rho_pair).unwrap().value;
        let oracle = qfi_fidelity(rho_family, 1.0, 1e-3).unwrap().value;
        assert!((mixed / overlap - 1.0).abs() < 1e-6, "{mixed} {overlap}");
        assert!((oracle / overlap - 1.0).abs() < 1e-4, "{oracle} {overlap}");
    }

    #[test]
    fn fidelity_oracle_on_full_rank_family() {
        let p = scaled(0.5);
        let model = CavityModel::Analytic(ThermalFactor::default());
        let law = ScalingLaw::calibrate(&p);
        let t = 0.4 * p.period();
        let pair = unitary_pair(&model, &p, t, DERIVATIVE_STEP).unwrap();
        let mixed = qfi_from_pair(&pair).unwrap().value;
        let oracle = qfi_fidelity(|w| cavity_state(&model, &p, &law, w, t), 1.0, 1e-3).unwrap().value;
        assert!((oracle / mixed - 1.0).abs() < 1e-3, "{oracle} {mixed}");
    }

    #[test]
    fn sld_properties() {
        let p = scaled(0.4);
        let pair = unitary_pair(&CavityModel::Analytic(ThermalFactor::default()), &p, 2.1, DERIVATIVE_STEP).unwrap();
        let rho = &pair.center;
        let drho = pair.derivative();
        let l = sld(rho, &drho, EIGEN_CUTOFF).unwrap();
        assert!(hilbert::hermiticity_defect(&l) < 1e-12);
        assert!(hilbert::trace(&(rho.matrix() * &l)).norm() < 1e-8);
        let f = qfi_mixed(rho, &drho, EIGEN_CUTOFF).unwrap().value;
        let tr = hilbert::trace(&(&drho * &l)).re;
        assert!((tr / f - 1.0).abs() < 1e-6);
        let rebuilt = (&l * rho.matrix() + rho.matrix() * &l) * Complex64::new(0.5, 0.0);
        assert!(hilbert::frobenius(&(rebuilt - &drho)) < 1e-8 * hilbert::frobenius(&drho).max(1.0));
        let proj = sld_projective_cfi(&pair).unwrap().value;
        assert!((proj / f - 1.0).abs() < 1e-4, "{proj} {f}");
    }

    #[test]
    fn homodyne_bounded_by_qfi_and_best_near_right_angle() {
        let p = scaled(0.3);
        let model = CavityModel::Analytic(ThermalFactor::default());
        for &t in &[1.3, p.period(), 8.0] {
            let pair = unitary_pair(&model, &p, t, DERIVATIVE_STEP).unwrap();
            let q = qfi_from_pair(&pair).unwrap().value;
            let s = sld_projective_cfi(&pair).unwrap().value;
            for theta in [0.0, PI / 6.0, PI / 4.0, PI / 3.0, PI / 2.0] {
                let f = homodyne_cfi(&pair, theta).unwrap().value;
                assert!(f <= s + 1e-6 && s <= q + 1e-6, "t={t} θ={theta}: {f} {s} {q}");
            }
        }
        let pair = unitary_pair(&model, &p, p.period(), DERIVATIVE_STEP).unwrap();
        let q = qfi_from_pair(&pair).unwrap().value;
        let f = homodyne_cfi(&pair, PI / 2.0).unwrap().value;
        assert!(f / q >= 0.9, "{}", f / q);
    }

    #[test]
    fn phase_information_peaks_at_decoupling_times() {
        let p = scaled(0.3);
        let phase_qfi = |t: f64| phase_qfi(t, &p).unwrap().value;
        for n in 1..=2 {
            let tn = p.decoupling_time(n);
            let peak = phase_qfi(tn);
            for d in [0.01, 0.1, 0.5, 1.5] {
                assert!(peak > phase_qfi(tn - d) && peak > phase_qfi(tn + d), "n={n} δ={d}");
            }
        }
    }

    #[test]
    fn phase_qfi_matches_closed_form_and_finite_differences() {
        let p = scaled(0.3);
        for n in 1..=3 {
            let closed = qfi_pure_analytic(&p, n, 1.0).value;
            assert!((phase_qfi(p.decoupling_time(n), &p).unwrap().value / closed - 1.0).abs() < 1e-10);
        }
        let law = ScalingLaw::calibrate(&p);
        for t in [0.3, 1.0, 2.5, 4.0, 9.0] {
            let pair = derivative_pair(|w| kerr_state(t, &law.apply(&p, w)), 1.0, 1e-5).unwrap();
            let fd = qfi_pure_overlap(&pair).unwrap().value;
            let exact = phase_qfi(t, &p).unwrap().value;
            assert!((fd / exact - 1.0).abs() < 1e-6, "t={t}: {fd} vs {exact}");
        }
        // both sides of the series switch agree
        let (a, b) = (kerr_phase_slope_factor(1.0, 0.1 - 1e-12), kerr_phase_slope_factor(1.0, 0.1 + 1e-12));
        assert!((a / b - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vacuum_derivative_is_exactly_zero() {
        let p = SystemParams::scaled(0.1, 0.1, c(0.0, 0.0), 0.1, (6, 12));
        let pair = unitary_pair(&CavityModel::Joint, &p, 1.3, JOINT_DERIVATIVE_STEP).unwrap();
        assert_eq!(qfi_from_pair(&pair).unwrap().value, 0.0);
        assert_eq!(phase_qfi(1.3, &p).unwrap().value, 0.0);
    }

    #[test]
    fn mixed_qfi_jumps_where_the_rank_drops() {
        // at t_n the state is pure and only the phases carry information;
        // just off t_n the small eigenvalue ε ∝ (ωt − 2πn)² adds (∂ε)²/ε = O(1)
        let p = scaled(0.1);
        let model = CavityModel::Analytic(ThermalFactor::default());
        let tn = p.decoupling_time(1);
        let f = qfi_series(&model, &p, &[tn - 1e-3, tn, tn + 1e-3], DERIVATIVE_STEP).unwrap();
        let closed = qfi_pure_analytic(&p, 1, 1.0).value;
        assert!((f[1].value / closed - 1.0).abs() < 1e-6);
        assert!(f[0].value > 2.0 * f[1].value && f[2].value > 2.0 * f[1].value);
    }

    #[test]
    fn joint_and_analytic_models_agree() {
        let p = SystemParams::scaled(0.1, 0.1, c(0.2, 0.0), 0.1, (8, 24));
        let a = qfi_series(&CavityModel::Analytic(ThermalFactor::default()), &p, &[2.0, 6.0], DERIVATIVE_STEP).unwrap();
        let j = qfi_series(&CavityModel::Joint, &p, &[2.0, 6.0], JOINT_DERIVATIVE_STEP).unwrap();
        for (x, y) in a.iter().zip(&j) {
            assert!(y.warnings.is_empty(), "{:?}", y.warnings);
            assert!((x.value / y.value - 1.0).abs() < 1e-6, "{} {}", x.value, y.value);
        }
    }

    #[test]
    fn lossless_collisions_match_unitary_qfi() {
        let p = SystemParams::scaled(0.1, 0.1, c(0.2, 0.0), 0.1, (8, 20));
        let cfg = CollisionConfig::default().with_gamma(0.0);
        let lossy = lossy_qfi_series(&p, &cfg, &[20, 49], LOSSY_DERIVATIVE_STEP).unwrap();
        let dt = cfg.dt(&p);
        let unitary = qfi_series(&CavityModel::Joint, &p, &[20.0 * dt, 49.0 * dt], DERIVATIVE_STEP).unwrap();
        for (x, y) in lossy.iter().zip(&unitary) {
            assert!((x.value / y.value - 1.0).abs() < 1e-6, "{} {}", x.value, y.value);
        }
    }

    #[test]
    fn loss_lowers_qfi_at_second_peak() {
        let p = SystemParams::scaled(0.1, 0.1, c(0.2, 0.0), 0.1, (8, 20));
        let step = [98];
        let f: Vec<f64> = [0.0, 0.05]
            .iter()
            .map(|&g| lossy_qfi_series(&p, &CollisionConfig::default().with_gamma(g), &step, LOSSY_DERIVATIVE_STEP).unwrap()[0].value)
            .collect();
        assert!(f[1] < f[0]);
        let b: Vec<f64> = f.iter().map(|&v| qcrb_bound(v, 1).unwrap().variance).collect();
        assert!(b[1] > b[0]);
    }

    #[test]
    fn derivative_step_guard() {
        let family = |x: f64| {
            let psi = coherent_state(c(x.sin() * 3.0, 0.0), 40)?.into_inner();
            Ok(psi)
        };
        assert!(matches!(derivative_pair(family, 1.0, 0.05), Err(Error::DerivativeStep(_))));
        assert!(derivative_pair(family, 1.0, 1e-6).is_ok());
        assert!(derivative_pair(family, 1.0, 0.0).is_err());
    }

    #[test]
    fn scaling_fit_and_crossovers() {
        let n = log_space(1.0, 1e3, 16);
        let f: Vec<f64> = n.iter().map(|x| 2.5 * x.powi(3)).collect();
        let fit = scaling_fit(&n, &f).unwrap();
        assert!((fit.exponent - 3.0).abs() < 1e-10 && fit.warnings.is_empty());
        assert!(scaling_fit(&log_space(1.0, 1e3, 6), &f[..6]).is_err());

        let p = SystemParams::table1();
        let c = crossovers(&p).unwrap();
        assert!((c.sql_to_linear_balance / (p.s / (2.0 * p.chi)) - 1.0).abs() < 1e-4);
        assert!(c.sql_to_linear_slope > c.sql_to_linear_balance / 3.0 && c.sql_to_linear_slope < 3.0 * c.sql_to_linear_balance);
        assert!((local_exponent(&p, c.linear_to_cubic_slope) - 2.5).abs() < 1e-9);
    }
}
