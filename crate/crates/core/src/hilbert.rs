//! Truncated Fock-space kernel.
//!
//! Dense complex matrices over a finite number of Fock levels per mode, the
//! canonical oscillator states, tensor composition and partial traces, and the
//! Hermitian spectral routines (eigendecomposition, matrix functions, fidelity)
//! that everything else is built on.
//!
//! Composite spaces are ordered with the first subsystem as the most
//! significant index, matching `A.kronecker(&B)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Hermiticity tolerance of a [`DensityMatrix`].
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Unit-trace tolerance of a [`DensityMatrix`].
pub const TRACE_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted as "non-negative".
pub const POSITIVITY_TOL: f64 = 1e-10;
/// Unit-norm tolerance of a [`StateVector`].
pub const NORM_TOL: f64 = 1e-12;
/// Probability mass beyond the truncation above which constructors warn.
pub const TAIL_WARN: f64 = 1e-10;

/// Relative eigenvalue floor (per dimension) below which a state has no support.
const SUPPORT_RTOL: f64 = 1e-14;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A value built in a truncated space, with the probability mass that did not fit.
#[derive(Debug, Clone)]
pub struct Truncated<T> {
    pub value: T,
    pub tail_mass: f64,
}

impl<T> Truncated<T> {
    pub fn into_inner(self) -> T {
        self.value
    }

    /// Logs a warning when the tail mass exceeds [`TAIL_WARN`] and returns the value.
    pub fn warn(self, what: &str) -> T {
        if self.tail_mass > TAIL_WARN {
            log::warn!(
                "{what}: truncated tail mass {:.3e} exceeds {TAIL_WARN:.0e}",
                self.tail_mass
            );
        }
        self.value
    }

    /// Fails when the tail mass exceeds `threshold`.
    pub fn checked(self, what: &str, threshold: f64) -> Result<T> {
        if self.tail_mass > threshold {
            return Err(Error::Truncation {
                what: what.to_string(),
                tail_mass: self.tail_mass,
                threshold,
            });
        }
        Ok(self.value)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension(format!(
            "Fock truncation must be at least 2, got {dim}"
        )));
    }
    Ok(())
}

fn product(dims: &[usize]) -> usize {
    dims.iter().product()
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Lowering operator `a` with `√n` on the superdiagonal.
pub fn annihilation(dim: usize) -> Result<CMatrix> {
    check_dim(dim)?;
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    Ok(a)
}

pub fn creation(dim: usize) -> Result<CMatrix> {
    Ok(annihilation(dim)?.adjoint())
}

pub fn number(dim: usize) -> Result<CMatrix> {
    check_dim(dim)?;
    Ok(CMatrix::from_diagonal(&CVector::from_fn(dim, |n, _| {
        Complex64::new(n as f64, 0.0)
    })))
}

/// Rotated quadrature `(a e^{-iθ} + a† e^{iθ}) / √2`.
pub fn quadrature(theta: f64, dim: usize) -> Result<CMatrix> {
    let a = annihilation(dim)?;
    let phase = Complex64::from_polar(1.0, -theta);
    let x = (&a * phase + a.adjoint() * phase.conj()) * Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Ok(x)
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn tensor(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `(M + M†) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Largest entry of `M − M†` in modulus.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Normalised pure state over a (possibly composite) truncated space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: CVector,
    dims: Vec<usize>,
}

impl StateVector {
    pub fn new(amplitudes: CVector, dims: Vec<usize>) -> Result<Self> {
        if product(&dims) != amplitudes.len() {
            return Err(Error::InvalidDimension(format!(
                "dims {dims:?} do not match vector length {}",
                amplitudes.len()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("state norm {norm} is not 1")));
        }
        Ok(Self { amplitudes, dims })
    }

    /// Rescales `amplitudes` to unit norm.
    pub fn normalized(amplitudes: CVector, dims: Vec<usize>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("cannot normalise a zero or non-finite vector".into()));
        }
        Self::new(amplitudes.unscale(norm), dims)
    }

    pub fn basis(index: usize, dim: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidDimension(format!("level {index} outside dim {dim}")));
        }
        let mut v = CVector::zeros(dim);
        v[index] = ONE;
        Self::new(v, vec![dim])
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }

    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        StateVector {
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
            dims,
        }
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix {
            mat: &self.amplitudes * self.amplitudes.adjoint(),
            dims: self.dims.clone(),
        }
    }

    pub fn expectation(&self, op: &CMatrix) -> Complex64 {
        self.amplitudes.dotc(&(op * &self.amplitudes))
    }
}

/// Density operator together with its tensor factorisation.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
    dims: Vec<usize>,
}

impl DensityMatrix {
    /// Validates Hermiticity and unit trace. Positivity is checked separately
    /// with [`DensityMatrix::check_positive`] because it needs a diagonalisation.
    pub fn new(mat: CMatrix, dims: Vec<usize>) -> Result<Self> {
        if !mat.is_square() || product(&dims) != mat.nrows() {
            return Err(Error::InvalidDimension(format!(
                "dims {dims:?} do not match a {}x{} matrix",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidState("non-finite matrix entry".into()));
        }
        let defect = hermiticity_defect(&mat);
        if defect > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (defect {defect:.3e})")));
        }
        let tr = trace(&mat);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        Ok(Self { mat, dims })
    }

    /// Wraps a matrix produced by a trace-preserving map, symmetrising away
    /// round-off. Invariants are asserted in debug builds.
    pub(crate) fn from_evolution(mat: CMatrix, dims: Vec<usize>) -> Self {
        let mat = hermitize(&mat);
        debug_assert!(product(&dims) == mat.nrows());
        debug_assert!((trace(&mat).re - 1.0).abs() < 1e-8, "trace drifted: {}", trace(&mat));
        Self { mat, dims }
    }

    pub fn maximally_mixed(dims: Vec<usize>) -> Self {
        let n = product(&dims);
        Self {
            mat: CMatrix::identity(n, n) / Complex64::new(n as f64, 0.0),
            dims,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        trace(&self.mat)
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn expectation(&self, op: &CMatrix) -> Complex64 {
        // Tr(ρ O) = Σ_ij ρ_ij O_ji
        let n = self.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += self.mat[(i, j)] * op[(j, i)];
            }
        }
        acc
    }

    pub fn eigen(&self) -> Result<HermitianEigen> {
        eig_hermitian(&self.mat)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigen()?.values[0])
    }

    pub fn check_positive(&self) -> Result<()> {
        let min = self.min_eigenvalue()?;
        if min < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        DensityMatrix {
            mat: self.mat.kronecker(&other.mat),
            dims,
        }
    }

    /// Conjugates by a unitary: `U ρ U†`.
    pub fn conjugate(&self, u: &CMatrix) -> Result<DensityMatrix> {
        if u.nrows() != self.dim() || u.ncols() != self.dim() {
            return Err(Error::InvalidDimension(format!(
                "unitary {}x{} vs state dim {}",
                u.nrows(),
                u.ncols(),
                self.dim()
            )));
        }
        Ok(Self::from_evolution(u * &self.mat * u.adjoint(), self.dims.clone()))
    }

    pub fn partial_trace(&self, keep: usize) -> Result<DensityMatrix> {
        partial_trace(self, keep)
    }
}

/// Coherent state `e^{-|α|²/2} Σ αⁿ/√n! |n⟩`, renormalised after truncation.
pub fn coherent_state(alpha: Complex64, dim: usize) -> Result<Truncated<StateVector>> {
    check_dim(dim)?;
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite amplitude {alpha}")));
    }
    let mean = alpha.norm_sqr();
    let mut amps = CVector::zeros(dim);
    amps[0] = Complex64::new((-mean / 2.0).exp(), 0.0);
    for n in 1..dim {
        amps[n] = amps[n - 1] * alpha / (n as f64).sqrt();
    }
    let tail_mass = poisson_tail(mean, dim);
    let value = StateVector::normalized(amps, vec![dim])?;
    Ok(Truncated { value, tail_mass })
}

/// `P(n ≥ dim)` for a Poisson distribution, summed explicitly to avoid cancellation.
pub fn poisson_tail(mean: f64, dim: usize) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    // log pmf at n = dim
    let mut log_p = -mean + dim as f64 * mean.ln() - ln_factorial(dim);
    let mut total = 0.0;
    let mut n = dim;
    loop {
        let p = log_p.exp();
        total += p;
        n += 1;
        log_p += mean.ln() - (n as f64).ln();
        if (n as f64) > mean && (p < total * 1e-17 || p == 0.0) {
            break;
        }
        if n > dim + 100_000 {
            break;
        }
    }
    total
}

pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Thermal state with mean occupancy `n_beta`: populations ∝ (n/(1+n))^k.
pub fn thermal_state(n_beta: f64, dim: usize) -> Result<Truncated<DensityMatrix>> {
    check_dim(dim)?;
    if !(n_beta >= 0.0) || !n_beta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "thermal occupancy must be finite and >= 0, got {n_beta}"
        )));
    }
    let q = n_beta / (1.0 + n_beta);
    let weights: Vec<f64> = (0..dim).map(|k| q.powi(k as i32)).collect();
    let norm: f64 = weights.iter().sum();
    let diag = CVector::from_iterator(dim, weights.iter().map(|w| Complex64::new(w / norm, 0.0)));
    let value = DensityMatrix {
        mat: CMatrix::from_diagonal(&diag),
        dims: vec![dim],
    };
    Ok(Truncated {
        value,
        tail_mass: q.powi(dim as i32),
    })
}

/// `exp(amp b† − amp* b)` from the spectral decomposition of its Hermitian generator.
pub fn displacement(amp: Complex64, dim: usize) -> Result<CMatrix> {
    let b = annihilation(dim)?;
    if amp == ZERO {
        return Ok(identity(dim));
    }
    let i = Complex64::i();
    // H = i (amp b† − amp* b) is Hermitian and D = exp(−i H)
    let h = (b.adjoint() * amp - &b * amp.conj()) * i;
    expm_i_hermitian(&h, 1.0)
}

/// Spectral decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: DVector<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    /// Rebuilds `V f(Λ) V†`.
    pub fn map(&self, f: impl Fn(f64) -> Complex64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        scaled * self.vectors.adjoint()
    }
}

/// Eigendecomposition of `(M + M†)/2`, ascending eigenvalues.
pub fn eig_hermitian(m: &CMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(Error::InvalidDimension(format!("{}x{} is not square", m.nrows(), m.ncols())));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(HermitianEigen {
            values: DVector::zeros(0),
            vectors: CMatrix::zeros(0, 0),
        });
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NumericalFailure("non-finite entry in eigenproblem".into()));
    }
    let sym = hermitize(m);
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 1000 * n.max(10))
        .ok_or_else(|| Error::NumericalFailure(format!("Hermitian eigensolver did not converge (n={n})")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = CMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    Ok(HermitianEigen { values, vectors })
}

/// `exp(−i H t)` for Hermitian `H`.
pub fn expm_i_hermitian(h: &CMatrix, t: f64) -> Result<CMatrix> {
    let eig = eig_hermitian(h)?;
    Ok(eig.map(|lambda| Complex64::from_polar(1.0, -lambda * t)))
}

/// Square root of a positive semidefinite matrix. Eigenvalues in
/// `[−POSITIVITY_TOL, 0)` are clipped to zero; anything more negative is rejected.
pub fn sqrt_psd(m: &CMatrix) -> Result<CMatrix> {
    let eig = eig_hermitian(m)?;
    if !eig.values.is_empty() && eig.values[0] < -POSITIVITY_TOL {
        return Err(Error::InvalidState(format!(
            "matrix square root of a non-positive operator (min eigenvalue {:.3e})",
            eig.values[0]
        )));
    }
    Ok(eig.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0)))
}

fn same_space(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<()> {
    if rho.dims != sigma.dims {
        return Err(Error::InvalidDimension(format!(
            "dims {:?} vs {:?}",
            rho.dims, sigma.dims
        )));
    }
    Ok(())
}

/// Uhlmann fidelity `Tr √(√ρ σ √ρ)` (root convention, so `F ∈ [0, 1]`).
///
/// Evaluated as the nuclear norm `‖√ρ √σ‖₁`. Singular values carry absolute
/// error, whereas eigenvalues of `√ρ σ √ρ` would pass rounding noise through
/// a square root. Eigenvalues at rounding level are zeroed in both square
/// roots so that exact rank deficiency stays exact.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    same_space(rho, sigma)?;
    let root = |m: &CMatrix| -> Result<CMatrix> {
        let eig = eig_hermitian(m)?;
        if eig.values[0] < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!(
                "fidelity of a non-positive operator (min eigenvalue {:.3e})",
                eig.values[0]
            )));
        }
        let floor = eig.values.iter().cloned().fold(0.0, f64::max) * SUPPORT_RTOL * eig.values.len() as f64;
        Ok(eig.map(|l| Complex64::new(if l > floor { l.sqrt() } else { 0.0 }, 0.0)))
    };
    let product = root(&rho.mat)? * root(&sigma.mat)?;
    let svd = nalgebra::linalg::SVD::try_new(product, false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge in fidelity".into()))?;
    Ok(svd.singular_values.iter().sum())
}

pub fn infidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    Ok(1.0 - fidelity(rho, sigma)?)
}

/// Fidelity against a pure state, `√⟨ψ|σ|ψ⟩`.
pub fn fidelity_pure(psi: &StateVector, sigma: &DensityMatrix) -> Result<f64> {
    if psi.dims != sigma.dims {
        return Err(Error::InvalidDimension(format!("dims {:?} vs {:?}", psi.dims, sigma.dims)));
    }
    Ok(sigma.expectation(&(psi.amplitudes() * psi.amplitudes().adjoint())).re.max(0.0).sqrt())
}

/// `½ ‖ρ − σ‖₁`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    same_space(rho, sigma)?;
    let eig = eig_hermitian(&(&rho.mat - &sigma.mat))?;
    Ok(0.5 * eig.values.iter().map(|l| l.abs()).sum::<f64>())
}

/// Traces out every subsystem except `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    let dims = &rho.dims;
    if keep >= dims.len() {
        return Err(Error::InvalidDimension(format!(
            "subsystem {keep} out of range for dims {dims:?}"
        )));
    }
    let before: usize = dims[..keep].iter().product();
    let d = dims[keep];
    let after: usize = dims[keep + 1..].iter().product();
    let mut out = CMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut acc = ZERO;
            for b in 0..before {
                for a in 0..after {
                    let r = (b * d + i) * after + a;
                    let c = (b * d + j) * after + a;
                    acc += rho.mat[(r, c)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Ok(DensityMatrix {
        mat: hermitize(&out),
        dims: vec![d],
    })
}

/// Frobenius norm.
pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_hermitian(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
        let m = CMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        hermitize(&m)
    }

    fn random_density(dims: Vec<usize>, rank: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
        let n = product(&dims);
        let g = CMatrix::from_fn(n, rank, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = &g * g.adjoint();
        let tr = trace(&m);
        DensityMatrix::new(hermitize(&(m / tr)), dims).unwrap()
    }

    #[test]
    fn annihilation_small_cases() {
        let a = annihilation(2).unwrap();
        assert_eq!(a, CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]));
        let a3 = annihilation(3).unwrap();
        assert!((a3[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(annihilation(1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn commutator_is_identity_except_edge() {
        let a = annihilation(50).unwrap();
        let comm = commutator(&a, &a.adjoint());
        // oracle: explicit (a a†)_nn − (a† a)_nn = (n+1) − n, last level loses its partner
        for i in 0..50 {
            for j in 0..50 {
                let expect = if i != j {
                    0.0
                } else if i < 49 {
                    1.0
                } else {
                    -49.0
                };
                assert!((comm[(i, j)] - c(expect, 0.0)).norm() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn coherent_state_moments() {
        let vac = coherent_state(ZERO, 10).unwrap().into_inner();
        assert!((vac.amplitudes()[0] - ONE).norm() < 1e-15);

        let psi = coherent_state(c(0.1, 0.0), 20).unwrap().into_inner();
        let n = psi.expectation(&number(20).unwrap()).re;
        assert!((n - 0.01).abs() < 1e-10);

        let psi = coherent_state(ONE, 50).unwrap().into_inner();
        let d = displacement(ONE, 50).unwrap();
        let shifted = StateVector::normalized(d.column(0).into_owned(), vec![50]).unwrap();
        assert!((psi.inner(&shifted).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_tail_is_reported() {
        let t = coherent_state(c(3.0, 0.0), 8).unwrap();
        assert!(t.tail_mass > 1e-2);
        assert!(t.clone().checked("test", TAIL_WARN).is_err());
        let t = coherent_state(c(0.1, 0.0), 16).unwrap();
        assert!(t.tail_mass < 1e-30);
    }

    #[test]
    fn thermal_state_populations() {
        let vac = thermal_state(0.0, 5).unwrap().into_inner();
        assert!((vac.matrix()[(0, 0)].re - 1.0).abs() < 1e-15);
        let th = thermal_state(0.1, 30).unwrap().into_inner();
        let ratio = th.matrix()[(1, 1)].re / th.matrix()[(0, 0)].re;
        assert!((ratio - 0.1 / 1.1).abs() < 1e-12);
        let mean: f64 = (0..30).map(|k| k as f64 * th.matrix()[(k, k)].re).sum();
        assert!((mean - 0.1).abs() < 1e-9);
        assert!(matches!(thermal_state(-0.1, 5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn displacement_properties() {
        assert!(frobenius(&(displacement(ZERO, 10).unwrap() - identity(10))) < 1e-15);
        let dp = displacement(c(0.7, -0.3), 40).unwrap();
        let dm = displacement(c(-0.7, 0.3), 40).unwrap();
        assert!(frobenius(&(&dp * &dm - identity(40))) < 1e-10);

        // series-expansion oracle: e^{-1/2} Σ 1/√n! |n⟩
        let d = displacement(ONE, 50).unwrap();
        let mut fact = 1.0;
        for n in 0..30 {
            if n > 0 {
                fact *= n as f64;
            }
            let expect = (-0.5f64).exp() / fact.sqrt();
            assert!((d[(n, 0)] - c(expect, 0.0)).norm() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn displacement_composition_law() {
        // D(a)D(b) = exp(i Im(a b*)) D(a+b) on low levels
        let dim = 60;
        let (a, b) = (c(0.8, 0.5), c(-0.4, 1.1));
        let lhs = displacement(a, dim).unwrap() * displacement(b, dim).unwrap();
        let rhs = displacement(a + b, dim).unwrap() * Complex64::from_polar(1.0, (a * b.conj()).im);
        let block = 20;
        let diff = (lhs - rhs).view((0, 0), (block, block)).map(|z| z.norm()).max();
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn partial_trace_of_product_and_trace_preservation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ra = random_density(vec![3], 2, &mut rng);
        let rb = random_density(vec![4], 3, &mut rng);
        let joint = ra.tensor(&rb);
        let back = joint.partial_trace(0).unwrap();
        assert!(frobenius(&(back.matrix() - ra.matrix())) < 1e-12);
        let back_b = joint.partial_trace(1).unwrap();
        assert!(frobenius(&(back_b.matrix() - rb.matrix())) < 1e-12);

        let mixed = random_density(vec![5, 6], 7, &mut rng);
        for keep in 0..2 {
            let red = mixed.partial_trace(keep).unwrap();
            assert!((red.trace().re - 1.0).abs() < 1e-12);
            assert!(hermiticity_defect(red.matrix()) < 1e-14);
        }
        assert!(matches!(mixed.partial_trace(2), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn entangled_state_has_mixed_marginal() {
        // Schmidt form √p|00⟩ + √(1−p)|11⟩: marginal purity p² + (1−p)²
        let p: f64 = 0.3;
        let mut v = CVector::zeros(4);
        v[0] = c(p.sqrt(), 0.0);
        v[3] = c((1.0 - p).sqrt(), 0.0);
        let psi = StateVector::new(v, vec![2, 2]).unwrap();
        let red = psi.to_density().partial_trace(0).unwrap();
        assert!((red.purity() - (p * p + (1.0 - p) * (1.0 - p))).abs() < 1e-14);
        assert!(red.purity() < 1.0);
    }

    #[test]
    fn eigen_basic_and_reconstruction() {
        let e = eig_hermitian(&identity(4)).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![c(3.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]));
        let e = eig_hermitian(&d).unwrap();
        assert_eq!(e.values.as_slice().iter().map(|v| v.round() as i32).collect::<Vec<_>>(), vec![1, 2, 3]);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_hermitian(100, &mut rng);
        let e = eig_hermitian(&m).unwrap();
        let rebuilt = e.map(|l| c(l, 0.0));
        assert!(frobenius(&(rebuilt - &m)) / frobenius(&m) < 1e-10);
        let diag = e.vectors.adjoint() * &m * &e.vectors;
        let off: f64 = (0..100)
            .flat_map(|i| (0..100).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| diag[(i, j)].norm())
            .fold(0.0, f64::max);
        assert!(off < 1e-9 * frobenius(&m));
        assert!(e.values.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fidelity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random_density(vec![6], 3, &mut rng);
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);

        let z0 = StateVector::basis(0, 3).unwrap().to_density();
        let z1 = StateVector::basis(1, 3).unwrap().to_density();
        assert!(fidelity(&z0, &z1).unwrap().abs() < 1e-12);

        let psi = coherent_state(c(0.4, 0.2), 6).unwrap().into_inner();
        let sigma = random_density(vec![6], 4, &mut rng);
        let shortcut = fidelity_pure(&psi, &sigma).unwrap();
        let full = fidelity(&psi.to_density(), &sigma).unwrap();
        assert!((shortcut - full).abs() < 1e-10, "{shortcut} {full}");

        let sigma2 = random_density(vec![6], 6, &mut rng);
        let f1 = fidelity(&rho, &sigma2).unwrap();
        let f2 = fidelity(&sigma2, &rho).unwrap();
        assert!((f1 - f2).abs() < 1e-10);
        assert!((0.0..=1.0 + 1e-9).contains(&f1));
    }

    #[test]
    fn density_validation() {
        let bad = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, 0.0), c(0.2, 0.0), c(0.5, 0.0)]);
        assert!(matches!(DensityMatrix::new(bad, vec![2]), Err(Error::InvalidState(_))));
        let bad_trace = CMatrix::identity(2, 2);
        assert!(DensityMatrix::new(bad_trace, vec![2]).is_err());
        let neg = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        let rho = DensityMatrix::new(neg, vec![2]).unwrap();
        assert!(rho.check_positive().is_err());
        assert!(fidelity(&rho, &rho).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn displacement_composes(ar in -2.0f64..2.0, ai in -2.0f64..2.0, br in -2.0f64..2.0, bi in -2.0f64..2.0) {
                let (a, b) = (c(ar, ai), c(br, bi));
                prop_assume!(a.norm() <= 2.0 && b.norm() <= 2.0);
                let dim = 80;
                let lhs = displacement(a, dim).unwrap() * displacement(b, dim).unwrap();
                let rhs = displacement(a + b, dim).unwrap() * Complex64::from_polar(1.0, (a * b.conj()).im);
                let diff = (lhs - rhs).view((0, 0), (10, 10)).map(|z| z.norm()).max();
                prop_assert!(diff < 1e-9, "diff {}", diff);
            }

            #[test]
            fn fidelity_is_symmetric(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let rho = random_density(vec![5], 3, &mut rng);
                let sigma = random_density(vec![5], 5, &mut rng);
                let f1 = fidelity(&rho, &sigma).unwrap();
                let f2 = fidelity(&sigma, &rho).unwrap();
                prop_assert!((f1 - f2).abs() < 1e-10);
            }

            #[test]
            fn product_partial_trace_round_trip(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let ra = random_density(vec![3], 3, &mut rng);
                let rb = random_density(vec![4], 2, &mut rng);
                let joint = ra.tensor(&rb);
                prop_assert!(frobenius(&(joint.partial_trace(0).unwrap().matrix() - ra.matrix())) < 1e-12);
                prop_assert!(frobenius(&(joint.partial_trace(1).unwrap().matrix() - rb.matrix())) < 1e-12);
            }
        }
    }
}
