//! Photon loss through the cavity mirror.
//!
//! The collision model interleaves a unitary step `U(Δt)` with a beam-splitter
//! interaction between the cavity and a fresh vacuum ancilla,
//! `U_BS = exp[−iφ(a†c + a c†)]`, `φ² = γΔt`, after which the ancilla is
//! discarded. [`lindblad_reference`] integrates the corresponding master
//! equation directly and serves as an independent check.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{conditioned_hamiltonian, propagator, Propagator, SystemParams};
use crate::error::{Error, Result};
use crate::hilbert::{self, annihilation, identity, tensor, CMatrix, DensityMatrix};

/// Ancilla leakage above which a collision step is rejected.
pub const LEAKAGE_BOUND: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionConfig {
    /// Loss rate γ, in the same units as `SystemParams::omega`.
    pub gamma: f64,
    pub steps_per_period: usize,
    /// Beam-splitter angle. Derived as `√(γΔt)` when absent.
    #[serde(default)]
    pub phi_tau: Option<f64>,
    pub ancilla_dim: usize,
}

impl Default for CollisionConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            steps_per_period: 49,
            phi_tau: None,
            ancilla_dim: 3,
        }
    }
}

impl CollisionConfig {
    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn dt(&self, p: &SystemParams) -> f64 {
        p.period() / self.steps_per_period as f64
    }

    pub fn phi(&self, p: &SystemParams) -> f64 {
        self.phi_tau.unwrap_or_else(|| (self.gamma * self.dt(p)).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if (self.steps_per_period as f64) < crate::dynamics::MIN_STEPS_PER_PERIOD {
            return Err(Error::InvalidParameter(format!(
                "steps_per_period = {} is below {}",
                self.steps_per_period,
                crate::dynamics::MIN_STEPS_PER_PERIOD
            )));
        }
        if let Some(phi) = self.phi_tau {
            if !(0.0..=PI / 4.0).contains(&phi) {
                return Err(Error::InvalidParameter(format!("phi_tau = {phi} outside [0, π/4]")));
            }
        }
        if self.ancilla_dim < 2 {
            return Err(Error::InvalidDimension(format!("ancilla_dim = {} must be >= 2", self.ancilla_dim)));
        }
        Ok(())
    }

    /// Collision model at the step and angle implied by `p`.
    pub fn model(&self, p: &SystemParams) -> Result<CollisionModel> {
        self.validate()?;
        let phi = self.phi(p);
        if phi > PI / 4.0 {
            return Err(Error::InvalidParameter(format!("derived phi_tau = {phi} exceeds π/4")));
        }
        CollisionModel::new(p, self.dt(p), phi, self.ancilla_dim)
    }
}

/// `exp[−iφ(a†c + a c†)]` on cavity ⊗ ancilla (cavity index major).
pub fn beam_splitter(phi: f64, dim_cavity: usize, ancilla_dim: usize) -> Result<CMatrix> {
    let a = annihilation(dim_cavity)?;
    let c = annihilation(ancilla_dim)?;
    let ac = tensor(&a.adjoint(), &c);
    let h = &ac + ac.adjoint();
    hilbert::expm_i_hermitian(&h, phi)
}

/// `K_k = ⟨k|U_BS|0⟩` on the cavity, `k = 0 … ancilla_dim − 1`.
pub fn kraus_operators(phi: f64, dim_cavity: usize, ancilla_dim: usize) -> Result<Vec<CMatrix>> {
    let u = beam_splitter(phi, dim_cavity, ancilla_dim)?;
    Ok((0..ancilla_dim)
        .map(|k| CMatrix::from_fn(dim_cavity, dim_cavity, |i, j| u[(i * ancilla_dim + k, j * ancilla_dim)]))
        .collect())
}

/// Probability weight the ideal channel sends to `k` lost photons or more is
/// bounded by the `k = ancilla_dim` term: `Σ_n p_n C(n,k) cos^{2(n−k)}φ sin^{2k}φ`.
pub fn ancilla_leakage(populations: &[f64], phi: f64, ancilla_dim: usize) -> f64 {
    let k = ancilla_dim;
    let (c2, s2) = (phi.cos().powi(2), phi.sin().powi(2));
    if s2 == 0.0 {
        return 0.0;
    }
    populations
        .iter()
        .enumerate()
        .skip(k)
        .map(|(n, &p)| {
            let ln_binom = hilbert::ln_factorial(n) - hilbert::ln_factorial(k) - hilbert::ln_factorial(n - k);
            p * (ln_binom + (n - k) as f64 * c2.ln() + k as f64 * s2.ln()).exp()
        })
        .sum()
}

/// Photon-number populations of the cavity factor of a joint state.
pub fn cavity_populations(rho: &DensityMatrix) -> Vec<f64> {
    let dims = rho.dims();
    let (dc, rest) = (dims[0], rho.dim() / dims[0]);
    (0..dc)
        .map(|n| (0..rest).map(|j| rho.matrix()[(n * rest + j, n * rest + j)].re).sum())
        .collect()
}

/// One collision map `Φ`, with the unitary step and Kraus operators precomputed.
#[derive(Debug, Clone)]
pub struct CollisionModel {
    dt: f64,
    phi: f64,
    ancilla_dim: usize,
    unitary: Propagator,
    /// `shift[k][n] = ⟨n−k|K_k|n⟩`, the only non-zero entries (excitation number is conserved).
    shift: Vec<Vec<Complex64>>,
}

impl CollisionModel {
    pub fn new(p: &SystemParams, dt: f64, phi: f64, ancilla_dim: usize) -> Result<Self> {
        let dc = p.dims.0;
        let kraus = kraus_operators(phi, dc, ancilla_dim)?;
        let shift = kraus
            .iter()
            .enumerate()
            .map(|(k, op)| (0..dc).map(|n| if n >= k { op[(n - k, n)] } else { Complex64::new(0.0, 0.0) }).collect())
            .collect();
        Ok(Self {
            dt,
            phi,
            ancilla_dim,
            unitary: propagator(dt, p)?,
            shift,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn unitary(&self) -> &Propagator {
        &self.unitary
    }

    /// Loss part of `Φ` alone: `Σ_k (K_k ⊗ 1) ρ (K_k ⊗ 1)†`.
    pub fn apply_loss(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let leakage = ancilla_leakage(&cavity_populations(rho), self.phi, self.ancilla_dim);
        if leakage > LEAKAGE_BOUND {
            return Err(Error::AncillaLeakage {
                leakage,
                bound: LEAKAGE_BOUND,
            });
        }
        let dc = rho.dims()[0];
        let rest = rho.dim() / dc;
        let src = rho.matrix();
        let mut out = CMatrix::zeros(rho.dim(), rho.dim());
        for l in 0..dc {
            for m in 0..dc {
                let mut block = out.view_mut((l * rest, m * rest), (rest, rest));
                for (k, c) in self.shift.iter().enumerate() {
                    if l + k >= dc || m + k >= dc {
                        break;
                    }
                    let w = c[l + k] * c[m + k].conj();
                    block += src.view(((l + k) * rest, (m + k) * rest), (rest, rest)) * w;
                }
            }
        }
        Ok(DensityMatrix::from_evolution(out, rho.dims().to_vec()))
    }

    /// `Φ(ρ)`: unitary step followed by one collision.
    pub fn step(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        self.apply_loss(&self.unitary.apply(rho)?)
    }

    /// Runs `n_steps` collisions, calling `visit(step, t, state)` after each.
    pub fn run<F>(&self, rho0: &DensityMatrix, n_steps: usize, mut visit: F) -> Result<DensityMatrix>
    where
        F: FnMut(usize, f64, &DensityMatrix) -> Result<()>,
    {
        let mut state = rho0.clone();
        for k in 1..=n_steps {
            state = self.step(&state)?;
            let drift = (state.trace().re - 1.0).abs();
            if drift > hilbert::TRACE_TOL {
                return Err(Error::NumericalFailure(format!("trace drifted by {drift:.3e} at step {k}")));
            }
            visit(k, k as f64 * self.dt, &state)?;
        }
        Ok(state)
    }

    /// Number of steps reaching `t`, which must be a whole number of steps.
    pub fn steps_for(&self, t: f64) -> Result<usize> {
        let n = (t / self.dt).round();
        if (n * self.dt - t).abs() > 1e-9 * t.max(self.dt) {
            return Err(Error::InvalidParameter(format!(
                "t = {t} is not a multiple of the collision step {}",
                self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// `Φ(ρ)` with the step length `dt` given explicitly.
pub fn collision_step(rho: &DensityMatrix, dt: f64, p: &SystemParams, c: &CollisionConfig) -> Result<DensityMatrix> {
    c.validate()?;
    let phi = c.phi_tau.unwrap_or_else(|| (c.gamma * dt).sqrt());
    CollisionModel::new(p, dt, phi, c.ancilla_dim)?.step(rho)
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub state: DensityMatrix,
}

/// `Φ^N ρ0`, recording every `record_every`-th step and every decoupling time.
pub fn evolve_lossy(
    rho0: &DensityMatrix,
    t_final: f64,
    p: &SystemParams,
    c: &CollisionConfig,
    record_every: usize,
) -> Result<Vec<Snapshot>> {
    let model = c.model(p)?;
    let n_steps = model.steps_for(t_final)?;
    let mut snapshots = vec![Snapshot {
        step: 0,
        t: 0.0,
        state: rho0.clone(),
    }];
    model.run(rho0, n_steps, |k, t, state| {
        let decoupled = k % c.steps_per_period == 0;
        if decoupled || (record_every > 0 && k % record_every == 0) || k == n_steps {
            snapshots.push(Snapshot {
                step: k,
                t,
                state: state.clone(),
            });
        }
        Ok(())
    })?;
    Ok(snapshots)
}

#[derive(Debug, Clone)]
pub struct LindbladResult {
    pub state: DensityMatrix,
    pub steps: usize,
    /// Max-norm change between the last two step counts.
    pub step_change: f64,
}

/// Tolerance of the step-halving control in [`lindblad_reference`].
pub const LINDBLAD_STEP_TOL: f64 = 1e-8;

const LINDBLAD_MAX_STEPS: usize = 1 << 16;

/// RK4 integration of `dρ/dt = −i[H, ρ] + γ(aρa† − ½{a†a, ρ})`, with `H`
/// the linearly coupled Hamiltonian in the cavity rotating frame. Steps are
/// doubled until the result changes by less than [`LINDBLAD_STEP_TOL`].
pub fn lindblad_reference(rho0: &DensityMatrix, t_final: f64, p: &SystemParams, gamma: f64) -> Result<LindbladResult> {
    p.validate()?;
    let (dc, dm) = p.dims;
    if rho0.dims() != [dc, dm] {
        return Err(Error::InvalidDimension(format!("state dims {:?} vs {:?}", rho0.dims(), p.dims)));
    }
    let hams: Vec<CMatrix> = (0..dc).map(|l| conditioned_hamiltonian(l, p)).collect::<Result<_>>()?;
    let rhs = |rho: &CMatrix| lindblad_rhs(rho, &hams, gamma, dm);

    let mut steps = (8.0 * t_final / p.period()).ceil().max(8.0) as usize;
    let mut previous = rk4(rho0.matrix(), t_final, steps, &rhs);
    loop {
        steps *= 2;
        let current = rk4(rho0.matrix(), t_final, steps, &rhs);
        let change = (&current - &previous).map(|z| z.norm()).max();
        if change < LINDBLAD_STEP_TOL {
            let state = DensityMatrix::from_evolution(current, rho0.dims().to_vec());
            let min = state.min_eigenvalue()?;
            if min < -LINDBLAD_STEP_TOL {
                return Err(Error::StepSize(format!("negative eigenvalue {min:.3e} after {steps} steps")));
            }
            return Ok(LindbladResult {
                state,
                steps,
                step_change: change,
            });
        }
        if steps >= LINDBLAD_MAX_STEPS {
            return Err(Error::StepSize(format!("no convergence after {steps} steps (change {change:.3e})")));
        }
        previous = current;
    }
}

fn rk4<F: Fn(&CMatrix) -> CMatrix>(rho0: &CMatrix, t: f64, steps: usize, rhs: &F) -> CMatrix {
    let h = Complex64::new(t / steps as f64, 0.0);
    let half = h * 0.5;
    let sixth = h / 6.0;
    let mut rho = rho0.clone();
    for _ in 0..steps {
        let k1 = rhs(&rho);
        let k2 = rhs(&(&rho + &k1 * half));
        let k3 = rhs(&(&rho + &k2 * half));
        let k4 = rhs(&(&rho + &k3 * h));
        rho += (k1 + (k2 + k3) * Complex64::new(2.0, 0.0) + k4) * sixth;
    }
    rho
}

/// Block form of the master equation: the Hamiltonian is diagonal in photon
/// number and the dissipator couples block `(l, m)` to `(l+1, m+1)`.
fn lindblad_rhs(rho: &CMatrix, hams: &[CMatrix], gamma: f64, dm: usize) -> CMatrix {
    let dc = hams.len();
    let mut out = CMatrix::zeros(rho.nrows(), rho.ncols());
    let minus_i = Complex64::new(0.0, -1.0);
    for l in 0..dc {
        for m in 0..dc {
            let block = rho.view((l * dm, m * dm), (dm, dm));
            let mut d = (&hams[l] * block - block * &hams[m]) * minus_i;
            if gamma != 0.0 {
                d -= block * Complex64::new(0.5 * gamma * (l + m) as f64, 0.0);
                if l + 1 < dc && m + 1 < dc {
                    let w = gamma * (((l + 1) * (m + 1)) as f64).sqrt();
                    d += rho.view(((l + 1) * dm, (m + 1) * dm), (dm, dm)) * Complex64::new(w, 0.0);
                }
            }
            out.view_mut((l * dm, m * dm), (dm, dm)).copy_from(&d);
        }
    }
    out
}

/// Identity channel check helper: `Σ_k K_k† K_k`.
pub fn kraus_completeness(kraus: &[CMatrix]) -> CMatrix {
    let n = kraus[0].nrows();
    kraus.iter().fold(CMatrix::zeros(n, n), |acc, k| acc + k.adjoint() * k) - identity(n)
}
