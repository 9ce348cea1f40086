//! Joint cavity–mechanics evolution.
//!
//! After the polaron transform the Hamiltonian is a Kerr oscillator,
//! so the propagator factorises exactly: for photon number `l` the mechanics
//! sees a displacement `β_l = (χ l + S)/ω · η`, `η = 1 − e^{−iωt}`, and the
//! cavity amplitude picks up the phase `(χ l + S)²/ω² · (ωt − sin ωt)`.
//! [`Propagator`] stores that structure per photon-number block, which keeps
//! joint evolutions at `dim_c² · dim_m³` cost instead of `(dim_c·dim_m)³`.
//!
//! Everything here works in whatever units `SystemParams` is given in. Joint
//! numerics should use [`SystemParams::scaled`] (ω = 1), because the physical
//! `S/ω ~ 7e9` displaces the mechanics far outside any truncated space.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{
    self, annihilation, coherent_state, eig_hermitian, poisson_tail, thermal_state, CMatrix, DensityMatrix,
    HermitianEigen,
};

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Whether the free optical rotation `e^{−iω_c t a†a}` is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Frame co-rotating with the cavity; the ω_c factor is dropped.
    #[default]
    Rotating,
    Lab,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Mechanical frequency ω, rad/s (or 1 in scaled units).
    pub omega: f64,
    /// Cavity frequency ω_c.
    pub omega_c: f64,
    /// Single-photon optomechanical coupling χ.
    pub chi: f64,
    /// Gravitational coupling S.
    pub s: f64,
    /// Coherent drive amplitude α.
    pub alpha: Complex64,
    /// Thermal phonon occupancy n_β.
    pub n_beta: f64,
    /// Cavity length, m. Only used by [`SystemParams::coupling_consistency`].
    pub cavity_length: f64,
    /// Mirror mass, kg. Only used by [`SystemParams::coupling_consistency`].
    pub mass: f64,
    /// Gravitational acceleration, m/s².
    pub gravity: f64,
    /// Fock truncations (cavity, mechanics).
    pub dims: (usize, usize),
    #[serde(default)]
    pub frame: Frame,
}

impl SystemParams {
    /// Physical parameter set of the proposed device (|α|² = 10⁶).
    pub fn table1() -> Self {
        let two_pi = 2.0 * PI;
        Self {
            omega: two_pi * 117.0,
            omega_c: two_pi * 1e14,
            chi: two_pi * 55e3,
            s: two_pi * 8e11,
            alpha: Complex64::new(1e3, 0.0),
            n_beta: 0.0,
            cavity_length: 1e-4,
            mass: 2260.0 * 1e-4 * 1e-4 * 4e-5,
            gravity: crate::trap::STANDARD_GRAVITY,
            dims: (50, 30),
            frame: Frame::Rotating,
        }
    }

    /// Dimensionless parameters with ω = 1, for joint-space numerics.
    pub fn scaled(chi_over_omega: f64, s_over_omega: f64, alpha: Complex64, n_beta: f64, dims: (usize, usize)) -> Self {
        Self {
            omega: 1.0,
            omega_c: 0.0,
            chi: chi_over_omega,
            s: s_over_omega,
            alpha,
            n_beta,
            cavity_length: 1.0,
            mass: 1.0,
            gravity: 0.0,
            dims,
            frame: Frame::Rotating,
        }
    }

    /// Desk-scale defaults for joint numerics: χ/ω = S/ω = 0.1, α = 0.1,
    /// n_β = 0.1, truncation (16, 20).
    pub fn dimensionless_default() -> Self {
        Self::scaled(0.1, 0.1, Complex64::new(0.1, 0.0), 0.1, (16, 20))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return bad(format!("chi must be finite and non-negative, got {}", self.chi));
        }
        if !self.s.is_finite() || !self.omega_c.is_finite() || self.omega_c < 0.0 {
            return bad("S and omega_c must be finite (omega_c ≥ 0)".into());
        }
        if !(self.n_beta >= 0.0) {
            return bad(format!("n_beta must be >= 0, got {}", self.n_beta));
        }
        if self.dims.0 < 2 || self.dims.1 < 2 {
            return Err(Error::InvalidDimension(format!("dims {:?} must be at least 2", self.dims)));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// `t_n = 2πn/ω`, where cavity and mechanics factorise.
    pub fn decoupling_time(&self, n: u32) -> f64 {
        n as f64 * self.period()
    }

    pub fn photon_number(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    pub fn with_alpha(&self, alpha: Complex64) -> Self {
        Self { alpha, ..self.clone() }
    }

    /// Couplings re-derived from `m`, `g`, `L`, plus the two masses that the
    /// given χ and S would each require.
    pub fn coupling_consistency(&self) -> CouplingConsistency {
        let chi_from_mass = self.omega_c / self.cavity_length * (HBAR / (2.0 * self.omega * self.mass)).sqrt();
        let s_from_mass = self.mass * self.gravity * (1.0 / (2.0 * self.omega * HBAR * self.mass)).sqrt();
        let mass_from_chi = HBAR * self.omega_c.powi(2) / (2.0 * self.omega * self.cavity_length.powi(2) * self.chi.powi(2));
        let mass_from_s = 2.0 * self.omega * HBAR * self.s.powi(2) / self.gravity.powi(2);
        let c = CouplingConsistency {
            chi_from_mass,
            s_from_mass,
            mass_from_chi,
            mass_from_s,
        };
        let ratio = c.mass_ratio();
        if !(0.5..=2.0).contains(&ratio) {
            log::warn!(
                "chi and S imply mirror masses {mass_from_chi:.3e} kg and {mass_from_s:.3e} kg (ratio {ratio:.1}); \
                 they are used as independent inputs"
            );
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConsistency {
    pub chi_from_mass: f64,
    pub s_from_mass: f64,
    pub mass_from_chi: f64,
    pub mass_from_s: f64,
}

impl CouplingConsistency {
    pub fn mass_ratio(&self) -> f64 {
        self.mass_from_s / self.mass_from_chi
    }
}

/// χ ∝ ω^{-1/2}, S ∝ ω^{-1/2}: how the couplings follow a shift of the trap frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub chi_bar: f64,
    pub s_bar: f64,
}

impl ScalingLaw {
    pub fn calibrate(p: &SystemParams) -> Self {
        let root = p.omega.sqrt();
        Self {
            chi_bar: p.chi * root,
            s_bar: p.s * root,
        }
    }

    pub fn chi(&self, omega: f64) -> f64 {
        self.chi_bar / omega.sqrt()
    }

    pub fn s(&self, omega: f64) -> f64 {
        self.s_bar / omega.sqrt()
    }

    /// `p` moved to trap frequency `omega` with co-varying couplings.
    pub fn apply(&self, p: &SystemParams, omega: f64) -> SystemParams {
        SystemParams {
            omega,
            chi: self.chi(omega),
            s: self.s(omega),
            ..p.clone()
        }
    }
}

/// `(χ l + S)/ω` for every cavity level.
fn conditioned_shifts(p: &SystemParams) -> Vec<f64> {
    (0..p.dims.0).map(|l| (p.chi * l as f64 + p.s) / p.omega).collect()
}

/// Cavity phase `(χ l + S)²/ω² (ωt − sin ωt)` (plus `−ω_c t l` in the lab frame).
pub fn kerr_phase(l: usize, t: f64, p: &SystemParams) -> f64 {
    let k = (p.chi * l as f64 + p.s) / p.omega;
    let wt = p.omega * t;
    let mut phase = k * k * (wt - wt.sin());
    if p.frame == Frame::Lab {
        phase -= p.omega_c * t * l as f64;
    }
    phase
}

/// The factorised joint unitary at one time.
#[derive(Debug, Clone)]
pub struct Propagator {
    t: f64,
    dims: (usize, usize),
    phases: Vec<Complex64>,
    /// `D(β_l) e^{−iωt b†b}` for each photon number `l`.
    blocks: Vec<CMatrix>,
    /// Tail of the displaced mechanical vacuum beyond the truncation, per block.
    block_leakage: Vec<f64>,
}

/// Builds `U(t)` for parameters `p`.
pub fn propagator(t: f64, p: &SystemParams) -> Result<Propagator> {
    p.validate()?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("time must be finite and >= 0, got {t}")));
    }
    let (dc, dm) = p.dims;
    let wt = p.omega * t;
    let eta = Complex64::new(1.0 - wt.cos(), wt.sin());
    let b = annihilation(dm)?;
    // all conditioned displacements share the generator i(η b† − η* b) up to a real scale
    let generator = (b.adjoint() * eta - &b * eta.conj()) * I;
    let eig: HermitianEigen = eig_hermitian(&generator)?;
    let rotation = DVector::from_fn(dm, |j, _| Complex64::from_polar(1.0, -wt * j as f64));

    let shifts = conditioned_shifts(p);
    let mut blocks = Vec::with_capacity(dc);
    let mut phases = Vec::with_capacity(dc);
    let mut block_leakage = Vec::with_capacity(dc);
    for (l, &k) in shifts.iter().enumerate() {
        let mut block = eig.map(|lambda| Complex64::from_polar(1.0, -k * lambda));
        for j in 0..dm {
            let r = rotation[j];
            block.column_mut(j).iter_mut().for_each(|z| *z *= r);
        }
        blocks.push(block);
        phases.push(Complex64::from_polar(1.0, kerr_phase(l, t, p)));
        block_leakage.push(poisson_tail((k * eta).norm_sqr(), dm));
    }
    Ok(Propagator {
        t,
        dims: p.dims,
        phases,
        blocks,
        block_leakage,
    })
}

impl Propagator {
    pub fn time(&self) -> f64 {
        self.t
    }

    /// Largest probability, over photon-number blocks, that the displaced
    /// mechanical vacuum lies beyond the truncation.
    pub fn edge_leakage(&self) -> f64 {
        self.block_leakage.iter().cloned().fold(0.0, f64::max)
    }

    /// Leakage weighted by the photon-number populations of a state.
    pub fn weighted_leakage(&self, populations: &[f64]) -> f64 {
        self.block_leakage.iter().zip(populations).map(|(leak, p)| leak * p).sum()
    }

    pub fn check_leakage(&self, threshold: f64) -> Result<()> {
        let tail_mass = self.edge_leakage();
        if tail_mass > threshold {
            return Err(Error::Truncation {
                what: format!("mechanical displacement at t = {}", self.t),
                tail_mass,
                threshold,
            });
        }
        Ok(())
    }

    /// Mechanical operator applied when the cavity holds `l` photons, including the cavity phase.
    pub fn conditioned_block(&self, l: usize) -> CMatrix {
        &self.blocks[l] * self.phases[l]
    }

    /// Dense `(dim_c·dim_m)²` unitary.
    pub fn to_matrix(&self) -> CMatrix {
        let (dc, dm) = self.dims;
        let mut u = CMatrix::zeros(dc * dm, dc * dm);
        for l in 0..dc {
            u.view_mut((l * dm, l * dm), (dm, dm)).copy_from(&self.conditioned_block(l));
        }
        u
    }

    /// `U ρ U†` on a cavity ⊗ mechanics state.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let (dc, dm) = self.dims;
        if rho.dims() != [dc, dm] {
            return Err(Error::InvalidDimension(format!(
                "propagator dims ({dc}, {dm}) vs state dims {:?}",
                rho.dims()
            )));
        }
        let n = dc * dm;
        let src = rho.matrix();
        let mut left = CMatrix::zeros(n, n);
        for l in 0..dc {
            let rows = src.view((l * dm, 0), (dm, n));
            left.view_mut((l * dm, 0), (dm, n)).copy_from(&(&self.blocks[l] * rows));
        }
        let mut out = CMatrix::zeros(n, n);
        for m in 0..dc {
            let cols = left.view((0, m * dm), (n, dm));
            out.view_mut((0, m * dm), (n, dm)).copy_from(&(cols * self.blocks[m].adjoint()));
        }
        for l in 0..dc {
            for m in 0..dc {
                let phase = self.phases[l] * self.phases[m].conj();
                out.view_mut((l * dm, m * dm), (dm, dm)).iter_mut().for_each(|z| *z *= phase);
            }
        }
        Ok(DensityMatrix::from_evolution(out, rho.dims().to_vec()))
    }
}

/// `|α⟩⟨α| ⊗ ρ_th(n_β)` on the configured truncation.
pub fn initial_state(p: &SystemParams) -> Result<DensityMatrix> {
    p.validate()?;
    let cavity = coherent_state(p.alpha, p.dims.0)?.warn("cavity coherent state");
    let mech = thermal_state(p.n_beta, p.dims.1)?.warn("mechanical thermal state");
    Ok(cavity.to_density().tensor(&mech))
}

/// `U(t) ρ0 U(t)†`.
pub fn evolve_joint(rho0: &DensityMatrix, t: f64, p: &SystemParams) -> Result<DensityMatrix> {
    let u = propagator(t, p)?;
    let out = u.apply(rho0)?;
    let (dc, dm) = p.dims;
    let populations: Vec<f64> = (0..dc).map(|l| (0..dm).map(|j| rho0.matrix()[(l * dm + j, l * dm + j)].re).sum()).collect();
    let leakage = u.weighted_leakage(&populations);
    if leakage > hilbert::TAIL_WARN {
        log::warn!("mechanical truncation leakage {leakage:.3e} at t = {t}");
    }
    Ok(out)
}

pub fn reduced_cavity(rho: &DensityMatrix) -> Result<DensityMatrix> {
    rho.partial_trace(0)
}

pub fn reduced_mechanics(rho: &DensityMatrix) -> Result<DensityMatrix> {
    rho.partial_trace(1)
}

/// How the mechanical occupancy enters the Gaussian coherence decay of the
/// reduced cavity state, `exp[−χ²(l−m)²/ω² (1 − cos ωt) κ]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalFactor {
    /// κ = 1 + n_β/2.
    Printed,
    /// κ = 2 n_β + 1, from the thermal characteristic function.
    Conventional,
}

impl Default for ThermalFactor {
    /// The convention that matches the exact partial trace (see [`adjudicate_thermal_factor`]).
    fn default() -> Self {
        ThermalFactor::Conventional
    }
}

impl ThermalFactor {
    pub fn kappa(self, n_beta: f64) -> f64 {
        match self {
            ThermalFactor::Printed => 1.0 + n_beta / 2.0,
            ThermalFactor::Conventional => 2.0 * n_beta + 1.0,
        }
    }
}

/// Closed-form reduced cavity state at time `t`.
pub fn reduced_cavity_analytic(t: f64, p: &SystemParams, variant: ThermalFactor) -> Result<DensityMatrix> {
    p.validate()?;
    let dc = p.dims.0;
    let psi = coherent_state(p.alpha, dc)?.warn("analytic cavity state");
    let c = psi.amplitudes();
    let wt = p.omega * t;
    let decay_rate = (p.chi / p.omega).powi(2) * (1.0 - wt.cos()) * variant.kappa(p.n_beta);
    let phases: Vec<f64> = (0..dc).map(|l| kerr_phase(l, t, p)).collect();
    let mat = CMatrix::from_fn(dc, dc, |l, m| {
        let diff = l as f64 - m as f64;
        c[l] * c[m].conj() * Complex64::from_polar((-decay_rate * diff * diff).exp(), phases[l] - phases[m])
    });
    DensityMatrix::new(hilbert::hermitize(&mat), vec![dc])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Adjudication {
    pub winner: ThermalFactor,
    pub max_infidelity_printed: f64,
    pub max_infidelity_conventional: f64,
}

/// Compares both thermal-factor conventions with the exact partial trace of
/// the joint evolution over `times`.
pub fn adjudicate_thermal_factor(p: &SystemParams, times: &[f64]) -> Result<Adjudication> {
    let rho0 = initial_state(p)?;
    let mut worst = [0.0f64; 2];
    for &t in times {
        let exact = reduced_cavity(&evolve_joint(&rho0, t, p)?)?;
        for (slot, variant) in [ThermalFactor::Printed, ThermalFactor::Conventional].into_iter().enumerate() {
            let analytic = reduced_cavity_analytic(t, p, variant)?;
            worst[slot] = worst[slot].max(hilbert::infidelity(&analytic, &exact)?);
        }
    }
    let winner = if worst[1] <= worst[0] {
        ThermalFactor::Conventional
    } else {
        ThermalFactor::Printed
    };
    log::info!(
        "thermal factor: printed max infidelity {:.3e}, conventional {:.3e} -> {winner:?}",
        worst[0],
        worst[1]
    );
    Ok(Adjudication {
        winner,
        max_infidelity_printed: worst[0],
        max_infidelity_conventional: worst[1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraturePoint {
    pub t: f64,
    pub x: f64,
    pub p: f64,
}

/// `⟨x⟩ = √2 Re⟨a⟩`, `⟨p⟩ = √2 Im⟨a⟩` of a cavity state.
pub fn quadratures(rho_c: &DensityMatrix) -> Result<(f64, f64)> {
    let a = annihilation(rho_c.dim())?;
    let mean = rho_c.expectation(&a);
    Ok((std::f64::consts::SQRT_2 * mean.re, std::f64::consts::SQRT_2 * mean.im))
}

/// Phase-space trajectory of the cavity field, from the closed-form reduced state.
pub fn quadrature_trajectory(times: &[f64], p: &SystemParams, variant: ThermalFactor) -> Result<Vec<QuadraturePoint>> {
    times
        .iter()
        .map(|&t| {
            let (x, q) = quadratures(&reduced_cavity_analytic(t, p, variant)?)?;
            Ok(QuadraturePoint { t, x, p: q })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CrossCheck {
    pub state: DensityMatrix,
    pub max_infidelity: f64,
    /// `(t, infidelity)` after every step.
    pub trace: Vec<(f64, f64)>,
}

/// Minimum steps per mechanical period for stepwise evolution.
pub const MIN_STEPS_PER_PERIOD: f64 = 16.0;

/// Applies `U(t/n_steps)` `n_steps` times and compares the reduced cavity
/// state with the closed form after every step.
pub fn stepper_crosscheck(
    rho0: &DensityMatrix,
    t: f64,
    p: &SystemParams,
    n_steps: usize,
    variant: ThermalFactor,
    bound: f64,
) -> Result<CrossCheck> {
    let periods = t / p.period();
    if n_steps == 0 || (n_steps as f64) < MIN_STEPS_PER_PERIOD * periods {
        return Err(Error::InvalidParameter(format!(
            "{n_steps} steps over {periods:.2} periods; need at least {MIN_STEPS_PER_PERIOD} per period"
        )));
    }
    let dt = t / n_steps as f64;
    let step = propagator(dt, p)?;
    let mut state = rho0.clone();
    let mut trace = Vec::with_capacity(n_steps);
    let mut max_infidelity: f64 = 0.0;
    for k in 1..=n_steps {
        state = step.apply(&state)?;
        let tk = k as f64 * dt;
        let analytic = reduced_cavity_analytic(tk, p, variant)?;
        let infid = hilbert::infidelity(&analytic, &reduced_cavity(&state)?)?;
        max_infidelity = max_infidelity.max(infid);
        trace.push((tk, infid));
    }
    if max_infidelity > bound {
        return Err(Error::CrossCheck { max_infidelity, bound });
    }
    Ok(CrossCheck {
        state,
        max_infidelity,
        trace,
    })
}

/// Mechanical block of the (cavity-diagonal) Hamiltonian for photon number `l`:
/// `ω b†b − (χ l + S)(b + b†)`, plus `ω_c l` in the lab frame.
pub fn conditioned_hamiltonian(l: usize, p: &SystemParams) -> Result<CMatrix> {
    let dm = p.dims.1;
    let b = annihilation(dm)?;
    let g = p.chi * l as f64 + p.s;
    let mut h = b.adjoint() * &b * Complex64::new(p.omega, 0.0) - (&b + b.adjoint()) * Complex64::new(g, 0.0);
    if p.frame == Frame::Lab {
        for j in 0..dm {
            h[(j, j)] += Complex64::new(p.omega_c * l as f64, 0.0);
        }
    }
    Ok(h)
}

/// Dense joint Hamiltonian (block diagonal in photon number).
pub fn joint_hamiltonian(p: &SystemParams) -> Result<CMatrix> {
    let (dc, dm) = p.dims;
    let mut h = CMatrix::zeros(dc * dm, dc * dm);
    for l in 0..dc {
        h.view_mut((l * dm, l * dm), (dm, dm)).copy_from(&conditioned_hamiltonian(l, p)?);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{frobenius, identity, infidelity, number};

    fn small() -> SystemParams {
        SystemParams::scaled(0.1, 0.1, Complex64::new(0.1, 0.0), 0.1, (8, 20))
    }

    #[test]
    fn identity_at_time_zero() {
        let p = small();
        let u = propagator(0.0, &p).unwrap().to_matrix();
        assert!(frobenius(&(u - identity(160))) < 1e-12);
        let rho0 = initial_state(&p).unwrap();
        let rho = evolve_joint(&rho0, 0.0, &p).unwrap();
        assert!(frobenius(&(rho.matrix() - rho0.matrix())) < 1e-12);
    }

    #[test]
    fn mechanics_returns_at_one_period() {
        let p = small();
        let u = propagator(p.period(), &p).unwrap();
        for l in 0..p.dims.0 {
            let block = u.conditioned_block(l);
            let expect = Complex64::from_polar(1.0, kerr_phase(l, p.period(), &p));
            let diff = frobenius(&(block - identity(p.dims.1) * expect));
            assert!(diff < 1e-10, "l={l}: {diff}");
            // decoupled phase is 2π (χ l + S)²/ω²
            let k = (p.chi * l as f64 + p.s) / p.omega;
            assert!((kerr_phase(l, p.period(), &p) - 2.0 * PI * k * k).abs() < 1e-12);
        }
    }

    #[test]
    fn propagator_is_unitary() {
        let p = SystemParams::scaled(0.1, 0.3, Complex64::new(0.5, 0.0), 0.1, (16, 50));
        for &t in &[0.37, 1.9, 4.4] {
            let u = propagator(t, &p).unwrap();
            let m = u.to_matrix();
            let defect = frobenius(&(&m * m.adjoint() - identity(16 * 50)));
            assert!(defect < 1e-9, "t={t}: {defect}");
            assert!(u.edge_leakage() < 1e-10);
        }
    }

    #[test]
    fn leakage_is_weighted_by_photon_populations() {
        let p = SystemParams::scaled(0.1, 0.1, Complex64::new(0.1, 0.0), 0.0, (16, 20));
        let u = propagator(PI, &p).unwrap();
        // high photon blocks are displaced past the truncation but hold no population
        assert!(u.edge_leakage() > 1e-4);
        let mut pops = vec![0.0; 16];
        pops[0] = 1.0;
        assert!(u.weighted_leakage(&pops) < 1e-12);
        pops[15] = 1e-3;
        assert!((u.weighted_leakage(&pops) - 1e-3 * u.block_leakage[15]).abs() < 1e-15);
    }

    #[test]
    fn propagator_matches_hamiltonian_exponential() {
        // independent route: exp(−iHt) of the linearly coupled Hamiltonian
        let p = SystemParams::scaled(0.15, 0.1, Complex64::new(0.3, 0.0), 0.0, (4, 40));
        let t = 2.3;
        let exact = hilbert::expm_i_hermitian(&joint_hamiltonian(&p).unwrap(), t).unwrap();
        let u = propagator(t, &p).unwrap().to_matrix();
        // compare on the low mechanical levels of every photon block
        for l in 0..4 {
            let a = exact.view((l * 40, l * 40), (10, 10));
            let b = u.view((l * 40, l * 40), (10, 10));
            let diff = (a - b).map(|z| z.norm()).max();
            assert!(diff < 1e-9, "l={l}: {diff}");
        }
    }

    #[test]
    fn structured_apply_matches_dense() {
        let p = SystemParams::scaled(0.2, 0.1, Complex64::new(0.4, 0.2), 0.2, (6, 12));
        let rho0 = initial_state(&p).unwrap();
        let u = propagator(1.3, &p).unwrap();
        let fast = u.apply(&rho0).unwrap();
        let dense = rho0.conjugate(&u.to_matrix()).unwrap();
        assert!(frobenius(&(fast.matrix() - dense.matrix())) < 1e-13);
    }

    #[test]
    fn decoupling_restores_purity_and_energy() {
        let p = SystemParams::scaled(0.3, 0.2, Complex64::new(0.1, 0.0), 0.1, (8, 30));
        let rho0 = initial_state(&p).unwrap();
        let n_op = number(p.dims.1).unwrap();
        let e0 = reduced_mechanics(&rho0).unwrap().expectation(&n_op).re;
        for n in 1..=3 {
            let rho = evolve_joint(&rho0, p.decoupling_time(n), &p).unwrap();
            let cav = reduced_cavity(&rho).unwrap();
            assert!((cav.purity() - 1.0).abs() < 1e-8, "n={n}: {}", cav.purity());
            let mech = reduced_mechanics(&rho).unwrap();
            assert!((mech.expectation(&n_op).re - e0).abs() < 1e-8 * e0);
            let th = thermal_state(p.n_beta, p.dims.1).unwrap().into_inner();
            assert!(infidelity(&mech, &th).unwrap() < 1e-8);
        }
        // in between the cavity is entangled with the mechanics
        let mid = reduced_cavity(&evolve_joint(&rho0, 0.5 * p.period(), &p).unwrap()).unwrap();
        assert!(mid.purity() < 1.0 - 1e-6);
    }

    #[test]
    fn photon_populations_are_conserved() {
        let p = small();
        let rho0 = initial_state(&p).unwrap();
        let c0 = reduced_cavity(&rho0).unwrap();
        for &t in &[0.4, 2.0, 5.1] {
            let c = reduced_cavity(&evolve_joint(&rho0, t, &p).unwrap()).unwrap();
            for l in 0..p.dims.0 {
                assert!((c.matrix()[(l, l)] - c0.matrix()[(l, l)]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn analytic_at_decoupling_is_pure_kerr_state() {
        let p = SystemParams::scaled(0.3, 0.2, Complex64::new(0.3, 0.1), 0.1, (12, 10));
        let t = p.decoupling_time(2);
        let rho = reduced_cavity_analytic(t, &p, ThermalFactor::Printed).unwrap();
        let psi = coherent_state(p.alpha, 12).unwrap().into_inner();
        let amps = DVector::from_fn(12, |l, _| psi.amplitudes()[l] * Complex64::from_polar(1.0, kerr_phase(l, t, &p)));
        let target = hilbert::StateVector::new(amps, vec![12]).unwrap().to_density();
        assert!(infidelity(&rho, &target).unwrap() < 1e-10);
    }

    #[test]
    fn variants_agree_without_thermal_phonons() {
        let p = SystemParams::scaled(0.3, 0.2, Complex64::new(0.3, 0.0), 0.0, (10, 10));
        let a = reduced_cavity_analytic(1.7, &p, ThermalFactor::Printed).unwrap();
        let b = reduced_cavity_analytic(1.7, &p, ThermalFactor::Conventional).unwrap();
        assert!(frobenius(&(a.matrix() - b.matrix())) < 1e-12);
    }

    #[test]
    fn conventional_factor_matches_partial_trace() {
        let p = SystemParams::scaled(0.4, 0.2, Complex64::new(0.5, 0.0), 0.3, (12, 30));
        let times: Vec<f64> = (0..12).map(|k| 0.23 + k as f64 * 0.5).collect();
        let verdict = adjudicate_thermal_factor(&p, &times).unwrap();
        assert_eq!(verdict.winner, ThermalFactor::Conventional);
        assert!(verdict.max_infidelity_conventional < 1e-8);
        assert!(verdict.max_infidelity_printed > 1e-6);
        assert_eq!(ThermalFactor::default(), verdict.winner);
    }

    #[test]
    fn quadrature_edge_cases() {
        let p = SystemParams::scaled(0.2, 0.1, Complex64::new(0.0, 0.0), 0.1, (14, 10));
        let traj = quadrature_trajectory(&[0.0, 1.0, 2.0], &p, ThermalFactor::default()).unwrap();
        assert!(traj.iter().all(|q| q.x.abs() < 1e-15 && q.p.abs() < 1e-15));
        let alpha = Complex64::new(0.3, -0.2);
        let p = p.with_alpha(alpha);
        let start = quadrature_trajectory(&[0.0], &p, ThermalFactor::default()).unwrap()[0];
        assert!((start.x - 2f64.sqrt() * alpha.re).abs() < 1e-12);
        assert!((start.p - 2f64.sqrt() * alpha.im).abs() < 1e-12);
    }

    #[test]
    fn trajectory_closes_when_kerr_phases_are_whole_turns() {
        // (χ l + S)² integer for all l when χ = 1, S = 0: phases are 2π multiples at t = 2π
        let p = SystemParams::scaled(1.0, 0.0, Complex64::new(0.2, 0.0), 0.0, (10, 40));
        let traj = quadrature_trajectory(&[0.0, p.period()], &p, ThermalFactor::default()).unwrap();
        assert!((traj[0].x - traj[1].x).abs() < 1e-6 && (traj[0].p - traj[1].p).abs() < 1e-6);
        // otherwise the end point is a rotated pure state: same distance from origin only at leading order
        let p = SystemParams::scaled(0.1, 0.1, Complex64::new(0.2, 0.0), 0.0, (10, 20));
        let traj = quadrature_trajectory(&[0.0, p.period()], &p, ThermalFactor::default()).unwrap();
        let direct = reduced_cavity_analytic(p.period(), &p, ThermalFactor::default()).unwrap();
        assert!((direct.purity() - 1.0).abs() < 1e-12);
        assert!((traj[1].x - traj[0].x).abs() > 1e-3);
    }

    #[test]
    fn stepping_is_exact_factorisation() {
        let p = SystemParams::scaled(0.3, 0.2, Complex64::new(0.1, 0.0), 0.1, (6, 40));
        let rho0 = initial_state(&p).unwrap();
        let t = p.decoupling_time(1);
        let coarse = stepper_crosscheck(&rho0, t, &p, 16, ThermalFactor::default(), 1e-8).unwrap();
        let fine = stepper_crosscheck(&rho0, t, &p, 32, ThermalFactor::default(), 1e-8).unwrap();
        assert!(coarse.max_infidelity < 1e-10 && fine.max_infidelity < 1e-10, "{} {}", coarse.max_infidelity, fine.max_infidelity);
        let direct = evolve_joint(&rho0, t, &p).unwrap();
        assert!(infidelity(&coarse.state, &direct).unwrap().abs() < 1e-10);
        assert!(matches!(
            stepper_crosscheck(&rho0, t, &p, 8, ThermalFactor::default(), 1e-8),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn wrong_factor_infidelity_oscillates_with_period() {
        let p = SystemParams::scaled(0.4, 0.2, Complex64::new(0.1, 0.0), 0.1, (6, 40));
        let rho0 = initial_state(&p).unwrap();
        let cc = stepper_crosscheck(&rho0, p.decoupling_time(2), &p, 64, ThermalFactor::Printed, 1.0).unwrap();
        let at = |frac: f64| {
            let k = (frac * 64.0).round() as usize - 1;
            cc.trace[k].1
        };
        // fidelity is lowest midway between decoupling times and restored at them
        assert!(at(0.25) > 100.0 * at(0.5).abs().max(1e-14));
        assert!(at(0.75) > 100.0 * at(1.0).abs().max(1e-14));
        assert!(matches!(
            stepper_crosscheck(&rho0, p.decoupling_time(2), &p, 64, ThermalFactor::Printed, 1e-12),
            Err(Error::CrossCheck { .. })
        ));
    }

    #[test]
    fn scaling_law_round_trip() {
        let p = SystemParams::table1();
        let law = ScalingLaw::calibrate(&p);
        assert!((law.chi(p.omega) - p.chi).abs() < 1e-12 * p.chi);
        assert!((law.s(p.omega) - p.s).abs() < 1e-12 * p.s);
        let q = law.apply(&p, 4.0 * p.omega);
        assert!((q.chi - p.chi / 2.0).abs() < 1e-12 * p.chi);
    }

    #[test]
    fn table_couplings_imply_different_masses() {
        let c = SystemParams::table1().coupling_consistency();
        assert!(c.mass_ratio() > 10.0);
    }
}
