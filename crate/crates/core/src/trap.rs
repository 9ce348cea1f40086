//! Diamagnetic trap: vertical frequency of a graphite plate levitated between
//! two checkerboard arrays of cubic permanent magnets, as a function of the
//! array separation `d`.
//!
//! Geometry: the bottom array occupies `-h ≤ z ≤ 0`, the top array
//! `d ≤ z ≤ d + h`, both centred on the z axis. Cell `(i, j)` is magnetised
//! along `±z` with sign `(-1)^(i+j)`; the top layer multiplies that by the
//! layer polarity. Field values come from the closed-form surface-charge
//! solution for a uniformly magnetised cuboid.

use nalgebra::{DMatrix, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * std::f64::consts::PI;
/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopPolarity {
    /// The magnet facing a bottom cube has the opposite magnetisation.
    Opposing,
    /// The magnet facing a bottom cube has the same magnetisation.
    Aligned,
}

/// Lateral position of the plate centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateSite {
    /// Above the corner where four cubes meet.
    Junction,
    /// Above the centre of a cube face.
    CellCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrapConfig {
    /// Cube side `h`, m.
    pub magnet_side_m: f64,
    /// Remanent polarisation `μ0·M`, T.
    pub magnetization_t: f64,
    /// Cubes per side in each layer.
    pub cells_per_side: usize,
    /// Separation `d` between the facing array surfaces, m.
    pub gap_m: f64,
    /// Plate length, width, thickness, m.
    pub plate_size_m: [f64; 3],
    /// Volume susceptibility of graphite along x, y, z.
    pub susceptibility: [f64; 3],
    pub plate_density_kg_m3: f64,
    /// Gauss–Legendre nodes along x, y, z of the plate.
    pub grid: [usize; 3],
    pub top_polarity: TopPolarity,
    pub plate_site: PlateSite,
    pub gravity_m_s2: f64,
}

impl Default for TrapConfig {
    fn default() -> Self {
        Self {
            magnet_side_m: 5e-3,
            magnetization_t: 1.48,
            cells_per_side: 8,
            gap_m: 2.5e-4,
            plate_size_m: [1e-4, 1e-4, 4e-5],
            susceptibility: [-85e-6, -85e-6, -450e-6],
            plate_density_kg_m3: 2260.0,
            grid: [4, 4, 4],
            top_polarity: TopPolarity::Opposing,
            plate_site: PlateSite::Junction,
            gravity_m_s2: STANDARD_GRAVITY,
        }
    }
}

impl TrapConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.gap_m > 0.0) {
            return bad(format!("gap must be positive, got {}", self.gap_m));
        }
        if !(self.magnet_side_m > 0.0) {
            return bad(format!("magnet side must be positive, got {}", self.magnet_side_m));
        }
        if self.cells_per_side == 0 {
            return bad("array needs at least one cell per side".into());
        }
        if self.plate_size_m.iter().any(|&s| !(s > 0.0)) {
            return bad(format!("plate dimensions must be positive: {:?}", self.plate_size_m));
        }
        if self.susceptibility.iter().any(|&c| c > 0.0) {
            return bad(format!("susceptibilities must be diamagnetic (≤ 0): {:?}", self.susceptibility));
        }
        if self.plate_size_m[2] >= self.gap_m {
            return bad(format!(
                "plate thickness {} does not fit in gap {}",
                self.plate_size_m[2], self.gap_m
            ));
        }
        if self.grid.contains(&0) {
            return bad(format!("integration grid must be non-empty: {:?}", self.grid));
        }
        if !(self.plate_density_kg_m3 > 0.0) {
            return bad("plate density must be positive".into());
        }
        Ok(())
    }

    pub fn with_gap(&self, gap_m: f64) -> Self {
        Self { gap_m, ..self.clone() }
    }

    pub fn plate_volume(&self) -> f64 {
        self.plate_size_m.iter().product()
    }

    pub fn plate_mass(&self) -> f64 {
        self.plate_density_kg_m3 * self.plate_volume()
    }

    /// Lateral (x, y) of the plate centre for the configured site.
    pub fn plate_xy(&self) -> (f64, f64) {
        let even = self.cells_per_side.is_multiple_of(2);
        let on_corner = matches!(self.plate_site, PlateSite::Junction);
        // even arrays have a junction at the origin, odd arrays a cell centre
        if even == on_corner {
            (0.0, 0.0)
        } else {
            (self.magnet_side_m / 2.0, self.magnet_side_m / 2.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapResult {
    /// Vertical trap frequency, rad/s.
    pub omega: f64,
    /// Equilibrium height of the plate centre above the bottom array, m.
    pub z0: f64,
    /// dω/dd, rad/(s·m).
    pub dwdd: f64,
    /// U''(z0), J/m².
    pub curvature: f64,
    /// U'(z0), N.
    pub residual_force: f64,
    pub mass: f64,
}

/// ln(v + √(u²+v²+w²)) evaluated without cancellation for negative `v`.
fn ln_v_plus_r(u: f64, v: f64, w: f64) -> f64 {
    let r = (u * u + v * v + w * w).sqrt();
    if v >= 0.0 {
        (v + r).ln()
    } else {
        ((u * u + w * w) / (r - v)).ln()
    }
}

/// ∬ (u, v, w)/|r|³ du dv over a rectangle at fixed `w ≠ 0`.
fn rectangle_kernel(u: (f64, f64), v: (f64, f64), w: f64) -> Vector3<f64> {
    let f = |u: f64, v: f64| {
        let r = (u * u + v * v + w * w).sqrt();
        Vector3::new(-ln_v_plus_r(u, v, w), -ln_v_plus_r(v, u, w), (u * v / (w * r)).atan())
    };
    f(u.1, v.1) - f(u.1, v.0) - f(u.0, v.1) + f(u.0, v.0)
}

/// Field of a cube of side `side` centred at `center`, polarised along z with
/// `polarization` tesla (negative for −z). Points inside or on the cube are rejected.
pub fn cuboid_field(point: Vector3<f64>, center: Vector3<f64>, side: f64, polarization: f64) -> Result<Vector3<f64>> {
    let rel = point - center;
    let a = side / 2.0;
    if rel.x.abs() <= a && rel.y.abs() <= a && rel.z.abs() <= a {
        return Err(Error::Domain(format!(
            "({:.4e}, {:.4e}, {:.4e}) relative to cube centre",
            rel.x, rel.y, rel.z
        )));
    }
    // magnetic surface charge +M on the top face, −M on the bottom face
    let u = (rel.x - a, rel.x + a);
    let v = (rel.y - a, rel.y + a);
    let top = rectangle_kernel(u, v, rel.z - a);
    let bottom = rectangle_kernel(u, v, rel.z + a);
    Ok((top - bottom) * (polarization / (4.0 * std::f64::consts::PI)))
}

fn cell_center(i: usize, n: usize, h: f64) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) * h
}

/// Superposed field of both checkerboard layers.
pub fn array_field(point: Vector3<f64>, config: &TrapConfig) -> Result<Vector3<f64>> {
    let n = config.cells_per_side;
    let h = config.magnet_side_m;
    let top_sign = match config.top_polarity {
        TopPolarity::Opposing => -1.0,
        TopPolarity::Aligned => 1.0,
    };
    let mut b = Vector3::zeros();
    for i in 0..n {
        for j in 0..n {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let (cx, cy) = (cell_center(i, n, h), cell_center(j, n, h));
            let j_pol = sign * config.magnetization_t;
            b += cuboid_field(point, Vector3::new(cx, cy, -h / 2.0), h, j_pol)?;
            b += cuboid_field(point, Vector3::new(cx, cy, config.gap_m + h / 2.0), h, top_sign * j_pol)?;
        }
    }
    Ok(b)
}

/// Magnetic energy `−(1/2μ0) Σ_i χ_i ∫ B_i² dV` of the plate with its centre at `center`.
pub fn magnetic_energy(center: Vector3<f64>, config: &TrapConfig) -> Result<f64> {
    let [lx, ly, lz] = config.plate_size_m;
    if center.z - lz / 2.0 <= 0.0 || center.z + lz / 2.0 >= config.gap_m {
        return Err(Error::Domain(format!(
            "plate at z = {:.4e} m collides with the arrays (gap {:.4e} m)",
            center.z, config.gap_m
        )));
    }
    if config.susceptibility.iter().all(|&c| c == 0.0) {
        return Ok(0.0);
    }
    let [nx, ny, nz] = config.grid;
    let (qx, qy, qz) = (gauss_legendre(nx), gauss_legendre(ny), gauss_legendre(nz));
    let nodes: Vec<(Vector3<f64>, f64)> = iproduct(nx, ny, nz)
        .map(|(i, j, k)| {
            let offset = Vector3::new(qx[i].0 * lx, qy[j].0 * ly, qz[k].0 * lz) / 2.0;
            (center + offset, qx[i].1 * qy[j].1 * qz[k].1)
        })
        .collect();
    let chi = Vector3::from(config.susceptibility);
    // collected in node order so the reduction below is independent of thread count
    let densities: Vec<f64> = nodes
        .par_iter()
        .map(|&(p, w)| array_field(p, config).map(|b| w * chi.dot(&b.component_mul(&b))))
        .collect::<Result<_>>()?;
    // weights sum to 2 per axis
    Ok(-pairwise_sum(&densities) * config.plate_volume() / (8.0 * 2.0 * MU0))
}

fn iproduct(nx: usize, ny: usize, nz: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..nx).flat_map(move |i| (0..ny).flat_map(move |j| (0..nz).map(move |k| (i, j, k))))
}

/// Gauss–Legendre nodes and weights on [−1, 1] (Golub–Welsch).
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        let k = i.max(j) as f64;
        if i.abs_diff(j) == 1 {
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut rule: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], 2.0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}

fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

/// Total potential energy of the plate centred at height `z` above the bottom
/// array, at the configured lateral site: magnetic energy plus `m g z`.
pub fn plate_potential(z: f64, config: &TrapConfig) -> Result<f64> {
    let (x, y) = config.plate_xy();
    Ok(magnetic_energy(Vector3::new(x, y, z), config)? + config.plate_mass() * config.gravity_m_s2 * z)
}

/// Brent minimisation of `f` on `[a, b]`.
fn brent_minimize(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let tol1 = tol + 1e-12 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Ok(x);
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u)?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Err(Error::NumericalFailure("Brent minimisation did not converge".into()))
}

#[derive(Debug, Clone, Copy)]
struct Equilibrium {
    z0: f64,
    curvature: f64,
    residual_force: f64,
    omega: f64,
}

const SCAN_POINTS: usize = 41;

fn equilibrium(config: &TrapConfig) -> Result<Equilibrium> {
    config.validate()?;
    let t = config.plate_size_m[2];
    let d = config.gap_m;
    let margin = 1e-6 * d;
    let (lo, hi) = (t / 2.0 + margin, d - t / 2.0 - margin);
    let potential = |z: f64| plate_potential(z, config);
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|k| lo + (hi - lo) * k as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&z| potential(z)).collect::<Result<_>>()?;
    let k_min = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .expect("non-empty scan");
    if k_min == 0 || k_min == SCAN_POINTS - 1 {
        return Err(Error::NoEquilibrium(format!(
            "potential is minimal at the {} edge of the gap (d = {d:.4e} m)",
            if k_min == 0 { "lower" } else { "upper" }
        )));
    }
    let mut z0 = brent_minimize(&potential, grid[k_min - 1], grid[k_min + 1], 1e-9 * t)?;

    let step = 1e-3 * t;
    let derivatives = |z: f64| -> Result<(f64, f64)> {
        let (um, u0, up) = (potential(z - step)?, potential(z)?, potential(z + step)?);
        Ok(((up - um) / (2.0 * step), (up - 2.0 * u0 + um) / (step * step)))
    };
    let (mut slope, mut curvature) = derivatives(z0)?;
    if !(curvature > 0.0) {
        return Err(Error::NoEquilibrium(format!("non-positive curvature {curvature:.3e} at z = {z0:.4e}")));
    }
    // one Newton polish on the finite-difference force
    for _ in 0..2 {
        if slope.abs() < 1e-7 * curvature * t {
            break;
        }
        z0 -= slope / curvature;
        (slope, curvature) = derivatives(z0)?;
    }
    if !(curvature > 0.0) {
        return Err(Error::NoEquilibrium(format!("non-positive curvature {curvature:.3e} at z = {z0:.4e}")));
    }
    Ok(Equilibrium {
        z0,
        curvature,
        residual_force: slope,
        omega: (curvature / config.plate_mass()).sqrt(),
    })
}

/// Relative separation step used for dω/dd.
pub const DWDD_REL_STEP: f64 = 1e-3;

/// Equilibrium height, vertical trap frequency and dω/dd at separation `d`.
pub fn trap_frequency(d: f64, config: &TrapConfig) -> Result<TrapResult> {
    let centre = config.with_gap(d);
    let eq = equilibrium(&centre)?;
    let delta = DWDD_REL_STEP * d;
    let plus = equilibrium(&config.with_gap(d + delta))?;
    let minus = equilibrium(&config.with_gap(d - delta))?;
    Ok(TrapResult {
        omega: eq.omega,
        z0: eq.z0,
        dwdd: (plus.omega - minus.omega) / (2.0 * delta),
        curvature: eq.curvature,
        residual_force: eq.residual_force,
        mass: centre.plate_mass(),
    })
}
