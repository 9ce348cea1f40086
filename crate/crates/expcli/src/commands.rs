//! One function per subcommand, each producing numeric tables.

use std::f64::consts::PI;

use omm_core::channels::CollisionConfig;
use omm_core::dynamics::{self, ThermalFactor};
use omm_core::hilbert;
use omm_core::metrology::{self, CavityModel, LOSSY_DERIVATIVE_STEP};
use omm_core::trap;
use rayon::prelude::*;

use crate::config::{Axis, RunConfig};
use crate::error::{CliError, Result};

/// Rows of numbers under unit-annotated column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name || c.split(' ').next() == Some(name))
    }

    /// Values of the column whose name (without units) is `name`.
    pub fn values(&self, name: &str) -> Vec<f64> {
        let k = self.column(name).unwrap_or_else(|| panic!("table {} has no column {name}", self.name));
        self.rows.iter().map(|r| r[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Trap,
    Scaling,
    Evolve,
    Decohere,
    Cfi,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Trap => "trap",
            Command::Scaling => "scaling",
            Command::Evolve => "evolve",
            Command::Decohere => "decohere",
            Command::Cfi => "cfi",
        }
    }

    pub fn run(self, cfg: &RunConfig) -> Result<Vec<Table>> {
        match self {
            Command::Trap => cmd_trap(cfg),
            Command::Scaling => cmd_scaling(cfg),
            Command::Evolve => cmd_evolve(cfg),
            Command::Decohere => cmd_decohere(cfg),
            Command::Cfi => cmd_cfi(cfg),
        }
    }
}

fn at<T>(what: &str, x: f64, r: omm_core::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::core(format!("{what} at {x}"), e))
}

/// ω(d), f(d), dω/dd and the equilibrium height over the `d_m` grid.
pub fn cmd_trap(cfg: &RunConfig) -> Result<Vec<Table>> {
    let grid = cfg.grid(Axis::DM)?;
    cfg.trap.validate().map_err(|e| CliError::core("[trap]", e))?;
    let mut table = Table::new("trap", &["d [m]", "omega [rad/s]", "f [Hz]", "domega_dd [rad/(s m)]", "z0 [m]"]);
    table.rows = grid
        .par_iter()
        .map(|&d| {
            let r = at("d", d, trap::trap_frequency(d, &cfg.trap))?;
            Ok(vec![d, r.omega, r.omega / (2.0 * PI), r.dwdd, r.z0])
        })
        .collect::<Result<_>>()?;
    Ok(vec![table])
}

/// Closed-form decoupled-state QFI against photon number, with power-law
/// fits over the configured windows and the regime crossovers.
pub fn cmd_scaling(cfg: &RunConfig) -> Result<Vec<Table>> {
    let grid = cfg.grid(Axis::PhotonNumber)?;
    let p = cfg.system.params()?;
    let sc = &cfg.scaling;
    if sc.n == 0 {
        return Err(CliError::Config("[scaling]: n must be at least 1".into()));
    }
    let dwdd = sc.dwdd_rad_s_m.unwrap_or_else(metrology::backsolved_dwdd);
    let qfi = |n_photons: f64| metrology::qfi_pure_analytic(&p.with_alpha(n_photons.sqrt().into()), sc.n, dwdd).value;

    let mut data = Table::new("scaling", &["photon_number [1]", "qfi_d [1/m^2]", "delta_d [m]", "local_exponent [1]"]);
    for &n in &grid {
        let f = qfi(n);
        data.rows.push(vec![n, f, 1.0 / f.sqrt(), metrology::local_exponent(&p, n)]);
    }

    let mut fits = Table::new("scaling_fits", &["n_lo [1]", "n_hi [1]", "exponent [1]", "max_residual [log10]"]);
    for &[lo, hi] in &sc.fit_windows {
        if !(lo > 0.0 && hi > lo) {
            return Err(CliError::Config(format!("[scaling]: bad fit window [{lo}, {hi}]")));
        }
        let count = (sc.fit_points_per_decade as f64 * (hi / lo).log10()).ceil() as usize + 1;
        let ns = metrology::log_space(lo, hi, count.max(2));
        let fs: Vec<f64> = ns.iter().map(|&n| qfi(n)).collect();
        let fit = metrology::scaling_fit(&ns, &fs).map_err(|e| CliError::core(format!("fit over [{lo}, {hi}]"), e))?;
        fits.rows.push(vec![lo, hi, fit.exponent, fit.max_residual]);
    }

    let mut cross = Table::new(
        "scaling_crossovers",
        &["sql_linear_balance [1]", "sql_linear_slope [1]", "linear_cubic_balance [1]", "linear_cubic_slope [1]"],
    );
    let c = metrology::crossovers(&p).map_err(|e| CliError::core("crossovers", e))?;
    cross.rows.push(vec![c.sql_to_linear_balance, c.sql_to_linear_slope, c.linear_to_cubic_balance, c.linear_to_cubic_slope]);
    Ok(vec![data, fits, cross])
}

/// Lossless evolution: QFI of the reduced cavity state, the phase-only QFI,
/// closed-form vs exact infidelity, quadratures and purity.
pub fn cmd_evolve(cfg: &RunConfig) -> Result<Vec<Table>> {
    let grid = cfg.grid(Axis::OmegaTRad)?;
    let p = cfg.system.params()?;
    let rho0 = dynamics::initial_state(&p).map_err(|e| CliError::core("initial state", e))?;
    let model = CavityModel::Joint;
    let mut table = Table::new(
        "evolve",
        &[
            "omega_t [rad]",
            "qfi [1/omega^2]",
            "phase_qfi [1/omega^2]",
            "infidelity [1]",
            "x [1]",
            "p [1]",
            "purity [1]",
        ],
    );
    table.rows = grid
        .par_iter()
        .map(|&wt| {
            let t = wt / p.omega;
            let row = (|| -> omm_core::Result<Vec<f64>> {
                let exact = dynamics::reduced_cavity(&dynamics::evolve_joint(&rho0, t, &p)?)?;
                let closed = dynamics::reduced_cavity_analytic(t, &p, ThermalFactor::default())?;
                let q = metrology::qfi_from_pair(&metrology::unitary_pair(&model, &p, t, model.derivative_step())?)?.value;
                let (x, pq) = dynamics::quadratures(&exact)?;
                Ok(vec![
                    wt,
                    q,
                    metrology::phase_qfi(t, &p)?.value,
                    hilbert::infidelity(&closed, &exact)?,
                    x,
                    pq,
                    exact.purity(),
                ])
            })();
            at("omega_t", wt, row)
        })
        .collect::<Result<_>>()?;
    Ok(vec![table])
}

/// Collision-step indices of the ωt grid; every point must fall on a step.
fn grid_steps(grid: &[f64], c: &CollisionConfig) -> Result<Vec<usize>> {
    let per_step = 2.0 * PI / c.steps_per_period as f64;
    grid.iter()
        .map(|&wt| {
            let k = wt / per_step;
            if wt < 0.0 || (k - k.round()).abs() > 1e-6 {
                Err(CliError::Config(format!(
                    "[sweep]: omega_t = {wt} is not a multiple of the collision step 2π/{}",
                    c.steps_per_period
                )))
            } else {
                Ok(k.round() as usize)
            }
        })
        .collect()
}

/// Lossy QFI over the ωt grid for each γ/ω, plus the values at decoupling times.
pub fn cmd_decohere(cfg: &RunConfig) -> Result<Vec<Table>> {
    let grid = cfg.grid(Axis::OmegaTRad)?;
    let p = cfg.system.params()?;
    let base = cfg.collision.to_core(&p)?;
    let steps = grid_steps(&grid, &base)?;
    let gammas = &cfg.decohere.gammas_over_omega;
    if gammas.is_empty() || gammas.iter().any(|g| !(*g >= 0.0)) {
        return Err(CliError::Config("[decohere]: gammas_over_omega must be a non-empty list of values >= 0".into()));
    }
    let series: Vec<Vec<f64>> = gammas
        .par_iter()
        .map(|&g| {
            let c = base.with_gamma(g * p.omega);
            let r = metrology::lossy_qfi_series(&p, &c, &steps, LOSSY_DERIVATIVE_STEP);
            Ok(at("gamma/omega", g, r)?.into_iter().map(|e| e.value).collect())
        })
        .collect::<Result<_>>()?;

    let mut table = Table::new("decohere", &["omega_t [rad]", "gamma [omega]", "qfi [1/omega^2]"]);
    let mut peaks = Table::new("decohere_peaks", &["n [1]", "gamma [omega]", "omega_t [rad]", "qfi [1/omega^2]"]);
    for (&g, values) in gammas.iter().zip(&series) {
        for ((&wt, &k), &q) in grid.iter().zip(&steps).zip(values) {
            table.rows.push(vec![wt, g, q]);
            if k > 0 && k % base.steps_per_period == 0 {
                peaks.rows.push(vec![(k / base.steps_per_period) as f64, g, wt, q]);
            }
        }
    }
    Ok(vec![table, peaks])
}

/// Homodyne CFI at each θ and SLD-basis CFI next to the QFI, over the ωt grid.
pub fn cmd_cfi(cfg: &RunConfig) -> Result<Vec<Table>> {
    let grid = cfg.grid(Axis::OmegaTRad)?;
    let p = cfg.system.params()?;
    let thetas = &cfg.cfi.thetas_rad;
    if thetas.is_empty() || thetas.iter().any(|t| !t.is_finite()) {
        return Err(CliError::Config("[cfi]: thetas_rad must be a non-empty list of finite angles".into()));
    }
    let model = CavityModel::Joint;
    let blocks: Vec<Vec<Vec<f64>>> = grid
        .par_iter()
        .map(|&wt| {
            let rows = (|| -> omm_core::Result<Vec<Vec<f64>>> {
                let pair = metrology::unitary_pair(&model, &p, wt / p.omega, model.derivative_step())?;
                let q = metrology::qfi_from_pair(&pair)?.value;
                let s = metrology::sld_projective_cfi(&pair)?.value;
                thetas
                    .iter()
                    .map(|&th| Ok(vec![wt, th, metrology::homodyne_cfi(&pair, th)?.value, s, q]))
                    .collect()
            })();
            at("omega_t", wt, rows)
        })
        .collect::<Result<_>>()?;
    let mut table = Table::new(
        "cfi",
        &["omega_t [rad]", "theta [rad]", "homodyne_cfi [1/omega^2]", "sld_cfi [1/omega^2]", "qfi [1/omega^2]"],
    );
    table.rows = blocks.into_iter().flatten().collect();
    Ok(vec![table])
}
