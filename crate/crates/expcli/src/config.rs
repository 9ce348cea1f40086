//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use omm_core::channels::CollisionConfig;
use omm_core::dynamics::{Frame, SystemParams};
use omm_core::trap::TrapConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// ω = 1 with χ/ω = S/ω = 0.1, α = 0.1, n_β = 0.1 and truncation (16, 20).
    #[default]
    Dimensionless,
    /// Absolute device parameters, |α|² = 10⁶.
    Table1,
}

/// Physical parameters: a preset plus optional overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub preset: Preset,
    pub chi_over_omega: Option<f64>,
    pub s_over_omega: Option<f64>,
    /// |α|.
    pub alpha: Option<f64>,
    pub alpha_phase_rad: Option<f64>,
    pub n_beta: Option<f64>,
    pub cavity_dim: Option<usize>,
    pub mechanics_dim: Option<usize>,
    pub frame: Frame,
}

impl SystemSection {
    pub fn params(&self) -> Result<SystemParams> {
        let mut p = match self.preset {
            Preset::Dimensionless => SystemParams::dimensionless_default(),
            Preset::Table1 => SystemParams::table1(),
        };
        if let Some(r) = self.chi_over_omega {
            p.chi = r * p.omega;
        }
        if let Some(r) = self.s_over_omega {
            p.s = r * p.omega;
        }
        if self.alpha.is_some() || self.alpha_phase_rad.is_some() {
            let amp = self.alpha.unwrap_or(p.alpha.norm());
            p.alpha = Complex64::from_polar(amp, self.alpha_phase_rad.unwrap_or(0.0));
        }
        if let Some(n) = self.n_beta {
            p.n_beta = n;
        }
        p.dims = (self.cavity_dim.unwrap_or(p.dims.0), self.mechanics_dim.unwrap_or(p.dims.1));
        p.frame = self.frame;
        p.validate().map_err(|e| CliError::Config(format!("[system]: {e}")))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollisionSection {
    pub gamma_over_omega: f64,
    pub steps_per_period: usize,
    /// Beam-splitter angle per collision; `√(γΔt)` when absent.
    pub phi_tau_rad: Option<f64>,
    pub ancilla_dim: usize,
}

impl Default for CollisionSection {
    fn default() -> Self {
        let c = CollisionConfig::default();
        Self {
            gamma_over_omega: c.gamma,
            steps_per_period: c.steps_per_period,
            phi_tau_rad: c.phi_tau,
            ancilla_dim: c.ancilla_dim,
        }
    }
}

impl CollisionSection {
    pub fn to_core(&self, p: &SystemParams) -> Result<CollisionConfig> {
        let c = CollisionConfig {
            gamma: self.gamma_over_omega * p.omega,
            steps_per_period: self.steps_per_period,
            phi_tau: self.phi_tau_rad,
            ancilla_dim: self.ancilla_dim,
        };
        c.validate().map_err(|e| CliError::Config(format!("[collision]: {e}")))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Magnet-array separation, m.
    DM,
    /// Mean photon number |α|².
    PhotonNumber,
    /// Dimensionless time ωt, rad.
    OmegaTRad,
}

impl Axis {
    pub fn key(self) -> &'static str {
        match self {
            Axis::DM => "d_m",
            Axis::PhotonNumber => "photon_number",
            Axis::OmegaTRad => "omega_t_rad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// Grid along one axis, given either as `values` or as `start`/`stop`/`count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub stop: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
    /// Overrides applied to the other sections before the run.
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let bad = |m: String| Err(CliError::Config(format!("[sweep]: {m}")));
        let values = match (&self.values, self.start, self.stop, self.count) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => {
                if n == 0 {
                    return bad("count must be positive".into());
                }
                if n == 1 {
                    vec![a]
                } else {
                    match self.spacing {
                        Spacing::Linear => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
                        Spacing::Log => {
                            if !(a > 0.0 && b > 0.0) {
                                return bad("log spacing needs positive start and stop".into());
                            }
                            omm_core::metrology::log_space(a, b, n)
                        }
                    }
                }
            }
            _ => return bad("give either `values` or all of `start`, `stop`, `count`".into()),
        };
        if values.is_empty() {
            return bad("grid is empty".into());
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad("grid values must be finite".into());
        }
        if !values.windows(2).all(|w| w[1] > w[0]) {
            return bad("grid must be strictly increasing".into());
        }
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    /// Decoupling index n of t = 2πn/ω.
    pub n: u32,
    /// Photon-number windows for the power-law fits.
    pub fit_windows: Vec<[f64; 2]>,
    pub fit_points_per_decade: usize,
    /// dω/dd in rad/(s·m); the value reproducing the quoted headline QFI when absent.
    pub dwdd_rad_s_m: Option<f64>,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            n: 1,
            fit_windows: vec![[1e2, 1e5], [1e9, 1e12]],
            fit_points_per_decade: 6,
            dwdd_rad_s_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecohereSection {
    pub gammas_over_omega: Vec<f64>,
}

impl Default for DecohereSection {
    fn default() -> Self {
        Self {
            gammas_over_omega: vec![0.0, 0.01, 0.03, 0.05, 0.08, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfiSection {
    pub thetas_rad: Vec<f64>,
}

impl Default for CfiSection {
    fn default() -> Self {
        use std::f64::consts::PI;
        Self {
            thetas_rad: vec![0.0, PI / 6.0, PI / 4.0, PI / 3.0, PI / 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub emit_plots: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            emit_plots: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub trap: TrapConfig,
    pub system: SystemSection,
    pub collision: CollisionSection,
    pub sweep: Option<SweepSpec>,
    pub scaling: ScalingSection,
    pub decohere: DecohereSection,
    pub cfi: CfiSection,
    pub output: OutputSection,
}

impl RunConfig {
    /// Parses a TOML document and folds `[sweep.fixed]` into the other sections.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.apply_fixed()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn apply_fixed(&mut self) -> Result<()> {
        let Some(sweep) = &self.sweep else { return Ok(()) };
        for (key, &v) in &sweep.fixed {
            let s = &mut self.system;
            match key.as_str() {
                "chi_over_omega" => s.chi_over_omega = Some(v),
                "s_over_omega" => s.s_over_omega = Some(v),
                "alpha" => s.alpha = Some(v),
                "alpha_phase_rad" => s.alpha_phase_rad = Some(v),
                "n_beta" => s.n_beta = Some(v),
                "gamma_over_omega" => self.collision.gamma_over_omega = v,
                "gap_m" => self.trap.gap_m = v,
                other => return Err(CliError::Config(format!("[sweep.fixed]: unknown key `{other}`"))),
            }
        }
        Ok(())
    }

    /// Sweep grid, which must run along `axis`.
    pub fn grid(&self, axis: Axis) -> Result<Vec<f64>> {
        match &self.sweep {
            None => Err(CliError::Config(format!("a [sweep] along `{}` is required", axis.key()))),
            Some(s) if s.axis != axis => Err(CliError::Config(format!(
                "[sweep]: axis `{}` given, this command sweeps `{}`",
                s.axis.key(),
                axis.key()
            ))),
            Some(s) => s.grid(),
        }
    }

    /// SHA-256 of the resolved configuration, excluding the output section.
    pub fn hash(&self) -> String {
        let mut resolved = self.clone();
        resolved.output = OutputSection::default();
        let json = serde_json::to_vec(&resolved).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Fig1b,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::Fig1b, Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5];

    pub fn id(self) -> &'static str {
        match self {
            Figure::Fig1b => "1b",
            Figure::Fig2 => "2",
            Figure::Fig3 => "3",
            Figure::Fig4 => "4",
            Figure::Fig5 => "5",
        }
    }

    /// Configuration shipped with the binary for this figure.
    pub fn pinned(self) -> &'static str {
        match self {
            Figure::Fig1b => include_str!("../configs/fig1b.toml"),
            Figure::Fig2 => include_str!("../configs/fig2.toml"),
            Figure::Fig3 => include_str!("../configs/fig3.toml"),
            Figure::Fig4 => include_str!("../configs/fig4.toml"),
            Figure::Fig5 => include_str!("../configs/fig5.toml"),
        }
    }
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim_start_matches("fig");
        Figure::ALL
            .into_iter()
            .find(|f| f.id() == s)
            .ok_or_else(|| format!("unknown figure `{s}`, expected one of 1b, 2, 3, 4, 5"))
    }
}
