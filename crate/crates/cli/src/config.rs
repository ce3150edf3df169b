//! Run configuration read from TOML.

use std::path::Path;

use serde::Deserialize;

use safeset::curve::Spacing;
use safeset::dynamics::CatalogParams;
use safeset::expansion::{ExpansionConfig, InitialSet};
use safeset::feasibility::{CertifyOptions, LipschitzMode};
use safeset::safety_filter::FilterConfig;
use safeset::{StateBox, SystemModel, Vec2};

use crate::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSection,
    #[serde(default)]
    pub safe_set: SafeSetSection,
    #[serde(default)]
    pub curve: CurveSection,
    #[serde(default)]
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub sdf: SdfSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// `double_integrator` or `inverted_pendulum`.
    pub name: String,
    pub mass: Option<f64>,
    pub length: Option<f64>,
    pub gravity: Option<f64>,
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
}

/// State constraint box; infinite bounds are written `inf` / `-inf`.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SafeSetSection {
    pub lower: Option<[f64; 2]>,
    pub upper: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    #[default]
    Sound,
    Conservative,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CurveSection {
    pub n: usize,
    pub beta: f64,
    pub lipschitz_mode: ModeName,
    pub speed_samples: usize,
}

impl Default for CurveSection {
    fn default() -> Self {
        Self { n: 50, beta: 0.5, lipschitz_mode: ModeName::Sound, speed_samples: safeset::curve::DEFAULT_SPEED_SAMPLES }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShapeName {
    #[default]
    Ellipse,
    Circle,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpacingName {
    #[default]
    Angle,
    ArcLength,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InitSection {
    pub shape: ShapeName,
    /// Ellipse `x^T P x = level`.
    pub p: [[f64; 2]; 2],
    pub level: f64,
    pub radius: f64,
    pub center: [f64; 2],
    pub spacing: SpacingName,
}

impl Default for InitSection {
    fn default() -> Self {
        Self { shape: ShapeName::Ellipse, p: [[1.0, 0.5], [0.5, 1.0]], level: 0.3, radius: 0.5, center: [0.0; 2], spacing: SpacingName::Angle }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionSection {
    pub k_n: f64,
    pub k_c: f64,
    pub gamma: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub convergence_tol: f64,
    pub q_weight: f64,
    pub enforce_containment: bool,
    pub containment_band: f64,
    pub max_halvings: usize,
    pub max_cut_rounds: usize,
    pub repair_iterations: usize,
    pub snapshot_every: usize,
    pub init: InitSection,
}

impl Default for ExpansionSection {
    fn default() -> Self {
        let d = ExpansionConfig::<f64>::default();
        Self {
            k_n: d.k_n,
            k_c: d.k_c,
            gamma: d.gamma,
            dt: d.dt,
            max_steps: d.max_steps,
            convergence_tol: d.convergence_tol,
            q_weight: d.q_weight,
            enforce_containment: d.enforce_containment,
            containment_band: d.containment_band,
            max_halvings: d.max_halvings,
            max_cut_rounds: d.max_cut_rounds,
            repair_iterations: d.repair_iterations,
            snapshot_every: 100,
            init: InitSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub gamma: f64,
    pub k_s: f64,
    pub dt_sim: f64,
    pub horizon: f64,
    pub trajectories: usize,
    pub seed: u64,
    pub samples_per_segment: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::<f64>::default();
        Self { gamma: d.gamma, k_s: d.k_s, dt_sim: 1e-3, horizon: 10.0, trajectories: 100, seed: 0, samples_per_segment: d.samples_per_segment }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub resolution: [usize; 2],
    pub input_samples: usize,
    pub dt_k: f64,
    /// Grid box; defaults to the safe set, which must then be bounded.
    pub lower: Option<[f64; 2]>,
    pub upper: Option<[f64; 2]>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { resolution: [200, 200], input_samples: 21, dt_k: 0.05, lower: None, upper: None }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SdfSection {
    pub resolution: [usize; 2],
    /// Grid region; defaults to the boundary bounds padded by a quarter of their size.
    pub lower: Option<[f64; 2]>,
    pub upper: Option<[f64; 2]>,
}

impl Default for SdfSection {
    fn default() -> Self {
        Self { resolution: [101, 101], lower: None, upper: None }
    }
}

fn v(a: [f64; 2]) -> Vec2<f64> {
    Vec2::new(a[0], a[1])
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {x}")))
    }
}

fn non_negative(name: &str, x: f64) -> Result<(), CliError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(bad(format!("{name} must be non-negative and finite, got {x}")))
    }
}

fn make_box(lower: [f64; 2], upper: [f64; 2], what: &str) -> Result<StateBox<f64>, CliError> {
    if lower.iter().chain(&upper).any(|x| x.is_nan()) || !(lower[0] < upper[0] && lower[1] < upper[1]) {
        return Err(bad(format!("{what}: every lower bound must be below its upper bound")));
    }
    StateBox::new(v(lower), v(upper)).map_err(|e| bad(format!("{what}: {e}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml(&crate::read_text(path)?)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.system_model()?;
        self.safe_box()?;
        let c = &self.curve;
        if c.n < 4 {
            return Err(bad(format!("curve.n must be at least 4, got {}", c.n)));
        }
        if !(0.0..=1.0).contains(&c.beta) {
            return Err(bad(format!("curve.beta must lie in [0, 1], got {}", c.beta)));
        }
        if c.speed_samples < 2 {
            return Err(bad("curve.speed_samples must be at least 2"));
        }
        let e = &self.expansion;
        non_negative("expansion.k_n", e.k_n)?;
        non_negative("expansion.k_c", e.k_c)?;
        positive("expansion.gamma", e.gamma)?;
        positive("expansion.dt", e.dt)?;
        positive("expansion.q_weight", e.q_weight)?;
        positive("expansion.convergence_tol", e.convergence_tol)?;
        non_negative("expansion.containment_band", e.containment_band)?;
        if e.max_steps == 0 {
            return Err(bad("expansion.max_steps must be at least 1"));
        }
        match e.init.shape {
            ShapeName::Ellipse => {
                positive("expansion.init.level", e.init.level)?;
                let p = e.init.p;
                if p[0][1] != p[1][0] || !(p[0][0] > 0.0 && p[0][0] * p[1][1] - p[0][1] * p[1][0] > 0.0) {
                    return Err(bad("expansion.init.p must be symmetric positive definite"));
                }
            }
            ShapeName::Circle => positive("expansion.init.radius", e.init.radius)?,
        }
        let f = &self.filter;
        positive("filter.gamma", f.gamma)?;
        positive("filter.k_s", f.k_s)?;
        positive("filter.dt_sim", f.dt_sim)?;
        non_negative("filter.horizon", f.horizon)?;
        if f.trajectories == 0 {
            return Err(bad("filter.trajectories must be at least 1"));
        }
        if f.samples_per_segment < 2 {
            return Err(bad("filter.samples_per_segment must be at least 2"));
        }
        let k = &self.kernel;
        if k.resolution.iter().any(|&r| r < 20) {
            return Err(bad("kernel.resolution needs at least 20 cells per axis"));
        }
        if k.input_samples < 9 {
            return Err(bad("kernel.input_samples must be at least 9"));
        }
        positive("kernel.dt_k", k.dt_k)?;
        if self.sdf.resolution.iter().any(|&r| r < 2) {
            return Err(bad("sdf.resolution needs at least 2 points per axis"));
        }
        if let (Some(lo), Some(hi)) = (self.sdf.lower, self.sdf.upper) {
            make_box(lo, hi, "sdf region")?;
        }
        if self.sdf.lower.is_some() != self.sdf.upper.is_some() {
            return Err(bad("sdf.lower and sdf.upper must be given together"));
        }
        if k.lower.is_some() != k.upper.is_some() {
            return Err(bad("kernel.lower and kernel.upper must be given together"));
        }
        self.expansion_config()?.validate().map_err(|e| bad(e.to_string()))?;
        Ok(())
    }

    pub fn system_model(&self) -> Result<SystemModel<f64>, CliError> {
        let s = &self.system;
        for (name, x) in [("system.mass", s.mass), ("system.length", s.length), ("system.gravity", s.gravity)] {
            if let Some(x) = x {
                positive(name, x)?;
            }
        }
        let params = CatalogParams { mass: s.mass, length: s.length, gravity: s.gravity, u_min: s.u_min.clone(), u_max: s.u_max.clone() };
        SystemModel::from_catalog(&s.name, &params).map_err(|e| bad(format!("system: {e}")))
    }

    /// State constraint box, if one is configured.
    pub fn safe_box(&self) -> Result<Option<StateBox<f64>>, CliError> {
        match (self.safe_set.lower, self.safe_set.upper) {
            (None, None) => Ok(None),
            (lo, hi) => {
                let lo = lo.unwrap_or([f64::NEG_INFINITY; 2]);
                let hi = hi.unwrap_or([f64::INFINITY; 2]);
                make_box(lo, hi, "safe_set").map(Some)
            }
        }
    }

    pub fn kernel_box(&self) -> Result<StateBox<f64>, CliError> {
        let b = match (self.kernel.lower, self.kernel.upper) {
            (Some(lo), Some(hi)) => make_box(lo, hi, "kernel box")?,
            _ => self.safe_box()?.ok_or_else(|| bad("kernel needs kernel.lower/upper or a safe_set box"))?,
        };
        if [b.lower.x, b.lower.y, b.upper.x, b.upper.y].iter().any(|x| !x.is_finite()) {
            return Err(bad("kernel box must be bounded; set kernel.lower and kernel.upper"));
        }
        Ok(b)
    }

    pub fn certify_options(&self) -> CertifyOptions {
        CertifyOptions {
            mode: match self.curve.lipschitz_mode {
                ModeName::Sound => LipschitzMode::Sound,
                ModeName::Conservative => LipschitzMode::Conservative,
            },
            speed_samples: self.curve.speed_samples,
        }
    }

    pub fn expansion_config(&self) -> Result<ExpansionConfig<f64>, CliError> {
        let e = &self.expansion;
        let init = match e.init.shape {
            ShapeName::Ellipse => InitialSet::Ellipse {
                p: e.init.p,
                level: e.init.level,
                n: self.curve.n,
                spacing: match e.init.spacing {
                    SpacingName::Angle => Spacing::Angle,
                    SpacingName::ArcLength => Spacing::ArcLength,
                },
                center: v(e.init.center),
            },
            ShapeName::Circle => InitialSet::Circle { center: v(e.init.center), radius: e.init.radius, n: self.curve.n },
        };
        Ok(ExpansionConfig {
            k_n: e.k_n,
            k_c: e.k_c,
            gamma: e.gamma,
            dt: e.dt,
            max_steps: e.max_steps,
            convergence_tol: e.convergence_tol,
            q_weight: e.q_weight,
            beta: self.curve.beta,
            certify: self.certify_options(),
            init,
            safe_box: self.safe_box()?,
            enforce_containment: e.enforce_containment,
            containment_band: e.containment_band,
            max_halvings: e.max_halvings,
            max_cut_rounds: e.max_cut_rounds,
            repair_iterations: e.repair_iterations,
            snapshot_every: e.snapshot_every,
        })
    }

    pub fn filter_config(&self) -> FilterConfig<f64> {
        FilterConfig { gamma: self.filter.gamma, k_s: self.filter.k_s, samples_per_segment: self.filter.samples_per_segment }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[system]\nname = \"double_integrator\"\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.curve.n, 50);
        assert_eq!(cfg.filter.k_s, 1e8);
        assert_eq!(cfg.safe_box().unwrap(), None);
        assert_eq!(cfg.system_model().unwrap().u_max(), &[1.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}[curve]\nN = 20\n")).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("unknown field")), "{err}");
        assert!(RunConfig::from_toml(&format!("{MINIMAL}[extra]\nx = 1\n")).is_err());
    }

    #[test]
    fn ranges_are_checked() {
        for extra in [
            "[curve]\nn = 3\n",
            "[curve]\nbeta = 1.5\n",
            "[expansion]\ndt = 0.0\n",
            "[expansion]\nk_n = -1.0\n",
            "[filter]\nk_s = 0.0\n",
            "[kernel]\nresolution = [10, 200]\n",
            "[kernel]\ninput_samples = 4\n",
            "[safe_set]\nlower = [1.0, 0.0]\nupper = [-1.0, 1.0]\n",
            "[expansion.init]\np = [[1.0, 2.0], [2.0, 1.0]]\n",
        ] {
            assert!(matches!(RunConfig::from_toml(&format!("{MINIMAL}{extra}")), Err(CliError::Config(_))), "{extra}");
        }
        assert!(RunConfig::from_toml("[system]\nname = \"bicycle\"\n").is_err());
    }

    #[test]
    fn infinite_bounds_parse() {
        let cfg = RunConfig::from_toml(&format!("{MINIMAL}[safe_set]\nlower = [-1.0, -inf]\nupper = [1.0, inf]\n")).unwrap();
        let b = cfg.safe_box().unwrap().unwrap();
        assert_eq!(b.upper.y, f64::INFINITY);
        assert!(cfg.kernel_box().is_err());
        let cfg = RunConfig::from_toml(&format!(
            "{MINIMAL}[safe_set]\nlower = [-1.0, -inf]\nupper = [1.0, inf]\n[kernel]\nlower = [-1.0, -2.5]\nupper = [1.0, 2.5]\n"
        ))
        .unwrap();
        assert_eq!(cfg.kernel_box().unwrap().lower.y, -2.5);
    }

    #[test]
    fn pendulum_parameters_reach_the_model() {
        let cfg = RunConfig::from_toml("[system]\nname = \"inverted_pendulum\"\nmass = 2.0\nu_min = [-3.0]\nu_max = [3.0]\n").unwrap();
        let sys = cfg.system_model().unwrap();
        assert_eq!(sys.u_max(), &[3.0]);
        // g = 1 / (m l^2)
        assert_eq!(sys.g(Vec2::zero())[0].y, 0.5);
    }
}
