//! Run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use ctxtune::cabin::{CabinSetup, Catalog, DisturbanceTrajectory, EpisodeSpec, MpcConfig, PlantParams};
use ctxtune::{AcquisitionConfig, GpConfig, SigmaMode, SmootherConfig, TuningConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Robust,
    NonRobust,
}

impl Preset {
    pub fn delta(self) -> f64 {
        match self {
            Preset::Robust => 0.93,
            Preset::NonRobust => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub theta_min: Vec<f64>,
    pub theta_max: Vec<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub g_max: f64,
    /// Overrides the preset's probability level.
    #[serde(default)]
    pub delta: Option<f64>,
    pub budget: usize,
    pub n_initial: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    pub n_grid: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmootherSection {
    pub sigma_mode: SigmaMode,
    pub pointwise_resolution: usize,
    pub max_second_difference: f64,
}

impl Default for SmootherSection {
    fn default() -> Self {
        let base = SmootherConfig::<f64>::new(vec![0.0], vec![1.0], 0.0, 1.0, 0.5, 0.0);
        SmootherSection {
            sigma_mode: base.sigma_mode,
            pointwise_resolution: base.pointwise_resolution,
            max_second_difference: base.max_second_difference,
        }
    }
}

/// Directory of trajectory files; the built-in synthetic set when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    pub n_episodes: usize,
}

impl Default for ValidationSection {
    fn default() -> Self {
        ValidationSection { n_episodes: 50 }
    }
}

/// Fixed conditions of the nominal comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub contexts: Vec<f64>,
    pub t_ambient: f64,
    pub q_solar: f64,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection { contexts: vec![50.0, 100.0, 150.0], t_ambient: 288.15, q_solar: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub out: PathBuf,
    pub tuning: TuningSection,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    #[serde(default)]
    pub smoother: SmootherSection,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub mpc: MpcConfig,
    #[serde(default)]
    pub episode: EpisodeSpec,
    #[serde(default)]
    pub catalog: CatalogSection,
    #[serde(default)]
    pub validation: ValidationSection,
    #[serde(default)]
    pub compare: CompareSection,
}

impl RunConfig {
    /// Parses and validates a config file. Relative catalog paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = &cfg.catalog.dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                let joined = base.join(dir);
                cfg.catalog.dir = Some(fs::canonicalize(&joined).unwrap_or(joined));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.tuning.theta_min.len() != 2 {
            return bad("the cabin controller has two tuning parameters".into());
        }
        self.tuning_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.smoother_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.plant.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.mpc.validate().map_err(CliError::Config)?;
        self.episode.validate().map_err(CliError::Config)?;
        if !(self.tuning.s_min > 0.0) {
            return bad("mass-flow contexts must be positive".into());
        }
        if self.compare.contexts.iter().any(|s| !(*s >= self.tuning.s_min && *s <= self.tuning.s_max)) {
            return bad(format!("compare contexts {:?} leave [{}, {}]", self.compare.contexts, self.tuning.s_min, self.tuning.s_max));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.tuning.delta.unwrap_or(self.preset.delta())
    }

    pub fn tuning_config(&self) -> TuningConfig<f64> {
        let t = &self.tuning;
        TuningConfig {
            theta_min: t.theta_min.clone(),
            theta_max: t.theta_max.clone(),
            s_min: t.s_min,
            s_max: t.s_max,
            g_max: t.g_max,
            delta: self.delta(),
            budget: t.budget,
            n_initial: t.n_initial,
            gamma: t.gamma,
            n_grid: t.n_grid,
            seed: t.seed,
            gp: self.gp.clone(),
            acquisition: self.acquisition.clone(),
        }
    }

    pub fn smoother_config(&self) -> SmootherConfig<f64> {
        let mut c = SmootherConfig::from_tuning(&self.tuning_config());
        c.sigma_mode = self.smoother.sigma_mode;
        c.pointwise_resolution = self.smoother.pointwise_resolution;
        c.max_second_difference = self.smoother.max_second_difference;
        c
    }

    pub fn catalog(&self) -> Result<Catalog, CliError> {
        match &self.catalog.dir {
            Some(dir) => Catalog::load_dir(dir).map_err(|e| CliError::Config(format!("catalog {}: {e}", dir.display()))),
            None => Ok(Catalog::synthetic(self.episode.horizon)),
        }
    }

    pub fn setup(&self) -> Result<CabinSetup, CliError> {
        Ok(CabinSetup::new(self.plant, self.mpc.clone(), self.episode.clone(), self.catalog()?))
    }

    pub fn compare_disturbance(&self) -> DisturbanceTrajectory {
        DisturbanceTrajectory::constant("nominal", self.compare.t_ambient, self.compare.q_solar, self.episode.horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
preset = "robust"
out = "runs/x"
[tuning]
theta_min = [-0.5, -3.0]
theta_max = [3.0, 0.0]
s_min = 50.0
s_max = 150.0
g_max = 0.05
budget = 20
n_initial = 10
n_grid = 21
seed = 1
"#;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn presets_set_probability_level() {
        let robust = parse(MINIMAL).unwrap();
        assert_eq!(robust.delta(), 0.93);
        let relaxed = parse(&MINIMAL.replace("\"robust\"", "\"non-robust\"")).unwrap();
        assert_eq!(relaxed.delta(), 0.5);
        let explicit = parse(&MINIMAL.replace("seed = 1", "seed = 1\ndelta = 0.7")).unwrap();
        assert_eq!(explicit.delta(), 0.7);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse(&MINIMAL.replace("seed = 1", "seed = 1\nlambda = 3")), Err(CliError::Config(_))));
        assert!(matches!(parse(&format!("{MINIMAL}\n[mpc]\nhorizon = 3\n")), Err(CliError::Config(_))));
        assert!(matches!(parse(&format!("colour = 1\n{MINIMAL}")), Err(CliError::Config(_))));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(parse(&MINIMAL.replace("budget = 20", "budget = 5")).is_err());
        assert!(parse(&format!("{MINIMAL}\n[mpc]\nn2 = 1\n")).is_err());
        assert!(parse(&format!("{MINIMAL}\n[compare]\ncontexts = [10.0]\n")).is_err());
        assert!(parse(&MINIMAL.replace("theta_min = [-0.5, -3.0]", "theta_min = [-0.5]")).is_err());
    }

    #[test]
    fn sections_default_when_absent() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.mpc, MpcConfig::default());
        assert_eq!(cfg.validation.n_episodes, 50);
        assert_eq!(cfg.smoother_config().sigma_mode, SigmaMode::Combined);
    }
}
