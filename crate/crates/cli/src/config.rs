//! Experiment configuration: one JSON document per run.

use std::fmt;
use std::path::{Path, PathBuf};

use dualsched::predictor::{replay_trace, TraceReplayer};
use dualsched::{
    make_dual_grid, Condition, DiffusionSchedule, DualTimeGrid, GaussianMixture, GuidanceSpec, Latent,
    MixturePredictor, NoisePredictor, ProceduralPredictor, ScheduleParams, TimeGrid, TraceFile, ZeroPredictor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub schedule: ScheduleParams,
    pub grid: GridConfig,
    pub predictor: PredictorConfig,
    pub guidance: GuidanceConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

/// Primary grid `t0, t0 + stride, ...` with `steps` points, plus the
/// auxiliary offset given either as a fraction of the stride or directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: usize,
    pub stride: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux_offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PredictorConfig {
    Zero,
    Procedural,
    Mixture {
        components: usize,
        variance: f64,
        #[serde(default = "default_spread")]
        spread: f64,
        seed: u64,
    },
    Trace {
        path: PathBuf,
    },
}

fn default_spread() -> f64 {
    0.5
}

/// A label, or the string `"unconditional"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionConfig {
    Label(u32),
    Keyword(ConditionKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKeyword {
    Unconditional,
}

impl From<ConditionConfig> for Condition {
    fn from(c: ConditionConfig) -> Self {
        match c {
            ConditionConfig::Label(k) => Condition::Label(k),
            ConditionConfig::Keyword(ConditionKeyword::Unconditional) => Condition::Unconditional,
        }
    }
}

impl fmt::Display for ConditionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Condition::from(*self).fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub scales: Vec<f64>,
    #[serde(default = "default_source")]
    pub source_condition: ConditionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_condition: Option<ConditionConfig>,
}

fn default_source() -> ConditionConfig {
    ConditionConfig::Label(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub shape: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edited: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Tau,
    Steps,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Tau => "tau",
            Axis::Steps => "steps",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    #[serde(default = "default_axis")]
    pub axis: Axis,
    #[serde(default = "default_tau_values")]
    pub tau_values: Vec<f64>,
    #[serde(default = "default_steps_values")]
    pub steps_values: Vec<usize>,
    /// Bound on the relative grid gap.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_axis() -> Axis {
    Axis::Tau
}

fn default_tau_values() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_steps_values() -> Vec<usize> {
    vec![20, 50]
}

fn default_tolerance() -> f64 {
    1e-9
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            axis: default_axis(),
            tau_values: default_tau_values(),
            steps_values: default_steps_values(),
            tolerance: default_tolerance(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not need the predictor to be built.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.tau_fraction.is_some() && g.aux_offset.is_some() {
            return Err(CliError::config("grid: give tau_fraction or aux_offset, not both"));
        }
        if self.guidance.scales.is_empty() {
            return Err(CliError::config("guidance.scales is empty"));
        }
        for &w in &self.guidance.scales {
            GuidanceSpec::new(w, Condition::Unconditional).map_err(|e| CliError::config(e.to_string()))?;
        }
        if self.data.samples == 0 {
            return Err(CliError::config("data.samples must be at least 1"));
        }
        Latent::zeros(&self.data.shape).map_err(|e| CliError::config(format!("data.shape: {e}")))?;
        if let PredictorConfig::Mixture {
            components,
            variance,
            spread,
            ..
        } = &self.predictor
        {
            if *components == 0 {
                return Err(CliError::config("predictor.components must be at least 1"));
            }
            if !(variance.is_finite() && *variance > 0.0) {
                return Err(CliError::config("predictor.variance must be positive"));
            }
            if !(spread.is_finite() && *spread >= 0.0) {
                return Err(CliError::config("predictor.spread must be non-negative"));
            }
            let labels = std::iter::once(self.guidance.source_condition).chain(self.guidance.target_condition);
            for c in labels {
                if let ConditionConfig::Label(k) = c {
                    if k as usize >= *components {
                        return Err(CliError::config(format!(
                            "unknown condition {k}: the mixture has {components} components"
                        )));
                    }
                }
            }
        }
        let a = &self.ablation;
        if !(a.tolerance.is_finite() && a.tolerance >= 0.0) {
            return Err(CliError::config("ablation.tolerance must be non-negative"));
        }
        if a.tau_values.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(CliError::config("ablation.tau_values must lie in (0, 1)"));
        }
        if a.steps_values.contains(&0) {
            return Err(CliError::config("ablation.steps_values must be at least 1"));
        }
        for path in [&self.outputs.csv, &self.outputs.trace, &self.outputs.edited]
            .into_iter()
            .flatten()
        {
            check_writable(path)?;
        }
        let schedule = self.diffusion_schedule()?;
        self.dual_grid()?
            .check(&schedule)
            .map_err(|e| CliError::config(format!("grid: {e}")))?;
        Ok(())
    }

    pub fn diffusion_schedule(&self) -> Result<DiffusionSchedule, CliError> {
        DiffusionSchedule::scaled_linear(self.schedule).map_err(|e| CliError::config(format!("schedule: {e}")))
    }

    pub fn ddim_grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.grid.t0, self.grid.stride, self.grid.steps)
            .map_err(|e| CliError::config(format!("grid: {e}")))
    }

    pub fn dual_grid(&self) -> Result<DualTimeGrid, CliError> {
        let g = &self.grid;
        dual_grid_for(g.t0, g.stride, g.steps, g.tau_fraction, g.aux_offset)
    }
}

pub(crate) fn dual_grid_for(
    t0: usize,
    stride: usize,
    steps: usize,
    tau_fraction: Option<f64>,
    aux_offset: Option<usize>,
) -> Result<DualTimeGrid, CliError> {
    let grid = match aux_offset {
        Some(delta) => DualTimeGrid::new(t0, stride, steps, delta),
        None => make_dual_grid(t0, stride, steps, tau_fraction.unwrap_or(0.5)),
    };
    grid.map_err(|e| CliError::config(format!("grid: {e}")))
}

pub(crate) fn check_writable(path: &Path) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(CliError::config(format!(
            "output directory {} does not exist",
            parent.display()
        )));
    }
    if path.is_dir() {
        return Err(CliError::config(format!(
            "output path {} is a directory",
            path.display()
        )));
    }
    Ok(())
}

/// The predictor named by a config, ready to be queried.
#[derive(Debug)]
pub enum Model {
    Zero(ZeroPredictor),
    Procedural(ProceduralPredictor),
    Mixture(MixturePredictor),
    Trace(TraceReplayer),
}

impl Model {
    pub fn predictor(&self) -> &dyn NoisePredictor {
        match self {
            Model::Zero(p) => p,
            Model::Procedural(p) => p,
            Model::Mixture(p) => p,
            Model::Trace(p) => p,
        }
    }

    pub fn mixture(&self) -> Option<&GaussianMixture> {
        match self {
            Model::Mixture(p) => Some(p.mixture()),
            _ => None,
        }
    }
}

/// A validated config with its schedule, grids, predictor and data drawn.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub schedule: DiffusionSchedule,
    pub ddim_grid: TimeGrid,
    pub dual_grid: DualTimeGrid,
    pub model: Model,
    pub samples: Vec<Latent>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate()?;
        let schedule = config.diffusion_schedule()?;
        let ddim_grid = config.ddim_grid()?;
        let dual_grid = config.dual_grid()?;
        let shape = config.data.shape.clone();
        let model = match &config.predictor {
            PredictorConfig::Zero => Model::Zero(ZeroPredictor),
            PredictorConfig::Procedural => Model::Procedural(ProceduralPredictor),
            PredictorConfig::Mixture {
                components,
                variance,
                spread,
                seed,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let gmm = GaussianMixture::random(&shape, *components, *variance, *spread, &mut rng)
                    .map_err(|e| CliError::config(format!("predictor: {e}")))?;
                Model::Mixture(MixturePredictor::new(gmm, schedule.clone()))
            }
            PredictorConfig::Trace { path } => {
                let file =
                    TraceFile::read(path).map_err(|e| CliError::config(format!("trace {}: {e}", path.display())))?;
                if file.schedule_params != config.schedule {
                    return Err(CliError::config(
                        "trace was recorded with different schedule parameters",
                    ));
                }
                if !file.entries.is_empty() && file.shape != shape {
                    return Err(CliError::config(format!(
                        "trace shape {:?} does not match data.shape {:?}",
                        file.shape, shape
                    )));
                }
                Model::Trace(replay_trace(file).map_err(|e| CliError::config(e.to_string()))?)
            }
        };
        let samples = draw_samples(&config, &model)?;
        Ok(Experiment {
            config,
            schedule,
            ddim_grid,
            dual_grid,
            model,
            samples,
        })
    }

    pub fn source_condition(&self) -> Condition {
        self.config.guidance.source_condition.into()
    }

    pub fn guidance(&self, scale: f64, condition: Condition) -> Result<GuidanceSpec, CliError> {
        GuidanceSpec::new(scale, condition).map_err(|e| CliError::config(e.to_string()))
    }
}

/// Mixture data comes from the source component (or the whole mixture when
/// the source is unconditional); other predictors get uniform `[-1, 1)` data.
fn draw_samples(config: &ExperimentConfig, model: &Model) -> Result<Vec<Latent>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.data.seed);
    let shape = &config.data.shape;
    let n: usize = shape.iter().product();
    (0..config.data.samples)
        .map(|_| match model.mixture() {
            Some(gmm) => Ok(gmm.sample(&mut rng, config.guidance.source_condition.into())?),
            None => Ok(Latent::new(
                shape.clone(),
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )?),
        })
        .collect()
}
