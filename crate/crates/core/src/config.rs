//! JSON experiment descriptions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::MlpSpec;
use crate::optim::StepDecay;
use crate::problem::{HelmholtzProblem, SamplingConfig};
use crate::tt::{balanced_factors, default_way_count, plan_ranks, TtShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dense,
    Tt,
}

/// A single rank applied to every internal bond, or the full rank vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ranks {
    Uniform(usize),
    Explicit(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub width: usize,
    pub hidden_layers: usize,
    /// Factorization of the hidden width, shared by rows and columns.
    pub factors: Option<Vec<usize>>,
    pub compression: Option<f64>,
    /// Overrides `compression` when present.
    pub ranks: Option<Ranks>,
    pub hard_bc: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Dense,
            width: 256,
            hidden_layers: 3,
            factors: None,
            compression: None,
            ranks: None,
            hard_bc: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub residual_points: usize,
    pub boundary_points: usize,
    pub initial_points: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { iterations: 40_000, residual_points: 1200, boundary_points: 0, initial_points: 0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub resolution: usize,
    pub report_interval: usize,
    /// When false the `seconds` column of the metrics log is written as 0,
    /// which makes the log reproducible byte for byte.
    pub log_wall_time: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { resolution: 256, report_interval: 500, log_wall_time: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub schedule: StepDecay,
    pub evaluation: EvaluationConfig,
    pub problem: HelmholtzProblem,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            schedule: StepDecay::default(),
            evaluation: EvaluationConfig::default(),
            problem: HelmholtzProblem::benchmark(),
            out_dir: None,
        }
    }
}

/// Command-line overrides; `None` keeps the file value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub resolution: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn dense(width: usize) -> Self {
        Self {
            name: format!("dense-{width}"),
            model: ModelConfig { width, ..ModelConfig::default() },
            ..Self::default()
        }
    }

    pub fn tt(width: usize, compression: f64) -> Self {
        Self {
            name: format!("tt-{width}-{compression}x"),
            model: ModelConfig { kind: ModelKind::Tt, width, compression: Some(compression), ..ModelConfig::default() },
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.training.seed = seed;
        }
        if let Some(it) = o.iterations {
            self.training.iterations = it;
        }
        if let Some(res) = o.resolution {
            self.evaluation.resolution = res;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = Some(dir.clone());
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            residual_points: self.training.residual_points,
            boundary_points: self.training.boundary_points,
            initial_points: self.training.initial_points,
            seed: self.training.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = &self.model;
        if m.width == 0 || m.hidden_layers == 0 {
            return bad(format!("model needs width and hidden_layers > 0, got {} and {}", m.width, m.hidden_layers));
        }
        if self.training.residual_points == 0 {
            return bad("training.residual_points must be > 0".into());
        }
        if self.evaluation.resolution < 2 {
            return bad(format!("evaluation.resolution must be >= 2, got {}", self.evaluation.resolution));
        }
        if self.evaluation.report_interval == 0 {
            return bad("evaluation.report_interval must be > 0".into());
        }
        let s = &self.schedule;
        if s.period == 0 || !(s.initial > 0.0 && s.initial.is_finite()) || !(s.factor > 0.0 && s.factor <= 1.0) {
            return bad(format!("invalid learning-rate schedule {s:?}"));
        }
        if !(self.problem.wave_number.is_finite()) {
            return bad("problem.wave_number must be finite".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("run name {:?} must be a non-empty file name", self.name));
        }
        self.network_spec().map(|_| ())
    }

    /// Architecture described by the model section, with TT ranks resolved.
    pub fn network_spec(&self) -> Result<MlpSpec> {
        let m = &self.model;
        let mut spec = match m.kind {
            ModelKind::Dense => MlpSpec::dense(m.width, m.hidden_layers),
            ModelKind::Tt => {
                let factors = match &m.factors {
                    Some(f) => f.clone(),
                    None => balanced_factors(m.width, default_way_count(m.width))?,
                };
                let shape = match (&m.ranks, m.compression) {
                    (Some(Ranks::Uniform(r)), _) => TtShape::uniform(factors.clone(), factors, *r)?,
                    (Some(Ranks::Explicit(r)), _) => TtShape::new(factors.clone(), factors, r.clone())?,
                    (None, Some(c)) => {
                        let plan = plan_ranks(m.width, m.width, &factors, &factors, c)?;
                        TtShape::new(factors.clone(), factors, plan.chosen_ranks)?
                    }
                    (None, None) => {
                        return Err(Error::Config("a tt model needs either `ranks` or `compression`".into()))
                    }
                };
                MlpSpec::tt(shape, m.hidden_layers)
            }
        };
        spec.hard_bc = m.hard_bc;
        spec.validate()?;
        Ok(spec)
    }
}

/// An ordered list of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub runs: Vec<ExperimentConfig>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let sweep: Self = serde_json::from_str(text)?;
        sweep.validate()?;
        Ok(sweep)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs.is_empty() {
            return Err(Error::Config("sweep has no runs".into()));
        }
        let mut names: Vec<&str> = self.runs.iter().map(|r| r.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate run name {:?}", w[0])));
        }
        Ok(())
    }

    /// Dense networks of widths 32, 64, 128 and 256.
    pub fn dense_widths() -> Self {
        Self { runs: [32, 64, 128, 256].into_iter().map(ExperimentConfig::dense).collect() }
    }

    /// Width-256 TT networks at 100x, 40x and 20x hidden-layer compression.
    pub fn tt_compressions() -> Self {
        Self { runs: [100.0, 40.0, 20.0].into_iter().map(|c| ExperimentConfig::tt(256, c)).collect() }
    }
}
