//! The experiment document passed with `--config`.

use std::path::Path;

use grelax_core::attack::{AttackConfig, Mode};
use grelax_core::graph::{SbmParams, TreeParams};
use grelax_core::models::{Arch, Hyper, RelaxToggles};
use grelax_core::Task;
use serde::{Deserialize, Serialize};

use crate::error::{read_json, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub training: TrainSpec,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub ablation: AblationSpec,
    /// Attack seeds; every table cell is repeated per seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seed for data generation and model initialization.
    #[serde(default)]
    pub seed: u64,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Node classification on stochastic-block-model graphs.
    Cluster {
        train: usize,
        val: usize,
        test: usize,
        #[serde(default)]
        sbm: SbmParams,
    },
    /// Binary classification of retweet-style trees, balanced labels.
    Tree {
        train: usize,
        val: usize,
        test: usize,
        #[serde(default)]
        tree: TreeParams,
    },
}

impl DatasetSpec {
    pub fn task(&self) -> Task {
        match self {
            DatasetSpec::Cluster { .. } => Task::Node,
            DatasetSpec::Tree { .. } => Task::Graph,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        match *self {
            DatasetSpec::Cluster { train, val, test, .. } | DatasetSpec::Tree { train, val, test, .. } => {
                (train, val, test)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub layers: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    /// Overrides the shared training settings for this model.
    #[serde(default)]
    pub training: Option<TrainSpec>,
}

impl ModelSpec {
    pub fn hyper(&self, task: Task, in_dim: usize, classes: usize) -> Hyper {
        let mut h = Hyper::new(self.arch, task, in_dim, classes);
        h.hidden = self.hidden.unwrap_or(h.hidden);
        h.layers = self.layers.unwrap_or(h.layers);
        h.heads = self.heads.unwrap_or(h.heads);
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Graphs per Adam step.
    pub batch_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 3e-3,
            weight_decay: 0.0,
            batch_size: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSpec {
    /// Budget fractions, ascending; 0 gives the clean row.
    pub budgets: Vec<f64>,
    /// Number of test graphs attacked (the first ones of the split).
    pub graphs: usize,
    /// Injection candidates drawn per attacked graph.
    pub candidates: usize,
    pub random: bool,
    pub transfer: bool,
    /// Per-run settings; `budget` and `seed` are set per cell.
    pub params: AttackConfig,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            budgets: vec![0.0025, 0.005, 0.01, 0.02, 0.05, 0.1],
            graphs: 20,
            candidates: 64,
            random: true,
            transfer: true,
            params: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub budget: f64,
    /// Toggle sets to run; empty means the per-architecture grid.
    pub toggle_sets: Vec<String>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            budget: 0.01,
            toggle_sets: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let (train, val, test) = self.dataset.sizes();
        if train == 0 || val == 0 || test == 0 {
            return bad("every split needs at least one graph".into());
        }
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        let mut archs: Vec<Arch> = self.models.iter().map(|m| m.arch).collect();
        archs.sort();
        archs.dedup();
        if archs.len() != self.models.len() {
            return bad("each architecture may appear once".into());
        }
        for m in &self.models {
            m.hyper(self.dataset.task(), 8, 2).validate()?;
            let t = m.training.as_ref().unwrap_or(&self.training);
            if t.batch_size == 0 || !(t.lr > 0.0) || t.weight_decay < 0.0 {
                return bad(format!("{}: training needs batch_size > 0, lr > 0 and weight_decay >= 0", m.arch));
            }
        }
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        let b = &self.attack.budgets;
        if b.is_empty() || b.windows(2).any(|w| w[0] >= w[1]) || b.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return bad("budgets must be ascending fractions in [0, 1]".into());
        }
        if self.attack.graphs == 0 || self.attack.graphs > test {
            return bad(format!("attack.graphs must lie in 1..={test}"));
        }
        let mode = self.attack.params.mode;
        if (mode == Mode::Injection) != (self.dataset.task() == Task::Graph) {
            return bad("injection attacks go with tree datasets and structure attacks with cluster datasets".into());
        }
        AttackConfig {
            budget: 0.5,
            ..self.attack.params.clone()
        }
        .validate()?;
        if !(self.ablation.budget > 0.0 && self.ablation.budget <= 1.0) {
            return bad("ablation.budget must lie in (0, 1]".into());
        }
        for s in &self.ablation.toggle_sets {
            RelaxToggles::parse(s).map_err(CliError::Validation)?;
        }
        Ok(())
    }

    /// Keeps only the named architecture.
    pub fn restrict_model(&mut self, name: &str) -> Result<(), CliError> {
        let arch = Arch::parse(name).ok_or_else(|| CliError::Validation(format!("unknown model `{name}`")))?;
        self.models.retain(|m| m.arch == arch);
        if self.models.is_empty() {
            return Err(CliError::Validation(format!("model `{name}` is not in the config")));
        }
        Ok(())
    }

    pub fn training_for(&self, arch: Arch) -> &TrainSpec {
        self.models
            .iter()
            .find(|m| m.arch == arch)
            .and_then(|m| m.training.as_ref())
            .unwrap_or(&self.training)
    }
}
