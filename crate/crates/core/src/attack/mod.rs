//! Evasion attacks on graph structure: PRBCD edge flips and node injection,
//! with random and transfer baselines.

mod block;
mod injection;
mod project;

use std::collections::BTreeSet;

use grelax_autodiff::{Tape, TensorError, Tensor, Var};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{apply_flips, apply_flips_var, budget_from_fraction, component_of, EdgeFlipMatrix, Graph, GraphError, Task};
use crate::models::{Arch, ForwardInput, Model, ModelError, RelaxToggles, SpectralBase};

pub use block::{constraint_mask, region, resample_block, BlockState, PairMask, Region};
pub use injection::{
    is_tree, mst_projection, nia_augment, node_probability, node_probability_var, prune_disconnected, CandidateRef,
    CandidateSet,
};
pub use project::project_budget;

use injection::induced;

const MAX_REJECTIONS: usize = 50;
/// Weight given to the fixed original edges before the spanning-tree projection.
const ORIGINAL_EDGE_WEIGHT: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("loss `{kind:?}` does not apply to a {task:?}-level task")]
    LossMismatch { kind: LossKind, task: Task },
    #[error("non-finite values in `{0}`")]
    NonFinite(String),
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<TensorError> for AttackError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { op } => AttackError::NonFinite(op.to_string()),
            other => AttackError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    TanhMargin,
    RawScore,
}

impl LossKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Node => LossKind::TanhMargin,
            Task::Graph => LossKind::RawScore,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    #[default]
    None,
    ProtectLabeled,
    TreeOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Structure,
    Injection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Adaptive,
    Random,
    Transfer,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Adaptive => "adaptive",
            AttackKind::Random => "random",
            AttackKind::Transfer => "transfer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Budget as a fraction of the clean edge count.
    pub budget: f64,
    pub steps: usize,
    /// Defaults to `min(20000, allowed)` for structure and `min(1000, allowed)` for injection.
    pub block_size: Option<usize>,
    pub n_samples: usize,
    /// Defaults to the task's natural loss.
    pub loss: Option<LossKind>,
    pub toggles: RelaxToggles,
    pub constraint: ConstraintKind,
    pub mode: Mode,
    pub base_lr: f64,
    pub resample_every: usize,
    pub keep_fraction: f64,
    pub node_prob_iters: usize,
    /// Also sample candidate-candidate pairs in injection mode.
    pub include_f: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget: 0.01,
            steps: 125,
            block_size: None,
            n_samples: 20,
            loss: None,
            toggles: RelaxToggles::all(),
            constraint: ConstraintKind::None,
            mode: Mode::Structure,
            base_lr: 100.0,
            resample_every: 10,
            keep_fraction: 0.5,
            node_prob_iters: 3,
            include_f: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::Config(m.to_string()));
        if !(self.budget > 0.0 && self.budget <= 1.0) {
            return bad("budget must lie in (0, 1]");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.block_size == Some(0) {
            return bad("block_size must be positive");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            return bad("keep_fraction must lie in [0, 1]");
        }
        if self.resample_every == 0 || self.node_prob_iters == 0 {
            return bad("resample_every and node_prob_iters must be at least 1");
        }
        if self.constraint == ConstraintKind::TreeOnly && self.mode != Mode::Injection {
            return bad("tree_only applies to injection attacks only");
        }
        Ok(())
    }

    /// Model evaluations one adaptive run spends: every step plus each
    /// discrete sample plus the top-Δ rounding.
    pub fn evaluations(&self) -> usize {
        self.steps + self.n_samples + 1
    }
}

/// A discrete perturbation and its effect, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationResult {
    pub graph_id: usize,
    pub model: Arch,
    pub attack: AttackKind,
    pub mode: Mode,
    pub budget: f64,
    /// Largest number of flips allowed.
    pub delta: usize,
    /// Flipped pairs `i < j`; injected node `k` has index `n + k`.
    pub flips: Vec<[usize; 2]>,
    #[serde(default)]
    pub injected: Vec<CandidateRef>,
    pub clean_metric: f64,
    pub attacked_metric: f64,
    pub attacked_loss: f64,
    pub loss_trace: Vec<f64>,
    pub evaluations: usize,
    pub seed: u64,
    pub toggles: RelaxToggles,
    pub constraint: ConstraintKind,
}

/// Targets of the attack loss.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Nodes(Vec<usize>),
    Graph(usize),
}

impl Labels {
    pub fn of(graph: &Graph, task: Task) -> Result<Self, AttackError> {
        match task {
            Task::Node => graph
                .node_labels
                .clone()
                .map(Labels::Nodes)
                .ok_or_else(|| AttackError::Config("graph has no node labels".into())),
            Task::Graph => graph
                .graph_label
                .map(Labels::Graph)
                .ok_or_else(|| AttackError::Config("graph has no graph label".into())),
        }
    }

    fn task(&self) -> Task {
        match self {
            Labels::Nodes(_) => Task::Node,
            Labels::Graph(_) => Task::Graph,
        }
    }
}

/// Loss the attacker minimizes.
///
/// `tanh_margin`: mean over labeled rows of `tanh(z[c*] − max_{c≠c*} z[c])`;
/// extra trailing rows (injected nodes) are ignored. `raw_score`: the score
/// for label 1 and its negation for label 0.
pub fn attack_loss<'t>(logits: Var<'t>, labels: &Labels, kind: LossKind) -> Result<Var<'t>, AttackError> {
    match (kind, labels) {
        (LossKind::TanhMargin, Labels::Nodes(y)) => {
            let rows = logits.value().dims2().0;
            let z = if rows == y.len() {
                logits
            } else {
                logits.gather_rows(&(0..y.len()).collect::<Vec<_>>())
            };
            Ok(z.margin_rows(y).tanh().mean())
        }
        (LossKind::RawScore, Labels::Graph(y)) => {
            let s = logits.sum();
            Ok(if *y == 1 { s } else { s.scale(-1.0) })
        }
        _ => Err(AttackError::LossMismatch { kind, task: labels.task() }),
    }
}

/// Accuracy in `[0, 1]` of exact-model logits.
pub fn metric(logits: &Tensor, labels: &Labels) -> f64 {
    match labels {
        Labels::Nodes(y) => {
            let correct = y
                .iter()
                .enumerate()
                .filter(|&(i, &c)| {
                    let row = logits.row(i);
                    (0..row.len()).all(|k| k == c || row[k] < row[c])
                })
                .count();
            correct as f64 / y.len().max(1) as f64
        }
        Labels::Graph(y) => {
            let predicted = usize::from(logits.data()[0] > 0.0);
            if predicted == *y {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn exact_loss(logits: &Tensor, labels: &Labels, kind: LossKind) -> Result<f64, AttackError> {
    let tape = Tape::new();
    Ok(attack_loss(tape.constant(logits.clone()), labels, kind)?.item())
}

/// One evaluated discrete perturbation.
#[derive(Debug, Clone)]
struct Outcome {
    loss: f64,
    metric: f64,
    flips: Vec<[usize; 2]>,
    injected: Vec<usize>,
}

/// Everything fixed for the attack on one graph.
struct Target<'a> {
    model: &'a Model,
    graph_id: usize,
    /// Original graph, augmented with the candidates in injection mode.
    base: Graph,
    n_original: usize,
    candidates: Option<&'a CandidateSet>,
    labels: Labels,
    loss: LossKind,
    delta: usize,
    allowed: Vec<(usize, usize)>,
    block_size: usize,
    config: &'a AttackConfig,
    spectral: Option<SpectralBase>,
}

impl<'a> Target<'a> {
    fn new(
        model: &'a Model,
        graph: &Graph,
        graph_id: usize,
        candidates: Option<&'a CandidateSet>,
        config: &'a AttackConfig,
    ) -> Result<Self, AttackError> {
        config.validate()?;
        let task = model.hyper.task;
        let labels = Labels::of(graph, task)?;
        let loss = config.loss.unwrap_or(LossKind::for_task(task));
        if loss != LossKind::for_task(task) {
            return Err(AttackError::LossMismatch { kind: loss, task });
        }
        let (base, n_cand) = match config.mode {
            Mode::Structure => (graph.clone(), 0),
            Mode::Injection => {
                let cs = candidates.ok_or_else(|| AttackError::Config("injection needs a candidate set".into()))?;
                if !graph.is_connected() {
                    return Err(AttackError::Config("injection needs a connected graph".into()));
                }
                (nia_augment(graph, cs)?, cs.len())
            }
        };
        let mask = constraint_mask(graph, config.constraint, n_cand, config.include_f)?;
        let allowed = mask.pairs();
        let delta = budget_from_fraction(config.budget, graph.edge_count()).min(allowed.len());
        let cap = match config.mode {
            Mode::Structure => 20000,
            Mode::Injection => 1000,
        };
        let block_size = config.block_size.unwrap_or(cap).min(allowed.len());
        if block_size < delta {
            return Err(AttackError::Config(format!("block size {block_size} is below the budget {delta}")));
        }
        let spectral = if model.arch() == Arch::San && config.toggles.san_lap_pert {
            Some(SpectralBase::of(graph.adjacency())?)
        } else {
            None
        };
        Ok(Self {
            model,
            graph_id,
            base,
            n_original: graph.n(),
            candidates,
            labels,
            loss,
            delta,
            allowed,
            block_size,
            config,
            spectral,
        })
    }

    /// Evaluates the exact model on the base graph with `chosen` pairs flipped.
    ///
    /// Injection: nodes outside the originals' component are pruned and,
    /// under `tree_only`, the result is projected to a maximum spanning tree
    /// weighted by each pair's value.
    fn evaluate(&self, chosen: &[((usize, usize), f64)]) -> Result<Outcome, AttackError> {
        let n = self.n_original;
        let base = self.base.adjacency();
        let pairs: Vec<(usize, usize)> = chosen.iter().map(|c| c.0).collect();
        let flipped = apply_flips(base, &EdgeFlipMatrix::discrete(base.dims2().0, &pairs)?);
        let (adj, keep) = match self.config.mode {
            Mode::Structure => (flipped, (0..n).collect::<Vec<_>>()),
            Mode::Injection => {
                let originals: Vec<usize> = (0..n).collect();
                let keep = component_of(&flipped, &originals);
                let adj = if self.config.constraint == ConstraintKind::TreeOnly {
                    let mut w = base.map(|a| a * ORIGINAL_EDGE_WEIGHT);
                    for &((i, j), v) in chosen {
                        w.set2(i, j, v);
                        w.set2(j, i, v);
                    }
                    mst_projection(&induced(&w, &keep))?
                } else {
                    induced(&flipped, &keep)
                };
                (adj, keep)
            }
        };
        let features = gather(self.base.features(), &keep);
        let logits = self.model.predict(&adj, &features)?;
        // flips in the attacked graph's own indexing
        let clean = induced(base, &keep);
        let mut flips = Vec::new();
        for a in 0..keep.len() {
            for b in a + 1..keep.len() {
                if adj.get2(a, b) != clean.get2(a, b) {
                    flips.push([a, b]);
                }
            }
        }
        Ok(Outcome {
            loss: exact_loss(&logits, &self.labels, self.loss)?,
            metric: metric(&logits, &self.labels),
            flips,
            injected: keep[n..].iter().map(|&c| c - n).collect(),
        })
    }

    /// Relaxed attack loss and its gradient w.r.t. the block values.
    fn relaxed(&self, block: &BlockState) -> Result<(f64, Vec<f64>), AttackError> {
        let tape = Tape::new();
        let bound = self.model.params.bind(&tape, false);
        let leaf = tape.leaf(Tensor::vector(block.values.clone()));
        let toggles = self.config.toggles;
        let loss = match self.config.mode {
            Mode::Structure => {
                let input = ForwardInput {
                    adj: apply_flips_var(self.base.adjacency(), &block.pairs, leaf),
                    features: self.base.features(),
                    node_probs: None,
                    toggles,
                    spectral: self.spectral.as_ref(),
                    eig_signs: None,
                };
                attack_loss(self.model.forward(&bound, &input)?, &self.labels, self.loss)?
            }
            Mode::Injection => {
                let keep = self.relaxed_nodes(block);
                let mut pos = vec![usize::MAX; self.base.n()];
                for (k, &v) in keep.iter().enumerate() {
                    pos[v] = k;
                }
                let (mut sub_pairs, mut rows) = (Vec::new(), Vec::new());
                for (k, &(i, j)) in block.pairs.iter().enumerate() {
                    if pos[i] != usize::MAX && pos[j] != usize::MAX {
                        sub_pairs.push((pos[i], pos[j]));
                        rows.push(k);
                    }
                }
                let values = leaf.reshape(&[block.len(), 1]).gather_rows(&rows).reshape(&[rows.len()]);
                let adj = apply_flips_var(&induced(self.base.adjacency(), &keep), &sub_pairs, values);
                let features = gather(self.base.features(), &keep);
                let spectral = self.spectral.as_ref().map(|s| s.with_isolated(keep.len() - self.n_original));
                let input = ForwardInput {
                    adj,
                    features: &features,
                    node_probs: Some(node_probability_var(adj, self.config.node_prob_iters)),
                    toggles,
                    spectral: spectral.as_ref(),
                    eig_signs: None,
                };
                attack_loss(self.model.forward(&bound, &input)?, &self.labels, self.loss)?
            }
        };
        let value = loss.item();
        let grads = tape.backward(loss)?;
        let g = grads.get(leaf);
        if !g.is_finite() {
            return Err(AttackError::NonFinite("gradient of the block values".into()));
        }
        Ok((value, g.into_data()))
    }

    /// Originals plus every candidate the block touches, except candidates
    /// whose positive-weight component misses the originals.
    fn relaxed_nodes(&self, block: &BlockState) -> Vec<usize> {
        let n = self.n_original;
        let mut w = self.base.adjacency().clone();
        let mut touched = BTreeSet::new();
        let mut positive = vec![false; self.base.n()];
        for (&(i, j), &v) in block.pairs.iter().zip(&block.values) {
            for x in [i, j] {
                if x >= n {
                    touched.insert(x);
                    positive[x] |= v > 0.0;
                }
            }
            if v > 0.0 {
                w.set2(i, j, v);
                w.set2(j, i, v);
            }
        }
        let originals: Vec<usize> = (0..n).collect();
        let mut reached = vec![false; self.base.n()];
        for v in component_of(&w, &originals) {
            reached[v] = true;
        }
        originals
            .into_iter()
            .chain(touched.into_iter().filter(|&c| reached[c] || !positive[c]))
            .collect()
    }

    fn result(&self, kind: AttackKind, clean: &Outcome, best: Outcome, trace: Vec<f64>, evaluations: usize) -> PerturbationResult {
        let injected = match self.candidates {
            Some(cs) if self.config.mode == Mode::Injection => best.injected.iter().map(|&k| cs.provenance[k]).collect(),
            _ => Vec::new(),
        };
        PerturbationResult {
            graph_id: self.graph_id,
            model: self.model.arch(),
            attack: kind,
            mode: self.config.mode,
            budget: self.config.budget,
            delta: self.delta,
            flips: best.flips,
            injected,
            clean_metric: clean.metric,
            attacked_metric: best.metric,
            attacked_loss: best.loss,
            loss_trace: trace,
            evaluations,
            seed: self.config.seed,
            toggles: self.config.toggles,
            constraint: self.config.constraint,
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(2 * self.graph_id as u64 + stream);
        rng
    }
}

fn gather(features: &Tensor, keep: &[usize]) -> Tensor {
    let d = features.dims2().1;
    let data = keep.iter().flat_map(|&i| features.row(i).iter().copied()).collect();
    Tensor::matrix(keep.len(), d, data)
}

/// One descent step on the attack loss followed by the budget projection.
/// Returns the loss before the step.
pub fn prbcd_step(model: &Model, graph: &Graph, block: &mut BlockState, config: &AttackConfig) -> Result<f64, AttackError> {
    let target = Target::new(model, graph, 0, None, config)?;
    target.step(block)
}

impl Target<'_> {
    fn step(&self, block: &mut BlockState) -> Result<f64, AttackError> {
        let (loss, grad) = self.relaxed(block)?;
        let lr = self.config.base_lr * self.delta as f64 / block.len().max(1) as f64;
        for (v, g) in block.values.iter_mut().zip(&grad) {
            *v -= lr * g;
        }
        project_budget(&mut block.values, self.delta as f64);
        Ok(loss)
    }

    /// Strongest of `n_samples` Bernoulli draws from the block and its top-Δ rounding.
    fn sample_discrete(&self, block: &BlockState, rng: &mut impl Rng) -> Result<Outcome, AttackError> {
        let mut order: Vec<usize> = (0..block.len()).filter(|&k| block.values[k] > 0.0).collect();
        order.sort_by(|&a, &b| block.values[b].total_cmp(&block.values[a]).then(a.cmp(&b)));
        order.truncate(self.delta);
        order.sort_unstable();
        let pick = |ks: &[usize]| -> Vec<((usize, usize), f64)> { ks.iter().map(|&k| (block.pairs[k], block.values[k])).collect() };

        let mut best = self.evaluate(&pick(&order))?;
        for _ in 0..self.config.n_samples {
            let mut drawn = None;
            for _ in 0..MAX_REJECTIONS {
                let ks: Vec<usize> = (0..block.len()).filter(|&k| rng.random::<f64>() < block.values[k]).collect();
                if ks.len() <= self.delta {
                    drawn = Some(ks);
                    break;
                }
            }
            let out = self.evaluate(&pick(drawn.as_deref().unwrap_or(&order)))?;
            if out.loss < best.loss {
                best = out;
            }
        }
        Ok(best)
    }
}

/// Best discrete perturbation drawn from a relaxed block (see [`run_attack`]).
pub fn sample_discrete(
    model: &Model,
    graph: &Graph,
    block: &BlockState,
    config: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<PerturbationResult, AttackError> {
    let target = Target::new(model, graph, 0, None, config)?;
    let clean = target.evaluate(&[])?;
    let best = target.sample_discrete(block, rng)?;
    Ok(target.result(AttackKind::Adaptive, &clean, best, Vec::new(), config.n_samples + 1))
}

/// Full adaptive attack on one graph; deterministic given the config seed.
pub fn run_attack(
    model: &Model,
    graph: &Graph,
    graph_id: usize,
    candidates: Option<&CandidateSet>,
    config: &AttackConfig,
) -> Result<PerturbationResult, AttackError> {
    let target = Target::new(model, graph, graph_id, candidates, config)?;
    let clean = target.evaluate(&[])?;
    if target.delta == 0 {
        return Ok(target.result(AttackKind::Adaptive, &clean, clean.clone(), Vec::new(), 0));
    }
    let mut rng = target.rng(0);
    let mut block = BlockState::sample(&target.allowed, target.block_size, &mut rng);
    let mut trace = Vec::with_capacity(config.steps);
    let mut best_block: Option<(f64, BlockState)> = None;
    for step in 0..config.steps {
        if step > 0 && step % config.resample_every == 0 && block.len() < target.allowed.len() {
            block = resample_block(&block, config.keep_fraction, &target.allowed, &mut rng);
        }
        let before = block.clone();
        let loss = target.step(&mut block)?;
        if best_block.as_ref().is_none_or(|(l, _)| loss < *l) {
            best_block = Some((loss, before));
        }
        trace.push(loss);
    }
    // sample from the lowest relaxed loss seen, not the last iterate
    let block = best_block.map_or(block, |(_, b)| b);
    let best = target.sample_discrete(&block, &mut rng)?;
    log::debug!(
        "{} graph {graph_id}: loss {:.4} -> {:.4}, metric {:.3} -> {:.3}",
        model.arch(),
        clean.loss,
        best.loss,
        clean.metric,
        best.metric
    );
    Ok(target.result(AttackKind::Adaptive, &clean, best, trace, config.evaluations()))
}

/// Strongest of as many random Δ-subsets of the allowed pairs as the
/// adaptive attack spends model evaluations.
pub fn random_baseline(
    model: &Model,
    graph: &Graph,
    graph_id: usize,
    candidates: Option<&CandidateSet>,
    config: &AttackConfig,
) -> Result<PerturbationResult, AttackError> {
    let target = Target::new(model, graph, graph_id, candidates, config)?;
    let clean = target.evaluate(&[])?;
    if target.delta == 0 {
        return Ok(target.result(AttackKind::Random, &clean, clean.clone(), Vec::new(), 0));
    }
    let mut rng = target.rng(1);
    let mut best: Option<Outcome> = None;
    let mut trace = Vec::with_capacity(config.evaluations());
    for _ in 0..config.evaluations() {
        let mut ks = index::sample(&mut rng, target.allowed.len(), target.delta).into_vec();
        ks.sort_unstable();
        let chosen: Vec<_> = ks.iter().map(|&k| (target.allowed[k], 1.0)).collect();
        let out = target.evaluate(&chosen)?;
        if best.as_ref().is_none_or(|b| out.loss < b.loss) {
            best = Some(out);
        }
        trace.push(best.as_ref().map_or(f64::NAN, |b| b.loss));
    }
    let best = best.unwrap_or(clean.clone());
    Ok(target.result(AttackKind::Random, &clean, best, trace, config.evaluations()))
}

/// The attacked graph a result describes: injected nodes appended (from
/// `pool`, the dataset the candidates were drawn from) and the flips applied.
pub fn apply_result(graph: &Graph, result: &PerturbationResult, pool: &[Graph]) -> Result<Graph, AttackError> {
    let cs = CandidateSet::from_refs(pool, result.injected.clone(), Some(result.graph_id))?;
    let base = nia_augment(graph, &cs)?;
    let n = base.n();
    let mut pairs = Vec::with_capacity(result.flips.len());
    for &[i, j] in &result.flips {
        if i >= j || j >= n {
            return Err(AttackError::Constraint(format!("flip ({i}, {j}) is not an upper-triangle pair of {n} nodes")));
        }
        pairs.push((i, j));
    }
    let adj = apply_flips(base.adjacency(), &EdgeFlipMatrix::discrete(n, &pairs)?);
    Ok(base.with_adjacency(adj)?)
}

/// Evaluates `model` (exact, no relaxation) on a perturbation found against another model.
pub fn transfer_attack(
    result: &PerturbationResult,
    model: &Model,
    graph: &Graph,
    graph_id: usize,
    pool: &[Graph],
) -> Result<PerturbationResult, AttackError> {
    if result.graph_id != graph_id {
        return Err(AttackError::Config(format!(
            "perturbation belongs to graph {}, not graph {graph_id}",
            result.graph_id
        )));
    }
    let labels = Labels::of(graph, model.hyper.task)?;
    let kind = LossKind::for_task(model.hyper.task);
    let clean = model.predict(graph.adjacency(), graph.features())?;
    let attacked = apply_result(graph, result, pool)?;
    let logits = model.predict(attacked.adjacency(), attacked.features())?;
    Ok(PerturbationResult {
        model: model.arch(),
        attack: AttackKind::Transfer,
        clean_metric: metric(&clean, &labels),
        attacked_metric: metric(&logits, &labels),
        attacked_loss: exact_loss(&logits, &labels, kind)?,
        loss_trace: Vec::new(),
        evaluations: 1,
        ..result.clone()
    })
}

/// Checks budget, index validity, mask and (under `tree_only`) tree shape.
pub fn validate_perturbation(graph: &Graph, result: &PerturbationResult, pool: &[Graph]) -> Result<(), AttackError> {
    let fail = |m: String| Err(AttackError::Constraint(m));
    if result.flips.len() > result.delta {
        return fail(format!("{} flips exceed the budget {}", result.flips.len(), result.delta));
    }
    if result.delta > budget_from_fraction(result.budget, graph.edge_count()) {
        return fail(format!("budget {} exceeds the allowed fraction", result.delta));
    }
    let unique: BTreeSet<[usize; 2]> = result.flips.iter().copied().collect();
    if unique.len() != result.flips.len() {
        return fail("duplicate flips".into());
    }
    let attacked = apply_result(graph, result, pool)?;
    let mask = constraint_mask(graph, result.constraint, result.injected.len(), true)?;
    if let Some(&[i, j]) = result.flips.iter().find(|&&[i, j]| !mask.allows(i, j)) {
        return fail(format!("flip ({i}, {j}) is outside the constraint mask"));
    }
    if result.mode == Mode::Structure && !result.injected.is_empty() {
        return fail("structure attack injected nodes".into());
    }
    if result.constraint == ConstraintKind::TreeOnly && !is_tree(attacked.adjacency()) {
        return fail("attacked graph is not a tree".into());
    }
    Ok(())
}
