//! GCN, GRIT, Graphormer and SAN over a continuous adjacency.
//!
//! Every model has one forward pass. Which relaxations are active is
//! decided by [`RelaxToggles`]; with every toggle off and no node
//! probabilities the pass is the ordinary discrete model, see
//! [`RelaxToggles::none`].

mod gcn;
mod graphormer;
mod grit;
mod params;
mod san;

use std::fs;
use std::path::Path;

use grelax_autodiff::{Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::graph::{laplacian_sym, Task};
use crate::spectral::{eig_sym, EigenDecomposition, SpectralError};

pub use graphormer::graphormer_degree_pe;
pub use grit::rrwp;
pub use params::{Bound, ParamSet, ParamTensor};
pub use san::{san_attention, san_lpe};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{0}: node probabilities are all zero")]
    ZeroProbabilities(&'static str),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Gcn,
    Grit,
    Graphormer,
    San,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Gcn, Arch::Grit, Arch::Graphormer, Arch::San];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Grit => "grit",
            Arch::Graphormer => "graphormer",
            Arch::San => "san",
        }
    }

    pub fn parse(s: &str) -> Option<Arch> {
        Arch::ALL.into_iter().find(|a| a.name() == s.to_ascii_lowercase())
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters. Unused fields are ignored by a given arch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub arch: Arch,
    pub task: Task,
    pub in_dim: usize,
    /// Classes for node tasks; 1 (a raw score) for binary graph tasks.
    pub out_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    /// GRIT random-walk length `K`.
    pub rrwp_steps: usize,
    /// SAN eigenpairs per node.
    pub eig_k: usize,
    /// SAN positional-encoding width.
    pub pe_dim: usize,
    /// SAN fake/real branch mixing weight.
    pub gamma: f64,
    pub max_degree: usize,
    pub max_distance: usize,
}

impl Hyper {
    pub fn new(arch: Arch, task: Task, in_dim: usize, num_classes: usize) -> Self {
        let out_dim = match task {
            Task::Node => num_classes,
            Task::Graph => 1,
        };
        let (hidden, layers, heads) = match arch {
            Arch::Gcn => (32, 3, 1),
            Arch::Grit => (16, 2, 2),
            Arch::Graphormer => (32, 2, 4),
            Arch::San => (32, 2, 2),
        };
        Self {
            arch,
            task,
            in_dim,
            out_dim,
            hidden,
            layers,
            heads,
            rrwp_steps: 8,
            eig_k: 8,
            pe_dim: 8,
            gamma: 0.1,
            max_degree: 64,
            max_distance: 20,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Invalid(m));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!("hidden {} must be a positive multiple of heads {}", self.hidden, self.heads));
        }
        if self.arch == Arch::Grit && self.rrwp_steps < 2 {
            return bad(format!("rrwp_steps must be at least 2, got {}", self.rrwp_steps));
        }
        if self.arch == Arch::San && (self.gamma <= 0.0 || self.pe_dim == 0 || self.pe_dim >= self.hidden) {
            return bad(format!("gamma {} / pe_dim {} invalid for hidden {}", self.gamma, self.pe_dim, self.hidden));
        }
        if self.task == Task::Graph && self.out_dim != 1 {
            return bad(format!("graph tasks use one output score, got {}", self.out_dim));
        }
        Ok(())
    }
}

/// Which relaxations the forward pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaxToggles {
    pub graphormer_deg: bool,
    pub graphormer_spd: bool,
    pub san_attention: bool,
    pub san_lap_pert: bool,
    pub grit_rrwp_grad: bool,
    pub grit_deg_grad: bool,
    pub node_prob_bias: bool,
}

impl Default for RelaxToggles {
    fn default() -> Self {
        Self::all()
    }
}

impl RelaxToggles {
    pub const NAMES: [&'static str; 7] = [
        "graphormer_deg",
        "graphormer_spd",
        "san_attention",
        "san_lap_pert",
        "grit_rrwp_grad",
        "grit_deg_grad",
        "node_prob_bias",
    ];

    pub fn all() -> Self {
        Self::from_fn(|_| true)
    }

    /// The unrelaxed model.
    pub fn none() -> Self {
        Self::from_fn(|_| false)
    }

    fn from_fn(f: impl Fn(&str) -> bool) -> Self {
        Self {
            graphormer_deg: f("graphormer_deg"),
            graphormer_spd: f("graphormer_spd"),
            san_attention: f("san_attention"),
            san_lap_pert: f("san_lap_pert"),
            grit_rrwp_grad: f("grit_rrwp_grad"),
            grit_deg_grad: f("grit_deg_grad"),
            node_prob_bias: f("node_prob_bias"),
        }
    }

    /// Parses a comma list of enabled toggles; `all` and `none` are accepted.
    pub fn parse(list: &str) -> Result<Self, String> {
        let items: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        match items.as_slice() {
            ["all"] => return Ok(Self::all()),
            ["none"] | [] => return Ok(Self::none()),
            _ => {}
        }
        if let Some(bad) = items.iter().find(|s| !Self::NAMES.contains(s)) {
            return Err(format!("unknown toggle `{bad}`; expected one of {}", Self::NAMES.join(", ")));
        }
        Ok(Self::from_fn(|name| items.contains(&name)))
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let flags = [
            self.graphormer_deg,
            self.graphormer_spd,
            self.san_attention,
            self.san_lap_pert,
            self.grit_rrwp_grad,
            self.grit_deg_grad,
            self.node_prob_bias,
        ];
        Self::NAMES.iter().zip(flags).filter(|(_, on)| *on).map(|(n, _)| *n).collect()
    }
}

/// Eigenbasis that SAN perturbs from, together with the Laplacian it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBase {
    pub eig: EigenDecomposition,
    pub laplacian: Tensor,
}

impl SpectralBase {
    pub fn of(adj: &Tensor) -> Result<Self, ModelError> {
        let laplacian = laplacian_sym(adj);
        let eig = eig_sym(&laplacian)?;
        Ok(Self { eig, laplacian })
    }

    /// The base of the same graph with `extra` isolated nodes appended.
    pub fn with_isolated(&self, extra: usize) -> Self {
        let n = self.eig.n();
        let total = n + extra;
        let mut laplacian = Tensor::identity(total);
        for i in 0..n {
            for j in 0..n {
                laplacian.set2(i, j, self.laplacian.get2(i, j));
            }
        }
        Self {
            eig: self.eig.with_isolated(extra),
            laplacian,
        }
    }
}

pub struct ForwardInput<'t, 'a> {
    pub adj: Var<'t>,
    pub features: &'a Tensor,
    /// Node probabilities. They always weight the pooling; they bias
    /// attention only with `node_prob_bias`.
    pub node_probs: Option<Var<'t>>,
    pub toggles: RelaxToggles,
    /// SAN perturbation base. Without one, the current adjacency is decomposed.
    pub spectral: Option<&'a SpectralBase>,
    /// ±1 per eigenvector, multiplied into SAN's encodings (training augmentation).
    pub eig_signs: Option<&'a [f64]>,
}

impl<'t, 'a> ForwardInput<'t, 'a> {
    /// Unrelaxed input on a fixed adjacency.
    pub fn exact(tape: &'t Tape, adj: &Tensor, features: &'a Tensor) -> Self {
        Self {
            adj: tape.constant(adj.clone()),
            features,
            node_probs: None,
            toggles: RelaxToggles::none(),
            spectral: None,
            eig_signs: None,
        }
    }

    fn n(&self) -> usize {
        self.adj.value().dims2().0
    }

    fn attention_probs(&self) -> Option<Var<'t>> {
        self.node_probs.filter(|_| self.toggles.node_prob_bias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hyper: Hyper,
    pub params: ParamSet,
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub arch: Arch,
    pub hyper: Hyper,
    pub params: std::collections::BTreeMap<String, ParamTensor>,
}

impl Model {
    pub fn new(hyper: Hyper, seed: u64) -> Result<Self, ModelError> {
        hyper.validate()?;
        let mut params = ParamSet::new(seed);
        match hyper.arch {
            Arch::Gcn => gcn::init(&hyper, &mut params),
            Arch::Grit => grit::init(&hyper, &mut params),
            Arch::Graphormer => graphormer::init(&hyper, &mut params),
            Arch::San => san::init(&hyper, &mut params),
        }
        Ok(Self { hyper, params })
    }

    pub fn arch(&self) -> Arch {
        self.hyper.arch
    }

    /// Node logits `[n, C]` or a `[1, 1]` graph score.
    pub fn forward<'t>(&self, params: &Bound<'t>, input: &ForwardInput<'t, '_>) -> Result<Var<'t>, ModelError> {
        match self.hyper.arch {
            Arch::Gcn => gcn::forward(&self.hyper, params, input),
            Arch::Grit => grit::forward(&self.hyper, params, input),
            Arch::Graphormer => graphormer::forward(&self.hyper, params, input),
            Arch::San => san::forward(&self.hyper, params, input),
        }
    }

    /// Unrelaxed output on a discrete adjacency.
    pub fn predict(&self, adj: &Tensor, features: &Tensor) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let out = self.forward(&bound, &ForwardInput::exact(&tape, adj, features))?;
        Ok(out.to_tensor())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch: self.hyper.arch,
            hyper: self.hyper.clone(),
            params: self.params.to_named(),
        }
    }

    /// Rebuilds a model, checking every parameter against a fresh init.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, ModelError> {
        if ck.arch != ck.hyper.arch {
            return Err(ModelError::Checkpoint(format!(
                "arch {} disagrees with hyper.arch {}",
                ck.arch, ck.hyper.arch
            )));
        }
        let mut model = Model::new(ck.hyper, 0)?;
        model.params.load_named(ck.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let text = serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, text).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(ck)
    }
}

/// `α_ij = p_j e^{w_ij} / Σ_k p_k e^{w_ik}` for a `[n, n]` score matrix.
pub fn attention_nodeprob_bias<'t>(w: Var<'t>, p: Var<'t>) -> Result<Var<'t>, ModelError> {
    let n = w.value().dims2().0;
    Ok(w.weighted_softmax_rows(prob_matrix(w.tape(), Some(p), n)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Sum,
    Mean,
}

/// `Σ p_i h_i`, divided by `Σ p_i` in mean mode. `p = None` means all ones.
pub fn pool_weighted<'t>(h: Var<'t>, p: Option<Var<'t>>, mode: PoolMode) -> Result<Var<'t>, ModelError> {
    let tape = h.tape();
    let n = h.value().dims2().0;
    let p = p.unwrap_or_else(|| tape.constant(Tensor::ones(&[n])));
    let total = p.value().sum();
    let pooled = p.reshape(&[1, n]).matmul(h);
    match mode {
        PoolMode::Sum => Ok(pooled),
        PoolMode::Mean if total == 0.0 => Err(ModelError::ZeroProbabilities("pool_weighted")),
        PoolMode::Mean => Ok(pooled.mul_col(p.sum().safe_recip())),
    }
}

/// `[n, n]` matrix whose rows are all `p`, or all ones.
pub(crate) fn prob_matrix<'t>(tape: &'t Tape, p: Option<Var<'t>>, n: usize) -> Result<Var<'t>, ModelError> {
    match p {
        None => Ok(tape.constant(Tensor::ones(&[n, n]))),
        Some(p) => {
            if p.value().data().iter().all(|&x| x == 0.0) {
                return Err(ModelError::ZeroProbabilities("attention_nodeprob_bias"));
            }
            Ok(tape.constant(Tensor::ones(&[n, 1])).matmul(p.reshape(&[1, n])))
        }
    }
}

pub(crate) fn linear<'t>(p: &Bound<'t>, name: &str, x: Var<'t>) -> Var<'t> {
    x.matmul(p.get(&format!("{name}.w"))).add_row(p.get(&format!("{name}.b")))
}

pub(crate) fn init_linear(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize) {
    ps.xavier(&format!("{name}.w"), fan_in, fan_out);
    ps.zeros(&format!("{name}.b"), &[fan_out]);
}

pub(crate) fn init_ffn(ps: &mut ParamSet, name: &str, d: usize) {
    init_linear(ps, &format!("{name}.ff1"), d, 2 * d);
    init_linear(ps, &format!("{name}.ff2"), 2 * d, d);
}

/// Pre-norm feed-forward block with residual.
pub(crate) fn ffn_block<'t>(p: &Bound<'t>, name: &str, h: Var<'t>) -> Var<'t> {
    let x = linear(p, &format!("{name}.ff1"), h.layer_norm()).gelu();
    h + linear(p, &format!("{name}.ff2"), x)
}

/// Node logits, or the pooled graph score.
pub(crate) fn readout<'t>(
    hyper: &Hyper,
    p: &Bound<'t>,
    h: Var<'t>,
    pool_probs: Option<Var<'t>>,
) -> Result<Var<'t>, ModelError> {
    let h = h.layer_norm();
    match hyper.task {
        Task::Node => Ok(linear(p, "head", h)),
        Task::Graph => Ok(linear(p, "head", pool_weighted(h, pool_probs, PoolMode::Mean)?)),
    }
}

/// Multi-head attention with per-head score matrices from `scores(h)`.
/// Returns the concatenated head outputs `[n, d]` before the output map.
pub(crate) fn attend<'t>(
    heads: usize,
    v: Var<'t>,
    q: Var<'t>,
    mut scores: impl FnMut(usize) -> Var<'t>,
    mut extra: impl FnMut(usize, Var<'t>) -> Option<Var<'t>>,
) -> Var<'t> {
    let d = v.value().dims2().1;
    let dh = d / heads;
    let outs: Vec<Var<'t>> = (0..heads)
        .map(|h| {
            let alpha = scores(h).weighted_softmax_rows(q);
            let out = alpha.matmul(v.slice_cols(h * dh, (h + 1) * dh));
            match extra(h, alpha) {
                Some(e) => out + e,
                None => out,
            }
        })
        .collect();
    Var::concat_cols(&outs)
}
