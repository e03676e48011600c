//! Attack sweeps and relaxation ablations over the attacked test graphs.

use std::path::{Path, PathBuf};

use grelax_core::attack::{
    random_baseline, run_attack, transfer_attack, AttackConfig, AttackKind, CandidateSet, Mode, PerturbationResult,
};
use grelax_core::models::{Arch, Model, RelaxToggles};
use grelax_core::{Dataset, Graph};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{read_json, write_json, CliError};

/// One table cell: mean accuracy (percent) over the attacked graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub model: String,
    pub attack: String,
    pub budget: f64,
    pub toggles: String,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsTable {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let t: Self = read_json(path)?;
        if let Some(r) = t.rows.iter().find(|r| !(0.0..=100.0).contains(&r.accuracy)) {
            return Err(CliError::Validation(format!("accuracy {} outside [0, 100]", r.accuracy)));
        }
        Ok(t)
    }
}

/// Hex SHA-256 of the config's canonical JSON.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn toggles_label(t: &RelaxToggles) -> String {
    let on = t.enabled();
    if on.is_empty() {
        "none".into()
    } else {
        on.join("+")
    }
}

pub fn dataset_dir(out: &Path) -> PathBuf {
    out.join("dataset")
}

pub fn checkpoint_path(out: &Path, arch: Arch) -> PathBuf {
    out.join("models").join(format!("{}.json", arch.name()))
}

/// Perturbations of one (model, attack, budget, toggles, seed) cell.
pub fn perturbation_path(dir: &Path, arch: Arch, kind: AttackKind, budget: f64, toggles: &str, seed: u64) -> PathBuf {
    dir.join("perturbations")
        .join(format!("{}_{}_b{budget}_{toggles}_s{seed}.json", arch.name(), kind.name()))
}

pub(crate) fn load_models(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<Model>, CliError> {
    cfg.models
        .iter()
        .map(|m| Ok(Model::load(&checkpoint_path(out, m.arch))?))
        .collect()
}

/// Candidate pool for one attacked graph; fixed per (graph, seed).
fn candidates(cfg: &ExperimentConfig, ds: &Dataset, graph: usize, seed: u64) -> Result<Option<CandidateSet>, CliError> {
    if cfg.attack.params.mode != Mode::Injection {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(graph as u64);
    Ok(Some(CandidateSet::sample(&ds.graphs, graph, cfg.attack.candidates, true, &mut rng)?))
}

struct Cell<'a> {
    model: &'a Model,
    budget: f64,
    toggles: RelaxToggles,
    seed: u64,
}

/// Adaptive (and optionally random) results of one cell, in graph order.
fn run_cell(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    graphs: &[usize],
    cell: &Cell,
    random: bool,
) -> Result<(Vec<PerturbationResult>, Vec<PerturbationResult>), CliError> {
    let params = AttackConfig {
        budget: cell.budget,
        seed: cell.seed,
        toggles: cell.toggles,
        ..cfg.attack.params.clone()
    };
    let runs: Vec<Result<(PerturbationResult, Option<PerturbationResult>), CliError>> = graphs
        .par_iter()
        .map(|&gi| {
            let g: &Graph = &ds.graphs[gi];
            let cs = candidates(cfg, ds, gi, cell.seed)?;
            let adaptive = run_attack(cell.model, g, gi, cs.as_ref(), &params)?;
            let baseline = if random {
                Some(random_baseline(cell.model, g, gi, cs.as_ref(), &params)?)
            } else {
                None
            };
            Ok((adaptive, baseline))
        })
        .collect();
    let mut adaptive = Vec::with_capacity(graphs.len());
    let mut baseline = Vec::new();
    for r in runs {
        let (a, b) = r?;
        adaptive.push(a);
        baseline.extend(b);
    }
    Ok((adaptive, baseline))
}

fn mean_accuracy(results: &[PerturbationResult]) -> f64 {
    100.0 * results.iter().map(|r| r.attacked_metric).sum::<f64>() / results.len().max(1) as f64
}

fn clean_accuracy(model: &Model, ds: &Dataset, graphs: &[usize]) -> Result<f64, CliError> {
    crate::train::accuracy(model, ds, graphs)
}

/// Adaptive, random and transfer attacks for every model, budget and seed.
///
/// Writes `attack/results.json` and one perturbation file per cell below `out`.
pub fn cmd_attack(cfg: &ExperimentConfig, out: &Path) -> Result<ResultsTable, CliError> {
    let ds = grelax_core::graph::load_dataset(&dataset_dir(out))?;
    let models = load_models(cfg, out)?;
    let graphs: Vec<usize> = ds.split.test[..cfg.attack.graphs].to_vec();
    let dir = out.join("attack");
    let toggles = cfg.attack.params.toggles;
    let label = toggles_label(&toggles);
    let mut rows = Vec::new();
    // adaptive perturbations per (model index, budget index, seed), kept for transfer
    let mut stored: Vec<Vec<Vec<Vec<PerturbationResult>>>> = vec![vec![Vec::new(); cfg.attack.budgets.len()]; models.len()];

    for (mi, model) in models.iter().enumerate() {
        let clean = clean_accuracy(model, &ds, &graphs)?;
        for (bi, &budget) in cfg.attack.budgets.iter().enumerate() {
            for &seed in &cfg.seeds {
                let row = |attack: AttackKind, accuracy: f64| ResultRow {
                    model: model.arch().name().into(),
                    attack: attack.name().into(),
                    budget,
                    toggles: label.clone(),
                    seed,
                    accuracy,
                };
                if budget == 0.0 {
                    rows.push(row(AttackKind::Adaptive, clean));
                    if cfg.attack.random {
                        rows.push(row(AttackKind::Random, clean));
                    }
                    stored[mi][bi].push(Vec::new());
                    continue;
                }
                let cell = Cell { model, budget, toggles, seed };
                let (adaptive, random) = run_cell(cfg, &ds, &graphs, &cell, cfg.attack.random)?;
                log::info!("{} budget {budget} seed {seed}: adaptive {:.2}", model.arch(), mean_accuracy(&adaptive));
                rows.push(row(AttackKind::Adaptive, mean_accuracy(&adaptive)));
                write_json(&perturbation_path(&dir, model.arch(), AttackKind::Adaptive, budget, &label, seed), &adaptive)?;
                if cfg.attack.random {
                    rows.push(row(AttackKind::Random, mean_accuracy(&random)));
                    write_json(&perturbation_path(&dir, model.arch(), AttackKind::Random, budget, &label, seed), &random)?;
                }
                stored[mi][bi].push(adaptive);
            }
        }
    }

    if cfg.attack.transfer && models.len() > 1 {
        for (mi, target) in models.iter().enumerate() {
            let clean = clean_accuracy(target, &ds, &graphs)?;
            for (bi, &budget) in cfg.attack.budgets.iter().enumerate() {
                for (si, &seed) in cfg.seeds.iter().enumerate() {
                    // strongest source model for this cell
                    let mut strongest = clean;
                    if budget > 0.0 {
                        for (source, per_budget) in stored.iter().enumerate() {
                            if source == mi {
                                continue;
                            }
                            let results: Vec<PerturbationResult> = per_budget[bi][si]
                                .iter()
                                .map(|r| transfer_attack(r, target, &ds.graphs[r.graph_id], r.graph_id, &ds.graphs))
                                .collect::<Result<_, _>>()?;
                            strongest = strongest.min(mean_accuracy(&results));
                        }
                    }
                    rows.push(ResultRow {
                        model: target.arch().name().into(),
                        attack: AttackKind::Transfer.name().into(),
                        budget,
                        toggles: label.clone(),
                        seed,
                        accuracy: strongest,
                    });
                }
            }
        }
    }
    let table = ResultsTable {
        config_hash: config_hash(cfg),
        rows,
    };
    write_json(&dir.join("results.json"), &table)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(table)
}

/// Toggles that matter for `arch`.
pub fn relevant_toggles(arch: Arch) -> &'static [&'static str] {
    match arch {
        Arch::Gcn => &[],
        Arch::Grit => &["grit_rrwp_grad", "grit_deg_grad"],
        Arch::Graphormer => &["graphormer_deg", "graphormer_spd"],
        Arch::San => &["san_attention", "san_lap_pert"],
    }
}

/// Every on/off combination of the relevant toggles (plus the node
/// probability bias in injection mode), all-on first. The fully relaxation
/// free combination only exists for structure attacks.
pub fn toggle_grid(arch: Arch, mode: Mode) -> Vec<RelaxToggles> {
    let mut names: Vec<&str> = relevant_toggles(arch).to_vec();
    if mode == Mode::Injection {
        names.push("node_prob_bias");
    }
    let k = names.len();
    let mut grid = Vec::new();
    for mask in (0..1usize << k).rev() {
        if mode == Mode::Injection && mask == 0 {
            continue;
        }
        let on: Vec<&str> = (0..k).filter(|&b| mask >> (k - 1 - b) & 1 == 1).map(|b| names[b]).collect();
        let list = if on.is_empty() { "none".to_string() } else { on.join(",") };
        grid.push(RelaxToggles::parse(&list).expect("known toggle names"));
    }
    grid
}

/// Adaptive attacks at the ablation budget for each toggle combination,
/// with clean and random reference rows.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<ResultsTable, CliError> {
    let ds = grelax_core::graph::load_dataset(&dataset_dir(out))?;
    let models = load_models(cfg, out)?;
    let graphs: Vec<usize> = ds.split.test[..cfg.attack.graphs].to_vec();
    let dir = out.join("ablate");
    let budget = cfg.ablation.budget;
    let mut rows = Vec::new();
    for model in &models {
        let grid: Vec<RelaxToggles> = if cfg.ablation.toggle_sets.is_empty() {
            toggle_grid(model.arch(), cfg.attack.params.mode)
        } else {
            cfg.ablation
                .toggle_sets
                .iter()
                .map(|s| RelaxToggles::parse(s).map_err(CliError::Validation))
                .collect::<Result<_, _>>()?
        };
        let clean = clean_accuracy(model, &ds, &graphs)?;
        for &seed in &cfg.seeds {
            let row = |attack: &str, toggles: String, accuracy: f64| ResultRow {
                model: model.arch().name().into(),
                attack: attack.into(),
                budget,
                toggles,
                seed,
                accuracy,
            };
            rows.push(row("clean", "-".into(), clean));
            for (k, &toggles) in grid.iter().enumerate() {
                let cell = Cell { model, budget, toggles, seed };
                let (adaptive, random) = run_cell(cfg, &ds, &graphs, &cell, k == 0)?;
                let label = toggles_label(&toggles);
                write_json(&perturbation_path(&dir, model.arch(), AttackKind::Adaptive, budget, &label, seed), &adaptive)?;
                if k == 0 {
                    rows.push(row("random", "-".into(), mean_accuracy(&random)));
                    write_json(&perturbation_path(&dir, model.arch(), AttackKind::Random, budget, "-", seed), &random)?;
                }
                rows.push(row("adaptive", label, mean_accuracy(&adaptive)));
            }
        }
    }
    let table = ResultsTable {
        config_hash: config_hash(cfg),
        rows,
    };
    write_json(&dir.join("results.json"), &table)?;
    write_json(&dir.join("config.json"), cfg)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graphormer_injection_grid_has_seven_rows() {
        let grid = toggle_grid(Arch::Graphormer, Mode::Injection);
        assert_eq!(grid.len(), 7);
        assert!(grid.iter().all(|t| t.graphormer_deg || t.graphormer_spd || t.node_prob_bias));
        assert_eq!(toggles_label(&grid[0]), "graphormer_deg+graphormer_spd+node_prob_bias");
        assert_eq!(toggle_grid(Arch::Graphormer, Mode::Structure).len(), 4);
        assert_eq!(toggle_grid(Arch::Gcn, Mode::Structure).len(), 1);
        assert_eq!(toggles_label(&toggle_grid(Arch::Gcn, Mode::Structure)[0]), "none");
    }
}
