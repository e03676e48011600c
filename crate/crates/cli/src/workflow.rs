//! `generate` and `train`: the steps that produce the dataset and checkpoints.

use std::path::Path;

use grelax_core::graph::{load_dataset, save_dataset};
use grelax_core::Dataset;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::data::generate;
use crate::error::{io, write_json, CliError};
use crate::sweep::{checkpoint_path, dataset_dir};
use crate::train::{train, TrainLog};

pub fn classes(spec: &DatasetSpec) -> usize {
    match spec {
        DatasetSpec::Cluster { sbm, .. } => sbm.n_clusters,
        DatasetSpec::Tree { .. } => 2,
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset, CliError> {
    let ds = generate(&cfg.dataset, cfg.seed)?;
    save_dataset(&ds, &dataset_dir(out))?;
    log::info!("wrote {} graphs to {}", ds.graphs.len(), dataset_dir(out).display());
    Ok(ds)
}

/// Trains every configured model on the generated dataset; keeps the
/// checkpoint with the best validation accuracy.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<TrainLog>, CliError> {
    let ds = load_dataset(&dataset_dir(out))?;
    if ds.task != cfg.dataset.task() {
        return Err(CliError::Validation(format!(
            "dataset in {} does not match the configured task",
            out.display()
        )));
    }
    let dir = out.join("models");
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let mut logs = Vec::new();
    for spec in &cfg.models {
        let hyper = spec.hyper(ds.task, ds.feature_dim(), classes(&cfg.dataset));
        let (model, log) = train(&ds, hyper, cfg.training_for(spec.arch), cfg.seed)?;
        log::info!(
            "{}: val {:.1} test {:.1} (epoch {})",
            spec.arch,
            log.val_accuracy,
            log.test_accuracy,
            log.best_epoch
        );
        model.save(&checkpoint_path(out, spec.arch))?;
        write_json(&dir.join(format!("{}.log.json", spec.arch.name())), &log)?;
        logs.push(log);
    }
    Ok(logs)
}
