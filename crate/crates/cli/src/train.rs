use std::collections::BTreeMap;

use grelax_autodiff::{Adam, AdamState, Tape, Tensor};
use grelax_core::attack::{metric, Labels};
use grelax_core::models::{Arch, ForwardInput, Hyper, Model};
use grelax_core::{Dataset, Graph, Task};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainSpec;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub arch: String,
    pub parameters: usize,
    pub epochs: Vec<EpochLog>,
    /// Epoch of the kept checkpoint; 0 is the initialization.
    pub best_epoch: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
}

/// Mean per-graph accuracy of the exact model, in percent.
pub fn accuracy(model: &Model, ds: &Dataset, graphs: &[usize]) -> Result<f64, CliError> {
    let per_graph: Vec<Result<f64, CliError>> = graphs
        .par_iter()
        .map(|&i| {
            let g = &ds.graphs[i];
            let logits = model.predict(g.adjacency(), g.features())?;
            Ok(metric(&logits, &Labels::of(g, ds.task)?))
        })
        .collect();
    let mut total = 0.0;
    for m in per_graph {
        total += m?;
    }
    Ok(100.0 * total / graphs.len().max(1) as f64)
}

fn graph_loss(
    model: &Model,
    g: &Graph,
    task: Task,
    signs: Option<&[f64]>,
) -> Result<(f64, BTreeMap<String, Tensor>), CliError> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape, true);
    let input = ForwardInput {
        eig_signs: signs,
        ..ForwardInput::exact(&tape, g.adjacency(), g.features())
    };
    let out = model.forward(&bound, &input)?;
    let loss = match task {
        Task::Node => {
            let labels = g.node_labels.as_ref().expect("validated dataset");
            out.cross_entropy(labels, &vec![1.0; labels.len()])
        }
        Task::Graph => out.bce_logits(&[g.graph_label.expect("validated dataset") as f64]),
    };
    let value = loss.item();
    if !value.is_finite() {
        return Err(CliError::Diverged(format!("loss is {value}")));
    }
    let grads = tape.backward(loss).map_err(|e| CliError::Diverged(e.to_string()))?;
    Ok((value, bound.gradients(&grads)))
}

/// Adam on the training graphs, keeping the parameters with the best
/// validation accuracy (ties keep the earlier epoch).
pub fn train(ds: &Dataset, hyper: Hyper, spec: &TrainSpec, seed: u64) -> Result<(Model, TrainLog), CliError> {
    let mut model = Model::new(hyper, seed)?;
    let adam = Adam {
        weight_decay: spec.weight_decay,
        ..Adam::with_lr(spec.lr)
    };
    let mut states: BTreeMap<String, AdamState> = BTreeMap::new();
    let mut order = ds.split.train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e);

    let mut best = (accuracy(&model, ds, &ds.split.val)?, 0, model.params.clone());
    let mut epochs = Vec::with_capacity(spec.epochs);
    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let mut sum: BTreeMap<String, Tensor> = BTreeMap::new();
            // random eigenvector signs per graph, so SAN cannot rely on the sign convention
            let signs: Vec<Option<Vec<f64>>> = batch
                .iter()
                .map(|_| {
                    (model.arch() == Arch::San).then(|| {
                        (0..model.hyper.eig_k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
                    })
                })
                .collect();
            let losses: Vec<_> = batch
                .par_iter()
                .zip(&signs)
                .map(|(&i, s)| graph_loss(&model, &ds.graphs[i], ds.task, s.as_deref()))
                .collect();
            for r in losses {
                let (loss, grads) = r?;
                epoch_loss += loss;
                for (k, g) in grads {
                    match sum.get_mut(&k) {
                        Some(acc) => *acc = acc.zip_map(&g, |a, b| a + b),
                        None => {
                            sum.insert(k, g);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (name, param) in model.params.iter_mut() {
                let g = sum[name].map(|x| x * scale);
                let state = states.entry(name.clone()).or_insert_with(|| AdamState::new(param.len()));
                adam.step(param, &g, state);
            }
        }
        let val = accuracy(&model, ds, &ds.split.val)?;
        log::info!("{} epoch {epoch}: loss {:.4}, val {val:.2}", model.arch(), epoch_loss / order.len() as f64);
        epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / order.len().max(1) as f64,
            val_accuracy: val,
        });
        if val > best.0 {
            best = (val, epoch, model.params.clone());
        }
    }
    model.params = best.2;
    let log = TrainLog {
        arch: model.arch().name().to_string(),
        parameters: model.params.count(),
        epochs,
        best_epoch: best.1,
        val_accuracy: best.0,
        test_accuracy: accuracy(&model, ds, &ds.split.test)?,
    };
    Ok((model, log))
}
