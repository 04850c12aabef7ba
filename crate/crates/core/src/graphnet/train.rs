use std::fmt::Write as _;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{backward, ce_loss, forward, GlobalInput, GraphResNet, InputNorm, NetShape, Targets};
use super::{classify_gc, GraphTopology};
use crate::error::{Error, Result};
use crate::mesh::RegionRanges;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the summed per-vertex cross-entropy.
    pub eta1: f64,
    /// Weight of the global cross-entropy.
    pub eta2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: usize,
    pub layers: usize,
    pub global_input: GlobalInput,
    /// Standardise input columns with training-set statistics.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta1: 0.1,
            eta2: 0.1,
            learning_rate: 5e-5,
            momentum: 0.9,
            epochs: 40,
            batch_size: 16,
            seed: 0,
            hidden: 64,
            layers: 6,
            global_input: GlobalInput::Final,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 >= 0.0 && self.eta2 >= 0.0) {
            return Err(Error::InvalidArgument("eta1 and eta2 must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn shape(
        &self,
        input_width: usize,
        k_vertex: usize,
        k_global: usize,
        nodes: usize,
        regions: RegionRanges,
    ) -> NetShape {
        NetShape {
            input_width,
            hidden: self.hidden,
            layers: self.layers,
            k_vertex,
            k_global,
            nodes,
            regions,
            global_input: self.global_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: Array2<f64>,
    pub targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub net: GraphResNet,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were returned, when validation was used.
    pub best_epoch: Option<usize>,
}

impl TrainResult {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        for e in &self.log {
            let _ = writeln!(out, "{},{:?},{},{}", e.epoch, e.train_loss, opt(e.val_loss), opt(e.val_acc));
        }
        out
    }
}

/// Mean loss and global-head accuracy over `examples`.
fn evaluate(net: &GraphResNet, examples: &[TrainExample], topo: &GraphTopology, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let per_case: Vec<(f64, bool)> = examples
        .par_iter()
        .map(|ex| {
            let f = forward(net, &ex.features, topo)?;
            let l = ce_loss(&f.vertex_probs, &f.global_probs, &ex.targets, cfg.eta1, cfg.eta2)?;
            Ok((l, classify_gc(&f.global_probs) == ex.targets.global + 1))
        })
        .collect::<Result<_>>()?;
    let n = per_case.len() as f64;
    let loss = per_case.iter().map(|c| c.0).sum::<f64>() / n;
    let acc = per_case.iter().filter(|c| c.1).count() as f64 / n;
    Ok((loss, acc))
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::Diverged { epoch },
        other => other,
    }
}

/// Mini-batch gradient descent with momentum. Per-case gradients may be
/// computed in parallel; they are summed in batch order so the result
/// depends only on the seed. With a validation set, the parameters of the
/// epoch with the best validation accuracy (then lowest validation loss)
/// are returned.
pub fn train(
    train_set: &[TrainExample],
    val_set: &[TrainExample],
    shape: NetShape,
    topo: &GraphTopology,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for ex in train_set.iter().chain(val_set) {
        if ex.features.ncols() != shape.input_width {
            return Err(Error::WidthMismatch { expected: shape.input_width, found: ex.features.ncols() });
        }
    }
    let mut net = GraphResNet::init(shape, cfg.seed)?;
    if cfg.standardize {
        let feats: Vec<&Array2<f64>> = train_set.iter().map(|e| &e.features).collect();
        net.norm = InputNorm::fit(&feats)?;
    }
    let mut velocity = net.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, GraphResNet)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, GraphResNet)> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    backward(&net, &ex.features, topo, &ex.targets, cfg.eta1, cfg.eta2)
                })
                .collect::<Result<_>>()
                .map_err(diverged(epoch))?;
            let mut sum = net.zeros_like();
            for (l, g) in &results {
                total += l;
                for ((_, s), (_, gt)) in sum.tensors_mut().into_iter().zip(g.tensors()) {
                    s.iter_mut().zip(gt).for_each(|(a, b)| *a += b);
                }
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for ((v, p), (_, g)) in velocity
                .tensors_mut()
                .into_iter()
                .zip(net.tensors_mut())
                .zip(sum.tensors())
            {
                for ((vi, pi), gi) in v.1.iter_mut().zip(p.1.iter_mut()).zip(g) {
                    *vi = cfg.momentum * *vi - scale * gi;
                    *pi += *vi;
                }
            }
        }
        let train_loss = total / train_set.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        net.check_finite().map_err(diverged(epoch))?;
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&net, val_set, topo, cfg).map_err(diverged(epoch))?;
            let better = best.as_ref().is_none_or(|(ba, bl, _, _)| a > *ba || (a == *ba && l < *bl));
            if better {
                best = Some((a, l, epoch, net.clone()));
            }
            (Some(l), Some(a))
        };
        log::debug!("epoch {epoch}: train_loss {train_loss:.5}");
        log.push(EpochLog { epoch, train_loss, val_loss, val_acc });
    }
    let (net, best_epoch) = match best {
        Some((_, _, e, n)) => (n, Some(e)),
        None => (net, None),
    };
    Ok(TrainResult { net, log, best_epoch })
}
