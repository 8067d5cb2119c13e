//! Optimizers and full-batch training of the classifier on the clean train split.

use alloc::{format, string::String, vec, vec::Vec};

use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::graph::{Graph, NodeSet};
use crate::matrix::DenseMatrix;
use crate::nn::layers::{log_softmax_nll, nll_logit_grad, Mode};
use crate::nn::model::{Arch, DnnModel, Dropout, Propagation, Tap};
use crate::random::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub dropout_p: f64,
    pub hidden_dim: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            dropout_p: 0.5,
            hidden_dim: 64,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Argument(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Argument("hidden_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

fn check_grads(names: &[String], params: &[&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    if params.len() != grads.len() || names.len() != params.len() {
        return Err(Error::Dimension {
            op: "optimizer_step",
            detail: format!("{} parameters, {} gradients", params.len(), grads.len()),
        });
    }
    for ((name, p), g) in names.iter().zip(params).zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Dimension {
                op: "optimizer_step",
                detail: format!("{name}: {} values, {} gradients", p.len(), g.len()),
            });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update; nothing is modified if any gradient is
/// non-finite.
pub fn adam_step(
    names: &[String],
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    check_grads(names, params, grads)?;
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

pub fn sgd_step(names: &[String], params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
    check_grads(names, params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.iter_mut().zip(g.iter()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DnnModel,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

/// Full-batch training of φ; keeps the epoch with the best validation
/// accuracy (ties keep the earlier epoch).
pub fn train_dnn(g: &Graph, arch: Arch, cfg: &TrainConfig, embeddings: Option<&DenseMatrix>) -> Result<DnnModel> {
    Ok(train_dnn_with_history(g, arch, cfg, embeddings)?.model)
}

pub fn train_dnn_with_history(
    g: &Graph,
    arch: Arch,
    cfg: &TrainConfig,
    embeddings: Option<&DenseMatrix>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train = &g.split().train;
    if train.is_empty() {
        return Err(Error::Argument("train mask is empty".into()));
    }
    let mut input_dim = g.feature_dim();
    if arch == Arch::N2v {
        let e = embeddings.ok_or_else(|| Error::Argument("N2V training needs node2vec embeddings".into()))?;
        if e.rows() != g.num_nodes() {
            return Err(Error::Dimension {
                op: "train_dnn",
                detail: format!("{} embedding rows for {} nodes", e.rows(), g.num_nodes()),
            });
        }
        input_dim += e.cols();
    }
    let mut model = DnnModel::init(arch, input_dim, cfg.hidden_dim, g.num_classes(), cfg.clone());
    if arch == Arch::N2v {
        model.embeddings = embeddings.cloned();
    }
    let z0_full = model.input_features(g)?;

    // Feature-only models train on the train rows alone; graph models need
    // every node for message passing and mask the loss instead.
    let (train_prop, z0_train, labels_train, loss_mask) = if arch.uses_graph() {
        (Propagation::for_graph(arch, g), z0_full.clone(), g.labels().to_vec(), train.clone())
    } else {
        let rows = train.as_slice();
        let labels = rows.iter().map(|&v| g.labels()[v]).collect();
        (Propagation::Identity, z0_full.select_rows(rows)?, labels, NodeSet::range(0, rows.len()))
    };
    let eval_prop = if arch.uses_graph() { train_prop.clone() } else { Propagation::Identity };
    let val = &g.split().val;

    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[0xd409]));
    let mut adam = AdamState::default();
    let adam_cfg = AdamConfig::with_lr(cfg.learning_rate);
    let mut best: Option<(f64, usize, DnnModel)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let trace = model.forward_from(&train_prop, Tap::Z0, z0_train.clone(), Mode::Train, Dropout::Sample(&mut rng))?;
        let (loss, _) = log_softmax_nll(&trace.taps[3], &labels_train, &loss_mask)?;
        let dlogits = nll_logit_grad(&trace.log_probs, &labels_train, &loss_mask);
        let grads = model.backward(&train_prop, &trace, &dlogits)?;
        model.absorb_batch_stats(&trace);
        {
            let grad_views = grads.named_slices();
            let names: Vec<String> = grad_views.iter().map(|(n, _)| n.clone()).collect();
            let gslices: Vec<&[f64]> = grad_views.iter().map(|(_, s)| *s).collect();
            let mut pviews = model.named_params_mut();
            let mut pslices: Vec<&mut [f64]> = pviews.iter_mut().map(|(_, s)| &mut **s).collect();
            match cfg.optimizer {
                OptimizerKind::Adam => adam_step(&names, &mut pslices, &gslices, &mut adam, &adam_cfg)?,
                OptimizerKind::Sgd => sgd_step(&names, &mut pslices, &gslices, cfg.learning_rate)?,
            }
        }

        let val_accuracy = if val.is_empty() {
            None
        } else {
            let t = model.forward_from(&eval_prop, Tap::Z0, z0_full.clone(), Mode::Infer, Dropout::Off)?;
            Some(accuracy(&t.predictions(), g.labels(), val)?)
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss,
            val_accuracy,
        });
        let score = val_accuracy.unwrap_or(f64::NEG_INFINITY);
        let better = match &best {
            None => true,
            Some((b, _, _)) => val_accuracy.is_none() || score > *b,
        };
        if better {
            best = Some((score, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}
