//! Optimisation loop, cross-validation protocol and evaluation.

pub mod metrics;
pub mod optim;
pub mod split;

use diffcore::random::rng;
use diffcore::{Tape, Tensor};
use rand::seq::SliceRandom;
use rayon::prelude::*;

pub use metrics::Metrics;
pub use optim::{cosine_lr, EarlyStopping, Sgd, StopDecision};
pub use split::{split_and_fold, Split};

use crate::error::{HsdaError, Result};
use crate::kv::{self, Entry};
use crate::loss::{contrastive, cross_entropy, total_loss, Templates, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::model::{predict, ForwardOptions, Network, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub k_folds: usize,
    pub test_fraction: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub contrastive: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            lr_min: 0.0,
            momentum: 0.9,
            weight_decay: 0.05,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            k_folds: 4,
            test_fraction: 0.2,
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            contrastive: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HsdaError::Config(m.to_string()));
        if self.lr0.is_nan() || self.lr0 <= 0.0 || self.lr_min < 0.0 || self.lr_min > self.lr0 {
            return bad("need lr0 > 0 and 0 <= lr_min <= lr0");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must be in [0, 1) and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be positive");
        }
        if self.patience > self.max_epochs {
            return bad("patience exceeds max_epochs");
        }
        if self.k_folds < 2 {
            return bad("k_folds must be at least 2");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad("test_fraction must be in (0, 1)");
        }
        if self.lambda < 0.0 || !(0.0..=1.0).contains(&self.alpha) {
            return bad("lambda must be non-negative and alpha in [0, 1]");
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr0", self.lr0.to_string()),
            ("lr_min", self.lr_min.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("k_folds", self.k_folds.to_string()),
            ("test_fraction", self.test_fraction.to_string()),
            ("lambda", self.lambda.to_string()),
            ("alpha", self.alpha.to_string()),
            ("contrastive", self.contrastive.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn apply(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "lr0" => self.lr0 = kv::value(e)?,
            "lr_min" => self.lr_min = kv::value(e)?,
            "momentum" => self.momentum = kv::value(e)?,
            "weight_decay" => self.weight_decay = kv::value(e)?,
            "batch_size" => self.batch_size = kv::value(e)?,
            "max_epochs" => self.max_epochs = kv::value(e)?,
            "patience" => self.patience = kv::value(e)?,
            "k_folds" => self.k_folds = kv::value(e)?,
            "test_fraction" => self.test_fraction = kv::value(e)?,
            "lambda" => self.lambda = kv::value(e)?,
            "alpha" => self.alpha = kv::value(e)?,
            "contrastive" => self.contrastive = kv::value(e)?,
            "seed" => self.seed = kv::value(e)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One model input pair with its label (1 = AD).
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub label: usize,
    pub image: Tensor<f32>,
    pub signal: Tensor<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_acc\n");
    for h in history {
        out.push_str(&format!("{},{:.8},{:.8},{:.6}\n", h.epoch, h.lr, h.train_loss, h.val_acc));
    }
    out
}

/// Trainable state of one run.
#[derive(Clone, Debug)]
pub struct Trained {
    pub params: ParamStore<f32>,
    pub templates: Templates,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub best: Trained,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub val_metrics: Metrics,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Forward, loss, backward and update for one batch. Returns the loss.
pub fn train_step(
    net: &Network,
    state: &mut Trained,
    sgd: &mut Sgd,
    batch: &[&Sample],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<f64> {
    let mut t = Tape::<f32>::new();
    let p = state.params.bind(&mut t);
    let mut logits = Vec::with_capacity(batch.len());
    let mut feats = Vec::with_capacity(batch.len());
    for s in batch {
        let img = t.constant(s.image.clone());
        let sig = t.constant(s.signal.clone());
        let out = net.forward(&mut t, &p, img, sig, ForwardOptions::default())?;
        logits.push(out.logits);
        feats.push(out.feature);
    }
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let all = t.concat(&logits, 0)?;
    let probs = t.softmax_rows(all)?;
    let ce = cross_entropy(&mut t, probs, &labels)?;
    let ctr = if cfg.contrastive {
        Some(contrastive(&mut t, &feats, &labels, &state.templates)?)
    } else {
        None
    };
    let loss = total_loss(&mut t, ce, ctr, cfg.lambda)?;
    let value = t.value(loss).item() as f64;
    if !value.is_finite() {
        return Err(HsdaError::NonFinite { what: "loss".into() });
    }
    let feat_values: Vec<Vec<f64>> = feats.iter().map(|&f| t.value(f).to_f64_vec()).collect();
    let mut grads = t.backward(loss)?;
    let g: Vec<Option<Tensor<f32>>> = p.iter().map(|&v| grads.take(v)).collect();
    sgd.step(&mut state.params, &g, lr)?;
    if cfg.contrastive {
        state.templates.update(&feat_values, &labels);
    }
    Ok(value)
}

pub fn predict_labels(net: &Network, params: &ParamStore<f32>, samples: &[&Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            let (probs, _) = predict(net, params, &s.image, &s.signal)?;
            let (arg, _) = probs
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            Ok(arg)
        })
        .collect()
}

pub fn evaluate(net: &Network, params: &ParamStore<f32>, samples: &[&Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(HsdaError::Usage("empty evaluation set".into()));
    }
    let pred = predict_labels(net, params, samples)?;
    let truth: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Metrics::from_predictions(&pred, &truth)
}

fn accuracy(net: &Network, params: &ParamStore<f32>, samples: &[&Sample]) -> Result<f64> {
    let pred = predict_labels(net, params, samples)?;
    let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Trains from `init` on `train`, monitoring accuracy on `val`, and keeps
/// the state with the best validation accuracy.
pub fn train_fold(
    net: &Network,
    init: &Trained,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
    fold: usize,
) -> Result<FoldResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(HsdaError::Protocol(format!("fold {fold} has an empty train or validation set")));
    }
    let mut state = init.clone();
    let mut sgd = Sgd::new(&state.params, cfg.momentum, cfg.weight_decay);
    let mut r = rng(cfg.seed, 100 + fold as u64);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut history = Vec::new();
    let mut best = state.clone();
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.lr0, cfg.max_epochs, cfg.lr_min);
        order.shuffle(&mut r);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train[i]).collect();
            let loss = train_step(net, &mut state, &mut sgd, &batch, cfg, lr).map_err(|e| match e {
                HsdaError::NonFinite { what } => HsdaError::NonFinite {
                    what: format!("{what} (fold {fold}, epoch {epoch}, batch {b})"),
                },
                other => other,
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let val_acc = accuracy(net, &state.params, val)?;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            val_acc,
        });
        log::info!(
            "fold {fold} epoch {epoch}: loss {:.4} val_acc {:.3}",
            loss_sum / train.len() as f64,
            val_acc
        );
        match stopper.update(epoch, val_acc) {
            StopDecision::Improved => best = state.clone(),
            StopDecision::Wait => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    let val_metrics = evaluate(net, &best.params, val)?;
    Ok(FoldResult {
        fold,
        best,
        best_epoch: stopper.best_epoch(),
        best_val_acc: stopper.best().unwrap_or(0.0),
        val_metrics,
        history,
        stopped_early,
    })
}

#[derive(Clone, Debug)]
pub struct ProtocolResult {
    pub split: Split,
    pub folds: Vec<FoldResult>,
    /// Index into `folds` of the model with the best validation accuracy.
    pub selected: usize,
    pub test_metrics: Metrics,
}

impl ProtocolResult {
    pub fn selected_fold(&self) -> &FoldResult {
        &self.folds[self.selected]
    }

    /// Mean of the per-fold validation accuracies, in percent.
    pub fn mean_val_accuracy(&self) -> f64 {
        self.folds.iter().map(|f| f.val_metrics.accuracy).sum::<f64>() / self.folds.len() as f64
    }
}

/// Reads `HSDA_THREADS` as a cap on worker threads.
pub fn thread_cap() -> Option<usize> {
    std::env::var("HSDA_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Stratified hold-out plus k-fold training. Folds train in parallel; each
/// fold is sequential and seeded, so results do not depend on scheduling.
pub fn run_protocol(net: &Network, init: &Trained, data: &[Sample], cfg: &TrainConfig) -> Result<ProtocolResult> {
    cfg.validate()?;
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    let split = split_and_fold(&labels, net.cfg.n_classes, cfg.k_folds, cfg.test_fraction, cfg.seed)?;
    let run = || -> Result<Vec<FoldResult>> {
        (0..cfg.k_folds)
            .into_par_iter()
            .map(|f| {
                let train: Vec<&Sample> = split.train_indices(f).into_iter().map(|i| &data[i]).collect();
                let val: Vec<&Sample> = split.folds[f].iter().map(|&i| &data[i]).collect();
                train_fold(net, init, &train, &val, cfg, f)
            })
            .collect()
    };
    let folds = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HsdaError::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let selected = folds
        .iter()
        .enumerate()
        .fold(0, |best, (i, f)| if f.best_val_acc > folds[best].best_val_acc { i } else { best });
    let test: Vec<&Sample> = split.test.iter().map(|&i| &data[i]).collect();
    let test_metrics = evaluate(net, &folds[selected].best.params, &test)?;
    Ok(ProtocolResult {
        split,
        folds,
        selected,
        test_metrics,
    })
}
