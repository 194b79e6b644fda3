use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::evaluate::{evaluate, Evaluation};
use crate::baggraph::BagGraph;
use crate::dataio::{Bag, Splits};
use crate::diffcore::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, LossConfig, SaMode};
use crate::milmodel::{forward_on_tape, ModelConfig, ModelParams, ParamVars, Pooling};

/// Quantity watched by early stopping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    /// Validation objective, minimized.
    #[default]
    ValLoss,
    /// Validation bag-level AUC, maximized.
    ValAuc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Bags per optimizer step.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; at least 1.
    pub patience: usize,
    pub early_stop: EarlyStopMetric,
    /// Bag decision threshold on the predicted probability.
    pub threshold: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 4,
            max_epochs: 200,
            patience: 8,
            early_stop: EarlyStopMetric::ValLoss,
            threshold: 0.5,
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must lie in (0, 1)"));
        }
        self.loss.validate().map_err(|e| prefix_field(e, "loss"))?;
        self.model
            .validate()
            .map_err(|e| prefix_field(e, "model"))?;
        Ok(())
    }

    /// Display name of the configured method.
    pub fn method_tag(&self) -> String {
        match self.model.pooling {
            Pooling::Max => "MIL + Max agg.".into(),
            Pooling::Mean => "MIL + Mean agg.".into(),
            Pooling::Attention if !self.loss.uses_sa() => "Att-MIL baseline".into(),
            Pooling::Attention => format!("SA-DMIL-{}", self.loss.sa_mode.name()),
        }
    }
}

fn prefix_field(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { field, reason } => Error::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub config: TrainConfig,
    /// Objectives before the first update.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; 0 means the initial parameters.
    pub best_epoch: usize,
    pub stopping_epoch: usize,
    /// Training objective of the returned parameters.
    pub final_train_loss: f64,
    pub test: Option<Evaluation>,
    /// Wall-clock seconds. Not serialized, so reports stay reproducible.
    #[serde(skip)]
    pub duration_secs: f64,
}

/// Splits the mini-batch order for one epoch and owns the cached graphs.
struct Fixture<'a> {
    bags: &'a [Bag],
    graphs: Vec<BagGraph>,
}

impl<'a> Fixture<'a> {
    fn new(bags: &'a [Bag], needs_graphs: bool) -> Result<Self> {
        let graphs = if needs_graphs {
            bags.iter()
                .map(|b| BagGraph::chain(b.len()))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Fixture { bags, graphs })
    }

    /// Records the batch objective on `tape`; returns the root and param vars.
    fn record(
        &self,
        tape: &mut Tape,
        params: &ModelParams,
        idx: &[usize],
        cfg: &TrainConfig,
    ) -> Result<(crate::diffcore::Var, ParamVars)> {
        let vars = ParamVars::register(tape, params);
        let mut probs = Vec::with_capacity(idx.len());
        let mut fs = Vec::with_capacity(idx.len());
        let mut labels = Vec::with_capacity(idx.len());
        let mut graphs = Vec::new();
        for &i in idx {
            let nodes = forward_on_tape(tape, &vars, &self.bags[i], &cfg.model)?;
            probs.push(nodes.prob);
            labels.push(self.bags[i].bag_label);
            if let Some(f) = nodes.f {
                fs.push(f);
            }
            if cfg.loss.uses_sa() {
                graphs.push(&self.graphs[i]);
            }
        }
        let root = batch_loss(tape, &probs, &labels, &fs, &graphs, &cfg.loss)?;
        Ok((root, vars))
    }

    /// Objective over every bag, with the configured reduction.
    fn objective(&self, params: &ModelParams, cfg: &TrainConfig) -> Result<f64> {
        let mut sum_cfg = cfg.clone();
        sum_cfg.loss.reduction = crate::losses::Reduction::Sum;
        let mut total = 0.0;
        for i in 0..self.bags.len() {
            let mut tape = Tape::new();
            let (root, _) = self.record(&mut tape, params, &[i], &sum_cfg)?;
            total += tape.scalar(root)?;
        }
        Ok(match cfg.loss.reduction {
            crate::losses::Reduction::Sum => total,
            crate::losses::Reduction::Mean => total / self.bags.len() as f64,
        })
    }
}

/// Mixes a run seed with a stream id (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn val_auc(bags: &[Bag], params: &ModelParams, cfg: &TrainConfig) -> Result<Option<f64>> {
    if cfg.early_stop != EarlyStopMetric::ValAuc {
        return Ok(None);
    }
    let eval = evaluate(bags, params, &cfg.model, cfg.threshold)?;
    eval.scan.auc.map(Some).ok_or_else(|| {
        Error::config(
            "early_stop",
            "validation AUC needs both classes in the validation split",
        )
    })
}

/// Trains with Adam on seeded shuffled mini-batches, keeping the parameters
/// of the best validation epoch and stopping after `patience` epochs without
/// improvement.
pub fn train(splits: &Splits, cfg: &TrainConfig) -> Result<(ModelParams, RunReport)> {
    let started = Instant::now();
    cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::config("split", "training split is empty"));
    }
    if splits.val.is_empty() {
        return Err(Error::config("split", "validation split is empty"));
    }
    if cfg.loss.uses_sa() && cfg.model.pooling != Pooling::Attention {
        return Err(Error::config(
            "loss.sa_mode",
            "smoothness losses need attention pooling",
        ));
    }

    let needs_graphs = cfg.loss.uses_sa() && cfg.loss.sa_mode != SaMode::None;
    let train_set = Fixture::new(&splits.train, needs_graphs)?;
    let val_set = Fixture::new(&splits.val, needs_graphs)?;

    let mut params = ModelParams::init(&cfg.model, derive_seed(cfg.seed, 0))?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut adam = AdamState::new(params.tensors());

    let initial_train_loss = train_set.objective(&params, cfg)?;
    let initial_val_loss = val_set.objective(&params, cfg)?;
    let score = |loss: f64, auc: Option<f64>| auc.unwrap_or(-loss);
    let mut best_score = score(initial_val_loss, val_auc(&splits.val, &params, cfg)?);
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let (root, vars) = train_set.record(&mut tape, &params, idx, cfg)?;
            let loss = tape.scalar(root)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss {loss} at epoch {epoch}, batch {batch}"
                )));
            }
            let grads = tape.backward(root)?;
            let grad_refs: Vec<&Tensor> = vars
                .leaves()
                .into_iter()
                .map(|v| grads.get(v).expect("parameters are leaves"))
                .collect();
            if let Some(bad) = grad_refs.iter().position(|g| !g.all_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {bad} at epoch {epoch}, batch {batch}"
                )));
            }
            adam_step(
                &mut params.tensors_mut(),
                &grad_refs,
                &mut adam,
                cfg.learning_rate,
            )?;
        }

        let train_loss = train_set.objective(&params, cfg)?;
        let val_loss = val_set.objective(&params, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "validation loss at epoch {epoch}"
            )));
        }
        let auc = val_auc(&splits.val, &params, cfg)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auc: auc,
        });
        let s = score(val_loss, auc);
        if s > best_score {
            best_score = s;
            best_params = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let stopping_epoch = epochs.last().map_or(0, |e| e.epoch);
    let final_train_loss = train_set.objective(&best_params, cfg)?;
    let test = if splits.test.is_empty() {
        None
    } else {
        Some(evaluate(
            &splits.test,
            &best_params,
            &cfg.model,
            cfg.threshold,
        )?)
    };
    let report = RunReport {
        method: cfg.method_tag(),
        config: cfg.clone(),
        initial_train_loss,
        initial_val_loss,
        epochs,
        best_epoch,
        stopping_epoch,
        final_train_loss,
        test,
        duration_secs: started.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}
