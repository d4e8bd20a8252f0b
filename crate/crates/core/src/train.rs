//! SGD training loop and accuracy / cost evaluation.

use std::fmt::Write as _;

use log::info;

use crate::audio::AugmentConfig;
use crate::autodiff::{AutodiffError, ParamStore, Tape};
use crate::dataset::{Batch, Dataset, DatasetError, Split};
use crate::models::{Family, Model, ModelError, ModelSpec, Solver, Variant};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub decay_steps: Vec<u64>,
    pub decay_factor: f64,
    pub weight_decay: f64,
    pub train_tolerance: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn for_variant(variant: Variant, seed: u64) -> Self {
        let (decay_steps, weight_decay) = match variant.family() {
            Family::Tcnn => (vec![5000, 9000], 1e-3),
            Family::Tdnn => (vec![6000, 10000], 1e-5),
        };
        Self {
            lr0: 0.1,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            decay_steps,
            decay_factor: 0.1,
            weight_decay,
            train_tolerance: 1e-3,
            seed,
            augment: AugmentConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr0 > 0.0 && self.train_tolerance > 0.0 && self.decay_factor > 0.0) {
            return bad("learning rate, tolerance and decay factor must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight decay be non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be at least 1");
        }
        if self.decay_steps.windows(2).any(|w| w[0] >= w[1]) {
            return bad("decay steps must be strictly increasing");
        }
        Ok(())
    }

    /// Stable textual form, hashed into checkpoints.
    pub fn describe(&self) -> String {
        format!(
            "lr0={} momentum={} batch_size={} epochs={} decay_steps={:?} decay_factor={} weight_decay={} \
             train_tolerance={} seed={} augment={:?}",
            self.lr0,
            self.momentum,
            self.batch_size,
            self.epochs,
            self.decay_steps,
            self.decay_factor,
            self.weight_decay,
            self.train_tolerance,
            self.seed,
            self.augment
        )
    }
}

/// Stepped schedule: `lr0 · factor^(number of decay steps ≤ step)`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let passed = cfg.decay_steps.iter().filter(|&&s| s <= step).count();
    cfg.lr0 * cfg.decay_factor.powi(passed as i32)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub val_accuracy: f64,
    pub mean_nfe: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub steps: Vec<(u64, f64)>,
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.steps {
            let _ = writeln!(s, "{step},{loss}");
        }
        s
    }

    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,val_accuracy,mean_nfe\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.val_accuracy, e.mean_nfe);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: u32,
    pub velocity: Vec<Vec<f32>>,
    pub best_validation_accuracy: f64,
    pub log: MetricsLog,
}

impl TrainState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        Self {
            step: 0,
            epoch: 0,
            velocity: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            best_validation_accuracy: 0.0,
            log: MetricsLog::default(),
        }
    }
}

/// Momentum update from the gradients currently stored in `params`:
/// `g' = g + wd·w`, `v ← μv + g'`, `w ← w − lr·v`.
pub fn apply_sgd(params: &mut ParamStore<f32>, velocity: &mut [Vec<f32>], lr: f64, momentum: f64, weight_decay: f64) {
    let (lr, mu, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for (p, v) in params.iter_mut().zip(velocity.iter_mut()) {
        let w = p.value.data_mut();
        for ((wi, &gi), vi) in w.iter_mut().zip(p.grad.data()).zip(v.iter_mut()) {
            let g = gi + wd * *wi;
            *vi = mu * *vi + g;
            *wi -= lr * *vi;
        }
    }
}

/// Loss and NFE of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub nfe: usize,
}

/// Forward in training mode (updating the normalization database),
/// backpropagate the mean cross-entropy and take one SGD step.
pub fn sgd_step(
    model: &mut Model<f32>,
    batch: &Batch,
    state: &mut TrainState,
    cfg: &TrainConfig,
) -> Result<StepOutcome, TrainError> {
    let mut tape = Tape::new();
    let solver = Solver::Adaptive {
        tolerance: cfg.train_tolerance,
    };
    let out = model.forward_train(&mut tape, &batch.samples(), &solver)?;
    let loss = tape.softmax_xent(out.logits, &batch.labels)?;
    let loss_value = tape.value(loss).data()[0] as f64;
    if !loss_value.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: state.step });
    }
    model.net.params.zero_grads();
    tape.backward(loss, &mut model.net.params)?;
    let lr = lr_at(state.step, cfg);
    apply_sgd(&mut model.net.params, &mut state.velocity, lr, cfg.momentum, cfg.weight_decay);
    if model.net.params.iter().any(|p| !p.value.all_finite()) {
        return Err(TrainError::NonFiniteLoss { step: state.step });
    }
    state.log.steps.push((state.step, loss_value));
    state.step += 1;
    Ok(StepOutcome {
        loss: loss_value,
        nfe: out.nfe,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub state: TrainState,
}

/// Full training run. Each epoch resets the normalization database, makes
/// one shuffled, augmented pass over the training split and measures
/// validation accuracy at the variant's inference tolerance. The final
/// epoch's weights and database are returned.
pub fn train(spec: ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut model = Model::build(spec, cfg.seed);
    let mut state = TrainState::new(&model.net.params);
    let has_val = data.split_len(Split::Validation) > 0;
    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        model.db.epoch_reset();
        let batches = data.batches(Split::Train, cfg.batch_size, true, cfg.seed, epoch as u64, Some(&cfg.augment))?;
        let n_batches = batches.n_batches();
        let (mut loss_sum, mut nfe_sum) = (0.0, 0usize);
        for batch in batches {
            let o = sgd_step(&mut model, &batch?, &mut state, cfg)?;
            loss_sum += o.loss;
            nfe_sum += o.nfe;
        }
        let (val_accuracy, mean_nfe) = if has_val {
            let r = evaluate(&model, data, Split::Validation, model.spec().infer_tolerance, cfg.batch_size, BnMode::Lbn)?;
            (r.accuracy, r.mean_nfe)
        } else {
            (f64::NAN, f64::NAN)
        };
        if val_accuracy > state.best_validation_accuracy {
            state.best_validation_accuracy = val_accuracy;
        }
        state.log.epochs.push(EpochMetrics {
            epoch,
            val_accuracy,
            mean_nfe,
        });
        info!(
            "epoch {epoch}: mean loss {:.4}, train nfe {:.1}, val acc {:.4}, val nfe {:.2}",
            loss_sum / n_batches as f64,
            nfe_sum as f64 / n_batches as f64,
            val_accuracy,
            mean_nfe
        );
    }
    Ok(TrainOutcome { model, state })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Recorded layer-dependent statistics; each sample solved on its own.
    Lbn,
    /// Statistics of the evaluation batch; the batch is solved jointly.
    Naive,
}

impl std::str::FromStr for BnMode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lbn" => Ok(BnMode::Lbn),
            "naive" => Ok(BnMode::Naive),
            _ => Err(TrainError::Config(format!("unknown normalization mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub mean_nfe: f64,
    pub total_mults: u64,
    /// Predicted class per sample, in split order.
    pub predictions: Vec<usize>,
    /// Logits per sample, in split order.
    pub logits: Vec<Vec<f32>>,
}

/// Top-1 accuracy, mean NFE per sample and the multiply count at that NFE.
pub fn evaluate(
    model: &Model<f32>,
    data: &Dataset,
    split: Split,
    tolerance: f64,
    batch_size: usize,
    mode: BnMode,
) -> Result<EvalResult, TrainError> {
    let (mut correct, mut total, mut nfe_sum) = (0usize, 0usize, 0usize);
    let mut predictions = Vec::new();
    let mut logits = Vec::new();
    for batch in data.batches(split, batch_size, false, 0, 0, None)? {
        let batch = batch?;
        let preds = match mode {
            BnMode::Lbn => model.infer_batch(&batch.samples(), tolerance)?,
            BnMode::Naive => model.infer_naive(&batch.samples(), tolerance)?,
        };
        for (p, &label) in preds.into_iter().zip(&batch.labels) {
            let class = p.argmax();
            correct += usize::from(class == label);
            total += 1;
            nfe_sum += p.nfe;
            predictions.push(class);
            logits.push(p.logits);
        }
    }
    let mean_nfe = nfe_sum as f64 / total as f64;
    Ok(EvalResult {
        accuracy: correct as f64 / total as f64,
        correct,
        total,
        mean_nfe,
        total_mults: model.spec().cost().total_mults_at(mean_nfe),
        predictions,
        logits,
    })
}
