//! Training machinery: focal loss, Adam, halve-on-plateau learning-rate
//! scheduling, and the epoch loop.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{BatchOptions, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{Model, NUM_CLASSES};
use crate::ops::softmax;
use crate::tensor::{Element, Tensor};

/// Focal loss settings. With `gamma = 0` and unit weights the loss reduces to
/// standard cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalLossConfig {
    /// Focusing exponent γ ≥ 0 (default 2).
    pub gamma: f64,
    /// Optional per-class α weights; length must equal the class count.
    pub class_weights: Option<Vec<f64>>,
}

impl Default for FocalLossConfig {
    fn default() -> Self {
        FocalLossConfig {
            gamma: 2.0,
            class_weights: None,
        }
    }
}

impl FocalLossConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.gamma < 0.0 {
            return Err(Error::contract(format!("focal gamma must be >= 0, got {}", self.gamma)));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != num_classes {
                return Err(Error::contract(format!(
                    "class_weights has length {}, expected {num_classes}",
                    w.len()
                )));
            }
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::contract("class weights must be positive".to_string()));
            }
        }
        Ok(())
    }
}

/// Probability floor applied before the logarithm so confident mistakes keep
/// the loss finite.
const PROB_FLOOR: f64 = 1e-12;

/// Mean focal loss over the batch and its analytic gradient w.r.t. the logits.
///
/// Per sample: `−w(y)·(1−p_y)^γ·log(p_y)` with `p = softmax(logits)` and `p_y`
/// clamped to ≥ 1e−12 before the log. The mean runs in batch index order.
pub fn focal_loss<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
    cfg: &FocalLossConfig,
) -> Result<(T, Tensor<T>)> {
    let (loss, grad, _) = focal_loss_detailed(logits, labels, cfg)?;
    Ok((loss, grad))
}

/// Like [`focal_loss`] but also returns the per-sample losses (used for exact
/// sample-weighted epoch means).
pub fn focal_loss_detailed<T: Element>(
    logits: &Tensor<T>,
    labels: &[usize],
    cfg: &FocalLossConfig,
) -> Result<(T, Tensor<T>, Vec<T>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::contract(format!(
            "got {} labels for a batch of {n}",
            labels.len()
        )));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::contract(format!(
                "label {y} out of range [0,{k}) at sample {i}"
            )));
        }
    }
    cfg.validate(k)?;

    let probs = softmax(logits)?;
    let p = probs.data();
    let gamma = T::from_f64(cfg.gamma);
    let floor = T::from_f64(PROB_FLOOR);
    let inv_n = T::from_f64(1.0 / n as f64);

    let mut grad = Tensor::zeros(&[n, k]);
    let g = grad.data_mut();
    let mut per_sample = Vec::with_capacity(n);
    let mut total = T::zero();

    for (i, &y) in labels.iter().enumerate() {
        let w = match &cfg.class_weights {
            Some(ws) => T::from_f64(ws[y]),
            None => T::one(),
        };
        let p_y = p[i * k + y];
        let p_clamped = if p_y < floor { floor } else { p_y };
        let log_p = p_clamped.ln();
        let u = T::one() - p_y; // (1 − p_t)

        let focal_factor = u.powf(gamma); // u^γ; powf(·, 0) == 1 exactly
        let sample_loss = -(w * focal_factor * log_p);
        per_sample.push(sample_loss);
        total = total + sample_loss;

        // d(sample)/dz_j = w·(γ·u^{γ−1}·p_y·log p − u^γ)·(δ_{jy} − p_j).
        // The first term vanishes for γ = 0 and in the saturated u = 0 limit.
        let term1 = if cfg.gamma == 0.0 || u <= T::zero() {
            T::zero()
        } else {
            gamma * u.powf(gamma - T::one()) * p_y * log_p
        };
        let factor = w * (term1 - focal_factor);
        for j in 0..k {
            let delta = if j == y { T::one() } else { T::zero() };
            g[i * k + j] = factor * (delta - p[i * k + j]) * inv_n;
        }
    }

    Ok((total * inv_n, grad, per_sample))
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
/// Moment shapes mirror their parameters exactly; `t` increases by one per
/// update.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element> {
    pub t: u64,
    pub moments: Vec<(String, Tensor<T>, Tensor<T>)>,
}

impl<T: Element> AdamState<T> {
    pub fn for_model(model: &Model<T>) -> Self {
        AdamState {
            t: 0,
            moments: model
                .named_params()
                .into_iter()
                .map(|(name, tensor)| {
                    (
                        name,
                        Tensor::zeros(tensor.shape()),
                        Tensor::zeros(tensor.shape()),
                    )
                })
                .collect(),
        }
    }
}

/// One Adam update over aligned (parameter, gradient) pairs:
/// `m ← β1·m + (1−β1)g`, `v ← β2·v + (1−β2)g²`, bias-corrected, then
/// `θ ← θ − lr·m̂/(√v̂ + eps)` elementwise in fixed order.
/// A non-finite gradient refuses the whole step, naming the parameter.
pub fn adam_step<T: Element>(
    params: &mut [(String, &mut Tensor<T>)],
    grads: &HashMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, param) in params.iter() {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::contract(format!("no gradient for parameter '{name}'")))?;
        if grad.shape() != param.shape() {
            return Err(Error::contract(format!(
                "gradient shape {:?} does not match parameter '{name}' {:?}",
                grad.shape(),
                param.shape()
            )));
        }
        if !grad.is_finite() {
            return Err(Error::non_finite(format!(
                "gradient of parameter '{name}' is not finite; step refused"
            )));
        }
    }

    state.t += 1;
    let t = state.t;
    let beta1 = T::from_f64(cfg.beta1);
    let beta2 = T::from_f64(cfg.beta2);
    let one = T::one();
    let bias1 = T::from_f64(1.0 - cfg.beta1.powi(t as i32));
    let bias2 = T::from_f64(1.0 - cfg.beta2.powi(t as i32));
    let lr = T::from_f64(cfg.lr);
    let eps = T::from_f64(cfg.eps);

    for (name, param) in params.iter_mut() {
        let grad = &grads[name.as_str()];
        let (mname, m, v) = state
            .moments
            .iter_mut()
            .find(|(n, _, _)| n == name)
            .ok_or_else(|| Error::contract(format!("no optimizer state for '{name}'")))?;
        debug_assert_eq!(mname, name);
        let pd = param.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        let gd = grad.data();
        for i in 0..pd.len() {
            let g = gd[i];
            md[i] = beta1 * md[i] + (one - beta1) * g;
            vd[i] = beta2 * vd[i] + (one - beta2) * g * g;
            let m_hat = md[i] / bias1;
            let v_hat = vd[i] / bias2;
            pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Halve-on-plateau learning-rate schedule.
///
/// An epoch improves when its metric drops below `best − min_delta` (lower is
/// better). After `patience` consecutive non-improving epochs the rate halves
/// (never below `min_lr`) and the stall counter resets. The rate never
/// increases.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub best: Option<f64>,
    pub stalled: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

/// Fixed halving factor; "halved each time it reached a plateau".
pub const PLATEAU_FACTOR: f64 = 0.5;

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: usize, min_delta: f64, min_lr: f64) -> Self {
        PlateauScheduler {
            lr: initial_lr,
            best: None,
            stalled: 0,
            patience,
            min_delta,
            min_lr,
        }
    }

    /// Feeds one epoch's monitored metric; returns the learning rate to use
    /// from now on.
    pub fn step(&mut self, metric: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => metric < best - self.min_delta,
        };
        if improved {
            self.best = Some(metric);
            self.stalled = 0;
        } else {
            self.stalled += 1;
            if self.stalled >= self.patience {
                self.lr = (self.lr * PLATEAU_FACTOR).max(self.min_lr);
                self.stalled = 0;
            }
        }
        self.lr
    }
}

/// Everything a training run needs besides the model and data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub focal: FocalLossConfig,
    pub adam: AdamConfig,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
    /// Write a checkpoint every this many epochs.
    pub checkpoint_cadence: usize,
    /// Random horizontal flip augmentation during training.
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            seed: 42,
            focal: FocalLossConfig::default(),
            adam: AdamConfig::default(),
            patience: 3,
            min_delta: 1e-4,
            min_lr: 1e-6,
            checkpoint_cadence: 1,
            hflip: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.checkpoint_cadence == 0 {
            return Err(Error::contract(
                "epochs, batch_size, and checkpoint_cadence must be positive".to_string(),
            ));
        }
        self.focal.validate(NUM_CLASSES)?;
        Ok(())
    }
}

/// Mean loss and accuracy over one training epoch (exact means over samples).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// One pass over the training set: forward, backward, Adam per batch, batch
/// order fixed by the (seed, epoch) shuffle. Aborts on a non-finite loss,
/// reporting the batch index and current learning rate.
pub fn train_epoch(
    model: &mut Model<f32>,
    manifest: &DatasetManifest,
    batch_opts: &BatchOptions,
    cfg: &TrainConfig,
    optim: &mut AdamState<f32>,
    lr: f64,
    epoch: usize,
) -> Result<EpochSummary> {
    cfg.validate()?;
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let mut seen = 0usize;

    let adam_cfg = AdamConfig { lr, ..cfg.adam };
    for (batch_index, batch) in manifest
        .batches_shuffled(batch_opts, cfg.batch_size, cfg.seed, epoch as u64)?
        .enumerate()
    {
        let batch = batch?;
        let (tape, logits_node) = model.forward_taped(&batch.images)?;
        let logits = tape.value(logits_node);
        let (loss, grad_logits, per_sample) =
            focal_loss_detailed(logits, &batch.labels, &cfg.focal)?;
        if !loss.is_finite() {
            return Err(Error::non_finite(format!(
                "training loss diverged at epoch {epoch}, batch {batch_index} (lr {lr})"
            )));
        }
        for &l in &per_sample {
            loss_sum += l as f64;
        }
        for (row, &label) in batch.labels.iter().enumerate() {
            if argmax_row(logits, row) == label {
                correct += 1;
            }
        }
        seen += batch.labels.len();

        let grads = tape.backward_from(logits_node, grad_logits)?.into_map();
        let mut params = model.named_params_mut();
        adam_step(&mut params, &grads, optim, &adam_cfg)?;
    }

    if seen == 0 {
        return Err(Error::data("training epoch saw no samples".to_string()));
    }
    Ok(EpochSummary {
        mean_loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

pub(crate) fn argmax_row<T: Element>(logits: &Tensor<T>, row: usize) -> usize {
    let k = logits.shape()[1];
    let data = &logits.data()[row * k..(row + 1) * k];
    let mut best = 0usize;
    for (j, &v) in data.iter().enumerate() {
        if v > data[best] {
            best = j;
        }
    }
    best
}

/// One history row per epoch; `lr` is the post-scheduler value for the epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_bal_acc: f64,
    pub val_mean_auc: f64,
    pub val_f1_macro: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str =
    "epoch,train_loss,train_acc,val_loss,val_bal_acc,val_mean_auc,val_f1_macro,lr";

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_acc,
                r.val_loss,
                r.val_bal_acc,
                r.val_mean_auc,
                r.val_f1_macro,
                r.lr
            ));
        }
        out
    }
}

/// Resumable training state between epochs.
#[derive(Clone, Debug)]
pub struct FitState {
    pub optim: AdamState<f32>,
    pub scheduler: PlateauScheduler,
    /// 1-based index of the next epoch to run.
    pub next_epoch: usize,
    /// Best validation loss seen so far (strict `<`), for best-checkpointing.
    pub best_val_loss: Option<f64>,
}

impl FitState {
    pub fn fresh(model: &Model<f32>, cfg: &TrainConfig) -> Self {
        FitState {
            optim: AdamState::for_model(model),
            scheduler: PlateauScheduler::new(cfg.adam.lr, cfg.patience, cfg.min_delta, cfg.min_lr),
            next_epoch: 1,
            best_val_loss: None,
        }
    }
}

/// Where `fit` should write checkpoints, or nowhere for in-memory runs.
pub struct FitSink<'a> {
    pub out_dir: Option<&'a Path>,
}

/// Full training loop: per epoch trains, evaluates on the validation set,
/// feeds the scheduler with the validation loss, and (when an output
/// directory is given) writes cadence checkpoints, tracks the best-by-val-loss
/// checkpoint, and persists the history CSV.
pub fn fit(
    model: &mut Model<f32>,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    batch_opts: &BatchOptions,
    cfg: &TrainConfig,
    state: &mut FitState,
    sink: &FitSink,
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("refusing to train on an empty dataset".to_string()));
    }
    let eval_opts = BatchOptions {
        hflip: false,
        ..batch_opts.clone()
    };
    let mut history = History::default();

    let ckpt_root = sink.out_dir.map(|d| d.join("checkpoints"));
    if let Some(root) = &ckpt_root {
        std::fs::create_dir_all(root)?;
    }

    let start = state.next_epoch;
    for epoch in start..=cfg.epochs {
        let lr = state.scheduler.lr;
        let summary = train_epoch(model, train_set, batch_opts, cfg, &mut state.optim, lr, epoch)?;

        let (report, val_loss) =
            evaluate_with_loss(model, val_set, &eval_opts, cfg.batch_size, &cfg.focal)?;
        if !val_loss.is_finite() {
            return Err(Error::non_finite(format!(
                "validation loss diverged at epoch {epoch}"
            )));
        }
        let lr_after = state.scheduler.step(val_loss);

        history.rows.push(HistoryRow {
            epoch,
            train_loss: summary.mean_loss,
            train_acc: summary.accuracy,
            val_loss,
            val_bal_acc: report.balanced_accuracy,
            val_mean_auc: report.mean_auc,
            val_f1_macro: report.macro_f1,
            lr: lr_after,
        });

        let improved = state.best_val_loss.is_none_or(|best| val_loss < best);
        if improved {
            state.best_val_loss = Some(val_loss);
        }
        if let Some(root) = &ckpt_root {
            let mut saved_path = None;
            if epoch % cfg.checkpoint_cadence == 0 {
                let dir = root.join(format!("epoch_{epoch:04}"));
                crate::checkpoint::save(
                    &dir,
                    model,
                    &state.optim,
                    &state.scheduler,
                    epoch,
                    state.best_val_loss,
                )?;
                saved_path = Some(dir);
            }
            if improved {
                // Reuse the cadence checkpoint when this epoch already wrote
                // one; otherwise materialize a dedicated best/ directory.
                let best_dir = match &saved_path {
                    Some(dir) => dir.clone(),
                    None => {
                        let dir = root.join("best");
                        crate::checkpoint::save(
                            &dir,
                            model,
                            &state.optim,
                            &state.scheduler,
                            epoch,
                            state.best_val_loss,
                        )?;
                        dir
                    }
                };
                let marker = format!(
                    "epoch={epoch}\nval_loss={val_loss}\npath={}\n",
                    best_dir.strip_prefix(root).unwrap_or(&best_dir).display()
                );
                crate::data::write_atomic(&root.join("best.txt"), marker.as_bytes())?;
            }
        }

        if let Some(out) = sink.out_dir {
            crate::data::write_atomic(&out.join("history.csv"), history.to_csv().as_bytes())?;
        }
        state.next_epoch = epoch + 1;
    }
    Ok(history)
}

/// Single evaluation pass that yields both the metrics report and the mean
/// focal validation loss (exact mean over samples).
pub fn evaluate_with_loss(
    model: &Model<f32>,
    manifest: &DatasetManifest,
    batch_opts: &BatchOptions,
    batch_size: usize,
    focal: &FocalLossConfig,
) -> Result<(MetricsReport, f64)> {
    let mut loss_sum = 0.0f64;
    let mut seen = 0usize;
    let mut preds: Vec<usize> = Vec::new();
    let mut trues: Vec<usize> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();

    for batch in manifest.batches_sequential(batch_opts, batch_size)? {
        let batch = batch?;
        let logits = model.forward(&batch.images)?;
        let (_, _, per_sample) = focal_loss_detailed(&logits, &batch.labels, focal)?;
        for &l in &per_sample {
            loss_sum += l as f64;
        }
        let probs = softmax(&logits)?;
        for (row, &label) in batch.labels.iter().enumerate() {
            preds.push(argmax_row(&logits, row));
            trues.push(label);
            let k = probs.shape()[1];
            scores.extend(probs.data()[row * k..(row + 1) * k].iter().map(|&p| p as f64));
        }
        seen += batch.labels.len();
    }
    if seen == 0 {
        return Err(Error::data("evaluation saw no samples".to_string()));
    }
    let score_tensor = Tensor::new(vec![seen, NUM_CLASSES], scores)?;
    let report = metrics::metrics_report(&preds, &trues, &score_tensor, NUM_CLASSES)?;
    Ok((report, loss_sum / seen as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits_for_prob_half() -> Tensor<f64> {
        // Two equal logits → p = 0.5 for either class.
        Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn saturated_true_class_has_zero_loss() {
        let logits = Tensor::new(vec![1, 3], vec![100.0f64, -100.0, -100.0]).unwrap();
        let (loss, grad) = focal_loss(&logits, &[0], &FocalLossConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-40));
    }

    #[test]
    fn gamma_two_at_half_probability() {
        // −(1−0.5)²·ln(0.5) = 0.25·ln 2 ≈ 0.173287
        let cfg = FocalLossConfig {
            gamma: 2.0,
            class_weights: None,
        };
        let (loss, _) = focal_loss(&logits_for_prob_half(), &[0], &cfg).unwrap();
        assert!((loss - 0.25 * std::f64::consts::LN_2).abs() < 1e-6);
    }

    #[test]
    fn gamma_zero_equals_cross_entropy() {
        let cfg = FocalLossConfig {
            gamma: 0.0,
            class_weights: None,
        };
        let logits =
            Tensor::new(vec![2, 3], vec![1.0f64, -0.5, 0.25, -2.0, 0.0, 3.0]).unwrap();
        let labels = [2usize, 0];
        let (loss, grad) = focal_loss(&logits, &labels, &cfg).unwrap();

        // Independent cross-entropy: −log softmax(z)_y, mean over batch.
        let probs = softmax(&logits).unwrap();
        let mut ce = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            ce -= probs.data()[i * 3 + y].ln();
        }
        ce /= 2.0;
        assert!((loss - ce).abs() < 1e-12);

        // CE gradient: (p − onehot)/N.
        for i in 0..2 {
            for j in 0..3 {
                let delta = if labels[i] == j { 1.0 } else { 0.0 };
                let expect = (probs.data()[i * 3 + j] - delta) / 2.0;
                assert!((grad.data()[i * 3 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_label_names_the_sample() {
        let logits = Tensor::new(vec![2, 3], vec![0.0f64; 6]).unwrap();
        let err = focal_loss(&logits, &[0, 7], &FocalLossConfig::default()).unwrap_err();
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn focal_loss_is_decreasing_in_true_class_probability() {
        // On a grid of p_t values in (0,1), the per-sample loss strictly drops
        // as p_t rises, for several γ.
        for &gamma in &[0.0, 0.5, 1.0, 2.0, 5.0] {
            let mut last = f64::INFINITY;
            for i in 1..40 {
                let p = i as f64 / 40.0;
                // logits chosen so softmax([a,0]) = [p, 1−p]: a = ln(p/(1−p))
                let a = (p / (1.0 - p)).ln();
                let logits = Tensor::new(vec![1, 2], vec![a, 0.0]).unwrap();
                let cfg = FocalLossConfig {
                    gamma,
                    class_weights: None,
                };
                let (loss, _) = focal_loss(&logits, &[0], &cfg).unwrap();
                assert!(
                    loss < last,
                    "loss not decreasing at p={p}, gamma={gamma}"
                );
                last = loss;
            }
        }
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        use crate::gradcheck::{grad_check, GradCheckConfig};
        let cfg = FocalLossConfig {
            gamma: 2.0,
            class_weights: Some(vec![0.5, 2.0, 1.0]),
        };
        let logits =
            Tensor::new(vec![2, 3], vec![0.7f64, -0.3, 0.1, 1.5, -2.0, 0.4]).unwrap();
        let labels = vec![1usize, 2];
        let (_, analytic) = focal_loss(&logits, &labels, &cfg).unwrap();
        let params = vec![("logits".to_string(), logits)];
        let report = grad_check(
            |p| Ok(focal_loss(&p[0].1, &labels, &cfg)?.0),
            &params,
            &|_| Some(analytic.clone()),
            None,
            &GradCheckConfig {
                tol: 1e-6,
                ..GradCheckConfig::default()
            },
        )
        .unwrap();
        assert!(report.pass(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut theta = Tensor::new(vec![2], vec![1.0f32, -2.0]).unwrap();
        let before = theta.clone();
        let mut state = AdamState {
            t: 0,
            moments: vec![(
                "theta".to_string(),
                Tensor::zeros(&[2]),
                Tensor::zeros(&[2]),
            )],
        };
        let grads: HashMap<String, Tensor<f32>> =
            [("theta".to_string(), Tensor::zeros(&[2]))].into();
        let mut params = vec![("theta".to_string(), &mut theta)];
        adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        assert!(theta.bits_eq(&before));
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_lr_updates_moments_but_not_params() {
        let mut theta = Tensor::new(vec![1], vec![3.0f32]).unwrap();
        let before = theta.clone();
        let mut state = AdamState {
            t: 0,
            moments: vec![(
                "theta".to_string(),
                Tensor::zeros(&[1]),
                Tensor::zeros(&[1]),
            )],
        };
        let grads: HashMap<String, Tensor<f32>> =
            [("theta".to_string(), Tensor::new(vec![1], vec![5.0]).unwrap())].into();
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut params = vec![("theta".to_string(), &mut theta)];
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        assert!(theta.bits_eq(&before));
        assert!(state.moments[0].1.data()[0] != 0.0);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_lr() {
        // θ scalar, g = 10: m̂/√v̂ = g/|g|, so Δθ ≈ −lr.
        let mut theta = Tensor::new(vec![1], vec![0.0f64]).unwrap();
        let mut state = AdamState {
            t: 0,
            moments: vec![(
                "theta".to_string(),
                Tensor::zeros(&[1]),
                Tensor::zeros(&[1]),
            )],
        };
        let grads: HashMap<String, Tensor<f64>> =
            [("theta".to_string(), Tensor::new(vec![1], vec![10.0]).unwrap())].into();
        let cfg = AdamConfig {
            lr: 0.001,
            ..AdamConfig::default()
        };
        let mut params = vec![("theta".to_string(), &mut theta)];
        adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
        let delta = theta.data()[0];
        assert!((delta + 0.001).abs() < 1e-9);
        assert!(delta.abs() <= 0.001 * (1.0 + 1e-6));
    }

    #[test]
    fn adam_refuses_non_finite_gradients_by_name() {
        let mut theta = Tensor::new(vec![1], vec![0.0f32]).unwrap();
        let mut state = AdamState {
            t: 0,
            moments: vec![(
                "theta".to_string(),
                Tensor::zeros(&[1]),
                Tensor::zeros(&[1]),
            )],
        };
        let grads: HashMap<String, Tensor<f32>> = [(
            "theta".to_string(),
            Tensor::new(vec![1], vec![f32::NAN]).unwrap(),
        )]
        .into();
        let mut params = vec![("theta".to_string(), &mut theta)];
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(state.t, 0);
    }

    #[test]
    fn scheduler_keeps_lr_while_improving() {
        let mut s = PlateauScheduler::new(0.001, 3, 1e-4, 1e-6);
        for i in 0..20 {
            let lr = s.step(1.0 - i as f64 * 0.01);
            assert_eq!(lr, 0.001);
        }
    }

    #[test]
    fn scheduler_trace_with_patience_three_on_constant_metric() {
        let mut s = PlateauScheduler::new(0.001, 3, 1e-4, 1e-6);
        let lrs: Vec<f64> = (0..9).map(|_| s.step(0.5)).collect();
        assert_eq!(
            lrs,
            vec![0.001, 0.001, 0.001, 0.0005, 0.0005, 0.0005, 0.00025, 0.00025, 0.00025]
        );
    }

    #[test]
    fn scheduler_respects_min_lr_floor() {
        let mut s = PlateauScheduler::new(0.001, 1, 1e-4, 1e-6);
        let mut last = 0.001;
        for _ in 0..40 {
            last = s.step(0.5);
            assert!(last >= 1e-6);
        }
        assert_eq!(last, 1e-6);
    }

    #[test]
    fn scheduler_is_non_increasing_and_deterministic() {
        let metrics: Vec<f64> = (0..30)
            .map(|i| if i % 5 == 0 { 1.0 / (i + 1) as f64 } else { 0.9 })
            .collect();
        let run = |ms: &[f64]| {
            let mut s = PlateauScheduler::new(0.001, 2, 1e-4, 1e-6);
            ms.iter().map(|&m| s.step(m)).collect::<Vec<f64>>()
        };
        let a = run(&metrics);
        let b = run(&metrics);
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}
