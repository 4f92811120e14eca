//! Adam training with early stopping, resumable state, and subsampled
//! inference.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bce_loss, loss_and_gradients, MlpParams};
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub descriptors_per_font: usize,
    pub fonts_per_batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    /// Filled in from the global seed by the pipeline.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            descriptors_per_font: 64,
            fonts_per_batch: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptors_per_font == 0 {
            return Err(Error::invalid("descriptors_per_font must be at least 1"));
        }
        if self.fonts_per_batch == 0 {
            return Err(Error::invalid("fonts_per_batch must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    pub n_repeats: usize,
    pub descriptors_per_font: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            n_repeats: 8,
            descriptors_per_font: 64,
            seed: 0,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats == 0 {
            return Err(Error::invalid("n_repeats must be at least 1"));
        }
        if self.descriptors_per_font == 0 {
            return Err(Error::invalid("descriptors_per_font must be at least 1"));
        }
        Ok(())
    }
}

/// Sorted row indices of one minibatch subsample: `n` distinct rows when the
/// set is large enough, otherwise `n` draws with replacement. Sorting keeps
/// the pooled sum in ascending input order, so a full-size draw reproduces
/// the full-set forward pass exactly.
pub fn subsample_indices(len: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = if len >= n {
        rand::seq::index::sample(rng, len, n).into_vec()
    } else {
        (0..n).map(|_| rng.random_range(0..len)).collect()
    };
    idx.sort_unstable();
    idx
}

fn gather(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    m.select_rows(rows)
}

/// One font as seen by the trainer.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub descriptors: &'a DMatrix<f64>,
    pub target: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Model-selection loss: validation loss, or the training loss when there
    /// are no validation fonts.
    pub val_loss: f64,
}

/// Everything needed to continue training after an interruption. The
/// per-epoch RNG streams are derived from the seed and the epoch number, so no
/// generator state needs saving.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_done: usize,
    pub step: u64,
    pub params: MlpParams,
    pub m: MlpParams,
    pub v: MlpParams,
    pub best: MlpParams,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub stopped: bool,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(k: usize, seed: u64) -> Self {
        let params = MlpParams::init(k, &mut stream(seed, "train/init"));
        TrainState {
            epochs_done: 0,
            step: 0,
            m: MlpParams::zeros(k),
            v: MlpParams::zeros(k),
            best: params.clone(),
            params,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
            stopped: false,
            history: Vec::new(),
        }
    }

    fn adam_step(&mut self, grads: &MlpParams, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let mut ps = self.params.slices_mut();
        let mut ms = self.m.slices_mut();
        let mut vs = self.v.slices_mut();
        for (((p, m), v), g) in ps.iter_mut().zip(ms.iter_mut()).zip(vs.iter_mut()).zip(grads.slices()) {
            for i in 0..g.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
            }
        }
    }
}

fn mean_loss(params: &MlpParams, sets: &[DMatrix<f64>], targets: &[&[f64]]) -> Result<f64> {
    let p = params.forward_sets(sets)?;
    let mut total = 0.0;
    for (row, t) in targets.iter().enumerate() {
        let pr: Vec<f64> = p.row(row).iter().copied().collect();
        total += bce_loss(&pr, t)?;
    }
    Ok(total / targets.len() as f64)
}

/// Trains until `cfg.epochs` or early stopping, starting from `resume` when
/// given. `on_epoch` sees the state after every epoch (for checkpointing).
/// The best-validation parameters are in the returned state's `best`.
pub fn train(
    train_set: &[TrainExample<'_>],
    val_set: &[TrainExample<'_>],
    k: usize,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    let keep = |set: &[TrainExample<'_>], what: &str| -> Vec<usize> {
        let kept: Vec<usize> = (0..set.len()).filter(|&i| set[i].descriptors.nrows() > 0).collect();
        if kept.len() < set.len() {
            log::warn!(
                "{} {what} fonts have no descriptors and are skipped",
                set.len() - kept.len()
            );
        }
        kept
    };
    let train_idx = keep(train_set, "training");
    if train_idx.is_empty() {
        return Err(Error::EmptyPartSet);
    }
    if let Some(ex) = train_set.iter().chain(val_set).find(|e| e.target.len() != k) {
        return Err(Error::invalid(format!(
            "label vector of length {}, expected {k}",
            ex.target.len()
        )));
    }
    let mut state = match resume {
        Some(s) => {
            if s.params.k() != k {
                return Err(Error::invalid(format!(
                    "resume state has K={}, expected {k}",
                    s.params.k()
                )));
            }
            s
        }
        None => TrainState::new(k, cfg.seed),
    };

    // one fixed subsample per validation font keeps the selection loss comparable
    let val_idx = keep(val_set, "validation");
    let mut val_rng = stream(cfg.seed, "train/val");
    let val_sets: Vec<DMatrix<f64>> = val_idx
        .iter()
        .map(|&i| {
            let d = val_set[i].descriptors;
            gather(d, &subsample_indices(d.nrows(), cfg.descriptors_per_font, &mut val_rng))
        })
        .collect();
    let val_targets: Vec<&[f64]> = val_idx.iter().map(|&i| val_set[i].target).collect();

    while state.epochs_done < cfg.epochs && !state.stopped {
        let epoch = state.epochs_done;
        let mut rng = stream(cfg.seed, &format!("train/epoch/{epoch}"));
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.fonts_per_batch) {
            let sets: Vec<DMatrix<f64>> = chunk
                .iter()
                .map(|&i| {
                    let d = train_set[i].descriptors;
                    gather(d, &subsample_indices(d.nrows(), cfg.descriptors_per_font, &mut rng))
                })
                .collect();
            let targets: Vec<&[f64]> = chunk.iter().map(|&i| train_set[i].target).collect();
            let (loss, grads) = loss_and_gradients(&state.params, &sets, &targets)?;
            total += loss * chunk.len() as f64;
            state.adam_step(&grads, cfg);
        }
        if !state.params.is_finite() {
            return Err(Error::Numerical(format!("parameters diverged in epoch {}", epoch + 1)));
        }
        let train_loss = total / order.len() as f64;
        let val_loss = if val_sets.is_empty() {
            train_loss
        } else {
            mean_loss(&state.params, &val_sets, &val_targets)?
        };
        if val_loss < state.best_loss {
            state.best_loss = val_loss;
            state.best = state.params.clone();
            state.best_epoch = epoch + 1;
            state.bad_epochs = 0;
        } else {
            state.bad_epochs += 1;
            if state.bad_epochs >= cfg.patience {
                state.stopped = true;
            }
        }
        state.history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });
        state.epochs_done = epoch + 1;
        log::info!("epoch {}: train {train_loss:.5} val {val_loss:.5}", epoch + 1);
        on_epoch(&state)?;
    }
    Ok(state)
}

/// The individual subsample predictions that [`predict`] averages, in draw
/// order from the `cfg.seed` stream.
pub fn predict_repeats(
    params: &MlpParams,
    descriptors: &DMatrix<f64>,
    cfg: &PredictConfig,
) -> Result<Vec<DVector<f64>>> {
    cfg.validate()?;
    if descriptors.nrows() == 0 {
        return Err(Error::EmptyPartSet);
    }
    let mut rng = stream(cfg.seed, "predict");
    let sets: Vec<DMatrix<f64>> = (0..cfg.n_repeats)
        .map(|_| {
            gather(
                descriptors,
                &subsample_indices(descriptors.nrows(), cfg.descriptors_per_font, &mut rng),
            )
        })
        .collect();
    let p = params.forward_sets(&sets)?;
    Ok(p.row_iter().map(|r| r.transpose()).collect())
}

/// Mean likelihood over `n_repeats` random subsamples of the font's parts.
pub fn predict(params: &MlpParams, descriptors: &DMatrix<f64>, cfg: &PredictConfig) -> Result<DVector<f64>> {
    let reps = predict_repeats(params, descriptors, cfg)?;
    let mut mean = DVector::zeros(params.k());
    for r in &reps {
        mean += r;
    }
    Ok(mean / reps.len() as f64)
}
