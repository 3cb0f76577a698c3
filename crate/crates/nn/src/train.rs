//! Mini-batch training with Adam and a linearly decaying learning rate.

use handsar_core::metrics;
use handsar_core::normalize::{self, NormalizationRecord};
use handsar_core::ComplexGrid;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{amplitude_mse_slice, C};
use crate::error::{NnError, Result};
use crate::model::{grid_to_vec, vec_to_grid, UnfoldingModel};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            learning_rate: 1e-4,
            decay_start_epoch: 50,
            batch_size: 4,
            seed: 0,
            optimizer: Optimizer::Adam,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(NnError::invalid("epochs", "must be at least 1"));
        }
        if self.decay_start_epoch > self.epochs {
            return Err(NnError::invalid(
                "decay_start_epoch",
                format!("{} exceeds epochs {}", self.decay_start_epoch, self.epochs),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::invalid("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(NnError::invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::invalid("beta1/beta2", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(NnError::invalid("adam_eps", "must be positive"));
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based): constant until
    /// `decay_start_epoch`, then linear to zero at `epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start_epoch {
            self.learning_rate
        } else {
            let span = (self.epochs - self.decay_start_epoch) as f64;
            self.learning_rate * (self.epochs.saturating_sub(epoch)) as f64 / span
        }
    }
}

/// Adam state over a flat parameter vector, accumulated in 64 bits.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step<T: Scalar>(&mut self, values: &mut [T], grads: &[T], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..values.len() {
            let g = grads[i].wide();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let upd = lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
            values[i] = T::of(values[i].wide() - upd);
        }
    }
}

/// One normalized training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainPair {
    pub input: ComplexGrid,
    pub target: ComplexGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,val_loss,val_psnr,val_ssim";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:.6},{:.6}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_psnr, self.val_ssim
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    /// Relative drop of the mean training loss from the first epoch to the last.
    pub fn train_loss_reduction(&self) -> f64 {
        match (self.history.first(), self.history.last()) {
            (Some(a), Some(b)) if a.train_loss > 0.0 => 1.0 - b.train_loss / a.train_loss,
            _ => 0.0,
        }
    }
}

struct Prepared<T> {
    input: Vec<C<T>>,
    target: Vec<C<T>>,
}

fn prepare<T: Scalar>(model: &UnfoldingModel<T>, pairs: &[TrainPair]) -> Result<Vec<Prepared<T>>> {
    let (r, c) = (model.arch.rows, model.arch.cols);
    pairs
        .iter()
        .map(|p| {
            for g in [&p.input, &p.target] {
                if g.dims() != (r, c) {
                    return Err(NnError::Shape(format!(
                        "pair is {}x{}, model expects {r}x{c}",
                        g.rows(),
                        g.cols()
                    )));
                }
            }
            Ok(Prepared {
                input: grid_to_vec(&p.input),
                target: grid_to_vec(&p.target),
            })
        })
        .collect()
}

/// Mean loss and summed gradient of one batch. Samples run in parallel;
/// gradients are reduced in sample order so the result does not depend on
/// scheduling.
fn batch_gradient<T: Scalar>(model: &UnfoldingModel<T>, batch: &[&Prepared<T>]) -> Result<(f64, Vec<T>)> {
    let w = 1.0 / batch.len() as f64;
    let parts: Vec<(f64, Vec<T>)> = batch
        .par_iter()
        .map(|p| model.loss_and_grad(&p.input, &p.target, w))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0f64; model.params.len()];
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        acc.iter_mut().zip(g).for_each(|(a, v)| *a += v.wide());
    }
    Ok((loss, acc.into_iter().map(T::of).collect()))
}

/// Mean loss, PSNR and SSIM over a set. Metrics compare min-max amplitudes
/// of output and target in the model's working frame.
pub fn evaluate_set<T: Scalar>(model: &UnfoldingModel<T>, pairs: &[TrainPair]) -> Result<(f64, f64, f64)> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let prepared = prepare(model, pairs)?;
    let (r, c) = (model.arch.rows, model.arch.cols);
    let rows: Vec<(f64, f64, f64)> = prepared
        .par_iter()
        .map(|p| -> Result<(f64, f64, f64)> {
            let (out, _) = model.forward_pass(&p.input)?;
            let (out, target) = (model.to_working(&out), model.to_working(&p.target));
            let loss = amplitude_mse_slice(&out, &target);
            let rep = metrics::evaluate(&vec_to_grid(&out, r, c), &vec_to_grid(&target, r, c))?;
            Ok((loss, rep.psnr_db, rep.ssim))
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let sum = rows.iter().fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok((sum.0 / n, sum.1 / n, sum.2 / n))
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the lowest validation loss (training loss when `val` is empty).
/// `on_epoch` is called after every epoch.
pub fn train<T: Scalar>(
    model: &mut UnfoldingModel<T>,
    train_set: &[TrainPair],
    val_set: &[TrainPair],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NnError::Empty("training set"));
    }
    let data = prepare(model, train_set)?;
    let mut adam = Adam::new(model.params.len(), cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Vec<T>)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared<T>> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = batch_gradient(model, &batch)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(NnError::NonFinite {
                    what: "training loss",
                    epoch,
                });
            }
            total += loss * chunk.len() as f64;
            match cfg.optimizer {
                Optimizer::Adam => adam.step(model.params.values_mut(), &grads, lr),
                Optimizer::Sgd => model
                    .params
                    .values_mut()
                    .iter_mut()
                    .zip(&grads)
                    .for_each(|(v, g)| *v = *v - T::of(lr) * *g),
            }
        }
        let train_loss = total / data.len() as f64;
        let (val_loss, val_psnr, val_ssim) = evaluate_set(model, val_set)?;
        if !val_set.is_empty() && !val_loss.is_finite() {
            return Err(NnError::NonFinite {
                what: "validation loss",
                epoch,
            });
        }
        let score = if val_set.is_empty() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((epoch, score, model.params.values().to_vec()));
        }
        let log = EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            val_psnr,
            val_ssim,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} train {train_loss:.6} val {val_loss:.6} psnr {val_psnr:.3} ssim {val_ssim:.4}"
        );
        on_epoch(&log);
        history.push(log);
    }
    let (best_epoch, best_val_loss, values) = best.expect("at least one epoch ran");
    model.params.values_mut().copy_from_slice(&values);
    Ok(TrainReport {
        history,
        best_epoch,
        best_val_loss,
    })
}

/// Output of [`infer`].
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    /// Focused image in the units of the distorted input.
    pub image: ComplexGrid,
    /// Focused image in the normalized frame.
    pub normalized: ComplexGrid,
    /// Output in the working frame; its amplitude is what the loss fits to
    /// the target amplitude, so image metrics are taken on it.
    pub estimate: ComplexGrid,
    pub compensator: ComplexGrid,
    pub record: NormalizationRecord,
}

/// Normalizes a raw distorted image, runs the network and maps the result
/// back with the input's normalization record.
pub fn infer<T: Scalar>(model: &UnfoldingModel<T>, distorted: &ComplexGrid) -> Result<Inference> {
    let (r, c) = (model.arch.rows, model.arch.cols);
    if distorted.dims() != (r, c) {
        return Err(NnError::Shape(format!(
            "image is {}x{}, model expects {r}x{c}",
            distorted.rows(),
            distorted.cols()
        )));
    }
    let (norm, record) = normalize::normalize_minmax(distorted);
    let (out, phi) = model.forward_grid(&norm)?;
    let estimate = vec_to_grid(&model.to_working(&grid_to_vec::<T>(&out)), r, c);
    Ok(Inference {
        image: normalize::denormalize(&out, &record),
        normalized: out,
        estimate,
        compensator: phi,
        record,
    })
}

pub fn infer_batch<T: Scalar>(model: &UnfoldingModel<T>, images: &[ComplexGrid]) -> Result<Vec<Inference>> {
    images.par_iter().map(|g| infer(model, g)).collect()
}

/// Mean image metrics of a model over raw `(distorted, clean)` pairs. Input
/// and output are both scored against the clean image with
/// [`metrics::evaluate`]; the output used is the working-frame estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub count: usize,
    pub input_psnr: f64,
    pub input_ssim: f64,
    pub output_psnr: f64,
    pub output_ssim: f64,
}

pub fn score<T: Scalar>(model: &UnfoldingModel<T>, pairs: &[(ComplexGrid, ComplexGrid)]) -> Result<Scores> {
    if pairs.is_empty() {
        return Err(NnError::Empty("evaluation set"));
    }
    let rows: Vec<[f64; 4]> = pairs
        .par_iter()
        .map(|(distorted, clean)| -> Result<[f64; 4]> {
            let inp = metrics::evaluate(distorted, clean)?;
            let out = metrics::evaluate(&infer(model, distorted)?.estimate, clean)?;
            Ok([inp.psnr_db, inp.ssim, out.psnr_db, out.ssim])
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = |k: usize| rows.iter().map(|r| r[k]).sum::<f64>() / n;
    Ok(Scores {
        count: rows.len(),
        input_psnr: mean(0),
        input_ssim: mean(1),
        output_psnr: mean(2),
        output_ssim: mean(3),
    })
}
