//! Losses, the Adam optimizer, the epoch loop and the finite-difference
//! gradient check.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{evaluate, WindowSet};
use crate::error::{Error, Result};
use crate::model::{backward, forward, init_model, ModelConfig, ModelParams};
use crate::series::SeriesBatch;

/// Anything exposing its trainable arrays as named blocks in a fixed order.
pub trait ParamBlocks {
    fn param_blocks(&self) -> Vec<(String, &[f64])>;
    fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

impl ParamBlocks for ModelParams {
    fn param_blocks(&self) -> Vec<(String, &[f64])> {
        self.blocks()
    }
    fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.blocks_mut()
    }
}

impl ParamBlocks for Vec<f64> {
    fn param_blocks(&self) -> Vec<(String, &[f64])> {
        vec![("theta".into(), self.as_slice())]
    }
    fn param_blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        vec![("theta".into(), self.as_mut_slice())]
    }
}

fn check_same_shape(pred: &SeriesBatch, target: &SeriesBatch) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::contract(format!(
            "prediction is {:?} but target is {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(())
}

/// Mean absolute error and its gradient with respect to `pred`. The
/// subgradient at exact ties is zero.
pub fn mae_loss(pred: &SeriesBatch, target: &SeriesBatch) -> Result<(f64, SeriesBatch)> {
    check_same_shape(pred, target)?;
    let n = pred.as_slice().len().max(1) as f64;
    let mut grad = SeriesBatch::zeros(pred.batch(), pred.time(), pred.channels());
    let mut sum = 0.0;
    for ((g, p), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(pred.as_slice())
        .zip(target.as_slice())
    {
        let e = p - t;
        sum += e.abs();
        *g = if e > 0.0 {
            1.0 / n
        } else if e < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

pub fn mse_metric(pred: &SeriesBatch, target: &SeriesBatch) -> Result<f64> {
    check_same_shape(pred, target)?;
    let n = pred.as_slice().len().max(1) as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

pub fn mae_metric(pred: &SeriesBatch, target: &SeriesBatch) -> Result<f64> {
    check_same_shape(pred, target)?;
    let n = pred.as_slice().len().max(1) as f64;
    Ok(pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<P: ParamBlocks>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .param_blocks()
            .iter()
            .map(|(_, b)| vec![0.0; b.len()])
            .collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place. Non-finite gradients abort the
/// step before anything is modified.
pub fn adam_step<P: ParamBlocks>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    let gblocks = grads.param_blocks();
    for (name, g) in &gblocks {
        if let Some(index) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient block {name}"),
                index,
            });
        }
    }
    let mut pblocks = params.param_blocks_mut();
    if pblocks.len() != gblocks.len() || pblocks.len() != state.first.len() {
        return Err(Error::contract("parameter, gradient and optimizer blocks differ"));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (k, ((_, p), (name, g))) in pblocks.iter_mut().zip(&gblocks).enumerate() {
        let (m, v) = (&mut state.first[k], &mut state.second[k]);
        if p.len() != g.len() || m.len() != g.len() {
            return Err(Error::contract(format!("block {name} changed shape")));
        }
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<P: ParamBlocks>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = grads
        .param_blocks()
        .iter()
        .flat_map(|(_, b)| b.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, b) in grads.param_blocks_mut() {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 20,
            batch_size: 32,
            lr: 1e-4,
            patience: 5,
            clip: Some(5.0),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    /// Wall-clock time; kept out of the serialized report so that reports
    /// from identical runs are byte-identical.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Index into `epochs` of the best validation MSE.
    pub best_epoch: Option<usize>,
    pub seed: u64,
}

impl TrainReport {
    pub fn total_seconds(&self) -> f64 {
        self.epochs.iter().map(|e| e.seconds).sum()
    }
}

/// Mini-batch training with MAE loss and Adam. Keeps the parameters with
/// the lowest validation MSE and stops after `patience` epochs without
/// improvement.
pub fn train(
    config: &ModelConfig,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainReport)> {
    let params = init_model(config)?;
    train_from(params, config, train_windows, val_windows, opts)
}

/// As [`train`], starting from existing parameters.
pub fn train_from(
    mut params: ModelParams,
    config: &ModelConfig,
    train_windows: &WindowSet,
    val_windows: &WindowSet,
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainReport)> {
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Config("training needs nonempty train and validation windows".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: None,
        seed: opts.seed,
    };
    let mut best = params.clone();
    let mut best_mse = f64::INFINITY;
    let mut stale = 0;
    let mut adam = AdamState::new(&params, opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 0..opts.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for (bi, chunk) in order.chunks(opts.batch_size).enumerate() {
            // batch norm needs two instances
            if chunk.len() * config.channels < 2 {
                continue;
            }
            let (x, y) = train_windows.batch(chunk);
            let (pred, cache) = forward(&params, config, &x, true)?;
            let (loss, grad) = mae_loss(&pred, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            let mut grads = backward(&params, config, &cache, &grad)?;
            if let Some(max) = opts.clip {
                clip_global_norm(&mut grads, max);
            }
            adam_step(&mut params, &grads, &mut adam).map_err(|e| match e {
                Error::NonFinite { .. } => Error::Divergence { epoch, batch: bi },
                e => e,
            })?;
            if params.kernel.learnable {
                params.kernel.renormalize();
            }
            params.absorb_batch_stats(&cache);
            loss_sum += loss * chunk.len() as f64;
            loss_count += chunk.len();
        }
        let val = evaluate(&params, config, val_windows, opts.batch_size)?;
        if !val.mse.is_finite() {
            return Err(Error::Divergence { epoch, batch: 0 });
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_mae: loss_sum / loss_count.max(1) as f64,
            val_mse: val.mse,
            val_mae: val.mae,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val.mse < best_mse {
            best_mse = val.mse;
            best = params.clone();
            report.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= opts.patience {
                break;
            }
        }
    }
    if report.best_epoch.is_none() {
        best = params;
    }
    Ok((best, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Coordinates sampled per block.
    pub max_coords: usize,
    pub seed: u64,
    /// Test hook: perturbs the analytic gradient so the check must fail.
    pub corrupt_analytic: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 200,
            seed: 0,
            corrupt_analytic: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.max_rel_error < self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }
}

/// `mae(up) − mae(down)` summed element by element. Where both errors
/// share a sign the term is `±(up − down)`, which is exact for nearby
/// predictions, so the difference does not inherit the rounding of two
/// separately accumulated losses.
fn mae_difference(up: &SeriesBatch, down: &SeriesBatch, target: &SeriesBatch) -> f64 {
    let n = target.as_slice().len().max(1) as f64;
    let sum: f64 = up
        .as_slice()
        .iter()
        .zip(down.as_slice())
        .zip(target.as_slice())
        .map(|((&u, &d), &t)| {
            if u >= t && d >= t {
                u - d
            } else if u <= t && d <= t {
                d - u
            } else {
                (u - t).abs() - (d - t).abs()
            }
        })
        .sum();
    sum / n
}

/// Compares the analytic MAE-loss gradient at freshly initialized
/// parameters against central differences.
pub fn grad_check(
    config: &ModelConfig,
    inputs: &SeriesBatch,
    targets: &SeriesBatch,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let params = init_model(config)?;
    grad_check_params(&params, config, inputs, targets, opts)
}

pub fn grad_check_params(
    params: &ModelParams,
    config: &ModelConfig,
    inputs: &SeriesBatch,
    targets: &SeriesBatch,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (pred, cache) = forward(params, config, inputs, true)?;
    let (_, dpred) = mae_loss(&pred, targets)?;
    let mut analytic = backward(params, config, &cache, &dpred)?;
    if opts.corrupt_analytic {
        for (_, b) in analytic.blocks_mut() {
            b.iter_mut().for_each(|v| *v = *v * 1.5 + 1e-3);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = params.clone();
    let names: Vec<String> = params.blocks().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport {
        blocks: Vec::with_capacity(names.len()),
        tolerance: opts.tolerance,
    };
    for (k, name) in names.iter().enumerate() {
        let len = params.blocks()[k].1.len();
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            let mut c: Vec<usize> = (0..opts.max_coords).map(|_| rng.random_range(0..len)).collect();
            c.sort_unstable();
            c.dedup();
            c
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = params.blocks()[k].1[i];
            probe.blocks_mut()[k].1[i] = orig + opts.step;
            let (up, _) = forward(&probe, config, inputs, true)?;
            probe.blocks_mut()[k].1[i] = orig - opts.step;
            let (down, _) = forward(&probe, config, inputs, true)?;
            probe.blocks_mut()[k].1[i] = orig;
            let numeric = mae_difference(&up, &down, targets) / (2.0 * opts.step);
            let a = analytic.blocks()[k].1[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        report.blocks.push(BlockCheck {
            name: name.clone(),
            checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}
