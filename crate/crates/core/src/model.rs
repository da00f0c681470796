//! The forecasting pipeline: instance normalization, trend/seasonal
//! decomposition, input projection, batch normalization, one recurrent cell,
//! output projection and denormalization.
//!
//! Channels are processed independently with shared weights, so a
//! `B × L × m` batch becomes `B·m` univariate instances.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlstm::{mlstm_backward, mlstm_forward, Denominator, MLstmCache, MLstmParams, MLstmState};
use crate::numeric::{uniform_vec, Matrix};
use crate::series::{mean_std, BatchNormCache, BatchNormParams, DecompKernel, SeriesBatch, NORM_EPS};
use crate::slstm::{slstm_backward, slstm_forward, ForgetGate, SLstmCache, SLstmParams, SLstmState};

/// Channel count at or above which the matrix-memory cell is chosen.
pub const MLSTM_CHANNEL_THRESHOLD: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    SLstm,
    MLstm,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::SLstm => "slstm",
            Backend::MLstm => "mlstm",
        })
    }
}

/// Scalar memory for narrow datasets, matrix memory for wide ones.
pub fn select_backend(channel_count: usize, _timesteps: usize) -> Backend {
    if channel_count >= MLSTM_CHANNEL_THRESHOLD {
        Backend::MLstm
    } else {
        Backend::SLstm
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub hidden: usize,
    /// Recurrence length the projected window is reshaped into.
    pub steps: usize,
    pub backend: Backend,
    pub kernel_window: usize,
    pub learnable_kernel: bool,
    pub forget: ForgetGate,
    pub denominator: Denominator,
    /// Normalize each input channel and denormalize the forecast.
    pub revin: bool,
    /// Instance-normalize the forecast itself, without denormalization.
    pub literal_instnorm: bool,
    /// Diagnostic: skip batch norm and the cell, feeding the last projected
    /// chunk straight to the output layer.
    pub bypass_cell: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub const DEFAULT_STEPS: usize = 16;

    pub fn new(lookback: usize, horizon: usize, channels: usize, hidden: usize) -> Self {
        ModelConfig {
            lookback,
            horizon,
            channels,
            hidden,
            steps: Self::DEFAULT_STEPS,
            backend: select_backend(channels, lookback),
            kernel_window: DecompKernel::DEFAULT_WINDOW,
            learnable_kernel: false,
            forget: ForgetGate::Sigmoid,
            denominator: Denominator::Abs,
            revin: true,
            literal_instnorm: false,
            bypass_cell: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("lookback", self.lookback),
            ("horizon", self.horizon),
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("steps", self.steps),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if self.kernel_window % 2 == 0 {
            problems.push(format!("kernel_window must be odd, got {}", self.kernel_window));
        }
        if self.kernel_window > 2 * self.lookback {
            problems.push(format!(
                "kernel_window {} exceeds twice the lookback {}",
                self.kernel_window, self.lookback
            ));
        }
        if self.revin && self.literal_instnorm {
            problems.push("revin and literal_instnorm are mutually exclusive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Width of the input projection's output, `steps · hidden`.
    pub fn projected_width(&self) -> usize {
        self.steps * self.hidden
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CellParams {
    SLstm(SLstmParams),
    MLstm(MLstmParams),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `(steps·hidden) × 2·lookback`, applied to `[trend; seasonal]`.
    pub input_weight: Matrix,
    /// Empty unless `bypass_cell` is set.
    pub input_bias: Vec<f64>,
    pub batch_norm: BatchNormParams,
    pub cell: CellParams,
    /// `horizon × hidden`.
    pub output_weight: Matrix,
    pub output_bias: Vec<f64>,
    pub kernel: DecompKernel,
}

impl ModelParams {
    /// All-zero parameters with the shapes `config` implies.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let width = config.projected_width();
        let mut kernel = DecompKernel::uniform(config.kernel_window)?;
        kernel.learnable = config.learnable_kernel;
        Ok(ModelParams {
            input_weight: Matrix::zeros(width, 2 * config.lookback),
            // batch norm removes any per-feature shift, so the projection
            // carries a bias only when batch norm is bypassed
            input_bias: vec![0.0; if config.bypass_cell { width } else { 0 }],
            batch_norm: BatchNormParams::new(width),
            cell: match config.backend {
                Backend::SLstm => CellParams::SLstm(SLstmParams::zeros(config.hidden, config.hidden)),
                Backend::MLstm => CellParams::MLstm(MLstmParams::zeros(config.hidden, config.hidden)),
            },
            output_weight: Matrix::zeros(config.horizon, config.hidden),
            output_bias: vec![0.0; config.horizon],
            kernel,
        })
    }

    /// Every trainable array, named and in a fixed order. The decomposition
    /// kernel appears only when it is learnable.
    pub fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("input.weight".into(), self.input_weight.as_slice())];
        if !self.input_bias.is_empty() {
            out.push(("input.bias".into(), &self.input_bias));
        }
        out.push(("bn.gamma".into(), &self.batch_norm.gamma));
        out.push(("bn.beta".into(), &self.batch_norm.beta));
        let cell = match &self.cell {
            CellParams::SLstm(p) => p.blocks(),
            CellParams::MLstm(p) => p.blocks(),
        };
        out.extend(cell.into_iter().map(|(n, b)| (format!("cell.{n}"), b)));
        out.push(("output.weight".into(), self.output_weight.as_slice()));
        out.push(("output.bias".into(), &self.output_bias));
        if self.kernel.learnable {
            out.push(("decomp.kernel".into(), self.kernel.weights()));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.arrays_mut(false)
    }

    /// Every stored array, trainable or not, for serialization.
    pub(crate) fn all_arrays_mut(&mut self) -> Vec<(String, &mut [f64])> {
        self.arrays_mut(true)
    }

    fn arrays_mut(&mut self, everything: bool) -> Vec<(String, &mut [f64])> {
        let bn = &mut self.batch_norm;
        let mut out: Vec<(String, &mut [f64])> = vec![("input.weight".into(), self.input_weight.as_mut_slice())];
        if !self.input_bias.is_empty() {
            out.push(("input.bias".into(), &mut self.input_bias));
        }
        out.push(("bn.gamma".into(), &mut bn.gamma));
        out.push(("bn.beta".into(), &mut bn.beta));
        let cell = match &mut self.cell {
            CellParams::SLstm(p) => p.blocks_mut(),
            CellParams::MLstm(p) => p.blocks_mut(),
        };
        out.extend(cell.into_iter().map(|(n, b)| (format!("cell.{n}"), b)));
        out.push(("output.weight".into(), self.output_weight.as_mut_slice()));
        out.push(("output.bias".into(), &mut self.output_bias));
        if everything || self.kernel.learnable {
            out.push(("decomp.kernel".into(), self.kernel.weights_mut().as_mut_slice()));
        }
        if everything {
            out.push(("bn.running_mean".into(), &mut bn.running_mean));
            out.push(("bn.running_var".into(), &mut bn.running_var));
        }
        out
    }

    /// Folds the batch statistics of a training-mode forward into the
    /// batch-norm running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        if let Some(bn) = cache.bn.as_ref().filter(|bn| bn.training) {
            self.batch_norm.update_running(&bn.mean, &bn.var);
        }
    }
}

/// Deterministic seeded initialization: uniform `±1/√fan_in` for the
/// projections and the cell, unit scale and zero shift for batch norm, and a
/// uniform decomposition kernel.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let width = config.projected_width();
    let k_in = 1.0 / ((2 * config.lookback) as f64).sqrt();
    params.input_weight = Matrix::uniform(width, 2 * config.lookback, k_in, &mut rng);
    params.input_bias = uniform_vec(params.input_bias.len(), k_in, &mut rng);
    params.cell = match config.backend {
        Backend::SLstm => CellParams::SLstm(SLstmParams::init(config.hidden, config.hidden, &mut rng)),
        Backend::MLstm => CellParams::MLstm(MLstmParams::init(config.hidden, config.hidden, &mut rng)),
    };
    let k_out = 1.0 / (config.hidden as f64).sqrt();
    params.output_weight = Matrix::uniform(config.horizon, config.hidden, k_out, &mut rng);
    params.output_bias = uniform_vec(config.horizon, k_out, &mut rng);
    Ok(params)
}

#[derive(Clone, Debug)]
enum CellCache {
    SLstm(Vec<SLstmCache>),
    MLstm(Vec<MLstmCache>),
    Bypass,
}

#[derive(Clone, Debug)]
struct InstanceCache {
    /// Input after optional instance normalization.
    x_norm: Vec<f64>,
    /// `[trend; seasonal]`.
    u: Vec<f64>,
    /// Instance mean and std, when revin is on.
    revin: Option<(f64, f64)>,
    cell: CellCache,
    h_last: Vec<f64>,
    /// Output projection before any output normalization.
    y_raw: Vec<f64>,
}

/// Intermediates of one [`forward`] call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub training: bool,
    batch: usize,
    instances: Vec<InstanceCache>,
    bn: Option<BatchNormCache>,
}

fn check_batch(config: &ModelConfig, batch: &SeriesBatch) -> Result<()> {
    if batch.time() != config.lookback || batch.channels() != config.channels || batch.batch() == 0 {
        return Err(Error::contract(format!(
            "forward expects a B x {} x {} batch, got {} x {} x {}",
            config.lookback,
            config.channels,
            batch.batch(),
            batch.time(),
            batch.channels()
        )));
    }
    Ok(())
}

/// Runs the pipeline on a `B × L × m` batch and returns `B × T × m`
/// forecasts. Training mode normalizes with batch statistics; it does not
/// update the running estimates (see [`ModelParams::absorb_batch_stats`]).
pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &SeriesBatch,
    training: bool,
) -> Result<(SeriesBatch, ForwardCache)> {
    check_batch(config, batch)?;
    crate::error::ensure_finite("input batch", batch.as_slice())?;
    let (b_count, m) = (batch.batch(), config.channels);
    let n_inst = b_count * m;
    let lookback = config.lookback;
    let hidden = config.hidden;
    let width = config.projected_width();

    let mut instances = Vec::with_capacity(n_inst);
    let mut projected = Matrix::zeros(n_inst, width);
    for b in 0..b_count {
        for c in 0..m {
            let mut x = batch.series(b, c);
            let revin = if config.revin {
                let (mu, sd) = mean_std(&x);
                x.iter_mut().for_each(|v| *v = (*v - mu) / (sd + NORM_EPS));
                Some((mu, sd))
            } else {
                None
            };
            let trend = params.kernel.trend(&x);
            let mut u = Vec::with_capacity(2 * lookback);
            u.extend_from_slice(&trend);
            u.extend(x.iter().zip(&trend).map(|(v, t)| v - t));
            let p = b * m + c;
            let row = projected.row_mut(p);
            if params.input_bias.is_empty() {
                row.fill(0.0);
            } else {
                row.copy_from_slice(&params.input_bias);
            }
            params.input_weight.matvec_acc(&u, row);
            instances.push(InstanceCache {
                x_norm: x,
                u,
                revin,
                cell: CellCache::Bypass,
                h_last: Vec::new(),
                y_raw: Vec::new(),
            });
        }
    }

    let (cell_in, bn) = if config.bypass_cell {
        (projected, None)
    } else if training {
        let (y, cache) = params.batch_norm.forward_batch_stats(&projected)?;
        (y, Some(cache))
    } else {
        let (y, cache) = params.batch_norm.forward_eval(&projected)?;
        (y, Some(cache))
    };

    let mut out = SeriesBatch::zeros(b_count, config.horizon, m);
    out.channel_names = batch.channel_names.clone();
    for (p, inst) in instances.iter_mut().enumerate() {
        let row = cell_in.row(p);
        if config.bypass_cell {
            inst.h_last = row[width - hidden..].to_vec();
        } else {
            let xs: Vec<Vec<f64>> = row.chunks_exact(hidden).map(<[f64]>::to_vec).collect();
            match &params.cell {
                CellParams::SLstm(cp) => {
                    let (hs, caches) = slstm_forward(cp, config.forget, &SLstmState::zeros(hidden), &xs)?;
                    inst.h_last = hs.last().cloned().unwrap_or_default();
                    inst.cell = CellCache::SLstm(caches);
                }
                CellParams::MLstm(cp) => {
                    let (hs, caches) = mlstm_forward(
                        cp,
                        config.forget,
                        config.denominator,
                        &MLstmState::zeros(hidden),
                        &xs,
                    )?;
                    inst.h_last = hs.last().cloned().unwrap_or_default();
                    inst.cell = CellCache::MLstm(caches);
                }
            }
        }
        let mut y = params.output_bias.clone();
        params.output_weight.matvec_acc(&inst.h_last, &mut y);
        let y_out: Vec<f64> = if let Some((mu, sd)) = inst.revin {
            y.iter().map(|v| v * (sd + NORM_EPS) + mu).collect()
        } else if config.literal_instnorm {
            let (mu, sd) = mean_std(&y);
            y.iter().map(|v| (v - mu) / (sd + NORM_EPS)).collect()
        } else {
            y.clone()
        };
        inst.y_raw = y;
        out.set_series(p / m, p % m, &y_out);
    }
    Ok((
        out,
        ForwardCache {
            training,
            batch: b_count,
            instances,
            bn,
        },
    ))
}

/// Gradient of `(y − μ)/(σ + ε)` with respect to `y`, with μ and σ the
/// population statistics of `y`.
fn instance_norm_backward(y: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    let (mu, sd) = mean_std(y);
    let s = sd + NORM_EPS;
    let mean_g = grad_out.iter().sum::<f64>() / n;
    // ∂σ/∂y_i = (y_i − μ)/(nσ)
    let g_dot_centered: f64 = grad_out.iter().zip(y).map(|(g, v)| g * (v - mu)).sum();
    let dsd = -g_dot_centered / (s * s);
    y.iter()
        .zip(grad_out)
        .map(|(v, g)| {
            let through_sd = if sd > 0.0 { dsd * (v - mu) / (n * sd) } else { 0.0 };
            (g - mean_g) / s + through_sd
        })
        .collect()
}

/// Reverse pass through the pipeline. Returns gradients in a
/// [`ModelParams`]-shaped container; running statistics are left zero.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &ForwardCache,
    grad_predictions: &SeriesBatch,
) -> Result<ModelParams> {
    if !cache.training {
        return Err(Error::contract("backward needs a training-mode forward cache"));
    }
    let m = config.channels;
    if grad_predictions.shape() != (cache.batch, config.horizon, m) {
        return Err(Error::contract(format!(
            "prediction gradient is {:?}, expected {:?}",
            grad_predictions.shape(),
            (cache.batch, config.horizon, m)
        )));
    }
    let hidden = config.hidden;
    let width = config.projected_width();
    let n_inst = cache.instances.len();

    let mut grads = ModelParams::zeros(config)?;
    grads.batch_norm.gamma.fill(0.0);
    grads.batch_norm.running_var.fill(0.0);
    grads.kernel.weights_mut().fill(0.0);

    let mut d_cell_in = Matrix::zeros(n_inst, width);
    for (p, inst) in cache.instances.iter().enumerate() {
        let g = grad_predictions.series(p / m, p % m);
        let dy: Vec<f64> = if let Some((_, sd)) = inst.revin {
            g.iter().map(|v| v * (sd + NORM_EPS)).collect()
        } else if config.literal_instnorm {
            instance_norm_backward(&inst.y_raw, &g)
        } else {
            g
        };
        grads.output_weight.add_outer(1.0, &dy, &inst.h_last);
        grads.output_bias.iter_mut().zip(&dy).for_each(|(b, v)| *b += v);
        let mut dh = vec![0.0; hidden];
        params.output_weight.matvec_t_acc(&dy, &mut dh);

        let row = d_cell_in.row_mut(p);
        match (&inst.cell, &params.cell, &mut grads.cell) {
            (CellCache::Bypass, _, _) => row[width - hidden..].copy_from_slice(&dh),
            (CellCache::SLstm(caches), CellParams::SLstm(cp), CellParams::SLstm(gp)) => {
                let mut gh = vec![vec![0.0; hidden]; caches.len()];
                *gh.last_mut().expect("nonempty") = dh;
                let (g, gx) = slstm_backward(cp, config.forget, caches, &gh)?;
                accumulate(gp.blocks_mut(), g.blocks());
                for (dst, src) in row.chunks_exact_mut(hidden).zip(&gx) {
                    dst.copy_from_slice(src);
                }
            }
            (CellCache::MLstm(caches), CellParams::MLstm(cp), CellParams::MLstm(gp)) => {
                let mut gh = vec![vec![0.0; hidden]; caches.len()];
                *gh.last_mut().expect("nonempty") = dh;
                let (g, gx) = mlstm_backward(cp, config.forget, config.denominator, caches, &gh)?;
                accumulate(gp.blocks_mut(), g.blocks());
                for (dst, src) in row.chunks_exact_mut(hidden).zip(&gx) {
                    dst.copy_from_slice(src);
                }
            }
            _ => return Err(Error::contract("forward cache does not match the cell backend")),
        }
    }

    let d_projected = match &cache.bn {
        None => d_cell_in,
        Some(bn) => {
            let (dx, dgamma, dbeta) =
                crate::series::batchnorm_backward(&params.batch_norm, bn, &d_cell_in)?;
            grads.batch_norm.gamma = dgamma;
            grads.batch_norm.beta = dbeta;
            dx
        }
    };

    let mut du = vec![0.0; 2 * config.lookback];
    let mut dx_scratch = vec![0.0; config.lookback];
    for (p, inst) in cache.instances.iter().enumerate() {
        let da = d_projected.row(p);
        grads.input_weight.add_outer(1.0, da, &inst.u);
        grads.input_bias.iter_mut().zip(da).for_each(|(b, v)| *b += v);
        if config.learnable_kernel {
            du.fill(0.0);
            params.input_weight.matvec_t_acc(da, &mut du);
            let (d_trend, d_seasonal) = du.split_at(config.lookback);
            // seasonal = x − trend
            let d_trend: Vec<f64> = d_trend.iter().zip(d_seasonal).map(|(t, s)| t - s).collect();
            params.kernel.trend_backward(
                &inst.x_norm,
                &d_trend,
                grads.kernel.weights_mut(),
                &mut dx_scratch,
            );
        }
    }
    Ok(grads)
}

fn accumulate(dst: Vec<(&'static str, &mut [f64])>, src: Vec<(&'static str, &[f64])>) {
    for ((_, d), (_, s)) in dst.into_iter().zip(src) {
        d.iter_mut().zip(s).for_each(|(a, b)| *a += b);
    }
}

pub mod checkpoint {
    //! Binary checkpoint container.
    //!
    //! Layout, all integers little-endian:
    //!
    //! ```text
    //! magic    8 bytes  "XLSTMTCK"
    //! version  u32      1
    //! cfg_len  u64      length of the JSON-encoded ModelConfig
    //! cfg      cfg_len bytes
    //! count    u32      number of arrays
    //! count × {
    //!   name_len u16, name (UTF-8),
    //!   rows u64, cols u64,
    //!   rows·cols × f64 (IEEE-754 bits, LE)
    //! }
    //! sha256   32 bytes over everything above
    //! ```

    use std::path::Path;

    use sha2::{Digest, Sha256};

    use super::{ModelConfig, ModelParams};
    use crate::error::{Error, Result};

    const MAGIC: &[u8; 8] = b"XLSTMTCK";
    const VERSION: u32 = 1;

    /// Extra named arrays stored next to the model (e.g. data scaling).
    pub type Extras = Vec<(String, Vec<f64>)>;

    fn push_array(buf: &mut Vec<u8>, name: &str, rows: usize, cols: usize, data: &[f64]) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(rows as u64).to_le_bytes());
        buf.extend_from_slice(&(cols as u64).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn encode(config: &ModelConfig, params: &ModelParams, extras: &Extras) -> Result<Vec<u8>> {
        let cfg = serde_json::to_vec(config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
        buf.extend_from_slice(&cfg);
        let mut params = params.clone();
        let arrays = params.all_arrays_mut();
        buf.extend_from_slice(&((arrays.len() + extras.len()) as u32).to_le_bytes());
        let (w_rows, w_cols) = (config.projected_width(), 2 * config.lookback);
        for (name, data) in &arrays {
            let (rows, cols) = match name.as_str() {
                "input.weight" => (w_rows, w_cols),
                "output.weight" => (config.horizon, config.hidden),
                _ => (1, data.len()),
            };
            push_array(&mut buf, name, rows, cols, data);
        }
        for (name, data) in extras {
            push_array(&mut buf, name, 1, data.len(), data);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    struct Reader<'a> {
        buf: &'a [u8],
        pos: usize,
    }

    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            let end = self
                .pos
                .checked_add(n)
                .filter(|&e| e <= self.buf.len())
                .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
            let s = &self.buf[self.pos..end];
            self.pos = end;
            Ok(s)
        }
        fn u16(&mut self) -> Result<u16> {
            Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
        }
        fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ModelParams, Extras)> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let cfg_len = r.u64()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let mut params = ModelParams::zeros(&config)?;
        let mut extras = Vec::new();
        let count = r.u32()?;
        let mut seen = std::collections::BTreeSet::new();
        {
            let mut arrays = params.all_arrays_mut();
            for _ in 0..count {
                let name_len = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(name_len)?)
                    .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?
                    .to_string();
                let rows = r.u64()? as usize;
                let cols = r.u64()? as usize;
                let len = rows
                    .checked_mul(cols)
                    .ok_or_else(|| Error::Checkpoint(format!("{name}: bad shape")))?;
                let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad shape".into()))?)?;
                let values: Vec<f64> = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                match arrays.iter_mut().find(|(n, _)| *n == name) {
                    Some((_, dst)) => {
                        if dst.len() != values.len() {
                            return Err(Error::Checkpoint(format!(
                                "{name}: stored {rows}x{cols} does not fit {} values",
                                dst.len()
                            )));
                        }
                        dst.copy_from_slice(&values);
                        seen.insert(name);
                    }
                    None => extras.push((name, values)),
                }
            }
            if let Some((missing, _)) = arrays.iter().find(|(n, _)| !seen.contains(n)) {
                return Err(Error::Checkpoint(format!("missing array {missing}")));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok((config, params, extras))
    }

    pub fn save(path: &Path, config: &ModelConfig, params: &ModelParams, extras: &Extras) -> Result<()> {
        let bytes = encode(config, params, extras)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(ModelConfig, ModelParams, Extras)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(backend: Backend) -> ModelConfig {
        let mut c = ModelConfig::new(16, 4, 2, 8);
        c.backend = backend;
        c.kernel_window = 5;
        c.steps = 4;
        c.seed = 3;
        c
    }

    fn ramp_batch(b: usize, l: usize, m: usize) -> SeriesBatch {
        let data = (0..b * l * m)
            .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
            .collect();
        SeriesBatch::from_vec(b, l, m, data).unwrap()
    }

    #[test]
    fn select_backend_rule() {
        assert_eq!(select_backend(7, 17_420), Backend::SLstm);
        assert_eq!(select_backend(862, 17_544), Backend::MLstm);
        assert_eq!(select_backend(321, 26_304), Backend::MLstm);
        assert_eq!(select_backend(99, 10), Backend::SLstm);
        assert_eq!(select_backend(100, 10), Backend::MLstm);
    }

    #[test]
    fn init_is_deterministic() {
        let c = tiny(Backend::SLstm);
        let a = init_model(&c).unwrap();
        let b = init_model(&c).unwrap();
        let ea = checkpoint::encode(&c, &a, &Vec::new()).unwrap();
        let eb = checkpoint::encode(&c, &b, &Vec::new()).unwrap();
        assert_eq!(ea, eb);
        assert!(a.batch_norm.gamma.iter().all(|&g| g == 1.0));
        assert!(a.batch_norm.beta.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn input_projection_shape() {
        let mut c = ModelConfig::new(512, 96, 7, 128);
        let p = ModelParams::zeros(&c).unwrap();
        assert_eq!(p.input_weight.shape(), (16 * 128, 1024));
        c.steps = 1;
        let p = ModelParams::zeros(&c).unwrap();
        assert_eq!(p.input_weight.shape(), (128, 1024));
    }

    #[test]
    fn invalid_config_lists_every_problem() {
        let mut c = ModelConfig::new(0, 0, 1, 1);
        c.kernel_window = 4;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("lookback") && msg.contains("horizon") && msg.contains("odd"), "{msg}");
    }

    #[test]
    fn forward_shape_and_determinism() {
        for backend in [Backend::SLstm, Backend::MLstm] {
            let c = tiny(backend);
            let p = init_model(&c).unwrap();
            let x = ramp_batch(3, 16, 2);
            let (a, _) = forward(&p, &c, &x, false).unwrap();
            let (b, _) = forward(&p, &c, &x, false).unwrap();
            assert_eq!(a.shape(), (3, 4, 2));
            assert_eq!(a, b);
            assert!(forward(&p, &c, &ramp_batch(3, 15, 2), false).is_err());
        }
    }

    #[test]
    fn revin_restores_constant_channel() {
        let c = tiny(Backend::SLstm);
        let mut p = init_model(&c).unwrap();
        p.output_weight.fill(0.0);
        p.output_bias.fill(0.0);
        let mut x = ramp_batch(2, 16, 2);
        for b in 0..2 {
            x.set_series(b, 1, &[4.25; 16]);
        }
        for training in [false, true] {
            let (y, _) = forward(&p, &c, &x, training).unwrap();
            for b in 0..2 {
                assert!(y.series(b, 1).iter().all(|&v| v == 4.25));
            }
        }
    }

    #[test]
    fn eval_cache_rejected_by_backward() {
        let c = tiny(Backend::SLstm);
        let p = init_model(&c).unwrap();
        let x = ramp_batch(2, 16, 2);
        let (y, cache) = forward(&p, &c, &x, false).unwrap();
        assert!(backward(&p, &c, &cache, &y).is_err());
    }

    #[test]
    fn zero_gradient_gives_zero_param_gradients() {
        for backend in [Backend::SLstm, Backend::MLstm] {
            let mut c = tiny(backend);
            c.learnable_kernel = true;
            let p = init_model(&c).unwrap();
            let (y, cache) = forward(&p, &c, &ramp_batch(2, 16, 2), true).unwrap();
            let g = backward(&p, &c, &cache, &SeriesBatch::zeros(2, 4, 2)).unwrap();
            assert_eq!(y.shape(), (2, 4, 2));
            for (name, b) in g.blocks() {
                assert!(b.iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut c = tiny(Backend::MLstm);
        c.learnable_kernel = true;
        let mut p = init_model(&c).unwrap();
        p.batch_norm.running_mean[3] = 0.125;
        let extras = vec![("scaler.mean".to_string(), vec![1.5, -2.0])];
        let bytes = checkpoint::encode(&c, &p, &extras).unwrap();
        let (c2, p2, e2) = checkpoint::decode(&bytes).unwrap();
        assert_eq!(c, c2);
        assert_eq!(p, p2);
        assert_eq!(extras, e2);
        assert_eq!(bytes, checkpoint::encode(&c2, &p2, &e2).unwrap());

        let mut corrupt = bytes.clone();
        corrupt[40] ^= 1;
        assert!(checkpoint::decode(&corrupt).is_err());
        assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
