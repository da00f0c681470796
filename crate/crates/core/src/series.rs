//! Trend/seasonal decomposition, reversible instance normalization and
//! batch normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Epsilon shared by both normalizations.
pub const NORM_EPS: f64 = 1e-5;

/// A `batch × time × channels` block, stored `[b][t][c]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesBatch {
    batch: usize,
    time: usize,
    channels: usize,
    data: Vec<f64>,
    pub channel_names: Vec<String>,
}

impl SeriesBatch {
    pub fn zeros(batch: usize, time: usize, channels: usize) -> Self {
        SeriesBatch {
            batch,
            time,
            channels,
            data: vec![0.0; batch * time * channels],
            channel_names: Vec::new(),
        }
    }

    pub fn from_vec(batch: usize, time: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != batch * time * channels {
            return Err(Error::contract(format!(
                "series batch {batch}x{time}x{channels} needs {} values, got {}",
                batch * time * channels,
                data.len()
            )));
        }
        Ok(SeriesBatch {
            batch,
            time,
            channels,
            data,
            channel_names: Vec::new(),
        })
    }

    /// A single univariate series as a `1 × len × 1` batch.
    pub fn univariate(values: &[f64]) -> Self {
        SeriesBatch::from_vec(1, values.len(), 1, values.to_vec()).expect("length matches")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.time, self.channels)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, b: usize, t: usize, c: usize) -> usize {
        (b * self.time + t) * self.channels + c
    }

    #[inline]
    pub fn get(&self, b: usize, t: usize, c: usize) -> f64 {
        self.data[self.index(b, t, c)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, t: usize, c: usize, v: f64) {
        let i = self.index(b, t, c);
        self.data[i] = v;
    }

    /// Copies one `(instance, channel)` series out along time.
    pub fn series(&self, b: usize, c: usize) -> Vec<f64> {
        (0..self.time).map(|t| self.get(b, t, c)).collect()
    }

    pub fn set_series(&mut self, b: usize, c: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.time);
        for (t, &v) in values.iter().enumerate() {
            self.set(b, t, c, v);
        }
    }

    fn map_series(&self, mut f: impl FnMut(usize, usize, &[f64]) -> Vec<f64>) -> SeriesBatch {
        let mut out = SeriesBatch::zeros(self.batch, self.time, self.channels);
        out.channel_names = self.channel_names.clone();
        for b in 0..self.batch {
            for c in 0..self.channels {
                let s = self.series(b, c);
                out.set_series(b, c, &f(b, c, &s));
            }
        }
        out
    }
}

/// Moving-average kernel for the trend extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompKernel {
    weights: Vec<f64>,
    pub learnable: bool,
}

impl DecompKernel {
    pub const DEFAULT_WINDOW: usize = 25;

    pub fn uniform(window: usize) -> Result<Self> {
        if window == 0 || window % 2 == 0 {
            return Err(Error::contract(format!(
                "decomposition window must be odd and positive, got {window}"
            )));
        }
        Ok(DecompKernel {
            weights: vec![1.0 / window as f64; window],
            learnable: false,
        })
    }

    pub fn from_weights(weights: Vec<f64>, learnable: bool) -> Result<Self> {
        let mut k = DecompKernel::uniform(weights.len())?;
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::contract("kernel weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("kernel weights sum to {sum}, not 1")));
        }
        k.weights = weights;
        k.learnable = learnable;
        Ok(k)
    }

    pub fn window(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Vec<f64> {
        &mut self.weights
    }

    /// Projects the weights back onto the simplex after an update: negative
    /// entries are clipped to zero and the rest rescaled to sum to one.
    /// A fully non-positive kernel resets to uniform.
    pub fn renormalize(&mut self) {
        self.weights.iter_mut().for_each(|w| {
            if !(*w > 0.0) {
                *w = 0.0;
            }
        });
        let sum: f64 = self.weights.iter().sum();
        if sum > 0.0 {
            self.weights.iter_mut().for_each(|w| *w /= sum);
        } else {
            let n = self.weights.len() as f64;
            self.weights.iter_mut().for_each(|w| *w = 1.0 / n);
        }
    }

    fn check_length(&self, len: usize) -> Result<()> {
        if len == 0 {
            return Err(Error::contract("cannot decompose an empty series"));
        }
        if self.window() > 2 * len {
            return Err(Error::contract(format!(
                "decomposition window {} exceeds twice the series length {len}",
                self.window()
            )));
        }
        Ok(())
    }

    /// Replicate-padded trend of one series.
    ///
    /// Evaluated as `x[i] + Σ w_j (x[src] − x[i])`, which equals the plain
    /// weighted sum for weights summing to one but is exact on constant
    /// stretches and commutes with adding a constant to the series.
    pub fn trend(&self, x: &[f64]) -> Vec<f64> {
        let half = self.window() / 2;
        let last = x.len() - 1;
        (0..x.len())
            .map(|i| {
                let offset: f64 = self
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| {
                        let src = (i + j).saturating_sub(half).min(last);
                        w * (x[src] - x[i])
                    })
                    .sum();
                x[i] + offset
            })
            .collect()
    }

    /// Reverse-mode of [`Self::trend`]: accumulates the weight gradient into
    /// `grad_w` and the input gradient into `grad_x`.
    pub fn trend_backward(&self, x: &[f64], grad_trend: &[f64], grad_w: &mut [f64], grad_x: &mut [f64]) {
        let half = self.window() / 2;
        let last = x.len() - 1;
        for (i, &g) in grad_trend.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (j, w) in self.weights.iter().enumerate() {
                let src = (i + j).saturating_sub(half).min(last);
                grad_w[j] += g * (x[src] - x[i]);
                grad_x[src] += g * w;
                grad_x[i] -= g * w;
            }
            grad_x[i] += g;
        }
    }
}

/// Splits one series into `(trend, seasonal)` with `trend + seasonal = x`.
pub fn decompose_series(x: &[f64], kernel: &DecompKernel) -> Result<(Vec<f64>, Vec<f64>)> {
    kernel.check_length(x.len())?;
    let trend = kernel.trend(x);
    let seasonal = x.iter().zip(&trend).map(|(v, t)| v - t).collect();
    Ok((trend, seasonal))
}

/// Channel-wise moving-average decomposition of a whole batch.
pub fn decompose(x: &SeriesBatch, kernel: &DecompKernel) -> Result<(SeriesBatch, SeriesBatch)> {
    kernel.check_length(x.time())?;
    let trend = x.map_series(|_, _, s| kernel.trend(s));
    let mut seasonal = trend.clone();
    for (s, (v, t)) in seasonal
        .as_mut_slice()
        .iter_mut()
        .zip(x.as_slice().iter().zip(trend.as_slice()))
    {
        *s = v - t;
    }
    Ok((trend, seasonal))
}

/// Per `(instance, channel)` statistics captured by [`instance_normalize`],
/// laid out `[b][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNormStats {
    pub batch: usize,
    pub channels: usize,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

/// Mean and population standard deviation of one series.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn instance_normalize(x: &SeriesBatch) -> Result<(SeriesBatch, InstanceNormStats)> {
    if x.time() == 0 {
        return Err(Error::contract("instance normalization needs at least one timestep"));
    }
    let mut stats = InstanceNormStats {
        batch: x.batch(),
        channels: x.channels(),
        mean: Vec::with_capacity(x.batch() * x.channels()),
        std: Vec::with_capacity(x.batch() * x.channels()),
        eps: NORM_EPS,
    };
    let y = x.map_series(|_, _, s| {
        let (mu, sd) = mean_std(s);
        stats.mean.push(mu);
        stats.std.push(sd);
        s.iter().map(|v| (v - mu) / (sd + NORM_EPS)).collect()
    });
    Ok((y, stats))
}

pub fn instance_denormalize(y: &SeriesBatch, stats: &InstanceNormStats) -> Result<SeriesBatch> {
    if y.batch() != stats.batch || y.channels() != stats.channels {
        return Err(Error::contract(format!(
            "denormalize: batch is {}x{} (instances x channels) but stats are {}x{}",
            y.batch(),
            y.channels(),
            stats.batch,
            stats.channels
        )));
    }
    Ok(y.map_series(|b, c, s| {
        let i = b * stats.channels + c;
        let scale = stats.std[i] + stats.eps;
        s.iter().map(|v| v * scale + stats.mean[i]).collect()
    }))
}

/// Affine batch normalization over the rows of an `N × F` feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Saved by a training-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub x_hat: Matrix,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

impl BatchNormParams {
    pub fn new(features: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.1,
            eps: NORM_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.features() {
            return Err(Error::contract(format!(
                "batch norm over {} features got a {}x{} input",
                self.features(),
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Normalizes with the statistics of `x` itself without touching the
    /// running estimates.
    pub fn forward_batch_stats(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check(x)?;
        let (n, f) = x.shape();
        if n < 2 {
            return Err(Error::contract(format!(
                "training-mode batch norm needs at least 2 rows, got {n}"
            )));
        }
        let mut mean = vec![0.0; f];
        for r in 0..n {
            mean.iter_mut().zip(x.row(r)).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for r in 0..n {
            for ((v, m), xv) in var.iter_mut().zip(&mean).zip(x.row(r)) {
                *v += (xv - m) * (xv - m);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut x_hat = Matrix::zeros(n, f);
        let mut y = Matrix::zeros(n, f);
        for r in 0..n {
            for j in 0..f {
                let xh = (x.get(r, j) - mean[j]) * inv_std[j];
                x_hat.set(r, j, xh);
                y.set(r, j, self.gamma[j] * xh + self.beta[j]);
            }
        }
        let cache = BatchNormCache {
            x_hat,
            mean,
            var,
            inv_std,
            training: true,
        };
        Ok((y, cache))
    }

    /// Folds batch statistics into the running estimates.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64]) {
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j];
        }
    }

    /// Normalizes with the running estimates.
    pub fn forward_eval(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check(x)?;
        let (n, f) = x.shape();
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mut x_hat = Matrix::zeros(n, f);
        let mut y = Matrix::zeros(n, f);
        for r in 0..n {
            for j in 0..f {
                let xh = (x.get(r, j) - self.running_mean[j]) * inv_std[j];
                x_hat.set(r, j, xh);
                y.set(r, j, self.gamma[j] * xh + self.beta[j]);
            }
        }
        let cache = BatchNormCache {
            x_hat,
            mean: self.running_mean.clone(),
            var: self.running_var.clone(),
            inv_std,
            training: false,
        };
        Ok((y, cache))
    }
}

/// Batch normalization forward. Training mode normalizes with batch
/// statistics and updates the running estimates.
pub fn batchnorm_forward(
    x: &Matrix,
    params: &mut BatchNormParams,
    training: bool,
) -> Result<(Matrix, BatchNormCache)> {
    if training {
        let (y, cache) = params.forward_batch_stats(x)?;
        params.update_running(&cache.mean, &cache.var);
        Ok((y, cache))
    } else {
        params.forward_eval(x)
    }
}

/// Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(
    params: &BatchNormParams,
    cache: &BatchNormCache,
    grad_out: &Matrix,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    if !cache.training {
        return Err(Error::contract("batch norm backward needs a training-mode cache"));
    }
    let (n, f) = cache.x_hat.shape();
    if grad_out.shape() != (n, f) {
        return Err(Error::contract(format!(
            "batch norm backward: gradient is {:?}, cache is {:?}",
            grad_out.shape(),
            (n, f)
        )));
    }
    let mut grad_gamma = vec![0.0; f];
    let mut grad_beta = vec![0.0; f];
    for r in 0..n {
        for j in 0..f {
            let g = grad_out.get(r, j);
            grad_beta[j] += g;
            grad_gamma[j] += g * cache.x_hat.get(r, j);
        }
    }
    let nf = n as f64;
    let mut grad_x = Matrix::zeros(n, f);
    for j in 0..f {
        let k = params.gamma[j] * cache.inv_std[j] / nf;
        for r in 0..n {
            let g = grad_out.get(r, j);
            grad_x.set(
                r,
                j,
                k * (nf * g - grad_beta[j] - cache.x_hat.get(r, j) * grad_gamma[j]),
            );
        }
    }
    Ok((grad_x, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_series_has_zero_seasonal() {
        let k = DecompKernel::uniform(3).unwrap();
        let (t, s) = decompose_series(&[5.0; 4], &k).unwrap();
        assert_eq!(t, vec![5.0; 4]);
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_hand_convolution() {
        let k = DecompKernel::uniform(3).unwrap();
        let (t, _) = decompose_series(&[1.0, 2.0, 3.0, 4.0, 5.0], &k).unwrap();
        let expect = [4.0 / 3.0, 2.0, 3.0, 4.0, 14.0 / 3.0];
        for (a, b) in t.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{t:?}");
        }
    }

    #[test]
    fn even_window_rejected() {
        assert!(DecompKernel::uniform(4).is_err());
        assert!(DecompKernel::uniform(0).is_err());
        let k = DecompKernel::uniform(7).unwrap();
        assert!(decompose_series(&[1.0, 2.0, 3.0], &k).is_err());
    }

    #[test]
    fn renormalize_projects_to_simplex() {
        let mut k = DecompKernel::uniform(3).unwrap();
        *k.weights_mut() = vec![0.5, -0.2, 1.5];
        k.renormalize();
        assert_eq!(k.weights(), &[0.25, 0.0, 0.75]);
        *k.weights_mut() = vec![-1.0, -1.0, 0.0];
        k.renormalize();
        assert_eq!(k.weights(), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn instance_norm_examples() {
        let (y, st) = instance_normalize(&SeriesBatch::univariate(&[-1.0, 1.0])).unwrap();
        assert_eq!(st.mean, vec![0.0]);
        assert_eq!(st.std, vec![1.0]);
        // shrink factor 1/(1+ε)
        assert!((y.as_slice()[0] + 1.0).abs() <= NORM_EPS && (y.as_slice()[1] - 1.0).abs() <= NORM_EPS);

        let (y, _) = instance_normalize(&SeriesBatch::univariate(&[3.0; 3])).unwrap();
        assert_eq!(y.as_slice(), &[0.0; 3]);

        let (y, st) = instance_normalize(&SeriesBatch::univariate(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(st.mean[0], 2.0);
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((st.std[0] - sd).abs() < 1e-15);
        let exact = [-1.0 / (sd + NORM_EPS), 0.0, 1.0 / (sd + NORM_EPS)];
        for (a, b) in y.as_slice().iter().zip(exact) {
            assert!((a - b).abs() < 1e-15);
        }
        // the ε-free values ±1.224745 differ by the ε shrink, about 1.5e-5
        for (a, b) in y.as_slice().iter().zip([-1.224745, 0.0, 1.224745]) {
            assert!((a - b).abs() < 2e-5);
        }
    }

    #[test]
    fn denormalize_examples() {
        let x = SeriesBatch::univariate(&[1.0, 2.0, 3.0]);
        let (_, st) = instance_normalize(&x).unwrap();
        let back = instance_denormalize(&SeriesBatch::univariate(&[0.0; 3]), &st).unwrap();
        assert_eq!(back.as_slice(), &[2.0; 3]);
        let back =
            instance_denormalize(&SeriesBatch::univariate(&[-1.224745, 0.0, 1.224745]), &st).unwrap();
        for (a, b) in back.as_slice().iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-4);
        }
        let wrong = SeriesBatch::zeros(1, 3, 2);
        assert!(instance_denormalize(&wrong, &st).is_err());
    }

    #[test]
    fn batchnorm_examples() {
        let mut p = BatchNormParams::new(1);
        let x = Matrix::from_rows(&[&[5.0], &[-2.0]]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut p, false).unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-4 * b.abs());
        }

        let x = Matrix::from_rows(&[&[1.0], &[3.0]]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut p, true).unwrap();
        assert!((y.get(0, 0) + 1.0).abs() < 1e-5 && (y.get(1, 0) - 1.0).abs() < 1e-5);
        assert!((p.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((p.running_var[0] - 1.0).abs() < 1e-15);

        let mut p = BatchNormParams::new(2);
        p.gamma = vec![0.0, 0.0];
        p.beta = vec![0.5, -1.0];
        let x = Matrix::from_rows(&[&[1.0, 7.0], &[3.0, 2.0], &[0.0, 1.0]]).unwrap();
        let (y, _) = batchnorm_forward(&x, &mut p, true).unwrap();
        for r in 0..3 {
            assert_eq!(y.row(r), &[0.5, -1.0]);
        }
        let one = Matrix::from_rows(&[&[1.0, 2.0]]).unwrap();
        assert!(batchnorm_forward(&one, &mut p, true).is_err());
    }

    #[test]
    fn batchnorm_backward_contracts() {
        let mut p = BatchNormParams::new(3);
        let x = Matrix::from_rows(&[&[1.0, 2.0, 0.5], &[3.0, -1.0, 0.0], &[0.2, 0.3, 4.0]]).unwrap();
        let (_, cache) = batchnorm_forward(&x, &mut p, true).unwrap();
        let (gx, gg, gb) = batchnorm_backward(&p, &cache, &Matrix::zeros(3, 3)).unwrap();
        assert!(gx.as_slice().iter().chain(&gg).chain(&gb).all(|&v| v == 0.0));

        let g = Matrix::from_rows(&[&[0.1, -2.0, 3.0], &[1.5, 0.25, -1.0], &[0.7, 0.7, 0.7]]).unwrap();
        let (_, _, gb) = batchnorm_backward(&p, &cache, &g).unwrap();
        for j in 0..3 {
            let sum: f64 = (0..3).map(|r| g.get(r, j)).sum();
            assert_eq!(gb[j], sum);
        }

        let (_, eval_cache) = batchnorm_forward(&x, &mut p, false).unwrap();
        assert!(batchnorm_backward(&p, &eval_cache, &g).is_err());
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs_positive_level(xs in proptest::collection::vec(40.0f64..60.0, 1..60), half in 0usize..6) {
            // trend and value within a factor of two: the subtraction is exact
            let window = 2 * half + 1;
            prop_assume!(window <= 2 * xs.len());
            let k = DecompKernel::uniform(window).unwrap();
            let (t, s) = decompose_series(&xs, &k).unwrap();
            for i in 0..xs.len() {
                prop_assert_eq!(t[i] + s[i], xs[i]);
            }
        }

        #[test]
        fn decomposition_reconstructs_to_rounding(xs in proptest::collection::vec(-1e3f64..1e3, 1..60), half in 0usize..6) {
            let window = 2 * half + 1;
            prop_assume!(window <= 2 * xs.len());
            let k = DecompKernel::uniform(window).unwrap();
            let (t, s) = decompose_series(&xs, &k).unwrap();
            for i in 0..xs.len() {
                let scale = t[i].abs().max(xs[i].abs());
                prop_assert!((t[i] + s[i] - xs[i]).abs() <= scale * f64::EPSILON);
            }
        }

        #[test]
        fn decomposition_shift_equivariant(xs in proptest::collection::vec(-10.0f64..10.0, 5..40), c in -10.0f64..10.0) {
            let k = DecompKernel::uniform(5).unwrap();
            let (t, s) = decompose_series(&xs, &k).unwrap();
            let shifted: Vec<f64> = xs.iter().map(|v| v + c).collect();
            let (t2, s2) = decompose_series(&shifted, &k).unwrap();
            for i in 0..xs.len() {
                prop_assert!((t2[i] - t[i] - c).abs() < 1e-12);
                prop_assert!((s2[i] - s[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn instance_norm_round_trip(xs in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
            let x = SeriesBatch::univariate(&xs);
            let (y, st) = instance_normalize(&x).unwrap();
            let back = instance_denormalize(&y, &st).unwrap();
            for (a, b) in back.as_slice().iter().zip(&xs) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
