//! Dataset loading, chronological splits, sliding windows, synthetic data,
//! the repeat-last baseline and test-set evaluation.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::series::SeriesBatch;

/// A `timesteps × channels` table, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    values: Vec<f64>,
    timesteps: usize,
    pub granularity: Option<String>,
}

impl Dataset {
    pub fn new(names: Vec<String>, timesteps: usize, values: Vec<f64>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::contract("dataset needs at least one channel"));
        }
        if values.len() != timesteps * names.len() {
            return Err(Error::contract(format!(
                "dataset {timesteps}x{} needs {} values, got {}",
                names.len(),
                timesteps * names.len(),
                values.len()
            )));
        }
        Ok(Dataset {
            names,
            values,
            timesteps,
            granularity: None,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let m = self.channels();
        &self.values[t * m..(t + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, c: usize) -> f64 {
        self.values[t * self.channels() + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.timesteps).map(|t| self.get(t, c)).collect()
    }

    /// Rows `[start, end)` as a new dataset.
    pub fn slice_rows(&self, start: usize, end: usize) -> Dataset {
        let m = self.channels();
        Dataset {
            names: self.names.clone(),
            values: self.values[start * m..end * m].to_vec(),
            timesteps: end - start,
            granularity: self.granularity.clone(),
        }
    }

    /// Appends the rows of `other` (same channels) after this dataset's.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.channels() != self.channels() {
            return Err(Error::contract("cannot concatenate datasets with different channels"));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(Dataset {
            names: self.names.clone(),
            values,
            timesteps: self.timesteps + other.timesteps,
            granularity: self.granularity.clone(),
        })
    }
}

/// Reads a comma-separated numeric table. `date_column`, when given, is
/// skipped. Blank or non-numeric cells are errors reported with 1-based file
/// row and column numbers.
pub fn load_csv(path: &Path, has_header: bool, date_column: Option<usize>) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut names: Option<Vec<String>> = None;
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut timesteps = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        let cells: Vec<(usize, &str)> = record
            .iter()
            .enumerate()
            .filter(|(c, _)| Some(*c) != date_column)
            .collect();
        if i == 0 && has_header {
            names = Some(cells.iter().map(|(_, s)| s.trim().to_string()).collect());
            width = Some(cells.len());
            continue;
        }
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w {
            return Err(Error::Parse {
                row,
                column: cells.len() + 1,
                message: format!("expected {w} value columns, found {}", cells.len()),
            });
        }
        for (c, cell) in cells {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: if cell.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("not a number: {cell:?}")
                },
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values.push(v);
        }
        timesteps += 1;
    }
    if timesteps == 0 {
        return Err(Error::Parse {
            row: 0,
            column: 0,
            message: format!("{} contains no data rows", path.display()),
        });
    }
    let width = width.unwrap_or(0);
    let names = names.unwrap_or_else(|| (0..width).map(|c| format!("ch{c}")).collect());
    Dataset::new(names, timesteps, values)
}

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const ETT: SplitRatios = SplitRatios { train: 0.6, val: 0.2, test: 0.2 };
    pub const STANDARD: SplitRatios = SplitRatios { train: 0.7, val: 0.1, test: 0.2 };

    /// ETT-family datasets use 60/20/20, everything else 70/10/20.
    pub fn for_dataset(name: &str) -> SplitRatios {
        if name.to_ascii_lowercase().starts_with("ett") {
            Self::ETT
        } else {
            Self::STANDARD
        }
    }
}

/// Contiguous train, validation and test segments, in that order.
pub fn chronological_split(ds: &Dataset, ratios: SplitRatios) -> Result<(Dataset, Dataset, Dataset)> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !r.is_finite() || *r < 0.0) || train <= 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be nonnegative with a positive train share, got {train}/{val}/{test}"
        )));
    }
    if train + val + test > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "split ratios sum to {}, more than 1",
            train + val + test
        )));
    }
    let n = ds.timesteps() as f64;
    let a = ((train * n).floor() as usize).min(ds.timesteps());
    let b = (((train + val) * n).floor() as usize).clamp(a, ds.timesteps());
    let c = (((train + val + test) * n).floor() as usize).clamp(b, ds.timesteps());
    Ok((ds.slice_rows(0, a), ds.slice_rows(a, b), ds.slice_rows(b, c)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        WindowSpec { lookback, horizon, stride: 1 }
    }
}

/// Sliding `(input, target)` windows over a dataset. Windows are cut on
/// demand; only offsets are stored.
#[derive(Clone, Debug)]
pub struct WindowSet {
    data: Dataset,
    spec: WindowSpec,
    offsets: Vec<usize>,
}

pub fn make_windows(ds: &Dataset, spec: WindowSpec) -> Result<WindowSet> {
    if spec.lookback == 0 || spec.horizon == 0 || spec.stride == 0 {
        return Err(Error::Config("lookback, horizon and stride must be at least 1".into()));
    }
    let need = spec.lookback + spec.horizon;
    if ds.timesteps() < need {
        return Err(Error::Config(format!(
            "series has {} timesteps but lookback {} + horizon {} needs {need}",
            ds.timesteps(),
            spec.lookback,
            spec.horizon
        )));
    }
    let count = (ds.timesteps() - need) / spec.stride + 1;
    Ok(WindowSet {
        data: ds.clone(),
        spec,
        offsets: (0..count).map(|i| i * spec.stride).collect(),
    })
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn spec(&self) -> WindowSpec {
        self.spec
    }

    pub fn channels(&self) -> usize {
        self.data.channels()
    }

    /// Starting row of window `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Keeps only the windows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> WindowSet {
        WindowSet {
            data: self.data.clone(),
            spec: self.spec,
            offsets: indices.iter().map(|&i| self.offsets[i]).collect(),
        }
    }

    fn rows(&self, start: usize, len: usize, out: &mut Vec<f64>) {
        for t in start..start + len {
            out.extend_from_slice(self.data.row(t));
        }
    }

    /// Inputs (`B × L × m`) and targets (`B × T × m`) for the given windows.
    pub fn batch(&self, indices: &[usize]) -> (SeriesBatch, SeriesBatch) {
        let (l, h, m) = (self.spec.lookback, self.spec.horizon, self.channels());
        let mut xs = Vec::with_capacity(indices.len() * l * m);
        let mut ys = Vec::with_capacity(indices.len() * h * m);
        for &i in indices {
            let o = self.offsets[i];
            self.rows(o, l, &mut xs);
            self.rows(o + l, h, &mut ys);
        }
        let mut x = SeriesBatch::from_vec(indices.len(), l, m, xs).expect("window shape");
        let mut y = SeriesBatch::from_vec(indices.len(), h, m, ys).expect("window shape");
        x.channel_names = self.data.names.clone();
        y.channel_names = self.data.names.clone();
        (x, y)
    }

    pub fn get(&self, i: usize) -> (SeriesBatch, SeriesBatch) {
        self.batch(&[i])
    }
}

/// Per-channel z-scoring fitted on a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population statistics per channel; constant channels get unit scale.
    pub fn fit(ds: &Dataset) -> Scaler {
        let (mean, std) = (0..ds.channels())
            .map(|c| {
                let (mu, sd) = crate::series::mean_std(&ds.column(c));
                (mu, if sd > 0.0 { sd } else { 1.0 })
            })
            .unzip();
        Scaler { mean, std }
    }

    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds.channels())?;
        let m = ds.channels();
        let values = ds
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.mean[i % m]) / self.std[i % m])
            .collect();
        Ok(Dataset { values, ..ds.clone() })
    }

    /// Maps a batch in scaled units back to data units, in place.
    pub fn inverse_batch(&self, batch: &mut SeriesBatch) -> Result<()> {
        let m = batch.channels();
        self.check(m)?;
        for (i, v) in batch.as_mut_slice().iter_mut().enumerate() {
            *v = *v * self.std[i % m] + self.mean[i % m];
        }
        Ok(())
    }

    pub fn transform_batch(&self, batch: &mut SeriesBatch) -> Result<()> {
        let m = batch.channels();
        self.check(m)?;
        for (i, v) in batch.as_mut_slice().iter_mut().enumerate() {
            *v = (*v - self.mean[i % m]) / self.std[i % m];
        }
        Ok(())
    }

    fn check(&self, m: usize) -> Result<()> {
        if self.mean.len() != m {
            return Err(Error::contract(format!(
                "scaler fitted on {} channels applied to {m}",
                self.mean.len()
            )));
        }
        Ok(())
    }
}

/// Sine waves of distinct periods plus a slow linear trend and Gaussian
/// noise, one channel per period.
pub fn synth_sine_trend(n: usize, m: usize, noise_sd: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distinct = m.min(41);
    let mut periods: Vec<f64> = sample(&mut rng, 41, distinct)
        .into_iter()
        .map(|i| (20 + i) as f64)
        .collect();
    while periods.len() < m {
        periods.push(rng.random_range(20.0..=60.0));
    }
    synth_with_periods(n, &periods, noise_sd, &mut rng)
}

/// As [`synth_sine_trend`] with explicit periods.
pub fn synth_sine_trend_with_periods(n: usize, periods: &[f64], noise_sd: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth_with_periods(n, periods, noise_sd, &mut rng)
}

fn synth_with_periods(n: usize, periods: &[f64], noise_sd: f64, rng: &mut ChaCha8Rng) -> Dataset {
    let m = periods.len();
    let noise = Normal::new(0.0, noise_sd.max(0.0)).expect("valid normal");
    let mut values = Vec::with_capacity(n * m);
    for t in 0..n {
        for &p in periods {
            let tf = t as f64;
            let mut v = (2.0 * std::f64::consts::PI * tf / p).sin() + 0.001 * tf;
            if noise_sd > 0.0 {
                v += noise.sample(rng);
            }
            values.push(v);
        }
    }
    let mut ds = Dataset::new((0..m).map(|c| format!("sine{c}")).collect(), n, values)
        .expect("consistent shape");
    ds.granularity = Some("synthetic".into());
    ds
}

/// Forecasts every future step as the last observed row.
pub fn naive_repeat_last(input: &SeriesBatch, horizon: usize) -> SeriesBatch {
    let (b_count, l, m) = input.shape();
    let mut out = SeriesBatch::zeros(b_count, horizon, m);
    for b in 0..b_count {
        for c in 0..m {
            let last = input.get(b, l - 1, c);
            for t in 0..horizon {
                out.set(b, t, c, last);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Running sums of squared and absolute errors, accumulated in window order.
#[derive(Default)]
struct ErrorSums {
    sq: f64,
    abs: f64,
    count: usize,
}

impl ErrorSums {
    fn add(&mut self, pred: &SeriesBatch, target: &SeriesBatch) {
        for (p, t) in pred.as_slice().iter().zip(target.as_slice()) {
            let e = p - t;
            self.sq += e * e;
            self.abs += e.abs();
        }
        self.count += pred.as_slice().len();
    }

    fn finish(self) -> Metrics {
        let n = self.count.max(1) as f64;
        Metrics {
            mse: self.sq / n,
            mae: self.abs / n,
        }
    }
}

/// Eval-mode forward over every window; errors are averaged over all
/// elements of all windows.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    windows: &WindowSet,
    batch_size: usize,
) -> Result<Metrics> {
    evaluate_with(windows, batch_size, |x| Ok(forward(params, config, x, false)?.0))
}

/// Metrics of the repeat-last baseline on the same windows.
pub fn evaluate_naive(windows: &WindowSet) -> Metrics {
    let h = windows.spec().horizon;
    evaluate_with(windows, 64, |x| Ok(naive_repeat_last(x, h))).expect("baseline is infallible")
}

fn evaluate_with(
    windows: &WindowSet,
    batch_size: usize,
    mut predict: impl FnMut(&SeriesBatch) -> Result<SeriesBatch>,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::contract("evaluation needs at least one window"));
    }
    let batch_size = batch_size.max(1);
    let mut sums = ErrorSums::default();
    let idx: Vec<usize> = (0..windows.len()).collect();
    for chunk in idx.chunks(batch_size) {
        let (x, y) = windows.batch(chunk);
        let pred = predict(&x)?;
        sums.add(&pred, &y);
    }
    Ok(sums.finish())
}

/// Writes `window_index,horizon_step,channel,y_true,y_pred` rows.
pub fn write_predictions_csv(
    out: &mut impl Write,
    rows: impl IntoIterator<Item = (usize, SeriesBatch, SeriesBatch)>,
) -> std::io::Result<usize> {
    writeln!(out, "window_index,horizon_step,channel,y_true,y_pred")?;
    let mut count = 0;
    for (w, truth, pred) in rows {
        for t in 0..truth.time() {
            for c in 0..truth.channels() {
                let name = truth
                    .channel_names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| c.to_string());
                writeln!(out, "{w},{t},{name},{},{}", truth.get(0, t, c), pred.get(0, t, c))?;
                count += 1;
            }
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn counting(n: usize, m: usize) -> Dataset {
        Dataset::new(
            (0..m).map(|c| format!("c{c}")).collect(),
            n,
            (0..n * m).map(|v| v as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn load_with_header() {
        let f = write_tmp("a,b\n1,2\n3,4\n5.5,-6\n");
        let ds = load_csv(f.path(), true, None).unwrap();
        assert_eq!(ds.timesteps(), 3);
        assert_eq!(ds.names, vec!["a", "b"]);
        assert_eq!(ds.row(2), &[5.5, -6.0]);
    }

    #[test]
    fn load_reports_blank_cell() {
        let f = write_tmp("a,b\n1,2\n3,\n");
        match load_csv(f.path(), true, None).unwrap_err() {
            Error::Parse { row, column, .. } => assert_eq!((row, column), (3, 2)),
            e => panic!("{e}"),
        }
        let f = write_tmp("");
        assert!(load_csv(f.path(), false, None).is_err());
    }

    #[test]
    fn load_skips_date_column() {
        let mut s = String::from("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n");
        for i in 0..4 {
            s.push_str(&format!("2016-07-01 0{i}:00:00,5.8,2.0,1.5,0.4,4.2,1.3,30.5\n"));
        }
        let f = write_tmp(&s);
        let ds = load_csv(f.path(), true, Some(0)).unwrap();
        assert_eq!(ds.channels(), 7);
        assert_eq!(ds.names[6], "OT");
        let ds = load_csv(&write_tmp("1,2\n3,4\n").path().to_path_buf(), false, None);
        assert_eq!(ds.unwrap().names, vec!["ch0", "ch1"]);
    }

    #[test]
    fn split_lengths() {
        let (a, b, c) = chronological_split(&counting(10, 1), SplitRatios::ETT).unwrap();
        assert_eq!((a.timesteps(), b.timesteps(), c.timesteps()), (6, 2, 2));
        let whole = SplitRatios { train: 1.0, val: 0.0, test: 0.0 };
        let (a, b, c) = chronological_split(&counting(10, 1), whole).unwrap();
        assert_eq!((a.timesteps(), b.timesteps(), c.timesteps()), (10, 0, 0));
        let (a, b, c) = chronological_split(&counting(17_420, 1), SplitRatios::ETT).unwrap();
        assert_eq!((a.timesteps(), b.timesteps(), c.timesteps()), (10_452, 3_484, 3_484));
        assert!(chronological_split(&counting(10, 1), SplitRatios { train: 0.8, val: 0.3, test: 0.1 }).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let ds = counting(37, 3);
        let (a, b, c) = chronological_split(&ds, SplitRatios::STANDARD).unwrap();
        assert_eq!(a.concat(&b).unwrap().concat(&c).unwrap(), ds);
    }

    #[test]
    fn window_counts_and_indices() {
        let ds = counting(10, 1);
        let w = make_windows(&ds, WindowSpec::new(4, 2)).unwrap();
        assert_eq!(w.len(), 5);
        let w = make_windows(&counting(6, 1), WindowSpec::new(4, 2)).unwrap();
        assert_eq!(w.len(), 1);
        let (x, y) = w.get(0);
        assert_eq!(x.get(0, 3, 0), 3.0);
        assert_eq!(y.get(0, 0, 0), 4.0);
        let err = make_windows(&counting(5, 1), WindowSpec::new(4, 2)).unwrap_err().to_string();
        assert!(err.contains('5') && err.contains('6'), "{err}");
        let strided = make_windows(&ds, WindowSpec { lookback: 4, horizon: 2, stride: 2 }).unwrap();
        assert_eq!(strided.len(), 3);
    }

    #[test]
    fn windows_tile_the_dataset() {
        let ds = counting(30, 2);
        let w = make_windows(&ds, WindowSpec::new(5, 3)).unwrap();
        for o in 0..w.len() {
            let (x, y) = w.get(o);
            for r in 0..5 {
                assert_eq!(x.get(0, r, 1), ds.get(o + r, 1));
            }
            for r in 0..3 {
                assert_eq!(y.get(0, r, 0), ds.get(o + 5 + r, 0));
            }
        }
    }

    #[test]
    fn synthetic_examples() {
        let ds = synth_sine_trend_with_periods(100, &[40.0], 0.0, 1);
        assert_eq!(ds.get(0, 0), 0.0);
        for t in 0..60 {
            let d = ds.get(t + 40, 0) - ds.get(t, 0);
            assert!((d - 0.04).abs() < 1e-12);
        }
        assert_eq!(synth_sine_trend(50, 3, 0.1, 9), synth_sine_trend(50, 3, 0.1, 9));
        assert_ne!(synth_sine_trend(50, 3, 0.1, 9), synth_sine_trend(50, 3, 0.1, 10));
    }

    #[test]
    fn synthetic_periods_are_distinct_integers() {
        let ds = synth_sine_trend(400, 5, 0.0, 4);
        // each channel repeats (up to trend) after some integer period in [20, 60]
        let mut found = Vec::new();
        for c in 0..5 {
            let col = ds.column(c);
            let p = (20..=60)
                .find(|&p| (0..100).all(|t| (col[t + p] - col[t] - 0.001 * p as f64).abs() < 1e-9))
                .expect("integer period");
            found.push(p);
        }
        found.sort();
        found.dedup();
        assert_eq!(found.len(), 5);
    }

    #[test]
    fn naive_examples() {
        let x = SeriesBatch::from_vec(1, 2, 2, vec![1.0, 1.0, 5.0, -2.0]).unwrap();
        let y = naive_repeat_last(&x, 3);
        for t in 0..3 {
            assert_eq!((y.get(0, t, 0), y.get(0, t, 1)), (5.0, -2.0));
        }
        assert_eq!(naive_repeat_last(&x, 1).shape(), (1, 1, 2));
        let flat = Dataset::new(vec!["a".into()], 20, vec![3.0; 20]).unwrap();
        let w = make_windows(&flat, WindowSpec::new(5, 4)).unwrap();
        assert_eq!(evaluate_naive(&w).mse, 0.0);
    }

    #[test]
    fn scaler_round_trip() {
        let ds = counting(10, 2);
        let s = Scaler::fit(&ds);
        let z = s.transform(&ds).unwrap();
        let (mu, sd) = crate::series::mean_std(&z.column(1));
        assert!(mu.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
        let mut b = SeriesBatch::from_vec(1, 10, 2, z.values().to_vec()).unwrap();
        s.inverse_batch(&mut b).unwrap();
        for (a, e) in b.as_slice().iter().zip(ds.values()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_csv_rows() {
        let t = SeriesBatch::from_vec(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        let n = write_predictions_csv(&mut buf, vec![(0, t.clone(), t.clone()), (1, t.clone(), t)]).unwrap();
        assert_eq!(n, 4);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("window_index,horizon_step,channel,y_true,y_pred\n"));
    }
}
