//! Command-line front end: `train`, `evaluate`, `forecast`, `gradcheck` and
//! `decompose`.
//!
//! Settings come from a flat `key = value` file (`--config`, `#` starts a
//! comment) and from `--key value` flags, which win. Every key has a flag of
//! the same name. The resolved settings are printed before the command runs
//! and written to `config.resolved` in the output directory, in the same
//! format, so a run can be replayed with `--config out/config.resolved`.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde::Serialize;

use crate::data::{
    chronological_split, evaluate, evaluate_naive, load_csv, make_windows, synth_sine_trend,
    write_predictions_csv, Dataset, Metrics, Scaler, SplitRatios, WindowSet, WindowSpec,
};
use crate::error::{Error, Result};
use crate::mlstm::Denominator;
use crate::model::{checkpoint, forward, select_backend, Backend, ModelConfig, ModelParams};
use crate::series::{decompose_series, DecompKernel, SeriesBatch};
use crate::slstm::ForgetGate;
use crate::training::{grad_check, train, GradCheckOptions, TrainOptions};

/// Exit status when a gradient check finds a mismatch.
pub const EXIT_GRADCHECK_FAILED: i32 = 1;

const SUBCOMMANDS: [(&str, &str); 5] = [
    ("train", "Fit a model and write a checkpoint and training report"),
    ("evaluate", "Score a checkpoint on the test split"),
    ("forecast", "Forecast the horizon after the last rows of an input CSV"),
    ("gradcheck", "Compare analytic gradients with finite differences"),
    ("decompose", "Split every column of a CSV into trend and seasonal parts"),
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Bool,
    Value,
}

struct Key {
    name: &'static str,
    default: &'static str,
    kind: Kind,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, kind: Kind::Value, help }
}

const fn flag(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default, kind: Kind::Bool, help }
}

const KEYS: &[Key] = &[
    key("data", "synthetic", "dataset CSV path, or `synthetic`"),
    flag("has-header", "true", "first CSV row holds channel names"),
    key("date-column", "none", "zero-based column to ignore, or `none`"),
    key("split", "auto", "train,val,test ratios; `auto` picks 0.6,0.2,0.2 for ETT files, else 0.7,0.1,0.2"),
    flag("standardize", "true", "z-score every channel with train-split statistics"),
    flag("borrow-context", "false", "let val/test windows read the preceding split's last lookback rows"),
    key("stride", "1", "offset between consecutive windows"),
    key("synth-n", "2000", "synthetic series length"),
    key("synth-channels", "2", "synthetic channel count"),
    key("synth-noise", "0.05", "synthetic noise standard deviation"),
    key("lookback", "96", "input window length"),
    key("horizon", "24", "forecast length"),
    key("hidden", "64", "hidden width of the recurrent cell"),
    key("steps", "16", "recurrence length of the projected window"),
    key("backend", "auto", "slstm, mlstm, or auto (mlstm from 100 channels)"),
    key("kernel-window", "25", "odd moving-average window for the trend"),
    flag("learnable-kernel", "false", "train the moving-average weights"),
    key("forget", "sigmoid", "forget gate activation: sigmoid or exp"),
    key("denominator", "abs", "mlstm readout denominator: abs for max(|n.q|,1), strict for max(n.q,1)"),
    flag("revin", "true", "normalize inputs per instance and denormalize forecasts"),
    flag("literal-instnorm", "false", "instance-normalize the forecast itself instead of revin"),
    flag("bypass-cell", "false", "diagnostic linear model without batch norm and cell"),
    key("epochs", "20", "maximum training epochs"),
    key("batch-size", "32", "windows per batch"),
    key("lr", "1e-4", "Adam learning rate"),
    key("patience", "5", "epochs without validation improvement before stopping"),
    key("clip", "5.0", "global gradient-norm clip, or `none`"),
    key("seed", "0", "seed for data synthesis, initialization and shuffling"),
    key("out", "out", "output directory"),
    key("checkpoint", "auto", "checkpoint path; `auto` means <out>/model.ckpt"),
    key("input", "none", "input CSV for forecast and decompose"),
    key("gradcheck-step", "1e-5", "central-difference step"),
    key("gradcheck-tolerance", "1e-4", "maximum accepted relative error"),
    flag("corrupt-gradient", "false", "test hook: perturb the analytic gradient"),
];

/// Defaults that differ per subcommand.
fn command_default(command: &str, key: &str) -> Option<&'static str> {
    match (command, key) {
        ("gradcheck", "lookback") => Some("16"),
        ("gradcheck", "horizon") => Some("4"),
        ("gradcheck", "hidden") => Some("8"),
        ("gradcheck", "steps") => Some("4"),
        ("gradcheck", "synth-channels") => Some("2"),
        ("gradcheck", "batch-size") => Some("2"),
        _ => None,
    }
}

fn build_cli() -> Command {
    let mut root = Command::new("xlstmtime")
        .about("Long-horizon forecasting with sLSTM/mLSTM cells")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("flat key = value settings file"),
        );
        for k in KEYS {
            let mut arg = Arg::new(k.name)
                .long(k.name)
                .help(format!("{} [default: {}]", k.help, command_default(name, k.name).unwrap_or(k.default)))
                .action(ArgAction::Set);
            if k.kind == Kind::Bool {
                arg = arg
                    .value_name("BOOL")
                    .num_args(0..=1)
                    .default_missing_value("true");
            }
            sub = sub.arg(arg);
        }
        root = root.subcommand(sub);
    }
    root
}

/// Parses `key = value` lines. Keys may use `-` or `_`.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim().replace('_', "-");
        if !KEYS.iter().any(|key| key.name == k) {
            return Err(Error::Config(format!("config line {}: unknown key `{k}`", i + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("config line {}: `{k}` set twice", i + 1)));
        }
    }
    Ok(out)
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: String,
    values: BTreeMap<&'static str, String>,
    explicit: BTreeSet<&'static str>,
}

impl RunConfig {
    /// Layers defaults, the config file and flags, in that order.
    pub fn resolve(command: &str, file: &BTreeMap<String, String>, flags: &BTreeMap<String, String>) -> Self {
        let mut values = BTreeMap::new();
        let mut explicit = BTreeSet::new();
        for k in KEYS {
            let v = if let Some(v) = flags.get(k.name).or_else(|| file.get(k.name)) {
                explicit.insert(k.name);
                v.clone()
            } else {
                command_default(command, k.name).unwrap_or(k.default).to_string()
            };
            values.insert(k.name, v);
        }
        RunConfig {
            command: command.to_string(),
            values,
            explicit,
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unknown key {key}"))
    }

    fn set(&mut self, key: &'static str, value: String) {
        self.values.insert(key, value);
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// `key = value` lines in declaration order.
    pub fn echo(&self) -> String {
        let mut s = format!("# xlstmtime {}\n", self.command);
        for k in KEYS {
            s.push_str(&format!("{} = {}\n", k.name, self.get(k.name)));
        }
        s
    }

    fn as_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = KEYS
            .iter()
            .map(|k| (k.name.to_string(), serde_json::Value::String(self.get(k.name).to_string())))
            .collect();
        serde_json::Value::Object(map)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key).to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Ok(true),
            "false" | "no" | "off" | "0" => Ok(false),
            v => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
        }
    }

    fn optional_path(&self, key: &str) -> Option<PathBuf> {
        match self.get(key) {
            "none" | "" => None,
            v => Some(PathBuf::from(v)),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.get("checkpoint") {
            "auto" => self.out_dir().join("model.ckpt"),
            v => PathBuf::from(v),
        }
    }

    fn date_column(&self) -> Result<Option<usize>> {
        match self.get("date-column") {
            "none" => Ok(None),
            _ => self.parse("date-column").map(Some),
        }
    }

    fn split(&self) -> Result<SplitRatios> {
        let v = self.get("split");
        if v == "auto" {
            let stem = Path::new(self.get("data"))
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            return Ok(SplitRatios::for_dataset(&stem));
        }
        let parts: Vec<f64> = v
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("split: cannot parse `{v}`")))?;
        match parts[..] {
            [train, val, test] => Ok(SplitRatios { train, val, test }),
            _ => Err(Error::Config(format!("split: expected three ratios, got `{v}`"))),
        }
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let clip = match self.get("clip") {
            "none" | "off" => None,
            _ => Some(self.parse::<f64>("clip")?).filter(|c| *c > 0.0),
        };
        Ok(TrainOptions {
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch-size")?,
            lr: self.parse("lr")?,
            patience: self.parse("patience")?,
            clip,
            seed: self.parse("seed")?,
        })
    }

    /// Model settings for a dataset with `channels` channels and
    /// `timesteps` rows.
    pub fn model_config(&self, channels: usize, timesteps: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(self.parse("lookback")?, self.parse("horizon")?, channels, self.parse("hidden")?);
        c.steps = self.parse("steps")?;
        c.backend = match self.get("backend") {
            "auto" => select_backend(channels, timesteps),
            "slstm" => Backend::SLstm,
            "mlstm" => Backend::MLstm,
            v => return Err(Error::Config(format!("backend: expected slstm, mlstm or auto, got `{v}`"))),
        };
        c.kernel_window = self.parse("kernel-window")?;
        c.learnable_kernel = self.flag("learnable-kernel")?;
        c.forget = match self.get("forget") {
            "sigmoid" => ForgetGate::Sigmoid,
            "exp" => ForgetGate::Exp,
            v => return Err(Error::Config(format!("forget: expected sigmoid or exp, got `{v}`"))),
        };
        c.denominator = match self.get("denominator") {
            "abs" => Denominator::Abs,
            "strict" => Denominator::Strict,
            v => return Err(Error::Config(format!("denominator: expected abs or strict, got `{v}`"))),
        };
        c.revin = self.flag("revin")?;
        c.literal_instnorm = self.flag("literal-instnorm")?;
        if c.literal_instnorm && !self.is_explicit("revin") {
            c.revin = false;
        }
        c.bypass_cell = self.flag("bypass-cell")?;
        c.seed = self.parse("seed")?;
        c.validate()?;
        Ok(c)
    }

    /// Loads the configured CSV or synthesizes a series.
    pub fn load_dataset(&self) -> Result<Dataset> {
        match self.get("data") {
            "synthetic" => Ok(synth_sine_trend(
                self.parse("synth-n")?,
                self.parse("synth-channels")?,
                self.parse("synth-noise")?,
                self.parse("seed")?,
            )),
            path => load_csv(Path::new(path), self.flag("has-header")?, self.date_column()?),
        }
    }

    fn load_input(&self) -> Result<Dataset> {
        let path = self
            .optional_path("input")
            .ok_or_else(|| Error::Config(format!("{} needs --input <CSV>", self.command)))?;
        load_csv(&path, self.flag("has-header")?, self.date_column()?)
    }
}

/// Train/val/test windows on the (optionally standardized) dataset.
struct Prepared {
    train: WindowSet,
    val: WindowSet,
    test: WindowSet,
    scaler: Option<Scaler>,
    names: Vec<String>,
    channels: usize,
    timesteps: usize,
}

fn prepare(run: &RunConfig, lookback: usize, horizon: usize, scaler: Option<Scaler>) -> Result<Prepared> {
    let ds = run.load_dataset()?;
    let (train, val, test) = chronological_split(&ds, run.split()?)?;
    let scaler = match scaler {
        Some(s) => Some(s),
        None if run.flag("standardize")? => Some(Scaler::fit(&train)),
        None => None,
    };
    let (train, mut val, mut test) = match &scaler {
        Some(s) => (s.transform(&train)?, s.transform(&val)?, s.transform(&test)?),
        None => (train, val, test),
    };
    if run.flag("borrow-context")? {
        let tail = |d: &Dataset| d.slice_rows(d.timesteps().saturating_sub(lookback), d.timesteps());
        let borrowed_test = tail(&val).concat(&test)?;
        val = tail(&train).concat(&val)?;
        test = borrowed_test;
    }
    let mut spec = WindowSpec::new(lookback, horizon);
    spec.stride = run.parse("stride")?;
    let windows = |d: &Dataset, which: &str| {
        make_windows(d, spec).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{which} split: {msg}")),
            e => e,
        })
    };
    Ok(Prepared {
        train: windows(&train, "train")?,
        val: windows(&val, "validation")?,
        test: windows(&test, "test")?,
        scaler,
        names: ds.names.clone(),
        channels: ds.channels(),
        timesteps: ds.timesteps(),
    })
}

fn scaler_extras(scaler: &Option<Scaler>) -> checkpoint::Extras {
    match scaler {
        Some(s) => vec![("scaler.mean".into(), s.mean.clone()), ("scaler.std".into(), s.std.clone())],
        None => Vec::new(),
    }
}

fn scaler_from_extras(extras: &checkpoint::Extras) -> Option<Scaler> {
    let find = |n: &str| extras.iter().find(|(k, _)| k == n).map(|(_, v)| v.clone());
    Some(Scaler {
        mean: find("scaler.mean")?,
        std: find("scaler.std")?,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn start(run: &RunConfig) -> Result<PathBuf> {
    print!("{}", run.echo());
    let out = run.out_dir();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_file(&out.join("config.resolved"), run.echo().as_bytes())?;
    Ok(out)
}

pub fn cmd_train(run: &RunConfig) -> Result<()> {
    let out = start(run)?;
    let prep = prepare(run, run.parse("lookback")?, run.parse("horizon")?, None)?;
    let config = run.model_config(prep.channels, prep.timesteps)?;
    let opts = run.train_options()?;
    println!(
        "training {} on {} channels: {} train / {} val windows",
        config.backend,
        prep.channels,
        prep.train.len(),
        prep.val.len()
    );
    let (params, report) = train(&config, &prep.train, &prep.val, &opts)?;
    for e in &report.epochs {
        println!(
            "epoch {:>3}  train_mae {:.6}  val_mse {:.6}  val_mae {:.6}  ({:.2}s)",
            e.epoch, e.train_mae, e.val_mse, e.val_mae, e.seconds
        );
    }
    checkpoint::save(&run.checkpoint_path(), &config, &params, &scaler_extras(&prep.scaler))?;
    write_json(&out.join("report.json"), &report)?;
    let timing = serde_json::json!({
        "total_seconds": report.total_seconds(),
        "epoch_seconds": report.epochs.iter().map(|e| e.seconds).collect::<Vec<_>>(),
    });
    write_json(&out.join("timing.json"), &timing)?;
    println!("wrote {}", run.checkpoint_path().display());
    Ok(())
}

/// Loads a checkpoint and fills window settings the user left unset from
/// it; explicitly set values must agree.
fn load_model(run: &mut RunConfig) -> Result<(ModelConfig, ModelParams, checkpoint::Extras)> {
    let path = run.checkpoint_path();
    let (config, params, extras) = checkpoint::load(&path)?;
    for (k, v) in [("lookback", config.lookback), ("horizon", config.horizon), ("hidden", config.hidden)] {
        if !run.is_explicit(k) {
            run.set(k, v.to_string());
        }
    }
    let (l, t): (usize, usize) = (run.parse("lookback")?, run.parse("horizon")?);
    if (l, t) != (config.lookback, config.horizon) {
        return Err(Error::Config(format!(
            "checkpoint maps {}x{} -> {}x{} but the run asks for {l}x{} -> {t}x{}",
            config.lookback, config.channels, config.horizon, config.channels, config.channels, config.channels
        )));
    }
    Ok((config, params, extras))
}

fn check_channels(config: &ModelConfig, l: usize, t: usize, channels: usize) -> Result<()> {
    if channels != config.channels {
        return Err(Error::Config(format!(
            "checkpoint maps {}x{} -> {}x{} but the data gives {l}x{channels} -> {t}x{channels}",
            config.lookback, config.channels, config.horizon, config.channels
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile {
    mse: f64,
    mae: f64,
    naive_mse: f64,
    naive_mae: f64,
    windows: usize,
    standardized: bool,
    seed: u64,
    config: serde_json::Value,
}

pub fn cmd_evaluate(run: &mut RunConfig) -> Result<()> {
    let (config, params, extras) = load_model(run)?;
    let out = start(run)?;
    let prep = prepare(run, config.lookback, config.horizon, scaler_from_extras(&extras))?;
    check_channels(&config, config.lookback, config.horizon, prep.channels)?;
    let batch = run.parse("batch-size")?;
    let Metrics { mse, mae } = evaluate(&params, &config, &prep.test, batch)?;
    let naive = evaluate_naive(&prep.test);
    println!("test mse {mse:.6}  mae {mae:.6}  (repeat-last mse {:.6}  mae {:.6})", naive.mse, naive.mae);
    write_json(
        &out.join("metrics.json"),
        &MetricsFile {
            mse,
            mae,
            naive_mse: naive.mse,
            naive_mae: naive.mae,
            windows: prep.test.len(),
            standardized: prep.scaler.is_some(),
            seed: run.parse("seed")?,
            config: run.as_json(),
        },
    )?;

    let path = out.join("predictions.csv");
    let mut w = create(&path)?;
    let mut failure = None;
    let rows = (0..prep.test.len()).map_while(|i| {
        let (x, mut y) = prep.test.get(i);
        let mut pred = match forward(&params, &config, &x, false) {
            Ok((p, _)) => p,
            Err(e) => {
                failure = Some(e);
                return None;
            }
        };
        if let Some(s) = &prep.scaler {
            s.inverse_batch(&mut y).expect("scaler fits the data");
            s.inverse_batch(&mut pred).expect("scaler fits the data");
        }
        pred.channel_names = prep.names.clone();
        y.channel_names = prep.names.clone();
        Some((i, y, pred))
    });
    let count = write_predictions_csv(&mut w, rows).map_err(|e| Error::io(&path, e))?;
    if let Some(e) = failure {
        return Err(e);
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!("wrote {count} prediction rows to {}", path.display());
    Ok(())
}

pub fn cmd_forecast(run: &mut RunConfig) -> Result<()> {
    let (config, params, extras) = load_model(run)?;
    let out = start(run)?;
    let input = run.load_input()?;
    let l = config.lookback;
    check_channels(&config, l, config.horizon, input.channels())?;
    if input.timesteps() < l {
        return Err(Error::Config(format!(
            "forecast input has {} rows but lookback L={l} rows are required",
            input.timesteps()
        )));
    }
    let tail = input.slice_rows(input.timesteps() - l, input.timesteps());
    let mut x = SeriesBatch::from_vec(1, l, tail.channels(), tail.values().to_vec())?;
    let scaler = scaler_from_extras(&extras);
    if let Some(s) = &scaler {
        s.transform_batch(&mut x)?;
    }
    let (mut pred, _) = forward(&params, &config, &x, false)?;
    if let Some(s) = &scaler {
        s.inverse_batch(&mut pred)?;
    }
    let path = out.join("forecast.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "step,{}", input.names.join(",")).map_err(io)?;
    for t in 0..pred.time() {
        let row: Vec<String> = (0..pred.channels()).map(|c| pred.get(0, t, c).to_string()).collect();
        writeln!(w, "{t},{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    println!("wrote {} forecast rows to {}", pred.time(), path.display());
    Ok(())
}

/// Returns whether every parameter block passed.
pub fn cmd_gradcheck(run: &RunConfig) -> Result<bool> {
    let out = start(run)?;
    let ds = run.load_dataset()?;
    let config = run.model_config(ds.channels(), ds.timesteps())?;
    let windows = make_windows(&ds, WindowSpec::new(config.lookback, config.horizon))?;
    let batch: usize = run.parse::<usize>("batch-size")?.clamp(1, windows.len());
    let idx: Vec<usize> = (0..batch).collect();
    let (x, y) = windows.batch(&idx);
    let opts = GradCheckOptions {
        step: run.parse("gradcheck-step")?,
        tolerance: run.parse("gradcheck-tolerance")?,
        seed: run.parse("seed")?,
        corrupt_analytic: run.flag("corrupt-gradient")?,
        ..GradCheckOptions::default()
    };
    let report = grad_check(&config, &x, &y, &opts)?;
    println!("{:<24} {:>8} {:>14}", "block", "checked", "max_rel_error");
    for b in &report.blocks {
        let verdict = if b.max_rel_error < report.tolerance { "ok" } else { "FAIL" };
        println!("{:<24} {:>8} {:>14.3e}  {verdict}", b.name, b.checked, b.max_rel_error);
    }
    println!(
        "{} backend: max relative error {:.3e} (tolerance {:.0e}): {}",
        config.backend,
        report.max_error(),
        report.tolerance,
        if report.passed() { "PASS" } else { "FAIL" }
    );
    write_json(&out.join("gradcheck.json"), &report)?;
    Ok(report.passed())
}

pub fn cmd_decompose(run: &RunConfig) -> Result<()> {
    let out = start(run)?;
    let window: usize = run.parse("kernel-window")?;
    let kernel = DecompKernel::uniform(window).map_err(|_| {
        Error::Config(format!("kernel-window must be an odd positive integer, got {window}"))
    })?;
    let input = run.load_input()?;
    let mut trend = Vec::with_capacity(input.channels());
    let mut seasonal = Vec::with_capacity(input.channels());
    for c in 0..input.channels() {
        let (t, s) = decompose_series(&input.column(c), &kernel)?;
        trend.push(t);
        seasonal.push(s);
    }
    for (name, cols) in [("trend.csv", &trend), ("seasonal.csv", &seasonal)] {
        let path = out.join(name);
        let mut w = create(&path)?;
        let io = |e| Error::io(&path, e);
        writeln!(w, "{}", input.names.join(",")).map_err(io)?;
        for t in 0..input.timesteps() {
            let row: Vec<String> = cols.iter().map(|col| col[t].to_string()).collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn flags_of(m: &ArgMatches) -> BTreeMap<String, String> {
    KEYS.iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

fn dispatch(command: &str, m: &ArgMatches) -> Result<i32> {
    let file = match m.get_one::<String>("config") {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut run = RunConfig::resolve(command, &file, &flags_of(m));
    match command {
        "train" => cmd_train(&run)?,
        "evaluate" => cmd_evaluate(&mut run)?,
        "forecast" => cmd_forecast(&mut run)?,
        "gradcheck" => {
            if !cmd_gradcheck(&run)? {
                return Ok(EXIT_GRADCHECK_FAILED);
            }
        }
        "decompose" => cmd_decompose(&run)?,
        other => unreachable!("unregistered subcommand {other}"),
    }
    Ok(0)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match build_cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (command, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(command, sub) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
