//! Experiment orchestration: configuration, seeded multi-run execution,
//! aggregation and artifact files.
//!
//! Configs are flat `key = value` text. Later sources override earlier
//! ones: defaults, then the config file, then command-line flags.
//!
//! Every run writes under `out_dir`:
//!
//! ```text
//! summary.csv              method,seed,test_ap,test_auprc
//! aggregate.csv            method,n_seeds,mean_test_ap,std_test_ap,mean_test_auprc,std_test_auprc
//! failures.csv             seed,error            (only when a seed failed)
//! seed_<s>/curve.csv       iter,objective,train_ap,val_ap,grad_norm,wall_ms
//! seed_<s>/pr_curve.csv    threshold,recall,precision
//! seed_<s>/model.ckpt      model checkpoint
//! ```
//!
//! Standard deviations use the unbiased `n - 1` denominator.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{error, info};
use rayon::prelude::*;

use crate::baselines::{baseline_train, baseline_train_with, BaselineSpec};
use crate::data::{gen_gaussians, stratified_split, subsample_positives, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{auprc_trapezoid, average_precision, pr_curve};
use crate::model::{Arch, ScoreModel};
use crate::record::{CurveWriter, RunRecord};
use crate::soap::{theoretical_schedule, SoapConfig, SoapTrainer, UpdateStyle};
use crate::surrogate::SurrogateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SoapSgd,
    SoapAdam,
    SoapAmsgrad,
    Ce,
    CbCe,
    Focal,
}

impl Method {
    pub fn soap_update(self) -> Option<UpdateStyle> {
        match self {
            Method::SoapSgd => Some(UpdateStyle::Sgd),
            Method::SoapAdam => Some(UpdateStyle::Adam),
            Method::SoapAmsgrad => Some(UpdateStyle::AmsGrad),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::SoapSgd => "soap_sgd",
            Method::SoapAdam => "soap_adam",
            Method::SoapAmsgrad => "soap_amsgrad",
            Method::Ce => "ce",
            Method::CbCe => "cb_ce",
            Method::Focal => "focal",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "soap_sgd" => Method::SoapSgd,
            "soap_adam" => Method::SoapAdam,
            "soap_amsgrad" => Method::SoapAmsgrad,
            "ce" => Method::Ce,
            "cb_ce" => Method::CbCe,
            "focal" => Method::Focal,
            other => return Err(Error::usage(format!("unknown method `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    Manual,
    Theoretical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Gaussians {
        n: usize,
        d: usize,
        ratio: f64,
        sep: f64,
    },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Seed for generation, positive subsampling and splitting.
    pub data_seed: u64,
    pub keep: f64,
    /// Train/validation/test fractions.
    pub split: [f64; 3],
    pub arch: Arch,
    pub squash: bool,
    pub method: Method,
    pub surrogate: SurrogateSpec,
    /// Margin used whenever the surrogate is (re)selected as squared hinge.
    pub margin: f64,
    /// Scale used whenever the surrogate is (re)selected as logistic or sigmoid.
    pub scale: f64,
    pub focal_gamma: f64,
    pub cb_beta: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub batch_pos: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub u0: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub epsilon: f64,
    pub schedule: ScheduleMode,
    pub seeds: Vec<u64>,
    pub eval_every: usize,
    /// Cross-entropy pretraining steps before the main method; 0 disables.
    pub warm_start: usize,
    pub nested_batches: bool,
    /// Update rule for baseline methods and warm starts.
    pub baseline_update: UpdateStyle,
    /// Step size for baseline methods and warm starts.
    pub baseline_alpha: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Gaussians {
                n: 4000,
                d: 10,
                ratio: 0.02,
                sep: 1.5,
            },
            data_seed: 0,
            keep: 1.0,
            split: [0.8, 0.1, 0.1],
            arch: Arch::Linear { d_in: 10 },
            squash: true,
            method: Method::SoapAdam,
            surrogate: SurrogateSpec::default(),
            margin: 1.0,
            scale: 1.0,
            focal_gamma: 2.0,
            cb_beta: 0.999,
            iters: 5000,
            batch_size: 64,
            batch_pos: 4,
            alpha: 1e-3,
            gamma: 0.9,
            u0: 0.0,
            eta1: 0.9,
            eta2: 0.999,
            epsilon: 1e-8,
            schedule: ScheduleMode::Manual,
            seeds: vec![0],
            eval_every: 100,
            warm_start: 0,
            nested_batches: false,
            baseline_update: UpdateStyle::Adam,
            baseline_alpha: 1e-3,
            out_dir: None,
        }
    }
}

/// Every key accepted by [`ExperimentConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "data_csv",
    "gen_n",
    "gen_d",
    "gen_ratio",
    "gen_sep",
    "data_seed",
    "keep",
    "split",
    "arch",
    "hidden",
    "squash",
    "method",
    "surrogate",
    "margin",
    "scale",
    "focal_gamma",
    "cb_beta",
    "iters",
    "batch_size",
    "batch_pos",
    "alpha",
    "gamma",
    "u0",
    "eta1",
    "eta2",
    "epsilon",
    "schedule",
    "seeds",
    "eval_every",
    "warm_start",
    "nested_batches",
    "baseline_update",
    "baseline_alpha",
    "out_dir",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "data_csv" => self.data = DataSource::Csv(PathBuf::from(value)),
            "gen_n" | "gen_d" | "gen_ratio" | "gen_sep" => {
                let (mut n, mut d, mut ratio, mut sep) = match self.data {
                    DataSource::Gaussians { n, d, ratio, sep } => (n, d, ratio, sep),
                    DataSource::Csv(_) => (4000, 10, 0.02, 1.5),
                };
                match key {
                    "gen_n" => n = parse_value(key, value)?,
                    "gen_d" => d = parse_value(key, value)?,
                    "gen_ratio" => ratio = parse_value(key, value)?,
                    _ => sep = parse_value(key, value)?,
                }
                self.data = DataSource::Gaussians { n, d, ratio, sep };
            }
            "data_seed" => self.data_seed = parse_value(key, value)?,
            "keep" => self.keep = parse_value(key, value)?,
            "split" => {
                let parts: Vec<f64> = parse_list(key, value)?;
                self.split = parts
                    .try_into()
                    .map_err(|_| Error::usage("split needs exactly three fractions"))?;
            }
            "arch" => {
                let d_in = self.arch.d_in();
                self.arch = match value {
                    "linear" => Arch::Linear { d_in },
                    "mlp" => Arch::Mlp {
                        d_in,
                        hidden: match &self.arch {
                            Arch::Mlp { hidden, .. } => hidden.clone(),
                            Arch::Linear { .. } => vec![16],
                        },
                    },
                    other => return Err(Error::usage(format!("unknown arch `{other}`"))),
                }
            }
            "hidden" => {
                let widths = parse_list(key, value)?;
                self.arch = Arch::Mlp {
                    d_in: self.arch.d_in(),
                    hidden: widths,
                };
            }
            "squash" => self.squash = parse_value(key, value)?,
            "method" => self.method = value.parse()?,
            "surrogate" => {
                self.surrogate =
                    SurrogateSpec::from_parts(value, Some(self.margin), Some(self.scale))?
            }
            "margin" => {
                self.margin = parse_value(key, value)?;
                self.surrogate = SurrogateSpec::from_parts(
                    self.surrogate.kind(),
                    Some(self.margin),
                    Some(self.scale),
                )?;
            }
            "scale" => {
                self.scale = parse_value(key, value)?;
                self.surrogate = SurrogateSpec::from_parts(
                    self.surrogate.kind(),
                    Some(self.margin),
                    Some(self.scale),
                )?;
            }
            "focal_gamma" => self.focal_gamma = parse_value(key, value)?,
            "cb_beta" => self.cb_beta = parse_value(key, value)?,
            "iters" => self.iters = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "batch_pos" => self.batch_pos = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "gamma" => self.gamma = parse_value(key, value)?,
            "u0" => self.u0 = parse_value(key, value)?,
            "eta1" => self.eta1 = parse_value(key, value)?,
            "eta2" => self.eta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "schedule" => {
                self.schedule = match value {
                    "manual" => ScheduleMode::Manual,
                    "theoretical" => ScheduleMode::Theoretical,
                    other => return Err(Error::usage(format!("unknown schedule `{other}`"))),
                }
            }
            "seeds" => self.seeds = parse_list(key, value)?,
            "eval_every" => self.eval_every = parse_value(key, value)?,
            "warm_start" => self.warm_start = parse_value(key, value)?,
            "nested_batches" => self.nested_batches = parse_value(key, value)?,
            "baseline_update" => self.baseline_update = value.parse()?,
            "baseline_alpha" => self.baseline_alpha = parse_value(key, value)?,
            "out_dir" => self.out_dir = Some(PathBuf::from(value)),
            other => return Err(Error::usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Applies every `key = value` line of a config text. Blank lines and
    /// `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Renders the config in the same `key = value` form it is read from.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match &self.data {
            DataSource::Gaussians { n, d, ratio, sep } => {
                kv("gen_n", n.to_string());
                kv("gen_d", d.to_string());
                kv("gen_ratio", ratio.to_string());
                kv("gen_sep", sep.to_string());
            }
            DataSource::Csv(p) => kv("data_csv", p.display().to_string()),
        }
        kv("data_seed", self.data_seed.to_string());
        kv("keep", self.keep.to_string());
        kv("split", join(&self.split));
        match &self.arch {
            Arch::Linear { .. } => kv("arch", "linear".into()),
            Arch::Mlp { hidden, .. } => {
                kv("arch", "mlp".into());
                kv("hidden", join(hidden));
            }
        }
        kv("squash", self.squash.to_string());
        kv("method", self.method.to_string());
        kv("margin", self.margin.to_string());
        kv("scale", self.scale.to_string());
        kv("surrogate", self.surrogate.kind().into());
        kv("focal_gamma", self.focal_gamma.to_string());
        kv("cb_beta", self.cb_beta.to_string());
        kv("iters", self.iters.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("batch_pos", self.batch_pos.to_string());
        kv("alpha", self.alpha.to_string());
        kv("gamma", self.gamma.to_string());
        kv("u0", self.u0.to_string());
        kv("eta1", self.eta1.to_string());
        kv("eta2", self.eta2.to_string());
        kv("epsilon", self.epsilon.to_string());
        let schedule = match self.schedule {
            ScheduleMode::Manual => "manual",
            ScheduleMode::Theoretical => "theoretical",
        };
        kv("schedule", schedule.into());
        kv("seeds", join(&self.seeds));
        kv("eval_every", self.eval_every.to_string());
        kv("warm_start", self.warm_start.to_string());
        kv("nested_batches", self.nested_batches.to_string());
        let update = match self.baseline_update {
            UpdateStyle::Sgd => "sgd",
            UpdateStyle::Adam => "adam",
            UpdateStyle::AmsGrad => "amsgrad",
        };
        kv("baseline_update", update.into());
        kv("baseline_alpha", self.baseline_alpha.to_string());
        if let Some(dir) = &self.out_dir {
            kv("out_dir", dir.display().to_string());
        }
        out
    }

    pub fn baseline_spec(&self) -> Option<BaselineSpec> {
        match self.method {
            Method::Ce => Some(BaselineSpec::Ce),
            Method::CbCe => Some(BaselineSpec::CbCe { beta: self.cb_beta }),
            Method::Focal => Some(BaselineSpec::Focal {
                gamma: self.focal_gamma,
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::usage("at least one seed is required"));
        }
        if self.split.iter().any(|&f| !(f > 0.0))
            || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::usage(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.eval_every == 0 || self.batch_size == 0 || self.batch_pos == 0 {
            return Err(Error::usage(
                "eval_every, batch_size and batch_pos must be >= 1",
            ));
        }
        if let Some(spec) = self.baseline_spec() {
            spec.validated()?;
        }
        self.surrogate.validated()?;
        Ok(())
    }

    /// Loads or generates the dataset and splits it into train/val/test.
    pub fn prepare_data(&self) -> Result<[Dataset; 3]> {
        let full = match &self.data {
            DataSource::Gaussians { n, d, ratio, sep } => {
                gen_gaussians(*n, *d, *ratio, *sep, self.data_seed)?
            }
            DataSource::Csv(path) => Dataset::load_csv(path)?,
        };
        let full = if self.keep < 1.0 {
            subsample_positives(&full, self.keep, self.data_seed)?
        } else {
            full
        };
        let parts = stratified_split(&full, &self.split, self.data_seed)?;
        parts
            .try_into()
            .map_err(|_| Error::Invariant("split did not produce three parts".into()))
    }

    /// SOAP settings for one seed, with the theoretical schedule applied
    /// when requested.
    pub fn soap_config(&self, seed: u64, n_pos: usize) -> Result<SoapConfig> {
        let (alpha, gamma) = match self.schedule {
            ScheduleMode::Manual => (self.alpha, self.gamma),
            ScheduleMode::Theoretical => theoretical_schedule(n_pos, self.iters)?,
        };
        Ok(SoapConfig {
            iters: self.iters,
            batch_size: self.batch_size,
            batch_pos: self.batch_pos,
            alpha,
            gamma,
            u0: self.u0,
            update: self.method.soap_update().unwrap_or(UpdateStyle::Adam),
            eta1: self.eta1,
            eta2: self.eta2,
            epsilon: self.epsilon,
            eval_every: self.eval_every,
            seed,
            nested_batches: self.nested_batches,
        })
    }

    fn baseline_config(&self, seed: u64, iters: usize) -> SoapConfig {
        SoapConfig {
            iters,
            alpha: self.baseline_alpha,
            update: self.baseline_update,
            eval_every: self.eval_every,
            seed,
            batch_size: self.batch_size,
            ..SoapConfig::default()
        }
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub test_ap: f64,
    pub test_auprc: f64,
    pub records: Vec<RunRecord>,
    pub model: ScoreModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub method: Method,
    pub runs: Vec<SeedResult>,
    pub failures: Vec<(u64, String)>,
}

impl ExperimentSummary {
    pub fn test_aps(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.test_ap).collect()
    }

    pub fn mean_test_ap(&self) -> f64 {
        mean(&self.test_aps())
    }

    pub fn std_test_ap(&self) -> f64 {
        sample_std(&self.test_aps())
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,seed,test_ap,test_auprc\n");
        for r in &self.runs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.method, r.seed, r.test_ap, r.test_auprc
            );
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let auprc: Vec<f64> = self.runs.iter().map(|r| r.test_auprc).collect();
        format!(
            "method,n_seeds,mean_test_ap,std_test_ap,mean_test_auprc,std_test_auprc\n{},{},{},{},{},{}\n",
            self.method,
            self.runs.len(),
            self.mean_test_ap(),
            self.std_test_ap(),
            mean(&auprc),
            sample_std(&auprc)
        )
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Standard deviation with the `n - 1` denominator; zero for one sample.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// `sqrt((s_a^2 + s_b^2) / 2)` from the two sample standard deviations.
pub fn pooled_std(a: &[f64], b: &[f64]) -> f64 {
    ((sample_std(a).powi(2) + sample_std(b).powi(2)) / 2.0).sqrt()
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains and evaluates one seed, writing its artifacts into `dir` if given.
fn run_seed(
    config: &ExperimentConfig,
    splits: &[Dataset; 3],
    seed: u64,
    dir: Option<&Path>,
) -> Result<SeedResult> {
    let [train, val, test] = splits;
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut model = ScoreModel::init(
        config.arch.clone().with_input_dim(train.dim()),
        config.squash,
        seed,
    )?;
    if config.warm_start > 0 {
        let warm = config.baseline_config(seed, config.warm_start);
        model = baseline_train(
            &warm,
            train,
            None,
            model,
            BaselineSpec::Ce,
            config.surrogate,
        )?
        .0;
    }

    let mut writer = match dir {
        Some(d) => Some(CurveWriter::create(&d.join("curve.csv"))?),
        None => None,
    };
    let sink = |r: &RunRecord| match writer.as_mut() {
        Some(w) => w.append(r),
        None => Ok(()),
    };
    let (model, records) = match config.baseline_spec() {
        Some(spec) => baseline_train_with(
            &config.baseline_config(seed, config.iters),
            train,
            Some(val),
            model,
            spec,
            config.surrogate,
            sink,
        )?,
        None => {
            let soap = config.soap_config(seed, train.n_pos())?;
            SoapTrainer::new(soap, train, model, config.surrogate)?.run_with(Some(val), sink)?
        }
    };

    let scores = model.forward(test.features())?;
    let test_ap = average_precision(&scores, test.labels())?;
    let curve = pr_curve(&scores, test.labels())?;
    let test_auprc = auprc_trapezoid(&curve)?;
    if let Some(dir) = dir {
        curve.write_csv(&dir.join("pr_curve.csv"))?;
        model.save_checkpoint(&dir.join("model.ckpt"))?;
    }
    Ok(SeedResult {
        seed,
        test_ap,
        test_auprc,
        records,
        model,
    })
}

/// Runs every seed of an experiment in parallel and aggregates test AP.
///
/// A failing seed is recorded and the others proceed; the call errors only
/// when every seed fails.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let splits = config.prepare_data()?;
    if let Some(dir) = &config.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("config.txt"), &config.to_text())?;
    }
    let outcomes: Vec<(u64, Result<SeedResult>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let dir = config
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("seed_{seed}")));
            (seed, run_seed(config, &splits, seed, dir.as_deref()))
        })
        .collect();

    let mut summary = ExperimentSummary {
        method: config.method,
        runs: Vec::new(),
        failures: Vec::new(),
    };
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(run) => {
                info!("{} seed {seed}: test AP {:.4}", config.method, run.test_ap);
                summary.runs.push(run);
            }
            Err(e) => {
                error!("{} seed {seed} failed: {e}", config.method);
                summary.failures.push((seed, e.to_string()));
            }
        }
    }
    if let Some(dir) = &config.out_dir {
        write_file(&dir.join("summary.csv"), &summary.summary_csv())?;
        if !summary.runs.is_empty() {
            write_file(&dir.join("aggregate.csv"), &summary.aggregate_csv())?;
        }
        if !summary.failures.is_empty() {
            let mut text = String::from("seed,error\n");
            for (seed, msg) in &summary.failures {
                let _ = writeln!(text, "{seed},\"{}\"", msg.replace('"', "'"));
            }
            write_file(&dir.join("failures.csv"), &text)?;
        }
    }
    if summary.runs.is_empty() {
        let first = summary
            .failures
            .first()
            .map_or(String::new(), |f| f.1.clone());
        return Err(Error::RunFailed(format!(
            "all {} seeds failed; first error: {first}",
            summary.failures.len()
        )));
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub batch_size: usize,
    pub seed: u64,
    pub test_ap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch_size,seed,test_ap\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.batch_size, r.seed, r.test_ap);
        }
        out
    }

    /// `max - min` of test AP across batch sizes, for each seed.
    pub fn spread_per_seed(&self) -> Vec<(u64, f64)> {
        let mut seeds: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
            .into_iter()
            .map(|s| {
                let aps = self.rows.iter().filter(|r| r.seed == s).map(|r| r.test_ap);
                let (lo, hi) = aps.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
                    (lo.min(a), hi.max(a))
                });
                (s, hi - lo)
            })
            .collect()
    }
}

/// Repeats the experiment for each general batch size `B`.
pub fn batch_size_sweep(config: &ExperimentConfig, sizes: &[usize]) -> Result<SweepTable> {
    if sizes.is_empty() {
        return Err(Error::usage("batch size sweep needs at least one size"));
    }
    let mut rows = Vec::new();
    for &size in sizes {
        let mut cfg = config.clone();
        cfg.batch_size = size;
        cfg.out_dir = config
            .out_dir
            .as_ref()
            .map(|d| d.join(format!("batch_{size}")));
        let summary = run_experiment(&cfg)?;
        rows.extend(summary.runs.iter().map(|r| SweepRow {
            batch_size: size,
            seed: r.seed,
            test_ap: r.test_ap,
        }));
    }
    let table = SweepTable { rows };
    if let Some(dir) = &config.out_dir {
        write_file(&dir.join("sweep.csv"), &table.to_csv())?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    pub n: usize,
    /// `None` when either series is constant.
    pub spearman: Option<f64>,
    pub pearson: Option<f64>,
}

/// Correlation between the logged surrogate objective `-P(w_t)` and train AP.
pub fn consistency_report(records: &[RunRecord]) -> Result<ConsistencyReport> {
    if records.len() < 10 {
        return Err(Error::usage(format!(
            "consistency needs at least 10 records, got {}",
            records.len()
        )));
    }
    let obj: Vec<f64> = records.iter().map(|r| r.objective).collect();
    let ap: Vec<f64> = records.iter().map(|r| r.train_ap).collect();
    Ok(ConsistencyReport {
        n: records.len(),
        spearman: spearman(&obj, &ap),
        pearson: pearson(&obj, &ap),
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Ranks with ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = (start + end - 1) as f64 / 2.0 + 1.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(iter: usize, objective: f64, train_ap: f64) -> RunRecord {
        RunRecord {
            iter,
            objective,
            train_ap,
            val_ap: None,
            grad_norm: 0.0,
            wall_ms: 0,
        }
    }

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "gen_n = 600\ngen_d = 3\ngen_ratio = 0.1\ngen_sep = 1.0\niters = 200\neval_every = 20\nseeds = 1,2,3\n",
            Path::new("inline"),
        )
        .unwrap();
        cfg
    }

    #[test]
    fn config_parsing_and_precedence() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(
            "# comment\nmethod = focal\nsurrogate = logistic\nscale = 2\narch = mlp\nhidden = 8,4\nseeds = 3, 4\n",
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Focal);
        assert_eq!(cfg.surrogate, SurrogateSpec::Logistic { scale: 2.0 });
        assert_eq!(
            cfg.arch,
            Arch::Mlp {
                d_in: 10,
                hidden: vec![8, 4]
            }
        );
        assert_eq!(cfg.seeds, vec![3, 4]);
        cfg.set("method", "ce").unwrap();
        assert_eq!(cfg.method, Method::Ce);

        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("alpha", "fast").is_err());
        match ExperimentConfig::default().apply_text("alpha = 1\nbogus\n", Path::new("c")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_text_round_trip() {
        let mut cfg = small_config();
        cfg.set("surrogate", "sigmoid").unwrap();
        cfg.set("arch", "mlp").unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("c")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn theoretical_schedule_requires_long_runs() {
        let mut cfg = small_config();
        cfg.schedule = ScheduleMode::Theoretical;
        cfg.iters = 10;
        assert!(cfg.soap_config(0, 48).is_err());
        cfg.iters = 1000;
        let soap = cfg.soap_config(0, 48).unwrap();
        assert_eq!(
            (soap.alpha, soap.gamma),
            theoretical_schedule(48, 1000).unwrap()
        );
    }

    #[test]
    fn reruns_write_identical_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.out_dir = Some(dir.path().join("a"));
        let a = run_experiment(&cfg).unwrap();
        cfg.out_dir = Some(dir.path().join("b"));
        run_experiment(&cfg).unwrap();
        let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
        assert_eq!(read("a/summary.csv"), read("b/summary.csv"));
        assert_eq!(read("a/aggregate.csv"), read("b/aggregate.csv"));
        assert_eq!(a.runs.len(), 3);
        assert!(read("a/summary.csv").starts_with("method,seed,test_ap,test_auprc\nsoap_adam,1,"));
        assert!(read("a/seed_2/curve.csv").starts_with(crate::record::CURVE_HEADER));
        assert!(read("a/seed_2/pr_curve.csv").starts_with("threshold,recall,precision\n"));
        let ckpt = ScoreModel::load_checkpoint(&dir.path().join("a/seed_2/model.ckpt")).unwrap();
        assert_eq!(ckpt, a.runs[1].model);
    }

    #[test]
    fn zero_iterations_report_initial_model() {
        let mut cfg = small_config();
        cfg.iters = 0;
        cfg.seeds = vec![5];
        cfg.arch = Arch::Mlp {
            d_in: 3,
            hidden: vec![4],
        };
        let summary = run_experiment(&cfg).unwrap();
        let [_, _, test] = cfg.prepare_data().unwrap();
        let init = ScoreModel::init(cfg.arch.clone().with_input_dim(3), true, 5).unwrap();
        let ap = average_precision(&init.forward(test.features()).unwrap(), test.labels()).unwrap();
        assert_eq!(summary.runs[0].test_ap, ap);
    }

    #[test]
    fn failing_seeds_are_isolated() {
        let mut cfg = small_config();
        cfg.method = Method::Ce;
        cfg.squash = false;
        assert!(matches!(run_experiment(&cfg), Err(Error::RunFailed(_))));
    }

    #[test]
    fn baselines_and_warm_start_run() {
        let mut cfg = small_config();
        cfg.seeds = vec![1];
        for method in ["ce", "cb_ce", "focal", "soap_sgd", "soap_amsgrad"] {
            cfg.set("method", method).unwrap();
            cfg.warm_start = 50;
            let s = run_experiment(&cfg).unwrap();
            assert!(s.runs[0].test_ap > 0.0 && s.runs[0].test_ap <= 1.0);
        }
    }

    #[test]
    fn sweep_cases() {
        let cfg = small_config();
        assert!(batch_size_sweep(&cfg, &[]).is_err());
        let one = batch_size_sweep(&cfg, &[32]).unwrap();
        let mut direct = cfg.clone();
        direct.batch_size = 32;
        let aps = run_experiment(&direct).unwrap().test_aps();
        assert_eq!(one.rows.iter().map(|r| r.test_ap).collect::<Vec<_>>(), aps);
        assert!(one.spread_per_seed().iter().all(|&(_, s)| s == 0.0));
    }

    #[test]
    fn correlation_cases() {
        let up: Vec<RunRecord> = (0..12)
            .map(|k| record(k, k as f64, (k * k) as f64))
            .collect();
        let rep = consistency_report(&up).unwrap();
        assert_eq!(rep.spearman, Some(1.0));
        let down: Vec<RunRecord> = (0..12)
            .map(|k| record(k, k as f64, -(k as f64).exp()))
            .collect();
        assert_eq!(consistency_report(&down).unwrap().spearman, Some(-1.0));
        let flat: Vec<RunRecord> = (0..12).map(|k| record(k, 1.0, k as f64)).collect();
        let rep = consistency_report(&flat).unwrap();
        assert_eq!((rep.spearman, rep.pearson), (None, None));
        assert!(consistency_report(&up[..5]).is_err());
    }

    #[test]
    fn std_uses_unbiased_denominator() {
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(sample_std(&[2.0]), 0.0);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }
}
