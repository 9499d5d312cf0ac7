//! Experiment harness: (noise x smooth rate x seed) sweeps with resumable
//! JSONL records, aggregation, empirical optimal rates, CSV reports, and
//! bootstrap bias/variance studies.
//!
//! A sweep directory holds `config.json` (the sweep config as run) and
//! `records.jsonl` (one [`CellRecord`] per line, appended as cells finish).
//! [`report`] reads both and writes the CSV tables.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datagen::{gen_synthetic, load_csv, split, LabelColumn, Standardizer, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::{bias_variance_from_predictions, confidence_report, BiasVarianceReport};
use crate::noise_math::inject_noise;
pub use crate::noise_math::predict_r_opt;
use crate::seeding::{derive_seed, rng_for, streams};
use crate::trainer::{train, LrSchedule, OptimizerConfig, TrainConfig, TrainReport};
use crate::types::{build_transition, LabeledDataset, NoiseSpec, DEFAULT_EPS_CLAMP};

pub const CONFIG_VERSION: u32 = 1;
pub const CONFIG_FILE: &str = "config.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const BIAS_VARIANCE_FILE: &str = "bias_variance.jsonl";
/// Bins of the model-confidence histogram stored per cell, over `[-1, 1]`.
pub const MC_BINS: usize = 20;

/// A smooth rate in a sweep grid. `NegInf` trains on the normalized
/// extreme labels `onehot(y) - 1/K`. In JSON it is a number or the string
/// `"neg-inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmoothRate {
    Finite(f64),
    NegInf,
}

impl SmoothRate {
    pub fn loss(self) -> LossSpec {
        match self {
            SmoothRate::Finite(r) => LossSpec::gls(r),
            SmoothRate::NegInf => LossSpec::GlsExtreme,
        }
    }

    /// Distance from zero, used to break ties toward mild regularization.
    fn magnitude(self) -> f64 {
        match self {
            SmoothRate::Finite(r) => r.abs(),
            SmoothRate::NegInf => f64::INFINITY,
        }
    }

    pub fn value(self) -> f64 {
        match self {
            SmoothRate::Finite(r) => r,
            SmoothRate::NegInf => f64::NEG_INFINITY,
        }
    }

    fn key(self) -> u64 {
        self.value().to_bits()
    }
}

impl fmt::Display for SmoothRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmoothRate::Finite(r) => write!(f, "{r}"),
            SmoothRate::NegInf => f.write_str("neg-inf"),
        }
    }
}

impl Serialize for SmoothRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SmoothRate::Finite(r) => s.serialize_f64(*r),
            SmoothRate::NegInf => s.serialize_str("neg-inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SmoothRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(SmoothRate::Finite(r)),
            Raw::Str(s) if s == "neg-inf" => Ok(SmoothRate::NegInf),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "smooth rate must be a number or \"neg-inf\", got {s:?}"
            ))),
        }
    }
}

/// Where sweep data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Training data from the spec (its seed is replaced per run seed); the
    /// test set is an independent clean draw of the same size.
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
    },
    /// A headered CSV split per seed into train/test, standardized on the
    /// training part. Labels in the file are taken as clean.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

/// Training settings shared by every cell; the loss is set per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTemplate {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub lr_schedule: LrSchedule,
    #[serde(default = "default_eps")]
    pub epsilon_clamp: f64,
}

fn default_eps() -> f64 {
    DEFAULT_EPS_CLAMP
}

impl Default for TrainTemplate {
    fn default() -> Self {
        Self::from_config(&TrainConfig::synthetic(LossSpec::ce(), 0))
    }
}

impl TrainTemplate {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            hidden: cfg.hidden.clone(),
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            optimizer: cfg.optimizer.clone(),
            lr_schedule: cfg.lr_schedule.clone(),
            epsilon_clamp: cfg.epsilon_clamp,
        }
    }

    pub fn instantiate(&self, loss: LossSpec, seed: u64, lr: Option<f64>) -> TrainConfig {
        let mut lr_schedule = self.lr_schedule.clone();
        if let Some(lr) = lr {
            lr_schedule.initial = lr;
        }
        TrainConfig {
            loss,
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer.clone(),
            lr_schedule,
            seed,
            epsilon_clamp: self.epsilon_clamp,
            warmup: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub version: u32,
    pub dataset: DatasetSource,
    pub noise_grid: Vec<NoiseSpec>,
    pub r_grid: Vec<SmoothRate>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainTemplate,
    /// Optional learning-rate sub-grid; each cell keeps the best test
    /// accuracy over it. Empty means the template's rate only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lr_grid: Vec<f64>,
    /// Finite rates below this are rejected.
    #[serde(default = "default_r_min")]
    pub r_min: f64,
    /// Clean-optimal rate used for the predicted `r_opt` column in reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_star: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_r_min() -> f64 {
    -8.0
}

impl SweepConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: SweepConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.noise_grid.is_empty() || self.r_grid.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("noise_grid, r_grid and seeds must be nonempty".into()));
        }
        for r in &self.r_grid {
            if let SmoothRate::Finite(v) = *r {
                if !(v <= 1.0) {
                    return Err(Error::InvalidRate(v));
                }
                if v < self.r_min {
                    return Err(Error::InvalidConfig(format!("rate {v} is below r_min {}", self.r_min)));
                }
            }
        }
        let mut seen = HashSet::new();
        if !self.r_grid.iter().all(|r| seen.insert(r.key())) {
            return Err(Error::InvalidConfig("r_grid has duplicates".into()));
        }
        if self.lr_grid.iter().any(|lr| !(*lr > 0.0)) {
            return Err(Error::InvalidConfig("lr_grid entries must be positive".into()));
        }
        if let DatasetSource::Csv { test_fraction, .. } = &self.dataset {
            if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                return Err(Error::InvalidConfig("test_fraction must be in (0, 1)".into()));
            }
        }
        self.train.instantiate(LossSpec::ce(), 0, None).validate()
    }

    pub fn num_cells(&self) -> usize {
        self.noise_grid.len() * self.r_grid.len() * self.seeds.len()
    }
}

/// Short human-readable name of a noise spec, used as a CSV column header.
pub fn noise_label(spec: &NoiseSpec) -> String {
    match spec {
        NoiseSpec::Symmetric { epsilon } => format!("sym{epsilon}"),
        NoiseSpec::BinaryAsym { e0, e1 } => format!("bin{e0}/{e1}"),
        NoiseSpec::Sparse { e0, e1, .. } => format!("sparse{e0}/{e1}"),
        NoiseSpec::Custom { .. } => "custom".into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

/// One training run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub noise_index: usize,
    pub noise: NoiseSpec,
    pub r: SmoothRate,
    pub seed: u64,
    #[serde(default = "two")]
    pub num_classes: usize,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default)]
    pub test_accuracy: f64,
    #[serde(default)]
    pub expected_mc: f64,
    #[serde(default)]
    pub train_loss_final: f64,
    /// Counts of test-set model confidence in `MC_BINS` equal bins on `[-1, 1]`.
    #[serde(default)]
    pub mc_histogram: Vec<usize>,
}

fn two() -> usize {
    2
}

impl CellRecord {
    fn failed(cfg: &SweepConfig, noise_index: usize, r: SmoothRate, seed: u64, num_classes: usize, error: String) -> Self {
        CellRecord {
            noise_index,
            noise: cfg.noise_grid[noise_index].clone(),
            r,
            seed,
            num_classes,
            status: CellStatus::Failed,
            error: Some(error),
            lr: None,
            test_accuracy: 0.0,
            expected_mc: 0.0,
            train_loss_final: 0.0,
            mc_histogram: Vec::new(),
        }
    }

    fn key(&self) -> (usize, u64, u64) {
        (self.noise_index, self.r.key(), self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellAggregate {
    pub noise_index: usize,
    pub r: SmoothRate,
    pub mean_accuracy: f64,
    /// Sample standard deviation (n - 1); zero with fewer than two runs.
    pub std_accuracy: f64,
    pub mean_mc: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimalRate {
    pub noise_index: usize,
    /// `None` when every cell for this noise level failed.
    pub empirical: Option<SmoothRate>,
    pub best_mean_accuracy: Option<f64>,
    pub predicted: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub config: SweepConfig,
    /// Sorted by (noise, r grid position, seed).
    pub records: Vec<CellRecord>,
    pub aggregates: Vec<CellAggregate>,
    pub optimal: Vec<OptimalRate>,
}

impl SweepResult {
    pub fn aggregate(&self, noise_index: usize, r: SmoothRate) -> Option<&CellAggregate> {
        self.aggregates
            .iter()
            .find(|a| a.noise_index == noise_index && a.r.key() == r.key())
    }

    /// Empirical optimal rates in noise-grid order.
    pub fn r_opt_sequence(&self) -> Vec<Option<SmoothRate>> {
        self.optimal.iter().map(|o| o.empirical).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Keep existing records and run only missing cells.
    pub resume: bool,
}

/// Train and test sets for one seed, with the training labels still clean.
pub fn prepare_data(source: &DatasetSource, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    match source {
        DatasetSource::Synthetic { spec } => {
            let mut tr = spec.clone();
            tr.seed = derive_seed(seed, streams::DATA, 0);
            let mut te = spec.clone();
            te.seed = derive_seed(seed, streams::DATA, 1);
            Ok((gen_synthetic(&tr)?, gen_synthetic(&te)?))
        }
        DatasetSource::Csv {
            path,
            label_column,
            test_fraction,
        } => {
            let col = label_column.clone().map_or(LabelColumn::Last, LabelColumn::Name);
            let ds = load_csv(path, &col, b',')?.dataset;
            let parts = split(&ds, &[1.0 - test_fraction, *test_fraction], derive_seed(seed, streams::SPLIT, 0))?;
            let std = Standardizer::fit(&parts[0]);
            Ok((std.apply(&parts[0]), std.apply(&parts[1])))
        }
    }
}

/// Noisy training set for a seed and noise level. The realization depends
/// on the seed and the noise spec only, so every rate sees the same labels.
pub fn noisy_train(train_ds: &LabeledDataset, noise: &NoiseSpec, seed: u64) -> Result<LabeledDataset> {
    let t = build_transition(noise, train_ds.num_classes())?;
    inject_noise(train_ds, &t, derive_seed(seed, streams::NOISE, 0))
}

fn mc_histogram(mc: &[f64]) -> Vec<usize> {
    let mut h = vec![0; MC_BINS];
    for &v in mc {
        let b = (((v + 1.0) / 2.0) * MC_BINS as f64).floor();
        h[(b.max(0.0) as usize).min(MC_BINS - 1)] += 1;
    }
    h
}

fn run_cell(
    cfg: &SweepConfig,
    noise_index: usize,
    r: SmoothRate,
    seed: u64,
    data: &(LabeledDataset, LabeledDataset),
) -> CellRecord {
    let noise = cfg.noise_grid[noise_index].clone();
    let mut rec = CellRecord::failed(cfg, noise_index, r, seed, data.0.num_classes(), String::new());
    let attempt = || -> Result<(TrainReport, Option<f64>)> {
        let noisy = noisy_train(&data.0, &noise, seed)?;
        let lrs: Vec<Option<f64>> = if cfg.lr_grid.is_empty() {
            vec![None]
        } else {
            cfg.lr_grid.iter().map(|&l| Some(l)).collect()
        };
        let mut best: Option<(TrainReport, Option<f64>)> = None;
        let mut last_err = None;
        for lr in lrs {
            let tc = cfg.train.instantiate(r.loss(), seed, lr);
            match train(&noisy, &data.1, &tc) {
                Ok(rep) => {
                    let better = best
                        .as_ref()
                        .map_or(true, |(b, _)| rep.final_test_accuracy() > b.final_test_accuracy());
                    if better {
                        best = Some((rep, lr));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        best.ok_or_else(|| last_err.unwrap())
    };
    match attempt() {
        Ok((rep, lr)) => match confidence_report(&rep.model, &data.1) {
            Ok(conf) => {
                rec.status = CellStatus::Ok;
                rec.error = None;
                rec.lr = lr;
                rec.test_accuracy = rep.final_test_accuracy();
                rec.expected_mc = conf.expected_mc;
                rec.train_loss_final = *rep.train_loss.last().unwrap();
                rec.mc_histogram = mc_histogram(&conf.mc);
            }
            Err(e) => rec.error = Some(e.to_string()),
        },
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

pub fn read_records(path: &Path) -> Result<Vec<CellRecord>> {
    read_jsonl(path)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// The worker count: `GLS_LAB_THREADS` when set and valid, else
/// `requested`, else rayon's default.
pub fn resolve_threads(requested: Option<usize>) -> Option<usize> {
    std::env::var("GLS_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(requested)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = resolve_threads(threads) {
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs every missing cell of the sweep and returns the aggregated result.
///
/// Records are appended to `records.jsonl` as cells finish. Without
/// `resume`, an existing nonempty records file is an error rather than
/// being overwritten.
pub fn run_sweep(cfg: &SweepConfig, opts: &SweepOptions) -> Result<SweepResult> {
    cfg.validate()?;
    let out = opts
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory".into()))?;
    fs::create_dir_all(&out)?;
    let rec_path = out.join(RECORDS_FILE);
    let cfg_path = out.join(CONFIG_FILE);

    let mut existing = Vec::new();
    if rec_path.exists() {
        existing = read_records(&rec_path)?;
        if !existing.is_empty() && !opts.resume {
            return Err(Error::InvalidConfig(format!(
                "{} already has records; resume or choose another output directory",
                out.display()
            )));
        }
        if opts.resume && cfg_path.exists() {
            let prev: SweepConfig = serde_json::from_str(&fs::read_to_string(&cfg_path)?)?;
            if prev.noise_grid != cfg.noise_grid {
                return Err(Error::InvalidConfig("resumed sweep has a different noise grid".into()));
            }
        }
    }
    let mut to_write = cfg.clone();
    to_write.out_dir = None;
    fs::write(&cfg_path, serde_json::to_string_pretty(&to_write)? + "\n")?;

    let done: HashSet<(usize, u64, u64)> = existing.iter().map(CellRecord::key).collect();
    let mut todo: Vec<(usize, SmoothRate, u64)> = Vec::new();
    for &seed in &cfg.seeds {
        for ni in 0..cfg.noise_grid.len() {
            for &r in &cfg.r_grid {
                if !done.contains(&(ni, r.key(), seed)) {
                    todo.push((ni, r, seed));
                }
            }
        }
    }

    let file = OpenOptions::new().create(true).append(true).open(&rec_path)?;
    let writer = Mutex::new(file);
    let pool = pool(opts.threads)?;
    let fresh: Vec<CellRecord> = pool.install(|| {
        let seeds: Vec<u64> = {
            let mut s: Vec<u64> = todo.iter().map(|t| t.2).collect();
            s.dedup();
            s
        };
        seeds
            .par_iter()
            .map(|&seed| -> Result<Vec<CellRecord>> {
                let cells: Vec<_> = todo.iter().filter(|t| t.2 == seed).collect();
                let data = match prepare_data(&cfg.dataset, seed) {
                    Ok(d) => d,
                    Err(e) => {
                        let failed = cells
                            .iter()
                            .map(|&&(ni, r, seed)| CellRecord::failed(cfg, ni, r, seed, 2, e.to_string()))
                            .collect::<Vec<_>>();
                        for rec in &failed {
                            append_record(&writer, rec)?;
                        }
                        return Ok(failed);
                    }
                };
                cells
                    .par_iter()
                    .map(|&&(ni, r, seed)| {
                        let rec = run_cell(cfg, ni, r, seed, &data);
                        append_record(&writer, &rec)?;
                        Ok(rec)
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<_>>>>()
            .map(|v| v.into_iter().flatten().collect())
    })?;

    let mut all = existing;
    all.extend(fresh);
    Ok(summarize(cfg, all))
}

fn append_record(writer: &Mutex<File>, rec: &CellRecord) -> Result<()> {
    let line = serde_json::to_string(rec)? + "\n";
    let mut f = writer.lock().unwrap_or_else(|e| e.into_inner());
    f.write_all(line.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Index of the best mean accuracy; exact ties go to the rate closest to
/// zero, then to the positive one.
fn argmax_rate(cands: &[(SmoothRate, f64)]) -> Option<(SmoothRate, f64)> {
    cands.iter().copied().reduce(|best, c| {
        let better = c.1 > best.1
            || (c.1 == best.1
                && (c.0.magnitude() < best.0.magnitude()
                    || (c.0.magnitude() == best.0.magnitude() && c.0.value() > best.0.value())));
        if better {
            c
        } else {
            best
        }
    })
}

/// Aggregates records into per-cell statistics and empirical optimal rates.
/// Records for cells outside the config grid are dropped; duplicates keep
/// the first occurrence.
pub fn summarize(cfg: &SweepConfig, records: Vec<CellRecord>) -> SweepResult {
    let r_pos: BTreeMap<u64, usize> = cfg.r_grid.iter().enumerate().map(|(i, r)| (r.key(), i)).collect();
    let seed_set: HashSet<u64> = cfg.seeds.iter().copied().collect();
    let mut seen = HashSet::new();
    let mut records: Vec<CellRecord> = records
        .into_iter()
        .filter(|r| r.noise_index < cfg.noise_grid.len() && r_pos.contains_key(&r.r.key()) && seed_set.contains(&r.seed))
        .filter(|r| seen.insert(r.key()))
        .collect();
    records.sort_by_key(|r| (r.noise_index, r_pos[&r.r.key()], r.seed));

    let mut aggregates = Vec::new();
    let mut optimal = Vec::new();
    for ni in 0..cfg.noise_grid.len() {
        let mut cands = Vec::new();
        for &r in &cfg.r_grid {
            let cell: Vec<&CellRecord> = records
                .iter()
                .filter(|x| x.noise_index == ni && x.r.key() == r.key())
                .collect();
            let ok: Vec<&CellRecord> = cell.iter().copied().filter(|x| x.status == CellStatus::Ok).collect();
            let acc: Vec<f64> = ok.iter().map(|x| x.test_accuracy).collect();
            let mc: Vec<f64> = ok.iter().map(|x| x.expected_mc).collect();
            let (mean_accuracy, std_accuracy) = mean_std(&acc);
            if !ok.is_empty() {
                cands.push((r, mean_accuracy));
            }
            aggregates.push(CellAggregate {
                noise_index: ni,
                r,
                mean_accuracy,
                std_accuracy,
                mean_mc: mean_std(&mc).0,
                n_ok: ok.len(),
                n_failed: cell.len() - ok.len(),
            });
        }
        let best = argmax_rate(&cands);
        let k = records.iter().find(|x| x.noise_index == ni).map_or(2, |x| x.num_classes);
        let predicted = cfg.r_star.and_then(|rs| predict_r_opt(rs, &cfg.noise_grid[ni], k).ok());
        optimal.push(OptimalRate {
            noise_index: ni,
            empirical: best.map(|b| b.0),
            best_mean_accuracy: best.map(|b| b.1),
            predicted,
        });
    }
    SweepResult {
        config: cfg.clone(),
        records,
        aggregates,
        optimal,
    }
}

/// Loads a sweep directory written by [`run_sweep`].
pub fn load_sweep(dir: &Path) -> Result<SweepResult> {
    let cfg_path = dir.join(CONFIG_FILE);
    let rec_path = dir.join(RECORDS_FILE);
    if !rec_path.exists() {
        return Err(Error::InvalidDataset(format!("no {RECORDS_FILE} in {}", dir.display())));
    }
    let cfg = SweepConfig::from_file(&cfg_path)?;
    let records = read_records(&rec_path)?;
    if records.is_empty() {
        return Err(Error::InvalidDataset(format!("{} is empty", rec_path.display())));
    }
    Ok(summarize(&cfg, records))
}

/// Paths of the CSV files written by [`report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub accuracy_table: PathBuf,
    pub r_opt: PathBuf,
    pub confidence_histogram: PathBuf,
    pub bias_variance: Option<PathBuf>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Writes the report CSVs for a sweep directory into the same directory:
///
/// * `accuracy_table.csv`: one row per rate, `mean` and `std` columns per
///   noise level (failed cells excluded, their count in `failed_*`);
/// * `r_opt.csv`: empirical and predicted optimal rate per noise level;
/// * `confidence_histogram.csv`: the per-cell model confidence histograms;
/// * `bias_variance.csv` when `bias_variance.jsonl` exists.
///
/// Output depends only on the records, so it is byte-identical across
/// reruns and record orderings.
pub fn report(dir: &Path) -> Result<ReportFiles> {
    let res = load_sweep(dir)?;
    let cfg = &res.config;
    let labels: Vec<String> = cfg.noise_grid.iter().map(noise_label).collect();

    let accuracy_table = dir.join("accuracy_table.csv");
    let mut w = csv::Writer::from_path(&accuracy_table)?;
    let mut header = vec!["r".to_string()];
    for l in &labels {
        header.push(format!("mean_{l}"));
        header.push(format!("std_{l}"));
        header.push(format!("failed_{l}"));
    }
    w.write_record(&header)?;
    for &r in &cfg.r_grid {
        let mut row = vec![r.to_string()];
        for ni in 0..labels.len() {
            let a = res.aggregate(ni, r).unwrap();
            if a.n_ok == 0 {
                row.extend([String::new(), String::new()]);
            } else {
                row.push(format!("{:.6}", a.mean_accuracy));
                row.push(format!("{:.6}", a.std_accuracy));
            }
            row.push(a.n_failed.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let r_opt = dir.join("r_opt.csv");
    let mut w = csv::Writer::from_path(&r_opt)?;
    w.write_record(["noise", "empirical_r_opt", "best_mean_accuracy", "predicted_r_opt"])?;
    for (o, l) in res.optimal.iter().zip(&labels) {
        w.write_record([
            l.clone(),
            o.empirical.map_or_else(String::new, |r| r.to_string()),
            fmt_opt(o.best_mean_accuracy),
            fmt_opt(o.predicted),
        ])?;
    }
    w.flush()?;
    let mut f = OpenOptions::new().append(true).open(&r_opt)?;
    writeln!(f, "# ties in mean accuracy are broken toward the rate closest to 0")?;

    let confidence_histogram = dir.join("confidence_histogram.csv");
    let mut w = csv::Writer::from_path(&confidence_histogram)?;
    w.write_record(["noise", "r", "seed", "bin_lo", "bin_hi", "count"])?;
    for rec in res.records.iter().filter(|r| r.status == CellStatus::Ok) {
        for (b, c) in rec.mc_histogram.iter().enumerate() {
            let lo = -1.0 + 2.0 * b as f64 / MC_BINS as f64;
            let hi = -1.0 + 2.0 * (b + 1) as f64 / MC_BINS as f64;
            w.write_record([
                labels[rec.noise_index].clone(),
                rec.r.to_string(),
                rec.seed.to_string(),
                format!("{lo:.2}"),
                format!("{hi:.2}"),
                c.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let bv_path = dir.join(BIAS_VARIANCE_FILE);
    let bias_variance = if bv_path.exists() {
        let path = dir.join("bias_variance.csv");
        write_bias_variance_csv(&read_jsonl(&bv_path)?, &path)?;
        Some(path)
    } else {
        None
    };
    Ok(ReportFiles {
        accuracy_table,
        r_opt,
        confidence_histogram,
        bias_variance,
    })
}

/// Bootstrap bias/variance study: for each noise level and rate, train
/// `replicates` models on bootstrap resamples of the noisy training set and
/// score them on the clean test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceConfig {
    pub version: u32,
    pub dataset: DatasetSource,
    pub noise_grid: Vec<NoiseSpec>,
    pub r_grid: Vec<SmoothRate>,
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub train: TrainTemplate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn default_replicates() -> usize {
    10
}

impl BiasVarianceConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported config version {}", self.version)));
        }
        if self.noise_grid.is_empty() || self.r_grid.is_empty() {
            return Err(Error::InvalidConfig("noise_grid and r_grid must be nonempty".into()));
        }
        if self.replicates < 2 {
            return Err(Error::TooFewReplicates(self.replicates));
        }
        if let Some(SmoothRate::Finite(r)) = self.r_grid.iter().find(|r| !(r.value() <= 1.0)) {
            return Err(Error::InvalidRate(*r));
        }
        self.train.instantiate(LossSpec::ce(), 0, None).validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRecord {
    pub noise: NoiseSpec,
    pub r: SmoothRate,
    pub bias: f64,
    pub variance: f64,
    pub num_replicates: usize,
    pub mean_test_accuracy: f64,
}

/// Resamples `ds` with replacement, keeping its size.
pub fn bootstrap(ds: &LabeledDataset, seed: u64) -> LabeledDataset {
    let mut rng = rng_for(seed, streams::BOOTSTRAP, 0);
    let idx: Vec<usize> = (0..ds.len()).map(|_| rng.gen_range(0..ds.len())).collect();
    ds.subset(&idx)
}

pub fn run_bias_variance(cfg: &BiasVarianceConfig, threads: Option<usize>) -> Result<Vec<BiasVarianceRecord>> {
    cfg.validate()?;
    let (train_ds, test_ds) = prepare_data(&cfg.dataset, cfg.seed)?;
    let pool = pool(threads)?;
    let mut out = Vec::new();
    for noise in &cfg.noise_grid {
        let noisy = noisy_train(&train_ds, noise, cfg.seed)?;
        for &r in &cfg.r_grid {
            let runs: Vec<(Vec<_>, f64)> = pool.install(|| {
                (0..cfg.replicates)
                    .into_par_iter()
                    .map(|m| {
                        let rep_seed = derive_seed(cfg.seed, streams::BOOTSTRAP, m as u64);
                        let sample = bootstrap(&noisy, rep_seed);
                        let tc = cfg.train.instantiate(r.loss(), derive_seed(cfg.seed, streams::TRAIN, m as u64), None);
                        let rep = train(&sample, &test_ds, &tc)?;
                        Ok((rep.model.predict_proba(&test_ds)?, rep.final_test_accuracy()))
                    })
                    .collect::<Result<_>>()
            })?;
            let acc = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
            let preds: Vec<_> = runs.into_iter().map(|r| r.0).collect();
            let BiasVarianceReport {
                bias,
                variance,
                num_replicates,
            } = bias_variance_from_predictions(&preds, test_ds.reference_labels(), cfg.train.epsilon_clamp)?;
            out.push(BiasVarianceRecord {
                noise: noise.clone(),
                r,
                bias,
                variance,
                num_replicates,
                mean_test_accuracy: acc,
            });
        }
    }
    Ok(out)
}

/// Writes bias/variance records as JSONL and CSV into `dir`.
pub fn write_bias_variance(records: &[BiasVarianceRecord], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut f = File::create(dir.join(BIAS_VARIANCE_FILE))?;
    for r in records {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    let path = dir.join("bias_variance.csv");
    write_bias_variance_csv(records, &path)?;
    Ok(path)
}

fn write_bias_variance_csv(records: &[BiasVarianceRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["noise", "r", "bias", "variance", "replicates", "mean_test_accuracy"])?;
    for r in records {
        w.write_record([
            noise_label(&r.noise),
            r.r.to_string(),
            format!("{:.6}", r.bias),
            format!("{:.6}", r.variance),
            r.num_replicates.to_string(),
            format!("{:.6}", r.mean_test_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}
