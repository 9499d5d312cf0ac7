use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gls_lab::datagen::{gen_synthetic, load_csv, write_csv, LabelColumn, SyntheticKind, SyntheticSpec};
use gls_lab::harness::{
    self, noisy_train, prepare_data, resolve_threads, BiasVarianceConfig, DatasetSource, SweepConfig, SweepOptions,
    CONFIG_VERSION,
};
use gls_lab::verify::{run_identity_suite, ReportRole};
use gls_lab::{build_transition, inject_noise, train, Error, NoiseSpec, Result, TrainConfig};
use serde_json::json;

/// Generalized label smoothing experiments.
#[derive(Parser)]
#[command(name = "gls-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; GLS_LAB_THREADS takes precedence
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Type1,
    Type2,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic disk/annulus dataset to OUT/data.csv
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "type1")]
        kind: Kind,
        #[arg(long)]
        n_per_class: Option<usize>,
    },
    /// Corrupt the labels of a CSV and write OUT/noisy.csv with a clean_label column
    InjectNoise {
        #[command(flatten)]
        common: Common,
        /// Input CSV (label in the last column unless --label-column)
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        label_column: Option<String>,
        /// Symmetric noise rate (ignored when --config gives a noise spec)
        #[arg(long)]
        symmetric: Option<f64>,
        /// Binary flip rate 0 -> 1
        #[arg(long, requires = "e1")]
        e0: Option<f64>,
        /// Binary flip rate 1 -> 0
        #[arg(long, requires = "e0")]
        e1: Option<f64>,
    },
    /// Train one model; writes OUT/model.json and OUT/report.json
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run a (noise x rate x seed) sweep into OUT
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Keep existing records and run only the missing cells
        #[arg(long)]
        resume: bool,
    },
    /// Write the CSV tables for a sweep directory
    Report {
        /// Sweep directory (defaults to --out)
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Certify every identity numerically; nonzero exit on failure
    Verify {
        #[command(flatten)]
        common: Common,
        /// Print reports as JSON lines
        #[arg(long)]
        json: bool,
    },
    /// Bootstrap bias/variance study into OUT
    BiasVariance {
        #[command(flatten)]
        common: Common,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn check_version(v: &serde_json::Value, path: &Path) -> Result<()> {
    match v.get("version").and_then(|x| x.as_u64()) {
        Some(n) if n == u64::from(CONFIG_VERSION) => Ok(()),
        Some(n) => Err(Error::InvalidConfig(format!("{}: unsupported version {n}", path.display()))),
        None => Err(Error::InvalidConfig(format!("{}: missing version field", path.display()))),
    }
}

/// Reads a versioned config, dropping the version key before decoding.
fn read_versioned<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let mut v: serde_json::Value = read_json(path)?;
    check_version(&v, path)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("version");
    }
    serde_json::from_value(v).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .ok_or_else(|| Error::InvalidConfig("--out is required".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn require_config(common: &Common) -> Result<&Path> {
    common
        .config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))
}

/// `train` config: a dataset, optional label noise on the training part,
/// and a full training config.
#[derive(serde::Deserialize)]
struct TrainRun {
    dataset: DatasetSource,
    #[serde(default)]
    noise: Option<NoiseSpec>,
    train: TrainConfig,
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData {
            common,
            kind,
            n_per_class,
        } => {
            let mut spec = match &common.config {
                Some(p) => read_versioned::<SyntheticSpec>(p)?,
                None => SyntheticSpec::new(
                    match kind {
                        Kind::Type1 => SyntheticKind::Type1,
                        Kind::Type2 => SyntheticKind::Type2,
                    },
                    0,
                ),
            };
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            if let Some(n) = n_per_class {
                spec.n_per_class = n;
            }
            let ds = gen_synthetic(&spec)?;
            let path = out_dir(&common)?.join("data.csv");
            write_csv(&ds, &path)?;
            println!("wrote {} rows to {}", ds.len(), path.display());
        }
        Command::InjectNoise {
            common,
            input,
            label_column,
            symmetric,
            e0,
            e1,
        } => {
            let noise = match (&common.config, symmetric, e0.zip(e1)) {
                (Some(p), _, _) => {
                    #[derive(serde::Deserialize)]
                    struct NoiseConfig {
                        noise: NoiseSpec,
                    }
                    read_versioned::<NoiseConfig>(p)?.noise
                }
                (None, Some(e), None) => NoiseSpec::symmetric(e),
                (None, None, Some((e0, e1))) => NoiseSpec::BinaryAsym { e0, e1 },
                _ => {
                    return Err(Error::InvalidConfig(
                        "give exactly one of --config, --symmetric, or --e0/--e1".into(),
                    ))
                }
            };
            let col = label_column.map_or(LabelColumn::Last, LabelColumn::Name);
            let ds = load_csv(&input, &col, b',')?.dataset;
            if ds.clean_labels().is_some() {
                return Err(Error::InvalidConfig(format!(
                    "{} already has a clean_label column; inject noise into the clean data instead",
                    input.display()
                )));
            }
            let t = build_transition(&noise, ds.num_classes())?;
            let noisy = inject_noise(&ds, &t, common.seed.unwrap_or(0))?;
            let flipped = noisy
                .labels()
                .iter()
                .zip(noisy.clean_labels().unwrap())
                .filter(|(a, b)| a != b)
                .count();
            let path = out_dir(&common)?.join("noisy.csv");
            write_csv(&noisy, &path)?;
            println!("flipped {flipped} of {} labels; wrote {}", noisy.len(), path.display());
        }
        Command::Train { common } => {
            let path = require_config(&common)?;
            let mut run: TrainRun = read_versioned(path)?;
            if let Some(s) = common.seed {
                run.train.seed = s;
            }
            let (tr, te) = prepare_data(&run.dataset, run.train.seed)?;
            let tr = match &run.noise {
                Some(n) => noisy_train(&tr, n, run.train.seed)?,
                None => tr,
            };
            let rep = train(&tr, &te, &run.train)?;
            let dir = out_dir(&common)?;
            rep.model.save(&dir.join("model.json"))?;
            let summary = json!({
                "train_loss": rep.train_loss,
                "train_accuracy": rep.train_accuracy,
                "test_accuracy": rep.test_accuracy,
                "expected_mc": rep.expected_mc,
            });
            fs::write(dir.join("report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            println!(
                "final test accuracy {:.4}, expected model confidence {:.4}",
                rep.final_test_accuracy(),
                rep.expected_mc.last().unwrap()
            );
        }
        Command::Sweep { common, resume } => {
            let mut cfg = SweepConfig::from_file(require_config(&common)?)?;
            if let Some(s) = common.seed {
                cfg.seeds = vec![s];
            }
            let opts = SweepOptions {
                out_dir: common.out.clone(),
                threads: common.threads,
                resume,
            };
            let res = harness::run_sweep(&cfg, &opts)?;
            let failed = res.records.iter().filter(|r| r.error.is_some()).count();
            println!("{} records ({failed} failed)", res.records.len());
            for o in &res.optimal {
                println!(
                    "{:<16} empirical r_opt {:<8} predicted {}",
                    harness::noise_label(&cfg.noise_grid[o.noise_index]),
                    o.empirical.map_or("-".into(), |r| r.to_string()),
                    o.predicted.map_or("-".into(), |p| format!("{p:.4}"))
                );
            }
        }
        Command::Report { dir, common } => {
            let dir = dir
                .or(common.out)
                .ok_or_else(|| Error::InvalidConfig("give a sweep directory".into()))?;
            let files = harness::report(&dir)?;
            for p in [Some(files.accuracy_table), Some(files.r_opt), Some(files.confidence_histogram), files.bias_variance]
                .into_iter()
                .flatten()
            {
                println!("wrote {}", p.display());
            }
        }
        Command::Verify { common, json } => {
            let reports = run_identity_suite(common.seed.unwrap_or(2024))?;
            let mut failed = 0;
            for r in &reports {
                if json {
                    println!("{}", serde_json::to_string(r)?);
                } else {
                    println!("{r}");
                }
                if r.role == ReportRole::Required && !r.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                eprintln!("{failed} identity checks failed");
                return Ok(ExitCode::FAILURE);
            }
            if !json {
                println!("all {} required checks passed", reports.iter().filter(|r| r.role == ReportRole::Required).count());
            }
        }
        Command::BiasVariance { common } => {
            let mut cfg = BiasVarianceConfig::from_file(require_config(&common)?)?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let dir = match common.out.clone().or_else(|| cfg.out_dir.clone()) {
                Some(d) => d,
                None => return Err(Error::InvalidConfig("--out is required".into())),
            };
            let recs = harness::run_bias_variance(&cfg, resolve_threads(common.threads))?;
            let path = harness::write_bias_variance(&recs, &dir)?;
            for r in &recs {
                println!(
                    "{:<16} r={:<8} bias {:.4} variance {:.4}",
                    harness::noise_label(&r.noise),
                    r.r.to_string(),
                    r.bias,
                    r.variance
                );
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
