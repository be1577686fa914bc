use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fedomg::data::{
    dirichlet_partition, gen_blobs, gen_rect4, load_idx, split_domains, train_test_split,
};
use fedomg::federation::{run_fdg_experiment, run_fl_experiment};
use fedomg::metrics::export;
use fedomg::oracle::{run_suite, OracleSuite, ORACLE_TOLERANCE};
use fedomg::{Batch, DomainDataset, ExperimentRun, Split};
use rayon::prelude::*;

use crate::config::{ConfigError, DatasetConfig, RunConfig};

/// How a command failed; decides the exit code.
pub enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Materialized data for one experiment.
enum Prepared {
    Domains {
        domains: Vec<DomainDataset>,
        held_out: usize,
    },
    Pooled {
        train: Batch,
        test: Batch,
        partition: fedomg::DirichletPartition,
    },
}

fn prepare(dataset: &DatasetConfig) -> Result<Prepared> {
    Ok(match dataset {
        DatasetConfig::Rect4 {
            held_out,
            test_fraction,
            seed,
            ..
        } => {
            let raw = gen_rect4(&dataset.rect4().expect("rect4 variant"))?;
            Prepared::Domains {
                domains: split_domains(&raw, *test_fraction, *seed)?,
                held_out: *held_out,
            }
        }
        DatasetConfig::Blobs {
            test_fraction,
            seed,
            partition,
            ..
        } => {
            let all = gen_blobs(&dataset.blobs().expect("blobs variant"))?;
            let (train, test) = train_test_split(&all, *test_fraction, *seed)?;
            Prepared::Pooled {
                train,
                test,
                partition: *partition,
            }
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            partition,
        } => Prepared::Pooled {
            train: load_idx(train_images, train_labels).context("loading training set")?,
            test: load_idx(test_images, test_labels).context("loading test set")?,
            partition: *partition,
        },
    })
}

fn execute(cfg: &RunConfig) -> Result<ExperimentRun> {
    let run = match prepare(&cfg.dataset)? {
        Prepared::Domains { domains, held_out } => {
            run_fdg_experiment(&domains, held_out, &cfg.experiment)?
        }
        Prepared::Pooled {
            train,
            test,
            partition,
        } => {
            let model = &cfg.experiment.model;
            if train.dim() != model.input_dim {
                anyhow::bail!(
                    "data has {} features but the model expects {}",
                    train.dim(),
                    model.input_dim
                );
            }
            run_fl_experiment(&train, &test, &partition, &cfg.experiment)?
        }
    };
    Ok(run)
}

fn write_outputs(cfg: &RunConfig, run: &ExperimentRun) -> Result<()> {
    let path = &cfg.output.path;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    export(&run.reports, cfg.output.format(), path)?;
    Ok(())
}

/// One line of the run or sweep summary.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub final_source_acc: Option<f64>,
    pub final_target_acc: Option<f64>,
    pub mean_target_acc: Option<f64>,
    pub mean_gen_gap: Option<f64>,
    pub mean_cosine_var: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Summary {
    pub fn of(run: &ExperimentRun) -> Self {
        let last = run.reports.last().map(|r| &r.metrics);
        Summary {
            final_source_acc: last.and_then(|m| m.source_accuracy),
            final_target_acc: last.and_then(|m| m.target_accuracy),
            mean_target_acc: mean(run.reports.iter().filter_map(|r| r.metrics.target_accuracy)),
            mean_gen_gap: mean(run.reports.iter().filter_map(|r| r.metrics.generalization_gap)),
            mean_cosine_var: mean(run.reports.iter().map(|r| r.metrics.cosine_variance)),
        }
    }

    fn fields(&self) -> [String; 5] {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            f(self.final_source_acc),
            f(self.final_target_acc),
            f(self.mean_target_acc),
            f(self.mean_gen_gap),
            f(self.mean_cosine_var),
        ]
    }
}

fn describe(summary: &Summary) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    format!(
        "source_acc {} target_acc {} mean_gap {} mean_cosine_var {}",
        f(summary.final_source_acc),
        f(summary.final_target_acc),
        f(summary.mean_gen_gap),
        f(summary.mean_cosine_var)
    )
}

pub fn run(config: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let run = execute(&cfg)?;
    write_outputs(&cfg, &run)?;
    println!(
        "{} rounds, {} -> {}",
        run.reports.len(),
        describe(&Summary::of(&run)),
        cfg.output.path.display()
    );
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Kappa,
    GlobalLr,
    LocalLr,
    Epochs,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Kappa => "kappa",
            SweepParam::GlobalLr => "global_lr",
            SweepParam::LocalLr => "local_lr",
            SweepParam::Epochs => "epochs",
        }
    }

    fn apply(self, cfg: &mut RunConfig, raw: &str) -> Result<(), ConfigError> {
        let bad = |why: String| ConfigError::new(format!("--values ({})", self.name()), why);
        let exp = &mut cfg.experiment;
        if self == SweepParam::Epochs {
            exp.local_epochs = raw
                .parse()
                .map_err(|_| bad(format!("{raw:?} is not a non-negative integer")))?;
            return Ok(());
        }
        let v: f64 = raw
            .parse()
            .map_err(|_| bad(format!("{raw:?} is not a number")))?;
        match self {
            SweepParam::Kappa => exp.aggregation.kappa = v,
            SweepParam::GlobalLr => exp.aggregation.global_lr = v,
            SweepParam::LocalLr => exp.local_lr = v,
            SweepParam::Epochs => unreachable!(),
        }
        Ok(())
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let name = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}_{suffix}.{ext}"),
        None => format!("{stem}_{suffix}"),
    };
    path.with_file_name(name)
}

/// Summary CSV columns.
pub const SUMMARY_COLUMNS: [&str; 8] = [
    "param",
    "value",
    "output",
    "final_source_acc",
    "final_target_acc",
    "mean_target_acc",
    "mean_gen_gap",
    "mean_cosine_var",
];

pub fn sweep(config: &Path, param: SweepParam, values: &[String]) -> Result<(), Failure> {
    let base = RunConfig::load(config)?;
    if values.is_empty() {
        return Err(ConfigError::new("--values", "needs at least one value").into());
    }
    let mut jobs = Vec::with_capacity(values.len());
    for raw in values {
        let raw = raw.trim();
        let mut cfg = base.clone();
        param.apply(&mut cfg, raw)?;
        cfg.output.path = with_suffix(&base.output.path, &format!("{}_{raw}", param.name()));
        cfg.validate()?;
        jobs.push((raw.to_string(), cfg));
    }

    let results: Vec<Result<Summary>> = jobs
        .par_iter()
        .map(|(_, cfg)| {
            let run = execute(cfg)?;
            write_outputs(cfg, &run)?;
            Ok(Summary::of(&run))
        })
        .collect();

    let summary_path = with_suffix(&base.output.path, &format!("{}_summary", param.name()))
        .with_extension("csv");
    let mut out = csv::Writer::from_path(&summary_path)
        .with_context(|| format!("creating {}", summary_path.display()))?;
    out.write_record(SUMMARY_COLUMNS).context("writing summary")?;
    for ((raw, cfg), result) in jobs.iter().zip(results) {
        let summary = result.with_context(|| format!("{} = {raw}", param.name()))?;
        println!("{} = {raw}: {}", param.name(), describe(&summary));
        let mut record = vec![
            param.name().to_string(),
            raw.clone(),
            cfg.output.path.display().to_string(),
        ];
        record.extend(summary.fields());
        out.write_record(&record).context("writing summary")?;
    }
    out.flush().context("writing summary")?;
    println!("summary -> {}", summary_path.display());
    Ok(())
}

pub fn oracle_check(instances: usize, seed: u64) -> Result<(), Failure> {
    if instances == 0 {
        return Err(ConfigError::new("--instances", "must be >= 1").into());
    }
    let suite = OracleSuite {
        instances,
        seed,
        ..OracleSuite::default()
    };
    let outcome = run_suite(&suite).map_err(anyhow::Error::from)?;
    println!(
        "max dual-oracle gap {:.3e} over {instances} instances (worst #{}, limit {ORACLE_TOLERANCE:e})",
        outcome.max_gap, outcome.worst_instance
    );
    if outcome.passed() {
        Ok(())
    } else {
        Err(anyhow::anyhow!("gap {:.3e} exceeds {ORACLE_TOLERANCE:e}", outcome.max_gap).into())
    }
}

fn write_rows(out: &mut csv::Writer<impl Write>, group: &str, split: Split, batch: &Batch) -> Result<()> {
    let split = match split {
        Split::Train => "train",
        Split::Test => "test",
    };
    for i in 0..batch.len() {
        let mut record = vec![group.to_string(), split.to_string()];
        record.extend(batch.row(i).iter().map(f64::to_string));
        record.push(batch.labels()[i].to_string());
        out.write_record(&record)?;
    }
    Ok(())
}

/// Writes the dataset a config describes as `group,split,x0..,label`, where
/// `group` is the domain for rect4 and the client for partitioned data
/// (empty for test rows).
pub fn gen_data(config: &Path, out_path: &Path) -> Result<(), Failure> {
    let cfg = RunConfig::load(config)?;
    let prepared = prepare(&cfg.dataset)?;
    let file = File::create(out_path).with_context(|| format!("creating {}", out_path.display()))?;
    let mut out = csv::Writer::from_writer(BufWriter::new(file));
    let dim = match &prepared {
        Prepared::Domains { domains, .. } => domains[0].batch.dim(),
        Prepared::Pooled { train, .. } => train.dim(),
    };
    let mut header = vec!["group".to_string(), "split".to_string()];
    header.extend((0..dim).map(|j| format!("x{j}")));
    header.push("label".into());
    out.write_record(&header).context("writing header")?;
    let mut rows = 0;
    match &prepared {
        Prepared::Domains { domains, .. } => {
            for d in domains {
                write_rows(&mut out, &d.domain_id.to_string(), d.split, &d.batch)?;
                rows += d.batch.len();
            }
        }
        Prepared::Pooled {
            train,
            test,
            partition,
        } => {
            for (id, shard) in dirichlet_partition(train, partition).map_err(anyhow::Error::from)?.iter().enumerate() {
                write_rows(&mut out, &id.to_string(), Split::Train, shard)?;
                rows += shard.len();
            }
            write_rows(&mut out, "", Split::Test, test)?;
            rows += test.len();
        }
    }
    out.flush().context("writing data")?;
    println!("{rows} rows -> {}", out_path.display());
    Ok(())
}
