use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use blockrec::autodiff::checkpoint;
use blockrec::data::QueryExample;
use blockrec::exec::Exec;
use blockrec::gradcheck::{run_suite, GradCheckConfig};
use blockrec::objectives::ObjectiveSet;
use blockrec::train::{self, median_report, Classifier, ExperimentMatrix, MatrixRow, Model, RunConfig};

mod dataset;

const DATA_DIR_ENV: &str = "BLOCKREC_DATA_DIR";

#[derive(Parser)]
#[command(name = "blockrec", version, about = "Block-level suggestion selection experiments")]
struct Cli {
    /// Run every data-parallel stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic click log, run the pipeline and write the splits.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to $BLOCKREC_DATA_DIR.
        #[arg(long, env = DATA_DIR_ENV)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the pointer model and write its best checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = DATA_DIR_ENV)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training log and test metrics.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Objective set such as `ce+f1+div`; overrides the config.
        #[arg(long)]
        objectives: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a pointer-model checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A dataset file, or a dataset directory (its test split is used).
        #[arg(long, env = DATA_DIR_ENV)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Supplies decoder loop settings; layer widths come from the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write per-query decode traces as JSON lines.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
    },
    /// Evaluate the relevance classifier with MMR reordering.
    MmrBaseline {
        #[arg(long)]
        gamma: f64,
        /// Classifier checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, env = DATA_DIR_ENV)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Train the classifier on the training split and write the checkpoint first.
        #[arg(long)]
        fit: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train and evaluate every row of the results table.
    RunMatrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = DATA_DIR_ENV)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Training seeds; the report holds the per-metric median.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Restrict to these rows, e.g. `ce,ce+f1,mmr:0.6`.
        #[arg(long, value_delimiter = ',')]
        rows: Option<Vec<String>>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn refs(v: &[QueryExample]) -> Vec<&QueryExample> {
    v.iter().collect()
}

fn parse_row(s: &str) -> Result<MatrixRow> {
    if let Some(g) = s.strip_prefix("mmr:") {
        return Ok(MatrixRow::mmr(g.parse().with_context(|| format!("bad gamma in {s}"))?));
    }
    Ok(MatrixRow::pointer(s)?)
}

fn run(cli: Cli) -> Result<bool> {
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::GenData { config, out, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.generator.seed = s;
            }
            let manifest = dataset::generate(&cfg, &out, exec)?;
            println!(
                "wrote {} train / {} validation / {} test queries to {} ({} rejected)",
                manifest.train, manifest.validation, manifest.test, out.display(), manifest.rejected.len()
            );
            Ok(true)
        }
        Command::Train { config, data, checkpoint: ckpt, report, objectives, seed } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(o) = objectives {
                cfg.objectives = ObjectiveSet::parse(&o)?;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = data.or(cfg.data.clone()).context("no dataset: pass --data or set BLOCKREC_DATA_DIR")?;
            let splits = dataset::load_dir(&dir)?;
            let out = train::train(&cfg, &refs(&splits.train), &refs(&splits.validation), exec)?;
            for e in &out.log.epochs {
                println!(
                    "epoch {} mean_ce {:.4} mean_total {:.4} validation {:?}",
                    e.epoch, e.mean_ce, e.mean_total, e.validation
                );
            }
            let ckpt = ckpt.or(cfg.checkpoint.clone()).unwrap_or_else(|| PathBuf::from("model.ckpt"));
            checkpoint::save(&out.model.store, &ckpt)?;
            println!("checkpoint {}", ckpt.display());
            let test = train::evaluate(&out.model, &refs(&splits.test), exec, cfg.metadata())?;
            println!("test div_score {:.5} recall {:.5} p_at_1 {:.5} em {:.5}", test.div_score, test.recall, test.p_at_1, test.em);
            if let Some(path) = report.or(cfg.report.clone()) {
                write_json(&path, &serde_json::json!({ "training": out.log, "test": test }))?;
            }
            Ok(true)
        }
        Command::Eval { checkpoint: ckpt, data, report, config, dump_trace } => {
            let decoder = load_config(config.as_deref())?.decoder;
            let records = checkpoint::read_records(&ckpt)?;
            let model = Model::from_store(checkpoint::to_store(&records)?, decoder)?;
            let queries = dataset::load_eval(&data)?;
            let queries = refs(&queries);
            let metadata = serde_json::json!({
                "checkpoint": ckpt,
                "data": data,
                "decoder": model.params.decoder.config,
                "encoder": model.params.encoder.config,
            });
            let r = train::evaluate(&model, &queries, exec, metadata)?;
            write_json(&report, &r)?;
            if let Some(path) = dump_trace {
                dataset::dump_traces(&model, &queries, &path, exec)?;
            }
            println!("div_score {:.5} recall {:.5} p_at_1 {:.5} em {:.5}", r.div_score, r.recall, r.p_at_1, r.em);
            Ok(true)
        }
        Command::MmrBaseline { gamma, checkpoint: ckpt, data, report, fit, config } => {
            let cfg = load_config(config.as_deref())?;
            let classifier = if fit {
                let splits = dataset::load_dir(&data)?;
                let (c, losses) = Classifier::fit(&cfg, &refs(&splits.train))?;
                println!("classifier epoch losses {losses:?}");
                checkpoint::save(&c.store, &ckpt)?;
                c
            } else {
                Classifier::from_store(checkpoint::to_store(&checkpoint::read_records(&ckpt)?)?)?
            };
            let queries = dataset::load_eval(&data)?;
            let metadata = serde_json::json!({ "gamma": gamma, "checkpoint": ckpt, "data": data });
            let r = classifier.evaluate(&refs(&queries), gamma, exec, metadata)?;
            write_json(&report, &r)?;
            println!("div_score {:.5} recall {:.5} p_at_1 {:.5} em {:.5}", r.div_score, r.recall, r.p_at_1, r.em);
            Ok(true)
        }
        Command::RunMatrix { config, data, report, seeds, rows } => {
            let cfg = load_config(config.as_deref())?;
            let matrix = match rows {
                Some(r) => ExperimentMatrix {
                    rows: r.iter().map(|s| parse_row(s)).collect::<Result<_>>()?,
                },
                None => ExperimentMatrix::table1(),
            };
            let splits = dataset::load_dir(&data)?;
            let (train_set, validation, test) = (refs(&splits.train), refs(&splits.validation), refs(&splits.test));
            let seeds = seeds.unwrap_or_else(|| vec![cfg.seed]);
            let mut reports = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let run_cfg = RunConfig { seed, ..cfg.clone() };
                let r = train::run_matrix(&run_cfg, &matrix, &train_set, &validation, &test, None, exec)?;
                println!("seed {seed}\n{}", r.table());
                reports.push(r);
            }
            let combined = if reports.len() == 1 {
                reports.pop().expect("one report")
            } else {
                let m = median_report(&reports)?;
                println!("median over seeds {seeds:?}\n{}", m.table());
                m
            };
            write_json(&report, &combined)?;
            Ok(combined.complete())
        }
        Command::Gradcheck { tolerance, seed } => {
            let cfg = GradCheckConfig { tolerance, seed, ..GradCheckConfig::default() };
            let results = run_suite(&cfg)?;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status} {:<24} max_rel_err {:.3e} over {} coordinates", r.name, r.max_rel_error, r.coordinates);
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
