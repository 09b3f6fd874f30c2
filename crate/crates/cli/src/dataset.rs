//! On-disk dataset layout: one directory with a JSON-lines file per split
//! and a manifest.

use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use blockrec::data::{build_corpus, generate_corpus, read_dataset, split, write_dataset, QueryExample, Split};
use blockrec::exec::Exec;
use blockrec::train::{Model, RunConfig};

pub const TRAIN: &str = "train.jsonl";
pub const VALIDATION: &str = "validation.jsonl";
pub const TEST: &str = "test.jsonl";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub rejected: Vec<(u64, String)>,
    pub config_hash: String,
    pub config: RunConfig,
}

pub struct Splits {
    pub train: Vec<QueryExample>,
    pub validation: Vec<QueryExample>,
    pub test: Vec<QueryExample>,
}

pub fn generate(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<Manifest> {
    let raw = generate_corpus(&cfg.generator, exec)?;
    let (corpus, rejected) = build_corpus(&raw, &cfg.generator, exec);
    let parts: Split = split(&corpus, cfg.split_seed);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write = |name: &str, idx: &[usize]| -> Result<()> {
        let subset: Vec<QueryExample> = idx.iter().map(|&i| corpus[i].clone()).collect();
        write_dataset(out.join(name), &subset)?;
        Ok(())
    };
    write(TRAIN, &parts.train)?;
    write(VALIDATION, &parts.validation)?;
    write(TEST, &parts.test)?;
    let manifest = Manifest {
        train: parts.train.len(),
        validation: parts.validation.len(),
        test: parts.test.len(),
        rejected: rejected.iter().map(|r| (r.query_id, r.reason.as_str().to_string())).collect(),
        config_hash: cfg.hash(),
        config: cfg.clone(),
    };
    std::fs::write(out.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn read(path: &Path) -> Result<Vec<QueryExample>> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_dir(dir: &Path) -> Result<Splits> {
    Ok(Splits {
        train: read(&dir.join(TRAIN))?,
        validation: read(&dir.join(VALIDATION))?,
        test: read(&dir.join(TEST))?,
    })
}

/// A single dataset file, or the test split of a dataset directory.
pub fn load_eval(path: &Path) -> Result<Vec<QueryExample>> {
    if path.is_dir() {
        read(&path.join(TEST))
    } else {
        read(path)
    }
}

pub fn dump_traces(model: &Model, queries: &[&QueryExample], path: &Path, exec: Exec) -> Result<()> {
    let traces = exec.try_map(queries, |q| model.decode(q).map(|t| (q.query_id, t)))?;
    let mut w = BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for (query_id, trace) in traces {
        serde_json::to_writer(&mut w, &serde_json::json!({ "query_id": query_id, "trace": trace }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
