use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{splitmix64, QueryExample};
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_dataset(path: impl AsRef<Path>, corpus: &[QueryExample]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for q in corpus {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<QueryExample>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryExample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        q.validate().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

/// Train / validation / test partition by corpus index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn select<'a>(corpus: &'a [QueryExample], idx: &[usize]) -> Vec<&'a QueryExample> {
        idx.iter().map(|&i| &corpus[i]).collect()
    }
}

/// Splits 100:11:11 by a seeded hash of `query_id`. Queries are ordered by
/// hash and cut at the exact proportions, so sizes are within one query of
/// the target and membership does not depend on corpus order.
pub fn split(corpus: &[QueryExample], seed: u64) -> Split {
    let n = corpus.len();
    let mut order: Vec<(u64, u64, usize)> = corpus
        .iter()
        .enumerate()
        .map(|(i, q)| (splitmix64(q.query_id ^ splitmix64(seed)), q.query_id, i))
        .collect();
    order.sort_unstable();
    let n_val = (n as f64 * 11.0 / 122.0).round() as usize;
    let n_test = (n as f64 * 11.0 / 122.0).round() as usize;
    let n_train = n - n_val - n_test;
    let mut train: Vec<usize> = order[..n_train].iter().map(|o| o.2).collect();
    let mut validation: Vec<usize> = order[n_train..n_train + n_val].iter().map(|o| o.2).collect();
    let mut test: Vec<usize> = order[n_train + n_val..].iter().map(|o| o.2).collect();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Split {
        train,
        validation,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpus, generate_corpus, GeneratorConfig};
    use crate::exec::Exec;

    fn corpus(n: usize) -> Vec<QueryExample> {
        let cfg = GeneratorConfig {
            num_queries: n,
            mean_candidates_per_query: 16.0,
            d_raw: 6,
            ..GeneratorConfig::default()
        };
        build_corpus(&generate_corpus(&cfg, Exec::default()).unwrap(), &cfg, Exec::default()).0
    }

    #[test]
    fn round_trip() {
        let c = corpus(15);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &c).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), c);
    }

    #[test]
    fn malformed_line_reports_number() {
        let c = corpus(3);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &c).unwrap();
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("{\"query_id\": oops}\n");
        std::fs::write(&p, text).unwrap();
        match read_dataset(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, c.len() + 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn split_proportions_and_determinism() {
        let c = corpus(250);
        let s = split(&c, 9);
        let n = c.len() as f64;
        assert!((s.validation.len() as f64 - n * 11.0 / 122.0).abs() <= 1.0);
        assert!((s.test.len() as f64 - n * 11.0 / 122.0).abs() <= 1.0);
        assert!((s.train.len() as f64 - n * 100.0 / 122.0).abs() <= 1.0);
        assert_eq!(s, split(&c, 9));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..c.len()).collect::<Vec<_>>());
        // reordering the corpus does not change which query ids land where
        let mut rev = c.clone();
        rev.reverse();
        let s2 = split(&rev, 9);
        let ids = |corp: &[QueryExample], idx: &[usize]| {
            let mut v: Vec<u64> = idx.iter().map(|&i| corp[i].query_id).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(ids(&c, &s.test), ids(&rev, &s2.test));
    }
}
