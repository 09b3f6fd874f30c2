//! Training loop, evaluation and the experiment matrix.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{adam_step, AdamConfig, AdamState, ParamStore, Tape, Var};
use crate::baseline::{self, ClassifierParams, ClassifierTrainConfig, MmrConfig};
use crate::data::{derive_seed, splitmix64, GeneratorConfig, QueryExample};
use crate::decoder::{decode_on_tape, DecodeTrace, DecoderConfig, DecoderParams, Pointers};
use crate::encoder::{encode_on_tape, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{aggregate, query_metrics, MetricsReport, PredictionRecord};
use crate::exec::Exec;
use crate::objectives::{ce_loss, combine_losses, rl_loss, Labels, LossWeights, Objective, ObjectiveSet, RewardBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Dataset directory holding `train.jsonl`, `validation.jsonl` and `test.jsonl`.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub adam: AdamConfig,
    pub epochs: usize,
    /// Seeds parameter initialization, shuffling and sampling.
    pub seed: u64,
    pub split_seed: u64,
    pub objectives: ObjectiveSet,
    /// Bounds applied to the loss log-variances after every step.
    pub log_var_min: f64,
    pub log_var_max: f64,
    /// Global gradient-norm clip; zero disables clipping.
    pub grad_clip: f64,
    pub classifier: ClassifierTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            checkpoint: None,
            report: None,
            generator: GeneratorConfig::default(),
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            adam: AdamConfig::default(),
            epochs: 5,
            seed: 1,
            split_seed: 11,
            objectives: ObjectiveSet::parse("ce").expect("ce is valid"),
            log_var_min: -2.0,
            log_var_max: 10.0,
            grad_clip: 5.0,
            classifier: ClassifierTrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.decoder.validate()?;
        if self.encoder.d_raw != self.generator.d_raw {
            return Err(Error::Config(format!(
                "encoder d_raw {} differs from generator d_raw {}",
                self.encoder.d_raw, self.generator.d_raw
            )));
        }
        if self.encoder.d_a == 0 || self.encoder.d_e == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if !(self.log_var_min < self.log_var_max) {
            return Err(Error::Config("log_var_min must be below log_var_max".into()));
        }
        if self.grad_clip < 0.0 || !(self.adam.lr > 0.0) {
            return Err(Error::Config("grad_clip must be >= 0 and lr > 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "config_hash": self.hash(),
            "seed": self.seed,
            "objectives": self.objectives.row_name(),
            "config": self,
        })
    }
}

/// Parameter handles of the pointer model.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub weights: LossWeights,
}

impl ModelParams {
    pub fn embed(&self, tape: &Tape, store: &ParamStore, ex: &QueryExample) -> Result<Var> {
        let feats: Vec<&[f64]> = ex.candidates.iter().map(|c| c.features.as_slice()).collect();
        encode_on_tape(tape, store, &self.encoder, &ex.query_features, &feats)
    }
}

/// Encoder, decoder and loss weights in one parameter store.
#[derive(Debug, Clone)]
pub struct Model {
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    pub fn init(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x1417));
        let mut store = ParamStore::new();
        let encoder = EncoderParams::register(&mut store, "encoder", cfg.encoder, &mut rng)?;
        let decoder = DecoderParams::register(&mut store, "decoder", cfg.encoder.d_e, cfg.decoder, &mut rng)?;
        let weights = LossWeights::register(&mut store, cfg.objectives.len())?;
        Ok(Self {
            store,
            params: ModelParams {
                encoder,
                decoder,
                weights,
            },
        })
    }

    /// Rebuilds a model from restored parameters. Layer widths are read
    /// from the tensor shapes; `decoder` supplies the loop settings.
    pub fn from_store(store: ParamStore, decoder: DecoderConfig) -> Result<Self> {
        let dims = |name: &str| -> Result<[usize; 2]> {
            let t = store.tensor(store.require(name)?);
            Ok([t.rows(), t.cols()])
        };
        let [two_d_raw, d_a] = dims("encoder.pair_w1")?;
        let [_, d_e] = dims("encoder.proj_w")?;
        let [lstm_hidden, _] = dims("decoder.lstm.w_hidden")?;
        let [hmn_hidden, pool] = dims("decoder.hmn0.out_w")?;
        let enc_cfg = EncoderConfig {
            d_raw: two_d_raw / 2,
            d_a,
            d_e,
        };
        let dec_cfg = DecoderConfig {
            lstm_hidden,
            hmn_hidden,
            pool,
            ..decoder
        };
        let encoder = EncoderParams::lookup(&store, "encoder", enc_cfg)?;
        let decoder = DecoderParams::lookup(&store, "decoder", d_e, dec_cfg)?;
        let weights = LossWeights::lookup(&store)?;
        Ok(Self {
            store,
            params: ModelParams {
                encoder,
                decoder,
                weights,
            },
        })
    }

    fn embed(&self, tape: &Tape, ex: &QueryExample) -> Result<Var> {
        self.params.embed(tape, &self.store, ex)
    }

    /// Greedy decode of one query.
    pub fn decode(&self, ex: &QueryExample) -> Result<DecodeTrace> {
        let tape = Tape::new();
        let emb = self.embed(&tape, ex)?;
        let trace = decode_on_tape::<ChaCha8Rng>(&tape, &self.store, &self.params.decoder, emb, None)?;
        Ok(trace.to_trace(&tape))
    }

    pub fn predict(&self, ex: &QueryExample) -> Result<Pointers> {
        Ok(self.decode(ex)?.final_pointers)
    }

    /// Cross-entropy of the greedy decode, without gradients.
    pub fn ce_value(&self, ex: &QueryExample) -> Result<f64> {
        let tape = Tape::new();
        let emb = self.embed(&tape, ex)?;
        let trace = decode_on_tape::<ChaCha8Rng>(&tape, &self.store, &self.params.decoder, emb, None)?;
        let ce = ce_loss(&tape, &trace, &Labels::from_example(ex)?)?;
        Ok(tape.scalar(ce))
    }

    pub fn log_vars(&self) -> Vec<f64> {
        self.store.tensor(self.params.weights.log_var).values().to_vec()
    }
}

/// Loss values of one optimization step, in objective-set order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub query_id: u64,
    pub components: Vec<f64>,
    pub total: f64,
}

/// Records the losses of one query and returns `(total, components)`.
pub fn loss_on_tape(
    tape: &Tape,
    store: &ParamStore,
    model: &ModelParams,
    objectives: &ObjectiveSet,
    ex: &QueryExample,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Vec<Var>)> {
    let labels = Labels::from_example(ex)?;
    let emb = model.embed(tape, store, ex)?;
    let sampler = objectives.uses_rewards().then_some(rng);
    let trace = decode_on_tape(tape, store, &model.decoder, emb, sampler)?;
    let bundle = if objectives.uses_rewards() {
        Some(RewardBundle::compute(&trace, &labels)?)
    } else {
        None
    };
    let mut components = Vec::with_capacity(objectives.len());
    for o in objectives.iter() {
        let l = match (o.reward(), &bundle) {
            (None, _) => ce_loss(tape, &trace, &labels)?,
            (Some(kind), Some(b)) => rl_loss(tape, &trace, b, kind)?,
            (Some(_), None) => unreachable!("rewards are computed whenever a reward objective is active"),
        };
        components.push(l);
    }
    let s = tape.param(store, model.weights.log_var);
    Ok((combine_losses(tape, &components, s)?, components))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_ce: f64,
    pub mean_total: f64,
    pub log_vars: Vec<f64>,
    pub validation: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub config_hash: String,
    /// Mean greedy cross-entropy over the training queries before and after
    /// training.
    pub initial_train_ce: f64,
    pub final_train_ce: f64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the last epoch when there
    /// is no validation data).
    pub model: Model,
    pub log: TrainLog,
}

pub fn mean_ce(model: &Model, queries: &[&QueryExample], exec: Exec) -> Result<f64> {
    if queries.is_empty() {
        return Ok(0.0);
    }
    let v = exec.try_map(queries, |ex| model.ce_value(ex))?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn clip_gradients(store: &mut ParamStore, cfg: &RunConfig) {
    if cfg.grad_clip > 0.0 {
        let norm = store.grad_norm();
        if norm > cfg.grad_clip {
            store.scale_grads(cfg.grad_clip / norm);
        }
    }
}

fn first_ce(objectives: &ObjectiveSet) -> usize {
    objectives
        .iter()
        .position(|o| o == Objective::Ce)
        .expect("objective sets contain ce")
}

/// One query per step, shuffled each epoch. Aborts on a non-finite loss.
pub fn train(
    cfg: &RunConfig,
    train_set: &[&QueryExample],
    validation: &[&QueryExample],
    exec: Exec,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let mut model = Model::init(cfg)?;
    let mut adam = AdamState::new(&model.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5117));
    let ce_slot = first_ce(&cfg.objectives);
    let initial_train_ce = mean_ce(&model, train_set, exec)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut last_finite: Option<StepLosses> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum_ce, mut sum_total) = (0.0, 0.0);
        for &i in &order {
            let ex = train_set[i];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, epoch as u64), ex.query_id));
            let tape = Tape::new();
            let (total, parts) = loss_on_tape(&tape, &model.store, &model.params, &cfg.objectives, ex, &mut rng)?;
            let step = StepLosses {
                query_id: ex.query_id,
                components: parts.iter().map(|&v| tape.scalar(v)).collect(),
                total: tape.scalar(total),
            };
            if !step.total.is_finite() || step.components.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    query_id: ex.query_id,
                    detail: format!("losses {:?}; last finite step {:?}", step, last_finite),
                });
            }
            model.store.zero_grad();
            tape.backward(total, &mut model.store)?;
            clip_gradients(&mut model.store, cfg);
            adam_step(&mut model.store, &cfg.adam, &mut adam)?;
            for s in model.store.values_mut(model.params.weights.log_var) {
                *s = s.clamp(cfg.log_var_min, cfg.log_var_max);
            }
            if !model.store.all_finite() {
                return Err(Error::NonFinite {
                    query_id: ex.query_id,
                    detail: format!("parameters diverged after step {:?}", step),
                });
            }
            sum_ce += step.components[ce_slot];
            sum_total += step.total;
            last_finite = Some(step);
        }
        let n = train_set.len() as f64;
        let validation_metrics = if validation.is_empty() {
            None
        } else {
            let r = evaluate(&model, validation, exec, serde_json::Value::Null)?;
            Some([r.div_score, r.recall, r.p_at_1, r.em])
        };
        let score = validation_metrics.map_or(f64::NEG_INFINITY, |m| m[1]);
        if best.as_ref().is_none_or(|b| score > b.0 || validation_metrics.is_none()) {
            best = Some((score, epoch, model.store.clone()));
        }
        epochs.push(EpochLog {
            epoch,
            mean_ce: sum_ce / n,
            mean_total: sum_total / n,
            log_vars: model.log_vars(),
            validation: validation_metrics,
        });
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, store)) = best {
        model.store = store;
    }
    let final_train_ce = mean_ce(&model, train_set, exec)?;
    Ok(TrainOutcome {
        model,
        log: TrainLog {
            config_hash: cfg.hash(),
            initial_train_ce,
            final_train_ce,
            epochs,
            best_epoch,
        },
    })
}

pub fn predict_all(model: &Model, queries: &[&QueryExample], exec: Exec) -> Result<Vec<PredictionRecord>> {
    exec.try_map(queries, |ex| PredictionRecord::new(ex, model.predict(ex)?))
}

pub fn report_for(
    queries: &[&QueryExample],
    predictions: &[PredictionRecord],
    metadata: serde_json::Value,
) -> Result<MetricsReport> {
    let metrics = queries
        .iter()
        .zip(predictions)
        .map(|(ex, p)| Ok(query_metrics(p, &Labels::from_example(ex)?)))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&metrics, metadata)
}

pub fn evaluate(
    model: &Model,
    queries: &[&QueryExample],
    exec: Exec,
    metadata: serde_json::Value,
) -> Result<MetricsReport> {
    let preds = predict_all(model, queries, exec)?;
    report_for(queries, &preds, metadata)
}

/// A trained relevance classifier for the MMR rows.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub store: ParamStore,
    pub params: ClassifierParams,
}

impl Classifier {
    pub fn fit(cfg: &RunConfig, train_set: &[&QueryExample]) -> Result<(Self, Vec<f64>)> {
        let mut store = ParamStore::new();
        let params = ClassifierParams::register(&mut store, cfg.encoder, derive_seed(cfg.classifier.seed, 0xc1a5))?;
        let losses = baseline::train_classifier(train_set, &mut store, &params, &cfg.classifier)?;
        Ok((Self { store, params }, losses))
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let t = store.tensor(store.require("classifier.encoder.pair_w1")?);
        let [two_d_raw, d_a] = [t.rows(), t.cols()];
        let d_e = store.tensor(store.require("classifier.encoder.proj_w")?).cols();
        let cfg = EncoderConfig {
            d_raw: two_d_raw / 2,
            d_a,
            d_e,
        };
        let params = ClassifierParams::lookup(&store, cfg)?;
        Ok(Self { store, params })
    }

    pub fn predict_all(&self, queries: &[&QueryExample], gamma: f64, exec: Exec) -> Result<Vec<PredictionRecord>> {
        let mmr = MmrConfig::new(gamma)?;
        exec.try_map(queries, |ex| {
            PredictionRecord::new(ex, baseline::predict_block(&self.store, &self.params, ex, &mmr)?)
        })
    }

    pub fn evaluate(
        &self,
        queries: &[&QueryExample],
        gamma: f64,
        exec: Exec,
        metadata: serde_json::Value,
    ) -> Result<MetricsReport> {
        let preds = self.predict_all(queries, gamma, exec)?;
        report_for(queries, &preds, metadata)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowKind {
    Pointer { objectives: ObjectiveSet },
    Mmr { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub name: String,
    pub kind: RowKind,
}

impl MatrixRow {
    pub fn pointer(objectives: &str) -> Result<Self> {
        let set = ObjectiveSet::parse(objectives)?;
        Ok(Self {
            name: set.row_name(),
            kind: RowKind::Pointer { objectives: set },
        })
    }

    pub fn mmr(gamma: f64) -> Self {
        Self {
            name: format!("mmr(γ = {gamma:.1})"),
            kind: RowKind::Mmr { gamma },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub rows: Vec<MatrixRow>,
}

impl ExperimentMatrix {
    pub const POINTER_ROWS: [&'static str; 5] = ["ce", "ce+f1", "ce+f1+mrr", "ce+f1+div", "ce+f1+mrr+div"];

    pub fn table1() -> Self {
        let mut rows: Vec<MatrixRow> = Self::POINTER_ROWS
            .iter()
            .map(|r| MatrixRow::pointer(r).expect("valid row"))
            .collect();
        rows.push(MatrixRow::mmr(0.6));
        rows.push(MatrixRow::mmr(1.0));
        Self { rows }
    }

    pub fn pointer_only() -> Self {
        Self {
            rows: Self::table1().rows.into_iter().take(5).collect(),
        }
    }

    pub fn mmr_only() -> Self {
        Self {
            rows: Self::table1().rows.into_iter().skip(5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub name: String,
    pub div_score: Option<f64>,
    pub recall: Option<f64>,
    pub p_at_1: Option<f64>,
    pub em: Option<f64>,
    pub error: Option<String>,
}

impl RowResult {
    fn ok(name: &str, r: &MetricsReport) -> Self {
        Self {
            name: name.to_string(),
            div_score: Some(r.div_score),
            recall: Some(r.recall),
            p_at_1: Some(r.p_at_1),
            em: Some(r.em),
            error: None,
        }
    }

    fn failed(name: &str, e: &Error) -> Self {
        Self {
            name: name.to_string(),
            div_score: None,
            recall: None,
            p_at_1: None,
            em: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: Vec<RowResult>,
    pub metadata: serde_json::Value,
}

impl MatrixReport {
    pub fn row(&self, name: &str) -> Option<&RowResult> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn complete(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none())
    }

    /// Plain-text table with one line per row.
    pub fn table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.5}"));
        let mut out = format!("{:<16} {:>9} {:>9} {:>9} {:>9}\n", "row", "div_score", "recall", "p_at_1", "em");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<16} {:>9} {:>9} {:>9} {:>9}",
                r.name,
                cell(r.div_score),
                cell(r.recall),
                cell(r.p_at_1),
                cell(r.em)
            ));
            if let Some(e) = &r.error {
                out.push_str(&format!("  FAILED: {e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Trains and evaluates every row on a shared split. Pointer rows share
/// `base.seed`; MMR rows share one classifier, trained on first use unless
/// `classifier` is given. A failing row is reported, not propagated.
pub fn run_matrix(
    base: &RunConfig,
    matrix: &ExperimentMatrix,
    train_set: &[&QueryExample],
    validation: &[&QueryExample],
    test: &[&QueryExample],
    classifier: Option<&Classifier>,
    exec: Exec,
) -> Result<MatrixReport> {
    base.validate()?;
    let needs_classifier = matrix.rows.iter().any(|r| matches!(r.kind, RowKind::Mmr { .. }));
    let fitted = match (classifier, needs_classifier) {
        (None, true) => Some(Classifier::fit(base, train_set).map(|c| c.0)),
        _ => None,
    };
    let shared: Option<std::result::Result<&Classifier, String>> = match (classifier, &fitted) {
        (Some(c), _) => Some(Ok(c)),
        (None, Some(Ok(c))) => Some(Ok(c)),
        (None, Some(Err(e))) => Some(Err(e.to_string())),
        (None, None) => None,
    };

    let run_row = |row: &MatrixRow| -> RowResult {
        let result = match &row.kind {
            RowKind::Pointer { objectives } => {
                let cfg = RunConfig {
                    objectives: objectives.clone(),
                    ..base.clone()
                };
                train(&cfg, train_set, validation, exec)
                    .and_then(|out| evaluate(&out.model, test, exec, serde_json::Value::Null))
            }
            RowKind::Mmr { gamma } => match shared.as_ref().expect("classifier prepared for mmr rows") {
                Ok(c) => c.evaluate(test, *gamma, exec, serde_json::Value::Null),
                Err(e) => Err(Error::Contract(format!("classifier training failed: {e}"))),
            },
        };
        match result {
            Ok(r) => RowResult::ok(&row.name, &r),
            Err(e) => RowResult::failed(&row.name, &e),
        }
    };
    let rows = exec.map(&matrix.rows, run_row);
    Ok(MatrixReport {
        rows,
        metadata: serde_json::json!({
            "config_hash": base.hash(),
            "seed": base.seed,
            "rows": matrix.rows.iter().map(|r| r.name.clone()).collect::<Vec<_>>(),
            "test_queries": test.len(),
            "config": base,
        }),
    })
}

/// Median of each metric across several reports with the same rows.
pub fn median_report(reports: &[MatrixReport]) -> Result<MatrixReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Contract("no reports to combine".into()))?;
    let median = |mut v: Vec<f64>| -> f64 {
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        if v.len() % 2 == 1 {
            v[m]
        } else {
            0.5 * (v[m - 1] + v[m])
        }
    };
    let mut rows = Vec::with_capacity(first.rows.len());
    for (i, row) in first.rows.iter().enumerate() {
        let cells: Vec<&RowResult> = reports.iter().map(|r| &r.rows[i]).collect();
        if cells.iter().any(|c| c.name != row.name) {
            return Err(Error::Contract("reports have different rows".into()));
        }
        if let Some(failed) = cells.iter().find(|c| c.error.is_some()) {
            rows.push((*failed).clone());
            continue;
        }
        let pick = |f: fn(&RowResult) -> Option<f64>| Some(median(cells.iter().filter_map(|c| f(c)).collect()));
        rows.push(RowResult {
            name: row.name.clone(),
            div_score: pick(|c| c.div_score),
            recall: pick(|c| c.recall),
            p_at_1: pick(|c| c.p_at_1),
            em: pick(|c| c.em),
            error: None,
        });
    }
    Ok(MatrixReport {
        rows,
        metadata: serde_json::json!({
            "aggregate": "median",
            "runs": reports.iter().map(|r| r.metadata.clone()).collect::<Vec<_>>(),
        }),
    })
}

/// Stable 64-bit fingerprint of a slice of reports, used to compare reruns.
pub fn fingerprint(values: &[f64]) -> u64 {
    values
        .iter()
        .fold(0x9e37_79b9_7f4a_7c15, |h, v| splitmix64(h ^ v.to_bits()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_corpus, generate_corpus};

    fn tiny() -> RunConfig {
        RunConfig {
            generator: GeneratorConfig {
                num_queries: 12,
                mean_candidates_per_query: 10.0,
                d_raw: 4,
                k: 5,
                ..GeneratorConfig::default()
            },
            encoder: EncoderConfig { d_raw: 4, d_a: 6, d_e: 4 },
            decoder: DecoderConfig {
                lstm_hidden: 4,
                hmn_hidden: 4,
                pool: 2,
                ..DecoderConfig::default()
            },
            epochs: 1,
            ..RunConfig::default()
        }
    }

    fn corpus(cfg: &RunConfig) -> Vec<QueryExample> {
        let raw = generate_corpus(&cfg.generator, Exec::Sequential).unwrap();
        build_corpus(&raw, &cfg.generator, Exec::Sequential).0
    }

    #[test]
    fn weight_count_follows_objectives() {
        let mut cfg = tiny();
        assert_eq!(Model::init(&cfg).unwrap().log_vars().len(), 1);
        cfg.objectives = ObjectiveSet::parse("ce+f1+div+mrr").unwrap();
        assert_eq!(Model::init(&cfg).unwrap().log_vars().len(), 4);
    }

    #[test]
    fn row_names() {
        let names: Vec<String> = ExperimentMatrix::table1().rows.into_iter().map(|r| r.name).collect();
        assert_eq!(
            names,
            ["ce", "ce+f1", "ce+f1+mrr", "ce+f1+div", "ce+f1+mrr+div", "mmr(γ = 0.6)", "mmr(γ = 1.0)"]
        );
    }

    #[test]
    fn mismatched_widths_rejected() {
        let mut cfg = tiny();
        cfg.encoder.d_raw = 5;
        assert!(matches!(Model::init(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_config() {
        let a = tiny();
        let mut b = tiny();
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn from_store_recovers_shapes() {
        let cfg = tiny();
        let m = Model::init(&cfg).unwrap();
        let back = Model::from_store(m.store.clone(), cfg.decoder).unwrap();
        assert_eq!(back.params.encoder.config, cfg.encoder);
        assert_eq!(back.params.decoder.config, cfg.decoder);
    }

    #[test]
    fn one_epoch_with_rewards_runs() {
        let mut cfg = tiny();
        cfg.objectives = ObjectiveSet::parse("ce+f1+mrr+div").unwrap();
        let data = corpus(&cfg);
        let refs: Vec<&QueryExample> = data.iter().collect();
        let out = train(&cfg, &refs[..8], &refs[8..], Exec::Sequential).unwrap();
        assert_eq!(out.log.epochs.len(), 1);
        assert!(out.log.final_train_ce.is_finite());
        let s = out.model.log_vars();
        assert!(s.iter().all(|v| (cfg.log_var_min..=cfg.log_var_max).contains(v)));
    }

    #[test]
    fn median_of_three() {
        let mk = |x: f64| MatrixReport {
            rows: vec![RowResult::ok(
                "ce",
                &aggregate(
                    &[crate::eval::QueryMetrics {
                        query_id: 0,
                        div_score: x,
                        recall: x,
                        p_at_1: 0.0,
                        em: 0.0,
                    }],
                    serde_json::Value::Null,
                )
                .unwrap(),
            )],
            metadata: serde_json::Value::Null,
        };
        let m = median_report(&[mk(0.5), mk(0.25), mk(1.0)]).unwrap();
        assert_eq!(m.rows[0].div_score, Some(0.5));
    }
}
