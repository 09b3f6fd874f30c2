//! Training objectives: per-iteration cross-entropy, the three block
//! rewards, the self-critic policy-gradient loss and the uncertainty-weighted
//! combination.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::{QueryExample, BLOCK};
use crate::decoder::{Pointers, TapeTrace};
use crate::error::{Error, Result};

/// One training objective. Order of declaration is the order of the loss
/// terms in the weighted combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Ce,
    F1,
    Div,
    Mrr,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Ce, Objective::F1, Objective::Div, Objective::Mrr];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Ce => "ce",
            Objective::F1 => "f1",
            Objective::Div => "div",
            Objective::Mrr => "mrr",
        }
    }

    pub fn reward(self) -> Option<RewardKind> {
        match self {
            Objective::Ce => None,
            Objective::F1 => Some(RewardKind::Overlap),
            Objective::Div => Some(RewardKind::Diversity),
            Objective::Mrr => Some(RewardKind::Mrr),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ce" => Ok(Objective::Ce),
            "f1" => Ok(Objective::F1),
            "div" => Ok(Objective::Div),
            "mrr" => Ok(Objective::Mrr),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// Active objectives; always contains `ce`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Objective>", into = "Vec<Objective>")]
pub struct ObjectiveSet(BTreeSet<Objective>);

impl ObjectiveSet {
    pub fn new(objectives: impl IntoIterator<Item = Objective>) -> Result<Self> {
        let set: BTreeSet<Objective> = objectives.into_iter().collect();
        if !set.contains(&Objective::Ce) {
            return Err(Error::Config("objective set must contain ce".into()));
        }
        Ok(Self(set))
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::new(s.split(['+', ',']).map(str::parse).collect::<Result<Vec<_>>>()?)
    }

    pub fn iter(&self) -> impl Iterator<Item = Objective> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, o: Objective) -> bool {
        self.0.contains(&o)
    }

    pub fn uses_rewards(&self) -> bool {
        self.0.len() > 1
    }

    /// Row label in the results table, e.g. `ce+f1+mrr+div`.
    pub fn row_name(&self) -> String {
        [Objective::Ce, Objective::F1, Objective::Mrr, Objective::Div]
            .iter()
            .filter(|o| self.contains(**o))
            .map(|o| o.as_str())
            .collect::<Vec<_>>()
            .join("+")
    }
}

impl TryFrom<Vec<Objective>> for ObjectiveSet {
    type Error = Error;

    fn try_from(v: Vec<Objective>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ObjectiveSet> for Vec<Objective> {
    fn from(s: ObjectiveSet) -> Self {
        s.0.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardKind {
    Overlap,
    Diversity,
    Mrr,
}

impl RewardKind {
    fn slot(self) -> usize {
        match self {
            RewardKind::Overlap => 0,
            RewardKind::Diversity => 1,
            RewardKind::Mrr => 2,
        }
    }
}

/// Gold block of one query, as candidate indices plus cluster/rank
/// annotations of every candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub y: Pointers,
    pub y_clusters: [usize; BLOCK],
    pub y_ranks: [usize; BLOCK],
    pub candidate_clusters: Vec<usize>,
    pub candidate_ranks: Vec<usize>,
}

impl Labels {
    pub fn from_example(ex: &QueryExample) -> Result<Self> {
        let y = ex.label_indices()?;
        let candidate_clusters: Vec<usize> = ex.candidates.iter().map(|c| c.cluster_id).collect();
        let candidate_ranks: Vec<usize> = ex.candidates.iter().map(|c| c.rank_in_cluster).collect();
        Ok(Self {
            y,
            y_clusters: y.map(|i| candidate_clusters[i]),
            y_ranks: y.map(|i| candidate_ranks[i]),
            candidate_clusters,
            candidate_ranks,
        })
    }

    pub fn clusters(&self, p: &Pointers) -> [usize; BLOCK] {
        p.map(|i| self.candidate_clusters[i])
    }

    pub fn ranks(&self, p: &Pointers) -> [usize; BLOCK] {
        p.map(|i| self.candidate_ranks[i])
    }

    /// `[overlap, diversity, mrr]` of a predicted block.
    pub fn rewards(&self, p: &Pointers) -> Result<[f64; 3]> {
        Ok([
            reward_overlap(&self.y, p),
            reward_diversity(&self.clusters(p)),
            reward_mrr(&self.ranks(p))?,
        ])
    }
}

/// `|Y ∩ Yp| / |Y|` with set semantics on both sides.
pub fn reward_overlap(y: &[usize], yp: &[usize]) -> f64 {
    let gold: BTreeSet<usize> = y.iter().copied().collect();
    let pred: BTreeSet<usize> = yp.iter().copied().collect();
    gold.intersection(&pred).count() as f64 / y.len() as f64
}

/// Unique clusters over the number of predictions (duplicates count in the
/// denominator).
pub fn reward_diversity(clusters: &[usize]) -> f64 {
    let uniq: BTreeSet<usize> = clusters.iter().copied().collect();
    uniq.len() as f64 / clusters.len() as f64
}

pub fn reward_mrr(ranks: &[usize]) -> Result<f64> {
    if let Some(&bad) = ranks.iter().find(|&&r| r < 1) {
        return Err(Error::Contract(format!("rank {bad} is below 1")));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum())
}

/// Rewards of the sampled pointers at each decode step, and of the final
/// greedy pointers (the self-critic baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    pub steps: Vec<[f64; 3]>,
    pub baseline: [f64; 3],
}

impl RewardBundle {
    pub fn compute(trace: &TapeTrace, labels: &Labels) -> Result<Self> {
        let steps = trace
            .iterations
            .iter()
            .map(|it| {
                let s = it
                    .sampled
                    .ok_or_else(|| Error::Contract("trace has no sampled pointers".into()))?;
                labels.rewards(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            steps,
            baseline: labels.rewards(&trace.final_pointers())?,
        })
    }

    pub fn advantage(&self, step: usize, which: RewardKind) -> f64 {
        self.steps[step][which.slot()] - self.baseline[which.slot()]
    }
}

/// Sum over iterations and heads of the position-wise cross-entropy.
pub fn ce_loss(tape: &Tape, trace: &TapeTrace, labels: &Labels) -> Result<Var> {
    if trace.iterations.is_empty() {
        return Err(Error::Contract("empty decode trace".into()));
    }
    let mut terms = Vec::with_capacity(trace.iterations.len() * BLOCK);
    for it in &trace.iterations {
        for k in 0..BLOCK {
            terms.push(tape.softmax_cross_entropy(it.scores[k], labels.y[k])?);
        }
    }
    tape.add_all(&terms)
}

/// Self-critic policy-gradient loss
/// `-(1/T) sum_t (R_t - R_p) * log pi(sampled_t)`; the advantage is a
/// constant.
pub fn rl_loss(tape: &Tape, trace: &TapeTrace, rewards: &RewardBundle, which: RewardKind) -> Result<Var> {
    let t = trace.iterations.len();
    if t == 0 || rewards.steps.len() != t {
        return Err(Error::Contract("rewards do not match the trace".into()));
    }
    let mut terms = Vec::with_capacity(t);
    for (step, it) in trace.iterations.iter().enumerate() {
        let lp = it
            .sampled_log_prob
            .ok_or_else(|| Error::Contract(format!("missing log-probability at step {step}")))?;
        let adv = rewards.advantage(step, which);
        terms.push(tape.scale(lp, -adv / t as f64));
    }
    tape.add_all(&terms)
}

/// Trainable `s_i = ln w_i^2`, one per active objective, initialized to 0.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub log_var: ParamId,
    pub count: usize,
}

impl LossWeights {
    pub const NAME: &'static str = "objectives.log_var";

    pub fn register(store: &mut ParamStore, count: usize) -> Result<Self> {
        Ok(Self {
            log_var: store.insert_zeros(Self::NAME, 1, count)?,
            count,
        })
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let id = store.require(Self::NAME)?;
        Ok(Self {
            log_var: id,
            count: store.tensor(id).len(),
        })
    }
}

/// `sum_i exp(-s_i)/2 * l_i + s_i`.
pub fn combine_losses(tape: &Tape, losses: &[Var], s: Var) -> Result<Var> {
    let (_, width) = tape.shape(s);
    if losses.len() != width {
        return Err(Error::Dimension(format!(
            "{} losses for {width} weights",
            losses.len()
        )));
    }
    let mut terms = Vec::with_capacity(2 * losses.len());
    for (i, &l) in losses.iter().enumerate() {
        let si = tape.slice_cols(s, i, 1)?;
        let precision = tape.exp(tape.scale(si, -1.0));
        terms.push(tape.scale(tape.mul(precision, l)?, 0.5));
        terms.push(si);
    }
    tape.add_all(&terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_cases() {
        assert_eq!(reward_overlap(&[1, 2, 3, 4], &[4, 3, 2, 1]), 1.0);
        assert_eq!(reward_overlap(&[1, 2, 3, 4], &[5, 6, 7, 8]), 0.0);
        assert_eq!(reward_overlap(&[2, 5, 7, 9], &[2, 5, 5, 11]), 0.5);
    }

    #[test]
    fn diversity_cases() {
        assert_eq!(reward_diversity(&[0, 1, 2, 3]), 1.0);
        assert_eq!(reward_diversity(&[2, 2, 2, 2]), 0.25);
        assert_eq!(reward_diversity(&[3, 3, 1, 7]), 0.75);
    }

    #[test]
    fn mrr_cases() {
        assert_eq!(reward_mrr(&[1, 1, 1, 1]).unwrap(), 4.0);
        assert!((reward_mrr(&[1, 2, 4, 5]).unwrap() - 1.95).abs() < 1e-15);
        assert!(reward_mrr(&[1, 0, 2, 3]).is_err());
    }

    #[test]
    fn objective_sets() {
        let s = ObjectiveSet::parse("ce+f1+div+mrr").unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.row_name(), "ce+f1+mrr+div");
        assert!(ObjectiveSet::parse("f1+div").is_err());
        assert!(ObjectiveSet::parse("ce+bogus").is_err());
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"["ce","f1","div","mrr"]"#);
        let back: ObjectiveSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn combine_known_values() {
        let tape = Tape::new();
        let l: Vec<Var> = [2.0, 0.4, 1.0, 3.0].iter().map(|&v| tape.row(vec![v])).collect();
        let zero = tape.row(vec![0.0; 4]);
        let c = combine_losses(&tape, &l, zero).unwrap();
        assert!((tape.scalar(c) - 0.5 * 6.4).abs() < 1e-15);

        let s = tape.row(vec![4f64.ln()]);
        let c = combine_losses(&tape, &l[..1], s).unwrap();
        assert!((tape.scalar(c) - (0.25 + 4f64.ln())).abs() < 1e-12);
        assert!(combine_losses(&tape, &l[..2], s).is_err());
    }
}
