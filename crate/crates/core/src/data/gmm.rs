//! Diagonal-covariance Gaussian mixture fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};

pub const VAR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    /// Components actually fitted.
    pub k: usize,
    /// Components asked for; larger than `k` when there were fewer distinct
    /// vectors than requested.
    pub requested_k: usize,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub log_likelihood_trace: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl GmmModel {
    fn component_log_density(&self, j: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xi, &mu), &var) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
            let d = xi - mu;
            acc += LN_2PI + var.ln() + d * d / var;
        }
        -0.5 * acc
    }

    fn joint_log(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|j| self.weights[j].ln() + self.component_log_density(j, x))
            .collect()
    }

    /// Posterior component probabilities of `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let lj = self.joint_log(x);
        let lse = log_sum_exp(&lj);
        lj.iter().map(|l| (l - lse).exp()).collect()
    }

    /// Most responsible component; ties resolve to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let lj = self.joint_log(x);
        let mut best = 0;
        for (j, &v) in lj.iter().enumerate().skip(1) {
            if v > lj[best] {
                best = j;
            }
        }
        best
    }

    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        data.iter().map(|x| log_sum_exp(&self.joint_log(x))).sum()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_count(data: &[Vec<f64>]) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for x in data {
        if !seen.iter().any(|s| *s == x) {
            seen.push(x);
        }
    }
    seen.len()
}

/// Greedy k-means++ seeding: each round draws several D²-weighted
/// candidates and keeps the one that lowers the potential most.
fn kmeans_pp(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut centers = vec![data[first].clone()];
    let mut closest: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[first])).collect();
    while centers.len() < k {
        let total: f64 = closest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = if total > 0.0 {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &w) in closest.iter().enumerate() {
                    if u < w {
                        chosen = i;
                        break;
                    }
                    u -= w;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            let updated: Vec<f64> = data
                .iter()
                .zip(&closest)
                .map(|(x, &c)| c.min(sq_dist(x, &data[pick])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, pick, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one trial");
        centers.push(data[pick].clone());
        closest = updated;
    }
    centers
}

/// Fits a `k`-component diagonal GMM. With fewer distinct vectors than `k`
/// the fit falls back to that many components and records the request in
/// `requested_k`.
pub fn fit_gmm(data: &[Vec<f64>], k: usize, max_iter: usize, tol: f64, seed: u64) -> Result<GmmModel> {
    fit_gmm_with_floor(data, k, max_iter, tol, seed, VAR_FLOOR)
}

pub fn fit_gmm_with_floor(
    data: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
    var_floor: f64,
) -> Result<GmmModel> {
    if data.is_empty() || k == 0 {
        return Err(Error::Contract("gmm needs at least one vector and component".into()));
    }
    let d = data[0].len();
    if d == 0 || data.iter().any(|x| x.len() != d) {
        return Err(Error::Dimension("gmm vectors must share a positive width".into()));
    }
    let n = data.len();
    let k_eff = k.min(distinct_count(data));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mean_all: Vec<f64> = (0..d)
        .map(|c| data.iter().map(|x| x[c]).sum::<f64>() / n as f64)
        .collect();
    let var_all: Vec<f64> = (0..d)
        .map(|c| {
            let v = data.iter().map(|x| (x[c] - mean_all[c]).powi(2)).sum::<f64>() / n as f64;
            v.max(var_floor)
        })
        .collect();

    // Moments of the hard nearest-seed partition; an empty cell keeps its
    // seed as mean and the pooled variance.
    let seeds = kmeans_pp(data, k_eff, &mut rng);
    let mut members: Vec<Vec<&Vec<f64>>> = vec![Vec::new(); k_eff];
    for x in data {
        let nearest = (0..k_eff)
            .min_by(|&a, &b| sq_dist(x, &seeds[a]).total_cmp(&sq_dist(x, &seeds[b])))
            .expect("k_eff >= 1");
        members[nearest].push(x);
    }
    let mut means = seeds;
    let mut variances = vec![var_all; k_eff];
    let mut weights = vec![1.0 / k_eff as f64; k_eff];
    for (j, m) in members.iter().enumerate() {
        if m.is_empty() {
            continue;
        }
        let nj = m.len() as f64;
        weights[j] = nj / n as f64;
        means[j] = (0..d).map(|c| m.iter().map(|x| x[c]).sum::<f64>() / nj).collect();
        variances[j] = (0..d)
            .map(|c| (m.iter().map(|x| (x[c] - means[j][c]).powi(2)).sum::<f64>() / nj).max(var_floor))
            .collect();
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut model = GmmModel {
        k: k_eff,
        requested_k: k,
        means,
        variances,
        weights,
        log_likelihood_trace: Vec::new(),
    };

    let mut resp = vec![0.0; n * k_eff];
    for _ in 0..max_iter.max(1) {
        // E-step
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let lj = model.joint_log(x);
            let lse = log_sum_exp(&lj);
            ll += lse;
            for (j, l) in lj.iter().enumerate() {
                resp[i * k_eff + j] = (l - lse).exp();
            }
        }
        let converged = model
            .log_likelihood_trace
            .last()
            .is_some_and(|&prev| ll - prev < tol);
        model.log_likelihood_trace.push(ll);
        if converged {
            break;
        }
        // M-step
        for j in 0..k_eff {
            let nj: f64 = (0..n).map(|i| resp[i * k_eff + j]).sum();
            if nj <= 0.0 {
                continue;
            }
            model.weights[j] = nj / n as f64;
            for c in 0..d {
                model.means[j][c] = (0..n).map(|i| resp[i * k_eff + j] * data[i][c]).sum::<f64>() / nj;
            }
            for c in 0..d {
                let mu = model.means[j][c];
                let v = (0..n)
                    .map(|i| resp[i * k_eff + j] * (data[i][c] - mu).powi(2))
                    .sum::<f64>()
                    / nj;
                model.variances[j][c] = v.max(var_floor);
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(model)
}
