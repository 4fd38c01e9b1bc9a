//! Diagonal-covariance Gaussian mixture fitted by expectation maximization.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    pub components: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub variance_floor: f64,
}

impl GmmConfig {
    pub fn new(components: usize, seed: u64) -> Self {
        GmmConfig {
            components,
            seed,
            max_iter: 200,
            tol: 1e-6,
            restarts: 1,
            variance_floor: VARIANCE_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    /// Log-likelihood evaluated at the start of every EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub seed: u64,
    pub converged: bool,
}

impl MixtureModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Per-component log joint densities `ln w_k + ln N(x | mu_k, var_k)`.
    pub fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k())
            .map(|k| {
                let mut lp = self.weights[k].ln();
                for ((xi, mu), var) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                    let diff = xi - mu;
                    lp -= 0.5 * ((2.0 * PI * var).ln() + diff * diff / var);
                }
                lp
            })
            .collect()
    }

    /// Posterior component probabilities and the row's log-likelihood.
    pub fn posterior(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let lj = self.log_joint(x);
        let ll = log_sum_exp(&lj);
        (lj.iter().map(|v| (v - ll).exp()).collect(), ll)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, the rest proportional to the
/// squared distance to the nearest chosen center.
fn kmeans_pp(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &rows[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            (0..n).find(|i| !chosen.contains(i)).expect("n >= k")
        };
        chosen.push(next);
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &rows[next]));
        }
    }
    chosen
}

fn fit_once(rows: &[Vec<f64>], config: &GmmConfig, seed: u64) -> MixtureModel {
    let n = rows.len();
    let d = rows[0].len();
    let k = config.components;
    let floor = config.variance_floor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mean_all: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let var_all: Vec<f64> = (0..d)
        .map(|j| {
            (rows
                .iter()
                .map(|r| (r[j] - mean_all[j]).powi(2))
                .sum::<f64>()
                / n as f64)
                .max(floor)
        })
        .collect();

    let mut model = MixtureModel {
        weights: vec![1.0 / k as f64; k],
        means: kmeans_pp(rows, k, &mut rng)
            .into_iter()
            .map(|i| rows[i].clone())
            .collect(),
        variances: vec![var_all; k],
        log_likelihood: f64::NEG_INFINITY,
        log_likelihood_trace: Vec::new(),
        seed,
        converged: false,
    };

    let mut resp = vec![vec![0.0; k]; n];
    for iter in 0..config.max_iter.max(1) {
        // E-step; the sum runs in row order so the result is reproducible
        let mut ll = 0.0;
        for (i, row) in rows.iter().enumerate() {
            let (post, row_ll) = model.posterior(row);
            resp[i] = post;
            ll += row_ll;
        }
        model.log_likelihood = ll;
        let prev = model.log_likelihood_trace.last().copied();
        model.log_likelihood_trace.push(ll);
        if let Some(prev) = prev {
            if ll - prev < config.tol {
                model.converged = true;
                break;
            }
        }
        if iter + 1 == config.max_iter {
            break;
        }

        // M-step
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            model.weights[c] = nk / n as f64;
            if nk <= 0.0 {
                continue;
            }
            let mean: Vec<f64> = (0..d)
                .map(|j| {
                    rows.iter()
                        .zip(&resp)
                        .map(|(x, r)| r[c] * x[j])
                        .sum::<f64>()
                        / nk
                })
                .collect();
            let var: Vec<f64> = (0..d)
                .map(|j| {
                    let v = rows
                        .iter()
                        .zip(&resp)
                        .map(|(x, r)| r[c] * (x[j] - mean[j]).powi(2))
                        .sum::<f64>()
                        / nk;
                    v.max(floor)
                })
                .collect();
            model.means[c] = mean;
            model.variances[c] = var;
        }
        let wsum: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= wsum);
    }
    model
}

/// Fits a diagonal Gaussian mixture to the rows of `rows`. With several
/// restarts the run with the highest final log-likelihood wins (earliest on
/// ties); restart `r` uses seed `config.seed + r`.
pub fn fit_gmm(rows: &[Vec<f64>], config: &GmmConfig) -> Result<MixtureModel> {
    let k = config.components;
    if k == 0 {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    if rows.len() < k {
        return Err(Error::Config(format!(
            "{} rows cannot support {k} components",
            rows.len()
        )));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("rows must share a non-zero dimension".into()));
    }
    if rows.iter().any(|r| r.iter().any(|x| !x.is_finite())) {
        return Err(Error::Validation(
            "non-finite value in mixture input".into(),
        ));
    }
    if rows.iter().all(|r| r == &rows[0]) {
        return Err(Error::Degenerate("all points are identical".into()));
    }
    let mut best: Option<MixtureModel> = None;
    for r in 0..config.restarts.max(1) {
        let model = fit_once(rows, config, config.seed.wrapping_add(r as u64));
        if best
            .as_ref()
            .is_none_or(|b| model.log_likelihood > b.log_likelihood)
        {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one restart"))
}
