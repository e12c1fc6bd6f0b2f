//! Spatial Stochastic EM for Gaussian mixtures over the window feature
//! grid.
//!
//! Each restart starts from uniformly random labels over `k_init`
//! classes and iterates M-step, E-step, a Potts-style spatial tilt of
//! the posteriors (`tau * exp(beta * m)` with `m` the fraction of
//! 6-neighbours sharing the class), a sampling S-step, and pruning of
//! classes below the minimum population. The best restart by observed
//! log-likelihood is kept and its surviving components are merged by
//! Bhattacharyya distance down to two clusters; the smaller cluster
//! becomes the anomaly.
//!
//! With `beta = 0` the spatial tilt multiplies every posterior by
//! exactly 1.0, so the algorithm reduces bit-for-bit to classical SEM
//! (a tested contract; see [`sem_fit_classical`]).

use crate::cluster::ClusterMap;
use crate::features::FeatureGrid;
use crate::io_error::{FileError, FileResult};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SemError {
    #[error("need at least {needed} windows for k_init = {k_init} in dimension {dim}, got {got}")]
    TooFewWindows {
        needed: usize,
        got: usize,
        k_init: usize,
        dim: usize,
    },
    #[error("invalid SEM parameters: {0}")]
    InvalidParams(String),
}

/// Tuning knobs of the spatial SEM fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemParams {
    /// Initial number of classes; pruning and merging reduce it.
    pub k_init: usize,
    pub max_iterations: usize,
    /// Spatial coupling strength; 0 disables the neighbour tilt.
    pub beta: f64,
    /// Convergence: stop when fewer than this fraction of labels change.
    pub epsilon_label: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Minimum class population before pruning; `None` derives
    /// `max(d + 2, ceil(0.005 n))` from the data.
    pub prune_min: Option<usize>,
}

impl Default for SemParams {
    fn default() -> Self {
        Self {
            k_init: 10,
            max_iterations: 200,
            beta: 1.0,
            epsilon_label: 0.005,
            restarts: 5,
            seed: 0,
            prune_min: None,
        }
    }
}

/// One fitted mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

/// Result of a spatial SEM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SemFit {
    pub cluster_map: ClusterMap,
    /// Final components after merging, matching the cluster labels.
    pub components: Vec<GaussianComponent>,
    /// Observed-data log-likelihood per iteration of the kept restart.
    pub log_likelihood: Vec<f64>,
    /// Final log-likelihood of every restart; the kept one is maximal.
    pub restart_log_likelihoods: Vec<f64>,
    pub kept_restart: usize,
}

#[derive(Serialize)]
struct MixtureJson<'a> {
    weights: Vec<f64>,
    means: Vec<&'a [f64]>,
    covariances: Vec<&'a [Vec<f64>]>,
    log_likelihood_trace: &'a [f64],
    restart_log_likelihoods: &'a [f64],
    kept_restart: usize,
}

impl SemFit {
    /// JSON export of the fitted mixture and likelihood traces.
    pub fn save_mixture_json(&self, path: &Path) -> FileResult<()> {
        let json = MixtureJson {
            weights: self.components.iter().map(|c| c.weight).collect(),
            means: self.components.iter().map(|c| c.mean.as_slice()).collect(),
            covariances: self
                .components
                .iter()
                .map(|c| c.covariance.as_slice())
                .collect(),
            log_likelihood_trace: &self.log_likelihood,
            restart_log_likelihoods: &self.restart_log_likelihoods,
            kept_restart: self.kept_restart,
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&json).expect("mixture serializes"),
        )
        .map_err(|e| FileError::io(path, e))?;
        Ok(())
    }
}

/// One uniform draw from a counter-based substream: every
/// (seed, restart, iteration, slot) tuple keys an independent ChaCha
/// stream, so sampling parallelizes without losing reproducibility.
fn counter_uniform(seed: u64, restart: u64, iter: u64, slot: u64) -> f64 {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&restart.to_le_bytes());
    key[16..24].copy_from_slice(&iter.to_le_bytes());
    key[24..32].copy_from_slice(&slot.to_le_bytes());
    ChaCha8Rng::from_seed(key).gen::<f64>()
}

/// Picks an index from unnormalized non-negative weights.
fn sample_categorical(weights: &[f64], live: &[bool], u: f64) -> usize {
    let total: f64 = weights
        .iter()
        .zip(live)
        .filter(|(_, &l)| l)
        .map(|(w, _)| w)
        .sum();
    let mut target = u * total;
    let mut last_live = 0;
    for (k, (&w, &l)) in weights.iter().zip(live).enumerate() {
        if !l {
            continue;
        }
        last_live = k;
        if target < w {
            return k;
        }
        target -= w;
    }
    last_live
}

struct Mixture {
    /// Per component: weight, mean, Cholesky of the covariance.
    weight: Vec<f64>,
    mean: Vec<DVector<f64>>,
    chol: Vec<Cholesky<f64, nalgebra::Dyn>>,
    cov: Vec<DMatrix<f64>>,
    live: Vec<bool>,
}

/// M-step: per-class weight/mean/covariance from hard labels, with the
/// covariance floored by `1e-6 * per-dimension data variance`.
fn m_step(
    data: &[f64],
    d: usize,
    labels: &[u32],
    k_init: usize,
    live: &[bool],
    floor: &[f64],
) -> Mixture {
    let n = labels.len();
    let mut counts = vec![0usize; k_init];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let mut weight = vec![0.0; k_init];
    let mut mean = vec![DVector::zeros(d); k_init];
    let mut cov: Vec<DMatrix<f64>> = vec![DMatrix::zeros(d, d); k_init];
    let mut live = live.to_vec();
    for k in 0..k_init {
        if counts[k] == 0 {
            live[k] = false;
        }
    }
    for (i, &l) in labels.iter().enumerate() {
        let k = l as usize;
        for c in 0..d {
            mean[k][c] += data[i * d + c];
        }
    }
    for k in 0..k_init {
        if live[k] {
            mean[k] /= counts[k] as f64;
            weight[k] = counts[k] as f64 / n as f64;
        }
    }
    for (i, &l) in labels.iter().enumerate() {
        let k = l as usize;
        for r in 0..d {
            let dr = data[i * d + r] - mean[k][r];
            for c in 0..d {
                let dc = data[i * d + c] - mean[k][c];
                cov[k][(r, c)] += dr * dc;
            }
        }
    }
    let mut chol = Vec::with_capacity(k_init);
    for k in 0..k_init {
        if live[k] {
            cov[k] /= counts[k] as f64;
        }
        for c in 0..d {
            cov[k][(c, c)] += floor[c];
        }
        // The diagonal floor keeps the matrix positive definite; a
        // failed factorization would mean the floor itself is broken.
        chol.push(
            Cholesky::new(cov[k].clone())
                .expect("floored covariance is positive definite"),
        );
    }
    // Renormalize weights over live components.
    let total: f64 = (0..k_init).filter(|&k| live[k]).map(|k| weight[k]).sum();
    if total > 0.0 {
        for k in 0..k_init {
            if live[k] {
                weight[k] /= total;
            }
        }
    }
    Mixture {
        weight,
        mean,
        chol,
        cov,
        live,
    }
}

/// Log density of N(mean, cov) via the cached Cholesky factor.
fn log_gaussian(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let solved = chol.solve(&diff);
    let quad = diff.dot(&solved);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + quad)
}

struct RestartOutcome {
    labels: Vec<u32>,
    live: Vec<bool>,
    trace: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_restart(
    data: &[f64],
    d: usize,
    adjacency: &[Vec<u32>],
    params: &SemParams,
    n_min: usize,
    floor: &[f64],
    restart: usize,
    spatial: bool,
) -> RestartOutcome {
    let n = adjacency.len();
    let k_init = params.k_init;

    // Step 1: uniform random initial labels (iteration 0 substream).
    let mut labels: Vec<u32> = (0..n)
        .map(|i| {
            let u = counter_uniform(params.seed, restart as u64, 0, i as u64);
            ((u * k_init as f64) as usize).min(k_init - 1) as u32
        })
        .collect();
    let mut live = vec![true; k_init];
    let mut trace = Vec::new();

    for iter in 1..=params.max_iterations {
        // Step 2: M-step.
        let mix = m_step(data, d, &labels, k_init, &live, floor);
        live = mix.live.clone();

        // Step 3: E-step posteriors (normalized rows) and the
        // observed-data log-likelihood.
        let rows: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = DVector::from_column_slice(&data[i * d..(i + 1) * d]);
                let mut log_tau = vec![f64::NEG_INFINITY; k_init];
                let mut row_max = f64::NEG_INFINITY;
                for k in 0..k_init {
                    if !live[k] {
                        continue;
                    }
                    let lp = mix.weight[k].ln() + log_gaussian(&x, &mix.mean[k], &mix.chol[k]);
                    log_tau[k] = lp;
                    if lp > row_max {
                        row_max = lp;
                    }
                }
                let mut sum = 0.0;
                for k in 0..k_init {
                    if live[k] {
                        sum += (log_tau[k] - row_max).exp();
                    }
                }
                let log_norm = row_max + sum.ln();
                let tau: Vec<f64> = (0..k_init)
                    .map(|k| {
                        if live[k] {
                            (log_tau[k] - log_norm).exp()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                (tau, log_norm)
            })
            .collect();
        trace.push(rows.iter().map(|(_, ll)| ll).sum());

        // Step 4 + 5: spatial tilt and sampling S-step.
        let prev = labels.clone();
        let mut new_labels: Vec<u32> = (0..n)
            .into_par_iter()
            .map(|i| {
                let (tau, _) = &rows[i];
                let tilted: Vec<f64> = if spatial {
                    let neigh = &adjacency[i];
                    let mut tilt = tau.clone();
                    if !neigh.is_empty() {
                        for (k, t) in tilt.iter_mut().enumerate() {
                            if !live[k] {
                                continue;
                            }
                            let agree = neigh
                                .iter()
                                .filter(|&&j| prev[j as usize] == k as u32)
                                .count();
                            *t *= (params.beta * agree as f64 / neigh.len() as f64).exp();
                        }
                    }
                    tilt
                } else {
                    tau.clone()
                };
                let u = counter_uniform(params.seed, restart as u64, iter as u64, i as u64);
                sample_categorical(&tilted, &live, u) as u32
            })
            .collect();

        // Step 6: prune classes below the population minimum and
        // resample their members over the survivors.
        let mut counts = vec![0usize; k_init];
        for &l in &new_labels {
            counts[l as usize] += 1;
        }
        let mut pruned = live.clone();
        for k in 0..k_init {
            if live[k] && counts[k] < n_min {
                pruned[k] = false;
            }
        }
        if !pruned.iter().any(|&l| l) {
            // Everything fell below the minimum; keep the largest class.
            let largest = (0..k_init)
                .filter(|&k| live[k])
                .max_by_key(|&k| counts[k])
                .expect("at least one live class");
            pruned[largest] = true;
        }
        if pruned != live {
            let resampled: Vec<u32> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let l = new_labels[i] as usize;
                    if pruned[l] {
                        return new_labels[i];
                    }
                    let (tau, _) = &rows[i];
                    let u = counter_uniform(
                        params.seed,
                        restart as u64,
                        iter as u64,
                        (n + i) as u64,
                    );
                    sample_categorical(tau, &pruned, u) as u32
                })
                .collect();
            new_labels = resampled;
            live = pruned;
        }

        let changed = new_labels
            .iter()
            .zip(&prev)
            .filter(|(a, b)| a != b)
            .count();
        labels = new_labels;
        if (changed as f64) < params.epsilon_label * n as f64 {
            break;
        }
    }

    RestartOutcome { labels, live, trace }
}

/// Bhattacharyya distance between two Gaussians.
fn bhattacharyya(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> f64 {
    let avg = (cov_a + cov_b) * 0.5;
    let chol_avg = match Cholesky::new(avg.clone()) {
        Some(c) => c,
        None => return f64::INFINITY,
    };
    let log_det = |c: &Cholesky<f64, nalgebra::Dyn>| -> f64 {
        c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0
    };
    let diff = mean_a - mean_b;
    let quad = diff.dot(&chol_avg.solve(&diff));
    let ld_avg = log_det(&chol_avg);
    let ld_a = Cholesky::new(cov_a.clone()).map(|c| log_det(&c)).unwrap_or(f64::NEG_INFINITY);
    let ld_b = Cholesky::new(cov_b.clone()).map(|c| log_det(&c)).unwrap_or(f64::NEG_INFINITY);
    quad / 8.0 + 0.5 * (ld_avg - 0.5 * (ld_a + ld_b))
}

/// Components whose Bhattacharyya distance falls below this are
/// considered identical; merging continues through them even at two
/// remaining clusters (degenerate data collapses to one).
const MERGE_EPSILON: f64 = 1e-9;

/// Fits the spatial SEM mixture and derives the binary anomaly map.
pub fn sem_fit(features: &FeatureGrid, params: &SemParams) -> Result<SemFit, SemError> {
    sem_fit_impl(features, params, true)
}

/// Classical (non-spatial) SEM: identical to [`sem_fit`] with the
/// spatial step removed. With `beta = 0` both produce identical output
/// for the same seed.
pub fn sem_fit_classical(features: &FeatureGrid, params: &SemParams) -> Result<SemFit, SemError> {
    sem_fit_impl(features, params, false)
}

fn sem_fit_impl(
    features: &FeatureGrid,
    params: &SemParams,
    spatial: bool,
) -> Result<SemFit, SemError> {
    if params.k_init < 2 {
        return Err(SemError::InvalidParams("k_init must be >= 2".into()));
    }
    if params.beta < 0.0 {
        return Err(SemError::InvalidParams("beta must be >= 0".into()));
    }
    if params.restarts == 0 || params.max_iterations == 0 {
        return Err(SemError::InvalidParams(
            "restarts and max_iterations must be positive".into(),
        ));
    }
    let n = features.len();
    let d = features.dim();
    let needed = params.k_init * (d + 2);
    if n < needed {
        return Err(SemError::TooFewWindows {
            needed,
            got: n,
            k_init: params.k_init,
            dim: d,
        });
    }
    let data = features.matrix();
    let positions = features.positions();

    // 6-neighbourhood adjacency on the window grid; skipped windows
    // simply do not appear.
    let index: HashMap<[usize; 3], u32> = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i as u32))
        .collect();
    let adjacency: Vec<Vec<u32>> = positions
        .iter()
        .map(|&p| {
            let mut neigh = Vec::new();
            for axis in 0..3 {
                for delta in [-1isize, 1] {
                    let q = p[axis] as isize + delta;
                    if q < 0 {
                        continue;
                    }
                    let mut key = p;
                    key[axis] = q as usize;
                    if let Some(&j) = index.get(&key) {
                        neigh.push(j);
                    }
                }
            }
            neigh
        })
        .collect();

    // Covariance floor from per-dimension data variance.
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            mean[c] += data[i * d + c];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut variance = vec![0.0; d];
    for i in 0..n {
        for c in 0..d {
            let dv = data[i * d + c] - mean[c];
            variance[c] += dv * dv;
        }
    }
    let floor: Vec<f64> = variance
        .iter()
        .map(|v| (1e-6 * v / n as f64).max(1e-12))
        .collect();
    let n_min = params
        .prune_min
        .unwrap_or_else(|| (d + 2).max((0.005 * n as f64).ceil() as usize));

    // Restarts are independent; counter-based substreams keep them
    // reproducible regardless of scheduling.
    let outcomes: Vec<RestartOutcome> = (0..params.restarts)
        .into_par_iter()
        .map(|r| run_restart(&data, d, &adjacency, params, n_min, &floor, r, spatial))
        .collect();
    let restart_lls: Vec<f64> = outcomes
        .iter()
        .map(|o| *o.trace.last().expect("at least one iteration"))
        .collect();
    let kept = restart_lls
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite log-likelihoods"))
        .map(|(i, _)| i)
        .expect("at least one restart");
    debug_assert!(restart_lls.iter().all(|&ll| ll <= restart_lls[kept]));
    let best = &outcomes[kept];

    // Merge surviving components down to two by Bhattacharyya distance,
    // collapsing further only through numerically identical pairs.
    let mut labels = best.labels.clone();
    let mix = m_step(&data, d, &labels, params.k_init, &best.live, &floor);
    let mut live = mix.live.clone();
    let mut means = mix.mean.clone();
    let mut covs = mix.cov.clone();
    let mut counts = vec![0usize; params.k_init];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    loop {
        let alive: Vec<usize> = (0..params.k_init).filter(|&k| live[k]).collect();
        if alive.len() < 2 {
            break;
        }
        let mut best_pair = (alive[0], alive[1]);
        let mut best_dist = f64::INFINITY;
        for (ai, &a) in alive.iter().enumerate() {
            for &b in &alive[ai + 1..] {
                let dist = bhattacharyya(&means[a], &covs[a], &means[b], &covs[b]);
                if dist < best_dist {
                    best_dist = dist;
                    best_pair = (a, b);
                }
            }
        }
        if alive.len() == 2 && best_dist >= MERGE_EPSILON {
            break;
        }
        // Moment-matched merge of b into a.
        let (a, b) = best_pair;
        let (na, nb) = (counts[a] as f64, counts[b] as f64);
        let wa = na / (na + nb);
        let wb = nb / (na + nb);
        let merged_mean = &means[a] * wa + &means[b] * wb;
        let second_a = &covs[a] + &means[a] * means[a].transpose();
        let second_b = &covs[b] + &means[b] * means[b].transpose();
        let merged_cov =
            second_a * wa + second_b * wb - &merged_mean * merged_mean.transpose();
        means[a] = merged_mean;
        covs[a] = merged_cov;
        counts[a] += counts[b];
        counts[b] = 0;
        live[b] = false;
        for l in labels.iter_mut() {
            if *l == b as u32 {
                *l = a as u32;
            }
        }
    }

    // Relabel to dense ids ordered by population (largest first).
    let mut pops: Vec<(u32, usize)> = (0..params.k_init as u32)
        .filter(|&k| live[k as usize])
        .map(|k| (k, counts[k as usize]))
        .collect();
    pops.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let remap: HashMap<u32, u32> = pops
        .iter()
        .enumerate()
        .map(|(new, (old, _))| (*old, new as u32))
        .collect();
    for l in labels.iter_mut() {
        *l = remap[l];
    }

    let map = ClusterMap {
        grid_dims: features.grid_dims,
        positions,
        labels,
        anomaly_labels: BTreeSet::new(),
    };
    let map = select_anomaly(&map, Some(features));

    // Final components in the dense label order.
    let final_mix = m_step(
        &data,
        d,
        &map.labels,
        pops.len().max(1),
        &vec![true; pops.len().max(1)],
        &floor,
    );
    let components: Vec<GaussianComponent> = (0..pops.len())
        .map(|k| GaussianComponent {
            weight: final_mix.weight[k],
            mean: final_mix.mean[k].iter().copied().collect(),
            covariance: (0..d)
                .map(|r| (0..d).map(|c| final_mix.cov[k][(r, c)]).collect())
                .collect(),
        })
        .collect();

    Ok(SemFit {
        cluster_map: map,
        components,
        log_likelihood: best.trace.clone(),
        restart_log_likelihoods: restart_lls,
        kept_restart: kept,
    })
}

/// Marks the smaller of the two largest clusters as the anomaly.
///
/// Ties go to the cluster with higher mean entropy when the entropy
/// attribute is available, otherwise to the cluster owning the window
/// nearest the grid center. Any remaining clusters are artefacts
/// (neither anomaly nor the normal bulk).
pub fn select_anomaly(map: &ClusterMap, features: Option<&FeatureGrid>) -> ClusterMap {
    let mut out = map.clone();
    out.anomaly_labels = BTreeSet::new();
    let pops = map.populations();
    if pops.len() < 2 {
        return out;
    }
    let (label_a, pop_a) = pops[0];
    let (label_b, pop_b) = pops[1];
    let anomaly = if pop_a == pop_b {
        let by_entropy = features.and_then(|f| {
            let mean_a = f.mean_entropy_where(|i| map.labels[i] == label_a)?;
            let mean_b = f.mean_entropy_where(|i| map.labels[i] == label_b)?;
            Some(if mean_a > mean_b { label_a } else { label_b })
        });
        by_entropy.unwrap_or_else(|| {
            // Tie-break toward the label of the window nearest the
            // grid center.
            let center = [
                (map.grid_dims[0] as f64 - 1.0) / 2.0,
                (map.grid_dims[1] as f64 - 1.0) / 2.0,
                (map.grid_dims[2] as f64 - 1.0) / 2.0,
            ];
            let nearest = map
                .positions
                .iter()
                .enumerate()
                .filter(|(i, _)| map.labels[*i] == label_a || map.labels[*i] == label_b)
                .min_by(|(_, p), (_, q)| {
                    let dp: f64 = (0..3).map(|k| (p[k] as f64 - center[k]).powi(2)).sum();
                    let dq: f64 = (0..3).map(|k| (q[k] as f64 - center[k]).powi(2)).sum();
                    dp.partial_cmp(&dq).expect("finite distances")
                })
                .map(|(i, _)| i)
                .expect("non-empty map");
            map.labels[nearest]
        })
    } else {
        label_b
    };
    out.anomaly_labels.insert(anomaly);
    out
}
