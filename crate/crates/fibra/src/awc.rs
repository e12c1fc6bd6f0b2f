//! Adaptive Weights Clustering: binary pairwise weights grown over a
//! geometric radius schedule, gated by a Bernoulli-KL overlap test
//! against the uniform-case proportion `q`, then connected components.
//!
//! At step `k` a pair within radius `h_k` keeps its weight when the
//! observed neighbourhood-overlap proportion `theta = N_and / (N_and +
//! N_or)` is not significantly *below* the proportion `q` expected for
//! two uniform balls at the observed distance: the test value
//! `T = (N_and + N_or) * KL(theta, q) * sign(q - theta)` must stay
//! at or below `lambda`. Strong overlap (`theta >= q`) is accepted
//! unconditionally. There is no randomness anywhere in the algorithm.

use crate::cluster::{csv_error, ClusterMap};
use crate::features::{AttributeMode, FeatureGrid};
use crate::io_error::{FileError, FileResult};
use crate::sem::select_anomaly;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AwcError {
    #[error("AWC needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("invalid AWC parameters: {0}")]
    InvalidParams(String),
}

/// AWC tuning parameters; `lambda` is the only setting that normally
/// needs attention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AwcParams {
    pub lambda: f64,
    /// Target neighbour count fixing the initial radius; `None` derives
    /// `2 d + 2` from the feature dimension.
    pub n0: Option<usize>,
    /// Radius growth factor per step (> 1).
    pub growth: f64,
    pub max_steps: usize,
}

impl Default for AwcParams {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            n0: None,
            growth: 1.25,
            max_steps: 100,
        }
    }
}

/// Which dataset a published lambda preset was tuned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaPreset {
    /// Simulated fibre systems.
    Rsa,
    /// Real glass-fibre scans.
    Real,
}

/// Published lambda values per attribute mode and dataset. These were
/// tuned on raw (non-standardized) features.
pub fn preset_lambda(mode: AttributeMode, preset: LambdaPreset) -> f64 {
    match (preset, mode) {
        (LambdaPreset::Rsa, AttributeMode::Entropy) => 9.2,
        (LambdaPreset::Rsa, AttributeMode::MeanDirection) => 10.0,
        (LambdaPreset::Rsa, AttributeMode::Both) => 0.2,
        (LambdaPreset::Real, AttributeMode::Entropy) => 19.27,
        (LambdaPreset::Real, AttributeMode::MeanDirection) => 4.27,
        (LambdaPreset::Real, AttributeMode::Both) => 1.21,
    }
}

/// Symmetric binary weights with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    bits: Vec<bool>,
    /// Index of the radius step that produced this matrix (0 = initial).
    pub step: usize,
}

impl WeightMatrix {
    /// Identity weights: every point connected to itself only.
    pub fn identity(n: usize) -> Self {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
        }
        Self { n, bits, step: 0 }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Sets `w_ij` and `w_ji` together, preserving symmetry.
    pub fn set_pair(&mut self, i: usize, j: usize, value: bool) {
        debug_assert_ne!(i, j);
        self.bits[i * self.n + j] = value;
        self.bits[j * self.n + i] = value;
    }

    pub fn is_symmetric_with_unit_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i))
            && (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Upper-triangle edges (`i < j`) with weight 1.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) {
                    out.push((i as u32, j as u32));
                }
            }
        }
        out
    }

    /// Edge-list CSV `i,j` of the final weight graph.
    pub fn save_edges_csv(&self, path: &Path) -> FileResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["i", "j"]).map_err(|e| csv_error(path, e))?;
        for (i, j) in self.edges() {
            w.write_record([i.to_string(), j.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| FileError::io(path, e))?;
        Ok(())
    }
}

/// Overlap proportion of two d-balls of radius `h` at center distance
/// `t * h`, relative to the union-minus-intersection mass:
/// `q = V_and / (2 V - V_and)`, computed through the regularized
/// incomplete beta form of the spherical-cap volume. Scale-free in `h`.
pub fn ball_overlap_q(t: f64, d: usize) -> f64 {
    let t = t.clamp(0.0, 2.0);
    let x = 1.0 - (t / 2.0) * (t / 2.0);
    // V_and / V = I_x((d+1)/2, 1/2): twice the cap beyond the midplane.
    let overlap = if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else if d == 1 {
        // I_x(1, b) = 1 - (1 - x)^b, exact for intervals.
        1.0 - (1.0 - x).sqrt()
    } else {
        beta_reg((d as f64 + 1.0) / 2.0, 0.5, x)
    };
    overlap / (2.0 - overlap)
}

/// Bernoulli Kullback-Leibler divergence `KL(theta || q)`.
pub fn kl_bernoulli(theta: f64, q: f64) -> f64 {
    if theta == q {
        return 0.0;
    }
    let a = if theta > 0.0 {
        if q == 0.0 {
            return f64::INFINITY;
        }
        theta * (theta / q).ln()
    } else {
        0.0
    };
    let b = if theta < 1.0 {
        if q == 1.0 {
            return f64::INFINITY;
        }
        (1.0 - theta) * ((1.0 - theta) / (1.0 - q)).ln()
    } else {
        0.0
    };
    (a + b).max(0.0)
}

/// AWC fit output: labels plus the final weight graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AwcFit {
    pub cluster_map: ClusterMap,
    pub weights: WeightMatrix,
    /// Radius schedule actually executed (`h_0` first).
    pub radii: Vec<f64>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs adaptive weights clustering over the feature grid.
///
/// Distances are Euclidean in the (optionally standardized) feature
/// space. Pair statistics within a step read the previous step's
/// frozen weights (double-buffered), so the computation is
/// deterministic and parallelizes over pairs.
pub fn awc_fit(features: &FeatureGrid, params: &AwcParams) -> Result<AwcFit, AwcError> {
    if params.lambda <= 0.0 {
        return Err(AwcError::InvalidParams("lambda must be positive".into()));
    }
    if params.growth <= 1.0 {
        return Err(AwcError::InvalidParams("growth factor must exceed 1".into()));
    }
    let n = features.len();
    let d = features.dim();
    let n0 = params.n0.unwrap_or(2 * d + 2);
    if n < n0 + 1 {
        return Err(AwcError::TooFewPoints { needed: n0 + 1, got: n });
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| features.row(i)).collect();

    // h0: median over points of the n0-th nearest-neighbour distance.
    let mut knn: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dists: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(&rows[i], &rows[j]))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            dists[n0 - 1]
        })
        .collect();
    knn.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let h0 = knn[n / 2].max(f64::MIN_POSITIVE);

    let diameter = (0..n)
        .into_par_iter()
        .map(|i| {
            (i + 1..n)
                .map(|j| euclidean(&rows[i], &rows[j]))
                .fold(0.0f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);

    let mut weights = WeightMatrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if euclidean(&rows[i], &rows[j]) <= h0 {
                weights.set_pair(i, j, true);
            }
        }
    }
    debug_assert!(weights.is_symmetric_with_unit_diagonal());

    let mut radii = vec![h0];
    let mut h_prev = h0;
    for step in 1..=params.max_steps {
        let h_cur = h_prev * params.growth;
        if h_cur > diameter / 2.0 {
            break;
        }
        // Sorted neighbour lists at both radii (self excluded).
        let neighbours: Vec<(Vec<u32>, Vec<u32>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut prev = Vec::new();
                let mut cur = Vec::new();
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let dist = euclidean(&rows[i], &rows[j]);
                    if dist <= h_prev {
                        prev.push(j as u32);
                    }
                    if dist <= h_cur {
                        cur.push(j as u32);
                    }
                }
                (prev, cur)
            })
            .collect();

        let updates: Vec<(usize, usize, bool)> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let rows = &rows;
                let weights = &weights;
                let neighbours = &neighbours;
                neighbours[i].1.iter().filter_map(move |&ju| {
                    let j = ju as usize;
                    if j <= i {
                        return None;
                    }
                    let dist = euclidean(&rows[i], &rows[j]);
                    let in_prev = |list: &[u32], l: u32| list.binary_search(&l).is_ok();
                    let prev_i = &neighbours[i].0;
                    let prev_j = &neighbours[j].0;
                    let mut n_and = 0u32;
                    let mut n_i_only = 0u32;
                    for &lu in prev_i {
                        let l = lu as usize;
                        if l == j {
                            continue;
                        }
                        if in_prev(prev_j, lu) {
                            if weights.get(i, l) && weights.get(j, l) {
                                n_and += 1;
                            }
                        } else if weights.get(i, l) {
                            n_i_only += 1;
                        }
                    }
                    let mut n_j_only = 0u32;
                    for &lu in prev_j {
                        let l = lu as usize;
                        if l == i || in_prev(prev_i, lu) {
                            continue;
                        }
                        if weights.get(j, l) {
                            n_j_only += 1;
                        }
                    }
                    let n_or = n_i_only + n_j_only;
                    let total = n_and + n_or;
                    if total == 0 {
                        // Degenerate pair: no witnesses, keep the old
                        // weight.
                        return Some((i, j, weights.get(i, j)));
                    }
                    let theta = n_and as f64 / total as f64;
                    let q = ball_overlap_q(dist / h_prev, d);
                    let sign = if q >= theta { 1.0 } else { -1.0 };
                    let t_stat = total as f64 * kl_bernoulli(theta, q) * sign;
                    Some((i, j, t_stat <= params.lambda))
                })
            })
            .collect();

        let mut next = WeightMatrix::identity(n);
        next.step = step;
        for (i, j, value) in updates {
            next.set_pair(i, j, value);
        }
        debug_assert!(next.is_symmetric_with_unit_diagonal());
        weights = next;
        radii.push(h_cur);
        h_prev = h_cur;
    }

    let map = components_with_positions(&weights, features.grid_dims, features.positions());
    let map = select_anomaly(&map, Some(features));
    Ok(AwcFit {
        cluster_map: map,
        weights,
        radii,
    })
}

struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, x: u32) -> u32 {
        let mut x = x;
        while self.parent[x as usize] != x {
            let grandparent = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grandparent;
            x = grandparent;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Connected components of the weight graph, labeled by decreasing
/// component size (ties by smallest member index). No anomaly flags.
pub fn components(weights: &WeightMatrix) -> Vec<u32> {
    let n = weights.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if weights.get(i, j) {
                uf.union(i as u32, j as u32);
            }
        }
    }
    let roots: Vec<u32> = (0..n as u32).map(|i| uf.find(i)).collect();
    let mut by_root: std::collections::BTreeMap<u32, (usize, u32)> = Default::default();
    for (i, &r) in roots.iter().enumerate() {
        let entry = by_root.entry(r).or_insert((0, i as u32));
        entry.0 += 1;
    }
    let mut order: Vec<(u32, usize, u32)> = by_root
        .into_iter()
        .map(|(root, (count, first))| (root, count, first))
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let remap: std::collections::HashMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(new, (root, _, _))| (*root, new as u32))
        .collect();
    roots.into_iter().map(|r| remap[&r]).collect()
}

fn components_with_positions(
    weights: &WeightMatrix,
    grid_dims: [usize; 3],
    positions: Vec<[usize; 3]>,
) -> ClusterMap {
    ClusterMap {
        grid_dims,
        positions,
        labels: components(weights),
        anomaly_labels: BTreeSet::new(),
    }
}
