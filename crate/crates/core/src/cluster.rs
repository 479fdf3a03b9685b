//! Module featurization and the clustering used by progressive merging.
//!
//! Features are lowercase word-frequency vectors over the vocabulary of the
//! modules being clustered, L2-normalized. Clustering is seeded k-means
//! (k-means++ init, Lloyd iterations, best of several restarts) or the
//! bisecting variant built on the same 2-means step.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::derive_seed;
use crate::types::{Module, ModuleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusteringKind {
    #[serde(rename = "kmeans")]
    KMeans,
    #[serde(rename = "bisecting")]
    BisectingKMeans,
    #[serde(rename = "none")]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("cannot form {k} clusters from {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("points have inconsistent dimensions")]
    DimensionMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub module_id: ModuleId,
    pub values: Vec<f64>,
    /// All-zero vector (payload had no word tokens); left unnormalized.
    pub degenerate: bool,
}

/// Word-frequency features over the joint vocabulary of `modules`.
///
/// Vocabulary order is lexicographic, so identical payloads always map to
/// identical vectors.
pub fn featurize(modules: &[Module]) -> Vec<FeatureVector> {
    let counts: Vec<BTreeMap<String, u32>> = modules
        .iter()
        .map(|m| {
            let text = m.payload.text().to_lowercase();
            let mut c: BTreeMap<&str, u32> = BTreeMap::new();
            for w in text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()) {
                *c.entry(w).or_insert(0) += 1;
            }
            c.into_iter().map(|(w, n)| (String::from(w), n)).collect()
        })
        .collect();
    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &counts {
        for w in c.keys() {
            vocab.entry(w.as_str()).or_insert(0);
        }
    }
    for (i, slot) in vocab.values_mut().enumerate() {
        *slot = i;
    }
    modules
        .iter()
        .zip(&counts)
        .map(|(m, c)| {
            let mut values = vec![0.0; vocab.len()];
            for (w, n) in c {
                values[vocab[w.as_str()]] = f64::from(*n);
            }
            let norm = libm::sqrt(values.iter().map(|v| v * v).sum::<f64>());
            let degenerate = norm == 0.0;
            if !degenerate {
                values.iter_mut().for_each(|v| *v /= norm);
            }
            FeatureVector {
                module_id: m.id.clone(),
                values,
                degenerate,
            }
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// `floor(sqrt(n))`, clamped to at least one.
pub fn cluster_count(n: usize) -> usize {
    n.isqrt().max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            max_iters: 50,
            restarts: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster label per point; labels are numbered by first appearance.
    pub labels: Vec<usize>,
    pub wcss: f64,
}

impl Clustering {
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let k = self.labels.iter().max().map_or(0, |m| m + 1);
        let mut out = vec![Vec::new(); k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_input(points: &[Vec<f64>], k: usize) -> Result<(), ClusterError> {
    if k == 0 || k > points.len() {
        return Err(ClusterError::InvalidK { k, n: points.len() });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(ClusterError::DimensionMismatch);
    }
    Ok(())
}

fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            s.iter_mut().for_each(|v| *v /= c as f64);
        }
    }
    sums
}

/// Within-cluster sum of squared distances to cluster means.
pub fn wcss(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let centers = centroids(points, labels, k);
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum()
}

fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Greedy k-means++: each new center is the best of a few D²-weighted
/// candidates by the potential it leaves.
fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let trials = 2 + libm::log(k as f64) as usize;
    let mut chosen = vec![rng.gen_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        if total > 0.0 {
            for _ in 0..trials {
                let mut target = rng.gen::<f64>() * total;
                let mut pick = None;
                for (i, &w) in d2.iter().enumerate() {
                    if w > 0.0 {
                        pick = Some(i);
                        if target < w {
                            break;
                        }
                        target -= w;
                    }
                }
                let cand = pick.unwrap_or(0);
                let next: Vec<f64> = d2.iter().zip(points).map(|(d, p)| d.min(sq_dist(p, &points[cand]))).collect();
                let potential: f64 = next.iter().sum();
                if best.as_ref().is_none_or(|b| potential < b.0) {
                    best = Some((potential, cand, next));
                }
            }
        }
        match best {
            Some((_, cand, next)) => {
                chosen.push(cand);
                d2 = next;
            }
            None => {
                // Remaining points coincide with chosen centers.
                let cand = (0..n).find(|i| !chosen.contains(i)).unwrap_or(0);
                chosen.push(cand);
                for (slot, p) in d2.iter_mut().zip(points) {
                    *slot = slot.min(sq_dist(p, &points[cand]));
                }
            }
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centers: &mut [Vec<f64>]) {
    let k = centers.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, &centers[labels[i]]);
            if d > far_d {
                far = Some(i);
                far_d = d;
            }
        }
        let Some(i) = far else { return };
        labels[i] = empty;
        centers[empty] = points[i].clone();
    }
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iters: usize) -> Vec<usize> {
    let k = centers.len();
    let mut labels: Vec<usize> = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        repair_empty(points, &mut next, &mut centers);
        let done = next == labels;
        labels = next;
        centers = centroids(points, &labels, k);
        if done {
            break;
        }
    }
    labels
}

/// Single-point moves that lower the WCSS (Hartigan's rule), applied to a
/// Lloyd fixed point until no move helps or `max_passes` is reached.
fn refine(points: &[Vec<f64>], labels: &mut [usize], k: usize, max_passes: usize) {
    let mut centers = centroids(points, labels, k);
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for _ in 0..max_passes.max(1) {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let from = labels[i];
            if sizes[from] < 2 {
                continue;
            }
            let na = sizes[from] as f64;
            let leave = na / (na - 1.0) * sq_dist(p, &centers[from]);
            let mut best = None;
            let mut best_gain = 1e-12 * (1.0 + leave);
            for to in (0..k).filter(|&c| c != from) {
                let nb = sizes[to] as f64;
                let gain = leave - nb / (nb + 1.0) * sq_dist(p, &centers[to]);
                if gain > best_gain {
                    best = Some(to);
                    best_gain = gain;
                }
            }
            let Some(to) = best else { continue };
            let (na, nb) = (sizes[from] as f64, sizes[to] as f64);
            for (d, v) in p.iter().enumerate() {
                centers[from][d] = (centers[from][d] * na - v) / (na - 1.0);
                centers[to][d] = (centers[to][d] * nb + v) / (nb + 1.0);
            }
            sizes[from] -= 1;
            sizes[to] += 1;
            labels[i] = to;
            moved = true;
        }
        if !moved {
            break;
        }
    }
}

/// Seeded k-means: greedy k-means++ initialization, Lloyd iterations polished by
/// single-point moves, best of `restarts` runs by WCSS. Never returns an
/// empty cluster.
pub fn kmeans(points: &[Vec<f64>], k: usize, params: &KMeansParams) -> Result<Clustering, ClusterError> {
    check_input(points, k)?;
    if k == points.len() {
        return Ok(Clustering {
            labels: (0..k).collect(),
            wcss: 0.0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..params.restarts.max(1) {
        let init = plus_plus_init(points, k, &mut rng);
        let mut labels = lloyd(points, init, params.max_iters);
        refine(points, &mut labels, k, params.max_iters);
        let labels = canonical(&labels);
        let score = wcss(points, &labels);
        if best.as_ref().is_none_or(|b| score < b.wcss) {
            best = Some(Clustering { labels, wcss: score });
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Clusters up to this size are bisected by enumerating every split.
pub const EXACT_SPLIT_MAX: usize = 12;

/// The two-way split with the lowest WCSS; the first point always gets
/// label 0.
fn exact_split(points: &[Vec<f64>]) -> Vec<usize> {
    let n = points.len();
    let mut best = (f64::INFINITY, 1u32);
    let mut labels = vec![0usize; n];
    for mask in 1..(1u32 << (n - 1)) {
        for (i, l) in labels.iter_mut().enumerate().skip(1) {
            *l = ((mask >> (i - 1)) & 1) as usize;
        }
        let w = wcss(points, &labels);
        if w < best.0 {
            best = (w, mask);
        }
    }
    (0..n)
        .map(|i| if i == 0 { 0 } else { ((best.1 >> (i - 1)) & 1) as usize })
        .collect()
}

/// Bisecting k-means: repeatedly split the cluster with the largest WCSS
/// with a 2-means step until there are `k` clusters. Small clusters are
/// split exactly.
pub fn bisecting_kmeans(
    points: &[Vec<f64>],
    k: usize,
    params: &KMeansParams,
) -> Result<Clustering, ClusterError> {
    check_input(points, k)?;
    let mut clusters: Vec<Vec<usize>> = vec![(0..points.len()).collect()];
    let mut split = 0u64;
    while clusters.len() < k {
        let mut target = None;
        let mut target_w = -1.0;
        for (c, members) in clusters.iter().enumerate() {
            if members.len() < 2 {
                continue;
            }
            let sub: Vec<Vec<f64>> = members.iter().map(|&i| points[i].clone()).collect();
            let w = wcss(&sub, &vec![0; sub.len()]);
            if w > target_w {
                target = Some(c);
                target_w = w;
            }
        }
        let Some(c) = target else { break };
        let members = core::mem::take(&mut clusters[c]);
        let sub: Vec<Vec<f64>> = members.iter().map(|&i| points[i].clone()).collect();
        let step = KMeansParams {
            seed: derive_seed(params.seed, "bisect", split),
            ..*params
        };
        split += 1;
        let halves = if sub.len() <= EXACT_SPLIT_MAX {
            exact_split(&sub)
        } else {
            kmeans(&sub, 2, &step)?.labels
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (&i, &l) in members.iter().zip(&halves) {
            if l == 0 {
                a.push(i);
            } else {
                b.push(i);
            }
        }
        clusters[c] = a;
        clusters.push(b);
    }
    let mut labels = vec![0; points.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = c;
        }
    }
    let labels = canonical(&labels);
    let score = wcss(points, &labels);
    Ok(Clustering { labels, wcss: score })
}
