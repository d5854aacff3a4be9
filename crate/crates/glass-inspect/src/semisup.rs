//! Stage III clustering: seeded k-means with EM iterations and the
//! iterative cluster-filtering loop that turns a small labeled set into
//! pseudo-labels for the binary background/defect classifier.
//!
//! Each filtering round clusters the retained points into `k` groups,
//! keeps the `keep_count` clusters with the highest proportion of labeled
//! defects and drops the rest, until a round drops fewer than
//! `drop_threshold` points.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::RegionClass;
use crate::embedding::FeatureVector;
use crate::error::{Error, Result};

/// Final state of a k-means run.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Vec<FeatureVector>,
    /// Cluster index per input point.
    pub assignment: Vec<usize>,
    /// Final within-cluster sum of squared distances.
    pub loss: f64,
    /// Loss after the initial assignment and after each EM iteration;
    /// non-increasing by construction.
    pub loss_trace: Vec<f64>,
    /// EM iterations performed (update + reassignment).
    pub iterations: usize,
}

fn assign(points: &[FeatureVector], centroids: &[FeatureVector]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = p.squared_distance(&centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = p.squared_distance(centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn loss(points: &[FeatureVector], centroids: &[FeatureVector], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &a)| p.squared_distance(&centroids[a]))
        .sum()
}

/// k-means++ initialization: first centroid uniform, then each next point
/// drawn with probability proportional to its squared distance from the
/// nearest chosen centroid.
fn kmeanspp_init(points: &[FeatureVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureVector> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.gen_range(0..n)].clone());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| p.squared_distance(&centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            // All points coincide with chosen centroids.
            rng.gen_range(0..n)
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            let d = p.squared_distance(&centroids[centroids.len() - 1]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

/// Seeded k-means: k-means++ init, then alternating nearest-centroid
/// assignment (squared Euclidean, ties to the lowest cluster index) and
/// centroid-mean updates until the assignment stops changing or
/// `max_iter` is reached.
///
/// Empty clusters are re-seeded to the point farthest from their current
/// centroid, keeping exactly `k` clusters alive.
pub fn kmeans(
    points: &[FeatureVector],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("kmeans requires at least one point".into()));
    }
    if k == 0 || k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k must satisfy 1 <= k <= {} points, got {k}",
            points.len()
        )));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim) {
        return Err(Error::InvalidArgument("points have inconsistent dimensions".into()));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_init(points, k, &mut rng);
    let mut assignment = assign(points, &centroids);
    let mut loss_trace = vec![loss(points, &centroids, &assignment)];
    let mut iterations = 0usize;

    while iterations < max_iter {
        // Update step: centroid = mean of assigned points, in index order.
        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.values()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= counts[c] as f64;
                }
                centroids[c] = FeatureVector::new(std::mem::take(&mut sums[c]))?;
            } else {
                // Re-seed an empty cluster to the point farthest from its
                // current centroid (ties to the lowest point index).
                let mut far = 0usize;
                let mut far_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    let d = p.squared_distance(&centroids[c]);
                    if d > far_d {
                        far_d = d;
                        far = i;
                    }
                }
                centroids[c] = points[far].clone();
            }
        }

        let new_assignment = assign(points, &centroids);
        iterations += 1;
        loss_trace.push(loss(points, &centroids, &new_assignment));
        let converged = new_assignment == assignment;
        assignment = new_assignment;
        if converged {
            break;
        }
    }

    Ok(KMeansResult {
        loss: *loss_trace.last().expect("trace has initial entry"),
        centroids,
        assignment,
        loss_trace,
        iterations,
    })
}

/// One round of the filtering loop, kept for audit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FilterRound {
    /// Cluster indices retained this round.
    pub kept_clusters: Vec<usize>,
    /// Points actually dropped this round (after any exemptions).
    pub dropped_count: usize,
    /// Labeled-defect proportion per cluster.
    pub proportions: Vec<f64>,
}

/// Outcome of [`cluster_filter`]: per-round audit data plus the final
/// partition of point indices into retained and dropped.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FilterTrace {
    pub rounds: Vec<FilterRound>,
    pub retained: Vec<usize>,
    pub dropped: Vec<usize>,
}

impl FilterTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Load(format!("filter trace: {e}")))
    }
}

/// Parameters of the cluster-filtering loop.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FilterParams {
    /// Number of clusters per round.
    pub k: usize,
    /// Clusters retained per round.
    pub keep_count: usize,
    /// Terminate once a round drops fewer points than this.
    pub drop_threshold: usize,
    pub seed: u64,
    /// When set, labeled defect points in dropped clusters are dropped
    /// like any others instead of being re-inserted.
    pub strict_drop: bool,
    /// Iteration cap for each inner k-means run.
    pub kmeans_max_iter: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            k: 10,
            keep_count: 6,
            drop_threshold: 1,
            seed: 0,
            strict_drop: false,
            kmeans_max_iter: 100,
        }
    }
}

/// Iterative cluster filtering.
///
/// Runs k-means on the retained points (round `r` uses `seed + r`), keeps
/// the `keep_count` non-empty clusters with the highest proportion of
/// labeled defects (ties to the lower cluster index) and drops the rest.
/// Labeled defect points are exempt from dropping unless `strict_drop` is
/// set. Terminates when a round drops fewer than `drop_threshold` points
/// (that round's drops still apply) or when at most `k` points remain.
pub fn cluster_filter(
    points: &[FeatureVector],
    labels: &BTreeMap<usize, RegionClass>,
    params: &FilterParams,
) -> Result<FilterTrace> {
    if params.keep_count == 0 || params.keep_count >= params.k {
        return Err(Error::InvalidArgument(format!(
            "keep_count must satisfy 1 <= keep_count < k, got keep {} of k {}",
            params.keep_count, params.k
        )));
    }
    if params.drop_threshold == 0 {
        return Err(Error::InvalidArgument("drop_threshold must be >= 1".into()));
    }
    if let Some(&bad) = labels.keys().find(|&&i| i >= points.len()) {
        return Err(Error::InvalidArgument(format!(
            "label index {bad} out of range for {} points",
            points.len()
        )));
    }
    let is_labeled_defect =
        |i: usize| labels.get(&i).map(|c| c.is_defect()).unwrap_or(false);
    if !labels.values().any(|c| c.is_defect()) {
        return Err(Error::InvalidArgument(
            "cluster filtering requires at least one labeled defect point".into(),
        ));
    }

    let mut retained: Vec<usize> = (0..points.len()).collect();
    let mut dropped: Vec<usize> = Vec::new();
    let mut rounds: Vec<FilterRound> = Vec::new();

    while retained.len() > params.k {
        let round = rounds.len() as u64;
        let sub: Vec<FeatureVector> = retained.iter().map(|&i| points[i].clone()).collect();
        let km = kmeans(&sub, params.k, params.seed + round, params.kmeans_max_iter)?;

        let mut sizes = vec![0usize; params.k];
        let mut defect_counts = vec![0usize; params.k];
        for (pos, &orig) in retained.iter().enumerate() {
            let c = km.assignment[pos];
            sizes[c] += 1;
            if is_labeled_defect(orig) {
                defect_counts[c] += 1;
            }
        }
        let proportions: Vec<f64> = (0..params.k)
            .map(|c| {
                if sizes[c] == 0 {
                    0.0
                } else {
                    defect_counts[c] as f64 / sizes[c] as f64
                }
            })
            .collect();

        let mut order: Vec<usize> = (0..params.k).filter(|&c| sizes[c] > 0).collect();
        order.sort_by(|&a, &b| {
            proportions[b]
                .partial_cmp(&proportions[a])
                .expect("proportions are finite")
                .then(a.cmp(&b))
        });
        let kept_clusters: Vec<usize> = {
            let mut kept: Vec<usize> =
                order.into_iter().take(params.keep_count).collect();
            kept.sort_unstable();
            kept
        };

        let mut new_retained = Vec::with_capacity(retained.len());
        let mut dropped_this_round = 0usize;
        for (pos, &orig) in retained.iter().enumerate() {
            let keep = kept_clusters.contains(&km.assignment[pos])
                || (!params.strict_drop && is_labeled_defect(orig));
            if keep {
                new_retained.push(orig);
            } else {
                dropped.push(orig);
                dropped_this_round += 1;
            }
        }
        retained = new_retained;
        rounds.push(FilterRound {
            kept_clusters,
            dropped_count: dropped_this_round,
            proportions,
        });
        if dropped_this_round < params.drop_threshold {
            break;
        }
    }

    dropped.sort_unstable();
    Ok(FilterTrace {
        rounds,
        retained,
        dropped,
    })
}

/// Binary pseudo-labels from a filter trace: retained points become
/// defects, dropped points background. Points carrying a human label keep
/// the binary projection of that label, overriding the trace.
pub fn pseudo_labels(
    trace: &FilterTrace,
    labels: &BTreeMap<usize, RegionClass>,
) -> Vec<bool> {
    let n = trace.retained.len() + trace.dropped.len();
    let mut out = vec![false; n];
    for &i in &trace.retained {
        out[i] = true;
    }
    for (&i, class) in labels {
        out[i] = class.is_defect();
    }
    out
}
