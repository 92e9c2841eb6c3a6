//! Internal clustering-validity metrics with exact definitional semantics:
//! Silhouette, Davies-Bouldin, and Calinski-Harabasz over Euclidean space.
//!
//! Summations accumulate in ascending point order so results are
//! reproducible across platforms and parallelism settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("points and labels differ in length: {points} vs {labels}")]
    LengthMismatch { points: usize, labels: usize },
    #[error("point {index} has dimension {actual}, expected {expected}")]
    RaggedDimensions {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite component in point {0}")]
    NonFinite(usize),
    #[error("degenerate centroids: clusters {0} and {1} coincide")]
    DegenerateCentroids(usize, usize),
    #[error("zero within-dispersion")]
    ZeroWithinDispersion,
    #[error("need more points than clusters: n={n}, k={k}")]
    TooFewPoints { n: usize, k: usize },
    #[error("empty input")]
    Empty,
}

/// Labeled point set for validity scoring. Labels may be arbitrary indices;
/// metrics are invariant under relabeling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledPoints {
    points: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl LabeledPoints {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self, MetricsError> {
        if points.is_empty() {
            return Err(MetricsError::Empty);
        }
        if points.len() != labels.len() {
            return Err(MetricsError::LengthMismatch {
                points: points.len(),
                labels: labels.len(),
            });
        }
        let dim = points[0].len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(MetricsError::RaggedDimensions {
                    index: i,
                    expected: dim,
                    actual: p.len(),
                });
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(MetricsError::NonFinite(i));
            }
        }
        let distinct = {
            let mut l = labels.clone();
            l.sort_unstable();
            l.dedup();
            l.len()
        };
        if distinct < 2 {
            return Err(MetricsError::TooFewClusters(distinct));
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Member indices per label, labels in ascending order.
    fn clusters(&self) -> Vec<(usize, Vec<usize>)> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, label) in self.labels.iter().enumerate() {
            groups.entry(*label).or_default().push(i);
        }
        groups.into_iter().collect()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let dim = points[members[0]].len();
    let mut c = vec![0.0; dim];
    for &i in members {
        for (acc, x) in c.iter_mut().zip(&points[i]) {
            *acc += x;
        }
    }
    for acc in &mut c {
        *acc /= members.len() as f64;
    }
    c
}

/// Mean silhouette coefficient in [-1, 1].
///
/// For each sample, `a` is its mean distance to the other members of its
/// cluster and `b` the minimum over other clusters of its mean distance to
/// their members; `s = (b - a) / max(a, b)`. Members of singleton clusters
/// score 0 by convention.
pub fn silhouette(data: &LabeledPoints) -> Result<f64, MetricsError> {
    let clusters = data.clusters();
    if clusters.len() < 2 {
        return Err(MetricsError::TooFewClusters(clusters.len()));
    }
    let points = data.points();
    let mut total = 0.0;
    for i in 0..points.len() {
        let own_label = data.labels()[i];
        let own_size = clusters
            .iter()
            .find(|(l, _)| *l == own_label)
            .map(|(_, m)| m.len())
            .expect("own cluster exists");
        if own_size == 1 {
            continue; // s(i) = 0
        }
        let mut a = 0.0;
        let mut b = f64::INFINITY;
        for (label, members) in &clusters {
            let sum: f64 = members.iter().map(|&j| euclidean(&points[i], &points[j])).sum();
            if *label == own_label {
                a = sum / (members.len() - 1) as f64;
            } else {
                b = b.min(sum / members.len() as f64);
            }
        }
        total += (b - a) / a.max(b);
    }
    Ok(total / points.len() as f64)
}

/// Davies-Bouldin index (>= 0, lower is better): mean over clusters of the
/// worst-case (sigma_i + sigma_j) / d(c_i, c_j) ratio, where sigma is the
/// mean member-to-centroid distance.
pub fn davies_bouldin(data: &LabeledPoints) -> Result<f64, MetricsError> {
    let clusters = data.clusters();
    if clusters.len() < 2 {
        return Err(MetricsError::TooFewClusters(clusters.len()));
    }
    let points = data.points();
    let centroids: Vec<Vec<f64>> = clusters
        .iter()
        .map(|(_, members)| centroid(points, members))
        .collect();
    let sigmas: Vec<f64> = clusters
        .iter()
        .zip(&centroids)
        .map(|((_, members), c)| {
            members.iter().map(|&i| euclidean(&points[i], c)).sum::<f64>() / members.len() as f64
        })
        .collect();
    let k = clusters.len();
    let mut sum = 0.0;
    for i in 0..k {
        let mut worst = 0.0_f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let gap = euclidean(&centroids[i], &centroids[j]);
            if gap == 0.0 {
                return Err(MetricsError::DegenerateCentroids(
                    clusters[i].0,
                    clusters[j].0,
                ));
            }
            worst = worst.max((sigmas[i] + sigmas[j]) / gap);
        }
        sum += worst;
    }
    Ok(sum / k as f64)
}

/// Calinski-Harabasz index (variance ratio criterion):
/// `[tr(B)/(k-1)] / [tr(W)/(n-k)]` with `B` the between-cluster and `W` the
/// within-cluster dispersion.
pub fn calinski_harabasz(data: &LabeledPoints) -> Result<f64, MetricsError> {
    let clusters = data.clusters();
    let k = clusters.len();
    if k < 2 {
        return Err(MetricsError::TooFewClusters(k));
    }
    let points = data.points();
    let n = points.len();
    if n <= k {
        return Err(MetricsError::TooFewPoints { n, k });
    }
    let all: Vec<usize> = (0..n).collect();
    let grand = centroid(points, &all);
    let mut between = 0.0;
    let mut within = 0.0;
    for (_, members) in &clusters {
        let c = centroid(points, members);
        let gap = euclidean(&c, &grand);
        between += members.len() as f64 * gap * gap;
        for &i in members {
            let d = euclidean(&points[i], &c);
            within += d * d;
        }
    }
    if within == 0.0 {
        return Err(MetricsError::ZeroWithinDispersion);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// The three indices bundled, as reported per categorization scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityMetrics {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

pub fn validity_metrics(data: &LabeledPoints) -> Result<ValidityMetrics, MetricsError> {
    Ok(ValidityMetrics {
        silhouette: silhouette(data)?,
        davies_bouldin: davies_bouldin(data)?,
        calinski_harabasz: calinski_harabasz(data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(values: &[f64], labels: &[usize]) -> LabeledPoints {
        LabeledPoints::new(values.iter().map(|v| vec![*v]).collect(), labels.to_vec()).unwrap()
    }

    // Hand evaluation of the 1-D fixture [0,1 | 5,6]:
    //   silhouette: s(0)=4.5/5.5, s(1)=3.5/4.5, s(2)=3.5/4.5, s(3)=4.5/5.5
    //               mean = 0.797979...
    //   DBI:        sigma=0.5 both, centroid gap 5 -> 0.2
    //   CH:         B=25, W=1 -> (25/1)/(1/2) = 50
    #[test]
    fn closed_form_fixture() {
        let data = one_d(&[0.0, 1.0, 5.0, 6.0], &[0, 0, 1, 1]);
        let expected_sil = (4.5 / 5.5 + 3.5 / 4.5 + 3.5 / 4.5 + 4.5 / 5.5) / 4.0;
        assert!((silhouette(&data).unwrap() - expected_sil).abs() < 1e-12);
        assert!((silhouette(&data).unwrap() - 0.79798).abs() < 1e-5);
        assert!((davies_bouldin(&data).unwrap() - 0.2).abs() < 1e-9);
        assert!((calinski_harabasz(&data).unwrap() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn coincident_pairs_at_distinct_locations() {
        let data = one_d(&[2.0, 2.0, 9.0, 9.0], &[0, 0, 1, 1]);
        assert_eq!(silhouette(&data).unwrap(), 1.0);
        assert_eq!(davies_bouldin(&data).unwrap(), 0.0);
        assert!(matches!(
            calinski_harabasz(&data),
            Err(MetricsError::ZeroWithinDispersion)
        ));
    }

    #[test]
    fn all_singletons_scores_zero_silhouette() {
        let data = one_d(&[0.0, 3.0, 10.0], &[0, 1, 2]);
        assert_eq!(silhouette(&data).unwrap(), 0.0);
    }

    #[test]
    fn davies_bouldin_prefers_separated_tight_clusters() {
        let tight = one_d(&[0.0, 0.1, 100.0, 100.1], &[0, 0, 1, 1]);
        let overlapping = one_d(&[0.0, 2.0, 1.0, 3.0], &[0, 0, 1, 1]);
        assert!(davies_bouldin(&tight).unwrap() < davies_bouldin(&overlapping).unwrap());
    }

    #[test]
    fn davies_bouldin_rejects_coincident_centroids() {
        let data = one_d(&[0.0, 2.0, 1.0, 1.0], &[0, 0, 1, 1]);
        assert!(matches!(
            davies_bouldin(&data),
            Err(MetricsError::DegenerateCentroids(..))
        ));
    }

    #[test]
    fn calinski_harabasz_is_scale_invariant() {
        let base = one_d(&[0.0, 1.0, 5.0, 6.0, 7.5], &[0, 0, 1, 1, 1]);
        let scaled = one_d(&[0.0, 7.0, 35.0, 42.0, 52.5], &[0, 0, 1, 1, 1]);
        let a = calinski_harabasz(&base).unwrap();
        let b = calinski_harabasz(&scaled).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(matches!(
            LabeledPoints::new(vec![vec![0.0]], vec![0]),
            Err(MetricsError::TooFewClusters(1))
        ));
        assert!(matches!(
            LabeledPoints::new(vec![vec![0.0], vec![f64::NAN]], vec![0, 1]),
            Err(MetricsError::NonFinite(1))
        ));
        assert!(matches!(
            LabeledPoints::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0, 1]),
            Err(MetricsError::RaggedDimensions { .. })
        ));
        assert!(matches!(
            LabeledPoints::new(vec![], vec![]),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn relabeling_leaves_metrics_unchanged() {
        let a = one_d(&[0.0, 1.0, 5.0, 6.0, 9.0], &[0, 0, 1, 1, 1]);
        let b = one_d(&[0.0, 1.0, 5.0, 6.0, 9.0], &[7, 7, 3, 3, 3]);
        assert_eq!(silhouette(&a).unwrap(), silhouette(&b).unwrap());
        assert_eq!(davies_bouldin(&a).unwrap(), davies_bouldin(&b).unwrap());
        assert_eq!(
            calinski_harabasz(&a).unwrap(),
            calinski_harabasz(&b).unwrap()
        );
    }
}
