//! Phase-2 categorization: per-datapoint topic extraction under three
//! context scenarios, K-Means category-clusters over topic embeddings, and
//! Sankey transition flows between labelings.
//!
//! Category-clusters are distinct from the hierarchy's clusters: they group
//! the topics the generative backend extracts, not the raw datapoints.

pub mod kmeans;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    BackendError, EmbeddingBackend, GenerationRequest, GenerativeBackend, TemplateId,
};
use crate::corpus::DataPoint;
use crate::metrics::{validity_metrics, LabeledPoints, MetricsError, ValidityMetrics};
use crate::sos::{ContextSummary, Mode};

#[derive(Debug, Error)]
pub enum CategorizeError {
    #[error("baseline scenario takes no context")]
    UnexpectedContext,
    #[error("scenario {scenario} requires a {expected} context summary")]
    ContextModeMismatch {
        scenario: &'static str,
        expected: &'static str,
    },
    #[error("backend failure for point {point_id}: {source}")]
    Backend {
        point_id: String,
        source: BackendError,
    },
    #[error("backend returned an empty primary topic for point {0}")]
    EmptyTopic(String),
    #[error("degenerate input: {distinct} distinct topic embeddings, need at least {needed}")]
    TooFewDistinct { distinct: usize, needed: usize },
    #[error("no non-degenerate clustering in k range [{k_min}, {k_max}]")]
    NoValidClustering { k_min: usize, k_max: usize },
    #[error("invalid k range [{k_min}, {k_max}]")]
    InvalidKRange { k_min: usize, k_max: usize },
    #[error("metrics failure: {0}")]
    Metrics(#[from] MetricsError),
    #[error("label key sets differ; missing in a: {missing_in_a:?}, missing in b: {missing_in_b:?}")]
    KeySetMismatch {
        missing_in_a: Vec<String>,
        missing_in_b: Vec<String>,
    },
    #[error(transparent)]
    RawBackend(#[from] BackendError),
}

/// Categorization condition: no context, unweighted summary context, or
/// weighted summary context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    Ssas,
    Wssas,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Baseline, Scenario::Ssas, Scenario::Wssas];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::Ssas => "ssas",
            Scenario::Wssas => "wssas",
        }
    }

    /// Summary mode this scenario consumes, if any.
    pub fn context_mode(&self) -> Option<Mode> {
        match self {
            Scenario::Baseline => None,
            Scenario::Ssas => Some(Mode::Unweighted),
            Scenario::Wssas => Some(Mode::Weighted),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown scenario '{s}'"))
    }
}

/// Primary and optional secondary topic of one datapoint under one
/// scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicPair {
    pub point_id: String,
    pub scenario: Scenario,
    pub primary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<String>,
}

/// Extract the topic pair for one datapoint.
///
/// Baseline forbids context; the other scenarios require a context summary
/// of the matching mode when one is given. Irrelevant points (theme -1 at
/// unfiltered stages) are handled by passing no context, which reduces to
/// baseline behavior.
pub fn extract_topics(
    point: &DataPoint,
    scenario: Scenario,
    context: Option<&ContextSummary>,
    gen: &dyn GenerativeBackend,
) -> Result<TopicPair, CategorizeError> {
    match (scenario.context_mode(), context) {
        (None, Some(_)) => return Err(CategorizeError::UnexpectedContext),
        (Some(expected), Some(summary)) if summary.mode != expected => {
            return Err(CategorizeError::ContextModeMismatch {
                scenario: scenario.as_str(),
                expected: expected.as_str(),
            })
        }
        _ => {}
    }
    let mut inputs = vec![point.text.clone()];
    if let Some(summary) = context {
        inputs.push(summary.body.clone());
    }
    let request = GenerationRequest::new(TemplateId::Topics, inputs);
    let output = gen
        .generate(&request)
        .map_err(|source| CategorizeError::Backend {
            point_id: point.id.clone(),
            source,
        })?;
    let mut lines = output.lines().map(str::trim).filter(|l| !l.is_empty());
    let primary = lines
        .next()
        .map(str::to_owned)
        .filter(|p| !p.is_empty())
        .ok_or_else(|| CategorizeError::EmptyTopic(point.id.clone()))?;
    let secondary = lines
        .next()
        .map(str::to_owned)
        .filter(|s| *s != primary);
    Ok(TopicPair {
        point_id: point.id.clone(),
        scenario,
        primary,
        secondary,
    })
}

/// K-Means grouping of one scenario's topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryClustering {
    pub scenario: Scenario,
    pub k: usize,
    pub labels: BTreeMap<String, usize>,
    pub titles: Vec<String>,
    pub metrics: ValidityMetrics,
    pub volume_pct: Vec<f64>,
}

/// Cluster primary-topic embeddings with seeded K-Means for each k in
/// `[k_min, k_max]` (clamped to n-1 and to the distinct-vector count),
/// select the k maximizing silhouette (ties to the smaller k), and title
/// each category from its member topics.
pub fn category_clusters(
    topics: &[TopicPair],
    k_range: (usize, usize),
    seed: u64,
    embedder: &dyn EmbeddingBackend,
    gen: &dyn GenerativeBackend,
) -> Result<CategoryClustering, CategorizeError> {
    let (k_min, k_max) = k_range;
    if k_min < 2 || k_max < k_min {
        return Err(CategorizeError::InvalidKRange { k_min, k_max });
    }
    let mut sorted: Vec<&TopicPair> = topics.iter().collect();
    sorted.sort_by(|a, b| a.point_id.cmp(&b.point_id));
    let scenario = sorted
        .first()
        .map(|t| t.scenario)
        .ok_or(CategorizeError::TooFewDistinct {
            distinct: 0,
            needed: k_min,
        })?;

    let texts: Vec<String> = sorted.iter().map(|t| t.primary.clone()).collect();
    let vectors: Vec<Vec<f64>> = embedder.embed(&texts)?.into_iter().map(|v| v.0).collect();
    let distinct = {
        let mut unique: Vec<&Vec<f64>> = Vec::new();
        for v in &vectors {
            if !unique.iter().any(|u| **u == *v) {
                unique.push(v);
            }
        }
        unique.len()
    };
    if distinct < k_min.max(2) {
        return Err(CategorizeError::TooFewDistinct {
            distinct,
            needed: k_min.max(2),
        });
    }
    let k_cap = k_max.min(vectors.len().saturating_sub(1)).min(distinct);
    if k_cap < k_min {
        return Err(CategorizeError::TooFewDistinct {
            distinct: k_cap,
            needed: k_min,
        });
    }

    // A clustering whose validity metrics are undefined (zero within-cluster
    // dispersion, coincident centroids) cannot be reported; such k values
    // are skipped rather than selected on their trivially perfect
    // silhouette.
    let mut best: Option<(ValidityMetrics, usize, kmeans::KMeansResult)> = None;
    for k in k_min..=k_cap {
        let run = kmeans::lloyd_best(&vectors, k, seed)?;
        let labeled = LabeledPoints::new(vectors.clone(), run.labels.clone())?;
        let candidate = match validity_metrics(&labeled) {
            Ok(m) => m,
            Err(MetricsError::ZeroWithinDispersion | MetricsError::DegenerateCentroids(..)) => {
                continue
            }
            Err(e) => return Err(e.into()),
        };
        if best
            .as_ref()
            .is_none_or(|(m, _, _)| candidate.silhouette > m.silhouette)
        {
            best = Some((candidate, k, run));
        }
    }
    let (metrics, k, run) = best.ok_or(CategorizeError::NoValidClustering {
        k_min,
        k_max: k_cap,
    })?;

    let n = sorted.len();
    let mut member_topics: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut sizes = vec![0usize; k];
    let mut labels = BTreeMap::new();
    for (topic, &label) in sorted.iter().zip(&run.labels) {
        labels.insert(topic.point_id.clone(), label);
        member_topics[label].push(topic.primary.clone());
        sizes[label] += 1;
    }
    let titles = member_topics
        .iter()
        .map(|members| {
            gen.generate(&GenerationRequest::new(TemplateId::Title, members.clone()))
                .map(|t| t.trim().to_owned())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let volume_pct = sizes.iter().map(|&s| 100.0 * s as f64 / n as f64).collect();

    Ok(CategoryClustering {
        scenario,
        k,
        labels,
        titles,
        metrics,
        volume_pct,
    })
}

/// Transition counts between two labelings of the same point set.
pub fn sankey(
    labels_a: &BTreeMap<String, usize>,
    labels_b: &BTreeMap<String, usize>,
) -> Result<BTreeMap<(usize, usize), u64>, CategorizeError> {
    let keys_a: BTreeSet<&String> = labels_a.keys().collect();
    let keys_b: BTreeSet<&String> = labels_b.keys().collect();
    if keys_a != keys_b {
        return Err(CategorizeError::KeySetMismatch {
            missing_in_a: keys_b.difference(&keys_a).map(|s| (*s).clone()).collect(),
            missing_in_b: keys_a.difference(&keys_b).map(|s| (*s).clone()).collect(),
        });
    }
    let mut flows: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (id, &a) in labels_a {
        let b = labels_b[id];
        *flows.entry((a, b)).or_insert(0) += 1;
    }
    Ok(flows)
}

/// JSON export shape for Sankey plotting tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyExport {
    pub scenario_a: Scenario,
    pub scenario_b: Scenario,
    pub flows: Vec<SankeyFlow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SankeyFlow {
    pub from: usize,
    pub to: usize,
    pub count: u64,
}

impl SankeyExport {
    pub fn new(
        scenario_a: Scenario,
        scenario_b: Scenario,
        flows: &BTreeMap<(usize, usize), u64>,
    ) -> Self {
        Self {
            scenario_a,
            scenario_b,
            flows: flows
                .iter()
                .map(|(&(from, to), &count)| SankeyFlow { from, to, count })
                .collect(),
        }
    }
}

/// Persist topic pairs as JSONL in input order.
pub fn write_topics<W: std::io::Write>(topics: &[TopicPair], mut out: W) -> std::io::Result<()> {
    for t in topics {
        serde_json::to_writer(&mut out, t)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_topics<R: std::io::Read>(source: R) -> std::io::Result<Vec<TopicPair>> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(source);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
        );
    }
    Ok(out)
}
