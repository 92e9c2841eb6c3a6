//! Per-datapoint signal scoring and the two-stage noise filter.
//!
//! The signal-to-noise score sums three level signals — theme, story,
//! cluster — each the point's cosine to that level's centroid (clamped at
//! zero) multiplied by a shared keyword amplitude. The amplitude measures
//! how much of its cluster's frequency-weighted keyword profile a point
//! covers, so points that merely share stray keywords without contextual
//! depth score low.
//!
//! Filtering runs in two stages: irrelevant removal (theme -1) and outlier
//! pruning (small or low-signal clusters, then thin stories, then empty
//! themes). Both stages are idempotent at fixed configuration; the
//! percentile rule iterates to a fixpoint within each story to guarantee
//! that.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{cosine, BackendError, EmbeddingVector};
use crate::hierarchy::{HierarchyAssignment, HierarchyIndex, Level};
use crate::text::{self, StopwordList};

#[derive(Debug, Error)]
pub enum SnrError {
    #[error("SNR undefined for irrelevant data (point {0})")]
    IrrelevantPoint(String),
    #[error("assignment for point {point_id} references {level} {id} absent from the index")]
    MissingCentroid {
        point_id: String,
        level: &'static str,
        id: i64,
    },
    #[error("point {0} has no SNR score")]
    MissingScore(String),
    #[error("outlier filter requires irrelevant data already removed (found point {0})")]
    IrrelevantPresent(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Frequency-weighted keywords of one cluster. Weights are normalized so
/// the top term has weight 1.0 and descend from there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordProfile {
    pub cluster_id: i64,
    pub keywords: Vec<(String, f64)>,
}

impl KeywordProfile {
    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

/// The three level signals and their sum. `total` is always the exact sum
/// of the components (enforced by construction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrScore {
    pub s_theme: f64,
    pub s_story: f64,
    pub s_cluster: f64,
    pub total: f64,
}

impl SnrScore {
    pub fn new(s_theme: f64, s_story: f64, s_cluster: f64) -> Self {
        Self {
            s_theme,
            s_story,
            s_cluster,
            total: s_theme + s_story + s_cluster,
        }
    }
}

/// Top-m cluster keywords by total frequency across member texts, ties
/// lexicographic; weight = freq(term) / freq(top term). A cluster whose
/// tokens are all stopwords yields an empty profile (amplitude 0), not an
/// error.
pub fn keyword_profile<'a, I>(
    cluster_id: i64,
    member_texts: I,
    m: usize,
    stopwords: &StopwordList,
) -> KeywordProfile
where
    I: IntoIterator<Item = &'a str>,
{
    let counts = text::token_counts(member_texts, stopwords);
    keyword_profile_from_counts(cluster_id, &counts, m)
}

/// Profile from a precomputed frequency table. Multiplying every count by
/// a positive constant leaves the profile literally unchanged.
pub fn keyword_profile_from_counts(
    cluster_id: i64,
    counts: &BTreeMap<String, u64>,
    m: usize,
) -> KeywordProfile {
    let ranked = text::rank_tokens(counts);
    let top = ranked.first().map(|(_, c)| *c).unwrap_or(0);
    let keywords = ranked
        .into_iter()
        .take(m)
        .map(|(term, count)| (term, count as f64 / top as f64))
        .collect();
    KeywordProfile {
        cluster_id,
        keywords,
    }
}

/// Weighted Amplitude: the fraction of profile weight covered by the
/// point's token set. Empty profile yields 0.
pub fn amplitude(point_text: &str, profile: &KeywordProfile) -> f64 {
    if profile.keywords.is_empty() {
        return 0.0;
    }
    let tokens: BTreeSet<String> = text::tokenize(point_text).into_iter().collect();
    let covered: f64 = profile
        .keywords
        .iter()
        .filter(|(term, _)| tokens.contains(term))
        .map(|(_, w)| w)
        .sum();
    let all: f64 = profile.keywords.iter().map(|(_, w)| w).sum();
    covered / all
}

/// Eq-style per-point score: each level signal is
/// `amplitude * max(0, cosine(embedding, level centroid))`.
pub fn snr(
    embedding: &EmbeddingVector,
    index: &HierarchyIndex,
    assignment: &HierarchyAssignment,
    amplitude: f64,
) -> Result<SnrScore, SnrError> {
    if assignment.is_irrelevant() {
        return Err(SnrError::IrrelevantPoint(assignment.point_id.clone()));
    }
    let centroid = |level: Level, id: i64| {
        index
            .centroid(level, id)
            .ok_or_else(|| SnrError::MissingCentroid {
                point_id: assignment.point_id.clone(),
                level: level.as_str(),
                id,
            })
    };
    let theme_c = centroid(Level::Theme, assignment.theme_id)?;
    let story_id = assignment.story_id.expect("non-irrelevant point has a story");
    let cluster_id = assignment
        .cluster_id
        .expect("non-irrelevant point has a cluster");
    let story_c = centroid(Level::Story, story_id)?;
    let cluster_c = centroid(Level::Cluster, cluster_id)?;
    let signal = |c: &EmbeddingVector| -> Result<f64, SnrError> {
        Ok(amplitude * cosine(embedding, c)?.max(0.0))
    };
    Ok(SnrScore::new(
        signal(theme_c)?,
        signal(story_c)?,
        signal(cluster_c)?,
    ))
}

/// Order point ids by descending SNR total, ties by ascending id.
pub fn rank_order(scored: &[(String, f64)]) -> Vec<String> {
    let mut items: Vec<&(String, f64)> = scored.iter().collect();
    items.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    items.into_iter().map(|(id, _)| id.clone()).collect()
}

/// Stage 2: drop all theme -1 points; everything else passes unchanged.
pub fn filter_irrelevant(assignments: &[HierarchyAssignment]) -> Vec<HierarchyAssignment> {
    assignments
        .iter()
        .filter(|a| !a.is_irrelevant())
        .cloned()
        .collect()
}

/// Outlier-pruning thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Clusters smaller than this are outliers.
    pub min_cluster_size: usize,
    /// Within each story, clusters whose mean SNR falls below this
    /// percentile of the story's cluster means are outliers.
    pub p_out: f64,
    /// Stories keeping fewer surviving clusters than this are dropped.
    pub min_story_clusters: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 5,
            p_out: 25.0,
            min_story_clusters: 2,
        }
    }
}

/// Scopes and points removed by the outlier filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningReport {
    pub removed_clusters: usize,
    pub removed_stories: usize,
    pub removed_themes: usize,
    pub removed_points: usize,
}

/// Nearest-rank percentile of ascending-sorted values: the element at
/// 1-based rank `ceil(p/100 * n)`. Combined with a strictly-below drop
/// rule, a story with at most `ceil(100/p) - 1` clusters loses nothing to
/// the percentile pass, which keeps the fixpoint iteration from collapsing
/// small stories.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((p / 100.0).clamp(0.0, 1.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Stage 3: prune outliers.
///
/// Per story, clusters below the size floor are dropped, then clusters
/// whose mean SNR lies below the `p_out`-th percentile of the story's
/// surviving cluster means are dropped repeatedly until stable. Stories
/// left with too few clusters are dropped whole, and themes without
/// surviving points disappear. Re-applying the filter at the same
/// configuration is a no-op.
pub fn filter_outliers(
    assignments: &[HierarchyAssignment],
    scores: &BTreeMap<String, SnrScore>,
    config: &FilterConfig,
) -> Result<(Vec<HierarchyAssignment>, PruningReport), SnrError> {
    if let Some(bad) = assignments.iter().find(|a| a.is_irrelevant()) {
        return Err(SnrError::IrrelevantPresent(bad.point_id.clone()));
    }
    // cluster -> (story, size, sum of SNR totals)
    let mut cluster_story: BTreeMap<i64, i64> = BTreeMap::new();
    let mut cluster_size: BTreeMap<i64, usize> = BTreeMap::new();
    let mut cluster_sum: BTreeMap<i64, f64> = BTreeMap::new();
    for a in assignments {
        let c = a.cluster_id.expect("non-irrelevant point has a cluster");
        let s = a.story_id.expect("non-irrelevant point has a story");
        cluster_story.insert(c, s);
        *cluster_size.entry(c).or_insert(0) += 1;
        let score = scores
            .get(&a.point_id)
            .ok_or_else(|| SnrError::MissingScore(a.point_id.clone()))?;
        *cluster_sum.entry(c).or_insert(0.0) += score.total;
    }
    let cluster_mean: BTreeMap<i64, f64> = cluster_sum
        .iter()
        .map(|(c, sum)| (*c, sum / cluster_size[c] as f64))
        .collect();

    let mut surviving: BTreeMap<i64, Vec<i64>> = BTreeMap::new(); // story -> clusters
    for (c, s) in &cluster_story {
        if cluster_size[c] >= config.min_cluster_size {
            surviving.entry(*s).or_default().push(*c);
        }
    }

    // Percentile rule to fixpoint within each story.
    for clusters in surviving.values_mut() {
        loop {
            if clusters.len() <= 1 {
                break;
            }
            let mut means: Vec<f64> = clusters.iter().map(|c| cluster_mean[c]).collect();
            means.sort_by(|a, b| a.partial_cmp(b).expect("finite SNR totals"));
            let threshold = percentile(&means, config.p_out);
            let before = clusters.len();
            clusters.retain(|c| cluster_mean[c] >= threshold);
            if clusters.len() == before {
                break;
            }
        }
    }

    surviving.retain(|_, clusters| clusters.len() >= config.min_story_clusters);
    let kept_clusters: BTreeSet<i64> = surviving.values().flatten().copied().collect();

    let kept: Vec<HierarchyAssignment> = assignments
        .iter()
        .filter(|a| kept_clusters.contains(&a.cluster_id.expect("cluster present")))
        .cloned()
        .collect();

    let scope_sets = |list: &[HierarchyAssignment]| {
        let themes: BTreeSet<i64> = list.iter().map(|a| a.theme_id).collect();
        let stories: BTreeSet<i64> = list.iter().filter_map(|a| a.story_id).collect();
        let clusters: BTreeSet<i64> = list.iter().filter_map(|a| a.cluster_id).collect();
        (themes, stories, clusters)
    };
    let (themes_before, stories_before, clusters_before) = scope_sets(assignments);
    let (themes_after, stories_after, clusters_after) = scope_sets(&kept);

    let report = PruningReport {
        removed_clusters: clusters_before.len() - clusters_after.len(),
        removed_stories: stories_before.len() - stories_after.len(),
        removed_themes: themes_before.len() - themes_after.len(),
        removed_points: assignments.len() - kept.len(),
    };
    Ok((kept, report))
}

/// Persist scores as JSONL `{point_id, s_theme, s_story, s_cluster, total}`
/// in ascending point-id order.
pub fn write_scores<W: std::io::Write>(
    scores: &BTreeMap<String, SnrScore>,
    mut out: W,
) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        point_id: &'a str,
        s_theme: f64,
        s_story: f64,
        s_cluster: f64,
        total: f64,
    }
    for (id, s) in scores {
        let row = Row {
            point_id: id,
            s_theme: s.s_theme,
            s_story: s.s_story,
            s_cluster: s.s_cluster,
            total: s.total,
        };
        serde_json::to_writer(&mut out, &row)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scores<R: std::io::Read>(
    source: R,
) -> std::io::Result<BTreeMap<String, SnrScore>> {
    use std::io::BufRead;
    #[derive(Deserialize)]
    struct Row {
        point_id: String,
        s_theme: f64,
        s_story: f64,
        s_cluster: f64,
        total: f64,
    }
    let reader = std::io::BufReader::new(source);
    let mut out = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.insert(
            row.point_id,
            SnrScore {
                s_theme: row.s_theme,
                s_story: row.s_story,
                s_cluster: row.s_cluster,
                total: row.total,
            },
        );
    }
    Ok(out)
}
