//! Summary-of-Summaries context generation.
//!
//! Cluster summaries are generated from member datapoints, story summaries
//! from the bodies of their cluster summaries, and theme summaries from the
//! bodies of their story summaries. The weighted and unweighted modes
//! differ in exactly one step — input selection: weighted mode feeds the
//! top-n inputs by SNR rank, unweighted mode the first n in ascending id
//! order. Titles are regenerated at every level.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::backends::{BackendError, GenerationRequest, GenerativeBackend, TemplateId};
use crate::hierarchy::Level;
use crate::snr::rank_order;

#[derive(Debug, Error)]
pub enum SosError {
    #[error("empty scope: {level} {id}")]
    EmptyScope { level: &'static str, id: i64 },
    #[error("mode mismatch among child summaries of {level} {id}")]
    ModeMismatch { level: &'static str, id: i64 },
    #[error("weighted mode requires an SNR score for point {0}")]
    MissingScore(String),
    #[error("backend failure for {level} {id}: {source}")]
    Backend {
        level: &'static str,
        id: i64,
        source: BackendError,
    },
}

/// Summary input-selection mode: SNR-ranked (weighted) or id-ordered
/// (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Weighted,
    Unweighted,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Weighted => "weighted",
            Mode::Unweighted => "unweighted",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weighted" => Ok(Mode::Weighted),
            "unweighted" => Ok(Mode::Unweighted),
            other => Err(format!("unknown mode '{other}'")),
        }
    }
}

/// Generated title and body for one hierarchy scope. `input_ids` records
/// which members (or child scopes) fed the prompt, for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSummary {
    pub level: Level,
    pub id: i64,
    pub mode: Mode,
    pub title: String,
    pub body: String,
    pub source_count: usize,
    pub input_ids: Vec<String>,
}

fn run_generate(
    gen: &dyn GenerativeBackend,
    level: &'static str,
    id: i64,
    inputs: Vec<String>,
) -> Result<(String, String), SosError> {
    let request = GenerationRequest::new(TemplateId::Summarize, inputs);
    let output = gen
        .generate(&request)
        .map_err(|source| SosError::Backend { level, id, source })?;
    let (title, body) = output.split_once('\n').unwrap_or((output.as_str(), ""));
    Ok((title.trim().to_owned(), body.trim().to_owned()))
}

/// Summarize one cluster from its member datapoints.
///
/// `members` must be in ascending point-id order; weighted mode requires a
/// total-SNR entry for every member.
pub fn summarize_cluster(
    cluster_id: i64,
    members: &[(String, String)],
    totals: &BTreeMap<String, f64>,
    mode: Mode,
    n: usize,
    gen: &dyn GenerativeBackend,
) -> Result<ContextSummary, SosError> {
    if members.is_empty() {
        return Err(SosError::EmptyScope {
            level: "cluster",
            id: cluster_id,
        });
    }
    let ordered_ids: Vec<String> = match mode {
        Mode::Unweighted => members.iter().map(|(id, _)| id.clone()).collect(),
        Mode::Weighted => {
            let scored: Vec<(String, f64)> = members
                .iter()
                .map(|(id, _)| {
                    totals
                        .get(id)
                        .map(|t| (id.clone(), *t))
                        .ok_or_else(|| SosError::MissingScore(id.clone()))
                })
                .collect::<Result<_, _>>()?;
            rank_order(&scored)
        }
    };
    let text_of: BTreeMap<&str, &str> = members
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();
    let input_ids: Vec<String> = ordered_ids.into_iter().take(n).collect();
    let inputs: Vec<String> = input_ids
        .iter()
        .map(|id| text_of[id.as_str()].to_owned())
        .collect();
    let (title, body) = run_generate(gen, "cluster", cluster_id, inputs)?;
    Ok(ContextSummary {
        level: Level::Cluster,
        id: cluster_id,
        mode,
        title,
        body,
        source_count: input_ids.len(),
        input_ids,
    })
}

/// Order child scope ids for aggregation: by descending mean SNR (ties by
/// ascending id) in weighted mode, ascending id otherwise.
fn order_children(
    children: &[&ContextSummary],
    mean_snr: &BTreeMap<i64, f64>,
    mode: Mode,
) -> Vec<i64> {
    let mut ids: Vec<i64> = children.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    if mode == Mode::Weighted {
        ids.sort_by(|a, b| {
            let sa = mean_snr.get(a).copied().unwrap_or(0.0);
            let sb = mean_snr.get(b).copied().unwrap_or(0.0);
            sb.partial_cmp(&sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.cmp(b))
        });
    }
    ids
}

fn aggregate(
    level: Level,
    level_name: &'static str,
    child_level: Level,
    id: i64,
    children: &[&ContextSummary],
    mean_snr: &BTreeMap<i64, f64>,
    mode: Mode,
    n: usize,
    gen: &dyn GenerativeBackend,
) -> Result<ContextSummary, SosError> {
    if children.is_empty() {
        return Err(SosError::EmptyScope {
            level: level_name,
            id,
        });
    }
    if children
        .iter()
        .any(|c| c.mode != mode || c.level != child_level)
    {
        return Err(SosError::ModeMismatch {
            level: level_name,
            id,
        });
    }
    let body_of: BTreeMap<i64, &str> = children.iter().map(|c| (c.id, c.body.as_str())).collect();
    let selected: Vec<i64> = order_children(children, mean_snr, mode)
        .into_iter()
        .take(n)
        .collect();
    let inputs: Vec<String> = selected.iter().map(|id| body_of[id].to_owned()).collect();
    let (title, body) = run_generate(gen, level_name, id, inputs)?;
    Ok(ContextSummary {
        level,
        id,
        mode,
        title,
        body,
        source_count: selected.len(),
        input_ids: selected.iter().map(|id| id.to_string()).collect(),
    })
}

/// Aggregate a story summary from its cluster summaries. `cluster_mean_snr`
/// maps cluster id to the arithmetic mean of its member-point SNR totals.
pub fn summarize_story(
    story_id: i64,
    children: &[&ContextSummary],
    cluster_mean_snr: &BTreeMap<i64, f64>,
    mode: Mode,
    n: usize,
    gen: &dyn GenerativeBackend,
) -> Result<ContextSummary, SosError> {
    aggregate(
        Level::Story,
        "story",
        Level::Cluster,
        story_id,
        children,
        cluster_mean_snr,
        mode,
        n,
        gen,
    )
}

/// Aggregate a theme summary from its story summaries. `story_mean_snr`
/// maps story id to the mean of its member-point SNR totals (size-weighted:
/// over points, not over child means).
pub fn summarize_theme(
    theme_id: i64,
    children: &[&ContextSummary],
    story_mean_snr: &BTreeMap<i64, f64>,
    mode: Mode,
    n: usize,
    gen: &dyn GenerativeBackend,
) -> Result<ContextSummary, SosError> {
    aggregate(
        Level::Theme,
        "theme",
        Level::Story,
        theme_id,
        children,
        story_mean_snr,
        mode,
        n,
        gen,
    )
}

/// Input caps: datapoints per cluster summary, child summaries per
/// story/theme summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SosConfig {
    pub cluster_inputs: usize,
    pub child_inputs: usize,
}

impl Default for SosConfig {
    fn default() -> Self {
        Self {
            cluster_inputs: 20,
            child_inputs: 10,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::stub::StubGenerator;

    fn member(id: &str, text: &str) -> (String, String) {
        (id.to_owned(), text.to_owned())
    }

    fn totals(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(id, t)| ((*id).to_owned(), *t)).collect()
    }

    #[test]
    fn single_point_cluster_summaries_agree_across_modes() {
        let gen = StubGenerator::new();
        let members = vec![member("p1", "Pizza was cold. Service was slow.")];
        let t = totals(&[("p1", 1.0)]);
        let w = summarize_cluster(0, &members, &t, Mode::Weighted, 5, &gen).unwrap();
        let u = summarize_cluster(0, &members, &t, Mode::Unweighted, 5, &gen).unwrap();
        assert_eq!(w.title, u.title);
        assert_eq!(w.body, u.body);
        assert_eq!(w.source_count, 1);
        assert_eq!(w.body, "Pizza was cold.");
    }

    #[test]
    fn weighted_mode_feeds_rank_order_prefix() {
        let gen = StubGenerator::new();
        let members: Vec<(String, String)> = (0..10)
            .map(|i| member(&format!("p{i}"), &format!("text number {i}.")))
            .collect();
        // Totals descending with id reversed: p9 ranks first.
        let t: BTreeMap<String, f64> = (0..10)
            .map(|i| (format!("p{i}"), i as f64 / 10.0))
            .collect();
        let summary = summarize_cluster(3, &members, &t, Mode::Weighted, 5, &gen).unwrap();
        assert_eq!(summary.input_ids, vec!["p9", "p8", "p7", "p6", "p5"]);
        assert_eq!(summary.source_count, 5);

        let unweighted = summarize_cluster(3, &members, &t, Mode::Unweighted, 5, &gen).unwrap();
        assert_eq!(unweighted.input_ids, vec!["p0", "p1", "p2", "p3", "p4"]);
    }

    #[test]
    fn empty_cluster_is_an_error() {
        let gen = StubGenerator::new();
        let err =
            summarize_cluster(7, &[], &BTreeMap::new(), Mode::Unweighted, 5, &gen).unwrap_err();
        assert!(matches!(err, SosError::EmptyScope { level: "cluster", id: 7 }));
    }

    #[test]
    fn weighted_mode_without_scores_is_an_error() {
        let gen = StubGenerator::new();
        let members = vec![member("p1", "something.")];
        let err = summarize_cluster(0, &members, &BTreeMap::new(), Mode::Weighted, 5, &gen)
            .unwrap_err();
        assert!(matches!(err, SosError::MissingScore(_)));
    }

    fn child(level: Level, id: i64, mode: Mode, body: &str) -> ContextSummary {
        ContextSummary {
            level,
            id,
            mode,
            title: format!("title {id}"),
            body: body.to_owned(),
            source_count: 1,
            input_ids: vec![],
        }
    }

    #[test]
    fn story_orders_children_by_mean_snr_in_weighted_mode() {
        let gen = StubGenerator::new();
        let c1 = child(Level::Cluster, 1, Mode::Weighted, "one body.");
        let c2 = child(Level::Cluster, 2, Mode::Weighted, "two body.");
        let c3 = child(Level::Cluster, 3, Mode::Weighted, "three body.");
        let means: BTreeMap<i64, f64> = [(1, 0.2), (2, 0.9), (3, 0.5)].into_iter().collect();
        let summary = summarize_story(
            0,
            &[&c1, &c2, &c3],
            &means,
            Mode::Weighted,
            2,
            &gen,
        )
        .unwrap();
        assert_eq!(summary.input_ids, vec!["2", "3"]);
        assert_eq!(summary.body, "two body. three body.");
    }

    #[test]
    fn unweighted_story_ignores_scores() {
        let gen = StubGenerator::new();
        let c1 = child(Level::Cluster, 1, Mode::Unweighted, "one body.");
        let c2 = child(Level::Cluster, 2, Mode::Unweighted, "two body.");
        let means: BTreeMap<i64, f64> = [(1, 0.1), (2, 0.9)].into_iter().collect();
        let with_scores =
            summarize_story(0, &[&c1, &c2], &means, Mode::Unweighted, 5, &gen).unwrap();
        let without =
            summarize_story(0, &[&c1, &c2], &BTreeMap::new(), Mode::Unweighted, 5, &gen).unwrap();
        assert_eq!(with_scores.input_ids, vec!["1", "2"]);
        assert_eq!(with_scores.body, without.body);
    }

    #[test]
    fn cap_saturates_at_child_count() {
        let gen = StubGenerator::new();
        let c1 = child(Level::Cluster, 1, Mode::Weighted, "one body.");
        let means: BTreeMap<i64, f64> = [(1, 0.5)].into_iter().collect();
        let summary = summarize_story(0, &[&c1], &means, Mode::Weighted, 10, &gen).unwrap();
        assert_eq!(summary.source_count, 1);
        assert_eq!(summary.body, "one body.");
    }

    #[test]
    fn mode_mismatch_among_children_is_an_error() {
        let gen = StubGenerator::new();
        let c1 = child(Level::Cluster, 1, Mode::Weighted, "one body.");
        let c2 = child(Level::Cluster, 2, Mode::Unweighted, "two body.");
        let err = summarize_story(
            0,
            &[&c1, &c2],
            &BTreeMap::new(),
            Mode::Weighted,
            5,
            &gen,
        )
        .unwrap_err();
        assert!(matches!(err, SosError::ModeMismatch { level: "story", .. }));
    }

    #[test]
    fn theme_aggregates_story_summaries_by_mean_snr() {
        let gen = StubGenerator::new();
        let s0 = child(Level::Story, 0, Mode::Weighted, "calm body.");
        let s1 = child(Level::Story, 1, Mode::Weighted, "loud body.");
        let means: BTreeMap<i64, f64> = [(0, 0.3), (1, 0.8)].into_iter().collect();
        let summary =
            summarize_theme(0, &[&s0, &s1], &means, Mode::Weighted, 5, &gen).unwrap();
        assert_eq!(summary.input_ids, vec!["1", "0"]);
        assert_eq!(summary.body, "loud body. calm body.");
        assert_eq!(summary.level, Level::Theme);

        let single = summarize_theme(1, &[&s0], &means, Mode::Weighted, 5, &gen).unwrap();
        assert_eq!(single.body, "calm body.");
    }

    #[test]
    fn stub_summaries_are_deterministic() {
        let gen = StubGenerator::new();
        let members = vec![
            member("p1", "Pizza was cold. Extra."),
            member("p2", "Service was slow. More."),
        ];
        let t = totals(&[("p1", 0.4), ("p2", 0.9)]);
        let a = summarize_cluster(0, &members, &t, Mode::Weighted, 5, &gen).unwrap();
        let b = summarize_cluster(0, &members, &t, Mode::Weighted, 5, &gen).unwrap();
        assert_eq!(a, b);
    }
}
