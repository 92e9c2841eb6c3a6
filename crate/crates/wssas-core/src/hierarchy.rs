//! Three-level Theme -> Story -> Cluster classification over datapoint
//! embeddings.
//!
//! Construction is greedy leader clustering in ascending point-id order: a
//! point joins the first cluster whose centroid cosine reaches the cluster
//! threshold, else founds a new one; a single refinement pass then
//! reassigns every point to its nearest (frozen) cluster centroid. Stories
//! are leader clusters over cluster centroids, themes over story centroids.
//! After theme formation, points whose cosine to their theme centroid falls
//! below the irrelevance threshold move to theme -1, which carries no
//! sub-structure beyond a single catch-all story counted in reports.
//!
//! Everything is sequential in id order, so output is independent of thread
//! count by construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{cosine, EmbeddingVector};
use crate::corpus::Corpus;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("corpus has {points} points but {embeddings} embeddings")]
    LengthMismatch { points: usize, embeddings: usize },
    #[error("thresholds must satisfy cluster > story > theme > irrelevance, all in (0,1)")]
    InvalidThresholds,
    #[error("assignment references {level} {id} absent from the index")]
    InconsistentAssignment { level: &'static str, id: i64 },
    #[error("point {point_id} labeled theme -1 must not carry story/cluster ids")]
    IrrelevantWithStructure { point_id: String },
}

/// Processing stage a hierarchy index reflects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    All,
    NoIrrelevant,
    NoIrrelevantNoOutliers,
}

impl Stage {
    pub const ALL_STAGES: [Stage; 3] = [
        Stage::All,
        Stage::NoIrrelevant,
        Stage::NoIrrelevantNoOutliers,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::All => "all",
            Stage::NoIrrelevant => "no_irrelevant",
            Stage::NoIrrelevantNoOutliers => "no_irrelevant_no_outliers",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL_STAGES
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

/// Hierarchy level of a scope (summary, centroid, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Cluster,
    Story,
    Theme,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Cluster => "cluster",
            Level::Story => "story",
            Level::Theme => "theme",
        }
    }
}

/// A datapoint's place in the hierarchy. Theme -1 marks irrelevant data and
/// implies absent story and cluster ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyAssignment {
    pub point_id: String,
    pub theme_id: i64,
    pub story_id: Option<i64>,
    pub cluster_id: Option<i64>,
}

impl HierarchyAssignment {
    pub fn is_irrelevant(&self) -> bool {
        self.theme_id == -1
    }
}

/// Centroids and membership maps for one stage of the hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyIndex {
    pub stage: Stage,
    pub cluster_centroids: BTreeMap<i64, EmbeddingVector>,
    pub story_centroids: BTreeMap<i64, EmbeddingVector>,
    pub theme_centroids: BTreeMap<i64, EmbeddingVector>,
    pub cluster_to_story: BTreeMap<i64, i64>,
    pub story_to_theme: BTreeMap<i64, i64>,
}

impl HierarchyIndex {
    pub fn centroid(&self, level: Level, id: i64) -> Option<&EmbeddingVector> {
        match level {
            Level::Cluster => self.cluster_centroids.get(&id),
            Level::Story => self.story_centroids.get(&id),
            Level::Theme => self.theme_centroids.get(&id),
        }
    }

    /// Tree property: every cluster maps to exactly one existing story and
    /// every story to exactly one existing theme.
    pub fn verify_tree(&self) -> Result<(), HierarchyError> {
        for id in self.cluster_centroids.keys() {
            let story = self.cluster_to_story.get(id).ok_or(
                HierarchyError::InconsistentAssignment { level: "cluster", id: *id },
            )?;
            if !self.story_centroids.contains_key(story) {
                return Err(HierarchyError::InconsistentAssignment {
                    level: "story",
                    id: *story,
                });
            }
        }
        for id in self.story_centroids.keys() {
            let theme = self.story_to_theme.get(id).ok_or(
                HierarchyError::InconsistentAssignment { level: "story", id: *id },
            )?;
            if !self.theme_centroids.contains_key(theme) {
                return Err(HierarchyError::InconsistentAssignment {
                    level: "theme",
                    id: *theme,
                });
            }
        }
        Ok(())
    }
}

/// Counts of distinct themes, stories, clusters, and points at one stage.
/// Theme -1, when present, contributes one theme and one catch-all story.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStats {
    pub themes: usize,
    pub stories: usize,
    pub clusters: usize,
    pub points: usize,
}

impl StageStats {
    pub fn dominates(&self, later: &StageStats) -> bool {
        self.themes >= later.themes
            && self.stories >= later.stories
            && self.clusters >= later.clusters
            && self.points >= later.points
    }
}

/// Thresholds controlling hierarchy granularity. Must satisfy
/// `cluster > story > theme > irrelevance`, all in (0,1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    pub tau_cluster: f64,
    pub tau_story: f64,
    pub tau_theme: f64,
    pub tau_irrelevant: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            tau_cluster: 0.75,
            tau_story: 0.50,
            tau_theme: 0.35,
            tau_irrelevant: 0.10,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), HierarchyError> {
        let taus = [
            self.tau_cluster,
            self.tau_story,
            self.tau_theme,
            self.tau_irrelevant,
        ];
        let ordered = taus.windows(2).all(|w| w[0] > w[1]);
        let in_range = taus.iter().all(|t| *t > 0.0 && *t < 1.0);
        if ordered && in_range {
            Ok(())
        } else {
            Err(HierarchyError::InvalidThresholds)
        }
    }
}

/// Output of [`build_hierarchy`]: assignments aligned with corpus order, the
/// stage-all index, and any non-fatal warnings.
#[derive(Debug, Clone)]
pub struct HierarchyBuild {
    pub assignments: Vec<HierarchyAssignment>,
    pub index: HierarchyIndex,
    pub warnings: Vec<String>,
}

/// Leader clustering over vectors in input order; returns labels.
///
/// Centroids are running means during the pass. `refine` adds one pass that
/// reassigns every item to its nearest centroid (centroids frozen, ties to
/// the lowest cluster index).
fn leader_cluster(vectors: &[EmbeddingVector], tau: f64, refine: bool) -> Vec<usize> {
    let mut labels = vec![0usize; vectors.len()];
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        let mut joined = None;
        for (c, sum) in sums.iter().enumerate() {
            let centroid = mean_of(sum, sizes[c]);
            let sim = cosine(v, &centroid).expect("uniform dimensions");
            if sim >= tau {
                joined = Some(c);
                break;
            }
        }
        let c = match joined {
            Some(c) => c,
            None => {
                sums.push(vec![0.0; v.dimension()]);
                sizes.push(0);
                sums.len() - 1
            }
        };
        labels[i] = c;
        sizes[c] += 1;
        for (acc, x) in sums[c].iter_mut().zip(&v.0) {
            *acc += x;
        }
    }
    if refine && sums.len() > 1 {
        let centroids: Vec<EmbeddingVector> = sums
            .iter()
            .zip(&sizes)
            .map(|(sum, n)| mean_of(sum, *n))
            .collect();
        for (i, v) in vectors.iter().enumerate() {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let sim = cosine(v, centroid).expect("uniform dimensions");
                if sim > best_sim {
                    best_sim = sim;
                    best = c;
                }
            }
            labels[i] = best;
        }
        // Refinement can empty a cluster; compact labels to founding order.
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut seen: Vec<usize> = labels.to_vec();
        seen.sort_unstable();
        seen.dedup();
        for (new, old) in seen.into_iter().enumerate() {
            remap.insert(old, new);
        }
        for l in &mut labels {
            *l = remap[l];
        }
    }
    labels
}

fn mean_of(sum: &[f64], n: usize) -> EmbeddingVector {
    EmbeddingVector(sum.iter().map(|x| x / n as f64).collect())
}

fn mean_vector(vectors: &[&EmbeddingVector]) -> EmbeddingVector {
    let dim = vectors[0].dimension();
    let mut sum = vec![0.0; dim];
    for v in vectors {
        for (acc, x) in sum.iter_mut().zip(&v.0) {
            *acc += x;
        }
    }
    mean_of(&sum, vectors.len())
}

/// Classify every corpus point into the hierarchy. Embeddings align with
/// corpus order (ascending point id).
pub fn build_hierarchy(
    corpus: &Corpus,
    embeddings: &[EmbeddingVector],
    config: &HierarchyConfig,
) -> Result<HierarchyBuild, HierarchyError> {
    config.validate()?;
    if corpus.len() != embeddings.len() {
        return Err(HierarchyError::LengthMismatch {
            points: corpus.len(),
            embeddings: embeddings.len(),
        });
    }
    let mut warnings = Vec::new();
    let zero_count = embeddings.iter().filter(|e| e.is_zero()).count();
    if 2 * zero_count > corpus.len() {
        warnings.push(format!(
            "{zero_count} of {} embeddings are all-zero; most points will be irrelevant",
            corpus.len()
        ));
    }

    // Level 1: clusters over points (leader pass + one refinement pass).
    let cluster_of_point = leader_cluster(embeddings, config.tau_cluster, true);
    let n_clusters = cluster_of_point.iter().copied().max().map_or(0, |m| m + 1);
    let mut cluster_members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, c) in cluster_of_point.iter().enumerate() {
        cluster_members[*c].push(i);
    }
    let cluster_centroids: Vec<EmbeddingVector> = cluster_members
        .iter()
        .map(|members| mean_vector(&members.iter().map(|&i| &embeddings[i]).collect::<Vec<_>>()))
        .collect();

    // Level 2: stories over cluster centroids.
    let story_of_cluster = leader_cluster(&cluster_centroids, config.tau_story, false);
    let n_stories = story_of_cluster.iter().copied().max().map_or(0, |m| m + 1);
    let mut story_members: Vec<Vec<usize>> = vec![Vec::new(); n_stories]; // point indices
    for (i, c) in cluster_of_point.iter().enumerate() {
        story_members[story_of_cluster[*c]].push(i);
    }
    let story_centroids: Vec<EmbeddingVector> = story_members
        .iter()
        .map(|members| mean_vector(&members.iter().map(|&i| &embeddings[i]).collect::<Vec<_>>()))
        .collect();

    // Level 3: themes over story centroids.
    let theme_of_story = leader_cluster(&story_centroids, config.tau_theme, false);
    let n_themes = theme_of_story.iter().copied().max().map_or(0, |m| m + 1);
    let mut theme_members: Vec<Vec<usize>> = vec![Vec::new(); n_themes];
    for (i, c) in cluster_of_point.iter().enumerate() {
        theme_members[theme_of_story[story_of_cluster[*c]]].push(i);
    }
    let theme_centroids: Vec<EmbeddingVector> = theme_members
        .iter()
        .map(|members| mean_vector(&members.iter().map(|&i| &embeddings[i]).collect::<Vec<_>>()))
        .collect();

    // Irrelevance: one pass against final theme centroids.
    let mut irrelevant = vec![false; corpus.len()];
    for (i, embedding) in embeddings.iter().enumerate() {
        let theme = theme_of_story[story_of_cluster[cluster_of_point[i]]];
        let sim = cosine(embedding, &theme_centroids[theme]).expect("uniform dimensions");
        if sim < config.tau_irrelevant {
            irrelevant[i] = true;
        }
    }

    // Surviving membership after the irrelevance pass.
    let survivors_of = |members: &[Vec<usize>]| -> Vec<Vec<usize>> {
        members
            .iter()
            .map(|m| m.iter().copied().filter(|&i| !irrelevant[i]).collect())
            .collect()
    };
    let cluster_survivors = survivors_of(&cluster_members);
    let story_survivors = survivors_of(&story_members);
    let theme_survivors = survivors_of(&theme_members);

    // Public ids: descending surviving member count, ties by founding order.
    let assign_ids = |survivors: &[Vec<usize>]| -> BTreeMap<usize, i64> {
        let mut order: Vec<usize> = (0..survivors.len())
            .filter(|&i| !survivors[i].is_empty())
            .collect();
        order.sort_by(|&a, &b| survivors[b].len().cmp(&survivors[a].len()).then(a.cmp(&b)));
        order
            .into_iter()
            .enumerate()
            .map(|(new_id, founded)| (founded, new_id as i64))
            .collect()
    };
    let cluster_ids = assign_ids(&cluster_survivors);
    let story_ids = assign_ids(&story_survivors);
    let theme_ids = assign_ids(&theme_survivors);

    let mut assignments = Vec::with_capacity(corpus.len());
    for (i, point) in corpus.points().iter().enumerate() {
        if irrelevant[i] {
            assignments.push(HierarchyAssignment {
                point_id: point.id.clone(),
                theme_id: -1,
                story_id: None,
                cluster_id: None,
            });
            continue;
        }
        let cluster = cluster_of_point[i];
        let story = story_of_cluster[cluster];
        let theme = theme_of_story[story];
        assignments.push(HierarchyAssignment {
            point_id: point.id.clone(),
            theme_id: theme_ids[&theme],
            story_id: Some(story_ids[&story]),
            cluster_id: Some(cluster_ids[&cluster]),
        });
    }

    // Index over surviving scopes, centroids recomputed from survivors.
    let mut index = HierarchyIndex {
        stage: Stage::All,
        cluster_centroids: BTreeMap::new(),
        story_centroids: BTreeMap::new(),
        theme_centroids: BTreeMap::new(),
        cluster_to_story: BTreeMap::new(),
        story_to_theme: BTreeMap::new(),
    };
    for (founded, id) in &cluster_ids {
        let members: Vec<&EmbeddingVector> = cluster_survivors[*founded]
            .iter()
            .map(|&i| &embeddings[i])
            .collect();
        index.cluster_centroids.insert(*id, mean_vector(&members));
        index
            .cluster_to_story
            .insert(*id, story_ids[&story_of_cluster[*founded]]);
    }
    for (founded, id) in &story_ids {
        let members: Vec<&EmbeddingVector> = story_survivors[*founded]
            .iter()
            .map(|&i| &embeddings[i])
            .collect();
        index.story_centroids.insert(*id, mean_vector(&members));
        index
            .story_to_theme
            .insert(*id, theme_ids[&theme_of_story[*founded]]);
    }
    for (founded, id) in &theme_ids {
        let members: Vec<&EmbeddingVector> = theme_survivors[*founded]
            .iter()
            .map(|&i| &embeddings[i])
            .collect();
        index.theme_centroids.insert(*id, mean_vector(&members));
    }

    Ok(HierarchyBuild {
        assignments,
        index,
        warnings,
    })
}

/// Recompute story and theme centroids for a subset of assignments (after
/// filtering) so the index invariant — centroid equals the mean of member
/// embeddings — holds at every stage. Scopes with no surviving members are
/// dropped.
pub fn restrict_index(
    index: &HierarchyIndex,
    assignments: &[HierarchyAssignment],
    embeddings_by_id: &BTreeMap<String, EmbeddingVector>,
    stage: Stage,
) -> HierarchyIndex {
    let mut cluster_members: BTreeMap<i64, Vec<&EmbeddingVector>> = BTreeMap::new();
    let mut story_members: BTreeMap<i64, Vec<&EmbeddingVector>> = BTreeMap::new();
    let mut theme_members: BTreeMap<i64, Vec<&EmbeddingVector>> = BTreeMap::new();
    for a in assignments {
        if a.is_irrelevant() {
            continue;
        }
        let e = match embeddings_by_id.get(&a.point_id) {
            Some(e) => e,
            None => continue,
        };
        if let Some(c) = a.cluster_id {
            cluster_members.entry(c).or_default().push(e);
        }
        if let Some(s) = a.story_id {
            story_members.entry(s).or_default().push(e);
        }
        theme_members.entry(a.theme_id).or_default().push(e);
    }
    HierarchyIndex {
        stage,
        cluster_centroids: cluster_members
            .iter()
            .map(|(id, members)| (*id, mean_vector(members)))
            .collect(),
        story_centroids: story_members
            .iter()
            .map(|(id, members)| (*id, mean_vector(members)))
            .collect(),
        theme_centroids: theme_members
            .iter()
            .map(|(id, members)| (*id, mean_vector(members)))
            .collect(),
        cluster_to_story: index
            .cluster_to_story
            .iter()
            .filter(|(c, _)| cluster_members.contains_key(c))
            .map(|(c, s)| (*c, *s))
            .collect(),
        story_to_theme: index
            .story_to_theme
            .iter()
            .filter(|(s, _)| story_members.contains_key(s))
            .map(|(s, t)| (*s, *t))
            .collect(),
    }
}

/// Count distinct themes, stories, clusters, and points. Theme -1
/// contributes one theme and one catch-all story when present.
pub fn hierarchy_stats(
    assignments: &[HierarchyAssignment],
    index: &HierarchyIndex,
) -> Result<StageStats, HierarchyError> {
    let mut themes = std::collections::BTreeSet::new();
    let mut stories = std::collections::BTreeSet::new();
    let mut clusters = std::collections::BTreeSet::new();
    let mut has_irrelevant = false;
    for a in assignments {
        if a.is_irrelevant() {
            if a.story_id.is_some() || a.cluster_id.is_some() {
                return Err(HierarchyError::IrrelevantWithStructure {
                    point_id: a.point_id.clone(),
                });
            }
            has_irrelevant = true;
            continue;
        }
        themes.insert(a.theme_id);
        if !index.theme_centroids.contains_key(&a.theme_id) {
            return Err(HierarchyError::InconsistentAssignment {
                level: "theme",
                id: a.theme_id,
            });
        }
        if let Some(s) = a.story_id {
            if !index.story_centroids.contains_key(&s) {
                return Err(HierarchyError::InconsistentAssignment { level: "story", id: s });
            }
            stories.insert(s);
        }
        if let Some(c) = a.cluster_id {
            if !index.cluster_centroids.contains_key(&c) {
                return Err(HierarchyError::InconsistentAssignment { level: "cluster", id: c });
            }
            clusters.insert(c);
        }
    }
    let extra = usize::from(has_irrelevant);
    Ok(StageStats {
        themes: themes.len() + extra,
        stories: stories.len() + extra,
        clusters: clusters.len(),
        points: assignments.len(),
    })
}

/// Persist assignments as JSONL in input order.
pub fn write_assignments<W: std::io::Write>(
    assignments: &[HierarchyAssignment],
    mut out: W,
) -> std::io::Result<()> {
    for a in assignments {
        serde_json::to_writer(&mut out, a)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_assignments<R: std::io::Read>(
    source: R,
) -> std::io::Result<Vec<HierarchyAssignment>> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(source);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: HierarchyAssignment = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        out.push(a);
    }
    Ok(out)
}
