//! Pipeline step implementations.
//!
//! Each subcommand reads the artifacts of its upstream steps from the
//! output directory, writes its own immutable artifacts, and records them
//! (with content digests) in the manifest. A step whose artifacts are
//! already recorded and present is a no-op unless forced.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use wssas_core::backends::{BackendError, EmbeddingVector};
use wssas_core::categorize::{
    self, category_clusters, extract_topics, CategorizeError, CategoryClustering, SankeyExport,
    Scenario, TopicPair,
};
use wssas_core::corpus::{self, Corpus, CorpusError};
use wssas_core::evalqa::{self, EvalError, QagUnit};
use wssas_core::hierarchy::{
    self, build_hierarchy, hierarchy_stats, restrict_index, HierarchyAssignment, HierarchyError,
    HierarchyIndex, Level, Stage, StageStats,
};
use wssas_core::snr::{
    self, amplitude, filter_irrelevant, filter_outliers, keyword_profile, rank_order, snr,
    KeywordProfile, SnrError, SnrScore,
};
use wssas_core::sos::{
    summarize_cluster, summarize_story, summarize_theme, ContextSummary, Mode, SosError,
};

use crate::config::{Backends, PipelineConfig};
use crate::manifest::Manifest;

/// Step failure, classified for the process exit code.
#[derive(Debug)]
pub enum StepError {
    /// A required upstream artifact is missing; names the subcommand that
    /// produces it. Exit code 2.
    Upstream(&'static str),
    /// The generative/embedding backend failed. Exit code 3.
    Backend(String),
    /// Anything else (IO, bad data, config). Exit code 1.
    Other(anyhow::Error),
}

impl std::fmt::Display for StepError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepError::Upstream(step) => write!(f, "requires: {step}"),
            StepError::Backend(msg) => write!(f, "backend failure: {msg}"),
            StepError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for StepError {
    fn from(e: anyhow::Error) -> Self {
        StepError::Other(e)
    }
}

impl From<std::io::Error> for StepError {
    fn from(e: std::io::Error) -> Self {
        StepError::Other(e.into())
    }
}

impl From<BackendError> for StepError {
    fn from(e: BackendError) -> Self {
        StepError::Backend(e.to_string())
    }
}

impl From<CorpusError> for StepError {
    fn from(e: CorpusError) -> Self {
        StepError::Other(anyhow::anyhow!("{e}"))
    }
}

impl From<HierarchyError> for StepError {
    fn from(e: HierarchyError) -> Self {
        StepError::Other(anyhow::anyhow!("{e}"))
    }
}

impl From<SnrError> for StepError {
    fn from(e: SnrError) -> Self {
        match e {
            SnrError::Backend(b) => StepError::Backend(b.to_string()),
            other => StepError::Other(anyhow::anyhow!("{other}")),
        }
    }
}

impl From<SosError> for StepError {
    fn from(e: SosError) -> Self {
        match e {
            SosError::Backend { ref source, .. } => {
                StepError::Backend(format!("{e} ({source})"))
            }
            other => StepError::Other(anyhow::anyhow!("{other}")),
        }
    }
}

impl From<CategorizeError> for StepError {
    fn from(e: CategorizeError) -> Self {
        match e {
            CategorizeError::Backend { .. } | CategorizeError::RawBackend(_) => {
                StepError::Backend(e.to_string())
            }
            other => StepError::Other(anyhow::anyhow!("{other}")),
        }
    }
}

impl From<EvalError> for StepError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend { .. } | EvalError::RawBackend(_) => {
                StepError::Backend(e.to_string())
            }
            other => StepError::Other(anyhow::anyhow!("{other}")),
        }
    }
}

pub type StepResult = Result<StepOutcome, StepError>;

#[derive(Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Ran(String),
    UpToDate(String),
}

pub struct Context<'a> {
    pub config: &'a PipelineConfig,
    pub out_dir: &'a Path,
    pub manifest: &'a mut Manifest,
    pub force: bool,
}

// ---------------------------------------------------------------------------
// Artifact names
// ---------------------------------------------------------------------------

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const INGEST_REPORT_FILE: &str = "ingest_report.json";
pub const PROFILE_FILE: &str = "dataset_profile.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";
pub const HIERARCHY_REPORT_FILE: &str = "hierarchy_report.json";
pub const KEYWORDS_FILE: &str = "keyword_profiles.json";
pub const SCORES_FILE: &str = "snr_scores.jsonl";
pub const PRUNING_REPORT_FILE: &str = "pruning_report.json";
pub const METRICS_REPORT_FILE: &str = "metrics_report.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";

pub fn assignments_file(stage: Stage) -> String {
    format!("assignments_{}.jsonl", stage.as_str())
}

pub fn index_file(stage: Stage) -> String {
    format!("index_{}.json", stage.as_str())
}

pub fn stats_file(stage: Stage) -> String {
    format!("stage_stats_{}.json", stage.as_str())
}

pub fn summaries_file(mode: Mode, stage: Stage) -> String {
    format!("summaries_{}_{}.json", mode.as_str(), stage.as_str())
}

pub fn topics_file(scenario: Scenario, stage: Stage) -> String {
    format!("topics_{}_{}.jsonl", scenario.as_str(), stage.as_str())
}

pub fn categories_file(scenario: Scenario, stage: Stage) -> String {
    format!("categories_{}_{}.json", scenario.as_str(), stage.as_str())
}

pub fn sankey_file(a: Scenario, b: Scenario, stage: Stage) -> String {
    format!("sankey_{}_vs_{}_{}.json", a.as_str(), b.as_str(), stage.as_str())
}

// ---------------------------------------------------------------------------
// Artifact IO
// ---------------------------------------------------------------------------

fn write_json<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<(), StepError> {
    let path = out_dir.join(name);
    let mut raw = serde_json::to_string_pretty(value)
        .map_err(|e| StepError::Other(anyhow::anyhow!("serialize {name}: {e}")))?;
    raw.push('\n');
    fs::write(&path, raw)
        .map_err(|e| StepError::Other(anyhow::anyhow!("write {}: {e}", path.display())))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(
    out_dir: &Path,
    name: &str,
    requires: &'static str,
) -> Result<T, StepError> {
    let path = out_dir.join(name);
    if !path.exists() {
        return Err(StepError::Upstream(requires));
    }
    let raw = fs::read_to_string(&path)
        .map_err(|e| StepError::Other(anyhow::anyhow!("read {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| StepError::Other(anyhow::anyhow!("parse {}: {e}", path.display())))
}

fn open_upstream(
    out_dir: &Path,
    name: &str,
    requires: &'static str,
) -> Result<fs::File, StepError> {
    let path = out_dir.join(name);
    if !path.exists() {
        return Err(StepError::Upstream(requires));
    }
    fs::File::open(&path)
        .map_err(|e| StepError::Other(anyhow::anyhow!("open {}: {e}", path.display())))
}

fn load_corpus(out_dir: &Path) -> Result<Corpus, StepError> {
    let file = open_upstream(out_dir, CORPUS_FILE, "ingest")?;
    Ok(corpus::read_jsonl(file)?)
}

fn stage_source(stage: Stage) -> &'static str {
    match stage {
        Stage::All => "hierarchy",
        _ => "filter",
    }
}

fn load_assignments(out_dir: &Path, stage: Stage) -> Result<Vec<HierarchyAssignment>, StepError> {
    let file = open_upstream(out_dir, &assignments_file(stage), stage_source(stage))?;
    Ok(hierarchy::read_assignments(file)?)
}

fn load_index(out_dir: &Path, stage: Stage) -> Result<HierarchyIndex, StepError> {
    read_json(out_dir, &index_file(stage), stage_source(stage))
}

fn load_scores(out_dir: &Path) -> Result<BTreeMap<String, SnrScore>, StepError> {
    let file = open_upstream(out_dir, SCORES_FILE, "snr")?;
    Ok(snr::read_scores(file)?)
}

fn load_summaries(
    out_dir: &Path,
    mode: Mode,
    stage: Stage,
) -> Result<Vec<ContextSummary>, StepError> {
    read_json(out_dir, &summaries_file(mode, stage), "summarize")
}

fn load_categories(
    out_dir: &Path,
    scenario: Scenario,
    stage: Stage,
) -> Result<CategoryClustering, StepError> {
    read_json(out_dir, &categories_file(scenario, stage), "categorize")
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    point_id: String,
    vector: Vec<f64>,
}

fn write_embeddings(
    out_dir: &Path,
    corpus: &Corpus,
    embeddings: &[EmbeddingVector],
) -> Result<(), StepError> {
    let path = out_dir.join(EMBEDDINGS_FILE);
    let mut out = Vec::new();
    for (p, e) in corpus.points().iter().zip(embeddings) {
        let row = EmbeddingRow {
            point_id: p.id.clone(),
            vector: e.0.clone(),
        };
        serde_json::to_writer(&mut out, &row)
            .map_err(|e| StepError::Other(anyhow::anyhow!("serialize embedding: {e}")))?;
        out.push(b'\n');
    }
    fs::write(&path, out)
        .map_err(|e| StepError::Other(anyhow::anyhow!("write {}: {e}", path.display())))?;
    Ok(())
}

fn load_embeddings(out_dir: &Path) -> Result<BTreeMap<String, EmbeddingVector>, StepError> {
    let file = open_upstream(out_dir, EMBEDDINGS_FILE, "hierarchy")?;
    let reader = BufReader::new(file);
    let mut map = BTreeMap::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(&line)
            .map_err(|e| StepError::Other(anyhow::anyhow!("parse embeddings: {e}")))?;
        map.insert(row.point_id, EmbeddingVector(row.vector));
    }
    Ok(map)
}

fn skip_or_mark(ctx: &Context<'_>, step: &str) -> Option<StepOutcome> {
    if !ctx.force && ctx.manifest.step_complete(ctx.out_dir, step) {
        Some(StepOutcome::UpToDate(step.to_owned()))
    } else {
        None
    }
}

fn finish(ctx: &mut Context<'_>, step: &str, files: &[&str]) -> StepResult {
    ctx.manifest
        .record_step(ctx.out_dir, step, files)
        .map_err(StepError::Other)?;
    Ok(StepOutcome::Ran(step.to_owned()))
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

pub fn run_ingest(ctx: &mut Context<'_>) -> StepResult {
    let step = "ingest";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let input = ctx
        .config
        .input
        .path
        .as_ref()
        .ok_or_else(|| StepError::Other(anyhow::anyhow!("input.path is not configured")))?;
    let file = fs::File::open(input)
        .map_err(|e| StepError::Other(anyhow::anyhow!("open {}: {e}", input.display())))?;
    let (corpus, report) = corpus::ingest(file, ctx.config.input.format, &ctx.config.input.field_map)?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf)?;
    fs::write(ctx.out_dir.join(CORPUS_FILE), buf)?;
    write_json(ctx.out_dir, INGEST_REPORT_FILE, &report)?;
    finish(ctx, step, &[CORPUS_FILE, INGEST_REPORT_FILE])
}

pub fn run_characterize(ctx: &mut Context<'_>) -> StepResult {
    let step = "characterize";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let corpus = load_corpus(ctx.out_dir)?;
    let profile = corpus::characterize(&corpus)?;
    write_json(ctx.out_dir, PROFILE_FILE, &profile)?;
    finish(ctx, step, &[PROFILE_FILE])
}

#[derive(Serialize, Deserialize)]
struct HierarchyReport {
    warnings: Vec<String>,
}

pub fn run_hierarchy(ctx: &mut Context<'_>) -> StepResult {
    let step = "hierarchy";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let corpus = load_corpus(ctx.out_dir)?;
    let backends = Backends::from_config(ctx.config).map_err(StepError::Other)?;
    let texts: Vec<String> = corpus.points().iter().map(|p| p.text.clone()).collect();
    let embeddings = backends.embedder.embed(&texts)?;
    write_embeddings(ctx.out_dir, &corpus, &embeddings)?;

    let build = build_hierarchy(&corpus, &embeddings, &ctx.config.hierarchy)?;
    let stats = hierarchy_stats(&build.assignments, &build.index)?;

    let assignments_name = assignments_file(Stage::All);
    let mut buf = Vec::new();
    hierarchy::write_assignments(&build.assignments, &mut buf)?;
    fs::write(ctx.out_dir.join(&assignments_name), buf)?;
    write_json(ctx.out_dir, &index_file(Stage::All), &build.index)?;
    write_json(ctx.out_dir, &stats_file(Stage::All), &stats)?;
    write_json(
        ctx.out_dir,
        HIERARCHY_REPORT_FILE,
        &HierarchyReport {
            warnings: build.warnings,
        },
    )?;
    finish(
        ctx,
        step,
        &[
            EMBEDDINGS_FILE,
            &assignments_name,
            &index_file(Stage::All),
            &stats_file(Stage::All),
            HIERARCHY_REPORT_FILE,
        ],
    )
}

pub fn run_snr(ctx: &mut Context<'_>) -> StepResult {
    let step = "snr";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let corpus = load_corpus(ctx.out_dir)?;
    let assignments = load_assignments(ctx.out_dir, Stage::All)?;
    let index = load_index(ctx.out_dir, Stage::All)?;
    let embeddings = load_embeddings(ctx.out_dir)?;
    let stopwords = ctx.config.stopwords().map_err(StepError::Other)?;

    let text_of: BTreeMap<&str, &str> = corpus
        .points()
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let mut cluster_members: BTreeMap<i64, Vec<&str>> = BTreeMap::new();
    for a in &assignments {
        if let Some(c) = a.cluster_id {
            cluster_members.entry(c).or_default().push(&a.point_id);
        }
    }
    let profiles: BTreeMap<i64, KeywordProfile> = cluster_members
        .iter()
        .map(|(c, members)| {
            let texts = members.iter().map(|id| text_of[*id]);
            (
                *c,
                keyword_profile(*c, texts, ctx.config.snr.keyword_count, &stopwords),
            )
        })
        .collect();

    let mut scores: BTreeMap<String, SnrScore> = BTreeMap::new();
    for a in &assignments {
        if a.is_irrelevant() {
            continue;
        }
        let cluster = a.cluster_id.expect("non-irrelevant point has a cluster");
        let profile = &profiles[&cluster];
        let text = text_of[a.point_id.as_str()];
        let embedding = embeddings
            .get(&a.point_id)
            .ok_or_else(|| StepError::Other(anyhow::anyhow!("missing embedding for {}", a.point_id)))?;
        let amp = amplitude(text, profile);
        scores.insert(a.point_id.clone(), snr(embedding, &index, a, amp)?);
    }

    let mut buf = Vec::new();
    snr::write_scores(&scores, &mut buf)?;
    fs::write(ctx.out_dir.join(SCORES_FILE), buf)?;
    write_json(ctx.out_dir, KEYWORDS_FILE, &profiles)?;
    finish(ctx, step, &[SCORES_FILE, KEYWORDS_FILE])
}

pub fn run_filter(ctx: &mut Context<'_>) -> StepResult {
    let step = "filter";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let assignments = load_assignments(ctx.out_dir, Stage::All)?;
    let index = load_index(ctx.out_dir, Stage::All)?;
    let scores = load_scores(ctx.out_dir)?;
    let embeddings = load_embeddings(ctx.out_dir)?;

    let stage2 = filter_irrelevant(&assignments);
    let index2 = restrict_index(&index, &stage2, &embeddings, Stage::NoIrrelevant);
    let stats2 = hierarchy_stats(&stage2, &index2)?;

    let (stage3, pruning) = filter_outliers(&stage2, &scores, &ctx.config.filter)?;
    let index3 = restrict_index(&index, &stage3, &embeddings, Stage::NoIrrelevantNoOutliers);
    let stats3 = hierarchy_stats(&stage3, &index3)?;

    let a2 = assignments_file(Stage::NoIrrelevant);
    let a3 = assignments_file(Stage::NoIrrelevantNoOutliers);
    let mut buf = Vec::new();
    hierarchy::write_assignments(&stage2, &mut buf)?;
    fs::write(ctx.out_dir.join(&a2), buf)?;
    let mut buf = Vec::new();
    hierarchy::write_assignments(&stage3, &mut buf)?;
    fs::write(ctx.out_dir.join(&a3), buf)?;
    write_json(ctx.out_dir, &index_file(Stage::NoIrrelevant), &index2)?;
    write_json(ctx.out_dir, &index_file(Stage::NoIrrelevantNoOutliers), &index3)?;
    write_json(ctx.out_dir, &stats_file(Stage::NoIrrelevant), &stats2)?;
    write_json(ctx.out_dir, &stats_file(Stage::NoIrrelevantNoOutliers), &stats3)?;
    write_json(ctx.out_dir, PRUNING_REPORT_FILE, &pruning)?;
    finish(
        ctx,
        step,
        &[
            &a2,
            &a3,
            &index_file(Stage::NoIrrelevant),
            &index_file(Stage::NoIrrelevantNoOutliers),
            &stats_file(Stage::NoIrrelevant),
            &stats_file(Stage::NoIrrelevantNoOutliers),
            PRUNING_REPORT_FILE,
        ],
    )
}

/// Scope composition derived from one stage's assignments.
struct StageShape {
    clusters: BTreeMap<i64, Vec<(String, String)>>,
    cluster_story: BTreeMap<i64, i64>,
    story_theme: BTreeMap<i64, i64>,
    cluster_mean_snr: BTreeMap<i64, f64>,
    story_mean_snr: BTreeMap<i64, f64>,
    story_members: BTreeMap<i64, Vec<String>>,
    theme_members: BTreeMap<i64, Vec<String>>,
}

fn stage_shape(
    corpus: &Corpus,
    assignments: &[HierarchyAssignment],
    scores: &BTreeMap<String, SnrScore>,
) -> StageShape {
    let text_of: BTreeMap<&str, &str> = corpus
        .points()
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let mut clusters: BTreeMap<i64, Vec<(String, String)>> = BTreeMap::new();
    let mut cluster_story = BTreeMap::new();
    let mut story_theme = BTreeMap::new();
    let mut story_members: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    let mut theme_members: BTreeMap<i64, Vec<String>> = BTreeMap::new();
    let mut cluster_totals: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let mut story_totals: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for a in assignments {
        if a.is_irrelevant() {
            continue;
        }
        let c = a.cluster_id.expect("non-irrelevant point has a cluster");
        let s = a.story_id.expect("non-irrelevant point has a story");
        let text = text_of
            .get(a.point_id.as_str())
            .map(|t| (*t).to_owned())
            .unwrap_or_default();
        clusters.entry(c).or_default().push((a.point_id.clone(), text));
        cluster_story.insert(c, s);
        story_theme.insert(s, a.theme_id);
        story_members.entry(s).or_default().push(a.point_id.clone());
        theme_members.entry(a.theme_id).or_default().push(a.point_id.clone());
        if let Some(score) = scores.get(&a.point_id) {
            let e = cluster_totals.entry(c).or_insert((0.0, 0));
            e.0 += score.total;
            e.1 += 1;
            let e = story_totals.entry(s).or_insert((0.0, 0));
            e.0 += score.total;
            e.1 += 1;
        }
    }
    let mean = |totals: BTreeMap<i64, (f64, usize)>| -> BTreeMap<i64, f64> {
        totals
            .into_iter()
            .map(|(id, (sum, n))| (id, if n > 0 { sum / n as f64 } else { 0.0 }))
            .collect()
    };
    StageShape {
        clusters,
        cluster_story,
        story_theme,
        cluster_mean_snr: mean(cluster_totals),
        story_mean_snr: mean(story_totals),
        story_members,
        theme_members,
    }
}

pub fn run_summarize(ctx: &mut Context<'_>, mode: Mode, stage: Stage) -> StepResult {
    let step = format!("summarize_{}_{}", mode.as_str(), stage.as_str());
    if let Some(done) = skip_or_mark(ctx, &step) {
        return Ok(done);
    }
    let corpus = load_corpus(ctx.out_dir)?;
    let assignments = load_assignments(ctx.out_dir, stage)?;
    let scores = load_scores(ctx.out_dir)?;
    let shape = stage_shape(&corpus, &assignments, &scores);
    let totals: BTreeMap<String, f64> =
        scores.iter().map(|(id, s)| (id.clone(), s.total)).collect();
    let backends = Backends::from_config(ctx.config).map_err(StepError::Other)?;
    let gen = backends.generator.as_ref();

    let mut summaries: Vec<ContextSummary> = Vec::new();
    let mut cluster_summaries: BTreeMap<i64, ContextSummary> = BTreeMap::new();
    for (c, members) in &shape.clusters {
        let summary = summarize_cluster(
            *c,
            members,
            &totals,
            mode,
            ctx.config.sos.cluster_inputs,
            gen,
        )?;
        cluster_summaries.insert(*c, summary);
    }
    let mut story_children: BTreeMap<i64, Vec<&ContextSummary>> = BTreeMap::new();
    for (c, summary) in &cluster_summaries {
        story_children
            .entry(shape.cluster_story[c])
            .or_default()
            .push(summary);
    }
    let mut story_summaries: BTreeMap<i64, ContextSummary> = BTreeMap::new();
    for (s, children) in &story_children {
        let summary = summarize_story(
            *s,
            children,
            &shape.cluster_mean_snr,
            mode,
            ctx.config.sos.child_inputs,
            gen,
        )?;
        story_summaries.insert(*s, summary);
    }
    let mut theme_children: BTreeMap<i64, Vec<&ContextSummary>> = BTreeMap::new();
    for (s, summary) in &story_summaries {
        theme_children
            .entry(shape.story_theme[s])
            .or_default()
            .push(summary);
    }
    let mut theme_summaries: BTreeMap<i64, ContextSummary> = BTreeMap::new();
    for (t, children) in &theme_children {
        let summary = summarize_theme(
            *t,
            children,
            &shape.story_mean_snr,
            mode,
            ctx.config.sos.child_inputs,
            gen,
        )?;
        theme_summaries.insert(*t, summary);
    }
    summaries.extend(cluster_summaries.into_values());
    summaries.extend(story_summaries.into_values());
    summaries.extend(theme_summaries.into_values());
    summaries.sort_by_key(|s| (s.level, s.id));

    let name = summaries_file(mode, stage);
    write_json(ctx.out_dir, &name, &summaries)?;
    finish(ctx, &step, &[&name])
}

pub fn run_categorize(ctx: &mut Context<'_>, scenario: Scenario, stage: Stage) -> StepResult {
    let step = format!("categorize_{}_{}", scenario.as_str(), stage.as_str());
    if let Some(done) = skip_or_mark(ctx, &step) {
        return Ok(done);
    }
    let assignments = load_assignments(ctx.out_dir, stage)?;
    let corpus = load_corpus(ctx.out_dir)?;
    let theme_summaries: BTreeMap<i64, ContextSummary> = match scenario.context_mode() {
        Some(mode) => load_summaries(ctx.out_dir, mode, stage)?
            .into_iter()
            .filter(|s| s.level == Level::Theme)
            .map(|s| (s.id, s))
            .collect(),
        None => BTreeMap::new(),
    };
    let point_of: BTreeMap<&str, &wssas_core::corpus::DataPoint> = corpus
        .points()
        .iter()
        .map(|p| (p.id.as_str(), p))
        .collect();
    let backends = Backends::from_config(ctx.config).map_err(StepError::Other)?;

    let mut topics: Vec<TopicPair> = Vec::with_capacity(assignments.len());
    for a in &assignments {
        let point = point_of
            .get(a.point_id.as_str())
            .ok_or_else(|| StepError::Other(anyhow::anyhow!("point {} not in corpus", a.point_id)))?;
        // Irrelevant points have no theme summary: baseline behavior.
        let context = if a.is_irrelevant() {
            None
        } else {
            theme_summaries.get(&a.theme_id)
        };
        topics.push(extract_topics(
            point,
            scenario,
            context,
            backends.generator.as_ref(),
        )?);
    }
    let topics_name = topics_file(scenario, stage);
    let mut buf = Vec::new();
    categorize::write_topics(&topics, &mut buf)?;
    fs::write(ctx.out_dir.join(&topics_name), buf)?;

    let clustering = category_clusters(
        &topics,
        (ctx.config.categorize.k_min, ctx.config.categorize.k_max),
        ctx.config.seed,
        backends.embedder.as_ref(),
        backends.generator.as_ref(),
    )?;
    let categories_name = categories_file(scenario, stage);
    write_json(ctx.out_dir, &categories_name, &clustering)?;
    finish(ctx, &step, &[&topics_name, &categories_name])
}

fn summary_bodies(
    summaries: &[ContextSummary],
) -> BTreeMap<(Level, i64), &ContextSummary> {
    summaries.iter().map(|s| ((s.level, s.id), s)).collect()
}

pub fn run_evaluate(ctx: &mut Context<'_>, stage: Stage) -> StepResult {
    let step = format!("evaluate_{}", stage.as_str());
    if let Some(done) = skip_or_mark(ctx, &step) {
        return Ok(done);
    }
    let corpus = load_corpus(ctx.out_dir)?;
    let assignments = load_assignments(ctx.out_dir, stage)?;
    let scores = load_scores(ctx.out_dir)?;
    let weighted = load_summaries(ctx.out_dir, Mode::Weighted, stage)?;
    let unweighted = load_summaries(ctx.out_dir, Mode::Unweighted, stage)?;
    let weighted_of = summary_bodies(&weighted);
    let unweighted_of = summary_bodies(&unweighted);
    let shape = stage_shape(&corpus, &assignments, &scores);
    let text_of: BTreeMap<&str, &str> = corpus
        .points()
        .iter()
        .map(|p| (p.id.as_str(), p.text.as_str()))
        .collect();
    let backends = Backends::from_config(ctx.config).map_err(StepError::Other)?;

    // QAG source: the scope's top-5 members by SNR rank, shared by both
    // modes so the encoding compares like with like.
    let source_for = |members: &[String]| -> Vec<String> {
        let scored: Vec<(String, f64)> = members
            .iter()
            .map(|id| (id.clone(), scores.get(id).map_or(0.0, |s| s.total)))
            .collect();
        rank_order(&scored)
            .into_iter()
            .take(5)
            .map(|id| text_of[id.as_str()].to_owned())
            .collect()
    };

    let mut units: Vec<QagUnit> = Vec::new();
    let scopes: Vec<(Level, i64, &Vec<String>)> = shape
        .story_members
        .iter()
        .map(|(id, members)| (Level::Story, *id, members))
        .chain(
            shape
                .theme_members
                .iter()
                .map(|(id, members)| (Level::Theme, *id, members)),
        )
        .collect();
    for (level, id, members) in scopes {
        let source = source_for(members);
        let w = weighted_of
            .get(&(level, id))
            .ok_or(StepError::Upstream("summarize"))?;
        let u = unweighted_of
            .get(&(level, id))
            .ok_or(StepError::Upstream("summarize"))?;
        units.push(evalqa::evaluate_scope(
            level,
            id,
            &source,
            &w.body,
            &u.body,
            ctx.config.eval.theta_sem,
            ctx.config.eval.questions,
            backends.generator.as_ref(),
            backends.embedder.as_ref(),
        )?);
    }

    let units_name = format!("qag_units_{}.json", stage.as_str());
    let report_name = format!("eval_report_{}.json", stage.as_str());
    let mut buf = Vec::new();
    evalqa::write_units(&units, &mut buf)?;
    fs::write(ctx.out_dir.join(&units_name), buf)?;
    write_json(ctx.out_dir, &report_name, &evalqa::eval_report(&units))?;
    finish(ctx, &step, &[&units_name, &report_name])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: Scenario,
    pub stage: Stage,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
}

pub fn run_metrics(ctx: &mut Context<'_>) -> StepResult {
    let step = "metrics";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let mut rows = Vec::new();
    for scenario in Scenario::ALL {
        for stage in Stage::ALL_STAGES {
            if !ctx.out_dir.join(categories_file(scenario, stage)).exists() {
                continue;
            }
            let clustering = load_categories(ctx.out_dir, scenario, stage)?;
            rows.push(MetricsRow {
                scenario,
                stage,
                silhouette: clustering.metrics.silhouette,
                davies_bouldin: clustering.metrics.davies_bouldin,
                calinski_harabasz: clustering.metrics.calinski_harabasz,
            });
        }
    }
    if rows.is_empty() {
        return Err(StepError::Upstream("categorize"));
    }
    write_json(ctx.out_dir, METRICS_REPORT_FILE, &rows)?;
    finish(ctx, step, &[METRICS_REPORT_FILE])
}

pub fn run_sankey(
    ctx: &mut Context<'_>,
    scenario_a: Scenario,
    scenario_b: Scenario,
    stage: Stage,
) -> StepResult {
    let step = format!(
        "sankey_{}_vs_{}_{}",
        scenario_a.as_str(),
        scenario_b.as_str(),
        stage.as_str()
    );
    if let Some(done) = skip_or_mark(ctx, &step) {
        return Ok(done);
    }
    let a = load_categories(ctx.out_dir, scenario_a, stage)?;
    let b = load_categories(ctx.out_dir, scenario_b, stage)?;
    let flows = categorize::sankey(&a.labels, &b.labels)?;
    let export = SankeyExport::new(scenario_a, scenario_b, &flows);
    let name = sankey_file(scenario_a, scenario_b, stage);
    write_json(ctx.out_dir, &name, &export)?;
    finish(ctx, &step, &[&name])
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageCountRow {
    pub stage: Stage,
    pub themes: usize,
    pub stories: usize,
    pub clusters: usize,
    pub points: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: Scenario,
    pub stage: Stage,
    pub k: usize,
    pub titles: Vec<String>,
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub volume_pct: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub stage_counts: Vec<StageCountRow>,
    pub scenarios: Vec<ScenarioRow>,
}

pub fn run_report(ctx: &mut Context<'_>) -> StepResult {
    let step = "report";
    if let Some(done) = skip_or_mark(ctx, step) {
        return Ok(done);
    }
    let mut stage_counts = Vec::new();
    for stage in Stage::ALL_STAGES {
        let stats: StageStats = read_json(ctx.out_dir, &stats_file(stage), stage_source(stage))?;
        stage_counts.push(StageCountRow {
            stage,
            themes: stats.themes,
            stories: stats.stories,
            clusters: stats.clusters,
            points: stats.points,
        });
    }
    let mut scenarios = Vec::new();
    for scenario in Scenario::ALL {
        for stage in Stage::ALL_STAGES {
            let clustering = load_categories(ctx.out_dir, scenario, stage)?;
            scenarios.push(ScenarioRow {
                scenario,
                stage,
                k: clustering.k,
                titles: clustering.titles.clone(),
                silhouette: clustering.metrics.silhouette,
                davies_bouldin: clustering.metrics.davies_bouldin,
                calinski_harabasz: clustering.metrics.calinski_harabasz,
                volume_pct: clustering.volume_pct.clone(),
            });
        }
    }
    let report = Report {
        stage_counts,
        scenarios,
    };
    write_json(ctx.out_dir, REPORT_JSON_FILE, &report)?;

    let text = render_text_report(&report);
    fs::write(ctx.out_dir.join(REPORT_TEXT_FILE), text)?;
    finish(ctx, step, &[REPORT_JSON_FILE, REPORT_TEXT_FILE])
}

fn render_text_report(report: &Report) -> String {
    let mut out = String::new();
    out.push_str("STAGE STATISTICS\n");
    out.push_str(&format!(
        "{:<28} {:>7} {:>8} {:>9} {:>8}\n",
        "stage", "themes", "stories", "clusters", "points"
    ));
    for row in &report.stage_counts {
        out.push_str(&format!(
            "{:<28} {:>7} {:>8} {:>9} {:>8}\n",
            row.stage.as_str(),
            row.themes,
            row.stories,
            row.clusters,
            row.points
        ));
    }
    out.push_str("\nCATEGORY CLUSTERING\n");
    out.push_str(&format!(
        "{:<10} {:<28} {:>2} {:>11} {:>15} {:>18}\n",
        "scenario", "stage", "k", "silhouette", "davies_bouldin", "calinski_harabasz"
    ));
    for row in &report.scenarios {
        out.push_str(&format!(
            "{:<10} {:<28} {:>2} {:>11.4} {:>15.4} {:>18.4}\n",
            row.scenario.as_str(),
            row.stage.as_str(),
            row.k,
            row.silhouette,
            row.davies_bouldin,
            row.calinski_harabasz
        ));
        for (title, pct) in row.titles.iter().zip(&row.volume_pct) {
            out.push_str(&format!("    - {title} ({pct:.1}%)\n"));
        }
    }
    out
}

/// Paths of every artifact a full run (all modes, scenarios, stages)
/// produces. Used by tests; also a readable inventory of the layout.
pub fn full_run_artifacts() -> Vec<String> {
    let mut names = vec![
        CORPUS_FILE.to_owned(),
        INGEST_REPORT_FILE.to_owned(),
        PROFILE_FILE.to_owned(),
        EMBEDDINGS_FILE.to_owned(),
        HIERARCHY_REPORT_FILE.to_owned(),
        KEYWORDS_FILE.to_owned(),
        SCORES_FILE.to_owned(),
        PRUNING_REPORT_FILE.to_owned(),
        METRICS_REPORT_FILE.to_owned(),
        REPORT_JSON_FILE.to_owned(),
        REPORT_TEXT_FILE.to_owned(),
    ];
    for stage in Stage::ALL_STAGES {
        names.push(assignments_file(stage));
        names.push(index_file(stage));
        names.push(stats_file(stage));
        for mode in [Mode::Weighted, Mode::Unweighted] {
            names.push(summaries_file(mode, stage));
        }
        for scenario in Scenario::ALL {
            names.push(topics_file(scenario, stage));
            names.push(categories_file(scenario, stage));
        }
    }
    names
}
