//! Phase-1 context-quality evaluation.
//!
//! For each story or theme, questions are generated from the scope's
//! top-ranked member texts (a yardstick shared by both summary modes), then
//! each mode's summary answers them. Pre-triage scoring uses the judge
//! template; triage re-scores from scratch by embedding similarity, so the
//! post-triage count can move in either direction. The weighted-versus-
//! unweighted outcome is encoded on a {-1, 0, +1} scale and aggregated into
//! a win rate where ties count as wins (equal-or-superior representation).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    cosine, BackendError, EmbeddingBackend, GenerationRequest, GenerativeBackend, TemplateId,
};
use crate::hierarchy::Level;
use crate::sos::Mode;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty source for {level} {id}")]
    EmptySource { level: &'static str, id: i64 },
    #[error("questions and answers are misaligned: {questions} vs {answers}")]
    Misaligned { questions: usize, answers: usize },
    #[error("no encodings to aggregate")]
    EmptyEncodings,
    #[error("semantic threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("backend failure for {level} {id}: {source}")]
    Backend {
        level: &'static str,
        id: i64,
        source: BackendError,
    },
    #[error(transparent)]
    RawBackend(#[from] BackendError),
}

/// Hard cap on questions per scope.
pub const MAX_QUESTIONS: usize = 5;

/// Four-dimension quality scores, each on the one-decimal grid in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GEvalScores {
    pub coherence: f64,
    pub fluency: f64,
    pub relevance: f64,
    pub consistency: f64,
}

impl GEvalScores {
    pub fn on_grid(&self) -> bool {
        [self.coherence, self.fluency, self.relevance, self.consistency]
            .iter()
            .all(|s| {
                (0.0..=1.0).contains(s) && (s * 10.0 - (s * 10.0).round()).abs() < 1e-9
            })
    }
}

/// Full evaluation record for one story or theme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QagUnit {
    pub level: Level,
    pub id: i64,
    pub questions: Vec<String>,
    pub true_answers: Vec<String>,
    pub extracted_weighted: Vec<String>,
    pub extracted_unweighted: Vec<String>,
    pub pre_triage_weighted: usize,
    pub pre_triage_unweighted: usize,
    pub post_triage_weighted: usize,
    pub post_triage_unweighted: usize,
    pub encoding: i8,
    pub geval_weighted: GEvalScores,
    pub geval_unweighted: GEvalScores,
}

/// Generate up to `n` (capped at 5) question/answer pairs from rank-ordered
/// source texts.
pub fn generate_questions(
    level: Level,
    id: i64,
    source: &[String],
    n: usize,
    gen: &dyn GenerativeBackend,
) -> Result<(Vec<String>, Vec<String>), EvalError> {
    if source.is_empty() {
        return Err(EvalError::EmptySource {
            level: level.as_str(),
            id,
        });
    }
    let request = GenerationRequest::new(TemplateId::GenQuestions, source.to_vec())
        .with_param("n", n.min(MAX_QUESTIONS) as f64);
    let output = gen.generate(&request).map_err(|source| EvalError::Backend {
        level: level.as_str(),
        id,
        source,
    })?;
    let mut questions = Vec::new();
    let mut answers = Vec::new();
    for line in output.lines() {
        if let Some(q) = line.strip_prefix("Q: ") {
            questions.push(q.trim().to_owned());
        } else if let Some(a) = line.strip_prefix("A: ") {
            answers.push(a.trim().to_owned());
        }
    }
    let pairs = questions.len().min(answers.len()).min(MAX_QUESTIONS);
    questions.truncate(pairs);
    answers.truncate(pairs);
    Ok((questions, answers))
}

/// Extract one answer per question from a summary body. Empty answers are
/// allowed (the summary may simply not contain the fact).
pub fn extract_answers(
    level: Level,
    id: i64,
    summary_body: &str,
    questions: &[String],
    gen: &dyn GenerativeBackend,
) -> Result<Vec<String>, EvalError> {
    questions
        .iter()
        .map(|q| {
            let request = GenerationRequest::new(
                TemplateId::ExtractAnswer,
                vec![q.clone(), summary_body.to_owned()],
            );
            gen.generate(&request).map_err(|source| EvalError::Backend {
                level: level.as_str(),
                id,
                source,
            })
        })
        .collect()
}

/// Pre-triage score: answers the judge template calls correct.
pub fn score_pre_triage(
    true_answers: &[String],
    extracted: &[String],
    gen: &dyn GenerativeBackend,
) -> Result<usize, EvalError> {
    if true_answers.len() != extracted.len() {
        return Err(EvalError::Misaligned {
            questions: true_answers.len(),
            answers: extracted.len(),
        });
    }
    let mut correct = 0;
    for (truth, candidate) in true_answers.iter().zip(extracted) {
        let request = GenerationRequest::new(
            TemplateId::Judge,
            vec![truth.clone(), candidate.clone()],
        );
        if gen.generate(&request)?.trim() == "correct" {
            correct += 1;
        }
    }
    Ok(correct)
}

/// Post-triage score, computed from scratch: answer pairs whose embedding
/// cosine reaches `theta_sem`. Identical texts always pass, whatever their
/// embedding (a zero vector would otherwise sink an exact match).
pub fn triage(
    true_answers: &[String],
    extracted: &[String],
    theta_sem: f64,
    embedder: &dyn EmbeddingBackend,
) -> Result<usize, EvalError> {
    if !(0.0..=1.0).contains(&theta_sem) || theta_sem == 0.0 {
        return Err(EvalError::BadThreshold(theta_sem));
    }
    if true_answers.len() != extracted.len() {
        return Err(EvalError::Misaligned {
            questions: true_answers.len(),
            answers: extracted.len(),
        });
    }
    let mut correct = 0;
    for (truth, candidate) in true_answers.iter().zip(extracted) {
        if truth == candidate {
            correct += 1;
            continue;
        }
        let vectors = embedder.embed(&[truth.clone(), candidate.clone()])?;
        if cosine(&vectors[0], &vectors[1])? >= theta_sem {
            correct += 1;
        }
    }
    Ok(correct)
}

/// {-1, 0, +1}: sign of (weighted minus unweighted) post-triage counts.
pub fn encode_comparison(weighted_post: usize, unweighted_post: usize) -> i8 {
    match weighted_post.cmp(&unweighted_post) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Equal => 0,
        std::cmp::Ordering::Less => -1,
    }
}

/// Four-dimension scores for a summary against its source, parsed from the
/// geval template's JSON output and snapped to the one-decimal grid.
pub fn geval(
    level: Level,
    id: i64,
    summary_body: &str,
    source_text: &str,
    gen: &dyn GenerativeBackend,
) -> Result<GEvalScores, EvalError> {
    let request = GenerationRequest::new(
        TemplateId::Geval,
        vec![summary_body.to_owned(), source_text.to_owned()],
    );
    let output = gen.generate(&request).map_err(|source| EvalError::Backend {
        level: level.as_str(),
        id,
        source,
    })?;
    let raw: GEvalScores = serde_json::from_str(&output).map_err(|e| EvalError::Backend {
        level: level.as_str(),
        id,
        source: BackendError::Config(format!("unparsable geval output: {e}")),
    })?;
    let snap = |x: f64| ((x.clamp(0.0, 1.0) * 10.0).round()) / 10.0;
    Ok(GEvalScores {
        coherence: snap(raw.coherence),
        fluency: snap(raw.fluency),
        relevance: snap(raw.relevance),
        consistency: snap(raw.consistency),
    })
}

/// Win rate: percentage of units whose encoding is >= 0 (ties count as
/// wins — equal-or-superior representation).
pub fn aggregate_wins(encodings: &[i8]) -> Result<f64, EvalError> {
    if encodings.is_empty() {
        return Err(EvalError::EmptyEncodings);
    }
    let wins = encodings.iter().filter(|e| **e >= 0).count();
    Ok(100.0 * wins as f64 / encodings.len() as f64)
}

/// Evaluate one scope end to end against both summary modes.
///
/// `source` must be the scope's top-ranked member texts (weighted
/// ordering); both summaries face the identical question set so the
/// comparison encoding is meaningful.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_scope(
    level: Level,
    id: i64,
    source: &[String],
    weighted_body: &str,
    unweighted_body: &str,
    theta_sem: f64,
    n_questions: usize,
    gen: &dyn GenerativeBackend,
    embedder: &dyn EmbeddingBackend,
) -> Result<QagUnit, EvalError> {
    let (questions, true_answers) = generate_questions(level, id, source, n_questions, gen)?;
    let extracted_weighted = extract_answers(level, id, weighted_body, &questions, gen)?;
    let extracted_unweighted = extract_answers(level, id, unweighted_body, &questions, gen)?;
    let pre_triage_weighted = score_pre_triage(&true_answers, &extracted_weighted, gen)?;
    let pre_triage_unweighted = score_pre_triage(&true_answers, &extracted_unweighted, gen)?;
    let post_triage_weighted = triage(&true_answers, &extracted_weighted, theta_sem, embedder)?;
    let post_triage_unweighted =
        triage(&true_answers, &extracted_unweighted, theta_sem, embedder)?;
    let source_text = source.join(" ");
    let geval_weighted = geval(level, id, weighted_body, &source_text, gen)?;
    let geval_unweighted = geval(level, id, unweighted_body, &source_text, gen)?;
    Ok(QagUnit {
        level,
        id,
        questions,
        true_answers,
        extracted_weighted,
        extracted_unweighted,
        pre_triage_weighted,
        pre_triage_unweighted,
        post_triage_weighted,
        post_triage_unweighted,
        encoding: encode_comparison(post_triage_weighted, post_triage_unweighted),
        geval_weighted,
        geval_unweighted,
    })
}

/// Aggregate win rates split by scope level, mirroring the per-dataset
/// stories/themes report. `consistency_note` flags that consistency is
/// computed like the other dimensions rather than pinned to a constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub stories_pct: Option<f64>,
    pub themes_pct: Option<f64>,
    pub unit_count: usize,
    pub consistency_note: String,
}

pub fn eval_report(units: &[QagUnit]) -> EvalReport {
    let split = |level: Level| {
        let encodings: Vec<i8> = units
            .iter()
            .filter(|u| u.level == level)
            .map(|u| u.encoding)
            .collect();
        aggregate_wins(&encodings).ok()
    };
    EvalReport {
        stories_pct: split(Level::Story),
        themes_pct: split(Level::Theme),
        unit_count: units.len(),
        consistency_note:
            "consistency is computed per summary, not held at a constant 0.5".to_owned(),
    }
}

/// Which summary mode a QAG extraction column belongs to.
pub fn extracted_for(unit: &QagUnit, mode: Mode) -> &[String] {
    match mode {
        Mode::Weighted => &unit.extracted_weighted,
        Mode::Unweighted => &unit.extracted_unweighted,
    }
}

/// Persist units as a JSON array, ascending (level, id).
pub fn write_units<W: std::io::Write>(units: &[QagUnit], out: W) -> std::io::Result<()> {
    let mut sorted: Vec<&QagUnit> = units.iter().collect();
    sorted.sort_by_key(|u| (u.level, u.id));
    serde_json::to_writer_pretty(out, &sorted)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn read_units<R: std::io::Read>(source: R) -> std::io::Result<Vec<QagUnit>> {
    serde_json::from_reader(source)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::stub::{StubEmbedder, StubGenerator};

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| (*s).to_owned()).collect()
    }

    #[test]
    fn questions_pair_with_first_sentences() {
        let gen = StubGenerator::new();
        let source = strings(&[
            "Pizza was cold. Second sentence.",
            "Service was friendly. Another one.",
        ]);
        let (q, a) = generate_questions(Level::Story, 0, &source, 5, &gen).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(a, strings(&["Pizza was cold.", "Service was friendly."]));
    }

    #[test]
    fn questions_cap_at_five() {
        let gen = StubGenerator::new();
        let source: Vec<String> = (0..7).map(|i| format!("Unique record {i}.")).collect();
        let (q, a) = generate_questions(Level::Theme, 1, &source, 5, &gen).unwrap();
        assert_eq!(q.len(), 5);
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn empty_source_is_an_error() {
        let gen = StubGenerator::new();
        assert!(matches!(
            generate_questions(Level::Story, 2, &[], 5, &gen),
            Err(EvalError::EmptySource { .. })
        ));
    }

    #[test]
    fn verbatim_sentence_in_summary_is_extracted() {
        let gen = StubGenerator::new();
        let questions = strings(&["What does record 1 state about pizza?"]);
        let answers = extract_answers(
            Level::Story,
            0,
            "Totally unrelated claim. Pizza was cold as record 1 states.",
            &questions,
            &gen,
        )
        .unwrap();
        assert_eq!(answers[0], "Pizza was cold as record 1 states.");
    }

    #[test]
    fn empty_summary_yields_empty_answers() {
        let gen = StubGenerator::new();
        let questions = strings(&["Anything?", "More?"]);
        let answers = extract_answers(Level::Story, 0, "", &questions, &gen).unwrap();
        assert_eq!(answers, strings(&["", ""]));
    }

    #[test]
    fn pre_triage_counts_judge_verdicts() {
        let gen = StubGenerator::new();
        let truths = strings(&["alpha beta", "alpha beta", "alpha beta"]);
        let extracted = strings(&[
            "alpha beta",              // exact
            "alpha beta gamma delta",  // Jaccard exactly 0.5
            "gamma delta",             // disjoint
        ]);
        assert_eq!(score_pre_triage(&truths, &extracted, &gen).unwrap(), 2);
    }

    #[test]
    fn triage_thresholds_on_embedding_cosine() {
        let embedder = StubEmbedder::new();
        let truths = strings(&["tortellini was overcooked"]);
        let near = strings(&["the tortellini was overcooked"]);
        let far = strings(&["completely different words"]);
        // cos = 3/sqrt(12) = 0.866 >= 0.7
        assert_eq!(triage(&truths, &near, 0.7, &embedder).unwrap(), 1);
        assert_eq!(triage(&truths, &truths.clone(), 0.7, &embedder).unwrap(), 1);
        assert_eq!(triage(&truths, &far, 0.7, &embedder).unwrap(), 0);
    }

    #[test]
    fn triage_of_identical_answers_is_total_even_for_empty_strings() {
        let embedder = StubEmbedder::new();
        let answers = strings(&["", "same text", ""]);
        assert_eq!(
            triage(&answers, &answers.clone(), 1.0, &embedder).unwrap(),
            3
        );
    }

    #[test]
    fn triage_rejects_bad_threshold() {
        let embedder = StubEmbedder::new();
        assert!(matches!(
            triage(&[], &[], 0.0, &embedder),
            Err(EvalError::BadThreshold(_))
        ));
        assert!(matches!(
            triage(&[], &[], 1.5, &embedder),
            Err(EvalError::BadThreshold(_))
        ));
    }

    #[test]
    fn encoding_is_the_sign_of_the_difference() {
        assert_eq!(encode_comparison(2, 2), 0);
        assert_eq!(encode_comparison(3, 2), 1);
        assert_eq!(encode_comparison(1, 3), -1);
    }

    #[test]
    fn encoding_matches_sign_exhaustively() {
        for w in 0..=5 {
            for u in 0..=5 {
                let expected = (w as i64 - u as i64).signum() as i8;
                assert_eq!(encode_comparison(w, u), expected);
            }
        }
    }

    #[test]
    fn geval_uses_stub_contract() {
        let gen = StubGenerator::new();
        let same = geval(Level::Story, 0, "pizza was cold", "pizza was cold", &gen).unwrap();
        assert_eq!(same.coherence, 1.0);
        assert_eq!(same.relevance, 1.0);
        assert_eq!(same.consistency, 1.0);
        assert_eq!(same.fluency, 1.0);
        assert!(same.on_grid());

        let empty = geval(Level::Story, 0, "", "pizza", &gen).unwrap();
        assert_eq!(empty.fluency, 0.0);

        let disjoint = geval(Level::Story, 0, "quantum flux", "pizza was cold", &gen).unwrap();
        assert_eq!(disjoint.relevance, 0.0);
        assert!(disjoint.on_grid());
    }

    #[test]
    fn aggregate_counts_ties_as_wins() {
        assert_eq!(aggregate_wins(&[1, 0, -1, 1]).unwrap(), 75.0);
        assert_eq!(aggregate_wins(&[1, 1, 1]).unwrap(), 100.0);
        assert!(matches!(
            aggregate_wins(&[]),
            Err(EvalError::EmptyEncodings)
        ));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let a = [1, 0, -1, 1, 0];
        let b = [0, 1, 1, -1, 0];
        assert_eq!(aggregate_wins(&a).unwrap(), aggregate_wins(&b).unwrap());
    }

    #[test]
    fn evaluate_scope_builds_a_consistent_unit() {
        let gen = StubGenerator::new();
        let embedder = StubEmbedder::new();
        // Each record's lexicographically-first token is distinctive, so the
        // generated question names a token that only the matching summary
        // sentence contains.
        let source = strings(&[
            "Anchovy pizza arrived. Extra filler.",
            "Brisket service delighted. More filler.",
        ]);
        // Weighted summary carries the facts verbatim; unweighted is noise.
        let unit = evaluate_scope(
            Level::Story,
            3,
            &source,
            "Anchovy pizza arrived. Brisket service delighted.",
            "Irrelevant chatter simply unrelated.",
            0.7,
            5,
            &gen,
            &embedder,
        )
        .unwrap();
        assert_eq!(unit.questions.len(), 2);
        assert_eq!(unit.post_triage_weighted, 2);
        assert_eq!(unit.post_triage_unweighted, 0);
        assert_eq!(unit.encoding, 1);
        assert_eq!(
            unit.encoding,
            encode_comparison(unit.post_triage_weighted, unit.post_triage_unweighted)
        );
        assert!(unit.geval_weighted.on_grid());

        let report = eval_report(&[unit]);
        assert_eq!(report.stories_pct, Some(100.0));
        assert_eq!(report.themes_pct, None);
    }

    #[test]
    fn units_round_trip_json() {
        let gen = StubGenerator::new();
        let embedder = StubEmbedder::new();
        let unit = evaluate_scope(
            Level::Theme,
            0,
            &strings(&["Fact one stated here."]),
            "Fact one stated here.",
            "Fact one stated here.",
            0.7,
            5,
            &gen,
            &embedder,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_units(&[unit.clone()], &mut buf).unwrap();
        assert_eq!(read_units(&buf[..]).unwrap(), vec![unit]);
    }
}
