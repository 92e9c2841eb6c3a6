//! Corpus ingestion, canonical persistence, and dataset characterization.
//!
//! The canonical persisted form is JSONL sorted ascending by record id,
//! UTF-8 with LF line endings. That id ordering is the determinism anchor
//! for every downstream stage.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id: {0}")]
    DuplicateId(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("corpus spans zero quarters")]
    ZeroQuarters,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One raw review/text record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub id: String,
    pub text: String,
    pub entity_id: String,
    pub timestamp: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
}

/// Ordered record collection. `points` is sorted strictly ascending by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    points: Vec<DataPoint>,
    date_range: (NaiveDate, NaiveDate),
    quarter_count: usize,
}

impl Corpus {
    /// Build from records: sorts by id, rejects duplicates, derives the
    /// date range and quarter span.
    pub fn new(mut points: Vec<DataPoint>) -> Result<Self, CorpusError> {
        if points.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        points.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in points.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(CorpusError::DuplicateId(pair[0].id.clone()));
            }
        }
        let min = points.iter().map(|p| p.timestamp).min().expect("non-empty");
        let max = points.iter().map(|p| p.timestamp).max().expect("non-empty");
        let quarter_count = (quarter_index(max) - quarter_index(min) + 1) as usize;
        Ok(Self {
            points,
            date_range: (min, max),
            quarter_count,
        })
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn date_range(&self) -> (NaiveDate, NaiveDate) {
        self.date_range
    }

    pub fn quarter_count(&self) -> usize {
        self.quarter_count
    }

    /// Canonical JSONL: one record per line, sorted by id, LF endings.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), CorpusError> {
        for p in &self.points {
            serde_json::to_writer(&mut out, p)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Calendar quarters since year zero: Jan-Mar is quarter 0 of its year.
fn quarter_index(date: NaiveDate) -> i64 {
    i64::from(date.year()) * 4 + i64::from(date.month0() / 3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Jsonl,
    Csv,
}

/// Source-field names for the five record attributes. The three public
/// datasets this pipeline targets all use different schemas, so the mapping
/// is configuration with conventional defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldMap {
    pub id: String,
    pub text: String,
    pub entity_id: String,
    pub timestamp: String,
    pub rating: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self {
            id: "id".to_owned(),
            text: "text".to_owned(),
            entity_id: "entity_id".to_owned(),
            timestamp: "timestamp".to_owned(),
            rating: "rating".to_owned(),
        }
    }
}

/// Outcome counters for one ingest run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    pub duplicate_errors: usize,
}

/// Ingest a JSONL or CSV byte stream into a corpus.
///
/// Records with empty (post-trim) text are dropped and counted; duplicate
/// ids and malformed records are hard errors naming the offender.
pub fn ingest<R: Read>(
    source: R,
    format: SourceFormat,
    fields: &FieldMap,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let raw = match format {
        SourceFormat::Jsonl => ingest_jsonl(source, fields)?,
        SourceFormat::Csv => ingest_csv(source, fields)?,
    };
    let total = raw.len();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut kept: Vec<DataPoint> = Vec::with_capacity(total);
    let mut dropped = 0;
    for mut p in raw {
        p.text = p.text.trim().to_owned();
        if p.text.is_empty() {
            dropped += 1;
            continue;
        }
        if !seen.insert(p.id.clone()) {
            return Err(CorpusError::DuplicateId(p.id));
        }
        kept.push(p);
    }
    if kept.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let report = IngestReport {
        total,
        kept: kept.len(),
        dropped,
        duplicate_errors: 0,
    };
    let corpus = Corpus::new(kept)?;
    Ok((corpus, report))
}

fn parse_date(raw: &str) -> Option<NaiveDate> {
    let trimmed = raw.trim();
    // Plain date, or any timestamp whose first ten characters are one.
    NaiveDate::parse_from_str(trimmed, "%Y-%m-%d")
        .ok()
        .or_else(|| {
            trimmed
                .get(..10)
                .and_then(|head| NaiveDate::parse_from_str(head, "%Y-%m-%d").ok())
        })
}

fn value_to_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_rating_number(raw: f64) -> Result<Option<u8>, String> {
    if raw.fract() != 0.0 || !(1.0..=5.0).contains(&raw) {
        return Err(format!("rating {raw} outside ordinal 1-5"));
    }
    Ok(Some(raw as u8))
}

fn ingest_jsonl<R: Read>(source: R, fields: &FieldMap) -> Result<Vec<DataPoint>, CorpusError> {
    let reader = BufReader::new(source);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let malformed = |message: String| CorpusError::Malformed {
            line: line_no,
            message,
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let id = obj
            .get(&fields.id)
            .and_then(value_to_id)
            .ok_or_else(|| malformed(format!("missing or non-scalar field '{}'", fields.id)))?;
        let text = obj
            .get(&fields.text)
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(format!("missing text field '{}'", fields.text)))?
            .to_owned();
        let entity_id = obj
            .get(&fields.entity_id)
            .and_then(value_to_id)
            .ok_or_else(|| malformed(format!("missing entity field '{}'", fields.entity_id)))?;
        let timestamp = obj
            .get(&fields.timestamp)
            .and_then(Value::as_str)
            .and_then(parse_date)
            .ok_or_else(|| {
                malformed(format!(
                    "missing or unparsable date field '{}'",
                    fields.timestamp
                ))
            })?;
        let rating = match obj.get(&fields.rating) {
            None | Some(Value::Null) => None,
            Some(v) => {
                let n = v
                    .as_f64()
                    .ok_or_else(|| malformed(format!("non-numeric rating field '{}'", fields.rating)))?;
                parse_rating_number(n).map_err(malformed)?
            }
        };
        out.push(DataPoint {
            id,
            text,
            entity_id,
            timestamp,
            rating,
        });
    }
    Ok(out)
}

fn ingest_csv<R: Read>(source: R, fields: &FieldMap) -> Result<Vec<DataPoint>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| CorpusError::Malformed {
        line: 1,
        message: format!("header lacks column '{name}'"),
    };
    let id_col = col(&fields.id).ok_or_else(|| missing(&fields.id))?;
    let text_col = col(&fields.text).ok_or_else(|| missing(&fields.text))?;
    let entity_col = col(&fields.entity_id).ok_or_else(|| missing(&fields.entity_id))?;
    let ts_col = col(&fields.timestamp).ok_or_else(|| missing(&fields.timestamp))?;
    let rating_col = col(&fields.rating);

    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line_no = i + 2; // header is line 1
        let malformed = |message: String| CorpusError::Malformed {
            line: line_no,
            message,
        };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let get = |idx: usize, name: &str| {
            row.get(idx)
                .map(str::to_owned)
                .ok_or_else(|| malformed(format!("row lacks column '{name}'")))
        };
        let timestamp = parse_date(&get(ts_col, &fields.timestamp)?)
            .ok_or_else(|| malformed(format!("unparsable date in '{}'", fields.timestamp)))?;
        let rating = match rating_col.map(|c| row.get(c).unwrap_or("")) {
            None | Some("") => None,
            Some(raw) => {
                let n: f64 = raw
                    .parse()
                    .map_err(|_| malformed(format!("non-numeric rating '{raw}'")))?;
                parse_rating_number(n).map_err(malformed)?
            }
        };
        out.push(DataPoint {
            id: get(id_col, &fields.id)?,
            text: get(text_col, &fields.text)?,
            entity_id: get(entity_col, &fields.entity_id)?,
            timestamp,
            rating,
        });
    }
    Ok(out)
}

/// Read back the canonical JSONL form.
pub fn read_jsonl<R: Read>(source: R) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(source);
    let mut points = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: DataPoint = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        points.push(p);
    }
    Corpus::new(points)
}

/// Entity volume relative to the mean entity volume. Ties (volume exactly
/// equal to the mean) classify as `Low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeClass {
    High,
    Low,
}

/// Fraction of the corpus lifespan's quarters in which an entity has at
/// least one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PresenceBucket {
    /// Present in every quarter.
    #[serde(rename = "100")]
    Full,
    /// Present in more than half, but not all, quarters.
    #[serde(rename = "51-99")]
    Majority,
    /// Present in half or fewer quarters.
    #[serde(rename = "0-50")]
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCell {
    pub volume_class: VolumeClass,
    pub presence_bucket: PresenceBucket,
    pub entity_count: usize,
    pub entity_pct: f64,
    pub datapoint_count: usize,
    pub datapoint_pct: f64,
}

/// Six-cell breakdown of entities and datapoints by volume class and
/// presence bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub total_entities: usize,
    pub total_datapoints: usize,
    pub mean_volume: f64,
    pub quarter_count: usize,
    pub cells: Vec<ProfileCell>,
}

const CELL_ORDER: [(VolumeClass, PresenceBucket); 6] = [
    (VolumeClass::High, PresenceBucket::Full),
    (VolumeClass::High, PresenceBucket::Majority),
    (VolumeClass::High, PresenceBucket::Sparse),
    (VolumeClass::Low, PresenceBucket::Full),
    (VolumeClass::Low, PresenceBucket::Majority),
    (VolumeClass::Low, PresenceBucket::Sparse),
];

/// Classify every entity into a volume class and presence bucket and
/// aggregate counts and percentages per cell.
pub fn characterize(corpus: &Corpus) -> Result<DatasetProfile, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let quarters = corpus.quarter_count();
    if quarters == 0 {
        return Err(CorpusError::ZeroQuarters);
    }
    let mut volume: BTreeMap<&str, usize> = BTreeMap::new();
    let mut presence: BTreeMap<&str, BTreeSet<i64>> = BTreeMap::new();
    for p in corpus.points() {
        *volume.entry(&p.entity_id).or_insert(0) += 1;
        presence
            .entry(&p.entity_id)
            .or_default()
            .insert(quarter_index(p.timestamp));
    }
    let total_entities = volume.len();
    let total_datapoints = corpus.len();
    let mean_volume = total_datapoints as f64 / total_entities as f64;

    let mut counts: BTreeMap<(VolumeClass, PresenceBucket), (usize, usize)> = BTreeMap::new();
    for (entity, vol) in &volume {
        let class = if (*vol as f64) > mean_volume {
            VolumeClass::High
        } else {
            VolumeClass::Low
        };
        let q = presence[entity].len();
        let bucket = if q == quarters {
            PresenceBucket::Full
        } else if 2 * q > quarters {
            PresenceBucket::Majority
        } else {
            PresenceBucket::Sparse
        };
        let cell = counts.entry((class, bucket)).or_insert((0, 0));
        cell.0 += 1;
        cell.1 += vol;
    }

    let cells = CELL_ORDER
        .iter()
        .map(|key| {
            let (entities, datapoints) = counts.get(key).copied().unwrap_or((0, 0));
            ProfileCell {
                volume_class: key.0,
                presence_bucket: key.1,
                entity_count: entities,
                entity_pct: 100.0 * entities as f64 / total_entities as f64,
                datapoint_count: datapoints,
                datapoint_pct: 100.0 * datapoints as f64 / total_datapoints as f64,
            }
        })
        .collect();

    Ok(DatasetProfile {
        total_entities,
        total_datapoints,
        mean_volume,
        quarter_count: quarters,
        cells,
    })
}
