//! Evaluation records and the per-prompt generation matrix.
//!
//! Records arrive as line-delimited JSON objects, one generation per line.
//! Ingestion groups them by `prompt_id` and orders each prompt's generations
//! by `generation_index`. Rows are ordered by `prompt_id` (byte order), so the
//! resulting matrix does not depend on the order of the input lines.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// How a generation was decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingMode {
    Greedy,
    Sampled,
}

impl DecodingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecodingMode::Greedy => "greedy",
            DecodingMode::Sampled => "sampled",
        }
    }
}

impl fmt::Display for DecodingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DecodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodingMode::Greedy),
            "sampled" => Ok(DecodingMode::Sampled),
            other => Err(Error::invalid(format!(
                "unknown decoding mode `{other}` (expected greedy or sampled)"
            ))),
        }
    }
}

/// One judged generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub benchmark_id: String,
    pub model_id: String,
    pub prompt_id: String,
    pub generation_index: u32,
    #[serde(with = "binary")]
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_key: Option<String>,
    pub decoding_mode: DecodingMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<BTreeMap<String, String>>,
}

mod binary {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!("correct must be 0 or 1, got {other}"))),
        }
    }
}

const KNOWN_FIELDS: [&str; 8] = [
    "benchmark_id",
    "model_id",
    "prompt_id",
    "generation_index",
    "correct",
    "answer_key",
    "decoding_mode",
    "metadata",
];

/// Restricts ingestion to one benchmark/model/decoding mode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Selection {
    pub benchmark: Option<String>,
    pub model: Option<String>,
    pub mode: Option<DecodingMode>,
}

impl Selection {
    pub fn matches(&self, r: &GenerationRecord) -> bool {
        self.benchmark.as_ref().is_none_or(|b| *b == r.benchmark_id)
            && self.model.as_ref().is_none_or(|m| *m == r.model_id)
            && self.mode.is_none_or(|m| m == r.decoding_mode)
    }
}

/// All generations of a single prompt, ordered by generation index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptRow {
    pub prompt_id: String,
    pub generation_indices: Vec<u32>,
    pub outcomes: Vec<bool>,
    pub answer_keys: Vec<Option<String>>,
}

impl PromptRow {
    /// Row with generation indices `0..outcomes.len()` and no answer keys.
    pub fn new(prompt_id: impl Into<String>, outcomes: Vec<bool>) -> Self {
        let len = outcomes.len();
        PromptRow {
            prompt_id: prompt_id.into(),
            generation_indices: (0..len as u32).collect(),
            outcomes,
            answer_keys: vec![None; len],
        }
    }

    pub fn with_answer_keys(mut self, keys: Vec<Option<String>>) -> Self {
        self.answer_keys = keys;
        self
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn correct_count(&self) -> u32 {
        self.outcomes.iter().filter(|&&y| y).count() as u32
    }
}

/// Binary correctness outcomes, one row per prompt.
///
/// Rows are never empty and prompt ids are unique. A matrix may hold zero
/// rows; every statistic rejects that case with [`Error::EmptyDataset`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GenerationMatrix {
    rows: Vec<PromptRow>,
}

impl GenerationMatrix {
    pub fn new(rows: Vec<PromptRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for row in &rows {
            if row.is_empty() {
                return Err(Error::invalid(format!("prompt `{}` has no generations", row.prompt_id)));
            }
            if row.generation_indices.len() != row.len() || row.answer_keys.len() != row.len() {
                return Err(Error::invalid(format!(
                    "prompt `{}`: index, outcome and answer-key columns differ in length",
                    row.prompt_id
                )));
            }
            if !seen.insert(row.prompt_id.as_str()) {
                return Err(Error::invalid(format!("duplicate prompt `{}`", row.prompt_id)));
            }
        }
        Ok(GenerationMatrix { rows })
    }

    /// Builds a matrix from 0/1 rows, naming prompts `p0000`, `p0001`, ...
    pub fn from_binary_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let width = rows.len().saturating_sub(1).to_string().len().max(4);
        let rows = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let outcomes = row
                    .iter()
                    .map(|&y| match y {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::invalid(format!("outcome {other} is not binary"))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(PromptRow::new(format!("p{i:0width$}"), outcomes))
            })
            .collect::<Result<Vec<_>>>()?;
        GenerationMatrix::new(rows)
    }

    pub fn rows(&self) -> &[PromptRow] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Common generation count, or `None` for a ragged or empty matrix.
    pub fn k(&self) -> Option<usize> {
        let first = self.rows.first()?.len();
        self.rows.iter().all(|r| r.len() == first).then_some(first)
    }

    pub fn is_ragged(&self) -> bool {
        !self.is_empty() && self.k().is_none()
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.prompt_id.as_str())
    }

    /// Correct counts per prompt, in row order.
    pub fn correct_counts(&self) -> Vec<u32> {
        self.rows.iter().map(PromptRow::correct_count).collect()
    }

    pub fn total_records(&self) -> usize {
        self.rows.iter().map(PromptRow::len).sum()
    }

    /// First `k` generations of every prompt.
    pub fn truncated(&self, k: usize) -> Result<GenerationMatrix> {
        if k == 0 {
            return Err(Error::invalid("cannot truncate to zero generations"));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                if r.len() < k {
                    return Err(Error::invalid(format!(
                        "prompt `{}` has only {} generations",
                        r.prompt_id,
                        r.len()
                    )));
                }
                Ok(PromptRow {
                    prompt_id: r.prompt_id.clone(),
                    generation_indices: r.generation_indices[..k].to_vec(),
                    outcomes: r.outcomes[..k].to_vec(),
                    answer_keys: r.answer_keys[..k].to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GenerationMatrix::new(rows)
    }
}

/// Returns the matrix unchanged when every row has the same length.
pub fn validate_rectangular(matrix: GenerationMatrix) -> Result<GenerationMatrix> {
    check_rectangular(&matrix)?;
    Ok(matrix)
}

/// Common generation count of a rectangular matrix.
pub fn check_rectangular(matrix: &GenerationMatrix) -> Result<usize> {
    if matrix.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &matrix.rows {
        *freq.entry(r.len()).or_default() += 1;
    }
    // The most common length is the reference, so the error names the odd rows out.
    let (&modal, _) = freq
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(b.0)))
        .expect("non-empty");
    if freq.len() == 1 {
        return Ok(modal);
    }
    let offending = matrix
        .rows
        .iter()
        .filter(|r| r.len() != modal)
        .map(|r| format!("{} (k={})", r.prompt_id, r.len()))
        .collect();
    Err(Error::Ragged(offending))
}

/// Result of ingesting a record stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub matrix: GenerationMatrix,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub benchmark_id: String,
    pub model_id: String,
    pub decoding_mode: DecodingMode,
    /// Records kept after filtering.
    pub records: usize,
    /// Records skipped by the filter.
    pub filtered_out: usize,
    /// Occurrences of fields outside the record schema.
    pub unknown_fields: usize,
    pub n: usize,
    pub k: Option<usize>,
    pub ragged: bool,
}

/// Parses one record line. Returns the record and the number of unknown fields.
pub fn parse_line(line: &str, line_no: usize) -> Result<(GenerationRecord, usize)> {
    let malformed = |message: String| Error::MalformedLine { line: line_no, message };
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(malformed("expected a JSON object".into()));
    };

    let string = |obj: &Map<String, Value>, key: &str| -> Result<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(malformed(format!("field `{key}` must be a string, got {other}"))),
            None => Err(malformed(format!("missing field `{key}`"))),
        }
    };

    let benchmark_id = string(&obj, "benchmark_id")?;
    let model_id = string(&obj, "model_id")?;
    let prompt_id = string(&obj, "prompt_id")?;

    let generation_index = match obj.get("generation_index") {
        Some(Value::Number(n)) => n
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| malformed(format!("generation_index must be a non-negative integer, got {n}")))?,
        Some(other) => {
            return Err(malformed(format!(
                "generation_index must be a non-negative integer, got {other}"
            )))
        }
        None => return Err(malformed("missing field `generation_index`".into())),
    };

    let correct = match obj.get("correct") {
        Some(Value::Number(n)) if n.as_u64() == Some(0) => false,
        Some(Value::Number(n)) if n.as_u64() == Some(1) => true,
        Some(Value::Bool(b)) => *b,
        Some(other) => {
            return Err(Error::NonBinaryCorrect {
                line: line_no,
                value: other.to_string(),
            })
        }
        None => return Err(malformed("missing field `correct`".into())),
    };

    let answer_key = match obj.get("answer_key") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(malformed(format!("answer_key must be a string, got {other}"))),
    };

    let decoding_mode = match obj.get("decoding_mode") {
        Some(Value::String(s)) => s
            .parse::<DecodingMode>()
            .map_err(|e| malformed(e.to_string()))?,
        Some(other) => return Err(malformed(format!("decoding_mode must be a string, got {other}"))),
        None => return Err(malformed("missing field `decoding_mode`".into())),
    };

    let metadata = match obj.get("metadata") {
        None | Some(Value::Null) => None,
        Some(Value::Object(m)) => {
            let mut out = BTreeMap::new();
            for (k, v) in m {
                let v = match v {
                    Value::String(s) => s.clone(),
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    other => {
                        return Err(malformed(format!(
                            "metadata value for `{k}` must be a scalar, got {other}"
                        )))
                    }
                };
                out.insert(k.clone(), v);
            }
            Some(out)
        }
        Some(other) => return Err(malformed(format!("metadata must be an object, got {other}"))),
    };

    let unknown = obj.keys().filter(|k| !KNOWN_FIELDS.contains(&k.as_str())).count();

    Ok((
        GenerationRecord {
            benchmark_id,
            model_id,
            prompt_id,
            generation_index,
            correct,
            answer_key,
            decoding_mode,
            metadata,
        },
        unknown,
    ))
}

/// Parses every non-blank line. Returns the records and the unknown-field count.
pub fn parse_records(text: &str) -> Result<(Vec<GenerationRecord>, usize)> {
    let mut records = Vec::new();
    let mut unknown = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (rec, u) = parse_line(line, i + 1)?;
        unknown += u;
        records.push(rec);
    }
    Ok((records, unknown))
}

/// One JSON object per line, trailing newline included.
pub fn serialize_records(records: &[GenerationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        // GenerationRecord contains only strings, integers and string maps.
        out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
        out.push('\n');
    }
    out
}

/// Flattens a matrix back into records under the given identity.
pub fn matrix_to_records(
    matrix: &GenerationMatrix,
    benchmark_id: &str,
    model_id: &str,
    mode: DecodingMode,
) -> Vec<GenerationRecord> {
    let mut out = Vec::with_capacity(matrix.total_records());
    for row in matrix.rows() {
        for ((&idx, &y), key) in row.generation_indices.iter().zip(&row.outcomes).zip(&row.answer_keys) {
            out.push(GenerationRecord {
                benchmark_id: benchmark_id.to_string(),
                model_id: model_id.to_string(),
                prompt_id: row.prompt_id.clone(),
                generation_index: idx,
                correct: y,
                answer_key: key.clone(),
                decoding_mode: mode,
                metadata: None,
            });
        }
    }
    out
}

struct Cell {
    correct: bool,
    answer_key: Option<String>,
}

/// Groups a record stream into a generation matrix.
pub fn ingest(text: &str, filter: &Selection) -> Result<Ingested> {
    ingest_reader(text.as_bytes(), filter)
}

pub fn ingest_reader<R: BufRead>(reader: R, filter: &Selection) -> Result<Ingested> {
    let mut groups: BTreeSet<(String, String, DecodingMode)> = BTreeSet::new();
    let mut prompts: BTreeMap<(String, String, DecodingMode, String), BTreeMap<u32, Cell>> =
        BTreeMap::new();
    let mut records = 0;
    let mut filtered_out = 0;
    let mut unknown_fields = 0;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let (rec, unknown) = parse_line(&line, line_no)?;
        unknown_fields += unknown;
        if !filter.matches(&rec) {
            filtered_out += 1;
            continue;
        }
        records += 1;
        groups.insert((rec.benchmark_id.clone(), rec.model_id.clone(), rec.decoding_mode));
        let row = prompts
            .entry((
                rec.benchmark_id.clone(),
                rec.model_id.clone(),
                rec.decoding_mode,
                rec.prompt_id.clone(),
            ))
            .or_default();
        if row.contains_key(&rec.generation_index) {
            return Err(Error::DuplicateGeneration {
                line: line_no,
                prompt_id: rec.prompt_id,
                generation_index: rec.generation_index,
            });
        }
        row.insert(
            rec.generation_index,
            Cell {
                correct: rec.correct,
                answer_key: rec.answer_key,
            },
        );
    }

    if records == 0 {
        return Err(Error::EmptySelection);
    }
    if groups.len() > 1 {
        return Err(Error::MixedSelection(groups.len()));
    }
    let (benchmark_id, model_id, decoding_mode) = groups.into_iter().next().expect("one group");

    let rows = prompts
        .into_iter()
        .map(|((_, _, _, prompt_id), cells)| {
            let mut row = PromptRow {
                prompt_id,
                generation_indices: Vec::with_capacity(cells.len()),
                outcomes: Vec::with_capacity(cells.len()),
                answer_keys: Vec::with_capacity(cells.len()),
            };
            for (idx, cell) in cells {
                row.generation_indices.push(idx);
                row.outcomes.push(cell.correct);
                row.answer_keys.push(cell.answer_key);
            }
            row
        })
        .collect();
    let matrix = GenerationMatrix::new(rows)?;

    let report = IngestReport {
        benchmark_id,
        model_id,
        decoding_mode,
        records,
        filtered_out,
        unknown_fields,
        n: matrix.n(),
        k: matrix.k(),
        ragged: matrix.is_ragged(),
    };
    Ok(Ingested { matrix, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(prompt: &str, idx: u32, correct: &str) -> String {
        format!(
            r#"{{"benchmark_id":"gsm8k","model_id":"m","prompt_id":"{prompt}","generation_index":{idx},"correct":{correct},"decoding_mode":"sampled"}}"#
        )
    }

    #[test]
    fn groups_two_prompts_three_generations() {
        let text: String = ["a", "b"]
            .iter()
            .flat_map(|p| (0..3).map(move |j| line(p, j, "1") + "\n"))
            .collect();
        let got = ingest(&text, &Selection::default()).unwrap();
        assert_eq!(got.matrix.n(), 2);
        assert_eq!(got.matrix.k(), Some(3));
        assert!(!got.matrix.is_ragged());
        assert_eq!(got.report.records, 6);
    }

    #[test]
    fn non_binary_correct_names_line() {
        let mut lines: Vec<String> = (0..6).map(|j| line("a", j, "1")).collect();
        lines.push(line("a", 6, "2"));
        let err = ingest(&lines.join("\n"), &Selection::default()).unwrap_err();
        match err {
            Error::NonBinaryCorrect { line, .. } => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_string(&lines.join("\n")).contains("line 7"));
    }

    fn err_string(text: &str) -> String {
        ingest(text, &Selection::default()).unwrap_err().to_string()
    }

    #[test]
    fn fractional_correct_is_rejected() {
        assert!(err_string(&line("a", 0, "0.5")).contains("must be 0 or 1"));
    }

    #[test]
    fn one_missing_record_makes_matrix_ragged() {
        let mut text = String::new();
        for (p, k) in [("a", 50), ("b", 50), ("c", 49)] {
            for j in 0..k {
                text.push_str(&line(p, j, "0"));
                text.push('\n');
            }
        }
        let got = ingest(&text, &Selection::default()).unwrap();
        assert!(got.matrix.is_ragged());
        assert_eq!(got.matrix.k(), None);
        assert_eq!(got.report.k, None);
        assert_eq!(got.matrix.total_records(), 149);
    }

    #[test]
    fn duplicate_generation_is_an_error() {
        let text = [line("a", 0, "1"), line("a", 0, "0")].join("\n");
        assert!(matches!(
            ingest(&text, &Selection::default()),
            Err(Error::DuplicateGeneration { line: 2, .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{}\n{{not json\n", line("a", 0, "1"));
        assert!(matches!(
            ingest(&text, &Selection::default()),
            Err(Error::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn filter_to_nothing_is_empty_selection() {
        let sel = Selection {
            model: Some("other".into()),
            ..Selection::default()
        };
        assert!(matches!(ingest(&line("a", 0, "1"), &sel), Err(Error::EmptySelection)));
    }

    #[test]
    fn mixed_models_need_a_filter() {
        let other = line("a", 0, "1").replace(r#""model_id":"m""#, r#""model_id":"n""#);
        let text = [line("a", 0, "1"), other].join("\n");
        assert!(matches!(
            ingest(&text, &Selection::default()),
            Err(Error::MixedSelection(2))
        ));
        let sel = Selection {
            model: Some("n".into()),
            ..Selection::default()
        };
        let got = ingest(&text, &sel).unwrap();
        assert_eq!(got.report.model_id, "n");
        assert_eq!(got.report.filtered_out, 1);
    }

    #[test]
    fn unknown_fields_are_counted() {
        let text = line("a", 0, "1").replace('}', r#","latency_ms":12,"judge":"x"}"#);
        let got = ingest(&text, &Selection::default()).unwrap();
        assert_eq!(got.report.unknown_fields, 2);
    }

    #[test]
    fn generations_sorted_by_index() {
        let text = [line("a", 2, "1"), line("a", 0, "0"), line("a", 1, "1")].join("\n");
        let got = ingest(&text, &Selection::default()).unwrap();
        let row = &got.matrix.rows()[0];
        assert_eq!(row.generation_indices, vec![0, 1, 2]);
        assert_eq!(row.outcomes, vec![false, true, true]);
    }

    #[test]
    fn rectangular_passes_through() {
        let m = GenerationMatrix::from_binary_rows(&vec![vec![1; 10]; 5]).unwrap();
        assert_eq!(validate_rectangular(m.clone()).unwrap(), m);
    }

    #[test]
    fn ragged_lists_short_prompt() {
        let m = GenerationMatrix::from_binary_rows(&[vec![1; 50], vec![0; 49]]).unwrap();
        match validate_rectangular(m) {
            Err(Error::Ragged(ids)) => {
                assert_eq!(ids.len(), 1);
                assert!(ids[0].starts_with("p0001"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_matrix_rejected() {
        let err = validate_rectangular(GenerationMatrix::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn record_serialization_uses_integer_correct() {
        let rec = GenerationRecord {
            benchmark_id: "b".into(),
            model_id: "m".into(),
            prompt_id: "p".into(),
            generation_index: 3,
            correct: true,
            answer_key: Some("72".into()),
            decoding_mode: DecodingMode::Greedy,
            metadata: Some(BTreeMap::from([("temperature".to_string(), "0.7".to_string())])),
        };
        let text = serialize_records(std::slice::from_ref(&rec));
        assert!(text.contains(r#""correct":1"#));
        let (back, unknown) = parse_records(&text).unwrap();
        assert_eq!(back, vec![rec]);
        assert_eq!(unknown, 0);
    }
}
