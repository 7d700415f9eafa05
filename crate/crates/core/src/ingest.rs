//! Response-log ingestion: parse delimited text, clean, intern, subsample.
//!
//! The flow is `parse_records -> clean -> build_table`, optionally followed by
//! [`subsample`] or [`holdout_split`]. Parsing never drops rows silently: every
//! row either becomes one or more records or is counted in the
//! [`CleaningReport`].

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// A column addressed by header name or by zero-based position.
///
/// Parsed from text as either a plain name (`student`) or `#N` for position N.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(pos) = s.strip_prefix('#') {
            pos.parse::<usize>()
                .map(ColumnRef::Index)
                .map_err(|_| Error::InvalidSchema(format!("bad column position `{s}`")))
        } else if s.is_empty() {
            Err(Error::InvalidSchema("empty column name".into()))
        } else {
            Ok(ColumnRef::Name(s.to_string()))
        }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

/// Strings accepted as correct / incorrect. Anything else is ambiguous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectnessVocab {
    pub correct: Vec<String>,
    pub incorrect: Vec<String>,
}

impl Default for CorrectnessVocab {
    fn default() -> Self {
        Self {
            correct: vec!["1".into()],
            incorrect: vec!["0".into()],
        }
    }
}

impl CorrectnessVocab {
    pub fn classify(&self, cell: &str) -> Option<bool> {
        if self.correct.iter().any(|c| c == cell) {
            Some(true)
        } else if self.incorrect.iter().any(|c| c == cell) {
            Some(false)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub student_column: ColumnRef,
    pub skill_column: ColumnRef,
    pub correct_column: ColumnRef,
    pub order_column: Option<ColumnRef>,
    pub delimiter: char,
    pub has_header: bool,
    /// Separator between skills in a multi-skill cell (e.g. `~~` in DataShop exports).
    pub multi_skill_separator: Option<String>,
    /// Expand multi-skill cells into one record per skill. When false they are
    /// dropped as ambiguous.
    pub expand_multi_skill: bool,
    pub vocab: CorrectnessVocab,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            student_column: ColumnRef::Name("student".into()),
            skill_column: ColumnRef::Name("skill".into()),
            correct_column: ColumnRef::Name("correct".into()),
            order_column: None,
            delimiter: ',',
            has_header: true,
            multi_skill_separator: None,
            expand_multi_skill: false,
            vocab: CorrectnessVocab::default(),
        }
    }
}

impl ColumnSchema {
    pub fn validate(&self) -> Result<()> {
        let cols = [
            &self.student_column,
            &self.skill_column,
            &self.correct_column,
        ];
        for i in 0..cols.len() {
            for j in i + 1..cols.len() {
                if cols[i] == cols[j] {
                    return Err(Error::InvalidSchema(format!(
                        "column `{}` used for two required fields",
                        cols[i]
                    )));
                }
            }
        }
        if matches!(self.delimiter, '\n' | '\r') || !self.delimiter.is_ascii() {
            return Err(Error::InvalidSchema(format!(
                "unsupported delimiter {:?}",
                self.delimiter
            )));
        }
        if !self.has_header {
            let named = cols
                .iter()
                .copied()
                .chain(self.order_column.as_ref())
                .find(|c| matches!(c, ColumnRef::Name(_)));
            if let Some(c) = named {
                return Err(Error::InvalidSchema(format!(
                    "column `{c}` is named but the input has no header row"
                )));
            }
        }
        if let Some(sep) = &self.multi_skill_separator {
            if sep.is_empty() {
                return Err(Error::InvalidSchema("empty multi-skill separator".into()));
            }
        }
        if self
            .vocab
            .correct
            .iter()
            .any(|c| self.vocab.incorrect.contains(c))
        {
            return Err(Error::InvalidSchema(
                "a correctness token is listed as both correct and incorrect".into(),
            ));
        }
        Ok(())
    }
}

/// A parsed row before cleaning. `correct` is `None` when the cell is outside
/// the vocabulary; labels may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub student: String,
    pub skill: String,
    pub correct: Option<bool>,
    pub order: u64,
}

/// One graded attempt after cleaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub student: String,
    pub skill: String,
    pub correct: bool,
    pub order: u64,
}

/// A row that could not be mapped onto the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line in the source, header included.
    pub line: u64,
    pub message: String,
}

/// Parser output: candidate records plus row-level accounting.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<RawResponse>,
    pub row_errors: Vec<RowError>,
    pub rows_read: usize,
    pub rows_malformed: usize,
    pub rows_dropped_multi_skill: usize,
    /// Extra records created by expansion (a row with k skills adds k - 1).
    pub rows_expanded_multi_skill: usize,
}

impl ParsedLog {
    /// Wraps already-parsed records, one per source row.
    pub fn from_records(records: Vec<RawResponse>) -> Self {
        Self {
            rows_read: records.len(),
            records,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rows_read: usize,
    pub rows_malformed: usize,
    pub rows_dropped_missing_field: usize,
    pub rows_dropped_bad_correctness: usize,
    pub rows_dropped_multi_skill: usize,
    pub rows_expanded_multi_skill: usize,
    pub rows_kept: usize,
}

impl CleaningReport {
    /// kept + every drop counter == read + expansion surplus.
    pub fn is_balanced(&self) -> bool {
        self.rows_kept
            + self.rows_malformed
            + self.rows_dropped_missing_field
            + self.rows_dropped_bad_correctness
            + self.rows_dropped_multi_skill
            == self.rows_read + self.rows_expanded_multi_skill
    }
}

fn resolve(col: &ColumnRef, headers: Option<&csv::StringRecord>) -> Result<usize> {
    match (col, headers) {
        (ColumnRef::Index(i), _) => Ok(*i),
        (ColumnRef::Name(name), Some(h)) => h
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.clone())),
        (ColumnRef::Name(name), None) => Err(Error::MissingColumn(name.clone())),
    }
}

/// Parses delimiter-separated text into raw responses.
///
/// Rows whose width differs from the header (or from the first row when there
/// is no header) are collected as [`RowError`]s and parsing continues. The
/// record `order` is the zero-based data-row position unless the schema names
/// an order column, in which case rows with a non-integer order are malformed.
pub fn parse_records<R: Read>(source: R, schema: &ColumnSchema) -> Result<ParsedLog> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = if schema.has_header {
        Some(reader.headers()?.clone())
    } else {
        None
    };
    let student_idx = resolve(&schema.student_column, headers.as_ref())?;
    let skill_idx = resolve(&schema.skill_column, headers.as_ref())?;
    let correct_idx = resolve(&schema.correct_column, headers.as_ref())?;
    let order_idx = schema
        .order_column
        .as_ref()
        .map(|c| resolve(c, headers.as_ref()))
        .transpose()?;
    let mut expected_width = headers.as_ref().map(|h| h.len());
    if let Some(w) = expected_width {
        let max_idx = [
            Some(student_idx),
            Some(skill_idx),
            Some(correct_idx),
            order_idx,
        ]
        .into_iter()
        .flatten()
        .max()
        .unwrap_or(0);
        if max_idx >= w {
            return Err(Error::MissingColumn(format!("#{max_idx}")));
        }
    }

    let mut log = ParsedLog::default();
    let mut row = csv::StringRecord::new();
    let mut position: u64 = 0;
    loop {
        match reader.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                // Invalid UTF-8 and similar per-row failures.
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                log.rows_read += 1;
                log.rows_malformed += 1;
                log.row_errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                position += 1;
                continue;
            }
        }
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        log.rows_read += 1;
        let this_position = position;
        position += 1;

        let width = *expected_width.get_or_insert(row.len());
        if row.len() != width {
            log.rows_malformed += 1;
            log.row_errors.push(RowError {
                line,
                message: format!("expected {width} fields, found {}", row.len()),
            });
            continue;
        }
        let (Some(student), Some(skill_cell), Some(correct_cell)) = (
            row.get(student_idx),
            row.get(skill_idx),
            row.get(correct_idx),
        ) else {
            log.rows_malformed += 1;
            log.row_errors.push(RowError {
                line,
                message: format!("row has only {} fields", row.len()),
            });
            continue;
        };
        let order = match order_idx {
            None => this_position,
            Some(i) => match row.get(i).map(str::parse::<u64>) {
                Some(Ok(v)) => v,
                _ => {
                    log.rows_malformed += 1;
                    log.row_errors.push(RowError {
                        line,
                        message: "order cell is not a non-negative integer".into(),
                    });
                    continue;
                }
            },
        };
        let correct = schema.vocab.classify(correct_cell);

        match schema
            .multi_skill_separator
            .as_deref()
            .filter(|sep| skill_cell.contains(sep))
        {
            Some(sep) if schema.expand_multi_skill => {
                let before = log.records.len();
                log.records
                    .extend(skill_cell.split(sep).map(|s| RawResponse {
                        student: student.to_string(),
                        skill: s.trim().to_string(),
                        correct,
                        order,
                    }));
                log.rows_expanded_multi_skill += log.records.len() - before - 1;
            }
            Some(_) => log.rows_dropped_multi_skill += 1,
            None => log.records.push(RawResponse {
                student: student.to_string(),
                skill: skill_cell.to_string(),
                correct,
                order,
            }),
        }
    }
    Ok(log)
}

/// Drops records with an empty label or an out-of-vocabulary correctness cell.
/// Never fails; relative order is preserved.
pub fn clean(log: ParsedLog) -> (Vec<ResponseRecord>, CleaningReport) {
    let mut report = CleaningReport {
        rows_read: log.rows_read,
        rows_malformed: log.rows_malformed,
        rows_dropped_multi_skill: log.rows_dropped_multi_skill,
        rows_expanded_multi_skill: log.rows_expanded_multi_skill,
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(log.records.len());
    for raw in log.records {
        if raw.student.is_empty() || raw.skill.is_empty() {
            report.rows_dropped_missing_field += 1;
            continue;
        }
        let Some(correct) = raw.correct else {
            report.rows_dropped_bad_correctness += 1;
            continue;
        };
        kept.push(ResponseRecord {
            student: raw.student,
            skill: raw.skill,
            correct,
            order: raw.order,
        });
    }
    report.rows_kept = kept.len();
    debug_assert!(report.is_balanced());
    (kept, report)
}

/// One interned attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub student: usize,
    pub skill: usize,
    pub correct: bool,
    pub order: u64,
}

#[derive(Debug, Clone, Default)]
struct Interner {
    labels: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Interner {
    fn intern(&mut self, label: &str) -> usize {
        if let Some(&i) = self.lookup.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_string());
        self.lookup.insert(label.to_string(), i);
        i
    }
}

/// Immutable, interned response table.
///
/// Invariants: records are sorted by `order`; every student and skill index
/// occurs at least once; per-entity counts sum to the record count.
#[derive(Debug, Clone)]
pub struct InteractionTable {
    records: Vec<Interaction>,
    students: Interner,
    skills: Interner,
    attempts_per_student: Vec<usize>,
    attempts_per_skill: Vec<usize>,
}

impl PartialEq for InteractionTable {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.students.labels == other.students.labels
            && self.skills.labels == other.skills.labels
    }
}

/// Interns labels in first-appearance order after a stable sort on `order`.
/// Duplicate attempts are kept.
pub fn build_table(records: &[ResponseRecord]) -> Result<InteractionTable> {
    if records.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut sorted: Vec<&ResponseRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.order);
    Ok(InteractionTable::from_labeled(sorted.into_iter().map(
        |r| (r.student.as_str(), r.skill.as_str(), r.correct, r.order),
    )))
}

impl InteractionTable {
    /// Caller guarantees the iterator is non-empty and ordered.
    fn from_labeled<'a>(rows: impl Iterator<Item = (&'a str, &'a str, bool, u64)>) -> Self {
        let mut students = Interner::default();
        let mut skills = Interner::default();
        let mut out = Vec::new();
        for (student, skill, correct, order) in rows {
            out.push(Interaction {
                student: students.intern(student),
                skill: skills.intern(skill),
                correct,
                order,
            });
        }
        let mut attempts_per_student = vec![0; students.labels.len()];
        let mut attempts_per_skill = vec![0; skills.labels.len()];
        for r in &out {
            attempts_per_student[r.student] += 1;
            attempts_per_skill[r.skill] += 1;
        }
        Self {
            records: out,
            students,
            skills,
            attempts_per_student,
            attempts_per_skill,
        }
    }

    /// Re-interned table over the given record positions, kept in table order.
    fn select(&self, mut positions: Vec<usize>) -> InteractionTable {
        positions.sort_unstable();
        Self::from_labeled(positions.into_iter().map(|i| {
            let r = &self.records[i];
            (
                self.students.labels[r.student].as_str(),
                self.skills.labels[r.skill].as_str(),
                r.correct,
                r.order,
            )
        }))
    }

    pub fn records(&self) -> &[Interaction] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_students(&self) -> usize {
        self.students.labels.len()
    }

    pub fn num_skills(&self) -> usize {
        self.skills.labels.len()
    }

    pub fn student_labels(&self) -> &[String] {
        &self.students.labels
    }

    pub fn skill_labels(&self) -> &[String] {
        &self.skills.labels
    }

    pub fn student_label(&self, index: usize) -> &str {
        &self.students.labels[index]
    }

    pub fn skill_label(&self, index: usize) -> &str {
        &self.skills.labels[index]
    }

    pub fn student_index(&self, label: &str) -> Option<usize> {
        self.students.lookup.get(label).copied()
    }

    pub fn skill_index(&self, label: &str) -> Option<usize> {
        self.skills.lookup.get(label).copied()
    }

    pub fn attempts_per_student(&self) -> &[usize] {
        &self.attempts_per_student
    }

    pub fn attempts_per_skill(&self) -> &[usize] {
        &self.attempts_per_skill
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.correct).collect()
    }

    /// Back to labeled records (e.g. for re-export).
    pub fn to_records(&self) -> Vec<ResponseRecord> {
        self.records
            .iter()
            .map(|r| ResponseRecord {
                student: self.students.labels[r.student].clone(),
                skill: self.skills.labels[r.skill].clone(),
                correct: r.correct,
                order: r.order,
            })
            .collect()
    }
}

/// Uniform sample of `n` records without replacement, re-interned.
///
/// Uses [`SeededRng::partial_shuffle`] over record positions; the selected
/// positions are put back in table order before interning, so students and
/// skills absent from the sample disappear from the result.
pub fn subsample(table: &InteractionTable, n: usize, seed: u64) -> Result<InteractionTable> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "subsample size must be positive".into(),
        ));
    }
    if n > table.len() {
        return Err(Error::InvalidArgument(format!(
            "subsample size {n} exceeds record count {}",
            table.len()
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut idx = rng.partial_shuffle(table.len(), n);
    idx.truncate(n);
    Ok(table.select(idx))
}

/// Record-level split into (train, test). The test set holds
/// `round(fraction * len)` records, clamped so both sides are non-empty.
pub fn holdout_split(
    table: &InteractionTable,
    fraction: f64,
    seed: u64,
) -> Result<(InteractionTable, InteractionTable)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if table.len() < 2 {
        return Err(Error::InvalidArgument(
            "holdout split needs at least two records".into(),
        ));
    }
    let n_test = ((fraction * table.len() as f64).round() as usize).clamp(1, table.len() - 1);
    let mut rng = SeededRng::new(seed);
    let mut idx = rng.partial_shuffle(table.len(), n_test);
    let train = idx.split_off(n_test);
    Ok((table.select(train), table.select(idx)))
}

/// Writes the canonical `student,skill,correct` CSV accepted by the default schema.
pub fn write_canonical_csv<W: Write>(table: &InteractionTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["student", "skill", "correct"])?;
    for r in table.records() {
        w.write_record([
            table.student_label(r.student),
            table.skill_label(r.skill),
            if r.correct { "1" } else { "0" },
        ])?;
    }
    w.flush()?;
    Ok(())
}
