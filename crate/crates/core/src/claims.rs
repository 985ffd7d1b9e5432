//! Claims ingestion and per-patient code sequences.
//!
//! Rows are grouped by patient and calendar day: all rows of one patient on
//! one day form a single [`Visit`]. Patients are kept in ascending
//! `patient_id` order and visits in ascending date order, which fixes the
//! iteration order used for vocabulary ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::{Error, NodeKind, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub patient_id: String,
    pub date: NaiveDate,
    pub prescriptions: BTreeSet<String>,
    pub diagnoses: BTreeSet<String>,
}

impl Visit {
    pub fn codes(&self, kind: NodeKind) -> &BTreeSet<String> {
        match kind {
            NodeKind::Drug => &self.prescriptions,
            NodeKind::Disease => &self.diagnoses,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub visits: Vec<Visit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimsFormat {
    Csv,
    Jsonl,
}

impl ClaimsFormat {
    /// Guesses the format from the file extension; anything but `.jsonl` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => ClaimsFormat::Jsonl,
            _ => ClaimsFormat::Csv,
        }
    }
}

/// Parsed claims plus a count of rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub records: Vec<PatientRecord>,
    pub rows_read: usize,
    pub malformed_rows: usize,
}

#[derive(Deserialize)]
struct JsonVisit {
    patient_id: String,
    date: String,
    #[serde(default)]
    rx: Vec<String>,
    #[serde(default)]
    dx: Vec<String>,
}

#[derive(Default)]
struct Assembler {
    // patient -> day -> (rx, dx)
    by_patient: BTreeMap<String, BTreeMap<NaiveDate, (BTreeSet<String>, BTreeSet<String>)>>,
}

impl Assembler {
    fn add(&mut self, patient: &str, date: NaiveDate, rx: impl IntoIterator<Item = String>, dx: impl IntoIterator<Item = String>) {
        let day = self
            .by_patient
            .entry(patient.to_owned())
            .or_default()
            .entry(date)
            .or_default();
        day.0.extend(rx);
        day.1.extend(dx);
    }

    fn finish(self) -> Vec<PatientRecord> {
        self.by_patient
            .into_iter()
            .map(|(patient_id, days)| PatientRecord {
                visits: days
                    .into_iter()
                    .map(|(date, (prescriptions, diagnoses))| Visit {
                        patient_id: patient_id.clone(),
                        date,
                        prescriptions,
                        diagnoses,
                    })
                    .collect(),
                patient_id,
            })
            .collect()
    }
}

fn parse_date(path: &Path, line: u64, value: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), "%Y-%m-%d").map_err(|_| Error::BadDate {
        path: path.to_owned(),
        line,
        value: value.to_owned(),
    })
}

pub fn ingest_claims(path: &Path, format: ClaimsFormat) -> Result<Ingested> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ClaimsFormat::Csv => parse_csv(path, &text),
        ClaimsFormat::Jsonl => parse_jsonl(path, &text),
    }
}

fn parse_csv(path: &Path, text: &str) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::NoRecords(path.to_owned()));
    }
    let expected = ["patient_id", "date", "code_type", "code"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::MalformedRow {
            path: path.to_owned(),
            line: 1,
            reason: format!("expected header {}", expected.join(",")),
        });
    }

    let mut asm = Assembler::default();
    let mut rows_read = 0;
    let mut malformed = 0;
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        rows_read += 1;
        if row.len() != 4 || row[0].is_empty() || row[3].is_empty() {
            warn!("{}:{line}: skipping malformed row", path.display());
            malformed += 1;
            continue;
        }
        let date = parse_date(path, line, &row[1])?;
        let code = row[3].to_owned();
        match &row[2] {
            "RX" => asm.add(&row[0], date, Some(code), None),
            "DX" => asm.add(&row[0], date, None, Some(code)),
            other => {
                warn!("{}:{line}: unknown code_type {other:?}", path.display());
                malformed += 1;
            }
        }
    }
    finish(path, asm, rows_read, malformed)
}

fn parse_jsonl(path: &Path, text: &str) -> Result<Ingested> {
    let mut asm = Assembler::default();
    let mut rows_read = 0;
    let mut malformed = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx as u64 + 1;
        if raw.trim().is_empty() {
            continue;
        }
        rows_read += 1;
        let visit: JsonVisit = match serde_json::from_str(raw) {
            Ok(v) => v,
            Err(e) => {
                warn!("{}:{line}: skipping malformed object: {e}", path.display());
                malformed += 1;
                continue;
            }
        };
        let date = parse_date(path, line, &visit.date)?;
        let rx: Vec<String> = visit.rx.into_iter().filter(|c| !c.is_empty()).collect();
        let dx: Vec<String> = visit.dx.into_iter().filter(|c| !c.is_empty()).collect();
        if visit.patient_id.is_empty() || (rx.is_empty() && dx.is_empty()) {
            malformed += 1;
            continue;
        }
        asm.add(&visit.patient_id, date, rx, dx);
    }
    finish(path, asm, rows_read, malformed)
}

fn finish(path: &Path, asm: Assembler, rows_read: usize, malformed_rows: usize) -> Result<Ingested> {
    let records = asm.finish();
    if records.is_empty() {
        return Err(Error::NoRecords(path.to_owned()));
    }
    Ok(Ingested {
        records,
        rows_read,
        malformed_rows,
    })
}

/// Dense integer ids for the codes of one node kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeVocabulary {
    pub kind: NodeKind,
    id_to_code: Vec<String>,
    code_to_id: HashMap<String, usize>,
}

impl CodeVocabulary {
    pub fn new(kind: NodeKind) -> Self {
        CodeVocabulary {
            kind,
            id_to_code: Vec::new(),
            code_to_id: HashMap::new(),
        }
    }

    /// Builds a vocabulary from codes in the given order; repeats are ignored.
    pub fn from_codes<I, S>(kind: NodeKind, codes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = CodeVocabulary::new(kind);
        for c in codes {
            vocab.insert(c.as_ref());
        }
        vocab
    }

    pub fn insert(&mut self, code: &str) -> usize {
        if let Some(&id) = self.code_to_id.get(code) {
            return id;
        }
        let id = self.id_to_code.len();
        self.id_to_code.push(code.to_owned());
        self.code_to_id.insert(code.to_owned(), id);
        id
    }

    pub fn id(&self, code: &str) -> Option<usize> {
        self.code_to_id.get(code).copied()
    }

    pub fn try_id(&self, code: &str) -> Result<usize> {
        self.id(code).ok_or_else(|| Error::UnknownCode {
            kind: self.kind,
            code: code.to_owned(),
        })
    }

    pub fn code(&self, id: usize) -> Option<&str> {
        self.id_to_code.get(id).map(String::as_str)
    }

    pub fn codes(&self) -> &[String] {
        &self.id_to_code
    }

    pub fn len(&self) -> usize {
        self.id_to_code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_code.is_empty()
    }

    /// One `index<TAB>code` line per id.
    pub fn to_sidecar(&self) -> String {
        let mut out = String::new();
        for (i, c) in self.id_to_code.iter().enumerate() {
            out.push_str(&format!("{i}\t{c}\n"));
        }
        out
    }

    pub fn from_sidecar(kind: NodeKind, path: &Path, text: &str) -> Result<Self> {
        let mut vocab = CodeVocabulary::new(kind);
        for (n, line) in text.lines().enumerate() {
            let (idx, code) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}: expected index<TAB>code", n + 1)))?;
            if idx.parse::<usize>().ok() != Some(n) || vocab.id(code).is_some() {
                return Err(Error::format(path, format!("line {}: ids must be dense and unique", n + 1)));
            }
            vocab.insert(code);
        }
        Ok(vocab)
    }
}

/// Builds drug and disease vocabularies in first-appearance order.
pub fn build_vocabularies(records: &[PatientRecord]) -> Result<(CodeVocabulary, CodeVocabulary)> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no patient records"));
    }
    let mut drug = CodeVocabulary::new(NodeKind::Drug);
    let mut disease = CodeVocabulary::new(NodeKind::Disease);
    for visit in records.iter().flat_map(|r| &r.visits) {
        for c in &visit.prescriptions {
            drug.insert(c);
        }
        for c in &visit.diagnoses {
            disease.insert(c);
        }
    }
    Ok((drug, disease))
}

/// Codes of one kind in temporal order, as vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub kind: NodeKind,
    pub tokens: Vec<usize>,
}

/// Concatenates per-visit code sets in visit order; codes within one visit
/// are emitted in ascending id order.
pub fn extract_sequence(record: &PatientRecord, vocab: &CodeVocabulary) -> Result<CodeSequence> {
    let mut tokens = Vec::new();
    for visit in &record.visits {
        let start = tokens.len();
        for code in visit.codes(vocab.kind) {
            tokens.push(vocab.try_id(code)?);
        }
        tokens[start..].sort_unstable();
    }
    Ok(CodeSequence {
        kind: vocab.kind,
        tokens,
    })
}

/// Skip-gram corpus for one kind: sequences with fewer than two tokens are dropped.
pub fn build_corpus(records: &[PatientRecord], vocab: &CodeVocabulary) -> Result<Vec<CodeSequence>> {
    let mut corpus = Vec::new();
    for r in records {
        let seq = extract_sequence(r, vocab)?;
        if seq.tokens.len() >= 2 {
            corpus.push(seq);
        }
    }
    Ok(corpus)
}
