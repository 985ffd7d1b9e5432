//! ADR label files, the pair label function, negative sampling and
//! disease-class-disjoint splits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::SeedableRng;
use rand::seq::{SliceRandom, index};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::claims::CodeVocabulary;
use crate::hierarchy::{disease_class, parse_atc, parse_icd10};
use crate::{Error, Result};

pub const LABEL_HEADER: [&str; 3] = ["atc_code", "icd10_code", "frequency"];
pub const SPLIT_HEADER: [&str; 5] = ["drug_code", "icd10_code", "label", "frequency", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrequencyClass {
    Common,
    Rare,
    PostMarketing,
    Unknown,
}

impl FrequencyClass {
    pub const ALL: [FrequencyClass; 4] = [
        FrequencyClass::Common,
        FrequencyClass::Rare,
        FrequencyClass::PostMarketing,
        FrequencyClass::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FrequencyClass::Common => "common",
            FrequencyClass::Rare => "rare",
            FrequencyClass::PostMarketing => "post_marketing",
            FrequencyClass::Unknown => "unknown",
        }
    }

    /// Recognized strings map to their class; anything else is `Unknown`.
    pub fn parse_lenient(s: &str) -> (Self, bool) {
        match FrequencyClass::ALL.into_iter().find(|c| c.as_str() == s) {
            Some(c) => (c, true),
            None => (FrequencyClass::Unknown, false),
        }
    }

    pub fn is_infrequent(self) -> bool {
        matches!(self, FrequencyClass::Rare | FrequencyClass::PostMarketing)
    }
}

impl fmt::Display for FrequencyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdrLabel {
    pub atc: String,
    pub icd: String,
    pub frequency: FrequencyClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AdrLabelFile {
    pub rows: Vec<AdrLabel>,
}

pub fn load_labels(path: &Path) -> Result<AdrLabelFile> {
    let text = crate::io_util::read_string(path)?;
    parse_labels(path, &text)
}

pub fn parse_labels(path: &Path, text: &str) -> Result<AdrLabelFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != LABEL_HEADER {
        return Err(Error::MalformedRow {
            path: path.to_owned(),
            line: 1,
            reason: format!("expected header {:?}", LABEL_HEADER.join("\t")),
        });
    }
    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let malformed = |reason: String| Error::MalformedRow {
            path: path.to_owned(),
            line,
            reason,
        };
        if rec.len() != 3 {
            return Err(malformed(format!("expected 3 fields, found {}", rec.len())));
        }
        let (atc, icd, freq) = (&rec[0], &rec[1], &rec[2]);
        parse_atc(atc).map_err(|e| malformed(e.to_string()))?;
        parse_icd10(icd).map_err(|e| malformed(e.to_string()))?;
        let (frequency, known) = FrequencyClass::parse_lenient(freq);
        if !known {
            warn!("{}:{line}: unknown frequency {freq:?}, treating as unknown", path.display());
        }
        if !seen.insert((atc.to_owned(), icd.to_owned())) {
            return Err(Error::DuplicatePair {
                drug: atc.to_owned(),
                disease: icd.to_owned(),
            });
        }
        rows.push(AdrLabel {
            atc: atc.to_owned(),
            icd: icd.to_owned(),
            frequency,
        });
    }
    Ok(AdrLabelFile { rows })
}

pub fn labels_to_tsv(file: &AdrLabelFile) -> String {
    let mut out = LABEL_HEADER.join("\t");
    out.push('\n');
    for r in &file.rows {
        out.push_str(&format!("{}\t{}\t{}\n", r.atc, r.icd, r.frequency));
    }
    out
}

/// Label rows restricted to the graph vocabularies.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelIndex {
    pub positives: BTreeMap<(usize, usize), FrequencyClass>,
    pub drugs: BTreeSet<usize>,
    pub diseases: BTreeSet<usize>,
    /// Label rows dropped because a code is absent from the graph.
    pub dropped: usize,
}

impl LabelIndex {
    pub fn new(file: &AdrLabelFile, drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> Self {
        let mut idx = LabelIndex {
            positives: BTreeMap::new(),
            drugs: BTreeSet::new(),
            diseases: BTreeSet::new(),
            dropped: 0,
        };
        for r in &file.rows {
            match (drugs.id(&r.atc), diseases.id(&r.icd)) {
                (Some(d), Some(s)) => {
                    idx.positives.insert((d, s), r.frequency);
                    idx.drugs.insert(d);
                    idx.diseases.insert(s);
                }
                _ => idx.dropped += 1,
            }
        }
        idx
    }

    /// 1 for a listed pair, 0 for any other pair of labeled drug and disease.
    pub fn label(&self, drug: usize, disease: usize) -> Result<u8> {
        if !self.drugs.contains(&drug) || !self.diseases.contains(&disease) {
            return Err(Error::OutsideLabeledDomain { drug, disease });
        }
        Ok(u8::from(self.positives.contains_key(&(drug, disease))))
    }
}

/// Uniform draw without replacement of `|positives|` unlisted pairs from the
/// labeled drug x disease grid, returned sorted.
pub fn sample_negatives(index: &LabelIndex, seed: u64) -> Result<Vec<(usize, usize)>> {
    let needed = index.positives.len();
    let complement: Vec<(usize, usize)> = index
        .drugs
        .iter()
        .flat_map(|&d| index.diseases.iter().map(move |&s| (d, s)))
        .filter(|p| !index.positives.contains_key(p))
        .collect();
    if complement.len() < needed {
        return Err(Error::InsufficientComplement {
            needed,
            available: complement.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<(usize, usize)> = index::sample(&mut rng, complement.len(), needed)
        .into_iter()
        .map(|i| complement[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Inconsistent(format!("unknown split {s:?}")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRecord {
    pub drug: usize,
    pub disease: usize,
    pub label: u8,
    /// Present for positives only.
    pub frequency: Option<FrequencyClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledPair {
    pub drug: usize,
    pub disease: usize,
    pub label: u8,
    pub frequency: Option<FrequencyClass>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledPairSet {
    pub pairs: Vec<LabeledPair>,
}

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    Ok(())
}

/// Assigns whole disease classes to train/val/test.
///
/// Classes are shuffled by `seed`, ordered by pair count (largest first) and
/// each goes to the split with the largest remaining deficit against its
/// target count. Once the classes left are no more than the splits still
/// empty, each is placed in an empty split so none ends up unused.
pub fn assign_classes(class_sizes: &BTreeMap<String, usize>, ratios: [f64; 3], seed: u64) -> Result<BTreeMap<String, Split>> {
    validate_ratios(ratios)?;
    if class_sizes.len() < 3 {
        return Err(Error::TooFewClasses(class_sizes.len()));
    }
    let total: usize = class_sizes.values().sum();
    let mut classes: Vec<(&String, usize)> = class_sizes.iter().map(|(c, &n)| (c, n)).collect();
    classes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    classes.sort_by(|a, b| b.1.cmp(&a.1));
    let mut current = [0usize; 3];
    let mut members = [0usize; 3];
    let mut out = BTreeMap::new();
    for (k, (class, n)) in classes.iter().enumerate() {
        let deficit = |s: usize| ratios[s] * total as f64 - current[s] as f64;
        let empty: Vec<usize> = (0..3).filter(|&s| members[s] == 0).collect();
        let remaining = classes.len() - k;
        let pool: Vec<usize> = if remaining <= empty.len() { empty } else { vec![0, 1, 2] };
        let mut best = pool[0];
        for &s in &pool[1..] {
            if deficit(s) > deficit(best) {
                best = s;
            }
        }
        current[best] += n;
        members[best] += 1;
        out.insert((*class).clone(), Split::ALL[best]);
    }
    Ok(out)
}

/// Splits pairs by the 3-character class of their disease.
pub fn split_by_disease_class(
    pairs: &[PairRecord],
    disease_classes: &[String],
    ratios: [f64; 3],
    seed: u64,
) -> Result<LabeledPairSet> {
    let class_of = |s: usize| {
        disease_classes.get(s).ok_or(Error::UnknownId {
            kind: crate::NodeKind::Disease,
            id: s,
            size: disease_classes.len(),
        })
    };
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    for p in pairs {
        *sizes.entry(class_of(p.disease)?.clone()).or_default() += 1;
    }
    let assignment = assign_classes(&sizes, ratios, seed)?;
    let pairs = pairs
        .iter()
        .map(|p| LabeledPair {
            drug: p.drug,
            disease: p.disease,
            label: p.label,
            frequency: p.frequency,
            split: assignment[class_of(p.disease).expect("checked above")],
        })
        .collect();
    Ok(LabeledPairSet { pairs })
}

/// 3-character class of every disease in vocabulary order.
pub fn disease_classes(vocab: &CodeVocabulary) -> Result<Vec<String>> {
    vocab.codes().iter().map(|c| disease_class(c)).collect()
}

/// Positives, sampled negatives and the class-disjoint split in one step.
pub fn build_labeled_set(
    index: &LabelIndex,
    disease_classes: &[String],
    ratios: [f64; 3],
    negative_seed: u64,
    split_seed: u64,
) -> Result<LabeledPairSet> {
    if index.positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut pairs: Vec<PairRecord> = index
        .positives
        .iter()
        .map(|(&(drug, disease), &f)| PairRecord {
            drug,
            disease,
            label: 1,
            frequency: Some(f),
        })
        .collect();
    for (drug, disease) in sample_negatives(index, negative_seed)? {
        pairs.push(PairRecord {
            drug,
            disease,
            label: 0,
            frequency: None,
        });
    }
    pairs.sort_by_key(|p| (p.drug, p.disease));
    split_by_disease_class(&pairs, disease_classes, ratios, split_seed)
}

impl LabeledPairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledPair> + '_ {
        self.pairs.iter().filter(move |p| p.split == split)
    }

    pub fn sizes(&self) -> BTreeMap<Split, usize> {
        let mut m: BTreeMap<Split, usize> = Split::ALL.into_iter().map(|s| (s, 0)).collect();
        for p in &self.pairs {
            *m.entry(p.split).or_default() += 1;
        }
        m
    }

    pub fn classes(&self, split: Split, disease_classes: &[String]) -> BTreeSet<String> {
        self.split(split).map(|p| disease_classes[p.disease].clone()).collect()
    }

    /// Positives tagged rare or post-marketing in `split`.
    pub fn infrequent_positives(&self, split: Split) -> impl Iterator<Item = &LabeledPair> + '_ {
        self.split(split)
            .filter(|p| p.label == 1 && p.frequency.is_some_and(FrequencyClass::is_infrequent))
    }

    /// Same pairs with labels permuted within each split.
    pub fn shuffled_labels(&self, seed: u64) -> LabeledPairSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for s in Split::ALL {
            let idx: Vec<usize> = (0..out.pairs.len()).filter(|&i| out.pairs[i].split == s).collect();
            let mut labels: Vec<(u8, Option<FrequencyClass>)> =
                idx.iter().map(|&i| (out.pairs[i].label, out.pairs[i].frequency)).collect();
            labels.shuffle(&mut rng);
            for (&i, (l, f)) in idx.iter().zip(labels) {
                out.pairs[i].label = l;
                out.pairs[i].frequency = f;
            }
        }
        out
    }

    pub fn to_csv(&self, drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SPLIT_HEADER)?;
        for p in &self.pairs {
            let drug = drugs.code(p.drug).ok_or(Error::UnknownId {
                kind: crate::NodeKind::Drug,
                id: p.drug,
                size: drugs.len(),
            })?;
            let dis = diseases.code(p.disease).ok_or(Error::UnknownId {
                kind: crate::NodeKind::Disease,
                id: p.disease,
                size: diseases.len(),
            })?;
            let label = p.label.to_string();
            let freq = p.frequency.map_or("", FrequencyClass::as_str);
            w.write_record([drug, dis, label.as_str(), freq, p.split.as_str()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Inconsistent(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(path: &Path, text: &str, drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        if rdr.headers()?.iter().collect::<Vec<_>>() != SPLIT_HEADER {
            return Err(Error::format(path, "unexpected split header"));
        }
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let bad = |r: &str| Error::format(path, format!("row {:?}: {r}", rec.iter().collect::<Vec<_>>()));
            if rec.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let label: u8 = rec[2].parse().map_err(|_| bad("bad label"))?;
            let frequency = match &rec[3] {
                "" => None,
                f => Some(FrequencyClass::parse_lenient(f).0),
            };
            pairs.push(LabeledPair {
                drug: drugs.try_id(&rec[0])?,
                disease: diseases.try_id(&rec[1])?,
                label,
                frequency,
                split: rec[4].parse()?,
            });
        }
        Ok(LabeledPairSet { pairs })
    }
}

/// Count of pairs per (drug, disease) key; used to detect accidental duplicates.
pub fn duplicate_keys(set: &LabeledPairSet) -> Vec<(usize, usize)> {
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for p in &set.pairs {
        *counts.entry((p.drug, p.disease)).or_default() += 1;
    }
    let mut d: Vec<_> = counts.into_iter().filter(|&(_, c)| c > 1).map(|(k, _)| k).collect();
    d.sort_unstable();
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NodeKind;

    fn p() -> &'static Path {
        Path::new("labels.tsv")
    }

    #[test]
    fn loads_rows_and_flags_unknown_frequency() {
        let text = "atc_code\ticd10_code\tfrequency\nC03CA01\tI50\tcommon\nA01AB02\tK21.3\trare\nB01AC06\tR01\tweird\n";
        let f = parse_labels(p(), text).unwrap();
        assert_eq!(f.rows.len(), 3);
        assert_eq!(f.rows[2].frequency, FrequencyClass::Unknown);
        assert_eq!(parse_labels(p(), &labels_to_tsv(&f)).unwrap().rows[..2], f.rows[..2]);
    }

    #[test]
    fn duplicate_pair_names_it() {
        let text = "atc_code\ticd10_code\tfrequency\nC03CA01\tI50\tcommon\nC03CA01\tI50\trare\n";
        match parse_labels(p(), text) {
            Err(Error::DuplicatePair { drug, disease }) => assert_eq!((drug.as_str(), disease.as_str()), ("C03CA01", "I50")),
            other => panic!("{other:?}"),
        }
        let bad = "atc_code\ticd10_code\tfrequency\nXX\tI50\tcommon\n";
        assert!(matches!(parse_labels(p(), bad), Err(Error::MalformedRow { line: 2, .. })));
        assert!(matches!(parse_labels(p(), "a\tb\tc\n"), Err(Error::MalformedRow { line: 1, .. })));
    }

    fn index() -> (LabelIndex, CodeVocabulary, CodeVocabulary) {
        let drugs = CodeVocabulary::from_codes(NodeKind::Drug, ["C03CA01", "A01AB02", "B01AC06"]);
        let dis = CodeVocabulary::from_codes(NodeKind::Disease, ["I50", "K21", "R01", "Z99"]);
        let file = AdrLabelFile {
            rows: vec![
                AdrLabel { atc: "C03CA01".into(), icd: "I50".into(), frequency: FrequencyClass::Common },
                AdrLabel { atc: "A01AB02".into(), icd: "K21".into(), frequency: FrequencyClass::Rare },
                AdrLabel { atc: "N02BE01".into(), icd: "K21".into(), frequency: FrequencyClass::Rare },
            ],
        };
        (LabelIndex::new(&file, &drugs, &dis), drugs, dis)
    }

    #[test]
    fn label_function_domain() {
        let (idx, _, _) = index();
        assert_eq!(idx.dropped, 1);
        assert_eq!(idx.label(0, 0).unwrap(), 1);
        assert_eq!(idx.label(0, 1).unwrap(), 0);
        assert!(matches!(idx.label(2, 0), Err(Error::OutsideLabeledDomain { .. })));
        assert!(matches!(idx.label(0, 2), Err(Error::OutsideLabeledDomain { .. })));
    }

    #[test]
    fn negatives_avoid_positives() {
        let (idx, _, _) = index();
        let neg = sample_negatives(&idx, 4).unwrap();
        assert_eq!(neg.len(), 2);
        assert_eq!(neg, vec![(0, 1), (1, 0)]);
        assert_eq!(neg, sample_negatives(&idx, 4).unwrap());
        let mut full = idx.clone();
        full.positives.insert((0, 1), FrequencyClass::Common);
        full.positives.insert((1, 0), FrequencyClass::Common);
        assert!(matches!(sample_negatives(&full, 0), Err(Error::InsufficientComplement { .. })));
    }

    #[test]
    fn equal_classes_pack_eight_one_one() {
        for seed in 0..10 {
            let sizes: BTreeMap<String, usize> = (0..10).map(|i| (format!("A{i:02}"), 7)).collect();
            let a = assign_classes(&sizes, DEFAULT_RATIOS, seed).unwrap();
            let count = |s| a.values().filter(|&&x| x == s).count();
            assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (8, 1, 1));
        }
    }

    #[test]
    fn degenerate_class_counts_error() {
        let one: BTreeMap<String, usize> = [("I50".to_string(), 10)].into();
        assert!(matches!(assign_classes(&one, DEFAULT_RATIOS, 0), Err(Error::TooFewClasses(1))));
        let three: BTreeMap<String, usize> = (0..3).map(|i| (format!("A{i:02}"), 1)).collect();
        assert!(matches!(assign_classes(&three, [0.5, 0.4, 0.2], 0), Err(Error::InvalidConfig(_))));
        let a = assign_classes(&three, DEFAULT_RATIOS, 0).unwrap();
        assert_eq!(a.values().collect::<BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn csv_roundtrip_and_shuffle() {
        let (idx, drugs, dis) = index();
        let mut idx = idx;
        idx.drugs.extend([2]);
        idx.diseases.extend([2, 3]);
        let classes = disease_classes(&dis).unwrap();
        let set = build_labeled_set(&idx, &classes, DEFAULT_RATIOS, 1, 2).unwrap();
        assert_eq!(set.len(), 4);
        assert!(duplicate_keys(&set).is_empty());
        let csv = set.to_csv(&drugs, &dis).unwrap();
        assert!(csv.starts_with("drug_code,icd10_code,label,frequency,split\n"));
        assert_eq!(LabeledPairSet::from_csv(p(), &csv, &drugs, &dis).unwrap(), set);
        let sh = set.shuffled_labels(3);
        assert_eq!(sh.sizes(), set.sizes());
        let pos = |s: &LabeledPairSet| s.pairs.iter().filter(|p| p.label == 1).count();
        assert_eq!(pos(&sh), pos(&set));
    }
}
