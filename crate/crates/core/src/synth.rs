//! Seeded synthetic claims with planted drug -> ADR rules.
//!
//! Drugs fall into co-prescription clusters that share an ATC group, and
//! each cluster has a few indication diseases. A patient belongs to one home
//! cluster, keeps a chronic regimen drawn mostly from it, and picks up
//! indication and background diagnoses at every visit. After the first
//! visit carrying a rule's trigger drug, each later visit receives the rule's
//! disease with probability `adr_strength`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::claims::{PatientRecord, Visit};
use crate::io_util::{to_json_pretty, write_atomic};
use crate::labels::{AdrLabel, AdrLabelFile, FrequencyClass, labels_to_tsv};
use crate::{Error, Result};

pub const CLAIMS_FILE: &str = "claims.csv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const PLANTED_FILE: &str = "planted.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_drugs: usize,
    pub n_diseases: usize,
    pub n_visits_mean: f64,
    pub n_adr_rules: usize,
    pub adr_strength: f64,
    pub n_drug_clusters: usize,
    pub n_disease_classes: usize,
    /// Chronic drugs per patient.
    pub regimen_size: usize,
    /// Share of regimen drugs drawn from the home cluster.
    pub home_share: f64,
    /// Chance a regimen drug is refilled at a given visit.
    pub refill_prob: f64,
    pub indications_per_cluster: usize,
    /// Chance a visit records one of the home cluster's indications.
    pub indication_prob: f64,
    /// Mean number of unrelated diagnoses per visit.
    pub background_rate: f64,
    /// Extra label positives drawn from indication pairs, per planted rule.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 2000,
            n_drugs: 60,
            n_diseases: 60,
            n_visits_mean: 6.0,
            n_adr_rules: 40,
            adr_strength: 0.8,
            n_drug_clusters: 6,
            n_disease_classes: 12,
            regimen_size: 3,
            home_share: 0.8,
            refill_prob: 0.7,
            indications_per_cluster: 3,
            indication_prob: 0.5,
            background_rate: 0.3,
            distractor_rate: 0.25,
            seed: 7,
        }
    }
}

const MIN_DISEASE_CLASSES: usize = 10;
const ATC_LETTERS: &[u8] = b"ABCDGHJLMNPRSV";

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("n_patients", self.n_patients),
            ("n_drugs", self.n_drugs),
            ("n_diseases", self.n_diseases),
            ("n_drug_clusters", self.n_drug_clusters),
            ("regimen_size", self.regimen_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [
            ("adr_strength", self.adr_strength),
            ("home_share", self.home_share),
            ("refill_prob", self.refill_prob),
            ("indication_prob", self.indication_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("n_visits_mean", self.n_visits_mean),
            ("background_rate", self.background_rate),
            ("distractor_rate", self.distractor_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.n_drug_clusters > self.n_drugs {
            return bad(format!("{} clusters for {} drugs", self.n_drug_clusters, self.n_drugs));
        }
        if self.n_drug_clusters > ATC_LETTERS.len() * 99 {
            return bad("too many drug clusters".into());
        }
        if self.n_diseases < MIN_DISEASE_CLASSES || self.n_disease_classes < MIN_DISEASE_CLASSES {
            return Err(Error::Infeasible(format!(
                "need at least {MIN_DISEASE_CLASSES} diseases and disease classes, got {} and {}",
                self.n_diseases, self.n_disease_classes
            )));
        }
        if self.n_disease_classes > self.n_diseases {
            return Err(Error::Infeasible(format!(
                "{} disease classes for {} diseases",
                self.n_disease_classes, self.n_diseases
            )));
        }
        if self.n_disease_classes > 26 * 90 {
            return bad("too many disease classes".into());
        }
        if self.n_adr_rules > self.n_drugs * self.n_diseases {
            return Err(Error::Infeasible(format!(
                "{} rules exceed {} drug-disease pairs",
                self.n_adr_rules,
                self.n_drugs * self.n_diseases
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRule {
    pub drug: String,
    pub disease: String,
    pub strength: f64,
    pub ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedManifest {
    pub seed: u64,
    pub rules: Vec<PlantedRule>,
    /// Label positives that were not planted (indication pairs).
    pub distractors: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<PatientRecord>,
    pub labels: AdrLabelFile,
    pub manifest: PlantedManifest,
    pub drug_codes: Vec<String>,
    pub disease_codes: Vec<String>,
}

fn drug_code(cluster: usize, k: usize) -> String {
    let letter = ATC_LETTERS[cluster % ATC_LETTERS.len()] as char;
    let group = 1 + cluster / ATC_LETTERS.len();
    let sub = (b'A' + (k / 25 % 26) as u8) as char;
    let chem = (b'A' + (k / 5 % 5) as u8) as char;
    format!("{letter}{group:02}{sub}{chem}{:02}", 1 + k % 5 + 5 * (k / 650))
}

fn disease_class_code(class: usize) -> String {
    format!("{}{:02}", (b'A' + (class % 26) as u8) as char, 10 + class / 26)
}

fn pick_frequency(rng: &mut ChaCha8Rng) -> FrequencyClass {
    let r: f64 = rng.random();
    match r {
        r if r < 0.5 => FrequencyClass::Common,
        r if r < 0.75 => FrequencyClass::Rare,
        r if r < 0.9 => FrequencyClass::PostMarketing,
        _ => FrequencyClass::Unknown,
    }
}

pub fn generate_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let clusters = config.n_drug_clusters;
    let drug_cluster: Vec<usize> = (0..config.n_drugs).map(|d| d % clusters).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); clusters];
    for (d, &c) in drug_cluster.iter().enumerate() {
        members[c].push(d);
    }
    let drug_codes: Vec<String> = (0..config.n_drugs).map(|d| drug_code(d % clusters, d / clusters)).collect();
    let classes = config.n_disease_classes;
    let disease_codes: Vec<String> = (0..config.n_diseases)
        .map(|s| format!("{}.{}", disease_class_code(s % classes), s / classes))
        .collect();

    let mut disease_pool: Vec<usize> = (0..config.n_diseases).collect();
    disease_pool.shuffle(&mut rng);
    let per = config.indications_per_cluster.min(config.n_diseases / clusters.max(1));
    let indications: Vec<Vec<usize>> = (0..clusters).map(|c| disease_pool[c * per..(c + 1) * per].to_vec()).collect();
    let indication_pairs: BTreeSet<(usize, usize)> = (0..config.n_drugs)
        .flat_map(|d| indications[drug_cluster[d]].iter().map(move |&s| (d, s)))
        .collect();

    // planted rules avoid the trigger's own indications when possible
    let mut candidates: Vec<(usize, usize)> = (0..config.n_drugs)
        .flat_map(|d| (0..config.n_diseases).map(move |s| (d, s)))
        .collect();
    candidates.shuffle(&mut rng);
    candidates.sort_by_key(|p| indication_pairs.contains(p));
    let mut rules: Vec<(usize, usize)> = candidates[..config.n_adr_rules].to_vec();
    rules.sort_unstable();
    let mut rules_by_drug: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(d, s) in &rules {
        rules_by_drug.entry(d).or_default().push(s);
    }

    let visits_dist = Poisson::new(config.n_visits_mean.max(1e-9)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let background_dist = (config.background_rate > 0.0)
        .then(|| Poisson::new(config.background_rate).expect("positive rate"));
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date");
    let width = (config.n_patients.max(1) - 1).to_string().len().max(5);

    let mut records = Vec::with_capacity(config.n_patients);
    for p in 0..config.n_patients {
        let patient_id = format!("P{p:0width$}");
        let home = rng.random_range(0..clusters);
        let mut regimen = BTreeSet::new();
        for _ in 0..config.regimen_size {
            let d = if rng.random_bool(config.home_share) || clusters == 1 {
                *members[home].choose(&mut rng).expect("cluster has members")
            } else {
                rng.random_range(0..config.n_drugs)
            };
            regimen.insert(d);
        }
        let regimen: Vec<usize> = regimen.into_iter().collect();
        let n_visits = (visits_dist.sample(&mut rng) as usize).max(1);
        let mut date = start + Days::new(rng.random_range(0..365));
        let mut exposed: BTreeSet<usize> = BTreeSet::new();
        let mut visits = Vec::with_capacity(n_visits);
        for _ in 0..n_visits {
            let mut rx: BTreeSet<usize> = regimen.iter().copied().filter(|_| rng.random_bool(config.refill_prob)).collect();
            if rx.is_empty() {
                rx.insert(*regimen.choose(&mut rng).expect("regimen is non-empty"));
            }
            let mut dx: BTreeSet<usize> = BTreeSet::new();
            if !indications[home].is_empty() && rng.random_bool(config.indication_prob) {
                dx.insert(*indications[home].choose(&mut rng).expect("non-empty"));
            }
            if let Some(bg) = &background_dist {
                for _ in 0..bg.sample(&mut rng) as usize {
                    dx.insert(rng.random_range(0..config.n_diseases));
                }
            }
            for d in &exposed {
                for &s in &rules_by_drug[d] {
                    if rng.random_bool(config.adr_strength) {
                        dx.insert(s);
                    }
                }
            }
            exposed.extend(rx.iter().copied().filter(|d| rules_by_drug.contains_key(d)));
            visits.push(Visit {
                patient_id: patient_id.clone(),
                date,
                prescriptions: rx.iter().map(|&d| drug_codes[d].clone()).collect(),
                diagnoses: dx.iter().map(|&s| disease_codes[s].clone()).collect(),
            });
            date = date + Days::new(rng.random_range(7..60));
        }
        records.push(PatientRecord { patient_id, visits });
    }

    let n_distractors = (config.distractor_rate * config.n_adr_rules as f64).round() as usize;
    let mut pool: Vec<(usize, usize)> = indication_pairs.iter().copied().filter(|p| !rules.contains(p)).collect();
    pool.shuffle(&mut rng);
    pool.truncate(n_distractors);
    pool.sort_unstable();

    let mut label_rows: Vec<AdrLabel> = rules
        .iter()
        .chain(&pool)
        .map(|&(d, s)| AdrLabel {
            atc: drug_codes[d].clone(),
            icd: disease_codes[s].clone(),
            frequency: pick_frequency(&mut rng),
        })
        .collect();
    label_rows.sort_by(|a, b| (&a.atc, &a.icd).cmp(&(&b.atc, &b.icd)));

    let manifest = PlantedManifest {
        seed: config.seed,
        rules: rules
            .iter()
            .map(|&(d, s)| PlantedRule {
                drug: drug_codes[d].clone(),
                disease: disease_codes[s].clone(),
                strength: config.adr_strength,
                ground_truth: true,
            })
            .collect(),
        distractors: pool.iter().map(|&(d, s)| (drug_codes[d].clone(), disease_codes[s].clone())).collect(),
    };
    Ok(SynthCorpus {
        records,
        labels: AdrLabelFile { rows: label_rows },
        manifest,
        drug_codes,
        disease_codes,
    })
}

/// Claims CSV with one row per code, prescriptions listed before diagnoses.
pub fn claims_to_csv(records: &[PatientRecord]) -> String {
    let mut out = String::from("patient_id,date,code_type,code\n");
    for r in records {
        for v in &r.visits {
            let date = v.date.format("%Y-%m-%d");
            for c in &v.prescriptions {
                out.push_str(&format!("{},{date},RX,{c}\n", r.patient_id));
            }
            for c in &v.diagnoses {
                out.push_str(&format!("{},{date},DX,{c}\n", r.patient_id));
            }
        }
    }
    out
}

impl SynthCorpus {
    /// Writes the claims CSV, label TSV and planted-rule manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(CLAIMS_FILE), claims_to_csv(&self.records).as_bytes())?;
        write_atomic(&dir.join(LABELS_FILE), labels_to_tsv(&self.labels).as_bytes())?;
        write_atomic(&dir.join(PLANTED_FILE), &to_json_pretty(&self.manifest)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{disease_class, parse_atc, parse_icd10};

    fn small() -> SynthConfig {
        SynthConfig {
            n_patients: 200,
            n_adr_rules: 10,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn codes_parse_and_span_classes() {
        let c = generate_corpus(&small()).unwrap();
        for d in &c.drug_codes {
            parse_atc(d).unwrap();
        }
        let classes: BTreeSet<String> = c.disease_codes.iter().map(|s| disease_class(s).unwrap()).collect();
        assert!(classes.len() >= 10);
        for s in &c.disease_codes {
            parse_icd10(s).unwrap();
        }
        let unique: BTreeSet<&String> = c.drug_codes.iter().collect();
        assert_eq!(unique.len(), c.drug_codes.len());
    }

    #[test]
    fn clusters_share_atc_group() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(&c.drug_codes[0][..3], &c.drug_codes[6][..3]);
        assert_ne!(&c.drug_codes[0][..3], &c.drug_codes[1][..3]);
    }

    #[test]
    fn labels_cover_rules_and_distractors() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(c.manifest.rules.len(), 10);
        assert_eq!(c.manifest.distractors.len(), 3);
        assert_eq!(c.labels.rows.len(), 13);
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(claims_to_csv(&a.records), claims_to_csv(&b.records));
        assert_eq!(a.labels, b.labels);
        let other = generate_corpus(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(claims_to_csv(&a.records), claims_to_csv(&other.records));
    }

    #[test]
    fn infeasible_configs() {
        let few = SynthConfig {
            n_diseases: 9,
            ..small()
        };
        assert!(matches!(generate_corpus(&few), Err(Error::Infeasible(_))));
        let many = SynthConfig {
            n_drugs: 2,
            n_diseases: 10,
            n_disease_classes: 10,
            n_drug_clusters: 2,
            n_adr_rules: 21,
            ..small()
        };
        assert!(matches!(generate_corpus(&many), Err(Error::Infeasible(_))));
    }

    #[test]
    fn every_visit_has_a_prescription() {
        let c = generate_corpus(&small()).unwrap();
        assert_eq!(c.records.len(), 200);
        assert!(c.records.iter().all(|r| !r.visits.is_empty()));
        assert!(c.records.iter().flat_map(|r| &r.visits).all(|v| !v.prescriptions.is_empty()));
    }
}
