//! Heterogeneous drug-disease graph construction.
//!
//! Drug-drug and disease-disease edges come from a Gaussian kernel on the
//! distance between skip-gram vectors, cut off at a distance threshold.
//! Drug-disease edges carry `n_ij / n_j`: the share of patients diagnosed
//! with `j` who were also prescribed `i` in the same visit. Node ids are
//! per kind (`0..n_drug`, `0..n_dis`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::{CodeVocabulary, PatientRecord};
use crate::hierarchy::CategoryEncoder;
use crate::io_util::{self, MatrixHeader};
use crate::skipgram::EmbeddingTable;
use crate::{Error, NodeKind, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    DrugDrug,
    DisDis,
    DrugDis,
}

impl EdgeKind {
    pub const ALL: [EdgeKind; 3] = [EdgeKind::DrugDrug, EdgeKind::DisDis, EdgeKind::DrugDis];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeKind::DrugDrug => "drug_drug",
            EdgeKind::DisDis => "dis_dis",
            EdgeKind::DrugDis => "drug_dis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Homogeneous partitions store each undirected edge once with `i < j`.
/// The drug-disease partition stores `(drug, disease)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePartition {
    pub kind: EdgeKind,
    pub edges: Vec<Edge>,
}

impl EdgePartition {
    pub fn new(kind: EdgeKind) -> Self {
        EdgePartition { kind, edges: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn pairs(&self) -> HashSet<(usize, usize)> {
        self.edges.iter().map(|e| (e.i, e.j)).collect()
    }

    /// `i j w` lines, weights with 9 significant digits.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::with_capacity(self.edges.len() * 24);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {:.8e}", e.i, e.j, e.w);
        }
        out
    }

    pub fn from_edge_list(kind: EdgeKind, path: &Path, text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let bad = || Error::format(path, format!("line {}: expected `i j w`", n + 1));
            let mut it = line.split_ascii_whitespace();
            let i = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let j = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let w = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            edges.push(Edge { i, j, w });
        }
        Ok(EdgePartition { kind, edges })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparsityProfile {
    Low,
    High,
}

impl SparsityProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            SparsityProfile::Low => "low",
            SparsityProfile::High => "high",
        }
    }

    /// Percentile of pairwise drug distances used as the drug threshold.
    pub fn drug_percentile(self) -> f64 {
        match self {
            SparsityProfile::Low => 60.0,
            SparsityProfile::High => 30.0,
        }
    }
}

impl std::str::FromStr for SparsityProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(SparsityProfile::Low),
            "high" => Ok(SparsityProfile::High),
            _ => Err(Error::InvalidConfig(format!("unknown sparsity profile {s:?}"))),
        }
    }
}

/// Disease-disease threshold percentile, shared by both profiles.
pub const DISEASE_PERCENTILE: f64 = 60.0;

/// Unset `theta` and thresholds are derived from the pairwise distance
/// distribution of each node kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub theta: Option<f64>,
    pub drug_threshold: Option<f64>,
    pub dis_threshold: Option<f64>,
    pub hetero_min_count: usize,
    pub sparsity_profile: SparsityProfile,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            theta: None,
            drug_threshold: None,
            dis_threshold: None,
            hetero_min_count: 1,
            sparsity_profile: SparsityProfile::Low,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::InvalidConfig(format!("graph.{name} must be positive"))),
            _ => Ok(()),
        };
        positive("theta", self.theta)?;
        positive("drug_threshold", self.drug_threshold)?;
        positive("dis_threshold", self.dis_threshold)?;
        if self.hetero_min_count < 1 {
            return Err(Error::InvalidConfig("graph.hetero_min_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// The kernel widths and cutoffs actually used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedParams {
    pub theta_drug: f64,
    pub theta_dis: f64,
    pub drug_threshold: f64,
    pub dis_threshold: f64,
    pub hetero_min_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrugDiseaseGraph {
    pub n_drug: usize,
    pub n_dis: usize,
    pub drug_drug: EdgePartition,
    pub dis_dis: EdgePartition,
    pub drug_dis: EdgePartition,
    /// Proximity embedding followed by the category multi-hot block.
    pub features_drug: Array2<f64>,
    pub features_dis: Array2<f64>,
    pub proximity_dim: usize,
    pub profile: SparsityProfile,
    pub params: ResolvedParams,
}

impl DrugDiseaseGraph {
    pub fn partition(&self, kind: EdgeKind) -> &EdgePartition {
        match kind {
            EdgeKind::DrugDrug => &self.drug_drug,
            EdgeKind::DisDis => &self.dis_dis,
            EdgeKind::DrugDis => &self.drug_dis,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_drug + self.n_dis
    }
}

/// Gaussian kernel weight, zero beyond `threshold`.
pub fn homogeneous_edge_weight(vi: ArrayView1<f64>, vj: ArrayView1<f64>, theta: f64, threshold: f64) -> f64 {
    let d2: f64 = vi.iter().zip(vj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    gaussian_weight(d2, theta, threshold)
}

fn gaussian_weight(d2: f64, theta: f64, threshold: f64) -> f64 {
    if d2.sqrt() <= threshold {
        (-d2 / (2.0 * theta * theta)).exp()
    } else {
        0.0
    }
}

/// Per-patient co-occurrence counts between prescriptions and diagnoses.
#[derive(Debug, Clone, Default)]
pub struct CooccurrenceCounts {
    /// Patients with each diagnosis.
    pub n_dis: Vec<usize>,
    /// Patients with the drug and diagnosis recorded in one visit.
    pub n_pair: HashMap<(usize, usize), usize>,
}

impl CooccurrenceCounts {
    pub fn from_records(records: &[PatientRecord], drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> Result<Self> {
        let mut n_dis = vec![0usize; diseases.len()];
        let mut n_pair: HashMap<(usize, usize), usize> = HashMap::new();
        let mut seen_dis = HashSet::new();
        let mut seen_pair = HashSet::new();
        for r in records {
            seen_dis.clear();
            seen_pair.clear();
            for v in &r.visits {
                let dx: Vec<usize> = v.diagnoses.iter().map(|c| diseases.try_id(c)).collect::<Result<_>>()?;
                for p in &v.prescriptions {
                    let i = drugs.try_id(p)?;
                    for &j in &dx {
                        seen_pair.insert((i, j));
                    }
                }
                seen_dis.extend(dx);
            }
            for &j in &seen_dis {
                n_dis[j] += 1;
            }
            for &pair in &seen_pair {
                *n_pair.entry(pair).or_default() += 1;
            }
        }
        Ok(CooccurrenceCounts { n_dis, n_pair })
    }

    pub fn pair(&self, drug: usize, disease: usize) -> usize {
        self.n_pair.get(&(drug, disease)).copied().unwrap_or(0)
    }
}

/// `n_ij / n_j`, or 0 when `n_j = 0` or `n_ij < min_count`.
pub fn heterogeneous_edge_weight(drug: usize, disease: usize, counts: &CooccurrenceCounts, min_count: usize) -> f64 {
    let n_j = counts.n_dis.get(disease).copied().unwrap_or(0);
    let n_ij = counts.pair(drug, disease);
    if n_j == 0 || n_ij < min_count.max(1) {
        return 0.0;
    }
    n_ij as f64 / n_j as f64
}

/// Linear-interpolation percentile of sorted values, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Squared distances for all `i < j`, in row-major upper-triangle order.
fn pairwise_sq_distances(vectors: &Array2<f64>) -> Vec<f64> {
    let n = vectors.nrows();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let vi = vectors.row(i);
            (i + 1..n).map(move |j| {
                let vj = vectors.row(j);
                vi.iter().zip(vj.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
        })
        .collect()
}

struct KindScale {
    theta: f64,
    threshold: f64,
}

fn resolve_scale(sq: &[f64], theta: Option<f64>, threshold: Option<f64>, pct: f64) -> KindScale {
    if sq.is_empty() {
        return KindScale {
            theta: theta.unwrap_or(1.0),
            threshold: threshold.unwrap_or(0.0),
        };
    }
    let mut d: Vec<f64> = sq.iter().map(|x| x.sqrt()).collect();
    d.sort_by(f64::total_cmp);
    let median = percentile(&d, 50.0);
    KindScale {
        theta: theta.unwrap_or(if median > 0.0 { median } else { 1.0 }),
        threshold: threshold.unwrap_or_else(|| percentile(&d, pct)),
    }
}

fn homogeneous_partition(kind: EdgeKind, n: usize, sq: &[f64], scale: &KindScale) -> EdgePartition {
    let mut edges = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            let w = gaussian_weight(sq[k], scale.theta, scale.threshold);
            if w > 0.0 {
                edges.push(Edge { i, j, w });
            }
            k += 1;
        }
    }
    EdgePartition { kind, edges }
}

/// Everything the graph is built from, over one pair of vocabularies.
pub struct GraphInputs<'a> {
    pub drug_vocab: &'a CodeVocabulary,
    pub dis_vocab: &'a CodeVocabulary,
    pub drug_embedding: &'a EmbeddingTable,
    pub dis_embedding: &'a EmbeddingTable,
    pub drug_encoder: &'a CategoryEncoder,
    pub dis_encoder: &'a CategoryEncoder,
    pub records: &'a [PatientRecord],
}

impl GraphInputs<'_> {
    fn check(&self) -> Result<()> {
        let checks = [
            (self.drug_vocab.kind == NodeKind::Drug, "drug vocabulary kind"),
            (self.dis_vocab.kind == NodeKind::Disease, "disease vocabulary kind"),
            (self.drug_embedding.kind == NodeKind::Drug, "drug embedding kind"),
            (self.dis_embedding.kind == NodeKind::Disease, "disease embedding kind"),
            (self.drug_encoder.kind == NodeKind::Drug, "drug encoder kind"),
            (self.dis_encoder.kind == NodeKind::Disease, "disease encoder kind"),
            (self.drug_embedding.vocab_size() == self.drug_vocab.len(), "drug embedding rows vs vocabulary"),
            (self.dis_embedding.vocab_size() == self.dis_vocab.len(), "disease embedding rows vs vocabulary"),
            (self.drug_embedding.dim() == self.dis_embedding.dim(), "embedding dims"),
        ];
        for (ok, what) in checks {
            if !ok {
                return Err(Error::Inconsistent(what.into()));
            }
        }
        if self.drug_vocab.is_empty() || self.dis_vocab.is_empty() {
            return Err(Error::EmptyInput("graph needs at least one drug and one disease"));
        }
        Ok(())
    }
}

fn assemble_features(table: &EmbeddingTable, vocab: &CodeVocabulary, enc: &CategoryEncoder) -> Result<Array2<f64>> {
    let dim = table.dim();
    let mut out = Array2::zeros((vocab.len(), dim + enc.total_dim()));
    for (id, code) in vocab.codes().iter().enumerate() {
        let mut row = out.row_mut(id);
        row.slice_mut(ndarray::s![..dim]).assign(&table.row(id));
        for h in enc.hot_indices(code)? {
            row[dim + h] = 1.0;
        }
    }
    Ok(out)
}

pub fn build_graph(inputs: &GraphInputs, config: &GraphConfig) -> Result<DrugDiseaseGraph> {
    config.validate()?;
    inputs.check()?;
    let n_drug = inputs.drug_vocab.len();
    let n_dis = inputs.dis_vocab.len();

    let sq_drug = pairwise_sq_distances(&inputs.drug_embedding.vectors);
    let sq_dis = pairwise_sq_distances(&inputs.dis_embedding.vectors);
    let drug_scale = resolve_scale(&sq_drug, config.theta, config.drug_threshold, config.sparsity_profile.drug_percentile());
    let dis_scale = resolve_scale(&sq_dis, config.theta, config.dis_threshold, DISEASE_PERCENTILE);

    let drug_drug = homogeneous_partition(EdgeKind::DrugDrug, n_drug, &sq_drug, &drug_scale);
    let dis_dis = homogeneous_partition(EdgeKind::DisDis, n_dis, &sq_dis, &dis_scale);

    let counts = CooccurrenceCounts::from_records(inputs.records, inputs.drug_vocab, inputs.dis_vocab)?;
    let mut keys: Vec<(usize, usize)> = counts.n_pair.keys().copied().collect();
    keys.sort_unstable();
    let drug_dis = EdgePartition {
        kind: EdgeKind::DrugDis,
        edges: keys
            .into_iter()
            .filter_map(|(i, j)| {
                let w = heterogeneous_edge_weight(i, j, &counts, config.hetero_min_count);
                (w > 0.0).then_some(Edge { i, j, w })
            })
            .collect(),
    };

    Ok(DrugDiseaseGraph {
        n_drug,
        n_dis,
        drug_drug,
        dis_dis,
        drug_dis,
        features_drug: assemble_features(inputs.drug_embedding, inputs.drug_vocab, inputs.drug_encoder)?,
        features_dis: assemble_features(inputs.dis_embedding, inputs.dis_vocab, inputs.dis_encoder)?,
        proximity_dim: inputs.drug_embedding.dim(),
        profile: config.sparsity_profile,
        params: ResolvedParams {
            theta_drug: drug_scale.theta,
            theta_dis: dis_scale.theta,
            drug_threshold: drug_scale.threshold,
            dis_threshold: dis_scale.threshold,
            hetero_min_count: config.hetero_min_count,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionStats {
    pub count: usize,
    pub min_weight: Option<f64>,
    pub max_weight: Option<f64>,
    pub mean_weight: Option<f64>,
    /// Ten equal-width bins over `[0, 1]`.
    pub weight_histogram: [usize; 10],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// degree -> number of nodes
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub n_drug: usize,
    pub n_dis: usize,
    /// Undirected edge counts per partition.
    pub partitions: BTreeMap<String, PartitionStats>,
    pub degree: DegreeStats,
}

pub fn graph_stats(g: &DrugDiseaseGraph) -> GraphStats {
    let mut partitions = BTreeMap::new();
    let mut degree = vec![0usize; g.n_nodes()];
    for kind in EdgeKind::ALL {
        let p = g.partition(kind);
        let mut hist = [0usize; 10];
        for e in &p.edges {
            hist[((e.w * 10.0) as usize).min(9)] += 1;
            let (a, b) = match kind {
                EdgeKind::DrugDrug => (e.i, e.j),
                EdgeKind::DisDis => (g.n_drug + e.i, g.n_drug + e.j),
                EdgeKind::DrugDis => (e.i, g.n_drug + e.j),
            };
            degree[a] += 1;
            degree[b] += 1;
        }
        let ws = p.edges.iter().map(|e| e.w);
        partitions.insert(
            kind.as_str().to_owned(),
            PartitionStats {
                count: p.len(),
                min_weight: ws.clone().reduce(f64::min),
                max_weight: ws.clone().reduce(f64::max),
                mean_weight: (!p.is_empty()).then(|| ws.sum::<f64>() / p.len() as f64),
                weight_histogram: hist,
            },
        );
    }
    let mut histogram = BTreeMap::new();
    for &d in &degree {
        *histogram.entry(d).or_insert(0) += 1;
    }
    GraphStats {
        n_drug: g.n_drug,
        n_dis: g.n_dis,
        partitions,
        degree: DegreeStats {
            min: degree.iter().copied().min().unwrap_or(0),
            max: degree.iter().copied().max().unwrap_or(0),
            mean: if degree.is_empty() { 0.0 } else { degree.iter().sum::<usize>() as f64 / degree.len() as f64 },
            histogram,
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphManifest {
    n_drug: usize,
    n_dis: usize,
    profile: SparsityProfile,
    proximity_dim: usize,
    params: ResolvedParams,
    config: GraphConfig,
    edge_files: BTreeMap<String, String>,
    edge_counts: BTreeMap<String, usize>,
    feature_files: BTreeMap<String, String>,
}

pub const GRAPH_MANIFEST: &str = "graph.json";

impl DrugDiseaseGraph {
    /// Files written by [`DrugDiseaseGraph::save`], relative to its directory.
    pub fn file_names() -> Vec<String> {
        let mut v: Vec<String> = EdgeKind::ALL.iter().map(|k| format!("{}.edges", k.as_str())).collect();
        v.push("features_drug.bin".into());
        v.push("features_dis.bin".into());
        v.push(GRAPH_MANIFEST.into());
        v
    }

    pub fn save(&self, dir: &Path, config: &GraphConfig) -> Result<()> {
        let mut edge_files = BTreeMap::new();
        let mut edge_counts = BTreeMap::new();
        for kind in EdgeKind::ALL {
            let name = format!("{}.edges", kind.as_str());
            io_util::write_atomic(&dir.join(&name), self.partition(kind).to_edge_list().as_bytes())?;
            edge_files.insert(kind.as_str().to_owned(), name);
            edge_counts.insert(kind.as_str().to_owned(), self.partition(kind).len());
        }
        let mut feature_files = BTreeMap::new();
        for (kind, m) in [(NodeKind::Drug, &self.features_drug), (NodeKind::Disease, &self.features_dis)] {
            let name = match kind {
                NodeKind::Drug => "features_drug.bin",
                NodeKind::Disease => "features_dis.bin",
            };
            let header = MatrixHeader {
                kind,
                rows: m.nrows(),
                cols: m.ncols(),
                seed: 0,
            };
            io_util::write_atomic(&dir.join(name), &io_util::encode_matrix(header, m))?;
            feature_files.insert(kind.as_str().to_owned(), name.to_owned());
        }
        let manifest = GraphManifest {
            n_drug: self.n_drug,
            n_dis: self.n_dis,
            profile: self.profile,
            proximity_dim: self.proximity_dim,
            params: self.params,
            config: config.clone(),
            edge_files,
            edge_counts,
            feature_files,
        };
        io_util::write_atomic(&dir.join(GRAPH_MANIFEST), &io_util::to_json_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(GRAPH_MANIFEST);
        let m: GraphManifest = serde_json::from_str(&io_util::read_string(&mpath)?)?;
        let mut parts = Vec::new();
        for kind in EdgeKind::ALL {
            let name = m
                .edge_files
                .get(kind.as_str())
                .ok_or_else(|| Error::format(&mpath, format!("no {} edge file", kind.as_str())))?;
            let p = dir.join(name);
            let part = EdgePartition::from_edge_list(kind, &p, &io_util::read_string(&p)?)?;
            let (ni, nj) = match kind {
                EdgeKind::DrugDrug => (m.n_drug, m.n_drug),
                EdgeKind::DisDis => (m.n_dis, m.n_dis),
                EdgeKind::DrugDis => (m.n_drug, m.n_dis),
            };
            if part.edges.iter().any(|e| e.i >= ni || e.j >= nj) {
                return Err(Error::format(&p, "node id out of range"));
            }
            parts.push(part);
        }
        let load_features = |kind: NodeKind, rows: usize| -> Result<Array2<f64>> {
            let name = m
                .feature_files
                .get(kind.as_str())
                .ok_or_else(|| Error::format(&mpath, format!("no {kind} feature file")))?;
            let p = dir.join(name);
            let (h, x) = io_util::decode_matrix(&p, &io_util::read_bytes(&p)?)?;
            if h.kind != kind || h.rows != rows {
                return Err(Error::format(&p, "feature matrix does not match node count"));
            }
            Ok(x)
        };
        let features_drug = load_features(NodeKind::Drug, m.n_drug)?;
        let features_dis = load_features(NodeKind::Disease, m.n_dis)?;
        let drug_dis = parts.pop().unwrap();
        let dis_dis = parts.pop().unwrap();
        let drug_drug = parts.pop().unwrap();
        Ok(DrugDiseaseGraph {
            n_drug: m.n_drug,
            n_dis: m.n_dis,
            drug_drug,
            dis_dis,
            drug_dis,
            features_drug,
            features_dis,
            proximity_dim: m.proximity_dim,
            profile: m.profile,
            params: m.params,
        })
    }
}
