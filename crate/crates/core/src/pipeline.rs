//! Stage runner. Each stage reads upstream artifacts under the output
//! directory, writes its own files atomically and records a manifest at
//! `<out>/manifests/<stage>.json` listing input and output hashes.
//!
//! Layout:
//!
//! ```text
//! synth/     claims.csv labels.tsv planted.json
//! ingest/    records.json drug.vocab disease.vocab summary.json
//! embed/     drug.emb disease.emb (+ .vocab sidecars)
//! graph/<profile>/  edge lists, feature matrices, graph.json, stats.json
//! train/     pairs.csv runs/<model>_<profile>_<k>/{run.json,scores.csv[,model.ckpt]}
//! eval/      runs.json report.json report.txt
//! discover/  candidates.csv source.json
//! report/    report.txt candidates.csv
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::{build_corpus, build_vocabularies, ingest_claims, ClaimsFormat, CodeVocabulary, PatientRecord};
use crate::gnn::{save_checkpoint, GnnConfig, GraphTensors};
use crate::graph::{build_graph, graph_stats, DrugDiseaseGraph, GraphConfig, GraphInputs, SparsityProfile};
use crate::hierarchy::CategoryEncoder;
use crate::io_util::{read_string, sha256_file, sha256_hex, to_json_pretty, write_atomic};
use crate::labels::{build_labeled_set, disease_classes, load_labels, LabelIndex, LabeledPairSet, DEFAULT_RATIOS};
use crate::skipgram::{sidecar_path, train_embeddings, EmbeddingTable, SkipgramConfig};
use crate::synth::{generate_corpus, SynthConfig, CLAIMS_FILE, LABELS_FILE, PLANTED_FILE};
use crate::train::{
    aggregate, candidates_to_csv, discover_candidates, evaluate_scores, train_model, CandidateScope, EpochRecord,
    EvalReport, ModelKind, RunResult, TrainConfig, TrainedModel, CANDIDATE_THRESHOLD,
};
use crate::{Error, NodeKind, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const SCORES_HEADER: &str = "drug_code,icd10_code,score";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Ingest,
    Embed,
    Graph,
    Train,
    Eval,
    Discover,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Ingest,
        Stage::Embed,
        Stage::Graph,
        Stage::Train,
        Stage::Eval,
        Stage::Discover,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Embed => "embed",
            Stage::Graph => "graph",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Discover => "discover",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoverConfig {
    pub threshold: f64,
    pub scope: CandidateScope,
}

impl Default for DiscoverConfig {
    fn default() -> Self {
        DiscoverConfig {
            threshold: CANDIDATE_THRESHOLD,
            scope: CandidateScope::Test,
        }
    }
}

/// Everything a pipeline run depends on. Loaded from TOML; every field has
/// a default so an empty file is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// External claims file; the `synth` output is used when unset.
    pub claims: Option<PathBuf>,
    /// External ADR label TSV; the `synth` output is used when unset.
    pub labels: Option<PathBuf>,
    /// Independent train/eval repetitions per model and profile.
    pub seeds: usize,
    pub models: Vec<ModelKind>,
    pub profiles: Vec<SparsityProfile>,
    pub ratios: [f64; 3],
    pub synth: SynthConfig,
    pub skipgram: SkipgramConfig,
    pub graph: GraphConfig,
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub discover: DiscoverConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 7,
            out: PathBuf::from("run"),
            claims: None,
            labels: None,
            seeds: 5,
            models: ModelKind::ALL.to_vec(),
            profiles: vec![SparsityProfile::Low, SparsityProfile::High],
            ratios: DEFAULT_RATIOS,
            synth: SynthConfig::default(),
            skipgram: SkipgramConfig::default(),
            graph: GraphConfig::default(),
            gnn: GnnConfig::default(),
            train: TrainConfig::default(),
            discover: DiscoverConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.seeds == 0 {
            return bad("seeds must be at least 1");
        }
        if self.models.is_empty() {
            return bad("models must not be empty");
        }
        if self.profiles.is_empty() {
            return bad("profiles must not be empty");
        }
        if self.ratios.iter().any(|&r| !(r >= 0.0)) || (self.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("ratios must be non-negative and sum to 1");
        }
        if !(self.discover.threshold > 0.0 && self.discover.threshold < 1.0) {
            return bad("discover.threshold must lie in (0, 1)");
        }
        if self.out.as_os_str().is_empty() {
            return bad("out must not be empty");
        }
        if self.claims.is_none() || self.labels.is_none() {
            self.synth_config().validate()?;
        }
        self.skipgram.validate()?;
        self.graph.validate()?;
        for model in &self.models {
            if let Some(variant) = model.variant() {
                GnnConfig {
                    variant,
                    ..self.gnn.clone()
                }
                .validate()?;
            }
        }
        self.train.validate()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn skipgram_config(&self) -> SkipgramConfig {
        SkipgramConfig {
            seed: self.seed.wrapping_add(1),
            ..self.skipgram.clone()
        }
    }

    /// Seed for negative sampling and the class split.
    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Seed of the `k`-th training repetition.
    pub fn train_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(100 + k as u64)
    }

    /// Hash of the config with the output directory blanked, so the same
    /// settings hash identically wherever they run.
    pub fn config_hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.out = PathBuf::new();
        Ok(sha256_hex(&serde_json::to_vec(&c)?))
    }

    fn uses_synth(&self) -> bool {
        self.claims.is_none() || self.labels.is_none()
    }

    /// Train jobs in a fixed order. Baselines ignore graph structure, so
    /// they run on the low profile only.
    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::new();
        for &profile in &self.profiles {
            for &model in &self.models {
                if !model.is_gnn() && profile != SparsityProfile::Low {
                    continue;
                }
                for k in 0..self.seeds {
                    out.push(Job { model, profile, k });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Job {
    pub model: ModelKind,
    pub profile: SparsityProfile,
    pub k: usize,
}

impl Job {
    pub fn dir(self) -> String {
        format!("train/runs/{}_{}_{}", self.model.as_str(), self.profile.as_str(), self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: Stage,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Path (relative to the output directory when inside it) to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunMeta {
    model: ModelKind,
    profile: SparsityProfile,
    k: usize,
    seed: u64,
    best_epoch: usize,
    epochs_run: usize,
    history: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CandidateSource {
    model: ModelKind,
    profile: SparsityProfile,
    k: usize,
    threshold: f64,
    scope: CandidateScope,
    count: usize,
}

pub fn manifest_path(out: &Path, stage: Stage) -> PathBuf {
    out.join("manifests").join(format!("{stage}.json"))
}

pub fn load_manifest(out: &Path, stage: Stage) -> Result<Option<StageManifest>> {
    let p = manifest_path(out, stage);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&read_string(&p)?)?))
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    root: &'a Path,
    manifests: BTreeMap<Stage, Option<StageManifest>>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn new(config: &'a PipelineConfig) -> Self {
        Ctx {
            config,
            root: &config.out,
            manifests: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Resolves an upstream artifact, checking it against its producer's
    /// manifest.
    fn require(&mut self, producer: Stage, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        let missing = || Error::MissingArtifact {
            path: path.clone(),
            stage: producer.to_string(),
        };
        if !self.manifests.contains_key(&producer) {
            let m = load_manifest(self.root, producer)?;
            self.manifests.insert(producer, m);
        }
        let expected = self.manifests[&producer]
            .as_ref()
            .and_then(|m| m.outputs.get(rel))
            .ok_or_else(missing)?
            .clone();
        if !path.exists() {
            return Err(missing());
        }
        let actual = sha256_file(&path)?;
        if actual != expected {
            return Err(Error::StaleArtifact {
                path,
                stage: producer.to_string(),
            });
        }
        self.inputs.insert(rel.to_owned(), actual);
        Ok(path)
    }

    /// An input from outside the output directory.
    fn require_external(&mut self, path: &Path) -> Result<PathBuf> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_owned(),
                stage: "input".into(),
            });
        }
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(path.to_owned())
    }

    fn producer_outputs(&mut self, producer: Stage) -> Result<Vec<String>> {
        if !self.manifests.contains_key(&producer) {
            let m = load_manifest(self.root, producer)?;
            self.manifests.insert(producer, m);
        }
        match &self.manifests[&producer] {
            Some(m) => Ok(m.outputs.keys().cloned().collect()),
            None => Err(Error::MissingArtifact {
                path: manifest_path(self.root, producer),
                stage: producer.to_string(),
            }),
        }
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(rel), bytes)?;
        self.outputs.push(rel.to_owned());
        Ok(())
    }

    fn claims_path(&mut self) -> Result<PathBuf> {
        match self.config.claims.clone() {
            Some(p) => self.require_external(&p),
            None => self.require(Stage::Synth, &format!("synth/{CLAIMS_FILE}")),
        }
    }

    fn labels_path(&mut self) -> Result<PathBuf> {
        match self.config.labels.clone() {
            Some(p) => self.require_external(&p),
            None => self.require(Stage::Synth, &format!("synth/{LABELS_FILE}")),
        }
    }

    fn vocab(&mut self, kind: NodeKind) -> Result<CodeVocabulary> {
        let p = self.require(Stage::Ingest, &format!("ingest/{kind}.vocab"))?;
        CodeVocabulary::from_sidecar(kind, &p, &read_string(&p)?)
    }

    fn records(&mut self) -> Result<Vec<PatientRecord>> {
        let p = self.require(Stage::Ingest, "ingest/records.json")?;
        Ok(serde_json::from_str(&read_string(&p)?)?)
    }

    fn graph(&mut self, profile: SparsityProfile) -> Result<DrugDiseaseGraph> {
        for name in DrugDiseaseGraph::file_names() {
            self.require(Stage::Graph, &format!("graph/{}/{name}", profile.as_str()))?;
        }
        DrugDiseaseGraph::load(&self.path(&format!("graph/{}", profile.as_str())))
    }

    fn pairs(&mut self, drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> Result<LabeledPairSet> {
        let p = self.require(Stage::Train, "train/pairs.csv")?;
        LabeledPairSet::from_csv(&p, &read_string(&p)?, drugs, diseases)
    }

    fn finish(mut self, stage: Stage) -> Result<StageManifest> {
        self.outputs.sort();
        self.outputs.dedup();
        let mut outputs = BTreeMap::new();
        for rel in &self.outputs {
            outputs.insert(rel.clone(), sha256_file(&self.path(rel))?);
        }
        let m = StageManifest {
            stage,
            version: VERSION.to_owned(),
            config_hash: self.config.config_hash()?,
            seed: self.config.seed,
            inputs: self.inputs,
            outputs,
        };
        write_atomic(&manifest_path(self.root, stage), &to_json_pretty(&m)?)?;
        Ok(m)
    }
}

/// Runs one stage and returns the manifest it wrote.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<StageManifest> {
    config.validate()?;
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    info!("stage {stage} -> {}", config.out.display());
    let mut ctx = Ctx::new(config);
    match stage {
        Stage::Synth => synth(&mut ctx)?,
        Stage::Ingest => ingest(&mut ctx)?,
        Stage::Embed => embed(&mut ctx)?,
        Stage::Graph => graph(&mut ctx)?,
        Stage::Train => train(&mut ctx)?,
        Stage::Eval => eval(&mut ctx)?,
        Stage::Discover => discover(&mut ctx)?,
        Stage::Report => report(&mut ctx)?,
    }
    ctx.finish(stage)
}

/// Every stage in order; `synth` is skipped when both inputs are external.
pub fn run_all(config: &PipelineConfig) -> Result<Vec<StageManifest>> {
    Stage::ALL
        .into_iter()
        .filter(|&s| s != Stage::Synth || config.uses_synth())
        .map(|s| run_stage(s, config))
        .collect()
}

fn synth(ctx: &mut Ctx) -> Result<()> {
    let corpus = generate_corpus(&ctx.config.synth_config())?;
    corpus.write(&ctx.path("synth"))?;
    for f in [CLAIMS_FILE, LABELS_FILE, PLANTED_FILE] {
        ctx.outputs.push(format!("synth/{f}"));
    }
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    rows_read: usize,
    malformed_rows: usize,
    patients: usize,
    visits: usize,
    drugs: usize,
    diseases: usize,
}

fn ingest(ctx: &mut Ctx) -> Result<()> {
    let path = ctx.claims_path()?;
    let ingested = ingest_claims(&path, ClaimsFormat::from_path(&path))?;
    let (dv, sv) = build_vocabularies(&ingested.records)?;
    let summary = IngestSummary {
        rows_read: ingested.rows_read,
        malformed_rows: ingested.malformed_rows,
        patients: ingested.records.len(),
        visits: ingested.records.iter().map(|r| r.visits.len()).sum(),
        drugs: dv.len(),
        diseases: sv.len(),
    };
    ctx.write("ingest/records.json", &serde_json::to_vec(&ingested.records)?)?;
    ctx.write("ingest/drug.vocab", dv.to_sidecar().as_bytes())?;
    ctx.write("ingest/disease.vocab", sv.to_sidecar().as_bytes())?;
    ctx.write("ingest/summary.json", &to_json_pretty(&summary)?)
}

fn embed(ctx: &mut Ctx) -> Result<()> {
    let records = ctx.records()?;
    let dv = ctx.vocab(NodeKind::Drug)?;
    let sv = ctx.vocab(NodeKind::Disease)?;
    let sg = ctx.config.skipgram_config();
    let run = |vocab: &CodeVocabulary| -> Result<EmbeddingTable> { train_embeddings(&build_corpus(&records, vocab)?, vocab, &sg) };
    let (de, se) = rayon::join(|| run(&dv), || run(&sv));
    for (table, vocab) in [(de?, &dv), (se?, &sv)] {
        let rel = format!("embed/{}.emb", vocab.kind);
        table.save(&ctx.path(&rel), vocab)?;
        let side = sidecar_path(Path::new(&rel)).display().to_string();
        ctx.outputs.push(rel);
        ctx.outputs.push(side);
    }
    Ok(())
}

fn load_embedding(ctx: &mut Ctx, kind: NodeKind) -> Result<(EmbeddingTable, CodeVocabulary)> {
    let rel = format!("embed/{kind}.emb");
    ctx.require(Stage::Embed, &sidecar_path(Path::new(&rel)).display().to_string())?;
    let p = ctx.require(Stage::Embed, &rel)?;
    EmbeddingTable::load(&p)
}

fn graph(ctx: &mut Ctx) -> Result<()> {
    let records = ctx.records()?;
    let (de, dv) = load_embedding(ctx, NodeKind::Drug)?;
    let (se, sv) = load_embedding(ctx, NodeKind::Disease)?;
    let denc = CategoryEncoder::fit(NodeKind::Drug, dv.codes())?;
    let senc = CategoryEncoder::fit(NodeKind::Disease, sv.codes())?;
    let inputs = GraphInputs {
        drug_vocab: &dv,
        dis_vocab: &sv,
        drug_embedding: &de,
        dis_embedding: &se,
        drug_encoder: &denc,
        dis_encoder: &senc,
        records: &records,
    };
    for &profile in &ctx.config.profiles {
        let gc = GraphConfig {
            sparsity_profile: profile,
            ..ctx.config.graph.clone()
        };
        let g = build_graph(&inputs, &gc)?;
        let dir = format!("graph/{}", profile.as_str());
        g.save(&ctx.path(&dir), &gc)?;
        for name in DrugDiseaseGraph::file_names() {
            ctx.outputs.push(format!("{dir}/{name}"));
        }
        ctx.write(&format!("{dir}/stats.json"), &to_json_pretty(&graph_stats(&g))?)?;
    }
    Ok(())
}

fn scores_csv(set: &LabeledPairSet, scores: &[f64], drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> String {
    let mut out = format!("{SCORES_HEADER}\n");
    for (p, s) in set.pairs.iter().zip(scores) {
        out.push_str(&format!(
            "{},{},{s}\n",
            drugs.code(p.drug).unwrap_or("?"),
            diseases.code(p.disease).unwrap_or("?")
        ));
    }
    out
}

fn parse_scores(path: &Path, text: &str, set: &LabeledPairSet, drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some(SCORES_HEADER) {
        return Err(Error::format(path, "bad header"));
    }
    let mut out = Vec::with_capacity(set.len());
    for (n, (line, p)) in lines.zip(&set.pairs).enumerate() {
        let bad = || Error::format(path, format!("line {}: does not match train/pairs.csv", n + 2));
        let mut f = line.split(',');
        let (d, s, y) = (f.next(), f.next(), f.next());
        if d != drugs.code(p.drug) || s != diseases.code(p.disease) {
            return Err(bad());
        }
        out.push(y.and_then(|y| y.parse::<f64>().ok()).ok_or_else(bad)?);
    }
    if out.len() != set.len() {
        return Err(Error::format(path, format!("{} scores for {} pairs", out.len(), set.len())));
    }
    Ok(out)
}

fn train(ctx: &mut Ctx) -> Result<()> {
    let dv = ctx.vocab(NodeKind::Drug)?;
    let sv = ctx.vocab(NodeKind::Disease)?;
    let labels = load_labels(&ctx.labels_path()?)?;
    let index = LabelIndex::new(&labels, &dv, &sv);
    if index.dropped > 0 {
        info!("{} label rows name codes absent from the claims", index.dropped);
    }
    let classes = disease_classes(&sv)?;
    let seed = ctx.config.split_seed();
    let set = build_labeled_set(&index, &classes, ctx.config.ratios, seed, seed)?;
    ctx.write("train/pairs.csv", set.to_csv(&dv, &sv)?.as_bytes())?;

    let mut graphs = BTreeMap::new();
    for &profile in &ctx.config.profiles {
        let g = ctx.graph(profile)?;
        let t = GraphTensors::new(&g, ctx.config.gnn.self_loop_weight)?;
        graphs.insert(profile, (g, t));
    }
    let all_pairs: Vec<(usize, usize)> = set.pairs.iter().map(|p| (p.drug, p.disease)).collect();
    let config = ctx.config;
    let root = ctx.root;
    let written: Vec<Vec<String>> = config
        .jobs()
        .par_iter()
        .map(|job| -> Result<Vec<String>> {
            let (g, t) = &graphs[&job.profile];
            let tc = TrainConfig {
                model: job.model,
                sparsity_profile: job.profile,
                seed: config.train_seed(job.k),
                ..config.train.clone()
            };
            let outcome = train_model(&tc, &config.gnn, g, t, &set)?;
            let scores = outcome.model.predict(t, &all_pairs)?;
            let dir = job.dir();
            let meta = RunMeta {
                model: job.model,
                profile: job.profile,
                k: job.k,
                seed: tc.seed,
                best_epoch: outcome.best_epoch,
                epochs_run: outcome.history.len(),
                history: outcome.history.clone(),
            };
            let mut files = vec![format!("{dir}/run.json"), format!("{dir}/scores.csv")];
            write_atomic(&root.join(&files[0]), &to_json_pretty(&meta)?)?;
            write_atomic(&root.join(&files[1]), scores_csv(&set, &scores, &dv, &sv).as_bytes())?;
            if let TrainedModel::Gnn(m) = &outcome.model {
                let ckpt = format!("{dir}/model.ckpt");
                save_checkpoint(&root.join(&ckpt), m)?;
                files.push(ckpt);
            }
            info!("trained {} {} k={} best epoch {}", job.model, job.profile.as_str(), job.k, outcome.best_epoch);
            Ok(files)
        })
        .collect::<Result<_>>()?;
    ctx.outputs.extend(written.into_iter().flatten());
    Ok(())
}

fn load_runs(ctx: &mut Ctx, set: &LabeledPairSet, dv: &CodeVocabulary, sv: &CodeVocabulary) -> Result<Vec<(RunMeta, Vec<f64>)>> {
    let metas: Vec<String> = ctx
        .producer_outputs(Stage::Train)?
        .into_iter()
        .filter(|p| p.starts_with("train/runs/") && p.ends_with("/run.json"))
        .collect();
    let mut runs = Vec::new();
    for rel in metas {
        let mp = ctx.require(Stage::Train, &rel)?;
        let meta: RunMeta = serde_json::from_str(&read_string(&mp)?)?;
        let srel = rel.replace("/run.json", "/scores.csv");
        let sp = ctx.require(Stage::Train, &srel)?;
        let scores = parse_scores(&sp, &read_string(&sp)?, set, dv, sv)?;
        runs.push((meta, scores));
    }
    runs.sort_by_key(|(m, _)| (m.profile, m.model, m.k));
    Ok(runs)
}

fn eval(ctx: &mut Ctx) -> Result<()> {
    let dv = ctx.vocab(NodeKind::Drug)?;
    let sv = ctx.vocab(NodeKind::Disease)?;
    let set = ctx.pairs(&dv, &sv)?;
    let runs = load_runs(ctx, &set, &dv, &sv)?;
    if runs.is_empty() {
        return Err(Error::NoRuns(ctx.path("train/runs")));
    }
    let results: Vec<RunResult> = runs
        .iter()
        .map(|(m, s)| evaluate_scores(m.model, m.profile, m.seed, (m.best_epoch, m.epochs_run), &set, s))
        .collect::<Result<_>>()?;
    let report = aggregate(&results);
    ctx.write("eval/runs.json", &to_json_pretty(&results)?)?;
    ctx.write("eval/report.json", &to_json_pretty(&report)?)?;
    ctx.write("eval/report.txt", report.to_table().as_bytes())
}

fn discover(ctx: &mut Ctx) -> Result<()> {
    let rp = ctx.require(Stage::Eval, "eval/report.json")?;
    let report: EvalReport = serde_json::from_str(&read_string(&rp)?)?;
    // highest mean AUROC among graph models; first row wins ties
    let best = report
        .rows
        .iter()
        .filter(|r| r.model.is_gnn())
        .filter_map(|r| r.auroc.map(|a| (a.mean, r)))
        .fold(None::<(f64, &crate::train::ReportRow)>, |acc, (a, r)| match acc {
            Some((b, _)) if b >= a => acc,
            _ => Some((a, r)),
        })
        .map(|(_, r)| (r.model, r.profile))
        .ok_or_else(|| Error::NoRuns(rp.clone()))?;
    let dv = ctx.vocab(NodeKind::Drug)?;
    let sv = ctx.vocab(NodeKind::Disease)?;
    let set = ctx.pairs(&dv, &sv)?;
    let k = 0;
    let mut scores_of = |model: ModelKind, profile: SparsityProfile| -> Result<Vec<f64>> {
        let rel = format!("{}/scores.csv", Job { model, profile, k }.dir());
        let p = ctx.require(Stage::Train, &rel)?;
        parse_scores(&p, &read_string(&p)?, &set, &dv, &sv)
    };
    let gnn = scores_of(best.0, best.1)?;
    let nn = scores_of(ModelKind::Nn, SparsityProfile::Low)?;
    let d = &ctx.config.discover;
    let cands = discover_candidates(&set, &gnn, &nn, d.threshold, d.scope)?;
    let source = CandidateSource {
        model: best.0,
        profile: best.1,
        k,
        threshold: d.threshold,
        scope: d.scope,
        count: cands.len(),
    };
    ctx.write("discover/candidates.csv", candidates_to_csv(&cands, &dv, &sv).as_bytes())?;
    ctx.write("discover/source.json", &to_json_pretty(&source)?)
}

fn report(ctx: &mut Ctx) -> Result<()> {
    let rp = ctx.require(Stage::Eval, "eval/report.json")?;
    let report: EvalReport = serde_json::from_str(&read_string(&rp)?)?;
    if report.rows.is_empty() {
        return Err(Error::NoRuns(rp));
    }
    let sp = ctx.require(Stage::Discover, "discover/source.json")?;
    let source: CandidateSource = serde_json::from_str(&read_string(&sp)?)?;
    let cp = ctx.require(Stage::Discover, "discover/candidates.csv")?;
    let candidates = read_string(&cp)?;
    let text = format!(
        "{}\nCandidates: {} from {} ({}), threshold {}\n{}",
        report.to_table(),
        source.count,
        source.model.display_name(),
        source.profile.as_str(),
        source.threshold,
        candidates
    );
    ctx.write("report/report.txt", text.as_bytes())?;
    ctx.write("report/candidates.csv", candidates.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn toml_roundtrip_and_sections() {
        let c = PipelineConfig::from_toml_str("seed = 3\n[gnn]\nhidden_dim = 16\n[train]\nepochs = 4\n").unwrap();
        assert_eq!((c.seed, c.gnn.hidden_dim, c.train.epochs), (3, 16, 4));
        let back = PipelineConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = PipelineConfig::from_toml_str("[train]\nepoch = 3\n").unwrap_err();
        assert!(e.is_validation());
    }

    #[test]
    fn config_hash_ignores_out() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            out: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let c = PipelineConfig { seed: 8, ..a.clone() };
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn baselines_only_on_low() {
        let c = PipelineConfig {
            seeds: 2,
            ..PipelineConfig::default()
        };
        let jobs = c.jobs();
        assert_eq!(jobs.len(), 2 * (5 + 3));
        assert!(jobs.iter().all(|j| j.model.is_gnn() || j.profile == SparsityProfile::Low));
    }

    #[test]
    fn validation_errors() {
        for c in [
            PipelineConfig { seeds: 0, ..Default::default() },
            PipelineConfig { models: vec![], ..Default::default() },
            PipelineConfig { ratios: [0.5, 0.5, 0.5], ..Default::default() },
        ] {
            assert!(c.validate().unwrap_err().is_validation());
        }
    }

    #[test]
    fn stage_names_roundtrip() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("all".parse::<Stage>().is_err());
    }
}
