//! Training loop with early stopping, evaluation and candidate mining.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use log::debug;
use ndarray::Array2;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{LogisticModel, MlpModel, NN_HIDDEN, check_pairs};
use crate::claims::CodeVocabulary;
use crate::gnn::{GnnConfig, GnnModel, GraphTensors, Variant};
use crate::graph::{DrugDiseaseGraph, SparsityProfile};
use crate::labels::{FrequencyClass, LabeledPair, LabeledPairSet, Split};
use crate::metrics::{MeanCi, auprc, auroc};
use crate::optim::Adam;
use crate::{Error, Result};

pub const CANDIDATE_THRESHOLD: f64 = 0.97;
pub const NN_EXCLUSION: f64 = 0.5;
pub const POSITIVE_CUTOFF: f64 = 0.5;
pub const CANDIDATE_HEADER: &str = "drug_code,icd10_code,gnn_prob,nn_prob";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Nn,
    Gcn,
    Gat,
    Adrgcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Lr, ModelKind::Nn, ModelKind::Gcn, ModelKind::Gat, ModelKind::Adrgcn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Nn => "nn",
            ModelKind::Gcn => "gcn",
            ModelKind::Gat => "gat",
            ModelKind::Adrgcn => "adrgcn",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::Nn => "NN",
            ModelKind::Gcn => "GCN",
            ModelKind::Gat => "GAT",
            ModelKind::Adrgcn => "adrGCN",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            ModelKind::Gcn => Some(Variant::Gcn),
            ModelKind::Gat => Some(Variant::Gat),
            ModelKind::Adrgcn => Some(Variant::Adrgcn),
            ModelKind::Lr | ModelKind::Nn => None,
        }
    }

    pub fn is_gnn(self) -> bool {
        self.variant().is_some()
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub sparsity_profile: SparsityProfile,
    pub epochs: usize,
    pub learning_rate: f64,
    pub early_stop_patience: usize,
    /// Pairs per optimizer step; `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub lr_l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Gcn,
            sparsity_profile: SparsityProfile::Low,
            epochs: 200,
            learning_rate: 1e-3,
            early_stop_patience: 10,
            batch_size: None,
            lr_l2: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.early_stop_patience == 0 {
            return bad("early_stop_patience must be at least 1");
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_l2.is_finite() && self.lr_l2 >= 0.0) {
            return bad("lr_l2 must be non-negative");
        }
        Ok(())
    }
}

/// A trained scorer of (drug, disease) pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Lr(LogisticModel),
    Nn(MlpModel),
    Gnn(GnnModel),
}

impl TrainedModel {
    pub fn init(kind: ModelKind, graph: &DrugDiseaseGraph, gnn: &GnnConfig, train: &TrainConfig) -> Result<Self> {
        let (fd, fs) = (graph.features_drug.ncols(), graph.features_dis.ncols());
        Ok(match kind.variant() {
            Some(variant) => TrainedModel::Gnn(GnnModel::init(
                &GnnConfig {
                    variant,
                    seed: train.seed,
                    ..gnn.clone()
                },
                fd,
                fs,
            )?),
            None if kind == ModelKind::Lr => TrainedModel::Lr(LogisticModel::new(graph, train.lr_l2)),
            None => TrainedModel::Nn(MlpModel::init(fd, fs, NN_HIDDEN, train.seed)),
        })
    }

    pub fn predict(&self, t: &GraphTensors, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        check_pairs(t, pairs)?;
        match self {
            TrainedModel::Lr(m) => Ok(m.predict(t, pairs)),
            TrainedModel::Nn(m) => Ok(m.predict(t, pairs)),
            TrainedModel::Gnn(m) => m.predict(t, pairs),
        }
    }

    fn loss_and_gradients(&self, t: &GraphTensors, pairs: &[(usize, usize)], labels: &[f64]) -> Result<(f64, Vec<Array2<f64>>)> {
        match self {
            TrainedModel::Lr(m) => Ok(m.loss_and_gradients(t, pairs, labels)),
            TrainedModel::Nn(m) => Ok(m.loss_and_gradients(t, pairs, labels)),
            TrainedModel::Gnn(m) => m.loss_and_gradients(t, pairs, labels),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            TrainedModel::Lr(m) => m.params.iter_mut().collect(),
            TrainedModel::Nn(m) => m.params.iter_mut().collect(),
            TrainedModel::Gnn(m) => m.params.tensors_mut(),
        }
    }

    fn shapes(&mut self) -> Vec<(usize, usize)> {
        self.params_mut().iter().map(|p| p.dim()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

fn pairs_and_labels<'a>(it: impl Iterator<Item = &'a LabeledPair>) -> (Vec<(usize, usize)>, Vec<f64>) {
    it.map(|p| ((p.drug, p.disease), f64::from(p.label))).unzip()
}

fn mean_bce(p: &[f64], y: &[f64]) -> f64 {
    p.iter().zip(y).map(|(&p, &y)| crate::tape::bce(p, y)).sum::<f64>() / y.len().max(1) as f64
}

/// Trains with Adam and keeps the parameters of the epoch with the best
/// validation AUROC, ties and single-class validation splits falling back
/// to validation loss.
pub fn train_model(
    config: &TrainConfig,
    gnn: &GnnConfig,
    graph: &DrugDiseaseGraph,
    tensors: &GraphTensors,
    set: &LabeledPairSet,
) -> Result<TrainOutcome> {
    config.validate()?;
    gnn.validate()?;
    let (train_pairs, train_labels) = pairs_and_labels(set.split(Split::Train));
    if train_pairs.is_empty() {
        return Err(Error::Inconsistent("training split is empty".into()));
    }
    let (val_pairs, val_labels) = pairs_and_labels(set.split(Split::Val));
    let val_bool: Vec<bool> = val_labels.iter().map(|&y| y > 0.5).collect();

    let mut model = TrainedModel::init(config.model, graph, gnn, config)?;
    let mut opt = Adam::new(config.learning_rate, &model.shapes());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11_7a11);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let batch = config.batch_size.unwrap_or(train_pairs.len()).min(train_pairs.len());

    let mut best: Option<((f64, f64), usize, TrainedModel)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        if batch < train_pairs.len() {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch) {
            let bp: Vec<(usize, usize)> = chunk.iter().map(|&i| train_pairs[i]).collect();
            let bl: Vec<f64> = chunk.iter().map(|&i| train_labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(tensors, &bp, &bl)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss * chunk.len() as f64;
            opt.step(&mut model.params_mut(), &grads);
        }
        let train_loss = loss_sum / train_pairs.len() as f64;

        let val_pred = model.predict(tensors, &val_pairs)?;
        let val_loss = mean_bce(&val_pred, &val_labels);
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        let val_auroc = auroc(&val_pred, &val_bool).ok();
        // AUROC first, validation loss breaks ties (small validation sets tie often)
        let score = (val_auroc.unwrap_or(f64::NEG_INFINITY), -val_loss);
        debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} auroc {val_auroc:?}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_auroc,
        });
        if best.as_ref().is_none_or(|(s, _, _)| score.0 > s.0 || (score.0 == s.0 && score.1 > s.1)) {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub n_pos: usize,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
}

pub fn split_metrics(pred: &[f64], labels: &[bool]) -> SplitMetrics {
    SplitMetrics {
        n: labels.len(),
        n_pos: labels.iter().filter(|&&l| l).count(),
        auroc: auroc(pred, labels).ok(),
        auprc: auprc(pred, labels).ok(),
    }
}

/// Positives predicted above [`POSITIVE_CUTOFF`] out of those considered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct HitCount {
    pub hits: usize,
    pub total: usize,
}

impl HitCount {
    pub fn accuracy(self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }
}

/// Metrics of one trained model on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub profile: SparsityProfile,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub test: SplitMetrics,
    /// Rare or post-marketing test positives.
    pub infrequent: HitCount,
    pub by_frequency: BTreeMap<FrequencyClass, HitCount>,
    pub split_sizes: BTreeMap<Split, usize>,
}

/// Test predictions aligned with `set.split(Split::Test)`.
pub fn predict_split(model: &TrainedModel, t: &GraphTensors, set: &LabeledPairSet, split: Split) -> Result<Vec<f64>> {
    let (pairs, _) = pairs_and_labels(set.split(split));
    model.predict(t, &pairs)
}

/// Fraction of infrequent test positives scored above the cutoff.
pub fn evaluate_rare(test: &[LabeledPair], pred: &[f64]) -> HitCount {
    let mut h = HitCount::default();
    for (p, &y) in test.iter().zip(pred) {
        if p.label == 1 && p.frequency.is_some_and(FrequencyClass::is_infrequent) {
            h.add(y > POSITIVE_CUTOFF);
        }
    }
    h
}

pub fn evaluate_run(
    kind: ModelKind,
    profile: SparsityProfile,
    seed: u64,
    outcome: &TrainOutcome,
    t: &GraphTensors,
    set: &LabeledPairSet,
) -> Result<RunResult> {
    let pred = predict_split(&outcome.model, t, set, Split::Test)?;
    let test: Vec<LabeledPair> = set.split(Split::Test).copied().collect();
    Ok(score_run(kind, profile, seed, (outcome.best_epoch, outcome.history.len()), &test, &pred, set.sizes()))
}

/// Same as [`evaluate_run`] but from saved scores aligned with `set.pairs`.
pub fn evaluate_scores(
    kind: ModelKind,
    profile: SparsityProfile,
    seed: u64,
    (best_epoch, epochs_run): (usize, usize),
    set: &LabeledPairSet,
    scores: &[f64],
) -> Result<RunResult> {
    if scores.len() != set.len() {
        return Err(Error::Shape(format!("{} scores for {} pairs", scores.len(), set.len())));
    }
    let (test, pred): (Vec<LabeledPair>, Vec<f64>) = set
        .pairs
        .iter()
        .zip(scores)
        .filter(|(p, _)| p.split == Split::Test)
        .map(|(p, &y)| (*p, y))
        .unzip();
    Ok(score_run(kind, profile, seed, (best_epoch, epochs_run), &test, &pred, set.sizes()))
}

fn score_run(
    kind: ModelKind,
    profile: SparsityProfile,
    seed: u64,
    (best_epoch, epochs_run): (usize, usize),
    test: &[LabeledPair],
    pred: &[f64],
    split_sizes: BTreeMap<Split, usize>,
) -> RunResult {
    let labels: Vec<bool> = test.iter().map(|p| p.label == 1).collect();
    let mut by_frequency: BTreeMap<FrequencyClass, HitCount> = BTreeMap::new();
    for (p, &y) in test.iter().zip(pred) {
        if let (1, Some(f)) = (p.label, p.frequency) {
            by_frequency.entry(f).or_default().add(y > POSITIVE_CUTOFF);
        }
    }
    RunResult {
        model: kind,
        profile,
        seed,
        best_epoch,
        epochs_run,
        test: split_metrics(pred, &labels),
        infrequent: evaluate_rare(test, pred),
        by_frequency,
        split_sizes,
    }
}

/// One model/profile row aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub profile: SparsityProfile,
    pub seeds: Vec<u64>,
    pub auroc: Option<MeanCi>,
    pub auprc: Option<MeanCi>,
    /// Infrequent-positive accuracy over all pairs of all seeds.
    pub infrequent_pooled: Option<f64>,
    /// Mean of per-seed infrequent-positive accuracies.
    pub infrequent_seed_mean: Option<f64>,
    pub by_frequency: BTreeMap<FrequencyClass, Option<f64>>,
    pub split_sizes: BTreeMap<Split, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub fn aggregate(runs: &[RunResult]) -> EvalReport {
    let mut groups: BTreeMap<(ModelKind, SparsityProfile), Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.model, r.profile)).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((model, profile), mut rs)| {
            rs.sort_by_key(|r| r.seed);
            let au: Vec<f64> = rs.iter().filter_map(|r| r.test.auroc).collect();
            let ap: Vec<f64> = rs.iter().filter_map(|r| r.test.auprc).collect();
            let mut pooled = HitCount::default();
            let mut per_seed = Vec::new();
            let mut freq: BTreeMap<FrequencyClass, HitCount> = BTreeMap::new();
            for r in &rs {
                pooled.hits += r.infrequent.hits;
                pooled.total += r.infrequent.total;
                per_seed.extend(r.infrequent.accuracy());
                for (f, h) in &r.by_frequency {
                    let e = freq.entry(*f).or_default();
                    e.hits += h.hits;
                    e.total += h.total;
                }
            }
            ReportRow {
                model,
                profile,
                seeds: rs.iter().map(|r| r.seed).collect(),
                auroc: MeanCi::from_values(&au),
                auprc: MeanCi::from_values(&ap),
                infrequent_pooled: pooled.accuracy(),
                infrequent_seed_mean: MeanCi::from_values(&per_seed).map(|c| c.mean),
                by_frequency: freq.into_iter().map(|(f, h)| (f, h.accuracy())).collect(),
                split_sizes: rs[0].split_sizes.clone(),
            }
        })
        .collect();
    EvalReport { rows }
}

fn fmt_ci(c: Option<MeanCi>) -> String {
    c.map_or_else(|| "n/a".to_string(), |c| format!("{:.3} ± {:.3}", c.mean, c.half_width))
}

impl EvalReport {
    /// Aligned text table, one row per model and profile.
    pub fn to_table(&self) -> String {
        let header = ["Model", "Profile", "AUROC", "AUPRC", "Infrequent acc", "Seeds"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.display_name().to_string(),
                    r.profile.as_str().to_string(),
                    fmt_ci(r.auroc),
                    fmt_ci(r.auprc),
                    r.infrequent_pooled.map_or_else(|| "n/a".to_string(), |a| format!("{a:.3}")),
                    r.seeds.len().to_string(),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: Vec<&str>| {
            let padded: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            format!("{}\n", padded.join("  ").trim_end())
        };
        let mut out = line(header.to_vec());
        out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect()));
        for row in &body {
            out.push_str(&line(row.iter().map(String::as_str).collect()));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CandidateScope {
    #[default]
    Test,
    AllLabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub drug: usize,
    pub disease: usize,
    pub gnn_prob: f64,
    pub nn_prob: f64,
}

/// Negative-labeled pairs the graph model scores above `threshold` while
/// the NN baseline does not call them positive. `gnn` and `nn` are aligned
/// with `set.pairs`.
pub fn discover_candidates(
    set: &LabeledPairSet,
    gnn: &[f64],
    nn: &[f64],
    threshold: f64,
    scope: CandidateScope,
) -> Result<Vec<CandidatePair>> {
    if gnn.len() != set.len() || nn.len() != set.len() {
        return Err(Error::Shape(format!(
            "{} pairs but {} graph and {} baseline scores",
            set.len(),
            gnn.len(),
            nn.len()
        )));
    }
    let mut out: Vec<CandidatePair> = set
        .pairs
        .iter()
        .zip(gnn.iter().zip(nn))
        .filter(|(p, _)| scope == CandidateScope::AllLabeled || p.split == Split::Test)
        .filter(|(p, (&g, &n))| p.label == 0 && g > threshold && n <= NN_EXCLUSION)
        .map(|(p, (&g, &n))| CandidatePair {
            drug: p.drug,
            disease: p.disease,
            gnn_prob: g,
            nn_prob: n,
        })
        .collect();
    out.sort_by(|a, b| b.gnn_prob.total_cmp(&a.gnn_prob).then((a.drug, a.disease).cmp(&(b.drug, b.disease))));
    Ok(out)
}

pub fn candidates_to_csv(cands: &[CandidatePair], drugs: &CodeVocabulary, diseases: &CodeVocabulary) -> String {
    let mut out = format!("{CANDIDATE_HEADER}\n");
    for c in cands {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            drugs.code(c.drug).unwrap_or("?"),
            diseases.code(c.disease).unwrap_or("?"),
            c.gnn_prob,
            c.nn_prob
        ));
    }
    out
}
