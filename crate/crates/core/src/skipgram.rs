//! Skip-gram with negative sampling over drug or disease code sequences.
//!
//! Each kind gets its own pair of tables (center and context vectors); the
//! center table is the embedding. Training is single-threaded and fully
//! determined by the config seed.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, weighted::WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::claims::{CodeSequence, CodeVocabulary};
use crate::io_util::{self, MatrixHeader};
use crate::{Error, NodeKind, Result};

const UNIGRAM_POWER: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipgramConfig {
    pub window: usize,
    pub dim: usize,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            window: 16,
            dim: 128,
            negatives_per_positive: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::InvalidConfig("skipgram.window must be >= 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidConfig("skipgram.dim must be >= 2".into()));
        }
        if self.negatives_per_positive < 1 {
            return Err(Error::InvalidConfig("skipgram.negatives_per_positive must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("skipgram.learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One row per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub kind: NodeKind,
    pub seed: u64,
    pub vectors: Array2<f64>,
}

impl EmbeddingTable {
    pub fn vocab_size(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn row(&self, id: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io_util::encode_matrix(
            MatrixHeader {
                kind: self.kind,
                rows: self.vocab_size(),
                cols: self.dim(),
                seed: self.seed,
            },
            &self.vectors,
        )
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (h, vectors) = io_util::decode_matrix(path, bytes)?;
        Ok(EmbeddingTable {
            kind: h.kind,
            seed: h.seed,
            vectors,
        })
    }

    /// Writes `<path>` (binary table) and `<path>.vocab` (row index to code).
    pub fn save(&self, path: &Path, vocab: &CodeVocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size() || vocab.kind != self.kind {
            return Err(Error::Inconsistent(format!(
                "{} table has {} rows but vocabulary has {}",
                self.kind,
                self.vocab_size(),
                vocab.len()
            )));
        }
        io_util::write_atomic(path, &self.to_bytes())?;
        io_util::write_atomic(&sidecar_path(path), vocab.to_sidecar().as_bytes())
    }

    pub fn load(path: &Path) -> Result<(Self, CodeVocabulary)> {
        let table = EmbeddingTable::from_bytes(path, &io_util::read_bytes(path)?)?;
        let side = sidecar_path(path);
        let vocab = CodeVocabulary::from_sidecar(table.kind, &side, &io_util::read_string(&side)?)?;
        if vocab.len() != table.vocab_size() {
            return Err(Error::format(&side, "row count differs from embedding table"));
        }
        Ok((table, vocab))
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab");
    s.into()
}

/// All (center, context) pairs within `window` positions of each other.
pub fn generate_pairs(seq: &CodeSequence, window: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let toks = &seq.tokens;
    let n = toks.len();
    (0..n).flat_map(move |t| {
        let lo = t.saturating_sub(window);
        let hi = (t + window).min(n.saturating_sub(1));
        (lo..=hi).filter(move |&j| j != t).map(move |j| (toks[t], toks[j]))
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `-ln σ(x)`, computed without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Loss and gradients of one positive pair and its negatives.
#[derive(Debug, Clone)]
pub struct SgnsGradients {
    pub loss: f64,
    pub center: Array1<f64>,
    pub context: Array1<f64>,
    pub negatives: Vec<Array1<f64>>,
}

/// `loss = -ln σ(u·v) - Σ ln σ(-u·v_neg)` and its gradient with respect to
/// the center vector `u`, the context vector `v` and each negative.
pub fn sgns_gradients(
    center: ArrayView1<f64>,
    context: ArrayView1<f64>,
    negatives: &[ArrayView1<f64>],
) -> SgnsGradients {
    let pos = center.dot(&context);
    let mut loss = neg_log_sigmoid(pos);
    let g_pos = sigmoid(pos) - 1.0;
    let mut d_center = &context * g_pos;
    let d_context = &center * g_pos;
    let mut d_negs = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = center.dot(neg);
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        d_center.scaled_add(g, neg);
        d_negs.push(&center * g);
    }
    SgnsGradients {
        loss,
        center: d_center,
        context: d_context,
        negatives: d_negs,
    }
}

/// Center and context tables for one kind.
#[derive(Debug, Clone)]
pub struct SgnsTables {
    pub center: Array2<f64>,
    pub context: Array2<f64>,
}

impl SgnsTables {
    /// Center rows uniform in `[-0.5/dim, 0.5/dim]`, context rows zero.
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half = 0.5 / dim as f64;
        let center = Array2::from_shape_simple_fn((vocab_size, dim), || rng.random_range(-half..half));
        SgnsTables {
            center,
            context: Array2::zeros((vocab_size, dim)),
        }
    }
}

/// One SGD step on a positive pair and its negatives; returns the loss
/// evaluated before the update.
pub fn sgns_step(tables: &mut SgnsTables, center: usize, context: usize, negatives: &[usize], lr: f64) -> f64 {
    let g = {
        let negs: Vec<_> = negatives.iter().map(|&n| tables.context.row(n)).collect();
        sgns_gradients(tables.center.row(center), tables.context.row(context), &negs)
    };
    let step = |mut row: ArrayViewMut1<f64>, grad: &Array1<f64>| row.scaled_add(-lr, grad);
    step(tables.context.row_mut(context), &g.context);
    for (&n, d) in negatives.iter().zip(&g.negatives) {
        step(tables.context.row_mut(n), d);
    }
    step(tables.center.row_mut(center), &g.center);
    g.loss
}

/// Trained table plus the mean pair loss of every epoch.
#[derive(Debug, Clone)]
pub struct SkipgramRun {
    pub table: EmbeddingTable,
    pub epoch_loss: Vec<f64>,
}

pub fn train_embeddings(corpus: &[CodeSequence], vocab: &CodeVocabulary, config: &SkipgramConfig) -> Result<EmbeddingTable> {
    Ok(train_with_history(corpus, vocab, config)?.table)
}

pub fn train_with_history(corpus: &[CodeSequence], vocab: &CodeVocabulary, config: &SkipgramConfig) -> Result<SkipgramRun> {
    config.validate()?;
    let corpus: Vec<&CodeSequence> = corpus.iter().filter(|s| s.tokens.len() >= 2).collect();
    if corpus.is_empty() || vocab.is_empty() {
        return Err(Error::EmptyInput("skip-gram corpus"));
    }
    let v = vocab.len();
    let mut counts = vec![0u64; v];
    for seq in &corpus {
        if seq.kind != vocab.kind {
            return Err(Error::Inconsistent("sequence kind differs from vocabulary".into()));
        }
        for &t in &seq.tokens {
            if t >= v {
                return Err(Error::UnknownId {
                    kind: vocab.kind,
                    id: t,
                    size: v,
                });
            }
            counts[t] += 1;
        }
    }

    let mut tables = SgnsTables::init(v, config.dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let noise = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(UNIGRAM_POWER)))
        .expect("corpus has at least one token");

    let pairs_per_epoch: usize = corpus.iter().map(|s| generate_pairs(s, config.window).count()).sum();
    let total = (pairs_per_epoch * config.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut negs = Vec::with_capacity(config.negatives_per_positive);
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut sum = 0.0;
        for seq in &corpus {
            for (c, ctx) in generate_pairs(seq, config.window) {
                negs.clear();
                for _ in 0..config.negatives_per_positive {
                    let n = noise.sample(&mut rng);
                    if n != ctx {
                        negs.push(n);
                    }
                }
                let lr = config.learning_rate * (1.0 - done as f64 / total).max(1e-4);
                sum += sgns_step(&mut tables, c, ctx, &negs, lr);
                done += 1;
            }
        }
        epoch_loss.push(sum / pairs_per_epoch.max(1) as f64);
    }

    Ok(SkipgramRun {
        table: EmbeddingTable {
            kind: vocab.kind,
            seed: config.seed,
            vectors: tables.center,
        },
        epoch_loss,
    })
}

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}
