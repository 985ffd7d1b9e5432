//! GCN, GAT and per-edge-type GCN encoders with a bilinear pair decoder.
//!
//! Node rows are stacked drugs first, then diseases: disease `j` sits at
//! global row `n_drug + j`. Layer 0 maps each kind's features into
//! `hidden_dim` with its own affine map and a ReLU. Message passing layers
//! follow, and pairs are scored with `sigmoid(z_drug^T W_p z_dis + b)`.

mod checkpoint;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{DrugDiseaseGraph, EdgeKind};
use crate::tape::{Gradients, Segments, SparseRows, Tape, Var, sigmoid};
use crate::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint};

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Gcn,
    Gat,
    Adrgcn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Gcn, Variant::Gat, Variant::Adrgcn];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gcn => "gcn",
            Variant::Gat => "gat",
            Variant::Adrgcn => "adrgcn",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Variant::Gcn => 0,
            Variant::Gat => 1,
            Variant::Adrgcn => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.tag() == t)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GnnConfig {
    pub variant: Variant,
    pub layers: usize,
    pub hidden_dim: usize,
    pub gat_heads: Vec<usize>,
    pub self_loop_weight: f64,
    /// Apply the ReLU after the last message passing layer too.
    pub final_activation: bool,
    pub seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            variant: Variant::Gcn,
            layers: 2,
            hidden_dim: 300,
            gat_heads: vec![4, 4],
            self_loop_weight: 1.0,
            final_activation: true,
            seed: 0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 {
            return bad("layers must be at least 1".into());
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1".into());
        }
        if !(self.self_loop_weight.is_finite() && self.self_loop_weight >= 0.0) {
            return bad(format!("self_loop_weight must be finite and >= 0, got {}", self.self_loop_weight));
        }
        if self.variant == Variant::Gat {
            if self.gat_heads.len() != self.layers {
                return bad(format!(
                    "gat_heads has {} entries but layers = {}",
                    self.gat_heads.len(),
                    self.layers
                ));
            }
            for (l, &h) in self.gat_heads.iter().enumerate() {
                if h == 0 {
                    return bad(format!("layer {l} has zero attention heads"));
                }
                if l + 1 < self.layers && self.hidden_dim % h != 0 {
                    return bad(format!("hidden_dim {} is not divisible by {h} heads at layer {l}", self.hidden_dim));
                }
            }
        }
        Ok(())
    }

    fn head_dim(&self, layer: usize) -> usize {
        if layer + 1 == self.layers {
            self.hidden_dim
        } else {
            self.hidden_dim / self.gat_heads[layer]
        }
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnParams {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl GnnParams {
    pub(crate) fn from_parts(names: Vec<String>, tensors: Vec<Array2<f64>>) -> Self {
        assert_eq!(names.len(), tensors.len());
        GnnParams { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.tensors.iter_mut().collect()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| t.dim()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }
}

/// Homogeneous partitions name their weight after the edge kind.
fn partition_param(layer: usize, kind: EdgeKind) -> String {
    format!("layer{layer}.w_{}", kind.as_str())
}

fn parameter_layout(config: &GnnConfig, f_drug: usize, f_dis: usize) -> Vec<(String, (usize, usize))> {
    let h = config.hidden_dim;
    let mut out = vec![
        ("in_drug.w".to_string(), (f_drug, h)),
        ("in_drug.b".to_string(), (1, h)),
        ("in_dis.w".to_string(), (f_dis, h)),
        ("in_dis.b".to_string(), (1, h)),
    ];
    for l in 0..config.layers {
        match config.variant {
            Variant::Gcn => out.push((format!("layer{l}.w"), (h, h))),
            Variant::Adrgcn => {
                out.push((format!("layer{l}.w_self"), (h, h)));
                for kind in EdgeKind::ALL {
                    out.push((partition_param(l, kind), (h, h)));
                }
            }
            Variant::Gat => {
                let hd = config.head_dim(l);
                for k in 0..config.gat_heads[l] {
                    out.push((format!("layer{l}.head{k}.w"), (h, hd)));
                    out.push((format!("layer{l}.head{k}.a_dst"), (hd, 1)));
                    out.push((format!("layer{l}.head{k}.a_src"), (hd, 1)));
                    out.push((format!("layer{l}.head{k}.bias"), (1, 1)));
                }
            }
        }
    }
    out.push(("decoder.w".to_string(), (h, h)));
    out.push(("decoder.b".to_string(), (1, 1)));
    out
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b") || name.ends_with(".bias")
}

/// Precomputed propagation operators for one graph.
#[derive(Debug, Clone)]
pub struct GraphTensors {
    pub n_drug: usize,
    pub n_dis: usize,
    pub x_drug: Array2<f64>,
    pub x_dis: Array2<f64>,
    /// Unweighted degree of every node, self-loop included.
    pub degree: Vec<usize>,
    /// Full normalized adjacency with self-loops.
    adj: Arc<SparseRows>,
    /// Diagonal self-loop part of `adj`.
    self_loops: Arc<SparseRows>,
    /// Off-diagonal part of `adj` restricted to each partition.
    partitions: Vec<(EdgeKind, Arc<SparseRows>)>,
    /// Incoming neighbor lists (self first) for attention.
    segments: Arc<Segments>,
}

pub fn gcn_alpha(w: f64, d_i: usize, d_j: usize) -> f64 {
    w / ((d_i * d_j) as f64).sqrt()
}

impl GraphTensors {
    pub fn new(graph: &DrugDiseaseGraph, self_loop_weight: f64) -> Result<Self> {
        let (nd, ns) = (graph.n_drug, graph.n_dis);
        if graph.features_drug.nrows() != nd || graph.features_dis.nrows() != ns {
            return Err(Error::Shape(format!(
                "feature rows {}/{} do not match node counts {nd}/{ns}",
                graph.features_drug.nrows(),
                graph.features_dis.nrows()
            )));
        }
        let n = nd + ns;
        let mut directed: Vec<(EdgeKind, Vec<(usize, usize, f64)>)> = Vec::new();
        for kind in EdgeKind::ALL {
            let (oi, oj, ni, nj) = match kind {
                EdgeKind::DrugDrug => (0, 0, nd, nd),
                EdgeKind::DisDis => (nd, nd, ns, ns),
                EdgeKind::DrugDis => (0, nd, nd, ns),
            };
            let mut list = Vec::new();
            for e in &graph.partition(kind).edges {
                if e.i >= ni || e.j >= nj {
                    return Err(Error::Shape(format!("{} edge ({}, {}) out of range", kind.as_str(), e.i, e.j)));
                }
                let (a, b) = (oi + e.i, oj + e.j);
                if a == b {
                    continue;
                }
                list.push((a, b, e.w));
                list.push((b, a, e.w));
            }
            directed.push((kind, list));
        }
        let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (_, list) in &directed {
            for &(a, b, _) in list {
                neighbors[a].insert(b);
            }
        }
        let degree: Vec<usize> = neighbors.iter().map(|s| s.len() + 1).collect();
        let norm = |list: &[(usize, usize, f64)]| -> Vec<(usize, usize, f64)> {
            list.iter().map(|&(a, b, w)| (a, b, gcn_alpha(w, degree[a], degree[b]))).collect()
        };
        let self_trip: Vec<(usize, usize, f64)> =
            (0..n).map(|i| (i, i, gcn_alpha(self_loop_weight, degree[i], degree[i]))).collect();
        let mut all = self_trip.clone();
        let mut partitions = Vec::new();
        for (kind, list) in &directed {
            let t = norm(list);
            all.extend_from_slice(&t);
            partitions.push((*kind, Arc::new(SparseRows::from_triplets(n, n, &t))));
        }
        let seg_lists: Vec<Vec<usize>> = neighbors
            .iter()
            .enumerate()
            .map(|(i, s)| std::iter::once(i).chain(s.iter().copied()).collect())
            .collect();
        Ok(GraphTensors {
            n_drug: nd,
            n_dis: ns,
            x_drug: graph.features_drug.clone(),
            x_dis: graph.features_dis.clone(),
            degree,
            adj: Arc::new(SparseRows::from_triplets(n, n, &all)),
            self_loops: Arc::new(SparseRows::from_triplets(n, n, &self_trip)),
            partitions,
            segments: Arc::new(Segments::from_neighbors(&seg_lists)),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_drug + self.n_dis
    }

    /// Dense normalized adjacency including self-loops.
    pub fn normalized_adjacency(&self) -> Array2<f64> {
        self.adj.to_dense()
    }

    pub fn segments(&self) -> &Segments {
        &self.segments
    }
}

/// Softmax attention of node `i` over its neighbors given already projected
/// rows `wz_i` and `wz_neighbors`.
pub fn gat_alpha(
    wz_i: ArrayView1<f64>,
    wz_neighbors: &[ArrayView1<f64>],
    a_dst: ArrayView1<f64>,
    a_src: ArrayView1<f64>,
    bias: f64,
) -> Vec<f64> {
    let left = a_dst.dot(&wz_i);
    let scores: Vec<f64> = wz_neighbors
        .iter()
        .map(|z| {
            let e = left + a_src.dot(z) + bias;
            if e > 0.0 { e } else { LEAKY_SLOPE * e }
        })
        .collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn bilinear_score(z_drug: ArrayView1<f64>, z_dis: ArrayView1<f64>, w_p: ArrayView2<f64>, b: f64) -> f64 {
    sigmoid(z_drug.dot(&w_p.dot(&z_dis)) + b)
}

/// Attention coefficients per layer and head, one entry per edge of
/// [`GraphTensors::segments`].
#[derive(Debug, Clone)]
pub struct AttentionMaps {
    pub layers: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: GnnConfig,
    pub params: GnnParams,
}

struct Forward {
    vars: Vec<Var>,
    z: Var,
    attention: Vec<Vec<Var>>,
}

impl GnnModel {
    /// Glorot-uniform weights and zero biases from `config.seed`.
    pub fn init(config: &GnnConfig, f_drug: usize, f_dis: usize) -> Result<Self> {
        config.validate()?;
        if f_drug == 0 || f_dis == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, (r, c)) in parameter_layout(config, f_drug, f_dis) {
            let t = if is_bias(&name) {
                Array2::zeros((r, c))
            } else {
                let limit = (6.0 / (r + c) as f64).sqrt();
                Array2::from_shape_simple_fn((r, c), || rng.random_range(-limit..limit))
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(GnnModel {
            config: config.clone(),
            params: GnnParams { names, tensors },
        })
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        (self.param("in_drug.w").nrows(), self.param("in_dis.w").nrows())
    }

    fn param(&self, name: &str) -> &Array2<f64> {
        self.params.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Checks that parameters and graph agree on shapes.
    pub fn check_compatible(&self, g: &GraphTensors) -> Result<()> {
        let expected = parameter_layout(&self.config, g.x_drug.ncols(), g.x_dis.ncols());
        let ok = expected.len() == self.params.len()
            && expected
                .iter()
                .zip(self.params.names.iter().zip(&self.params.tensors))
                .all(|((en, es), (n, t))| en == n && *es == t.dim());
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameters do not fit a graph with feature dims {}/{}",
                g.x_drug.ncols(),
                g.x_dis.ncols()
            )))
        }
    }

    fn build(&self, tape: &mut Tape, g: &GraphTensors) -> Forward {
        let vars: Vec<Var> = self.params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let p = |name: &str| vars[self.params.index_of(name).expect("parameter layout")];
        let relu_if = |tape: &mut Tape, v: Var, on: bool| if on { tape.relu(v) } else { v };

        let xd = tape.leaf(g.x_drug.clone());
        let xs = tape.leaf(g.x_dis.clone());
        let hd = tape.matmul(xd, p("in_drug.w"));
        let hd = tape.add_row(hd, p("in_drug.b"));
        let hd = tape.relu(hd);
        let hs = tape.matmul(xs, p("in_dis.w"));
        let hs = tape.add_row(hs, p("in_dis.b"));
        let hs = tape.relu(hs);
        let mut z = tape.concat_rows(&[hd, hs]);

        let mut attention = Vec::new();
        for l in 0..self.config.layers {
            let act = l + 1 < self.config.layers || self.config.final_activation;
            z = match self.config.variant {
                Variant::Gcn => {
                    let zw = tape.matmul(z, p(&format!("layer{l}.w")));
                    let agg = tape.spmm(&g.adj, zw);
                    relu_if(tape, agg, act)
                }
                Variant::Adrgcn => {
                    let zw = tape.matmul(z, p(&format!("layer{l}.w_self")));
                    let mut acc = tape.spmm(&g.self_loops, zw);
                    for (kind, m) in &g.partitions {
                        let zw = tape.matmul(z, p(&partition_param(l, *kind)));
                        let part = tape.spmm(m, zw);
                        acc = tape.add(acc, part);
                    }
                    relu_if(tape, acc, act)
                }
                Variant::Gat => {
                    let heads = self.config.gat_heads[l];
                    let mut outs = Vec::with_capacity(heads);
                    let mut alphas = Vec::with_capacity(heads);
                    for k in 0..heads {
                        let name = |s: &str| format!("layer{l}.head{k}.{s}");
                        let wz = tape.matmul(z, p(&name("w")));
                        let left = tape.matmul(wz, p(&name("a_dst")));
                        let right = tape.matmul(wz, p(&name("a_src")));
                        let e = tape.edge_scores(left, right, p(&name("bias")), &g.segments);
                        let e = tape.leaky_relu(e, LEAKY_SLOPE);
                        let alpha = tape.segment_softmax(e, &g.segments);
                        outs.push(tape.edge_aggregate(alpha, wz, &g.segments));
                        alphas.push(alpha);
                    }
                    attention.push(alphas);
                    let combined = if l + 1 < self.config.layers {
                        tape.concat_cols(&outs)
                    } else {
                        let mut acc = outs[0];
                        for &o in &outs[1..] {
                            acc = tape.add(acc, o);
                        }
                        tape.scale(acc, 1.0 / heads as f64)
                    };
                    relu_if(tape, combined, act)
                }
            };
        }
        Forward { vars, z, attention }
    }

    /// Final node embeddings, drugs then diseases.
    pub fn forward(&self, g: &GraphTensors) -> Array2<f64> {
        let mut tape = Tape::new();
        let f = self.build(&mut tape, g);
        tape.value(f.z).clone()
    }

    pub fn attention(&self, g: &GraphTensors) -> AttentionMaps {
        let mut tape = Tape::new();
        let f = self.build(&mut tape, g);
        AttentionMaps {
            layers: f
                .attention
                .iter()
                .map(|heads| heads.iter().map(|&a| tape.value(a).iter().copied().collect()).collect())
                .collect(),
        }
    }

    fn logits(&self, tape: &mut Tape, f: &Forward, g: &GraphTensors, pairs: &[(usize, usize)]) -> Var {
        let di = Arc::new(pairs.iter().map(|&(d, _)| d).collect::<Vec<_>>());
        let si = Arc::new(pairs.iter().map(|&(_, s)| g.n_drug + s).collect::<Vec<_>>());
        let zd = tape.gather_rows(f.z, &di);
        let zs = tape.gather_rows(f.z, &si);
        let wp = f.vars[self.params.index_of("decoder.w").expect("decoder")];
        let b = f.vars[self.params.index_of("decoder.b").expect("decoder")];
        let zdw = tape.matmul(zd, wp);
        let dot = tape.row_dot(zdw, zs);
        tape.add_row(dot, b)
    }

    fn check_pairs(g: &GraphTensors, pairs: &[(usize, usize)]) -> Result<()> {
        for &(d, s) in pairs {
            if d >= g.n_drug {
                return Err(Error::UnknownId {
                    kind: crate::NodeKind::Drug,
                    id: d,
                    size: g.n_drug,
                });
            }
            if s >= g.n_dis {
                return Err(Error::UnknownId {
                    kind: crate::NodeKind::Disease,
                    id: s,
                    size: g.n_dis,
                });
            }
        }
        Ok(())
    }

    /// Probabilities for `(drug, disease)` pairs.
    pub fn predict(&self, g: &GraphTensors, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        self.check_compatible(g)?;
        Self::check_pairs(g, pairs)?;
        let mut tape = Tape::new();
        let f = self.build(&mut tape, g);
        let z = self.logits(&mut tape, &f, g, pairs);
        Ok(tape.value(z).iter().map(|&x| sigmoid(x)).collect())
    }

    /// Mean cross-entropy over `pairs` and its gradient for every parameter,
    /// in parameter order.
    pub fn loss_and_gradients(
        &self,
        g: &GraphTensors,
        pairs: &[(usize, usize)],
        labels: &[f64],
    ) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check_compatible(g)?;
        Self::check_pairs(g, pairs)?;
        if pairs.len() != labels.len() {
            return Err(Error::Shape(format!("{} pairs but {} labels", pairs.len(), labels.len())));
        }
        let mut tape = Tape::new();
        let f = self.build(&mut tape, g);
        let z = self.logits(&mut tape, &f, g, pairs);
        let loss = tape.bce_with_logits(z, &Arc::new(labels.to_vec()));
        let grads: Gradients = tape.backward(loss);
        let out = f
            .vars
            .iter()
            .zip(&self.params.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t.dim()))
            .collect();
        Ok((tape.scalar(loss), out))
    }

    pub fn loss(&self, g: &GraphTensors, pairs: &[(usize, usize)], labels: &[f64]) -> Result<f64> {
        let p = self.predict(g, pairs)?;
        let n = labels.len().max(1) as f64;
        Ok(p.iter().zip(labels).map(|(&p, &y)| crate::tape::bce(p, y)).sum::<f64>() / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgePartition, ResolvedParams, SparsityProfile};
    use ndarray::array;

    pub(crate) fn tiny_graph() -> DrugDiseaseGraph {
        let part = |kind, edges: Vec<(usize, usize, f64)>| EdgePartition {
            kind,
            edges: edges.into_iter().map(|(i, j, w)| Edge { i, j, w }).collect(),
        };
        DrugDiseaseGraph {
            n_drug: 3,
            n_dis: 2,
            drug_drug: part(EdgeKind::DrugDrug, vec![(0, 1, 0.5)]),
            dis_dis: part(EdgeKind::DisDis, vec![]),
            drug_dis: part(EdgeKind::DrugDis, vec![(0, 0, 0.8), (2, 1, 0.3), (1, 0, 1.0)]),
            features_drug: array![[1.0, 0.0, 0.5], [0.0, 1.0, -0.5], [0.3, 0.3, 0.3]],
            features_dis: array![[1.0, -1.0], [0.5, 0.25]],
            proximity_dim: 1,
            profile: SparsityProfile::Low,
            params: ResolvedParams {
                theta_drug: 1.0,
                theta_dis: 1.0,
                drug_threshold: 1.0,
                dis_threshold: 1.0,
                hetero_min_count: 1,
            },
        }
    }

    #[test]
    fn gcn_alpha_examples() {
        assert!((gcn_alpha(0.6, 4, 9) - 0.1).abs() < 1e-15);
        assert_eq!(gcn_alpha(1.0, 1, 1), 1.0);
        assert_eq!(gcn_alpha(0.0, 3, 5), 0.0);
    }

    #[test]
    fn gat_alpha_examples() {
        let z = array![1.0, 2.0];
        let a = array![0.3, -0.1];
        let same = [z.view(), z.view(), z.view()];
        for x in gat_alpha(z.view(), &same, a.view(), a.view(), 0.0) {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let big = array![1e6, 0.0];
        let small = array![0.0, 0.0];
        let al = gat_alpha(z.view(), &[small.view(), big.view()], a.view(), array![1.0, 0.0].view(), 0.0);
        assert_eq!(al, vec![0.0, 1.0]);
    }

    #[test]
    fn bilinear_examples() {
        let z = array![1.0, -2.0];
        let w0 = Array2::zeros((2, 2));
        assert_eq!(bilinear_score(z.view(), z.view(), w0.view(), 0.0), 0.5);
        assert_eq!(bilinear_score(z.view(), z.view(), w0.view(), 1e3), 1.0);
        let w = array![[1.0, 2.0], [3.0, 4.0]];
        let zero = array![0.0, 0.0];
        assert!((bilinear_score(zero.view(), z.view(), w.view(), 0.7) - sigmoid(0.7)).abs() < 1e-15);
    }

    #[test]
    fn degrees_include_self_loop() {
        let t = GraphTensors::new(&tiny_graph(), 1.0).unwrap();
        assert_eq!(t.degree, vec![3, 3, 2, 3, 2]);
        let a = t.normalized_adjacency();
        assert!((a[[0, 1]] - 0.5 / 3.0).abs() < 1e-15);
        assert!((a[[3, 0]] - 0.8 / 3.0).abs() < 1e-15);
        assert!((a[[2, 2]] - 0.5).abs() < 1e-15);
        assert_eq!(a, a.t());
    }

    #[test]
    fn self_loop_only_gcn_is_relu_of_input() {
        let mut g = tiny_graph();
        g.drug_drug.edges.clear();
        g.drug_dis.edges.clear();
        let t = GraphTensors::new(&g, 1.0).unwrap();
        let cfg = GnnConfig {
            layers: 1,
            hidden_dim: 4,
            ..GnnConfig::default()
        };
        let mut m = GnnModel::init(&cfg, 3, 2).unwrap();
        *m.params.get_mut("layer0.w").unwrap() = Array2::eye(4);
        let mut m0 = m.clone();
        m0.config.layers = 0;
        let z = m.forward(&t);
        let mut tape = Tape::new();
        let f = m0.build(&mut tape, &t);
        let z0 = tape.value(f.z).mapv(|x| x.max(0.0));
        assert!((z - z0).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn predict_is_probability_and_deterministic() {
        let t = GraphTensors::new(&tiny_graph(), 1.0).unwrap();
        for variant in Variant::ALL {
            let cfg = GnnConfig {
                variant,
                hidden_dim: 8,
                gat_heads: vec![2, 2],
                seed: 3,
                ..GnnConfig::default()
            };
            let m = GnnModel::init(&cfg, 3, 2).unwrap();
            let pairs = [(0, 0), (1, 1), (2, 0)];
            let p = m.predict(&t, &pairs).unwrap();
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
            assert_eq!(p, m.predict(&t, &pairs).unwrap());
            let (loss, grads) = m.loss_and_gradients(&t, &pairs, &[1.0, 0.0, 1.0]).unwrap();
            assert!((loss - m.loss(&t, &pairs, &[1.0, 0.0, 1.0]).unwrap()).abs() < 1e-12);
            assert_eq!(grads.len(), m.params.len());
        }
    }

    #[test]
    fn rejects_bad_config_and_ids() {
        let bad_heads = GnnConfig {
            variant: Variant::Gat,
            hidden_dim: 10,
            gat_heads: vec![4, 4],
            ..GnnConfig::default()
        };
        assert!(matches!(bad_heads.validate(), Err(Error::InvalidConfig(_))));
        let zero = GnnConfig {
            layers: 0,
            ..GnnConfig::default()
        };
        assert!(zero.validate().is_err());
        let t = GraphTensors::new(&tiny_graph(), 1.0).unwrap();
        let m = GnnModel::init(
            &GnnConfig {
                hidden_dim: 4,
                ..GnnConfig::default()
            },
            3,
            2,
        )
        .unwrap();
        assert!(matches!(m.predict(&t, &[(3, 0)]), Err(Error::UnknownId { .. })));
        let other = GnnModel::init(
            &GnnConfig {
                hidden_dim: 4,
                ..GnnConfig::default()
            },
            5,
            2,
        )
        .unwrap();
        assert!(matches!(other.predict(&t, &[(0, 0)]), Err(Error::Shape(_))));
    }
}
