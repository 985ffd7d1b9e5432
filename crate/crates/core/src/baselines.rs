//! Non-graph baselines: logistic regression over a node-plus-neighbors
//! feature vector, and a two-layer network over the two nodes' features.

use std::sync::Arc;

use ndarray::{Array2, s};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gnn::GraphTensors;
use crate::graph::{DrugDiseaseGraph, EdgeKind};
use crate::tape::{Tape, sigmoid};
use crate::Result;

pub const NEIGHBOR_SLOTS: usize = 10;
pub const NN_HIDDEN: usize = 300;

/// Top neighbors of every node by edge weight, as global row ids
/// (drugs first, then diseases).
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub n_drug: usize,
    pub top: Vec<Vec<usize>>,
}

impl NeighborTable {
    /// Neighbors from every partition ranked by weight descending; ties go to
    /// the lower global id, which puts drugs before diseases.
    pub fn new(graph: &DrugDiseaseGraph, slots: usize) -> Self {
        let nd = graph.n_drug;
        let mut all: Vec<Vec<(usize, f64)>> = vec![Vec::new(); graph.n_nodes()];
        for kind in EdgeKind::ALL {
            let (oi, oj) = match kind {
                EdgeKind::DrugDrug => (0, 0),
                EdgeKind::DisDis => (nd, nd),
                EdgeKind::DrugDis => (0, nd),
            };
            for e in &graph.partition(kind).edges {
                let (a, b) = (oi + e.i, oj + e.j);
                if a != b {
                    all[a].push((b, e.w));
                    all[b].push((a, e.w));
                }
            }
        }
        let top = all
            .into_iter()
            .map(|mut ns| {
                ns.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
                ns.dedup_by_key(|x| x.0);
                ns.into_iter().take(slots).map(|(j, _)| j).collect()
            })
            .collect();
        NeighborTable { n_drug: nd, top }
    }
}

/// Feature layout: `[x_drug | x_dis | drug neighbor slots | disease neighbor slots]`.
/// Every slot is `F_drug + F_dis` wide; a drug neighbor fills the first
/// segment and a disease neighbor the second. Unused slots stay zero.
pub fn lr_feature_width(f_drug: usize, f_dis: usize, slots: usize) -> usize {
    (f_drug + f_dis) * (1 + 2 * slots)
}

pub fn baseline_lr_features(
    pairs: &[(usize, usize)],
    tensors: &GraphTensors,
    neighbors: &NeighborTable,
    slots: usize,
) -> Array2<f64> {
    let (fd, fs) = (tensors.x_drug.ncols(), tensors.x_dis.ncols());
    let slot = fd + fs;
    let nd = tensors.n_drug;
    let mut out = Array2::zeros((pairs.len(), lr_feature_width(fd, fs, slots)));
    let put = |row: &mut ndarray::ArrayViewMut1<f64>, base: usize, node: usize| {
        if node < nd {
            row.slice_mut(s![base..base + fd]).assign(&tensors.x_drug.row(node));
        } else {
            row.slice_mut(s![base + fd..base + slot]).assign(&tensors.x_dis.row(node - nd));
        }
    };
    for (r, &(d, dis)) in pairs.iter().enumerate() {
        let mut row = out.row_mut(r);
        put(&mut row, 0, d);
        put(&mut row, 0, nd + dis);
        for (side, node) in [(0, d), (1, nd + dis)] {
            for (k, &nb) in neighbors.top[node].iter().take(slots).enumerate() {
                put(&mut row, slot * (1 + side * slots + k), nb);
            }
        }
    }
    out
}

fn glorot(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    let limit = (6.0 / (r + c) as f64).sqrt();
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-limit..limit))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub neighbors: NeighborTable,
    pub l2: f64,
    /// `[w (D x 1), b (1 x 1)]`
    pub params: Vec<Array2<f64>>,
}

impl LogisticModel {
    pub fn new(graph: &DrugDiseaseGraph, l2: f64) -> Self {
        let d = lr_feature_width(graph.features_drug.ncols(), graph.features_dis.ncols(), NEIGHBOR_SLOTS);
        LogisticModel {
            neighbors: NeighborTable::new(graph, NEIGHBOR_SLOTS),
            l2,
            params: vec![Array2::zeros((d, 1)), Array2::zeros((1, 1))],
        }
    }

    fn features(&self, t: &GraphTensors, pairs: &[(usize, usize)]) -> Array2<f64> {
        baseline_lr_features(pairs, t, &self.neighbors, NEIGHBOR_SLOTS)
    }

    pub fn predict(&self, t: &GraphTensors, pairs: &[(usize, usize)]) -> Vec<f64> {
        let z = self.features(t, pairs).dot(&self.params[0]) + self.params[1][[0, 0]];
        z.iter().map(|&x| sigmoid(x)).collect()
    }

    /// Mean cross-entropy plus `l2 * |w|^2`.
    pub fn loss_and_gradients(&self, t: &GraphTensors, pairs: &[(usize, usize)], labels: &[f64]) -> (f64, Vec<Array2<f64>>) {
        let mut tape = Tape::new();
        let x = tape.leaf(self.features(t, pairs));
        let w = tape.leaf(self.params[0].clone());
        let b = tape.leaf(self.params[1].clone());
        let xw = tape.matmul(x, w);
        let z = tape.add_row(xw, b);
        let ce = tape.bce_with_logits(z, &Arc::new(labels.to_vec()));
        let reg = tape.sum_squares(w);
        let reg = tape.scale(reg, self.l2);
        let loss = tape.add(ce, reg);
        let g = tape.backward(loss);
        let grads = [w, b]
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.get_or_zeros(v, p.dim()))
            .collect();
        (tape.scalar(loss), grads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// `[W1 (D x H), b1 (1 x H), W2 (H x 1), b2 (1 x 1)]`
    pub params: Vec<Array2<f64>>,
}

impl MlpModel {
    pub fn init(f_drug: usize, f_dis: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = f_drug + f_dis;
        MlpModel {
            params: vec![
                glorot(&mut rng, d, hidden),
                Array2::zeros((1, hidden)),
                glorot(&mut rng, hidden, 1),
                Array2::zeros((1, 1)),
            ],
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.params[0].ncols()
    }

    fn inputs(t: &GraphTensors, pairs: &[(usize, usize)]) -> Array2<f64> {
        let (fd, fs) = (t.x_drug.ncols(), t.x_dis.ncols());
        let mut x = Array2::zeros((pairs.len(), fd + fs));
        for (r, &(d, s)) in pairs.iter().enumerate() {
            x.slice_mut(s![r, ..fd]).assign(&t.x_drug.row(d));
            x.slice_mut(s![r, fd..]).assign(&t.x_dis.row(s));
        }
        x
    }

    fn forward(&self, tape: &mut Tape, t: &GraphTensors, pairs: &[(usize, usize)]) -> (Vec<crate::tape::Var>, crate::tape::Var) {
        let vars: Vec<_> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let x = tape.leaf(Self::inputs(t, pairs));
        let h = tape.matmul(x, vars[0]);
        let h = tape.add_row(h, vars[1]);
        let h = tape.relu(h);
        let z = tape.matmul(h, vars[2]);
        let z = tape.add_row(z, vars[3]);
        (vars, z)
    }

    pub fn predict(&self, t: &GraphTensors, pairs: &[(usize, usize)]) -> Vec<f64> {
        let mut tape = Tape::new();
        let (_, z) = self.forward(&mut tape, t, pairs);
        tape.value(z).iter().map(|&x| sigmoid(x)).collect()
    }

    pub fn loss_and_gradients(&self, t: &GraphTensors, pairs: &[(usize, usize)], labels: &[f64]) -> (f64, Vec<Array2<f64>>) {
        let mut tape = Tape::new();
        let (vars, z) = self.forward(&mut tape, t, pairs);
        let loss = tape.bce_with_logits(z, &Arc::new(labels.to_vec()));
        let g = tape.backward(loss);
        let grads = vars.iter().zip(&self.params).map(|(&v, p)| g.get_or_zeros(v, p.dim())).collect();
        (tape.scalar(loss), grads)
    }
}

/// Checks pair ids before featurizing.
pub(crate) fn check_pairs(t: &GraphTensors, pairs: &[(usize, usize)]) -> Result<()> {
    for &(d, s) in pairs {
        if d >= t.n_drug {
            return Err(crate::Error::UnknownId {
                kind: crate::NodeKind::Drug,
                id: d,
                size: t.n_drug,
            });
        }
        if s >= t.n_dis {
            return Err(crate::Error::UnknownId {
                kind: crate::NodeKind::Disease,
                id: s,
                size: t.n_dis,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgePartition, ResolvedParams, SparsityProfile};
    use ndarray::array;

    fn graph(hetero: Vec<(usize, usize, f64)>) -> DrugDiseaseGraph {
        DrugDiseaseGraph {
            n_drug: 2,
            n_dis: 5,
            drug_drug: EdgePartition::new(EdgeKind::DrugDrug),
            dis_dis: EdgePartition::new(EdgeKind::DisDis),
            drug_dis: EdgePartition {
                kind: EdgeKind::DrugDis,
                edges: hetero.into_iter().map(|(i, j, w)| Edge { i, j, w }).collect(),
            },
            features_drug: array![[1.0, 2.0], [3.0, 4.0]],
            features_dis: array![[1.0], [2.0], [3.0], [4.0], [5.0]],
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
    fn isolated_nodes_have_zero_neighbor_blocks() {
        let g = graph(vec![]);
        let t = GraphTensors::new(&g, 1.0).unwrap();
        let nb = NeighborTable::new(&g, NEIGHBOR_SLOTS);
        let x = baseline_lr_features(&[(0, 0), (1, 4)], &t, &nb, NEIGHBOR_SLOTS);
        assert_eq!(x.ncols(), 3 * 21);
        assert_eq!(x.slice(s![0, ..3]).to_vec(), vec![1.0, 2.0, 1.0]);
        assert!(x.slice(s![.., 3..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn three_neighbors_fill_three_blocks_by_weight() {
        let g = graph(vec![(0, 0, 0.2), (0, 2, 0.9), (0, 3, 0.5)]);
        let t = GraphTensors::new(&g, 1.0).unwrap();
        let nb = NeighborTable::new(&g, NEIGHBOR_SLOTS);
        assert_eq!(nb.top[0], vec![2 + 2, 2 + 3, 2]);
        let x = baseline_lr_features(&[(0, 1)], &t, &nb, NEIGHBOR_SLOTS);
        let block = |k: usize| x.slice(s![0, 3 * (1 + k)..3 * (2 + k)]).to_vec();
        assert_eq!(block(0), vec![0.0, 0.0, 3.0]);
        assert_eq!(block(1), vec![0.0, 0.0, 4.0]);
        assert_eq!(block(2), vec![0.0, 0.0, 1.0]);
        for k in 3..2 * NEIGHBOR_SLOTS {
            assert!(block(k).iter().all(|&v| v == 0.0), "block {k}");
        }
    }

    #[test]
    fn zero_weight_mlp_predicts_half() {
        let g = graph(vec![]);
        let t = GraphTensors::new(&g, 1.0).unwrap();
        let mut m = MlpModel::init(2, 1, NN_HIDDEN, 1);
        assert_eq!(m.hidden_dim(), 300);
        assert_eq!(m.predict(&t, &[(0, 0)]), MlpModel::init(2, 1, NN_HIDDEN, 1).predict(&t, &[(0, 0)]));
        for p in &mut m.params {
            p.fill(0.0);
        }
        assert_eq!(m.predict(&t, &[(0, 0), (1, 3)]), vec![0.5, 0.5]);
    }

    #[test]
    fn lr_gradient_includes_penalty() {
        let g = graph(vec![(0, 0, 0.2)]);
        let t = GraphTensors::new(&g, 1.0).unwrap();
        let mut m = LogisticModel::new(&g, 0.5);
        m.params[0].fill(0.1);
        let pairs = [(0, 0), (1, 2)];
        let labels = [1.0, 0.0];
        let (loss, grads) = m.loss_and_gradients(&t, &pairs, &labels);
        let h = 1e-6;
        let mut mp = m.clone();
        mp.params[0][[4, 0]] += h;
        let mut mm = m.clone();
        mm.params[0][[4, 0]] -= h;
        let fd = (mp.loss_and_gradients(&t, &pairs, &labels).0 - mm.loss_and_gradients(&t, &pairs, &labels).0) / (2.0 * h);
        assert!((fd - grads[0][[4, 0]]).abs() < 1e-7);
        assert!(loss > 0.0);
    }
}
