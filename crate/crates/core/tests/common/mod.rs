#![allow(dead_code)]

use drugdis_core::gnn::{GnnModel, GraphTensors};
use drugdis_core::graph::{DrugDiseaseGraph, Edge, EdgeKind, EdgePartition, ResolvedParams, SparsityProfile};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn partition(kind: EdgeKind, rng: &mut ChaCha8Rng, ni: usize, nj: usize, p: f64, square: bool) -> EdgePartition {
    let mut edges = Vec::new();
    for i in 0..ni {
        let start = if square { i + 1 } else { 0 };
        for j in start..nj {
            if rng.random_bool(p) {
                edges.push(Edge {
                    i,
                    j,
                    w: rng.random_range(0.05..1.0),
                });
            }
        }
    }
    EdgePartition { kind, edges }
}

/// Random graph with edge probability `p` in every partition and uniform
/// features in [-1, 1).
pub fn random_graph(seed: u64, n_drug: usize, n_dis: usize, f_drug: usize, f_dis: usize, p: f64) -> DrugDiseaseGraph {
    let mut r = rng(seed);
    DrugDiseaseGraph {
        n_drug,
        n_dis,
        drug_drug: partition(EdgeKind::DrugDrug, &mut r, n_drug, n_drug, p, true),
        dis_dis: partition(EdgeKind::DisDis, &mut r, n_dis, n_dis, p, true),
        drug_dis: partition(EdgeKind::DrugDis, &mut r, n_drug, n_dis, p, false),
        features_drug: random_matrix(&mut r, n_drug, f_drug),
        features_dis: random_matrix(&mut r, n_dis, f_dis),
        proximity_dim: f_drug.min(f_dis),
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

/// Every (drug, disease) pair with alternating labels.
pub fn all_pairs(n_drug: usize, n_dis: usize) -> (Vec<(usize, usize)>, Vec<f64>) {
    let pairs: Vec<(usize, usize)> = (0..n_drug).flat_map(|d| (0..n_dis).map(move |s| (d, s))).collect();
    let labels = (0..pairs.len()).map(|i| ((i * 7 + i / 3) % 2) as f64).collect();
    (pairs, labels)
}

/// Largest relative error between analytic and central-difference
/// gradients over every scalar parameter. The denominator is floored at
/// `floor` so exact zeros compare on an absolute scale.
pub fn max_gradient_error(
    model: &GnnModel,
    g: &GraphTensors,
    pairs: &[(usize, usize)],
    labels: &[f64],
    step: f64,
    floor: f64,
) -> (f64, String) {
    let (_, grads) = model.loss_and_gradients(g, pairs, labels).unwrap();
    let mut worst = (0.0, String::new());
    let names: Vec<String> = model.params.names().to_vec();
    for (t, name) in names.iter().enumerate() {
        let shape = model.params.tensors()[t].dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let mut plus = model.clone();
                plus.params.get_mut(name).unwrap()[[r, c]] += step;
                let mut minus = model.clone();
                minus.params.get_mut(name).unwrap()[[r, c]] -= step;
                let numeric = (plus.loss(g, pairs, labels).unwrap() - minus.loss(g, pairs, labels).unwrap()) / (2.0 * step);
                let analytic = grads[t][[r, c]];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                if rel > worst.0 {
                    worst = (rel, format!("{name}[{r},{c}] analytic {analytic:e} numeric {numeric:e}"));
                }
            }
        }
    }
    worst
}

/// Dense normalized adjacency built directly from the edge lists:
/// `w / sqrt(d_i d_j)` with unweighted degrees counting the self-loop.
pub fn dense_adjacency(g: &DrugDiseaseGraph, self_loop_weight: f64) -> Array2<f64> {
    let n = g.n_drug + g.n_dis;
    let mut w = Array2::<f64>::zeros((n, n));
    let offsets = [(0, 0), (g.n_drug, g.n_drug), (0, g.n_drug)];
    for (part, (oi, oj)) in [&g.drug_drug, &g.dis_dis, &g.drug_dis].into_iter().zip(offsets) {
        for e in &part.edges {
            w[[oi + e.i, oj + e.j]] = e.w;
            w[[oj + e.j, oi + e.i]] = e.w;
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).filter(|&j| j != i && w[[i, j]] != 0.0).count() as f64).collect();
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let wij = if i == j { self_loop_weight } else { w[[i, j]] };
            a[[i, j]] = wij / (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

/// Naive triple-loop product, independent of ndarray's kernels.
pub fn naive_matmul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows());
    let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                s += a[[i, k]] * b[[k, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

pub fn relu(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|x| x.max(0.0))
}

/// Layer-0 projection of the dense oracles: per-kind affine map plus ReLU,
/// drugs stacked above diseases.
pub fn dense_input_layer(model: &GnnModel, g: &DrugDiseaseGraph) -> Array2<f64> {
    let p = |n: &str| model.params.get(n).unwrap().clone();
    let proj = |x: &Array2<f64>, w: Array2<f64>, b: Array2<f64>| {
        let mut h = naive_matmul(x, &w);
        for mut row in h.rows_mut() {
            row += &b.row(0);
        }
        relu(&h)
    };
    let hd = proj(&g.features_drug, p("in_drug.w"), p("in_drug.b"));
    let hs = proj(&g.features_dis, p("in_dis.w"), p("in_dis.b"));
    ndarray::concatenate(ndarray::Axis(0), &[hd.view(), hs.view()]).unwrap()
}

/// Brute-force AUROC: fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Brute-force average precision: for each positive, precision among items
/// ranked at or above it, where an item ranks above another when its score
/// is higher or, on a tie, its index is lower.
pub fn brute_auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let above = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut total = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        let rank = 1 + (0..scores.len()).filter(|&j| j != i && above(j, i)).count();
        let hits = 1 + (0..scores.len()).filter(|&j| j != i && labels[j] && above(j, i)).count();
        total += hits as f64 / rank as f64;
    }
    total / n_pos
}
