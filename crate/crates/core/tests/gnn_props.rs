mod common;

use drugdis_core::gnn::{load_checkpoint, save_checkpoint, GnnConfig, GnnModel, GraphTensors, Variant};
use drugdis_core::graph::{DrugDiseaseGraph, Edge, EdgeKind, EdgePartition};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

use common::*;

fn config(variant: Variant, seed: u64) -> GnnConfig {
    GnnConfig {
        variant,
        layers: 2,
        hidden_dim: 8,
        gat_heads: vec![4, 2],
        seed,
        ..GnnConfig::default()
    }
}

fn permute_rows(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    // new row perm[i] holds old row i
    let mut out = m.clone();
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).assign(&m.row(i));
    }
    out
}

fn relabel(g: &DrugDiseaseGraph, pd: &[usize], ps: &[usize]) -> DrugDiseaseGraph {
    let homo = |part: &EdgePartition, p: &[usize]| EdgePartition {
        kind: part.kind,
        edges: part
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (p[e.i], p[e.j]);
                Edge {
                    i: a.min(b),
                    j: a.max(b),
                    w: e.w,
                }
            })
            .collect(),
    };
    DrugDiseaseGraph {
        drug_drug: homo(&g.drug_drug, pd),
        dis_dis: homo(&g.dis_dis, ps),
        drug_dis: EdgePartition {
            kind: EdgeKind::DrugDis,
            edges: g.drug_dis.edges.iter().map(|e| Edge { i: pd[e.i], j: ps[e.j], w: e.w }).collect(),
        },
        features_drug: permute_rows(&g.features_drug, pd),
        features_dis: permute_rows(&g.features_dis, ps),
        ..g.clone()
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng(seed));
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn relabeling_nodes_permutes_outputs(seed in 0u64..1000, variant_ix in 0usize..3) {
        let variant = Variant::ALL[variant_ix];
        let (nd, ns) = (6, 5);
        let g = random_graph(seed, nd, ns, 4, 3, 0.4);
        let (pd, ps) = (shuffled(nd, seed + 1), shuffled(ns, seed + 2));
        let g2 = relabel(&g, &pd, &ps);
        let model = GnnModel::init(&config(variant, seed), 4, 3).unwrap();
        let z = model.forward(&GraphTensors::new(&g, 1.0).unwrap());
        let z2 = model.forward(&GraphTensors::new(&g2, 1.0).unwrap());
        let full: Vec<usize> = pd.iter().copied().chain(ps.iter().map(|&p| nd + p)).collect();
        let expected = permute_rows(&z, &full);
        let diff = (&expected - &z2).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(diff < 1e-10, "{variant:?} diff {diff}");
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..1000, variant_ix in 0usize..3) {
        let g = random_graph(seed, 5, 4, 3, 3, 0.5);
        let t = GraphTensors::new(&g, 1.0).unwrap();
        let model = GnnModel::init(&config(Variant::ALL[variant_ix], seed), 3, 3).unwrap();
        prop_assert_eq!(model.forward(&t), model.forward(&t));
        let again = GnnModel::init(&config(Variant::ALL[variant_ix], seed), 3, 3).unwrap();
        prop_assert_eq!(&model, &again);
    }

    #[test]
    fn adrgcn_with_shared_weights_equals_gcn(seed in 0u64..1000, slw in 0.0f64..2.0) {
        let g = random_graph(seed, 5, 6, 3, 4, 0.5);
        let t = GraphTensors::new(&g, slw).unwrap();
        let gcn = GnnModel::init(&GnnConfig { self_loop_weight: slw, ..config(Variant::Gcn, seed) }, 3, 4).unwrap();
        let mut adr = GnnModel::init(&GnnConfig { self_loop_weight: slw, ..config(Variant::Adrgcn, seed + 1) }, 3, 4).unwrap();
        for name in gcn.params.names() {
            if let Some(l) = name.strip_prefix("layer").and_then(|s| s.strip_suffix(".w")) {
                for suffix in ["w_self", "w_drug_drug", "w_dis_dis", "w_drug_dis"] {
                    *adr.params.get_mut(&format!("layer{l}.{suffix}")).unwrap() = gcn.params.get(name).unwrap().clone();
                }
            } else {
                *adr.params.get_mut(name).unwrap() = gcn.params.get(name).unwrap().clone();
            }
        }
        let diff = (&gcn.forward(&t) - &adr.forward(&t)).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(diff < 1e-12, "diff {diff}");
    }
}

#[test]
fn gat_output_ignores_attention_when_neighbors_match() {
    // drugs only linked among themselves, all with the same features
    let mut g = random_graph(3, 6, 3, 4, 4, 0.0);
    g.drug_drug.edges = vec![(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]
        .into_iter()
        .map(|(i, j)| Edge { i, j, w: 0.5 })
        .collect();
    let row = g.features_drug.row(0).to_owned();
    for mut r in g.features_drug.rows_mut() {
        r.assign(&row);
    }
    let t = GraphTensors::new(&g, 1.0).unwrap();
    let a = GnnModel::init(&config(Variant::Gat, 1), 4, 4).unwrap();
    let mut b = a.clone();
    for name in a.params.names() {
        if name.ends_with("a_dst") || name.ends_with("a_src") {
            b.params.get_mut(name).unwrap().mapv_inplace(|x| 5.0 * x + 0.3);
        }
    }
    assert_ne!(a.attention(&t).layers, b.attention(&t).layers);
    let (za, zb) = (a.forward(&t), b.forward(&t));
    let drugs = |z: &Array2<f64>| z.select(Axis(0), &[0, 1, 2, 3, 4, 5]);
    let diff = (&drugs(&za) - &drugs(&zb)).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    assert!(diff < 1e-12, "diff {diff}");
}

#[test]
fn checkpoint_file_reproduces_predictions() {
    let g = random_graph(9, 5, 5, 3, 3, 0.5);
    let t = GraphTensors::new(&g, 1.0).unwrap();
    let (pairs, _) = all_pairs(5, 5);
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let model = GnnModel::init(&config(variant, 4), 3, 3).unwrap();
        let path = dir.path().join(format!("{}.ckpt", variant.as_str()));
        save_checkpoint(&path, &model).unwrap();
        let back = load_checkpoint(&path).unwrap();
        // parameters are stored as f32
        let (p, q) = (model.predict(&t, &pairs).unwrap(), back.predict(&t, &pairs).unwrap());
        assert!(p.iter().zip(&q).all(|(a, b)| (a - b).abs() < 1e-5));
        assert_eq!(back.config, model.config);
    }
}

#[test]
fn gradients_match_finite_differences_without_final_activation() {
    let g = random_graph(17, 4, 4, 3, 3, 0.5);
    let t = GraphTensors::new(&g, 0.7).unwrap();
    let (pairs, labels) = all_pairs(4, 4);
    for variant in Variant::ALL {
        let c = GnnConfig {
            final_activation: false,
            layers: 3,
            gat_heads: vec![2, 2, 3],
            self_loop_weight: 0.7,
            ..config(variant, 8)
        };
        let model = GnnModel::init(&c, 3, 3).unwrap();
        let (err, at) = max_gradient_error(&model, &t, &pairs, &labels, 1e-5, 1e-6);
        assert!(err < 1e-4, "{variant:?}: {err} at {at}");
    }
}
