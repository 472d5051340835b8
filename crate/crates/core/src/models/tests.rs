use rand::Rng;

use super::*;
use crate::diff::{stream_rng, Tape};
use crate::graph_builder::{graph_from_parts, ContactGraph, FeatureConfig};
use crate::protein_io::AminoAcid;

fn random_graph(seed: u64, n: usize, d: usize) -> ContactGraph {
    let mut rng = stream_rng(seed, &[9]);
    let coords: Vec<[f64; 3]> = (0..n).map(|_| [rng.random_range(0.0..12.0), rng.random_range(0.0..12.0), rng.random_range(0.0..12.0)]).collect();
    let feats = Tensor::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let res = (0..n).map(|i| AminoAcid::ALL[i % 20]).collect();
    graph_from_parts("r", coords, feats, res, &FeatureConfig::structural()).unwrap()
}

fn small(kind: ModelKind, task: TaskKind) -> ModelConfig {
    ModelConfig {
        kind,
        task,
        in_dim: 6,
        hidden: 8,
        layers: 2,
        blobs: 3,
        outputs: if matches!(task, TaskKind::Node | TaskKind::Regression) { 1 } else { 4 },
        mlp_hidden: 8,
        ..ModelConfig::default()
    }
}

#[test]
fn default_parameter_counts() {
    let sb = Model::new(ModelConfig::default(), 0).unwrap();
    let n = sb.num_params() as f64;
    assert!((n - 1.1e6).abs() / 1.1e6 < 0.1, "{n}");
    let jk = Model::new(ModelConfig { kind: ModelKind::GinJk, ..ModelConfig::default() }, 0).unwrap();
    let n = jk.num_params() as f64;
    assert!((n - 1.4e6).abs() / 1.4e6 < 0.1, "{n}");
}

#[test]
fn equal_logits_give_uniform_assignment() {
    let mut t = Tape::new();
    let l = t.constant(Tensor::filled(5, 4, 0.3));
    let a = blob_assign(&mut t, l, 0.37, None).unwrap();
    assert!(t.value(a).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn low_temperature_saturates() {
    let mut t = Tape::new();
    let l = t.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
    let a = blob_assign(&mut t, l, 0.01, None).unwrap();
    assert!(t.value(a).get(0, 0) > 1.0 - 1e-6);
    assert!(blob_assign(&mut t, l, 0.0, None).is_err());
}

#[test]
fn uniform_assignment_pools_to_global_mean() {
    let mut t = Tape::new();
    let hv = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![5.0, 0.5]]).unwrap();
    let h = t.constant(hv);
    let a = t.constant(Tensor::filled(3, 3, 1.0 / 3.0));
    let means = blob_pool(&mut t, h, a, &[0, 0, 0], 1).unwrap();
    for k in 0..3 {
        assert!((t.value(means).get(k, 0) - 3.0).abs() < 1e-7);
        assert!((t.value(means).get(k, 1) - 0.5).abs() < 1e-7);
    }
}

#[test]
fn empty_blob_pools_to_zero() {
    let mut t = Tape::new();
    let h = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let a = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap());
    let means = blob_pool(&mut t, h, a, &[0, 0], 1).unwrap();
    assert!((t.value(means).get(0, 0) - 2.0).abs() < 1e-7);
    assert_eq!(t.value(means).row(1), &[0.0, 0.0]);
}

#[test]
fn readout_single_blob() {
    let mut t = Tape::new();
    let b = t.constant(Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap());
    let h = t.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![3.0, 5.0]]).unwrap());
    let z = readout(&mut t, b, h, &[0, 0], 1).unwrap();
    assert_eq!(t.value(z).data(), &[0.5, -0.5, 2.0, 3.0]);
}

#[test]
fn eval_is_deterministic_and_assignment_stochastic() {
    let g = random_graph(1, 9, 6);
    let m = Model::new(small(ModelKind::SoftBlobGin, TaskKind::Graph), 3).unwrap();
    let b = GraphBatch::single(&g);
    assert_eq!(m.predict_logits(&b).unwrap(), m.predict_logits(&b).unwrap());
    let mut t = Tape::new();
    let pv = m.bind(&mut t, false);
    let mut rng = stream_rng(5, &[]);
    let out = m.forward(&mut t, &pv, &b, ForwardOptions { train: true, tau: 0.5, rng: Some(&mut rng), ..ForwardOptions::eval() }).unwrap();
    let a = t.value(out.assignment.unwrap());
    for r in 0..a.rows() {
        assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn permutation_invariance_of_graph_logits() {
    for kind in [ModelKind::SoftBlobGin, ModelKind::GinJk] {
        let g = random_graph(2, 10, 6);
        let m = Model::new(small(kind, TaskKind::Graph), 4).unwrap();
        let perm = [3, 7, 0, 9, 1, 5, 2, 8, 6, 4];
        let a = m.predict_logits(&GraphBatch::single(&g)).unwrap();
        let b = m.predict_logits(&GraphBatch::single(&g.permuted(&perm))).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9, "{kind:?}");
    }
}

#[test]
fn batching_matches_single_graph_eval() {
    let gs: Vec<ContactGraph> = (0..3).map(|s| random_graph(10 + s, 5 + s as usize, 6)).collect();
    let m = Model::new(small(ModelKind::SoftBlobGin, TaskKind::Graph), 1).unwrap();
    let refs: Vec<&ContactGraph> = gs.iter().collect();
    let all = m.predict_logits(&GraphBatch::new(&refs)).unwrap();
    for (i, g) in gs.iter().enumerate() {
        let one = m.predict_logits(&GraphBatch::single(g)).unwrap();
        for c in 0..4 {
            assert!((one.get(0, c) - all.get(i, c)).abs() < 1e-12);
        }
    }
}

#[test]
fn node_head_shape_and_sharing() {
    let g = random_graph(3, 7, 6);
    let m = Model::new(small(ModelKind::GinJk, TaskKind::Node), 2).unwrap();
    let out = m.predict_logits(&GraphBatch::single(&g)).unwrap();
    assert_eq!(out.shape(), (7, 1));
}

#[test]
fn task_heads() {
    let z = Tensor::zeros(2, 3);
    assert!(task_scores(TaskKind::Multilabel, &z).data().iter().all(|&v| v == 0.5));
    let p = task_scores(TaskKind::Graph, &Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
    assert!((p.sum() - 1.0).abs() < 1e-12);
    let mut m = Model::new(small(ModelKind::SoftBlobGin, TaskKind::Regression), 0).unwrap();
    let id = m.params.id_of("cls2.weight").unwrap();
    *m.params.get_mut(id) = Tensor::zeros(8, 1);
    let bias = m.params.by_name("cls2.bias").unwrap().item();
    let out = m.predict_scores(&GraphBatch::single(&random_graph(4, 6, 6))).unwrap();
    assert_eq!(out.item(), bias);
}

#[test]
fn baselines_use_composition_and_means() {
    let pts: Vec<_> = (0..4).map(|i| (AminoAcid::Ala, [i as f64 * 3.8, 0.0, 0.0])).collect();
    let s = crate::protein_io::ProteinStructure::from_ca_trace("A", &pts);
    let g = crate::graph_builder::build_contact_graph(&s, None, &FeatureConfig::onehot()).unwrap();
    let b = GraphBatch::single(&g);
    assert_eq!(b.composition.get(0, AminoAcid::Ala.index()), 1.0);
    let cfg = ModelConfig { in_dim: 20, ..small(ModelKind::SeqMlp, TaskKind::Graph) };
    assert_eq!(Model::new(cfg, 0).unwrap().predict_logits(&b).unwrap().shape(), (1, 4));
}

#[test]
fn checkpoint_round_trip() {
    let m = Model::new(small(ModelKind::SoftBlobGin, TaskKind::Graph), 8).unwrap();
    let mut buf = Vec::new();
    crate::diff::write_checkpoint(&mut buf, &m.to_checkpoint()).unwrap();
    let ck = crate::diff::read_checkpoint(&mut buf.as_slice()).unwrap();
    let back = Model::from_checkpoint(&ck).unwrap();
    assert_eq!(back.config, m.config);
    let g = random_graph(5, 6, 6);
    let a = m.predict_logits(&GraphBatch::single(&g)).unwrap();
    let b = back.predict_logits(&GraphBatch::single(&g)).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-5);
}
