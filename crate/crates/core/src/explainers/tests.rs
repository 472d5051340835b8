use rand::Rng;

use super::*;
use crate::diff::stream_rng;
use crate::graph_builder::FeatureConfig;
use crate::models::{ForwardOptions, ModelConfig};
use crate::protein_io::AminoAcid;
use crate::synthetic::random_geometric_graph;

fn graph(seed: u64, n: usize) -> ContactGraph {
    let mut rng = stream_rng(seed, &[4]);
    random_geometric_graph(&mut rng, &format!("g{seed}"), n, 13.0, 3.2, 5, &FeatureConfig::structural()).unwrap()
}

fn model(seed: u64) -> Model {
    let cfg = ModelConfig { in_dim: 5, hidden: 8, layers: 2, blobs: 3, outputs: 3, ..ModelConfig::default() };
    let mut m = Model::new(cfg, seed).unwrap();
    // non-trivial running statistics so eval-mode batch norm is not the identity
    let mut rng = stream_rng(seed, &[5]);
    for i in 0..m.buffers.len() {
        for v in m.buffers.tensor_mut_at(i).data_mut() {
            *v = if *v == 0.0 { rng.random_range(-0.2..0.2) } else { rng.random_range(0.5..1.5) };
        }
    }
    m
}

#[test]
fn unit_masks_reproduce_logits() {
    for s in 0..5 {
        let g = graph(s, 9);
        let m = model(s);
        let plain = m.predict_logits(&GraphBatch::single(&g)).unwrap();
        let masked = masked_logits(&m, &g, &vec![1.0; g.num_undirected()], &vec![1.0; g.node_dim()]).unwrap();
        assert_eq!(plain, masked);
    }
}

#[test]
fn confidence_only_objective_descends() {
    let cfg = ExplainerConfig { steps: 60, lambdas: [0.0; 4], ..ExplainerConfig::default() };
    for s in 0..20 {
        let g = graph(100 + s, 8);
        let m = model(s);
        let e = gnn_explain(&m, &g, &cfg).unwrap();
        for w in e.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "seed {s}: {} -> {}", w[0], w[1]);
        }
        let l = masked_logits(&m, &g, &e.edge_mask, &e.feature_mask).unwrap();
        assert_eq!(argmax(l.row(0)), e.target);
        assert!(e.edge_mask.iter().chain(&e.feature_mask).all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(e.edge_mask.len(), g.num_undirected());
    }
}

#[test]
fn node_importance_cases() {
    let cfg = FeatureConfig { epsilon: 5.0, ..FeatureConfig::structural() };
    let line = |n: usize| {
        let coords: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 * 4.0, 0.0, 0.0]).collect();
        crate::graph_builder::graph_from_parts("l", coords, Tensor::zeros(n, 1), vec![AminoAcid::Gly; n], &cfg).unwrap()
    };
    let g = line(2);
    assert_eq!(node_importance(&[1.0], &g), vec![1.0, 1.0]);
    let g = line(4);
    assert_eq!(node_importance(&[0.2, 0.2, 0.2], &g), vec![1.0; 4]);
    // a hub with high-mask spokes outranks every leaf
    let coords = vec![[0.0; 3], [4.0, 0.0, 0.0], [-4.0, 0.0, 0.0], [0.0, 4.0, 0.0], [0.0, 0.0, 40.0]];
    let star = crate::graph_builder::graph_from_parts("s", coords, Tensor::zeros(5, 1), vec![AminoAcid::Gly; 5], &cfg).unwrap();
    let s = node_importance(&vec![0.9; star.num_undirected()], &star);
    assert_eq!(s[4], 0.0);
    assert_eq!(argmax(&s), 0);
}

#[test]
fn linear_function_is_attributed_exactly() {
    let mut rng = stream_rng(8, &[]);
    for _ in 0..10 {
        let w = Tensor::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let x = Tensor::from_vec(4, 3, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        for steps in [1, 7, 50] {
            let (ig, fx, f0) = integrate_path(&x, &Tensor::zeros(4, 3), steps, |xa| {
                let v: f64 = xa.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                Ok((v, w.clone()))
            })
            .unwrap();
            let want = x.zip_map(&w, |a, b| a * b);
            assert!(ig.max_abs_diff(&want) < 1e-12);
            assert!((ig.sum() - (fx - f0)).abs() < 1e-9);
        }
    }
}

#[test]
fn attribution_targets_predicted_logit() {
    let g = graph(3, 10);
    let m = model(3);
    let a = integrated_gradients(&m, &g, None, 20).unwrap();
    let logits = m.predict_logits(&GraphBatch::single(&g)).unwrap();
    assert_eq!(a.target, argmax(logits.row(0)));
    assert!((a.f_input - logits.get(0, a.target)).abs() < 1e-12);
    assert_eq!(a.values.shape(), (g.n_nodes, g.node_dim()));
    let mut t = Tape::new();
    let pv = m.bind(&mut t, false);
    let x = t.constant(Tensor::zeros(g.n_nodes, g.node_dim()));
    let out = m.forward(&mut t, &pv, &GraphBatch::single(&g), ForwardOptions { x: Some(x), ..m.eval_options() }).unwrap();
    assert!((a.f_baseline - t.value(out.logits).get(0, a.target)).abs() < 1e-12);
}

#[test]
fn csv_layouts() {
    let g = graph(1, 6);
    let m = ExplanationMask {
        protein_id: "p".into(),
        edge_mask: vec![0.5; g.num_undirected()],
        feature_mask: vec![0.25; g.node_dim()],
        target: 0,
        confidence: 1.0,
        trace: vec![1.0],
    };
    let mut buf = Vec::new();
    write_edge_masks(&mut buf, &[(&g, &m)]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("protein_id,edge_i,edge_j,M"));
    assert_eq!(text.lines().count(), 1 + g.num_undirected());
    let mut buf = Vec::new();
    write_feature_masks(&mut buf, &[&m]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + g.node_dim());
}

#[test]
fn groups_follow_layout() {
    let cfg = FeatureConfig::structural();
    let mut f = vec![0.0; cfg.node_dim()];
    f[0] = 1.0;
    f[20] = 0.5;
    let groups = feature_groups(&f, &cfg);
    assert_eq!(groups[0].block, "aa_onehot");
    assert_eq!(groups[1].block, "physchem");
    assert_eq!(groups.len(), 5);
}
