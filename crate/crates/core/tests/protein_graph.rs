use std::collections::HashMap;

use proptest::prelude::*;
use softblob::graph_builder::{build_contact_graph, contact_pairs, read_graphs, write_graphs, FeatureBlock, FeatureConfig};
use softblob::protein_io::{
    compute_sasa, parse_annotations, parse_pdb, write_embeddings, load_embeddings, write_pdb, AminoAcid, AnnotationKind,
    EmbeddingMatrix, Label, ProteinStructure, SasaConfig,
};

fn helix(id: &str, n: usize) -> ProteinStructure {
    let residues: Vec<_> = (0..n)
        .map(|i| {
            let t = i as f64 * 100f64.to_radians();
            let aa = AminoAcid::from_index(i % 20).unwrap();
            (aa, [2.3 * t.cos(), 2.3 * t.sin(), 1.5 * i as f64])
        })
        .collect();
    ProteinStructure::from_ca_trace(id, &residues)
}

#[test]
fn pdb_round_trip_keeps_sequence_and_trace() {
    let s = helix("H1", 18);
    let text = write_pdb(&s);
    let (back, report) = parse_pdb("H1", text.as_bytes()).unwrap();
    assert_eq!(report.skipped_nonstandard + report.skipped_without_ca, 0);
    assert_eq!(back.sequence(), s.sequence());
    for (a, b) in back.ca_coords().iter().zip(s.ca_coords()) {
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 5e-4);
        }
    }
}

#[test]
fn parser_skips_what_it_cannot_place() {
    let pdb = "\
ATOM      1  N   ALA A   1      11.104   6.134  -6.504  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.639   6.071  -5.147  1.00  0.00           C
ATOM      3  N   GLY A   2      12.000   7.000  -4.000  1.00  0.00           N
HETATM    4  CA  MSE A   3      13.639   8.071  -3.147  1.00  0.00           C
HETATM    5  O   HOH A   4      20.000  20.000  20.000  1.00  0.00           O
ATOM      6  CA  LYS A   5      15.639   9.071  -2.147  1.00  0.00           C
END
";
    let (s, report) = parse_pdb("p", pdb.as_bytes()).unwrap();
    assert_eq!(s.sequence(), "AMK");
    assert_eq!(report.skipped_without_ca, 1);
    assert_eq!(report.aliased_residues, 1);
    assert!(s.validate().is_ok());
}

#[test]
fn featurized_helix_has_sane_features_and_sasa() {
    let mut s = helix("H2", 24);
    compute_sasa(&mut s, SasaConfig::default()).unwrap();
    assert!(s.residues.iter().all(|r| (0.0..=1.0).contains(&r.rsa) && r.sasa > 0.0));
    let cfg = FeatureConfig::structural();
    let g = build_contact_graph(&s, None, &cfg).unwrap();
    assert_eq!(g.node_dim(), cfg.node_dim());
    assert_eq!(g.edge_dim(), cfg.edge_dim());
    assert!(g.node_features.is_finite() && g.edge_features.is_finite());
    assert_eq!(g.rsa, s.residues.iter().map(|r| r.rsa).collect::<Vec<_>>());
    // consecutive residues are 3.8 Å-ish apart on this trace, so the backbone is connected
    for i in 0..g.n_nodes - 1 {
        assert!(g.edges.contains(&(i, i + 1)));
    }
}

#[test]
fn esm_block_needs_embeddings() {
    let s = helix("H3", 10);
    let cfg = FeatureConfig { esm_dim: 4, ..FeatureConfig::default() };
    assert!(cfg.has(FeatureBlock::Esm));
    assert!(build_contact_graph(&s, None, &cfg).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.bin");
    let m = EmbeddingMatrix { protein_id: "H3".into(), rows: 10, dim: 4, data: (0..40).map(|i| i as f64 / 40.0).collect() };
    write_embeddings(&mut std::fs::File::create(&path).unwrap(), &[m]).unwrap();
    let set = load_embeddings(&path, &[&s]).unwrap();
    let g = build_contact_graph(&s, Some(&set.matrices["H3"]), &cfg).unwrap();
    assert_eq!(g.node_dim(), cfg.node_dim());

    let other = helix("H4", 7);
    let set = load_embeddings(&path, &[&s, &other]).unwrap();
    assert_eq!(set.missing, vec!["H4".to_string()]);
}

#[test]
fn graph_cache_round_trip() {
    let mut graphs: Vec<_> = ["a", "b"].iter().map(|id| build_contact_graph(&helix(id, 12), None, &FeatureConfig::onehot()).unwrap()).collect();
    graphs[0].graph_label = Some(Label::Multi(vec![1, 4]));
    graphs[1].node_labels = Some(vec![0, 1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1]);
    let mut bytes = Vec::new();
    write_graphs(&mut bytes, &graphs).unwrap();
    let back = read_graphs(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, graphs);
    assert!(read_graphs(&mut &bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn annotation_csv_kinds() {
    let sizes: HashMap<String, usize> = [("P1".to_string(), 30), ("P2".to_string(), 12)].into();
    let text = "protein_id,value\nP1,3;7;12\nP2,0\nP9,1\n";
    let set = parse_annotations(text, AnnotationKind::ActiveSite, &sizes).unwrap();
    assert_eq!(set.active_sites["P1"].iter().copied().collect::<Vec<_>>(), vec![3, 7, 12]);
    assert!(set.unknown_ids.contains("P9"));

    let multi = parse_annotations("P1,2;5\nP2,\n", AnnotationKind::Multilabel, &sizes).unwrap();
    assert_eq!(multi.labels["P1"], Label::Multi(vec![2, 5]));

    assert!(parse_annotations("P2,12\n", AnnotationKind::ActiveSite, &sizes).is_err());
    assert!(parse_annotations("P1,1\nP1,2\n", AnnotationKind::GraphLabel, &sizes).is_err());
    assert!(parse_annotations("P1,nan\n", AnnotationKind::Scalar, &sizes).is_err());
    let dom = parse_annotations("P1,d1:0-9;d2:10-29\n", AnnotationKind::Domain, &sizes).unwrap();
    assert_eq!(dom.domains["P1"].len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contacts_match_brute_force(pts in prop::collection::vec(prop::array::uniform3(-12.0f64..12.0), 2..30), eps in 2.0f64..12.0) {
        let pairs = contact_pairs(&pts, eps);
        let mut want = Vec::new();
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d2: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                if d2.sqrt() <= eps {
                    want.push((i, j));
                }
            }
        }
        let mut got = pairs.clone();
        got.sort();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn graph_edges_are_symmetric(n in 2usize..25, eps in 3.0f64..12.0) {
        let s = helix("x", n);
        let g = build_contact_graph(&s, None, &FeatureConfig { epsilon: eps, ..FeatureConfig::onehot() }).unwrap();
        prop_assert_eq!(g.edges.len() % 2, 0);
        for u in 0..g.num_undirected() {
            let (i, j) = g.edges[2 * u];
            prop_assert!(i < j);
            prop_assert_eq!(g.edges[2 * u + 1], (j, i));
            prop_assert!(g.distance(i, j) <= eps);
        }
        prop_assert_eq!(g.degrees().iter().sum::<usize>(), g.edges.len());
    }
}
