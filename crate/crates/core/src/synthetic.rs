//! Synthetic graph datasets with known ground truth: planted geometric motifs
//! for graph classification and a neighbourhood-size node task.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diff::{stream_rng, StreamRng, Tensor};
use crate::graph_builder::{build_contact_graph, graph_from_parts, ContactGraph, FeatureBlock, FeatureConfig, GraphError};
use crate::protein_io::{AminoAcid, Label, ProteinStructure};

/// Motif families; the class index is the position in [`Motif::ALL`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Planar hexagon, side 7 Å.
    Ring,
    /// Hub with five planar spokes of 7 Å.
    Star,
    /// Triangular prism, all edges 6 Å.
    Prism,
    /// Octahedron of circumradius 3.5 Å, a six-clique at ε = 8.
    Clique,
}

impl Motif {
    pub const ALL: [Motif; 4] = [Motif::Ring, Motif::Star, Motif::Prism, Motif::Clique];

    pub fn class(self) -> usize {
        Motif::ALL.iter().position(|&m| m == self).expect("listed")
    }

    /// Six motif positions centred near the origin.
    pub fn coords(self) -> Vec<[f64; 3]> {
        use std::f64::consts::PI;
        match self {
            Motif::Ring => (0..6).map(|k| polar(7.0, k as f64 * PI / 3.0)).collect(),
            Motif::Star => std::iter::once([0.0; 3]).chain((0..5).map(|k| polar(7.0, k as f64 * 2.0 * PI / 5.0))).collect(),
            Motif::Prism => {
                let r = 6.0 / 3f64.sqrt();
                (0..6).map(|k| {
                    let [x, y, _] = polar(r, (k % 3) as f64 * 2.0 * PI / 3.0);
                    [x, y, if k < 3 { -3.0 } else { 3.0 }]
                })
                .collect()
            }
            Motif::Clique => {
                let r = 3.5;
                vec![[r, 0.0, 0.0], [-r, 0.0, 0.0], [0.0, r, 0.0], [0.0, -r, 0.0], [0.0, 0.0, r], [0.0, 0.0, -r]]
            }
        }
    }
}

/// Bond lengths occurring inside any motif.
pub const MOTIF_BONDS: [f64; 3] = [3.5 * std::f64::consts::SQRT_2, 6.0, 7.0];

fn polar(r: f64, a: f64) -> [f64; 3] {
    [r * a.cos(), r * a.sin(), 0.0]
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Uniform random rotation from a uniform unit quaternion.
pub fn random_rotation(rng: &mut StreamRng) -> [[f64; 3]; 3] {
    use std::f64::consts::TAU;
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin(), b * (TAU * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(r: &[[f64; 3]; 3], p: [f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, o) in out.iter_mut().enumerate() {
        *o = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2];
    }
    out
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MotifDatasetConfig {
    pub graphs: usize,
    pub min_background: usize,
    pub max_background: usize,
    /// Side of the cube holding background nodes.
    pub box_side: f64,
    /// Minimum spacing between any two nodes.
    pub min_spacing: f64,
    /// Nodes linking the motif to the background.
    pub bridges: usize,
    /// Non-motif edges stay at least this far from every motif bond length.
    pub length_margin: f64,
    /// Random residue identities; otherwise every node is glycine.
    pub random_residues: bool,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for MotifDatasetConfig {
    fn default() -> Self {
        Self {
            graphs: 500,
            min_background: 18,
            max_background: 26,
            box_side: 22.0,
            min_spacing: 3.8,
            bridges: 2,
            length_margin: 0.35,
            random_residues: false,
            epsilon: 8.0,
            seed: 7,
        }
    }
}

/// Residue identity only: structure reaches the model through edges alone.
pub fn synthetic_features(epsilon: f64) -> FeatureConfig {
    FeatureConfig { epsilon, blocks: vec![FeatureBlock::AaOnehot], ..FeatureConfig::default() }
}

#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub graph: ContactGraph,
    pub motif: Motif,
    pub motif_nodes: Vec<usize>,
    /// Per undirected edge: both endpoints lie in the motif.
    pub motif_edges: Vec<bool>,
}

fn random_point(rng: &mut StreamRng, lo: [f64; 3], side: f64) -> [f64; 3] {
    [lo[0] + rng.random::<f64>() * side, lo[1] + rng.random::<f64>() * side, lo[2] + rng.random::<f64>() * side]
}

fn random_residues(rng: &mut StreamRng, n: usize) -> Vec<AminoAcid> {
    (0..n).map(|_| AminoAcid::ALL[rng.random_range(0..20)]).collect()
}

/// One graph: the motif, background points kept beyond ε of every motif
/// node, and bridge nodes within ε of exactly one motif node. Contacts not
/// inside the motif avoid the motif bond lengths, so those lengths identify
/// motif edges.
pub fn planted_graph(motif: Motif, cfg: &MotifDatasetConfig, rng: &mut StreamRng, id: &str) -> Result<PlantedGraph, GraphError> {
    let rot = random_rotation(rng);
    let motif_pts: Vec<[f64; 3]> = motif.coords().into_iter().map(|p| rotate(&rot, p)).collect();
    let clear = cfg.epsilon + 0.5;
    let n_bg = rng.random_range(cfg.min_background..=cfg.max_background);
    let mut bg: Vec<[f64; 3]> = Vec::new();
    let half = cfg.box_side / 2.0;
    // the box sits beside the motif, offset along a random direction
    let dir = rotate(&random_rotation(rng), [1.0, 0.0, 0.0]);
    let centre = [dir[0] * (half + clear), dir[1] * (half + clear), dir[2] * (half + clear)];
    let lo = [centre[0] - half, centre[1] - half, centre[2] - half];
    let ok = |d: f64| d >= cfg.min_spacing && (d > cfg.epsilon || MOTIF_BONDS.iter().all(|&b| (d - b).abs() > cfg.length_margin));
    let mut attempts = 0;
    while bg.len() < n_bg && attempts < 50_000 {
        attempts += 1;
        let p = random_point(rng, lo, cfg.box_side);
        if motif_pts.iter().all(|&m| dist(m, p) > clear) && bg.iter().all(|&q| ok(dist(q, p))) {
            bg.push(p);
        }
    }
    for _ in 0..cfg.bridges {
        for _ in 0..200 {
            let a = motif_pts[rng.random_range(0..6)];
            let dir = rotate(&random_rotation(rng), [1.0, 0.0, 0.0]);
            let r = rng.random_range(cfg.min_spacing..cfg.epsilon);
            let p = [a[0] + dir[0] * r, a[1] + dir[1] * r, a[2] + dir[2] * r];
            let near_motif = motif_pts.iter().filter(|&&m| dist(m, p) <= cfg.epsilon).count();
            let spaced = bg.iter().chain(&motif_pts).all(|&q| ok(dist(q, p)));
            if near_motif == 1 && spaced && bg.iter().any(|&q| dist(q, p) <= cfg.epsilon) {
                bg.push(p);
                break;
            }
        }
    }
    let n = 6 + bg.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    // position order[i] holds source point i
    let mut coords = vec![[0.0; 3]; n];
    for (i, p) in motif_pts.iter().chain(&bg).enumerate() {
        coords[order[i]] = *p;
    }
    let residues = if cfg.random_residues { random_residues(rng, n) } else { vec![AminoAcid::Gly; n] };
    let trace: Vec<(AminoAcid, [f64; 3])> = residues.iter().copied().zip(coords.iter().copied()).collect();
    let mut graph = build_contact_graph(&ProteinStructure::from_ca_trace(id, &trace), None, &synthetic_features(cfg.epsilon))?;
    graph.graph_label = Some(Label::Class(motif.class()));
    let motif_nodes: Vec<usize> = order[..6].to_vec();
    let is_motif: Vec<bool> = (0..n).map(|i| motif_nodes.contains(&i)).collect();
    let motif_edges = (0..graph.num_undirected())
        .map(|u| {
            let (i, j) = graph.undirected(u);
            is_motif[i] && is_motif[j]
        })
        .collect();
    Ok(PlantedGraph { graph, motif, motif_nodes, motif_edges })
}

/// Balanced planted-motif dataset; graph `i` carries motif `i mod 4`.
pub fn planted_motif_dataset(cfg: &MotifDatasetConfig) -> Result<Vec<PlantedGraph>, GraphError> {
    (0..cfg.graphs)
        .map(|i| {
            let mut rng = stream_rng(cfg.seed, &[0x5e7, i as u64]);
            planted_graph(Motif::ALL[i % 4], cfg, &mut rng, &format!("motif_{i:04}"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NodeTaskConfig {
    pub graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub box_side: f64,
    pub min_spacing: f64,
    pub epsilon: f64,
    /// Width of the random per-node features.
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for NodeTaskConfig {
    fn default() -> Self {
        Self { graphs: 120, min_nodes: 30, max_nodes: 45, box_side: 26.0, min_spacing: 3.8, epsilon: 8.0, feature_dim: 8, seed: 11 }
    }
}

/// Number of nodes within two hops of each node, itself excluded.
pub fn two_hop_counts(g: &ContactGraph) -> Vec<usize> {
    let mut adj = vec![Vec::new(); g.n_nodes];
    for &(i, j) in &g.edges {
        adj[i].push(j);
    }
    (0..g.n_nodes)
        .map(|i| {
            let mut seen = vec![false; g.n_nodes];
            seen[i] = true;
            let mut count = 0;
            for &j in &adj[i] {
                for &k in std::iter::once(&j).chain(&adj[j]) {
                    if !seen[k] {
                        seen[k] = true;
                        count += 1;
                    }
                }
            }
            count
        })
        .collect()
}

/// Random geometric graph with node features drawn uniformly from `[-1, 1)`.
pub fn random_geometric_graph(
    rng: &mut StreamRng,
    id: &str,
    n: usize,
    box_side: f64,
    min_spacing: f64,
    feature_dim: usize,
    cfg: &FeatureConfig,
) -> Result<ContactGraph, GraphError> {
    let mut coords: Vec<[f64; 3]> = Vec::with_capacity(n);
    let mut attempts = 0;
    while coords.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(GraphError::Data { id: id.into(), reason: "box too small for the requested spacing".into() });
        }
        let p = random_point(rng, [0.0; 3], box_side);
        if coords.iter().all(|&q| dist(q, p) >= min_spacing) {
            coords.push(p);
        }
    }
    let x = Tensor::from_vec(n, feature_dim, (0..n * feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized");
    let residues = random_residues(rng, n);
    graph_from_parts(id, coords, x, residues, cfg)
}

/// Node task whose labels mark nodes with more than the dataset-median number
/// of two-hop neighbours; node features are pure noise.
pub fn two_hop_dataset(cfg: &NodeTaskConfig) -> Result<Vec<ContactGraph>, GraphError> {
    let fc = FeatureConfig { epsilon: cfg.epsilon, ..FeatureConfig::structural() };
    let mut graphs = Vec::with_capacity(cfg.graphs);
    for i in 0..cfg.graphs {
        let mut rng = stream_rng(cfg.seed, &[0x2409, i as u64]);
        let n = rng.random_range(cfg.min_nodes..=cfg.max_nodes);
        graphs.push(random_geometric_graph(&mut rng, &format!("node_{i:04}"), n, cfg.box_side, cfg.min_spacing, cfg.feature_dim, &fc)?);
    }
    let mut all: Vec<usize> = graphs.iter().flat_map(two_hop_counts).collect();
    all.sort_unstable();
    let median = all[all.len() / 2];
    for g in &mut graphs {
        g.node_labels = Some(two_hop_counts(g).into_iter().map(|c| u8::from(c > median)).collect());
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn motif_edges_match_design() {
        let cfg = MotifDatasetConfig::default();
        let want = [6, 5, 9, 15];
        for (k, m) in Motif::ALL.into_iter().enumerate() {
            let mut rng = stream_rng(3, &[k as u64]);
            let p = planted_graph(m, &cfg, &mut rng, "t").unwrap();
            assert_eq!(p.motif_edges.iter().filter(|&&b| b).count(), want[k], "{m:?}");
            assert_eq!(p.motif_nodes.len(), 6);
            assert_eq!(p.graph.graph_label, Some(Label::Class(k)));
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let mut rng = stream_rng(1, &[]);
        let r = random_rotation(&mut rng);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                assert!((d - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_hop_on_path() {
        let coords: Vec<[f64; 3]> = (0..5).map(|i| [i as f64 * 5.0, 0.0, 0.0]).collect();
        let fc = FeatureConfig { epsilon: 6.0, ..FeatureConfig::structural() };
        let g = graph_from_parts("p", coords, Tensor::zeros(5, 1), vec![AminoAcid::Ala; 5], &fc).unwrap();
        assert_eq!(two_hop_counts(&g), vec![2, 3, 4, 3, 2]);
    }
}
