//! ε-radius residue contact graphs and their node/edge feature blocks.

mod cache;

use thiserror::Error;

use crate::diff::Tensor;
use crate::protein_io::residues::normalized_properties;
use crate::protein_io::{AminoAcid, EmbeddingMatrix, Label, ProteinStructure};

pub use cache::{read_graphs, write_graphs};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("feature configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Ordering(String),
    #[error("{id}: {reason}")]
    Data { id: String, reason: String },
    #[error("graph cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Node feature blocks, listed in their fixed concatenation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureBlock {
    AaOnehot,
    Physchem,
    Sasa,
    Esm,
    Degree,
    Positional,
}

impl FeatureBlock {
    pub const ALL: [FeatureBlock; 6] = [
        FeatureBlock::AaOnehot,
        FeatureBlock::Physchem,
        FeatureBlock::Sasa,
        FeatureBlock::Esm,
        FeatureBlock::Degree,
        FeatureBlock::Positional,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureBlock::AaOnehot => "aa_onehot",
            FeatureBlock::Physchem => "physchem",
            FeatureBlock::Sasa => "sasa",
            FeatureBlock::Esm => "esm",
            FeatureBlock::Degree => "degree",
            FeatureBlock::Positional => "positional",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureBlock> {
        Self::ALL.into_iter().find(|b| b.name() == s.trim())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureConfig {
    pub epsilon: f64,
    pub blocks: Vec<FeatureBlock>,
    pub rbf_centers: usize,
    /// Defaults to `epsilon / rbf_centers` when unset.
    pub rbf_sigma: Option<f64>,
    pub esm_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { epsilon: 8.0, blocks: FeatureBlock::ALL.to_vec(), rbf_centers: 16, rbf_sigma: None, esm_dim: 1280 }
    }
}

/// Largest sequence separation distinguished by the edge features.
pub const SEQ_SEP_CAP: usize = 50;

impl FeatureConfig {
    /// One-hot only.
    pub fn onehot() -> Self {
        Self { blocks: vec![FeatureBlock::AaOnehot], ..Self::default() }
    }

    /// Everything except the language-model embedding block (38 dims).
    pub fn structural() -> Self {
        Self { blocks: FeatureBlock::ALL.into_iter().filter(|&b| b != FeatureBlock::Esm).collect(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(GraphError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.rbf_centers < 2 {
            return Err(GraphError::Config("at least 2 RBF centers are required".into()));
        }
        if let Some(s) = self.rbf_sigma {
            if !(s > 0.0) {
                return Err(GraphError::Config(format!("rbf_sigma must be positive, got {s}")));
            }
        }
        if self.blocks.is_empty() {
            return Err(GraphError::Config("no feature blocks enabled".into()));
        }
        Ok(())
    }

    pub fn has(&self, b: FeatureBlock) -> bool {
        self.blocks.contains(&b)
    }

    pub fn block_dim(&self, b: FeatureBlock) -> usize {
        match b {
            FeatureBlock::AaOnehot => 20,
            FeatureBlock::Physchem => 10,
            FeatureBlock::Sasa => 2,
            FeatureBlock::Esm => self.esm_dim,
            FeatureBlock::Degree => 1,
            FeatureBlock::Positional => 5,
        }
    }

    /// `(block, start, end)` column ranges in concatenation order.
    pub fn layout(&self) -> Vec<(FeatureBlock, usize, usize)> {
        let mut out = Vec::new();
        let mut at = 0;
        for b in FeatureBlock::ALL {
            if self.has(b) {
                let d = self.block_dim(b);
                out.push((b, at, at + d));
                at += d;
            }
        }
        out
    }

    pub fn node_dim(&self) -> usize {
        self.layout().last().map_or(0, |l| l.2)
    }

    pub fn edge_dim(&self) -> usize {
        self.rbf_centers + 2
    }

    pub fn sigma(&self) -> f64 {
        self.rbf_sigma.unwrap_or(self.epsilon / self.rbf_centers as f64)
    }
}

/// Residue graph with symmetric directed edges.
///
/// Undirected edge `u` is stored as directed edges `2u = (i, j)` and
/// `2u + 1 = (j, i)` with `i < j`, so masks over undirected edges map onto
/// both directions by index arithmetic.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactGraph {
    pub protein_id: String,
    pub n_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub node_features: Tensor,
    pub edge_features: Tensor,
    pub coords: Vec<[f64; 3]>,
    pub residues: Vec<AminoAcid>,
    pub rsa: Vec<f64>,
    pub epsilon: f64,
    pub graph_label: Option<Label>,
    pub node_labels: Option<Vec<u8>>,
}

impl ContactGraph {
    pub fn num_undirected(&self) -> usize {
        self.edges.len() / 2
    }

    /// Endpoints `(i, j)`, `i < j`, of undirected edge `u`.
    pub fn undirected(&self, u: usize) -> (usize, usize) {
        self.edges[2 * u]
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.n_nodes];
        for &(i, _) in &self.edges {
            d[i] += 1;
        }
        d
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.cols()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        dist(&self.coords[i], &self.coords[j])
    }

    /// Graph restricted to the undirected edges with `keep[u]`; features are copied.
    pub fn with_edges(&self, keep: &[bool]) -> ContactGraph {
        let mut edges = Vec::new();
        let mut rows = Vec::new();
        for (u, &k) in keep.iter().enumerate() {
            if k {
                edges.push(self.edges[2 * u]);
                edges.push(self.edges[2 * u + 1]);
                rows.push(2 * u);
                rows.push(2 * u + 1);
            }
        }
        ContactGraph { edges, edge_features: self.edge_features.select_rows(&rows), ..self.clone() }
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> ContactGraph {
        let n = self.n_nodes;
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let node_features = self.node_features.select_rows(&inv);
        let pairs: Vec<((usize, usize), usize)> = (0..self.num_undirected())
            .map(|u| {
                let (i, j) = self.undirected(u);
                let (a, b) = (perm[i], perm[j]);
                ((a.min(b), a.max(b)), u)
            })
            .collect();
        let mut sorted = pairs;
        sorted.sort();
        let mut edges = Vec::with_capacity(self.edges.len());
        let mut rows = Vec::with_capacity(self.edges.len());
        for ((a, b), u) in sorted {
            // keep the feature row whose direction matches after relabeling
            let (i, _) = self.undirected(u);
            let fwd = if perm[i] == a { 2 * u } else { 2 * u + 1 };
            edges.push((a, b));
            edges.push((b, a));
            rows.push(fwd);
            rows.push(fwd ^ 1);
        }
        ContactGraph {
            protein_id: self.protein_id.clone(),
            n_nodes: n,
            edges,
            node_features,
            edge_features: self.edge_features.select_rows(&rows),
            coords: inv.iter().map(|&i| self.coords[i]).collect(),
            residues: inv.iter().map(|&i| self.residues[i]).collect(),
            rsa: inv.iter().map(|&i| self.rsa[i]).collect(),
            epsilon: self.epsilon,
            graph_label: self.graph_label.clone(),
            node_labels: self.node_labels.as_ref().map(|l| inv.iter().map(|&i| l[i]).collect()),
        }
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// All pairs `(i, j)`, `i < j`, with `‖c_i − c_j‖ ≤ ε`, in lexicographic order.
pub fn contact_pairs(coords: &[[f64; 3]], epsilon: f64) -> Vec<(usize, usize)> {
    let n = coords.len();
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    let cell = epsilon.max(1e-9);
    let key = |p: &[f64; 3]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64);
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, c) in coords.iter().enumerate() {
        grid.entry(key(c)).or_default().push(i);
    }
    for i in 0..n {
        let (x, y, z) = key(&coords[i]);
        let mut near = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(l) = grid.get(&(x + dx, y + dy, z + dz)) {
                        near.extend(l.iter().copied().filter(|&j| j > i && dist(&coords[i], &coords[j]) <= epsilon));
                    }
                }
            }
        }
        near.sort_unstable();
        out.extend(near.into_iter().map(|j| (i, j)));
    }
    out
}

/// Directed edge list from undirected pairs, in the `2u`/`2u+1` layout.
pub fn directed_edges(pairs: &[(usize, usize)]) -> Vec<(usize, usize)> {
    pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect()
}

fn f32_round(t: Tensor) -> Tensor {
    t.map(|v| v as f32 as f64)
}

/// RBF distance expansion, normalized distance and capped sequence separation.
pub fn edge_features(coords: &[[f64; 3]], edges: &[(usize, usize)], cfg: &FeatureConfig) -> Tensor {
    let k = cfg.rbf_centers;
    let sigma = cfg.sigma();
    let mut t = Tensor::zeros(edges.len(), cfg.edge_dim());
    for (e, &(i, j)) in edges.iter().enumerate() {
        let d = dist(&coords[i], &coords[j]);
        let row = t.row_mut(e);
        for (c, slot) in row.iter_mut().take(k).enumerate() {
            let mu = cfg.epsilon * c as f64 / (k - 1) as f64;
            *slot = (-(d - mu).powi(2) / (2.0 * sigma * sigma)).exp();
        }
        row[k] = d / cfg.epsilon;
        row[k + 1] = i.abs_diff(j).min(SEQ_SEP_CAP) as f64 / SEQ_SEP_CAP as f64;
    }
    f32_round(t)
}

/// Per-residue feature matrix in the fixed block order.
///
/// `degrees` must be supplied when the degree block is enabled; it is the
/// node degree on the clean (un-augmented) graph.
pub fn node_features(
    structure: &ProteinStructure,
    embeddings: Option<&EmbeddingMatrix>,
    degrees: Option<&[usize]>,
    cfg: &FeatureConfig,
) -> Result<Tensor, GraphError> {
    cfg.validate()?;
    let n = structure.len();
    let id = &structure.id;
    if cfg.has(FeatureBlock::Esm) {
        let e = embeddings.ok_or_else(|| GraphError::Data { id: id.clone(), reason: "esm block enabled but no embedding supplied".into() })?;
        if e.rows != n || e.dim != cfg.esm_dim {
            return Err(GraphError::Data {
                id: id.clone(),
                reason: format!("embedding is {}x{}, expected {n}x{}", e.rows, e.dim, cfg.esm_dim),
            });
        }
    } else if embeddings.is_some() {
        return Err(GraphError::Config("embedding supplied but esm block disabled".into()));
    }
    if cfg.has(FeatureBlock::Degree) {
        match degrees {
            None => return Err(GraphError::Ordering("degree block requested before the contact graph was built".into())),
            Some(d) if d.len() != n => {
                return Err(GraphError::Data { id: id.clone(), reason: format!("{} degrees for {n} residues", d.len()) })
            }
            _ => {}
        }
    }
    let sasa: Vec<f64> = structure.residues.iter().map(|r| r.sasa).collect();
    let (lo, hi) = sasa.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let max_deg = degrees.map_or(0, |d| d.iter().copied().max().unwrap_or(0));

    let mut x = Tensor::zeros(n, cfg.node_dim());
    for (b, start, _) in cfg.layout() {
        for (i, r) in structure.residues.iter().enumerate() {
            let row = &mut x.row_mut(i)[start..];
            match b {
                FeatureBlock::AaOnehot => row[r.amino_acid.index()] = 1.0,
                FeatureBlock::Physchem => row[..10].copy_from_slice(&normalized_properties(r.amino_acid)),
                FeatureBlock::Sasa => {
                    row[0] = if hi > lo { (sasa[i] - lo) / (hi - lo) } else { 0.0 };
                    row[1] = r.rsa;
                }
                FeatureBlock::Esm => row[..cfg.esm_dim].copy_from_slice(embeddings.expect("checked above").row(i)),
                FeatureBlock::Degree => {
                    let d = degrees.expect("checked above")[i];
                    row[0] = if max_deg > 0 { d as f64 / max_deg as f64 } else { 0.0 };
                }
                FeatureBlock::Positional => row[..5].copy_from_slice(&positional(i, n)),
            }
        }
    }
    Ok(f32_round(x))
}

/// `(i/N, sin(iπ/N), cos(iπ/N), sin(2iπ/N), cos(2iπ/N))`.
pub fn positional(i: usize, n: usize) -> [f64; 5] {
    let t = std::f64::consts::PI * i as f64 / n as f64;
    [i as f64 / n as f64, t.sin(), t.cos(), (2.0 * t).sin(), (2.0 * t).cos()]
}

pub fn build_contact_graph(
    structure: &ProteinStructure,
    embeddings: Option<&EmbeddingMatrix>,
    cfg: &FeatureConfig,
) -> Result<ContactGraph, GraphError> {
    cfg.validate()?;
    structure.validate().map_err(|e| GraphError::Data { id: structure.id.clone(), reason: e.to_string() })?;
    let coords = structure.ca_coords();
    let edges = directed_edges(&contact_pairs(&coords, cfg.epsilon));
    let mut degrees = vec![0; coords.len()];
    for &(i, _) in &edges {
        degrees[i] += 1;
    }
    let node_features = node_features(structure, embeddings, Some(&degrees), cfg)?;
    let edge_features = edge_features(&coords, &edges, cfg);
    Ok(ContactGraph {
        protein_id: structure.id.clone(),
        n_nodes: coords.len(),
        edges,
        node_features,
        edge_features,
        coords,
        residues: structure.residues.iter().map(|r| r.amino_acid).collect(),
        rsa: structure.residues.iter().map(|r| r.rsa).collect(),
        epsilon: cfg.epsilon,
        graph_label: None,
        node_labels: None,
    })
}

/// Graph over arbitrary coordinates with caller-supplied node features
/// (synthetic data); edges and edge features follow `cfg`.
pub fn graph_from_parts(
    id: &str,
    coords: Vec<[f64; 3]>,
    node_features: Tensor,
    residues: Vec<AminoAcid>,
    cfg: &FeatureConfig,
) -> Result<ContactGraph, GraphError> {
    cfg.validate()?;
    let n = coords.len();
    if node_features.rows() != n || residues.len() != n {
        return Err(GraphError::Data { id: id.into(), reason: "coordinate, feature and residue counts differ".into() });
    }
    let edges = directed_edges(&contact_pairs(&coords, cfg.epsilon));
    let edge_features = edge_features(&coords, &edges, cfg);
    Ok(ContactGraph {
        protein_id: id.to_string(),
        n_nodes: n,
        edges,
        node_features,
        edge_features,
        coords,
        residues,
        rsa: vec![0.0; n],
        epsilon: cfg.epsilon,
        graph_label: None,
        node_labels: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> ProteinStructure {
        let pts: Vec<_> = xs.iter().map(|&x| (AminoAcid::Ala, [x, 0.0, 0.0])).collect();
        ProteinStructure::from_ca_trace("L", &pts)
    }

    #[test]
    fn collinear_contacts() {
        let g = build_contact_graph(&line(&[0.0, 5.0, 11.0]), None, &FeatureConfig::structural()).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 0), (1, 2), (2, 1)]);
    }

    #[test]
    fn boundary_is_inclusive() {
        assert_eq!(contact_pairs(&[[0.0; 3], [8.0, 0.0, 0.0]], 8.0), vec![(0, 1)]);
        assert!(contact_pairs(&[[0.0; 3], [8.001, 0.0, 0.0]], 8.0).is_empty());
    }

    #[test]
    fn positional_at_zero() {
        assert_eq!(positional(0, 17), [0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn dims_per_config() {
        assert_eq!(FeatureConfig::onehot().node_dim(), 20);
        assert_eq!(FeatureConfig::structural().node_dim(), 38);
        assert_eq!(FeatureConfig::default().node_dim(), 1318);
        assert_eq!(FeatureConfig::default().edge_dim(), 18);
    }

    #[test]
    fn degree_requires_graph() {
        let err = node_features(&line(&[0.0, 3.0]), None, None, &FeatureConfig::structural()).unwrap_err();
        assert!(matches!(err, GraphError::Ordering(_)));
    }

    #[test]
    fn rbf_peak_and_separation() {
        let cfg = FeatureConfig::structural();
        let mu3 = cfg.epsilon * 3.0 / 15.0;
        let coords = vec![[0.0; 3], [mu3, 0.0, 0.0]];
        let ef = edge_features(&coords, &[(0, 1)], &cfg);
        let row = ef.row(0);
        assert!((row[3] - 1.0).abs() < 1e-7);
        assert!(row[..16].iter().all(|&v| v <= row[3]));
        assert!((row[17] - 0.02).abs() < 1e-7);
        let far = edge_features(&[[0.0; 3]; 121], &[(0, 120)], &cfg);
        assert_eq!(far.get(0, 17), 1.0);
    }

    #[test]
    fn alanine_onehot_and_unit_physchem() {
        let g = build_contact_graph(&line(&[0.0, 3.8, 7.6]), None, &FeatureConfig::structural()).unwrap();
        let row = g.node_features.row(0);
        assert_eq!(row[..20].iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(row[AminoAcid::Ala.index()], 1.0);
        assert!(row[20..30].iter().all(|v| (0.0..=1.0).contains(v)));
        // middle residue has the maximal degree
        assert_eq!(g.node_features.get(1, 32), 1.0);
    }

    #[test]
    fn permutation_round_trip() {
        let g = build_contact_graph(&line(&[0.0, 3.8, 7.6, 11.4, 2.0]), None, &FeatureConfig::structural()).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let mut inv = [0; 5];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        assert_eq!(g.permuted(&perm).permuted(&inv), g);
    }
}
