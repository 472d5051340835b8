use crate::diff::Tensor;
use crate::graph_builder::ContactGraph;

/// Disjoint union of graphs with per-node graph ids.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub x: Tensor,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_attr: Tensor,
    pub node_graph: Vec<usize>,
    /// Node offsets, `n_graphs + 1` entries.
    pub offsets: Vec<usize>,
    /// Directed-edge offsets, `n_graphs + 1` entries.
    pub edge_offsets: Vec<usize>,
    /// Amino-acid composition per graph, `n_graphs × 20`, rows sum to 1.
    pub composition: Tensor,
}

impl GraphBatch {
    pub fn new(graphs: &[&ContactGraph]) -> Self {
        let d = graphs.first().map_or(0, |g| g.node_dim());
        let de = graphs.first().map_or(0, |g| g.edge_dim());
        let total_n: usize = graphs.iter().map(|g| g.n_nodes).sum();
        let total_e: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut x = Vec::with_capacity(total_n * d);
        let mut ea = Vec::with_capacity(total_e * de);
        let (mut src, mut dst, mut node_graph) = (Vec::with_capacity(total_e), Vec::with_capacity(total_e), Vec::with_capacity(total_n));
        let mut offsets = vec![0];
        let mut edge_offsets = vec![0];
        let mut composition = Tensor::zeros(graphs.len(), 20);
        for (gi, g) in graphs.iter().enumerate() {
            assert_eq!(g.node_dim(), d, "graphs in a batch must share the node feature width");
            let base = *offsets.last().expect("non-empty");
            x.extend_from_slice(g.node_features.data());
            ea.extend_from_slice(g.edge_features.data());
            for &(i, j) in &g.edges {
                src.push(base + i);
                dst.push(base + j);
            }
            node_graph.extend(std::iter::repeat_n(gi, g.n_nodes));
            offsets.push(base + g.n_nodes);
            edge_offsets.push(edge_offsets[gi] + g.edges.len());
            for aa in &g.residues {
                let c = composition.get(gi, aa.index());
                composition.set(gi, aa.index(), c + 1.0 / g.n_nodes as f64);
            }
        }
        GraphBatch {
            x: Tensor::from_vec(total_n, d, x).expect("sizes computed above"),
            src,
            dst,
            edge_attr: Tensor::from_vec(total_e, de, ea).expect("sizes computed above"),
            node_graph,
            offsets,
            edge_offsets,
            composition,
        }
    }

    pub fn single(g: &ContactGraph) -> Self {
        Self::new(&[g])
    }

    pub fn n_graphs(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.node_graph.len()
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}
