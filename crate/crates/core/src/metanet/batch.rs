use std::sync::Arc;

use crate::engine::Mat;
use crate::error::{Error, Result};
use crate::graph::KanGraph;

/// Disjoint union of several KAN-graphs, laid out for batched message
/// passing. Node and edge order follow the member graphs in sequence.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub n_graphs: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub node_scalar: Mat,
    pub node_pe: Arc<Vec<usize>>,
    pub node_graph: Arc<Vec<usize>>,
    pub node_layer: Vec<usize>,
    pub edge_feat: Mat,
    pub edge_src: Arc<Vec<usize>>,
    pub edge_dst: Arc<Vec<usize>>,
    pub edge_pe_src: Arc<Vec<usize>>,
    pub edge_pe_dst: Arc<Vec<usize>>,
    pub edge_layer: Vec<usize>,
    pub edge_graph: Arc<Vec<usize>>,
    pub nodes_per_graph: Vec<usize>,
    pub edges_per_graph: Vec<usize>,
    pub dims: Vec<Vec<usize>>,
    pub in_degree: Vec<usize>,
    pub out_degree: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&KanGraph]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::EmptyInput);
        }
        let f = graphs[0].feature_len();
        let n_nodes: usize = graphs.iter().map(|g| g.num_nodes()).sum();
        let n_edges: usize = graphs.iter().map(|g| g.num_edges()).sum();
        let mut node_scalar = Vec::with_capacity(n_nodes);
        let mut node_pe = Vec::with_capacity(n_nodes);
        let mut node_graph = Vec::with_capacity(n_nodes);
        let mut node_layer = Vec::with_capacity(n_nodes);
        let mut feat = Vec::with_capacity(n_edges * f);
        let (mut src, mut dst) = (Vec::with_capacity(n_edges), Vec::with_capacity(n_edges));
        let (mut pe_s, mut pe_d) = (Vec::with_capacity(n_edges), Vec::with_capacity(n_edges));
        let mut layer = Vec::with_capacity(n_edges);
        let mut edge_graph = Vec::with_capacity(n_edges);
        let mut in_degree = vec![0; n_nodes];
        let mut out_degree = vec![0; n_nodes];
        let mut base = 0;
        for (gi, g) in graphs.iter().enumerate() {
            if g.feature_len() != f {
                return Err(Error::FeatureLengthMismatch {
                    expected: f,
                    got: g.feature_len(),
                });
            }
            for n in &g.nodes {
                node_scalar.push(n.input_scalar);
                node_pe.push(n.pe_id);
                node_graph.push(gi);
                node_layer.push(n.layer);
            }
            for e in &g.edges {
                if e.feature.len() != f {
                    return Err(Error::FeatureLengthMismatch {
                        expected: f,
                        got: e.feature.len(),
                    });
                }
                feat.extend_from_slice(&e.feature);
                src.push(base + e.src);
                dst.push(base + e.dst);
                in_degree[base + e.dst] += 1;
                out_degree[base + e.src] += 1;
                pe_s.push(e.pe_pair.0);
                pe_d.push(e.pe_pair.1);
                layer.push(e.layer);
                edge_graph.push(gi);
            }
            base += g.num_nodes();
        }
        Ok(Self {
            n_graphs: graphs.len(),
            n_nodes,
            n_edges,
            node_scalar: Mat::col(node_scalar),
            node_pe: Arc::new(node_pe),
            node_graph: Arc::new(node_graph),
            node_layer,
            edge_feat: Mat::from_vec(n_edges, f, feat),
            edge_src: Arc::new(src),
            edge_dst: Arc::new(dst),
            edge_pe_src: Arc::new(pe_s),
            edge_pe_dst: Arc::new(pe_d),
            edge_layer: layer,
            edge_graph: Arc::new(edge_graph),
            nodes_per_graph: graphs.iter().map(|g| g.num_nodes()).collect(),
            edges_per_graph: graphs.iter().map(|g| g.num_edges()).collect(),
            dims: graphs.iter().map(|g| g.dims.clone()).collect(),
            in_degree,
            out_degree,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.edge_feat.cols
    }
}
