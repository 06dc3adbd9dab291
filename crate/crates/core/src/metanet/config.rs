use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    WsKan,
    DeepSets,
    /// MLP over the flattened checkpoint vector.
    FlatMlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::WsKan => "wskan",
            ModelKind::DeepSets => "deepsets",
            ModelKind::FlatMlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// One prediction per graph.
    Graph,
    /// One prediction per edge.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Sum,
    Mean,
}

/// How graph readout pools node and edge states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pool {
    /// Mean over all nodes and mean over all edges.
    #[default]
    Global,
    /// Mean within every node layer and every edge layer, concatenated in
    /// layer order. Layer sizes then stop weighting the readout, which
    /// helps when evaluating on wider networks.
    PerLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaConfig {
    pub kind: ModelKind,
    pub hidden_dim: usize,
    /// Message-passing layers (WS-KAN only).
    pub n_layers: usize,
    pub pe_embed_dim: usize,
    pub use_pe: bool,
    pub bidirectional: bool,
    pub readout: Readout,
    pub head_out_dim: usize,
    pub dropout_rate: f64,
    /// Hidden layers inside every MLP block.
    pub mlp_hidden_layers: usize,
    pub aggregation: Aggregation,
    /// Add each layer's node and edge updates onto the incoming states.
    #[serde(default)]
    pub residual: bool,
    #[serde(default)]
    pub pool: Pool,
    /// Edge feature length `2 + G + k`.
    pub feature_len: usize,
    /// Number of distinct positional ids.
    pub pe_vocab: usize,
    /// KAN depth `L` for the layer one-hot of DeepSets.
    pub n_kan_layers: usize,
    /// Exact KAN widths the flat MLP was built for.
    pub flat_dims: Option<Vec<usize>>,
}

impl MetaConfig {
    /// A configuration for KANs of widths `dims` with `feature_len` edge
    /// features; remaining fields take the desk defaults.
    pub fn for_dims(kind: ModelKind, dims: &[usize], feature_len: usize, readout: Readout, out: usize) -> Self {
        Self {
            kind,
            hidden_dim: 32,
            n_layers: 3,
            pe_embed_dim: 8,
            use_pe: true,
            bidirectional: true,
            readout,
            head_out_dim: out,
            dropout_rate: 0.2,
            mlp_hidden_layers: 2,
            aggregation: Aggregation::Sum,
            residual: true,
            pool: Pool::Global,
            feature_len,
            pe_vocab: crate::graph::pe_vocab(dims),
            n_kan_layers: dims.len() - 1,
            flat_dims: (kind == ModelKind::FlatMlp).then(|| dims.to_vec()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.hidden_dim < 1 {
            return bad("hidden_dim must be at least 1");
        }
        if self.n_layers < 1 {
            return bad("n_layers must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.head_out_dim < 1 {
            return bad("head_out_dim must be at least 1");
        }
        if self.feature_len < 3 {
            return bad("feature_len must cover w_b, w_s and one coefficient");
        }
        if self.use_pe && self.pe_embed_dim == 0 {
            return bad("pe_embed_dim must be positive when positional ids are used");
        }
        if self.kind == ModelKind::FlatMlp && self.flat_dims.as_ref().is_none_or(|d| d.len() < 2) {
            return bad("flat MLP needs the KAN widths it was built for");
        }
        Ok(())
    }
}
