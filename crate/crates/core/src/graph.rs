//! KAN-graphs: neurons as nodes, edge functions as directed edges carrying
//! `[w_b, w_s, c...]` feature vectors.
//!
//! Node ids run layer by layer. Edges are listed per layer in the same
//! `p`-outer, `q`-inner order as the checkpoint, pointing from input unit
//! `q` of layer `l` to output unit `p` of layer `l + 1`.
//!
//! Positional ids: inputs get `0..d_0`, each hidden layer one shared id,
//! outputs the next `d_L` ids.

use crate::codec::{fmt_f64s, parse_all, parse_num, ByteReader, ByteWriter, TextReader};
use crate::error::{Error, Result};
use crate::kan::{KanLayer, KanNet};
use crate::spline::SplineSpec;
use crate::symmetry::GroupElement;

pub const GRAPH_MAGIC: &[u8; 4] = b"KANG";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: usize,
    pub layer: usize,
    pub pe_id: usize,
    pub input_scalar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Layer of the source node.
    pub layer: usize,
    pub feature: Vec<f64>,
    pub pe_pair: (usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanGraph {
    pub dims: Vec<usize>,
    pub spec: SplineSpec,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

/// First node id of every layer.
pub fn layer_offsets(dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(dims.len() + 1);
    let mut acc = 0;
    for &d in dims {
        off.push(acc);
        acc += d;
    }
    off.push(acc);
    off
}

/// Size of the positional-id vocabulary for networks of widths `dims`.
pub fn pe_vocab(dims: &[usize]) -> usize {
    dims[0] + dims.len().saturating_sub(2) + dims[dims.len() - 1]
}

fn pe_of(dims: &[usize], layer: usize, idx: usize) -> usize {
    let last = dims.len() - 1;
    if layer == 0 {
        idx
    } else if layer < last {
        dims[0] + layer - 1
    } else {
        dims[0] + last - 1 + idx
    }
}

/// Graph of `net` with positional ids assigned and zero input scalars.
pub fn build_graph(net: &KanNet) -> KanGraph {
    let dims = net.dims().to_vec();
    let off = layer_offsets(&dims);
    let mut nodes = Vec::with_capacity(off[dims.len()]);
    for (l, &d) in dims.iter().enumerate() {
        for i in 0..d {
            nodes.push(Node {
                id: off[l] + i,
                layer: l,
                pe_id: 0,
                input_scalar: 0.0,
            });
        }
    }
    let mut edges = Vec::with_capacity(net.num_edges());
    for (l, layer) in net.layers().iter().enumerate() {
        for p in 0..layer.d_out() {
            for q in 0..layer.d_in() {
                edges.push(Edge {
                    src: off[l] + q,
                    dst: off[l + 1] + p,
                    layer: l,
                    feature: layer.edge(p, q).to_vec(),
                    pe_pair: (0, 0),
                });
            }
        }
    }
    let mut g = KanGraph {
        dims,
        spec: net.spec().clone(),
        nodes,
        edges,
    };
    g.assign_pe();
    g
}

impl KanGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_len(&self) -> usize {
        2 + self.spec.num_basis()
    }

    /// Sets node positional ids and edge endpoint pairs.
    pub fn assign_pe(&mut self) {
        let off = layer_offsets(&self.dims);
        for n in &mut self.nodes {
            n.pe_id = pe_of(&self.dims, n.layer, n.id - off[n.layer]);
        }
        for e in &mut self.edges {
            e.pe_pair = (self.nodes[e.src].pe_id, self.nodes[e.dst].pe_id);
        }
    }

    /// Writes `x` into the input nodes' scalars; every other node carries 0.
    pub fn inject_input(&self, x: &[f64]) -> Result<KanGraph> {
        if x.len() != self.dims[0] {
            return Err(Error::DimensionMismatch {
                expected: self.dims[0],
                got: x.len(),
            });
        }
        let mut g = self.clone();
        for n in &mut g.nodes {
            n.input_scalar = if n.layer == 0 { x[n.id] } else { 0.0 };
        }
        Ok(g)
    }

    pub fn input_scalars(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter(|n| n.layer == 0)
            .map(|n| n.input_scalar)
            .collect()
    }

    /// Reads the edge features back into a network.
    pub fn to_net(&self) -> Result<KanNet> {
        let stride = self.feature_len();
        let off = layer_offsets(&self.dims);
        let mut layers: Vec<KanLayer> = self
            .dims
            .windows(2)
            .map(|w| KanLayer::zeros(w[0], w[1], &self.spec))
            .collect();
        if self.edges.len() != self.dims.windows(2).map(|w| w[0] * w[1]).sum::<usize>() {
            return Err(Error::ShapeMismatch("edge count does not match dims".into()));
        }
        for e in &self.edges {
            if e.feature.len() != stride {
                return Err(Error::FeatureLengthMismatch {
                    expected: stride,
                    got: e.feature.len(),
                });
            }
            let l = e.layer;
            if l + 1 >= self.dims.len()
                || !(off[l]..off[l + 1]).contains(&e.src)
                || !(off[l + 1]..off[l + 2]).contains(&e.dst)
            {
                return Err(Error::ShapeMismatch(format!(
                    "edge {} -> {} does not join layers {l} and {}",
                    e.src,
                    e.dst,
                    l + 1
                )));
            }
            layers[l]
                .edge_mut(e.dst - off[l + 1], e.src - off[l])
                .copy_from_slice(&e.feature);
        }
        KanNet::from_layers(self.spec.clone(), layers)
    }

    /// Relabels hidden nodes by `g`, keeping canonical edge order, so that
    /// `build_graph(act(g, net)) == permute_graph(build_graph(net), g)`.
    pub fn permute(&self, g: &GroupElement) -> Result<KanGraph> {
        g.check(&self.dims)?;
        let off = layer_offsets(&self.dims);
        let perms: Vec<_> = (0..self.dims.len()).map(|l| g.layer_perm(l, &self.dims)).collect();
        // new node (l, i) is old node (l, sigma_l(i))
        let old_id = |id: usize, l: usize| off[l] + perms[l].apply(id - off[l]);
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let src = &self.nodes[old_id(n.id, n.layer)];
                Node {
                    id: n.id,
                    layer: n.layer,
                    pe_id: src.pe_id,
                    input_scalar: src.input_scalar,
                }
            })
            .collect();
        let perm = edge_permutation(&self.dims, g)?;
        let edges = self
            .edges
            .iter()
            .zip(&perm)
            .map(|(slot, &old)| Edge {
                src: slot.src,
                dst: slot.dst,
                layer: slot.layer,
                feature: self.edges[old].feature.clone(),
                pe_pair: self.edges[old].pe_pair,
            })
            .collect();
        Ok(KanGraph {
            dims: self.dims.clone(),
            spec: self.spec.clone(),
            nodes,
            edges,
        })
    }

    /// Sorted `(layer, src_pe, dst_pe, feature bits)` records; equal for
    /// graphs related by a hidden-unit relabeling.
    pub fn edge_multiset(&self) -> Vec<(usize, usize, usize, Vec<u64>)> {
        let mut v: Vec<_> = self
            .edges
            .iter()
            .map(|e| {
                (
                    e.layer,
                    e.pe_pair.0,
                    e.pe_pair.1,
                    e.feature.iter().map(|f| f.to_bits()).collect(),
                )
            })
            .collect();
        v.sort();
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GRAPH_MAGIC);
        w.u32(GRAPH_VERSION);
        w.usize(self.dims.len());
        for &d in &self.dims {
            w.usize(d);
        }
        w.f64(self.spec.a());
        w.f64(self.spec.b());
        w.usize(self.spec.grid());
        w.usize(self.spec.degree());
        w.usize(self.nodes.len());
        for n in &self.nodes {
            w.usize(n.id);
            w.usize(n.layer);
            w.usize(n.pe_id);
            w.f64(n.input_scalar);
        }
        w.usize(self.edges.len());
        for e in &self.edges {
            w.usize(e.src);
            w.usize(e.dst);
            w.usize(e.layer);
            w.usize(e.pe_pair.0);
            w.usize(e.pe_pair.1);
            w.f64s(&e.feature);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<KanGraph> {
        let mut r = ByteReader::new(bytes);
        r.magic(GRAPH_MAGIC)?;
        let version = r.u32()?;
        if version != GRAPH_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let n_dims = r.usize()?;
        if n_dims > r.remaining() / 4 {
            return Err(Error::TruncatedPayload);
        }
        let dims = (0..n_dims).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let spec = SplineSpec::new(r.f64()?, r.f64()?, r.usize()?, r.usize()?)?;
        let stride = 2 + spec.num_basis();
        let n_nodes = r.usize()?;
        if n_nodes > r.remaining() / 20 {
            return Err(Error::TruncatedPayload);
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            nodes.push(Node {
                id: r.usize()?,
                layer: r.usize()?,
                pe_id: r.usize()?,
                input_scalar: r.f64()?,
            });
        }
        let n_edges = r.usize()?;
        if n_edges > r.remaining() / 20 {
            return Err(Error::TruncatedPayload);
        }
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            edges.push(Edge {
                src: r.usize()?,
                dst: r.usize()?,
                layer: r.usize()?,
                pe_pair: (r.usize()?, r.usize()?),
                feature: r.f64s(stride)?,
            });
        }
        if r.remaining() != 0 {
            return Err(Error::Parse("trailing bytes after graph".into()));
        }
        let g = KanGraph {
            dims,
            spec,
            nodes,
            edges,
        };
        g.validate()?;
        Ok(g)
    }

    /// Structural checks on a decoded graph.
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 {
            return Err(Error::InvalidConfig("graph needs at least two layers".into()));
        }
        let off = layer_offsets(&self.dims);
        if self.nodes.len() != off[self.dims.len()] {
            return Err(Error::ShapeMismatch("node count does not match dims".into()));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i || n.layer >= self.dims.len() || !(off[n.layer]..off[n.layer + 1]).contains(&i) {
                return Err(Error::ShapeMismatch(format!("node record {i} is inconsistent")));
            }
        }
        self.to_net().map(|_| ())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("kan-graph v{GRAPH_VERSION}\n");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("dims {}\n", dims.join(" ")));
        s.push_str(&format!(
            "spline {:?} {:?} {} {}\n",
            self.spec.a(),
            self.spec.b(),
            self.spec.grid(),
            self.spec.degree()
        ));
        for n in &self.nodes {
            s.push_str(&format!("node {} {} {} {:?}\n", n.id, n.layer, n.pe_id, n.input_scalar));
        }
        for e in &self.edges {
            s.push_str(&format!(
                "edge {} {} {} {} {} {}\n",
                e.src,
                e.dst,
                e.layer,
                e.pe_pair.0,
                e.pe_pair.1,
                fmt_f64s(&e.feature)
            ));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<KanGraph> {
        let mut r = TextReader::new(text);
        let head = r.record("kan-graph")?;
        let version: u32 = parse_num(
            head.first()
                .and_then(|v| v.strip_prefix('v'))
                .ok_or_else(|| Error::Parse("missing version".into()))?,
        )?;
        if version != GRAPH_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let dims: Vec<usize> = parse_all(&r.record("dims")?)?;
        let sp = r.record("spline")?;
        if sp.len() != 4 {
            return Err(Error::Parse("spline line needs a b G k".into()));
        }
        let spec = SplineSpec::new(parse_num(sp[0])?, parse_num(sp[1])?, parse_num(sp[2])?, parse_num(sp[3])?)?;
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("graph needs at least two layers".into()));
        }
        let off = layer_offsets(&dims);
        let mut nodes = Vec::new();
        for _ in 0..off[dims.len()] {
            let t = r.record("node")?;
            if t.len() != 4 {
                return Err(Error::Parse("node line needs 4 fields".into()));
            }
            nodes.push(Node {
                id: parse_num(t[0])?,
                layer: parse_num(t[1])?,
                pe_id: parse_num(t[2])?,
                input_scalar: parse_num(t[3])?,
            });
        }
        let m: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let t = r.record("edge")?;
            if t.len() < 5 {
                return Err(Error::Parse("edge line too short".into()));
            }
            let idx: Vec<usize> = parse_all(&t[..5])?;
            edges.push(Edge {
                src: idx[0],
                dst: idx[1],
                layer: idx[2],
                pe_pair: (idx[3], idx[4]),
                feature: parse_all(&t[5..])?,
            });
        }
        let g = KanGraph {
            dims,
            spec,
            nodes,
            edges,
        };
        g.validate()?;
        Ok(g)
    }
}

pub fn permute_graph(graph: &KanGraph, g: &GroupElement) -> Result<KanGraph> {
    graph.permute(g)
}

/// Edge index map induced by `g`: entry `e` is the index (in canonical
/// order) of the original edge that lands in slot `e` after acting.
pub fn edge_permutation(dims: &[usize], g: &GroupElement) -> Result<Vec<usize>> {
    g.check(dims)?;
    let mut out = Vec::with_capacity(dims.windows(2).map(|w| w[0] * w[1]).sum());
    let mut base = 0;
    for l in 0..dims.len() - 1 {
        let (d_in, d_out) = (dims[l], dims[l + 1]);
        let rows = g.layer_perm(l + 1, dims);
        let cols = g.layer_perm(l, dims);
        for p in 0..d_out {
            for q in 0..d_in {
                out.push(base + rows.apply(p) * d_in + cols.apply(q));
            }
        }
        base += d_in * d_out;
    }
    Ok(out)
}
