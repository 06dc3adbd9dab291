use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::GraphBatch;
use super::config::{Aggregation, MetaConfig, ModelKind, Pool, Readout};
use super::mlp::Mlp;
use crate::codec::{ByteReader, ByteWriter};
use crate::engine::{Mat, ParamId, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::KanGraph;
use crate::parallel;

pub const META_MAGIC: &[u8; 4] = b"WSKM";
pub const META_VERSION: u32 = 1;

/// Per-column affine normalization `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Norm {
    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Column means and standard deviations of `rows` (degenerate columns
    /// keep scale 1).
    pub fn fit<'a>(n: usize, rows: impl Iterator<Item = &'a [f64]>) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = 0usize;
        for r in rows {
            for j in 0..n {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
            count += 1;
        }
        if count == 0 {
            return Self::identity(n);
        }
        let c = count as f64;
        let shift: Vec<f64> = sum.iter().map(|s| s / c).collect();
        let scale = sq
            .iter()
            .zip(&shift)
            .map(|(q, m)| {
                let var = (q / c - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn apply_rows(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for r in 0..out.rows {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.shift[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn invert_rows(&self, m: &Mat) -> Mat {
        let mut out = m.clone();
        for r in 0..out.rows {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.shift[j];
            }
        }
        out
    }

    fn write(&self, w: &mut ByteWriter) {
        w.usize(self.shift.len());
        w.f64s(&self.shift);
        w.f64s(&self.scale);
    }

    fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let n = r.usize()?;
        Ok(Self {
            shift: r.f64s(n)?,
            scale: r.f64s(n)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(super) struct MpLayer {
    pub(super) fwd_msg: Mlp,
    pub(super) fwd_upd: Mlp,
    pub(super) bwd_msg: Mlp,
    pub(super) bwd_upd: Mlp,
    pub(super) edge: Mlp,
    pub(super) node: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub(super) enum Arch {
    WsKan {
        pe: Option<ParamId>,
        node_enc: Mlp,
        edge_enc: Mlp,
        layers: Vec<MpLayer>,
        head: Mlp,
    },
    DeepSets {
        phi: Mlp,
        rho: Mlp,
    },
    Flat {
        mlp: Mlp,
    },
}

/// A trainable weight-space model with its normalization constants.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaModel {
    pub cfg: MetaConfig,
    pub params: ParamSet,
    pub feature_norm: Norm,
    pub target_norm: Norm,
    pub(super) arch: Arch,
}

/// Intermediate states of a WS-KAN forward pass.
#[derive(Debug, Clone, Copy)]
pub struct WsKanStates {
    pub nodes: Var,
    pub edges: Var,
}

impl MetaModel {
    pub fn new<R: Rng + ?Sized>(cfg: MetaConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let h = cfg.hidden_dim;
        let nh = cfg.mlp_hidden_layers;
        let arch = match cfg.kind {
            ModelKind::WsKan => {
                let pe_dim = if cfg.use_pe { cfg.pe_embed_dim } else { 0 };
                let pe = cfg
                    .use_pe
                    .then(|| ps.add(Mat::randn(cfg.pe_vocab, cfg.pe_embed_dim, 1.0, rng)));
                let node_enc = Mlp::new(&mut ps, &Mlp::sizes(1 + pe_dim, h, nh, h), rng);
                let edge_enc = Mlp::new(&mut ps, &Mlp::sizes(cfg.feature_len + 2 * pe_dim, h, nh, h), rng);
                let layers = (0..cfg.n_layers)
                    .map(|_| MpLayer {
                        fwd_msg: Mlp::new(&mut ps, &Mlp::sizes(2 * h, h, nh, h), rng),
                        fwd_upd: Mlp::new(&mut ps, &Mlp::sizes(2 * h, h, nh, h), rng),
                        bwd_msg: Mlp::new(&mut ps, &Mlp::sizes(2 * h, h, nh, h), rng),
                        bwd_upd: Mlp::new(&mut ps, &Mlp::sizes(2 * h, h, nh, h), rng),
                        edge: Mlp::new(&mut ps, &Mlp::sizes(3 * h, h, nh, h), rng),
                        node: Mlp::new(&mut ps, &Mlp::sizes(3 * h, h, nh, h), rng),
                    })
                    .collect();
                let head_in = match cfg.readout {
                    Readout::Graph => match cfg.pool {
                        Pool::Global => 2 * h,
                        Pool::PerLayer => (2 * cfg.n_kan_layers + 1) * h,
                    },
                    Readout::Edge => h,
                };
                let head = Mlp::new(&mut ps, &Mlp::sizes(head_in, h, nh, cfg.head_out_dim), rng);
                Arch::WsKan {
                    pe,
                    node_enc,
                    edge_enc,
                    layers,
                    head,
                }
            }
            ModelKind::DeepSets => {
                let phi = Mlp::new(&mut ps, &Mlp::sizes(cfg.feature_len + cfg.n_kan_layers, h, nh, h), rng);
                let rho_in = match cfg.readout {
                    Readout::Graph => h,
                    Readout::Edge => 2 * h,
                };
                let rho = Mlp::new(&mut ps, &Mlp::sizes(rho_in, h, nh, cfg.head_out_dim), rng);
                Arch::DeepSets { phi, rho }
            }
            ModelKind::FlatMlp => {
                let dims = cfg.flat_dims.as_ref().expect("validated");
                let m: usize = dims.windows(2).map(|w| w[0] * w[1]).sum();
                let out = match cfg.readout {
                    Readout::Graph => cfg.head_out_dim,
                    Readout::Edge => m * cfg.head_out_dim,
                };
                let mlp = Mlp::new(&mut ps, &Mlp::sizes(m * cfg.feature_len, h, nh, out), rng);
                Arch::Flat { mlp }
            }
        };
        let out_cols = cfg.head_out_dim;
        Ok(Self {
            feature_norm: Norm::identity(cfg.feature_len),
            target_norm: Norm::identity(out_cols),
            cfg,
            params: ps,
            arch,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.cfg.kind
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Checks that `g` can be fed to this model.
    pub fn check_graph(&self, g: &KanGraph) -> Result<()> {
        if g.feature_len() != self.cfg.feature_len {
            return Err(Error::FeatureLengthMismatch {
                expected: self.cfg.feature_len,
                got: g.feature_len(),
            });
        }
        match self.cfg.kind {
            ModelKind::FlatMlp => {
                if Some(&g.dims) != self.cfg.flat_dims.as_ref() {
                    return Err(Error::IncompatibleModel {
                        model: self.cfg.kind.name().into(),
                        reason: format!(
                            "built for dims {:?}, got {:?}",
                            self.cfg.flat_dims.as_ref().unwrap(),
                            g.dims
                        ),
                    });
                }
            }
            ModelKind::WsKan if self.cfg.use_pe => {
                if crate::graph::pe_vocab(&g.dims) > self.cfg.pe_vocab {
                    return Err(Error::IncompatibleModel {
                        model: self.cfg.kind.name().into(),
                        reason: "graph has more positional ids than the model".into(),
                    });
                }
            }
            ModelKind::DeepSets => {
                if g.dims.len() - 1 > self.cfg.n_kan_layers {
                    return Err(Error::IncompatibleModel {
                        model: self.cfg.kind.name().into(),
                        reason: "graph is deeper than the layer one-hot".into(),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Records the model on `tape`. The result has one row per graph
    /// (graph readout) or per edge (edge readout), in normalized target
    /// units.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let drop = if train { self.cfg.dropout_rate } else { 0.0 };
        if batch.feature_len() != self.cfg.feature_len {
            return Err(Error::FeatureLengthMismatch {
                expected: self.cfg.feature_len,
                got: batch.feature_len(),
            });
        }
        let feat = self.feature_norm.apply_rows(&batch.edge_feat);
        let ps = &self.params;
        match &self.arch {
            Arch::WsKan { head, .. } => {
                let st = self.wskan_states(tape, batch, feat, drop, rng)?;
                Ok(match self.cfg.readout {
                    Readout::Graph => {
                        let pooled = self.pool_graph(tape, batch, &st)?;
                        head.forward(tape, ps, pooled, drop, rng)
                    }
                    Readout::Edge => head.forward(tape, ps, st.edges, drop, rng),
                })
            }
            Arch::DeepSets { phi, rho } => {
                let l = self.cfg.n_kan_layers;
                let mut onehot = Mat::zeros(batch.n_edges, l);
                for (i, &layer) in batch.edge_layer.iter().enumerate() {
                    if layer >= l {
                        return Err(Error::IncompatibleModel {
                            model: "deepsets".into(),
                            reason: "graph is deeper than the layer one-hot".into(),
                        });
                    }
                    onehot.data[i * l + layer] = 1.0;
                }
                let f = tape.constant(feat);
                let oh = tape.constant(onehot);
                let x = tape.concat_cols(&[f, oh]);
                let z = phi.forward(tape, ps, x, drop, rng);
                Ok(match self.cfg.readout {
                    Readout::Graph => {
                        let pooled = tape.scatter_sum(z, batch.edge_graph.clone(), batch.n_graphs);
                        rho.forward(tape, ps, pooled, drop, rng)
                    }
                    Readout::Edge => {
                        let ctx = mean_by_group(tape, z, &batch.edge_graph, &batch.edges_per_graph);
                        let ctx = tape.gather(ctx, batch.edge_graph.clone());
                        let x = tape.concat_cols(&[z, ctx]);
                        rho.forward(tape, ps, x, drop, rng)
                    }
                })
            }
            Arch::Flat { mlp } => {
                let dims = self.cfg.flat_dims.as_ref().unwrap();
                if batch.dims.iter().any(|d| d != dims) {
                    return Err(Error::IncompatibleModel {
                        model: "mlp".into(),
                        reason: "flat MLP only accepts the widths it was trained on".into(),
                    });
                }
                let m = batch.edges_per_graph[0];
                let x = tape.constant(Mat::from_vec(batch.n_graphs, m * feat.cols, feat.data));
                let y = mlp.forward(tape, ps, x, drop, rng);
                Ok(match self.cfg.readout {
                    Readout::Graph => y,
                    Readout::Edge => tape.reshape(y, batch.n_edges, self.cfg.head_out_dim),
                })
            }
        }
    }

    fn pool_graph(&self, tape: &mut Tape, batch: &GraphBatch, st: &WsKanStates) -> Result<Var> {
        if self.cfg.pool == Pool::Global {
            let n = mean_by_group(tape, st.nodes, &batch.node_graph, &batch.nodes_per_graph);
            let e = mean_by_group(tape, st.edges, &batch.edge_graph, &batch.edges_per_graph);
            return Ok(tape.concat_cols(&[n, e]));
        }
        let l = self.cfg.n_kan_layers;
        if batch.dims.iter().any(|d| d.len() != l + 1) {
            return Err(Error::IncompatibleModel {
                model: "wskan".into(),
                reason: format!("per-layer pooling was built for {l}-layer networks"),
            });
        }
        let per_layer = |tape: &mut Tape, x: Var, graph: &[usize], layer: &[usize], n_layers: usize| {
            let group: Vec<usize> = graph.iter().zip(layer).map(|(g, k)| g * n_layers + k).collect();
            let mut counts = vec![0; batch.n_graphs * n_layers];
            group.iter().for_each(|&i| counts[i] += 1);
            let m = mean_by_group(tape, x, &Arc::new(group), &counts);
            tape.reshape(m, batch.n_graphs, n_layers * self.cfg.hidden_dim)
        };
        let n = per_layer(tape, st.nodes, &batch.node_graph, &batch.node_layer, l + 1);
        let e = per_layer(tape, st.edges, &batch.edge_graph, &batch.edge_layer, l);
        Ok(tape.concat_cols(&[n, e]))
    }

    /// Edge features after input normalization.
    pub fn normalized_features(&self, batch: &GraphBatch) -> Mat {
        self.feature_norm.apply_rows(&batch.edge_feat)
    }

    /// Encoder plus all message-passing layers; `feat` is the normalized
    /// edge-feature matrix.
    pub fn wskan_states<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        feat: Mat,
        drop: f64,
        rng: &mut R,
    ) -> Result<WsKanStates> {
        let mut st = self.encode(tape, batch, feat, drop, rng)?;
        for l in 0..self.cfg.n_layers {
            st = self.mp_step(tape, batch, st, l, drop, rng)?;
        }
        Ok(st)
    }

    fn wskan_parts(&self) -> Result<(&Option<ParamId>, &Mlp, &Mlp, &[MpLayer])> {
        match &self.arch {
            Arch::WsKan {
                pe,
                node_enc,
                edge_enc,
                layers,
                ..
            } => Ok((pe, node_enc, edge_enc, layers)),
            _ => Err(Error::IncompatibleModel {
                model: self.cfg.kind.name().into(),
                reason: "not a message-passing model".into(),
            }),
        }
    }

    /// Initial node and edge states.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        feat: Mat,
        drop: f64,
        rng: &mut R,
    ) -> Result<WsKanStates> {
        let (pe, node_enc, edge_enc, _) = self.wskan_parts()?;
        let ps = &self.params;
        let scal = tape.constant(batch.node_scalar.clone());
        let f = tape.constant(feat);
        let (node_in, edge_in) = match pe {
            Some(table) => {
                if batch.node_pe.iter().any(|&p| p >= self.cfg.pe_vocab) {
                    return Err(Error::IncompatibleModel {
                        model: "wskan".into(),
                        reason: "positional id outside the embedding table".into(),
                    });
                }
                let t = tape.param(ps, *table);
                let npe = tape.gather(t, batch.node_pe.clone());
                let spe = tape.gather(t, batch.edge_pe_src.clone());
                let dpe = tape.gather(t, batch.edge_pe_dst.clone());
                (tape.concat_cols(&[scal, npe]), tape.concat_cols(&[f, spe, dpe]))
            }
            None => (scal, f),
        };
        Ok(WsKanStates {
            nodes: node_enc.forward(tape, ps, node_in, drop, rng),
            edges: edge_enc.forward(tape, ps, edge_in, drop, rng),
        })
    }

    /// One message-passing layer.
    pub fn mp_step<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        st: WsKanStates,
        layer: usize,
        drop: f64,
        rng: &mut R,
    ) -> Result<WsKanStates> {
        let (_, _, _, layers) = self.wskan_parts()?;
        let layer = layers
            .get(layer)
            .ok_or_else(|| Error::ShapeMismatch(format!("no message-passing layer {layer}")))?;
        let ps = &self.params;
        let (v, e) = (st.nodes, st.edges);
        let n = batch.n_nodes;
        if tape.value(v).rows != n || tape.value(e).rows != batch.n_edges {
            return Err(Error::ShapeMismatch("states do not match the graph batch".into()));
        }
        let inv = |deg: &[usize]| Arc::new(deg.iter().map(|&d| 1.0 / d.max(1) as f64).collect::<Vec<_>>());
        let mean = self.cfg.aggregation == Aggregation::Mean;
        let vs = tape.gather(v, batch.edge_src.clone());
        let vd = tape.gather(v, batch.edge_dst.clone());
        // a: forward messages along edge direction, into destinations
        let x = tape.concat_cols(&[vs, e]);
        let msg = layer.fwd_msg.forward(tape, ps, x, drop, rng);
        let mut agg = tape.scatter_sum(msg, batch.edge_dst.clone(), n);
        if mean {
            agg = tape.scale_rows(agg, inv(&batch.in_degree));
        }
        let x = tape.concat_cols(&[v, agg]);
        let v_f = layer.fwd_upd.forward(tape, ps, x, drop, rng);
        // b: backward messages against edge direction, into sources
        let v_b = if self.cfg.bidirectional {
            let x = tape.concat_cols(&[vd, e]);
            let msg = layer.bwd_msg.forward(tape, ps, x, drop, rng);
            let mut agg = tape.scatter_sum(msg, batch.edge_src.clone(), n);
            if mean {
                agg = tape.scale_rows(agg, inv(&batch.out_degree));
            }
            let x = tape.concat_cols(&[v, agg]);
            layer.bwd_upd.forward(tape, ps, x, drop, rng)
        } else {
            tape.constant(Mat::zeros(n, self.cfg.hidden_dim))
        };
        // c: edge update from the pre-update endpoint states
        let x = tape.concat_cols(&[vs, vd, e]);
        let mut e_new = layer.edge.forward(tape, ps, x, drop, rng);
        // d: node update
        let x = tape.concat_cols(&[v, v_f, v_b]);
        let mut v_new = layer.node.forward(tape, ps, x, drop, rng);
        if self.cfg.residual {
            v_new = tape.add(v, v_new);
            e_new = tape.add(e, e_new);
        }
        Ok(WsKanStates {
            nodes: v_new,
            edges: e_new,
        })
    }

    /// Inference in original target units: one row per graph or per edge.
    pub fn predict(&self, graphs: &[&KanGraph]) -> Result<Mat> {
        const CHUNK: usize = 16;
        if graphs.is_empty() {
            return Err(Error::EmptyInput);
        }
        for g in graphs {
            self.check_graph(g)?;
        }
        let chunks: Vec<&[&KanGraph]> = graphs.chunks(CHUNK).collect();
        let outs = parallel::map(&chunks, |c| self.predict_chunk(c));
        let mut rows = 0;
        let mut data = Vec::new();
        for o in outs {
            let m = o?;
            rows += m.rows;
            data.extend(m.data);
        }
        let raw = Mat::from_vec(rows, self.cfg.head_out_dim, data);
        Ok(self.target_norm.invert_rows(&raw))
    }

    fn predict_chunk(&self, graphs: &[&KanGraph]) -> Result<Mat> {
        let batch = GraphBatch::new(graphs)?;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &batch, false, &mut rng)?;
        Ok(tape.value(out).clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(META_MAGIC);
        w.u32(META_VERSION);
        w.str(&serde_json::to_string(&self.cfg).expect("config serializes"));
        self.feature_norm.write(&mut w);
        self.target_norm.write(&mut w);
        w.usize(self.params.len());
        for t in self.params.tensors() {
            w.usize(t.rows);
            w.usize(t.cols);
            w.f64s(&t.data);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(META_MAGIC)?;
        let version = r.u32()?;
        if version != META_VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let cfg: MetaConfig =
            serde_json::from_str(&r.str()?).map_err(|e| Error::Parse(format!("config: {e}")))?;
        let feature_norm = Norm::read(&mut r)?;
        let target_norm = Norm::read(&mut r)?;
        let mut model = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        let n = r.usize()?;
        if n != model.params.len() {
            return Err(Error::Parse(format!(
                "checkpoint has {n} tensors, architecture needs {}",
                model.params.len()
            )));
        }
        for t in model.params.tensors_mut() {
            let (rows, cols) = (r.usize()?, r.usize()?);
            if (rows, cols) != t.shape() {
                return Err(Error::Parse("tensor shape differs from architecture".into()));
            }
            t.data = r.f64s(rows * cols)?;
        }
        if r.remaining() != 0 {
            return Err(Error::Parse("trailing bytes after model".into()));
        }
        if feature_norm.shift.len() != model.cfg.feature_len || target_norm.shift.len() != model.cfg.head_out_dim {
            return Err(Error::Parse("normalization sizes differ from config".into()));
        }
        model.feature_norm = feature_norm;
        model.target_norm = target_norm;
        Ok(model)
    }
}

/// Row means of `x` within each group (`group[i]` is row `i`'s group).
fn mean_by_group(tape: &mut Tape, x: Var, group: &Arc<Vec<usize>>, counts: &[usize]) -> Var {
    let s = tape.scatter_sum(x, group.clone(), counts.len());
    let inv = Arc::new(counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect());
    tape.scale_rows(s, inv)
}
