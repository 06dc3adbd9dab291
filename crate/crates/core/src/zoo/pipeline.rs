//! End-to-end weight-space methods over a zoo: WS-KAN, DeepSets and the
//! flat-MLP baselines (plain, with permutation augmentation, and on
//! checkpoints aligned to a common reference).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Split, Task, Zoo};
use crate::align::{align_to_reference, merge_many, AlignConfig};
use crate::codec::{ByteReader, ByteWriter};
use crate::engine::log::TrainLog;
use crate::engine::metrics::{best_threshold, mse, roc_auc};
use crate::engine::Mat;
use crate::error::{Error, Result};
use crate::graph::{build_graph, edge_permutation};
use crate::kan::KanNet;
use crate::metanet::{
    train_meta, Aggregation, Pool, LossKind, MetaConfig, MetaModel, ModelKind, Readout, Sample, TrainHistory, TrainSettings,
};
use crate::parallel::derive_seed;
use crate::symmetry::{act, GroupElement};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    WsKan,
    DeepSets,
    Mlp,
    MlpAug,
    MlpAlign,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::WsKan, Method::DeepSets, Method::Mlp, Method::MlpAug, Method::MlpAlign];

    pub fn name(self) -> &'static str {
        match self {
            Method::WsKan => "wskan",
            Method::DeepSets => "deepsets",
            Method::Mlp => "mlp",
            Method::MlpAug => "mlp-aug",
            Method::MlpAlign => "mlp-align",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown model `{s}`")))
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            Method::WsKan => ModelKind::WsKan,
            Method::DeepSets => ModelKind::DeepSets,
            Method::Mlp | Method::MlpAug | Method::MlpAlign => ModelKind::FlatMlp,
        }
    }
}

/// Readout, output width and loss used for a task.
pub fn task_head(task: Task, zoo: &Zoo) -> (Readout, usize, LossKind) {
    match task {
        Task::SineInr => (Readout::Graph, zoo.records.first().map_or(2, |r| r.target.to_vec().len()), LossKind::Mse),
        Task::AccPred => (Readout::Graph, 1, LossKind::Mse),
        Task::PruneMask => (Readout::Edge, 1, LossKind::Bce),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub pe_embed_dim: usize,
    pub use_pe: bool,
    pub bidirectional: bool,
    pub dropout_rate: f64,
    pub mlp_hidden_layers: usize,
    pub aggregation: Aggregation,
    pub residual: bool,
    pub pool: Pool,
    /// Loss is overwritten from the task; `augment` is forced on for `MlpAug`.
    pub train: TrainSettings,
    pub align: AlignConfig,
    /// Nets used to build the alignment reference.
    pub align_subset: usize,
}

impl PipelineConfig {
    pub fn new(method: Method) -> Self {
        let d = MetaConfig::for_dims(method.model_kind(), &[1, 1, 1], 3, Readout::Graph, 1);
        Self {
            method,
            hidden_dim: d.hidden_dim,
            n_layers: d.n_layers,
            pe_embed_dim: d.pe_embed_dim,
            use_pe: d.use_pe,
            bidirectional: d.bidirectional,
            dropout_rate: d.dropout_rate,
            mlp_hidden_layers: d.mlp_hidden_layers,
            aggregation: d.aggregation,
            residual: d.residual,
            pool: d.pool,
            train: TrainSettings::default(),
            align: AlignConfig::default(),
            align_subset: 64,
        }
    }

    pub fn meta_config(&self, zoo: &Zoo) -> MetaConfig {
        let (readout, out, _) = task_head(zoo.header.task, zoo);
        let h = &zoo.header;
        let mut c = MetaConfig::for_dims(self.method.model_kind(), &h.dims, 2 + h.spec.num_basis(), readout, out);
        c.hidden_dim = self.hidden_dim;
        c.n_layers = self.n_layers;
        c.pe_embed_dim = self.pe_embed_dim;
        c.use_pe = self.use_pe;
        c.bidirectional = self.bidirectional;
        c.dropout_rate = self.dropout_rate;
        c.mlp_hidden_layers = self.mlp_hidden_layers;
        c.aggregation = self.aggregation;
        c.residual = self.residual;
        c.pool = self.pool;
        c
    }

    fn settings(&self, task: Task, zoo: &Zoo) -> TrainSettings {
        let (_, _, loss) = task_head(task, zoo);
        TrainSettings {
            loss,
            augment: self.train.augment || self.method == Method::MlpAug,
            ..self.train.clone()
        }
    }
}

/// A trained method, ready to score unseen checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub method: Method,
    pub model: MetaModel,
    /// Alignment reference for `MlpAlign`.
    pub reference: Option<KanNet>,
    pub align: AlignConfig,
    pub history: TrainHistory,
}

/// Builds samples from (net, target) pairs, aligning nets to `reference`
/// first when given. Edge targets follow their edges.
fn aligned_samples(
    nets: &[&KanNet],
    targets: Vec<Vec<f64>>,
    gs: &[GroupElement],
    edge_targets: bool,
) -> Result<Vec<Sample>> {
    nets.iter()
        .zip(targets)
        .zip(gs)
        .map(|((n, t), g)| {
            let moved = act(g, n)?;
            let target = if edge_targets {
                let out = t.len() / n.num_edges();
                edge_permutation(n.dims(), g)?
                    .iter()
                    .flat_map(|&o| t[o * out..(o + 1) * out].to_vec())
                    .collect()
            } else {
                t
            };
            Ok(Sample {
                graph: build_graph(&moved),
                target,
            })
        })
        .collect()
}

fn split_parts(zoo: &Zoo, s: Split) -> (Vec<&KanNet>, Vec<Vec<f64>>) {
    zoo.split(s)
        .into_iter()
        .map(|r| (&r.checkpoint, r.target.to_vec()))
        .unzip()
}

/// Trains `cfg.method` on the zoo's train split, selecting parameters on
/// its val split.
pub fn train_pipeline(zoo: &Zoo, cfg: &PipelineConfig, log: Option<&mut TrainLog>) -> Result<Trained> {
    let task = zoo.header.task;
    let settings = cfg.settings(task, zoo);
    let edge = task == Task::PruneMask;
    let (train_nets, train_t) = split_parts(zoo, Split::Train);
    let (val_nets, val_t) = split_parts(zoo, Split::Val);
    if train_nets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut reference = None;
    let (train, val) = if cfg.method == Method::MlpAlign {
        let owned: Vec<KanNet> = train_nets.iter().map(|n| (*n).clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, 0xa1));
        let merged = merge_many(&owned, cfg.align_subset.max(2), &cfg.align, &mut rng)?;
        let val_owned: Vec<KanNet> = val_nets.iter().map(|n| (*n).clone()).collect();
        let val_g: Vec<GroupElement> = align_to_reference(&merged.reference, &val_owned, &cfg.align)?
            .into_iter()
            .map(|r| r.g)
            .collect();
        let train = aligned_samples(&train_nets, train_t, &merged.alignments, edge)?;
        let val = aligned_samples(&val_nets, val_t, &val_g, edge)?;
        reference = Some(merged.reference);
        (train, val)
    } else {
        let id = |n: &[&KanNet]| n.iter().map(|k| GroupElement::identity(k.dims())).collect::<Vec<_>>();
        (
            aligned_samples(&train_nets, train_t, &id(&train_nets), edge)?,
            aligned_samples(&val_nets, val_t, &id(&val_nets), edge)?,
        )
    };
    let mut model = MetaModel::new(
        cfg.meta_config(zoo),
        &mut ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, 0x1417)),
    )?;
    let history = train_meta(&mut model, &train, &val, &settings, log)?;
    Ok(Trained {
        method: cfg.method,
        model,
        reference,
        align: cfg.align.clone(),
        history,
    })
}

impl Trained {
    /// Predictions in original units (logits for mask tasks), one row per
    /// net or, for edge readouts, per edge in each net's own edge order.
    pub fn predict(&self, nets: &[&KanNet]) -> Result<Mat> {
        let Some(reference) = &self.reference else {
            let graphs: Vec<_> = nets.iter().map(|n| build_graph(n)).collect();
            return self.model.predict(&graphs.iter().collect::<Vec<_>>());
        };
        let owned: Vec<KanNet> = nets.iter().map(|n| (*n).clone()).collect();
        let gs: Vec<GroupElement> = align_to_reference(reference, &owned, &self.align)?
            .into_iter()
            .map(|r| r.g)
            .collect();
        let moved = owned
            .iter()
            .zip(&gs)
            .map(|(n, g)| act(g, n))
            .collect::<Result<Vec<_>>>()?;
        let graphs: Vec<_> = moved.iter().map(build_graph).collect();
        let pred = self.model.predict(&graphs.iter().collect::<Vec<_>>())?;
        if self.model.cfg.readout == Readout::Graph {
            return Ok(pred);
        }
        // Undo the alignment so rows follow each net's own edge order.
        let out = pred.cols;
        let mut data = vec![0.0; pred.data.len()];
        let mut base = 0;
        for (n, g) in owned.iter().zip(&gs) {
            for (slot, &orig) in edge_permutation(n.dims(), g)?.iter().enumerate() {
                let (dst, src) = ((base + orig) * out, (base + slot) * out);
                data[dst..dst + out].copy_from_slice(&pred.data[src..src + out]);
            }
            base += n.num_edges();
        }
        Ok(Mat::from_vec(pred.rows, out, data))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(PIPELINE_MAGIC);
        w.u32(PIPELINE_VERSION);
        w.str(self.method.name());
        w.usize(self.align.max_sweeps);
        w.f64(self.align.tol);
        w.bytes(&self.align.seed.to_le_bytes());
        w.usize(self.align.max_rounds);
        match &self.align.channel_weights {
            Some(cw) => {
                w.usize(cw.len());
                w.f64s(cw);
            }
            None => w.usize(0),
        }
        match &self.reference {
            Some(r) => {
                w.u32(1);
                r.write_into(&mut w);
            }
            None => w.u32(0),
        }
        let model = self.model.to_bytes();
        w.usize(model.len());
        w.bytes(&model);
        w.finish()
    }

    /// Restores a trained method. Training history is not stored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Trained> {
        let mut r = ByteReader::new(bytes);
        r.magic(PIPELINE_MAGIC)?;
        let v = r.u32()?;
        if v != PIPELINE_VERSION {
            return Err(Error::VersionUnsupported(v));
        }
        let method = Method::parse(&r.str()?)?;
        let max_sweeps = r.usize()?;
        let tol = r.f64()?;
        let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let max_rounds = r.usize()?;
        let n_cw = r.usize()?;
        let channel_weights = if n_cw == 0 { None } else { Some(r.f64s(n_cw)?) };
        let reference = match r.u32()? {
            0 => None,
            1 => Some(KanNet::read_from(&mut r)?),
            t => return Err(Error::Parse(format!("bad reference tag {t}"))),
        };
        let n = r.usize()?;
        let model = MetaModel::from_bytes(r.take(n)?)?;
        if r.remaining() != 0 {
            return Err(Error::Parse("trailing bytes after pipeline".into()));
        }
        if method.model_kind() != model.kind() {
            return Err(Error::Parse("stored method and model kind disagree".into()));
        }
        Ok(Trained {
            method,
            model,
            reference,
            align: AlignConfig {
                max_sweeps,
                tol,
                seed,
                channel_weights,
                max_rounds,
            },
            history: TrainHistory {
                train_loss: Vec::new(),
                val_loss: Vec::new(),
                best_epoch: 0,
                best_val: f64::NAN,
            },
        })
    }
}

pub const PIPELINE_MAGIC: &[u8; 4] = b"WSKP";
pub const PIPELINE_VERSION: u32 = 1;

/// Scores of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: Option<f64>,
    /// `1 - SSE / SST` with per-column target means, pooled over columns.
    pub r2: Option<f64>,
    pub roc_auc: Option<f64>,
    /// Mask accuracy at the threshold chosen on the val split.
    pub accuracy: Option<f64>,
    pub threshold: Option<f64>,
}

/// Pooled multi-output R^2: predictions must beat per-column target means.
pub fn r2_pooled(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.shape() != target.shape() || pred.rows == 0 {
        return Err(Error::SizeMismatch("prediction and target shapes differ".into()));
    }
    let mut sse = 0.0;
    let mut sst = 0.0;
    for c in 0..target.cols {
        let mean = (0..target.rows).map(|r| target.at(r, c)).sum::<f64>() / target.rows as f64;
        for r in 0..target.rows {
            sse += (pred.at(r, c) - target.at(r, c)).powi(2);
            sst += (target.at(r, c) - mean).powi(2);
        }
    }
    Ok(if sst == 0.0 {
        f64::from(u8::from(sse == 0.0))
    } else {
        1.0 - sse / sst
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Evaluates on `split`. Mask thresholds are picked on the val split (or
/// the evaluated split when there is no val data).
pub fn evaluate(trained: &Trained, zoo: &Zoo, split: Split) -> Result<Evaluation> {
    let (nets, targets) = split_parts(zoo, split);
    if nets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pred = trained.predict(&nets)?;
    let flat: Vec<f64> = targets.concat();
    if zoo.header.task != Task::PruneMask {
        let t = Mat::from_vec(pred.rows, pred.cols, flat);
        return Ok(Evaluation {
            mse: Some(mse(&pred.data, &t.data)?),
            r2: Some(r2_pooled(&pred, &t)?),
            roc_auc: None,
            accuracy: None,
            threshold: None,
        });
    }
    let scores: Vec<f64> = pred.data.iter().map(|&x| sigmoid(x)).collect();
    let labels: Vec<bool> = flat.iter().map(|&v| v > 0.5).collect();
    let (vn, vt) = split_parts(zoo, Split::Val);
    let threshold = if vn.is_empty() || split == Split::Val {
        best_threshold(&scores, &labels)?
    } else {
        let vp = trained.predict(&vn)?;
        let vs: Vec<f64> = vp.data.iter().map(|&x| sigmoid(x)).collect();
        let vl: Vec<bool> = vt.concat().iter().map(|&v| v > 0.5).collect();
        best_threshold(&vs, &vl)?
    };
    let acc = crate::engine::metrics::accuracy(&scores, &labels, threshold)?;
    Ok(Evaluation {
        mse: None,
        r2: None,
        roc_auc: Some(roc_auc(&scores, &labels)?),
        accuracy: Some(acc),
        threshold: Some(threshold),
    })
}
