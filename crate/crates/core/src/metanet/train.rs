use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::GraphBatch;
use super::config::Readout;
use super::model::{MetaModel, Norm};
use crate::engine::log::{LogRecord, TrainLog};
use crate::engine::{AdamW, AdamWConfig, Grads, Mat, ScheduleTail, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{edge_permutation, KanGraph};
use crate::parallel::{self, derive_seed};
use crate::symmetry::sample_group_element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    /// Binary cross-entropy on logits.
    Bce,
}

/// One training example: a graph and its target row (graph readout) or
/// its per-edge targets in edge order (edge readout).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: KanGraph,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub tail: ScheduleTail,
    /// Graphs per independently recorded tape.
    pub chunk_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Re-draw a random hidden permutation of every sample each epoch.
    pub augment: bool,
    /// Fit input and target normalization on the training set.
    pub fit_norms: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            warmup_steps: 100,
            tail: ScheduleTail::LinearDecay,
            chunk_size: 8,
            seed: 0,
            loss: LossKind::Mse,
            augment: false,
            fit_norms: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
}

fn target_rows(model: &MetaModel, s: &Sample) -> Result<Vec<f64>> {
    let out = model.cfg.head_out_dim;
    let expected = match model.cfg.readout {
        Readout::Graph => out,
        Readout::Edge => s.graph.num_edges() * out,
    };
    if s.target.len() != expected {
        return Err(Error::SizeMismatch(format!(
            "target has {} values, model expects {expected}",
            s.target.len()
        )));
    }
    let mut t = s.target.clone();
    if model.cfg.readout == Readout::Graph {
        for (j, v) in t.iter_mut().enumerate() {
            *v = (*v - model.target_norm.shift[j]) / model.target_norm.scale[j];
        }
    }
    Ok(t)
}

/// Summed elementwise loss of `out` against `target`.
pub(crate) fn loss_sum(tape: &mut Tape, out: Var, target: Mat, kind: LossKind) -> Var {
    let t = tape.constant(target);
    match kind {
        LossKind::Mse => {
            let d = tape.sub(out, t);
            let sq = tape.mul(d, d);
            tape.sum_all(sq)
        }
        LossKind::Bce => {
            let n = tape.value(out).len();
            let x = tape.reshape(out, n, 1);
            let z = tape.constant(Mat::zeros(n, 1));
            let zx = tape.concat_cols(&[z, x]);
            let sp = tape.logsumexp_rows(zx);
            let tr = tape.reshape(t, n, 1);
            let tx = tape.mul(tr, x);
            let d = tape.sub(sp, tx);
            tape.sum_all(d)
        }
    }
}

struct Prepared<'a> {
    graph: std::borrow::Cow<'a, KanGraph>,
    target: Vec<f64>,
}

fn chunk_loss(
    model: &MetaModel,
    items: &[Prepared<'_>],
    kind: LossKind,
    train: bool,
    seed: u64,
) -> Result<(f64, Option<Grads>)> {
    let graphs: Vec<&KanGraph> = items.iter().map(|p| p.graph.as_ref()).collect();
    let batch = GraphBatch::new(&graphs)?;
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = model.forward(&mut tape, &batch, train, &mut rng)?;
    let shape = tape.value(out).shape();
    let data: Vec<f64> = items.iter().flat_map(|p| p.target.iter().copied()).collect();
    if data.len() != shape.0 * shape.1 {
        return Err(Error::SizeMismatch("targets do not match model outputs".into()));
    }
    let l = loss_sum(&mut tape, out, Mat::from_vec(shape.0, shape.1, data), kind);
    let value = tape.value(l).data[0];
    if !train {
        return Ok((value, None));
    }
    let grads = tape.backward(l)?.params(&model.params);
    Ok((value, Some(grads)))
}

/// Mean elementwise loss (normalized units) over `samples`.
pub fn evaluate_loss(model: &MetaModel, samples: &[Sample], kind: LossKind, chunk: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let prepared = samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                graph: std::borrow::Cow::Borrowed(&s.graph),
                target: target_rows(model, s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count: usize = prepared.iter().map(|p| p.target.len()).sum();
    let chunks: Vec<&[Prepared<'_>]> = prepared.chunks(chunk.max(1)).collect();
    let parts = parallel::map(&chunks, |c| chunk_loss(model, c, kind, false, 0));
    let mut total = 0.0;
    for p in parts {
        total += p?.0;
    }
    Ok(total / count as f64)
}

/// Trains `model` with AdamW and keeps the parameters of the epoch with
/// the lowest validation loss (training loss when `val` is empty).
pub fn train_meta(
    model: &mut MetaModel,
    train: &[Sample],
    val: &[Sample],
    s: &TrainSettings,
    mut log: Option<&mut TrainLog>,
) -> Result<TrainHistory> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if s.batch_size == 0 || s.chunk_size == 0 {
        return Err(Error::InvalidConfig("batch and chunk sizes must be positive".into()));
    }
    for smp in train.iter().chain(val) {
        model.check_graph(&smp.graph)?;
    }
    if s.fit_norms {
        let f = model.cfg.feature_len;
        model.feature_norm = Norm::fit(
            f,
            train.iter().flat_map(|x| x.graph.edges.iter().map(|e| e.feature.as_slice())),
        );
        if s.loss == LossKind::Mse && model.cfg.readout == Readout::Graph {
            model.target_norm = Norm::fit(model.cfg.head_out_dim, train.iter().map(|x| x.target.as_slice()));
        }
    }
    let base_targets = train
        .iter()
        .map(|x| target_rows(model, x))
        .collect::<Result<Vec<_>>>()?;
    let batches_per_epoch = train.len().div_ceil(s.batch_size);
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: s.lr,
            weight_decay: s.weight_decay,
            warmup_steps: s.warmup_steps,
            total_steps: s.epochs * batches_per_epoch,
            tail: s.tail,
            ..Default::default()
        },
        &model.params,
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, u64::MAX));
    let mut hist = TrainHistory {
        train_loss: Vec::with_capacity(s.epochs),
        val_loss: Vec::with_capacity(s.epochs),
        best_epoch: 0,
        best_val: f64::INFINITY,
    };
    let mut best = model.params.clone();
    let start = std::time::Instant::now();
    let mut step = 0u64;
    for epoch in 0..s.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(s.batch_size) {
            let prepared: Vec<Prepared<'_>> = batch
                .iter()
                .map(|&i| augment(model, &train[i], &base_targets[i], s, epoch, i))
                .collect::<Result<_>>()?;
            let count: usize = prepared.iter().map(|p| p.target.len()).sum();
            let chunks: Vec<(usize, &[Prepared<'_>])> = prepared.chunks(s.chunk_size).enumerate().collect();
            let parts = parallel::map(&chunks, |(ci, c)| {
                chunk_loss(model, c, s.loss, true, derive_seed(s.seed, step * 4096 + *ci as u64))
            });
            let mut grads = Grads::zeros_like(&model.params);
            for p in parts {
                let (l, g) = p?;
                epoch_loss += l;
                grads.add_assign(&g.expect("training chunk returns gradients"));
            }
            epoch_count += count;
            grads.scale(1.0 / count as f64);
            opt.step(&mut model.params, &grads)?;
            step += 1;
        }
        let train_loss = epoch_loss / epoch_count as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            evaluate_loss(model, val, s.loss, s.chunk_size)?
        };
        hist.train_loss.push(train_loss);
        hist.val_loss.push(val_loss);
        if val_loss < hist.best_val {
            hist.best_val = val_loss;
            hist.best_epoch = epoch;
            best = model.params.clone();
        }
        if let Some(log) = log.as_deref_mut() {
            let wall = start.elapsed().as_secs_f64();
            for (split, loss) in [("train", train_loss), ("val", val_loss)] {
                log.append(&LogRecord {
                    epoch,
                    split: split.into(),
                    loss,
                    metrics: Default::default(),
                    wall_time: wall,
                })?;
            }
        }
    }
    model.params = best;
    Ok(hist)
}

fn augment<'a>(
    model: &MetaModel,
    smp: &'a Sample,
    target: &[f64],
    s: &TrainSettings,
    epoch: usize,
    idx: usize,
) -> Result<Prepared<'a>> {
    let hidden = smp.graph.dims.len() > 2;
    if !s.augment || !hidden {
        return Ok(Prepared {
            graph: std::borrow::Cow::Borrowed(&smp.graph),
            target: target.to_vec(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed ^ 0x5eed, (epoch as u64) << 32 | idx as u64));
    let g = sample_group_element(&smp.graph.dims, &mut rng)?;
    let graph = smp.graph.permute(&g)?;
    let target = match model.cfg.readout {
        Readout::Graph => target.to_vec(),
        Readout::Edge => {
            let out = model.cfg.head_out_dim;
            let perm = edge_permutation(&smp.graph.dims, &g)?;
            perm.iter()
                .flat_map(|&o| target[o * out..(o + 1) * out].iter().copied())
                .collect()
        }
    };
    Ok(Prepared {
        graph: std::borrow::Cow::Owned(graph),
        target,
    })
}
