//! Model zoos: many small trained KANs plus supervision targets.
//!
//! On disk a zoo is a directory with `manifest.json` (header and record
//! index), `checkpoints.bin` (KAN checkpoints back to back, located by the
//! offsets in the index) and, for mask targets, `masks.bin`.

mod build;
mod data;
mod pipeline;
mod prune;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use build::{build_acc_zoo, build_inr_zoo, to_prune_zoo, AccZooConfig, BlobSpec, InrZooConfig};
pub use data::{
    blob_dataset, coordinate_grid, gen_sine_task, shuffle_label_fraction, ClassificationData, SineTask, BLOB_CENTER,
    SINE_FREQ_RANGE,
};
pub use pipeline::{
    evaluate, r2_pooled, task_head, train_pipeline, Evaluation, Method, PipelineConfig, Trained, PIPELINE_MAGIC,
    PIPELINE_VERSION,
};
pub use prune::{apply_mask, edge_activation_means, kept_fraction, oracle_prune, PRUNE_THRESHOLD};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::kan::KanNet;
use crate::metanet::Sample;
use crate::spline::SplineSpec;
use crate::graph::build_graph;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINTS_FILE: &str = "checkpoints.bin";
pub const MASKS_FILE: &str = "masks.bin";
pub const ZOO_VERSION: u32 = 1;
const MASK_MAGIC: &[u8; 4] = b"KANM";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SineInr,
    AccPred,
    PruneMask,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SineInr => "sine-inr",
            Task::AccPred => "acc-pred",
            Task::PruneMask => "prune-mask",
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "sine-inr" => Ok(Task::SineInr),
            "acc-pred" => Ok(Task::AccPred),
            "prune-mask" => Ok(Task::PruneMask),
            _ => Err(Error::Parse(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown split `{s}`")))
    }

    /// Split of record `i` when the first `counts[0]` are train, then val, then test.
    pub fn of_index(i: usize, counts: [usize; 3]) -> Split {
        if i < counts[0] {
            Split::Train
        } else if i < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Freq(Vec<f64>),
    TestAccuracy(f64),
    PruneMask(Vec<bool>),
}

impl Target {
    pub fn task(&self) -> Task {
        match self {
            Target::Freq(_) => Task::SineInr,
            Target::TestAccuracy(_) => Task::AccPred,
            Target::PruneMask(_) => Task::PruneMask,
        }
    }

    /// Regression or classification row fed to a metanetwork.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Target::Freq(w) => w.clone(),
            Target::TestAccuracy(a) => vec![*a],
            Target::PruneMask(m) => m.iter().map(|&b| f64::from(u8::from(b))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub task: Task,
    pub seed: u64,
    pub noise_fraction: Option<f64>,
    pub split: Split,
    /// Training loss of the KAN before and after fitting.
    pub init_loss: Option<f64>,
    pub fit_loss: Option<f64>,
    /// Held-out accuracy of classifier records, kept when the target is a mask.
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooRecord {
    pub id: usize,
    pub checkpoint: KanNet,
    pub target: Target,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneInfo {
    pub threshold: f64,
    pub signed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooHeader {
    pub task: Task,
    pub dims: Vec<usize>,
    pub spec: SplineSpec,
    /// How to regenerate the classifier base data, when there is one.
    pub data: Option<BlobSpec>,
    pub prune: Option<PruneInfo>,
    /// Free-form echo of the build settings.
    pub build: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zoo {
    pub header: ZooHeader,
    pub records: Vec<ZooRecord>,
}

#[derive(Serialize, Deserialize)]
struct SplitCounts {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TargetEntry {
    Freq(Vec<f64>),
    TestAccuracy(f64),
    /// Bits live in the mask sidecar.
    PruneMask { edges: usize },
}

#[derive(Serialize, Deserialize)]
struct RecordEntry {
    id: usize,
    offset: usize,
    length: usize,
    target: TargetEntry,
    #[serde(flatten)]
    meta: RecordMeta,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    format: String,
    version: u32,
    task: Task,
    dims: Vec<usize>,
    domain: [f64; 2],
    grid: usize,
    degree: usize,
    data: Option<BlobSpec>,
    prune: Option<PruneInfo>,
    build: serde_json::Value,
    split_counts: SplitCounts,
    records: Vec<RecordEntry>,
}

const FORMAT: &str = "wskan-zoo";

impl Zoo {
    pub fn split_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for r in &self.records {
            c[r.meta.split as usize] += 1;
        }
        c
    }

    pub fn split(&self, s: Split) -> Vec<&ZooRecord> {
        self.records.iter().filter(|r| r.meta.split == s).collect()
    }

    /// Metanetwork training examples for one split.
    pub fn samples(&self, s: Split) -> Vec<Sample> {
        self.split(s)
            .into_iter()
            .map(|r| Sample {
                graph: build_graph(&r.checkpoint),
                target: r.target.to_vec(),
            })
            .collect()
    }

    /// Base classification data for classifier zoos.
    pub fn base_data(&self) -> Option<ClassificationData> {
        self.header.data.as_ref().map(BlobSpec::generate)
    }

    /// Checks record shapes and target kinds against the header.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            if r.checkpoint.dims() != self.header.dims.as_slice() {
                return Err(Error::InconsistentDims);
            }
            if r.checkpoint.spec() != &self.header.spec {
                return Err(Error::SpecMismatch);
            }
            if r.target.task() != self.header.task || r.meta.task != self.header.task {
                return Err(Error::Parse(format!("record {} has a target of the wrong task", r.id)));
            }
            match &r.target {
                Target::PruneMask(m) if m.len() != r.checkpoint.num_edges() => {
                    return Err(Error::DimensionMismatch {
                        expected: r.checkpoint.num_edges(),
                        got: m.len(),
                    })
                }
                Target::TestAccuracy(a) if !(0.0..=1.0).contains(a) => {
                    return Err(Error::Parse(format!("record {} accuracy {a} outside [0, 1]", r.id)))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let mut ckpt = Vec::new();
        let mut masks = ByteWriter::new();
        let mut n_masks = 0usize;
        let mut entries = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let bytes = r.checkpoint.to_bytes();
            let target = match &r.target {
                Target::Freq(w) => TargetEntry::Freq(w.clone()),
                Target::TestAccuracy(a) => TargetEntry::TestAccuracy(*a),
                Target::PruneMask(m) => {
                    masks.usize(r.id);
                    masks.usize(m.len());
                    masks.bytes(&pack_bits(m));
                    n_masks += 1;
                    TargetEntry::PruneMask { edges: m.len() }
                }
            };
            entries.push(RecordEntry {
                id: r.id,
                offset: ckpt.len(),
                length: bytes.len(),
                target,
                meta: r.meta.clone(),
            });
            ckpt.extend_from_slice(&bytes);
        }
        let [train, val, test] = self.split_counts();
        let h = &self.header;
        let manifest = ManifestFile {
            format: FORMAT.into(),
            version: ZOO_VERSION,
            task: h.task,
            dims: h.dims.clone(),
            domain: [h.spec.a(), h.spec.b()],
            grid: h.spec.grid(),
            degree: h.spec.degree(),
            data: h.data.clone(),
            prune: h.prune.clone(),
            build: h.build.clone(),
            split_counts: SplitCounts { train, val, test },
            records: entries,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
        fs::write(dir.join(CHECKPOINTS_FILE), ckpt)?;
        if n_masks > 0 {
            let mut w = ByteWriter::new();
            w.bytes(MASK_MAGIC);
            w.u32(ZOO_VERSION);
            w.usize(n_masks);
            w.bytes(&masks.finish());
            fs::write(dir.join(MASKS_FILE), w.finish())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Zoo> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        if m.format != FORMAT {
            return Err(Error::BadMagic);
        }
        if m.version != ZOO_VERSION {
            return Err(Error::VersionUnsupported(m.version));
        }
        let spec = SplineSpec::new(m.domain[0], m.domain[1], m.grid, m.degree)?;
        let ckpt = fs::read(dir.join(CHECKPOINTS_FILE))?;
        let needs_masks = m.records.iter().any(|r| matches!(r.target, TargetEntry::PruneMask { .. }));
        let mut masks = std::collections::HashMap::new();
        if needs_masks {
            let raw = fs::read(dir.join(MASKS_FILE))?;
            let mut r = ByteReader::new(&raw);
            r.magic(MASK_MAGIC)?;
            let v = r.u32()?;
            if v != ZOO_VERSION {
                return Err(Error::VersionUnsupported(v));
            }
            for _ in 0..r.usize()? {
                let id = r.usize()?;
                let n = r.usize()?;
                let bits = r.take(n.div_ceil(8))?;
                masks.insert(id, unpack_bits(bits, n));
            }
        }
        let mut records = Vec::with_capacity(m.records.len());
        for e in m.records {
            let end = e.offset.checked_add(e.length).ok_or(Error::TruncatedPayload)?;
            let bytes = ckpt.get(e.offset..end).ok_or(Error::TruncatedPayload)?;
            let checkpoint = KanNet::from_bytes(bytes)?;
            let target = match e.target {
                TargetEntry::Freq(w) => Target::Freq(w),
                TargetEntry::TestAccuracy(a) => Target::TestAccuracy(a),
                TargetEntry::PruneMask { edges } => {
                    let mask = masks
                        .remove(&e.id)
                        .ok_or_else(|| Error::Parse(format!("no mask stored for record {}", e.id)))?;
                    if mask.len() != edges {
                        return Err(Error::DimensionMismatch {
                            expected: edges,
                            got: mask.len(),
                        });
                    }
                    Target::PruneMask(mask)
                }
            };
            records.push(ZooRecord {
                id: e.id,
                checkpoint,
                target,
                meta: e.meta,
            });
        }
        let zoo = Zoo {
            header: ZooHeader {
                task: m.task,
                dims: m.dims,
                spec,
                data: m.data,
                prune: m.prune,
                build: m.build,
            },
            records,
        };
        zoo.validate()?;
        if zoo.split_counts() != [m.split_counts.train, m.split_counts.val, m.split_counts.test] {
            return Err(Error::Parse("split counts do not match the records".into()));
        }
        Ok(zoo)
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}
