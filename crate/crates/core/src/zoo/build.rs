use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::data::{blob_dataset, coordinate_grid, gen_sine_task, shuffle_label_fraction, ClassificationData};
use super::prune::oracle_prune;
use super::{PruneInfo, RecordMeta, Split, Target, Task, Zoo, ZooHeader, ZooRecord};
use crate::error::{Error, Result};
use crate::kan::{classification_accuracy, dataset_loss, train_kan, Dataset, LossKind, Targets, TrainConfig};
use crate::kan::{InitConfig, KanNet};
use crate::parallel::{self, derive_seed};
use crate::spline::SplineSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct InrZooConfig {
    pub dims: Vec<usize>,
    pub spec: SplineSpec,
    /// Points per side of the fitting grid over the spline domain.
    pub grid_side: usize,
    pub train: TrainConfig,
    pub init: InitConfig,
    /// Train, val and test counts.
    pub splits: [usize; 3],
}

impl InrZooConfig {
    /// `[2, h, h, 1]` INRs with G = 10, k = 3 on a 16 x 16 grid.
    pub fn desk(hidden: usize, splits: [usize; 3]) -> Self {
        Self {
            dims: vec![2, hidden, hidden, 1],
            spec: SplineSpec::new(-1.0, 1.0, 10, 3).expect("valid spec"),
            grid_side: 16,
            train: TrainConfig {
                loss: LossKind::Mse,
                epochs: 200,
                lr: 0.01,
                batch_size: 32,
            },
            init: InitConfig {
                random_base: true,
                ..InitConfig::default()
            },
            splits,
        }
    }
}

/// Recipe for the blob classification data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
}

impl BlobSpec {
    pub fn generate(&self) -> ClassificationData {
        blob_dataset(self.n_train, self.n_test, &mut ChaCha8Rng::seed_from_u64(self.seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccZooConfig {
    pub dims: Vec<usize>,
    pub spec: SplineSpec,
    pub train: TrainConfig,
    pub init: InitConfig,
    pub splits: [usize; 3],
    pub data: BlobSpec,
    /// Fixed label-noise fraction for every model instead of `U[0, 1]`.
    pub noise: Option<f64>,
}

impl AccZooConfig {
    /// `[2, 8, 8, 2]` classifiers with G = 5, k = 3 on 400/200 blob points.
    /// Edges start at scales spread over three decades so that trained
    /// networks keep a mix of strong and near-silent edges.
    pub fn desk(splits: [usize; 3], data_seed: u64) -> Self {
        Self {
            dims: vec![2, 8, 8, 2],
            spec: SplineSpec::new(-3.0, 3.0, 5, 3).expect("valid spec"),
            train: TrainConfig {
                loss: LossKind::CrossEntropy,
                epochs: 200,
                lr: 0.1,
                batch_size: 32,
            },
            init: InitConfig {
                edge_scale_log10: Some((-3.0, 0.0)),
                ..InitConfig::default()
            },
            splits,
            data: BlobSpec {
                seed: data_seed,
                n_train: 400,
                n_test: 200,
            },
            noise: None,
        }
    }
}

fn train_json(t: &TrainConfig, init: &InitConfig) -> serde_json::Value {
    json!({
        "loss": format!("{:?}", t.loss),
        "epochs": t.epochs,
        "lr": t.lr,
        "batch_size": t.batch_size,
        "init": {
            "w_b": init.w_b,
            "w_s": init.w_s,
            "coeff_std": init.coeff_std,
            "edge_scale_log10": init.edge_scale_log10,
        },
    })
}

fn check_splits(n: usize, splits: [usize; 3]) -> Result<()> {
    if splits.iter().sum::<usize>() != n {
        return Err(Error::InvalidConfig(format!("splits {splits:?} do not sum to {n} models")));
    }
    Ok(())
}

/// Fits one sine INR per model. Model `i` draws everything from
/// `derive_seed(base, i)` where `base` comes from `rng`.
pub fn build_inr_zoo<R: Rng + ?Sized>(n_models: usize, cfg: &InrZooConfig, rng: &mut R) -> Result<Zoo> {
    check_splits(n_models, cfg.splits)?;
    if cfg.dims.first() != Some(&2) || cfg.dims.last() != Some(&1) {
        return Err(Error::InvalidConfig("sine INRs map 2 inputs to 1 output".into()));
    }
    let base: u64 = rng.random();
    let grid = coordinate_grid(cfg.grid_side, cfg.spec.a(), cfg.spec.b());
    let records = parallel::map_range(n_models, |i| -> Result<ZooRecord> {
        let seed = derive_seed(base, i as u64);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let task = gen_sine_task(&mut r);
        let data = Dataset {
            inputs: grid.clone(),
            targets: Targets::Regression(grid.iter().map(|x| vec![task.eval(x)]).collect()),
        };
        let mut net = KanNet::init(&cfg.dims, cfg.spec.clone(), &cfg.init, &mut r)?;
        let init_loss = dataset_loss(&net, &data, LossKind::Mse)?;
        train_kan(&mut net, &data, &cfg.train, &mut r)?;
        let fit_loss = dataset_loss(&net, &data, LossKind::Mse)?;
        Ok(ZooRecord {
            id: i,
            checkpoint: net,
            target: Target::Freq(task.w.to_vec()),
            meta: RecordMeta {
                task: Task::SineInr,
                seed,
                noise_fraction: None,
                split: Split::of_index(i, cfg.splits),
                init_loss: Some(init_loss),
                fit_loss: Some(fit_loss),
                test_accuracy: None,
            },
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Zoo {
        header: ZooHeader {
            task: Task::SineInr,
            dims: cfg.dims.clone(),
            spec: cfg.spec.clone(),
            data: None,
            prune: None,
            build: json!({
                "base_seed": base,
                "grid_side": cfg.grid_side,
                "train": train_json(&cfg.train, &cfg.init),
            }),
        },
        records,
    })
}

/// Trains one classifier per model on the blob data with a random
/// fraction `rho ~ U[0, 1]` of training labels shuffled, and records its
/// accuracy on the clean test set.
pub fn build_acc_zoo<R: Rng + ?Sized>(n_models: usize, cfg: &AccZooConfig, rng: &mut R) -> Result<Zoo> {
    check_splits(n_models, cfg.splits)?;
    if cfg.noise.is_some_and(|r| !(0.0..=1.0).contains(&r)) {
        return Err(Error::InvalidConfig("noise fraction must lie in [0, 1]".into()));
    }
    let base_data = cfg.data.generate();
    if cfg.dims.first() != Some(&2) || cfg.dims.last() != Some(&base_data.n_classes) {
        return Err(Error::InvalidConfig("classifier dims must be [2, ..., n_classes]".into()));
    }
    let base: u64 = rng.random();
    let records = parallel::map_range(n_models, |i| -> Result<ZooRecord> {
        let seed = derive_seed(base, i as u64);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let drawn: f64 = r.random_range(0.0..=1.0);
        let noise = cfg.noise.unwrap_or(drawn);
        let labels = shuffle_label_fraction(&base_data.train_y, noise, &mut r);
        let data = Dataset {
            inputs: base_data.train_x.clone(),
            targets: Targets::Classes(labels),
        };
        let mut net = KanNet::init(&cfg.dims, cfg.spec.clone(), &cfg.init, &mut r)?;
        let init_loss = dataset_loss(&net, &data, LossKind::CrossEntropy)?;
        train_kan(&mut net, &data, &cfg.train, &mut r)?;
        let fit_loss = dataset_loss(&net, &data, LossKind::CrossEntropy)?;
        let acc = classification_accuracy(&net, &base_data.test_x, &base_data.test_y)?;
        Ok(ZooRecord {
            id: i,
            checkpoint: net,
            target: Target::TestAccuracy(acc),
            meta: RecordMeta {
                task: Task::AccPred,
                seed,
                noise_fraction: Some(noise),
                split: Split::of_index(i, cfg.splits),
                init_loss: Some(init_loss),
                fit_loss: Some(fit_loss),
                test_accuracy: Some(acc),
            },
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Zoo {
        header: ZooHeader {
            task: Task::AccPred,
            dims: cfg.dims.clone(),
            spec: cfg.spec.clone(),
            data: Some(cfg.data.clone()),
            prune: None,
            build: json!({
                "base_seed": base,
                "train": train_json(&cfg.train, &cfg.init),
            }),
        },
        records,
    })
}

/// Same classifiers, with oracle keep-masks (computed on the clean
/// training inputs) as targets.
pub fn to_prune_zoo(zoo: &Zoo, threshold: f64, signed: bool) -> Result<Zoo> {
    let data = zoo
        .base_data()
        .ok_or_else(|| Error::InvalidConfig("pruning needs a classifier zoo with base data".into()))?;
    let records = parallel::map(&zoo.records, |r| -> Result<ZooRecord> {
        let mask = oracle_prune(&r.checkpoint, &data.train_x, threshold, signed)?;
        Ok(ZooRecord {
            id: r.id,
            checkpoint: r.checkpoint.clone(),
            target: Target::PruneMask(mask),
            meta: RecordMeta {
                task: Task::PruneMask,
                ..r.meta.clone()
            },
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut header = zoo.header.clone();
    header.task = Task::PruneMask;
    header.prune = Some(PruneInfo { threshold, signed });
    Ok(Zoo { header, records })
}
