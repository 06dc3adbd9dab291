//! `wskan` command line: zoo construction, metanetwork training,
//! evaluation, symmetry checks, pruning and width generalization.
//!
//! Exit codes: 0 success, 1 a check failed, 2 invalid config or
//! incompatible inputs, 3 I/O or corrupt files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use wskan::engine::log::TrainLog;
use wskan::engine::metrics::mean_std;
use wskan::kan::{classification_accuracy, KanNet};
use wskan::metanet::{Aggregation, ModelKind, Pool};
use wskan::spline::SplineSpec;
use wskan::symmetry::verify_invariance;
use wskan::zoo::{
    apply_mask, build_acc_zoo, build_inr_zoo, evaluate, kept_fraction, oracle_prune, to_prune_zoo, train_pipeline,
    AccZooConfig, InrZooConfig, Method, PipelineConfig, Split, Task, Trained, Zoo, PRUNE_THRESHOLD,
};

#[derive(Parser)]
#[command(name = "wskan", version, about = "Weight-space learning over Kolmogorov-Arnold networks")]
struct Cli {
    /// Base directory for relative paths.
    #[arg(long, global = true, env = "WSKAN_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a zoo of KANs and write it to disk.
    ZooBuild(ZooBuildArgs),
    /// Train a metanetwork on a zoo.
    TrainMeta(TrainArgs),
    /// Score trained metanetworks on a zoo split.
    Eval(EvalArgs),
    /// Check that hidden-unit permutations leave KAN outputs unchanged.
    VerifySymmetry(SymmetryArgs),
    /// Compute pruning masks and their effect on classifier accuracy.
    Prune(PruneArgs),
    /// Evaluate a graph or set model on fresh zoos of other widths.
    OodEval(OodArgs),
}

#[derive(Args, Serialize)]
struct ZooBuildArgs {
    /// sine-inr, acc-pred or prune-mask.
    #[arg(long)]
    task: String,
    #[arg(long)]
    n: usize,
    /// Comma-separated layer widths.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train/val/test counts; defaults to 80/10/10 percent.
    #[arg(long, value_delimiter = ',')]
    splits: Option<Vec<usize>>,
    /// Epochs spent fitting each KAN.
    #[arg(long)]
    kan_epochs: Option<usize>,
    /// Pruning threshold for prune-mask zoos.
    #[arg(long, default_value_t = PRUNE_THRESHOLD)]
    threshold: f64,
    /// Threshold the signed activation mean instead of the mean magnitude.
    #[arg(long)]
    signed: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    zoo: PathBuf,
    /// wskan, deepsets, mlp, mlp-aug or mlp-align.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Repeat for several seeds; each gets its own checkpoint.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    no_pe: bool,
    #[arg(long)]
    unidirectional: bool,
    #[arg(long)]
    no_residual: bool,
    /// sum or mean.
    #[arg(long)]
    aggregation: Option<String>,
    /// global or per-layer.
    #[arg(long)]
    pool: Option<String>,
    /// Checkpoint path. With several seeds the seed is added to the name.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    zoo: PathBuf,
    /// Repeat to report mean and std over seeds.
    #[arg(long, required = true)]
    checkpoint: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Subset of mse, r2, roc-auc, accuracy. Defaults to all valid for the task.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Results file, one JSON object per line.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SymmetryArgs {
    #[arg(long, conflicts_with = "zoo", required_unless_present = "zoo")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    zoo: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n_inputs: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct PruneArgs {
    #[arg(long)]
    zoo: PathBuf,
    /// Trained mask predictor, needed by the wskan and baseline modes.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// oracle, wskan or baseline.
    #[arg(long, default_value = "oracle")]
    mode: String,
    #[arg(long, default_value_t = PRUNE_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct OodArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Zoo the checkpoint was trained on; fresh zoos copy its settings.
    #[arg(long)]
    zoo: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    /// Models per fresh zoo.
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    kan_epochs: Option<usize>,
}

/// A check that ran and failed (exit code 1).
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 1;
    }
    for cause in err.chain() {
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<wskan::Error>() {
            return match e {
                wskan::Error::Io(_)
                | wskan::Error::BadMagic
                | wskan::Error::VersionUnsupported(_)
                | wskan::Error::TruncatedPayload => 3,
                _ => 2,
            };
        }
    }
    2
}

fn config_hash<T: Serialize>(cmd: &str, args: &T) -> String {
    let body = serde_json::to_string(args).expect("args serialize");
    let digest = Sha256::digest(format!("{cmd}\n{body}").as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Ctx {
    root: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(r) if p.is_relative() => r.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn load_zoo(&self, p: &Path) -> anyhow::Result<Zoo> {
        let p = self.path(p);
        Zoo::load(&p).with_context(|| format!("loading zoo {}", p.display()))
    }

    fn load_trained(&self, p: &Path) -> anyhow::Result<Trained> {
        let p = self.path(p);
        let bytes = std::fs::read(&p).with_context(|| format!("reading {}", p.display()))?;
        Trained::from_bytes(&bytes).with_context(|| format!("decoding {}", p.display()))
    }
}

/// JSON-lines sink that stamps every record with the config hash.
struct Results {
    out: Option<BufWriter<File>>,
    hash: String,
}

impl Results {
    fn open(path: Option<PathBuf>, hash: &str) -> anyhow::Result<Self> {
        let out = match path {
            Some(p) => Some(BufWriter::new(
                File::create(&p).with_context(|| format!("creating {}", p.display()))?,
            )),
            None => None,
        };
        Ok(Self {
            out,
            hash: hash.to_string(),
        })
    }

    fn emit(&mut self, mut v: serde_json::Value) -> anyhow::Result<()> {
        if let Some(w) = &mut self.out {
            v["config_hash"] = json!(self.hash);
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    fn finish(self) -> anyhow::Result<()> {
        if let Some(mut w) = self.out {
            w.flush()?;
        }
        Ok(())
    }
}

fn parse_split(s: &str) -> anyhow::Result<Split> {
    Ok(Split::parse(s)?)
}

fn default_splits(n: usize) -> [usize; 3] {
    let train = n * 8 / 10;
    let val = n / 10;
    [train, val, n - train - val]
}

fn zoo_build(ctx: &Ctx, a: &ZooBuildArgs, hash: &str) -> anyhow::Result<()> {
    let task = Task::parse(&a.task)?;
    if a.n == 0 {
        bail!(wskan::Error::InvalidConfig("a zoo needs at least one model".into()));
    }
    let splits = match &a.splits {
        Some(s) if s.len() == 3 => [s[0], s[1], s[2]],
        Some(_) => bail!(wskan::Error::InvalidConfig("--splits takes three counts".into())),
        None => default_splits(a.n),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let t = Instant::now();
    let zoo = match task {
        Task::SineInr => {
            let mut cfg = InrZooConfig::desk(8, splits);
            if let Some(d) = &a.dims {
                cfg.dims = d.clone();
            }
            cfg.spec = respec(&cfg.spec, a.grid, a.degree)?;
            if let Some(e) = a.kan_epochs {
                cfg.train.epochs = e;
            }
            build_inr_zoo(a.n, &cfg, &mut rng)?
        }
        Task::AccPred | Task::PruneMask => {
            let mut cfg = AccZooConfig::desk(splits, a.seed);
            if let Some(d) = &a.dims {
                cfg.dims = d.clone();
            }
            cfg.spec = respec(&cfg.spec, a.grid, a.degree)?;
            if let Some(e) = a.kan_epochs {
                cfg.train.epochs = e;
            }
            let zoo = build_acc_zoo(a.n, &cfg, &mut rng)?;
            if task == Task::PruneMask {
                to_prune_zoo(&zoo, a.threshold, a.signed)?
            } else {
                zoo
            }
        }
    };
    let out = ctx.path(&a.out);
    zoo.save(&out).with_context(|| format!("writing zoo to {}", out.display()))?;
    let [train, val, test] = zoo.split_counts();
    println!(
        "built {} {} models ({train} train / {val} val / {test} test) dims {:?} in {:.1}s -> {}",
        zoo.records.len(),
        task.name(),
        zoo.header.dims,
        t.elapsed().as_secs_f64(),
        out.display()
    );
    println!("config hash {hash}");
    Ok(())
}

fn respec(base: &SplineSpec, grid: Option<usize>, degree: Option<usize>) -> anyhow::Result<SplineSpec> {
    Ok(SplineSpec::new(
        base.a(),
        base.b(),
        grid.unwrap_or(base.grid()),
        degree.unwrap_or(base.degree()),
    )?)
}

fn seeded_path(out: &Path, seed: u64, several: bool) -> PathBuf {
    if !several {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-seed{seed}.{ext}"),
        None => format!("{stem}-seed{seed}"),
    };
    out.with_file_name(name)
}

fn train_meta(ctx: &Ctx, a: &TrainArgs, hash: &str) -> anyhow::Result<()> {
    let method = Method::parse(&a.model).map_err(|_| wskan::Error::InvalidConfig(format!("unknown model `{}`", a.model)))?;
    let zoo = ctx.load_zoo(&a.zoo)?;
    let mut cfg = PipelineConfig::new(method);
    cfg.train.epochs = a.epochs;
    cfg.train.lr = a.lr;
    if let Some(v) = a.hidden {
        cfg.hidden_dim = v;
    }
    if let Some(v) = a.layers {
        cfg.n_layers = v;
    }
    if let Some(v) = a.dropout {
        cfg.dropout_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.train.weight_decay = v;
    }
    cfg.use_pe = !a.no_pe;
    cfg.bidirectional = !a.unidirectional;
    cfg.residual = !a.no_residual;
    cfg.aggregation = match a.aggregation.as_deref() {
        None | Some("sum") => Aggregation::Sum,
        Some("mean") => Aggregation::Mean,
        Some(o) => bail!(wskan::Error::InvalidConfig(format!("unknown aggregation `{o}`"))),
    };
    cfg.pool = match a.pool.as_deref() {
        None | Some("global") => Pool::Global,
        Some("per-layer") => Pool::PerLayer,
        Some(o) => bail!(wskan::Error::InvalidConfig(format!("unknown pooling `{o}`"))),
    };
    cfg.meta_config(&zoo).validate()?;
    let several = a.seed.len() > 1;
    for &seed in &a.seed {
        cfg.train.seed = seed;
        let out = ctx.path(&seeded_path(&a.out, seed, several));
        let log_path = out.with_extension("log.jsonl");
        if log_path.exists() {
            std::fs::remove_file(&log_path)?;
        }
        let mut log = TrainLog::open(&log_path)?;
        let t = Instant::now();
        let trained = train_pipeline(&zoo, &cfg, Some(&mut log))?;
        std::fs::write(&out, trained.to_bytes()).with_context(|| format!("writing {}", out.display()))?;
        let h = &trained.history;
        println!(
            "{} seed {seed}: {} epochs in {:.1}s, best epoch {} val loss {:.5} -> {}",
            method.name(),
            h.train_loss.len(),
            t.elapsed().as_secs_f64(),
            h.best_epoch,
            h.best_val,
            out.display()
        );
    }
    println!("config hash {hash}");
    Ok(())
}

const METRICS: [&str; 4] = ["mse", "r2", "roc-auc", "accuracy"];

fn eval(ctx: &Ctx, a: &EvalArgs, hash: &str) -> anyhow::Result<()> {
    let zoo = ctx.load_zoo(&a.zoo)?;
    let split = parse_split(&a.split)?;
    let mask_task = zoo.header.task == Task::PruneMask;
    let valid: &[&str] = if mask_task { &METRICS[2..] } else { &METRICS[..2] };
    let metrics: Vec<String> = match &a.metrics {
        Some(m) => m.clone(),
        None => valid.iter().map(|s| s.to_string()).collect(),
    };
    for m in &metrics {
        if !valid.contains(&m.as_str()) {
            bail!(wskan::Error::InvalidConfig(format!(
                "metric `{m}` does not apply to {} (valid: {})",
                zoo.header.task.name(),
                valid.join(", ")
            )));
        }
    }
    if zoo.split(split).is_empty() {
        bail!(wskan::Error::EmptyDataset);
    }
    let mut results = Results::open(a.out.as_ref().map(|p| ctx.path(p)), hash)?;
    let mut table: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
    println!("{:<40} {}", "checkpoint", metrics.join("  "));
    for path in &a.checkpoint {
        let trained = ctx.load_trained(path)?;
        let ev = evaluate(&trained, &zoo, split)?;
        let values: Vec<f64> = metrics
            .iter()
            .map(|m| match m.as_str() {
                "mse" => ev.mse,
                "r2" => ev.r2,
                "roc-auc" => ev.roc_auc,
                _ => ev.accuracy,
            })
            .map(|v| v.unwrap_or(f64::NAN))
            .collect();
        let cells: Vec<String> = metrics.iter().zip(&values).map(|(m, v)| scaled(m, *v)).collect();
        println!("{:<40} {}", path.display(), cells.join("  "));
        let mut rec = json!({
            "checkpoint": path.display().to_string(),
            "method": trained.method.name(),
            "split": split.name(),
        });
        for (i, (m, v)) in metrics.iter().zip(values).enumerate() {
            rec[m.as_str()] = json!(v);
            table[i].push(v);
        }
        results.emit(rec)?;
    }
    if a.checkpoint.len() > 1 {
        let mut rec = json!({ "summary": true, "n": a.checkpoint.len(), "split": split.name() });
        let cells: Vec<String> = metrics
            .iter()
            .zip(&table)
            .map(|(m, col)| {
                let (mu, sd) = mean_std(col);
                rec[format!("{m}_mean")] = json!(mu);
                rec[format!("{m}_std")] = json!(sd);
                format!("{m} {mu:.5} ± {sd:.5}")
            })
            .collect();
        println!("mean ± std over {} runs: {}", a.checkpoint.len(), cells.join(", "));
        results.emit(rec)?;
    }
    results.finish()?;
    println!("config hash {hash}");
    Ok(())
}

/// Raw value followed by the table convention: MSE x10^3, R^2 and
/// accuracies x10^2.
fn scaled(metric: &str, v: f64) -> String {
    let (f, tag) = if metric == "mse" { (1e3, "1e3") } else { (1e2, "1e2") };
    format!("{metric} {v:.5} (x{tag}: {:.2})", v * f)
}

fn load_kan(path: &Path) -> anyhow::Result<KanNet> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match KanNet::from_bytes(&bytes) {
        Ok(n) => Ok(n),
        Err(wskan::Error::BadMagic) => {
            let text = String::from_utf8(bytes).map_err(|_| wskan::Error::BadMagic)?;
            Ok(KanNet::from_text(&text)?)
        }
        Err(e) => Err(e.into()),
    }
}

fn verify_symmetry(ctx: &Ctx, a: &SymmetryArgs, hash: &str) -> anyhow::Result<()> {
    let nets: Vec<(String, KanNet)> = match (&a.checkpoint, &a.zoo) {
        (Some(p), _) => vec![(p.display().to_string(), load_kan(&ctx.path(p))?)],
        (None, Some(z)) => ctx
            .load_zoo(z)?
            .records
            .into_iter()
            .map(|r| (format!("record {}", r.id), r.checkpoint))
            .collect(),
        (None, None) => bail!(wskan::Error::InvalidConfig("give --checkpoint or --zoo".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (name, net) in &nets {
        let rep = verify_invariance(net, a.n_inputs, a.tol, &mut rng)?;
        worst = worst.max(rep.max_deviation);
        if !rep.pass {
            failures += 1;
            println!("FAIL {name}: max deviation {:.3e}", rep.max_deviation);
        }
    }
    println!(
        "{} of {} nets invariant at tol {:e}; worst deviation {worst:.3e}",
        nets.len() - failures,
        nets.len(),
        a.tol
    );
    println!("config hash {hash}");
    if failures > 0 {
        return Err(CheckFailed(format!("{failures} nets changed under permutation")).into());
    }
    Ok(())
}

fn prune(ctx: &Ctx, a: &PruneArgs, hash: &str) -> anyhow::Result<()> {
    let zoo = ctx.load_zoo(&a.zoo)?;
    let split = parse_split(&a.split)?;
    let data = zoo
        .base_data()
        .ok_or_else(|| wskan::Error::InvalidConfig("pruning needs a classifier zoo".into()))?;
    let records = zoo.split(split);
    if records.is_empty() {
        bail!(wskan::Error::EmptyDataset);
    }
    let nets: Vec<&KanNet> = records.iter().map(|r| &r.checkpoint).collect();
    let (masks, seconds): (Vec<Vec<bool>>, Vec<f64>) = match a.mode.as_str() {
        "oracle" => nets
            .iter()
            .map(|n| {
                let t = Instant::now();
                let m = oracle_prune(n, &data.train_x, a.threshold, false)?;
                Ok((m, t.elapsed().as_secs_f64()))
            })
            .collect::<anyhow::Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        mode @ ("wskan" | "baseline") => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| wskan::Error::InvalidConfig(format!("--mode {mode} needs --checkpoint")))?;
            let trained = ctx.load_trained(path)?;
            let is_wskan = trained.method == Method::WsKan;
            if trained.model.cfg.readout != wskan::metanet::Readout::Edge || is_wskan != (mode == "wskan") {
                bail!(wskan::Error::IncompatibleModel {
                    model: trained.method.name().into(),
                    reason: format!("--mode {mode} needs a matching edge-level mask predictor"),
                });
            }
            // Decision threshold picked on the val split when the zoo has one.
            let cut = if zoo.split(Split::Val).is_empty() {
                0.5
            } else {
                evaluate(&trained, &zoo, Split::Val)?.threshold.unwrap_or(0.5)
            };
            let t = Instant::now();
            let logits = trained.predict(&nets)?;
            let per_net = t.elapsed().as_secs_f64() / nets.len() as f64;
            let mut base = 0;
            let mut masks = Vec::new();
            for n in &nets {
                let e = n.num_edges();
                masks.push(logits.data[base..base + e].iter().map(|&z| 1.0 / (1.0 + (-z).exp()) >= cut).collect());
                base += e;
            }
            (masks, vec![per_net; nets.len()])
        }
        other => bail!(wskan::Error::InvalidConfig(format!("unknown mode `{other}`"))),
    };

    let mut results = Results::open(a.out.as_ref().map(|p| ctx.path(p)), hash)?;
    // Noise bins of 20 points: [0, 0.2), ..., [0.8, 1.0].
    let mut bins = vec![(0usize, 0.0, 0.0, 0.0); 5];
    println!("{:>6} {:>7} {:>8} {:>9} {:>9} {:>10}", "id", "noise", "kept%", "acc", "pruned", "time_ms");
    for ((r, mask), secs) in records.iter().zip(&masks).zip(&seconds) {
        let before = classification_accuracy(&r.checkpoint, &data.test_x, &data.test_y)?;
        let after = classification_accuracy(&apply_mask(&r.checkpoint, mask)?, &data.test_x, &data.test_y)?;
        let kept = kept_fraction(mask) * 100.0;
        let noise = r.meta.noise_fraction.unwrap_or(f64::NAN);
        println!(
            "{:>6} {:>7.3} {:>8.1} {:>9.4} {:>9.4} {:>10.4}",
            r.id,
            noise,
            kept,
            before,
            after,
            secs * 1e3
        );
        if noise.is_finite() {
            let b = &mut bins[((noise * 5.0) as usize).min(4)];
            b.0 += 1;
            b.1 += kept;
            b.2 += after;
            b.3 += after - before;
        }
        results.emit(json!({
            "id": r.id,
            "mode": a.mode,
            "noise": noise,
            "kept_percent": kept,
            "accuracy": before,
            "pruned_accuracy": after,
            "wall_time_s": secs,
        }))?;
    }
    println!("noise bin   models  kept%   pruned acc  acc change");
    for (i, (n, kept, acc, delta)) in bins.iter().enumerate() {
        if *n == 0 {
            continue;
        }
        let k = *n as f64;
        println!(
            "{:>3}-{:<3}%  {n:>6}  {:>6.1}  {:>10.4}  {:>+10.4}",
            i * 20,
            (i + 1) * 20,
            kept / k,
            acc / k,
            delta / k
        );
        results.emit(json!({
            "bin": [i as f64 * 0.2, (i + 1) as f64 * 0.2],
            "models": n,
            "kept_percent": kept / k,
            "pruned_accuracy": acc / k,
            "accuracy_change": delta / k,
        }))?;
    }
    let total: f64 = seconds.iter().sum();
    println!(
        "{} mode: {:.4} ms per net over {} nets",
        a.mode,
        total / seconds.len() as f64 * 1e3,
        seconds.len()
    );
    results.finish()?;
    println!("config hash {hash}");
    Ok(())
}

/// Copy of `dims` with every hidden width set to `h`.
fn widen(dims: &[usize], h: usize) -> Vec<usize> {
    let last = dims.len() - 1;
    dims.iter().enumerate().map(|(i, &d)| if i == 0 || i == last { d } else { h }).collect()
}

fn ood_eval(ctx: &Ctx, a: &OodArgs, hash: &str) -> anyhow::Result<()> {
    let trained = ctx.load_trained(&a.checkpoint)?;
    if trained.model.kind() == ModelKind::FlatMlp {
        bail!(wskan::Error::IncompatibleModel {
            model: trained.method.name().into(),
            reason: "flat models are tied to one architecture; width transfer needs wskan or deepsets".into(),
        });
    }
    let base = ctx.load_zoo(&a.zoo)?;
    let h = &base.header;
    let epochs = a.kan_epochs.or_else(|| h.build["train"]["epochs"].as_u64().map(|e| e as usize));
    for &width in &a.widths {
        let dims = widen(&h.dims, width);
        let mut rng = ChaCha8Rng::seed_from_u64(wskan::parallel::derive_seed(a.seed, width as u64));
        let zoo = match h.task {
            Task::SineInr => {
                let mut cfg = InrZooConfig::desk(width, [0, 0, a.n]);
                cfg.dims = dims;
                cfg.spec = h.spec.clone();
                if let Some(e) = epochs {
                    cfg.train.epochs = e;
                }
                build_inr_zoo(a.n, &cfg, &mut rng)?
            }
            Task::AccPred | Task::PruneMask => {
                let data = h
                    .data
                    .clone()
                    .ok_or_else(|| wskan::Error::InvalidConfig("classifier zoo without base data".into()))?;
                let mut cfg = AccZooConfig::desk([0, 0, a.n], data.seed);
                cfg.data = data;
                cfg.dims = dims;
                cfg.spec = h.spec.clone();
                if let Some(e) = epochs {
                    cfg.train.epochs = e;
                }
                let zoo = build_acc_zoo(a.n, &cfg, &mut rng)?;
                match &h.prune {
                    Some(p) => to_prune_zoo(&zoo, p.threshold, p.signed)?,
                    None => zoo,
                }
            }
        };
        let ev = evaluate(&trained, &zoo, Split::Test)?;
        let fmt = |name: &str, v: Option<f64>| v.map(|x| format!("{name} {x:.5}"));
        let cells: Vec<String> = [
            fmt("mse", ev.mse),
            fmt("r2", ev.r2),
            fmt("roc-auc", ev.roc_auc),
            fmt("accuracy", ev.accuracy),
        ]
        .into_iter()
        .flatten()
        .collect();
        println!("width {width} ({:?}, {} models): {}", zoo.header.dims, a.n, cells.join(", "));
    }
    println!("config hash {hash}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let ctx = Ctx { root: cli.data_root };
    match &cli.cmd {
        Cmd::ZooBuild(a) => zoo_build(&ctx, a, &config_hash("zoo-build", a)),
        Cmd::TrainMeta(a) => train_meta(&ctx, a, &config_hash("train-meta", a)),
        Cmd::Eval(a) => eval(&ctx, a, &config_hash("eval", a)),
        Cmd::VerifySymmetry(a) => verify_symmetry(&ctx, a, &config_hash("verify-symmetry", a)),
        Cmd::Prune(a) => prune(&ctx, a, &config_hash("prune", a)),
        Cmd::OodEval(a) => ood_eval(&ctx, a, &config_hash("ood-eval", a)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_arithmetic() {
        assert_eq!(default_splits(30), [24, 3, 3]);
        assert_eq!(default_splits(7), [5, 0, 2]);
    }

    #[test]
    fn widen_keeps_io() {
        assert_eq!(widen(&[2, 8, 8, 1], 12), vec![2, 12, 12, 1]);
    }

    #[test]
    fn scaled_formatting() {
        assert_eq!(scaled("mse", 0.00329), "mse 0.00329 (x1e3: 3.29)");
        assert!(scaled("r2", 0.5).ends_with("(x1e2: 50.00)"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&CheckFailed("x".into()).into()), 1);
        assert_eq!(exit_code(&wskan::Error::InvalidConfig("x".into()).into()), 2);
        assert_eq!(exit_code(&wskan::Error::TruncatedPayload.into()), 3);
        let io: anyhow::Error = std::io::Error::other("x").into();
        assert_eq!(exit_code(&io.context("reading")), 3);
    }

    #[test]
    fn seeded_names() {
        assert_eq!(seeded_path(Path::new("a/m.bin"), 2, true), PathBuf::from("a/m-seed2.bin"));
        assert_eq!(seeded_path(Path::new("a/m.bin"), 2, false), PathBuf::from("a/m.bin"));
    }
}
