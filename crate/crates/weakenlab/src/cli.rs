//! Experiment driver: JSON configs, run manifests, and the train / sweep /
//! attack / eval / weaken-preview commands.
//!
//! A config file and an emitted manifest share one schema, so any run can
//! be replayed by pointing the same command at its `manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::adversarial::{
    evaluate_blackbox, evaluate_whitebox, write_robustness_csv, AttackSpec, RobustnessRow,
};
use crate::augment::{HiddenTransform, InputTransform};
use crate::data::{self, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::models::{build, Model, ModelSpec};
use crate::train::{
    best_top1, evaluate, train, write_metrics_csv, write_metrics_json, MetricsRecord, TrainConfig,
};

/// Environment variable naming the default root for relative dataset paths.
pub const DATA_DIR_ENV: &str = "WEAKENLAB_DATA_DIR";

/// Per-channel normalization constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizeConfig {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Where the train/validation datasets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// MNIST-family IDX file pairs.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        normalize: Option<NormalizeConfig>,
        #[serde(default)]
        train_subset: Option<usize>,
        #[serde(default)]
        val_subset: Option<usize>,
        #[serde(default)]
        subsample_seed: u64,
    },
    /// Seeded Gaussian-cluster images on the `k/255` grid.
    SyntheticImages {
        classes: usize,
        per_class_train: usize,
        per_class_val: usize,
        height: usize,
        width: usize,
        cluster_mean_scale: f64,
        noise_std: f64,
        seed: u64,
        #[serde(default)]
        normalize: Option<NormalizeConfig>,
    },
    /// Seeded Gaussian-cluster vectors.
    SyntheticBlobs {
        classes: usize,
        dims: usize,
        per_class_train: usize,
        per_class_val: usize,
        cluster_mean_scale: f64,
        noise_std: f64,
        seed: u64,
    },
}

fn resolve_path(p: &Path) -> PathBuf {
    if p.is_relative() {
        if let Ok(root) = std::env::var(DATA_DIR_ENV) {
            return Path::new(&root).join(p);
        }
    }
    p.to_path_buf()
}

impl DatasetConfig {
    /// Load or generate the `(train, validation)` pair.
    pub fn resolve(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                normalize,
                train_subset,
                val_subset,
                subsample_seed,
            } => {
                let mut train = data::load_idx(resolve_path(train_images), resolve_path(train_labels))?;
                let mut val = data::load_idx(resolve_path(test_images), resolve_path(test_labels))?;
                if let Some(n) = train_subset {
                    train = train.subsample(*n, *subsample_seed)?;
                }
                if let Some(n) = val_subset {
                    val = val.subsample(*n, subsample_seed.wrapping_add(1))?;
                }
                if let Some(nc) = normalize {
                    train = train.normalize(&nc.mean, &nc.std)?;
                    val = val.normalize(&nc.mean, &nc.std)?;
                }
                Ok((train, val))
            }
            DatasetConfig::SyntheticImages {
                classes,
                per_class_train,
                per_class_val,
                height,
                width,
                cluster_mean_scale,
                noise_std,
                seed,
                normalize,
            } => {
                // one joint draw split per class: train and validation share
                // cluster means but not noise
                let (mut train, mut val) = data::synthetic_image_split(
                    *classes,
                    *per_class_train,
                    *per_class_val,
                    *height,
                    *width,
                    *cluster_mean_scale,
                    *noise_std,
                    *seed,
                )?;
                if let Some(nc) = normalize {
                    train = train.normalize(&nc.mean, &nc.std)?;
                    val = val.normalize(&nc.mean, &nc.std)?;
                }
                Ok((train, val))
            }
            DatasetConfig::SyntheticBlobs {
                classes,
                dims,
                per_class_train,
                per_class_val,
                cluster_mean_scale,
                noise_std,
                seed,
            } => {
                data::synthetic_blob_split(
                    &SyntheticSpec {
                        classes: *classes,
                        dims: *dims,
                        samples_per_class: *per_class_train,
                        cluster_mean_scale: *cluster_mean_scale,
                        noise_std: *noise_std,
                        seed: *seed,
                    },
                    *per_class_val,
                )
            }
        }
    }
}

/// Full resolved experiment configuration. Emitted next to every output;
/// feeding it back to the same command reproduces the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default)]
    pub version: Option<String>,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// One full training run per seed; each seed overrides the model init
    /// seed, the shuffle seed and the augmentation rng seed.
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<RunManifest> {
        let text = fs::read_to_string(&path)?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        for a in &self.attacks {
            a.validate()?;
        }
        Ok(())
    }

    /// Model and train configs with every stochastic choice tied to `seed`.
    pub fn for_seed(&self, seed: u64) -> (ModelSpec, TrainConfig) {
        let mut model = self.model.clone();
        match &mut model {
            ModelSpec::Mlp { init_seed, .. } | ModelSpec::SmallCnn { init_seed, .. } => {
                *init_seed = seed;
            }
        }
        let mut train = self.train.clone();
        train.seed = seed;
        train.augment.rng_seed = seed;
        (model, train)
    }

    fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut stamped = self.clone();
        stamped.version = Some(env!("CARGO_PKG_VERSION").to_string());
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &stamped)?;
        w.flush()?;
        Ok(())
    }
}

/// Run independent jobs on up to `threads` worker threads, keeping result
/// order. Each job owns its state; only the results are collected.
fn run_parallel<T, F>(jobs: Vec<F>, threads: usize) -> Result<Vec<T>>
where
    T: Send,
    F: FnOnce() -> Result<T> + Send,
{
    if threads <= 1 || jobs.len() <= 1 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let n = jobs.len();
    let slots: Vec<Mutex<Option<F>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<Result<T>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().unwrap().take().unwrap();
                *results[i].lock().unwrap() = Some(job());
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker finished every claimed job"))
        .collect()
}

/// Outcome of one seeded training run.
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
}

fn run_one_seed(
    manifest: &RunManifest,
    seed: u64,
    train_ds: &Dataset,
    val_ds: &Dataset,
    out_dir: &Path,
) -> Result<SeedRun> {
    let (model_spec, train_cfg) = manifest.for_seed(seed);
    let mut model = build(&model_spec)?;
    let records = train(&mut model, train_ds, val_ds, &train_cfg)?;
    write_metrics_csv(&records, out_dir.join(format!("metrics_seed{seed}.csv")))?;
    write_metrics_json(&records, out_dir.join(format!("metrics_seed{seed}.json")))?;
    model.save_checkpoint(out_dir.join(format!("checkpoint_seed{seed}.wklb")))?;
    Ok(SeedRun { seed, records })
}

fn write_summary(runs: &[SeedRun], path: impl AsRef<Path>) -> Result<f64> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "seed,best_top1")?;
    let mut sum = 0.0;
    for r in runs {
        let best = best_top1(&r.records);
        writeln!(w, "{},{}", r.seed, best)?;
        sum += best;
    }
    let mean = sum / runs.len() as f64;
    writeln!(w, "mean,{mean}")?;
    w.flush()?;
    Ok(mean)
}

/// Train once per seed; emit per-seed metrics and checkpoints, a summary
/// (mean of per-seed best Top-1) and the manifest. Returns the summary mean.
pub fn cmd_train(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    threads: usize,
) -> Result<f64> {
    let mut manifest = RunManifest::load(config_path)?;
    if let Some(seed) = seed_override {
        manifest.seeds = vec![seed];
    }
    fs::create_dir_all(out_dir)?;
    let (train_ds, val_ds) = manifest.dataset.resolve()?;

    let jobs: Vec<_> = manifest
        .seeds
        .iter()
        .map(|&seed| {
            let (manifest, train_ds, val_ds) = (&manifest, &train_ds, &val_ds);
            move || run_one_seed(manifest, seed, train_ds, val_ds, out_dir)
        })
        .collect();
    let runs = run_parallel(jobs, threads)?;

    let mean = write_summary(&runs, out_dir.join("summary.csv"))?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(mean)
}

/// Which level a weaken-strength sweep applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SweepLevel {
    Embedding,
    Hidden,
}

impl std::fmt::Display for SweepLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepLevel::Embedding => write!(f, "embedding"),
            SweepLevel::Hidden => write!(f, "hidden"),
        }
    }
}

/// Train per `(ws, seed)` with feature weakening at the chosen level and
/// emit the accuracy curve as `level,ws,seed,best_top1` rows.
pub fn cmd_sweep(
    config_path: &Path,
    level: SweepLevel,
    ws_list: &[f64],
    out_dir: &Path,
    threads: usize,
) -> Result<()> {
    if ws_list.is_empty() {
        return Err(Error::config("sweep needs at least one ws value"));
    }
    for ws in ws_list {
        if !(*ws > 0.0 && *ws < 1.0) {
            return Err(Error::config(format!("sweep ws values must be in (0,1), got {ws}")));
        }
    }
    let manifest = RunManifest::load(config_path)?;
    fs::create_dir_all(out_dir)?;
    let (train_ds, val_ds) = manifest.dataset.resolve()?;

    let mut jobs = Vec::new();
    for &ws in ws_list {
        for &seed in &manifest.seeds {
            let mut m = manifest.clone();
            m.train.augment.input_transforms.clear();
            m.train.augment.hidden_transforms.clear();
            match level {
                SweepLevel::Embedding => {
                    m.train.augment.input_transforms = vec![InputTransform::FeatureWeakenInput { ws }];
                }
                SweepLevel::Hidden => {
                    m.train.augment.hidden_transforms =
                        vec![HiddenTransform::FeatureWeakenHidden { ws }];
                }
            }
            let (train_ds, val_ds) = (&train_ds, &val_ds);
            jobs.push(move || -> Result<(f64, u64, f64)> {
                let (model_spec, train_cfg) = m.for_seed(seed);
                let mut model = build(&model_spec)?;
                let records = train(&mut model, train_ds, val_ds, &train_cfg)?;
                Ok((ws, seed, best_top1(&records)))
            });
        }
    }
    let rows = run_parallel(jobs, threads)?;

    let mut w = BufWriter::new(File::create(out_dir.join("curve.csv"))?);
    writeln!(w, "level,ws,seed,best_top1")?;
    for (ws, seed, best) in rows {
        writeln!(w, "{level},{ws},{seed},{best}")?;
    }
    w.flush()?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(())
}

/// One trained method entering the robustness comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodCheckpoint {
    pub method: String,
    pub checkpoint: PathBuf,
}

/// Configuration of the robustness harness: a shared architecture, trained
/// checkpoints per method, the evaluation dataset and the attacks to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(default)]
    pub version: Option<String>,
    pub model: ModelSpec,
    pub dataset: DatasetConfig,
    pub attacks: Vec<AttackSpec>,
    pub checkpoints: Vec<MethodCheckpoint>,
    /// Black-box adversarial samples are generated against this method's
    /// model.
    pub source_method: String,
}

impl AttackConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<AttackConfig> {
        let text = fs::read_to_string(&path)?;
        let cfg: AttackConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
        cfg.model.validate()?;
        if cfg.attacks.is_empty() || cfg.checkpoints.is_empty() {
            return Err(Error::config("attack config needs attacks and checkpoints"));
        }
        for a in &cfg.attacks {
            a.validate()?;
        }
        if !cfg.checkpoints.iter().any(|c| c.method == cfg.source_method) {
            return Err(Error::config(format!(
                "source_method {} has no checkpoint entry",
                cfg.source_method
            )));
        }
        Ok(cfg)
    }
}

/// White-box and black-box robustness table over every method checkpoint,
/// written to `robustness.csv`.
pub fn cmd_attack(config_path: &Path, out_dir: &Path) -> Result<Vec<RobustnessRow>> {
    let cfg = AttackConfig::load(config_path)?;
    fs::create_dir_all(out_dir)?;
    let (_, val_ds) = cfg.dataset.resolve()?;

    let mut models = Vec::new();
    for mc in &cfg.checkpoints {
        let model = Model::load_checkpoint(&cfg.model, resolve_path(&mc.checkpoint))?;
        models.push((mc.method.clone(), model));
    }
    let source = &models
        .iter()
        .find(|(m, _)| *m == cfg.source_method)
        .expect("validated source method")
        .1;

    let mut rows = Vec::new();
    for spec in &cfg.attacks {
        for (method, model) in &models {
            rows.push(RobustnessRow {
                method: method.clone(),
                attack: spec.kind,
                mode: "white".into(),
                epsilon: spec.epsilon,
                accuracy: evaluate_whitebox(model, &val_ds, spec)?,
            });
            rows.push(RobustnessRow {
                method: method.clone(),
                attack: spec.kind,
                mode: "black".into(),
                epsilon: spec.epsilon,
                accuracy: evaluate_blackbox(source, model, &val_ds, spec)?,
            });
        }
    }
    write_robustness_csv(&rows, out_dir.join("robustness.csv"))?;
    let mut stamped = cfg.clone();
    stamped.version = Some(env!("CARGO_PKG_VERSION").to_string());
    let mut w = BufWriter::new(File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut w, &stamped)?;
    w.flush()?;
    Ok(rows)
}

/// Clean Top-1/Top-5 of a checkpoint on the config's validation split.
pub fn cmd_eval(checkpoint: &Path, config_path: &Path) -> Result<(f64, f64)> {
    let manifest = RunManifest::load(config_path)?;
    let model = Model::load_checkpoint(&manifest.model, checkpoint)?;
    let (_, val_ds) = manifest.dataset.resolve()?;
    evaluate(&model, &val_ds)
}

fn write_pgm(pixels: &[f64], h: usize, w: usize, path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = pixels
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

/// Export the first `count` samples weakened at each strength as P5
/// graymaps, plus a scatter CSV per strength pairing originals with their
/// weakened copies.
pub fn cmd_weaken_preview(
    config_path: &Path,
    ws_list: &[f64],
    out_dir: &Path,
    count: usize,
) -> Result<()> {
    if ws_list.is_empty() {
        return Err(Error::config("weaken-preview needs at least one ws value"));
    }
    let manifest = RunManifest::load(config_path)?;
    fs::create_dir_all(out_dir)?;
    let (train_ds, _) = manifest.dataset.resolve()?;
    // raw pixel space, whatever the training normalization was
    let raw = train_ds.denormalize();
    if raw.shape.len() != 4 || raw.shape[1] != 1 {
        return Err(Error::arg(format!(
            "weaken-preview needs single-channel images, got shape {:?}",
            raw.shape
        )));
    }
    let count = count.min(raw.len());
    let (h, w) = (raw.shape[2], raw.shape[3]);
    let stride = raw.sample_stride();
    let head = Dataset {
        inputs: raw.inputs[..count * stride].to_vec(),
        shape: vec![count, 1, h, w],
        labels: raw.labels[..count].to_vec(),
        class_count: raw.class_count,
        normalization: None,
        provenance: raw.provenance.clone(),
    };
    for i in 0..count {
        write_pgm(
            &head.inputs[i * stride..(i + 1) * stride],
            h,
            w,
            out_dir.join(format!("sample{i}_original.pgm")),
        )?;
    }
    for &ws in ws_list {
        if !(ws > 0.0 && ws < 1.0) {
            return Err(Error::config(format!("ws values must be in (0,1), got {ws}")));
        }
        let weak = head.weakened(ws);
        for i in 0..count {
            write_pgm(
                &weak.inputs[i * stride..(i + 1) * stride],
                h,
                w,
                out_dir.join(format!("sample{i}_ws{ws}.pgm")),
            )?;
        }
        data::export_scatter(&head, &weak, [0, 1, 2], out_dir.join(format!("scatter_ws{ws}.csv")))?;
    }
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(())
}
