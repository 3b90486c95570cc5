//! Dataset ingestion (IDX binary format), normalization, synthetic data
//! generation and deterministic batching.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::Batch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// A labeled dataset held as plain row-major data. Immutable after load;
/// safe to share across threads.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    /// `[N, C, H, W]` for images, `[N, D]` for plain vectors.
    pub shape: Vec<usize>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// Per-channel `(mean, std)` applied to `inputs`, if any.
    pub normalization: Option<(Vec<f64>, Vec<f64>)>,
    pub provenance: String,
}

/// Parameters for seeded Gaussian-cluster data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    pub cluster_mean_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("synthetic data needs at least 2 classes"));
        }
        if self.dims < 2 {
            return Err(Error::config("synthetic data needs at least 2 dimensions"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class must be >= 1"));
        }
        Ok(())
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per sample.
    pub fn sample_stride(&self) -> usize {
        self.shape[1..].iter().product()
    }

    fn channels(&self) -> usize {
        if self.shape.len() == 4 {
            self.shape[1]
        } else {
            1
        }
    }

    /// `(inputs - mean) / std` per channel.
    pub fn normalize(&self, mean: &[f64], std: &[f64]) -> Result<Dataset> {
        let c = self.channels();
        if mean.len() != c || std.len() != c {
            return Err(Error::arg(format!(
                "normalize: need {c} per-channel constants, got {} / {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| *s <= 0.0) {
            return Err(Error::arg("normalize: std must be > 0"));
        }
        let plane = self.sample_stride() / c;
        let inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / plane) % c;
                (v - mean[ch]) / std[ch]
            })
            .collect();
        Ok(Dataset {
            inputs,
            shape: self.shape.clone(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            normalization: Some((mean.to_vec(), std.to_vec())),
            provenance: self.provenance.clone(),
        })
    }

    /// Undo [`Dataset::normalize`].
    pub fn denormalize(&self) -> Dataset {
        let Some((mean, std)) = &self.normalization else {
            return self.clone();
        };
        let c = self.channels();
        let plane = self.sample_stride() / c;
        let inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ch = (i / plane) % c;
                v * std[ch] + mean[ch]
            })
            .collect();
        Dataset {
            inputs,
            shape: self.shape.clone(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            normalization: None,
            provenance: self.provenance.clone(),
        }
    }

    /// Seeded subsample without replacement, preserving class ratios within
    /// one sample per class. Selected samples keep their original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n > self.len() {
            return Err(Error::arg(format!(
                "subsample: requested {n} of {} samples",
                self.len()
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.class_count];
        for (i, l) in self.labels.iter().enumerate() {
            by_class[*l].push(i);
        }
        // proportional quota, remainder to the largest fractional parts
        let total = self.len() as f64;
        let mut quota: Vec<usize> = Vec::with_capacity(self.class_count);
        let mut frac: Vec<(usize, f64)> = Vec::with_capacity(self.class_count);
        for (k, idx) in by_class.iter().enumerate() {
            let exact = n as f64 * idx.len() as f64 / total;
            quota.push(exact.floor() as usize);
            frac.push((k, exact - exact.floor()));
        }
        let mut short = n - quota.iter().sum::<usize>();
        frac.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (k, _) in frac {
            if short == 0 {
                break;
            }
            if quota[k] < by_class[k].len() {
                quota[k] += 1;
                short -= 1;
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = Vec::with_capacity(n);
        for (k, idx) in by_class.iter().enumerate() {
            let mut pool = idx.clone();
            pool.shuffle(&mut rng);
            chosen.extend_from_slice(&pool[..quota[k]]);
        }
        chosen.sort_unstable();

        let stride = self.sample_stride();
        let mut inputs = Vec::with_capacity(chosen.len() * stride);
        let mut labels = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            inputs.extend_from_slice(&self.inputs[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        let mut shape = self.shape.clone();
        shape[0] = chosen.len();
        Ok(Dataset {
            inputs,
            shape,
            labels,
            class_count: self.class_count,
            normalization: self.normalization.clone(),
            provenance: format!("{} subsample(n={n}, seed={seed})", self.provenance),
        })
    }

    /// Contiguous batches with one-hot labels after an optional seeded
    /// shuffle. The last partial batch is kept.
    pub fn batches(&self, size: usize, shuffle_seed: Option<u64>) -> impl Iterator<Item = Batch> + '_ {
        assert!(size >= 1, "batch size must be >= 1");
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        let stride = self.sample_stride();
        let k = self.class_count;
        let chunks: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
        chunks.into_iter().map(move |chunk| {
            let n = chunk.len();
            let mut x = Vec::with_capacity(n * stride);
            let mut y = vec![0.0; n * k];
            for (row, &i) in chunk.iter().enumerate() {
                x.extend_from_slice(&self.inputs[i * stride..(i + 1) * stride]);
                y[row * k + self.labels[i]] = 1.0;
            }
            let mut shape = self.shape.clone();
            shape[0] = n;
            Batch::new(
                Tensor::from_vec(&shape, x).unwrap(),
                Tensor::from_vec(&[n, k], y).unwrap(),
                k,
            )
            .unwrap()
        })
    }

    /// Copy of the dataset with every input scaled by `(1 - ws)`.
    pub fn weakened(&self, ws: f64) -> Dataset {
        Dataset {
            inputs: self.inputs.iter().map(|v| (1.0 - ws) * v).collect(),
            shape: self.shape.clone(),
            labels: self.labels.clone(),
            class_count: self.class_count,
            normalization: self.normalization.clone(),
            provenance: format!("{} weakened(ws={ws})", self.provenance),
        }
    }
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    r.read_u32::<BigEndian>()
        .map_err(|_| Error::format(format!("truncated IDX file while reading {what}")))
}

/// Parse an MNIST-style IDX image/label file pair. Pixel bytes map to
/// `[0,1]` by division with 255.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let mut ir = BufReader::new(File::open(&images_path)?);
    let magic = read_u32(&mut ir, "image magic")?;
    if magic != IDX_MAGIC_IMAGES {
        return Err(Error::format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_MAGIC_IMAGES:#010x}"
        )));
    }
    let count = read_u32(&mut ir, "image count")? as usize;
    let rows = read_u32(&mut ir, "rows")? as usize;
    let cols = read_u32(&mut ir, "cols")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    ir.read_exact(&mut pixels)
        .map_err(|_| Error::format("truncated IDX image file: fewer pixels than declared"))?;

    let mut lr = BufReader::new(File::open(&labels_path)?);
    let magic = read_u32(&mut lr, "label magic")?;
    if magic != IDX_MAGIC_LABELS {
        return Err(Error::format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_MAGIC_LABELS:#010x}"
        )));
    }
    let lcount = read_u32(&mut lr, "label count")? as usize;
    if lcount != count {
        return Err(Error::format(format!(
            "IDX image/label count mismatch: {count} images, {lcount} labels"
        )));
    }
    let mut labels = vec![0u8; lcount];
    lr.read_exact(&mut labels)
        .map_err(|_| Error::format("truncated IDX label file: fewer labels than declared"))?;

    let class_count = labels.iter().map(|l| *l as usize + 1).max().unwrap_or(0).max(10);
    Ok(Dataset {
        inputs: pixels.iter().map(|b| *b as f64 / 255.0).collect(),
        shape: vec![count, 1, rows, cols],
        labels: labels.iter().map(|l| *l as usize).collect(),
        class_count,
        normalization: None,
        provenance: format!("idx:{}", images_path.as_ref().display()),
    })
}

/// Write a `[N,1,H,W]` dataset with values on the `k/255` grid back into the
/// IDX byte layout. Inverse of [`load_idx`] for such data.
pub fn write_idx(
    ds: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if ds.shape.len() != 4 || ds.shape[1] != 1 {
        return Err(Error::arg(format!(
            "write_idx: need [N,1,H,W] images, got {:?}",
            ds.shape
        )));
    }
    let mut iw = BufWriter::new(File::create(images_path)?);
    iw.write_u32::<BigEndian>(IDX_MAGIC_IMAGES)?;
    iw.write_u32::<BigEndian>(ds.shape[0] as u32)?;
    iw.write_u32::<BigEndian>(ds.shape[2] as u32)?;
    iw.write_u32::<BigEndian>(ds.shape[3] as u32)?;
    for v in &ds.inputs {
        iw.write_all(&[(v * 255.0).round().clamp(0.0, 255.0) as u8])?;
    }
    iw.flush()?;

    let mut lw = BufWriter::new(File::create(labels_path)?);
    lw.write_u32::<BigEndian>(IDX_MAGIC_LABELS)?;
    lw.write_u32::<BigEndian>(ds.labels.len() as u32)?;
    for l in &ds.labels {
        lw.write_all(&[*l as u8])?;
    }
    lw.flush()?;
    Ok(())
}

/// Gaussian clusters with seeded means and isotropic noise, labeled by
/// cluster, as `[N, D]` vectors.
pub fn synthetic_blobs(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| {
            (0..spec.dims)
                .map(|_| spec.cluster_mean_scale * <StandardNormal as Distribution<f64>>::sample(&normal, &mut rng))
                .collect()
        })
        .collect();
    let n = spec.classes * spec.samples_per_class;
    let mut inputs = Vec::with_capacity(n * spec.dims);
    let mut labels = Vec::with_capacity(n);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            for m in mean {
                let eps: f64 = normal.sample(&mut rng);
                inputs.push(m + spec.noise_std * eps);
            }
            labels.push(k);
        }
    }
    Ok(Dataset {
        inputs,
        shape: vec![n, spec.dims],
        labels,
        class_count: spec.classes,
        normalization: None,
        provenance: format!("synthetic_blobs(seed={})", spec.seed),
    })
}

/// Gaussian-cluster data rendered as `[N,1,H,W]` images: per-class
/// prototypes around mid-gray, clamped to `[0,1]` and quantized to the
/// `k/255` grid so the result survives the IDX byte format exactly.
pub fn synthetic_images(
    classes: usize,
    samples_per_class: usize,
    height: usize,
    width: usize,
    cluster_mean_scale: f64,
    noise_std: f64,
    seed: u64,
) -> Result<Dataset> {
    let spec = SyntheticSpec {
        classes,
        dims: height * width,
        samples_per_class,
        cluster_mean_scale,
        noise_std,
        seed,
    };
    let mut ds = synthetic_blobs(&spec)?;
    for v in ds.inputs.iter_mut() {
        let px = ((0.45 + *v).clamp(0.0, 1.0) * 255.0).round();
        *v = px / 255.0;
    }
    ds.shape = vec![ds.shape[0], 1, height, width];
    ds.provenance = format!("synthetic_images(seed={seed})");
    Ok(ds)
}

/// Split a class-major dataset into per-class train/validation shares.
/// The generators above emit samples grouped by class, so both halves of
/// the split see the same cluster means but disjoint noise draws.
fn split_rows(full: &Dataset, per_class_train: usize, per_class_val: usize) -> (Dataset, Dataset) {
    let stride = full.sample_stride();
    let total = per_class_train + per_class_val;
    let take = |offset: usize, count: usize, suffix: &str| {
        let mut inputs = Vec::with_capacity(full.class_count * count * stride);
        let mut labels = Vec::with_capacity(full.class_count * count);
        for k in 0..full.class_count {
            let start = (k * total + offset) * stride;
            inputs.extend_from_slice(&full.inputs[start..start + count * stride]);
            labels.extend(std::iter::repeat(k).take(count));
        }
        let mut shape = full.shape.clone();
        shape[0] = full.class_count * count;
        Dataset {
            inputs,
            shape,
            labels,
            class_count: full.class_count,
            normalization: full.normalization.clone(),
            provenance: format!("{}/{suffix}", full.provenance),
        }
    };
    (
        take(0, per_class_train, "train"),
        take(per_class_train, per_class_val, "val"),
    )
}

/// One seeded blob draw split into `(train, val)`: shared cluster means,
/// disjoint noise. Generating train and validation from *different* seeds
/// would place their clusters in different locations entirely.
pub fn synthetic_blob_split(
    spec: &SyntheticSpec,
    val_per_class: usize,
) -> Result<(Dataset, Dataset)> {
    if val_per_class == 0 {
        return Err(Error::arg("val_per_class must be >= 1"));
    }
    let mut full_spec = spec.clone();
    full_spec.samples_per_class = spec.samples_per_class + val_per_class;
    let full = synthetic_blobs(&full_spec)?;
    Ok(split_rows(&full, spec.samples_per_class, val_per_class))
}

/// Image-shaped counterpart of [`synthetic_blob_split`].
#[allow(clippy::too_many_arguments)]
pub fn synthetic_image_split(
    classes: usize,
    per_class_train: usize,
    per_class_val: usize,
    height: usize,
    width: usize,
    cluster_mean_scale: f64,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if per_class_val == 0 {
        return Err(Error::arg("per_class_val must be >= 1"));
    }
    let full = synthetic_images(
        classes,
        per_class_train + per_class_val,
        height,
        width,
        cluster_mean_scale,
        noise_std,
        seed,
    )?;
    Ok(split_rows(&full, per_class_train, per_class_val))
}

/// Plot-ready CSV of three chosen feature dimensions for an original
/// dataset and its weakened counterpart, row-aligned.
pub fn export_scatter(
    ds: &Dataset,
    weakened: &Dataset,
    dims: [usize; 3],
    path: impl AsRef<Path>,
) -> Result<()> {
    let stride = ds.sample_stride();
    if dims.iter().any(|d| *d >= stride) {
        return Err(Error::arg(format!(
            "scatter dims {dims:?} out of range for {stride}-dimensional samples"
        )));
    }
    if weakened.len() != ds.len() || weakened.sample_stride() != stride {
        return Err(Error::shape("original and weakened datasets must be aligned"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "x,y,z,label,kind")?;
    for (ds, kind) in [(ds, "original"), (weakened, "weakened")] {
        for i in 0..ds.len() {
            let row = &ds.inputs[i * stride..(i + 1) * stride];
            writeln!(
                w,
                "{},{},{},{},{kind}",
                row[dims[0]], row[dims[1]], row[dims[2]], ds.labels[i]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
