//! Sample-space and representation-space transforms: feature weakening at
//! the input (FW-el) and at the hidden representation (FW-hl), plus the
//! Mixup, Cutout, CutMix and Dropout baselines and their composition.
//!
//! All transforms are pure functions of their inputs, their parameters and
//! an explicit seeded RNG. Training-only transforms (hidden weakening,
//! dropout) are identities when the `training` flag is off.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A set of samples with soft-label rows (hard labels are one-hot).
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Tensor,
    pub labels: Tensor,
    pub class_count: usize,
}

impl Batch {
    /// Validates that labels are `[N, K]` rows of a probability simplex and
    /// that `N` matches the leading input dimension.
    pub fn new(inputs: Tensor, labels: Tensor, class_count: usize) -> Result<Batch> {
        let n = *inputs
            .shape()
            .first()
            .ok_or_else(|| Error::shape("batch inputs must have a leading sample dimension"))?;
        if n == 0 {
            return Err(Error::arg("batch must contain at least one sample"));
        }
        if labels.shape() != [n, class_count] {
            return Err(Error::shape(format!(
                "labels shape {:?} does not match [N={n}, K={class_count}]",
                labels.shape()
            )));
        }
        {
            let d = labels.data();
            for r in 0..n {
                let row = &d[r * class_count..(r + 1) * class_count];
                if row.iter().any(|v| *v < 0.0) {
                    return Err(Error::arg(format!("label row {r} has a negative entry")));
                }
                let s: f64 = row.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::arg(format!("label row {r} sums to {s}, expected 1")));
                }
            }
        }
        Ok(Batch { inputs, labels, class_count })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One input-level transform of an augmentation pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputTransform {
    Mixup { alpha: f64 },
    Cutout { patch_length: usize },
    Cutmix { alpha: f64 },
    FeatureWeakenInput { ws: f64 },
}

/// One hidden-level transform, applied at the model's tap point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HiddenTransform {
    FeatureWeakenHidden { ws: f64 },
    Dropout { p: f64 },
}

/// Declarative augmentation pipeline: input transforms run in order before
/// the forward pass, hidden transforms in order at the tap point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    #[serde(default)]
    pub input_transforms: Vec<InputTransform>,
    #[serde(default)]
    pub hidden_transforms: Vec<HiddenTransform>,
    pub rng_seed: u64,
}

impl AugmentSpec {
    /// Pipeline with no transforms at all.
    pub fn empty(rng_seed: u64) -> AugmentSpec {
        AugmentSpec { input_transforms: Vec::new(), hidden_transforms: Vec::new(), rng_seed }
    }

    pub fn validate(&self) -> Result<()> {
        let mut label_mixers = 0;
        for t in &self.input_transforms {
            match t {
                InputTransform::Mixup { alpha } => {
                    label_mixers += 1;
                    if !(*alpha > 0.0) {
                        return Err(Error::config(format!("mixup alpha must be > 0, got {alpha}")));
                    }
                }
                InputTransform::Cutmix { alpha } => {
                    label_mixers += 1;
                    if !(*alpha > 0.0) {
                        return Err(Error::config(format!("cutmix alpha must be > 0, got {alpha}")));
                    }
                }
                InputTransform::Cutout { patch_length } => {
                    if *patch_length < 1 {
                        return Err(Error::config("cutout patch_length must be >= 1"));
                    }
                }
                InputTransform::FeatureWeakenInput { ws } => check_ws(*ws)?,
            }
        }
        if label_mixers > 1 {
            return Err(Error::config(
                "at most one label-mixing transform (mixup or cutmix) per pipeline",
            ));
        }
        for t in &self.hidden_transforms {
            match t {
                HiddenTransform::FeatureWeakenHidden { ws } => check_ws(*ws)?,
                HiddenTransform::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(Error::config(format!("dropout p must be in [0,1), got {p}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_ws(ws: f64) -> Result<()> {
    if !(ws > 0.0 && ws < 1.0) {
        return Err(Error::config(format!("weaken strength must be in (0,1), got {ws}")));
    }
    Ok(())
}

/// Scale every input by `(1 - ws)`, leaving labels untouched.
pub fn feature_weaken_input(batch: &Batch, ws: f64) -> Result<Batch> {
    check_ws(ws)?;
    Ok(Batch {
        inputs: batch.inputs.scalar_mul(1.0 - ws)?,
        labels: batch.labels.clone(),
        class_count: batch.class_count,
    })
}

/// Scale a representation by `(1 - ws)` as a differentiable graph op.
/// Identity in evaluation mode.
pub fn feature_weaken_hidden(rep: &Tensor, ws: f64, training: bool) -> Result<Tensor> {
    check_ws(ws)?;
    if !training {
        return Ok(rep.clone());
    }
    rep.scalar_mul(1.0 - ws)
}

/// Mixup with one `lambda ~ Beta(alpha, alpha)` per batch and a uniform
/// random pairing permutation.
pub fn mixup(batch: &Batch, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if !(alpha > 0.0) {
        return Err(Error::arg(format!("mixup alpha must be > 0, got {alpha}")));
    }
    if batch.len() < 2 {
        return Err(Error::arg("mixup needs at least 2 samples"));
    }
    let lam = Beta::new(alpha, alpha)
        .map_err(|e| Error::arg(format!("beta({alpha},{alpha}): {e}")))?
        .sample(rng);
    let perm = permutation(batch.len(), rng);
    mixup_with(batch, lam, &perm)
}

/// Mixup with fixed mixing weight and pairing; the deterministic core.
pub fn mixup_with(batch: &Batch, lam: f64, perm: &[usize]) -> Result<Batch> {
    let n = batch.len();
    if perm.len() != n {
        return Err(Error::arg("mixup pairing must cover the batch"));
    }
    let stride = batch.inputs.len() / n;
    let x = batch.inputs.data();
    let y = batch.labels.data();
    let k = batch.class_count;
    let mut xm = vec![0.0; x.len()];
    let mut ym = vec![0.0; y.len()];
    for i in 0..n {
        let j = perm[i];
        for d in 0..stride {
            xm[i * stride + d] = lam * x[i * stride + d] + (1.0 - lam) * x[j * stride + d];
        }
        for d in 0..k {
            ym[i * k + d] = lam * y[i * k + d] + (1.0 - lam) * y[j * k + d];
        }
    }
    drop(x);
    drop(y);
    Ok(Batch {
        inputs: Tensor::from_vec(batch.inputs.shape(), xm)?,
        labels: Tensor::from_vec(batch.labels.shape(), ym)?,
        class_count: k,
    })
}

/// Zero a square patch of side `patch_length` centered uniformly at random,
/// clipped to the image bounds, independently per sample. Labels unchanged.
pub fn cutout(batch: &Batch, patch_length: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let (_, _, h, w) = spatial_dims(&batch.inputs)?;
    let centers: Vec<(usize, usize)> = (0..batch.len())
        .map(|_| (rng.random_range(0..h), rng.random_range(0..w)))
        .collect();
    cutout_with(batch, patch_length, &centers)
}

/// Cutout with fixed patch centers.
pub fn cutout_with(batch: &Batch, patch_length: usize, centers: &[(usize, usize)]) -> Result<Batch> {
    if patch_length < 1 {
        return Err(Error::arg("cutout patch_length must be >= 1"));
    }
    let (n, c, h, w) = spatial_dims(&batch.inputs)?;
    if centers.len() != n {
        return Err(Error::arg("cutout needs one center per sample"));
    }
    let mut x = batch.inputs.to_vec();
    for (i, &(cy, cx)) in centers.iter().enumerate() {
        let (y0, y1) = clipped_span(cy, patch_length, h);
        let (x0, x1) = clipped_span(cx, patch_length, w);
        for ch in 0..c {
            for yy in y0..y1 {
                for xx in x0..x1 {
                    x[((i * c + ch) * h + yy) * w + xx] = 0.0;
                }
            }
        }
    }
    Ok(Batch {
        inputs: Tensor::from_vec(batch.inputs.shape(), x)?,
        labels: batch.labels.clone(),
        class_count: batch.class_count,
    })
}

/// Half-open span `[center - len/2, center - len/2 + len)` clipped to `[0, bound)`.
pub fn clipped_span(center: usize, len: usize, bound: usize) -> (usize, usize) {
    let lo = center as isize - (len / 2) as isize;
    let hi = lo + len as isize;
    (lo.clamp(0, bound as isize) as usize, hi.clamp(0, bound as isize) as usize)
}

/// CutMix: one `lambda ~ Beta(alpha, alpha)`, one box and one pairing
/// permutation per batch. The label weight is recomputed from the clipped
/// box area so labels track actual pixel provenance.
pub fn cutmix(batch: &Batch, alpha: f64, rng: &mut ChaCha8Rng) -> Result<Batch> {
    if !(alpha > 0.0) {
        return Err(Error::arg(format!("cutmix alpha must be > 0, got {alpha}")));
    }
    let (_, _, h, w) = spatial_dims(&batch.inputs)?;
    if batch.len() < 2 {
        return Err(Error::arg("cutmix needs at least 2 samples"));
    }
    let lam = Beta::new(alpha, alpha)
        .map_err(|e| Error::arg(format!("beta({alpha},{alpha}): {e}")))?
        .sample(rng);
    let perm = permutation(batch.len(), rng);
    let center = (rng.random_range(0..h), rng.random_range(0..w));
    cutmix_with(batch, lam, center, &perm)
}

/// CutMix with fixed draw: box side fractions `sqrt(1 - lam)` of each
/// spatial dimension, centered at `center`, clipped to bounds.
pub fn cutmix_with(batch: &Batch, lam: f64, center: (usize, usize), perm: &[usize]) -> Result<Batch> {
    let (n, c, h, w) = spatial_dims(&batch.inputs)?;
    if perm.len() != n {
        return Err(Error::arg("cutmix pairing must cover the batch"));
    }
    let frac = (1.0 - lam).max(0.0).sqrt();
    let box_h = (h as f64 * frac).round() as usize;
    let box_w = (w as f64 * frac).round() as usize;
    let (y0, y1) = clipped_span(center.0, box_h, h);
    let (x0, x1) = clipped_span(center.1, box_w, w);
    let area = (y1 - y0) * (x1 - x0);
    let lam_adj = 1.0 - area as f64 / (h * w) as f64;

    let mut x = batch.inputs.to_vec();
    {
        let src = batch.inputs.data();
        for i in 0..n {
            let j = perm[i];
            for ch in 0..c {
                for yy in y0..y1 {
                    for xx in x0..x1 {
                        x[((i * c + ch) * h + yy) * w + xx] = src[((j * c + ch) * h + yy) * w + xx];
                    }
                }
            }
        }
    }
    let k = batch.class_count;
    let y = batch.labels.data();
    let mut ym = vec![0.0; y.len()];
    for i in 0..n {
        let j = perm[i];
        for d in 0..k {
            ym[i * k + d] = lam_adj * y[i * k + d] + (1.0 - lam_adj) * y[j * k + d];
        }
    }
    drop(y);
    Ok(Batch {
        inputs: Tensor::from_vec(batch.inputs.shape(), x)?,
        labels: Tensor::from_vec(batch.labels.shape(), ym)?,
        class_count: k,
    })
}

/// Inverted dropout: zero each element with probability `p` and scale
/// survivors by `1/(1-p)` during training; identity in evaluation.
pub fn dropout(rep: &Tensor, p: f64, rng: &mut ChaCha8Rng, training: bool) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::arg(format!("dropout p must be in [0,1), got {p}")));
    }
    if !training || p == 0.0 {
        return Ok(rep.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..rep.len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    rep.mul(&Tensor::from_vec(rep.shape(), mask)?)
}

/// Run the spec's input transforms in order with an externally owned RNG
/// stream (one stream per training run).
pub fn apply_input_transforms(
    transforms: &[InputTransform],
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let mut out = batch.clone();
    for t in transforms {
        out = match t {
            InputTransform::Mixup { alpha } => mixup(&out, *alpha, rng)?,
            InputTransform::Cutout { patch_length } => cutout(&out, *patch_length, rng)?,
            InputTransform::Cutmix { alpha } => cutmix(&out, *alpha, rng)?,
            InputTransform::FeatureWeakenInput { ws } => feature_weaken_input(&out, *ws)?,
        };
    }
    Ok(out)
}

/// Run the spec's hidden transforms in order at the tap point.
pub fn apply_hidden_transforms(
    transforms: &[HiddenTransform],
    rep: &Tensor,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let mut out = rep.clone();
    for t in transforms {
        out = match t {
            HiddenTransform::FeatureWeakenHidden { ws } => {
                feature_weaken_hidden(&out, *ws, training)?
            }
            HiddenTransform::Dropout { p } => dropout(&out, *p, rng, training)?,
        };
    }
    Ok(out)
}

/// Apply the full input pipeline with a fresh RNG seeded from the spec.
pub fn apply_pipeline(spec: &AugmentSpec, batch: &Batch) -> Result<Batch> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    apply_input_transforms(&spec.input_transforms, batch, &mut rng)
}

/// Apply the hidden pipeline with a fresh RNG seeded from the spec.
pub fn apply_hidden(spec: &AugmentSpec, rep: &Tensor, training: bool) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    apply_hidden_transforms(&spec.hidden_transforms, rep, training, &mut rng)
}

fn spatial_dims(inputs: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if inputs.rank() != 4 {
        return Err(Error::shape(format!(
            "transform needs spatial [N,C,H,W] inputs, got {:?}",
            inputs.shape()
        )));
    }
    let s = inputs.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// Cosine similarity of two equally sized vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
