//! FGSM and iterative FGSM attack generation plus the white-box/black-box
//! robustness harness. Attacks are deterministic: the only inputs are the
//! frozen model, the samples and the attack parameters.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::Batch;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;
use crate::train::cross_entropy;

const EVAL_BATCH: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Ifgsm,
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackKind::Fgsm => write!(f, "fgsm"),
            AttackKind::Ifgsm => write!(f, "ifgsm"),
        }
    }
}

/// Infinity-norm bounded attack description. `epsilon` is measured in the
/// same (normalized) units as the model inputs; `clip_range` is the valid
/// pixel interval in those units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub iterations: usize,
    pub clip_range: [f64; 2],
}

fn one() -> usize {
    1
}

impl AttackSpec {
    /// `epsilon == 0` is degenerate but permitted; it reproduces clean
    /// evaluation.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.iterations < 1 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if !(self.clip_range[0] < self.clip_range[1]) {
            return Err(Error::config(format!(
                "clip_range [{}, {}] must satisfy lo < hi",
                self.clip_range[0], self.clip_range[1]
            )));
        }
        Ok(())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shared iterative core: `iters` steps of size `step`, each projected onto
/// the valid pixel range and the epsilon ball around the start point.
fn sign_gradient_attack(
    model: &Model,
    batch: &Batch,
    spec: &AttackSpec,
    step: f64,
    iters: usize,
) -> Result<Tensor> {
    spec.validate()?;
    let origin = batch.inputs.to_vec();
    let shape = batch.inputs.shape().to_vec();
    let mut current = origin.clone();
    let [lo, hi] = spec.clip_range;
    for _ in 0..iters {
        let leaf = Tensor::param(&shape, current.clone())?;
        let loss = cross_entropy(&model.forward(&leaf)?, &batch.labels)?;
        loss.backward()?;
        model.zero_grads();
        let grad = leaf.grad().expect("input gradient");
        for i in 0..current.len() {
            let lo_i = lo.max(origin[i] - spec.epsilon);
            let hi_i = hi.min(origin[i] + spec.epsilon);
            let stepped = current[i] + step * sign(grad[i]);
            // the ball around an out-of-range origin may miss the valid
            // interval entirely; the valid range wins then
            current[i] = if lo_i <= hi_i { stepped.clamp(lo_i, hi_i) } else { stepped.clamp(lo, hi) };
        }
    }
    Tensor::from_vec(&shape, current)
}

/// One-step attack: `x + epsilon * sign(grad_x loss)`, clipped to the valid
/// range.
pub fn fgsm(model: &Model, batch: &Batch, spec: &AttackSpec) -> Result<Tensor> {
    if spec.kind != AttackKind::Fgsm {
        return Err(Error::arg(format!("fgsm called with attack kind {}", spec.kind)));
    }
    sign_gradient_attack(model, batch, spec, spec.epsilon, 1)
}

/// Iterative attack with step `epsilon / iterations` and per-step
/// projection onto the epsilon ball.
pub fn ifgsm(model: &Model, batch: &Batch, spec: &AttackSpec) -> Result<Tensor> {
    if spec.kind != AttackKind::Ifgsm {
        return Err(Error::arg(format!("ifgsm called with attack kind {}", spec.kind)));
    }
    sign_gradient_attack(
        model,
        batch,
        spec,
        spec.epsilon / spec.iterations as f64,
        spec.iterations,
    )
}

/// Generate adversarial inputs for a batch according to the spec's kind.
pub fn attack(model: &Model, batch: &Batch, spec: &AttackSpec) -> Result<Tensor> {
    match spec.kind {
        AttackKind::Fgsm => fgsm(model, batch, spec),
        AttackKind::Ifgsm => ifgsm(model, batch, spec),
    }
}

fn adversarial_accuracy(source: &Model, target: &Model, data: &Dataset, spec: &AttackSpec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("robustness evaluation needs a non-empty dataset"));
    }
    if source.spec().input_shape() != target.spec().input_shape() {
        return Err(Error::shape(
            "source and target models must share input geometry",
        ));
    }
    let k = data.class_count;
    let mut hits = 0usize;
    for batch in data.batches(EVAL_BATCH, None) {
        let adv = attack(source, &batch, spec)?;
        let logits = target.forward(&adv)?;
        let l = logits.data();
        let y = batch.labels.data();
        for r in 0..batch.len() {
            let truth = y[r * k..(r + 1) * k].iter().position(|v| *v == 1.0).unwrap();
            let row = &l[r * k..(r + 1) * k];
            let best = (0..k).min_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b))).unwrap();
            if best == truth {
                hits += 1;
            }
        }
    }
    Ok(100.0 * hits as f64 / data.len() as f64)
}

/// Top-1 accuracy (percent) under attacks generated against the evaluated
/// model itself.
pub fn evaluate_whitebox(model: &Model, data: &Dataset, spec: &AttackSpec) -> Result<f64> {
    adversarial_accuracy(model, model, data, spec)
}

/// Top-1 accuracy (percent) of `target` under adversarial samples crafted
/// against `source`.
pub fn evaluate_blackbox(
    source: &Model,
    target: &Model,
    data: &Dataset,
    spec: &AttackSpec,
) -> Result<f64> {
    adversarial_accuracy(source, target, data, spec)
}

/// One line of the robustness report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub attack: AttackKind,
    pub mode: String,
    pub epsilon: f64,
    pub accuracy: f64,
}

/// CSV with header `method,attack,mode,epsilon,accuracy`.
pub fn write_robustness_csv(rows: &[RobustnessRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "method,attack,mode,epsilon,accuracy")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.method, r.attack, r.mode, r.epsilon, r.accuracy)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_blobs, SyntheticSpec};
    use crate::models::{build, ModelSpec};
    use crate::train::evaluate;

    fn linear_model(dims: usize, k: usize, seed: u64) -> Model {
        build(&ModelSpec::Mlp {
            input_shape: vec![dims],
            hidden_widths: vec![],
            class_count: k,
            init_seed: seed,
            decision_bias: false,
        })
        .unwrap()
    }

    fn blob_data(seed: u64) -> Dataset {
        synthetic_blobs(&SyntheticSpec {
            classes: 3,
            dims: 5,
            samples_per_class: 20,
            cluster_mean_scale: 1.0,
            noise_std: 0.4,
            seed,
        })
        .unwrap()
    }

    fn first_batch(data: &Dataset) -> Batch {
        data.batches(16, None).next().unwrap()
    }

    fn fgsm_spec(eps: f64) -> AttackSpec {
        AttackSpec { kind: AttackKind::Fgsm, epsilon: eps, iterations: 1, clip_range: [-100.0, 100.0] }
    }

    #[test]
    fn kind_mismatch_rejected() {
        let model = linear_model(5, 3, 0);
        let b = first_batch(&blob_data(0));
        let spec = fgsm_spec(0.1);
        assert!(ifgsm(&model, &b, &spec).is_err());
        let ispec = AttackSpec { kind: AttackKind::Ifgsm, ..spec };
        assert!(fgsm(&model, &b, &ispec).is_err());
    }

    #[test]
    fn linear_model_perturbation_is_ternary() {
        // wide clip range: every coordinate moves by -eps, 0 or +eps
        let model = linear_model(5, 3, 1);
        let b = first_batch(&blob_data(1));
        let eps = 0.1;
        let adv = fgsm(&model, &b, &fgsm_spec(eps)).unwrap();
        for (a, x) in adv.to_vec().iter().zip(b.inputs.to_vec()) {
            let d = a - x;
            let ok = (d.abs() - eps).abs() < 1e-12 || d == 0.0;
            assert!(ok, "perturbation {d}");
        }
    }

    #[test]
    fn vanishing_epsilon_leaves_input() {
        let model = linear_model(5, 3, 2);
        let b = first_batch(&blob_data(2));
        let adv = fgsm(&model, &b, &fgsm_spec(1e-15)).unwrap();
        for (a, x) in adv.to_vec().iter().zip(b.inputs.to_vec()) {
            assert!((a - x).abs() <= 1e-14);
        }
    }

    #[test]
    fn infinity_norm_budget_holds_after_clipping() {
        let model = linear_model(5, 3, 3);
        let data = blob_data(3);
        let spec = AttackSpec { kind: AttackKind::Ifgsm, epsilon: 0.1, iterations: 10, clip_range: [-5.0, 5.0] };
        for batch in data.batches(16, None) {
            let adv = ifgsm(&model, &batch, &spec).unwrap();
            for (a, x) in adv.to_vec().iter().zip(batch.inputs.to_vec()) {
                assert!((a - x).abs() <= spec.epsilon + 1e-12);
                assert!((-5.0..=5.0).contains(a));
            }
        }
    }

    #[test]
    fn single_iteration_ifgsm_is_fgsm_bit_exact() {
        let model = linear_model(5, 3, 4);
        let b = first_batch(&blob_data(4));
        let f = fgsm(&model, &b, &AttackSpec { kind: AttackKind::Fgsm, epsilon: 0.07, iterations: 1, clip_range: [-1.0, 2.0] }).unwrap();
        let i = ifgsm(&model, &b, &AttackSpec { kind: AttackKind::Ifgsm, epsilon: 0.07, iterations: 1, clip_range: [-1.0, 2.0] }).unwrap();
        for (a, b) in f.to_vec().iter().zip(i.to_vec()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn zero_epsilon_reproduces_clean_accuracy() {
        let model = linear_model(5, 3, 5);
        let data = blob_data(5);
        let (clean, _) = evaluate(&model, &data).unwrap();
        let acc = evaluate_whitebox(&model, &data, &fgsm_spec(0.0)).unwrap();
        assert_eq!(acc, clean);
    }

    #[test]
    fn untrained_model_sits_near_chance_level() {
        // labels carry no signal: mean scale 0 vs large noise
        let data = synthetic_blobs(&SyntheticSpec {
            classes: 3,
            dims: 5,
            samples_per_class: 100,
            cluster_mean_scale: 0.0,
            noise_std: 1.0,
            seed: 11,
        })
        .unwrap();
        let model = linear_model(5, 3, 6);
        let acc = evaluate_whitebox(&model, &data, &fgsm_spec(0.05)).unwrap();
        assert!((acc - 100.0 / 3.0).abs() < 12.0, "accuracy {acc}");
    }

    #[test]
    fn blackbox_against_self_equals_whitebox() {
        let model = linear_model(5, 3, 7);
        let data = blob_data(7);
        let spec = fgsm_spec(0.1);
        let white = evaluate_whitebox(&model, &data, &spec).unwrap();
        let black = evaluate_blackbox(&model, &model, &data, &spec).unwrap();
        assert_eq!(white, black);
    }

    #[test]
    fn blackbox_requires_matching_geometry() {
        let a = linear_model(5, 3, 8);
        let b = linear_model(6, 3, 8);
        let data = blob_data(8);
        assert!(evaluate_blackbox(&a, &b, &data, &fgsm_spec(0.1)).is_err());
    }

    #[test]
    fn attacks_are_deterministic() {
        let model = linear_model(5, 3, 9);
        let b = first_batch(&blob_data(9));
        let spec = AttackSpec { kind: AttackKind::Ifgsm, epsilon: 0.1, iterations: 5, clip_range: [0.0, 1.0] };
        let x1 = ifgsm(&model, &b, &spec).unwrap();
        let x2 = ifgsm(&model, &b, &spec).unwrap();
        assert_eq!(x1.to_vec(), x2.to_vec());
    }

    #[test]
    fn report_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("robustness.csv");
        write_robustness_csv(
            &[RobustnessRow {
                method: "baseline".into(),
                attack: AttackKind::Fgsm,
                mode: "white".into(),
                epsilon: 0.1,
                accuracy: 10.54,
            }],
            &path,
        )
        .unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "method,attack,mode,epsilon,accuracy\nbaseline,fgsm,white,0.1,10.54\n"
        );
    }
}
