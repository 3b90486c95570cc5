//! Trainable classifiers split into a feature extractor and a linear
//! decision layer, with the tap point for hidden-level transforms fixed at
//! the extractor output (the penultimate activation).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const CHECKPOINT_MAGIC: &[u8; 4] = b"WKLB";
const CHECKPOINT_VERSION: u32 = 1;

/// Architecture description. `init_seed` makes construction deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `flatten -> [linear+relu] per hidden width -> linear head`.
    Mlp {
        input_shape: Vec<usize>,
        hidden_widths: Vec<usize>,
        class_count: usize,
        init_seed: u64,
        #[serde(default = "default_true")]
        decision_bias: bool,
    },
    /// `[conv3x3+relu+maxpool2] x2 -> flatten -> linear+relu -> linear head`.
    SmallCnn {
        input_shape: Vec<usize>,
        channels: [usize; 2],
        hidden_width: usize,
        class_count: usize,
        init_seed: u64,
        #[serde(default = "default_true")]
        decision_bias: bool,
    },
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn class_count(&self) -> usize {
        match self {
            ModelSpec::Mlp { class_count, .. } | ModelSpec::SmallCnn { class_count, .. } => {
                *class_count
            }
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        match self {
            ModelSpec::Mlp { input_shape, .. } | ModelSpec::SmallCnn { input_shape, .. } => {
                input_shape
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count() < 2 {
            return Err(Error::config("class_count must be >= 2"));
        }
        if self.input_shape().is_empty() || self.input_shape().iter().any(|d| *d == 0) {
            return Err(Error::config("input_shape dimensions must be >= 1"));
        }
        match self {
            ModelSpec::Mlp { hidden_widths, .. } => {
                if hidden_widths.iter().any(|w| *w == 0) {
                    return Err(Error::config("hidden widths must be >= 1"));
                }
            }
            ModelSpec::SmallCnn { input_shape, channels, hidden_width, .. } => {
                if input_shape.len() != 3 {
                    return Err(Error::config("small_cnn input_shape must be [C,H,W]"));
                }
                let (h, w) = (input_shape[1], input_shape[2]);
                if h % 4 != 0 || w % 4 != 0 || h < 4 || w < 4 {
                    return Err(Error::config(
                        "small_cnn spatial size must be a positive multiple of 4 (two 2x2 pools)",
                    ));
                }
                if channels.iter().any(|c| *c == 0) || *hidden_width == 0 {
                    return Err(Error::config("channel counts and hidden width must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// One named trainable tensor.
#[derive(Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// A parameterized classifier: extractor producing the representation
/// `R(x)`, then a single linear decision layer.
pub struct Model {
    spec: ModelSpec,
    params: Vec<Param>,
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound).collect()
}

/// Construct a model with Kaiming-uniform weights and zero biases, seeded
/// by the spec's `init_seed`.
pub fn build(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let mut params = Vec::new();
    let mut rng = match spec {
        ModelSpec::Mlp { init_seed, .. } | ModelSpec::SmallCnn { init_seed, .. } => {
            ChaCha8Rng::seed_from_u64(*init_seed)
        }
    };
    let push = |params: &mut Vec<Param>, name: &str, shape: &[usize], data: Vec<f64>| {
        params.push(Param { name: name.to_string(), tensor: Tensor::param(shape, data).unwrap() });
    };
    match spec {
        ModelSpec::Mlp { input_shape, hidden_widths, class_count, decision_bias, .. } => {
            let mut din: usize = input_shape.iter().product();
            for (i, w) in hidden_widths.iter().enumerate() {
                push(&mut params, &format!("fc{i}.weight"), &[din, *w], kaiming_uniform(&mut rng, din, din * w));
                push(&mut params, &format!("fc{i}.bias"), &[*w], vec![0.0; *w]);
                din = *w;
            }
            push(&mut params, "head.weight", &[din, *class_count], kaiming_uniform(&mut rng, din, din * class_count));
            if *decision_bias {
                push(&mut params, "head.bias", &[*class_count], vec![0.0; *class_count]);
            }
        }
        ModelSpec::SmallCnn { input_shape, channels, hidden_width, class_count, decision_bias, .. } => {
            let c_in = input_shape[0];
            let (c1, c2) = (channels[0], channels[1]);
            push(&mut params, "conv0.weight", &[c1, c_in, 3, 3], kaiming_uniform(&mut rng, c_in * 9, c1 * c_in * 9));
            push(&mut params, "conv1.weight", &[c2, c1, 3, 3], kaiming_uniform(&mut rng, c1 * 9, c2 * c1 * 9));
            let flat = c2 * (input_shape[1] / 4) * (input_shape[2] / 4);
            push(&mut params, "fc.weight", &[flat, *hidden_width], kaiming_uniform(&mut rng, flat, flat * hidden_width));
            push(&mut params, "fc.bias", &[*hidden_width], vec![0.0; *hidden_width]);
            push(&mut params, "head.weight", &[*hidden_width, *class_count], kaiming_uniform(&mut rng, *hidden_width, hidden_width * class_count));
            if *decision_bias {
                push(&mut params, "head.bias", &[*class_count], vec![0.0; *class_count]);
            }
        }
    }
    Ok(Model { spec: spec.clone(), params })
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let n = x.shape().first().copied().unwrap_or(0);
        let expect: usize = self.spec.input_shape().iter().product();
        if n == 0 || x.len() / n != expect {
            return Err(Error::shape(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.spec.input_shape()
            )));
        }
        Ok(())
    }

    /// Extractor output `R(x)`: the tensor hidden-level transforms apply to.
    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        match &self.spec {
            ModelSpec::Mlp { hidden_widths, .. } => {
                let mut h = if x.rank() > 2 { x.flatten()? } else { x.clone() };
                if x.rank() == 1 {
                    h = x.reshape(&[1, x.len()])?;
                }
                for i in 0..hidden_widths.len() {
                    let w = self.param(&format!("fc{i}.weight")).unwrap();
                    let b = self.param(&format!("fc{i}.bias")).unwrap();
                    h = h.matmul(w)?.add(b)?.relu();
                }
                Ok(h)
            }
            ModelSpec::SmallCnn { input_shape, .. } => {
                let n = x.shape()[0];
                let x4 = x.reshape(&[n, input_shape[0], input_shape[1], input_shape[2]])?;
                let c0 = self.param("conv0.weight").unwrap();
                let c1 = self.param("conv1.weight").unwrap();
                let h = x4.conv2d(c0, 1, 1)?.relu().max_pool2d(2)?;
                let h = h.conv2d(c1, 1, 1)?.relu().max_pool2d(2)?;
                let h = h.flatten()?;
                let w = self.param("fc.weight").unwrap();
                let b = self.param("fc.bias").unwrap();
                Ok(h.matmul(w)?.add(b)?.relu())
            }
        }
    }

    /// Linear decision layer: representation to logits `[N, K]`.
    pub fn decision(&self, rep: &Tensor) -> Result<Tensor> {
        let w = self.param("head.weight").unwrap();
        if rep.rank() != 2 || rep.shape()[1] != w.shape()[0] {
            return Err(Error::shape(format!(
                "representation shape {:?} does not match head input width {}",
                rep.shape(),
                w.shape()[0]
            )));
        }
        let logits = rep.matmul(w)?;
        match self.param("head.bias") {
            Some(b) => logits.add(b),
            None => Ok(logits),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let rep = self.forward_features(x)?;
        self.decision(&rep)
    }

    /// Write all parameters to the flat binary checkpoint format
    /// (`WKLB` magic, version, little-endian records).
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        for p in &self.params {
            w.write_u32::<LittleEndian>(p.name.len() as u32)?;
            w.write_all(p.name.as_bytes())?;
            w.write_u32::<LittleEndian>(p.tensor.rank() as u32)?;
            for d in p.tensor.shape() {
                w.write_u32::<LittleEndian>(*d as u32)?;
            }
            for v in p.tensor.data().iter() {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Load parameter values from a checkpoint into a freshly built model.
    pub fn load_checkpoint(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<Model> {
        let model = build(spec)?;
        let records = read_checkpoint(path)?;
        for (name, shape, data) in &records {
            let tensor = model
                .param(name)
                .ok_or_else(|| Error::format(format!("checkpoint parameter {name} not in model")))?;
            if tensor.shape() != shape.as_slice() {
                return Err(Error::format(format!(
                    "checkpoint parameter {name} has shape {:?}, model expects {:?}",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(data);
        }
        if records.len() != model.params.len() {
            return Err(Error::format(format!(
                "checkpoint holds {} parameters, model has {}",
                records.len(),
                model.params.len()
            )));
        }
        Ok(model)
    }
}

/// Read raw checkpoint records (name, dims, data) until end of file.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format(format!("bad checkpoint magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let name_len = match r.read_u32::<LittleEndian>() {
            Ok(v) => v as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("checkpoint parameter name is not utf-8"))?;
        let rank = r.read_u32::<LittleEndian>()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.read_f64::<LittleEndian>()?);
        }
        out.push((name, dims, data));
    }
    Ok(out)
}
