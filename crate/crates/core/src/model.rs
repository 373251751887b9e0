//! Shared backbone with up to three projection heads (question, answer,
//! question-answer concatenation) combined through head weights λ.
//!
//! ```text
//! x_f ─► tanh(B·x_f + b) ─► head_f: W2·tanh(W1·h + b1) + b2 ─► r_f
//! L = λ_Q·L(r_Q) + λ_A·L(r_A) + λ_QA·L(r_QA)
//! ```
//!
//! Every field goes through the same backbone, so the backbone gradient is
//! the λ-weighted sum of the per-head backbone gradients.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{decode_emb1, encode_emb1, Field, FieldMatrices};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Head weights (λ_Q, λ_A, λ_QA).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights(pub [f64; 3]);

impl HeadWeights {
    pub const QUESTION: HeadWeights = HeadWeights([1.0, 0.0, 0.0]);
    pub const ANSWER: HeadWeights = HeadWeights([0.0, 1.0, 0.0]);
    pub const CONCAT: HeadWeights = HeadWeights([0.0, 0.0, 1.0]);
    pub const TWO_HEADS: HeadWeights = HeadWeights([0.5, 0.5, 0.0]);
    pub const CONV: HeadWeights = HeadWeights([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);

    pub fn get(&self, field: Field) -> f64 {
        self.0[field.index()]
    }

    pub fn active(&self) -> impl Iterator<Item = Field> + '_ {
        Field::ALL.into_iter().filter(|f| self.get(*f) > 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("head weights must be finite and nonnegative: {:?}", self.0)));
        }
        if self.0.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("at least one head weight must be positive".into()));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("head weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Parses three comma-separated weights, each a decimal or a fraction
/// (`1/3,1/3,1/3`), or one of the names `q`, `a`, `qa`, `q+a`, `conv`.
impl FromStr for HeadWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let named = match s.trim().to_ascii_lowercase().as_str() {
            "q" => Some(Self::QUESTION),
            "a" => Some(Self::ANSWER),
            "qa" => Some(Self::CONCAT),
            "q+a" => Some(Self::TWO_HEADS),
            "conv" | "q+a+qa" => Some(Self::CONV),
            _ => None,
        };
        if let Some(w) = named {
            return Ok(w);
        }
        let bad = || Error::Config(format!("cannot parse head weights {s:?}"));
        let parse = |p: &str| -> Result<f64> {
            match p.split_once('/') {
                Some((n, d)) => {
                    let (n, d): (f64, f64) = (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
                    Ok(n / d)
                }
                None => p.trim().parse().map_err(|_| bad()),
            }
        };
        let parts = s.split(',').map(parse).collect::<Result<Vec<f64>>>()?;
        let w = HeadWeights(parts.try_into().map_err(|_| bad())?);
        w.validate()?;
        Ok(w)
    }
}

/// Which head output(s) serve as the final representation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepSource {
    Head(Field),
    Concat(Vec<Field>),
}

impl RepSource {
    pub fn fields(&self) -> Vec<Field> {
        match self {
            RepSource::Head(f) => vec![*f],
            RepSource::Concat(fs) => fs.clone(),
        }
    }
}

impl fmt::Display for RepSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.fields().iter().map(ToString::to_string).collect();
        f.write_str(&names.join("+"))
    }
}

/// Parses `QA` or `Q+A`.
impl FromStr for RepSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields = s.split('+').map(|p| p.trim().parse()).collect::<Result<Vec<Field>>>()?;
        match fields.as_slice() {
            [] => Err(Error::Config("empty representation source".into())),
            [f] => Ok(RepSource::Head(*f)),
            _ => Ok(RepSource::Concat(fields)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub rep_dim: usize,
    pub lambda: HeadWeights,
    pub rep_source: RepSource,
    /// Scale of the uniform noise added to the identity backbone at init.
    pub backbone_noise: f64,
}

impl ModelConfig {
    pub fn new(input_dim: usize, rep_dim: usize, lambda: HeadWeights) -> Self {
        let rep_source = if lambda.get(Field::QA) > 0.0 || lambda.active().count() > 1 {
            RepSource::Head(Field::QA)
        } else {
            RepSource::Head(lambda.active().next().unwrap_or(Field::Q))
        };
        Self {
            input_dim,
            hidden_dim: input_dim,
            rep_dim,
            lambda,
            rep_source,
            backbone_noise: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lambda.validate()?;
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("input and hidden dims must be positive".into()));
        }
        if self.rep_dim < 2 {
            return Err(Error::Config(format!("rep_dim must be >= 2, got {}", self.rep_dim)));
        }
        if !(self.backbone_noise >= 0.0) {
            return Err(Error::Config("backbone_noise must be >= 0".into()));
        }
        Ok(())
    }

    /// Heads instantiated at init: every field with λ > 0 plus the fields
    /// named by the representation source.
    pub fn head_fields(&self) -> Vec<Field> {
        let src = self.rep_source.fields();
        Field::ALL
            .into_iter()
            .filter(|f| self.lambda.get(*f) > 0.0 || src.contains(f))
            .collect()
    }
}

/// Affine map `y = W x + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn uniform(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || rng.random_range(-bound..=bound));
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    /// Batch application, rows of `x` are inputs.
    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dx`.
    fn backward(&self, x: ArrayView2<'_, f64>, dy: ArrayView2<'_, f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub linear1: Linear,
    pub linear2: Linear,
}

/// All trainable tensors; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub backbone: Linear,
    pub heads: [Option<Head>; 3],
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        let z = |l: &Linear| Linear::zeros(l.weight.nrows(), l.weight.ncols());
        Params {
            backbone: z(&self.backbone),
            heads: self.heads.clone().map(|h| {
                h.map(|h| Head {
                    linear1: z(&h.linear1),
                    linear2: z(&h.linear2),
                })
            }),
        }
    }

    pub fn head(&self, field: Field) -> Option<&Head> {
        self.heads[field.index()].as_ref()
    }

    /// Tensors in checkpoint order: backbone weight, backbone bias, then for
    /// each present head in Q, A, QA order: linear1 weight, linear1 bias,
    /// linear2 weight, linear2 bias.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        fn push<'a>(out: &mut Vec<(String, &'a [f64])>, name: String, l: &'a Linear) {
            out.push((format!("{name}.weight"), l.weight.as_slice().unwrap()));
            out.push((format!("{name}.bias"), l.bias.as_slice().unwrap()));
        }
        let mut out = Vec::new();
        push(&mut out, "backbone".into(), &self.backbone);
        for f in Field::ALL {
            if let Some(h) = self.head(f) {
                push(&mut out, format!("head.{f}.linear1"), &h.linear1);
                push(&mut out, format!("head.{f}.linear2"), &h.linear2);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        fn push<'a>(out: &mut Vec<(String, &'a mut [f64])>, name: String, l: &'a mut Linear) {
            out.push((format!("{name}.weight"), l.weight.as_slice_mut().unwrap()));
            out.push((format!("{name}.bias"), l.bias.as_slice_mut().unwrap()));
        }
        let mut out = Vec::new();
        push(&mut out, "backbone".into(), &mut self.backbone);
        for (f, h) in Field::ALL.into_iter().zip(self.heads.iter_mut()) {
            if let Some(h) = h {
                push(&mut out, format!("head.{f}.linear1"), &mut h.linear1);
                push(&mut out, format!("head.{f}.linear2"), &mut h.linear2);
            }
        }
        out
    }

    /// Field owning each tensor (None for the backbone), aligned with
    /// [`Params::tensors`].
    pub fn tensor_owners(&self) -> Vec<Option<Field>> {
        let mut out = vec![None, None];
        for f in Field::ALL {
            if self.head(f).is_some() {
                out.extend([Some(f); 4]);
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Params,
}

/// Output of [`RepModel::conv_loss`].
#[derive(Debug, Clone)]
pub struct ConvLoss {
    /// λ-weighted total.
    pub loss: f64,
    /// Unweighted per-head losses; `None` for heads with λ = 0.
    pub head_losses: [Option<f64>; 3],
    pub grads: Params,
}

pub fn init_model(config: ModelConfig, seed: u64) -> Result<RepModel> {
    config.validate()?;
    let d = config.input_dim;
    let mut rng = rng::stream(seed, Stream::InitBackbone);
    let noise = config.backbone_noise;
    let mut weight = Array2::<f64>::eye(d);
    if noise > 0.0 {
        weight.mapv_inplace(|v| v + rng.random_range(-noise..=noise));
    }
    let backbone = Linear {
        weight,
        bias: Array1::zeros(d),
    };
    let mut heads: [Option<Head>; 3] = [None, None, None];
    for f in config.head_fields() {
        let stream = match f {
            Field::Q => Stream::InitHeadQ,
            Field::A => Stream::InitHeadA,
            Field::QA => Stream::InitHeadQa,
        };
        let mut rng = rng::stream(seed, stream);
        heads[f.index()] = Some(Head {
            linear1: Linear::uniform(config.hidden_dim, d, &mut rng),
            linear2: Linear::uniform(config.rep_dim, config.hidden_dim, &mut rng),
        });
    }
    Ok(RepModel {
        config,
        seed,
        params: Params { backbone, heads },
    })
}

struct HeadCache {
    h: Array2<f64>,
    a1: Array2<f64>,
}

impl RepModel {
    fn head_or_err(&self, field: Field) -> Result<&Head> {
        self.params
            .head(field)
            .ok_or_else(|| Error::Validation(format!("model has no head for field {field}")))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                actual: x.ncols(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite model input".into()));
        }
        Ok(())
    }

    fn forward_cached(&self, field: Field, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, HeadCache)> {
        self.check_input(x)?;
        let head = self.head_or_err(field)?;
        let h = self.params.backbone.apply(x).mapv(f64::tanh);
        let a1 = head.linear1.apply(h.view()).mapv(f64::tanh);
        let r = head.linear2.apply(a1.view());
        Ok((r, HeadCache { h, a1 }))
    }

    /// Representations for a batch of inputs (one per row).
    pub fn forward_batch(&self, field: Field, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(field, x)?.0)
    }

    pub fn forward(&self, field: Field, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("1×n view");
        Ok(self.forward_batch(field, view)?.into_raw_vec_and_offset().0)
    }

    /// λ-weighted loss over the active heads and its gradient.
    ///
    /// `inputs` supplies the batch matrix for a field; `objective` maps the
    /// head output for a field to `(loss, ∂loss/∂reps)`. Heads with λ = 0
    /// are neither evaluated nor given a gradient.
    pub fn conv_loss<'a, I, O>(&self, mut inputs: I, mut objective: O) -> Result<ConvLoss>
    where
        I: FnMut(Field) -> Option<ArrayView2<'a, f64>>,
        O: FnMut(Field, ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)>,
    {
        let mut grads = self.params.zeros_like();
        let mut head_losses = [None; 3];
        let mut total = 0.0;
        for field in self.config.lambda.active() {
            let weight = self.config.lambda.get(field);
            let head = self.head_or_err(field)?;
            let x = inputs(field)
                .ok_or_else(|| Error::Validation(format!("batch has no input for field {field}")))?;
            let (r, cache) = self.forward_cached(field, x)?;
            let (loss, mut dr) = objective(field, r.view())?;
            if dr.dim() != r.dim() {
                return Err(Error::Dimension {
                    expected: r.len(),
                    actual: dr.len(),
                });
            }
            head_losses[field.index()] = Some(loss);
            total += weight * loss;

            dr *= weight;
            let g = grads.heads[field.index()].as_mut().expect("grad head mirrors params");
            let da1 = head.linear2.backward(cache.a1.view(), dr.view(), &mut g.linear2);
            let dz1 = da1 * cache.a1.mapv(|a| 1.0 - a * a);
            let dh = head.linear1.backward(cache.h.view(), dz1.view(), &mut g.linear1);
            let dpre = dh * cache.h.mapv(|h| 1.0 - h * h);
            self.params.backbone.backward(x, dpre.view(), &mut grads.backbone);
        }
        Ok(ConvLoss {
            loss: total,
            head_losses,
            grads,
        })
    }

    /// Final representations for the given rows (all rows when `None`).
    pub fn extract_representations(&self, features: &FieldMatrices, rows: Option<&[usize]>) -> Result<Array2<f64>> {
        let fields = self.config.rep_source.fields();
        let mut parts = Vec::with_capacity(fields.len());
        for f in fields {
            self.head_or_err(f)?;
            let m = features.require(f)?;
            let x = match rows {
                Some(rows) => m.select(Axis(0), rows),
                None => m.clone(),
            };
            parts.push(self.forward_batch(f, x.view())?);
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Validation(e.to_string()))
    }

    /// Writes a JSON header line followed by one `EMB1` block per tensor in
    /// [`Params::tensors`] order (biases as 1×n matrices). Values are stored
    /// as binary32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let names: Vec<String> = self.params.tensors().into_iter().map(|(n, _)| n).collect();
        let header = CheckpointHeader {
            format: "convlab-checkpoint-v1".into(),
            config: self.config.clone(),
            seed: self.seed,
            tensors: names,
        };
        let mut buf = serde_json::to_vec(&header)?;
        buf.push(b'\n');
        let dims = self.tensor_dims();
        for ((_, t), (r, c)) in self.params.tensors().into_iter().zip(dims) {
            let view = ArrayView2::from_shape((r, c), t).expect("tensor shape");
            encode_emb1(view, &mut buf);
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("checkpoint header line missing".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        let mut model = init_model(header.config, header.seed)?;
        let expected: Vec<String> = model.params.tensors().into_iter().map(|(n, _)| n).collect();
        if expected != header.tensors {
            return Err(Error::Format(format!("checkpoint tensors {:?} do not match config", header.tensors)));
        }
        let dims = model.tensor_dims();
        let mut offset = nl + 1;
        for ((name, t), (r, c)) in model.params.tensors_mut().into_iter().zip(dims) {
            let (m, used) = decode_emb1(&bytes[offset..])?;
            if m.dim() != (r, c) {
                return Err(Error::Format(format!("tensor {name}: shape {:?}, expected {:?}", m.dim(), (r, c))));
            }
            t.copy_from_slice(m.as_slice().unwrap());
            offset += used;
        }
        if offset != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        Ok(model)
    }

    fn tensor_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut push = |l: &Linear| {
            dims.push(l.weight.dim());
            dims.push((1, l.bias.len()));
        };
        push(&self.params.backbone);
        for f in Field::ALL {
            if let Some(h) = self.params.head(f) {
                push(&h.linear1);
                push(&h.linear2);
            }
        }
        dims
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    config: ModelConfig,
    seed: u64,
    tensors: Vec<String>,
}
