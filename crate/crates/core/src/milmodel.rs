//! The bag classifier: instance embedding, attention pooling (or a max/mean
//! baseline) and a sigmoid output unit.
//!
//! For a bag with embeddings `Z` (`N × D`), attention values are
//! `f_i = wᵀ tanh(V z_i)`, attention weights are `s = softmax(f)` and the bag
//! embedding is `Σ_i s_i z_i`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Bag;
use crate::diffcore::{ReduceOp, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Attention,
    Max,
    Mean,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Attention => "attention",
            Pooling::Max => "max",
            Pooling::Mean => "mean",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Length of each raw instance feature vector.
    pub input_dim: usize,
    /// Embedding size `D`.
    pub embed_dim: usize,
    /// Attention hidden size `L`.
    pub attention_dim: usize,
    /// Number of tanh layers in the embedding network. Zero means identity,
    /// which needs `input_dim == embed_dim`.
    pub embed_depth: usize,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 10,
            embed_dim: 16,
            attention_dim: 8,
            embed_depth: 1,
            pooling: Pooling::Attention,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("attention_dim", self.attention_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.embed_depth > 3 {
            return Err(Error::config("embed_depth", "must be between 0 and 3"));
        }
        if self.embed_depth == 0 && self.input_dim != self.embed_dim {
            return Err(Error::config(
                "embed_depth",
                format!(
                    "identity embedding needs input_dim == embed_dim ({} != {})",
                    self.input_dim, self.embed_dim
                ),
            ));
        }
        Ok(())
    }
}

/// One `tanh(x W + b)` layer; `weight` is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embed: Vec<DenseLayer>,
    /// `L × D`.
    pub v: Tensor,
    /// Length `L`.
    pub w: Tensor,
    /// `1 × D`.
    pub classifier_weight: Tensor,
    /// One element.
    pub classifier_bias: Tensor,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-a..=a);
    }
    t
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, l) = (cfg.embed_dim, cfg.attention_dim);
        let embed = (0..cfg.embed_depth)
            .map(|k| {
                let fan_in = if k == 0 { cfg.input_dim } else { d };
                DenseLayer {
                    weight: glorot(&mut rng, fan_in, d, &[fan_in, d]),
                    bias: Tensor::zeros(&[d]),
                }
            })
            .collect();
        Ok(ModelParams {
            embed,
            v: glorot(&mut rng, d, l, &[l, d]),
            w: glorot(&mut rng, l, 1, &[l]),
            classifier_weight: glorot(&mut rng, d, 1, &[1, d]),
            classifier_bias: Tensor::zeros(&[1]),
        })
    }

    /// Checks every shape against `cfg` and that all values are finite.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let (d, l) = (cfg.embed_dim, cfg.attention_dim);
        if self.embed.len() != cfg.embed_depth {
            return Err(Error::config(
                "embed_depth",
                format!(
                    "parameters have {} layers, config says {}",
                    self.embed.len(),
                    cfg.embed_depth
                ),
            ));
        }
        let mut expect = Vec::new();
        for (k, layer) in self.embed.iter().enumerate() {
            let fan_in = if k == 0 { cfg.input_dim } else { d };
            expect.push((format!("embed.{k}.weight"), &layer.weight, vec![fan_in, d]));
            expect.push((format!("embed.{k}.bias"), &layer.bias, vec![d]));
        }
        expect.push(("v".into(), &self.v, vec![l, d]));
        expect.push(("w".into(), &self.w, vec![l]));
        expect.push((
            "classifier.weight".into(),
            &self.classifier_weight,
            vec![1, d],
        ));
        expect.push(("classifier.bias".into(), &self.classifier_bias, vec![1]));
        for (name, t, shape) in expect {
            if t.shape() != shape.as_slice() {
                return Err(Error::config(
                    name,
                    format!("shape {:?} does not match expected {shape:?}", t.shape()),
                ));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }

    /// Parameters in a fixed order shared by [`Self::tensors_mut`],
    /// [`Self::names`] and [`ParamVars::leaves`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        for layer in &self.embed {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.extend([
            &self.v,
            &self.w,
            &self.classifier_weight,
            &self.classifier_bias,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for layer in &mut self.embed {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.extend([
            &mut self.v,
            &mut self.w,
            &mut self.classifier_weight,
            &mut self.classifier_bias,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in 0..self.embed.len() {
            out.push(format!("embed.{k}.weight"));
            out.push(format!("embed.{k}.bias"));
        }
        out.extend(["v", "w", "classifier.weight", "classifier.bias"].map(String::from));
        out
    }

    /// Rebuilds from tensors in [`Self::tensors`] order.
    pub fn from_tensors(embed_depth: usize, mut tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != 2 * embed_depth + 4 {
            return Err(Error::config(
                "params",
                format!(
                    "expected {} tensors, got {}",
                    2 * embed_depth + 4,
                    tensors.len()
                ),
            ));
        }
        let tail = tensors.split_off(2 * embed_depth);
        let mut embed = Vec::with_capacity(embed_depth);
        let mut it = tensors.into_iter();
        while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
            embed.push(DenseLayer { weight, bias });
        }
        let [v, w, classifier_weight, classifier_bias]: [Tensor; 4] =
            tail.try_into().expect("length checked above");
        Ok(ModelParams {
            embed,
            v,
            w,
            classifier_weight,
            classifier_bias,
        })
    }
}

/// Parameters registered as leaves on one tape.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub embed: Vec<(Var, Var)>,
    pub v: Var,
    pub w: Var,
    pub classifier_weight: Var,
    pub classifier_bias: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let embed = params
            .embed
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        ParamVars {
            embed,
            v: tape.leaf(params.v.clone()),
            w: tape.leaf(params.w.clone()),
            classifier_weight: tape.leaf(params.classifier_weight.clone()),
            classifier_bias: tape.leaf(params.classifier_bias.clone()),
        }
    }

    /// Inverse of [`Self::leaves`].
    pub fn from_leaves(leaves: &[Var]) -> Result<Self> {
        let n = leaves.len();
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::config(
                "params",
                format!("cannot split {n} leaves into layers"),
            ));
        }
        let (layers, tail) = leaves.split_at(n - 4);
        Ok(ParamVars {
            embed: layers.chunks(2).map(|c| (c[0], c[1])).collect(),
            v: tail[0],
            w: tail[1],
            classifier_weight: tail[2],
            classifier_bias: tail[3],
        })
    }

    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.embed {
            out.push(w);
            out.push(b);
        }
        out.extend([self.v, self.w, self.classifier_weight, self.classifier_bias]);
        out
    }
}

/// Records the bag's raw features as an `N × F` constant, checking every
/// instance has `input_dim` features.
pub fn bag_input(tape: &mut Tape, bag: &Bag, input_dim: usize) -> Result<Var> {
    if bag.instances.is_empty() {
        return Err(Error::Validation {
            bag: bag.id.clone(),
            reason: "bag has no instances".into(),
        });
    }
    if let Some(i) = bag.instances.iter().position(|x| x.len() != input_dim) {
        return Err(Error::Validation {
            bag: bag.id.clone(),
            reason: format!(
                "instance {i} has {} features, model expects {input_dim}",
                bag.instances[i].len()
            ),
        });
    }
    Ok(tape.constant(Tensor::from_rows(&bag.instances)?))
}

/// `Z = tanh(... tanh(X W₀ + b₀) ...)`; identity for zero layers.
pub fn embed(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for &(w, b) in layers {
        let lin = tape.matmul(h, w)?;
        let lin = tape.add_row(lin, b)?;
        h = tape.tanh(lin)?;
    }
    Ok(h)
}

/// `f_i = wᵀ tanh(V z_i)` for every row of `z`; returns a length-`N` vector.
pub fn attention_values(tape: &mut Tape, z: Var, v: Var, w: Var) -> Result<Var> {
    let (n, d) = tape.value(z).dims2("attention_values")?;
    let (l, dv) = tape.value(v).dims2("attention_values")?;
    if d != dv || tape.value(w).len() != l {
        return Err(Error::shape(
            "attention_values",
            tape.value(z).shape(),
            tape.value(v).shape(),
        ));
    }
    let vt = tape.transpose(v)?;
    let pre = tape.matmul(z, vt)?;
    let h = tape.tanh(pre)?;
    let wcol = tape.reshape(w, &[l, 1])?;
    let f = tape.matmul(h, wcol)?;
    tape.reshape(f, &[n])
}

/// Softmax of the attention values within the bag.
pub fn attention_weights(tape: &mut Tape, f: Var) -> Result<Var> {
    tape.softmax(f)
}

/// `Σ_i s_i z_i` as a length-`D` vector.
pub fn attention_pool(tape: &mut Tape, z: Var, s: Var) -> Result<Var> {
    let (n, d) = tape.value(z).dims2("attention_pool")?;
    if tape.value(s).len() != n {
        return Err(Error::shape(
            "attention_pool",
            tape.value(s).shape(),
            &[n, d],
        ));
    }
    let row = tape.reshape(s, &[1, n])?;
    let pooled = tape.matmul(row, z)?;
    tape.reshape(pooled, &[d])
}

/// Per-dimension max or mean over instances.
pub fn pool_baseline(tape: &mut Tape, z: Var, mode: Pooling) -> Result<Var> {
    let op = match mode {
        Pooling::Max => ReduceOp::Max,
        Pooling::Mean => ReduceOp::Mean,
        Pooling::Attention => {
            return Err(Error::config(
                "pooling",
                "attention is not a baseline pooling",
            ))
        }
    };
    tape.reduce(op, z, Some(0))
}

/// Tape handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BagNodes {
    pub z: Var,
    pub f: Option<Var>,
    pub s: Option<Var>,
    pub embedding: Var,
    /// Scalar bag probability.
    pub prob: Var,
}

pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ParamVars,
    bag: &Bag,
    cfg: &ModelConfig,
) -> Result<BagNodes> {
    let x = bag_input(tape, bag, cfg.input_dim)?;
    let z = embed(tape, &vars.embed, x)?;
    let (f, s, embedding) = match cfg.pooling {
        Pooling::Attention => {
            let f = attention_values(tape, z, vars.v, vars.w)?;
            let s = attention_weights(tape, f)?;
            let e = attention_pool(tape, z, s)?;
            (Some(f), Some(s), e)
        }
        mode => (None, None, pool_baseline(tape, z, mode)?),
    };
    let d = tape.value(embedding).len();
    let row = tape.reshape(embedding, &[1, d])?;
    let wt = tape.transpose(vars.classifier_weight)?;
    let logit = tape.matmul(row, wt)?;
    let logit = tape.reshape(logit, &[1])?;
    let logit = tape.add(logit, vars.classifier_bias)?;
    let prob = tape.sigmoid(logit)?;
    let prob = tape.reshape(prob, &[])?;
    Ok(BagNodes {
        z,
        f,
        s,
        embedding,
        prob,
    })
}

/// Plain values of a forward pass. `f` and `s` are empty for baseline
/// poolings.
#[derive(Clone, Debug, PartialEq)]
pub struct BagForward {
    pub z: Tensor,
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub bag_embedding: Vec<f64>,
    pub prob: f64,
}

impl BagForward {
    pub fn has_attention(&self) -> bool {
        !self.s.is_empty()
    }
}

pub fn forward(bag: &Bag, params: &ModelParams, cfg: &ModelConfig) -> Result<BagForward> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let nodes = forward_on_tape(&mut tape, &vars, bag, cfg)?;
    let vec_of = |v: Option<Var>| v.map_or_else(Vec::new, |v| tape.value(v).data().to_vec());
    Ok(BagForward {
        z: tape.value(nodes.z).clone(),
        f: vec_of(nodes.f),
        s: vec_of(nodes.s),
        bag_embedding: tape.value(nodes.embedding).data().to_vec(),
        prob: tape.scalar(nodes.prob)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Saved model: configuration, seed, parameters and an echo of the
/// configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub seed: u64,
    #[serde(default)]
    pub config: serde_json::Value,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(
        model: &ModelConfig,
        seed: u64,
        config: serde_json::Value,
        params: &ModelParams,
    ) -> Self {
        let params = params
            .names()
            .into_iter()
            .zip(params.tensors())
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Checkpoint {
            model: model.clone(),
            seed,
            config,
            params,
        }
    }

    /// Rebuilds and validates the parameters against the stored model config.
    pub fn params(&self) -> Result<ModelParams> {
        self.model.validate()?;
        let mut tensors = Vec::with_capacity(self.params.len());
        let expected_names = (0..self.model.embed_depth)
            .flat_map(|k| [format!("embed.{k}.weight"), format!("embed.{k}.bias")])
            .chain(["v", "w", "classifier.weight", "classifier.bias"].map(String::from));
        for (p, name) in self.params.iter().zip(expected_names) {
            if p.name != name {
                return Err(Error::config(
                    "params",
                    format!("expected parameter `{name}`, found `{}`", p.name),
                ));
            }
            tensors.push(Tensor::new(p.shape.clone(), p.data.clone())?);
        }
        let params = ModelParams::from_tensors(self.model.embed_depth, tensors)?;
        params.validate(&self.model)?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
