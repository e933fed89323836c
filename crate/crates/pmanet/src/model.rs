//! Model configuration, the named parameter set, and the full forward pass
//! from a token sequence to class logits.

use crate::checkpoint;
use crate::encoder;
use crate::error::{Error, Result};
use crate::head;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};
use crate::tokenizer::TokenSequence;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// All architecture hyperparameters. Embedded verbatim in checkpoints so
/// they are self-describing.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Encoder depth N.
    pub n_layers: usize,
    /// Hidden width C of both channels.
    pub hidden: usize,
    pub n_heads: usize,
    /// GRU hidden size per direction g; char-derived token embeddings have
    /// width 4g before projection to `hidden`.
    pub gru_hidden: usize,
    /// Character embedding width.
    pub char_dim: usize,
    /// Feed-forward expansion factor.
    pub ff_mult: usize,
    /// Interaction fusion window sizes; filters split evenly to `hidden`.
    pub windows: Vec<usize>,
    pub dropout: f64,
    /// Maximum subword positions W.
    pub max_len: usize,
    pub subword_vocab: usize,
    pub char_vocab: usize,
    /// Pyramid levels of the pooling head.
    pub spp_levels: Vec<usize>,
    /// Channel-attention reduction ratio r.
    pub attn_reduction: usize,
    /// Output classes K.
    pub classes: usize,
    /// Process the full padded width instead of trimming the PAD tail.
    pub fixed_width: bool,
    /// Stack only the last k layer outputs in the head (None = all N).
    pub stack_layers: Option<usize>,
}

impl ModelConfig {
    pub fn desk(subword_vocab: usize, char_vocab: usize) -> Self {
        ModelConfig {
            n_layers: 12,
            hidden: 64,
            n_heads: 4,
            gru_hidden: 32,
            char_dim: 32,
            ff_mult: 4,
            windows: vec![2, 3],
            dropout: 0.1,
            max_len: 200,
            subword_vocab,
            char_vocab,
            spp_levels: vec![1, 2, 4],
            attn_reduction: 3,
            classes: 2,
            fixed_width: false,
            stack_layers: None,
        }
    }

    pub fn paper(subword_vocab: usize, char_vocab: usize) -> Self {
        ModelConfig {
            n_layers: 12,
            hidden: 768,
            n_heads: 12,
            gru_hidden: 384,
            char_dim: 384,
            ff_mult: 4,
            windows: vec![2, 3],
            dropout: 0.1,
            max_len: 200,
            subword_vocab,
            char_vocab,
            spp_levels: vec![1, 2, 4],
            attn_reduction: 3,
            classes: 2,
            fixed_width: true,
            stack_layers: None,
        }
    }

    /// Minimal configuration for gradient checks.
    pub fn tiny(subword_vocab: usize, char_vocab: usize) -> Self {
        ModelConfig {
            n_layers: 2,
            hidden: 8,
            n_heads: 2,
            gru_hidden: 4,
            char_dim: 4,
            ff_mult: 2,
            windows: vec![2, 3],
            dropout: 0.1,
            max_len: 12,
            subword_vocab,
            char_vocab,
            spp_levels: vec![1, 2, 4],
            attn_reduction: 3,
            classes: 2,
            fixed_width: false,
            stack_layers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| {
            Err(Error::ShapeMismatch {
                op: "model_config",
                details: msg,
            })
        };
        if self.n_layers == 0 || self.hidden == 0 || self.n_heads == 0 || self.gru_hidden == 0 {
            return fail("zero-sized dimension".into());
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return fail(format!("hidden {} not divisible by heads {}", self.hidden, self.n_heads));
        }
        if self.windows.is_empty() || !self.hidden.is_multiple_of(self.windows.len()) {
            return fail(format!(
                "hidden {} not divisible by {} fusion windows",
                self.hidden,
                self.windows.len()
            ));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.spp_levels.is_empty() || self.spp_levels.iter().any(|&n| n < 1) {
            return fail(format!("bad pyramid levels {:?}", self.spp_levels));
        }
        if let Some(k) = self.stack_layers {
            if k == 0 || k > self.n_layers {
                return fail(format!("stack_layers {k} outside 1..={}", self.n_layers));
            }
        }
        if self.attn_reduction == 0 {
            return fail("attn_reduction must be >= 1".into());
        }
        Ok(())
    }

    /// Layers feeding the head: the last `stack_layers` (all by default).
    pub fn n_stack(&self) -> usize {
        self.stack_layers.unwrap_or(self.n_layers)
    }

    /// Hidden width of the layer-attention MLP.
    pub fn attn_hidden(&self) -> usize {
        self.n_stack().div_ceil(self.attn_reduction).max(1)
    }

    /// Minimum positions the head can pool: the coarsest pyramid level.
    pub fn min_positions(&self) -> usize {
        self.spp_levels.iter().copied().max().unwrap_or(1)
    }
}

/// Named learnable tensors in deterministic order.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ModelParams<T> {
    /// Initialize parameters: truncated normal (sigma 0.02) for embeddings
    /// and affine maps, orthogonal for GRU recurrent matrices, ones/zeros
    /// for layer-norm affines and biases.
    pub fn init(config: ModelConfig, rng: &Rng) -> Result<ModelParams<T>> {
        config.validate()?;
        let mut rng = rng.derive("init");
        let mut params = ModelParams {
            config: config.clone(),
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        };
        let c = config.hidden;
        let g = config.gru_hidden;
        let std = 0.02;

        let normal =
            |p: &mut ModelParams<T>, name: String, shape: &[usize], rng: &mut Rng| {
                p.push(name, Tensor::trunc_normal(shape, std, rng));
            };
        let zeros = |p: &mut ModelParams<T>, name: String, shape: &[usize]| {
            p.push(name, Tensor::zeros(shape));
        };
        let ones = |p: &mut ModelParams<T>, name: String, shape: &[usize]| {
            p.push(name, Tensor::full(shape, T::one()));
        };

        normal(&mut params, "tok_embed".into(), &[config.subword_vocab, c], &mut rng);
        normal(&mut params, "pos_embed".into(), &[config.max_len, c], &mut rng);
        normal(&mut params, "char_embed".into(), &[config.char_vocab, config.char_dim], &mut rng);
        for dir in ["fwd", "bwd"] {
            for gate in ["z", "r", "h"] {
                normal(&mut params, format!("gru.{dir}.w{gate}"), &[config.char_dim, g], &mut rng);
            }
            for gate in ["z", "r", "h"] {
                params.push(format!("gru.{dir}.u{gate}"), Tensor::orthogonal(g, &mut rng));
            }
            for gate in ["z", "r", "h"] {
                zeros(&mut params, format!("gru.{dir}.b{gate}"), &[g]);
            }
        }
        normal(&mut params, "char_proj.w".into(), &[4 * g, c], &mut rng);
        zeros(&mut params, "char_proj.b".into(), &[c]);

        let filters = c / config.windows.len();
        for l in 0..config.n_layers {
            let p = |s: &str| format!("layer{l:02}.{s}");
            for w in ["wq", "wk", "wv", "wo"] {
                normal(&mut params, p(&format!("attn.{w}")), &[c, c], &mut rng);
            }
            for b in ["bq", "bk", "bv", "bo"] {
                zeros(&mut params, p(&format!("attn.{b}")), &[c]);
            }
            ones(&mut params, p("ln1.g"), &[c]);
            zeros(&mut params, p("ln1.b"), &[c]);
            ones(&mut params, p("ln2.g"), &[c]);
            zeros(&mut params, p("ln2.b"), &[c]);
            normal(&mut params, p("ff.w1"), &[c, c * config.ff_mult], &mut rng);
            zeros(&mut params, p("ff.b1"), &[c * config.ff_mult]);
            normal(&mut params, p("ff.w2"), &[c * config.ff_mult, c], &mut rng);
            zeros(&mut params, p("ff.b2"), &[c]);

            normal(&mut params, p("inter.wt"), &[c, c], &mut rng);
            zeros(&mut params, p("inter.bt"), &[c]);
            normal(&mut params, p("inter.wh"), &[c, c], &mut rng);
            zeros(&mut params, p("inter.bh"), &[c]);
            for &w in &config.windows {
                normal(&mut params, p(&format!("inter.conv{w}.w")), &[w, 2 * c, filters], &mut rng);
                zeros(&mut params, p(&format!("inter.conv{w}.b")), &[filters]);
            }
            normal(&mut params, p("inter.wdt"), &[c, c], &mut rng);
            zeros(&mut params, p("inter.bdt"), &[c]);
            normal(&mut params, p("inter.wdh"), &[c, c], &mut rng);
            zeros(&mut params, p("inter.bdh"), &[c]);
            ones(&mut params, p("inter.lnt.g"), &[c]);
            zeros(&mut params, p("inter.lnt.b"), &[c]);
            ones(&mut params, p("inter.lnh.g"), &[c]);
            zeros(&mut params, p("inter.lnh.b"), &[c]);
        }

        normal(&mut params, "merge.w".into(), &[1, 2 * c, c], &mut rng);
        zeros(&mut params, "merge.b".into(), &[c]);
        // layer-attention MLP weights, stored in the (hidden x N) / (N x hidden)
        // orientation of the channel-attention formulation
        let n_att = config.n_stack();
        let att_hidden = config.attn_hidden();
        normal(&mut params, "lattn.w0".into(), &[att_hidden, n_att], &mut rng);
        normal(&mut params, "lattn.w1".into(), &[n_att, att_hidden], &mut rng);
        normal(&mut params, "cls.w".into(), &[c, config.classes], &mut rng);
        zeros(&mut params, "cls.b".into(), &[config.classes]);
        Ok(params)
    }

    fn push(&mut self, name: String, tensor: Tensor<T>) {
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors.iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config)?;
        let pairs: Vec<(String, &Tensor<T>)> = self
            .names
            .iter()
            .cloned()
            .zip(self.tensors.iter())
            .collect();
        checkpoint::save(path, &config, &pairs)
    }

    pub fn load(path: &Path) -> Result<ModelParams<T>> {
        let (config_json, tensors) = checkpoint::load::<T>(path)?;
        let config: ModelConfig = serde_json::from_value(config_json)
            .map_err(|e| Error::BadCheckpoint(format!("config: {e}")))?;
        config.validate().map_err(|e| Error::BadCheckpoint(e.to_string()))?;
        let reference = ModelParams::<T>::init(config.clone(), &Rng::new(0))?;
        if tensors.len() != reference.len() {
            return Err(Error::BadCheckpoint(format!(
                "{} tensors in file, config implies {}",
                tensors.len(),
                reference.len()
            )));
        }
        let mut params = ModelParams {
            config,
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        };
        for ((name, tensor), want_name) in tensors.into_iter().zip(reference.names()) {
            if &name != want_name {
                return Err(Error::BadCheckpoint(format!(
                    "tensor {name:?} where {want_name:?} expected"
                )));
            }
            let want_shape = reference.get(&name).unwrap().shape();
            if tensor.shape() != want_shape {
                return Err(Error::BadCheckpoint(format!(
                    "tensor {name:?} has shape {:?}, config implies {:?}",
                    tensor.shape(),
                    want_shape
                )));
            }
            params.push(name, tensor);
        }
        Ok(params)
    }
}

/// Parameters bound onto one tape as leaves.
pub struct Bound<'p, T: Real> {
    params: &'p ModelParams<T>,
    vars: Vec<Var>,
}

impl<'p, T: Real> Bound<'p, T> {
    pub fn new(tape: &mut Tape<T>, params: &'p ModelParams<T>, requires_grad: bool) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect();
        Bound { params, vars }
    }

    /// Bind with externally supplied leaves (used by gradient checks that
    /// need to perturb parameters).
    pub fn from_vars(params: &'p ModelParams<T>, vars: Vec<Var>) -> Self {
        Bound { params, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        match self.params.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name:?}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }
}

/// Logits for one sample; `(1, K)`.
pub fn forward_sample<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    seq: &TokenSequence,
    train: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let cfg = bound.config();
    let dual = encoder::encode(tape, bound, seq, train, rng)?;
    let stack = head::stack_sample(tape, bound, &dual)?;
    let weighted = head::layer_attention(tape, bound, stack)?;
    let features = head::spp(tape, weighted, &cfg.spp_levels)?;
    head::classify(tape, bound, features, train, rng)
}

/// Class probabilities for a batch, evaluated without gradients and in
/// parallel; deterministic regardless of thread count.
pub fn predict_probs<T: Real>(
    params: &ModelParams<T>,
    seqs: &[TokenSequence],
) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    crate::init_threads();
    let chunks: Vec<&[TokenSequence]> = seqs.chunks(8).collect();
    let results: Vec<Result<Vec<Vec<f64>>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut out = Vec::with_capacity(chunk.len());
            for seq in *chunk {
                let mut tape = Tape::new();
                let bound = Bound::new(&mut tape, params, false);
                let mut rng = Rng::new(0);
                let logits = forward_sample(&mut tape, &bound, seq, false, &mut rng)?;
                let probs = tape.softmax(logits, 1)?;
                out.push(tape.value(probs).to_f64_vec());
            }
            Ok(out)
        })
        .collect();
    let mut flat = Vec::with_capacity(seqs.len());
    for r in results {
        flat.extend(r?);
    }
    Ok(flat)
}
