#![allow(clippy::needless_range_loop)]

//! Reverse-mode automatic differentiation over a per-graph tape.
//!
//! A `Tape` owns every intermediate value of one forward computation.
//! Operations append nodes and return `Var` handles; `backward` walks the
//! node list in reverse and produces one gradient per `requires_grad` leaf.
//! Graphs are single-threaded; independent graphs (one per sample) may run
//! on separate threads.
//!
//! Every op output is scanned for NaN/Inf and aborts with a diagnostic
//! instead of letting divergence propagate.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{
    broadcast_shape, matmul_a_bt_accum, matmul_accum, matmul_at_b_accum, Real, Tensor,
};

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Conv1d padding mode. `Same` keeps the sequence length (stride 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

struct PoolSpec {
    axis: usize,
    window: usize,
    stride: usize,
    bins: usize,
}

struct Conv1dSpec {
    stride: usize,
    pad_left: usize,
    out_len: usize,
}

struct GruSpec {
    reverse: bool,
    hidden: usize,
}

struct GruCache<T> {
    // all (L, hidden), in processing order
    z: Vec<T>,
    r: Vec<T>,
    c: Vec<T>,
    rh: Vec<T>,
    h: Vec<T>,
}

enum Op<T> {
    Leaf,
    Matmul {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        x: Var,
    },
    Permute {
        x: Var,
        perm: Vec<usize>,
    },
    Conv1d {
        x: Var,
        w: Var,
        spec: Conv1dSpec,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        spec: PoolSpec,
        counts: Vec<usize>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        axis: usize,
        inv_std: Vec<T>,
    },
    Gelu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Gather {
        x: Var,
        rows: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    SumAll {
        x: Var,
    },
    Gru {
        x: Var,
        weights: GruWeights,
        spec: GruSpec,
        cache: GruCache<T>,
    },
}

/// The nine parameter handles of one GRU direction.
#[derive(Debug, Clone, Copy)]
pub struct GruWeights {
    pub wz: Var,
    pub wr: Var,
    pub wh: Var,
    pub uz: Var,
    pub ur: Var,
    pub uh: Var,
    pub bz: Var,
    pub br: Var,
    pub bh: Var,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward computation graph.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradients per tape node, populated by `backward`.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads[var.0].take()
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Register an input value. Gradients flow to it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a value that never needs gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if let Some(index) = value.first_non_finite() {
            return Err(Error::NonFiniteValue { op: name, index });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ── shape-moving ops ─────────────────────────────────────────────

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let rg = self.requires_grad(x);
        self.push(value, Op::Reshape { x }, rg, "reshape")
    }

    pub fn permute(&mut self, x: Var, perm: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if perm.len() != xv.rank() {
            return Err(Error::ShapeMismatch {
                op: "permute",
                details: format!("perm {:?} vs rank {}", perm, xv.rank()),
            });
        }
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::ShapeMismatch {
                    op: "permute",
                    details: format!("invalid permutation {perm:?}"),
                });
            }
            seen[p] = true;
        }
        let value = permute_tensor(xv, &perm);
        let rg = self.requires_grad(x);
        self.push(value, Op::Permute { x, perm }, rg, "permute")
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                details: "no inputs".into(),
            });
        }
        let first = self.value(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                details: format!("axis {axis} vs rank {}", first.len()),
            });
        }
        let mut axis_total = 0usize;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    details: format!("{s:?} vs {first:?} on axis {axis}"),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = vec![T::zero(); out_shape.iter().product()];
        let row = axis_total * inner;
        let mut offset = 0usize;
        for &v in inputs {
            let val = self.value(v);
            let len = val.shape()[axis];
            let src = val.data();
            for o in 0..outer {
                let dst_base = o * row + offset * inner;
                let src_base = o * len * inner;
                data[dst_base..dst_base + len * inner]
                    .copy_from_slice(&src[src_base..src_base + len * inner]);
            }
            offset += len;
        }
        let rg = self.any_grad(inputs);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let shape = xv.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::ShapeMismatch {
                op: "slice",
                details: format!("axis {axis} [{start}..{}] of {:?}", start + len, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        let src = xv.data();
        let src_row = shape[axis] * inner;
        for o in 0..outer {
            let src_base = o * src_row + start * inner;
            data[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::Slice { x, axis, start },
            rg,
            "slice",
        )
    }

    // ── arithmetic ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                details: format!("{:?} @ {:?}", av.shape(), bv.shape()),
            });
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut data = vec![T::zero(); m * n];
        matmul_accum(av.data(), bv.data(), &mut data, m, k, n);
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(vec![m, n], data)?, Op::Matmul { a, b }, rg, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Add { a, b }, rg, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_binary(self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Mul { a, b }, rg, "mul")
    }

    /// Multiply by a compile-time constant scalar (no gradient input).
    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let c = self.constant(Tensor::scalar(T::of(factor)));
        self.mul(x, c)
    }

    // ── activations ──────────────────────────────────────────────────

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone_map(|v| gelu_scalar(v));
        let rg = self.requires_grad(x);
        self.push(value, Op::Gelu { x }, rg, "gelu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone_map(|v| sigmoid_scalar(v));
        let rg = self.requires_grad(x);
        self.push(value, Op::Sigmoid { x }, rg, "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone_map(|v| v.tanh());
        let rg = self.requires_grad(x);
        self.push(value, Op::Tanh { x }, rg, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).clone_map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.requires_grad(x);
        self.push(value, Op::Relu { x }, rg, "relu")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                details: format!("axis {axis} vs rank {}", xv.rank()),
            });
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut data = xv.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |t: usize| (o * len + t) * inner + i;
                let mut mx = T::neg_infinity();
                for t in 0..len {
                    mx = mx.max(data[idx(t)]);
                }
                let mut sum = T::zero();
                for t in 0..len {
                    let e = (data[idx(t)] - mx).exp();
                    data[idx(t)] = e;
                    sum = sum + e;
                }
                for t in 0..len {
                    data[idx(t)] = data[idx(t)] / sum;
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(xv.shape().to_vec(), data)?,
            Op::Softmax { x, axis },
            rg,
            "softmax",
        )
    }

    /// Pure normalization along `axis` (no affine); mean 0, variance 1.
    pub fn layer_norm(&mut self, x: Var, axis: usize, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                details: format!("axis {axis} vs rank {}", xv.rank()),
            });
        }
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut data = xv.data().to_vec();
        let mut inv_std = vec![T::zero(); outer * inner];
        let nf = T::of(len as f64);
        let epst = T::of(eps);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |t: usize| (o * len + t) * inner + i;
                let mut mean = T::zero();
                for t in 0..len {
                    mean = mean + data[idx(t)];
                }
                mean = mean / nf;
                let mut var = T::zero();
                for t in 0..len {
                    let d = data[idx(t)] - mean;
                    var = var + d * d;
                }
                var = var / nf;
                let is = T::one() / (var + epst).sqrt();
                inv_std[o * inner + i] = is;
                for t in 0..len {
                    data[idx(t)] = (data[idx(t)] - mean) * is;
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(xv.shape().to_vec(), data)?,
            Op::LayerNorm { x, axis, inv_std },
            rg,
            "layer_norm",
        )
    }

    /// Inverted dropout: keeps are scaled by 1/(1-rate). Rate 0 is the identity.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                details: format!("rate {rate} outside [0,1)"),
            });
        }
        let xv = self.value(x);
        let mask: Vec<T> = if rate == 0.0 {
            vec![T::one(); xv.numel()]
        } else {
            let keep = T::of(1.0 / (1.0 - rate));
            (0..xv.numel())
                .map(|_| if rng.next_f64() < rate { T::zero() } else { keep })
                .collect()
        };
        let data: Vec<T> = xv.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(xv.shape().to_vec(), data)?,
            Op::Dropout { x, mask },
            rg,
            "dropout",
        )
    }

    // ── pooling ──────────────────────────────────────────────────────

    /// Max pooling along `axis`; bin count from the standard floor formula.
    pub fn max_pool(&mut self, x: Var, axis: usize, window: usize, stride: usize) -> Result<Var> {
        let bins = default_bins(self.value(x).shape(), axis, window, stride)?;
        self.max_pool_bins(x, axis, window, stride, bins)
    }

    /// Max pooling with an explicit bin count (windows clipped at the end).
    pub fn max_pool_bins(
        &mut self,
        x: Var,
        axis: usize,
        window: usize,
        stride: usize,
        bins: usize,
    ) -> Result<Var> {
        let spec = PoolSpec {
            axis,
            window,
            stride,
            bins,
        };
        let xv = self.value(x);
        check_pool(xv.shape(), &spec)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] = bins;
        let mut data = vec![T::zero(); outer * bins * inner];
        let mut argmax = vec![0usize; data.len()];
        let src = xv.data();
        for o in 0..outer {
            for b in 0..bins {
                let t0 = b * stride;
                let t1 = (t0 + window).min(len);
                for i in 0..inner {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for t in t0..t1 {
                        let si = (o * len + t) * inner + i;
                        if src[si] > best {
                            best = src[si];
                            best_idx = si;
                        }
                    }
                    let oi = (o * bins + b) * inner + i;
                    data[oi] = best;
                    argmax[oi] = best_idx;
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::MaxPool { x, argmax },
            rg,
            "max_pool",
        )
    }

    pub fn avg_pool(&mut self, x: Var, axis: usize, window: usize, stride: usize) -> Result<Var> {
        let bins = default_bins(self.value(x).shape(), axis, window, stride)?;
        self.avg_pool_bins(x, axis, window, stride, bins)
    }

    pub fn avg_pool_bins(
        &mut self,
        x: Var,
        axis: usize,
        window: usize,
        stride: usize,
        bins: usize,
    ) -> Result<Var> {
        let spec = PoolSpec {
            axis,
            window,
            stride,
            bins,
        };
        let xv = self.value(x);
        check_pool(xv.shape(), &spec)?;
        let (outer, len, inner) = split_axis(xv.shape(), axis);
        let mut out_shape = xv.shape().to_vec();
        out_shape[axis] = bins;
        let mut data = vec![T::zero(); outer * bins * inner];
        let mut counts = vec![0usize; bins];
        let src = xv.data();
        for (b, count) in counts.iter_mut().enumerate() {
            let t0 = b * stride;
            let t1 = (t0 + window).min(len);
            *count = t1 - t0;
        }
        for o in 0..outer {
            for b in 0..bins {
                let t0 = b * stride;
                let t1 = (t0 + window).min(len);
                let denom = T::of((t1 - t0) as f64);
                for i in 0..inner {
                    let mut sum = T::zero();
                    for t in t0..t1 {
                        sum = sum + src[(o * len + t) * inner + i];
                    }
                    data[(o * bins + b) * inner + i] = sum / denom;
                }
            }
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(out_shape, data)?,
            Op::AvgPool { x, spec, counts },
            rg,
            "avg_pool",
        )
    }

    // ── structured ops ───────────────────────────────────────────────

    /// 1-D convolution over axis 0 of `x` (L, C_in) with kernel `w`
    /// (window, C_in, C_out). `Same` padding keeps L at stride 1.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize, padding: Padding) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.rank() != 2 || wv.rank() != 3 || xv.shape()[1] != wv.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                details: format!("x {:?} w {:?}", xv.shape(), wv.shape()),
            });
        }
        if stride == 0 {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                details: "stride 0".into(),
            });
        }
        let (len, c_in) = (xv.shape()[0], xv.shape()[1]);
        let (window, c_out) = (wv.shape()[0], wv.shape()[2]);
        let (pad_left, out_len) = match padding {
            Padding::Same => {
                let out_len = len.div_ceil(stride);
                let pad_total = ((out_len - 1) * stride + window).saturating_sub(len);
                (pad_total / 2, out_len)
            }
            Padding::Valid => {
                if len < window {
                    return Err(Error::ShapeMismatch {
                        op: "conv1d",
                        details: format!("window {window} exceeds length {len}"),
                    });
                }
                (0, (len - window) / stride + 1)
            }
        };
        let mut data = vec![T::zero(); out_len * c_out];
        let src = xv.data();
        let ker = wv.data();
        for t in 0..out_len {
            let out_row = &mut data[t * c_out..(t + 1) * c_out];
            for dw in 0..window {
                let pos = (t * stride + dw) as isize - pad_left as isize;
                if pos < 0 || pos as usize >= len {
                    continue;
                }
                let x_row = &src[pos as usize * c_in..(pos as usize + 1) * c_in];
                let k_base = dw * c_in * c_out;
                for (ci, &xv_) in x_row.iter().enumerate() {
                    if xv_ == T::zero() {
                        continue;
                    }
                    let k_row = &ker[k_base + ci * c_out..k_base + (ci + 1) * c_out];
                    for (j, &kv) in k_row.iter().enumerate() {
                        out_row[j] = out_row[j] + xv_ * kv;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x, w]);
        self.push(
            Tensor::new(vec![out_len, c_out], data)?,
            Op::Conv1d {
                x,
                w,
                spec: Conv1dSpec {
                    stride,
                    pad_left,
                    out_len,
                },
            },
            rg,
            "conv1d",
        )
    }

    /// Row lookup: out[i] = x[ids[i]]. Backs both embedding lookup and
    /// span-endpoint gathering.
    pub fn gather_rows(&mut self, x: Var, ids: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "embedding_lookup",
                details: format!("table rank {} != 2", xv.rank()),
            });
        }
        let (rows, dim) = (xv.shape()[0], xv.shape()[1]);
        let mut data = vec![T::zero(); ids.len() * dim];
        for (i, &id) in ids.iter().enumerate() {
            if id >= rows {
                return Err(Error::IdOutOfRange { id, size: rows });
            }
            data[i * dim..(i + 1) * dim].copy_from_slice(&xv.data()[id * dim..(id + 1) * dim]);
        }
        let rg = self.requires_grad(x);
        self.push(
            Tensor::new(vec![ids.len(), dim], data)?,
            Op::Gather {
                x,
                rows: ids.to_vec(),
            },
            rg,
            "embedding_lookup",
        )
    }

    /// Alias with the conventional name.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Mean over the batch of -log softmax(logits)[label]; scalar output.
    pub fn cross_entropy_with_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                details: format!("logits {:?} vs {} labels", lv.shape(), labels.len()),
            });
        }
        let (batch, classes) = (lv.shape()[0], lv.shape()[1]);
        for &l in labels {
            if l >= classes {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes,
                });
            }
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for r in 0..batch {
            let row = &mut probs[r * classes..(r + 1) * classes];
            let mut mx = T::neg_infinity();
            for &v in row.iter() {
                mx = mx.max(v);
            }
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
            loss = loss - row[labels[r]].max(T::of(1e-300)).ln();
        }
        loss = loss / T::of(batch as f64);
        let rg = self.requires_grad(logits);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
            "cross_entropy",
        )
    }

    /// Sum of all elements; scalar output.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let mut sum = T::zero();
        for &v in self.value(x).data() {
            sum = sum + v;
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(sum), Op::SumAll { x }, rg, "sum")
    }

    /// One GRU direction over `x` (L, D); output (L, hidden) aligned with
    /// input positions. `reverse` runs right-to-left.
    pub fn gru(&mut self, x: Var, weights: GruWeights, reverse: bool) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op: "gru",
                details: format!("input rank {} != 2", xv.rank()),
            });
        }
        let (len, dim) = (xv.shape()[0], xv.shape()[1]);
        let wz = self.value(weights.wz);
        if wz.rank() != 2 || wz.shape()[0] != dim {
            return Err(Error::ShapeMismatch {
                op: "gru",
                details: format!("wz {:?} vs input dim {dim}", wz.shape()),
            });
        }
        let hidden = wz.shape()[1];
        for (name, var, want) in [
            ("wr", weights.wr, vec![dim, hidden]),
            ("wh", weights.wh, vec![dim, hidden]),
            ("uz", weights.uz, vec![hidden, hidden]),
            ("ur", weights.ur, vec![hidden, hidden]),
            ("uh", weights.uh, vec![hidden, hidden]),
            ("bz", weights.bz, vec![hidden]),
            ("br", weights.br, vec![hidden]),
            ("bh", weights.bh, vec![hidden]),
        ] {
            if self.value(var).shape() != want.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "gru",
                    details: format!("{name} {:?} vs {:?}", self.value(var).shape(), want),
                });
            }
        }

        // gather parameter slices up front to avoid borrow juggling
        let xs: Vec<T> = if reverse {
            let mut v = Vec::with_capacity(len * dim);
            for t in (0..len).rev() {
                v.extend_from_slice(&xv.data()[t * dim..(t + 1) * dim]);
            }
            v
        } else {
            xv.data().to_vec()
        };
        let wzd = self.value(weights.wz).data().to_vec();
        let wrd = self.value(weights.wr).data().to_vec();
        let whd = self.value(weights.wh).data().to_vec();
        let uzd = self.value(weights.uz).data().to_vec();
        let urd = self.value(weights.ur).data().to_vec();
        let uhd = self.value(weights.uh).data().to_vec();
        let bzd = self.value(weights.bz).data().to_vec();
        let brd = self.value(weights.br).data().to_vec();
        let bhd = self.value(weights.bh).data().to_vec();

        let mut cache = GruCache {
            z: vec![T::zero(); len * hidden],
            r: vec![T::zero(); len * hidden],
            c: vec![T::zero(); len * hidden],
            rh: vec![T::zero(); len * hidden],
            h: vec![T::zero(); len * hidden],
        };
        let mut h_prev = vec![T::zero(); hidden];
        let mut pre = vec![T::zero(); hidden];
        for t in 0..len {
            let x_t = &xs[t * dim..(t + 1) * dim];
            let row = t * hidden;

            // update gate
            pre.copy_from_slice(&bzd);
            matmul_accum(x_t, &wzd, &mut pre, 1, dim, hidden);
            matmul_accum(&h_prev, &uzd, &mut pre, 1, hidden, hidden);
            for (j, p) in pre.iter().enumerate() {
                cache.z[row + j] = sigmoid_scalar(*p);
            }

            // reset gate
            pre.copy_from_slice(&brd);
            matmul_accum(x_t, &wrd, &mut pre, 1, dim, hidden);
            matmul_accum(&h_prev, &urd, &mut pre, 1, hidden, hidden);
            for (j, p) in pre.iter().enumerate() {
                cache.r[row + j] = sigmoid_scalar(*p);
            }

            // candidate
            for j in 0..hidden {
                cache.rh[row + j] = cache.r[row + j] * h_prev[j];
            }
            pre.copy_from_slice(&bhd);
            matmul_accum(x_t, &whd, &mut pre, 1, dim, hidden);
            matmul_accum(&cache.rh[row..row + hidden], &uhd, &mut pre, 1, hidden, hidden);
            for (j, p) in pre.iter().enumerate() {
                cache.c[row + j] = p.tanh();
            }

            for j in 0..hidden {
                let z = cache.z[row + j];
                cache.h[row + j] = (T::one() - z) * h_prev[j] + z * cache.c[row + j];
            }
            h_prev.copy_from_slice(&cache.h[row..row + hidden]);
        }

        let out_data: Vec<T> = if reverse {
            let mut v = Vec::with_capacity(len * hidden);
            for t in (0..len).rev() {
                v.extend_from_slice(&cache.h[t * hidden..(t + 1) * hidden]);
            }
            v
        } else {
            cache.h.clone()
        };
        let rg = self.requires_grad(x)
            || self.any_grad(&[
                weights.wz, weights.wr, weights.wh, weights.uz, weights.ur, weights.uh,
                weights.bz, weights.br, weights.bh,
            ]);
        self.push(
            Tensor::new(vec![len, hidden], out_data)?,
            Op::Gru {
                x,
                weights,
                spec: GruSpec { reverse, hidden },
                cache,
            },
            rg,
            "gru",
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradients are populated for every
    /// `requires_grad` node reachable from the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backprop_node(id, &g, &mut grads)?;
            // keep leaf gradients; interior gradients are no longer needed
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(
        &self,
        id: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let da = grad_buf(grads, *a, av.shape());
                    matmul_a_bt_accum(g.data(), bv.data(), da, m, n, k);
                }
                if self.requires_grad(*b) {
                    let db = grad_buf(grads, *b, bv.shape());
                    matmul_at_b_accum(av.data(), g.data(), db, m, k, n);
                }
            }
            Op::Add { a, b } => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        let shape = self.value(*v).shape().to_vec();
                        let buf = grad_buf(grads, *v, &shape);
                        reduce_into(g, &shape, buf, |acc, gv, _| acc + gv, T::one());
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.requires_grad(*a) {
                    let shape = self.value(*a).shape().to_vec();
                    let factor = broadcast_binary(g, self.value(*b), |x, y| x * y)?;
                    let buf = grad_buf(grads, *a, &shape);
                    reduce_into(&factor, &shape, buf, |acc, gv, _| acc + gv, T::one());
                }
                if self.requires_grad(*b) {
                    let shape = self.value(*b).shape().to_vec();
                    let factor = broadcast_binary(g, self.value(*a), |x, y| x * y)?;
                    let buf = grad_buf(grads, *b, &shape);
                    reduce_into(&factor, &shape, buf, |acc, gv, _| acc + gv, T::one());
                }
            }
            Op::Concat { inputs, axis } => {
                let axis = *axis;
                let out_shape = node.value.shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total = out_shape[axis];
                let mut offset = 0usize;
                for &v in inputs {
                    let len = self.value(v).shape()[axis];
                    if self.requires_grad(v) {
                        let shape = self.value(v).shape().to_vec();
                        let buf = grad_buf(grads, v, &shape);
                        for o in 0..outer {
                            let src_base = o * total * inner + offset * inner;
                            let dst_base = o * len * inner;
                            for x in 0..len * inner {
                                buf[dst_base + x] = buf[dst_base + x] + g.data()[src_base + x];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let outer: usize = xshape[..*axis].iter().product();
                    let inner: usize = xshape[*axis + 1..].iter().product();
                    let len = node.value.shape()[*axis];
                    let full = xshape[*axis];
                    let buf = grad_buf(grads, *x, &xshape);
                    for o in 0..outer {
                        let dst_base = o * full * inner + start * inner;
                        let src_base = o * len * inner;
                        for i in 0..len * inner {
                            buf[dst_base + i] = buf[dst_base + i] + g.data()[src_base + i];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (b, gv) in buf.iter_mut().zip(g.data()) {
                        *b = *b + *gv;
                    }
                }
            }
            Op::Permute { x, perm } => {
                if self.requires_grad(*x) {
                    let mut inverse = vec![0usize; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let gp = permute_tensor(g, &inverse);
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (b, gv) in buf.iter_mut().zip(gp.data()) {
                        *b = *b + *gv;
                    }
                }
            }
            Op::Conv1d { x, w, spec } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (len, c_in) = (xv.shape()[0], xv.shape()[1]);
                let (window, c_out) = (wv.shape()[0], wv.shape()[2]);
                if self.requires_grad(*x) {
                    let buf = grad_buf(grads, *x, xv.shape());
                    for t in 0..spec.out_len {
                        let g_row = &g.data()[t * c_out..(t + 1) * c_out];
                        for dw in 0..window {
                            let pos = (t * spec.stride + dw) as isize - spec.pad_left as isize;
                            if pos < 0 || pos as usize >= len {
                                continue;
                            }
                            let k_base = dw * c_in * c_out;
                            let x_base = pos as usize * c_in;
                            for ci in 0..c_in {
                                let k_row = &wv.data()[k_base + ci * c_out..k_base + (ci + 1) * c_out];
                                let mut s = T::zero();
                                for j in 0..c_out {
                                    s = s + g_row[j] * k_row[j];
                                }
                                buf[x_base + ci] = buf[x_base + ci] + s;
                            }
                        }
                    }
                }
                if self.requires_grad(*w) {
                    let buf = grad_buf(grads, *w, wv.shape());
                    for t in 0..spec.out_len {
                        let g_row = &g.data()[t * c_out..(t + 1) * c_out];
                        for dw in 0..window {
                            let pos = (t * spec.stride + dw) as isize - spec.pad_left as isize;
                            if pos < 0 || pos as usize >= len {
                                continue;
                            }
                            let x_row = &xv.data()[pos as usize * c_in..(pos as usize + 1) * c_in];
                            let k_base = dw * c_in * c_out;
                            for (ci, &xval) in x_row.iter().enumerate() {
                                if xval == T::zero() {
                                    continue;
                                }
                                let k_row = &mut buf[k_base + ci * c_out..k_base + (ci + 1) * c_out];
                                for (j, kv) in k_row.iter_mut().enumerate() {
                                    *kv = *kv + xval * g_row[j];
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax, .. } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (oi, &si) in argmax.iter().enumerate() {
                        buf[si] = buf[si] + g.data()[oi];
                    }
                }
            }
            Op::AvgPool { x, spec, counts } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let (outer, len, inner) = split_axis(&xshape, spec.axis);
                    let buf = grad_buf(grads, *x, &xshape);
                    for o in 0..outer {
                        for b in 0..spec.bins {
                            let t0 = b * spec.stride;
                            let t1 = (t0 + spec.window).min(len);
                            let denom = T::of(counts[b] as f64);
                            for i in 0..inner {
                                let gv = g.data()[(o * spec.bins + b) * inner + i] / denom;
                                for t in t0..t1 {
                                    let si = (o * len + t) * inner + i;
                                    buf[si] = buf[si] + gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if self.requires_grad(*x) {
                    let s = &node.value;
                    let (outer, len, inner) = split_axis(s.shape(), *axis);
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |t: usize| (o * len + t) * inner + i;
                            let mut dot = T::zero();
                            for t in 0..len {
                                dot = dot + g.data()[idx(t)] * s.data()[idx(t)];
                            }
                            for t in 0..len {
                                let j = idx(t);
                                buf[j] = buf[j] + s.data()[j] * (g.data()[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, axis, inv_std } => {
                if self.requires_grad(*x) {
                    let xhat = &node.value;
                    let (outer, len, inner) = split_axis(xhat.shape(), *axis);
                    let nf = T::of(len as f64);
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |t: usize| (o * len + t) * inner + i;
                            let is = inv_std[o * inner + i];
                            let mut g_mean = T::zero();
                            let mut gx_mean = T::zero();
                            for t in 0..len {
                                let j = idx(t);
                                g_mean = g_mean + g.data()[j];
                                gx_mean = gx_mean + g.data()[j] * xhat.data()[j];
                            }
                            g_mean = g_mean / nf;
                            gx_mean = gx_mean / nf;
                            for t in 0..len {
                                let j = idx(t);
                                let d = (g.data()[j] - g_mean - xhat.data()[j] * gx_mean) * is;
                                buf[j] = buf[j] + d;
                            }
                        }
                    }
                }
            }
            Op::Gelu { x } => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x);
                    let xshape = xv.shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (i, (&xi, gv)) in xv.data().iter().zip(g.data()).enumerate() {
                        buf[i] = buf[i] + *gv * gelu_grad_scalar(xi);
                    }
                }
            }
            Op::Sigmoid { x } => {
                if self.requires_grad(*x) {
                    let s = &node.value;
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (i, (&si, gv)) in s.data().iter().zip(g.data()).enumerate() {
                        buf[i] = buf[i] + *gv * si * (T::one() - si);
                    }
                }
            }
            Op::Tanh { x } => {
                if self.requires_grad(*x) {
                    let y = &node.value;
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (i, (&yi, gv)) in y.data().iter().zip(g.data()).enumerate() {
                        buf[i] = buf[i] + *gv * (T::one() - yi * yi);
                    }
                }
            }
            Op::Relu { x } => {
                if self.requires_grad(*x) {
                    let xv = self.value(*x);
                    let xshape = xv.shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (i, (&xi, gv)) in xv.data().iter().zip(g.data()).enumerate() {
                        if xi > T::zero() {
                            buf[i] = buf[i] + *gv;
                        }
                    }
                }
            }
            Op::Dropout { x, mask } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let buf = grad_buf(grads, *x, &xshape);
                    for (i, (&m, gv)) in mask.iter().zip(g.data()).enumerate() {
                        buf[i] = buf[i] + *gv * m;
                    }
                }
            }
            Op::Gather { x, rows } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let dim = xshape[1];
                    let buf = grad_buf(grads, *x, &xshape);
                    for (i, &r) in rows.iter().enumerate() {
                        for d in 0..dim {
                            buf[r * dim + d] = buf[r * dim + d] + g.data()[i * dim + d];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                if self.requires_grad(*logits) {
                    let lshape = self.value(*logits).shape().to_vec();
                    let classes = lshape[1];
                    let scale = g.data()[0] / T::of(labels.len() as f64);
                    let buf = grad_buf(grads, *logits, &lshape);
                    for (r, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let j = r * classes + c;
                            let onehot = if c == label { T::one() } else { T::zero() };
                            buf[j] = buf[j] + (probs[j] - onehot) * scale;
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.requires_grad(*x) {
                    let xshape = self.value(*x).shape().to_vec();
                    let gv = g.data()[0];
                    let buf = grad_buf(grads, *x, &xshape);
                    for b in buf.iter_mut() {
                        *b = *b + gv;
                    }
                }
            }
            Op::Gru {
                x,
                weights,
                spec,
                cache,
            } => {
                self.backprop_gru(*x, weights, spec, cache, g, grads)?;
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_gru(
        &self,
        x: Var,
        weights: &GruWeights,
        spec: &GruSpec,
        cache: &GruCache<T>,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let xv = self.value(x);
        let (len, dim) = (xv.shape()[0], xv.shape()[1]);
        let hidden = spec.hidden;

        // inputs and output grads in processing order
        let xs: Vec<T> = if spec.reverse {
            let mut v = Vec::with_capacity(len * dim);
            for t in (0..len).rev() {
                v.extend_from_slice(&xv.data()[t * dim..(t + 1) * dim]);
            }
            v
        } else {
            xv.data().to_vec()
        };
        let gs: Vec<T> = if spec.reverse {
            let mut v = Vec::with_capacity(len * hidden);
            for t in (0..len).rev() {
                v.extend_from_slice(&g.data()[t * hidden..(t + 1) * hidden]);
            }
            v
        } else {
            g.data().to_vec()
        };

        let wzd = self.value(weights.wz).data().to_vec();
        let wrd = self.value(weights.wr).data().to_vec();
        let whd = self.value(weights.wh).data().to_vec();
        let uzd = self.value(weights.uz).data().to_vec();
        let urd = self.value(weights.ur).data().to_vec();
        let uhd = self.value(weights.uh).data().to_vec();

        let mut dx = vec![T::zero(); len * dim];
        let mut dwz = vec![T::zero(); dim * hidden];
        let mut dwr = vec![T::zero(); dim * hidden];
        let mut dwh = vec![T::zero(); dim * hidden];
        let mut duz = vec![T::zero(); hidden * hidden];
        let mut dur = vec![T::zero(); hidden * hidden];
        let mut duh = vec![T::zero(); hidden * hidden];
        let mut dbz = vec![T::zero(); hidden];
        let mut dbr = vec![T::zero(); hidden];
        let mut dbh = vec![T::zero(); hidden];

        let zero_h = vec![T::zero(); hidden];
        let mut carry = vec![T::zero(); hidden];
        let mut dzpre = vec![T::zero(); hidden];
        let mut drpre = vec![T::zero(); hidden];
        let mut dcpre = vec![T::zero(); hidden];
        let mut drh = vec![T::zero(); hidden];
        let mut dh_prev = vec![T::zero(); hidden];

        for t in (0..len).rev() {
            let row = t * hidden;
            let h_prev: &[T] = if t > 0 {
                &cache.h[(t - 1) * hidden..t * hidden]
            } else {
                &zero_h
            };
            for j in 0..hidden {
                let dh = gs[row + j] + carry[j];
                let z = cache.z[row + j];
                let c = cache.c[row + j];
                let dz = dh * (c - h_prev[j]);
                let dc = dh * z;
                dh_prev[j] = dh * (T::one() - z);
                dcpre[j] = dc * (T::one() - c * c);
                dzpre[j] = dz * z * (T::one() - z);
            }
            // candidate path: dWh, dUh, dbh, dx, drh
            let x_t = &xs[t * dim..(t + 1) * dim];
            outer_accum(x_t, &dcpre, &mut dwh, dim, hidden);
            outer_accum(&cache.rh[row..row + hidden], &dcpre, &mut duh, hidden, hidden);
            for j in 0..hidden {
                dbh[j] = dbh[j] + dcpre[j];
            }
            matmul_a_bt_accum(&dcpre, &whd, &mut dx[t * dim..(t + 1) * dim], 1, hidden, dim);
            for j in 0..hidden {
                drh[j] = T::zero();
            }
            matmul_a_bt_accum(&dcpre, &uhd, &mut drh, 1, hidden, hidden);
            for j in 0..hidden {
                let r = cache.r[row + j];
                let dr = drh[j] * h_prev[j];
                dh_prev[j] = dh_prev[j] + drh[j] * r;
                drpre[j] = dr * r * (T::one() - r);
            }
            // gate paths
            outer_accum(x_t, &dzpre, &mut dwz, dim, hidden);
            outer_accum(h_prev, &dzpre, &mut duz, hidden, hidden);
            outer_accum(x_t, &drpre, &mut dwr, dim, hidden);
            outer_accum(h_prev, &drpre, &mut dur, hidden, hidden);
            for j in 0..hidden {
                dbz[j] = dbz[j] + dzpre[j];
                dbr[j] = dbr[j] + drpre[j];
            }
            matmul_a_bt_accum(&dzpre, &wzd, &mut dx[t * dim..(t + 1) * dim], 1, hidden, dim);
            matmul_a_bt_accum(&drpre, &wrd, &mut dx[t * dim..(t + 1) * dim], 1, hidden, dim);
            matmul_a_bt_accum(&dzpre, &uzd, &mut dh_prev, 1, hidden, hidden);
            matmul_a_bt_accum(&drpre, &urd, &mut dh_prev, 1, hidden, hidden);
            carry.copy_from_slice(&dh_prev);
        }

        if self.requires_grad(x) {
            let buf = grad_buf(grads, x, &[len, dim]);
            if spec.reverse {
                for t in 0..len {
                    let src = &dx[(len - 1 - t) * dim..(len - t) * dim];
                    for d in 0..dim {
                        buf[t * dim + d] = buf[t * dim + d] + src[d];
                    }
                }
            } else {
                for (b, v) in buf.iter_mut().zip(&dx) {
                    *b = *b + *v;
                }
            }
        }
        for (var, delta, shape) in [
            (weights.wz, &dwz, vec![dim, hidden]),
            (weights.wr, &dwr, vec![dim, hidden]),
            (weights.wh, &dwh, vec![dim, hidden]),
            (weights.uz, &duz, vec![hidden, hidden]),
            (weights.ur, &dur, vec![hidden, hidden]),
            (weights.uh, &duh, vec![hidden, hidden]),
            (weights.bz, &dbz, vec![hidden]),
            (weights.br, &dbr, vec![hidden]),
            (weights.bh, &dbh, vec![hidden]),
        ] {
            if self.requires_grad(var) {
                let buf = grad_buf(grads, var, &shape);
                for (b, v) in buf.iter_mut().zip(delta) {
                    *b = *b + *v;
                }
            }
        }
        Ok(())
    }
}

/// out[i,j] += a[i] * b[j]
fn outer_accum<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, n: usize) {
    for (i, &ai) in a.iter().enumerate().take(m) {
        if ai == T::zero() {
            continue;
        }
        let row = &mut out[i * n..(i + 1) * n];
        for (j, bj) in b.iter().enumerate() {
            row[j] = row[j] + ai * *bj;
        }
    }
}

fn grad_buf<'a, T: Real>(
    grads: &'a mut [Option<Tensor<T>>],
    var: Var,
    shape: &[usize],
) -> &'a mut [T] {
    if grads[var.0].is_none() {
        grads[var.0] = Some(Tensor::zeros(shape));
    }
    grads[var.0].as_mut().unwrap().data_mut()
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn default_bins(shape: &[usize], axis: usize, window: usize, stride: usize) -> Result<usize> {
    if axis >= shape.len() || window == 0 || stride == 0 || window > shape[axis] {
        return Err(Error::ShapeMismatch {
            op: "pool",
            details: format!("axis {axis} window {window} stride {stride} of {shape:?}"),
        });
    }
    Ok((shape[axis] - window) / stride + 1)
}

fn check_pool(shape: &[usize], spec: &PoolSpec) -> Result<()> {
    if spec.axis >= shape.len()
        || spec.window == 0
        || spec.stride == 0
        || spec.bins == 0
        || (spec.bins - 1) * spec.stride >= shape[spec.axis]
    {
        return Err(Error::ShapeMismatch {
            op: "pool",
            details: format!(
                "axis {} window {} stride {} bins {} of {shape:?}",
                spec.axis, spec.window, spec.stride, spec.bins
            ),
        });
    }
    Ok(())
}

fn permute_tensor<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let in_shape = x.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = x.strides();
    let rank = perm.len();
    let mut data = vec![T::zero(); x.numel()];
    let mut idx = vec![0usize; rank];
    for v in data.iter_mut() {
        let mut src = 0usize;
        for d in 0..rank {
            src += idx[d] * in_strides[perm[d]];
        }
        *v = x.data()[src];
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, data).expect("permute preserves element count")
}

fn broadcast_binary<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    if b.numel() == 1 {
        let y = b.data()[0];
        let data = a.data().iter().map(|&x| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    if a.numel() == 1 {
        let x = a.data()[0];
        let shape = b.shape().to_vec();
        let data = b.data().iter().map(|&y| f(x, y)).collect();
        return Tensor::new(shape, data);
    }
    // suffix broadcast: b's shape equals the tail of a's
    if a.rank() >= b.rank() && a.shape()[a.rank() - b.rank()..] == *b.shape() {
        let bn = b.numel();
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, b.data()[i % bn]))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    // general case
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let rank = out_shape.len();
    let pad = |s: &Tensor<T>| -> (Vec<usize>, Vec<usize>) {
        let mut shape = vec![1usize; rank - s.rank()];
        shape.extend_from_slice(s.shape());
        let mut strides = vec![0usize; rank];
        let mut acc = 1usize;
        for d in (0..rank).rev() {
            strides[d] = if shape[d] == 1 { 0 } else { acc };
            acc *= shape[d];
        }
        (shape, strides)
    };
    let (_, sa) = pad(a);
    let (_, sb) = pad(b);
    let numel: usize = out_shape.iter().product();
    let mut data = vec![T::zero(); numel];
    let mut idx = vec![0usize; rank];
    for v in data.iter_mut() {
        let mut ia = 0usize;
        let mut ib = 0usize;
        for d in 0..rank {
            ia += idx[d] * sa[d];
            ib += idx[d] * sb[d];
        }
        *v = f(a.data()[ia], b.data()[ib]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `src` (full broadcast shape) into `buf` of `target_shape`.
fn reduce_into<T: Real>(
    src: &Tensor<T>,
    target_shape: &[usize],
    buf: &mut [T],
    f: impl Fn(T, T, T) -> T,
    aux: T,
) {
    if src.shape() == target_shape {
        for (b, &s) in buf.iter_mut().zip(src.data()) {
            *b = f(*b, s, aux);
        }
        return;
    }
    let tn: usize = target_shape.iter().product();
    if tn == 1 {
        let mut acc = buf[0];
        for &s in src.data() {
            acc = f(acc, s, aux);
        }
        buf[0] = acc;
        return;
    }
    // suffix case
    if src.rank() >= target_shape.len()
        && src.shape()[src.rank() - target_shape.len()..] == *target_shape
    {
        for (i, &s) in src.data().iter().enumerate() {
            let j = i % tn;
            buf[j] = f(buf[j], s, aux);
        }
        return;
    }
    // general case: walk src indices, mapping to target with stride-0 dims
    let rank = src.rank();
    let mut tshape = vec![1usize; rank - target_shape.len()];
    tshape.extend_from_slice(target_shape);
    let mut tstrides = vec![0usize; rank];
    let mut acc = 1usize;
    for d in (0..rank).rev() {
        tstrides[d] = if tshape[d] == 1 { 0 } else { acc };
        acc *= tshape[d];
    }
    let mut idx = vec![0usize; rank];
    let sshape = src.shape();
    for &s in src.data() {
        let mut ti = 0usize;
        for d in 0..rank {
            ti += idx[d] * tstrides[d];
        }
        buf[ti] = f(buf[ti], s, aux);
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < sshape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

fn sigmoid_scalar<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn gelu_scalar<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

impl<T: Real> Tensor<T> {
    fn clone_map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor::new(self.shape().to_vec(), self.data().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check, CheckOpts};

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.next_f64() * 4.0 - 2.0).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    /// Loss = sum(out ∘ probe) with a fixed pseudo-random probe, so every
    /// output element contributes a distinct weight.
    fn probe_loss(tape: &mut Tape<f64>, out: Var) -> Result<Var> {
        let shape = tape.value(out).shape().to_vec();
        let probe = randn(&shape, 0xabcdef);
        let p = tape.constant(probe);
        let prod = tape.mul(out, p)?;
        tape.sum_all(prod)
    }

    fn assert_grads_ok<F>(inputs: &[Tensor<f64>], build: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    {
        let report = check(inputs, &CheckOpts::default(), build).unwrap();
        assert!(
            report.max_rel_err < 1e-3,
            "max rel err {} at {:?} over {} checks",
            report.max_rel_err,
            report.worst,
            report.checked
        );
    }

    // ── forward-value examples ───────────────────────────────────────

    #[test]
    fn gelu_at_zero_is_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1], &[0.0]).unwrap());
        let y = tape.gelu(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1], &[0.0]).unwrap());
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.5);
    }

    #[test]
    fn permute_axis_swap_shape() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[12, 4, 200, 8]));
        let y = tape.permute(x, vec![1, 0, 2, 3]).unwrap();
        assert_eq!(tape.value(y).shape(), &[4, 12, 200, 8]);
    }

    #[test]
    fn permute_values_move_correctly() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(randn(&[3, 4, 5], 7));
        let y = tape.permute(x, vec![1, 0, 2]).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                for k in 0..5 {
                    assert_eq!(tape.value(y).at(&[j, i, k]), tape.value(x).at(&[i, j, k]));
                }
            }
        }
    }

    #[test]
    fn max_pool_window2_stride2() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[4], &[1.0, 3.0, 2.0, 5.0]).unwrap());
        let y = tape.max_pool(x, 0, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(randn(&[5, 9], 3));
        let y = tape.softmax(x, 1).unwrap();
        for r in 0..5 {
            let sum: f64 = (0..9).map(|c| tape.value(y).at(&[r, c])).sum();
            assert!((sum - 1.0).abs() < 1e-9);
            for c in 0..9 {
                let v = tape.value(y).at(&[r, c]);
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(randn(&[6, 16], 11));
        let y = tape.layer_norm(x, 1, 1e-5).unwrap();
        for r in 0..6 {
            let row: Vec<f64> = (0..16).map(|c| tape.value(y).at(&[r, c])).collect();
            let mean: f64 = row.iter().sum::<f64>() / 16.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn dropout_rate_zero_is_identity() {
        let mut tape = Tape::<f64>::new();
        let input = randn(&[10], 2);
        let x = tape.constant(input.clone());
        let mut rng = Rng::new(0);
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(y).data(), input.data());
    }

    #[test]
    fn dropout_preserves_expectation_over_seeds() {
        let input = Tensor::<f64>::from_f64(&[8], &[1.0; 8]).unwrap();
        let mut acc = vec![0.0f64; 8];
        let seeds = 1000;
        for s in 0..seeds {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(input.clone());
            let mut rng = Rng::new(s);
            let y = tape.dropout(x, 0.3, &mut rng).unwrap();
            for (a, v) in acc.iter_mut().zip(tape.value(y).data()) {
                *a += v;
            }
        }
        for a in &acc {
            let mean = a / seeds as f64;
            assert!((mean - 1.0).abs() < 0.05, "seed-averaged mean {mean}");
        }
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64(&[1], &[1e308]).unwrap());
        let doubled = tape.add(x, x);
        assert!(matches!(doubled, Err(Error::NonFiniteValue { .. })));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(randn(&[3], 1), true);
        let y = tape.relu(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NotScalarLoss(_))));
    }

    #[test]
    fn same_seed_bit_identical_forward_backward() {
        let run = || {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(randn(&[4, 6], 42), true);
            let mut rng = Rng::new(9);
            let d = tape.dropout(x, 0.2, &mut rng).unwrap();
            let s = tape.softmax(d, 1).unwrap();
            let loss = probe_loss(&mut tape, s).unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                tape.value(loss).data()[0],
                grads.get(x).unwrap().data().to_vec(),
            )
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.len(), g2.len());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // ── hand-derived gradient examples ───────────────────────────────

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(&[1], &[0.0]).unwrap(), true);
        let s = tape.sigmoid(x).unwrap();
        let loss = tape.sum_all(s).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!((grads.get(x).unwrap().data()[0] - 0.25).abs() < 1e-12);
    }

    // ── finite-difference oracle per op kind ─────────────────────────

    #[test]
    fn fd_matmul() {
        assert_grads_ok(&[randn(&[3, 4], 1), randn(&[4, 5], 2)], |tape, vars| {
            let y = tape.matmul(vars[0], vars[1])?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_add_broadcast() {
        assert_grads_ok(&[randn(&[3, 4], 1), randn(&[4], 2)], |tape, vars| {
            let y = tape.add(vars[0], vars[1])?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_mul_broadcast_middle_axes() {
        // layer-attention style: (N,W,C) * (N,1,1)
        assert_grads_ok(&[randn(&[3, 4, 2], 1), randn(&[3, 1, 1], 2)], |tape, vars| {
            let y = tape.mul(vars[0], vars[1])?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_concat_slice() {
        assert_grads_ok(&[randn(&[3, 2], 1), randn(&[3, 5], 2)], |tape, vars| {
            let y = tape.concat(&[vars[0], vars[1]], 1)?;
            let z = tape.slice(y, 1, 1, 4)?;
            probe_loss(tape, z)
        });
    }

    #[test]
    fn fd_reshape_permute() {
        assert_grads_ok(&[randn(&[2, 3, 4], 1)], |tape, vars| {
            let y = tape.permute(vars[0], vec![2, 0, 1])?;
            let z = tape.reshape(y, vec![4, 6])?;
            probe_loss(tape, z)
        });
    }

    #[test]
    fn fd_conv1d_same() {
        assert_grads_ok(&[randn(&[7, 3], 1), randn(&[3, 3, 4], 2)], |tape, vars| {
            let y = tape.conv1d(vars[0], vars[1], 1, Padding::Same)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_conv1d_valid_stride2() {
        assert_grads_ok(&[randn(&[9, 2], 1), randn(&[2, 2, 3], 2)], |tape, vars| {
            let y = tape.conv1d(vars[0], vars[1], 2, Padding::Valid)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_max_pool() {
        assert_grads_ok(&[randn(&[2, 9, 3], 1)], |tape, vars| {
            let y = tape.max_pool(vars[0], 1, 3, 2)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_avg_pool() {
        assert_grads_ok(&[randn(&[2, 8, 3], 1)], |tape, vars| {
            let y = tape.avg_pool(vars[0], 1, 4, 2)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_softmax() {
        assert_grads_ok(&[randn(&[4, 6], 1)], |tape, vars| {
            let y = tape.softmax(vars[0], 1)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_layer_norm() {
        assert_grads_ok(&[randn(&[5, 8], 1)], |tape, vars| {
            let y = tape.layer_norm(vars[0], 1, 1e-5)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_activations() {
        for build_id in 0..4 {
            assert_grads_ok(&[randn(&[13], 1)], |tape, vars| {
                let y = match build_id {
                    0 => tape.gelu(vars[0])?,
                    1 => tape.sigmoid(vars[0])?,
                    2 => tape.tanh(vars[0])?,
                    _ => tape.relu(vars[0])?,
                };
                probe_loss(tape, y)
            });
        }
    }

    #[test]
    fn fd_dropout_fixed_mask() {
        assert_grads_ok(&[randn(&[10], 1)], |tape, vars| {
            let mut rng = Rng::new(77);
            let y = tape.dropout(vars[0], 0.4, &mut rng)?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_embedding_lookup() {
        assert_grads_ok(&[randn(&[6, 4], 1)], |tape, vars| {
            let y = tape.embedding_lookup(vars[0], &[0, 3, 3, 5])?;
            probe_loss(tape, y)
        });
    }

    #[test]
    fn fd_cross_entropy() {
        assert_grads_ok(&[randn(&[4, 3], 1)], |tape, vars| {
            tape.cross_entropy_with_logits(vars[0], &[0, 2, 1, 2])
        });
    }

    #[test]
    fn fd_gru_both_directions() {
        for reverse in [false, true] {
            let inputs = vec![
                randn(&[5, 3], 1),      // x
                randn(&[3, 4], 2),      // wz
                randn(&[3, 4], 3),      // wr
                randn(&[3, 4], 4),      // wh
                randn(&[4, 4], 5),      // uz
                randn(&[4, 4], 6),      // ur
                randn(&[4, 4], 7),      // uh
                randn(&[4], 8),         // bz
                randn(&[4], 9),         // br
                randn(&[4], 10),        // bh
            ];
            assert_grads_ok(&inputs, |tape, vars| {
                let weights = GruWeights {
                    wz: vars[1],
                    wr: vars[2],
                    wh: vars[3],
                    uz: vars[4],
                    ur: vars[5],
                    uh: vars[6],
                    bz: vars[7],
                    br: vars[8],
                    bh: vars[9],
                };
                let h = tape.gru(vars[0], weights, reverse)?;
                probe_loss(tape, h)
            });
        }
    }

    #[test]
    fn gru_zero_params_zero_output() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(randn(&[4, 3], 1));
        let zeros2 = |t: &mut Tape<f64>, s: &[usize]| t.constant(Tensor::zeros(s));
        let weights = GruWeights {
            wz: zeros2(&mut tape, &[3, 4]),
            wr: zeros2(&mut tape, &[3, 4]),
            wh: zeros2(&mut tape, &[3, 4]),
            uz: zeros2(&mut tape, &[4, 4]),
            ur: zeros2(&mut tape, &[4, 4]),
            uh: zeros2(&mut tape, &[4, 4]),
            bz: zeros2(&mut tape, &[4]),
            br: zeros2(&mut tape, &[4]),
            bh: zeros2(&mut tape, &[4]),
        };
        let h = tape.gru(x, weights, false).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }
}
