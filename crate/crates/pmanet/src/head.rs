//! Feature head: merge the two channels per layer, stack layers, weight
//! them with channel attention over the layer axis, pool with a spatial
//! pyramid, and classify.

use crate::error::{Error, Result};
use crate::model::Bound;
use crate::rng::Rng;
use crate::tape::{Padding, Tape, Var};
use crate::tensor::Real;

/// Merge one layer's (T, H) pair: concat on the feature axis, then the
/// shared window-1 convolution back to width C.
pub fn merge_layer<T: Real>(tape: &mut Tape<T>, bound: &Bound<T>, t: Var, h: Var) -> Result<Var> {
    let cat = tape.concat(&[t, h], 1)?;
    let conv = tape.conv1d(cat, bound.var("merge.w"), 1, Padding::Same)?;
    tape.add(conv, bound.var("merge.b"))
}

/// Merge and stack one sample's per-layer outputs into an (N_stack, W, C)
/// block, keeping only the last `stack_layers` when configured.
pub fn stack_sample<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    dual: &[(Var, Var)],
) -> Result<Var> {
    let cfg = bound.config();
    let n_stack = cfg.n_stack();
    if dual.len() < n_stack {
        return Err(Error::ShapeMismatch {
            op: "stack",
            details: format!("{} layer outputs, need {n_stack}", dual.len()),
        });
    }
    let skip = dual.len() - n_stack;
    let mut slices = Vec::with_capacity(n_stack);
    for &(t, h) in &dual[skip..] {
        let merged = merge_layer(tape, bound, t, h)?;
        let shape = tape.value(merged).shape().to_vec();
        slices.push(tape.reshape(merged, vec![1, shape[0], shape[1]])?);
    }
    tape.concat(&slices, 0)
}

/// Merge and stack a whole batch into one (batch, N, W, C) block: stack
/// along a new layer axis first, then swap the first two axes.
pub fn build_stack<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    batch: &[Vec<(Var, Var)>],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::DataEmpty);
    }
    let mut samples = Vec::with_capacity(batch.len());
    for dual in batch {
        let stack = stack_sample(tape, bound, dual)?; // (N, W, C)
        let shape = tape.value(stack).shape().to_vec();
        samples.push(tape.reshape(stack, vec![shape[0], 1, shape[1], shape[2]])?);
    }
    let x = tape.concat(&samples, 1)?; // (N, batch, W, C)
    tape.permute(x, vec![1, 0, 2, 3]) // (batch, N, W, C)
}

/// Channel attention over the layer axis: sigmoid(MLP(avg) + MLP(max))
/// scales each layer's (W, C) plane. Input and output are (N, W, C).
pub fn layer_attention<T: Real>(tape: &mut Tape<T>, bound: &Bound<T>, stack: Var) -> Result<Var> {
    let shape = tape.value(stack).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "layer_attention",
            details: format!("stack {shape:?}"),
        });
    }
    let (n, w, c) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(stack, vec![n, w * c])?;
    let avg = tape.avg_pool(flat, 1, w * c, w * c)?; // (N, 1)
    let max = tape.max_pool(flat, 1, w * c, w * c)?; // (N, 1)
    let w0 = bound.var("lattn.w0");
    let w1 = bound.var("lattn.w1");
    let mlp = |tape: &mut Tape<T>, x: Var| -> Result<Var> {
        let h = tape.matmul(w0, x)?; // (hidden, 1)
        let h = tape.relu(h)?;
        tape.matmul(w1, h) // (N, 1)
    };
    let a = mlp(tape, avg)?;
    let b = mlp(tape, max)?;
    let sum = tape.add(a, b)?;
    let m = tape.sigmoid(sum)?; // (N, 1), entries strictly in (0,1)
    let m = tape.reshape(m, vec![n, 1, 1])?;
    tape.mul(stack, m)
}

/// Attention map alone (per-layer weights in (0,1)), for inspection.
pub fn attention_map<T: Real>(tape: &mut Tape<T>, bound: &Bound<T>, stack: Var) -> Result<Var> {
    let shape = tape.value(stack).shape().to_vec();
    let (n, w, c) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(stack, vec![n, w * c])?;
    let avg = tape.avg_pool(flat, 1, w * c, w * c)?;
    let max = tape.max_pool(flat, 1, w * c, w * c)?;
    let w0 = bound.var("lattn.w0");
    let w1 = bound.var("lattn.w1");
    let ha = tape.matmul(w0, avg)?;
    let ha = tape.relu(ha)?;
    let a = tape.matmul(w1, ha)?;
    let hb = tape.matmul(w0, max)?;
    let hb = tape.relu(hb)?;
    let b = tape.matmul(w1, hb)?;
    let sum = tape.add(a, b)?;
    let m = tape.sigmoid(sum)?;
    tape.reshape(m, vec![n])
}

/// Pyramid window/stride for one level over an axis of length `w`.
pub fn spp_geometry(w: usize, level: usize) -> Result<(usize, usize)> {
    if level < 1 || level > w {
        return Err(Error::InvalidLevel {
            level,
            axis_len: w,
        });
    }
    Ok((w.div_ceil(level), w / level))
}

/// Spatial pyramid pooling over the position axis of an (N, W, C) block.
/// Output is ((sum of levels) * N, C); its element count depends only on
/// (N, C, levels), never on W.
pub fn spp<T: Real>(tape: &mut Tape<T>, weighted: Var, levels: &[usize]) -> Result<Var> {
    let shape = tape.value(weighted).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "spp",
            details: format!("expected (N, W, C), got {shape:?}"),
        });
    }
    let (n, w, c) = (shape[0], shape[1], shape[2]);
    let mut parts = Vec::with_capacity(levels.len());
    for &level in levels {
        let (win, stride) = spp_geometry(w, level)?;
        let pooled = tape.max_pool_bins(weighted, 1, win, stride.max(1), level)?; // (N, level, C)
        parts.push(tape.reshape(pooled, vec![n * level, c])?);
    }
    tape.concat(&parts, 0)
}

/// Flattened SPP feature vector (the public fixed-length feature).
pub fn spp_vector<T: Real>(tape: &mut Tape<T>, weighted: Var, levels: &[usize]) -> Result<Var> {
    let grouped = spp(tape, weighted, levels)?;
    let numel = tape.value(grouped).numel();
    tape.reshape(grouped, vec![numel])
}

/// Mean-pool the SPP groups down to a C-wide summary, apply dropout and
/// the affine classifier; returns logits of shape (1, K).
pub fn classify<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound<T>,
    spp_features: Var,
    train: bool,
    rng: &mut Rng,
) -> Result<Var> {
    let cfg = bound.config();
    let shape = tape.value(spp_features).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "classify",
            details: format!("expected (groups, C), got {shape:?}"),
        });
    }
    let groups = shape[0];
    let pooled = tape.avg_pool(spp_features, 0, groups, groups)?; // (1, C)
    let rate = if train { cfg.dropout } else { 0.0 };
    let dropped = tape.dropout(pooled, rate, rng)?;
    let logits = tape.matmul(dropped, bound.var("cls.w"))?;
    tape.add(logits, bound.var("cls.b"))
}
