//! Scaled dot-product attention over token sets: the per-subspace operator,
//! whole-video baseline variants, analytic gradients, and cost accounting.
//!
//! Every attention call here runs the same kernel: project queries, keys,
//! and values, split the model dimension into heads, take
//! `softmax(Q Kᵀ / sqrt(d_head)) V` per head with row-wise max subtraction,
//! concatenate heads, and project back out. Multiply-accumulate counts can
//! be recorded in a [`MacTally`] to compare measured work against the
//! closed-form [`cost_model`](crate::attention::cost_model).

mod backward;
mod block;
mod cost;
mod variants;

pub use backward::{attention_backward, AttentionGrads, ParamGrads};
pub use block::{stsa_block, stsa_block_backward, stsa_block_counted, StsaOptions};
pub use cost::{cost_model, AttentionMode, CostDims, CostReport, CrossFrameMode};
pub use variants::{
    crossframe_attention, crossframe_attention_counted, full_attention, full_attention_counted,
    full_attention_masked, subspace_mask, temporal_attention, temporal_attention_counted,
    temporal_mask, DEFAULT_TOKEN_CAP,
};

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, standard_normal};
use crate::scalar::Scalar;
use crate::tensor::io::{load_records, write_record, DynTensor};

/// Projection matrices for one attention operator.
///
/// `w_q`, `w_k`, `w_v` map channels to the model dimension `d`; `w_o` maps
/// back. The model dimension is split evenly across `heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T: Scalar> {
    w_q: Array2<T>,
    w_k: Array2<T>,
    w_v: Array2<T>,
    w_o: Array2<T>,
    heads: usize,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn new(
        w_q: Array2<T>,
        w_k: Array2<T>,
        w_v: Array2<T>,
        w_o: Array2<T>,
        heads: usize,
    ) -> Result<Self> {
        let (channels, d_model) = w_q.dim();
        if channels == 0 || d_model == 0 {
            return Err(Error::Config(
                "attention projections must be non-empty".into(),
            ));
        }
        for (name, m) in [("w_k", &w_k), ("w_v", &w_v)] {
            if m.dim() != (channels, d_model) {
                return Err(Error::ShapeMismatch {
                    context: name,
                    expected: vec![channels, d_model],
                    got: m.shape().to_vec(),
                });
            }
        }
        if w_o.dim() != (d_model, channels) {
            return Err(Error::ShapeMismatch {
                context: "w_o",
                expected: vec![d_model, channels],
                got: w_o.shape().to_vec(),
            });
        }
        if heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        if d_model % heads != 0 {
            return Err(Error::NotDivisible {
                what: "model dimension",
                value: d_model,
                divisor: heads,
            });
        }
        for m in [&w_q, &w_k, &w_v, &w_o] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "attention parameters",
                });
            }
        }
        Ok(AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o,
            heads,
        })
    }

    /// Deterministic random initialization: entries drawn from a normal
    /// distribution scaled by the inverse square root of the input width.
    pub fn seeded(channels: usize, d_model: usize, heads: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let scale = T::from_f64(1.0 / (fan_in as f64).sqrt());
            Array2::from_shape_simple_fn((rows, cols), || standard_normal::<T>(&mut rng) * scale)
        };
        let w_q = draw(channels, d_model, channels);
        let w_k = draw(channels, d_model, channels);
        let w_v = draw(channels, d_model, channels);
        let w_o = draw(d_model, channels, d_model);
        AttentionParams::new(w_q, w_k, w_v, w_o, heads)
    }

    pub fn channels(&self) -> usize {
        self.w_q.dim().0
    }

    pub fn d_model(&self) -> usize {
        self.w_q.dim().1
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn d_head(&self) -> usize {
        self.d_model() / self.heads
    }

    pub fn w_q(&self) -> &Array2<T> {
        &self.w_q
    }

    pub fn w_k(&self) -> &Array2<T> {
        &self.w_k
    }

    pub fn w_v(&self) -> &Array2<T> {
        &self.w_v
    }

    pub fn w_o(&self) -> &Array2<T> {
        &self.w_o
    }

    pub fn cast<U: Scalar>(&self) -> AttentionParams<U> {
        let c = |m: &Array2<T>| m.mapv(|v| U::from_f64(v.to_f64()));
        AttentionParams {
            w_q: c(&self.w_q),
            w_k: c(&self.w_k),
            w_v: c(&self.w_v),
            w_o: c(&self.w_o),
            heads: self.heads,
        }
    }

    /// Gradient-descent step: `w -= lr * grad`, in place.
    pub fn apply_gradients(&mut self, grads: &ParamGrads<T>, lr: T) -> Result<()> {
        for (w, g) in [
            (&mut self.w_q, &grads.w_q),
            (&mut self.w_k, &grads.w_k),
            (&mut self.w_v, &grads.w_v),
            (&mut self.w_o, &grads.w_o),
        ] {
            if w.dim() != g.dim() {
                return Err(Error::ShapeMismatch {
                    context: "parameter gradient",
                    expected: vec![w.dim().0, w.dim().1],
                    got: vec![g.dim().0, g.dim().1],
                });
            }
            ndarray::Zip::from(&mut *w).and(g).for_each(|w, &g| {
                *w -= lr * g;
            });
        }
        Ok(())
    }
}

/// Save projections as four stacked tensor records (`w_q`, `w_k`, `w_v`,
/// `w_o` in that order). The head count is not stored; it is a runtime
/// choice re-supplied at load time.
pub fn save_params<T: Scalar>(path: impl AsRef<Path>, params: &AttentionParams<T>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for m in [&params.w_q, &params.w_k, &params.w_v, &params.w_o] {
        write_record(&mut w, &DynTensor::from_array(m.clone()))?;
    }
    Ok(())
}

/// Load projections saved by [`save_params`].
pub fn load_params<T: Scalar>(path: impl AsRef<Path>, heads: usize) -> Result<AttentionParams<T>> {
    let records = load_records(path)?;
    if records.len() != 4 {
        return Err(Error::Format(format!(
            "parameter file must hold exactly 4 matrices, found {}",
            records.len()
        )));
    }
    let mut matrices = Vec::with_capacity(4);
    for rec in records {
        let shape = rec.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::Format(format!(
                "parameter record must be rank 2, got shape {shape:?}"
            )));
        }
        let arr = rec.cast_into::<T>();
        matrices.push(
            arr.into_dimensionality::<ndarray::Ix2>()
                .map_err(|e| Error::Format(format!("parameter record: {e}")))?,
        );
    }
    let w_o = matrices.pop().unwrap();
    let w_v = matrices.pop().unwrap();
    let w_k = matrices.pop().unwrap();
    let w_q = matrices.pop().unwrap();
    AttentionParams::new(w_q, w_k, w_v, w_o, heads)
}

/// Multiply-accumulate counts for a run, split by where they occur, plus the
/// largest token buffer any single attention call held.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MacTally {
    /// MACs spent projecting Q, K, V and the output.
    pub projection: u64,
    /// MACs spent on `Q Kᵀ` score matrices.
    pub score: u64,
    /// MACs spent applying attention weights to values.
    pub value: u64,
    /// Max over calls of max(query tokens, key/value tokens).
    pub peak_tokens: usize,
}

impl MacTally {
    pub fn total_macs(&self) -> u64 {
        self.projection + self.score + self.value
    }
}

fn macs(m: usize, k: usize, n: usize) -> u64 {
    m as u64 * k as u64 * n as u64
}

/// Keys and values already projected to the model dimension, reusable
/// across query sets.
pub(crate) struct ProjectedKv<T> {
    k: Array2<T>,
    v: Array2<T>,
}

impl<T: Scalar> ProjectedKv<T> {
    pub(crate) fn rows(&self) -> usize {
        self.k.dim().0
    }

    pub(crate) fn stack(parts: &[&ProjectedKv<T>]) -> ProjectedKv<T> {
        let d = parts[0].k.dim().1;
        let rows: usize = parts.iter().map(|p| p.rows()).sum();
        let mut k = Array2::zeros((rows, d));
        let mut v = Array2::zeros((rows, d));
        let mut at = 0;
        for p in parts {
            let n = p.rows();
            k.slice_mut(s![at..at + n, ..]).assign(&p.k);
            v.slice_mut(s![at..at + n, ..]).assign(&p.v);
            at += n;
        }
        ProjectedKv { k, v }
    }
}

pub(crate) fn project_kv<T: Scalar>(
    tokens: &Array2<T>,
    params: &AttentionParams<T>,
    tally: &mut MacTally,
) -> Result<ProjectedKv<T>> {
    let (n, c) = tokens.dim();
    if c != params.channels() {
        return Err(Error::ShapeMismatch {
            context: "attention tokens",
            expected: vec![n, params.channels()],
            got: vec![n, c],
        });
    }
    let d = params.d_model();
    let k = tokens.dot(&params.w_k);
    let v = tokens.dot(&params.w_v);
    tally.projection += 2 * macs(n, c, d);
    Ok(ProjectedKv { k, v })
}

/// Row-wise softmax with max subtraction. Entries at `false` mask positions
/// contribute nothing; every row must keep at least one visible entry.
fn masked_softmax_rows<T: Scalar>(
    scores: &mut Array2<T>,
    mask: Option<&ndarray::ArrayView2<'_, bool>>,
) -> Result<()> {
    let (rows, cols) = scores.dim();
    if let Some(m) = mask {
        if m.dim() != (rows, cols) {
            return Err(Error::ShapeMismatch {
                context: "attention mask",
                expected: vec![rows, cols],
                got: vec![m.dim().0, m.dim().1],
            });
        }
    }
    for r in 0..rows {
        let mut max = T::neg_infinity();
        for c in 0..cols {
            let visible = mask.is_none_or(|m| m[(r, c)]);
            if visible && scores[(r, c)] > max {
                max = scores[(r, c)];
            }
        }
        if max == T::neg_infinity() {
            return Err(Error::Config(format!(
                "attention mask leaves row {r} with no visible entries"
            )));
        }
        let mut sum = T::zero();
        for c in 0..cols {
            let visible = mask.is_none_or(|m| m[(r, c)]);
            let e = if visible {
                (scores[(r, c)] - max).exp()
            } else {
                T::zero()
            };
            scores[(r, c)] = e;
            sum += e;
        }
        for c in 0..cols {
            scores[(r, c)] = scores[(r, c)] / sum;
        }
    }
    Ok(())
}

/// Core kernel: project queries from `q_tokens`, attend over the projected
/// keys/values, concatenate heads, project out.
pub(crate) fn attend_with_kv<T: Scalar>(
    q_tokens: &Array2<T>,
    kv: &ProjectedKv<T>,
    params: &AttentionParams<T>,
    mask: Option<&ndarray::ArrayView2<'_, bool>>,
    tally: &mut MacTally,
) -> Result<Array2<T>> {
    let (nq, c) = q_tokens.dim();
    if c != params.channels() {
        return Err(Error::ShapeMismatch {
            context: "attention tokens",
            expected: vec![nq, params.channels()],
            got: vec![nq, c],
        });
    }
    let d = params.d_model();
    let dh = params.d_head();
    let nkv = kv.rows();
    let q = q_tokens.dot(&params.w_q);
    tally.projection += macs(nq, c, d);
    tally.peak_tokens = tally.peak_tokens.max(nq.max(nkv));
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut heads_out = Array2::zeros((nq, d));
    for h in 0..params.heads() {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = kv.k.slice(s![.., cols.clone()]);
        let vh = kv.v.slice(s![.., cols.clone()]);
        let mut scores = qh.dot(&kh.t());
        tally.score += macs(nq, dh, nkv);
        scores.mapv_inplace(|v| v * scale);
        masked_softmax_rows(&mut scores, mask)?;
        let oh = scores.dot(&vh);
        tally.value += macs(nq, nkv, dh);
        heads_out.slice_mut(s![.., cols]).assign(&oh);
    }
    let out = heads_out.dot(&params.w_o);
    tally.projection += macs(nq, d, c);
    Ok(out)
}

pub(crate) fn attend<T: Scalar>(
    q_tokens: &Array2<T>,
    kv_tokens: &Array2<T>,
    params: &AttentionParams<T>,
    mask: Option<&ndarray::ArrayView2<'_, bool>>,
    tally: &mut MacTally,
) -> Result<Array2<T>> {
    let kv = project_kv(kv_tokens, params, tally)?;
    attend_with_kv(q_tokens, &kv, params, mask, tally)
}

pub(crate) fn check_finite<T: Scalar>(tokens: &Array2<T>) -> Result<()> {
    if tokens.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "attention tokens",
        });
    }
    Ok(())
}

/// Self-attention over one subspace's tokens `[n, C]`, returning `[n, C]`.
pub fn subspace_attention<T: Scalar>(
    tokens: &Array2<T>,
    params: &AttentionParams<T>,
) -> Result<Array2<T>> {
    let mut tally = MacTally::default();
    subspace_attention_counted(tokens, params, &mut tally)
}

/// [`subspace_attention`] that also records its multiply-accumulate counts.
pub fn subspace_attention_counted<T: Scalar>(
    tokens: &Array2<T>,
    params: &AttentionParams<T>,
    tally: &mut MacTally,
) -> Result<Array2<T>> {
    if tokens.dim().0 == 0 {
        return Err(Error::Config("attention needs at least one token".into()));
    }
    check_finite(tokens)?;
    attend(tokens, tokens, params, None, tally)
}
