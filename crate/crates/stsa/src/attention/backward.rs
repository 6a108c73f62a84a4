//! Analytic gradients of the per-subspace attention forward pass.
//!
//! The backward pass recomputes the forward intermediates (token counts are
//! small, so recomputation beats caching) and walks the chain in reverse:
//! output projection, per-head value mixing, the softmax Jacobian, the score
//! matmuls, and finally the input projections. Double precision is enforced
//! at run time; single-precision gradients are too inaccurate to verify, so
//! they are refused rather than returned silently wrong.

use ndarray::{s, Array2};

use crate::attention::{check_finite, AttentionParams};
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

/// Gradients with respect to the four projection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T: Scalar> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_o: Array2<T>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros(channels: usize, d_model: usize) -> Self {
        ParamGrads {
            w_q: Array2::zeros((channels, d_model)),
            w_k: Array2::zeros((channels, d_model)),
            w_v: Array2::zeros((channels, d_model)),
            w_o: Array2::zeros((d_model, channels)),
        }
    }

    /// Accumulate another gradient contribution in place.
    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        self.w_q += &other.w_q;
        self.w_k += &other.w_k;
        self.w_v += &other.w_v;
        self.w_o += &other.w_o;
    }

    /// Largest absolute entry across all four matrices.
    pub fn max_abs(&self) -> f64 {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_o]
            .iter()
            .flat_map(|m| m.iter())
            .map(|v| Scalar::to_f64(*v).abs())
            .fold(0.0, f64::max)
    }
}

/// Gradients of one attention call: with respect to the input tokens and to
/// the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T: Scalar> {
    pub tokens: Array2<T>,
    pub params: ParamGrads<T>,
}

/// Analytic gradients of [`subspace_attention`] at `tokens`, contracted
/// with `upstream` (the gradient of the loss with respect to the output).
///
/// [`subspace_attention`]: crate::attention::subspace_attention
pub fn attention_backward<T: Scalar>(
    tokens: &Array2<T>,
    params: &AttentionParams<T>,
    upstream: &Array2<T>,
) -> Result<AttentionGrads<T>> {
    if T::PRECISION != Precision::Double {
        return Err(Error::PrecisionGuard {
            op: "attention_backward",
        });
    }
    let (n, c) = tokens.dim();
    if c != params.channels() {
        return Err(Error::ShapeMismatch {
            context: "attention tokens",
            expected: vec![n, params.channels()],
            got: vec![n, c],
        });
    }
    if upstream.dim() != (n, c) {
        return Err(Error::ShapeMismatch {
            context: "upstream gradient",
            expected: vec![n, c],
            got: upstream.shape().to_vec(),
        });
    }
    check_finite(tokens)?;
    check_finite(upstream)?;

    let d = params.d_model();
    let dh = params.d_head();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());

    // Forward intermediates.
    let q = tokens.dot(params.w_q());
    let k = tokens.dot(params.w_k());
    let v = tokens.dot(params.w_v());
    let mut weights: Vec<Array2<T>> = Vec::with_capacity(params.heads());
    let mut heads_out = Array2::zeros((n, d));
    for h in 0..params.heads() {
        let cols = h * dh..(h + 1) * dh;
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let mut a = qh.dot(&kh.t());
        a.mapv_inplace(|x| x * scale);
        for mut row in a.rows_mut() {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        heads_out.slice_mut(s![.., cols]).assign(&a.dot(&vh));
        weights.push(a);
    }

    // Backward.
    let grad_w_o = heads_out.t().dot(upstream);
    let grad_heads = upstream.dot(&params.w_o().t());
    let mut grad_q = Array2::zeros((n, d));
    let mut grad_k = Array2::zeros((n, d));
    let mut grad_v = Array2::zeros((n, d));
    for (h, a) in weights.iter().enumerate() {
        let cols = h * dh..(h + 1) * dh;
        let go = grad_heads.slice(s![.., cols.clone()]);
        let vh = v.slice(s![.., cols.clone()]);
        let grad_a = go.dot(&vh.t());
        grad_v
            .slice_mut(s![.., cols.clone()])
            .assign(&a.t().dot(&go));
        // Softmax Jacobian: dS = A .* (dA - rowsum(dA .* A)).
        let mut grad_s = Array2::zeros((n, n));
        for i in 0..n {
            let mut dot = T::zero();
            for j in 0..n {
                dot += grad_a[(i, j)] * a[(i, j)];
            }
            for j in 0..n {
                grad_s[(i, j)] = a[(i, j)] * (grad_a[(i, j)] - dot);
            }
        }
        grad_s.mapv_inplace(|x| x * scale);
        let qh = q.slice(s![.., cols.clone()]);
        let kh = k.slice(s![.., cols.clone()]);
        grad_q.slice_mut(s![.., cols.clone()]).assign(&grad_s.dot(&kh));
        grad_k.slice_mut(s![.., cols]).assign(&grad_s.t().dot(&qh));
    }
    let grad_w_q = tokens.t().dot(&grad_q);
    let grad_w_k = tokens.t().dot(&grad_k);
    let grad_w_v = tokens.t().dot(&grad_v);
    let grad_tokens = grad_q.dot(&params.w_q().t())
        + grad_k.dot(&params.w_k().t())
        + grad_v.dot(&params.w_v().t());
    Ok(AttentionGrads {
        tokens: grad_tokens,
        params: ParamGrads {
            w_q: grad_w_q,
            w_k: grad_w_k,
            w_v: grad_w_v,
            w_o: grad_w_o,
        },
    })
}
