//! Dense layers with explicit backward passes.
//!
//! Activations are row-major `(positions, features)` matrices. Every
//! `backward` accumulates parameter gradients into a same-shaped gradient
//! struct and returns the gradient with respect to the layer input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `(in, out)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn zeros(width: usize) -> Self {
        Self {
            gamma: Array1::zeros(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LayerNormCache) {
        let width = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / width;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / width;
            *istd = 1.0 / (var + LN_EPS).sqrt();
            row *= *istd;
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let width = dy.ncols() as f64;
        let mut dx = dy * &self.gamma;
        for ((mut row, xhat), &istd) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let m1 = row.sum() / width;
            let m2 = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / width;
            Zip::from(&mut row)
                .and(&xhat)
                .for_each(|d, &xh| *d = istd * (*d - m1 - xh * m2));
        }
        dx
    }
}

/// GELU, tanh approximation.
pub fn gelu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_K * v * v * v)).tanh()))
}

pub fn gelu_backward(x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(x).for_each(|d, &v| {
        let t = (GELU_C * (v + GELU_K * v * v * v)).tanh();
        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * v * v);
        *d *= 0.5 * (1.0 + t) + 0.5 * v * dt;
    });
    dx
}

/// Inverted-dropout mask, or `None` when dropout is off.
pub fn dropout_mask<R: Rng>(shape: (usize, usize), p: f64, rng: Option<&mut R>) -> Option<Array2<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    }))
}

pub fn apply_mask(x: &mut Array2<f64>, mask: &Option<Array2<f64>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

/// Which keys each query may attend to.
#[derive(Debug, Clone, Copy)]
pub struct AttnMask<'a> {
    /// Query row `i` sits at absolute position `query_offset + i` and may
    /// only see keys at positions `<=` that.
    pub causal: bool,
    pub query_offset: usize,
    /// `false` marks padding keys.
    pub key_valid: Option<&'a [bool]>,
}

impl AttnMask<'_> {
    pub const FULL: AttnMask<'static> = AttnMask {
        causal: false,
        query_offset: 0,
        key_valid: None,
    };
}

/// Scaled dot-product attention over `heads` column blocks.
/// Returns the concatenated context and each head's probability matrix.
pub fn attention(
    q: &Array2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    heads: usize,
    mask: AttnMask,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let width = q.ncols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let keys = k.nrows();
    let mut ctx = Array2::zeros((q.nrows(), width));
    let mut all_probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut probs = q.slice(cols).dot(&k.slice(cols).t());
        for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
            let limit = if mask.causal {
                (mask.query_offset + i + 1).min(keys)
            } else {
                keys
            };
            let visible = |j: usize| j < limit && mask.key_valid.is_none_or(|kv| kv[j]);
            let mut max = f64::NEG_INFINITY;
            for j in 0..keys {
                if visible(j) {
                    max = max.max(row[j] * scale);
                }
            }
            let mut sum = 0.0;
            for j in 0..keys {
                if visible(j) {
                    let e = (row[j] * scale - max).exp();
                    row[j] = e;
                    sum += e;
                } else {
                    row[j] = 0.0;
                }
            }
            if sum > 0.0 {
                row /= sum;
            }
        }
        ctx.slice_mut(cols).assign(&probs.dot(&v.slice(cols)));
        all_probs.push(probs);
    }
    (ctx, all_probs)
}

/// Gradients of [`attention`] with respect to `q`, `k` and `v`.
pub fn attention_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    probs: &[Array2<f64>],
    dctx: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let heads = probs.len();
    let width = q.ncols();
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(q.raw_dim());
    let mut dk = Array2::zeros(k.raw_dim());
    let mut dv = Array2::zeros(v.raw_dim());
    for (h, p) in probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dctx_h = dctx.slice(cols);
        let mut ds = dctx_h.dot(&v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
        for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
            let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
            Zip::from(&mut drow)
                .and(&prow)
                .for_each(|d, &pv| *d = pv * (*d - dot) * scale);
        }
        dq.slice_mut(cols).assign(&ds.dot(&k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&q.slice(cols)));
    }
    (dq, dk, dv)
}
