use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{invalid, shape_err, Result};

fn check_finite(name: &str, m: &ArrayView2<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{name} contains non-finite entries")))
    }
}

/// Pre-softmax logits `Q Kᵀ / sqrt(d_k)`.
pub fn attention_logits(q: ArrayView2<f64>, k: ArrayView2<f64>, d_k: usize) -> Result<Array2<f64>> {
    if d_k == 0 {
        return Err(invalid("d_k must be positive"));
    }
    if q.ncols() != k.ncols() {
        return Err(shape_err(format!(
            "query width {} != key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    check_finite("Q", &q)?;
    check_finite("K", &k)?;
    Ok(q.dot(&k.t()) / (d_k as f64).sqrt())
}

/// In-place numerically stable softmax over each row.
pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Row-stochastic attention weights `softmax(Q Kᵀ / sqrt(d_k))`.
pub fn attention_weights(q: ArrayView2<f64>, k: ArrayView2<f64>, d_k: usize) -> Result<Array2<f64>> {
    let mut w = attention_logits(q, k, d_k)?;
    softmax_rows(&mut w);
    Ok(w)
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` for a single head.
pub fn scaled_attention(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    d_k: usize,
) -> Result<Array2<f64>> {
    if v.nrows() != k.nrows() {
        return Err(shape_err(format!(
            "value rows {} != key rows {}",
            v.nrows(),
            k.nrows()
        )));
    }
    check_finite("V", &v)?;
    let w = attention_weights(q, k, d_k)?;
    Ok(w.dot(&v))
}

/// Saved activations of one multi-head attention call.
#[derive(Debug, Clone)]
pub(crate) struct MhaCache {
    pub x_query: Array2<f64>,
    pub x_kv: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Per-head softmax weights.
    pub weights: Vec<Array2<f64>>,
}

pub(crate) struct MhaGrads {
    pub d_x_query: Array2<f64>,
    pub d_x_kv: Array2<f64>,
    pub d_wq: Array2<f64>,
    pub d_wk: Array2<f64>,
    pub d_wv: Array2<f64>,
}

/// Multi-head attention without an output projection: project, split the
/// width into `heads` slices of `d / heads`, attend per slice, concatenate.
pub(crate) fn mha_forward(
    x_query: ArrayView2<f64>,
    x_kv: ArrayView2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
    heads: usize,
) -> Result<(Array2<f64>, MhaCache)> {
    let d = wq.ncols();
    if x_query.ncols() != wq.nrows() || x_kv.ncols() != wk.nrows() || x_kv.ncols() != wv.nrows() {
        return Err(shape_err(format!(
            "inputs of width {}/{} do not match projections of {}x{}",
            x_query.ncols(),
            x_kv.ncols(),
            wq.nrows(),
            d
        )));
    }
    if x_kv.nrows() == 0 {
        return Err(shape_err("attention over an empty key set"));
    }
    check_finite("query input", &x_query)?;
    check_finite("key/value input", &x_kv)?;
    let dk = d / heads;
    let q = x_query.dot(wq);
    let k = x_kv.dot(wk);
    let v = x_kv.dot(wv);
    let mut out = Array2::zeros((x_query.nrows(), d));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut w = q.slice(cols).dot(&k.slice(cols).t()) / (dk as f64).sqrt();
        softmax_rows(&mut w);
        out.slice_mut(cols).assign(&w.dot(&v.slice(cols)));
        weights.push(w);
    }
    let cache = MhaCache {
        x_query: x_query.to_owned(),
        x_kv: x_kv.to_owned(),
        q,
        k,
        v,
        weights,
    };
    Ok((out, cache))
}

pub(crate) fn mha_backward(
    cache: &MhaCache,
    d_out: &Array2<f64>,
    wq: &Array2<f64>,
    wk: &Array2<f64>,
    wv: &Array2<f64>,
) -> MhaGrads {
    let heads = cache.weights.len();
    let d = wq.ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut d_q = Array2::zeros(cache.q.raw_dim());
    let mut d_k = Array2::zeros(cache.k.raw_dim());
    let mut d_v = Array2::zeros(cache.v.raw_dim());
    for (h, w) in cache.weights.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let d_o = d_out.slice(cols);
        d_v.slice_mut(cols).assign(&w.t().dot(&d_o));
        let d_w = d_o.dot(&cache.v.slice(cols).t());
        // softmax Jacobian, row-wise: dS = W ⊙ (dW − rowsum(dW ⊙ W))
        let row_dot = (&d_w * w).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_s = w * &(&d_w - &row_dot) * scale;
        d_q.slice_mut(cols).assign(&d_s.dot(&cache.k.slice(cols)));
        d_k.slice_mut(cols).assign(&d_s.t().dot(&cache.q.slice(cols)));
    }
    MhaGrads {
        d_x_query: d_q.dot(&wq.t()),
        d_x_kv: d_k.dot(&wk.t()) + d_v.dot(&wv.t()),
        d_wq: cache.x_query.t().dot(&d_q),
        d_wk: cache.x_kv.t().dot(&d_k),
        d_wv: cache.x_kv.t().dot(&d_v),
    }
}
