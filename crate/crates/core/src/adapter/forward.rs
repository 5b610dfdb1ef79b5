use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::attention::{attention_logits, mha_backward, mha_forward, MhaCache};
use super::layers::{gelu, gelu_grad, layer_norm, layer_norm_backward, LayerNormCache};
use super::params::{AdapterParams, BlockParams};
use crate::emotion::EmotionLabel;
use crate::error::{invalid, shape_err, Result};
use crate::providers::TextEncoder;

fn validated(name: &str, m: Array2<f64>) -> Result<Array2<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(invalid(format!("{name} must have at least one token")));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(invalid(format!("{name} contains non-finite entries")));
    }
    Ok(m)
}

/// Encoded target emotion, `T_e × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionEmbedding(Array2<f64>);

impl EmotionEmbedding {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        validated("emotion embedding", tokens).map(Self)
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Encoded input image, `T_i × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding(Array2<f64>);

impl ImageEmbedding {
    pub fn new(tokens: Array2<f64>) -> Result<Self> {
        validated("image embedding", tokens).map(Self)
    }

    pub fn tokens(&self) -> &Array2<f64> {
        &self.0
    }
}

/// The conditioning embedding `c_e`, always `num_queries × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningOutput(pub Array2<f64>);

impl ConditioningOutput {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

enum BlockCache {
    Plain {
        self_attn: MhaCache,
        cross_attn: MhaCache,
    },
    Residual {
        self_attn: MhaCache,
        ln_self: LayerNormCache,
        cross_attn: MhaCache,
        ln_cross: LayerNormCache,
        h_cross: Array2<f64>,
        ffn_pre: Array2<f64>,
        ffn_hidden: Array2<f64>,
        ln_ffn: LayerNormCache,
    },
}

/// Activations recorded by [`AdapterParams::forward_tape`] for backprop.
pub struct AdapterTape {
    blocks: Vec<BlockCache>,
    num_queries: usize,
    rows: usize,
}

impl AdapterParams {
    fn block(&self, block: usize) -> Result<&BlockParams> {
        self.blocks
            .get(block)
            .ok_or_else(|| invalid(format!("block {block} out of range (have {})", self.blocks.len())))
    }

    fn check_width(&self, name: &str, m: &Array2<f64>) -> Result<()> {
        if m.ncols() != self.config.dim {
            return Err(shape_err(format!(
                "{name} has width {} but the adapter dimension is {}",
                m.ncols(),
                self.config.dim
            )));
        }
        Ok(())
    }

    /// Self-attention of one block over the row concatenation `[q_state; e_t]`.
    /// Returns `(N_q + T_e) × d`.
    pub fn self_attend(&self, block: usize, q_state: &Array2<f64>, e_t: &EmotionEmbedding) -> Result<Array2<f64>> {
        self.check_width("query state", q_state)?;
        self.check_width("emotion embedding", e_t.tokens())?;
        let x = concatenate![Axis(0), q_state.view(), e_t.tokens().view()];
        self.self_attend_rows(block, &x)
    }

    /// Self-attention of one block over an already concatenated state.
    pub fn self_attend_rows(&self, block: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
        let b = self.block(block)?;
        self.check_width("block state", x)?;
        let (out, _) = mha_forward(x.view(), x.view(), &b.self_q, &b.self_k, &b.self_v, self.config.num_heads)?;
        Ok(out)
    }

    /// Cross-attention of one block: queries from `a_s`, keys and values from
    /// the image tokens. Output has the row count of `a_s`.
    pub fn cross_attend(&self, block: usize, a_s: &Array2<f64>, e_i: &ImageEmbedding) -> Result<Array2<f64>> {
        let b = self.block(block)?;
        self.check_width("self-attention output", a_s)?;
        self.check_width("image embedding", e_i.tokens())?;
        let (out, _) = mha_forward(
            a_s.view(),
            e_i.tokens().view(),
            &b.cross_q,
            &b.cross_k,
            &b.cross_v,
            self.config.num_heads,
        )?;
        Ok(out)
    }

    /// Pre-softmax self-attention logits of one head of one block.
    pub fn self_attention_logits(&self, block: usize, head: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
        let b = self.block(block)?;
        self.check_width("block state", x)?;
        if head >= self.config.num_heads {
            return Err(invalid(format!("head {head} out of range")));
        }
        let dk = self.config.key_dim();
        let cols = s![.., head * dk..(head + 1) * dk];
        let q = x.dot(&b.self_q);
        let k = x.dot(&b.self_k);
        attention_logits(q.slice(cols), k.slice(cols), dk)
    }

    /// Conditioning embedding from pre-encoded emotion and image tokens.
    pub fn forward(&self, e_t: &EmotionEmbedding, e_i: &ImageEmbedding) -> Result<ConditioningOutput> {
        self.forward_tape(e_t, e_i).map(|(out, _)| out)
    }

    pub fn forward_tape(&self, e_t: &EmotionEmbedding, e_i: &ImageEmbedding) -> Result<(ConditioningOutput, AdapterTape)> {
        self.check_width("emotion embedding", e_t.tokens())?;
        self.check_width("image embedding", e_i.tokens())?;
        let mut x = concatenate![Axis(0), self.queries.view(), e_t.tokens().view()];
        let rows = x.nrows();
        let heads = self.config.num_heads;
        let eps = self.config.layer_norm_eps;
        let img = e_i.tokens().view();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (a_s, self_attn) = mha_forward(x.view(), x.view(), &b.self_q, &b.self_k, &b.self_v, heads)?;
            match &b.residual {
                None => {
                    let (a_c, cross_attn) = mha_forward(a_s.view(), img, &b.cross_q, &b.cross_k, &b.cross_v, heads)?;
                    caches.push(BlockCache::Plain { self_attn, cross_attn });
                    x = a_c;
                }
                Some(r) => {
                    let (h_self, ln_self) = layer_norm(&(&x + &a_s), &r.ln_self_gamma, &r.ln_self_beta, eps);
                    let (a_c, cross_attn) = mha_forward(h_self.view(), img, &b.cross_q, &b.cross_k, &b.cross_v, heads)?;
                    let (h_cross, ln_cross) = layer_norm(&(&h_self + &a_c), &r.ln_cross_gamma, &r.ln_cross_beta, eps);
                    let ffn_pre = h_cross.dot(&r.ffn_w1) + &r.ffn_b1;
                    let ffn_hidden = ffn_pre.mapv(gelu);
                    let ffn_out = ffn_hidden.dot(&r.ffn_w2) + &r.ffn_b2;
                    let (out, ln_ffn) = layer_norm(&(&h_cross + &ffn_out), &r.ln_ffn_gamma, &r.ln_ffn_beta, eps);
                    caches.push(BlockCache::Residual {
                        self_attn,
                        ln_self,
                        cross_attn,
                        ln_cross,
                        h_cross,
                        ffn_pre,
                        ffn_hidden,
                        ln_ffn,
                    });
                    x = out;
                }
            }
        }
        let c_e = x.slice(s![..self.config.num_queries, ..]).to_owned();
        let tape = AdapterTape {
            blocks: caches,
            num_queries: self.config.num_queries,
            rows,
        };
        Ok((ConditioningOutput(c_e), tape))
    }

    /// Gradients of a scalar loss w.r.t. every parameter, given `dL/dc_e`.
    pub fn backward(&self, tape: &AdapterTape, d_ce: &Array2<f64>) -> Result<AdapterParams> {
        if d_ce.dim() != (tape.num_queries, self.config.dim) {
            return Err(shape_err(format!(
                "gradient of shape {:?} does not match c_e ({}, {})",
                d_ce.dim(),
                tape.num_queries,
                self.config.dim
            )));
        }
        let mut grads = self.zeros_like();
        let mut d_x = Array2::zeros((tape.rows, self.config.dim));
        d_x.slice_mut(s![..tape.num_queries, ..]).assign(d_ce);
        for ((b, g), cache) in self.blocks.iter().zip(grads.blocks.iter_mut()).zip(&tape.blocks).rev() {
            d_x = match cache {
                BlockCache::Plain { self_attn, cross_attn } => {
                    let c = mha_backward(cross_attn, &d_x, &b.cross_q, &b.cross_k, &b.cross_v);
                    g.cross_q += &c.d_wq;
                    g.cross_k += &c.d_wk;
                    g.cross_v += &c.d_wv;
                    let sa = mha_backward(self_attn, &c.d_x_query, &b.self_q, &b.self_k, &b.self_v);
                    g.self_q += &sa.d_wq;
                    g.self_k += &sa.d_wk;
                    g.self_v += &sa.d_wv;
                    sa.d_x_query + sa.d_x_kv
                }
                BlockCache::Residual {
                    self_attn,
                    ln_self,
                    cross_attn,
                    ln_cross,
                    h_cross,
                    ffn_pre,
                    ffn_hidden,
                    ln_ffn,
                } => {
                    let r = b.residual.as_ref().expect("residual cache implies residual params");
                    let gr = g.residual.as_mut().expect("grad buffer mirrors params");
                    let (d_r3, dg, db) = layer_norm_backward(ln_ffn, &r.ln_ffn_gamma, &d_x);
                    gr.ln_ffn_gamma += &dg;
                    gr.ln_ffn_beta += &db;
                    gr.ffn_w2 += &ffn_hidden.t().dot(&d_r3);
                    gr.ffn_b2 += &d_r3.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let d_pre = d_r3.dot(&r.ffn_w2.t()) * ffn_pre.mapv(gelu_grad);
                    gr.ffn_w1 += &h_cross.t().dot(&d_pre);
                    gr.ffn_b1 += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let d_h_cross = &d_r3 + &d_pre.dot(&r.ffn_w1.t());

                    let (d_r2, dg, db) = layer_norm_backward(ln_cross, &r.ln_cross_gamma, &d_h_cross);
                    gr.ln_cross_gamma += &dg;
                    gr.ln_cross_beta += &db;
                    let c = mha_backward(cross_attn, &d_r2, &b.cross_q, &b.cross_k, &b.cross_v);
                    g.cross_q += &c.d_wq;
                    g.cross_k += &c.d_wk;
                    g.cross_v += &c.d_wv;
                    let d_h_self = &d_r2 + &c.d_x_query;

                    let (d_r1, dg, db) = layer_norm_backward(ln_self, &r.ln_self_gamma, &d_h_self);
                    let gr = g.residual.as_mut().expect("grad buffer mirrors params");
                    gr.ln_self_gamma += &dg;
                    gr.ln_self_beta += &db;
                    let sa = mha_backward(self_attn, &d_r1, &b.self_q, &b.self_k, &b.self_v);
                    g.self_q += &sa.d_wq;
                    g.self_k += &sa.d_wk;
                    g.self_v += &sa.d_wv;
                    d_r1 + sa.d_x_query + sa.d_x_kv
                }
            };
        }
        grads.queries += &d_x.slice(s![..tape.num_queries, ..]);
        Ok(grads)
    }
}

/// Encodes the bare emotion word with the text provider and runs the adapter.
pub fn adapter_forward(
    params: &AdapterParams,
    emotion: EmotionLabel,
    e_i: &ImageEmbedding,
    text_encoder: &dyn TextEncoder,
) -> Result<ConditioningOutput> {
    let encoded = text_encoder.encode(emotion.word())?;
    let e_t = EmotionEmbedding::new(encoded.tokens)?;
    params.forward(&e_t, e_i)
}
