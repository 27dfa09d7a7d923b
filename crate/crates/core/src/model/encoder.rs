use rand::Rng;

use super::{EncodedBatch, ModelConfig, Parameters};
use crate::error::Result;
use crate::numerics::{self, Dual, Tensor, LAYER_NORM_EPS};

/// Added to attention logits of padded key positions.
pub const MASK_BIAS: f64 = -1e9;

/// Fixed sinusoidal table `[seq_len × d]`: sin on even columns, cos on odd.
pub fn positional_encoding(seq_len: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[seq_len, d]);
    for pos in 0..seq_len {
        let row = pe.row_mut(pos);
        for (j, v) in row.iter_mut().enumerate() {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            *v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

fn dropout_mask<R: Rng + ?Sized>(shape: &[usize], rate: f64, rng: &mut R) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    let mut m = Tensor::zeros(shape);
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < rate { 0.0 } else { keep };
    }
    m
}

fn block(t: &Tensor, row0: usize, rows: usize, col0: usize, cols: usize) -> Tensor {
    let mut out = Vec::with_capacity(rows * cols);
    for r in row0..row0 + rows {
        out.extend_from_slice(&t.row(r)[col0..col0 + cols]);
    }
    Tensor::new(vec![rows, cols], out).unwrap()
}

fn add_block(dst: &mut Tensor, src: &Tensor, row0: usize, col0: usize) {
    for r in 0..src.rows() {
        let d = &mut dst.row_mut(row0 + r)[col0..col0 + src.cols()];
        for (a, b) in d.iter_mut().zip(src.row(r)) {
            *a += b;
        }
    }
}

struct HeadPass {
    scores: Dual,
    probs: Dual,
    drop: Option<Tensor>,
    context: Dual,
}

struct LayerPass {
    prefix: String,
    q: Dual,
    k: Dual,
    v: Dual,
    heads: Vec<HeadPass>,
    out_proj: Dual,
    ln1: Dual,
    ff1: Dual,
    act: Dual,
    ff2: Dual,
    ffn_drop: Option<Tensor>,
    ln2: Dual,
}

struct EncoderPass {
    batch_size: usize,
    seq_len: usize,
    n_heads: usize,
    head_dim: usize,
    logit_scale: f64,
    embed_scale: f64,
    embed: Dual,
    layers: Vec<LayerPass>,
    pool: Dual,
}

struct Layer<'a> {
    wq: &'a Tensor,
    bq: &'a Tensor,
    wk: &'a Tensor,
    bk: &'a Tensor,
    wv: &'a Tensor,
    bv: &'a Tensor,
    wo: &'a Tensor,
    bo: &'a Tensor,
    ln1_gain: &'a Tensor,
    ln1_bias: &'a Tensor,
    w1: &'a Tensor,
    b1: &'a Tensor,
    w2: &'a Tensor,
    b2: &'a Tensor,
    ln2_gain: &'a Tensor,
    ln2_bias: &'a Tensor,
}

impl<'a> Layer<'a> {
    fn fetch(params: &'a Parameters, prefix: &str) -> Result<Self> {
        let p = |s: &str| params.get(&format!("{prefix}.{s}"));
        Ok(Layer {
            wq: p("attn.wq")?,
            bq: p("attn.bq")?,
            wk: p("attn.wk")?,
            bk: p("attn.bk")?,
            wv: p("attn.wv")?,
            bv: p("attn.bv")?,
            wo: p("attn.wo")?,
            bo: p("attn.bo")?,
            ln1_gain: p("ln1.gain")?,
            ln1_bias: p("ln1.bias")?,
            w1: p("ffn.w1")?,
            b1: p("ffn.b1")?,
            w2: p("ffn.w2")?,
            b2: p("ffn.b2")?,
            ln2_gain: p("ln2.gain")?,
            ln2_bias: p("ln2.bias")?,
        })
    }
}

fn mask_bias(batch: &EncodedBatch) -> Vec<f64> {
    batch
        .mask
        .iter()
        .map(|&m| if m == 0 { MASK_BIAS } else { 0.0 })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn layer_forward<R: Rng + ?Sized>(
    w: &Layer<'_>,
    prefix: String,
    x: &Tensor,
    key_bias: &[f64],
    config: &ModelConfig,
    batch: &EncodedBatch,
    dropout: Option<f64>,
    rng: &mut R,
) -> Result<LayerPass> {
    let (b, len, d) = (batch.batch_size, batch.seq_len, config.d_model);
    let (heads, dh) = (config.n_heads, config.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let q = numerics::linear(x, w.wq, w.bq)?;
    let k = numerics::linear(x, w.wk, w.bk)?;
    let v = numerics::linear(x, w.wv, w.bv)?;

    let mut concat = Tensor::zeros(&[b * len, d]);
    let mut head_passes = Vec::with_capacity(b * heads);
    for bi in 0..b {
        let bias = &key_bias[bi * len..(bi + 1) * len];
        for h in 0..heads {
            let qh = block(&q.output, bi * len, len, h * dh, dh);
            let kh = block(&k.output, bi * len, len, h * dh, dh);
            let vh = block(&v.output, bi * len, len, h * dh, dh);
            let scores = numerics::matmul(&qh, &kh.transpose())?;
            let mut logits = scores.output.map(|s| s * scale);
            for r in 0..len {
                for (l, mb) in logits.row_mut(r).iter_mut().zip(bias) {
                    *l += mb;
                }
            }
            let probs = numerics::softmax_rows(&logits)?;
            let (attended, drop) = match dropout {
                Some(rate) => {
                    let m = dropout_mask(&[len, len], rate, rng);
                    (probs.output.zip_map(&m, |p, k| p * k), Some(m))
                }
                None => (probs.output.clone(), None),
            };
            let context = numerics::matmul(&attended, &vh)?;
            add_block(&mut concat, &context.output, bi * len, h * dh);
            head_passes.push(HeadPass {
                scores,
                probs,
                drop,
                context,
            });
        }
    }
    let out_proj = numerics::linear(&concat, w.wo, w.bo)?;
    let res1 = x.zip_map(&out_proj.output, |a, b| a + b);
    let ln1 = numerics::layer_norm(&res1, w.ln1_gain, w.ln1_bias, LAYER_NORM_EPS)?;

    let ff1 = numerics::linear(&ln1.output, w.w1, w.b1)?;
    let act = numerics::gelu(&ff1.output);
    let ff2 = numerics::linear(&act.output, w.w2, w.b2)?;
    let (ffn_out, ffn_drop) = match dropout {
        Some(rate) => {
            let m = dropout_mask(ff2.output.shape(), rate, rng);
            (ff2.output.zip_map(&m, |a, k| a * k), Some(m))
        }
        None => (ff2.output.clone(), None),
    };
    let res2 = ln1.output.zip_map(&ffn_out, |a, b| a + b);
    let ln2 = numerics::layer_norm(&res2, w.ln2_gain, w.ln2_bias, LAYER_NORM_EPS)?;

    Ok(LayerPass {
        prefix,
        q,
        k,
        v,
        heads: head_passes,
        out_proj,
        ln1,
        ff1,
        act,
        ff2,
        ffn_drop,
        ln2,
    })
}

impl LayerPass {
    /// Returns d loss / d layer input and accumulates parameter gradients.
    fn backward(&self, upstream: &Tensor, pass: &EncoderPass, grads: &mut Parameters) -> Tensor {
        let put = |grads: &mut Parameters, name: &str, t: &Tensor| {
            grads
                .accumulate(&format!("{}.{name}", self.prefix), t)
                .expect("gradient slot shape");
        };
        let (len, dh) = (pass.seq_len, pass.head_dim);

        let g = self.ln2.backward(upstream);
        put(grads, "ln2.gain", &g[1]);
        put(grads, "ln2.bias", &g[2]);
        let d_res2 = &g[0];

        let d_ffn = match &self.ffn_drop {
            Some(m) => d_res2.zip_map(m, |a, k| a * k),
            None => d_res2.clone(),
        };
        let g2 = self.ff2.backward(&d_ffn);
        put(grads, "ffn.w2", &g2[1]);
        put(grads, "ffn.b2", &g2[2]);
        let d_pre = self.act.backward(&g2[0]).remove(0);
        let g1 = self.ff1.backward(&d_pre);
        put(grads, "ffn.w1", &g1[1]);
        put(grads, "ffn.b1", &g1[2]);
        let d_ln1 = d_res2.zip_map(&g1[0], |a, b| a + b);

        let g = self.ln1.backward(&d_ln1);
        put(grads, "ln1.gain", &g[1]);
        put(grads, "ln1.bias", &g[2]);
        let d_res1 = g[0].clone();

        let go = self.out_proj.backward(&d_res1);
        put(grads, "attn.wo", &go[1]);
        put(grads, "attn.bo", &go[2]);
        let d_concat = &go[0];

        let mut dq = d_concat.zeros_like();
        let mut dk = d_concat.zeros_like();
        let mut dv = d_concat.zeros_like();
        for (idx, hp) in self.heads.iter().enumerate() {
            let (bi, h) = (idx / pass.n_heads, idx % pass.n_heads);
            let d_ctx = block(d_concat, bi * len, len, h * dh, dh);
            let gc = hp.context.backward(&d_ctx);
            add_block(&mut dv, &gc[1], bi * len, h * dh);
            let d_probs = match &hp.drop {
                Some(m) => gc[0].zip_map(m, |a, k| a * k),
                None => gc[0].clone(),
            };
            let d_logits = hp.probs.backward(&d_probs).remove(0);
            let d_scores = d_logits.map(|v| v * pass.logit_scale);
            let gs = hp.scores.backward(&d_scores);
            add_block(&mut dq, &gs[0], bi * len, h * dh);
            add_block(&mut dk, &gs[1].transpose(), bi * len, h * dh);
        }

        let mut dx = d_res1;
        for (dual, d_proj, w, bias) in [
            (&self.q, &dq, "attn.wq", "attn.bq"),
            (&self.k, &dk, "attn.wk", "attn.bk"),
            (&self.v, &dv, "attn.wv", "attn.bv"),
        ] {
            let gp = dual.backward(d_proj);
            put(grads, w, &gp[1]);
            put(grads, bias, &gp[2]);
            dx.add_assign(&gp[0]);
        }
        dx
    }
}

impl EncoderPass {
    fn backward(&self, d_pooled: &Tensor, template: &Parameters) -> Parameters {
        let mut grads = template.zeros_like();
        let gp = self.pool.backward(d_pooled);
        grads.accumulate("pooler.weight", &gp[1]).unwrap();
        grads.accumulate("pooler.bias", &gp[2]).unwrap();
        let mut d_hidden = gp[0].clone();
        for layer in self.layers.iter().rev() {
            d_hidden = layer.backward(&d_hidden, self, &mut grads);
        }
        let d_embed = d_hidden.map(|v| v * self.embed_scale);
        let ge = self.embed.backward(&d_embed);
        grads.accumulate("embed.token", &ge[0]).unwrap();
        grads
    }

    fn attention(&self) -> Vec<Vec<Tensor>> {
        self.layers
            .iter()
            .map(|l| l.heads.iter().map(|h| h.probs.output.clone()).collect())
            .collect()
    }
}

fn forward_pass<R: Rng + ?Sized>(
    config: &ModelConfig,
    params: &Parameters,
    batch: &EncodedBatch,
    train_mode: bool,
    rng: &mut R,
) -> Result<EncoderPass> {
    config.validate()?;
    batch.check(config)?;
    let (b, len, d) = (batch.batch_size, batch.seq_len, config.d_model);

    let embed = numerics::gather_rows(params.get("embed.token")?, &batch.token_ids)?;
    let embed_scale = (d as f64).sqrt();
    let pe = positional_encoding(len, d);
    let mut x = embed.output.map(|v| v * embed_scale);
    for row in 0..b * len {
        for (a, p) in x.row_mut(row).iter_mut().zip(pe.row(row % len)) {
            *a += p;
        }
    }

    let key_bias = mask_bias(batch);
    let dropout = (train_mode && config.dropout_rate > 0.0).then_some(config.dropout_rate);
    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let prefix = format!("layer{l}");
        let weights = Layer::fetch(params, &prefix)?;
        let pass = layer_forward(&weights, prefix, &x, &key_bias, config, batch, dropout, rng)?;
        x = pass.ln2.output.clone();
        layers.push(pass);
    }
    let pool = pool(params, &x, b, len)?;

    Ok(EncoderPass {
        batch_size: b,
        seq_len: len,
        n_heads: config.n_heads,
        head_dim: config.head_dim(),
        logit_scale: 1.0 / (config.head_dim() as f64).sqrt(),
        embed_scale,
        embed,
        layers,
        pool,
    })
}

/// Runs the encoder on `batch` and returns the pooled representation
/// `[b × d_model]`. The backward map yields gradients for every parameter
/// (head slots stay zero). Dropout masks come from `rng` only when
/// `train_mode` is set and the rate is positive.
pub fn encode<R: Rng + ?Sized>(
    config: &ModelConfig,
    params: &Parameters,
    batch: &EncodedBatch,
    train_mode: bool,
    rng: &mut R,
) -> Result<Dual<Parameters>> {
    let pass = forward_pass(config, params, batch, train_mode, rng)?;
    debug_assert_eq!(pass.pool.output.rows(), pass.batch_size);
    let template = params.zeros_like();
    let pooled = pass.pool.output.clone();
    Ok(Dual::new(pooled, move |g| pass.backward(g, &template)))
}

/// Attention probabilities in evaluation mode, indexed
/// `[layer][row * n_heads + head]`, each `[seq_len × seq_len]`.
pub fn attention_weights(
    config: &ModelConfig,
    params: &Parameters,
    batch: &EncodedBatch,
) -> Result<Vec<Vec<Tensor>>> {
    // eval mode never draws from the stream
    let mut rng = crate::rng::stream(0, "unused", 0);
    Ok(forward_pass(config, params, batch, false, &mut rng)?.attention())
}

/// Position-0 hidden state of each row through `tanh(h·W + b)`.
/// `hidden` is `[(b·seq_len) × d]`; gradients are `[dhidden, dW, db]`.
pub fn pool(params: &Parameters, hidden: &Tensor, batch_size: usize, seq_len: usize) -> Result<Dual> {
    let cls_rows: Vec<usize> = (0..batch_size).map(|i| i * seq_len).collect();
    let cls = hidden.select_rows(&cls_rows);
    let lin = numerics::linear(&cls, params.get("pooler.weight")?, params.get("pooler.bias")?)?;
    let act = numerics::tanh(&lin.output);
    let out = act.output.clone();
    let hidden_shape = hidden.shape().to_vec();
    Ok(Dual::new(out, move |g| {
        let d_lin = act.backward(g).remove(0);
        let mut gl = lin.backward(&d_lin);
        let mut d_hidden = Tensor::zeros(&hidden_shape);
        for (i, &r) in cls_rows.iter().enumerate() {
            d_hidden.row_mut(r).copy_from_slice(gl[0].row(i));
        }
        gl[0] = d_hidden;
        gl
    }))
}

/// Single affine map from pooled features to logits (or a raw regression
/// value). Gradients: `[dpooled, dweight, dbias]`.
pub fn head_forward(params: &Parameters, pooled: &Tensor) -> Result<Dual> {
    numerics::linear(pooled, params.get("head.weight")?, params.get("head.bias")?)
}
