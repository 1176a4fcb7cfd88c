use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    apply_mask, col2im, conv_out, dropout_mask, gelu, gelu_grad, im2col, layer_norm,
    layer_norm_backward, linear, linear_backward, linear_vec, linear_vec_backward, softmax,
    softmax_rows, LayerNormCache,
};
use super::params::{EncoderLayerIx, Gradients, ModelParams};
use super::vocab::{TokenSequence, Vocabulary};
use super::{BENIGN, MALICIOUS};
use crate::error::{Error, Result};
use crate::imaging::{FloatImage, NormalizedImage, NORMALIZED_HEIGHT, NORMALIZED_WIDTH};

/// Box-downscaled screenshot, channel-major `[3, height, width]`, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualInput {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

fn box_downscale(value: impl Fn(usize) -> f64, factor: usize) -> (usize, usize, Vec<f64>) {
    let (w, h) = (NORMALIZED_WIDTH / factor, NORMALIZED_HEIGHT / factor);
    let mut out = vec![0.0; 3 * w * h];
    for y in 0..h * factor {
        let oy = y / factor;
        for x in 0..w * factor {
            let base = (y * NORMALIZED_WIDTH + x) * 3;
            let o = oy * w + x / factor;
            for c in 0..3 {
                out[c * w * h + o] += value(base + c);
            }
        }
    }
    let area = (factor * factor) as f64;
    out.iter_mut().for_each(|v| *v /= area);
    (w, h, out)
}

impl VisualInput {
    pub fn from_normalized(img: &NormalizedImage, factor: usize) -> Self {
        let px = img.pixels();
        let (width, height, data) = box_downscale(|i| px[i] as f64 / 255.0, factor);
        Self {
            width,
            height,
            data: data.into_iter().map(|v| v as f32).collect(),
        }
    }

    /// Full-precision downscale of a float image, as used by the attack.
    pub(crate) fn float_values(img: &FloatImage, factor: usize) -> (usize, usize, Vec<f64>) {
        box_downscale(|i| img.data[i], factor)
    }

    pub fn from_float(img: &FloatImage, factor: usize) -> Self {
        let (width, height, data) = Self::float_values(img, factor);
        Self {
            width,
            height,
            data: data.into_iter().map(|v| v as f32).collect(),
        }
    }

    pub(crate) fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Spreads a gradient on the downscaled input back over the interleaved
    /// 960x540 pixels it averaged.
    pub fn upsample_gradient(grad: &[f64], factor: usize) -> Vec<f64> {
        let (w, h) = (NORMALIZED_WIDTH / factor, NORMALIZED_HEIGHT / factor);
        let area = (factor * factor) as f64;
        let mut out = vec![0.0; NORMALIZED_WIDTH * NORMALIZED_HEIGHT * 3];
        for y in 0..h * factor {
            for x in 0..w * factor {
                let o = (y / factor) * w + x / factor;
                for c in 0..3 {
                    out[(y * NORMALIZED_WIDTH + x) * 3 + c] = grad[c * w * h + o] / area;
                }
            }
        }
        out
    }
}

/// One prepared sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub visual: VisualInput,
    pub tokens: TokenSequence,
    /// [`BENIGN`] or [`MALICIOUS`].
    pub label: usize,
}

/// Forward-pass mode. Training draws dropout masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Benign,
    Malicious,
}

impl Classification {
    pub fn from_index(i: usize) -> Self {
        if i == MALICIOUS {
            Classification::Malicious
        } else {
            Classification::Benign
        }
    }

    pub fn index(self) -> usize {
        match self {
            Classification::Benign => BENIGN,
            Classification::Malicious => MALICIOUS,
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::Benign => "benign",
            Classification::Malicious => "malicious",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: [f64; 2],
    /// Softmax probability of the malicious class.
    pub probability: f64,
    pub label: Classification,
}

impl Prediction {
    fn from_logits(logits: &[f64]) -> Self {
        let p = softmax(logits);
        Self {
            logits: [logits[0], logits[1]],
            probability: p[MALICIOUS],
            label: if p[MALICIOUS] > p[BENIGN] {
                Classification::Malicious
            } else {
                Classification::Benign
            },
        }
    }
}

struct Masks {
    visual: Option<Array1<f64>>,
    text: Option<Array1<f64>>,
    fusion: Option<Array1<f64>>,
}

fn masks(p: &ModelParams, mode: Mode) -> Masks {
    match mode {
        Mode::Eval => Masks {
            visual: None,
            text: None,
            fusion: None,
        },
        Mode::Train { seed } => {
            let c = &p.config;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Masks {
                visual: dropout_mask(c.visual_dim, c.dropout_visual, &mut rng),
                text: dropout_mask(c.text_pooled_dim, c.dropout_text, &mut rng),
                fusion: dropout_mask(c.fused_dim, c.dropout_fusion, &mut rng),
            }
        }
    }
}

struct ConvCache {
    cols: Array2<f64>,
    /// Post-ReLU output, `[c_out, ho * wo]`.
    out: Array2<f64>,
    in_dims: (usize, usize, usize),
}

pub(crate) struct VisualCache {
    convs: Vec<ConvCache>,
    gap: Array1<f64>,
    mask: Option<Array1<f64>>,
}

fn visual_forward(
    p: &ModelParams,
    input: Vec<f64>,
    width: usize,
    height: usize,
    mask: Option<Array1<f64>>,
) -> (Array1<f64>, VisualCache) {
    let mut cur = input;
    let (mut c, mut h, mut w) = (3, height, width);
    let mut convs = Vec::with_capacity(p.ix.conv.len());
    for &(wi, bi) in &p.ix.conv {
        let cols = im2col(&cur, c, h, w);
        let mut out = p.mat(wi).dot(&cols);
        out += &p.vec(bi).insert_axis(Axis(1));
        out.mapv_inplace(|v| v.max(0.0));
        cur = out.as_slice().expect("standard layout").to_vec();
        convs.push(ConvCache {
            cols,
            out,
            in_dims: (c, h, w),
        });
        c = p.tensors[wi].shape[0];
        h = conv_out(h);
        w = conv_out(w);
    }
    let gap = convs.last().expect("at least one conv").out.mean_axis(Axis(1)).expect("non-empty");
    let mut v = linear_vec(gap.view(), p.mat(p.ix.vproj_w), p.vec(p.ix.vproj_b));
    apply_mask(&mut v, &mask);
    (v, VisualCache { convs, gap, mask })
}

/// Returns the gradient on the input when `input_grad` is set.
fn visual_backward(
    p: &ModelParams,
    cache: &VisualCache,
    dv: Array1<f64>,
    g: &mut Gradients,
    input_grad: bool,
) -> Option<Vec<f64>> {
    let mut dv = dv;
    apply_mask(&mut dv, &cache.mask);
    let (gw, gb) = g.weight_bias(p.ix.vproj_w, p.ix.vproj_b);
    let dgap = linear_vec_backward(dv.view(), cache.gap.view(), p.mat(p.ix.vproj_w), gw, gb);
    let last = cache.convs.last().expect("at least one conv");
    let spatial = last.out.ncols() as f64;
    let mut dout = Array2::from_shape_fn(last.out.dim(), |(ch, _)| dgap[ch] / spatial);
    for (li, conv) in cache.convs.iter().enumerate().rev() {
        dout.zip_mut_with(&conv.out, |d, &o| {
            if o <= 0.0 {
                *d = 0.0
            }
        });
        let (wi, bi) = p.ix.conv[li];
        {
            let (mut gw, mut gb) = g.weight_bias(wi, bi);
            ndarray::linalg::general_mat_mul(1.0, &dout, &conv.cols.t(), 1.0, &mut gw);
            gb += &dout.sum_axis(Axis(1));
        }
        if li == 0 && !input_grad {
            return None;
        }
        let dcols = p.mat(wi).t().dot(&dout);
        let (c, h, w) = conv.in_dims;
        let dx = col2im(&dcols, c, h, w);
        if li == 0 {
            return Some(dx);
        }
        dout = Array2::from_shape_vec((c, h * w), dx).expect("shape");
    }
    unreachable!("loop returns at layer 0")
}

struct EncoderCache {
    x: Array2<f64>,
    q_rows: usize,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    ln2: LayerNormCache,
}

/// Post-norm self-attention block. Only the first `q_rows` positions are
/// queried and returned; keys and values use every row of `x`.
fn encoder_forward(
    p: &ModelParams,
    l: &EncoderLayerIx,
    x: Array2<f64>,
    q_rows: usize,
    heads: usize,
) -> (Array2<f64>, EncoderCache) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let xq = x.slice(s![..q_rows, ..]);
    let q = linear(xq, p.mat(l.wq), p.vec(l.bq));
    let k = linear(x.view(), p.mat(l.wk), p.vec(l.bk));
    let v = linear(x.view(), p.mat(l.wv), p.vec(l.bv));
    let mut ctx = Array2::zeros((q_rows, d));
    let mut attn = Vec::with_capacity(heads);
    for hd in 0..heads {
        let r = hd * dh..(hd + 1) * dh;
        let mut a = q.slice(s![.., r.clone()]).dot(&k.slice(s![.., r.clone()]).t()) * scale;
        softmax_rows(&mut a);
        ctx.slice_mut(s![.., r.clone()]).assign(&a.dot(&v.slice(s![.., r])));
        attn.push(a);
    }
    let o = linear(ctx.view(), p.mat(l.wo), p.vec(l.bo));
    let r1 = &xq + &o;
    let (h1, ln1) = layer_norm(r1.view(), p.vec(l.ln1_g), p.vec(l.ln1_b));
    let f1 = linear(h1.view(), p.mat(l.ff1_w), p.vec(l.ff1_b));
    let g = f1.mapv(gelu);
    let f2 = linear(g.view(), p.mat(l.ff2_w), p.vec(l.ff2_b));
    let r2 = &h1 + &f2;
    let (y, ln2) = layer_norm(r2.view(), p.vec(l.ln2_g), p.vec(l.ln2_b));
    let cache = EncoderCache {
        x,
        q_rows,
        q,
        k,
        v,
        attn,
        ctx,
        ln1,
        h1,
        f1,
        g,
        ln2,
    };
    (y, cache)
}

fn encoder_backward(
    p: &ModelParams,
    l: &EncoderLayerIx,
    c: &EncoderCache,
    dy: Array2<f64>,
    heads: usize,
    g: &mut Gradients,
) -> Array2<f64> {
    let (gg, gb) = g.vec_pair(l.ln2_g, l.ln2_b);
    let dr2 = layer_norm_backward(dy.view(), &c.ln2, p.vec(l.ln2_g), gg, gb);
    let mut dh1 = dr2.clone();
    let (gw, gb) = g.weight_bias(l.ff2_w, l.ff2_b);
    let mut dg = linear_backward(dr2.view(), c.g.view(), p.mat(l.ff2_w), gw, gb);
    dg.zip_mut_with(&c.f1, |d, &x| *d *= gelu_grad(x));
    let (gw, gb) = g.weight_bias(l.ff1_w, l.ff1_b);
    dh1 += &linear_backward(dg.view(), c.h1.view(), p.mat(l.ff1_w), gw, gb);
    let (gg, gb) = g.vec_pair(l.ln1_g, l.ln1_b);
    let dr1 = layer_norm_backward(dh1.view(), &c.ln1, p.vec(l.ln1_g), gg, gb);
    let (gw, gb) = g.weight_bias(l.wo, l.bo);
    let dctx = linear_backward(dr1.view(), c.ctx.view(), p.mat(l.wo), gw, gb);

    let d = c.x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(c.q.dim());
    let mut dk = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    for (hd, a) in c.attn.iter().enumerate() {
        let r = hd * dh..(hd + 1) * dh;
        let dch = dctx.slice(s![.., r.clone()]);
        let mut ds = dch.dot(&c.v.slice(s![.., r.clone()]).t());
        dv.slice_mut(s![.., r.clone()]).assign(&a.t().dot(&dch));
        for (mut drow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
            let dot = drow.dot(&arow);
            drow.zip_mut_with(&arow, |dv, &av| *dv = av * (*dv - dot) * scale);
        }
        dq.slice_mut(s![.., r.clone()]).assign(&ds.dot(&c.k.slice(s![.., r.clone()])));
        dk.slice_mut(s![.., r.clone()]).assign(&ds.t().dot(&c.q.slice(s![.., r])));
    }
    let xq = c.x.slice(s![..c.q_rows, ..]);
    let (gw, gb) = g.weight_bias(l.wq, l.bq);
    let dxq = linear_backward(dq.view(), xq, p.mat(l.wq), gw, gb);
    let (gw, gb) = g.weight_bias(l.wk, l.bk);
    let mut dx = linear_backward(dk.view(), c.x.view(), p.mat(l.wk), gw, gb);
    let (gw, gb) = g.weight_bias(l.wv, l.bv);
    dx += &linear_backward(dv.view(), c.x.view(), p.mat(l.wv), gw, gb);
    let mut top = dx.slice_mut(s![..c.q_rows, ..]);
    top += &dxq;
    top += &dr1;
    dx
}

pub(crate) struct TextCache {
    ids: Vec<usize>,
    positions: Vec<usize>,
    emb_ln: LayerNormCache,
    layers: Vec<EncoderCache>,
    cls: Array1<f64>,
    pooled: Array1<f64>,
    dropped: Array1<f64>,
    mask: Option<Array1<f64>>,
}

fn text_forward(
    p: &ModelParams,
    tokens: &TokenSequence,
    mask: Option<Array1<f64>>,
) -> (Array1<f64>, TextCache) {
    let cfg = &p.config;
    let mut positions: Vec<usize> = tokens
        .active_positions()
        .filter(|&i| i < cfg.max_tokens && i < tokens.ids.len())
        .collect();
    if positions.is_empty() {
        positions.push(0);
    }
    // Out-of-vocabulary ids fall back to UNK.
    let ids: Vec<usize> = positions
        .iter()
        .map(|&i| {
            let id = tokens.ids.get(i).copied().unwrap_or(Vocabulary::CLS_ID) as usize;
            if id < cfg.vocab_size {
                id
            } else {
                Vocabulary::UNK_ID as usize
            }
        })
        .collect();
    let d = cfg.text_pooled_dim;
    let mut e = Array2::zeros((ids.len(), d));
    for (r, (&id, &pos)) in ids.iter().zip(&positions).enumerate() {
        let mut row = e.row_mut(r);
        row.assign(&ndarray::ArrayView1::from(p.row(p.ix.tok_emb, id)));
        row += &ndarray::ArrayView1::from(p.row(p.ix.pos_emb, pos));
    }
    let (mut x, emb_ln) = layer_norm(e.view(), p.vec(p.ix.emb_ln_g), p.vec(p.ix.emb_ln_b));
    let n_layers = p.ix.layers.len();
    let mut layers = Vec::with_capacity(n_layers);
    for (li, l) in p.ix.layers.iter().enumerate() {
        let q_rows = if li + 1 == n_layers { 1 } else { x.nrows() };
        let (y, c) = encoder_forward(p, l, x, q_rows, cfg.text_heads);
        layers.push(c);
        x = y;
    }
    let cls = x.row(0).to_owned();
    let pooled = linear_vec(cls.view(), p.mat(p.ix.pool_w), p.vec(p.ix.pool_b)).mapv(f64::tanh);
    let mut dropped = pooled.clone();
    apply_mask(&mut dropped, &mask);
    let t = linear_vec(dropped.view(), p.mat(p.ix.tproj_w), p.vec(p.ix.tproj_b));
    (
        t,
        TextCache {
            ids,
            positions,
            emb_ln,
            layers,
            cls,
            pooled,
            dropped,
            mask,
        },
    )
}

fn text_backward(p: &ModelParams, c: &TextCache, dt: Array1<f64>, g: &mut Gradients) {
    let (gw, gb) = g.weight_bias(p.ix.tproj_w, p.ix.tproj_b);
    let mut dpd = linear_vec_backward(dt.view(), c.dropped.view(), p.mat(p.ix.tproj_w), gw, gb);
    apply_mask(&mut dpd, &c.mask);
    dpd.zip_mut_with(&c.pooled, |d, &t| *d *= 1.0 - t * t);
    let (gw, gb) = g.weight_bias(p.ix.pool_w, p.ix.pool_b);
    let dcls = linear_vec_backward(dpd.view(), c.cls.view(), p.mat(p.ix.pool_w), gw, gb);
    let mut dy = dcls.insert_axis(Axis(0));
    for (l, lc) in p.ix.layers.iter().zip(&c.layers).rev() {
        dy = encoder_backward(p, l, lc, dy, p.config.text_heads, g);
    }
    let (gg, gb) = g.vec_pair(p.ix.emb_ln_g, p.ix.emb_ln_b);
    let de = layer_norm_backward(dy.view(), &c.emb_ln, p.vec(p.ix.emb_ln_g), gg, gb);
    for (r, (&id, &pos)) in c.ids.iter().zip(&c.positions).enumerate() {
        let row = de.row(r);
        for (a, &b) in g.row_mut(p.ix.tok_emb, id).iter_mut().zip(row) {
            *a += b;
        }
        for (a, &b) in g.row_mut(p.ix.pos_emb, pos).iter_mut().zip(row) {
            *a += b;
        }
    }
}

pub(crate) struct HeadCache {
    z: Array1<f64>,
    hidden: Array1<f64>,
    mask: Option<Array1<f64>>,
    visual_dim: usize,
}

fn head_forward(
    p: &ModelParams,
    v: &Array1<f64>,
    t: &Array1<f64>,
    mask: Option<Array1<f64>>,
) -> (Vec<f64>, HeadCache) {
    let mut z = ndarray::concatenate(Axis(0), &[v.view(), t.view()]).expect("1-d concat");
    apply_mask(&mut z, &mask);
    let hidden = linear_vec(z.view(), p.mat(p.ix.fc1_w), p.vec(p.ix.fc1_b)).mapv(|x| x.max(0.0));
    let logits = linear_vec(hidden.view(), p.mat(p.ix.fc2_w), p.vec(p.ix.fc2_b));
    (
        logits.to_vec(),
        HeadCache {
            z,
            hidden,
            mask,
            visual_dim: v.len(),
        },
    )
}

fn head_backward(
    p: &ModelParams,
    c: &HeadCache,
    dlogits: &[f64],
    g: &mut Gradients,
) -> (Array1<f64>, Array1<f64>) {
    let dl = Array1::from(dlogits.to_vec());
    let (gw, gb) = g.weight_bias(p.ix.fc2_w, p.ix.fc2_b);
    let mut dh = linear_vec_backward(dl.view(), c.hidden.view(), p.mat(p.ix.fc2_w), gw, gb);
    dh.zip_mut_with(&c.hidden, |d, &h| {
        if h <= 0.0 {
            *d = 0.0
        }
    });
    let (gw, gb) = g.weight_bias(p.ix.fc1_w, p.ix.fc1_b);
    let mut dz = linear_vec_backward(dh.view(), c.z.view(), p.mat(p.ix.fc1_w), gw, gb);
    apply_mask(&mut dz, &c.mask);
    let dt = dz.slice(s![c.visual_dim..]).to_owned();
    dz.slice_collapse(s![..c.visual_dim]);
    (dz, dt)
}

pub(crate) struct Cache {
    pub visual: VisualCache,
    pub text: TextCache,
    pub head: HeadCache,
    pub logits: Vec<f64>,
}

impl Cache {
    /// Fingerprint of every ReLU on/off state. Finite differences are only
    /// meaningful when a perturbation leaves it unchanged.
    pub(crate) fn relu_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for conv in &self.visual.convs {
            for &v in conv.out.iter() {
                (v > 0.0).hash(&mut h);
            }
        }
        for &v in self.head.hidden.iter() {
            (v > 0.0).hash(&mut h);
        }
        h.finish()
    }
}

pub(crate) fn check_visual(p: &ModelParams, v: &VisualInput) -> Result<()> {
    let (w, h) = p.config.visual_input_dims();
    if v.width != w || v.height != h || v.data.len() != 3 * w * h {
        return Err(Error::invalid(format!(
            "visual input is {}x{} ({} values), model expects {w}x{h}",
            v.width,
            v.height,
            v.data.len()
        )));
    }
    Ok(())
}

/// Full forward pass over a channel-major input of the configured size.
pub(crate) fn forward(p: &ModelParams, visual: Vec<f64>, tokens: &TokenSequence, mode: Mode) -> Cache {
    let (w, h) = p.config.visual_input_dims();
    let m = masks(p, mode);
    let (v, visual) = visual_forward(p, visual, w, h, m.visual);
    let (t, text) = text_forward(p, tokens, m.text);
    let (logits, head) = head_forward(p, &v, &t, m.fusion);
    Cache {
        visual,
        text,
        head,
        logits,
    }
}

/// Accumulates parameter gradients for `dlogits`; returns the input
/// gradient (channel-major, downscaled) when requested.
pub(crate) fn backward(
    p: &ModelParams,
    cache: &Cache,
    dlogits: &[f64],
    g: &mut Gradients,
    input_grad: bool,
) -> Option<Vec<f64>> {
    let (dv, dt) = head_backward(p, &cache.head, dlogits, g);
    text_backward(p, &cache.text, dt, g);
    visual_backward(p, &cache.visual, dv, g, input_grad)
}

/// 576-d visual feature in eval mode.
pub fn visual_features(p: &ModelParams, v: &VisualInput) -> Result<Vec<f64>> {
    check_visual(p, v)?;
    Ok(visual_forward(p, v.to_f64(), v.width, v.height, None).0.to_vec())
}

/// 128-d projected text feature in eval mode.
pub fn text_embedding(p: &ModelParams, tokens: &TokenSequence) -> Vec<f64> {
    text_forward(p, tokens, None).0.to_vec()
}

pub fn fuse_and_classify(p: &ModelParams, visual: &[f64], text: &[f64]) -> Result<Prediction> {
    if visual.len() != p.config.visual_dim || text.len() != p.config.text_proj_dim {
        return Err(Error::invalid(format!(
            "feature sizes {}+{} do not match {}+{}",
            visual.len(),
            text.len(),
            p.config.visual_dim,
            p.config.text_proj_dim
        )));
    }
    let v = Array1::from(visual.to_vec());
    let t = Array1::from(text.to_vec());
    Ok(Prediction::from_logits(&head_forward(p, &v, &t, None).0))
}

pub fn predict_example(p: &ModelParams, ex: &Example) -> Result<Prediction> {
    check_visual(p, &ex.visual)?;
    let cache = forward(p, ex.visual.to_f64(), &ex.tokens, Mode::Eval);
    Ok(Prediction::from_logits(&cache.logits))
}

pub fn predict(p: &ModelParams, img: &NormalizedImage, tokens: &TokenSequence) -> Prediction {
    let v = VisualInput::from_normalized(img, p.config.visual_downscale);
    let cache = forward(p, v.to_f64(), tokens, Mode::Eval);
    Prediction::from_logits(&cache.logits)
}

pub fn predict_float(p: &ModelParams, img: &FloatImage, tokens: &TokenSequence) -> Prediction {
    let (_, _, v) = VisualInput::float_values(img, p.config.visual_downscale);
    let cache = forward(p, v, tokens, Mode::Eval);
    Prediction::from_logits(&cache.logits)
}

/// Differentiable image classifier seen by the attack.
pub trait AttackTarget {
    /// Cross-entropy of `label` and its gradient with respect to every
    /// value of `image`.
    fn loss_and_gradient(&self, image: &FloatImage, label: usize) -> (f64, Vec<f64>);

    /// Predicted class index.
    fn predict_label(&self, image: &FloatImage) -> usize;
}

/// The dual-branch model with its text embedding held fixed.
pub struct DualBranchTarget<'a> {
    params: &'a ModelParams,
    text: Array1<f64>,
    scratch: Mutex<Gradients>,
}

impl<'a> DualBranchTarget<'a> {
    pub fn new(params: &'a ModelParams, tokens: &TokenSequence) -> Self {
        Self {
            params,
            text: text_forward(params, tokens, None).0,
            scratch: Mutex::new(Gradients::zeros_like(params)),
        }
    }

    fn logits(&self, image: &FloatImage) -> (Vec<f64>, VisualCache, HeadCache) {
        let factor = self.params.config.visual_downscale;
        let (w, h, x) = VisualInput::float_values(image, factor);
        let (v, vc) = visual_forward(self.params, x, w, h, None);
        let (logits, hc) = head_forward(self.params, &v, &self.text, None);
        (logits, vc, hc)
    }
}

impl AttackTarget for DualBranchTarget<'_> {
    fn loss_and_gradient(&self, image: &FloatImage, label: usize) -> (f64, Vec<f64>) {
        let (logits, vc, hc) = self.logits(image);
        let prob = softmax(&logits);
        let loss = -prob[label].max(f64::MIN_POSITIVE).ln();
        let dlogits: Vec<f64> = prob
            .iter()
            .enumerate()
            .map(|(c, &pc)| pc - if c == label { 1.0 } else { 0.0 })
            .collect();
        let mut g = self.scratch.lock().unwrap_or_else(|e| e.into_inner());
        let (dv, _) = head_backward(self.params, &hc, &dlogits, &mut g);
        let small = visual_backward(self.params, &vc, dv, &mut g, true).expect("input gradient");
        let grad = VisualInput::upsample_gradient(&small, self.params.config.visual_downscale);
        (loss, grad)
    }

    fn predict_label(&self, image: &FloatImage) -> usize {
        let (logits, _, _) = self.logits(image);
        if logits[MALICIOUS] > logits[BENIGN] {
            MALICIOUS
        } else {
            BENIGN
        }
    }
}
