use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};

/// A named, shaped block of parameters stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EncoderLayerIx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub ff1_w: usize,
    pub ff1_b: usize,
    pub ff2_w: usize,
    pub ff2_b: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

/// Tensor indices in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    pub conv: Vec<(usize, usize)>,
    pub vproj_w: usize,
    pub vproj_b: usize,
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub emb_ln_g: usize,
    pub emb_ln_b: usize,
    pub layers: Vec<EncoderLayerIx>,
    pub pool_w: usize,
    pub pool_b: usize,
    pub tproj_w: usize,
    pub tproj_b: usize,
    pub fc1_w: usize,
    pub fc1_b: usize,
    pub fc2_w: usize,
    pub fc2_b: usize,
}

/// Kind of initialization a tensor receives.
#[derive(Clone, Copy)]
enum Init {
    Zero,
    One,
    /// N(0, sqrt(2 / fan_in)).
    He(usize),
    /// N(0, sqrt(1 / fan_in)).
    Lecun(usize),
    /// N(0, 0.02).
    Embedding,
}

fn declare(config: &ModelConfig) -> (Vec<(String, Vec<usize>, Init)>, Layout) {
    let mut decl: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, init: Init| {
        decl.push((name, shape, init));
        decl.len() - 1
    };

    let mut conv = Vec::new();
    let mut c_in = 3;
    for (i, &c_out) in config.conv_channels.iter().enumerate() {
        let w = push(format!("visual.conv{i}.weight"), vec![c_out, c_in * 9], Init::He(c_in * 9));
        let b = push(format!("visual.conv{i}.bias"), vec![c_out], Init::Zero);
        conv.push((w, b));
        c_in = c_out;
    }
    let vproj_w = push("visual.proj.weight".into(), vec![config.visual_dim, c_in], Init::He(c_in));
    let vproj_b = push("visual.proj.bias".into(), vec![config.visual_dim], Init::Zero);

    let d = config.text_pooled_dim;
    let tok_emb = push("text.token_embedding".into(), vec![config.vocab_size, d], Init::Embedding);
    let pos_emb = push("text.position_embedding".into(), vec![config.max_tokens, d], Init::Embedding);
    let emb_ln_g = push("text.embedding_norm.gamma".into(), vec![d], Init::One);
    let emb_ln_b = push("text.embedding_norm.beta".into(), vec![d], Init::Zero);
    let mut layers = Vec::new();
    for l in 0..config.text_layers {
        let p = |s: &str| format!("text.layer{l}.{s}");
        let ff = config.text_ffn_dim;
        layers.push(EncoderLayerIx {
            wq: push(p("query.weight"), vec![d, d], Init::Lecun(d)),
            bq: push(p("query.bias"), vec![d], Init::Zero),
            wk: push(p("key.weight"), vec![d, d], Init::Lecun(d)),
            bk: push(p("key.bias"), vec![d], Init::Zero),
            wv: push(p("value.weight"), vec![d, d], Init::Lecun(d)),
            bv: push(p("value.bias"), vec![d], Init::Zero),
            wo: push(p("output.weight"), vec![d, d], Init::Lecun(d)),
            bo: push(p("output.bias"), vec![d], Init::Zero),
            ln1_g: push(p("attention_norm.gamma"), vec![d], Init::One),
            ln1_b: push(p("attention_norm.beta"), vec![d], Init::Zero),
            ff1_w: push(p("ffn.in.weight"), vec![ff, d], Init::He(d)),
            ff1_b: push(p("ffn.in.bias"), vec![ff], Init::Zero),
            ff2_w: push(p("ffn.out.weight"), vec![d, ff], Init::Lecun(ff)),
            ff2_b: push(p("ffn.out.bias"), vec![d], Init::Zero),
            ln2_g: push(p("ffn_norm.gamma"), vec![d], Init::One),
            ln2_b: push(p("ffn_norm.beta"), vec![d], Init::Zero),
        });
    }
    let pool_w = push("text.pooler.weight".into(), vec![d, d], Init::Lecun(d));
    let pool_b = push("text.pooler.bias".into(), vec![d], Init::Zero);
    let tproj_w = push("text.proj.weight".into(), vec![config.text_proj_dim, d], Init::Lecun(d));
    let tproj_b = push("text.proj.bias".into(), vec![config.text_proj_dim], Init::Zero);

    let fc1_w = push("head.fc1.weight".into(), vec![config.head_hidden, config.fused_dim], Init::He(config.fused_dim));
    let fc1_b = push("head.fc1.bias".into(), vec![config.head_hidden], Init::Zero);
    let fc2_w = push("head.fc2.weight".into(), vec![config.classes, config.head_hidden], Init::Lecun(config.head_hidden));
    let fc2_b = push("head.fc2.bias".into(), vec![config.classes], Init::Zero);

    let layout = Layout {
        conv,
        vproj_w,
        vproj_b,
        tok_emb,
        pos_emb,
        emb_ln_g,
        emb_ln_b,
        layers,
        pool_w,
        pool_b,
        tproj_w,
        tproj_b,
        fc1_w,
        fc1_b,
        fc2_w,
        fc2_b,
    };
    (decl, layout)
}

/// All learnable tensors of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    pub seed: u64,
    pub(crate) ix: Layout,
}

impl ModelParams {
    /// Seeded random initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (decl, ix) = declare(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = decl
            .into_iter()
            .map(|(name, shape, init)| {
                let mut t = Tensor::zeros(name, shape);
                let std = match init {
                    Init::Zero => None,
                    Init::One => {
                        t.data.fill(1.0);
                        None
                    }
                    Init::He(fan_in) => Some((2.0 / fan_in as f64).sqrt()),
                    Init::Lecun(fan_in) => Some((1.0 / fan_in as f64).sqrt()),
                    Init::Embedding => Some(0.02),
                };
                if let Some(std) = std {
                    let normal = Normal::new(0.0, std).expect("valid std");
                    t.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
                }
                t
            })
            .collect();
        Ok(Self {
            config,
            tensors,
            seed,
            ix,
        })
    }

    /// Every tensor zero (layer-norm gains included).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (decl, ix) = declare(&config);
        let tensors = decl
            .into_iter()
            .map(|(name, shape, _)| Tensor::zeros(name, shape))
            .collect();
        Ok(Self {
            config,
            tensors,
            seed: 0,
            ix,
        })
    }

    /// Reassembles parameters from tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>, seed: u64) -> Result<Self> {
        config.validate()?;
        let (decl, ix) = declare(&config);
        if decl.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                decl.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), t) in decl.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
        }
        Ok(Self {
            config,
            tensors,
            seed,
            ix,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn mat(&self, i: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[i];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("matrix shape")
    }

    pub(crate) fn vec(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[i].data[..])
    }

    pub(crate) fn row(&self, i: usize, r: usize) -> &[f64] {
        let t = &self.tensors[i];
        let c = t.shape[1];
        &t.data[r * c..(r + 1) * c]
    }
}

/// Gradient buffers mirroring a [`ModelParams`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            shapes: params.tensors.iter().map(|t| t.shape.clone()).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.tensors.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|g| g.is_finite())
    }

    fn two_mut(&mut self, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
        assert!(a < b, "tensor indices must be increasing");
        let (lo, hi) = self.tensors.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    }

    /// Weight matrix and bias vector views for one layer.
    pub(crate) fn weight_bias(&mut self, w: usize, b: usize) -> (ArrayViewMut2<'_, f64>, ArrayViewMut1<'_, f64>) {
        let shape = (self.shapes[w][0], self.shapes[w][1]);
        let (tw, tb) = self.two_mut(w, b);
        (
            ArrayViewMut2::from_shape(shape, tw).expect("matrix shape"),
            ArrayViewMut1::from(tb),
        )
    }

    pub(crate) fn vec_pair(&mut self, a: usize, b: usize) -> (ArrayViewMut1<'_, f64>, ArrayViewMut1<'_, f64>) {
        let (ta, tb) = self.two_mut(a, b);
        (ArrayViewMut1::from(ta), ArrayViewMut1::from(tb))
    }

    pub(crate) fn row_mut(&mut self, i: usize, r: usize) -> &mut [f64] {
        let c = self.shapes[i][1];
        &mut self.tensors[i][r * c..(r + 1) * c]
    }
}
