//! Parameter tree and its flat, named tensor view.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{LayerNorm, Linear};
use super::ModelConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub self_attn: Attention,
    pub self_attn_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub self_attn_norm: LayerNorm,
    pub cross_attn: Attention,
    pub cross_attn_norm: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ff_norm: LayerNorm,
}

/// All trainable tensors. The token embedding is shared by the encoder,
/// the decoder and the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub token_embedding: Array2<f64>,
    pub encoder_positions: Array2<f64>,
    pub decoder_positions: Array2<f64>,
    pub encoder_embed_norm: LayerNorm,
    pub decoder_embed_norm: LayerNorm,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    pub output_bias: Array1<f64>,
}

/// A named tensor with its shape and row-major data.
pub struct TensorView<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub(crate) trait Tensors {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>);
}

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

impl Tensors for Array2<f64> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(TensorView {
            name: prefix.to_string(),
            shape: self.shape().to_vec(),
            data: self.as_slice().expect("parameters are contiguous"),
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("parameters are contiguous")));
    }
}

impl Tensors for Array1<f64> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        out.push(TensorView {
            name: prefix.to_string(),
            shape: self.shape().to_vec(),
            data: self.as_slice().expect("parameters are contiguous"),
        });
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((prefix.to_string(), self.as_slice_mut().expect("parameters are contiguous")));
    }
}

impl<T: Tensors> Tensors for Vec<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
        for (i, item) in self.iter().enumerate() {
            item.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        for (i, item) in self.iter_mut().enumerate() {
            item.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

macro_rules! tensor_fields {
    ($ty:ty { $($field:ident),* $(,)? }) => {
        impl Tensors for $ty {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<TensorView<'a>>) {
                $( self.$field.collect(&join(prefix, stringify!($field)), out); )*
            }

            fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
                $( self.$field.collect_mut(&join(prefix, stringify!($field)), out); )*
            }
        }
    };
}

tensor_fields!(Linear { weight, bias });
tensor_fields!(LayerNorm { gamma, beta });
tensor_fields!(Attention { query, key, value, output });
tensor_fields!(EncoderLayer { self_attn, self_attn_norm, ff_in, ff_out, ff_norm });
tensor_fields!(DecoderLayer {
    self_attn,
    self_attn_norm,
    cross_attn,
    cross_attn_norm,
    ff_in,
    ff_out,
    ff_norm,
});
tensor_fields!(Params {
    token_embedding,
    encoder_positions,
    decoder_positions,
    encoder_embed_norm,
    decoder_embed_norm,
    encoder,
    decoder,
    output_bias,
});

/// Whether weight decay applies: matrices decay, biases and norms do not.
pub fn decays(name: &str) -> bool {
    !(name.ends_with("bias") || name.ends_with(".gamma") || name.ends_with(".beta"))
}

fn attention_zeros(d: usize) -> Attention {
    Attention {
        query: Linear::zeros(d, d),
        key: Linear::zeros(d, d),
        value: Linear::zeros(d, d),
        output: Linear::zeros(d, d),
    }
}

impl Params {
    /// Same shapes as a model with `config`, every entry zero.
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_size;
        let ff = config.intermediate_size;
        Self {
            token_embedding: Array2::zeros((config.vocab_size, d)),
            encoder_positions: Array2::zeros((config.max_positions, d)),
            decoder_positions: Array2::zeros((config.max_positions, d)),
            encoder_embed_norm: LayerNorm::zeros(d),
            decoder_embed_norm: LayerNorm::zeros(d),
            encoder: (0..config.num_layers)
                .map(|_| EncoderLayer {
                    self_attn: attention_zeros(d),
                    self_attn_norm: LayerNorm::zeros(d),
                    ff_in: Linear::zeros(d, ff),
                    ff_out: Linear::zeros(ff, d),
                    ff_norm: LayerNorm::zeros(d),
                })
                .collect(),
            decoder: (0..config.num_layers)
                .map(|_| DecoderLayer {
                    self_attn: attention_zeros(d),
                    self_attn_norm: LayerNorm::zeros(d),
                    cross_attn: attention_zeros(d),
                    cross_attn_norm: LayerNorm::zeros(d),
                    ff_in: Linear::zeros(d, ff),
                    ff_out: Linear::zeros(ff, d),
                    ff_norm: LayerNorm::zeros(d),
                })
                .collect(),
            output_bias: Array1::zeros(config.vocab_size),
        }
    }

    /// Normal(0, init_std) matrices, unit norm gains, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_std).expect("init_std validated");
        for (name, data) in params.tensors_mut() {
            if name.ends_with(".gamma") {
                data.fill(1.0);
            } else if decays(&name) {
                data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
        }
        params
    }

    /// Tensors in a fixed traversal order.
    pub fn tensors(&self) -> Vec<TensorView<'_>> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn fill(&mut self, value: f64) {
        for (_, data) in self.tensors_mut() {
            data.fill(value);
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, data) in self.tensors_mut() {
            data.iter_mut().for_each(|v| *v *= factor);
        }
    }
}
