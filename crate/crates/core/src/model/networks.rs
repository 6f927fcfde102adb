//! Convolutional encoder and MLP decoder.

use crate::autodiff::{glorot_uniform, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::posterior::{positive_diag, BandedCholesky, StructuredGaussian};

use super::config::{DecoderConfig, EncoderConfig};

struct Dense {
    weight: ParamId,
    bias: ParamId,
}

struct Conv {
    weight: ParamId,
    bias: ParamId,
}

/// Parameter handles for the whole model.
struct Layout {
    image: Vec<Conv>,
    temporal: Conv,
    enc_hidden: Vec<Dense>,
    head: Dense,
    dec_hidden: Vec<Dense>,
    dec_out: Dense,
}

/// Variational parameters of a batch, all `(N, T, m)` except the
/// `(N, T−1, m)` superdiagonal.
#[derive(Clone, Copy, Debug)]
pub struct PosteriorVars {
    pub mean: Var,
    pub diag: Var,
    pub superdiag: Var,
}

/// Encoder/decoder pair with its parameters.
pub struct DgpVae {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl std::fmt::Debug for DgpVae {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DgpVae")
            .field("encoder", &self.encoder)
            .field("decoder", &self.decoder)
            .field("num_params", &self.params.num_scalars())
            .finish()
    }
}

/// (name, shape, fan_in, fan_out) for every parameter, in registration order.
fn param_specs(enc: &EncoderConfig, dec: &DecoderConfig) -> Vec<(String, Vec<usize>, usize, usize)> {
    let mut specs = Vec::new();
    let dense = |specs: &mut Vec<_>, name: String, fi: usize, fo: usize| {
        specs.push((format!("{name}.weight"), vec![fi, fo], fi, fo));
        specs.push((format!("{name}.bias"), vec![fo], fi, fo));
    };

    let mut features = enc.input_dim;
    if let Some(img) = &enc.image_preproc {
        let mut cin = 1;
        for i in 0..img.layers {
            let k = img.filter_size;
            let (fi, fo) = (k * k * cin, k * k * img.filters);
            specs.push((format!("encoder.image.{i}.weight"), vec![k, k, cin, img.filters], fi, fo));
            specs.push((format!("encoder.image.{i}.bias"), vec![img.filters], fi, fo));
            cin = img.filters;
        }
        features = img.height * img.width * img.filters;
    }
    let (k, f) = (enc.temporal_conv.filter_width, enc.temporal_conv.filters);
    specs.push(("encoder.temporal.weight".into(), vec![k, features, f], k * features, k * f));
    specs.push(("encoder.temporal.bias".into(), vec![f], k * features, k * f));
    let mut width = f;
    for i in 0..enc.feedforward.layers {
        dense(&mut specs, format!("encoder.hidden.{i}"), width, enc.feedforward.width);
        width = enc.feedforward.width;
    }
    dense(&mut specs, "encoder.head".into(), width, 3 * enc.latent_dim);

    let mut width = enc.latent_dim;
    for i in 0..dec.feedforward.layers {
        dense(&mut specs, format!("decoder.hidden.{i}"), width, dec.feedforward.width);
        width = dec.feedforward.width;
    }
    dense(&mut specs, "decoder.out".into(), width, dec.output_dim);
    specs
}

impl DgpVae {
    /// Fresh model: Glorot-uniform weights, zero biases.
    pub fn new<R: rand::Rng + ?Sized>(
        encoder: EncoderConfig,
        decoder: DecoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        encoder.validate()?;
        decoder.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, fi, fo) in param_specs(&encoder, &decoder) {
            let value = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                glorot_uniform(&shape, fi, fo, rng)
            };
            params.insert(name, value)?;
        }
        Self::from_params(encoder, decoder, params)
    }

    /// Wraps existing parameters, checking names and shapes.
    pub fn from_params(encoder: EncoderConfig, decoder: DecoderConfig, params: ParamStore) -> Result<Self> {
        encoder.validate()?;
        decoder.validate()?;
        for (name, shape, _, _) in param_specs(&encoder, &decoder) {
            match params.by_name(&name) {
                Some(p) if p.value.shape() == shape.as_slice() => {}
                Some(p) => {
                    return Err(Error::Dimension(format!(
                        "parameter `{name}` has shape {:?}, config expects {:?}",
                        p.value.shape(),
                        shape
                    )))
                }
                None => return Err(Error::Dimension(format!("missing parameter `{name}`"))),
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let dense = |n: &str| Dense {
            weight: id(&format!("{n}.weight")),
            bias: id(&format!("{n}.bias")),
        };
        let image_layers = encoder.image_preproc.as_ref().map_or(0, |i| i.layers);
        let layout = Layout {
            image: (0..image_layers)
                .map(|i| Conv {
                    weight: id(&format!("encoder.image.{i}.weight")),
                    bias: id(&format!("encoder.image.{i}.bias")),
                })
                .collect(),
            temporal: Conv {
                weight: id("encoder.temporal.weight"),
                bias: id("encoder.temporal.bias"),
            },
            enc_hidden: (0..encoder.feedforward.layers)
                .map(|i| dense(&format!("encoder.hidden.{i}")))
                .collect(),
            head: dense("encoder.head"),
            dec_hidden: (0..decoder.feedforward.layers)
                .map(|i| dense(&format!("decoder.hidden.{i}")))
                .collect(),
            dec_out: dense("decoder.out"),
        };
        Ok(Self {
            encoder,
            decoder,
            params,
            layout,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim
    }

    fn linear(&self, tape: &mut Tape, x: Var, layer: &Dense) -> Result<Var> {
        let w = tape.param(&self.params, layer.weight);
        let b = tape.param(&self.params, layer.bias);
        let h = tape.matmul(x, w)?;
        tape.add_bias(h, b)
    }

    /// Records the encoder on `tape` for observations `x` of shape `(N, T, d)`.
    pub fn encode_on_tape(&self, tape: &mut Tape, x: Var) -> Result<PosteriorVars> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 3 || shape[2] != self.encoder.input_dim || shape[1] == 0 {
            return Err(Error::shape(
                "encode",
                format!("observations {:?}, expected (N, T, {})", shape, self.encoder.input_dim),
            ));
        }
        let (n, t, m) = (shape[0], shape[1], self.encoder.latent_dim);

        let mut h = x;
        if let Some(img) = &self.encoder.image_preproc {
            h = tape.reshape(h, &[n * t, img.height, img.width, 1])?;
            for conv in &self.layout.image {
                let w = tape.param(&self.params, conv.weight);
                let b = tape.param(&self.params, conv.bias);
                h = tape.conv2d(h, w, b)?;
                h = tape.relu(h);
            }
            h = tape.reshape(h, &[n, t, img.height * img.width * img.filters])?;
        }
        let w = tape.param(&self.params, self.layout.temporal.weight);
        let b = tape.param(&self.params, self.layout.temporal.bias);
        h = tape.conv1d(h, w, b)?;
        h = tape.relu(h);
        h = tape.reshape(h, &[n * t, self.encoder.temporal_conv.filters])?;
        for layer in &self.layout.enc_hidden {
            h = self.linear(tape, h, layer)?;
            h = tape.relu(h);
        }
        let head = self.linear(tape, h, &self.layout.head)?;
        let head = tape.reshape(head, &[n, t, 3 * m])?;
        let mean = tape.slice(head, 2, 0, m)?;
        let raw_diag = tape.slice(head, 2, m, m)?;
        let diag = positive_diag(tape, raw_diag);
        let superdiag = if self.encoder.zero_superdiag {
            tape.leaf(Tensor::zeros(&[n, t - 1, m]))
        } else {
            let s = tape.slice(head, 2, 2 * m, m)?;
            tape.slice(s, 1, 0, t - 1)?
        };
        Ok(PosteriorVars {
            mean,
            diag,
            superdiag,
        })
    }

    /// Records the decoder on `tape` for latents `z` of shape `(R, m)`.
    pub fn decode_on_tape(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let shape = tape.value(z).shape();
        if shape.len() != 2 || shape[1] != self.encoder.latent_dim {
            return Err(Error::shape(
                "decode",
                format!("latents {:?}, expected (rows, {})", shape, self.encoder.latent_dim),
            ));
        }
        let mut h = z;
        for layer in &self.layout.dec_hidden {
            h = self.linear(tape, h, layer)?;
            h = tape.relu(h);
        }
        self.linear(tape, h, &self.layout.dec_out)
    }

    /// Posterior of every series: `result[b][j]` is channel `j` of series `b`.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<Vec<StructuredGaussian>>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let vars = self.encode_on_tape(&mut tape, xv)?;
        let (mean, diag, sup) = (
            tape.value(vars.mean),
            tape.value(vars.diag),
            tape.value(vars.superdiag),
        );
        let (n, t, m) = (mean.shape()[0], mean.shape()[1], mean.shape()[2]);
        let pick = |data: &[f64], len: usize, b: usize, j: usize| -> Vec<f64> {
            (0..len).map(|s| data[(b * len + s) * m + j]).collect()
        };
        (0..n)
            .map(|b| {
                (0..m)
                    .map(|j| {
                        let band = BandedCholesky::new(
                            pick(diag.data(), t, b, j),
                            pick(sup.data(), t - 1, b, j),
                        )?;
                        StructuredGaussian::new(pick(mean.data(), t, b, j), band)
                    })
                    .collect()
            })
            .collect()
    }

    /// Posterior means only, `(N, T, m)`.
    pub fn posterior_means(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let vars = self.encode_on_tape(&mut tape, xv)?;
        Ok(tape.value(vars.mean).clone())
    }

    /// Decoder mean `g(z)` for a single latent vector.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let zv = tape.leaf(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let out = self.decode_on_tape(&mut tape, zv)?;
        Ok(tape.value(out).data().to_vec())
    }
}
