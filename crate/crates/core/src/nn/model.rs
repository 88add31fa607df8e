use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::*;
use super::loss::{cce_loss, one_hot};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::features::FeatureImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    FullyConnected {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => in_channels >= 1 && out_channels >= 1 && kernel >= 1 && stride >= 1,
            LayerSpec::Maxpool { size, stride } => size >= 1 && stride >= 1,
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => in_features >= 1 && out_features >= 1,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid layer {self:?}: sizes must be >= 1"
            )))
        }
    }

    /// Closed-form weight plus bias count.
    pub fn parameter_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel + out_channels,
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    /// Output shape for one sample.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [c, h, w] => Ok((c, h, w)),
                _ => Err(Error::Shape(format!(
                    "{what} needs a C x H x W input, got {input:?}"
                ))),
            }
        };
        match *self {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = spatial("conv")?;
                if c != in_channels {
                    return Err(Error::Shape(format!(
                        "conv expects {in_channels} channels, previous layer gives {c}"
                    )));
                }
                Ok(vec![
                    out_channels,
                    conv_output_size(h, kernel, stride, padding)?,
                    conv_output_size(w, kernel, stride, padding)?,
                ])
            }
            LayerSpec::Relu | LayerSpec::Softmax => Ok(input.to_vec()),
            LayerSpec::Maxpool { size, stride } => {
                let (c, h, w) = spatial("maxpool")?;
                Ok(vec![
                    c,
                    conv_output_size(h, size, stride, 0)?,
                    conv_output_size(w, size, stride, 0)?,
                ])
            }
            LayerSpec::GlobalAvgPool => Ok(vec![spatial("global average pool")?.0]),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
            } => match *input {
                [f] if f == in_features => Ok(vec![out_features]),
                _ => Err(Error::Shape(format!(
                    "fully connected expects [{in_features}], previous layer gives {input:?}"
                ))),
            },
        }
    }
}

pub fn closed_form_parameter_count(specs: &[LayerSpec]) -> usize {
    specs.iter().map(LayerSpec::parameter_count).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input: [usize; 3],
    specs: Vec<LayerSpec>,
    params: Vec<Vec<Tensor>>,
    seed: u64,
}

enum Cache {
    Conv(ConvCache),
    Relu(Tensor),
    Pool(PoolCache),
    Gap(Vec<usize>),
    Fc(Tensor),
    None,
}

/// Output of [`Model::loss_and_gradients`].
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub probs: Tensor,
    pub grads: Vec<Vec<Tensor>>,
}

impl Model {
    /// Builds a model with fan-in-scaled uniform weights and zero biases.
    pub fn new(input: [usize; 3], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let layer = match *spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let limit = (6.0 / fan_in as f64).sqrt();
                    let dims = vec![out_channels, in_channels, kernel, kernel];
                    vec![uniform(&mut rng, dims, limit), Tensor::zeros(vec![out_channels])]
                }
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                } => {
                    let limit = (1.0 / in_features as f64).sqrt();
                    let dims = vec![out_features, in_features];
                    vec![uniform(&mut rng, dims, limit), Tensor::zeros(vec![out_features])]
                }
                _ => Vec::new(),
            };
            params.push(layer);
        }
        Self::from_parts(input, specs, params, seed)
    }

    pub fn from_parts(
        input: [usize; 3],
        specs: Vec<LayerSpec>,
        params: Vec<Vec<Tensor>>,
        seed: u64,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        if params.len() != specs.len() {
            return Err(Error::Shape(format!(
                "{} parameter groups for {} layers",
                params.len(),
                specs.len()
            )));
        }
        let mut shape = input.to_vec();
        for (i, (spec, p)) in specs.iter().zip(&params).enumerate() {
            spec.validate()?;
            shape = spec
                .output_shape(&shape)
                .map_err(|e| Error::Shape(format!("layer {i} ({spec:?}): {e}")))?;
            let expected: Vec<Vec<usize>> = match *spec {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => vec![
                    vec![out_channels, in_channels, kernel, kernel],
                    vec![out_channels],
                ],
                LayerSpec::FullyConnected {
                    in_features,
                    out_features,
                } => vec![vec![out_features, in_features], vec![out_features]],
                _ => Vec::new(),
            };
            let got: Vec<Vec<usize>> = p.iter().map(|t| t.dims().to_vec()).collect();
            if got != expected {
                return Err(Error::Shape(format!(
                    "layer {i} parameters {got:?}, expected {expected:?}"
                )));
            }
        }
        if shape.len() != 1 {
            return Err(Error::Shape(format!(
                "model must end in a vector, ends in {shape:?}"
            )));
        }
        Ok(Self {
            input,
            specs,
            params,
            seed,
        })
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<Tensor>] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        let mut shape = self.input.to_vec();
        for spec in &self.specs {
            shape = spec.output_shape(&shape).expect("validated at construction");
        }
        shape[0]
    }

    /// Index one past the last layer that produces logits; a trailing
    /// softmax is folded into the loss.
    fn logits_end(&self) -> usize {
        match self.specs.last() {
            Some(LayerSpec::Softmax) => self.specs.len() - 1,
            _ => self.specs.len(),
        }
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let dims = batch.dims();
        if dims.len() != 4 || dims[1..] != self.input {
            return Err(Error::Shape(format!(
                "model expects N x {:?} input, got {dims:?}",
                self.input
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &Tensor, keep: bool) -> Result<(Tensor, Cache)> {
        let p = &self.params[i];
        Ok(match self.specs[i] {
            LayerSpec::Conv { stride, padding, .. } => {
                let (y, c) = conv2d_forward_cached(x, &p[0], &p[1], stride, padding)?;
                (y, if keep { Cache::Conv(c) } else { Cache::None })
            }
            LayerSpec::Relu => (
                relu_forward(x),
                if keep { Cache::Relu(x.clone()) } else { Cache::None },
            ),
            LayerSpec::Maxpool { size, stride } => {
                let (y, c) = maxpool_forward(x, size, stride)?;
                (y, Cache::Pool(c))
            }
            LayerSpec::GlobalAvgPool => (global_avg_pool_forward(x)?, Cache::Gap(x.dims().to_vec())),
            LayerSpec::FullyConnected { .. } => (
                fully_connected_forward(x, &p[0], &p[1])?,
                if keep { Cache::Fc(x.clone()) } else { Cache::None },
            ),
            LayerSpec::Softmax => (softmax(x), Cache::None),
        })
    }

    fn layer_backward(&self, i: usize, grad: &Tensor, cache: Cache) -> Result<(Tensor, Vec<Tensor>)> {
        let p = &self.params[i];
        Ok(match (self.specs[i], cache) {
            (LayerSpec::Conv { .. }, Cache::Conv(c)) => {
                let (gi, gw, gb) = conv2d_backward(grad, &c, &p[0])?;
                (gi, vec![gw, gb])
            }
            (LayerSpec::Relu, Cache::Relu(x)) => (relu_backward(grad, &x)?, Vec::new()),
            (LayerSpec::Maxpool { .. }, Cache::Pool(c)) => (maxpool_backward(grad, &c)?, Vec::new()),
            (LayerSpec::GlobalAvgPool, Cache::Gap(dims)) => {
                (global_avg_pool_backward(grad, &dims)?, Vec::new())
            }
            (LayerSpec::FullyConnected { .. }, Cache::Fc(x)) => {
                let (gi, gw, gb) = fully_connected_backward(grad, &x, &p[0])?;
                (gi, vec![gw, gb])
            }
            (spec, _) => {
                return Err(Error::Shape(format!(
                    "no backward cache for layer {i} ({spec:?})"
                )))
            }
        })
    }

    fn run(&self, from: usize, to: usize, mut x: Tensor) -> Result<Tensor> {
        for i in from..to {
            x = self.layer_forward(i, &x, false)?.0;
        }
        Ok(x)
    }

    /// Class probabilities for an `N x C x H x W` batch, `N x classes`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let logits = self.run(0, self.logits_end(), batch.clone())?;
        Ok(softmax(&logits))
    }

    /// Mean cross-entropy over the batch and its parameter gradients.
    pub fn loss_and_gradients(&self, batch: &Tensor, labels: &[usize]) -> Result<BatchGradients> {
        self.check_batch(batch)?;
        if labels.len() != batch.dims()[0] {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                batch.dims()[0]
            )));
        }
        let end = self.logits_end();
        let mut caches = Vec::with_capacity(end);
        let mut x = batch.clone();
        for i in 0..end {
            let (y, c) = self.layer_forward(i, &x, true)?;
            caches.push(c);
            x = y;
        }
        let probs = softmax(&x);
        let targets = one_hot(labels, probs.dims()[1])?;
        let (loss, mut grad) = cce_loss(&probs, &targets)?;
        let mut grads = vec![Vec::new(); self.specs.len()];
        for i in (0..end).rev() {
            let cache = caches.pop().expect("one cache per layer");
            let (g, pg) = self.layer_backward(i, &grad, cache)?;
            grads[i] = pg;
            grad = g;
        }
        Ok(BatchGradients { loss, probs, grads })
    }
}

fn uniform(rng: &mut ChaCha8Rng, dims: Vec<usize>, limit: f64) -> Tensor {
    let n = dims.iter().product();
    Tensor::new(dims, (0..n).map(|_| rng.gen_range(-limit..limit)).collect()).expect("length from dims")
}

pub fn count_parameters(model: &Model) -> usize {
    model.params.iter().flatten().map(Tensor::len).sum()
}

/// Large-kernel stem followed by 5x5 and 3x3 stages, GAP and a linear head.
pub fn reference_specs(in_channels: usize, num_classes: usize) -> Vec<LayerSpec> {
    let conv = |i, o, k, s, p| LayerSpec::Conv {
        in_channels: i,
        out_channels: o,
        kernel: k,
        stride: s,
        padding: p,
    };
    let pool = LayerSpec::Maxpool { size: 2, stride: 2 };
    vec![
        conv(in_channels, 32, 7, 2, 3),
        LayerSpec::Relu,
        pool,
        conv(32, 64, 5, 1, 2),
        LayerSpec::Relu,
        pool,
        conv(64, 128, 3, 1, 1),
        LayerSpec::Relu,
        pool,
        conv(128, 256, 3, 1, 1),
        LayerSpec::Relu,
        pool,
        conv(256, 512, 3, 1, 1),
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::FullyConnected {
            in_features: 512,
            out_features: num_classes,
        },
        LayerSpec::Softmax,
    ]
}

pub fn build_reference_model(
    height: usize,
    width: usize,
    channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Model> {
    if height < 32 || width < 32 {
        return Err(Error::Shape(format!(
            "reference model needs at least 32x32 input for its pooling chain, got {height}x{width}"
        )));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    Model::new(
        [channels, height, width],
        reference_specs(channels, num_classes),
        seed,
    )
}

/// Class probabilities for one feature image.
pub fn predict(model: &Model, image: &FeatureImage) -> Result<Vec<f64>> {
    let [c, h, w] = model.input_shape();
    if image.height != h || image.width != w || c != 3 {
        return Err(Error::Shape(format!(
            "model expects {c}x{h}x{w}, image is 3x{}x{}",
            image.height, image.width
        )));
    }
    let x = Tensor::new(vec![1, c, h, w], image.to_chw())?;
    Ok(model.forward(&x)?.into_data())
}

/// Class probabilities for a batch of `C x H x W` samples, one row each.
pub fn predict_batch(model: &Model, samples: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let probs = model.forward(&Tensor::stack(samples)?)?;
    let c = probs.dims()[1];
    Ok(probs.data().chunks_exact(c).map(<[f64]>::to_vec).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(layer, tensor, index)` of the worst parameter.
    pub worst: (usize, usize, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Perturbations evaluated together through the downstream layers.
const PROBE_BATCH: usize = 32;

/// Central differences on a random subsample of parameters.
///
/// The relative error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// parameters with a vanishing gradient from dividing roundoff by ~0.
/// A perturbed weight only changes one output channel of its layer, so that
/// channel is recomputed from the cached layer input and the perturbed
/// activations are pushed through the rest of the network as a batch.
pub fn gradient_check(
    model: &Model,
    sample: &Tensor,
    label: usize,
    fraction: f64,
    step: f64,
    floor: f64,
    seed: u64,
) -> Result<GradientCheck> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let batch = Tensor::stack(&[sample])?;
    let analytic = model.loss_and_gradients(&batch, &[label])?.grads;

    let end = model.logits_end();
    let mut acts = vec![batch];
    for i in 0..end {
        let next = model.layer_forward(i, acts.last().expect("non-empty"), false)?.0;
        acts.push(next);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = GradientCheck {
        max_relative_error: 0.0,
        checked: 0,
        worst: (0, 0, 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for l in 0..end {
        let params = &model.params[l];
        let mut picks = Vec::new();
        for (t, tensor) in params.iter().enumerate() {
            let len = tensor.len();
            let take = ((len as f64 * fraction).ceil() as usize).min(len);
            picks.extend(index::sample(&mut rng, len, take).into_iter().map(|j| (t, j)));
        }
        let out = &acts[l + 1];
        let out_dims = out.dims()[1..].to_vec();
        let plane: usize = out_dims[1..].iter().product();

        let mut p = params.clone();
        for chunk in picks.chunks(PROBE_BATCH) {
            let mut probes = Vec::with_capacity(chunk.len() * 2 * out.len());
            for &(t, j) in chunk {
                let orig = p[t].data()[j];
                for delta in [step, -step] {
                    p[t].data_mut()[j] = orig + delta;
                    let mut y = out.data().to_vec();
                    match model.specs[l] {
                        LayerSpec::Conv {
                            stride,
                            padding,
                            in_channels,
                            kernel,
                            ..
                        } => {
                            let o = if t == 0 {
                                j / (in_channels * kernel * kernel)
                            } else {
                                j
                            };
                            let channel = conv2d_forward_channel(&acts[l], &p[0], &p[1], stride, padding, o)?;
                            y[o * plane..(o + 1) * plane].copy_from_slice(&channel);
                        }
                        LayerSpec::FullyConnected { in_features, .. } => {
                            let o = if t == 0 { j / in_features } else { j };
                            let w = &p[0].data()[o * in_features..(o + 1) * in_features];
                            y[o] = p[1].data()[o]
                                + w.iter().zip(acts[l].data()).map(|(a, b)| a * b).sum::<f64>();
                        }
                        _ => unreachable!("only conv and fully connected layers have parameters"),
                    }
                    probes.extend(y);
                }
                p[t].data_mut()[j] = orig;
            }
            let mut dims = vec![chunk.len() * 2];
            dims.extend_from_slice(&out_dims);
            let logits = model.run(l + 1, end, Tensor::new(dims, probes)?)?;
            let probs = softmax(&logits);
            let classes = probs.dims()[1];
            let loss = |row: usize| -probs.data()[row * classes + label].max(f64::MIN_POSITIVE).ln();
            for (k, &(t, j)) in chunk.iter().enumerate() {
                let numeric = (loss(2 * k) - loss(2 * k + 1)) / (2.0 * step);
                let a = analytic[l][t].data()[j];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                if rel > result.max_relative_error || rel.is_nan() {
                    result.max_relative_error = rel;
                    result.worst = (l, t, j);
                    result.worst_analytic = a;
                    result.worst_numeric = numeric;
                }
                result.checked += 1;
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_count() {
        let model = build_reference_model(224, 224, 3, 5, 0).unwrap();
        assert_eq!(count_parameters(&model), 1_607_749);
        assert_eq!(closed_form_parameter_count(model.specs()), 1_607_749);
        let fc = [LayerSpec::FullyConnected {
            in_features: 512,
            out_features: 5,
        }];
        assert_eq!(closed_form_parameter_count(&fc), 2565);
    }

    #[test]
    fn too_small_input_rejected() {
        assert!(build_reference_model(31, 64, 3, 5, 0).is_err());
        let specs = vec![
            LayerSpec::Maxpool { size: 2, stride: 2 },
            LayerSpec::GlobalAvgPool,
        ];
        assert!(Model::new([1, 1, 1], specs, 0).is_err());
    }

    #[test]
    fn seeded_init_and_normalised_output() {
        let a = build_reference_model(32, 32, 3, 5, 9).unwrap();
        let b = build_reference_model(32, 32, 3, 5, 9).unwrap();
        let c = build_reference_model(32, 32, 3, 5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = uniform(&mut rng, vec![2, 3, 32, 32], 1.0);
        let p = a.forward(&x).unwrap();
        assert_eq!(p.dims(), &[2, 5]);
        for row in p.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn specs_serialize_with_kind_tag() {
        let json = serde_json::to_string(&reference_specs(3, 5)[..2]).unwrap();
        assert!(json.starts_with(r#"[{"kind":"conv","in_channels":3"#), "{json}");
        let back: Vec<LayerSpec> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, reference_specs(3, 5)[..2]);
    }
}
