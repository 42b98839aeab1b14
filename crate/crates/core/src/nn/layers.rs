use rand::Rng;
use serde::{Deserialize, Serialize};

use super::array::{Array, Scalar};
use super::conv::{Conv2d, ConvCache};
use super::param::Parameter;
use crate::error::{MarlError, Result};
use crate::exec::Execution;

/// Serializable description of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Nearest-neighbor 2× upsampling followed by a stride-1 convolution.
    TransposedUpsample2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// `x + conv1x1(relu(conv3x3(relu(x))))`
    ResidualBlock { channels: usize, hidden: usize },
    Linear { in_features: usize, out_features: usize },
    Relu,
    Sigmoid,
    StopGradient,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::TransposedUpsample2d { .. } => "transposed_upsample2d",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::StopGradient => "stop_gradient",
        }
    }

    /// Stride must be 1 or 2. Stride-1 kernels are odd; stride-2 kernels may
    /// be even so that `k = 4, padding = 1` halves the extent exactly.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MarlError::Config(format!("{}: {msg}", self.name())));
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 {
                    return bad("channels and kernel must be positive".into());
                }
                if stride != 1 && stride != 2 {
                    return bad(format!("stride {stride} not in {{1, 2}}"));
                }
                if stride == 1 && kernel % 2 == 0 {
                    return bad(format!("stride-1 kernel {kernel} must be odd"));
                }
                Ok(())
            }
            LayerSpec::TransposedUpsample2d { in_channels, out_channels, kernel } => {
                if in_channels == 0 || out_channels == 0 || kernel % 2 == 0 {
                    return bad("positive channels and an odd kernel required".into());
                }
                Ok(())
            }
            LayerSpec::ResidualBlock { channels, hidden } => {
                if channels == 0 || hidden == 0 {
                    return bad("channels must be positive".into());
                }
                Ok(())
            }
            LayerSpec::Linear { in_features, out_features } => {
                if in_features == 0 || out_features == 0 {
                    return bad("features must be positive".into());
                }
                Ok(())
            }
            LayerSpec::Relu | LayerSpec::Sigmoid | LayerSpec::StopGradient => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T: Scalar = f32> {
    pub inner: Conv2d<T>,
    pub project: Conv2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T: Scalar = f32> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T: Scalar = f32> {
    Conv2d(Conv2d<T>),
    TransposedUpsample2d(Conv2d<T>),
    ResidualBlock(ResidualBlock<T>),
    Linear(Linear<T>),
    Relu,
    Sigmoid,
    StopGradient,
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Conv(ConvCache<T>),
    Upsample { conv: ConvCache<T> },
    Residual {
        pre_mask: Vec<bool>,
        inner: ConvCache<T>,
        mid_mask: Vec<bool>,
        project: ConvCache<T>,
    },
    Linear { input: Vec<T>, input_shape: Vec<usize> },
    Relu { mask: Vec<bool> },
    Sigmoid { output: Vec<T> },
    StopGradient,
}

/// Per-layer activations recorded by [`Sequential::forward`].
#[derive(Debug, Clone, Default)]
pub struct Tape<T = f32> {
    caches: Vec<Cache<T>>,
}

impl<T> Tape<T> {
    pub fn is_empty(&self) -> bool {
        self.caches.is_empty()
    }
}

fn relu<T: Scalar>(x: &Array<T>) -> (Array<T>, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = Array::new(
        x.shape().to_vec(),
        x.data().iter().zip(&mask).map(|(&v, &m)| if m { v } else { T::zero() }).collect(),
    )
    .expect("same shape");
    (y, mask)
}

fn relu_back<T: Scalar>(g: &Array<T>, mask: &[bool]) -> Array<T> {
    Array::new(
        g.shape().to_vec(),
        g.data().iter().zip(mask).map(|(&v, &m)| if m { v } else { T::zero() }).collect(),
    )
    .expect("same shape")
}

fn upsample2x<T: Scalar>(x: &Array<T>, context: &str) -> Result<Array<T>> {
    let (n, c, h, w) = x.dims4(context)?;
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![T::zero(); n * c * h2 * w2];
    for p in 0..n * c {
        let s = &src[p * h * w..(p + 1) * h * w];
        let d = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h2 {
            for j in 0..w2 {
                d[i * w2 + j] = s[(i / 2) * w + j / 2];
            }
        }
    }
    Array::new(vec![n, c, h2, w2], out)
}

fn upsample2x_back<T: Scalar>(g: &Array<T>) -> Result<Array<T>> {
    let (n, c, h2, w2) = g.dims4("upsample backward")?;
    let (h, w) = (h2 / 2, w2 / 2);
    let src = g.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        let s = &src[p * h2 * w2..(p + 1) * h2 * w2];
        let d = &mut out[p * h * w..(p + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                d[(i / 2) * w + j / 2] += s[i * w2 + j];
            }
        }
    }
    Array::new(vec![n, c, h, w], out)
}

fn add<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Array<T> {
    Array::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect(),
    )
    .expect("same shape")
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec<R: Rng>(spec: &LayerSpec, name: &str, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(match *spec {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                Layer::Conv2d(Conv2d::new(name, in_channels, out_channels, kernel, stride, padding, rng))
            }
            LayerSpec::TransposedUpsample2d { in_channels, out_channels, kernel } => {
                Layer::TransposedUpsample2d(Conv2d::new(name, in_channels, out_channels, kernel, 1, kernel / 2, rng))
            }
            LayerSpec::ResidualBlock { channels, hidden } => Layer::ResidualBlock(ResidualBlock {
                inner: Conv2d::new(&format!("{name}.inner"), channels, hidden, 3, 1, 1, rng),
                project: Conv2d::new(&format!("{name}.project"), hidden, channels, 1, 1, 0, rng),
            }),
            LayerSpec::Linear { in_features, out_features } => Layer::Linear(Linear {
                weight: Parameter::uniform_fan_in(format!("{name}.weight"), &[out_features, in_features], in_features, rng),
                bias: Parameter::uniform_fan_in(format!("{name}.bias"), &[out_features], in_features, rng),
            }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::StopGradient => Layer::StopGradient,
        })
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
            },
            Layer::TransposedUpsample2d(c) => LayerSpec::TransposedUpsample2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
            },
            Layer::ResidualBlock(r) => LayerSpec::ResidualBlock {
                channels: r.inner.in_channels,
                hidden: r.inner.out_channels,
            },
            Layer::Linear(l) => LayerSpec::Linear {
                in_features: l.weight.value.shape()[1],
                out_features: l.weight.value.shape()[0],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::StopGradient => LayerSpec::StopGradient,
        }
    }

    fn forward(&self, x: &Array<T>, exec: Execution, context: &str) -> Result<(Array<T>, Cache<T>)> {
        match self {
            Layer::Conv2d(conv) => {
                let (y, c) = conv.forward(x, exec, context)?;
                Ok((y, Cache::Conv(c)))
            }
            Layer::TransposedUpsample2d(conv) => {
                let up = upsample2x(x, context)?;
                let (y, c) = conv.forward(&up, exec, context)?;
                Ok((y, Cache::Upsample { conv: c }))
            }
            Layer::ResidualBlock(block) => {
                let (a, pre_mask) = relu(x);
                let (b, inner) = block.inner.forward(&a, exec, context)?;
                let (b, mid_mask) = relu(&b);
                let (r, project) = block.project.forward(&b, exec, context)?;
                Ok((add(x, &r), Cache::Residual { pre_mask, inner, mid_mask, project }))
            }
            Layer::Linear(lin) => {
                let n = x.batch();
                let features = x.len() / n;
                let (out_f, in_f) = (lin.weight.value.shape()[0], lin.weight.value.shape()[1]);
                if features != in_f {
                    return Err(MarlError::dimension(context, format!("{in_f} input features"), features));
                }
                let mut y = vec![T::zero(); n * out_f];
                for (row, b) in y.chunks_mut(out_f).zip(std::iter::repeat(lin.bias.value.data())) {
                    row.copy_from_slice(b);
                }
                // y = x · Wᵀ + b
                T::gemm(
                    n, in_f, out_f,
                    x.data(), in_f as isize, 1,
                    lin.weight.value.data(), 1, in_f as isize,
                    T::one(),
                    &mut y, out_f as isize, 1,
                );
                Ok((
                    Array::new(vec![n, out_f], y)?,
                    Cache::Linear { input: x.data().to_vec(), input_shape: x.shape().to_vec() },
                ))
            }
            Layer::Relu => {
                let (y, mask) = relu(x);
                Ok((y, Cache::Relu { mask }))
            }
            Layer::Sigmoid => {
                let y = x.map(|v| T::one() / (T::one() + (-v).exp()));
                let output = y.data().to_vec();
                Ok((y, Cache::Sigmoid { output }))
            }
            Layer::StopGradient => Ok((x.clone(), Cache::StopGradient)),
        }
    }

    fn backward(&mut self, cache: &Cache<T>, g: &Array<T>, exec: Execution) -> Result<Array<T>> {
        match (self, cache) {
            (Layer::Conv2d(conv), Cache::Conv(c)) => conv.backward(c, g, exec),
            (Layer::TransposedUpsample2d(conv), Cache::Upsample { conv: c }) => {
                let gu = conv.backward(c, g, exec)?;
                upsample2x_back(&gu)
            }
            (Layer::ResidualBlock(block), Cache::Residual { pre_mask, inner, mid_mask, project }) => {
                let gb = block.project.backward(project, g, exec)?;
                let gb = relu_back(&gb, mid_mask);
                let ga = block.inner.backward(inner, &gb, exec)?;
                let ga = relu_back(&ga, pre_mask);
                Ok(add(g, &ga))
            }
            (Layer::Linear(lin), Cache::Linear { input, input_shape }) => {
                let n = input_shape[0];
                let (out_f, in_f) = (lin.weight.value.shape()[0], lin.weight.value.shape()[1]);
                if g.shape() != [n, out_f] {
                    return Err(MarlError::dimension("linear backward", format!("[{n}, {out_f}]"), format!("{:?}", g.shape())));
                }
                // dW += gᵀ · x
                T::gemm(
                    out_f, n, in_f,
                    g.data(), 1, out_f as isize,
                    input, in_f as isize, 1,
                    T::one(),
                    lin.weight.grad.data_mut(), in_f as isize, 1,
                );
                for row in g.data().chunks(out_f) {
                    for (b, &v) in lin.bias.grad.data_mut().iter_mut().zip(row) {
                        *b += v;
                    }
                }
                let mut dx = vec![T::zero(); n * in_f];
                T::gemm(
                    n, out_f, in_f,
                    g.data(), out_f as isize, 1,
                    lin.weight.value.data(), in_f as isize, 1,
                    T::zero(),
                    &mut dx, in_f as isize, 1,
                );
                Array::new(input_shape.clone(), dx)
            }
            (Layer::Relu, Cache::Relu { mask }) => Ok(relu_back(g, mask)),
            (Layer::Sigmoid, Cache::Sigmoid { output }) => Ok(Array::new(
                g.shape().to_vec(),
                g.data().iter().zip(output).map(|(&gv, &y)| gv * y * (T::one() - y)).collect(),
            )?),
            (Layer::StopGradient, Cache::StopGradient) => Ok(Array::zeros(g.shape())),
            _ => Err(MarlError::State("tape does not match the layer stack".into())),
        }
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        match self {
            Layer::Conv2d(c) | Layer::TransposedUpsample2d(c) => c.params().to_vec(),
            Layer::ResidualBlock(r) => r.inner.params().into_iter().chain(r.project.params()).collect(),
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        match self {
            Layer::Conv2d(c) | Layer::TransposedUpsample2d(c) => c.params_mut().into_iter().collect(),
            Layer::ResidualBlock(r) => {
                let ResidualBlock { inner, project } = r;
                inner.params_mut().into_iter().chain(project.params_mut()).collect()
            }
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => vec![],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(c.cast()),
            Layer::TransposedUpsample2d(c) => Layer::TransposedUpsample2d(c.cast()),
            Layer::ResidualBlock(r) => Layer::ResidualBlock(ResidualBlock {
                inner: r.inner.cast(),
                project: r.project.cast(),
            }),
            Layer::Linear(l) => Layer::Linear(Linear {
                weight: l.weight.cast(),
                bias: l.bias.cast(),
            }),
            Layer::Relu => Layer::Relu,
            Layer::Sigmoid => Layer::Sigmoid,
            Layer::StopGradient => Layer::StopGradient,
        }
    }
}

/// A fixed chain of layers evaluated in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential<T: Scalar = f32> {
    pub name: String,
    pub layers: Vec<Layer<T>>,
    pub exec: Execution,
}

impl<T: Scalar> Sequential<T> {
    pub fn from_specs<R: Rng>(name: &str, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let layers = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Layer::from_spec(s, &format!("{name}.{i}"), rng))
            .collect::<Result<_>>()?;
        Ok(Sequential {
            name: name.to_string(),
            layers,
            exec: Execution::default(),
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    fn context(&self, i: usize) -> String {
        format!("{} layer {i} ({})", self.name, self.layers[i].spec().name())
    }

    pub fn forward(&self, input: &Array<T>) -> Result<(Array<T>, Tape<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&x, self.exec, &self.context(i))?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Tape { caches }))
    }

    /// Forward pass without recording activations.
    pub fn infer(&self, input: &Array<T>) -> Result<Array<T>> {
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(&x, self.exec, &self.context(i))?.0;
        }
        Ok(x)
    }

    /// Accumulates gradients into every parameter and returns the input gradient.
    pub fn backward(&mut self, tape: &Tape<T>, upstream: &Array<T>) -> Result<Array<T>> {
        if tape.caches.len() != self.layers.len() || (tape.is_empty() && !self.layers.is_empty()) {
            return Err(MarlError::State(format!(
                "{}: backward called without a matching forward pass",
                self.name
            )));
        }
        let exec = self.exec;
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches).rev() {
            g = layer.backward(cache, &g, exec)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        Sequential {
            name: self.name.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            exec: self.exec,
        }
    }
}
