//! 2-D convolution lowered to a single GEMM per batch via im2col.

use rand::Rng;

use super::array::{Array, Scalar};
use super::param::Parameter;
use crate::error::{MarlError, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T: Scalar = f32> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    /// `(cin·k·k) × (n·ho·wo)` lowered input.
    cols: Vec<T>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: Parameter::uniform_fan_in(
                format!("{name}.weight"),
                &[out_channels, in_channels, kernel, kernel],
                fan_in,
                rng,
            ),
            bias: Parameter::uniform_fan_in(format!("{name}.bias"), &[out_channels], fan_in, rng),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if h + 2 * p < k || w + 2 * p < k {
            return None;
        }
        Some(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn check_input(&self, x: &Array<T>, context: &str) -> Result<([usize; 4], (usize, usize))> {
        let (n, c, h, w) = x.dims4(context)?;
        if c != self.in_channels {
            return Err(MarlError::dimension(context, format!("{} input channels", self.in_channels), c));
        }
        let out = self
            .output_hw(h, w)
            .ok_or_else(|| MarlError::dimension(context, format!("spatial extent ≥ kernel {}", self.kernel), format!("{h}x{w}")))?;
        Ok(([n, c, h, w], out))
    }

    pub fn forward(&self, x: &Array<T>, exec: Execution, context: &str) -> Result<(Array<T>, ConvCache<T>)> {
        let (dims, (ho, wo)) = self.check_input(x, context)?;
        let [n, _, _, _] = dims;
        let cols = im2col(x.data(), dims, self.kernel, self.stride, self.padding, (ho, wo), exec);
        let ckk = self.in_channels * self.kernel * self.kernel;
        let npix = n * ho * wo;
        let cout = self.out_channels;

        let mut ymat = vec![T::zero(); cout * npix];
        T::gemm(
            cout, ckk, npix,
            self.weight.value.data(), ckk as isize, 1,
            &cols, npix as isize, 1,
            T::zero(),
            &mut ymat, npix as isize, 1,
        );

        let plane = ho * wo;
        let mut y = vec![T::zero(); n * cout * plane];
        let bias = self.bias.value.data();
        exec.for_each_chunk_mut(&mut y, plane, |idx, out| {
            let (s, co) = (idx / cout, idx % cout);
            let src = &ymat[co * npix + s * plane..co * npix + (s + 1) * plane];
            for (o, &v) in out.iter_mut().zip(src) {
                *o = v + bias[co];
            }
        });
        let y = Array::new(vec![n, cout, ho, wo], y)?;
        Ok((
            y,
            ConvCache {
                input_shape: dims,
                out_hw: (ho, wo),
                cols,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache<T>, grad_out: &Array<T>, exec: Execution) -> Result<Array<T>> {
        let [n, cin, h, w] = cache.input_shape;
        let (ho, wo) = cache.out_hw;
        let cout = self.out_channels;
        let expected = [n, cout, ho, wo];
        if grad_out.shape() != expected {
            return Err(MarlError::dimension("conv2d backward", format!("{expected:?}"), format!("{:?}", grad_out.shape())));
        }
        let plane = ho * wo;
        let npix = n * plane;
        let ckk = cin * self.kernel * self.kernel;

        // (n, cout, plane) -> (cout, n·plane)
        let g = grad_out.data();
        let mut gmat = vec![T::zero(); cout * npix];
        exec.for_each_chunk_mut(&mut gmat, npix, |co, row| {
            for s in 0..n {
                row[s * plane..(s + 1) * plane]
                    .copy_from_slice(&g[(s * cout + co) * plane..(s * cout + co + 1) * plane]);
            }
        });

        T::gemm(
            cout, npix, ckk,
            &gmat, npix as isize, 1,
            &cache.cols, 1, npix as isize,
            T::one(),
            self.weight.grad.data_mut(), ckk as isize, 1,
        );
        for (co, b) in self.bias.grad.data_mut().iter_mut().enumerate() {
            *b += gmat[co * npix..(co + 1) * npix].iter().copied().sum::<T>();
        }

        let mut dcols = vec![T::zero(); ckk * npix];
        T::gemm(
            ckk, cout, npix,
            self.weight.value.data(), 1, ckk as isize,
            &gmat, npix as isize, 1,
            T::zero(),
            &mut dcols, npix as isize, 1,
        );
        let dx = col2im(&dcols, cache.input_shape, self.kernel, self.stride, self.padding, cache.out_hw, exec);
        Array::new(vec![n, cin, h, w], dx)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn cast<U: Scalar>(&self) -> Conv2d<U> {
        Conv2d {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel,
            stride: self.stride,
            padding: self.padding,
        }
    }
}

fn im2col<T: Scalar>(
    x: &[T],
    [n, cin, h, w]: [usize; 4],
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    exec: Execution,
) -> Vec<T> {
    let plane = ho * wo;
    let npix = n * plane;
    let mut cols = vec![T::zero(); cin * k * k * npix];
    exec.for_each_chunk_mut(&mut cols, npix, |row, out| {
        let ci = row / (k * k);
        let ki = (row / k) % k;
        let kj = row % k;
        for s in 0..n {
            let src = &x[(s * cin + ci) * h * w..(s * cin + ci + 1) * h * w];
            let dst = &mut out[s * plane..(s + 1) * plane];
            for oh in 0..ho {
                let ih = (oh * stride + ki) as isize - pad as isize;
                if ih < 0 || ih >= h as isize {
                    continue;
                }
                let src_row = &src[ih as usize * w..(ih as usize + 1) * w];
                for ow in 0..wo {
                    let iw = (ow * stride + kj) as isize - pad as isize;
                    if iw >= 0 && iw < w as isize {
                        dst[oh * wo + ow] = src_row[iw as usize];
                    }
                }
            }
        }
    });
    cols
}

fn col2im<T: Scalar>(
    dcols: &[T],
    [n, cin, h, w]: [usize; 4],
    k: usize,
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    exec: Execution,
) -> Vec<T> {
    let plane = ho * wo;
    let npix = n * plane;
    let mut dx = vec![T::zero(); n * cin * h * w];
    exec.for_each_chunk_mut(&mut dx, h * w, |idx, out| {
        let (s, ci) = (idx / cin, idx % cin);
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &dcols[row * npix + s * plane..row * npix + (s + 1) * plane];
                for oh in 0..ho {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = (ow * stride + kj) as isize - pad as isize;
                        if iw >= 0 && iw < w as isize {
                            out[ih as usize * w + iw as usize] += src[oh * wo + ow];
                        }
                    }
                }
            }
        }
    });
    dx
}
