//! 2-D cross-correlation (no kernel flip) lowered to matrix products via im2col.

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, Element, Shape, Tensor};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: Shape, kernel: Shape, stride: usize, pad: usize) -> Result<Self> {
        if kernel.c != input.c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input,
                right: kernel,
            });
        }
        if stride == 0 {
            return Err(Error::InvalidConfig("conv2d stride must be positive".into()));
        }
        let (ph, pw) = (input.h + 2 * pad, input.w + 2 * pad);
        if ph < kernel.h || pw < kernel.w || kernel.h == 0 || kernel.w == 0 {
            return Err(Error::EmptyOutput {
                op: "conv2d",
                detail: format!("input {input} padded by {pad} is smaller than kernel {kernel}"),
            });
        }
        Ok(Geometry {
            c: input.c,
            h: input.h,
            w: input.w,
            kh: kernel.h,
            kw: kernel.w,
            stride,
            pad,
            oh: (ph - kernel.h) / stride + 1,
            ow: (pw - kernel.w) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Source coordinate for output index `o` and kernel tap `k`, if inside the input.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col<T: Element>(g: &Geometry, input: &[T], cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    match g.source(oy, ky, g.h) {
                        None => line.iter_mut().for_each(|v| *v = T::zero()),
                        Some(y) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match g.source(ox, kx, g.w) {
                                    Some(x) => plane[y * g.w + x],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(g: &Geometry, cols: &[T], out: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let Some(y) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for ox in 0..g.ow {
                        if let Some(x) = g.source(ox, kx, g.w) {
                            plane[y * g.w + x] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `kernel` is `out_channels × in_channels × kh × kw`.
pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let ks = kernel.shape();
    let g = Geometry::new(s, ks, stride, pad)?;
    let out_shape = Shape::new(s.n, ks.n, g.oh, g.ow);
    let mut out = Tensor::zeros(out_shape);
    let (k, p) = (g.patch(), g.positions());
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..s.n {
        let item = input.item(n);
        let src: &[T] = if g.is_pointwise() {
            item
        } else {
            im2col(&g, item, &mut cols);
            &cols
        };
        let dst = &mut out.data_mut()[n * ks.n * p..(n + 1) * ks.n * p];
        gemm(ks.n, k, p, kernel.data(), false, src, false, dst, T::zero());
    }
    Ok(out)
}

pub(crate) fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let s = input.shape();
    let ks = kernel.shape();
    let g = Geometry::new(s, ks, stride, pad).expect("validated on forward");
    let (k, p) = (g.patch(), g.positions());
    let mut dx = want_input.then(|| Tensor::zeros(s));
    let mut dk = want_kernel.then(|| Tensor::zeros(ks));
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut dcols = vec![T::zero(); k * p];
    for n in 0..s.n {
        let dy = &upstream.data()[n * ks.n * p..(n + 1) * ks.n * p];
        if let Some(dk) = dk.as_mut() {
            let src: &[T] = if g.is_pointwise() {
                input.item(n)
            } else {
                im2col(&g, input.item(n), &mut cols);
                &cols
            };
            // dK (Co×K) += dY (Co×P) · colsᵀ (P×K)
            gemm(ks.n, p, k, dy, false, src, true, dk.data_mut(), T::one());
        }
        if let Some(dx) = dx.as_mut() {
            let item = s.item_len();
            let dst = &mut dx.data_mut()[n * item..(n + 1) * item];
            if g.is_pointwise() {
                gemm(k, ks.n, p, kernel.data(), true, dy, false, dst, T::zero());
            } else {
                // dcols (K×P) = Kᵀ (K×Co) · dY (Co×P)
                gemm(k, ks.n, p, kernel.data(), true, dy, false, &mut dcols, T::zero());
                col2im(&g, &dcols, dst);
            }
        }
    }
    (dx, dk)
}

impl<T: Element> Graph<T> {
    /// Cross-correlation of `input` with `kernel` at the given stride and
    /// symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d_forward(self.value(input), self.value(kernel), stride, pad)?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
        ))
    }
}
