//! 2×2 stride-2 pooling.

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

fn halved(op: &'static str, s: Shape) -> Result<Shape> {
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::OddDimension { op, shape: s });
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::EmptyOutput {
            op,
            detail: format!("input {s} has no spatial extent"),
        });
    }
    Ok(Shape::new(s.n, s.c, s.h / 2, s.w / 2))
}

/// Returns the pooled tensor and, per output, the flat index of the
/// maximum in the input. Ties go to the first cell in row-major order.
pub fn max_pool2_forward<T: Element>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = x.shape();
    let os = halved("max_pool2", s)?;
    let mut out = Vec::with_capacity(os.len());
    let mut argmax = Vec::with_capacity(os.len());
    let data = x.data();
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                let cells = [top, top + 1, top + s.w, top + s.w + 1];
                let mut best = cells[0];
                for &c in &cells[1..] {
                    if data[c] > data[best] {
                        best = c;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::from_vec(os, out)?, argmax))
}

pub fn avg_pool2_forward<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let os = halved("avg_pool2", s)?;
    let quarter = T::from_f64_lossy(0.25);
    let data = x.data();
    let mut out = Vec::with_capacity(os.len());
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let top = base + 2 * oy * s.w + 2 * ox;
                out.push((data[top] + data[top + 1] + data[top + s.w] + data[top + s.w + 1]) * quarter);
            }
        }
    }
    Tensor::from_vec(os, out)
}

pub(crate) fn avg_pool2_backward<T: Element>(s: Shape, up: &Tensor<T>) -> Tensor<T> {
    let os = up.shape();
    let quarter = T::from_f64_lossy(0.25);
    let mut dx = Tensor::zeros(s);
    let d = dx.data_mut();
    for plane in 0..s.n * s.c {
        let base = plane * s.plane();
        for oy in 0..os.h {
            for ox in 0..os.w {
                let g = up.data()[(plane * os.h + oy) * os.w + ox] * quarter;
                let top = base + 2 * oy * s.w + 2 * ox;
                for c in [top, top + 1, top + s.w, top + s.w + 1] {
                    d[c] += g;
                }
            }
        }
    }
    dx
}

impl<T: Element> Graph<T> {
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (out, argmax) = max_pool2_forward(self.value(x))?;
        Ok(self.push(out, Op::MaxPool2 { input: x, argmax }))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let out = avg_pool2_forward(self.value(x))?;
        Ok(self.push(out, Op::AvgPool2(x)))
    }

    /// Spatial mean of every feature map: `N×K×H×W → N×K×1×1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = global_avg_pool_forward(self.value(x));
        self.push(out, Op::GlobalAvgPool(x))
    }
}

pub fn global_avg_pool_forward<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let area = T::from_usize(s.plane()).unwrap();
    let data = x
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() / area)
        .collect();
    Tensor::from_vec(Shape::matrix(s.n, s.c), data).expect("one value per map")
}
