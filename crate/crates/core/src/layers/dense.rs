//! Fully-connected and convolution layers with He-style initialization.

use rand::Rng;

use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Element, Shape, Tensor};

/// `input (N×D) · weight (D×C) + bias (C)`.
pub fn linear_forward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let ws = weight.shape();
    if s.h != 1 || s.w != 1 || ws.h != 1 || ws.w != 1 || s.c != ws.n {
        return Err(Error::ShapeMismatch {
            op: "fully_connected",
            left: s,
            right: ws,
        });
    }
    let (d, c) = (ws.n, ws.c);
    let mut out = Tensor::zeros(Shape::matrix(s.n, c));
    if let Some(b) = bias {
        if b.len() != c {
            return Err(Error::ShapeMismatch {
                op: "fully_connected",
                left: ws,
                right: b.shape(),
            });
        }
        for row in out.data_mut().chunks_mut(c) {
            row.copy_from_slice(b.data());
        }
    }
    gemm(
        s.n,
        d,
        c,
        input.data(),
        false,
        weight.data(),
        false,
        out.data_mut(),
        T::one(),
    );
    Ok(out)
}

pub(crate) fn linear_backward<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    up: &Tensor<T>,
    want_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let n = input.shape().n;
    let ws = weight.shape();
    let (d, c) = (ws.n, ws.c);
    let mut dw = Tensor::zeros(ws);
    gemm(d, n, c, input.data(), true, up.data(), false, dw.data_mut(), T::zero());
    let mut db = Tensor::zeros(Shape::new(1, c, 1, 1));
    for row in up.data().chunks(c) {
        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
            *acc += g;
        }
    }
    let dx = want_input.then(|| {
        let mut dx = Tensor::zeros(input.shape());
        gemm(n, c, d, up.data(), false, weight.data(), true, dx.data_mut(), T::zero());
        dx
    });
    (dx, dw, db)
}

impl<T: Element> Graph<T> {
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = linear_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        Ok(self.push(out, Op::Linear { input, weight, bias }))
    }
}

fn he_normal<T: Element, R: Rng + ?Sized>(shape: Shape, fan_in: usize, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

/// Fully-connected layer. Weight is stored `D×C`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{prefix}.weight"),
            he_normal(Shape::matrix(in_features, out_features), in_features, rng),
            true,
        )?;
        let bias = if with_bias {
            Some(store.add(
                format!("{prefix}.bias"),
                Tensor::zeros(Shape::new(1, out_features, 1, 1)),
                true,
            )?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

/// Bias-free square convolution (batch norm supplies the shift).
#[derive(Clone, Debug)]
pub struct Conv {
    pub kernel: ParamId,
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        size: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = Shape::new(out_channels, in_channels, size, size);
        let kernel = store.add(
            format!("{prefix}.kernel"),
            he_normal(shape, in_channels * size * size, rng),
            true,
        )?;
        Ok(Conv {
            kernel,
            size,
            stride,
            pad,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        g.conv2d(x, k, self.stride, self.pad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(2, 3), vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let mut w = Tensor::<f64>::zeros(Shape::matrix(3, 3));
        for i in 0..3 {
            w.set(i, i, 0, 0, 1.0);
        }
        let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        assert_eq!(linear_forward(&x, &w, Some(&b)).unwrap().data(), x.data());
    }

    #[test]
    fn hand_product_with_bias() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(1, 2), vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f64>::from_vec(Shape::matrix(2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1), vec![3.0, 4.0]).unwrap();
        assert_eq!(linear_forward(&x, &w, Some(&b)).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::<f64>::zeros(Shape::matrix(1, 3));
        let w = Tensor::<f64>::zeros(Shape::matrix(2, 2));
        assert!(linear_forward(&x, &w, None).is_err());
    }

    #[test]
    fn weight_gradient_is_input_transpose_times_upstream() {
        let x = Tensor::<f64>::from_vec(Shape::matrix(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::<f64>::zeros(Shape::matrix(2, 3));
        let up = Tensor::<f64>::from_vec(Shape::matrix(2, 3), vec![1.0, 0.0, -1.0, 2.0, 1.0, 0.0]).unwrap();
        let (_, dw, db) = linear_backward(&x, &w, &up, false);
        // xᵀ·up
        assert_eq!(dw.data(), &[7.0, 3.0, -1.0, 10.0, 4.0, -2.0]);
        assert_eq!(db.data(), &[3.0, 1.0, -1.0]);
    }
}
