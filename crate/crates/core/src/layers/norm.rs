use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running statistics update.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-channel mean and biased variance, accumulated in f64.
fn channel_stats<T: Element>(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let count = (s.n * s.plane()) as f64;
    let mut mean = vec![0.0; s.c];
    let mut var = vec![0.0; s.c];
    for n in 0..s.n {
        for (c, plane) in x.item(n).chunks(s.plane()).enumerate() {
            mean[c] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for n in 0..s.n {
        for (c, plane) in x.item(n).chunks(s.plane()).enumerate() {
            var[c] += plane.iter().map(|v| (v.as_f64() - mean[c]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    (mean, var)
}

fn check_channels(op: &'static str, x: Shape, params: Shape) -> Result<()> {
    if params.len() != x.c {
        return Err(Error::ShapeMismatch {
            op,
            left: x,
            right: params,
        });
    }
    Ok(())
}

impl<T: Element> Graph<T> {
    /// Normalizes with batch statistics. Returns the output and the batch
    /// mean and biased variance per channel.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        epsilon: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let s = self.shape(x);
        check_channels("batch_norm", s, self.shape(gamma))?;
        check_channels("batch_norm", s, self.shape(beta))?;
        if s.n * s.plane() < 2 {
            return Err(Error::DimensionMismatch {
                op: "batch_norm",
                detail: format!("training mode needs at least 2 values per channel, input is {s}"),
            });
        }
        let (mean, var) = channel_stats(self.value(x));
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
        let (out, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std);
        let inv_std = inv_std.iter().map(|&v| T::from_f64_lossy(v)).collect();
        let v = self.push(
            out,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: true,
            },
        );
        Ok((v, mean, var))
    }

    /// Normalizes with fixed running statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        epsilon: f64,
    ) -> Result<Var> {
        let s = self.shape(x);
        check_channels("batch_norm", s, self.shape(gamma))?;
        check_channels("batch_norm", s, self.shape(beta))?;
        if running_mean.len() != s.c || running_var.len() != s.c {
            return Err(Error::DimensionMismatch {
                op: "batch_norm",
                detail: format!("{} running statistics for {} channels", running_mean.len(), s.c),
            });
        }
        let mean: Vec<f64> = running_mean.iter().map(|v| v.as_f64()).collect();
        let inv_std: Vec<f64> = running_var
            .iter()
            .map(|v| 1.0 / (v.as_f64() + epsilon).sqrt())
            .collect();
        let (out, xhat) = self.normalize(x, gamma, beta, &mean, &inv_std);
        let inv_std = inv_std.iter().map(|&v| T::from_f64_lossy(v)).collect();
        Ok(self.push(
            out,
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: false,
            },
        ))
    }

    fn normalize(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: &[f64]) -> (Tensor<T>, Vec<T>) {
        let xv = self.value(x);
        let s = xv.shape();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(s.len());
        let mut out = Vec::with_capacity(s.len());
        for n in 0..s.n {
            for (c, plane) in xv.item(n).chunks(s.plane()).enumerate() {
                let m = T::from_f64_lossy(mean[c]);
                let is = T::from_f64_lossy(inv_std[c]);
                for &v in plane {
                    let h = (v - m) * is;
                    xhat.push(h);
                    out.push(g[c] * h + b[c]);
                }
            }
        }
        (Tensor::from_vec(s, out).expect("same shape"), xhat)
    }
}

pub(crate) fn batch_norm_backward<T: Element>(
    s: Shape,
    gamma: &[T],
    xhat: &[T],
    inv_std: &[T],
    batch_stats: bool,
    up: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let plane = s.plane();
    let mut sum_dy = vec![T::zero(); s.c];
    let mut sum_dy_xhat = vec![T::zero(); s.c];
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            for i in base..base + plane {
                sum_dy[c] += up.data()[i];
                sum_dy_xhat[c] += up.data()[i] * xhat[i];
            }
        }
    }
    let m = T::from_usize(s.n * plane).unwrap();
    let mut dx = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let k = gamma[c] * inv_std[c];
            for i in base..base + plane {
                let dy = up.data()[i];
                dx.data_mut()[i] = if batch_stats {
                    k * (dy - sum_dy[c] / m - xhat[i] * sum_dy_xhat[c] / m)
                } else {
                    k * dy
                };
            }
        }
    }
    let pshape = Shape::new(1, s.c, 1, 1);
    (
        dx,
        Tensor::from_vec(pshape, sum_dy_xhat).expect("channel count"),
        Tensor::from_vec(pshape, sum_dy).expect("channel count"),
    )
}

/// Batch normalization layer: affine parameters plus running statistics,
/// all stored in the model's [`ParamStore`] so they are checkpointed.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormState {
    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        let shape = Shape::new(1, channels, 1, 1);
        Ok(BatchNormState {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(shape, T::one()), true)?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(shape), true)?,
            running_mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros(shape), false)?,
            running_var: store.add(format!("{prefix}.running_var"), Tensor::full(shape, T::one()), false)?,
            channels,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        })
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, store: &mut ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let s = g.shape(x);
                let (out, mean, var) = g.batch_norm_train(x, gamma, beta, self.epsilon)?;
                let count = (s.n * s.plane()) as f64;
                let unbias = count / (count - 1.0);
                let mom = self.momentum;
                let rm = store.get_mut(self.running_mean).value.data_mut();
                for (r, m) in rm.iter_mut().zip(&mean) {
                    *r = T::from_f64_lossy((1.0 - mom) * r.as_f64() + mom * m);
                }
                let rv = store.get_mut(self.running_var).value.data_mut();
                for (r, v) in rv.iter_mut().zip(&var) {
                    *r = T::from_f64_lossy((1.0 - mom) * r.as_f64() + mom * v * unbias);
                }
                Ok(out)
            }
            Mode::Infer => {
                let mean = store.get(self.running_mean).value.data().to_vec();
                let var = store.get(self.running_var).value.data().to_vec();
                g.batch_norm_infer(x, gamma, beta, &mean, &var, self.epsilon)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(channels: usize) -> (ParamStore<f64>, BatchNormState) {
        let mut store = ParamStore::new();
        let bn = BatchNormState::new(&mut store, "bn", channels).unwrap();
        (store, bn)
    }

    #[test]
    fn constant_batch_maps_to_zero() {
        let (mut store, bn) = setup(2);
        let mut g = Graph::new();
        let x = g.input(Tensor::full(Shape::new(3, 2, 2, 2), 7.5));
        let y = bn.forward(&mut g, &mut store, x, Mode::Train).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_output_is_standardized() {
        let (mut store, bn) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = Tensor::<f64>::randn(Shape::new(4, 3, 5, 5), 3.0, &mut rng).map(|v| v + 2.0);
        let mut g = Graph::new();
        let x = g.input(input);
        let y = bn.forward(&mut g, &mut store, x, Mode::Train).unwrap();
        let (mean, var) = channel_stats(g.value(y));
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-4);
            assert!((var[c] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn inference_uses_running_statistics() {
        let (mut store, bn) = setup(1);
        store.get_mut(bn.running_mean).value.fill(2.0);
        store.get_mut(bn.running_var).value.fill(4.0);
        store.get_mut(bn.gamma).value.fill(3.0);
        store.get_mut(bn.beta).value.fill(1.0);
        let mut g = Graph::new();
        let x = g.input(Tensor::full(Shape::new(1, 1, 1, 1), 4.0));
        let gamma = g.param(&store, bn.gamma);
        let beta = g.param(&store, bn.beta);
        let y = g.batch_norm_infer(x, gamma, beta, &[2.0], &[4.0], 0.0).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
        // with the layer's epsilon the result moves by O(eps)
        let y = bn.forward(&mut g, &mut store, x, Mode::Infer).unwrap();
        assert!((g.value(y).data()[0] - 4.0).abs() < 1e-5);
    }

    #[test]
    fn running_statistics_follow_momentum() {
        let (mut store, bn) = setup(1);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 3.0]).unwrap());
        bn.forward(&mut g, &mut store, x, Mode::Train).unwrap();
        // batch mean 2, unbiased variance 2
        assert!((store.get(bn.running_mean).value.data()[0] - 0.2).abs() < 1e-12);
        assert!((store.get(bn.running_var).value.data()[0] - (0.9 + 0.2)).abs() < 1e-12);
    }

    #[test]
    fn channel_mismatch_errors() {
        let (store, bn) = setup(2);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(Shape::new(2, 3, 2, 2)));
        let gamma = g.param(&store, bn.gamma);
        let beta = g.param(&store, bn.beta);
        assert!(matches!(
            g.batch_norm_train(x, gamma, beta, 1e-5),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn single_value_channel_rejected_in_training() {
        let (mut store, bn) = setup(1);
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(Shape::new(1, 1, 1, 1)));
        assert!(bn.forward(&mut g, &mut store, x, Mode::Train).is_err());
    }
}
