use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Element, Tensor};

/// Adam moments for every parameter of a store, indexed like the store.
#[derive(Clone, Debug)]
pub struct AdamState<T: Element = f32> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.second[index]
    }

    /// One bias-corrected Adam update of every trainable parameter from its
    /// accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if store.len() != self.first.len() {
            return Err(Error::DimensionMismatch {
                op: "adam_step",
                detail: format!("{} parameters vs {} moment slots", store.len(), self.first.len()),
            });
        }
        for (p, m) in store.iter().zip(&self.first) {
            if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.grad.shape(),
                    right: m.shape(),
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let cast = T::from_f64_lossy;
        let (b1t, b2t, one) = (cast(b1), cast(b2), T::one());
        let (lr_t, c1t, c2t, eps) = (cast(lr), cast(c1), cast(c2), cast(self.epsilon));
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !p.trainable {
                continue;
            }
            let g = p.grad.data();
            for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = b1t * *mi + (one - b1t) * gi;
                *vi = b2t * *vi + (one - b2t) * gi * gi;
                let m_hat = *mi / c1t;
                let v_hat = *vi / c2t;
                *w -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(w), true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(0.7);
        let mut adam = AdamState::new(&s);
        for _ in 0..5 {
            adam.step(&mut s, 0.05).unwrap();
        }
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.7]);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        s.iter_mut().next().unwrap().grad = Tensor::scalar(0.3);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s, 0.05).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε)
        let expected = 1.0 - 0.05 * 0.3 / (0.3 + 1e-8);
        assert!((s.iter().next().unwrap().value.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn frozen_parameters_stay_put() {
        let mut s = ParamStore::<f64>::new();
        s.add("stat", Tensor::full(Shape::matrix(1, 2), 2.0), false).unwrap();
        s.iter_mut().next().unwrap().grad = Tensor::full(Shape::matrix(1, 2), 1.0);
        let mut adam = AdamState::new(&s);
        adam.step(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), &[2.0, 2.0]);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(&s);
        assert!(adam.step(&mut s, 0.0).is_err());
        assert!(adam.step(&mut s, f64::NAN).is_err());
    }
}
