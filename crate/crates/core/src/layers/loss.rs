use crate::autodiff::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Max-shifted softmax over each row of an `N×C` matrix.
pub fn softmax<T: Element>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.shape().c;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

impl<T: Element> Graph<T> {
    /// Mean negative log-likelihood of `labels` under the row softmax of
    /// `logits`. Returns the scalar loss node and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<(Var, Tensor<T>)> {
        let s = self.shape(logits);
        if s.h != 1 || s.w != 1 || labels.len() != s.n {
            return Err(Error::DimensionMismatch {
                op: "softmax_cross_entropy",
                detail: format!("{} labels for logits {s}", labels.len()),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= s.c) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: s.c,
            });
        }
        let probs = softmax(self.value(logits));
        let mut total = T::zero();
        for (row, &label) in self.value(logits).data().chunks(s.c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += lse - (row[label] - max);
        }
        let loss = total / T::from_usize(s.n).unwrap();
        let v = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                probs: probs.data().to_vec(),
                labels: labels.to_vec(),
            },
        );
        Ok((v, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn equal_logits_give_log_class_count() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::full(Shape::matrix(1, 8), 0.3));
        let (loss, probs) = g.softmax_cross_entropy(x, &[5]).unwrap();
        assert!((g.value(loss).data()[0] - 8f64.ln()).abs() < 1e-12);
        assert!(probs.data().iter().all(|&p| (p - 0.125).abs() < 1e-12));
    }

    #[test]
    fn saturated_true_class_has_no_loss() {
        let mut g = Graph::<f32>::new();
        let mut logits = vec![0.0f32; 8];
        logits[2] = 1e4;
        let x = g.input(Tensor::from_vec(Shape::matrix(1, 8), logits).unwrap());
        let (loss, probs) = g.softmax_cross_entropy(x, &[2]).unwrap();
        assert!(g.value(loss).data()[0] < 1e-6);
        assert!((probs.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(Shape::matrix(2, 3)));
        assert!(matches!(
            g.softmax_cross_entropy(x, &[0, 3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }
}
