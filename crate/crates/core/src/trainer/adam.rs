use e2ebt_tensor::{ParamId, ParamStore, Scalar, Tensor};

use crate::error::{CoreError, Result};

/// Adam with bias correction. Moments are kept per parameter slot.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: Vec<Option<(Tensor<T>, Tensor<T>)>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn moments(&self, id: ParamId) -> Option<&(Tensor<T>, Tensor<T>)> {
        self.moments.get(id.0).and_then(Option::as_ref)
    }

    pub fn set_moments(&mut self, id: ParamId, m: Tensor<T>, v: Tensor<T>) {
        if self.moments.len() <= id.0 {
            self.moments.resize(id.0 + 1, None);
        }
        self.moments[id.0] = Some((m, v));
    }

    /// One update of every parameter in `grads`.
    pub fn update(
        &mut self,
        store: &mut ParamStore<T>,
        grads: Vec<(ParamId, Tensor<T>)>,
        lr: f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let eps = T::from_f64_lossy(self.eps);
        let lr = T::from_f64_lossy(lr);
        for (id, g) in grads {
            if !g.all_finite() {
                return Err(CoreError::NonFiniteLoss {
                    iteration: self.step,
                    report: format!("gradient of {} is not finite", store.param(id).name),
                });
            }
            if self.moments.len() <= id.0 {
                self.moments.resize(id.0 + 1, None);
            }
            let (m, v) = self.moments[id.0]
                .get_or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            let p = store.get_mut(id);
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::vector(vec![1.0, -1.0, 0.5]));
        let mut adam = Adam::new(0.9, 0.999, 1e-12);
        adam.update(&mut store, vec![(id, Tensor::vector(vec![2.0, -3.0, 0.0]))], 0.1)
            .unwrap();
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-9);
        assert!((w[1] + 0.9).abs() < 1e-9);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn zero_gradient_never_moves() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::vector(vec![0.3, 0.7]));
        let mut adam = Adam::new(0.9, 0.98, 1e-8);
        for _ in 0..10 {
            adam.update(&mut store, vec![(id, Tensor::zeros(&[2]))], 0.01).unwrap();
        }
        assert_eq!(store.get(id).data(), &[0.3, 0.7]);
    }
}
