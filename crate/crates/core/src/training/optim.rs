use crate::layers::Param;
use crate::network::ModelWeights;
use crate::tensor::Scalar;

/// RMSProp:
/// `acc ← ρ·acc + (1−ρ)·g²`, `w ← w − lr·g / (√acc + ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self { rho: 0.9, eps: 1e-8 }
    }
}

impl RmsProp {
    /// Updates one parameter in place and clears its gradient.
    pub fn update<T: Scalar>(&self, p: &mut Param<T>, lr: f64) {
        if p.trainable {
            let (rho, one_minus_rho) = (T::lit(self.rho), T::lit(1.0 - self.rho));
            let (lr, eps) = (T::lit(lr), T::lit(self.eps));
            let values = p.value.data_mut().iter_mut();
            for ((w, &g), acc) in values.zip(p.grad.data()).zip(p.rms_acc.data_mut()) {
                *acc = rho * *acc + one_minus_rho * g * g;
                *w = *w - lr * g / (acc.sqrt() + eps);
            }
        }
        p.zero_grad();
    }

    /// Steps every trainable parameter; all gradients are zeroed afterwards.
    pub fn step<T: Scalar>(&self, weights: &mut ModelWeights<T>, lr: f64) {
        for p in weights.iter_mut() {
            self.update(p, lr);
        }
    }
}
