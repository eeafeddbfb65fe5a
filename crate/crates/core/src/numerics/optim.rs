use crate::numerics::ParamStore;
use crate::scalar::Scalar;

/// Plain gradient descent: `value -= lr * grad` on every trainable parameter.
pub fn sgd_step<S: Scalar>(params: &mut ParamStore<S>, lr: S) {
    for p in params.iter_mut().filter(|p| p.trainable) {
        for (v, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
            *v -= lr * g;
        }
    }
}
