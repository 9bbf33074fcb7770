use super::network::{Gradients, Network, NetworkParams};
use super::tensor::Real;
use crate::error::{Error, Result};

/// Momentum SGD: `v <- momentum * v - lr * g; theta <- theta + v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<NetworkParams<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    /// Applies one update in place. A non-finite gradient aborts without
    /// touching the parameters.
    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.count() != params.count() {
            return Err(Error::Shape("gradient layout does not match parameters".into()));
        }
        if !grads.all_finite() {
            return Err(Error::Numeric("non-finite gradient; training aborted".into()));
        }
        let velocity = self.velocity.get_or_insert_with(|| {
            let mut v = grads.clone();
            v.values_mut().for_each(|x| *x = T::zero());
            v
        });
        let mu = T::from_f64(self.momentum);
        let lr = T::from_f64(self.learning_rate);
        for ((p, v), &g) in params
            .values_mut()
            .zip(velocity.values_mut())
            .zip(grads.values())
        {
            *v = mu * *v - lr * g;
            *p = *p + *v;
        }
        Ok(())
    }

    pub fn step_network(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<()> {
        self.step(net.params_mut(), grads)
    }
}
