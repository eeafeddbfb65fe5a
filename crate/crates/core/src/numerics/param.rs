use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<S = f64> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub trainable: bool,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Tensor<S>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
            trainable: true,
        }
    }
}

/// Named, ordered collection of parameters. Order is insertion order and is
/// what checkpoints serialize.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S = f64> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(S::zero());
        }
    }

    /// Adds every gradient in `grads` onto the matching parameter's `grad`.
    pub fn accumulate(&mut self, grads: &Gradients<S>) -> Result<()> {
        for (id, g) in grads.iter() {
            let p = self
                .params
                .get_mut(id.0)
                .ok_or_else(|| Error::Contract(format!("gradient for unknown param {}", id.0)))?;
            p.grad.add_scaled(g, S::one())?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<S = f64> {
    entries: Vec<(ParamId, Tensor<S>)>,
}

impl<S: Scalar> Gradients<S> {
    pub(crate) fn push(&mut self, id: ParamId, grad: Tensor<S>) {
        if let Some((_, g)) = self.entries.iter_mut().find(|(i, _)| *i == id) {
            g.add_scaled(&grad, S::one())
                .expect("gradient shapes agree for one param");
        } else {
            self.entries.push((id, grad));
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<S>)> {
        self.entries.iter().map(|(i, g)| (*i, g))
    }
}
