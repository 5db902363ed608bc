use super::Tensor;

/// Index of a [`Parameter`] inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor with its gradient accumulator and RMSProp state.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    state: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let state = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            state,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    /// Running mean of squared gradients.
    pub fn state(&self) -> &Tensor {
        &self.state
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Tensor, &mut Tensor, &mut Tensor) {
        (&mut self.value, &mut self.grad, &mut self.state)
    }

    pub fn accumulate(&mut self, g: &Tensor) {
        debug_assert_eq!(g.shape(), self.grad.shape());
        for (a, b) in self.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Owns every parameter of a model.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    /// Total number of scalar entries across the given parameters.
    pub fn count(&self, ids: &[ParamId]) -> usize {
        ids.iter().map(|&id| self.get(id).value().len()).sum()
    }

    /// Copies of the current values of `ids`, for later comparison.
    pub fn snapshot(&self, ids: &[ParamId]) -> Vec<Tensor> {
        ids.iter().map(|&id| self.get(id).value().clone()).collect()
    }
}
