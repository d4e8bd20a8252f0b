use rand::Rng;

use super::{AutodiffError, Real, Tensor};

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.dims());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, name-addressable collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Adds a kernel initialized uniformly in `±sqrt(6 / fan_in)`.
    pub fn add_fan_in_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = dims.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::new(dims.to_vec(), data).expect("dims match"))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Replaces the value of the named parameter, checking dims.
    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<(), AutodiffError> {
        let id = self
            .find(name)
            .ok_or_else(|| AutodiffError::Graph(format!("no parameter named {name}")))?;
        let p = &mut self.params[id.0];
        if p.value.dims() != value.dims() {
            return Err(AutodiffError::Shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                p.value.dims(),
                value.dims()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                })
                .collect(),
        }
    }
}
