use std::cell::{RefCell, RefMut};
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::storage::{Float, Tensor};
use crate::tensor::tape::{Gradients, Tape, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
    /// Whether weight decay applies to this parameter.
    pub decay: bool,
}

/// Ordered registry of uniquely named parameters.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
            requires_grad: true,
            decay,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id_of(name).map(|id| self.get(id))
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

    /// Total number of scalar values across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_value",
                detail: format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Stores one gradient per parameter, in registry order.
    pub fn set_grads(&mut self, grads: Vec<Tensor<T>>) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            p.grad = p.requires_grad.then_some(g);
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.grad = None);
    }
}

/// Allocates named parameters under a dotted prefix with seeded initialization.
pub struct ParamBuilder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, T: Float> ParamBuilder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
        }
    }

    /// A builder whose names are prefixed with `name.`.
    pub fn sub(&mut self, name: &str) -> ParamBuilder<'_, T> {
        ParamBuilder {
            prefix: self.path(name),
            store: self.store,
            rng: self.rng,
        }
    }

    fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// He-style fan-in scaled Gaussian weights, `N(0, 2/fan_in)`.
    pub fn he(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        self.normal(name, shape, std, true)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64, decay: bool) -> Result<ParamId> {
        let value = Tensor::randn(shape, std, self.rng)?;
        self.store.add(self.path(name), value, decay)
    }

    /// Zero-initialized and exempt from weight decay.
    pub fn bias(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.store.add(self.path(name), Tensor::zeros(shape)?, false)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, decay: bool) -> Result<ParamId> {
        self.store.add(self.path(name), Tensor::full(shape, T::lit(value))?, decay)
    }
}

/// One forward pass: a tape with every parameter bound as a leaf.
pub struct Session<'t, T: Float> {
    tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
    training: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t, T: Float> Session<'t, T> {
    /// Binds `store` onto `tape`. `seed` drives dropout masks.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, training: bool, seed: u64) -> Self {
        let vars = store
            .iter()
            .map(|p| {
                if p.requires_grad {
                    tape.var(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        Self {
            tape,
            vars,
            training,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn rng(&self) -> RefMut<'_, ChaCha8Rng> {
        self.rng.borrow_mut()
    }

    pub fn dropout(&self, x: Var<'t, T>, p: f64) -> Result<Var<'t, T>> {
        x.dropout(p, self.training, &mut *self.rng.borrow_mut())
    }

    /// Per-parameter gradients in registry order, zeros where unreachable.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|&v| grads.wrt_or_zero(v)).collect()
    }
}
