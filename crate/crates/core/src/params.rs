//! Named parameter collections and their binding onto a tape.

use autograd::{Gradients, Tape, Tensor, Var};
use indexmap::IndexMap;
use rand::Rng;

use crate::nn::{Init, ParamSpec};

/// Ordered map from parameter name to value. Insertion order is the
/// serialization order of checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Allocates and initializes every spec in order.
    pub fn from_specs<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = Self::new();
        store.init_specs(specs, rng);
        store
    }

    pub fn init_specs<R: Rng + ?Sized>(&mut self, specs: &[ParamSpec], rng: &mut R) {
        for spec in specs {
            let t = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
                Init::Constant(v) => Tensor::full(&spec.shape, v),
                Init::Uniform(bound) => {
                    Tensor::from_fn(&spec.shape, |_| rng.gen_range(-bound..bound))
                }
            };
            self.insert(spec.name.clone(), t);
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Sub-store of every entry whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Records every parameter on `tape`; names accepted by `trainable`
    /// become tracked leaves, the rest constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(&str) -> bool) -> Bound<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t> {
    vars: IndexMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    /// Panics on unknown names: the model code and its parameter specs are
    /// generated from the same configuration, so a miss is a programming error.
    pub fn get(&self, name: &str) -> Var<'t> {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn try_get(&self, name: &str) -> Option<Var<'t>> {
        self.vars.get(name).copied()
    }

    /// Gradients of every tracked parameter that the root depends on.
    /// Tracked parameters the root does not reach get a zero gradient.
    pub fn gradients(&self, grads: &Gradients) -> IndexMap<String, Tensor> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(name, v)| {
                let g = grads
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(v.value().shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
