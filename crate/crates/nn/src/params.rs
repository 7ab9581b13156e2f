use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Initialization schemes for freshly created parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), fan_in = product of all but the first dim.
    UniformFanIn,
    Zeros,
    Ones,
}

/// Deterministic parameter initializer backed by xoshiro256++.
pub struct Initializer {
    rng: Xoshiro256PlusPlus,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn init(&mut self, shape: &[usize], scheme: InitScheme) -> Tensor {
        match scheme {
            InitScheme::Zeros => Tensor::zeros(shape),
            InitScheme::Ones => Tensor::ones(shape),
            InitScheme::UniformFanIn => {
                let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut t = Tensor::zeros(shape);
                for v in t.data_mut() {
                    *v = self.rng.random_range(-bound..bound);
                }
                t
            }
        }
    }
}

/// One-shot seeded initialization of a single tensor.
pub fn seeded_init(shape: &[usize], scheme: InitScheme, seed: u64) -> Tensor {
    Initializer::new(seed).init(shape, scheme)
}

/// Ordered, named collection of parameters. Order is creation order and is
/// what checkpoints and optimizers iterate over.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
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

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Copies parameter values (not gradients) from `other`, which must have
    /// an identical manifest.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return shape_err("copy_values_from", "parameter counts differ");
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return shape_err(
                    "copy_values_from",
                    format!("{} {:?} vs {} {:?}", dst.name, dst.value.shape(), src.name, src.value.shape()),
                );
            }
            dst.value.data_mut().copy_from_slice(src.value.data());
        }
        Ok(())
    }
}
