use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use diffcore::random::{normal, rng, truncated_normal};
use diffcore::{Real, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::error::{HsdaError, Result};

pub const INIT_STD: f64 = 0.02;

/// How ordinary weights are drawn. Zero- and one-initialised parameters are
/// unaffected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Truncated normal with standard deviation [`INIT_STD`].
    #[default]
    Truncated,
    /// Truncated normal with standard deviation `1/sqrt(fan_in)`.
    FanIn,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitScheme::Truncated => "truncated",
            InitScheme::FanIn => "fan_in",
        })
    }
}

impl FromStr for InitScheme {
    type Err = HsdaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncated" => Ok(InitScheme::Truncated),
            "fan_in" => Ok(InitScheme::FanIn),
            _ => Err(HsdaError::Config(format!("unknown init scheme {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

impl ParamId {
    #[inline]
    pub fn var(self, bound: &[Var]) -> Var {
        bound[self.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal weight (fan-in given for the random mode).
    Weight { fan_in: usize },
    /// Zero unless the builder randomises everything.
    Zero { fan_in: usize },
    Bias,
    One,
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn push(&mut self, name: String, value: Tensor<T>) -> Result<ParamId> {
        if self.index.contains_key(&name) {
            return Err(HsdaError::Config(format!("duplicate parameter {name}")));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.values.iter().map(|v| tape.param(v.clone())).collect()
    }

    /// Registers every tensor as a constant.
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.values.iter().map(|v| tape.constant(v.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.names != self.names {
            return Err(HsdaError::Config("parameter names differ".into()));
        }
        for (name, (dst, src)) in self.names.iter().zip(self.values.iter_mut().zip(&other.values)) {
            if dst.shape() != src.shape() {
                return Err(HsdaError::Config(format!(
                    "parameter {name}: shape {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Registers parameters in a fixed order and draws their initial values
/// from one seeded stream.
pub struct Builder {
    store: ParamStore<f32>,
    rng: ChaCha8Rng,
    randomise_all: bool,
    scheme: InitScheme,
    prefix: Vec<String>,
}

impl Builder {
    pub fn new(seed: u64, randomise_all: bool) -> Self {
        Builder {
            store: ParamStore::default(),
            rng: rng(seed, 0),
            randomise_all,
            scheme: InitScheme::Truncated,
            prefix: Vec::new(),
        }
    }

    pub fn with_scheme(mut self, scheme: InitScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.prefix.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.prefix.pop();
    }

    pub fn scoped<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.push_scope(name);
        let r = f(self);
        self.pop_scope();
        r
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        let value: Tensor<f32> = if self.randomise_all {
            // Unit-scale values keep every gradient well above round-off in
            // finite-difference checks.
            match init {
                Init::Weight { fan_in } | Init::Zero { fan_in } => {
                    normal(&mut self.rng, shape, 1.0 / (fan_in.max(1) as f64).sqrt())
                }
                Init::Bias => normal(&mut self.rng, shape, 0.1),
                Init::One => normal::<f32>(&mut self.rng, shape, 0.1).map(|v| v + 1.0),
            }
        } else {
            match init {
                Init::Weight { fan_in } => {
                    let std = match self.scheme {
                        InitScheme::Truncated => INIT_STD,
                        InitScheme::FanIn => 1.0 / (fan_in.max(1) as f64).sqrt(),
                    };
                    truncated_normal(&mut self.rng, shape, std, 2.0)
                }
                Init::Zero { .. } | Init::Bias => Tensor::zeros(shape),
                Init::One => Tensor::ones(shape),
            }
        };
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        self.store.push(full, value).expect("parameter names are unique by construction")
    }

    pub fn finish(self) -> ParamStore<f32> {
        self.store
    }
}
