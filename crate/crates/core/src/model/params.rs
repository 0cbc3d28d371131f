//! Named parameter storage and its binding onto a tape.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::tensor::{Array, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±1/sqrt(fan_in)` with `fan_in = shape[0]`.
    FanIn,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("parameter {name} defined twice")));
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(())
    }

    /// Creates a parameter; randomness comes from a stream keyed by its name
    /// so adding parameters never perturbs existing ones.
    pub fn init(&mut self, root: &SeedStream, name: &str, shape: &[usize], init: Init) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::FanIn => {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let mut r = root.split_str(name);
                (0..n).map(|_| r.uniform_range(-bound, bound)).collect()
            }
        };
        self.insert(name, Array::new(shape.to_vec(), data)?)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array] {
        &mut self.values
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.position(name)
            .map(|i| &self.values[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        match self.position(name) {
            Some(i) => Ok(&mut self.values[i]),
            None => Err(Error::Contract(format!("unknown parameter {name}"))),
        }
    }

    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> Bound<'a> {
        let vars = self.values.iter().map(|v| tape.leaf(v.clone())).collect();
        Bound { store: self, vars }
    }

    /// Registers every parameter as a constant (no gradients recorded).
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape) -> Bound<'a> {
        let vars = self.values.iter().map(|v| tape.constant(v.clone())).collect();
        Bound { store: self, vars }
    }

    /// Uses caller-created vars, e.g. from a finite-difference harness.
    pub fn bind_vars<'a>(&'a self, vars: &[Var]) -> Result<Bound<'a>> {
        if vars.len() != self.len() {
            return Err(Error::Contract(format!("{} vars for {} parameters", vars.len(), self.len())));
        }
        Ok(Bound {
            store: self,
            vars: vars.to_vec(),
        })
    }
}

/// Parameter vars on one tape.
#[derive(Clone, Debug)]
pub struct Bound<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.store
            .position(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
