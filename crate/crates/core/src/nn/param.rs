use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param { name: name.into(), shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn filled(name: impl Into<String>, shape: &[usize], value: f64) -> Self {
        let mut p = Self::zeros(name, shape);
        p.data.iter_mut().for_each(|v| *v = value);
        p
    }

    pub fn normal<R: Rng>(name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        let dist = Normal::new(0.0, std).expect("finite std");
        p.data.iter_mut().for_each(|v| *v = dist.sample(rng));
        p
    }

    /// Uniform in `[-bound, bound]`, the usual fan-in initialisation for convs.
    pub fn uniform<R: Rng>(name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        p.data.iter_mut().for_each(|v| *v = rng.random_range(-bound..=bound));
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered parameter collection; gradient buffers share its layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamList {
    pub params: Vec<Param>,
}

impl ParamList {
    pub fn push(&mut self, p: Param) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.params[i].data
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }
}
