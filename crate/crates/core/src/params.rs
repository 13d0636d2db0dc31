//! Named parameter blocks and the layers built on top of them.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::linalg::Mat;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub value: Mat,
}

/// Ordered collection of named parameter matrices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    blocks: Vec<ParamBlock>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, value: Mat) -> usize {
        self.blocks.push(ParamBlock { name: name.to_string(), value });
        self.blocks.len() - 1
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn value(&self, id: usize) -> &Mat {
        &self.blocks[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Mat {
        &mut self.blocks[id].value
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks.iter().map(|b| b.value.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.value.is_finite())
    }

    /// Overwrites every block with zeros.
    pub fn zero_all(&mut self) {
        for b in &mut self.blocks {
            b.value.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Replaces the values of blocks whose names and shapes match `other`.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), String> {
        if self.blocks.len() != other.blocks.len() {
            return Err("parameter block count mismatch".to_string());
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(alloc::format!("parameter block mismatch at {}", a.name));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }
}

/// Fully connected layer `y = x·W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: Option<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        // Glorot-uniform.
        let limit = libm::sqrt(6.0 / (fan_in + fan_out).max(1) as f64);
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        let weight = store.push(&alloc::format!("{name}.weight"), Mat::from_vec(fan_in, fan_out, data));
        let bias = bias.then(|| store.push(&alloc::format!("{name}.bias"), Mat::zeros(1, fan_out)));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let bv = tape.param(store, b);
                tape.add_row(y, bv)
            }
            None => y,
        }
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = self.bias {
            store.value_mut(b).as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
