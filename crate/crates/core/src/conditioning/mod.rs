//! The control mechanism: task selector vectors, FiLM layers, and the
//! condition generator that maps a task vector to FiLM parameters.

mod film;
mod generator;

pub use film::{film_apply, film_backward, film_forward, FeatureMap, FilmBatch, FilmMode, FilmParamSet};
pub use generator::{
    generator_param_count, Embedding, GenCache, Generator, GeneratorConfig, HeadActivation,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task selector `z`. Entries lie in `[0, 1]`; a pure selector is one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector {
    weights: Vec<f64>,
}

impl ConditionVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Input("condition vector needs at least one task".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::Domain(format!("condition weight {w} outside [0, 1]")));
        }
        Ok(ConditionVector { weights })
    }

    pub fn one_hot(task_index: usize, n_tasks: usize) -> Result<Self> {
        if task_index >= n_tasks {
            return Err(Error::Index { index: task_index, len: n_tasks });
        }
        let mut weights = vec![0.0; n_tasks];
        weights[task_index] = 1.0;
        Ok(ConditionVector { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_tasks(&self) -> usize {
        self.weights.len()
    }

    /// Multiply every entry by `w` in `[0, 1]`.
    pub fn scaled(&self, w: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&w));
        ConditionVector { weights: self.weights.iter().map(|v| v * w).collect() }
    }

    pub fn is_one_hot(&self) -> bool {
        self.weights.iter().filter(|&&v| v == 1.0).count() == 1
            && self.weights.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

pub fn one_hot(task_index: usize, n_tasks: usize) -> Result<ConditionVector> {
    ConditionVector::one_hot(task_index, n_tasks)
}
