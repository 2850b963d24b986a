//! Transition storage for model training.

use crate::error::{CoreError, Result};
use nalgebra::DVector;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: DVector<f64>,
    pub action: DVector<f64>,
    pub next_state: DVector<f64>,
    pub episode: usize,
}

/// Append-only replay buffer of `(s, a, s')` records.
#[derive(Debug, Clone)]
pub struct TransitionDataset {
    state_dim: usize,
    action_dim: usize,
    transitions: Vec<Transition>,
    capacity: Option<usize>,
}

impl TransitionDataset {
    pub fn new(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
            capacity: None,
        }
    }

    pub fn with_capacity_limit(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            transitions: Vec::new(),
            capacity: Some(capacity),
        }
    }

    pub fn push(
        &mut self,
        state: DVector<f64>,
        action: DVector<f64>,
        next_state: DVector<f64>,
        episode: usize,
    ) -> Result<()> {
        if state.len() != self.state_dim || next_state.len() != self.state_dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.state_dim,
                got: state.len().max(next_state.len()),
                context: "dataset state".into(),
            });
        }
        if action.len() != self.action_dim {
            return Err(CoreError::DimensionMismatch {
                expected: self.action_dim,
                got: action.len(),
                context: "dataset action".into(),
            });
        }
        if let Some(cap) = self.capacity {
            if self.transitions.len() == cap {
                self.transitions.remove(0);
            }
        }
        self.transitions.push(Transition {
            state,
            action,
            next_state,
            episode,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.transitions[idx]
    }
}
