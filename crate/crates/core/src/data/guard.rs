//! Access guard that keeps training code away from unseen compositions.

use std::cell::Cell;

use super::{CompositionTable, Split};
use crate::{CoreError, Result};

/// Every composition label the trainer touches goes through this guard.
/// Seen compositions are remapped to their dense position among the seen
/// set (the training class index); any unseen access is counted and
/// rejected, so a test can assert the violation counter stayed at zero.
#[derive(Debug)]
pub struct SeenGuard {
    seen_position: Vec<Option<usize>>,
    accesses: Cell<u64>,
    violations: Cell<u64>,
}

impl SeenGuard {
    pub fn new(table: &CompositionTable) -> Self {
        let mut seen_position = vec![None; table.len()];
        let mut next = 0;
        for id in 0..table.len() {
            if table.split(id) == Split::Seen {
                seen_position[id] = Some(next);
                next += 1;
            }
        }
        SeenGuard {
            seen_position,
            accesses: Cell::new(0),
            violations: Cell::new(0),
        }
    }

    /// Maps a composition id to its training class index, rejecting unseen
    /// compositions.
    pub fn seen_label(&self, composition_id: usize) -> Result<usize> {
        self.accesses.set(self.accesses.get() + 1);
        match self.seen_position.get(composition_id).copied().flatten() {
            Some(pos) => Ok(pos),
            None => {
                self.violations.set(self.violations.get() + 1);
                Err(CoreError::UnseenLabelInTraining {
                    composition: composition_id,
                })
            }
        }
    }

    pub fn accesses(&self) -> u64 {
        self.accesses.get()
    }

    pub fn violations(&self) -> u64 {
        self.violations.get()
    }
}
