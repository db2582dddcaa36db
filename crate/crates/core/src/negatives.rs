//! Fixed-capacity FIFO dictionary of past key embeddings.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::encoder::{check_unit_rows, EmbeddingBatch};
use crate::error::{Error, Result};

/// Which key embeddings of a step are pushed into the queue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnqueuePolicy {
    #[default]
    Both,
    FirstOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegativeQueue {
    buffer: Array2<f64>,
    write_pointer: usize,
    filled: usize,
}

impl NegativeQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::Config(format!("queue needs capacity and dim > 0, got {capacity} x {dim}")));
        }
        Ok(Self {
            buffer: Array2::zeros((capacity, dim)),
            write_pointer: 0,
            filled: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.buffer.nrows()
    }

    pub fn dim(&self) -> usize {
        self.buffer.ncols()
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn write_pointer(&self) -> usize {
        self.write_pointer
    }

    pub fn enqueue(&mut self, keys: &EmbeddingBatch) -> Result<()> {
        keys.check_normalized()?;
        if keys.dim() != self.dim() {
            return Err(Error::Shape(format!("key dim {} vs queue dim {}", keys.dim(), self.dim())));
        }
        if keys.len() > self.capacity() {
            return Err(Error::Capacity {
                batch: keys.len(),
                capacity: self.capacity(),
            });
        }
        let k = self.capacity();
        for row in keys.vectors.rows() {
            self.buffer.row_mut(self.write_pointer).assign(&row);
            self.write_pointer = (self.write_pointer + 1) % k;
        }
        self.filled = (self.filled + keys.len()).min(k);
        Ok(())
    }

    /// Owned copy of the filled rows, oldest first.
    pub fn negatives_view(&self) -> Result<Array2<f64>> {
        if self.filled == 0 {
            return Err(Error::EmptyQueue);
        }
        if self.filled < self.capacity() {
            return Ok(self.buffer.slice(s![..self.filled, ..]).to_owned());
        }
        let p = self.write_pointer;
        Ok(ndarray::concatenate(
            ndarray::Axis(0),
            &[self.buffer.slice(s![p.., ..]), self.buffer.slice(s![..p, ..])],
        )
        .expect("queue halves share a width"))
    }

    /// Raw state for checkpoints: `(buffer, write_pointer, filled)`.
    pub fn state(&self) -> (&Array2<f64>, usize, usize) {
        (&self.buffer, self.write_pointer, self.filled)
    }

    pub fn from_state(buffer: Array2<f64>, write_pointer: usize, filled: usize) -> Result<Self> {
        let k = buffer.nrows();
        if k == 0 || write_pointer >= k || filled > k {
            return Err(Error::Checkpoint(format!(
                "queue state out of range: K={k}, pointer={write_pointer}, filled={filled}"
            )));
        }
        if filled < k && write_pointer != filled {
            return Err(Error::Checkpoint("partially filled queue with displaced pointer".into()));
        }
        let q = Self {
            buffer,
            write_pointer,
            filled,
        };
        if filled > 0 {
            check_unit_rows(&q.negatives_view()?)?;
        }
        Ok(q)
    }
}
