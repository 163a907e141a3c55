//! Fixed-capacity FIFO memory bank of key projections.
//!
//! Each slot holds an L2-normalized projection together with the coarse
//! label and dataset id of the sample it came from. Labels feed the
//! coarse-label mask; ids let relation builders skip stale copies of the
//! query sample itself.

use crate::error::{shape_err, Error, Result};
use crate::numerics::Matrix;

/// Allowed deviation of a pushed row's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    projections: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<usize>,
    fill: usize,
    /// Slot the next push writes to.
    head: usize,
}

/// Oldest-first copy of the filled part of a bank.
#[derive(Clone, Debug, PartialEq)]
pub struct BankSnapshot {
    pub projections: Matrix,
    pub labels: Vec<usize>,
    pub ids: Vec<usize>,
}

impl BankSnapshot {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            projections: vec![0.0; capacity * dim],
            labels: vec![0; capacity],
            ids: vec![0; capacity],
            fill: 0,
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn is_full(&self) -> bool {
        self.fill == self.capacity
    }

    /// Appends rows, evicting the oldest entries once the bank is full.
    pub fn push(&mut self, projections: &Matrix, labels: &[usize], ids: &[usize]) -> Result<()> {
        let b = projections.rows();
        if projections.cols() != self.dim || labels.len() != b || ids.len() != b {
            return Err(shape_err(format!(
                "push of {:?} projections with {} labels and {} ids into a {}-dim bank",
                projections.shape(),
                labels.len(),
                ids.len(),
                self.dim
            )));
        }
        for (row, n) in projections.row_norms().into_iter().enumerate() {
            if !((n - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::NotNormalized { row, norm: n });
            }
        }
        if self.capacity == 0 {
            return Ok(());
        }
        // rows that would be evicted within this same push are never written
        let skip = b.saturating_sub(self.capacity);
        for i in skip..b {
            let slot = self.head;
            self.projections[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(projections.row(i));
            self.labels[slot] = labels[i];
            self.ids[slot] = ids[i];
            self.head = (self.head + 1) % self.capacity;
        }
        self.fill = (self.fill + b).min(self.capacity);
        Ok(())
    }

    pub fn snapshot(&self) -> BankSnapshot {
        let start = if self.capacity == 0 {
            0
        } else {
            (self.head + self.capacity - self.fill) % self.capacity
        };
        let mut data = Vec::with_capacity(self.fill * self.dim);
        let mut labels = Vec::with_capacity(self.fill);
        let mut ids = Vec::with_capacity(self.fill);
        for k in 0..self.fill {
            let slot = (start + k) % self.capacity;
            data.extend_from_slice(&self.projections[slot * self.dim..(slot + 1) * self.dim]);
            labels.push(self.labels[slot]);
            ids.push(self.ids[slot]);
        }
        BankSnapshot {
            projections: Matrix::from_vec(self.fill, self.dim, data).expect("sized buffer"),
            labels,
            ids,
        }
    }
}
