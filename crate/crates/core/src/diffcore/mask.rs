use crate::error::{Error, Result};

/// Additive pre-softmax attention mask with entries in {0, -inf}.
///
/// Stored as an allow-matrix; masked logits are skipped entirely rather
/// than added as a large negative constant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Builds a mask, rejecting any fully masked query row.
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut allowed = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            allowed.extend((0..cols).map(|j| f(i, j)));
        }
        let m = AttentionMask {
            rows,
            cols,
            allowed,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn dense(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols == 0 && self.rows > 0 {
            return Err(Error::FullyMaskedRow { row: 0 });
        }
        for i in 0..self.rows {
            if !self.row(i).iter().any(|&a| a) {
                return Err(Error::FullyMaskedRow { row: i });
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    /// Additive value: 0 or negative infinity.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if self.is_allowed(i, j) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allowed[i * self.cols..(i + 1) * self.cols]
    }

    /// Groups consecutive query rows that share one mask row; each group is
    /// `(row_start, row_end, allowed_columns)`.
    pub(crate) fn row_groups(&self) -> Vec<(usize, usize, Vec<usize>)> {
        let mut groups: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        let mut i = 0;
        while i < self.rows {
            let mut end = i + 1;
            while end < self.rows && self.row(end) == self.row(i) {
                end += 1;
            }
            let cols = (0..self.cols).filter(|&j| self.is_allowed(i, j)).collect();
            groups.push((i, end, cols));
            i = end;
        }
        groups
    }
}
