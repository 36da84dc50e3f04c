/// Sparse feature vector with strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SparseError {
    #[error("indices must be strictly increasing (saw {prev} then {next})")]
    NotIncreasing { prev: usize, next: usize },
    #[error("index and value lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

impl SparseVec {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self, SparseError> {
        if indices.len() != values.len() {
            return Err(SparseError::LengthMismatch(indices.len(), values.len()));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(SparseError::NotIncreasing { prev: w[0], next: w[1] });
        }
        Ok(Self { indices, values })
    }

    /// Keeps every coordinate, zeros included.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self { indices: (0..dense.len()).collect(), values: dense.to_vec() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// One past the largest index, or 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i + 1)
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Inner product with a dense vector; indices past its end count as zero.
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.iter().filter_map(|(i, v)| dense.get(i).map(|d| d * v)).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim.max(self.min_dim())];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { indices: self.indices.clone(), values: self.values.iter().map(|v| c * v).collect() }
    }

    pub(crate) fn push_unchecked(&mut self, index: usize, value: f64) {
        debug_assert!(self.indices.last().is_none_or(|&last| last < index));
        self.indices.push(index);
        self.values.push(value);
    }
}
