use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// The API vocabulary. Valid symbols are `0..size`; the null symbol used by
/// the insertion generator is numbered `size`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config(format!(
                "vocabulary needs at least 2 symbols, got {}",
                names.len()
            )));
        }
        Ok(Vocabulary { names })
    }

    /// Vocabulary of `size` symbols named `api_0`, `api_1`, ...
    pub fn with_size(size: usize) -> Result<Self> {
        Vocabulary::new((0..size).map(|i| format!("api_{i}")).collect())
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn null_index(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

/// A discrete symbol sequence with one-hot semantics.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OneHotSequence {
    indices: Vec<usize>,
}

impl OneHotSequence {
    /// Builds a sequence whose symbols are all `< limit`.
    pub fn new(indices: Vec<usize>, limit: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= limit) {
            return Err(Error::SymbolRange { index, limit });
        }
        Ok(OneHotSequence { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn check_range(&self, limit: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= limit) {
            Some(&index) => Err(Error::SymbolRange { index, limit }),
            None => Ok(()),
        }
    }

    /// Keeps at most the first `cap` symbols.
    pub fn truncated(&self, cap: usize) -> OneHotSequence {
        OneHotSequence {
            indices: self.indices[..self.indices.len().min(cap.max(1))].to_vec(),
        }
    }
}

/// Anything that can be fed to a sequence classifier as rows of a fixed width.
pub trait SequenceInput {
    fn input_rows(&self, width: usize) -> Result<Vec<Tensor>>;
}

impl SequenceInput for OneHotSequence {
    /// One-hot rows of `width`; a width larger than the vocabulary leaves the
    /// extra coordinates (e.g. the null slot) at zero.
    fn input_rows(&self, width: usize) -> Result<Vec<Tensor>> {
        self.indices.iter().map(|&i| Tensor::one_hot(i, width)).collect()
    }
}
