use crate::error::{Error, Result};

/// Caption token ids padded to a fixed length.
///
/// `mask[i]` is `true` for real tokens. Padding is contiguous at the end
/// and at least one real token is present.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextSequence {
    ids: Vec<usize>,
    mask: Vec<bool>,
    vocab_size: usize,
}

impl TextSequence {
    pub fn new(ids: Vec<usize>, mask: Vec<bool>, vocab_size: usize) -> Result<Self> {
        if ids.len() != mask.len() || ids.is_empty() {
            return Err(Error::Contract("text ids and mask must be equal, non-empty".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_size) {
            return Err(Error::Index {
                what: "text token",
                index: bad,
                bound: vocab_size,
            });
        }
        let real = mask.iter().take_while(|&&m| m).count();
        if real == 0 {
            return Err(Error::Contract("text has no real tokens".into()));
        }
        if mask[real..].iter().any(|&m| m) {
            return Err(Error::Contract("padding must be contiguous at the end".into()));
        }
        Ok(Self { ids, mask, vocab_size })
    }

    /// Unpadded ids; the sequence length equals `ids.len()`.
    pub fn unpadded(ids: Vec<usize>, vocab_size: usize) -> Result<Self> {
        let mask = vec![true; ids.len()];
        Self::new(ids, mask, vocab_size)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}
