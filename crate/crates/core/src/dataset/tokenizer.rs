use crate::decoder::TextSequence;
use crate::error::{Error, Result};

/// Fixed caption vocabulary. Index 0 is padding.
pub const VOCAB: [&str; 22] = [
    "<pad>", "digit", "is", "moving", "moves", "while", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "up", "down",
    "left", "right", "then", "and",
];

pub const PAD_ID: usize = 0;

pub fn vocab_size() -> usize {
    VOCAB.len()
}

/// Lowercases, splits on whitespace and maps every word to its vocabulary
/// id, padding to `max_len`.
pub fn tokenize(text: &str, max_len: usize) -> Result<TextSequence> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Tokenizer("empty text".into()));
    }
    if words.len() > max_len {
        return Err(Error::Tokenizer(format!("{} words exceed the limit of {max_len}", words.len())));
    }
    let unknown: Vec<&str> = words
        .iter()
        .copied()
        .filter(|w| *w == VOCAB[PAD_ID] || !VOCAB.contains(w))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Tokenizer(format!("out-of-vocabulary words: {}", unknown.join(", "))));
    }
    let mut ids: Vec<usize> = words
        .iter()
        .map(|w| VOCAB.iter().position(|v| v == w).expect("checked above"))
        .collect();
    let mut mask = vec![true; ids.len()];
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, false);
    TextSequence::new(ids, mask, VOCAB.len())
}

pub fn detokenize(seq: &TextSequence) -> String {
    seq.ids()
        .iter()
        .zip(seq.mask())
        .filter(|(_, &m)| m)
        .map(|(&i, _)| VOCAB[i])
        .collect::<Vec<_>>()
        .join(" ")
}
