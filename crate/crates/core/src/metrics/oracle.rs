use crate::error::{Error, Result};
use crate::video::Frame;

/// Maps captions and frames into one embedding space.
///
/// Every embedding must be a finite unit vector of length [`dim`]; metric
/// code relies on nothing else about the oracle.
///
/// [`dim`]: SimilarityOracle::dim
pub trait SimilarityOracle {
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
    fn embed_frame(&self, frame: Frame<'_>) -> Result<Vec<f64>>;
}

/// Largest accepted deviation of an embedding's norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Checks an oracle output against the contract.
pub fn check_embedding(v: &[f64], dim: usize, what: &str) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Contract(format!(
            "{what} embedding has {} entries, oracle declares {dim}",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract(format!("{what} embedding is not finite")));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Contract(format!("{what} embedding has norm {norm}, expected 1")));
    }
    Ok(())
}

pub(crate) fn checked_text(oracle: &dyn SimilarityOracle, text: &str) -> Result<Vec<f64>> {
    let v = oracle.embed_text(text)?;
    check_embedding(&v, oracle.dim(), "text")?;
    Ok(v)
}

pub(crate) fn checked_frame(oracle: &dyn SimilarityOracle, frame: Frame<'_>) -> Result<Vec<f64>> {
    let v = oracle.embed_frame(frame)?;
    check_embedding(&v, oracle.dim(), "frame")?;
    Ok(v)
}

/// Scales `v` to unit length; `None` for the zero vector.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}
