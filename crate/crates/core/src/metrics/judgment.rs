//! Pairwise human-preference aggregates.
//!
//! For models `0..N` judged on samples `0..T`, `r_ij(t) = 1` when model
//! `i`'s video for sample `t` was preferred over model `j`'s. The score of
//! model `i` is `Σ_t Σ_{j≠i} r_ij(t) / (N·T)`.
//!
//! Each unordered pair must be judged on every sample. A record for `(i, j)`
//! implies the complementary outcome for `(j, i)`; if both orderings are
//! recorded they must agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub sample: usize,
    pub model_i: usize,
    pub model_j: usize,
    /// `i`'s video looked more realistic than `j`'s.
    pub realism: bool,
    /// `i`'s video matched the query better than `j`'s.
    pub consistency: bool,
}

fn aggregate(records: &[JudgmentRecord], models: usize, samples: usize, pick: fn(&JudgmentRecord) -> bool) -> Result<Vec<f64>> {
    if models < 2 || samples == 0 {
        return Err(Error::Validation("need at least two models and one sample".into()));
    }
    // Outcome for (sample, lower model, higher model): did the lower one win?
    let mut outcomes: BTreeMap<(usize, usize, usize), bool> = BTreeMap::new();
    for (n, r) in records.iter().enumerate() {
        if r.model_i == r.model_j {
            return Err(Error::Validation(format!("record {n} compares model {} with itself", r.model_i)));
        }
        if r.model_i >= models || r.model_j >= models {
            return Err(Error::Validation(format!("record {n} names a model outside 0..{models}")));
        }
        if r.sample >= samples {
            return Err(Error::Validation(format!("record {n} names sample {} outside 0..{samples}", r.sample)));
        }
        let (lo, hi) = (r.model_i.min(r.model_j), r.model_i.max(r.model_j));
        let lo_wins = if r.model_i == lo { pick(r) } else { !pick(r) };
        if let Some(&prev) = outcomes.get(&(r.sample, lo, hi)) {
            if prev != lo_wins {
                return Err(Error::Validation(format!(
                    "record {n} contradicts an earlier judgment of models {lo} and {hi} on sample {}",
                    r.sample
                )));
            }
        }
        outcomes.insert((r.sample, lo, hi), lo_wins);
    }
    let expected = samples * models * (models - 1) / 2;
    if outcomes.len() != expected {
        return Err(Error::Validation(format!(
            "judgments cover {} of {expected} (sample, model pair) combinations",
            outcomes.len()
        )));
    }
    let mut wins = vec![0usize; models];
    for (&(_, lo, hi), &lo_wins) in &outcomes {
        wins[if lo_wins { lo } else { hi }] += 1;
    }
    let denom = (models * samples) as f64;
    Ok(wins.into_iter().map(|w| w as f64 / denom).collect())
}

/// Visual realism score per model.
pub fn vr_aggregate(records: &[JudgmentRecord], models: usize, samples: usize) -> Result<Vec<f64>> {
    aggregate(records, models, samples, |r| r.realism)
}

/// Semantic consistency score per model.
pub fn sc_aggregate(records: &[JudgmentRecord], models: usize, samples: usize) -> Result<Vec<f64>> {
    aggregate(records, models, samples, |r| r.consistency)
}
