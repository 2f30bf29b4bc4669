//! Fused multi-head attention over explicit per-query key lists.
//!
//! Each query only touches the key rows named in its list, so the cost is
//! proportional to the total number of attended pairs rather than to
//! `queries × keys`.

use std::sync::Arc;

use super::{ops::dot, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-query lists of key/value row indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionKeys {
    lists: Vec<Vec<usize>>,
}

impl AttentionKeys {
    pub fn new(lists: Vec<Vec<usize>>) -> Self {
        Self { lists }
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn keys(&self, query: usize) -> &[usize] {
        &self.lists[query]
    }

    pub fn total_pairs(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.lists.iter().map(Vec::as_slice)
    }
}

#[derive(Debug)]
pub(super) struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    keys: Arc<AttentionKeys>,
    /// Probabilities laid out query-major, then head, then key.
    probs: Vec<f64>,
    offsets: Vec<usize>,
}

impl Tape {
    /// Multi-head scaled dot-product attention where query `i` attends only
    /// to the rows `keys.keys(i)` of `k` and `v`.
    ///
    /// `q` is `[queries, d]`, `k` and `v` are `[rows, d]`; `d` must divide
    /// evenly into `heads`.
    pub fn sparse_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        keys: Arc<AttentionKeys>,
        heads: usize,
    ) -> Result<Var> {
        let (vq, vk, vv) = (self.value(q), self.value(k), self.value(v));
        if vq.rank() != 2 || vk.rank() != 2 || vv.rank() != 2 {
            return Err(Error::dim("sparse_attention", "q, k, v must be matrices"));
        }
        let (nq, d) = (vq.shape()[0], vq.shape()[1]);
        let nk = vk.shape()[0];
        if vk.shape() != vv.shape() || vk.shape()[1] != d {
            return Err(Error::dim(
                "sparse_attention",
                format!("q {:?}, k {:?}, v {:?}", vq.shape(), vk.shape(), vv.shape()),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::dim("sparse_attention", format!("{d} not divisible by {heads} heads")));
        }
        if keys.len() != nq {
            return Err(Error::dim(
                "sparse_attention",
                format!("{} key lists for {nq} queries", keys.len()),
            ));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut offsets = Vec::with_capacity(nq + 1);
        offsets.push(0);
        for (i, list) in keys.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Contract(format!("query {i} has no attendable keys")));
            }
            if let Some(&bad) = list.iter().find(|&&j| j >= nk) {
                return Err(Error::Index {
                    what: "attention key",
                    index: bad,
                    bound: nk,
                });
            }
            offsets.push(offsets[i] + list.len() * heads);
        }
        let mut probs = vec![0.0; offsets[nq]];
        let mut out = vec![0.0; nq * d];
        for (i, list) in keys.iter().enumerate() {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qrow = &vq.row(i)[cols.clone()];
                let p = &mut probs[offsets[i] + h * list.len()..offsets[i] + (h + 1) * list.len()];
                for (pj, &j) in p.iter_mut().zip(list) {
                    *pj = dot(qrow, &vk.row(j)[cols.clone()]) * scale;
                }
                let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for pj in p.iter_mut() {
                    *pj = (*pj - max).exp();
                    total += *pj;
                }
                let orow = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
                for (pj, &j) in p.iter_mut().zip(list) {
                    *pj /= total;
                    for (o, vval) in orow.iter_mut().zip(&vv.row(j)[cols.clone()]) {
                        *o += *pj * vval;
                    }
                }
            }
        }
        let value = Tensor::new([nq, d], out)?;
        let cache = AttentionCache {
            q,
            k,
            v,
            heads,
            keys,
            probs,
            offsets,
        };
        self.push("sparse_attention", value, Op::SparseAttention(Box::new(cache)), &[q, k, v])
    }
}

pub(super) fn backward(tape: &Tape, grads: &mut [Option<Tensor>], c: &AttentionCache, g: &Tensor) {
    let (vq, vk, vv) = (tape.value(c.q), tape.value(c.k), tape.value(c.v));
    let d = vq.shape()[1];
    let dh = d / c.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(vq.shape().to_vec());
    let mut dk = Tensor::zeros(vk.shape().to_vec());
    let mut dv = Tensor::zeros(vv.shape().to_vec());
    let mut ds = Vec::new();
    for (i, list) in c.keys.iter().enumerate() {
        let grow = g.row(i);
        for h in 0..c.heads {
            let cols = h * dh..(h + 1) * dh;
            let go = &grow[cols.clone()];
            let p = &c.probs[c.offsets[i] + h * list.len()..c.offsets[i] + (h + 1) * list.len()];
            ds.clear();
            ds.extend(list.iter().map(|&j| dot(go, &vv.row(j)[cols.clone()])));
            let inner = dot(p, &ds);
            for ((dsj, &pj), &j) in ds.iter_mut().zip(p).zip(list) {
                *dsj = pj * (*dsj - inner) * scale;
                let dvrow = &mut dv.data_mut()[j * d + h * dh..j * d + (h + 1) * dh];
                for (x, gv) in dvrow.iter_mut().zip(go) {
                    *x += pj * gv;
                }
            }
            let qrow = &vq.row(i)[cols.clone()];
            for (&dsj, &j) in ds.iter().zip(list) {
                let dqrow = &mut dq.data_mut()[i * d + h * dh..i * d + (h + 1) * dh];
                for (x, kv) in dqrow.iter_mut().zip(&vk.row(j)[cols.clone()]) {
                    *x += dsj * kv;
                }
                let dkrow = &mut dk.data_mut()[j * d + h * dh..j * d + (h + 1) * dh];
                for (x, qv) in dkrow.iter_mut().zip(qrow) {
                    *x += dsj * qv;
                }
            }
        }
    }
    tape.accumulate(grads, c.q, dq);
    tape.accumulate(grads, c.k, dk);
    tape.accumulate(grads, c.v, dv);
}
