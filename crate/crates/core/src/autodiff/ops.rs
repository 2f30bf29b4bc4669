use super::{attention, conv, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;

fn require_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::dim(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `out += a · b` for row-major `a: m×k`, `b: k×n`.
///
/// Each output row depends only on its own row of `a`, with the same
/// accumulation order regardless of `m`.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

impl Tape {
    fn zip_with(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        require_same_shape(name, va, vb)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    fn map(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let vx = self.value(x);
        let data = vx.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(name, value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.map("scale", x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let (_, cols) = vx.rows_cols();
        if vb.numel() != cols {
            return Err(Error::dim(
                "add_bias",
                format!("bias of {} for last axis {cols}", vb.numel()),
            ));
        }
        let mut data = vx.data().to_vec();
        for row in data.chunks_mut(cols) {
            for (v, b) in row.iter_mut().zip(vb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), data)?;
        self.push("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map("sigmoid", x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_matrix("matmul", self.value(a))?;
        let (k2, n) = require_matrix("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new([m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = require_matrix("transpose", self.value(x))?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new([c, r], out)?;
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    /// Row-wise softmax restricted to `mask == true`; masked entries are 0.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let v = self.value(logits);
        let (rows, cols) = require_matrix("masked_softmax", v)?;
        if mask.len() != rows * cols {
            return Err(Error::dim(
                "masked_softmax",
                format!("mask of {} for {rows}x{cols}", mask.len()),
            ));
        }
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let m = &mask[r * cols..(r + 1) * cols];
            let x = &v.data()[r * cols..(r + 1) * cols];
            let max = x
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&xv, _)| xv)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!(
                    "masked_softmax: row {r} has no attendable entry"
                )));
            }
            let o = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for ((ov, &xv), &keep) in o.iter_mut().zip(x).zip(m) {
                if keep {
                    *ov = (xv - max).exp();
                    total += *ov;
                }
            }
            o.iter_mut().for_each(|ov| *ov /= total);
        }
        let value = Tensor::new([rows, cols], out)?;
        self.push("masked_softmax", value, Op::MaskedSoftmax(logits), &[logits])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (rows, cols) = require_matrix("cross_entropy", v)?;
        if targets.len() != rows {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= cols) {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: bad,
                bound: cols,
            });
        }
        let mut probs = v.data().to_vec();
        let mut loss = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            let x = &v.data()[r * cols..(r + 1) * cols];
            let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + x.iter().map(|&xv| (xv - max).exp()).sum::<f64>().ln();
            loss += lse - x[target];
            softmax_in_place(&mut probs[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::scalar(loss / rows as f64);
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            probs,
        };
        self.push("cross_entropy", value, op, &[logits])
    }

    /// Sum of squared entries.
    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push("sum_sq", Tensor::scalar(s), Op::SumSq(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.sum() / v.numel() as f64;
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean squared error between two same-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let d = self.sub(a, b)?;
        let s = self.sum_sq(d)?;
        self.scale(s, 1.0 / n)
    }

    /// Gathers rows of a `[rows, dim]` table; the backward pass scatter-adds.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, dim) = require_matrix("gather_rows", t)?;
        if indices.is_empty() {
            return Err(Error::dim("gather_rows", "no indices"));
        }
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= rows {
                return Err(Error::Index {
                    what: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::new([indices.len(), dim], out)?;
        let op = Op::Gather {
            table,
            indices: indices.to_vec(),
        };
        self.push("gather_rows", value, op, &[table])
    }

    /// Normalizes each row of a matrix to zero mean and unit variance, then
    /// applies an elementwise gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = require_matrix("layer_norm", v)?;
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(Error::dim("layer_norm", "gain/bias extent"));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = v.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let n = (row[c] - mean) * is;
                normalized[r * cols + c] = n;
                out[r * cols + c] = n * g[c] + b[c];
            }
        }
        let value = Tensor::new([rows, cols], out)?;
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            normalized,
            inv_std,
        };
        self.push("layer_norm", value, op, &[x, gain, bias])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let (_, cols) = require_matrix("concat_rows", self.value(*first))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = require_matrix("concat_rows", self.value(p))?;
            if c != cols {
                return Err(Error::dim("concat_rows", format!("{c} vs {cols} columns")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new([rows, cols], data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = require_matrix("slice_rows", self.value(x))?;
        if len == 0 || start + len > rows {
            return Err(Error::dim("slice_rows", format!("{start}+{len} of {rows}")));
        }
        let data = self.value(x).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new([len, cols], data)?;
        self.push("slice_rows", value, Op::SliceRows { x, start }, &[x])
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let (rows, _) = require_matrix("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_matrix("concat_cols", self.value(p))?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("{r} vs {rows} rows")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new([rows, total], data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = require_matrix("slice_cols", self.value(x))?;
        if len == 0 || start + len > cols {
            return Err(Error::dim("slice_cols", format!("{start}+{len} of {cols}")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src.row(r)[start..start + len]);
        }
        let value = Tensor::new([rows, len], data)?;
        self.push("slice_cols", value, Op::SliceCols { x, start }, &[x])
    }

    pub(super) fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let mut neg = g.clone();
                neg.scale_assign(-1.0);
                self.accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if let Some(slot) = self.grad_slot(grads, *a) {
                    for ((s, gv), bv) in slot.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *s += gv * bv;
                    }
                }
                if let Some(slot) = self.grad_slot(grads, *b) {
                    for ((s, gv), av) in slot.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *s += gv * av;
                    }
                }
            }
            Op::Scale(x, f) => {
                let mut d = g.clone();
                d.scale_assign(*f);
                self.accumulate(grads, *x, d);
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if let Some(slot) = self.grad_slot(grads, *bias) {
                    let cols = slot.numel();
                    for row in g.data().chunks(cols) {
                        for (s, gv) in slot.data_mut().iter_mut().zip(row) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                if let Some(slot) = self.grad_slot(grads, *x) {
                    for ((s, gv), xv) in slot.data_mut().iter_mut().zip(g.data()).zip(vx.data()) {
                        if *xv > 0.0 {
                            *s += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                if let Some(slot) = self.grad_slot(grads, *x) {
                    for ((s, gv), yv) in slot.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *s += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if let Some(slot) = self.grad_slot(grads, *a) {
                    // dA = dC · Bᵀ
                    let da = slot.data_mut();
                    for r in 0..m {
                        let gr = &g.data()[r * n..(r + 1) * n];
                        for kk in 0..k {
                            da[r * k + kk] += dot(gr, &vb.data()[kk * n..(kk + 1) * n]);
                        }
                    }
                }
                if let Some(slot) = self.grad_slot(grads, *b) {
                    // dB = Aᵀ · dC
                    let db = slot.data_mut();
                    for r in 0..m {
                        let gr = &g.data()[r * n..(r + 1) * n];
                        for kk in 0..k {
                            let av = va.data()[r * k + kk];
                            if av == 0.0 {
                                continue;
                            }
                            for (d, gv) in db[kk * n..(kk + 1) * n].iter_mut().zip(gr) {
                                *d += av * gv;
                            }
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(slot) = self.grad_slot(grads, *x) {
                    let d = slot.data_mut();
                    for i in 0..r {
                        for j in 0..c {
                            d[j * r + i] += g.data()[i * c + j];
                        }
                    }
                }
            }
            Op::MaskedSoftmax(x) => {
                let y = &node.value;
                let (_, cols) = y.rows_cols();
                if let Some(slot) = self.grad_slot(grads, *x) {
                    let d = slot.data_mut();
                    for (r, (yr, gr)) in y.data().chunks(cols).zip(g.data().chunks(cols)).enumerate() {
                        let inner = dot(yr, gr);
                        for c in 0..cols {
                            d[r * cols + c] += yr[c] * (gr[c] - inner);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let cols = self.value(*logits).shape()[1];
                let scale = g.item() / targets.len() as f64;
                if let Some(slot) = self.grad_slot(grads, *logits) {
                    let d = slot.data_mut();
                    for (r, &t) in targets.iter().enumerate() {
                        for c in 0..cols {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            d[r * cols + c] += scale * (probs[r * cols + c] - onehot);
                        }
                    }
                }
            }
            Op::SumSq(x) => {
                let gv = g.item();
                let vx = self.value(*x);
                if let Some(slot) = self.grad_slot(grads, *x) {
                    for (s, xv) in slot.data_mut().iter_mut().zip(vx.data()) {
                        *s += 2.0 * xv * gv;
                    }
                }
            }
            Op::Sum(x) | Op::Mean(x) => {
                let mut gv = g.item();
                if matches!(node.op, Op::Mean(_)) {
                    gv /= self.value(*x).numel() as f64;
                }
                if let Some(slot) = self.grad_slot(grads, *x) {
                    slot.data_mut().iter_mut().for_each(|s| *s += gv);
                }
            }
            Op::Gather { table, indices } => {
                if let Some(slot) = self.grad_slot(grads, *table) {
                    let dim = slot.shape()[1];
                    let d = slot.data_mut();
                    for (r, &idx) in indices.iter().enumerate() {
                        for (s, gv) in d[idx * dim..(idx + 1) * dim].iter_mut().zip(g.row(r)) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let cols = self.value(*gain).numel();
                let gain_v = self.value(*gain).data();
                if let Some(slot) = self.grad_slot(grads, *gain) {
                    for (gr, nr) in g.data().chunks(cols).zip(normalized.chunks(cols)) {
                        for ((s, gv), nv) in slot.data_mut().iter_mut().zip(gr).zip(nr) {
                            *s += gv * nv;
                        }
                    }
                }
                if let Some(slot) = self.grad_slot(grads, *bias) {
                    for gr in g.data().chunks(cols) {
                        for (s, gv) in slot.data_mut().iter_mut().zip(gr) {
                            *s += gv;
                        }
                    }
                }
                if let Some(slot) = self.grad_slot(grads, *x) {
                    let d = slot.data_mut();
                    let n = cols as f64;
                    let mut dn = vec![0.0; cols];
                    for (r, (gr, nr)) in g.data().chunks(cols).zip(normalized.chunks(cols)).enumerate() {
                        for c in 0..cols {
                            dn[c] = gr[c] * gain_v[c];
                        }
                        let mean_dn = dn.iter().sum::<f64>() / n;
                        let mean_dn_n = dot(&dn, nr) / n;
                        for c in 0..cols {
                            d[r * cols + c] += inv_std[r] * (dn[c] - mean_dn - nr[c] * mean_dn_n);
                        }
                    }
                }
            }
            Op::Conv2d { x, kernel, geom } => {
                conv::conv2d_backward(self, grads, *x, *kernel, geom, g);
            }
            Op::ConvTranspose2d { x, kernel, geom } => {
                conv::conv_transpose2d_backward(self, grads, *x, *kernel, geom, g);
            }
            Op::Reshape(x) => {
                let shape = self.shape(*x).to_vec();
                let d = g.clone().reshape(shape).expect("reshape backward");
                self.accumulate(grads, *x, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if let Some(slot) = self.grad_slot(grads, p) {
                        for (s, gv) in slot.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *s += gv;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let cols = g.shape()[1];
                if let Some(slot) = self.grad_slot(grads, *x) {
                    let d = &mut slot.data_mut()[start * cols..start * cols + g.numel()];
                    for (s, gv) in d.iter_mut().zip(g.data()) {
                        *s += gv;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if let Some(slot) = self.grad_slot(grads, p) {
                        for (r, srow) in slot.data_mut().chunks_mut(w).enumerate() {
                            let grow = &g.data()[r * total + offset..r * total + offset + w];
                            for (s, gv) in srow.iter_mut().zip(grow) {
                                *s += gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let len = g.shape()[1];
                let cols = self.shape(*x)[1];
                if let Some(slot) = self.grad_slot(grads, *x) {
                    for (r, grow) in g.data().chunks(len).enumerate() {
                        let srow = &mut slot.data_mut()[r * cols + start..r * cols + start + len];
                        for (s, gv) in srow.iter_mut().zip(grow) {
                            *s += gv;
                        }
                    }
                }
            }
            Op::SparseAttention(cache) => attention::backward(self, grads, cache, g),
        }
    }
}
