//! Forward implementations. Each operation validates shapes, computes its
//! value, and records itself for the backward pass. Hot loops run over
//! contiguous last-axis lanes.

use super::*;

/// 2-D matrix product into a zeroed output, `out += A·B`, with contiguous
/// row arithmetic.
pub(crate) fn matmul_block<R: Real>(
    a: &[R],
    b: &[R],
    out: &mut [R],
    m: usize,
    k: usize,
    p: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let o_row = &mut out[i * p..(i + 1) * p];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == R::zero() {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in o_row.iter_mut().zip(b_row.iter()) {
                *o = *o + av * bv;
            }
        }
    }
}

impl<R: Real> Tape<R> {
    /// Matrix product over the trailing two axes. Batch prefixes must be
    /// identical, or one operand may be rank 2 and is then shared across
    /// the other's batch.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || TensorError::DimMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, ka) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if ka != kb {
            return Err(err());
        }
        let batch_a = &sa[..sa.len() - 2];
        let batch_b = &sb[..sb.len() - 2];
        let out_batch: Vec<usize> = if batch_a == batch_b {
            batch_a.to_vec()
        } else if batch_b.is_empty() {
            batch_a.to_vec()
        } else if batch_a.is_empty() {
            batch_b.to_vec()
        } else {
            return Err(err());
        };
        let batches = numel(&out_batch);
        let mut out_shape = out_batch;
        out_shape.push(m);
        out_shape.push(p);

        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        // A rank-2 operand is shared across the other side's batch.
        let step_a = if sa.len() > 2 { m * ka } else { 0 };
        let step_b = if sb.len() > 2 { ka * p } else { 0 };

        let mut out = vec![R::zero(); batches * m * p];
        for t in 0..batches {
            matmul_block(
                &da[t * step_a..t * step_a + m * ka],
                &db[t * step_b..t * step_b + ka * p],
                &mut out[t * m * p..(t + 1) * m * p],
                m,
                ka,
                p,
            );
        }
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(out_shape, out, rg, Op::Matmul { a, b }, "matmul"))
    }

    /// Reinterpret `x` with a new shape of identical element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId, TensorError> {
        if numel(shape) != self.nodes[x.0].data.len() {
            return Err(TensorError::DataLength {
                op: "reshape",
                got: self.nodes[x.0].data.len(),
                shape: shape.to_vec(),
            });
        }
        let data = self.nodes[x.0].data.clone();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape.to_vec(), data, rg, Op::Reshape { x }, "reshape"))
    }

    /// 2-D transpose.
    pub fn transpose2(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::DimMismatch {
                op: "transpose2",
                lhs: s,
                rhs: vec![],
            });
        }
        let (r, c) = (s[0], s[1]);
        let d = &self.nodes[x.0].data;
        let mut out = vec![R::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(vec![c, r], out, rg, Op::Transpose2 { x }, "transpose2"))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[TensorId], axis: usize) -> Result<TensorId, TensorError> {
        if xs.is_empty() {
            return Err(TensorError::EmptyAxis { op: "concat", axis });
        }
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank: first.len(),
            });
        }
        let mut axis_total = 0usize;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(TensorError::DimMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();

        let mut out = vec![R::zero(); numel(&out_shape)];
        let mut offset = 0usize;
        for &x in xs {
            let len = self.shape(x)[axis];
            let d = &self.nodes[x.0].data;
            for o in 0..outer {
                let src = o * len * inner;
                let dst = o * axis_total * inner + offset * inner;
                out[dst..dst + len * inner].copy_from_slice(&d[src..src + len * inner]);
            }
            offset += len;
        }
        let rg = self.any_requires(xs);
        Ok(self.push(
            out_shape,
            out,
            rg,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            "concat",
        ))
    }

    /// Row gather: `x` is [N, C], `idx` is rows*k indices into [0, N);
    /// the result is [rows, k, C]. Backward scatter-adds into `x`.
    pub fn gather_rows(
        &mut self,
        x: TensorId,
        idx: &[u32],
        k: usize,
    ) -> Result<TensorId, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::DimMismatch {
                op: "gather_rows",
                lhs: s,
                rhs: vec![],
            });
        }
        let (n, c) = (s[0], s[1]);
        debug_assert!(k > 0 && idx.len() % k == 0);
        let rows = idx.len() / k;
        for (flat, &i) in idx.iter().enumerate() {
            if i as usize >= n {
                return Err(TensorError::IndexOutOfRange {
                    row: flat / k,
                    col: flat % k,
                    index: i as usize,
                    bound: n,
                });
            }
        }
        let d = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(rows * k * c);
        for &i in idx {
            let src = i as usize * c;
            out.extend_from_slice(&d[src..src + c]);
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            vec![rows, k, c],
            out,
            rg,
            Op::Gather {
                x,
                idx: idx.to_vec(),
            },
            "gather_rows",
        ))
    }

    fn check_axis(&self, op: &'static str, x: TensorId, axis: usize) -> Result<(), TensorError> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(TensorError::InvalidAxis {
                op,
                axis,
                rank: s.len(),
            });
        }
        if s[axis] == 0 {
            return Err(TensorError::EmptyAxis { op, axis });
        }
        Ok(())
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        self.check_axis("softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let lanes = axis_lanes(&shape, axis);
        let d = &self.nodes[x.0].data;
        let mut out = vec![R::zero(); d.len()];
        // Blocked over `inner`: each outer block is `len` contiguous rows
        // of `inner` values reduced in parallel.
        let mut mx = vec![R::zero(); lanes.inner];
        let mut sum = vec![R::zero(); lanes.inner];
        for o in 0..lanes.outer {
            let base = o * lanes.len * lanes.inner;
            mx.copy_from_slice(&d[base..base + lanes.inner]);
            for k in 1..lanes.len {
                let row = &d[base + k * lanes.inner..base + (k + 1) * lanes.inner];
                for (m, &v) in mx.iter_mut().zip(row.iter()) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
            sum.iter_mut().for_each(|s| *s = R::zero());
            for k in 0..lanes.len {
                let at = base + k * lanes.inner;
                let row = &d[at..at + lanes.inner];
                let orow = &mut out[at..at + lanes.inner];
                for ((o, &v), (&m, s)) in orow
                    .iter_mut()
                    .zip(row.iter())
                    .zip(mx.iter().zip(sum.iter_mut()))
                {
                    let e = (v - m).exp();
                    *o = e;
                    *s = *s + e;
                }
            }
            for k in 0..lanes.len {
                let at = base + k * lanes.inner;
                let orow = &mut out[at..at + lanes.inner];
                for (o, &s) in orow.iter_mut().zip(sum.iter()) {
                    *o = *o / s;
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, out, rg, Op::Softmax { x, axis }, "softmax"))
    }

    /// log(softmax(x)) computed directly via log-sum-exp.
    pub fn log_softmax(&mut self, x: TensorId, axis: usize) -> Result<TensorId, TensorError> {
        self.check_axis("log_softmax", x, axis)?;
        let shape = self.shape(x).to_vec();
        let lanes = axis_lanes(&shape, axis);
        let d = &self.nodes[x.0].data;
        let mut out = vec![R::zero(); d.len()];
        let mut mx = vec![R::zero(); lanes.inner];
        let mut lse = vec![R::zero(); lanes.inner];
        for o in 0..lanes.outer {
            let base = o * lanes.len * lanes.inner;
            mx.copy_from_slice(&d[base..base + lanes.inner]);
            for k in 1..lanes.len {
                let row = &d[base + k * lanes.inner..base + (k + 1) * lanes.inner];
                for (m, &v) in mx.iter_mut().zip(row.iter()) {
                    if v > *m {
                        *m = v;
                    }
                }
            }
            lse.iter_mut().for_each(|s| *s = R::zero());
            for k in 0..lanes.len {
                let row = &d[base + k * lanes.inner..base + (k + 1) * lanes.inner];
                for ((s, &v), &m) in lse.iter_mut().zip(row.iter()).zip(mx.iter()) {
                    *s = *s + (v - m).exp();
                }
            }
            for (s, &m) in lse.iter_mut().zip(mx.iter()) {
                *s = m + s.ln();
            }
            for k in 0..lanes.len {
                let at = base + k * lanes.inner;
                let row = &d[at..at + lanes.inner];
                let orow = &mut out[at..at + lanes.inner];
                for ((o, &v), &l) in orow.iter_mut().zip(row.iter()).zip(lse.iter()) {
                    *o = v - l;
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, out, rg, Op::LogSoftmax { x, axis }, "log_softmax"))
    }

    /// Reduce along `axis`, removing it from the shape. Max routes its
    /// gradient to the first maximal element of each lane.
    pub fn reduce(
        &mut self,
        x: TensorId,
        axis: usize,
        mode: ReduceMode,
    ) -> Result<TensorId, TensorError> {
        self.check_axis("reduce", x, axis)?;
        let shape = self.shape(x).to_vec();
        let lanes = axis_lanes(&shape, axis);
        let d = &self.nodes[x.0].data;
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let mut out = vec![R::zero(); lanes.outer * lanes.inner];
        let mut argmax = Vec::new();
        match mode {
            ReduceMode::Sum | ReduceMode::Mean => {
                for o in 0..lanes.outer {
                    let base = o * lanes.len * lanes.inner;
                    let acc = &mut out[o * lanes.inner..(o + 1) * lanes.inner];
                    for k in 0..lanes.len {
                        let row = &d[base + k * lanes.inner..base + (k + 1) * lanes.inner];
                        for (a, &v) in acc.iter_mut().zip(row.iter()) {
                            *a = *a + v;
                        }
                    }
                }
                if mode == ReduceMode::Mean {
                    let inv = R::of(lanes.len as f64).recip();
                    for v in &mut out {
                        *v = *v * inv;
                    }
                }
            }
            ReduceMode::Max => {
                argmax = vec![0u32; lanes.outer * lanes.inner];
                for o in 0..lanes.outer {
                    let base = o * lanes.len * lanes.inner;
                    let acc = &mut out[o * lanes.inner..(o + 1) * lanes.inner];
                    acc.copy_from_slice(&d[base..base + lanes.inner]);
                    let args = &mut argmax[o * lanes.inner..(o + 1) * lanes.inner];
                    for (i, a) in args.iter_mut().enumerate() {
                        *a = (base + i) as u32;
                    }
                    for k in 1..lanes.len {
                        let at = base + k * lanes.inner;
                        let row = &d[at..at + lanes.inner];
                        for (i, (a, &v)) in acc.iter_mut().zip(row.iter()).enumerate() {
                            if v > *a {
                                *a = v;
                                args[i] = (at + i) as u32;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            out_shape,
            out,
            rg,
            Op::Reduce {
                x,
                axis,
                mode,
                argmax,
            },
            "reduce",
        ))
    }

    /// Reduce every element to a single scalar of shape [1].
    pub fn reduce_all(&mut self, x: TensorId, mode: ReduceMode) -> Result<TensorId, TensorError> {
        let flat_len = self.nodes[x.0].data.len();
        let flat = self.reshape(x, &[flat_len])?;
        self.reduce(flat, 0, mode)
            .and_then(|r| self.reshape(r, &[1]))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(R, R) -> R,
        make: impl FnOnce(TensorId, TensorId) -> Op<R>,
    ) -> Result<TensorId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| TensorError::DimMismatch {
            op,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let da = &self.nodes[a.0].data;
        let db = &self.nodes[b.0].data;
        let out = if sa == sb {
            da.iter().zip(db.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let stra = broadcast_strides(&sa, &out_shape);
            let strb = broadcast_strides(&sb, &out_shape);
            let mut out = vec![R::zero(); numel(&out_shape)];
            for_each_lane(&out_shape, &stra, &strb, |o, ia, ib, len, step_a, step_b| {
                let orow = &mut out[o..o + len];
                match (step_a, step_b) {
                    (1, 1) => {
                        let ar = &da[ia..ia + len];
                        let br = &db[ib..ib + len];
                        for ((o, &x), &y) in orow.iter_mut().zip(ar).zip(br) {
                            *o = f(x, y);
                        }
                    }
                    (1, 0) => {
                        let ar = &da[ia..ia + len];
                        let y = db[ib];
                        for (o, &x) in orow.iter_mut().zip(ar) {
                            *o = f(x, y);
                        }
                    }
                    (0, 1) => {
                        let x = da[ia];
                        let br = &db[ib..ib + len];
                        for (o, &y) in orow.iter_mut().zip(br) {
                            *o = f(x, y);
                        }
                    }
                    _ => {
                        let v = f(da[ia], db[ib]);
                        orow.iter_mut().for_each(|o| *o = v);
                    }
                }
            });
            out
        };
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(out_shape, out, rg, make(a, b), op))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    /// Elementwise difference with broadcasting.
    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// Multiply by a compile-time constant scalar.
    pub fn scale(&mut self, x: TensorId, c: R) -> Result<TensorId, TensorError> {
        let data: Vec<R> = self.nodes[x.0].data.iter().map(|v| *v * c).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, data, rg, Op::Scale { x, c }, "scale"))
    }

    /// Elementwise product with a fixed mask of the same length
    /// (no gradient into the mask).
    pub fn mul_const(&mut self, x: TensorId, mask: Vec<R>) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        if mask.len() != self.nodes[x.0].data.len() {
            return Err(TensorError::DataLength {
                op: "mul_const",
                got: mask.len(),
                shape,
            });
        }
        let data: Vec<R> = self.nodes[x.0]
            .data
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| *v * *m)
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, data, rg, Op::MulConst { x, mask }, "mul_const"))
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: R) -> Result<TensorId, TensorError> {
        let data: Vec<R> = self.nodes[x.0]
            .data
            .iter()
            .map(|v| if *v >= R::zero() { *v } else { *v * slope })
            .collect();
        let shape = self.shape(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, data, rg, Op::LeakyRelu { x, slope }, "leaky_relu"))
    }

    pub fn abs(&mut self, x: TensorId) -> Result<TensorId, TensorError> {
        let data: Vec<R> = self.nodes[x.0].data.iter().map(|v| v.abs()).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape, data, rg, Op::Abs { x }, "abs"))
    }

    /// Broadcast `x` up to `shape` (standard right-aligned rules).
    /// Backward sums over the expanded extents.
    pub fn broadcast_to(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId, TensorError> {
        let sx = self.shape(x).to_vec();
        let ok = broadcast_shape(&sx, shape).map(|s| s == shape) == Some(true);
        if !ok {
            return Err(TensorError::DimMismatch {
                op: "broadcast_to",
                lhs: sx,
                rhs: shape.to_vec(),
            });
        }
        let strx = broadcast_strides(&sx, shape);
        let zero = vec![0usize; shape.len()];
        let mut out = vec![R::zero(); numel(shape)];
        {
            let d = &self.nodes[x.0].data;
            for_each_lane(shape, &strx, &zero, |o, ix, _, len, step_x, _| {
                let orow = &mut out[o..o + len];
                if step_x == 1 {
                    orow.copy_from_slice(&d[ix..ix + len]);
                } else {
                    orow.iter_mut().for_each(|v| *v = d[ix]);
                }
            });
        }
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(shape.to_vec(), out, rg, Op::Broadcast { x }, "broadcast_to"))
    }

    /// Batch normalization over the last axis, using batch statistics.
    /// Returns (output, batch_mean, batch_var); the caller owns any running
    /// average bookkeeping. Variance is the biased (1/M) estimate.
    pub fn batch_norm_train(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: R,
    ) -> Result<(TensorId, Vec<R>, Vec<R>), TensorError> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "batch_norm",
            axis: 0,
            rank: 0,
        })?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::DimMismatch {
                op: "batch_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = numel(&shape) / c;
        let d = &self.nodes[x.0].data;
        let m = R::of(rows as f64);
        let mut mean = vec![R::zero(); c];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            for (acc, &v) in mean.iter_mut().zip(row.iter()) {
                *acc = *acc + v;
            }
        }
        for v in &mut mean {
            *v = *v / m;
        }
        let mut var = vec![R::zero(); c];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            for ((acc, &v), &mu) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                let dv = v - mu;
                *acc = *acc + dv * dv;
            }
        }
        for v in &mut var {
            *v = *v / m;
        }
        let inv_std: Vec<R> = var.iter().map(|v| (*v + eps).sqrt().recip()).collect();
        let mut xhat = vec![R::zero(); d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let xrow = &mut xhat[r * c..(r + 1) * c];
            for (((xh, &v), &mu), &is) in
                xrow.iter_mut().zip(row.iter()).zip(mean.iter()).zip(inv_std.iter())
            {
                *xh = (v - mu) * is;
            }
        }
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut out = vec![R::zero(); d.len()];
        for r in 0..rows {
            let xrow = &xhat[r * c..(r + 1) * c];
            let orow = &mut out[r * c..(r + 1) * c];
            for (((o, &xh), &gv), &bv) in orow.iter_mut().zip(xrow.iter()).zip(g.iter()).zip(b.iter())
            {
                *o = xh * gv + bv;
            }
        }
        let rg = self.any_requires(&[x, gamma, beta]);
        let id = self.push(
            shape,
            out,
            rg,
            Op::BnTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "batch_norm",
        );
        Ok((id, mean, var))
    }

    /// Layer normalization: each row (the last axis) is standardized by
    /// its own mean and biased variance, then scaled and shifted. No
    /// state crosses rows, so train and eval behave identically.
    pub fn layer_norm(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: R,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(TensorError::DimMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let rows = numel(&shape) / c;
        let d = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let cn = R::of(c as f64);
        let mut xhat = vec![R::zero(); d.len()];
        let mut inv_std = vec![R::zero(); rows];
        let mut out = vec![R::zero(); d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let mut mean = R::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean / cn;
            let mut var = R::zero();
            for &v in row {
                let dv = v - mean;
                var = var + dv * dv;
            }
            var = var / cn;
            let is = (var + eps).sqrt().recip();
            inv_std[r] = is;
            let xrow = &mut xhat[r * c..(r + 1) * c];
            let orow = &mut out[r * c..(r + 1) * c];
            for i in 0..c {
                let xh = (row[i] - mean) * is;
                xrow[i] = xh;
                orow[i] = xh * g[i] + b[i];
            }
        }
        let rg = self.any_requires(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        ))
    }

    /// Batch normalization over the last axis using fixed (running)
    /// statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: &[R],
        var: &[R],
        eps: R,
    ) -> Result<TensorId, TensorError> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or(TensorError::InvalidAxis {
            op: "batch_norm",
            axis: 0,
            rank: 0,
        })?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mean.len() != c || var.len() != c
        {
            return Err(TensorError::DimMismatch {
                op: "batch_norm",
                lhs: shape,
                rhs: vec![mean.len(), var.len()],
            });
        }
        let rows = numel(&shape) / c;
        let inv_std: Vec<R> = var.iter().map(|v| (*v + eps).sqrt().recip()).collect();
        let d = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut xhat = vec![R::zero(); d.len()];
        let mut out = vec![R::zero(); d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let xrow = &mut xhat[r * c..(r + 1) * c];
            let orow = &mut out[r * c..(r + 1) * c];
            for i in 0..c {
                let xh = (row[i] - mean[i]) * inv_std[i];
                xrow[i] = xh;
                orow[i] = xh * g[i] + b[i];
            }
        }
        let rg = self.any_requires(&[x, gamma, beta]);
        Ok(self.push(
            shape,
            out,
            rg,
            Op::BnEval {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            },
            "batch_norm",
        ))
    }

    /// out[i] = x[i, labels[i]] for x of shape [N, C].
    pub fn select_class(&mut self, x: TensorId, labels: &[u32]) -> Result<TensorId, TensorError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::DimMismatch {
                op: "select_class",
                lhs: s,
                rhs: vec![labels.len()],
            });
        }
        let (n, c) = (s[0], s[1]);
        for (row, &l) in labels.iter().enumerate() {
            if l as usize >= c {
                return Err(TensorError::LabelOutOfRange {
                    row,
                    label: l as usize,
                    classes: c,
                });
            }
        }
        let d = &self.nodes[x.0].data;
        let out: Vec<R> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| d[i * c + l as usize])
            .collect();
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(
            vec![n],
            out,
            rg,
            Op::SelectClass {
                x,
                labels: labels.to_vec(),
            },
            "select_class",
        ))
    }
}
