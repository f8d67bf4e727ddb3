//! Reverse sweep: nodes are revisited in exact reverse execution order and
//! each op scatters its vector-Jacobian product into its inputs.

use super::*;

impl<R: Real> Tape<R> {
    /// Move a freshly built contribution into the accumulator, avoiding a
    /// copy when this is the first gradient reaching the node.
    fn accumulate(&mut self, id: TensorId, contrib: Vec<R>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), self.nodes[id.0].data.len());
        match &mut self.nodes[id.0].grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib.iter()) {
                    *gi = *gi + *ci;
                }
            }
            None => self.nodes[id.0].grad = Some(contrib),
        }
    }

    /// Propagate gradients from a scalar `root` back to every node that
    /// requires them. Gradients accumulate additively when a node feeds
    /// multiple consumers.
    pub fn backward(&mut self, root: TensorId) -> Result<(), TensorError> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: self.shape(root).to_vec(),
            });
        }
        self.nodes[root.0].grad = Some(vec![R::one()]);
        for i in (0..=root.0).rev() {
            if self.nodes[i].grad.is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_op(i, &op);
            self.nodes[i].op = op;
        }
        Ok(())
    }

    fn backward_op(&mut self, out: usize, op: &Op<R>) {
        let dy = match &self.nodes[out].grad {
            Some(g) => g.clone(),
            None => return,
        };
        match op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let p = sb[sb.len() - 1];
                let batches = self.nodes[out].data.len() / (m * p);
                let step_a = if sa.len() > 2 { m * k } else { 0 };
                let step_b = if sb.len() > 2 { k * p } else { 0 };
                let need_a = self.nodes[a.0].requires_grad;
                let need_b = self.nodes[b.0].requires_grad;
                let da = &self.nodes[a.0].data;
                let db = &self.nodes[b.0].data;
                let mut ga = vec![R::zero(); if need_a { da.len() } else { 0 }];
                let mut gb = vec![R::zero(); if need_b { db.len() } else { 0 }];
                for t in 0..batches {
                    let (ab, bb, ob) = (t * step_a, t * step_b, t * m * p);
                    if need_a {
                        // dA[i,kk] = dY[i,:] · B[kk,:]
                        for i in 0..m {
                            let dy_row = &dy[ob + i * p..ob + (i + 1) * p];
                            let ga_row = &mut ga[ab + i * k..ab + (i + 1) * k];
                            for (kk, g) in ga_row.iter_mut().enumerate() {
                                let b_row = &db[bb + kk * p..bb + (kk + 1) * p];
                                let mut acc = R::zero();
                                for (&dv, &bv) in dy_row.iter().zip(b_row.iter()) {
                                    acc = acc + dv * bv;
                                }
                                *g = *g + acc;
                            }
                        }
                    }
                    if need_b {
                        // dB[kk,:] += A[i,kk] · dY[i,:]
                        for i in 0..m {
                            let a_row = &da[ab + i * k..ab + (i + 1) * k];
                            let dy_row = &dy[ob + i * p..ob + (i + 1) * p];
                            for (kk, &av) in a_row.iter().enumerate() {
                                if av == R::zero() {
                                    continue;
                                }
                                let gb_row = &mut gb[bb + kk * p..bb + (kk + 1) * p];
                                for (g, &dv) in gb_row.iter_mut().zip(dy_row.iter()) {
                                    *g = *g + av * dv;
                                }
                            }
                        }
                    }
                }
                if need_a {
                    self.accumulate(*a, ga);
                }
                if need_b {
                    self.accumulate(*b, gb);
                }
            }
            Op::Reshape { x } => {
                self.accumulate(*x, dy);
            }
            Op::Transpose2 { x } => {
                let s = self.shape(*x).to_vec();
                let (r, c) = (s[0], s[1]);
                let mut gx = vec![R::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = dy[j * r + i];
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::Concat { xs, axis } => {
                let out_shape = self.shape(TensorId(out)).to_vec();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total = out_shape[*axis];
                let mut offset = 0usize;
                for &x in xs {
                    let len = self.shape(x)[*axis];
                    let mut gx = vec![R::zero(); len * outer * inner];
                    for o in 0..outer {
                        let src = o * total * inner + offset * inner;
                        let dst = o * len * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&dy[src..src + len * inner]);
                    }
                    self.accumulate(x, gx);
                    offset += len;
                }
            }
            Op::Gather { x, idx } => {
                let c = self.shape(*x)[1];
                let mut gx = vec![R::zero(); self.nodes[x.0].data.len()];
                for (flat, &i) in idx.iter().enumerate() {
                    let dst = &mut gx[i as usize * c..(i as usize + 1) * c];
                    let src = &dy[flat * c..(flat + 1) * c];
                    for (g, &d) in dst.iter_mut().zip(src.iter()) {
                        *g = *g + d;
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::Softmax { x, axis } => {
                let shape = self.shape(TensorId(out)).to_vec();
                let lanes = axis_lanes(&shape, *axis);
                let y = &self.nodes[out].data;
                let mut gx = vec![R::zero(); y.len()];
                let mut dot = vec![R::zero(); lanes.inner];
                for o in 0..lanes.outer {
                    let base = o * lanes.len * lanes.inner;
                    dot.iter_mut().for_each(|v| *v = R::zero());
                    for k in 0..lanes.len {
                        let at = base + k * lanes.inner;
                        let yr = &y[at..at + lanes.inner];
                        let dr = &dy[at..at + lanes.inner];
                        for ((acc, &yv), &dv) in dot.iter_mut().zip(yr.iter()).zip(dr.iter()) {
                            *acc = *acc + yv * dv;
                        }
                    }
                    for k in 0..lanes.len {
                        let at = base + k * lanes.inner;
                        let yr = &y[at..at + lanes.inner];
                        let dr = &dy[at..at + lanes.inner];
                        let gr = &mut gx[at..at + lanes.inner];
                        for (((g, &yv), &dv), &dd) in
                            gr.iter_mut().zip(yr.iter()).zip(dr.iter()).zip(dot.iter())
                        {
                            *g = yv * (dv - dd);
                        }
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::LogSoftmax { x, axis } => {
                let shape = self.shape(TensorId(out)).to_vec();
                let lanes = axis_lanes(&shape, *axis);
                let y = &self.nodes[out].data;
                let mut gx = vec![R::zero(); y.len()];
                let mut sum = vec![R::zero(); lanes.inner];
                for o in 0..lanes.outer {
                    let base = o * lanes.len * lanes.inner;
                    sum.iter_mut().for_each(|v| *v = R::zero());
                    for k in 0..lanes.len {
                        let at = base + k * lanes.inner;
                        let dr = &dy[at..at + lanes.inner];
                        for (acc, &dv) in sum.iter_mut().zip(dr.iter()) {
                            *acc = *acc + dv;
                        }
                    }
                    for k in 0..lanes.len {
                        let at = base + k * lanes.inner;
                        let yr = &y[at..at + lanes.inner];
                        let dr = &dy[at..at + lanes.inner];
                        let gr = &mut gx[at..at + lanes.inner];
                        for (((g, &yv), &dv), &s) in
                            gr.iter_mut().zip(yr.iter()).zip(dr.iter()).zip(sum.iter())
                        {
                            *g = dv - yv.exp() * s;
                        }
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::Reduce {
                x,
                axis,
                mode,
                argmax,
            } => {
                let sx = self.shape(*x).to_vec();
                let lanes = axis_lanes(&sx, *axis);
                let mut gx = vec![R::zero(); self.nodes[x.0].data.len()];
                match mode {
                    ReduceMode::Sum | ReduceMode::Mean => {
                        let inv = if *mode == ReduceMode::Mean {
                            R::of(lanes.len as f64).recip()
                        } else {
                            R::one()
                        };
                        for o in 0..lanes.outer {
                            let base = o * lanes.len * lanes.inner;
                            let dr = &dy[o * lanes.inner..(o + 1) * lanes.inner];
                            for k in 0..lanes.len {
                                let gr = &mut gx[base + k * lanes.inner..base + (k + 1) * lanes.inner];
                                for (g, &dv) in gr.iter_mut().zip(dr.iter()) {
                                    *g = dv * inv;
                                }
                            }
                        }
                    }
                    ReduceMode::Max => {
                        for (oi, &src) in argmax.iter().enumerate() {
                            gx[src as usize] = gx[src as usize] + dy[oi];
                        }
                    }
                }
                self.accumulate(*x, gx);
            }
            Op::Add { a, b } => {
                self.accumulate_unbroadcast(*a, &dy, out, false);
                self.accumulate_unbroadcast(*b, &dy, out, false);
            }
            Op::Sub { a, b } => {
                self.accumulate_unbroadcast(*a, &dy, out, false);
                self.accumulate_unbroadcast(*b, &dy, out, true);
            }
            Op::Mul { a, b } => {
                let out_shape = self.shape(TensorId(out)).to_vec();
                let sa = self.shape(*a).to_vec();
                let sb = self.shape(*b).to_vec();
                let need_a = self.nodes[a.0].requires_grad;
                let need_b = self.nodes[b.0].requires_grad;
                let da = &self.nodes[a.0].data;
                let db = &self.nodes[b.0].data;
                let mut ga = vec![R::zero(); if need_a { da.len() } else { 0 }];
                let mut gb = vec![R::zero(); if need_b { db.len() } else { 0 }];
                if sa == sb {
                    if need_a {
                        for ((g, &dv), &bv) in ga.iter_mut().zip(dy.iter()).zip(db.iter()) {
                            *g = dv * bv;
                        }
                    }
                    if need_b {
                        for ((g, &dv), &av) in gb.iter_mut().zip(dy.iter()).zip(da.iter()) {
                            *g = dv * av;
                        }
                    }
                } else {
                    let stra = broadcast_strides(&sa, &out_shape);
                    let strb = broadcast_strides(&sb, &out_shape);
                    for_each_lane(&out_shape, &stra, &strb, |o, ia, ib, len, step_a, step_b| {
                        let dr = &dy[o..o + len];
                        match (step_a, step_b) {
                            (1, 1) => {
                                for (j, &dv) in dr.iter().enumerate() {
                                    if need_a {
                                        ga[ia + j] = ga[ia + j] + dv * db[ib + j];
                                    }
                                    if need_b {
                                        gb[ib + j] = gb[ib + j] + dv * da[ia + j];
                                    }
                                }
                            }
                            (1, 0) => {
                                let bv = db[ib];
                                if need_a {
                                    let gr = &mut ga[ia..ia + len];
                                    for (g, &dv) in gr.iter_mut().zip(dr.iter()) {
                                        *g = *g + dv * bv;
                                    }
                                }
                                if need_b {
                                    let ar = &da[ia..ia + len];
                                    let mut acc = R::zero();
                                    for (&dv, &av) in dr.iter().zip(ar.iter()) {
                                        acc = acc + dv * av;
                                    }
                                    gb[ib] = gb[ib] + acc;
                                }
                            }
                            (0, 1) => {
                                let av = da[ia];
                                if need_b {
                                    let gr = &mut gb[ib..ib + len];
                                    for (g, &dv) in gr.iter_mut().zip(dr.iter()) {
                                        *g = *g + dv * av;
                                    }
                                }
                                if need_a {
                                    let br = &db[ib..ib + len];
                                    let mut acc = R::zero();
                                    for (&dv, &bv) in dr.iter().zip(br.iter()) {
                                        acc = acc + dv * bv;
                                    }
                                    ga[ia] = ga[ia] + acc;
                                }
                            }
                            _ => {
                                let mut acc = R::zero();
                                for &dv in dr {
                                    acc = acc + dv;
                                }
                                if need_a {
                                    ga[ia] = ga[ia] + acc * db[ib];
                                }
                                if need_b {
                                    gb[ib] = gb[ib] + acc * da[ia];
                                }
                            }
                        }
                    });
                }
                if need_a {
                    self.accumulate(*a, ga);
                }
                if need_b {
                    self.accumulate(*b, gb);
                }
            }
            Op::Scale { x, c } => {
                let gx: Vec<R> = dy.iter().map(|g| *g * *c).collect();
                self.accumulate(*x, gx);
            }
            Op::MulConst { x, mask } => {
                let gx: Vec<R> = dy.iter().zip(mask.iter()).map(|(g, m)| *g * *m).collect();
                self.accumulate(*x, gx);
            }
            Op::LeakyRelu { x, slope } => {
                let d = &self.nodes[x.0].data;
                let gx: Vec<R> = dy
                    .iter()
                    .zip(d.iter())
                    .map(|(g, v)| if *v >= R::zero() { *g } else { *g * *slope })
                    .collect();
                self.accumulate(*x, gx);
            }
            Op::Abs { x } => {
                let d = &self.nodes[x.0].data;
                let gx: Vec<R> = dy
                    .iter()
                    .zip(d.iter())
                    .map(|(g, v)| {
                        if *v > R::zero() {
                            *g
                        } else if *v < R::zero() {
                            -*g
                        } else {
                            R::zero()
                        }
                    })
                    .collect();
                self.accumulate(*x, gx);
            }
            Op::Broadcast { x } => {
                self.accumulate_unbroadcast(*x, &dy, out, false);
            }
            Op::BnTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let m = R::of(rows as f64);
                let g = self.nodes[gamma.0].data.clone();
                // Per-channel sums of dy and dy·x̂.
                let mut sum_dy = vec![R::zero(); c];
                let mut sum_dyx = vec![R::zero(); c];
                for r in 0..rows {
                    let dr = &dy[r * c..(r + 1) * c];
                    let xr = &xhat[r * c..(r + 1) * c];
                    for ((i, &dv), &xv) in dr.iter().enumerate().zip(xr.iter()) {
                        sum_dy[i] = sum_dy[i] + dv;
                        sum_dyx[i] = sum_dyx[i] + dv * xv;
                    }
                }
                let mut gx = vec![R::zero(); xhat.len()];
                for r in 0..rows {
                    let dr = &dy[r * c..(r + 1) * c];
                    let xr = &xhat[r * c..(r + 1) * c];
                    let gr = &mut gx[r * c..(r + 1) * c];
                    for i in 0..c {
                        gr[i] = g[i] * inv_std[i] * (dr[i] - sum_dy[i] / m - xr[i] * sum_dyx[i] / m);
                    }
                }
                self.accumulate(*x, gx);
                self.accumulate(*gamma, sum_dyx);
                self.accumulate(*beta, sum_dy);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let rows = inv_std.len();
                let c = xhat.len() / rows;
                let cn = R::of(c as f64);
                let g = self.nodes[gamma.0].data.clone();
                let mut gx = vec![R::zero(); xhat.len()];
                let mut ggamma = vec![R::zero(); c];
                let mut gbeta = vec![R::zero(); c];
                for r in 0..rows {
                    let dr = &dy[r * c..(r + 1) * c];
                    let xr = &xhat[r * c..(r + 1) * c];
                    // Row-wise means of dŷ and dŷ⊙x̂ where dŷ = dy·γ.
                    let mut mean_dxh = R::zero();
                    let mut mean_dxh_xh = R::zero();
                    for i in 0..c {
                        let dxh = dr[i] * g[i];
                        mean_dxh = mean_dxh + dxh;
                        mean_dxh_xh = mean_dxh_xh + dxh * xr[i];
                        ggamma[i] = ggamma[i] + dr[i] * xr[i];
                        gbeta[i] = gbeta[i] + dr[i];
                    }
                    mean_dxh = mean_dxh / cn;
                    mean_dxh_xh = mean_dxh_xh / cn;
                    let gr = &mut gx[r * c..(r + 1) * c];
                    let is = inv_std[r];
                    for i in 0..c {
                        let dxh = dr[i] * g[i];
                        gr[i] = is * (dxh - mean_dxh - xr[i] * mean_dxh_xh);
                    }
                }
                self.accumulate(*x, gx);
                self.accumulate(*gamma, ggamma);
                self.accumulate(*beta, gbeta);
            }
            Op::BnEval {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                let c = inv_std.len();
                let rows = xhat.len() / c;
                let g = self.nodes[gamma.0].data.clone();
                let mut gx = vec![R::zero(); xhat.len()];
                let mut ggamma = vec![R::zero(); c];
                let mut gbeta = vec![R::zero(); c];
                for r in 0..rows {
                    let dr = &dy[r * c..(r + 1) * c];
                    let xr = &xhat[r * c..(r + 1) * c];
                    let gr = &mut gx[r * c..(r + 1) * c];
                    for i in 0..c {
                        gr[i] = dr[i] * g[i] * inv_std[i];
                        ggamma[i] = ggamma[i] + dr[i] * xr[i];
                        gbeta[i] = gbeta[i] + dr[i];
                    }
                }
                self.accumulate(*x, gx);
                self.accumulate(*gamma, ggamma);
                self.accumulate(*beta, gbeta);
            }
            Op::SelectClass { x, labels } => {
                let c = self.shape(*x)[1];
                let mut gx = vec![R::zero(); self.nodes[x.0].data.len()];
                for (i, &l) in labels.iter().enumerate() {
                    gx[i * c + l as usize] = gx[i * c + l as usize] + dy[i];
                }
                self.accumulate(*x, gx);
            }
        }
    }

    /// Reduce `dy` (shaped like node `out`) back down to the shape of `x`,
    /// summing over broadcast extents; negate when `neg`.
    fn accumulate_unbroadcast(&mut self, x: TensorId, dy: &[R], out: usize, neg: bool) {
        if !self.nodes[x.0].requires_grad {
            return;
        }
        let sx = self.shape(x).to_vec();
        let out_shape = self.shape(TensorId(out)).to_vec();
        let mut gx = vec![R::zero(); self.nodes[x.0].data.len()];
        if sx == out_shape {
            for (gi, d) in gx.iter_mut().zip(dy.iter()) {
                *gi = if neg { -*d } else { *d };
            }
        } else {
            let strx = broadcast_strides(&sx, &out_shape);
            let zero = vec![0usize; out_shape.len()];
            for_each_lane(&out_shape, &strx, &zero, |o, ix, _, len, step_x, _| {
                let dr = &dy[o..o + len];
                if step_x == 1 {
                    let gr = &mut gx[ix..ix + len];
                    if neg {
                        for (g, &d) in gr.iter_mut().zip(dr.iter()) {
                            *g = *g - d;
                        }
                    } else {
                        for (g, &d) in gr.iter_mut().zip(dr.iter()) {
                            *g = *g + d;
                        }
                    }
                } else {
                    let mut acc = R::zero();
                    for &d in dr {
                        acc = acc + d;
                    }
                    gx[ix] = if neg { gx[ix] - acc } else { gx[ix] + acc };
                }
            });
        }
        self.accumulate(x, gx);
    }
}
