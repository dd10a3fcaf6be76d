//! Elementwise, matrix and reduction operations with their backward rules.

use super::{Result, Tensor, TensorError};

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for (i, &d) in shape.iter().enumerate().rev() {
        strides[i] = acc;
        acc *= d;
    }
    strides
}

/// Right-aligned broadcast result shape, or a shape error.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides for reading `shape` as if broadcast to `out` (0 on broadcast axes).
fn broadcast_strides(out: &[usize], shape: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - shape.len();
    let native = row_major_strides(shape);
    let mut s = vec![0; rank];
    for i in 0..rank {
        if i >= pad && shape[i - pad] != 1 {
            s[i] = native[i - pad];
        }
    }
    s
}

/// Walk every output position of `out_shape`, handing the mapped flat
/// offsets of the two broadcast operands to `body`.
fn for_each_broadcast(
    out_shape: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut body: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let n: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut oa = 0usize;
    let mut ob = 0usize;
    for flat in 0..n {
        body(flat, oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * out_shape[ax];
            ob -= sb[ax] * out_shape[ax];
        }
    }
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: BinOp) -> Result<Tensor> {
    let ashape = a.shape();
    let bshape = b.shape();
    let out_shape = broadcast_shape(kind.name(), &ashape, &bshape)?;
    let n: usize = out_shape.iter().product();
    let mut data = vec![0.0; n];

    let same = ashape == bshape;
    {
        let ad = a.data_ref();
        let bd = b.data_ref();
        if same {
            match kind {
                BinOp::Add => {
                    for i in 0..n {
                        data[i] = ad[i] + bd[i];
                    }
                }
                BinOp::Sub => {
                    for i in 0..n {
                        data[i] = ad[i] - bd[i];
                    }
                }
                BinOp::Mul => {
                    for i in 0..n {
                        data[i] = ad[i] * bd[i];
                    }
                }
                BinOp::Div => {
                    for i in 0..n {
                        data[i] = ad[i] / bd[i];
                    }
                }
            }
        } else {
            let sa = broadcast_strides(&out_shape, &ashape);
            let sb = broadcast_strides(&out_shape, &bshape);
            for_each_broadcast(&out_shape, &sa, &sb, |flat, oa, ob| {
                data[flat] = match kind {
                    BinOp::Add => ad[oa] + bd[ob],
                    BinOp::Sub => ad[oa] - bd[ob],
                    BinOp::Mul => ad[oa] * bd[ob],
                    BinOp::Div => ad[oa] / bd[ob],
                };
            });
        }
    }

    let ap = a.clone();
    let bp = b.clone();
    let os = out_shape.clone();
    let back = move |g: &[f64]| {
        let an: usize = ap.shape_ref().iter().product();
        let bn: usize = bp.shape_ref().iter().product();
        let mut ga = vec![0.0; an];
        let mut gb = vec![0.0; bn];
        {
            let ad = ap.data_ref();
            let bd = bp.data_ref();
            let sa = broadcast_strides(&os, &ap.shape_ref());
            let sb = broadcast_strides(&os, &bp.shape_ref());
            for_each_broadcast(&os, &sa, &sb, |flat, oa, ob| {
                let gv = g[flat];
                match kind {
                    BinOp::Add => {
                        ga[oa] += gv;
                        gb[ob] += gv;
                    }
                    BinOp::Sub => {
                        ga[oa] += gv;
                        gb[ob] -= gv;
                    }
                    BinOp::Mul => {
                        ga[oa] += gv * bd[ob];
                        gb[ob] += gv * ad[oa];
                    }
                    BinOp::Div => {
                        let bv = bd[ob];
                        ga[oa] += gv / bv;
                        gb[ob] -= gv * ad[oa] / (bv * bv);
                    }
                }
            });
        }
        ap.add_grad(&ga);
        bp.add_grad(&gb);
    };
    Tensor::make(kind.name(), out_shape, data, vec![a.clone(), b.clone()], back)
}

/// Elementwise unary op where the backward factor is a function of the input.
fn unary_from_input(
    op: &'static str,
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    dfdx: impl Fn(f64) -> f64 + 'static,
) -> Result<Tensor> {
    let shape = x.shape();
    let data: Vec<f64> = x.data_ref().iter().map(|&v| f(v)).collect();
    let xp = x.clone();
    let back = move |g: &[f64]| {
        let contrib: Vec<f64> = {
            let xd = xp.data_ref();
            g.iter().zip(xd.iter()).map(|(&gv, &xv)| gv * dfdx(xv)).collect()
        };
        xp.add_grad(&contrib);
    };
    Tensor::make(op, shape, data, vec![x.clone()], back)
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Add)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Sub)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Mul)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        binary(self, rhs, BinOp::Div)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        unary_from_input("scale", self, |v| v * c, move |_| c)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        unary_from_input("add_scalar", self, |v| v + c, |_| 1.0)
    }

    pub fn sin(&self) -> Result<Tensor> {
        unary_from_input("sin", self, f64::sin, f64::cos)
    }

    pub fn cos(&self) -> Result<Tensor> {
        unary_from_input("cos", self, f64::cos, |v| -v.sin())
    }

    pub fn exp(&self) -> Result<Tensor> {
        unary_from_input("exp", self, f64::exp, f64::exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        unary_from_input("log", self, f64::ln, |v| 1.0 / v)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        unary_from_input("sqrt", self, f64::sqrt, |v| 0.5 / v.sqrt())
    }

    pub fn relu(&self) -> Result<Tensor> {
        unary_from_input("relu", self, |v| v.max(0.0), |v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// Smooth nonnegative activation `ln(1 + e^x)`, computed stably.
    pub fn softplus(&self) -> Result<Tensor> {
        fn sp(v: f64) -> f64 {
            if v > 30.0 {
                v
            } else if v < -30.0 {
                v.exp()
            } else {
                v.exp().ln_1p()
            }
        }
        fn sigmoid(v: f64) -> f64 {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        }
        unary_from_input("softplus", self, sp, sigmoid)
    }

    /// 2-D matrix product `(m,k) x (k,n) -> (m,n)`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let a_shape = self.shape();
        let b_shape = rhs.shape();
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a_shape,
                rhs: b_shape,
            });
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let mut data = vec![0.0; m * n];
        {
            let ad = self.data_ref();
            let bd = rhs.data_ref();
            for i in 0..m {
                let arow = &ad[i * k..(i + 1) * k];
                let crow = &mut data[i * n..(i + 1) * n];
                for (p, &av) in arow.iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    for (cv, &bv) in crow.iter_mut().zip(brow) {
                        *cv += av * bv;
                    }
                }
            }
        }
        let ap = self.clone();
        let bp = rhs.clone();
        let back = move |g: &[f64]| {
            let mut ga = vec![0.0; m * k];
            let mut gb = vec![0.0; k * n];
            {
                let ad = ap.data_ref();
                let bd = bp.data_ref();
                // dA = g @ B^T
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let garow = &mut ga[i * k..(i + 1) * k];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        let mut acc = 0.0;
                        for (gv, bv) in grow.iter().zip(brow) {
                            acc += gv * bv;
                        }
                        garow[p] += acc;
                    }
                }
                // dB = A^T @ g
                for i in 0..m {
                    let arow = &ad[i * k..(i + 1) * k];
                    let grow = &g[i * n..(i + 1) * n];
                    for (p, &av) in arow.iter().enumerate() {
                        if av == 0.0 {
                            continue;
                        }
                        let gbrow = &mut gb[p * n..(p + 1) * n];
                        for (gbv, &gv) in gbrow.iter_mut().zip(grow) {
                            *gbv += av * gv;
                        }
                    }
                }
            }
            ap.add_grad(&ga);
            bp.add_grad(&gb);
        };
        Tensor::make("matmul", vec![m, n], data, vec![self.clone(), rhs.clone()], back)
    }

    /// 2-D transpose.
    pub fn t(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArg {
                op: "transpose",
                msg: format!("expected rank 2, got {:?}", shape),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let mut data = vec![0.0; r * c];
        {
            let d = self.data_ref();
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = d[i * c + j];
                }
            }
        }
        let xp = self.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    gx[i * c + j] = g[j * r + i];
                }
            }
            xp.add_grad(&gx);
        };
        Tensor::make("transpose", vec![c, r], data, vec![self.clone()], back)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let n: usize = new_shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(),
                rhs: new_shape.to_vec(),
            });
        }
        let data = self.data();
        let xp = self.clone();
        let back = move |g: &[f64]| {
            xp.add_grad(g);
        };
        Tensor::make("reshape", new_shape.to_vec(), data, vec![self.clone()], back)
    }

    /// Concatenate along `axis`; all other extents must match.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArg {
                op: "concat",
                msg: "empty input list".into(),
            });
        }
        let base = parts[0].shape();
        if axis >= base.len() {
            return Err(TensorError::InvalidArg {
                op: "concat",
                msg: format!("axis {} out of range for {:?}", axis, base),
            });
        }
        let mut axis_total = 0;
        for p in parts {
            let s = p.shape();
            if s.len() != base.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != base[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s,
                });
            }
            axis_total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = axis_total;

        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let out_row = axis_total * inner;
        let n: usize = out_shape.iter().product();
        let mut data = vec![0.0; n];
        let mut offset = 0;
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let pa = p.shape()[axis];
            let block = pa * inner;
            {
                let pd = p.data_ref();
                for o in 0..outer {
                    data[o * out_row + offset..o * out_row + offset + block]
                        .copy_from_slice(&pd[o * block..(o + 1) * block]);
                }
            }
            spans.push((offset, block));
            offset += block;
        }

        let handles: Vec<Tensor> = parts.to_vec();
        let spans_c = spans;
        let back = move |g: &[f64]| {
            for (p, &(off, block)) in handles.iter().zip(&spans_c) {
                let mut gp = vec![0.0; outer * block];
                for o in 0..outer {
                    gp[o * block..(o + 1) * block]
                        .copy_from_slice(&g[o * out_row + off..o * out_row + off + block]);
                }
                p.add_grad(&gp);
            }
        };
        Tensor::make("concat", out_shape, data, parts.to_vec(), back)
    }

    /// Sub-tensor `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(TensorError::InvalidArg {
                op: "slice",
                msg: format!("range {}..{} on axis {} of {:?}", start, end, axis, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let in_row = shape[axis] * inner;
        let span = (end - start) * inner;
        let mut out_shape = shape.clone();
        out_shape[axis] = end - start;
        let mut data = vec![0.0; outer * span];
        {
            let d = self.data_ref();
            for o in 0..outer {
                data[o * span..(o + 1) * span]
                    .copy_from_slice(&d[o * in_row + start * inner..o * in_row + start * inner + span]);
            }
        }
        let xp = self.clone();
        let total = self.numel();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; total];
            for o in 0..outer {
                gx[o * in_row + start * inner..o * in_row + start * inner + span]
                    .copy_from_slice(&g[o * span..(o + 1) * span]);
            }
            xp.add_grad(&gx);
        };
        Tensor::make("slice", out_shape, data, vec![self.clone()], back)
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Result<Tensor> {
        let total: f64 = self.data_ref().iter().sum();
        let xp = self.clone();
        let n = self.numel();
        let back = move |g: &[f64]| {
            xp.add_grad(&vec![g[0]; n]);
        };
        Tensor::make("sum", vec![1], vec![total], vec![self.clone()], back)
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Sum along one axis, keeping it as extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(TensorError::InvalidArg {
                op: "sum_axis",
                msg: format!("axis {} out of range for {:?}", axis, shape),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let mut data = vec![0.0; outer * inner];
        {
            let d = self.data_ref();
            for o in 0..outer {
                for m in 0..mid {
                    let src = &d[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                    let dst = &mut data[o * inner..(o + 1) * inner];
                    for (dv, sv) in dst.iter_mut().zip(src) {
                        *dv += sv;
                    }
                }
            }
        }
        let xp = self.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; outer * mid * inner];
            for o in 0..outer {
                for m in 0..mid {
                    let dst = &mut gx[(o * mid + m) * inner..(o * mid + m + 1) * inner];
                    dst.copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            xp.add_grad(&gx);
        };
        Tensor::make("sum_axis", out_shape, data, vec![self.clone()], back)
    }

    /// Row-wise softmax of a 2-D tensor, stabilized by max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArg {
                op: "softmax_rows",
                msg: format!("expected rank 2, got {:?}", shape),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let mut data = vec![0.0; r * c];
        {
            let d = self.data_ref();
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let out = &mut data[i * c..(i + 1) * c];
                let mut s = 0.0;
                for (ov, &v) in out.iter_mut().zip(row) {
                    let e = (v - m).exp();
                    *ov = e;
                    s += e;
                }
                for ov in out.iter_mut() {
                    *ov /= s;
                }
            }
        }
        let y = data.clone();
        let xp = self.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let yrow = &y[i * c..(i + 1) * c];
                let grow = &g[i * c..(i + 1) * c];
                let dot: f64 = yrow.iter().zip(grow).map(|(&yv, &gv)| yv * gv).sum();
                let gxrow = &mut gx[i * c..(i + 1) * c];
                for ((gxv, &yv), &gv) in gxrow.iter_mut().zip(yrow).zip(grow) {
                    *gxv = yv * (gv - dot);
                }
            }
            xp.add_grad(&gx);
        };
        Tensor::make("softmax_rows", shape, data, vec![self.clone()], back)
    }

    /// Row-wise log-softmax of a 2-D tensor (stable form).
    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidArg {
                op: "log_softmax_rows",
                msg: format!("expected rank 2, got {:?}", shape),
            });
        }
        let (r, c) = (shape[0], shape[1]);
        let mut data = vec![0.0; r * c];
        {
            let d = self.data_ref();
            for i in 0..r {
                let row = &d[i * c..(i + 1) * c];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
                for (o, &v) in data[i * c..(i + 1) * c].iter_mut().zip(row) {
                    *o = v - lse;
                }
            }
        }
        let y = data.clone();
        let xp = self.clone();
        let back = move |g: &[f64]| {
            let mut gx = vec![0.0; r * c];
            for i in 0..r {
                let yrow = &y[i * c..(i + 1) * c];
                let grow = &g[i * c..(i + 1) * c];
                let gsum: f64 = grow.iter().sum();
                let gxrow = &mut gx[i * c..(i + 1) * c];
                for ((gxv, &yv), &gv) in gxrow.iter_mut().zip(yrow).zip(grow) {
                    *gxv = gv - yv.exp() * gsum;
                }
            }
            xp.add_grad(&gx);
        };
        Tensor::make("log_softmax_rows", shape, data, vec![self.clone()], back)
    }
}
