//! Forward kernels and their vector-Jacobian products.
//!
//! Shapes follow the rest of the crate: signals are `(B, C, L)`, feature
//! matrices `(B, K)`, attention intermediates `(B, L, C)`. There is no
//! general broadcasting; the few mixed-shape ops each spell out their
//! contract.

use super::{Inner, Tensor};
use crate::error::{Error, Result};

fn prod(xs: &[usize]) -> usize {
    xs.iter().product()
}

/// Split a shape around `axis` into (outer, n, inner) block sizes.
fn split3(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::ShapeMismatch {
            op,
            detail: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    Ok((prod(&shape[..axis]), shape[axis], prod(&shape[axis + 1..])))
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tensor {
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("add", self, rhs)?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a + b).collect();
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            "add",
            data,
            self.shape().to_vec(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| ga.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                pb.if_grad(|gb| gb.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
            }),
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, rhs)?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a - b).collect();
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            "sub",
            data,
            self.shape().to_vec(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| ga.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                pb.if_grad(|gb| gb.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi));
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, rhs)?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a * b).collect();
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            "mul",
            data,
            self.shape().to_vec(),
            vec![self.clone(), rhs.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += gi * pb.data()[i];
                    }
                });
                pb.if_grad(|gb| {
                    for (i, gi) in g.iter().enumerate() {
                        gb[i] += gi * pa.data()[i];
                    }
                });
            }),
        )
    }

    /// Multiply by a plain constant.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        if !c.is_finite() {
            return Err(Error::invalid("scale", format!("non-finite factor {c}")));
        }
        let data = self.data().iter().map(|a| a * c).collect();
        let pa = self.clone();
        Tensor::from_op(
            "scale",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for (d, gi) in ga.iter_mut().zip(g) {
                        *d += gi * c;
                    }
                });
            }),
        )
    }

    /// Multiply by a single-element tensor, differentiable in both.
    pub fn scale_by(&self, s: &Tensor) -> Result<Tensor> {
        if s.numel() != 1 {
            return Err(mismatch("scale_by", format!("scale has shape {:?}", s.shape())));
        }
        let sv = s.data()[0];
        let data = self.data().iter().map(|a| a * sv).collect();
        let (pa, ps) = (self.clone(), s.clone());
        Tensor::from_op(
            "scale_by",
            data,
            self.shape().to_vec(),
            vec![self.clone(), s.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for (d, gi) in ga.iter_mut().zip(g) {
                        *d += gi * sv;
                    }
                });
                ps.if_grad(|gs| {
                    let mut acc = 0.0;
                    for (gi, ai) in g.iter().zip(pa.data()) {
                        acc += gi * ai;
                    }
                    gs[0] += acc;
                });
            }),
        )
    }

    /// `(B, K) + (K,)` row-wise bias.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (b, k) = match (self.shape(), bias.shape()) {
            ([b, k], [kb]) if k == kb => (*b, *k),
            _ => {
                return Err(mismatch(
                    "add_row",
                    format!("{:?} + {:?}", self.shape(), bias.shape()),
                ))
            }
        };
        let mut data = self.data().to_vec();
        for r in 0..b {
            for c in 0..k {
                data[r * k + c] += bias.data()[c];
            }
        }
        let (pa, pb) = (self.clone(), bias.clone());
        Tensor::from_op(
            "add_row",
            data,
            self.shape().to_vec(),
            vec![self.clone(), bias.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| ga.iter_mut().zip(g).for_each(|(d, gi)| *d += gi));
                pb.if_grad(|gb| {
                    for r in 0..b {
                        for c in 0..k {
                            gb[c] += g[r * k + c];
                        }
                    }
                });
            }),
        )
    }

    /// `(M, K) x (K, N)` matrix product.
    pub fn matmul2(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k, n) = match (self.shape(), rhs.shape()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(mismatch(
                    "matmul2",
                    format!("{:?} x {:?}", self.shape(), rhs.shape()),
                ))
            }
        };
        let mut data = vec![0.0; m * n];
        matmul_into(self.data(), rhs.data(), &mut data, m, k, n);
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            "matmul2",
            data,
            vec![m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    // dA = G B^T
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            for p in 0..k {
                                ga[i * k + p] += gij * pb.data()[p * n + j];
                            }
                        }
                    }
                });
                pb.if_grad(|gb| {
                    // dB = A^T G
                    for i in 0..m {
                        for p in 0..k {
                            let a = pa.data()[i * k + p];
                            for j in 0..n {
                                gb[p * n + j] += a * g[i * n + j];
                            }
                        }
                    }
                });
            }),
        )
    }

    /// Batched matmul: `(B, M, K) x (B, K, N)`.
    pub fn bmm(&self, rhs: &Tensor) -> Result<Tensor> {
        let (b, m, k, n) = match (self.shape(), rhs.shape()) {
            ([b, m, k], [b2, k2, n]) if b == b2 && k == k2 => (*b, *m, *k, *n),
            _ => {
                return Err(mismatch("bmm", format!("{:?} x {:?}", self.shape(), rhs.shape())))
            }
        };
        let mut data = vec![0.0; b * m * n];
        for t in 0..b {
            matmul_into(
                &self.data()[t * m * k..(t + 1) * m * k],
                &rhs.data()[t * k * n..(t + 1) * k * n],
                &mut data[t * m * n..(t + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let (pa, pb) = (self.clone(), rhs.clone());
        Tensor::from_op(
            "bmm",
            data,
            vec![b, m, n],
            vec![self.clone(), rhs.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for t in 0..b {
                        let (go, ao, bo) = (t * m * n, t * m * k, t * k * n);
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[go + i * n + j];
                                for p in 0..k {
                                    ga[ao + i * k + p] += gij * pb.data()[bo + p * n + j];
                                }
                            }
                        }
                    }
                });
                pb.if_grad(|gb| {
                    for t in 0..b {
                        let (go, ao, bo) = (t * m * n, t * m * k, t * k * n);
                        for i in 0..m {
                            for p in 0..k {
                                let a = pa.data()[ao + i * k + p];
                                for j in 0..n {
                                    gb[bo + p * n + j] += a * g[go + i * n + j];
                                }
                            }
                        }
                    }
                });
            }),
        )
    }

    /// Swap the last two axes of a rank-2 or rank-3 tensor.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let (b, m, n) = match self.shape() {
            [m, n] => (1usize, *m, *n),
            [b, m, n] => (*b, *m, *n),
            s => return Err(mismatch("transpose_last", format!("rank {} tensor", s.len()))),
        };
        let mut data = vec![0.0; b * m * n];
        for t in 0..b {
            for i in 0..m {
                for j in 0..n {
                    data[t * m * n + j * m + i] = self.data()[t * m * n + i * n + j];
                }
            }
        }
        let out_shape = if self.shape().len() == 2 { vec![n, m] } else { vec![b, n, m] };
        let pa = self.clone();
        Tensor::from_op(
            "transpose_last",
            data,
            out_shape,
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for t in 0..b {
                        for i in 0..m {
                            for j in 0..n {
                                ga[t * m * n + i * n + j] += g[t * m * n + j * m + i];
                            }
                        }
                    }
                });
            }),
        )
    }

    /// Concatenate along `axis`. All parts must agree on every other axis.
    pub fn concat(axis: usize, parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| mismatch("concat", "no tensors given".into()))?;
        let rank = first.shape().len();
        let (outer, _, inner) = split3(first.shape(), axis, "concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape().len() != rank
                || p.shape()[..axis] != first.shape()[..axis]
                || p.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(mismatch(
                    "concat",
                    format!("{:?} does not stack with {:?} on axis {axis}", p.shape(), first.shape()),
                ));
            }
            widths.push(p.shape()[axis]);
        }
        let total: usize = widths.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let mut data = vec![0.0; outer * total * inner];
        for o in 0..outer {
            let mut off = 0;
            for (p, w) in parts.iter().zip(&widths) {
                let src = &p.data()[o * w * inner..(o + 1) * w * inner];
                let dst = &mut data[o * total * inner + off * inner..][..w * inner];
                dst.copy_from_slice(src);
                off += w;
            }
        }
        let owned: Vec<Tensor> = parts.iter().map(|p| (*p).clone()).collect();
        let widths_v = widths.clone();
        let owned_v = owned.clone();
        Tensor::from_op(
            "concat",
            data,
            shape,
            owned,
            Box::new(move |_, g| {
                for o in 0..outer {
                    let mut off = 0;
                    for (p, w) in owned_v.iter().zip(&widths_v) {
                        let base = o * total * inner + off * inner;
                        p.if_grad(|gp| {
                            let dst = &mut gp[o * w * inner..(o + 1) * w * inner];
                            for (d, s) in dst.iter_mut().zip(&g[base..base + w * inner]) {
                                *d += s;
                            }
                        });
                        off += w;
                    }
                }
            }),
        )
    }

    /// View `len` entries of `axis` starting at `start`, as a copy whose
    /// gradient scatters back into the slice. This is the op elastic
    /// weight sharing goes through, so gradients reach the shared buffer.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let (outer, n, inner) = split3(self.shape(), axis, "narrow")?;
        if len == 0 || start + len > n {
            return Err(mismatch(
                "narrow",
                format!("[{start}, {start}+{len}) out of 0..{n} on axis {axis}"),
            ));
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let src = &self.data()[(o * n + start) * inner..(o * n + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let pa = self.clone();
        Tensor::from_op(
            "narrow",
            data,
            shape,
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for o in 0..outer {
                        let dst = &mut ga[(o * n + start) * inner..(o * n + start + len) * inner];
                        for (d, s) in dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner])
                        {
                            *d += s;
                        }
                    }
                });
            }),
        )
    }

    fn reduce_axis(&self, axis: usize, mean: bool) -> Result<Tensor> {
        let op = if mean { "mean_axis" } else { "sum_axis" };
        let (outer, n, inner) = split3(self.shape(), axis, if mean { "mean_axis" } else { "sum_axis" })?;
        let scale = if mean { 1.0 / n as f64 } else { 1.0 };
        let mut shape: Vec<usize> = self
            .shape()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != axis)
            .map(|(_, d)| *d)
            .collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += self.data()[(o * n + j) * inner + i];
                }
            }
        }
        for v in &mut data {
            *v *= scale;
        }
        let pa = self.clone();
        Tensor::from_op(
            op,
            data,
            shape,
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                ga[(o * n + j) * inner + i] += g[o * inner + i] * scale;
                            }
                        }
                    }
                });
            }),
        )
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, true)
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, false)
    }

    /// Reduce everything to a scalar by repeated axis sums.
    pub fn sum_all(&self) -> Result<Tensor> {
        let mut t = self.clone();
        while t.numel() > 1 {
            t = t.sum_axis(0)?;
        }
        if t.shape() != [1] {
            t = t.sum_axis(0)?;
        }
        Ok(t)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        let pa = self.clone();
        Tensor::from_op(
            "relu",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        if pa.data()[i] > 0.0 {
                            ga[i] += gi;
                        }
                    }
                });
            }),
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| stable_sigmoid(*v)).collect();
        let pa = self.clone();
        Tensor::from_op(
            "sigmoid",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Inner, g| {
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        let y = out.data[i];
                        ga[i] += gi * y * (1.0 - y);
                    }
                });
            }),
        )
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| v.tanh()).collect();
        let pa = self.clone();
        Tensor::from_op(
            "tanh",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Inner, g| {
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        let y = out.data[i];
                        ga[i] += gi * (1.0 - y * y);
                    }
                });
            }),
        )
    }

    pub fn softplus(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|v| stable_softplus(*v)).collect();
        let pa = self.clone();
        Tensor::from_op(
            "softplus",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += gi * stable_sigmoid(pa.data()[i]);
                    }
                });
            }),
        )
    }

    /// `mish(z) = z * tanh(softplus(z))`, composed from primitives.
    pub fn mish(&self) -> Result<Tensor> {
        self.mul(&self.softplus()?.tanh()?)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split3(self.shape(), axis, "softmax")?;
        let mut data = vec![0.0; self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    m = m.max(self.data()[at(j)]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    let e = (self.data()[at(j)] - m).exp();
                    data[at(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    data[at(j)] /= s;
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(
            "softmax",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Inner, g| {
                pa.if_grad(|ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let mut dot = 0.0;
                            for j in 0..n {
                                dot += g[at(j)] * out.data[at(j)];
                            }
                            for j in 0..n {
                                ga[at(j)] += out.data[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }),
        )
    }

    /// Numerically stable log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, n, inner) = split3(self.shape(), axis, "log_softmax")?;
        let mut data = vec![0.0; self.numel()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let mut m = f64::NEG_INFINITY;
                for j in 0..n {
                    m = m.max(self.data()[at(j)]);
                }
                let mut s = 0.0;
                for j in 0..n {
                    s += (self.data()[at(j)] - m).exp();
                }
                let lse = m + s.ln();
                for j in 0..n {
                    data[at(j)] = self.data()[at(j)] - lse;
                }
            }
        }
        let pa = self.clone();
        Tensor::from_op(
            "log_softmax",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Inner, g| {
                pa.if_grad(|ga| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let mut gsum = 0.0;
                            for j in 0..n {
                                gsum += g[at(j)];
                            }
                            for j in 0..n {
                                ga[at(j)] += g[at(j)] - out.data[at(j)].exp() * gsum;
                            }
                        }
                    }
                });
            }),
        )
    }

    /// 1-D convolution, stride 1, symmetric zero padding so the output
    /// length equals the input length. `x: (B, Cin, L)`, `w: (Cout, Cin, K)`
    /// with odd `K`, optional `bias: (Cout,)`.
    pub fn conv1d(&self, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (bsz, cin, l) = match self.shape() {
            [b, c, l] => (*b, *c, *l),
            s => return Err(mismatch("conv1d", format!("input shape {s:?}, want (B, Cin, L)"))),
        };
        let (cout, cin_w, k) = match w.shape() {
            [o, c, k] => (*o, *c, *k),
            s => return Err(mismatch("conv1d", format!("kernel shape {s:?}, want (Cout, Cin, K)"))),
        };
        if cin != cin_w {
            return Err(mismatch("conv1d", format!("Cin {cin} vs kernel Cin {cin_w}")));
        }
        if k % 2 == 0 {
            return Err(mismatch("conv1d", format!("kernel width {k} must be odd")));
        }
        if let Some(bt) = bias {
            if bt.shape() != [cout] {
                return Err(mismatch(
                    "conv1d",
                    format!("bias shape {:?}, want ({cout},)", bt.shape()),
                ));
            }
        }
        let pad = k / 2;
        let mut data = vec![0.0; bsz * cout * l];
        for b in 0..bsz {
            for co in 0..cout {
                let base = bias.map_or(0.0, |bt| bt.data()[co]);
                for t in 0..l {
                    let mut acc = base;
                    for ci in 0..cin {
                        let xrow = &self.data()[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                        let wrow = &w.data()[(co * cin + ci) * k..(co * cin + ci + 1) * k];
                        for (dk, wv) in wrow.iter().enumerate() {
                            let src = t as isize + dk as isize - pad as isize;
                            if src >= 0 && (src as usize) < l {
                                acc += xrow[src as usize] * wv;
                            }
                        }
                    }
                    data[(b * cout + co) * l + t] = acc;
                }
            }
        }
        let mut parents = vec![self.clone(), w.clone()];
        if let Some(bt) = bias {
            parents.push(bt.clone());
        }
        let (px, pw, pb) = (self.clone(), w.clone(), bias.cloned());
        Tensor::from_op(
            "conv1d",
            data,
            vec![bsz, cout, l],
            parents,
            Box::new(move |_, g| {
                px.if_grad(|gx| {
                    for b in 0..bsz {
                        for co in 0..cout {
                            for t in 0..l {
                                let gv = g[(b * cout + co) * l + t];
                                for ci in 0..cin {
                                    for dk in 0..k {
                                        let src = t as isize + dk as isize - pad as isize;
                                        if src >= 0 && (src as usize) < l {
                                            gx[(b * cin + ci) * l + src as usize] +=
                                                gv * pw.data()[(co * cin + ci) * k + dk];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                pw.if_grad(|gw| {
                    for b in 0..bsz {
                        for co in 0..cout {
                            for t in 0..l {
                                let gv = g[(b * cout + co) * l + t];
                                for ci in 0..cin {
                                    for dk in 0..k {
                                        let src = t as isize + dk as isize - pad as isize;
                                        if src >= 0 && (src as usize) < l {
                                            gw[(co * cin + ci) * k + dk] +=
                                                gv * px.data()[(b * cin + ci) * l + src as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                if let Some(bt) = &pb {
                    bt.if_grad(|gb| {
                        for b in 0..bsz {
                            for co in 0..cout {
                                for t in 0..l {
                                    gb[co] += g[(b * cout + co) * l + t];
                                }
                            }
                        }
                    });
                }
            }),
        )
    }

    /// Elementwise power with a constant, non-negative exponent.
    pub fn pow_scalar(&self, p: f64) -> Result<Tensor> {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::invalid("exponent", format!("{p} (must be finite and >= 0)")));
        }
        // Exact pass-throughs for the two common exponents.
        if p == 1.0 {
            return self.scale(1.0);
        }
        let data: Vec<f64> =
            if p == 0.0 { vec![1.0; self.numel()] } else { self.data().iter().map(|v| v.powf(p)).collect() };
        let pa = self.clone();
        Tensor::from_op(
            "pow_scalar",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                if p == 0.0 {
                    return;
                }
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        ga[i] += gi * p * pa.data()[i].powf(p - 1.0);
                    }
                });
            }),
        )
    }

    /// `max(x, m)` elementwise; the gradient passes where `x >= m`.
    pub fn clamp_min(&self, m: f64) -> Result<Tensor> {
        if !m.is_finite() {
            return Err(Error::invalid("clamp_min", format!("non-finite bound {m}")));
        }
        let data = self.data().iter().map(|v| v.max(m)).collect();
        let pa = self.clone();
        Tensor::from_op(
            "clamp_min",
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            Box::new(move |_, g| {
                pa.if_grad(|ga| {
                    for (i, gi) in g.iter().enumerate() {
                        if pa.data()[i] >= m {
                            ga[i] += gi;
                        }
                    }
                });
            }),
        )
    }

    /// Per-channel gate: `e: (B, C)` scales `x: (B, C, L)` along L.
    pub fn scale_channels(e: &Tensor, x: &Tensor) -> Result<Tensor> {
        let (b, c, l) = match (e.shape(), x.shape()) {
            ([b, c], [b2, c2, l]) if b == b2 && c == c2 => (*b, *c, *l),
            _ => {
                return Err(mismatch(
                    "scale_channels",
                    format!("gate {:?} vs signal {:?}", e.shape(), x.shape()),
                ))
            }
        };
        let mut data = vec![0.0; b * c * l];
        for bi in 0..b {
            for ci in 0..c {
                let ev = e.data()[bi * c + ci];
                for li in 0..l {
                    data[(bi * c + ci) * l + li] = ev * x.data()[(bi * c + ci) * l + li];
                }
            }
        }
        let (pe, px) = (e.clone(), x.clone());
        Tensor::from_op(
            "scale_channels",
            data,
            vec![b, c, l],
            vec![e.clone(), x.clone()],
            Box::new(move |_, g| {
                pe.if_grad(|ge| {
                    for bi in 0..b {
                        for ci in 0..c {
                            let mut acc = 0.0;
                            for li in 0..l {
                                acc += g[(bi * c + ci) * l + li] * px.data()[(bi * c + ci) * l + li];
                            }
                            ge[bi * c + ci] += acc;
                        }
                    }
                });
                px.if_grad(|gx| {
                    for bi in 0..b {
                        for ci in 0..c {
                            let ev = pe.data()[bi * c + ci];
                            for li in 0..l {
                                gx[(bi * c + ci) * l + li] += ev * g[(bi * c + ci) * l + li];
                            }
                        }
                    }
                });
            }),
        )
    }

    /// Mean cross-entropy of `(B, K)` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (b, k) = match self.shape() {
            [b, k] => (*b, *k),
            s => return Err(mismatch("cross_entropy", format!("logits shape {s:?}"))),
        };
        if labels.len() != b {
            return Err(mismatch(
                "cross_entropy",
                format!("{b} rows vs {} labels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|y| **y >= k) {
            return Err(Error::invalid("labels", format!("class {bad} out of range 0..{k}")));
        }
        // Row-stable softmax, reused by the backward closure.
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for r in 0..b {
            let row = &self.data()[r * k..(r + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for (j, v) in row.iter().enumerate() {
                let e = (v - m).exp();
                probs[r * k + j] = e;
                s += e;
            }
            for j in 0..k {
                probs[r * k + j] /= s;
            }
            loss += m + s.ln() - row[labels[r]];
        }
        loss /= b as f64;
        let pa = self.clone();
        let labels = labels.to_vec();
        Tensor::from_op(
            "cross_entropy",
            vec![loss],
            vec![1],
            vec![self.clone()],
            Box::new(move |_, g| {
                let gs = g[0] / b as f64;
                pa.if_grad(|ga| {
                    for r in 0..b {
                        for j in 0..k {
                            let ind = if labels[r] == j { 1.0 } else { 0.0 };
                            ga[r * k + j] += gs * (probs[r * k + j] - ind);
                        }
                    }
                });
            }),
        )
    }

    /// Mean binary cross-entropy on raw logits against constant targets
    /// in [0, 1], computed in the stable `max(x,0) - x z + log1p(e^-|x|)`
    /// form.
    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<Tensor> {
        if targets.len() != self.numel() {
            return Err(mismatch(
                "bce_with_logits",
                format!("{} logits vs {} targets", self.numel(), targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::invalid("targets", format!("{bad} outside [0, 1]")));
        }
        let n = self.numel() as f64;
        let mut loss = 0.0;
        for (x, z) in self.data().iter().zip(targets) {
            loss += x.max(0.0) - x * z + (-x.abs()).exp().ln_1p();
        }
        loss /= n;
        let pa = self.clone();
        let targets = targets.to_vec();
        Tensor::from_op(
            "bce_with_logits",
            vec![loss],
            vec![1],
            vec![self.clone()],
            Box::new(move |_, g| {
                let gs = g[0] / n;
                pa.if_grad(|ga| {
                    for (i, z) in targets.iter().enumerate() {
                        ga[i] += gs * (stable_sigmoid(pa.data()[i]) - z);
                    }
                });
            }),
        )
    }

    /// Mean over rows of `KL(softmax(student) || softmax(teacher))` for
    /// `(B, K)` logits. Composed from primitives, so it is differentiable
    /// in both arguments; detach the teacher to use it as a distillation
    /// target.
    pub fn kl_div_rows(student_logits: &Tensor, teacher_logits: &Tensor) -> Result<Tensor> {
        same_shape("kl_div_rows", student_logits, teacher_logits)?;
        if student_logits.shape().len() != 2 {
            return Err(mismatch(
                "kl_div_rows",
                format!("want (B, K) logits, got {:?}", student_logits.shape()),
            ));
        }
        let ps = student_logits.softmax(1)?;
        let ls = student_logits.log_softmax(1)?;
        let lt = teacher_logits.log_softmax(1)?;
        ps.mul(&ls.sub(&lt)?)?.sum_axis(1)?.mean_axis(0)
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    #[test]
    fn matmul2_matches_hand_computation() {
        let a = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let b = t(&[7.0, 8.0, 9.0, 10.0, 11.0, 12.0], &[3, 2]);
        let c = a.matmul2(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn conv1d_identity_kernel_preserves_signal() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 1, 5]);
        let w = t(&[0.0, 1.0, 0.0], &[1, 1, 3]);
        let y = x.conv1d(&w, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_zero_pads_at_boundaries() {
        // Averaging kernel over a constant signal dips at the edges where
        // the window hangs over the zero padding.
        let x = t(&[1.0; 4], &[1, 1, 4]);
        let w = t(&[1.0, 1.0, 1.0], &[1, 1, 3]);
        let y = x.conv1d(&w, None).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn conv1d_even_kernel_rejected() {
        let x = t(&[0.0; 6], &[1, 1, 6]);
        let w = t(&[0.0; 4], &[1, 1, 4]);
        assert!(x.conv1d(&w, None).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_order_is_kept() {
        let x = t(&[1.0, 2.0, 3.0, -1.0, 0.0, 1.0], &[2, 3]);
        let y = x.softmax(1).unwrap();
        for r in 0..2 {
            let row = &y.data()[r * 3..(r + 1) * 3];
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(row[0] < row[1] && row[1] < row[2]);
        }
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let x = t(&[1000.0, 0.0, -1000.0], &[1, 3]);
        let y = x.softmax(1).unwrap();
        assert_eq!(y.data()[0], 1.0);
        assert_eq!(y.data()[2], 0.0);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_k() {
        let x = t(&[0.0; 8], &[2, 4]);
        let l = x.cross_entropy(&[1, 3]).unwrap();
        assert_abs_diff_eq!(l.item().unwrap(), (4.0f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let x = t(&[0.0; 4], &[1, 4]);
        assert!(x.cross_entropy(&[4]).is_err());
        assert!(x.cross_entropy(&[0, 1]).is_err());
    }

    #[test]
    fn narrow_copies_the_requested_slice() {
        // (2, 3, 2) tensor, take channels 1..3
        let x = t(&(0..12).map(|v| v as f64).collect::<Vec<_>>(), &[2, 3, 2]);
        let y = x.narrow(1, 1, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn narrow_out_of_range_is_an_error() {
        let x = t(&[0.0; 6], &[2, 3]);
        assert!(x.narrow(1, 2, 2).is_err());
        assert!(x.narrow(1, 0, 0).is_err());
    }

    #[test]
    fn concat_then_narrow_roundtrips() {
        let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
        let b = t(&[5.0, 6.0, 7.0, 8.0, 9.0, 10.0], &[2, 3]);
        let c = Tensor::concat(1, &[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        assert_eq!(c.narrow(1, 0, 2).unwrap().data(), a.data());
        assert_eq!(c.narrow(1, 2, 3).unwrap().data(), b.data());
    }

    #[test]
    fn mean_axis_reduces_and_keeps_layout() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let m1 = x.mean_axis(1).unwrap();
        assert_eq!(m1.shape(), &[2]);
        assert_eq!(m1.data(), &[2.0, 5.0]);
        let m0 = x.mean_axis(0).unwrap();
        assert_eq!(m0.data(), &[2.5, 3.5, 4.5]);
    }

    #[test]
    fn transpose_last_roundtrips_rank3() {
        let x = t(&(0..24).map(|v| v as f64).collect::<Vec<_>>(), &[2, 3, 4]);
        let y = x.transpose_last().unwrap();
        assert_eq!(y.shape(), &[2, 4, 3]);
        let z = y.transpose_last().unwrap();
        assert_eq!(z.data(), x.data());
    }

    #[test]
    fn mish_matches_definition_pointwise() {
        let xs = [-3.0, -0.5, 0.0, 0.7, 2.0];
        let x = t(&xs, &[5]);
        let y = x.mish().unwrap();
        for (v, out) in xs.iter().zip(y.data()) {
            let want = v * (v.exp().ln_1p()).tanh();
            assert_abs_diff_eq!(*out, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn kl_div_is_zero_for_identical_rows_and_positive_otherwise() {
        let s = t(&[0.3, -0.2, 1.0, 0.0, 0.0, 0.0], &[2, 3]);
        let z = Tensor::kl_div_rows(&s, &s).unwrap();
        assert_abs_diff_eq!(z.item().unwrap(), 0.0, epsilon = 1e-12);
        let u = t(&[0.0; 6], &[2, 3]);
        let d = Tensor::kl_div_rows(&s, &u).unwrap();
        assert!(d.item().unwrap() > 0.0);
    }

    #[test]
    fn forward_is_bit_identical_across_runs() {
        let x = t(&[0.11, -0.7, 3.14, 2.2, -0.03, 0.9], &[2, 3]);
        let run = || {
            let y = x.softmax(1).unwrap().matmul2(&x.transpose_last().unwrap()).unwrap();
            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn pow_scalar_one_is_exact_identity() {
        let x = t(&[0.1234567890123, 7.0, 1e-12], &[3]);
        let y = x.pow_scalar(1.0).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn bce_known_value() {
        // x = 0 logits and z = 0.5 targets: loss = ln 2 exactly.
        let x = t(&[0.0, 0.0], &[2]);
        let l = x.bce_with_logits(&[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(l.item().unwrap(), (2.0f64).ln(), epsilon = 1e-15);
    }
}
