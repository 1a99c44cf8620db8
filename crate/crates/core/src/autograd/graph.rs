//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built once per forward pass; every op appends a node and
//! [`Graph::backward`] walks the tape in reverse. Composite ops (attention,
//! layer norm, convolution, the two losses) carry hand-derived backward rules.

use rand::Rng as _;

use super::tensor::{Gradients, ParamId, ParamStore, Tensor};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    Reshape(Var),
    Rows {
        x: Var,
        start: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        kernel: usize,
    },
    AvgPool2d {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SigmoidBce {
        logits: Var,
        labels: Vec<T>,
        scores: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<T>,
        count: usize,
    },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// PyTorch-style adaptive pooling bin `[start, end)` for output cell `i`.
pub fn pool_bin(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = k / 2;
    let hw = h * w;
    let mut cols = vec![T::zero(); cin * k * k * hw];
    for c in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ki;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let src = &x[c * hw + (sy - pad) * w..c * hw + (sy - pad + 1) * w];
                    for xx in 0..w {
                        let sx = xx + kj;
                        if sx >= pad && sx - pad < w {
                            dst[y * w + xx] = src[sx - pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], dx: &mut [T], cin: usize, h: usize, w: usize, k: usize) {
    let pad = k / 2;
    let hw = h * w;
    for c in 0..cin {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y + ki;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let base = c * hw + (sy - pad) * w;
                    for xx in 0..w {
                        let sx = xx + kj;
                        if sx >= pad && sx - pad < w {
                            dx[base + sx - pad] += src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn grad_buf<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, delta: &[T]) {
    let buf = grad_buf(grads, v, delta.len());
    for (a, &d) in buf.iter_mut().zip(delta) {
        *a += d;
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0] {
            Node {
                op: Op::Param(id), ..
            } => self.params.get(*id),
            Node { value, .. } => value.as_ref().expect("non-parameter nodes own values"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).as_matrix();
        let bs = self.shape(b);
        assert_eq!(bs.len(), 2, "matmul rhs must be 2-d");
        assert_eq!(bs[0], k, "matmul inner dims");
        let n = bs[1];
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.value(a).data,
            k as isize,
            1,
            &self.value(b).data,
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "add shapes {:?} vs {:?}", x.shape, y.shape);
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p + q).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add(a, b))
    }

    /// Adds a length-`n` vector to every row of `[m, n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let x = self.value(a);
        let (_, n) = x.as_matrix();
        let b = &self.value(bias).data;
        assert_eq!(b.len(), n, "bias length");
        let data = x
            .data
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(&p, &q)| p + q))
            .collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::AddRow(a, bias))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&v| v.max(T::zero())).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&v| sigmoid(v)).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let x = self.value(a);
        let data = x.data.iter().map(|&v| v * c).collect();
        let shape = x.shape.clone();
        self.push(Tensor::new(shape, data), Op::Scale(a, c))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(shape.iter().product::<usize>(), x.len(), "reshape size");
        let data = x.data.clone();
        self.push(Tensor::new(shape, data), Op::Reshape(a))
    }

    /// Rows `start..end` of a 2-d tensor.
    pub fn rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let (m, n) = x.as_matrix();
        assert!(start < end && end <= m, "row range");
        let data = x.data[start * n..end * n].to_vec();
        self.push(Tensor::new(vec![end - start, n], data), Op::Rows { x: a, start })
    }

    /// Normalizes each row of `[m, n]` then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let x = self.value(a);
        let (m, n) = x.as_matrix();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let nf = T::from_usize(n).expect("usize fits");
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x.data[i * n..(i + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let shape = x.shape.clone();
        self.push(
            Tensor::new(shape, out),
            Op::LayerNorm {
                x: a,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Multi-head scaled dot-product attention; `q: [Lq, d]`, `k, v: [Lk, d]`,
    /// heads split along columns. With `causal`, query `i` sees keys `0..=i`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Var {
        let (lq, d) = self.value(q).as_matrix();
        let (lk, dk) = self.value(k).as_matrix();
        assert_eq!(d, dk, "attention dims");
        assert_eq!(self.value(v).as_matrix(), (lk, d), "attention value shape");
        assert!(heads > 0 && d % heads == 0, "heads must divide the model dim");
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).expect("usize fits").sqrt();
        let mut probs = vec![T::zero(); heads * lq * lk];
        let mut out = vec![T::zero(); lq * d];
        let (qd, kd, vd) = (
            &self.value(q).data,
            &self.value(k).data,
            &self.value(v).data,
        );
        for h in 0..heads {
            let off = h * dh;
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            T::gemm(
                lq,
                dh,
                lk,
                scale,
                &qd[off..],
                d as isize,
                1,
                &kd[off..],
                1,
                d as isize,
                T::zero(),
                p,
                lk as isize,
                1,
            );
            for i in 0..lq {
                let row = &mut p[i * lk..(i + 1) * lk];
                if causal {
                    for s in row.iter_mut().skip(i + 1) {
                        *s = T::neg_infinity();
                    }
                }
                softmax_in_place(row);
            }
            T::gemm(
                lq,
                lk,
                dh,
                T::one(),
                p,
                lk as isize,
                1,
                &vd[off..],
                d as isize,
                1,
                T::zero(),
                &mut out[off..],
                d as isize,
                1,
            );
        }
        self.push(
            Tensor::new(vec![lq, d], out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
        )
    }

    /// Gathers rows of `[V, d]` at `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let (rows, d) = t.as_matrix();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < rows, "embedding id {id} out of range {rows}");
            out.extend_from_slice(&t.data[id * d..(id + 1) * d]);
        }
        self.push(
            Tensor::new(vec![ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Stride-1, same-padded 2-d convolution. `x: [Cin, H, W]`,
    /// `w: [Cout, Cin, k, k]`, `b: [Cout]`; output `[Cout, H, W]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 3, "conv2d input must be [C, H, W]");
        assert_eq!(ws.len(), 4, "conv2d weight must be [Cout, Cin, k, k]");
        let (cin, h, wd) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "conv2d channels");
        assert_eq!(ws[3], k, "square kernels only");
        assert!(k % 2 == 1, "odd kernels only");
        let hw = h * wd;
        let ckk = cin * k * k;
        let cols = im2col(&self.value(x).data, cin, h, wd, k);
        let mut out = vec![T::zero(); cout * hw];
        T::gemm(
            cout,
            ckk,
            hw,
            T::one(),
            &self.value(w).data,
            ckk as isize,
            1,
            &cols,
            hw as isize,
            1,
            T::zero(),
            &mut out,
            hw as isize,
            1,
        );
        let bias = &self.value(b).data;
        for (row, &bv) in out.chunks_mut(hw).zip(bias) {
            for o in row {
                *o += bv;
            }
        }
        self.push(
            Tensor::new(vec![cout, h, wd], out),
            Op::Conv2d {
                x,
                w,
                b,
                kernel: k,
            },
        )
    }

    /// Adaptive average pooling of `[C, H, W]` to `[C, oh, ow]`.
    pub fn adaptive_avg_pool2d(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3, "pool input must be [C, H, W]");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let data = &self.value(x).data;
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for i in 0..oh {
                let (r0, r1) = pool_bin(i, h, oh);
                for j in 0..ow {
                    let (c0, c1) = pool_bin(j, w, ow);
                    let mut s = T::zero();
                    for r in r0..r1 {
                        for cc in c0..c1 {
                            s += data[ch * h * w + r * w + cc];
                        }
                    }
                    out.push(s / T::from_usize((r1 - r0) * (c1 - c0)).expect("usize fits"));
                }
            }
        }
        self.push(Tensor::new(vec![c, oh, ow], out), Op::AvgPool2d { x })
    }

    /// Inverted dropout; identity when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut Rng) -> Var {
        if p <= 0.0 {
            return x;
        }
        let keep = T::c(1.0 / (1.0 - p));
        let t = self.value(x);
        let mask: Vec<T> = (0..t.len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let data = t.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, data), Op::Dropout { x, mask })
    }

    /// Mean binary cross entropy of `sigmoid(logits)` against `labels`, with
    /// scores clamped to `[eps, 1 - eps]` in the loss value.
    pub fn sigmoid_bce(&mut self, logits: Var, labels: &[T], eps: T) -> Var {
        let z = &self.value(logits).data;
        assert_eq!(z.len(), labels.len(), "bce length");
        let scores: Vec<T> = z.iter().map(|&v| sigmoid(v)).collect();
        let loss = bce_value(&scores, labels, eps);
        self.push(
            Tensor::scalar(loss),
            Op::SigmoidBce {
                logits,
                labels: labels.to_vec(),
                scores,
            },
        )
    }

    /// Mean of `-log softmax(logits)[target]` over rows where `mask` is set.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Var {
        let x = self.value(logits);
        let (n, v) = x.as_matrix();
        assert_eq!(targets.len(), n, "one target per row");
        assert_eq!(mask.len(), n, "one mask flag per row");
        let count = mask.iter().filter(|&&m| m).count();
        assert!(count > 0, "cross entropy over zero positions");
        let mut probs = vec![T::zero(); n * v];
        let mut total = T::zero();
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = &mut probs[i * v..(i + 1) * v];
            row.copy_from_slice(&x.data[i * v..(i + 1) * v]);
            softmax_in_place(row);
            total -= row[targets[i]].max(T::min_positive_value()).ln();
        }
        let loss = total / T::from_usize(count).expect("usize fits");
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Gradients of the scalar `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::new(self.params.len());
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate_slice(*id, &g),
                Op::MatMul(a, b) => {
                    let at = self.value(*a);
                    let bt = self.value(*b);
                    let (m, k) = at.as_matrix();
                    let n = bt.shape[1];
                    let da = grad_buf(&mut grads, *a, m * k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        &g,
                        n as isize,
                        1,
                        &bt.data,
                        1,
                        n as isize,
                        T::one(),
                        da,
                        k as isize,
                        1,
                    );
                    let db = grad_buf(&mut grads, *b, k * n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        &at.data,
                        1,
                        k as isize,
                        &g,
                        n as isize,
                        1,
                        T::one(),
                        db,
                        n as isize,
                        1,
                    );
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &g);
                    add_into(&mut grads, *b, &g);
                }
                Op::AddRow(a, bias) => {
                    add_into(&mut grads, *a, &g);
                    let n = self.value(*bias).len();
                    let db = grad_buf(&mut grads, *bias, n);
                    for row in g.chunks(n) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d += r;
                        }
                    }
                }
                Op::Relu(a) => {
                    let y = &node.value.as_ref().expect("owned").data;
                    let d: Vec<T> = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| if yv > T::zero() { gv } else { T::zero() })
                        .collect();
                    add_into(&mut grads, *a, &d);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value.as_ref().expect("owned").data;
                    let d: Vec<T> = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| gv * yv * (T::one() - yv))
                        .collect();
                    add_into(&mut grads, *a, &d);
                }
                Op::Scale(a, c) => {
                    let d: Vec<T> = g.iter().map(|&gv| gv * *c).collect();
                    add_into(&mut grads, *a, &d);
                }
                Op::Reshape(a) => add_into(&mut grads, *a, &g),
                Op::Rows { x, start } => {
                    let (m, n) = self.value(*x).as_matrix();
                    let dx = grad_buf(&mut grads, *x, m * n);
                    for (d, &gv) in dx[start * n..].iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (m, n) = self.value(*x).as_matrix();
                    let gm = &self.value(*gamma).data;
                    let nf = T::from_usize(n).expect("usize fits");
                    let mut dgamma = vec![T::zero(); n];
                    let mut dbeta = vec![T::zero(); n];
                    let mut dx = vec![T::zero(); m * n];
                    let mut dxhat = vec![T::zero(); n];
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        let hr = &xhat[i * n..(i + 1) * n];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..n {
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                            dxhat[j] = gr[j] * gm[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * hr[j];
                        }
                        for j in 0..n {
                            dx[i * n + j] = rstd[i] / nf * (nf * dxhat[j] - s1 - hr[j] * s2);
                        }
                    }
                    add_into(&mut grads, *x, &dx);
                    add_into(&mut grads, *gamma, &dgamma);
                    add_into(&mut grads, *beta, &dbeta);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (lq, d) = self.value(*q).as_matrix();
                    let (lk, _) = self.value(*k).as_matrix();
                    let dh = d / heads;
                    let scale = T::one() / T::from_usize(dh).expect("usize fits").sqrt();
                    let (qd, kd, vd) = (
                        &self.value(*q).data,
                        &self.value(*k).data,
                        &self.value(*v).data,
                    );
                    let mut dq = vec![T::zero(); lq * d];
                    let mut dk = vec![T::zero(); lk * d];
                    let mut dv = vec![T::zero(); lk * d];
                    let mut ds = vec![T::zero(); lq * lk];
                    for h in 0..*heads {
                        let off = h * dh;
                        let p = &probs[h * lq * lk..(h + 1) * lq * lk];
                        // dP = G_h V_h^T
                        T::gemm(
                            lq,
                            dh,
                            lk,
                            T::one(),
                            &g[off..],
                            d as isize,
                            1,
                            &vd[off..],
                            1,
                            d as isize,
                            T::zero(),
                            &mut ds,
                            lk as isize,
                            1,
                        );
                        // dV_h += P^T G_h
                        T::gemm(
                            lk,
                            lq,
                            dh,
                            T::one(),
                            p,
                            1,
                            lk as isize,
                            &g[off..],
                            d as isize,
                            1,
                            T::one(),
                            &mut dv[off..],
                            d as isize,
                            1,
                        );
                        for i in 0..lq {
                            let pr = &p[i * lk..(i + 1) * lk];
                            let dr = &mut ds[i * lk..(i + 1) * lk];
                            let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                            for (x, &pv) in dr.iter_mut().zip(pr) {
                                *x = pv * (*x - dot);
                            }
                        }
                        T::gemm(
                            lq,
                            lk,
                            dh,
                            scale,
                            &ds,
                            lk as isize,
                            1,
                            &kd[off..],
                            d as isize,
                            1,
                            T::one(),
                            &mut dq[off..],
                            d as isize,
                            1,
                        );
                        T::gemm(
                            lk,
                            lq,
                            dh,
                            scale,
                            &ds,
                            1,
                            lk as isize,
                            &qd[off..],
                            d as isize,
                            1,
                            T::one(),
                            &mut dk[off..],
                            d as isize,
                            1,
                        );
                    }
                    add_into(&mut grads, *q, &dq);
                    add_into(&mut grads, *k, &dk);
                    add_into(&mut grads, *v, &dv);
                }
                Op::Embedding { table, ids } => {
                    let (rows, d) = self.value(*table).as_matrix();
                    let dt = grad_buf(&mut grads, *table, rows * d);
                    for (i, &id) in ids.iter().enumerate() {
                        for (a, &b) in dt[id * d..(id + 1) * d].iter_mut().zip(&g[i * d..]) {
                            *a += b;
                        }
                    }
                }
                Op::Conv2d { x, w, b, kernel } => {
                    let xs = &self.value(*x).shape;
                    let (cin, h, wd) = (xs[0], xs[1], xs[2]);
                    let cout = self.value(*w).shape[0];
                    let k = *kernel;
                    let hw = h * wd;
                    let ckk = cin * k * k;
                    let cols = im2col(&self.value(*x).data, cin, h, wd, k);
                    let dw = grad_buf(&mut grads, *w, cout * ckk);
                    T::gemm(
                        cout,
                        hw,
                        ckk,
                        T::one(),
                        &g,
                        hw as isize,
                        1,
                        &cols,
                        1,
                        hw as isize,
                        T::one(),
                        dw,
                        ckk as isize,
                        1,
                    );
                    let db: Vec<T> = g.chunks(hw).map(|row| row.iter().copied().sum()).collect();
                    add_into(&mut grads, *b, &db);
                    let mut dcols = vec![T::zero(); ckk * hw];
                    T::gemm(
                        ckk,
                        cout,
                        hw,
                        T::one(),
                        &self.value(*w).data,
                        1,
                        ckk as isize,
                        &g,
                        hw as isize,
                        1,
                        T::zero(),
                        &mut dcols,
                        hw as isize,
                        1,
                    );
                    let dx = grad_buf(&mut grads, *x, cin * hw);
                    col2im(&dcols, dx, cin, h, wd, k);
                }
                Op::AvgPool2d { x } => {
                    let xs = &self.value(*x).shape;
                    let (c, h, w) = (xs[0], xs[1], xs[2]);
                    let os = &node.value.as_ref().expect("owned").shape;
                    let (oh, ow) = (os[1], os[2]);
                    let dx = grad_buf(&mut grads, *x, c * h * w);
                    let mut idx = 0;
                    for ch in 0..c {
                        for i in 0..oh {
                            let (r0, r1) = pool_bin(i, h, oh);
                            for j in 0..ow {
                                let (c0, c1) = pool_bin(j, w, ow);
                                let share = g[idx]
                                    / T::from_usize((r1 - r0) * (c1 - c0)).expect("usize fits");
                                idx += 1;
                                for r in r0..r1 {
                                    for cc in c0..c1 {
                                        dx[ch * h * w + r * w + cc] += share;
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let d: Vec<T> = g.iter().zip(mask).map(|(&gv, &m)| gv * m).collect();
                    add_into(&mut grads, *x, &d);
                }
                Op::SigmoidBce {
                    logits,
                    labels,
                    scores,
                } => {
                    let r = T::from_usize(labels.len()).expect("usize fits");
                    let d: Vec<T> = scores
                        .iter()
                        .zip(labels)
                        .map(|(&s, &y)| g[0] * (s - y) / r)
                        .collect();
                    add_into(&mut grads, *logits, &d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    mask,
                    probs,
                    count,
                } => {
                    let (n, v) = self.value(*logits).as_matrix();
                    let scale = g[0] / T::from_usize(*count).expect("usize fits");
                    let mut d = vec![T::zero(); n * v];
                    for i in 0..n {
                        if !mask[i] {
                            continue;
                        }
                        for j in 0..v {
                            d[i * v + j] = probs[i * v + j] * scale;
                        }
                        d[i * v + targets[i]] -= scale;
                    }
                    add_into(&mut grads, *logits, &d);
                }
            }
        }
        out
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `-(1/R) sum [y log s + (1 - y) log(1 - s)]` with `s` clamped to `[eps, 1 - eps]`.
pub fn bce_value<T: Scalar>(scores: &[T], labels: &[T], eps: T) -> T {
    let r = T::from_usize(scores.len().max(1)).expect("usize fits");
    let total: T = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let s = s.max(eps).min(T::one() - eps);
            y * s.ln() + (T::one() - y) * (T::one() - s).ln()
        })
        .sum();
    -total / r
}
