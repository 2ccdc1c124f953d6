//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation applied during a forward pass.
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every node that transitively depends on a gradient-requiring leaf.

use crate::tensor::{gemm, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        tb: bool,
        batch: usize,
        shared_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a + b` where `b` repeats over the leading axes of `a`.
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    /// `softmax(s * a)` over the last axis.
    Softmax(Var, f64),
    /// Fused `softmax(scale * q k^T) v`; keeps only the probabilities.
    Attention {
        q: Var,
        k: Var,
        v: Var,
        probs: Vec<f64>,
        scale: f64,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        outer: usize,
        axis_len: usize,
        inner: usize,
        start: usize,
        len: usize,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
    },
    Permute0213 {
        x: Var,
        dims: [usize; 4],
    },
    CausalTaps {
        x: Var,
        kernel: usize,
        dilation: usize,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    /// Scalar node whose input gradients were computed alongside its value.
    Custom {
        inputs: Vec<Var>,
        grads: Vec<Tensor>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `exp(x)` for `x <= 0` (positive scales keep softmax arguments there).
/// Range reduction to `|r| <= ln2 / 2` plus a degree-13 Taylor polynomial;
/// within a few ulp of `f64::exp`, branch-free so row loops vectorize.
#[inline]
fn exp_nonpositive(x: f64) -> f64 {
    // adding 1.5 * 2^52 rounds to nearest and leaves k in the low bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let x = x.max(-708.0);
    let t = x * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    // two-part ln2: k * hi is exact for every reachable k
    let r = (x - k * 6.931_471_803_691_238e-1) - k * 1.908_214_929_270_587_7e-10;
    let mut p: f64 = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    // k >= -1022, so 2^k is a normal number
    p * f64::from_bits(t.to_bits().wrapping_add(1023) << 52)
}

impl Graph {
    pub fn new() -> Self {
        crate::heap::keep_large_blocks();
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that receives a gradient (trainable parameter or probed input).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Matrix product over the last two axes.
    ///
    /// `b` is either rank 2 (shared by every leading index of `a`) or has the
    /// same leading axes as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` over the last two axes of batched operands.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        assert!(sa.len() >= 2 && sb.len() >= 2, "matmul needs rank >= 2");
        let k = sa[sa.len() - 1];
        let (kb, n) = if tb {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        assert_eq!(k, kb, "matmul inner dims differ: {:?} x {:?}", sa, sb);
        let (batch, m, shared_b) = if sb.len() == 2 && !tb {
            // fold every leading axis of `a` into the row count
            (1, sa[..sa.len() - 1].iter().product(), true)
        } else {
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let batch_b: usize = sb[..sb.len() - 2].iter().product();
            assert!(
                batch_b == batch || batch_b == 1,
                "matmul batch dims differ: {:?} x {:?}",
                sa,
                sb
            );
            (batch, sa[sa.len() - 2], batch_b == 1)
        };
        let mut out_shape = sa[..sa.len() - 1].to_vec();
        out_shape.push(n);
        let mut out = vec![0.0; batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for bi in 0..batch {
                let boff = if shared_b { 0 } else { bi * k * n };
                gemm(
                    m,
                    k,
                    n,
                    &av[bi * m * k..(bi + 1) * m * k],
                    false,
                    &bv[boff..boff + k * n],
                    tb,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
        }
        let needs = self.ng(a) || self.ng(b);
        self.push(
            Tensor::new(&out_shape, out),
            Op::MatMul {
                a,
                b,
                tb,
                batch,
                shared_b,
                m,
                k,
                n,
            },
            needs,
        )
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(va.shape(), vb.shape(), "elementwise shape mismatch");
        Tensor::new(
            va.shape(),
            va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(t, Op::Mul(a, b), ng)
    }

    /// `a + b`, with `b` matching the trailing axes of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let nb = vb.len();
        assert!(
            nb > 0 && va.len().is_multiple_of(nb) && va.shape().ends_with(vb.shape()),
            "cannot broadcast {:?} onto {:?}",
            vb.shape(),
            va.shape()
        );
        let mut out = va.clone();
        for chunk in out.data_mut().chunks_mut(nb) {
            for (o, &x) in chunk.iter_mut().zip(vb.data()) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::AddBroadcast(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(t, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(t, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(t, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(t, Op::Exp(a), ng)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        self.scaled_softmax(a, 1.0)
    }

    /// `softmax(s * a)` over the last axis, without materializing `s * a`.
    pub fn scaled_softmax(&mut self, a: Var, s: f64) -> Var {
        let mut t = self.value(a).clone();
        let n = t.last_dim();
        for row in t.data_mut().chunks_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in row.iter_mut() {
                *v = exp_nonpositive(s * (*v - mx));
            }
            let inv = 1.0 / row.iter().sum::<f64>();
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
        let ng = self.ng(a);
        self.push(t, Op::Softmax(a, s), ng)
    }

    /// Scaled dot-product attention `softmax(scale * q k^T) v` for
    /// `q: [B, Lq, d]`, `k, v: [B, Lk, d]`. The score matrix is never stored
    /// separately from the probabilities.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, scale: f64) -> Var {
        let (sq, sk) = (self.shape(q).to_vec(), self.shape(k).to_vec());
        assert!(sq.len() == 3 && sk.len() == 3, "attention needs rank-3 inputs");
        assert_eq!(self.shape(v), &sk[..], "keys and values differ in shape");
        let (b, lq, lk, d) = (sq[0], sq[1], sk[1], sq[2]);
        assert!(sk[0] == b && sk[2] == d, "attention shapes {sq:?} vs {sk:?}");
        let mut probs = vec![0.0; b * lq * lk];
        let mut out = vec![0.0; b * lq * d];
        {
            let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
            for bi in 0..b {
                let p = &mut probs[bi * lq * lk..(bi + 1) * lq * lk];
                let kb = &kv[bi * lk * d..(bi + 1) * lk * d];
                gemm(lq, d, lk, &qv[bi * lq * d..(bi + 1) * lq * d], false, kb, true, p, false);
                for row in p.chunks_mut(lk) {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    for x in row.iter_mut() {
                        *x = exp_nonpositive(scale * (*x - mx));
                    }
                    let inv = 1.0 / row.iter().sum::<f64>();
                    for x in row.iter_mut() {
                        *x *= inv;
                    }
                }
                let vb = &vv[bi * lk * d..(bi + 1) * lk * d];
                gemm(lq, lk, d, p, false, vb, false, &mut out[bi * lq * d..(bi + 1) * lq * d], false);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            Tensor::new(&[b, lq, d], out),
            Op::Attention { q, k, v, probs, scale },
            ng,
        )
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let n = vx.last_dim();
        assert_eq!(self.value(gamma).len(), n);
        assert_eq!(self.value(beta).len(), n);
        let rows = vx.len() / n;
        let mut xhat = vec![0.0; vx.len()];
        let mut rstd = vec![0.0; rows];
        for (r, row) in vx.data().chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for (j, v) in row.iter().enumerate() {
                xhat[r * n + j] = (v - mean) * rs;
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, &h)| h * g[i % n] + b[i % n])
            .collect();
        let shape = vx.shape().to_vec();
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            Tensor::new(&shape, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Scales each last-axis vector to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        let n = t.last_dim();
        let mut norms = Vec::with_capacity(t.len() / n);
        for row in t.data_mut().chunks_mut(n) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            norms.push(norm);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        let ng = self.ng(x);
        self.push(t, Op::L2Normalize { x, norms }, ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        let ng = self.ng(a);
        self.push(t, Op::Reshape(a), ng)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let shape = self.shape(x).to_vec();
        let (outer, axis_len, inner) = split_axis(&shape, axis);
        assert!(start + len <= axis_len, "narrow out of range");
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * axis_len * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ng = self.ng(x);
        self.push(
            Tensor::new(&out_shape, out),
            Op::Narrow {
                x,
                outer,
                axis_len,
                inner,
                start,
                len,
            },
            ng,
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let first = self.shape(parts[0]).to_vec();
        let (outer, _, inner) = split_axis(&first, axis);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            assert_eq!(s.len(), first.len());
            assert_eq!(split_axis(s, axis).0, outer, "concat outer mismatch");
            assert_eq!(split_axis(s, axis).2, inner, "concat inner mismatch");
            total += s[axis];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(
            Tensor::new(&shape, out),
            Op::Concat {
                parts: parts.iter().map(|&p| (p, self.shape(p)[axis])).collect(),
                outer,
                inner,
            },
            ng,
        )
    }

    /// `[a, b, c, d] -> [a, c, b, d]`.
    pub fn permute_0213(&mut self, x: Var) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 4);
        self.permute_0213_as(x, [s[0], s[1], s[2], s[3]], &[s[0], s[2], s[1], s[3]])
    }

    /// View `x` as `dims`, swap the middle two axes and return the result
    /// with shape `out_shape`; folds the reshapes around a head split into
    /// one copy.
    pub fn permute_0213_as(&mut self, x: Var, dims: [usize; 4], out_shape: &[usize]) -> Var {
        let n: usize = dims.iter().product();
        assert_eq!(self.value(x).len(), n, "permute view {dims:?} of {:?}", self.shape(x));
        assert_eq!(out_shape.iter().product::<usize>(), n);
        let out = permute_0213(self.value(x).data(), dims);
        let ng = self.ng(x);
        self.push(Tensor::new(out_shape, out), Op::Permute0213 { x, dims }, ng)
    }

    /// Stack causally shifted copies of a `[B, L, C]` sequence into
    /// `[B, L, kernel·C]`; tap `k` reads timestamp `t − (kernel−1−k)·dilation`
    /// and zero before the start of the sequence.
    pub fn causal_taps(&mut self, x: Var, kernel: usize, dilation: usize) -> Var {
        let s = self.shape(x).to_vec();
        assert_eq!(s.len(), 3);
        let (b, l, c) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = vec![0.0; b * l * kernel * c];
        for bi in 0..b {
            for t in 0..l {
                for k in 0..kernel {
                    let shift = (kernel - 1 - k) * dilation;
                    if t >= shift {
                        let from = (bi * l + t - shift) * c;
                        let to = ((bi * l + t) * kernel + k) * c;
                        out[to..to + c].copy_from_slice(&src[from..from + c]);
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            Tensor::new(&[b, l, kernel * c], out),
            Op::CausalTaps {
                x,
                kernel,
                dilation,
            },
            ng,
        )
    }

    /// Select rows of a rank-2 table.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let c = self.shape(table)[1];
        self.gather_rows_as(table, idx, &[idx.len(), c])
    }

    /// [`Graph::gather_rows`] with the result viewed as `shape`.
    pub fn gather_rows_as(&mut self, table: Var, idx: &[usize], shape: &[usize]) -> Var {
        let s = self.shape(table).to_vec();
        assert_eq!(s.len(), 2);
        let c = s[1];
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < s[0], "gather index {} out of range {}", i, s[0]);
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        self.push(
            Tensor::new(shape, out),
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
            },
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(t, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).mean());
        let ng = self.ng(a);
        self.push(t, Op::Mean(a), ng)
    }

    /// Record a scalar whose gradient with respect to each input is already
    /// known. `grads[i]` must have the shape of `inputs[i]`.
    pub fn custom_scalar(&mut self, value: f64, inputs: &[Var], grads: Vec<Tensor>) -> Var {
        assert_eq!(inputs.len(), grads.len());
        for (&v, g) in inputs.iter().zip(&grads) {
            assert_eq!(self.shape(v), g.shape(), "custom gradient shape mismatch");
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        self.push(
            Tensor::scalar(value),
            Op::Custom {
                inputs: inputs.to_vec(),
                grads,
            },
            ng,
        )
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, out: Var) -> Grads {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Tensor::full(self.value(out).shape(), 1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        Grads { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_with(
        &self,
        grads: &mut [Option<Tensor>],
        v: Var,
        f: impl FnOnce(&mut [f64]),
    ) {
        if !self.ng(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.shape(v)));
        }
        f(slot.as_mut().unwrap().data_mut());
    }

    fn backprop_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                tb,
                batch,
                shared_b,
                m,
                k,
                n,
            } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let g = dy.data();
                if self.ng(a) {
                    self.accumulate_with(grads, a, |da| {
                        for bi in 0..batch {
                            let boff = if shared_b { 0 } else { bi * k * n };
                            gemm(
                                m,
                                n,
                                k,
                                &g[bi * m * n..(bi + 1) * m * n],
                                false,
                                &bv[boff..boff + k * n],
                                !tb,
                                &mut da[bi * m * k..(bi + 1) * m * k],
                                true,
                            );
                        }
                    });
                }
                if self.ng(b) {
                    self.accumulate_with(grads, b, |db| {
                        for bi in 0..batch {
                            let boff = if shared_b { 0 } else { bi * k * n };
                            let a_blk = &av[bi * m * k..(bi + 1) * m * k];
                            let g_blk = &g[bi * m * n..(bi + 1) * m * n];
                            if tb {
                                gemm(n, m, k, g_blk, true, a_blk, false, &mut db[boff..boff + k * n], true);
                            } else {
                                gemm(k, m, n, a_blk, true, g_blk, false, &mut db[boff..boff + k * n], true);
                            }
                        }
                    });
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, dy.clone());
                self.accumulate(grads, b, dy.map(|v| -v));
            }
            &Op::Mul(a, b) => {
                if self.ng(a) {
                    let vb = self.value(b);
                    let g = Tensor::new(
                        dy.shape(),
                        dy.data().iter().zip(vb.data()).map(|(d, x)| d * x).collect(),
                    );
                    self.accumulate(grads, a, g);
                }
                if self.ng(b) {
                    let va = self.value(a);
                    let g = Tensor::new(
                        dy.shape(),
                        dy.data().iter().zip(va.data()).map(|(d, x)| d * x).collect(),
                    );
                    self.accumulate(grads, b, g);
                }
            }
            &Op::AddBroadcast(a, b) => {
                self.accumulate(grads, a, dy.clone());
                let nb = self.value(b).len();
                self.accumulate_with(grads, b, |db| {
                    for chunk in dy.data().chunks(nb) {
                        for (d, &v) in db.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                });
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, dy.map(|v| v * s)),
            &Op::Tanh(a) => {
                let g = zip_map(dy, y, |d, t| d * (1.0 - t * t));
                self.accumulate(grads, a, g);
            }
            &Op::Sigmoid(a) => {
                let g = zip_map(dy, y, |d, s| d * s * (1.0 - s));
                self.accumulate(grads, a, g);
            }
            &Op::Relu(a) => {
                let g = zip_map(dy, y, |d, r| if r > 0.0 { d } else { 0.0 });
                self.accumulate(grads, a, g);
            }
            &Op::Exp(a) => {
                let g = zip_map(dy, y, |d, e| d * e);
                self.accumulate(grads, a, g);
            }
            &Op::Softmax(a, scale) => {
                let n = y.last_dim();
                let mut g = dy.clone();
                for (grow, yrow) in g.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(d, s)| d * s).sum();
                    for (d, s) in grow.iter_mut().zip(yrow) {
                        *d = scale * s * (*d - dot);
                    }
                }
                self.accumulate(grads, a, g);
            }
            Op::Attention { q, k, v, probs, scale } => {
                let (q, k, v, scale) = (*q, *k, *v, *scale);
                let sq = self.shape(q);
                let (b, lq, d) = (sq[0], sq[1], sq[2]);
                let lk = self.shape(k)[1];
                let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
                let g = dy.data();
                // dS = scale * P * (dP - rowsum(dP * P)), with dP = dy v^T
                let mut ds = vec![0.0; b * lq * lk];
                for bi in 0..b {
                    let dsb = &mut ds[bi * lq * lk..(bi + 1) * lq * lk];
                    let vb = &vv[bi * lk * d..(bi + 1) * lk * d];
                    gemm(lq, d, lk, &g[bi * lq * d..(bi + 1) * lq * d], false, vb, true, dsb, false);
                    let pb = &probs[bi * lq * lk..(bi + 1) * lq * lk];
                    for (drow, prow) in dsb.chunks_mut(lk).zip(pb.chunks(lk)) {
                        let dot: f64 = drow.iter().zip(prow).map(|(a, p)| a * p).sum();
                        for (x, p) in drow.iter_mut().zip(prow) {
                            *x = scale * p * (*x - dot);
                        }
                    }
                }
                self.accumulate_with(grads, q, |dq| {
                    for bi in 0..b {
                        let kb = &kv[bi * lk * d..(bi + 1) * lk * d];
                        let dsb = &ds[bi * lq * lk..(bi + 1) * lq * lk];
                        gemm(lq, lk, d, dsb, false, kb, false, &mut dq[bi * lq * d..(bi + 1) * lq * d], true);
                    }
                });
                self.accumulate_with(grads, k, |dk| {
                    for bi in 0..b {
                        let qb = &qv[bi * lq * d..(bi + 1) * lq * d];
                        let dsb = &ds[bi * lq * lk..(bi + 1) * lq * lk];
                        gemm(lk, lq, d, dsb, true, qb, false, &mut dk[bi * lk * d..(bi + 1) * lk * d], true);
                    }
                });
                self.accumulate_with(grads, v, |dv| {
                    for bi in 0..b {
                        let pb = &probs[bi * lq * lk..(bi + 1) * lq * lk];
                        let gb = &g[bi * lq * d..(bi + 1) * lq * d];
                        gemm(lk, lq, d, pb, true, gb, false, &mut dv[bi * lk * d..(bi + 1) * lk * d], true);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = y.last_dim();
                let gv = self.value(*gamma).data();
                if self.ng(*x) {
                    let mut dx = vec![0.0; dy.len()];
                    for (r, (drow, hrow)) in dy.data().chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dh = drow[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hrow[j];
                        }
                        let rs = rstd[r];
                        for j in 0..n {
                            let dh = drow[j] * gv[j];
                            dx[r * n + j] = rs / n as f64 * (n as f64 * dh - s1 - hrow[j] * s2);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(dy.shape(), dx));
                }
                self.accumulate_with(grads, *gamma, |dg| {
                    for (drow, hrow) in dy.data().chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            dg[j] += drow[j] * hrow[j];
                        }
                    }
                });
                self.accumulate_with(grads, *beta, |db| {
                    for drow in dy.data().chunks(n) {
                        for j in 0..n {
                            db[j] += drow[j];
                        }
                    }
                });
            }
            Op::L2Normalize { x, norms } => {
                let n = y.last_dim();
                let mut g = dy.clone();
                for ((grow, yrow), norm) in g.data_mut().chunks_mut(n).zip(y.data().chunks(n)).zip(norms) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(d, v)| d * v).sum();
                    for (d, v) in grow.iter_mut().zip(yrow) {
                        *d = (*d - v * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, g);
            }
            &Op::Reshape(a) => {
                let g = dy.clone().reshaped(self.shape(a));
                self.accumulate(grads, a, g);
            }
            &Op::Narrow {
                x,
                outer,
                axis_len,
                inner,
                start,
                len,
            } => {
                self.accumulate_with(grads, x, |dx| {
                    for o in 0..outer {
                        let base = o * axis_len * inner + start * inner;
                        let src = &dy.data()[o * len * inner..(o + 1) * len * inner];
                        for (d, s) in dx[base..base + len * inner].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = dy.len() / (outer * inner);
                let mut offset = 0;
                for &(p, axis_len) in parts {
                    let plen = axis_len * inner;
                    self.accumulate_with(grads, p, |dp| {
                        for o in 0..*outer {
                            let src = &dy.data()[o * total * inner + offset..o * total * inner + offset + plen];
                            for (d, s) in dp[o * plen..(o + 1) * plen].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    offset += plen;
                }
            }
            &Op::Permute0213 { x, dims } => {
                let back = permute_0213(dy.data(), [dims[0], dims[2], dims[1], dims[3]]);
                self.accumulate(grads, x, Tensor::new(self.shape(x), back));
            }
            &Op::CausalTaps {
                x,
                kernel,
                dilation,
            } => {
                let s = self.shape(x).to_vec();
                let (b, l, c) = (s[0], s[1], s[2]);
                self.accumulate_with(grads, x, |dx| {
                    let g = dy.data();
                    for bi in 0..b {
                        for t in 0..l {
                            for k in 0..kernel {
                                let shift = (kernel - 1 - k) * dilation;
                                if t >= shift {
                                    let to = (bi * l + t - shift) * c;
                                    let from = ((bi * l + t) * kernel + k) * c;
                                    for j in 0..c {
                                        dx[to + j] += g[from + j];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::GatherRows { table, idx } => {
                let c = self.shape(*table)[1];
                self.accumulate_with(grads, *table, |dt| {
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..c {
                            dt[i * c + j] += dy.data()[r * c + j];
                        }
                    }
                });
            }
            &Op::Sum(a) => {
                let d = dy.item();
                self.accumulate(grads, a, Tensor::full(self.shape(a), d));
            }
            &Op::Mean(a) => {
                let n = self.value(a).len().max(1) as f64;
                let d = dy.item() / n;
                self.accumulate(grads, a, Tensor::full(self.shape(a), d));
            }
            Op::Custom { inputs, grads: g } => {
                let d = dy.item();
                for (&v, gv) in inputs.iter().zip(g) {
                    self.accumulate(grads, v, gv.map(|x| x * d));
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn permute_0213(src: &[f64], dims: [usize; 4]) -> Vec<f64> {
    let [a, b, c, d] = dims;
    let mut out = vec![0.0; src.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let from = ((i * b + j) * c + k) * d;
                let to = ((i * c + k) * b + j) * d;
                out[to..to + d].copy_from_slice(&src[from..from + d]);
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
