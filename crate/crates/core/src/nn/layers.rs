use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::tensor::Tensor;

use super::{Bound, ParamId, ParamStore};

/// Affine map over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (d_in as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[d_in, d_out], bound, rng);
        let b = store.add_uniform(format!("{name}.b"), &[d_out], bound, rng);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p.var(self.w));
        g.add_broadcast(y, p.var(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[dim], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        LayerNorm { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.layer_norm(x, p.var(self.gamma), p.var(self.beta), 1e-5)
    }
}

/// Single-layer LSTM over `[B, L, d_in]` inputs, gate order `i, f, g, o`.
#[derive(Clone, Debug)]
pub struct Lstm {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
    pub d_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add_uniform(format!("{name}.w_ih"), &[d_in, 4 * hidden], bound, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], bound, rng);
        // forget gate starts open
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::new(&[4 * hidden], b));
        Lstm {
            w_ih,
            w_hh,
            bias,
            d_in,
            hidden,
        }
    }

    /// Run over a `[B, L, d_in]` sequence from zero state; returns the
    /// `[B, L, hidden]` outputs.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let s = g.shape(x).to_vec();
        let (b, l) = (s[0], s[1]);
        let xw = g.matmul(x, p.var(self.w_ih));
        let xw = g.add_broadcast(xw, p.var(self.bias));
        let steps: Vec<Var> = (0..l)
            .map(|t| {
                let v = g.narrow(xw, 1, t, 1);
                g.reshape(v, &[b, 4 * self.hidden])
            })
            .collect();
        let outs = self.unroll(g, p, &steps, b);
        let outs: Vec<Var> = outs
            .into_iter()
            .map(|h| g.reshape(h, &[b, 1, self.hidden]))
            .collect();
        g.concat(&outs, 1)
    }

    /// Run `len` steps where every step sees the same `[B, d_in]` input.
    pub fn forward_repeated(&self, g: &mut Graph, p: &Bound, x: Var, len: usize) -> Var {
        let b = g.shape(x)[0];
        let xw = g.matmul(x, p.var(self.w_ih));
        let xw = g.add_broadcast(xw, p.var(self.bias));
        let steps = vec![xw; len];
        let outs = self.unroll(g, p, &steps, b);
        let outs: Vec<Var> = outs
            .into_iter()
            .map(|h| g.reshape(h, &[b, 1, self.hidden]))
            .collect();
        g.concat(&outs, 1)
    }

    fn unroll(&self, g: &mut Graph, p: &Bound, pre: &[Var], b: usize) -> Vec<Var> {
        let h_dim = self.hidden;
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outs = Vec::with_capacity(pre.len());
        for &xt in pre {
            let gates = match h {
                Some(hv) => {
                    let hw = g.matmul(hv, p.var(self.w_hh));
                    g.add(xt, hw)
                }
                None => xt,
            };
            let i = g.narrow(gates, 1, 0, h_dim);
            let f = g.narrow(gates, 1, h_dim, h_dim);
            let gg = g.narrow(gates, 1, 2 * h_dim, h_dim);
            let o = g.narrow(gates, 1, 3 * h_dim, h_dim);
            let i = g.sigmoid(i);
            let f = g.sigmoid(f);
            let gg = g.tanh(gg);
            let o = g.sigmoid(o);
            let ig = g.mul(i, gg);
            let c_new = match c {
                Some(cv) => {
                    let fc = g.mul(f, cv);
                    g.add(fc, ig)
                }
                None => ig,
            };
            let tc = g.tanh(c_new);
            let h_new = g.mul(o, tc);
            debug_assert_eq!(g.shape(h_new), &[b, h_dim]);
            outs.push(h_new);
            h = Some(h_new);
            c = Some(c_new);
        }
        outs
    }
}

/// Causal 1-D convolution over `[B, L, C]` with dilation; output length
/// equals input length.
#[derive(Clone, Debug)]
pub struct Conv1dCausal {
    w: ParamId,
    b: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl Conv1dCausal {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((kernel * c_in) as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), &[kernel * c_in, c_out], bound, rng);
        let b = store.add_uniform(format!("{name}.b"), &[c_out], bound, rng);
        Conv1dCausal {
            w,
            b,
            kernel,
            dilation,
            c_in,
            c_out,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let taps = g.causal_taps(x, self.kernel, self.dilation);
        let y = g.matmul(taps, p.var(self.w));
        g.add_broadcast(y, p.var(self.b))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    l1: Linear,
    l2: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            l1: Linear::new(store, &format!("{name}.l1"), d_model, d_ff, rng),
            l2: Linear::new(store, &format!("{name}.l2"), d_ff, d_model, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.l1.forward(g, p, x);
        let h = g.relu(h);
        self.l2.forward(g, p, h)
    }
}

/// Scaled dot-product attention with `heads` heads.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && d_model.is_multiple_of(heads), "d_model must divide into heads");
        MultiHeadAttention {
            q: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            v: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            o: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            heads,
            d_model,
        }
    }

    /// `query`: `[B, Sq, d]`, `memory`: `[B, Sk, d]` → `[B, Sq, d]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, query: Var, memory: Var) -> Var {
        let sq = g.shape(query).to_vec();
        let sk = g.shape(memory).to_vec();
        let (b, lq, lk) = (sq[0], sq[1], sk[1]);
        let h = self.heads;
        let dh = self.d_model / h;
        let split = |g: &mut Graph, x: Var, len: usize| g.permute_0213_as(x, [b, len, h, dh], &[b * h, len, dh]);
        let q = self.q.forward(g, p, query);
        let k = self.k.forward(g, p, memory);
        let v = self.v.forward(g, p, memory);
        let q = split(g, q, lq);
        let k = split(g, k, lk);
        let v = split(g, v, lk);
        let ctx = g.attention(q, k, v, 1.0 / (dh as f64).sqrt());
        let ctx = g.permute_0213_as(ctx, [b, h, lq, dh], &[b, lq, self.d_model]);
        self.o.forward(g, p, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn conv_output_is_causal_and_length_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let conv = Conv1dCausal::new(&mut store, "c", 1, 4, 3, 2, &mut rng);
        let run = |x: Vec<f64>| {
            let mut g = Graph::new();
            let p = store.bind(&mut g, false);
            let n = x.len();
            let xv = g.constant(Tensor::new(&[1, n, 1], x));
            let y = conv.forward(&mut g, &p, xv);
            g.value(y).clone()
        };
        let base: Vec<f64> = (0..10).map(|v| v as f64 * 0.1).collect();
        let y0 = run(base.clone());
        assert_eq!(y0.shape(), &[1, 10, 4]);
        let mut changed = base;
        changed[7] += 1.0;
        let y1 = run(changed);
        // outputs before t=7 cannot see the change
        assert_eq!(&y0.data()[..7 * 4], &y1.data()[..7 * 4]);
        assert_ne!(&y0.data()[7 * 4..], &y1.data()[7 * 4..]);
    }

    #[test]
    fn lstm_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 2, 5, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let x = g.constant(Tensor::full(&[3, 7, 2], 0.5));
        let y = lstm.forward(&mut g, &p, x);
        assert_eq!(g.shape(y), &[3, 7, 5]);
        let z = g.constant(Tensor::full(&[3, 2], 0.5));
        let r = lstm.forward_repeated(&mut g, &p, z, 7);
        // identical inputs give identical trajectories
        assert_eq!(g.value(y).data(), g.value(r).data());
    }

    #[test]
    fn attention_rows_are_independent_of_batch_peers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "a", 4, 2, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let data: Vec<f64> = (0..2 * 3 * 4).map(|v| (v as f64 * 0.3).sin()).collect();
        let x = g.constant(Tensor::new(&[2, 3, 4], data.clone()));
        let y = mha.forward(&mut g, &p, x, x);
        let x1 = g.constant(Tensor::new(&[1, 3, 4], data[12..].to_vec()));
        let y1 = mha.forward(&mut g, &p, x1, x1);
        for (a, b) in g.value(y).data()[12..].iter().zip(g.value(y1).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
