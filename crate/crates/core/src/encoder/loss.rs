//! Instance-wise and temporal contrastive losses over overlapping fragments.
//!
//! For anchor `u = ẑ_i^t` (fragment one) every term is a softmax
//! cross-entropy whose positive logit is `u · ẑ_i^{t+}` (fragment two, same
//! instance and timestamp). Similarities are raw dot products.
//!
//! * instance-wise: negatives `u · ẑ_j^{t+}` for all `j ≠ i` and
//!   `u · ẑ_j^t` for all `j ≠ i`;
//! * temporal: negatives `u · ẑ_i^{t'+}` and `u · ẑ_i^{t'}` for all
//!   overlap timestamps `t' ≠ t`.
//!
//! The batch loss sums both terms over instances and overlap timestamps and
//! divides by `N_B · (L − 1)`, where `L` is the overlap length.

use crate::error::{DacrError, Result};

/// Fragment embeddings restricted to the overlap, both `[batch, len, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingPair {
    batch: usize,
    len: usize,
    dim: usize,
    anchor: Vec<f64>,
    positive: Vec<f64>,
}

impl EmbeddingPair {
    pub fn new(batch: usize, len: usize, dim: usize, anchor: Vec<f64>, positive: Vec<f64>) -> Result<Self> {
        let n = batch * len * dim;
        if batch == 0 || len == 0 || dim == 0 {
            return Err(DacrError::Shape(format!(
                "embedding pair needs non-empty axes, got [{batch}, {len}, {dim}]"
            )));
        }
        if anchor.len() != n || positive.len() != n {
            return Err(DacrError::Shape(format!(
                "expected {n} values per fragment, got {} and {}",
                anchor.len(),
                positive.len()
            )));
        }
        if !anchor.iter().chain(&positive).all(|v| v.is_finite()) {
            return Err(DacrError::DataIntegrity("non-finite embedding".into()));
        }
        Ok(EmbeddingPair {
            batch,
            len,
            dim,
            anchor,
            positive,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `ẑ_i^t` from the first fragment.
    pub fn anchor(&self, i: usize, t: usize) -> &[f64] {
        let o = (i * self.len + t) * self.dim;
        &self.anchor[o..o + self.dim]
    }

    /// `ẑ_i^{t+}` from the second fragment.
    pub fn positive(&self, i: usize, t: usize) -> &[f64] {
        let o = (i * self.len + t) * self.dim;
        &self.positive[o..o + self.dim]
    }

    fn offset(&self, i: usize, t: usize) -> usize {
        (i * self.len + t) * self.dim
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which fragment a logit's partner embedding comes from.
#[derive(Clone, Copy)]
enum Side {
    Anchor,
    Positive,
}

/// One softmax cross-entropy term: logits with partner coordinates.
/// The positive logit is always the first entry.
struct Term {
    logits: Vec<f64>,
    partners: Vec<(Side, usize, usize)>,
}

impl Term {
    fn instance(p: &EmbeddingPair, i: usize, t: usize) -> Term {
        let u = p.anchor(i, t);
        let mut logits = Vec::with_capacity(2 * p.batch);
        let mut partners = Vec::with_capacity(2 * p.batch);
        logits.push(dot(u, p.positive(i, t)));
        partners.push((Side::Positive, i, t));
        for j in (0..p.batch).filter(|&j| j != i) {
            logits.push(dot(u, p.positive(j, t)));
            partners.push((Side::Positive, j, t));
            logits.push(dot(u, p.anchor(j, t)));
            partners.push((Side::Anchor, j, t));
        }
        Term { logits, partners }
    }

    fn temporal(p: &EmbeddingPair, i: usize, t: usize) -> Term {
        let u = p.anchor(i, t);
        let mut logits = Vec::with_capacity(2 * p.len);
        let mut partners = Vec::with_capacity(2 * p.len);
        logits.push(dot(u, p.positive(i, t)));
        partners.push((Side::Positive, i, t));
        for s in (0..p.len).filter(|&s| s != t) {
            logits.push(dot(u, p.positive(i, s)));
            partners.push((Side::Positive, i, s));
            logits.push(dot(u, p.anchor(i, s)));
            partners.push((Side::Anchor, i, s));
        }
        Term { logits, partners }
    }

    fn log_sum_exp(&self) -> f64 {
        let mx = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + self.logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln()
    }

    fn value(&self) -> f64 {
        // the positive logit is part of the sum, so this is never negative
        (self.log_sum_exp() - self.logits[0]).max(0.0)
    }

    /// Add `scale · ∂value/∂z` into the two gradient buffers.
    fn backprop(&self, p: &EmbeddingPair, i: usize, t: usize, scale: f64, g_anchor: &mut [f64], g_positive: &mut [f64]) {
        let lse = self.log_sum_exp();
        let d = p.dim;
        let u_off = p.offset(i, t);
        let mut du = vec![0.0; d];
        for (k, (&logit, &(side, j, s))) in self.logits.iter().zip(&self.partners).enumerate() {
            let mut w = (logit - lse).exp();
            if k == 0 {
                w -= 1.0;
            }
            let w = w * scale;
            let off = p.offset(j, s);
            let (partner, g_partner) = match side {
                Side::Anchor => (&p.anchor[off..off + d], &mut *g_anchor),
                Side::Positive => (&p.positive[off..off + d], &mut *g_positive),
            };
            for q in 0..d {
                du[q] += w * partner[q];
            }
            let u = &p.anchor[u_off..u_off + d];
            for q in 0..d {
                g_partner[off + q] += w * u[q];
            }
        }
        for q in 0..d {
            g_anchor[u_off + q] += du[q];
        }
    }
}

/// Instance-wise loss of anchor `(i, t)`.
pub fn instance_term(pair: &EmbeddingPair, i: usize, t: usize) -> f64 {
    Term::instance(pair, i, t).value()
}

/// Temporal loss of anchor `(i, t)`; `t` indexes the overlap.
pub fn temporal_term(pair: &EmbeddingPair, i: usize, t: usize) -> f64 {
    Term::temporal(pair, i, t).value()
}

/// Instance-wise loss at overlap timestamp `t`, averaged over the batch.
pub fn instance_contrastive_loss(pair: &EmbeddingPair, t: usize) -> f64 {
    (0..pair.batch).map(|i| instance_term(pair, i, t)).sum::<f64>() / pair.batch as f64
}

/// Temporal loss of instance `i` at overlap timestamp `t`.
pub fn temporal_contrastive_loss(pair: &EmbeddingPair, i: usize, t: usize) -> f64 {
    temporal_term(pair, i, t)
}

fn normalizer(pair: &EmbeddingPair) -> Result<f64> {
    if pair.len < 2 {
        return Err(DacrError::Config(format!(
            "overlap of length {} leaves b - c = 0",
            pair.len
        )));
    }
    Ok(1.0 / (pair.batch * (pair.len - 1)) as f64)
}

/// Combined batch loss.
pub fn combined_loss(pair: &EmbeddingPair) -> Result<f64> {
    let norm = normalizer(pair)?;
    let mut total = 0.0;
    for i in 0..pair.batch {
        for t in 0..pair.len {
            total += instance_term(pair, i, t) + temporal_term(pair, i, t);
        }
    }
    Ok(total * norm)
}

/// Combined batch loss with its gradient with respect to the anchor and
/// positive embeddings (same layout as the inputs).
pub fn combined_loss_grad(pair: &EmbeddingPair) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let norm = normalizer(pair)?;
    let mut g_anchor = vec![0.0; pair.anchor.len()];
    let mut g_positive = vec![0.0; pair.positive.len()];
    let mut total = 0.0;
    for i in 0..pair.batch {
        for t in 0..pair.len {
            for term in [Term::instance(pair, i, t), Term::temporal(pair, i, t)] {
                total += term.value();
                term.backprop(pair, i, t, norm, &mut g_anchor, &mut g_positive);
            }
        }
    }
    Ok((total * norm, g_anchor, g_positive))
}
