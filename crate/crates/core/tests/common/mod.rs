//! Independent reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the library's math.

#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Double-double number: `hi + lo` with `|lo| <= ulp(hi) / 2`, about 106
/// bits of significand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn split(a: f64) -> (f64, f64) {
    let t = 134_217_729.0 * a;
    let hi = t - (t - a);
    (hi, a - hi)
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, ((ah * bh - p) + ah * bl + al * bh) + al * bl)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn mul_pow2(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    pub fn exp(self) -> Dd {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Dd::ONE;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - Dd::LN2 * Dd::from(k)).mul_pow2(-10);
        // Taylor series of exp(r) - 1 for |r| < 2^-10
        let mut term = r;
        let mut sum = r;
        for n in 2..=16 {
            term = term * r / Dd::from(n as f64);
            sum = sum + term;
        }
        // (1 + s)^2 - 1 = s (2 + s), repeated to undo the scaling
        for _ in 0..10 {
            sum = sum * (sum + Dd::from(2.0));
        }
        (sum + Dd::ONE).mul_pow2(k as i32)
    }

    pub fn ln(self) -> Dd {
        assert!(self.hi > 0.0, "ln of non-positive value");
        let mut y = Dd::from(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::ONE;
        }
        y
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi));
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::from(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::from(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from(q3)
    }
}

pub fn dot_dd(a: &[f64], b: &[f64]) -> Dd {
    a.iter().zip(b).fold(Dd::ZERO, |s, (x, y)| s + Dd::from(*x) * Dd::from(*y))
}

/// Two fragments' overlap embeddings, `[batch][t][dim]`.
#[derive(Clone, Debug)]
pub struct Fragments {
    pub first: Vec<Vec<Vec<f64>>>,
    pub second: Vec<Vec<Vec<f64>>>,
}

impl Fragments {
    pub fn batch(&self) -> usize {
        self.first.len()
    }

    pub fn len(&self) -> usize {
        self.first[0].len()
    }

    pub fn dim(&self) -> usize {
        self.first[0][0].len()
    }

    pub fn flat(&self) -> (Vec<f64>, Vec<f64>) {
        let f = |v: &Vec<Vec<Vec<f64>>>| v.iter().flatten().flatten().copied().collect();
        (f(&self.first), f(&self.second))
    }
}

/// Instance-wise term for anchor `(i, t)`, written out as a log of a ratio
/// of exponentials:
/// `-ln( e^{u.z_i^{t+}} / sum_j (e^{u.z_j^{t+}} + [j != i] e^{u.z_j^t}) )`
/// with `u = z_i^t`.
pub fn oracle_instance(fr: &Fragments, i: usize, t: usize) -> Dd {
    let u = &fr.first[i][t];
    let num = dot_dd(u, &fr.second[i][t]).exp();
    let mut den = Dd::ZERO;
    for j in 0..fr.batch() {
        den = den + dot_dd(u, &fr.second[j][t]).exp();
        if j != i {
            den = den + dot_dd(u, &fr.first[j][t]).exp();
        }
    }
    -(num / den).ln()
}

/// Temporal term: the same ratio with overlap timestamps `t'` as the
/// contrast axis.
pub fn oracle_temporal(fr: &Fragments, i: usize, t: usize) -> Dd {
    let u = &fr.first[i][t];
    let num = dot_dd(u, &fr.second[i][t]).exp();
    let mut den = Dd::ZERO;
    for s in 0..fr.len() {
        den = den + dot_dd(u, &fr.second[i][s]).exp();
        if s != t {
            den = den + dot_dd(u, &fr.first[i][s]).exp();
        }
    }
    -(num / den).ln()
}

/// Combined loss: both terms summed over instances and overlap timestamps
/// `t in [c, b]`, divided by `N_B (b - c)`.
pub fn oracle_combined(fr: &Fragments) -> Dd {
    let mut total = Dd::ZERO;
    for i in 0..fr.batch() {
        for t in 0..fr.len() {
            total = total + oracle_instance(fr, i, t) + oracle_temporal(fr, i, t);
        }
    }
    total / Dd::from((fr.batch() * (fr.len() - 1)) as f64)
}

/// AUC as the fraction of (anomalous, normal) pairs ranked correctly, ties
/// counting one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut good = 0.0;
    let mut pairs = 0.0;
    for (a, &la) in scores.iter().zip(labels) {
        if !la {
            continue;
        }
        for (b, &lb) in scores.iter().zip(labels) {
            if lb {
                continue;
            }
            pairs += 1.0;
            if a > b {
                good += 1.0;
            } else if a == b {
                good += 0.5;
            }
        }
    }
    good / pairs
}

/// Relative error between two gradient vectors.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|k| {
            v[k] = x[k] + h;
            let up = f(&v);
            v[k] = x[k] - h;
            let down = f(&v);
            v[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}
