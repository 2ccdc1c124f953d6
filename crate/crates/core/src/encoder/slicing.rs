use std::ops::RangeInclusive;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{DacrError, Result};

/// Two overlapping fragments `[first_start, first_end]` and
/// `[second_start, second_end]` of one series (0-based, inclusive), ordered
/// `first_start < second_start < first_end < second_end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlicePair {
    pub first_start: usize,
    pub second_start: usize,
    pub first_end: usize,
    pub second_end: usize,
}

impl SlicePair {
    pub fn new(first_start: usize, second_start: usize, first_end: usize, second_end: usize) -> Result<Self> {
        if !(first_start < second_start && second_start < first_end && first_end < second_end) {
            return Err(DacrError::Config(format!(
                "slice indices must satisfy a < c < b < d, got a={first_start} c={second_start} b={first_end} d={second_end}"
            )));
        }
        Ok(SlicePair {
            first_start,
            second_start,
            first_end,
            second_end,
        })
    }

    pub fn first(&self) -> RangeInclusive<usize> {
        self.first_start..=self.first_end
    }

    pub fn second(&self) -> RangeInclusive<usize> {
        self.second_start..=self.second_end
    }

    /// Shared timestamps `[second_start, first_end]`.
    pub fn overlap(&self) -> RangeInclusive<usize> {
        self.second_start..=self.first_end
    }

    pub fn overlap_len(&self) -> usize {
        self.first_end - self.second_start + 1
    }

    pub fn first_len(&self) -> usize {
        self.first_end - self.first_start + 1
    }

    pub fn second_len(&self) -> usize {
        self.second_end - self.second_start + 1
    }
}

/// Default minimum fragment length for series of length `t_len`.
pub fn default_min_len(t_len: usize) -> usize {
    (t_len / 4).max(3)
}

/// Draw a slice pair uniformly among all tuples whose fragments are at
/// least `min_len` long.
pub fn sample_slice_pair<R: Rng + ?Sized>(t_len: usize, min_len: usize, rng: &mut R) -> Result<SlicePair> {
    if min_len < 3 {
        return Err(DacrError::Config(format!("min_len must be >= 3, got {min_len}")));
    }
    if t_len < 4 || min_len > t_len - 1 {
        return Err(DacrError::Config(format!(
            "series of length {t_len} cannot hold two overlapping fragments of length {min_len}"
        )));
    }
    let feasible = |p: &SlicePair| p.first_len() >= min_len && p.second_len() >= min_len;
    for _ in 0..10_000 {
        let mut idx = sample(rng, t_len, 4).into_vec();
        idx.sort_unstable();
        let p = SlicePair {
            first_start: idx[0],
            second_start: idx[1],
            first_end: idx[2],
            second_end: idx[3],
        };
        if feasible(&p) {
            return Ok(p);
        }
    }
    // Long minimum lengths leave few feasible tuples; enumerate them.
    let mut all = Vec::new();
    for a in 0..t_len {
        for b in (a + min_len - 1)..t_len {
            for c in (a + 1)..b {
                for d in (b + 1)..t_len {
                    if d + 1 - c >= min_len {
                        all.push(SlicePair {
                            first_start: a,
                            second_start: c,
                            first_end: b,
                            second_end: d,
                        });
                    }
                }
            }
        }
    }
    Ok(all[rng.random_range(0..all.len())])
}
