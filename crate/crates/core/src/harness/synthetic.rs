//! Desk-scale synthetic corpora: class-specific sinusoid mixtures with
//! coupled features, plus injectable point anomalies.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{Corpus, TimeSeriesInstance};
use crate::error::{DacrError, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AnomalyKind {
    Spike,
    Drift,
    FreqShift,
}

impl AnomalyKind {
    pub fn all() -> Vec<AnomalyKind> {
        vec![AnomalyKind::Spike, AnomalyKind::Drift, AnomalyKind::FreqShift]
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyKind::Spike => "spike",
            AnomalyKind::Drift => "drift",
            AnomalyKind::FreqShift => "freq-shift",
        })
    }
}

impl FromStr for AnomalyKind {
    type Err = DacrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike" => Ok(AnomalyKind::Spike),
            "drift" => Ok(AnomalyKind::Drift),
            "freq-shift" => Ok(AnomalyKind::FreqShift),
            _ => Err(DacrError::Config(format!("unknown anomaly kind {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_per_class: usize,
    pub t_len: usize,
    pub features: usize,
    /// Kinds used for injected point anomalies; empty means none.
    pub anomaly_kinds: Vec<AnomalyKind>,
    /// Fraction of instances that receive one injected anomaly.
    pub anomalous_fraction: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 4,
            n_per_class: 100,
            t_len: 50,
            features: 3,
            anomaly_kinds: Vec::new(),
            anomalous_fraction: 0.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

/// Generative parameters of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProfile {
    /// Cycles over the series length, per feature.
    pub freq: Vec<f64>,
    pub phase: Vec<f64>,
    pub offset: Vec<f64>,
    /// Weight of feature `f-1` mixed into feature `f`.
    pub coupling: Vec<f64>,
}

/// Per feature, the classes take distinct frequencies from an evenly
/// spaced, jittered grid over `[1, 6)` in shuffled order, so any two classes
/// differ by at least half a grid step on every feature.
pub fn class_profiles(spec: &SyntheticSpec) -> Vec<ClassProfile> {
    let mut rng = seed::rng(spec.seed, "synthetic-classes", 0);
    let n = spec.n_classes;
    let step = 5.0 / n.max(1) as f64;
    let mut freq = vec![vec![0.0; spec.features]; n];
    for f in 0..spec.features {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (k, &slot) in order.iter().enumerate() {
            freq[k][f] = 1.0 + step * (slot as f64 + rng.random_range(0.25..0.75));
        }
    }
    freq.into_iter()
        .map(|freq| ClassProfile {
            freq,
            phase: (0..spec.features).map(|_| rng.random_range(0.0..TAU)).collect(),
            offset: (0..spec.features).map(|_| rng.random_range(-0.5..0.5)).collect(),
            coupling: (0..spec.features)
                .map(|f| if f == 0 { 0.0 } else { rng.random_range(-1.0..1.0) })
                .collect(),
        })
        .collect()
}

/// Clean row-major values of one instance of `profile`.
fn render<R: Rng>(profile: &ClassProfile, t_len: usize, noise: f64, rng: &mut R) -> Vec<f64> {
    let f_n = profile.freq.len();
    let shift: f64 = rng.random_range(0.0..TAU);
    let amp: f64 = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
    let mut v = vec![0.0; t_len * f_n];
    for t in 0..t_len {
        for f in 0..f_n {
            let base = amp * (TAU * profile.freq[f] * t as f64 / t_len as f64 + profile.phase[f] + shift).sin();
            let coupled = if f > 0 { profile.coupling[f] * v[t * f_n + f - 1] } else { 0.0 };
            v[t * f_n + f] = base + coupled + profile.offset[f];
        }
    }
    for x in &mut v {
        *x += noise * rng.sample::<f64, _>(StandardNormal);
    }
    v
}

/// Add an anomaly of `kind` to feature `f` over `[start, start + len)` and
/// mark exactly that region in the point labels.
pub fn inject_anomaly(
    inst: &TimeSeriesInstance,
    kind: AnomalyKind,
    f: usize,
    start: usize,
    len: usize,
    magnitude: f64,
) -> Result<TimeSeriesInstance> {
    let (t_len, f_n) = (inst.t_len(), inst.features());
    if len == 0 || start + len > t_len || f >= f_n {
        return Err(DacrError::Range(format!(
            "anomaly region {start}+{len} on feature {f} outside {t_len}x{f_n}"
        )));
    }
    let mut v = inst.values().to_vec();
    for k in 0..len {
        let t = start + k;
        let cell = &mut v[t * f_n + f];
        match kind {
            AnomalyKind::Spike => *cell += magnitude,
            AnomalyKind::Drift => *cell += magnitude * (k + 1) as f64 / len as f64,
            AnomalyKind::FreqShift => {
                *cell = magnitude * (TAU * 3.0 * k as f64 / len as f64).sin() + *cell * 0.2;
            }
        }
    }
    let mut labels = inst.point_labels.clone().unwrap_or_else(|| vec![false; t_len]);
    labels[start..start + len].iter_mut().for_each(|l| *l = true);
    let mut out = TimeSeriesInstance::new(inst.id.clone(), t_len, f_n, v)?.with_point_labels(labels)?;
    out.class_label = inst.class_label;
    Ok(out)
}

/// Class-labeled corpus. Instances chosen for injection carry point labels;
/// all others have none.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.n_classes == 0 || spec.n_per_class == 0 || spec.features == 0 || spec.t_len < 2 {
        return Err(DacrError::Config(format!("invalid synthetic spec {spec:?}")));
    }
    if !(0.0..=1.0).contains(&spec.anomalous_fraction) {
        return Err(DacrError::Config("anomalous_fraction must lie in [0, 1]".into()));
    }
    let profiles = class_profiles(spec);
    let mut rng = seed::rng(spec.seed, "synthetic-instances", 0);
    let mut out = Vec::with_capacity(spec.n_classes * spec.n_per_class);
    for (k, p) in profiles.iter().enumerate() {
        for i in 0..spec.n_per_class {
            let v = render(p, spec.t_len, spec.noise, &mut rng);
            let mut inst = TimeSeriesInstance::new(format!("c{k}-{i}"), spec.t_len, spec.features, v)?.with_class(k);
            if !spec.anomaly_kinds.is_empty() && rng.random::<f64>() < spec.anomalous_fraction {
                let kind = spec.anomaly_kinds[rng.random_range(0..spec.anomaly_kinds.len())];
                let len = match kind {
                    AnomalyKind::Spike => rng.random_range(1..=3),
                    _ => (spec.t_len / 10).max(2),
                }
                .min(spec.t_len);
                let start = rng.random_range(0..=spec.t_len - len);
                let f = rng.random_range(0..spec.features);
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                inst = inject_anomaly(&inst, kind, f, start, len, sign * rng.random_range(2.0..4.0))?;
            }
            out.push(inst);
        }
    }
    Corpus::new(out, "synthetic")
}

/// Long-series corpus for window-based detection: `n_train` clean series
/// (no point labels) and `n_test` labeled series with `anomalies_per_test`
/// injected regions each, all drawn from class 0 of `spec`.
pub fn make_synthetic_series(
    spec: &SyntheticSpec,
    n_train: usize,
    n_test: usize,
    anomalies_per_test: usize,
) -> Result<Corpus> {
    if spec.anomaly_kinds.is_empty() && anomalies_per_test > 0 {
        return Err(DacrError::Config("no anomaly kinds to inject".into()));
    }
    let profile = class_profiles(&SyntheticSpec {
        n_classes: 1,
        ..spec.clone()
    })
    .remove(0);
    let mut rng = seed::rng(spec.seed, "synthetic-series", 0);
    let mut out = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train {
        let v = render(&profile, spec.t_len, spec.noise, &mut rng);
        out.push(TimeSeriesInstance::new(format!("train-{i}"), spec.t_len, spec.features, v)?);
    }
    for i in 0..n_test {
        let v = render(&profile, spec.t_len, spec.noise, &mut rng);
        let mut inst = TimeSeriesInstance::new(format!("test-{i}"), spec.t_len, spec.features, v)?
            .with_point_labels(vec![false; spec.t_len])?;
        for _ in 0..anomalies_per_test {
            let kind = spec.anomaly_kinds[rng.random_range(0..spec.anomaly_kinds.len())];
            let len = match kind {
                AnomalyKind::Spike => rng.random_range(1..=3),
                _ => rng.random_range(5..=15),
            }
            .min(spec.t_len);
            let start = rng.random_range(0..=spec.t_len - len);
            let f = rng.random_range(0..spec.features);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            inst = inject_anomaly(&inst, kind, f, start, len, sign * rng.random_range(2.0..4.0))?;
        }
        out.push(inst);
    }
    Corpus::new(out, "synthetic")
}
