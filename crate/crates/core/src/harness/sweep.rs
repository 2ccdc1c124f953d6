//! Sensitivity and class-count sweeps.

use std::fmt;
use std::str::FromStr;

use crate::augmentor::NoiseSpec;
use crate::dataset::Corpus;
use crate::error::{DacrError, Result};

use super::config::{DataSource, ExperimentConfig, Mode};
use super::pipeline::{load_data, run_pipeline_cached, RunOptions, StageCache};
use super::report::{RunReport, SweepReport};

pub const NOISE_GRID: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];
pub const M_GRID: [usize; 5] = [10, 20, 30, 40, 50];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Both latent noise variances.
    Noise,
    /// History length.
    M,
    /// Number of normal classes (EAD).
    NClasses,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Noise => "noise",
            SweepAxis::M => "m",
            SweepAxis::NClasses => "nclasses",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = DacrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(SweepAxis::Noise),
            "m" => Ok(SweepAxis::M),
            "nclasses" => Ok(SweepAxis::NClasses),
            _ => Err(DacrError::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

fn class_count(config: &ExperimentConfig, corpus: &Corpus) -> Result<usize> {
    if config.mode != Mode::Ead {
        return Err(DacrError::Config("class-count sweeps need an EAD config".into()));
    }
    Ok(match &config.data {
        DataSource::Synthetic(spec) => spec.n_classes,
        _ => corpus.classes().len(),
    })
}

/// Grid values of an axis for `config`, as (label, config) pairs.
pub fn grid(config: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<(String, ExperimentConfig)>> {
    let point = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = config.clone();
        c.name = format!("{}-{axis}-{label}", config.name);
        f(&mut c);
        (label, c)
    };
    Ok(match axis {
        SweepAxis::Noise => NOISE_GRID
            .iter()
            .map(|&v| point(v.to_string(), &|c| c.noise = NoiseSpec::with_var(v)))
            .collect(),
        SweepAxis::M => M_GRID
            .iter()
            .map(|&m| point(m.to_string(), &|c| c.reconstructor.m = m))
            .collect(),
        SweepAxis::NClasses => {
            let n_c = class_count(config, &load_data(config)?)?;
            if n_c < 3 {
                return Err(DacrError::Config(format!("class-count sweep needs >= 3 classes, corpus has {n_c}")));
            }
            (2..n_c)
                .map(|n| point(n.to_string(), &|c| c.normal_classes = n))
                .collect()
        }
    })
}

/// One report per grid point. Stages whose inputs do not depend on the
/// swept value are trained once and shared.
pub fn run_sweep(config: &ExperimentConfig, axis: SweepAxis, opts: &RunOptions) -> Result<SweepReport> {
    run_sweep_cached(config, axis, opts, &mut StageCache::new())
}

pub fn run_sweep_cached(
    config: &ExperimentConfig,
    axis: SweepAxis,
    opts: &RunOptions,
    cache: &mut StageCache,
) -> Result<SweepReport> {
    let mut points = Vec::new();
    for (label, c) in grid(config, axis)? {
        let report: RunReport = run_pipeline_cached(&c, opts, cache)?
            .ok_or_else(|| DacrError::State("sweep point stopped before completion".into()))?;
        points.push((label, report));
    }
    let sweep = SweepReport {
        axis: axis.to_string(),
        points,
    };
    if let Some(root) = &opts.root {
        sweep.write(&root.join(&config.name))?;
    }
    Ok(sweep)
}
