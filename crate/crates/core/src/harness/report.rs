//! Run and sweep reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{DacrError, Result};

use super::config::Ablation;

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub ablation: Ablation,
    pub config_hash: String,
    pub config_text: String,
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Not part of the rendered reports, which must be reproducible.
    pub wall_clock_secs: f64,
    /// Relative to the run directory.
    pub checkpoints: Vec<PathBuf>,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() == 1 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl RunReport {
    pub fn new(
        name: String,
        ablation: Ablation,
        config_hash: String,
        config_text: String,
        seeds: Vec<u64>,
        aucs: Vec<f64>,
        wall_clock_secs: f64,
        checkpoints: Vec<PathBuf>,
    ) -> Self {
        let (mean, std) = mean_std(&aucs);
        RunReport {
            name,
            ablation,
            config_hash,
            config_text,
            seeds,
            aucs,
            mean,
            std,
            wall_clock_secs,
            checkpoints,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tablation\tseed\tauc\n");
        for (seed, auc) in self.seeds.iter().zip(&self.aucs) {
            writeln!(s, "{}\t{}\t{seed}\t{auc}", self.name, self.ablation).unwrap();
        }
        writeln!(s, "{}\t{}\tmean\t{}", self.name, self.ablation, self.mean).unwrap();
        writeln!(s, "{}\t{}\tstd\t{}", self.name, self.ablation, self.std).unwrap();
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "run: {}", self.name).unwrap();
        writeln!(s, "ablation: {}", self.ablation).unwrap();
        writeln!(s, "config hash: {}", self.config_hash).unwrap();
        writeln!(s, "AUC: {:.4} ± {:.4} over {} seeds", self.mean, self.std, self.seeds.len()).unwrap();
        for (seed, auc) in self.seeds.iter().zip(&self.aucs) {
            writeln!(s, "  seed {seed}: {auc:.6}").unwrap();
        }
        if !self.checkpoints.is_empty() {
            writeln!(s, "checkpoints:").unwrap();
            for p in &self.checkpoints {
                writeln!(s, "  {}", p.display()).unwrap();
            }
        }
        writeln!(s, "config:").unwrap();
        for line in self.config_text.lines() {
            writeln!(s, "  {line}").unwrap();
        }
        s
    }

    /// Write `report.txt`, `report.tsv` and `timing.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DacrError::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| DacrError::io(&p, e))
        };
        put("report.txt", self.to_text())?;
        put("report.tsv", self.to_tsv())?;
        put("timing.txt", format!("wall_clock_secs={:.3}\n", self.wall_clock_secs))
    }
}

/// One report per grid value of a swept parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub axis: String,
    pub points: Vec<(String, RunReport)>,
}

impl SweepReport {
    /// Plot-ready table: one row per grid value.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let seeds = self.points.first().map(|(_, r)| r.seeds.clone()).unwrap_or_default();
        write!(s, "{}\tmean\tstd", self.axis).unwrap();
        for seed in &seeds {
            write!(s, "\tseed{seed}").unwrap();
        }
        s.push('\n');
        for (v, r) in &self.points {
            write!(s, "{v}\t{}\t{}", r.mean, r.std).unwrap();
            for a in &r.aucs {
                write!(s, "\t{a}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("sweep over {}\n", self.axis);
        for (v, r) in &self.points {
            writeln!(s, "  {} = {v}: AUC {:.4} ± {:.4}", self.axis, r.mean, r.std).unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| DacrError::io(dir, e))?;
        let p = dir.join(format!("sweep-{}.tsv", self.axis));
        std::fs::write(&p, self.to_tsv()).map_err(|e| DacrError::io(&p, e))?;
        let p = dir.join(format!("sweep-{}.txt", self.axis));
        std::fs::write(&p, self.to_text()).map_err(|e| DacrError::io(&p, e))
    }

    /// Largest minus smallest mean AUC over the points whose value passes
    /// `keep`.
    pub fn spread(&self, keep: impl Fn(&str) -> bool) -> f64 {
        let means: Vec<f64> = self.points.iter().filter(|(v, _)| keep(v)).map(|(_, r)| r.mean).collect();
        let mx = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mn = means.iter().cloned().fold(f64::INFINITY, f64::min);
        mx - mn
    }
}
