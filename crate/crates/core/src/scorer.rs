//! Error calibration, anomaly scores and ROC-AUC.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{parse_key_values, Corpus, TimeSeriesInstance};
use crate::encoder::{embed_corpus, load_extractors, FeatureExtractor};
use crate::error::{DacrError, Result};
use crate::reconstructor::{ReconstructionGrid, ReconstructorModel};

pub const EPSILON_FLOOR: f64 = 1e-12;
/// Score given to timestamps without a full history.
pub const WARM_UP_SCORE: f64 = -100.0;

/// Anything that reconstructs every valid `(t, f)` of an instance.
pub trait Reconstructs {
    fn features(&self) -> usize;
    fn m(&self) -> usize;
    fn reconstruct_grid(&self, inst: &TimeSeriesInstance) -> Result<ReconstructionGrid>;
}

/// Frozen extractors plus a trained reconstructor.
#[derive(Clone, Debug)]
pub struct Detector {
    pub extractors: Vec<FeatureExtractor>,
    pub model: ReconstructorModel,
}

impl Detector {
    /// Extractor checkpoints from `encoders` plus a reconstructor checkpoint.
    pub fn load(encoders: &Path, reconstructor: &Path) -> Result<Detector> {
        let extractors = load_extractors(encoders)?;
        let model = ReconstructorModel::load(reconstructor)?;
        if extractors.len() != model.features() {
            return Err(DacrError::Shape(format!(
                "{} extractors for a reconstructor over F={}",
                extractors.len(),
                model.features()
            )));
        }
        Ok(Detector { extractors, model })
    }
}

impl Reconstructs for Detector {
    fn features(&self) -> usize {
        self.model.features()
    }

    fn m(&self) -> usize {
        self.model.m()
    }

    fn reconstruct_grid(&self, inst: &TimeSeriesInstance) -> Result<ReconstructionGrid> {
        let emb = embed_corpus(&self.extractors, std::slice::from_ref(inst))?;
        self.model.reconstruct_instance(&emb[0])
    }
}

/// Squared reconstruction errors of one instance, `NaN` at warm-up.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorGrid {
    pub t_len: usize,
    pub features: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl ErrorGrid {
    pub fn get(&self, t: usize, f: usize) -> Option<f64> {
        (t >= self.m).then(|| self.values[t * self.features + f])
    }
}

pub fn squared_errors<R: Reconstructs + ?Sized>(model: &R, inst: &TimeSeriesInstance) -> Result<ErrorGrid> {
    if inst.features() != model.features() {
        return Err(DacrError::Shape(format!(
            "model has F={}, instance {} has F={}",
            model.features(),
            inst.id,
            inst.features()
        )));
    }
    let grid = model.reconstruct_grid(inst)?;
    let f_n = inst.features();
    let values = (0..inst.t_len() * f_n)
        .map(|k| {
            let (t, f) = (k / f_n, k % f_n);
            match grid.get(t, f) {
                Some(r) => (r - inst.at(t, f)).powi(2),
                None => f64::NAN,
            }
        })
        .collect();
    Ok(ErrorGrid {
        t_len: inst.t_len(),
        features: f_n,
        m: grid.m,
        values,
    })
}

/// Per-feature maximum training error.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationTable {
    pub err: Vec<f64>,
    pub epsilon_floor: f64,
}

impl CalibrationTable {
    /// Table from raw maxima, applying the floor.
    pub fn from_raw(raw: &[f64], epsilon_floor: f64) -> Self {
        CalibrationTable {
            err: raw.iter().map(|&e| e.max(epsilon_floor)).collect(),
            epsilon_floor,
        }
    }

    pub fn features(&self) -> usize {
        self.err.len()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "features={}", self.err.len()).unwrap();
        writeln!(s, "epsilon_floor={:e}", self.epsilon_floor).unwrap();
        for (f, e) in self.err.iter().enumerate() {
            // round-trip exact formatting
            writeln!(s, "err.{f}={e:e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| DacrError::Format(format!("calibration table missing {k}")))
        };
        let parse = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| DacrError::Format(format!("calibration entry {k} is not a number")))
        };
        let n: usize = get("features")?
            .parse()
            .map_err(|_| DacrError::Format("calibration feature count is malformed".into()))?;
        let epsilon_floor = parse("epsilon_floor")?;
        let err = (0..n).map(|f| parse(&format!("err.{f}"))).collect::<Result<Vec<_>>>()?;
        if err.iter().any(|e| !(e.is_finite() && *e >= epsilon_floor)) {
            return Err(DacrError::Format("calibration errors must be finite and floored".into()));
        }
        Ok(CalibrationTable { err, epsilon_floor })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| DacrError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DacrError::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Max-merge of error grids into a table.
pub fn calibrate_errors<'a>(grids: impl IntoIterator<Item = &'a ErrorGrid>, epsilon_floor: f64) -> Result<CalibrationTable> {
    let mut raw: Option<Vec<f64>> = None;
    for g in grids {
        let r = raw.get_or_insert_with(|| vec![0.0; g.features]);
        if r.len() != g.features {
            return Err(DacrError::Shape("error grids disagree on F".into()));
        }
        for t in g.m..g.t_len {
            for (f, slot) in r.iter_mut().enumerate() {
                let e = g.values[t * g.features + f];
                if e > *slot {
                    *slot = e;
                }
            }
        }
    }
    let raw = raw.ok_or_else(|| DacrError::Config("cannot calibrate on an empty training set".into()))?;
    Ok(CalibrationTable::from_raw(&raw, epsilon_floor))
}

pub fn calibrate<R: Reconstructs + ?Sized>(model: &R, train: &Corpus) -> Result<CalibrationTable> {
    if train.is_empty() {
        return Err(DacrError::Config("cannot calibrate on an empty training set".into()));
    }
    let grids = train
        .instances
        .iter()
        .map(|i| squared_errors(model, i))
        .collect::<Result<Vec<_>>>()?;
    calibrate_errors(&grids, EPSILON_FLOOR)
}

/// Per-timestamp scores in percent, labelled anomalous when strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub m: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoreSeries {
    pub fn from_scores(m: usize, scores: Vec<f64>) -> Self {
        let labels = scores.iter().map(|&s| s > 0.0).collect();
        ScoreSeries { m, scores, labels }
    }

    /// Scores of timestamps with a full history.
    pub fn valid(&self) -> &[f64] {
        &self.scores[self.m.min(self.scores.len())..]
    }
}

/// `max_f (e^f − Err^f) / Err^f · 100`.
pub fn timestamp_score(errors: &[f64], table: &CalibrationTable) -> f64 {
    errors
        .iter()
        .zip(&table.err)
        .map(|(e, c)| (e - c) / c * 100.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn score_errors(grid: &ErrorGrid, table: &CalibrationTable) -> Result<ScoreSeries> {
    if grid.features != table.features() {
        return Err(DacrError::Shape(format!(
            "calibration table has F={}, errors have F={}",
            table.features(),
            grid.features
        )));
    }
    let f_n = grid.features;
    let scores = (0..grid.t_len)
        .map(|t| {
            if t < grid.m {
                WARM_UP_SCORE
            } else {
                timestamp_score(&grid.values[t * f_n..(t + 1) * f_n], table)
            }
        })
        .collect();
    Ok(ScoreSeries::from_scores(grid.m, scores))
}

pub fn score<R: Reconstructs + ?Sized>(model: &R, table: &CalibrationTable, inst: &TimeSeriesInstance) -> Result<ScoreSeries> {
    if inst.features() != table.features() {
        return Err(DacrError::Shape(format!(
            "calibration table has F={}, instance {} has F={}",
            table.features(),
            inst.id,
            inst.features()
        )));
    }
    score_errors(&squared_errors(model, inst)?, table)
}

/// Instance-level score: the maximum over timestamps.
pub fn instance_score(series: &ScoreSeries) -> f64 {
    series.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// ROC-AUC through the Mann–Whitney rank statistic with average ranks.
pub fn evaluate_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DacrError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DacrError::Evaluation("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(DacrError::Evaluation("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_basics() {
        assert_eq!(evaluate_auc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(evaluate_auc(&[0.9, 0.1], &[false, true]).unwrap(), 0.0);
        assert_eq!(evaluate_auc(&[3.0; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(evaluate_auc(&[1.0, 2.0], &[true, true]), Err(DacrError::Evaluation(_))));
    }

    #[test]
    fn eq_error_scores_zero_and_double_scores_hundred() {
        let table = CalibrationTable::from_raw(&[0.5, 0.25], EPSILON_FLOOR);
        assert_eq!(timestamp_score(&[0.5, 0.25], &table), 0.0);
        assert_eq!(timestamp_score(&[1.0, 0.25], &table), 100.0);
    }

    #[test]
    fn instance_score_is_max() {
        let s = ScoreSeries::from_scores(0, vec![-50.0, 0.0, 30.0]);
        assert_eq!(instance_score(&s), 30.0);
        assert_eq!(s.labels, vec![false, false, true]);
        let s = ScoreSeries::from_scores(0, vec![-100.0; 4]);
        assert_eq!(instance_score(&s), -100.0);
    }

    #[test]
    fn table_text_roundtrip() {
        let t = CalibrationTable::from_raw(&[0.1, 0.0, 1.0 / 3.0], EPSILON_FLOOR);
        assert_eq!(t.err[1], EPSILON_FLOOR);
        assert_eq!(CalibrationTable::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn mismatched_features_are_rejected() {
        let table = CalibrationTable::from_raw(&[1.0], EPSILON_FLOOR);
        let grid = ErrorGrid {
            t_len: 2,
            features: 2,
            m: 0,
            values: vec![0.0; 4],
        };
        assert!(matches!(score_errors(&grid, &table), Err(DacrError::Shape(_))));
    }
}
