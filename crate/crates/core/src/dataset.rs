//! Time-series corpora: ingestion, normalization, and experiment splits.
//!
//! A corpus is a list of `T×F` instances sharing one feature count. On disk a
//! corpus is a key-value manifest pointing at a little-endian payload of
//! `N×T×F` values, with optional sidecars for class labels, instance ids and
//! per-timestamp anomaly labels (one byte per timestamp).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DacrError, Result};

/// Standard deviations below this are treated as 1 during normalization.
pub const STD_FLOOR: f64 = 1e-8;
/// Fraction of each normal class held out for the EAD test side.
pub const EAD_TEST_FRACTION: f64 = 0.2;
/// Default IAD window length.
pub const IAD_WINDOW: usize = 100;

/// Label-sidecar byte marking an instance without point labels.
const UNLABELED: u8 = 0xFF;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesInstance {
    pub id: String,
    t_len: usize,
    features: usize,
    /// Row-major `T×F`.
    values: Vec<f64>,
    pub class_label: Option<usize>,
    pub point_labels: Option<Vec<bool>>,
}

impl TimeSeriesInstance {
    pub fn new(id: impl Into<String>, t_len: usize, features: usize, values: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if t_len < 2 || features < 1 {
            return Err(DacrError::Shape(format!(
                "instance {id}: need T >= 2 and F >= 1, got T={t_len} F={features}"
            )));
        }
        if values.len() != t_len * features {
            return Err(DacrError::Shape(format!(
                "instance {id}: {} values for T={t_len} F={features}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DacrError::DataIntegrity(format!(
                "instance {id}: non-finite value at t={} f={}",
                pos / features,
                pos % features
            )));
        }
        Ok(TimeSeriesInstance {
            id,
            t_len,
            features,
            values,
            class_label: None,
            point_labels: None,
        })
    }

    pub fn with_class(mut self, class: usize) -> Self {
        self.class_label = Some(class);
        self
    }

    pub fn with_point_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.t_len {
            return Err(DacrError::Shape(format!(
                "instance {}: {} point labels for T={}",
                self.id,
                labels.len(),
                self.t_len
            )));
        }
        self.point_labels = Some(labels);
        Ok(self)
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at 0-based timestamp `t`, feature `f`.
    pub fn at(&self, t: usize, f: usize) -> f64 {
        self.values[t * self.features + f]
    }

    /// Univariate column of feature `f`.
    pub fn column(&self, f: usize) -> Vec<f64> {
        (0..self.t_len).map(|t| self.at(t, f)).collect()
    }

    /// Copy of timestamps `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize, id: String) -> TimeSeriesInstance {
        let f = self.features;
        TimeSeriesInstance {
            id,
            t_len: len,
            features: f,
            values: self.values[start * f..(start + len) * f].to_vec(),
            class_label: self.class_label,
            point_labels: self
                .point_labels
                .as_ref()
                .map(|l| l[start..start + len].to_vec()),
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.point_labels
            .as_ref()
            .map(|l| l.iter().any(|&b| b))
            .unwrap_or(false)
    }
}

/// Per-feature z-score parameters and the ids of the instances they were
/// fitted on.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub fitted_on: BTreeSet<String>,
}

impl FeatureStats {
    /// Fit on every instance of `train`. Stds below [`STD_FLOOR`] become 1.
    pub fn fit(train: &Corpus) -> Result<FeatureStats> {
        let f = train.features().ok_or_else(|| DacrError::Config("cannot fit stats on empty corpus".into()))?;
        let mut sum = vec![0.0; f];
        let mut count = 0usize;
        for inst in &train.instances {
            for row in inst.values.chunks(f) {
                for (s, v) in sum.iter_mut().zip(row) {
                    *s += v;
                }
            }
            count += inst.t_len;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; f];
        for inst in &train.instances {
            for row in inst.values.chunks(f) {
                for j in 0..f {
                    sq[j] += (row[j] - mean[j]).powi(2);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd < STD_FLOOR {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(FeatureStats {
            mean,
            std,
            fitted_on: train.instances.iter().map(|i| i.id.clone()).collect(),
        })
    }

    pub fn apply(&self, inst: &TimeSeriesInstance) -> TimeSeriesInstance {
        let f = inst.features;
        let mut out = inst.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            let j = i % f;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub instances: Vec<TimeSeriesInstance>,
    pub feature_stats: Option<FeatureStats>,
    pub origin: String,
}

impl Corpus {
    pub fn new(instances: Vec<TimeSeriesInstance>, origin: impl Into<String>) -> Result<Corpus> {
        if let Some(first) = instances.first() {
            let f = first.features;
            if let Some(bad) = instances.iter().find(|i| i.features != f) {
                return Err(DacrError::Shape(format!(
                    "instance {} has F={}, expected {f}",
                    bad.id, bad.features
                )));
            }
        }
        Ok(Corpus {
            instances,
            feature_stats: None,
            origin: origin.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn features(&self) -> Option<usize> {
        self.instances.first().map(|i| i.features)
    }

    /// Common sequence length, if every instance has the same one.
    pub fn t_len(&self) -> Option<usize> {
        let t = self.instances.first()?.t_len;
        self.instances.iter().all(|i| i.t_len == t).then_some(t)
    }

    pub fn ids(&self) -> BTreeSet<String> {
        self.instances.iter().map(|i| i.id.clone()).collect()
    }

    /// Sorted distinct class labels.
    pub fn classes(&self) -> BTreeSet<usize> {
        self.instances.iter().filter_map(|i| i.class_label).collect()
    }

    /// Z-score every instance with this corpus's stats, fitting them on the
    /// corpus itself when absent.
    pub fn normalize(&self) -> Result<Corpus> {
        let stats = match &self.feature_stats {
            Some(s) => s.clone(),
            None => FeatureStats::fit(self)?,
        };
        Ok(self.normalized_with(&stats))
    }

    pub fn normalized_with(&self, stats: &FeatureStats) -> Corpus {
        Corpus {
            instances: self.instances.iter().map(|i| stats.apply(i)).collect(),
            feature_stats: Some(stats.clone()),
            origin: self.origin.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// CSV with an `instance` column, optional `class`/`label` columns, and
    /// one column per feature; rows in timestamp order.
    ColumnarText,
    /// Key-value manifest plus binary payload.
    BinaryArray,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Dtype::Float32 => "float32",
            Dtype::Float64 => "float64",
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::BinaryArray => load_manifest(path),
        CorpusFormat::ColumnarText => load_csv(path),
    }
}

/// Guess the format from the extension: `.csv` is columnar text, anything
/// else a manifest.
pub fn load_corpus_auto(path: &Path) -> Result<Corpus> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    load_corpus(
        path,
        if is_csv {
            CorpusFormat::ColumnarText
        } else {
            CorpusFormat::BinaryArray
        },
    )
}

/// Parse `key=value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| DacrError::Format(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn required<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    kv.get(key)
        .map(String::as_str)
        .ok_or_else(|| DacrError::Format(format!("manifest missing key {key}")))
}

fn parse_count(kv: &BTreeMap<String, String>, key: &str) -> Result<usize> {
    required(kv, key)?
        .parse()
        .map_err(|_| DacrError::Format(format!("manifest key {key} is not a count")))
}

fn sidecar(base: &Path, name: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(name)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| DacrError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DacrError::io(path, e))
}

fn load_manifest(path: &Path) -> Result<Corpus> {
    let kv = parse_key_values(&read_text(path)?)?;
    if kv.get("format").map(String::as_str) != Some("dacr-corpus") {
        return Err(DacrError::Format(format!("{} is not a dacr-corpus manifest", path.display())));
    }
    if required(&kv, "version")? != "1" {
        return Err(DacrError::Format("unsupported manifest version".into()));
    }
    let n = parse_count(&kv, "n_instances")?;
    let t = parse_count(&kv, "T")?;
    let f = parse_count(&kv, "F")?;
    let dtype = match required(&kv, "dtype")? {
        "float32" => Dtype::Float32,
        "float64" => Dtype::Float64,
        other => return Err(DacrError::Format(format!("unsupported dtype {other}"))),
    };
    if required(&kv, "layout")? != "row-major" {
        return Err(DacrError::Format("only row-major layout is supported".into()));
    }
    let payload = read(&sidecar(path, required(&kv, "payload")?))?;
    let expected = n * t * f * dtype.width();
    if payload.len() != expected {
        return Err(DacrError::Format(format!(
            "payload holds {} bytes, manifest implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = match dtype {
        Dtype::Float32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::Float64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let ids: Vec<String> = match kv.get("ids") {
        Some(file) => read_text(&sidecar(path, file))?.lines().map(str::to_string).collect(),
        None => (0..n).map(|i| i.to_string()).collect(),
    };
    if ids.len() != n {
        return Err(DacrError::Format(format!("{} ids for {n} instances", ids.len())));
    }
    let classes: Vec<Option<usize>> = match kv.get("classes") {
        Some(file) => read_text(&sidecar(path, file))?
            .lines()
            .map(|l| match l.trim() {
                "-" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|_| DacrError::Format(format!("bad class label {s:?}"))),
            })
            .collect::<Result<_>>()?,
        None => vec![None; n],
    };
    if classes.len() != n {
        return Err(DacrError::Format(format!("{} class labels for {n} instances", classes.len())));
    }
    let labels = match kv.get("labels") {
        Some(file) => {
            let bytes = read(&sidecar(path, file))?;
            if bytes.len() != n * t {
                return Err(DacrError::Format(format!(
                    "label sidecar holds {} bytes, expected {}",
                    bytes.len(),
                    n * t
                )));
            }
            Some(bytes)
        }
        None => None,
    };
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let mut inst =
            TimeSeriesInstance::new(ids[i].clone(), t, f, values[i * t * f..(i + 1) * t * f].to_vec())?;
        inst.class_label = classes[i];
        if let Some(bytes) = &labels {
            let row = &bytes[i * t..(i + 1) * t];
            if !row.iter().all(|&b| b == UNLABELED) {
                let l = row
                    .iter()
                    .map(|&b| match b {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(DacrError::Format(format!("label byte {other} is not 0/1"))),
                    })
                    .collect::<Result<Vec<bool>>>()?;
                inst = inst.with_point_labels(l)?;
            }
        }
        instances.push(inst);
    }
    let origin = kv.get("origin").cloned().unwrap_or_else(|| "unknown".into());
    Corpus::new(instances, origin)
}

/// Write a manifest at `path` with sidecars next to it, named after the
/// manifest's file stem.
pub fn save_corpus(corpus: &Corpus, path: &Path, dtype: Dtype) -> Result<()> {
    let t = corpus
        .t_len()
        .ok_or_else(|| DacrError::Shape("binary corpus needs one common T".into()))?;
    let f = corpus.features().unwrap_or(1);
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    let dir = path.parent().unwrap_or(Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir).map_err(|e| DacrError::io(dir, e))?;
    }
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = sidecar(path, name);
        fs::write(&p, bytes).map_err(|e| DacrError::io(&p, e))
    };
    let mut payload = Vec::with_capacity(corpus.len() * t * f * dtype.width());
    for inst in &corpus.instances {
        for &v in &inst.values {
            match dtype {
                Dtype::Float32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::Float64 => payload.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    let mut manifest = format!(
        "format=dacr-corpus\nversion=1\nn_instances={}\nT={t}\nF={f}\ndtype={}\nlayout=row-major\norigin={}\npayload={stem}.bin\nids={stem}.ids\n",
        corpus.len(),
        dtype.name(),
        corpus.origin
    );
    write(&format!("{stem}.bin"), &payload)?;
    let ids: String = corpus.instances.iter().map(|i| format!("{}\n", i.id)).collect();
    write(&format!("{stem}.ids"), ids.as_bytes())?;
    if corpus.instances.iter().any(|i| i.class_label.is_some()) {
        let classes: String = corpus
            .instances
            .iter()
            .map(|i| match i.class_label {
                Some(c) => format!("{c}\n"),
                None => "-\n".into(),
            })
            .collect();
        write(&format!("{stem}.classes"), classes.as_bytes())?;
        manifest.push_str(&format!("classes={stem}.classes\n"));
    }
    if corpus.instances.iter().any(|i| i.point_labels.is_some()) {
        let mut bytes = Vec::with_capacity(corpus.len() * t);
        for inst in &corpus.instances {
            match &inst.point_labels {
                Some(l) => bytes.extend(l.iter().map(|&b| b as u8)),
                None => bytes.extend(std::iter::repeat_n(UNLABELED, t)),
            }
        }
        write(&format!("{stem}.labels"), &bytes)?;
        manifest.push_str(&format!("labels={stem}.labels\n"));
    }
    fs::write(path, manifest).map_err(|e| DacrError::io(path, e))
}

fn load_csv(path: &Path) -> Result<Corpus> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DacrError::Format(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| DacrError::Format(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("instance").ok_or_else(|| DacrError::Format("CSV needs an `instance` column".into()))?;
    let class_col = col("class");
    let label_col = col("label");
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != id_col && Some(c) != class_col && Some(c) != label_col)
        .collect();
    if feature_cols.is_empty() {
        return Err(DacrError::Shape("CSV has no feature columns".into()));
    }
    struct Acc {
        values: Vec<f64>,
        labels: Vec<bool>,
        class: Option<usize>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut acc: BTreeMap<String, Acc> = BTreeMap::new();
    for (row_no, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| DacrError::Format(e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(DacrError::Shape(format!(
                "row {} has {} fields, header has {}",
                row_no + 2,
                rec.len(),
                headers.len()
            )));
        }
        let id = rec[id_col].to_string();
        let entry = acc.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Acc {
                values: Vec::new(),
                labels: Vec::new(),
                class: None,
            }
        });
        for &c in &feature_cols {
            let v: f64 = rec[c].parse().map_err(|_| {
                DacrError::Format(format!("row {}: {:?} is not a number", row_no + 2, &rec[c]))
            })?;
            entry.values.push(v);
        }
        if let Some(c) = label_col {
            entry.labels.push(match &rec[c] {
                "0" | "false" => false,
                "1" | "true" => true,
                other => return Err(DacrError::Format(format!("bad label {other:?}"))),
            });
        }
        if let Some(c) = class_col {
            let k: usize = rec[c]
                .parse()
                .map_err(|_| DacrError::Format(format!("bad class {:?}", &rec[c])))?;
            entry.class = Some(k);
        }
    }
    let f = feature_cols.len();
    let instances = order
        .into_iter()
        .map(|id| {
            let a = acc.remove(&id).unwrap();
            let t = a.values.len() / f;
            let mut inst = TimeSeriesInstance::new(id, t, f, a.values)?;
            inst.class_label = a.class;
            if label_col.is_some() {
                inst = inst.with_point_labels(a.labels)?;
            }
            Ok(inst)
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(instances, "csv")
}

/// Write the columnar-text form read by [`load_corpus`].
pub fn save_corpus_csv(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| DacrError::Format(e.to_string()))?;
    let f = corpus.features().unwrap_or(0);
    let has_class = corpus.instances.iter().any(|i| i.class_label.is_some());
    let has_labels = corpus.instances.iter().any(|i| i.point_labels.is_some());
    let mut header = vec!["instance".to_string()];
    if has_class {
        header.push("class".into());
    }
    if has_labels {
        header.push("label".into());
    }
    header.extend((0..f).map(|j| format!("f{j}")));
    let csv_err = |e: csv::Error| DacrError::Format(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for inst in &corpus.instances {
        for t in 0..inst.t_len {
            let mut rec = vec![inst.id.clone()];
            if has_class {
                rec.push(inst.class_label.map(|c| c.to_string()).unwrap_or_default());
            }
            if has_labels {
                let l = inst.point_labels.as_ref().map(|l| l[t]).unwrap_or(false);
                rec.push((l as u8).to_string());
            }
            rec.extend((0..f).map(|j| format!("{}", inst.at(t, j))));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| DacrError::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitMode {
    Ead { normal_classes: BTreeSet<usize> },
    Iad { window_length: usize, window_stride: usize },
}

/// Where an IAD test window came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowOrigin {
    pub series: usize,
    pub start: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSplit {
    pub mode: SplitMode,
    pub train: Corpus,
    pub test: Corpus,
    /// IAD only: origin of each test window, parallel to `test.instances`.
    pub test_windows: Vec<WindowOrigin>,
    /// IAD only: full-length test series the windows were cut from.
    pub test_series: Vec<TimeSeriesInstance>,
}

impl ExperimentSplit {
    /// Fit z-score stats on the training side and apply them to both sides.
    pub fn normalized(&self) -> Result<ExperimentSplit> {
        let stats = FeatureStats::fit(&self.train)?;
        Ok(ExperimentSplit {
            mode: self.mode.clone(),
            train: self.train.normalized_with(&stats),
            test: self.test.normalized_with(&stats),
            test_windows: self.test_windows.clone(),
            test_series: self.test_series.iter().map(|s| stats.apply(s)).collect(),
        })
    }
}

/// Pick `n` of the corpus's classes uniformly at random.
pub fn choose_normal_classes(corpus: &Corpus, n: usize, seed: u64) -> Result<BTreeSet<usize>> {
    let mut classes: Vec<usize> = corpus.classes().into_iter().collect();
    if n <= 1 || n >= classes.len() {
        return Err(DacrError::Config(format!(
            "need 1 < n < {} normal classes, got {n}",
            classes.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    Ok(classes.into_iter().take(n).collect())
}

/// EAD split: a seeded 20% of every normal class plus all other classes go to
/// the test side, labeled at instance level.
pub fn make_ead_split(corpus: &Corpus, normal_classes: &BTreeSet<usize>, seed: u64) -> Result<ExperimentSplit> {
    if corpus.instances.iter().any(|i| i.class_label.is_none()) {
        return Err(DacrError::Config("EAD split needs class labels on every instance".into()));
    }
    let all = corpus.classes();
    if normal_classes.len() <= 1 || normal_classes.len() >= all.len() {
        return Err(DacrError::Config(format!(
            "need 1 < |normal_classes| < {}, got {}",
            all.len(),
            normal_classes.len()
        )));
    }
    if let Some(c) = normal_classes.iter().find(|c| !all.contains(c)) {
        return Err(DacrError::Config(format!("normal class {c} not present in corpus")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &class in normal_classes {
        let mut members: Vec<&TimeSeriesInstance> = corpus
            .instances
            .iter()
            .filter(|i| i.class_label == Some(class))
            .collect();
        members.shuffle(&mut rng);
        let held = ((members.len() as f64) * EAD_TEST_FRACTION).round() as usize;
        for (k, inst) in members.into_iter().enumerate() {
            let mut inst = inst.clone();
            let t = inst.t_len;
            inst.point_labels = Some(vec![false; t]);
            if k < held {
                test.push(inst);
            } else {
                train.push(inst);
            }
        }
    }
    for inst in &corpus.instances {
        if !normal_classes.contains(&inst.class_label.unwrap()) {
            let mut inst = inst.clone();
            inst.point_labels = Some(vec![true; inst.t_len]);
            test.push(inst);
        }
    }
    Ok(ExperimentSplit {
        mode: SplitMode::Ead {
            normal_classes: normal_classes.clone(),
        },
        train: Corpus::new(train, corpus.origin.clone())?,
        test: Corpus::new(test, corpus.origin.clone())?,
        test_windows: Vec::new(),
        test_series: Vec::new(),
    })
}

/// Window start offsets covering `len` timestamps: every `stride` from 0,
/// plus one end-aligned window when the tail would be missed.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if window > len || stride == 0 {
        return Vec::new();
    }
    let mut starts: Vec<usize> = (0..=len - window).step_by(stride).collect();
    if starts.last().map(|s| s + window < len).unwrap_or(false) {
        starts.push(len - window);
    }
    starts
}

/// IAD split: instances without point labels are the anomaly-free training
/// series, labeled instances are test series. Both are cut into windows.
pub fn make_iad_split(corpus: &Corpus, window_length: usize, window_stride: usize) -> Result<ExperimentSplit> {
    if window_stride == 0 {
        return Err(DacrError::Config("window stride must be >= 1".into()));
    }
    if window_length < 2 {
        return Err(DacrError::Config("window length must be >= 2".into()));
    }
    let (train_series, test_series): (Vec<_>, Vec<_>) =
        corpus.instances.iter().partition(|i| i.point_labels.is_none());
    if train_series.is_empty() || test_series.is_empty() {
        return Err(DacrError::Config(
            "IAD split needs unlabeled training series and labeled test series".into(),
        ));
    }
    if let Some(short) = corpus.instances.iter().find(|i| i.t_len < window_length) {
        return Err(DacrError::Config(format!(
            "window length {window_length} exceeds series {} of length {}",
            short.id, short.t_len
        )));
    }
    let mut train = Vec::new();
    for s in &train_series {
        for start in window_starts(s.t_len, window_length, window_stride) {
            let mut w = s.window(start, window_length, format!("{}@{start}", s.id));
            w.point_labels = Some(vec![false; window_length]);
            train.push(w);
        }
    }
    let mut test = Vec::new();
    let mut origins = Vec::new();
    for (si, s) in test_series.iter().enumerate() {
        for start in window_starts(s.t_len, window_length, window_stride) {
            test.push(s.window(start, window_length, format!("{}@{start}", s.id)));
            origins.push(WindowOrigin { series: si, start });
        }
    }
    Ok(ExperimentSplit {
        mode: SplitMode::Iad {
            window_length,
            window_stride,
        },
        train: Corpus::new(train, corpus.origin.clone())?,
        test: Corpus::new(test, corpus.origin.clone())?,
        test_windows: origins,
        test_series: test_series.into_iter().cloned().collect(),
    })
}

/// Stitch per-window values back onto a series of length `len`; a timestamp
/// covered by several windows takes the value from the last one.
pub fn unwindow<T: Clone>(len: usize, windows: &[(usize, Vec<T>)]) -> Vec<Option<T>> {
    let mut out = vec![None; len];
    for (start, vals) in windows {
        for (k, v) in vals.iter().enumerate() {
            if start + k < len {
                out[start + k] = Some(v.clone());
            }
        }
    }
    out
}

/// True when no instance id appears on both sides.
pub fn disjoint_ids(a: &Corpus, b: &Corpus) -> bool {
    let ids: HashSet<&str> = a.instances.iter().map(|i| i.id.as_str()).collect();
    b.instances.iter().all(|i| !ids.contains(i.id.as_str()))
}
