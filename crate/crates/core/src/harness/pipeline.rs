//! End-to-end runs: augment, encode, reconstruct, calibrate, score, evaluate.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::augmentor::{generate_extra, train_vae, VaeConfig, VaeModel};
use crate::dataset::{
    choose_normal_classes, load_corpus, load_corpus_auto, make_ead_split, make_iad_split, save_corpus, unwindow, Corpus,
    CorpusFormat, Dtype, ExperimentSplit, TimeSeriesInstance,
};
use crate::encoder::{
    embed_corpus, train_autoencoding_extractors, train_extractors, EncoderTrainConfig, FeatureExtractor,
};
use crate::error::{DacrError, Result};
use crate::reconstructor::{train_on_embeddings, ReconstructionGrid, ReconstructorConfig, ReconstructorModel};
use crate::scorer::{
    calibrate_errors, evaluate_auc, instance_score, score_errors, CalibrationTable, Detector, ErrorGrid, ScoreSeries,
    EPSILON_FLOOR,
};
use crate::seed;

use super::config::{Ablation, DataSource, ExperimentConfig, Mode, Stage};
use super::report::RunReport;
use super::synthetic::{make_synthetic, make_synthetic_series};

/// Where and how far to run.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Runs directory; `None` keeps everything in memory.
    pub root: Option<PathBuf>,
    /// Stop every seed after this stage (simulates an interrupted run).
    pub stop_after: Option<Stage>,
}

impl RunOptions {
    pub fn persisted(root: impl Into<PathBuf>) -> Self {
        RunOptions {
            root: Some(root.into()),
            stop_after: None,
        }
    }
}

/// Trained artifacts shared between runs that agree on a stage's inputs,
/// keyed by stage hash and seed.
#[derive(Default)]
pub struct StageCache {
    vae: HashMap<(String, u64), VaeModel>,
    extra: HashMap<(String, u64), Corpus>,
    extractors: HashMap<(String, u64), Vec<FeatureExtractor>>,
    reconstructed: HashMap<(String, u64), Reconstructed>,
}

impl StageCache {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Build the corpus a config describes.
pub fn load_data(config: &ExperimentConfig) -> Result<Corpus> {
    match &config.data {
        DataSource::Synthetic(spec) => make_synthetic(spec),
        DataSource::SyntheticSeries {
            spec,
            n_train,
            n_test,
            anomalies_per_test,
        } => make_synthetic_series(spec, *n_train, *n_test, *anomalies_per_test),
        DataSource::File(path) => load_corpus_auto(path),
    }
}

/// Normalized split for one seed.
pub fn split_for_seed(config: &ExperimentConfig, corpus: &Corpus, seed_value: u64) -> Result<ExperimentSplit> {
    let split = match config.mode {
        Mode::Ead => {
            let normal = choose_normal_classes(
                corpus,
                config.normal_classes,
                seed::derive(seed_value, "normal-classes", 0),
            )?;
            make_ead_split(corpus, &normal, seed::derive(seed_value, "ead-split", 0))?
        }
        Mode::Iad => make_iad_split(corpus, config.window_length, config.window_stride)?,
    };
    split.normalized()
}

/// Exclusive ownership of a run directory.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<RunLock> {
        fs::create_dir_all(dir).map_err(|e| DacrError::io(dir, e))?;
        let path = dir.join("lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(DacrError::State(format!(
                "run directory {} is locked by another process",
                dir.display()
            ))),
            Err(e) => Err(DacrError::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Stage directory bookkeeping for one seed.
struct StageDir {
    dir: PathBuf,
    hash: String,
}

impl StageDir {
    fn new(run_dir: &Path, stage: Stage, seed_value: u64, hash: String) -> StageDir {
        StageDir {
            dir: run_dir.join(stage.dir_name()).join(format!("seed-{seed_value}")),
            hash,
        }
    }

    /// Complete when the marker matches and every named artifact exists.
    fn complete(&self, artifacts: &[PathBuf]) -> bool {
        let marker = fs::read_to_string(self.dir.join("done")).unwrap_or_default();
        marker.trim() == self.hash && artifacts.iter().all(|a| self.dir.join(a).exists())
    }

    fn begin(&self) -> Result<()> {
        let marker = self.dir.join("done");
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| DacrError::io(&marker, e))?;
        }
        fs::create_dir_all(&self.dir).map_err(|e| DacrError::io(&self.dir, e))
    }

    fn finish(&self) -> Result<()> {
        let marker = self.dir.join("done");
        fs::write(&marker, format!("{}\n", self.hash)).map_err(|e| DacrError::io(&marker, e))
    }
}

fn encoder_paths(f: usize) -> Vec<PathBuf> {
    (0..f).map(|i| PathBuf::from(format!("encoders/f{i}.ckpt"))).collect()
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub auc: f64,
    pub train_size: usize,
    pub extra_size: usize,
    pub test_size: usize,
    pub table: CalibrationTable,
    pub test_scores: Vec<ScoreSeries>,
}

/// Trained state after all three stages, for callers that need the models.
pub struct TrainedSeed {
    pub split: ExperimentSplit,
    pub extra: Option<Corpus>,
    pub detector: Detector,
    pub table: CalibrationTable,
    pub train_losses: Vec<f64>,
}

fn vae_config(config: &ExperimentConfig, seed_value: u64) -> VaeConfig {
    VaeConfig {
        seed: seed::derive(seed_value, "vae", 0),
        ..config.vae
    }
}

fn encoder_config(config: &ExperimentConfig, seed_value: u64) -> EncoderTrainConfig {
    EncoderTrainConfig {
        seed: seed::derive(seed_value, "encoder", 0),
        ..config.encoder
    }
}

fn recon_config(config: &ExperimentConfig, seed_value: u64) -> ReconstructorConfig {
    ReconstructorConfig {
        seed: seed::derive(seed_value, "reconstructor", 0),
        ..config.reconstructor
    }
}

/// Hash of the keys the VAE alone depends on.
fn vae_hash(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.noise = Default::default();
    c.extra_ratio = 1.0;
    c.ablation = Ablation::None;
    c.stage_hash(Stage::Augment)
}

fn stage_augment(
    config: &ExperimentConfig,
    split: &ExperimentSplit,
    seed_value: u64,
    run_dir: Option<&Path>,
    cache: &mut StageCache,
) -> Result<Option<Corpus>> {
    if config.ablation != Ablation::None {
        return Ok(None);
    }
    let hash = config.stage_hash(Stage::Augment);
    let sd = run_dir.map(|d| StageDir::new(d, Stage::Augment, seed_value, hash.clone()));
    let artifacts = [PathBuf::from("vae.ckpt"), PathBuf::from("extra.manifest")];
    if let Some(sd) = &sd {
        if sd.complete(&artifacts) {
            let extra = load_corpus(&sd.dir.join("extra.manifest"), CorpusFormat::BinaryArray)?;
            return Ok(Some(extra));
        }
        sd.begin()?;
    }
    let vkey = (vae_hash(config), seed_value);
    if !cache.vae.contains_key(&vkey) {
        let (v, _) = train_vae(&split.train, vae_config(config, seed_value))?;
        cache.vae.insert(vkey.clone(), v);
    }
    let vae = &cache.vae[&vkey];
    let key = (hash, seed_value);
    if !cache.extra.contains_key(&key) {
        let count = ((split.train.len() as f64) * config.extra_ratio).round().max(1.0) as usize;
        let extra = generate_extra(vae, &split.train, &config.noise, count, seed::derive(seed_value, "extra", 0))?;
        cache.extra.insert(key.clone(), extra);
    }
    let extra = cache.extra[&key].clone();
    if let Some(sd) = &sd {
        vae.save(&sd.dir.join("vae.ckpt"))?;
        save_corpus(&extra, &sd.dir.join("extra.manifest"), Dtype::Float64)?;
        sd.finish()?;
    }
    Ok(Some(extra))
}

fn stage_encode(
    config: &ExperimentConfig,
    split: &ExperimentSplit,
    extra: Option<&Corpus>,
    seed_value: u64,
    run_dir: Option<&Path>,
    cache: &mut StageCache,
) -> Result<Vec<FeatureExtractor>> {
    let hash = config.stage_hash(Stage::Encode);
    let f = split
        .train
        .features()
        .ok_or_else(|| DacrError::Config("empty training split".into()))?;
    let sd = run_dir.map(|d| StageDir::new(d, Stage::Encode, seed_value, hash.clone()));
    let paths = encoder_paths(f);
    if let Some(sd) = &sd {
        if sd.complete(&paths) {
            return paths.iter().map(|p| FeatureExtractor::load(&sd.dir.join(p))).collect();
        }
        sd.begin()?;
    }
    let key = (hash, seed_value);
    if !cache.extractors.contains_key(&key) {
        let ecfg = encoder_config(config, seed_value);
        let (exts, _) = match config.ablation {
            Ablation::Ab2 => train_autoencoding_extractors(&split.train, config.extractor, ecfg)?,
            _ => train_extractors(&split.train, extra, config.extractor, ecfg)?,
        };
        cache.extractors.insert(key.clone(), exts);
    }
    let exts = cache.extractors[&key].clone();
    if let Some(sd) = &sd {
        for (e, p) in exts.iter().zip(&paths) {
            e.save(&sd.dir.join(p))?;
        }
        sd.finish()?;
    }
    Ok(exts)
}

fn write_scores(path: &Path, ids: &[&str], series: &[ScoreSeries]) -> Result<()> {
    let mut s = String::new();
    for (id, ser) in ids.iter().zip(series) {
        s.push_str(id);
        s.push('\t');
        s.push_str(&ser.m.to_string());
        for v in &ser.scores {
            s.push('\t');
            s.push_str(&format!("{v:e}"));
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| DacrError::io(path, e))
}

fn read_scores(path: &Path) -> Result<Vec<ScoreSeries>> {
    let text = fs::read_to_string(path).map_err(|e| DacrError::io(path, e))?;
    text.lines()
        .map(|line| {
            let mut parts = line.split('\t').skip(1);
            let bad = || DacrError::Format(format!("malformed score line in {}", path.display()));
            let m: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let scores = parts.map(|v| v.parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>>>()?;
            Ok(ScoreSeries::from_scores(m, scores))
        })
        .collect()
}

#[derive(Clone)]
struct Reconstructed {
    model: ReconstructorModel,
    table: CalibrationTable,
    scores: Vec<ScoreSeries>,
    losses: Vec<f64>,
}

fn stage_reconstruct(
    config: &ExperimentConfig,
    split: &ExperimentSplit,
    extractors: &[FeatureExtractor],
    seed_value: u64,
    run_dir: Option<&Path>,
    cache: &mut StageCache,
) -> Result<Reconstructed> {
    let hash = config.stage_hash(Stage::Reconstruct);
    let sd = run_dir.map(|d| StageDir::new(d, Stage::Reconstruct, seed_value, hash.clone()));
    let artifacts = [
        PathBuf::from("reconstructor.ckpt"),
        PathBuf::from("calibration.txt"),
        PathBuf::from("scores.tsv"),
    ];
    if let Some(sd) = &sd {
        if sd.complete(&artifacts) {
            return Ok(Reconstructed {
                model: ReconstructorModel::load(&sd.dir.join("reconstructor.ckpt"))?,
                table: CalibrationTable::load(&sd.dir.join("calibration.txt"))?,
                scores: read_scores(&sd.dir.join("scores.tsv"))?,
                losses: Vec::new(),
            });
        }
        sd.begin()?;
    }
    let key = (hash, seed_value);
    if !cache.reconstructed.contains_key(&key) {
        let r = reconstruct_and_score(config, split, extractors, seed_value)?;
        cache.reconstructed.insert(key.clone(), r);
    }
    let r = cache.reconstructed[&key].clone();
    if let Some(sd) = &sd {
        r.model.save(&sd.dir.join("reconstructor.ckpt"))?;
        r.table.save(&sd.dir.join("calibration.txt"))?;
        let ids: Vec<&str> = split.test.instances.iter().map(|i| i.id.as_str()).collect();
        write_scores(&sd.dir.join("scores.tsv"), &ids, &r.scores)?;
        sd.finish()?;
    }
    Ok(r)
}

fn reconstruct_and_score(
    config: &ExperimentConfig,
    split: &ExperimentSplit,
    extractors: &[FeatureExtractor],
    seed_value: u64,
) -> Result<Reconstructed> {
    let before: Vec<String> = extractors.iter().map(FeatureExtractor::checksum).collect();
    let train_embs = embed_corpus(extractors, &split.train.instances)?;
    let (model, losses) = train_on_embeddings(&split.train, &train_embs, recon_config(config, seed_value))?;
    let mut train_errors = Vec::with_capacity(split.train.len());
    for (emb, inst) in train_embs.iter().zip(&split.train.instances) {
        let grid = model.reconstruct_instance(emb)?;
        train_errors.push(errors_from_grid(&grid, inst));
    }
    let table = calibrate_errors(&train_errors, EPSILON_FLOOR)?;
    let test_embs = embed_corpus(extractors, &split.test.instances)?;
    let mut scores = Vec::with_capacity(split.test.len());
    for (emb, inst) in test_embs.iter().zip(&split.test.instances) {
        let grid = model.reconstruct_instance(emb)?;
        scores.push(score_errors(&errors_from_grid(&grid, inst), &table)?);
    }
    let after: Vec<String> = extractors.iter().map(FeatureExtractor::checksum).collect();
    if before != after {
        return Err(DacrError::State("extractor parameters changed during stage 3".into()));
    }
    Ok(Reconstructed {
        model,
        table,
        scores,
        losses,
    })
}

fn errors_from_grid(grid: &ReconstructionGrid, inst: &TimeSeriesInstance) -> ErrorGrid {
    let f_n = grid.features;
    ErrorGrid {
        t_len: grid.t_len,
        features: f_n,
        m: grid.m,
        values: (0..grid.t_len * f_n)
            .map(|k| match grid.get(k / f_n, k % f_n) {
                Some(r) => (r - inst.at(k / f_n, k % f_n)).powi(2),
                None => f64::NAN,
            })
            .collect(),
    }
}

/// AUC of a split's test side given one score series per test instance.
pub fn evaluate_split(split: &ExperimentSplit, scores: &[ScoreSeries]) -> Result<f64> {
    if scores.len() != split.test.len() {
        return Err(DacrError::Shape("one score series per test instance".into()));
    }
    if split.test_windows.is_empty() {
        let s: Vec<f64> = scores.iter().map(instance_score).collect();
        let l: Vec<bool> = split.test.instances.iter().map(|i| i.is_anomalous()).collect();
        return evaluate_auc(&s, &l);
    }
    // windowed: stitch per series, last window wins, warm-up excluded
    let mut all_s = Vec::new();
    let mut all_l = Vec::new();
    for (si, series) in split.test_series.iter().enumerate() {
        let windows: Vec<(usize, Vec<Option<f64>>)> = split
            .test_windows
            .iter()
            .zip(scores)
            .filter(|(o, _)| o.series == si)
            .map(|(o, s)| {
                let v = s
                    .scores
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| (t >= s.m).then_some(x))
                    .collect();
                (o.start, v)
            })
            .collect();
        let labels = series
            .point_labels
            .as_ref()
            .ok_or_else(|| DacrError::Evaluation(format!("test series {} has no labels", series.id)))?;
        for (t, v) in unwindow(series.t_len(), &windows).into_iter().enumerate() {
            if let Some(Some(x)) = v {
                all_s.push(x);
                all_l.push(labels[t]);
            }
        }
    }
    evaluate_auc(&all_s, &all_l)
}

/// Train every stage for one seed and keep the models.
pub fn train_seed(
    config: &ExperimentConfig,
    corpus: &Corpus,
    seed_value: u64,
    cache: &mut StageCache,
) -> Result<TrainedSeed> {
    let split = split_for_seed(config, corpus, seed_value)?;
    let extra = stage_augment(config, &split, seed_value, None, cache)?;
    let extractors = stage_encode(config, &split, extra.as_ref(), seed_value, None, cache)?;
    let r = stage_reconstruct(config, &split, &extractors, seed_value, None, cache)?;
    Ok(TrainedSeed {
        split,
        extra,
        detector: Detector {
            extractors,
            model: r.model,
        },
        table: r.table,
        train_losses: r.losses,
    })
}

/// Run one seed; `None` when stopped early by `stop_after`.
pub fn run_seed(
    config: &ExperimentConfig,
    corpus: &Corpus,
    seed_value: u64,
    run_dir: Option<&Path>,
    stop_after: Option<Stage>,
    cache: &mut StageCache,
) -> Result<Option<SeedOutcome>> {
    let split = split_for_seed(config, corpus, seed_value)?;
    let extra = stage_augment(config, &split, seed_value, run_dir, cache)?;
    if stop_after == Some(Stage::Augment) {
        return Ok(None);
    }
    let extractors = stage_encode(config, &split, extra.as_ref(), seed_value, run_dir, cache)?;
    if stop_after == Some(Stage::Encode) {
        return Ok(None);
    }
    let r = stage_reconstruct(config, &split, &extractors, seed_value, run_dir, cache)?;
    let auc = evaluate_split(&split, &r.scores)?;
    Ok(Some(SeedOutcome {
        seed: seed_value,
        auc,
        train_size: split.train.len(),
        extra_size: extra.as_ref().map_or(0, Corpus::len),
        test_size: split.test.len(),
        table: r.table,
        test_scores: r.scores,
    }))
}

/// Run every seed of `config`. With a root directory, stage artifacts and
/// reports land in `<root>/<name>/` and completed stages are reused.
pub fn run_pipeline(config: &ExperimentConfig, opts: &RunOptions) -> Result<Option<RunReport>> {
    run_pipeline_cached(config, opts, &mut StageCache::new())
}

pub fn run_pipeline_cached(
    config: &ExperimentConfig,
    opts: &RunOptions,
    cache: &mut StageCache,
) -> Result<Option<RunReport>> {
    config.validate()?;
    let start = Instant::now();
    let run_dir = opts.root.as_ref().map(|r| r.join(&config.name));
    let _lock = match &run_dir {
        Some(d) => {
            let lock = RunLock::acquire(d)?;
            let manifest = format!("config_hash={}\n{}", config.hash(), config.to_text());
            let p = d.join("manifest.txt");
            fs::write(&p, manifest).map_err(|e| DacrError::io(&p, e))?;
            Some(lock)
        }
        None => None,
    };
    let corpus = load_data(config)?;
    let mut aucs = Vec::with_capacity(config.seeds.len());
    for &s in &config.seeds {
        match run_seed(config, &corpus, s, run_dir.as_deref(), opts.stop_after, cache)? {
            Some(o) => aucs.push(o.auc),
            None => return Ok(None),
        }
    }
    let f = corpus.features().unwrap_or(0);
    let mut checkpoints = Vec::new();
    if run_dir.is_some() {
        for &s in &config.seeds {
            if config.ablation == Ablation::None {
                checkpoints.push(PathBuf::from(format!("stage1/seed-{s}/vae.ckpt")));
            }
            for p in encoder_paths(f) {
                checkpoints.push(Path::new("stage2").join(format!("seed-{s}")).join(p));
            }
            checkpoints.push(PathBuf::from(format!("stage3/seed-{s}/reconstructor.ckpt")));
        }
    }
    let report = RunReport::new(
        config.name.clone(),
        config.ablation,
        config.hash(),
        config.to_text(),
        config.seeds.clone(),
        aucs,
        start.elapsed().as_secs_f64(),
        checkpoints,
    );
    if let Some(d) = &run_dir {
        report.write(d)?;
    }
    Ok(Some(report))
}

/// Run `config` with its ablation replaced by `which`.
pub fn run_ablation(config: &ExperimentConfig, which: Ablation, opts: &RunOptions) -> Result<Option<RunReport>> {
    let mut c = config.clone();
    c.ablation = which;
    if which != Ablation::None {
        c.name = format!("{}-{which}", config.name);
    }
    run_pipeline(&c, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synthetic::SyntheticSpec;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig::desk();
        c.name = "tiny".into();
        c.data = DataSource::Synthetic(SyntheticSpec {
            n_per_class: 6,
            t_len: 16,
            ..Default::default()
        });
        c.seeds = vec![0];
        c.vae.iterations = 2;
        c.encoder.iterations = 2;
        c.encoder.batch = 4;
        c.extractor.blocks = 2;
        c.reconstructor.m = 4;
        c.reconstructor.iterations = 2;
        c.reconstructor.batch = 2;
        c
    }

    #[test]
    fn in_memory_run_produces_one_auc_per_seed() {
        let r = run_pipeline(&tiny_config(), &RunOptions::default()).unwrap().unwrap();
        assert_eq!(r.aucs.len(), 1);
        assert!((0.0..=1.0).contains(&r.aucs[0]));
    }

    #[test]
    fn locked_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config();
        fs::create_dir_all(dir.path().join("tiny")).unwrap();
        fs::write(dir.path().join("tiny/lock"), "").unwrap();
        let r = run_pipeline(&c, &RunOptions::persisted(dir.path()));
        assert!(matches!(r, Err(DacrError::State(_))));
    }

    #[test]
    fn resume_after_stage_two_matches() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny_config();
        let opts = RunOptions {
            root: Some(dir.path().to_path_buf()),
            stop_after: Some(Stage::Encode),
        };
        assert!(run_pipeline(&c, &opts).unwrap().is_none());
        let resumed = run_pipeline(&c, &RunOptions::persisted(dir.path())).unwrap().unwrap();
        let fresh = run_pipeline(&c, &RunOptions::default()).unwrap().unwrap();
        assert_eq!(resumed.aucs, fresh.aucs);
        assert!(!dir.path().join("tiny/lock").exists());
    }
}
