use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::checkpoint::{self, header_value, Header};
use crate::dataset::{Corpus, TimeSeriesInstance};
use crate::error::{DacrError, Result};
use crate::nn::{Adam, Bound, Conv1dCausal, Linear, ParamStore};
use crate::seed;
use crate::tensor::Tensor;

use super::loss::{combined_loss_grad, EmbeddingPair};
use super::slicing::{default_min_len, sample_slice_pair};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractorConfig {
    pub embed_dim: usize,
    pub channels: usize,
    pub blocks: usize,
    pub kernel: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            embed_dim: 64,
            channels: 64,
            blocks: 5,
            kernel: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderTrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Minimum fragment length; `None` uses `max(3, T/4)`.
    pub min_len: Option<usize>,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            iterations: 200,
            lr: 1e-3,
            batch: 8,
            seed: 0,
            min_len: None,
        }
    }
}

/// Per-timestamp embeddings of one univariate series, `[len, dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub len: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl EmbeddingSequence {
    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// Dilated causal CNN mapping a univariate series to unit-norm per-timestamp
/// embeddings of the same length.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    feature_index: usize,
    config: ExtractorConfig,
    store: ParamStore,
    input: Linear,
    convs: Vec<Conv1dCausal>,
    head: Linear,
    frozen: bool,
}

impl FeatureExtractor {
    pub fn new(feature_index: usize, config: ExtractorConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed, "extractor-init", feature_index as u64);
        let mut store = ParamStore::new();
        let input = Linear::new(&mut store, "input", 1, config.channels, &mut rng);
        let convs = (0..config.blocks)
            .map(|k| {
                Conv1dCausal::new(
                    &mut store,
                    &format!("block{k}"),
                    config.channels,
                    config.channels,
                    config.kernel,
                    1 << k,
                    &mut rng,
                )
            })
            .collect();
        let head = Linear::new(&mut store, "head", config.channels, config.embed_dim, &mut rng);
        FeatureExtractor {
            feature_index,
            config,
            store,
            input,
            convs,
            head,
            frozen: false,
        }
    }

    pub fn feature_index(&self) -> usize {
        self.feature_index
    }

    pub fn config(&self) -> ExtractorConfig {
        self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    /// `[B, L, 1]` → `[B, L, D]` on the tape.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = self.input.forward(g, p, x);
        for conv in &self.convs {
            let c = conv.forward(g, p, h);
            let c = g.relu(c);
            h = g.add(h, c);
        }
        let z = self.head.forward(g, p, h);
        g.l2_normalize(z)
    }

    /// Embed equal-length univariate series in one pass.
    pub fn embed_batch(&self, series: &[&[f64]]) -> Result<Vec<EmbeddingSequence>> {
        let Some(first) = series.first() else {
            return Ok(Vec::new());
        };
        let len = first.len();
        if series.iter().any(|s| s.len() != len) {
            return Err(DacrError::Shape("embed_batch needs equal-length series".into()));
        }
        let mut data = Vec::with_capacity(series.len() * len);
        for s in series {
            data.extend_from_slice(s);
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let x = g.constant(Tensor::new(&[series.len(), len, 1], data));
        let z = self.forward(&mut g, &p, x);
        let d = self.config.embed_dim;
        Ok(g.value(z)
            .data()
            .chunks(len * d)
            .map(|c| EmbeddingSequence {
                len,
                dim: d,
                data: c.to_vec(),
            })
            .collect())
    }

    pub fn embed_series(&self, series: &[f64]) -> Result<EmbeddingSequence> {
        Ok(self.embed_batch(&[series])?.remove(0))
    }

    /// Embed feature `feature` of an instance; any other feature index is
    /// rejected.
    pub fn embed_instance(&self, inst: &TimeSeriesInstance, feature: usize) -> Result<EmbeddingSequence> {
        if feature != self.feature_index {
            return Err(DacrError::Shape(format!(
                "extractor for feature {} given feature {feature}",
                self.feature_index
            )));
        }
        if feature >= inst.features() {
            return Err(DacrError::Shape(format!(
                "instance {} has no feature {feature}",
                inst.id
            )));
        }
        self.embed_series(&inst.column(feature))
    }

    fn header(&self) -> Header {
        let c = self.config;
        [
            ("kind", "extractor".to_string()),
            ("feature_index", self.feature_index.to_string()),
            ("embed_dim", c.embed_dim.to_string()),
            ("channels", c.channels.to_string()),
            ("blocks", c.blocks.to_string()),
            ("kernel", c.kernel.to_string()),
            ("frozen", self.frozen.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.header(), &self.store)
    }

    pub fn load(path: &Path) -> Result<FeatureExtractor> {
        let (h, store) = checkpoint::load(path)?;
        checkpoint::expect_kind(&h, "extractor")?;
        let config = ExtractorConfig {
            embed_dim: header_value(&h, "embed_dim")?,
            channels: header_value(&h, "channels")?,
            blocks: header_value(&h, "blocks")?,
            kernel: header_value(&h, "kernel")?,
        };
        let mut ext = FeatureExtractor::new(header_value(&h, "feature_index")?, config, 0);
        ext.store.load_from(store)?;
        ext.frozen = header_value(&h, "frozen")?;
        Ok(ext)
    }
}

/// Per-feature embeddings of one instance, `[F][T][D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceEmbeddings {
    pub features: usize,
    pub t_len: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl InstanceEmbeddings {
    /// Embedding of feature `f` at 0-based timestamp `t`.
    pub fn at(&self, t: usize, f: usize) -> &[f64] {
        let o = (f * self.t_len + t) * self.dim;
        &self.data[o..o + self.dim]
    }
}

/// Load `f0.ckpt`, `f1.ckpt`, ... from `dir` until the first gap.
pub fn load_extractors(dir: &Path) -> Result<Vec<FeatureExtractor>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(format!("f{}.ckpt", out.len()));
        if !p.exists() {
            break;
        }
        out.push(FeatureExtractor::load(&p)?);
    }
    if out.is_empty() {
        return Err(DacrError::State(format!("no extractor checkpoints in {}", dir.display())));
    }
    Ok(out)
}

/// Embed every instance with its per-feature extractors.
pub fn embed_corpus(extractors: &[FeatureExtractor], instances: &[TimeSeriesInstance]) -> Result<Vec<InstanceEmbeddings>> {
    let Some(first) = instances.first() else {
        return Ok(Vec::new());
    };
    let f = first.features();
    if extractors.len() != f {
        return Err(DacrError::Shape(format!(
            "{} extractors for {f} features",
            extractors.len()
        )));
    }
    for (k, e) in extractors.iter().enumerate() {
        if e.feature_index() != k {
            return Err(DacrError::Shape(format!(
                "extractor in slot {k} serves feature {}",
                e.feature_index()
            )));
        }
    }
    let d = extractors[0].embed_dim();
    let mut out: Vec<InstanceEmbeddings> = instances
        .iter()
        .map(|i| InstanceEmbeddings {
            features: f,
            t_len: i.t_len(),
            dim: d,
            data: vec![0.0; f * i.t_len() * d],
        })
        .collect();
    // group equal-length instances so each extractor runs batched
    let mut by_len: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (k, i) in instances.iter().enumerate() {
        if i.features() != f {
            return Err(DacrError::Shape(format!("instance {} has F={}", i.id, i.features())));
        }
        by_len.entry(i.t_len()).or_default().push(k);
    }
    const CHUNK: usize = 64;
    for (len, members) in by_len {
        for chunk in members.chunks(CHUNK) {
            for (fi, ext) in extractors.iter().enumerate() {
                let cols: Vec<Vec<f64>> = chunk.iter().map(|&k| instances[k].column(fi)).collect();
                let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
                let embs = ext.embed_batch(&refs)?;
                for (&k, e) in chunk.iter().zip(embs) {
                    let o = fi * len * d;
                    out[k].data[o..o + len * d].copy_from_slice(&e.data);
                }
            }
        }
    }
    Ok(out)
}

fn union_columns(train: &Corpus, extra: Option<&Corpus>, f: usize) -> Vec<Vec<f64>> {
    train
        .instances
        .iter()
        .chain(extra.into_iter().flat_map(|e| e.instances.iter()))
        .map(|i| i.column(f))
        .collect()
}

fn check_shapes(train: &Corpus, extra: Option<&Corpus>) -> Result<(usize, usize)> {
    let t = train
        .t_len()
        .ok_or_else(|| DacrError::Shape("training corpus is empty or ragged".into()))?;
    let f = train.features().unwrap();
    if let Some(extra) = extra {
        if !extra.is_empty() && (extra.t_len() != Some(t) || extra.features() != Some(f)) {
            return Err(DacrError::Shape(format!(
                "extra data is {:?}x{:?}, training data is {t}x{f}",
                extra.t_len(),
                extra.features()
            )));
        }
    }
    Ok((t, f))
}

fn batch_indices<R: Rng>(rng: &mut R, pool: usize, batch: usize) -> Vec<usize> {
    if pool >= batch {
        sample(rng, pool, batch).into_vec()
    } else {
        (0..batch).map(|_| rng.random_range(0..pool)).collect()
    }
}

fn stack(cols: &[Vec<f64>], idx: &[usize], range: std::ops::RangeInclusive<usize>) -> Tensor {
    let len = range.end() - range.start() + 1;
    let mut data = Vec::with_capacity(idx.len() * len);
    for &i in idx {
        data.extend_from_slice(&cols[i][range.clone()]);
    }
    Tensor::new(&[idx.len(), len, 1], data)
}

/// Loss curve of one extractor's training run.
pub type LossCurve = Vec<f64>;

/// Contrastively train one extractor per feature on `train ∪ extra`.
/// Every returned extractor is frozen.
pub fn train_extractors(
    train: &Corpus,
    extra: Option<&Corpus>,
    config: ExtractorConfig,
    train_cfg: EncoderTrainConfig,
) -> Result<(Vec<FeatureExtractor>, Vec<LossCurve>)> {
    let (t_len, f) = check_shapes(train, extra)?;
    if train_cfg.batch == 0 {
        return Err(DacrError::Config("batch size must be >= 1".into()));
    }
    let min_len = train_cfg.min_len.unwrap_or_else(|| default_min_len(t_len));
    let results: Vec<Result<(FeatureExtractor, LossCurve)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..f)
            .map(|fi| {
                let cols = union_columns(train, extra, fi);
                s.spawn(move || train_contrastive_one(fi, &cols, t_len, min_len, config, train_cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extractor thread panicked")).collect()
    });
    let mut exts = Vec::with_capacity(f);
    let mut curves = Vec::with_capacity(f);
    for r in results {
        let (e, c) = r?;
        exts.push(e);
        curves.push(c);
    }
    Ok((exts, curves))
}

fn train_contrastive_one(
    fi: usize,
    cols: &[Vec<f64>],
    t_len: usize,
    min_len: usize,
    config: ExtractorConfig,
    cfg: EncoderTrainConfig,
) -> Result<(FeatureExtractor, LossCurve)> {
    let mut ext = FeatureExtractor::new(fi, config, cfg.seed);
    let mut rng = seed::rng(cfg.seed, "extractor-train", fi as u64);
    let mut opt = Adam::new(&ext.store, cfg.lr);
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = batch_indices(&mut rng, cols.len(), cfg.batch);
        let sp = sample_slice_pair(t_len, min_len, &mut rng)?;
        let mut g = Graph::new();
        let p = ext.store.bind(&mut g, true);
        let x1 = g.constant(stack(cols, &idx, sp.first()));
        let x2 = g.constant(stack(cols, &idx, sp.second()));
        let z1 = ext.forward(&mut g, &p, x1);
        let z2 = ext.forward(&mut g, &p, x2);
        let l = sp.overlap_len();
        let o1 = g.narrow(z1, 1, sp.second_start - sp.first_start, l);
        let o2 = g.narrow(z2, 1, 0, l);
        let d = config.embed_dim;
        let pair = EmbeddingPair::new(
            idx.len(),
            l,
            d,
            g.value(o1).data().to_vec(),
            g.value(o2).data().to_vec(),
        )
        .map_err(|e| DacrError::TrainingDiverged {
            iteration: it,
            detail: e.to_string(),
        })?;
        let (loss, ga, gp) = combined_loss_grad(&pair)?;
        if !loss.is_finite() {
            return Err(DacrError::TrainingDiverged {
                iteration: it,
                detail: format!("contrastive loss {loss} for feature {fi}"),
            });
        }
        let shape = [idx.len(), l, d];
        let node = g.custom_scalar(loss, &[o1, o2], vec![Tensor::new(&shape, ga), Tensor::new(&shape, gp)]);
        let grads = g.backward(node);
        opt.step(&mut ext.store, &p, &grads);
        curve.push(loss);
    }
    ext.freeze();
    Ok((ext, curve))
}

/// Train extractors of the same architecture with a per-timestamp
/// autoencoding objective instead (no contrastive loss, no extra data). A
/// throwaway linear head decodes `x^t` from the embedding at `t`.
pub fn train_autoencoding_extractors(
    train: &Corpus,
    config: ExtractorConfig,
    train_cfg: EncoderTrainConfig,
) -> Result<(Vec<FeatureExtractor>, Vec<LossCurve>)> {
    let (_, f) = check_shapes(train, None)?;
    if train_cfg.batch == 0 {
        return Err(DacrError::Config("batch size must be >= 1".into()));
    }
    let results: Vec<Result<(FeatureExtractor, LossCurve)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..f)
            .map(|fi| {
                let cols = union_columns(train, None, fi);
                s.spawn(move || train_autoencoding_one(fi, &cols, config, train_cfg))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extractor thread panicked")).collect()
    });
    let mut exts = Vec::with_capacity(f);
    let mut curves = Vec::with_capacity(f);
    for r in results {
        let (e, c) = r?;
        exts.push(e);
        curves.push(c);
    }
    Ok((exts, curves))
}

fn train_autoencoding_one(
    fi: usize,
    cols: &[Vec<f64>],
    config: ExtractorConfig,
    cfg: EncoderTrainConfig,
) -> Result<(FeatureExtractor, LossCurve)> {
    let mut ext = FeatureExtractor::new(fi, config, cfg.seed);
    let mut rng = seed::rng(cfg.seed, "autoencoder-train", fi as u64);
    // decoder head trained jointly in its own store
    let mut head_store = ParamStore::new();
    let head = Linear::new(&mut head_store, "decode", config.embed_dim, 1, &mut rng);
    let mut opt = Adam::new(&ext.store, cfg.lr);
    let mut head_opt = Adam::new(&head_store, cfg.lr);
    let t_len = cols[0].len();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = batch_indices(&mut rng, cols.len(), cfg.batch);
        let mut g = Graph::new();
        let p = ext.store.bind(&mut g, true);
        let hp = head_store.bind(&mut g, true);
        let x = stack(cols, &idx, 0..=t_len - 1);
        let target = x.clone();
        let xv = g.constant(x);
        let z = ext.forward(&mut g, &p, xv);
        let recon = head.forward(&mut g, &hp, z);
        let tv = g.constant(target);
        let diff = g.sub(recon, tv);
        let sq = g.mul(diff, diff);
        let loss = g.mean(sq);
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            return Err(DacrError::TrainingDiverged {
                iteration: it,
                detail: format!("autoencoding loss {lv} for feature {fi}"),
            });
        }
        let grads = g.backward(loss);
        opt.step(&mut ext.store, &p, &grads);
        head_opt.step(&mut head_store, &hp, &grads);
        curve.push(lv);
    }
    ext.freeze();
    Ok((ext, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExtractorConfig {
        ExtractorConfig {
            embed_dim: 8,
            channels: 8,
            blocks: 3,
            kernel: 3,
        }
    }

    fn sine_corpus(n: usize, t: usize, f: usize) -> Corpus {
        let inst = (0..n)
            .map(|i| {
                let v = (0..t * f)
                    .map(|k| ((k / f) as f64 * 0.3 + i as f64 + (k % f) as f64).sin())
                    .collect();
                TimeSeriesInstance::new(format!("s{i}"), t, f, v).unwrap()
            })
            .collect();
        Corpus::new(inst, "synthetic").unwrap()
    }

    #[test]
    fn output_length_matches_input_length() {
        let ext = FeatureExtractor::new(0, tiny(), 1);
        for len in [3, 50, 100] {
            let s: Vec<f64> = (0..len).map(|k| (k as f64).cos()).collect();
            let e = ext.embed_series(&s).unwrap();
            assert_eq!(e.len, len);
            assert_eq!(e.data.len(), len * 8);
            for t in 0..len {
                let n: f64 = e.at(t).iter().map(|v| v * v).sum();
                assert!((n - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn one_frozen_extractor_per_feature() {
        let corpus = sine_corpus(6, 20, 3);
        let cfg = EncoderTrainConfig {
            iterations: 3,
            batch: 4,
            ..Default::default()
        };
        let (exts, curves) = train_extractors(&corpus, None, tiny(), cfg).unwrap();
        assert_eq!(exts.len(), 3);
        assert_eq!(curves[0].len(), 3);
        for (k, e) in exts.iter().enumerate() {
            assert!(e.is_frozen());
            assert_eq!(e.feature_index(), k);
            let other = (k + 1) % 3;
            assert!(e.embed_instance(&corpus.instances[0], other).is_err());
            assert!(e.embed_instance(&corpus.instances[0], k).is_ok());
        }
    }

    #[test]
    fn zero_iterations_keep_initialization() {
        let corpus = sine_corpus(4, 20, 2);
        let cfg = EncoderTrainConfig {
            iterations: 0,
            seed: 9,
            ..Default::default()
        };
        let (exts, _) = train_extractors(&corpus, None, tiny(), cfg).unwrap();
        for e in &exts {
            let fresh = FeatureExtractor::new(e.feature_index(), tiny(), 9);
            assert_eq!(e.checksum(), fresh.checksum());
        }
    }

    #[test]
    fn frozen_embedding_is_repeatable() {
        let corpus = sine_corpus(4, 20, 1);
        let (exts, _) = train_extractors(&corpus, None, tiny(), EncoderTrainConfig {
            iterations: 2,
            batch: 2,
            ..Default::default()
        })
        .unwrap();
        let a = exts[0].embed_instance(&corpus.instances[1], 0).unwrap();
        let b = exts[0].embed_instance(&corpus.instances[1], 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = FeatureExtractor::new(2, tiny(), 4);
        e.freeze();
        let p = dir.path().join("f2.ckpt");
        e.save(&p).unwrap();
        let back = FeatureExtractor::load(&p).unwrap();
        assert_eq!(back.checksum(), e.checksum());
        assert_eq!(back.feature_index(), 2);
        assert!(back.is_frozen());
    }

    #[test]
    fn mismatched_extra_is_rejected() {
        let train = sine_corpus(4, 20, 2);
        let extra = sine_corpus(4, 21, 2);
        let r = train_extractors(&train, Some(&extra), tiny(), EncoderTrainConfig::default());
        assert!(matches!(r, Err(DacrError::Shape(_))));
    }
}
