//! Transformer encoder–decoder reconstructing `x^{t,f}` from a masked block
//! of frozen embeddings covering timestamps `t−m ..= t` of every feature.

use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::checkpoint::{self, header_value, Header};
use crate::dataset::{Corpus, TimeSeriesInstance};
use crate::encoder::{embed_corpus, FeatureExtractor, InstanceEmbeddings};
use crate::error::{DacrError, Result};
use crate::nn::{Adam, Bound, FeedForward, LayerNorm, Linear, MultiHeadAttention, ParamId, ParamStore};
use crate::seed;
use crate::tensor::Tensor;

/// Queries evaluated per inference graph.
const QUERY_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReconstructorConfig {
    pub m: usize,
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_ff: usize,
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    /// `(t, f)` targets drawn per instance in each batch.
    pub queries_per_instance: usize,
    pub seed: u64,
}

impl Default for ReconstructorConfig {
    fn default() -> Self {
        ReconstructorConfig {
            m: 20,
            d_model: 64,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            d_ff: 128,
            iterations: 200,
            lr: 1e-3,
            batch: 8,
            queries_per_instance: 8,
            seed: 0,
        }
    }
}

/// `F × (m+1) × D` embedding block for target `(t, f)`; the cell of feature
/// `f` at timestamp `t` is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBlock {
    pub features: usize,
    pub slots: usize,
    pub dim: usize,
    pub t: usize,
    pub f: usize,
    pub data: Vec<f64>,
}

impl InputBlock {
    /// Cell of feature row `row`, slot `k` (`k = m` is timestamp `t`).
    pub fn cell(&self, row: usize, k: usize) -> &[f64] {
        let o = (row * self.slots + k) * self.dim;
        &self.data[o..o + self.dim]
    }
}

fn check_target(emb: &InstanceEmbeddings, t: usize, f: usize, m: usize) -> Result<()> {
    if t < m || t >= emb.t_len {
        return Err(DacrError::Range(format!(
            "timestamp {t} outside [{m}, {}) for history m={m}",
            emb.t_len
        )));
    }
    if f >= emb.features {
        return Err(DacrError::Range(format!("feature {f} outside [0, {})", emb.features)));
    }
    Ok(())
}

/// Assemble the masked block for 0-based target `(t, f)`; needs `t ≥ m`.
pub fn build_input_block(emb: &InstanceEmbeddings, t: usize, f: usize, m: usize) -> Result<InputBlock> {
    check_target(emb, t, f, m)?;
    let d = emb.dim;
    let mut data = Vec::with_capacity(emb.features * (m + 1) * d);
    for row in 0..emb.features {
        for k in 0..=m {
            if row == f && k == m {
                data.extend(std::iter::repeat_n(0.0, d));
            } else {
                data.extend_from_slice(emb.at(t - m + k, row));
            }
        }
    }
    Ok(InputBlock {
        features: emb.features,
        slots: m + 1,
        dim: d,
        t,
        f,
        data,
    })
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    cross: MultiHeadAttention,
    ln1: LayerNorm,
    ff: FeedForward,
    ln2: LayerNorm,
}

/// Reconstructions of one instance, `NaN` at warm-up timestamps `t < m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionGrid {
    pub t_len: usize,
    pub features: usize,
    pub m: usize,
    pub values: Vec<f64>,
}

impl ReconstructionGrid {
    pub fn get(&self, t: usize, f: usize) -> Option<f64> {
        (t >= self.m).then(|| self.values[t * self.features + f])
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructorModel {
    features: usize,
    embed_dim: usize,
    config: ReconstructorConfig,
    store: ParamStore,
    proj: Linear,
    pos: ParamId,
    feat: ParamId,
    query: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

/// Token rows of a graph-local embedding table plus the target feature for
/// each query.
struct QueryBatch {
    rows: Vec<usize>,
    fs: Vec<usize>,
}

impl ReconstructorModel {
    pub fn new(features: usize, embed_dim: usize, config: ReconstructorConfig) -> Result<Self> {
        if features == 0 || embed_dim == 0 || config.d_model == 0 || config.heads == 0 {
            return Err(DacrError::Config("reconstructor sizes must be positive".into()));
        }
        if !config.d_model.is_multiple_of(config.heads) {
            return Err(DacrError::Config(format!(
                "d_model {} is not divisible by {} heads",
                config.d_model, config.heads
            )));
        }
        let mut rng = seed::rng(config.seed, "reconstructor-init", 0);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let proj = Linear::new(&mut store, "proj", embed_dim, d, &mut rng);
        let pos = store.add_uniform("pos", &[config.m + 1, d], 0.1, &mut rng);
        let feat = store.add_uniform("feat", &[features, d], 0.1, &mut rng);
        let query = store.add_uniform("query", &[d], 0.1, &mut rng);
        let encoder = (0..config.enc_layers)
            .map(|l| EncoderLayer {
                attn: MultiHeadAttention::new(&mut store, &format!("enc{l}.attn"), d, config.heads, &mut rng),
                ln1: LayerNorm::new(&mut store, &format!("enc{l}.ln1"), d),
                ff: FeedForward::new(&mut store, &format!("enc{l}.ff"), d, config.d_ff, &mut rng),
                ln2: LayerNorm::new(&mut store, &format!("enc{l}.ln2"), d),
            })
            .collect();
        let decoder = (0..config.dec_layers)
            .map(|l| DecoderLayer {
                cross: MultiHeadAttention::new(&mut store, &format!("dec{l}.cross"), d, config.heads, &mut rng),
                ln1: LayerNorm::new(&mut store, &format!("dec{l}.ln1"), d),
                ff: FeedForward::new(&mut store, &format!("dec{l}.ff"), d, config.d_ff, &mut rng),
                ln2: LayerNorm::new(&mut store, &format!("dec{l}.ln2"), d),
            })
            .collect();
        let head = Linear::new(&mut store, "head", d, 1, &mut rng);
        Ok(ReconstructorModel {
            features,
            embed_dim,
            config,
            store,
            proj,
            pos,
            feat,
            query,
            encoder,
            decoder,
            head,
        })
    }

    pub fn m(&self) -> usize {
        self.config.m
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn config(&self) -> ReconstructorConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    fn check_embeddings(&self, emb: &InstanceEmbeddings) -> Result<()> {
        if emb.features != self.features || emb.dim != self.embed_dim {
            return Err(DacrError::Shape(format!(
                "reconstructor expects F={} D={}, got F={} D={}",
                self.features, self.embed_dim, emb.features, emb.dim
            )));
        }
        Ok(())
    }

    /// Scalar reconstructions `[Bq]` for queries whose tokens are rows of
    /// `table` (`[R, D]`).
    fn forward(&self, g: &mut Graph, p: &Bound, table: Var, q: &QueryBatch) -> Var {
        let slots = self.config.m + 1;
        let tokens = self.features * slots;
        let d = self.config.d_model;
        let bq = q.fs.len();
        let projected = self.proj.forward(g, p, table);
        let x = g.gather_rows_as(projected, &q.rows, &[bq, tokens, d]);
        // positional + feature-id embedding of every grid cell
        let pos_idx: Vec<usize> = (0..tokens).map(|k| k % slots).collect();
        let feat_idx: Vec<usize> = (0..tokens).map(|k| k / slots).collect();
        let pe = g.gather_rows(p.var(self.pos), &pos_idx);
        let fe = g.gather_rows(p.var(self.feat), &feat_idx);
        let grid = g.add(pe, fe);
        let mut h = g.add_broadcast(x, grid);
        for layer in &self.encoder {
            let a = layer.attn.forward(g, p, h, h);
            let r = g.add(h, a);
            let r = layer.ln1.forward(g, p, r);
            let f = layer.ff.forward(g, p, r);
            let r2 = g.add(r, f);
            h = layer.ln2.forward(g, p, r2);
        }
        let qf = g.gather_rows(p.var(self.feat), &q.fs);
        let qp = g.gather_rows(p.var(self.pos), &[self.config.m]);
        let qp = g.reshape(qp, &[d]);
        let qv = g.add_broadcast(qf, qp);
        let qv = g.add_broadcast(qv, p.var(self.query));
        let mut y = g.reshape(qv, &[bq, 1, d]);
        for layer in &self.decoder {
            let a = layer.cross.forward(g, p, y, h);
            let r = g.add(y, a);
            let r = layer.ln1.forward(g, p, r);
            let f = layer.ff.forward(g, p, r);
            let r2 = g.add(r, f);
            y = layer.ln2.forward(g, p, r2);
        }
        let out = self.head.forward(g, p, y);
        g.reshape(out, &[bq])
    }

    /// Token rows of query `(t, f)` for an instance whose embeddings start at
    /// table row `base`; `zero_row` holds the mask.
    fn push_query(&self, qb: &mut QueryBatch, base: usize, t_len: usize, t: usize, f: usize, zero_row: usize) {
        let m = self.config.m;
        for row in 0..self.features {
            for k in 0..=m {
                if row == f && k == m {
                    qb.rows.push(zero_row);
                } else {
                    qb.rows.push(base + row * t_len + t - m + k);
                }
            }
        }
        qb.fs.push(f);
    }

    /// Embedding table for a set of instances: rows `[F·T]` per instance,
    /// then one zero row. Returns the table, per-instance base rows and the
    /// zero-row index.
    fn table(&self, embs: &[&InstanceEmbeddings]) -> (Tensor, Vec<usize>, usize) {
        let d = self.embed_dim;
        let mut data = Vec::new();
        let mut bases = Vec::with_capacity(embs.len());
        let mut rows = 0;
        for e in embs {
            bases.push(rows);
            data.extend_from_slice(&e.data);
            rows += e.features * e.t_len;
        }
        data.extend(std::iter::repeat_n(0.0, d));
        (Tensor::new(&[rows + 1, d], data), bases, rows)
    }

    /// Reconstruct the target of a prebuilt block.
    pub fn reconstruct_block(&self, block: &InputBlock) -> Result<f64> {
        if block.features != self.features || block.dim != self.embed_dim || block.slots != self.config.m + 1 {
            return Err(DacrError::Shape(format!(
                "block is {}x{}x{}, model expects {}x{}x{}",
                block.features,
                block.slots,
                block.dim,
                self.features,
                self.config.m + 1,
                self.embed_dim
            )));
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let n = block.features * block.slots;
        let table = g.constant(Tensor::new(&[n, block.dim], block.data.clone()));
        let q = QueryBatch {
            rows: (0..n).collect(),
            fs: vec![block.f],
        };
        let y = self.forward(&mut g, &p, table, &q);
        Ok(g.value(y).data()[0])
    }

    /// Reconstruct every valid `(t, f)` of one instance.
    pub fn reconstruct_instance(&self, emb: &InstanceEmbeddings) -> Result<ReconstructionGrid> {
        self.check_embeddings(emb)?;
        let m = self.config.m;
        let f_n = self.features;
        let mut values = vec![f64::NAN; emb.t_len * f_n];
        if emb.t_len <= m {
            return Ok(ReconstructionGrid {
                t_len: emb.t_len,
                features: f_n,
                m,
                values,
            });
        }
        let targets: Vec<(usize, usize)> = (m..emb.t_len).flat_map(|t| (0..f_n).map(move |f| (t, f))).collect();
        let (table, bases, zero) = self.table(&[emb]);
        for chunk in targets.chunks(QUERY_CHUNK) {
            let mut qb = QueryBatch {
                rows: Vec::new(),
                fs: Vec::new(),
            };
            for &(t, f) in chunk {
                self.push_query(&mut qb, bases[0], emb.t_len, t, f, zero);
            }
            let mut g = Graph::new();
            let p = self.store.bind(&mut g, false);
            let tv = g.constant(table.clone());
            let y = self.forward(&mut g, &p, tv, &qb);
            for (&(t, f), &v) in chunk.iter().zip(g.value(y).data()) {
                values[t * f_n + f] = v;
            }
        }
        Ok(ReconstructionGrid {
            t_len: emb.t_len,
            features: f_n,
            m,
            values,
        })
    }

    /// Mean squared error over `queries` (`(instance, t, f)`), with its
    /// gradient with respect to each instance's embeddings.
    pub fn loss_and_embedding_grad(
        &self,
        embs: &[&InstanceEmbeddings],
        targets: &[&TimeSeriesInstance],
        queries: &[(usize, usize, usize)],
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let (table, bases, zero) = self.table(embs);
        let tv = g.param(table);
        let (qb, y) = self.queries(embs, targets, queries, &bases, zero)?;
        let pred = self.forward(&mut g, &p, tv, &qb);
        let yv = g.constant(y);
        let loss = mse(&mut g, pred, yv);
        let grads = g.backward(loss);
        let gt = grads.get(tv).expect("embedding table gradient");
        let out = embs
            .iter()
            .zip(&bases)
            .map(|(e, &b)| gt.data()[b * self.embed_dim..(b + e.features * e.t_len) * self.embed_dim].to_vec())
            .collect();
        Ok((g.value(loss).item(), out))
    }

    fn queries(
        &self,
        embs: &[&InstanceEmbeddings],
        targets: &[&TimeSeriesInstance],
        queries: &[(usize, usize, usize)],
        bases: &[usize],
        zero: usize,
    ) -> Result<(QueryBatch, Tensor)> {
        if embs.len() != targets.len() {
            return Err(DacrError::Shape("one target instance per embedding set".into()));
        }
        let mut qb = QueryBatch {
            rows: Vec::with_capacity(queries.len() * self.features * (self.config.m + 1)),
            fs: Vec::with_capacity(queries.len()),
        };
        let mut y = Vec::with_capacity(queries.len());
        for &(i, t, f) in queries {
            let e = embs
                .get(i)
                .ok_or_else(|| DacrError::Range(format!("query instance {i} out of range")))?;
            self.check_embeddings(e)?;
            check_target(e, t, f, self.config.m)?;
            self.push_query(&mut qb, bases[i], e.t_len, t, f, zero);
            y.push(targets[i].at(t, f));
        }
        Ok((qb, Tensor::new(&[queries.len()], y)))
    }

    /// Squared-error objective over every valid `(i, t, f)` of the given
    /// instances, normalized by the number of terms.
    pub fn mse_objective(&self, embs: &[&InstanceEmbeddings], targets: &[&TimeSeriesInstance]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for (e, x) in embs.iter().zip(targets) {
            let grid = self.reconstruct_instance(e)?;
            for t in self.config.m..e.t_len {
                for f in 0..self.features {
                    total += (grid.values[t * self.features + f] - x.at(t, f)).powi(2);
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(DacrError::Config("no valid reconstruction targets".into()));
        }
        Ok(total / n as f64)
    }

    fn header(&self) -> Header {
        let c = self.config;
        [
            ("kind", "reconstructor".to_string()),
            ("F", self.features.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("m", c.m.to_string()),
            ("d_model", c.d_model.to_string()),
            ("heads", c.heads.to_string()),
            ("enc_layers", c.enc_layers.to_string()),
            ("dec_layers", c.dec_layers.to_string()),
            ("d_ff", c.d_ff.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.header(), &self.store)
    }

    pub fn load(path: &Path) -> Result<ReconstructorModel> {
        let (h, store) = checkpoint::load(path)?;
        checkpoint::expect_kind(&h, "reconstructor")?;
        let config = ReconstructorConfig {
            m: header_value(&h, "m")?,
            d_model: header_value(&h, "d_model")?,
            heads: header_value(&h, "heads")?,
            enc_layers: header_value(&h, "enc_layers")?,
            dec_layers: header_value(&h, "dec_layers")?,
            d_ff: header_value(&h, "d_ff")?,
            ..Default::default()
        };
        let mut model = ReconstructorModel::new(header_value(&h, "F")?, header_value(&h, "embed_dim")?, config)?;
        model.store.load_from(store)?;
        Ok(model)
    }
}

fn mse(g: &mut Graph, pred: Var, target: Var) -> Var {
    let diff = g.sub(pred, target);
    let sq = g.mul(diff, diff);
    g.mean(sq)
}

/// Reconstruction at 0-based `(t, f)` from an instance's embeddings.
pub fn reconstruct(model: &ReconstructorModel, emb: &InstanceEmbeddings, t: usize, f: usize) -> Result<f64> {
    let block = build_input_block(emb, t, f, model.m())?;
    model.reconstruct_block(&block)
}

/// Train on precomputed embeddings of the (normalized) training instances.
pub fn train_on_embeddings(
    train: &Corpus,
    embs: &[InstanceEmbeddings],
    config: ReconstructorConfig,
) -> Result<(ReconstructorModel, Vec<f64>)> {
    let first = embs
        .first()
        .ok_or_else(|| DacrError::Config("cannot train the reconstructor on an empty corpus".into()))?;
    if embs.len() != train.len() {
        return Err(DacrError::Shape("one embedding set per training instance".into()));
    }
    if config.batch == 0 || config.queries_per_instance == 0 {
        return Err(DacrError::Config("batch and queries_per_instance must be >= 1".into()));
    }
    let t_len = first.t_len;
    if t_len <= config.m {
        return Err(DacrError::Range(format!(
            "series length {t_len} leaves no target after history m={}",
            config.m
        )));
    }
    let mut model = ReconstructorModel::new(first.features, first.dim, config)?;
    let mut rng = seed::rng(config.seed, "reconstructor-train", 0);
    let mut opt = Adam::new(&model.store, config.lr);
    let mut curve = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch).map(|_| rng.random_range(0..train.len())).collect();
        let batch_embs: Vec<&InstanceEmbeddings> = idx.iter().map(|&i| &embs[i]).collect();
        let batch_x: Vec<&TimeSeriesInstance> = idx.iter().map(|&i| &train.instances[i]).collect();
        let mut queries = Vec::with_capacity(config.batch * config.queries_per_instance);
        for (k, e) in batch_embs.iter().enumerate() {
            for _ in 0..config.queries_per_instance {
                let t = rng.random_range(config.m..e.t_len);
                let f = rng.random_range(0..e.features);
                queries.push((k, t, f));
            }
        }
        let (table, bases, zero) = model.table(&batch_embs);
        let (qb, y) = model.queries(&batch_embs, &batch_x, &queries, &bases, zero)?;
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, true);
        let tv = g.constant(table);
        let pred = model.forward(&mut g, &p, tv, &qb);
        let yv = g.constant(y);
        let loss = mse(&mut g, pred, yv);
        let lv = g.value(loss).item();
        if !lv.is_finite() {
            return Err(DacrError::TrainingDiverged {
                iteration: it,
                detail: format!("reconstruction loss {lv}"),
            });
        }
        let grads = g.backward(loss);
        opt.step(&mut model.store, &p, &grads);
        curve.push(lv);
    }
    Ok((model, curve))
}

/// Train against frozen extractors. Fails if any extractor is not frozen or
/// its parameters drift during the run.
pub fn train_reconstructor(
    train: &Corpus,
    extractors: &[FeatureExtractor],
    config: ReconstructorConfig,
) -> Result<(ReconstructorModel, Vec<f64>)> {
    if let Some(e) = extractors.iter().find(|e| !e.is_frozen()) {
        return Err(DacrError::State(format!(
            "extractor for feature {} is not frozen",
            e.feature_index()
        )));
    }
    let before: Vec<String> = extractors.iter().map(FeatureExtractor::checksum).collect();
    let embs = embed_corpus(extractors, &train.instances)?;
    let out = train_on_embeddings(train, &embs, config)?;
    let after: Vec<String> = extractors.iter().map(FeatureExtractor::checksum).collect();
    if before != after {
        return Err(DacrError::State("extractor parameters changed during reconstructor training".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ReconstructorConfig {
        ReconstructorConfig {
            m: 2,
            d_model: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            d_ff: 16,
            iterations: 0,
            lr: 1e-2,
            batch: 2,
            queries_per_instance: 4,
            seed: 1,
        }
    }

    fn emb(t_len: usize, features: usize, dim: usize, salt: f64) -> InstanceEmbeddings {
        InstanceEmbeddings {
            features,
            t_len,
            dim,
            data: (0..features * t_len * dim).map(|k| (k as f64 * 0.37 + salt).sin()).collect(),
        }
    }

    #[test]
    fn block_matches_hand_layout() {
        // F=2, m=1, target t=1 (second timestamp), f=0
        let e = emb(2, 2, 1, 0.0);
        let b = build_input_block(&e, 1, 0, 1).unwrap();
        assert_eq!(b.cell(0, 0), e.at(0, 0));
        assert_eq!(b.cell(0, 1), &[0.0]);
        assert_eq!(b.cell(1, 0), e.at(0, 1));
        assert_eq!(b.cell(1, 1), e.at(1, 1));
    }

    #[test]
    fn warm_up_timestamps_are_out_of_range() {
        let e = emb(5, 2, 3, 0.0);
        assert!(matches!(build_input_block(&e, 1, 0, 2), Err(DacrError::Range(_))));
        assert!(build_input_block(&e, 2, 0, 2).is_ok());
        assert!(matches!(build_input_block(&e, 5, 0, 2), Err(DacrError::Range(_))));
        assert!(matches!(build_input_block(&e, 3, 2, 2), Err(DacrError::Range(_))));
    }

    #[test]
    fn batched_and_single_paths_agree() {
        let model = ReconstructorModel::new(2, 3, tiny()).unwrap();
        let e = emb(6, 2, 3, 0.5);
        let grid = model.reconstruct_instance(&e).unwrap();
        for t in 0..6 {
            for f in 0..2 {
                match grid.get(t, f) {
                    None => assert!(t < 2),
                    Some(v) => {
                        let single = reconstruct(&model, &e, t, f).unwrap();
                        assert!((v - single).abs() < 1e-12, "{v} vs {single}");
                    }
                }
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let model = ReconstructorModel::new(3, 4, tiny()).unwrap();
        let p = dir.path().join("r.ckpt");
        model.save(&p).unwrap();
        let back = ReconstructorModel::load(&p).unwrap();
        assert_eq!(back.checksum(), model.checksum());
        assert_eq!(back.m(), 2);
    }

    #[test]
    fn unfrozen_extractor_is_rejected() {
        let inst = TimeSeriesInstance::new("a", 6, 1, vec![0.0; 6]).unwrap();
        let c = Corpus::new(vec![inst], "synthetic").unwrap();
        let ext = FeatureExtractor::new(0, crate::encoder::ExtractorConfig::default(), 0);
        assert!(matches!(
            train_reconstructor(&c, &[ext], tiny()),
            Err(DacrError::State(_))
        ));
    }

    #[test]
    fn learns_constant_zero() {
        let insts: Vec<_> = (0..4)
            .map(|i| TimeSeriesInstance::new(format!("z{i}"), 8, 2, vec![0.0; 16]).unwrap())
            .collect();
        let c = Corpus::new(insts, "synthetic").unwrap();
        let embs: Vec<_> = (0..4).map(|i| emb(8, 2, 3, i as f64)).collect();
        let cfg = ReconstructorConfig {
            iterations: 300,
            ..tiny()
        };
        let (_, curve) = train_on_embeddings(&c, &embs, cfg).unwrap();
        assert!(*curve.last().unwrap() < 1e-4, "{:?}", &curve[curve.len() - 5..]);
    }
}
