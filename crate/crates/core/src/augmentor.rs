//! Sequence VAE and latent-noise distribution augmentation.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Var};
use crate::checkpoint::{self, header_value, Header};
use crate::dataset::{Corpus, TimeSeriesInstance};
use crate::error::{DacrError, Result};
use crate::nn::{Adam, Bound, Linear, Lstm, ParamStore};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeConfig {
    pub hidden: usize,
    pub latent_dim: usize,
    pub iterations: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            hidden: 32,
            latent_dim: 16,
            iterations: 200,
            lr: 1e-4,
            batch: 8,
            seed: 0,
        }
    }
}

/// Gaussian parameters of the multiplicative (`alpha`) and additive (`beta`)
/// latent noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub alpha_mean: f64,
    pub alpha_var: f64,
    pub beta_mean: f64,
    pub beta_var: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            alpha_mean: 1.0,
            alpha_var: 0.1,
            beta_mean: 0.0,
            beta_var: 0.1,
        }
    }
}

impl NoiseSpec {
    /// Default means with both variances set to `var`.
    pub fn with_var(var: f64) -> Self {
        NoiseSpec {
            alpha_var: var,
            beta_var: var,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.alpha_mean, self.alpha_var, self.beta_mean, self.beta_var]
            .iter()
            .all(|v| v.is_finite())
            && self.alpha_var >= 0.0
            && self.beta_var >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DacrError::Config(format!("invalid noise spec {self:?}")))
        }
    }
}

/// `alpha ⊙ latent + beta` with `alpha`, `beta` drawn once per call from `NoiseSpec`.
pub fn inject_noise(latent: &[f64], spec: &NoiseSpec, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed, "latent-noise", 0);
    let sa = spec.alpha_var.sqrt();
    let sb = spec.beta_var.sqrt();
    let alpha: Vec<f64> = (0..latent.len())
        .map(|_| spec.alpha_mean + sa * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let beta: Vec<f64> = (0..latent.len())
        .map(|_| spec.beta_mean + sb * rng.sample::<f64, _>(StandardNormal))
        .collect();
    latent
        .iter()
        .zip(alpha.iter().zip(&beta))
        .map(|(z, (a, b))| a * z + b)
        .collect()
}

/// LSTM VAE over fixed-shape `T×F` instances: two LSTM layers encode to a
/// diagonal Gaussian latent, two more decode the latent repeated over time.
#[derive(Clone, Debug)]
pub struct VaeModel {
    t_len: usize,
    features: usize,
    config: VaeConfig,
    store: ParamStore,
    enc1: Lstm,
    enc2: Lstm,
    mu: Linear,
    logvar: Linear,
    dec1: Lstm,
    dec2: Lstm,
    out: Linear,
    trained: bool,
}

struct Encoded {
    mu: Var,
    logvar: Var,
}

impl VaeModel {
    pub fn new(t_len: usize, features: usize, config: VaeConfig) -> Self {
        let mut rng = seed::rng(config.seed, "vae-init", 0);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let z = config.latent_dim;
        let enc1 = Lstm::new(&mut store, "enc1", features, h, &mut rng);
        let enc2 = Lstm::new(&mut store, "enc2", h, h, &mut rng);
        let mu = Linear::new(&mut store, "mu", h, z, &mut rng);
        let logvar = Linear::new(&mut store, "logvar", h, z, &mut rng);
        let dec1 = Lstm::new(&mut store, "dec1", z, h, &mut rng);
        let dec2 = Lstm::new(&mut store, "dec2", h, h, &mut rng);
        let out = Linear::new(&mut store, "out", h, features, &mut rng);
        VaeModel {
            t_len,
            features,
            config,
            store,
            enc1,
            enc2,
            mu,
            logvar,
            dec1,
            dec2,
            out,
            trained: false,
        }
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn config(&self) -> VaeConfig {
        self.config
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn checksum(&self) -> String {
        self.store.checksum()
    }

    fn encode_graph(&self, g: &mut Graph, p: &Bound, x: Var) -> Encoded {
        let b = g.shape(x)[0];
        let h = self.enc1.forward(g, p, x);
        let h = self.enc2.forward(g, p, h);
        let last = g.narrow(h, 1, self.t_len - 1, 1);
        let last = g.reshape(last, &[b, self.config.hidden]);
        Encoded {
            mu: self.mu.forward(g, p, last),
            logvar: self.logvar.forward(g, p, last),
        }
    }

    fn decode_graph(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let h = self.dec1.forward_repeated(g, p, z, self.t_len);
        let h = self.dec2.forward(g, p, h);
        self.out.forward(g, p, h)
    }

    fn check_shape(&self, inst: &TimeSeriesInstance) -> Result<()> {
        if inst.t_len() != self.t_len || inst.features() != self.features {
            return Err(DacrError::Shape(format!(
                "VAE expects {}x{}, instance {} is {}x{}",
                self.t_len,
                self.features,
                inst.id,
                inst.t_len(),
                inst.features()
            )));
        }
        Ok(())
    }

    fn stack(&self, instances: &[&TimeSeriesInstance]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(instances.len() * self.t_len * self.features);
        for inst in instances {
            self.check_shape(inst)?;
            data.extend_from_slice(inst.values());
        }
        Ok(Tensor::new(&[instances.len(), self.t_len, self.features], data))
    }

    /// Posterior means, one latent vector per instance.
    pub fn encode_mean(&self, instances: &[&TimeSeriesInstance]) -> Result<Vec<Vec<f64>>> {
        if instances.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.stack(instances)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let xv = g.constant(x);
        let e = self.encode_graph(&mut g, &p, xv);
        let z = self.config.latent_dim;
        Ok(g.value(e.mu).data().chunks(z).map(<[f64]>::to_vec).collect())
    }

    /// Decode latent vectors to row-major `T×F` value blocks.
    pub fn decode(&self, latents: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let zd = self.config.latent_dim;
        if latents.iter().any(|l| l.len() != zd) {
            return Err(DacrError::Shape(format!("latent vectors must have length {zd}")));
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let z = g.constant(Tensor::new(&[latents.len(), zd], latents.concat()));
        let y = self.decode_graph(&mut g, &p, z);
        Ok(g.value(y)
            .data()
            .chunks(self.t_len * self.features)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Deterministic reconstruction through the posterior mean.
    pub fn reconstruct(&self, instances: &[&TimeSeriesInstance]) -> Result<Vec<Vec<f64>>> {
        let z = self.encode_mean(instances)?;
        self.decode(&z)
    }

    /// Mean squared reconstruction error over all cells of `corpus`.
    pub fn reconstruction_mse(&self, corpus: &Corpus) -> Result<f64> {
        let refs: Vec<&TimeSeriesInstance> = corpus.instances.iter().collect();
        let mut total = 0.0;
        let mut n = 0usize;
        for chunk in refs.chunks(64) {
            let rec = self.reconstruct(chunk)?;
            for (inst, r) in chunk.iter().zip(rec) {
                total += inst.values().iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                n += r.len();
            }
        }
        if n == 0 {
            return Err(DacrError::Config("empty corpus".into()));
        }
        Ok(total / n as f64)
    }

    /// Train in place. Returns the per-iteration reconstruction MSE. On
    /// divergence the parameters of the last finite iteration are kept.
    pub fn train(&mut self, train: &Corpus, iterations: usize, lr: f64) -> Result<Vec<f64>> {
        if train.is_empty() {
            return Err(DacrError::Config("cannot train the VAE on an empty corpus".into()));
        }
        if self.config.batch == 0 {
            return Err(DacrError::Config("batch size must be >= 1".into()));
        }
        for inst in &train.instances {
            self.check_shape(inst)?;
        }
        let mut rng = seed::rng(self.config.seed, "vae-train", 0);
        let mut opt = Adam::new(&self.store, lr);
        let zd = self.config.latent_dim;
        let cells = (self.t_len * self.features) as f64;
        let mut curve = Vec::with_capacity(iterations);
        for it in 0..iterations {
            let idx: Vec<usize> = (0..self.config.batch)
                .map(|_| rng.random_range(0..train.len()))
                .collect();
            let batch: Vec<&TimeSeriesInstance> = idx.iter().map(|&i| &train.instances[i]).collect();
            let b = batch.len();
            let x = self.stack(&batch)?;
            let eps: Vec<f64> = (0..b * zd).map(|_| rng.sample(StandardNormal)).collect();

            let mut g = Graph::new();
            let p = self.store.bind(&mut g, true);
            let xv = g.constant(x);
            let e = self.encode_graph(&mut g, &p, xv);
            // z = mu + exp(logvar / 2) ⊙ eps
            let half = g.scale(e.logvar, 0.5);
            let sd = g.exp(half);
            let ev = g.constant(Tensor::new(&[b, zd], eps));
            let noise = g.mul(sd, ev);
            let z = g.add(e.mu, noise);
            let y = self.decode_graph(&mut g, &p, z);
            let diff = g.sub(y, xv);
            let sq = g.mul(diff, diff);
            let sse = g.sum(sq);
            // KL(N(mu, sigma) || N(0, I)) = -1/2 Σ (1 + logvar - mu² - exp(logvar))
            let mu2 = g.mul(e.mu, e.mu);
            let var = g.exp(e.logvar);
            let a = g.sub(e.logvar, mu2);
            let a = g.sub(a, var);
            let kl_sum = g.sum(a);
            let kl = g.scale(kl_sum, -0.5);
            let kl_const = g.constant(Tensor::scalar(-0.5 * (b * zd) as f64));
            let kl = g.sub(kl, kl_const);
            let total = g.add(sse, kl);
            let loss = g.scale(total, 1.0 / b as f64);

            let lv = g.value(loss).item();
            let mse = g.value(sse).item() / (b as f64 * cells);
            if !lv.is_finite() {
                return Err(DacrError::TrainingDiverged {
                    iteration: it,
                    detail: format!("VAE loss {lv}"),
                });
            }
            let grads = g.backward(loss);
            let backup = self.store.clone();
            opt.step(&mut self.store, &p, &grads);
            if !self.store.all_finite() {
                self.store = backup;
                return Err(DacrError::TrainingDiverged {
                    iteration: it,
                    detail: "VAE parameters became non-finite".into(),
                });
            }
            curve.push(mse);
        }
        self.trained = true;
        Ok(curve)
    }

    fn header(&self) -> Header {
        let c = self.config;
        [
            ("kind", "vae".to_string()),
            ("T", self.t_len.to_string()),
            ("F", self.features.to_string()),
            ("hidden", c.hidden.to_string()),
            ("latent_dim", c.latent_dim.to_string()),
            ("recurrent_layers", "4".to_string()),
            ("trained", self.trained.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.header(), &self.store)
    }

    pub fn load(path: &Path) -> Result<VaeModel> {
        let (h, store) = checkpoint::load(path)?;
        checkpoint::expect_kind(&h, "vae")?;
        let config = VaeConfig {
            hidden: header_value(&h, "hidden")?,
            latent_dim: header_value(&h, "latent_dim")?,
            ..Default::default()
        };
        let mut m = VaeModel::new(header_value(&h, "T")?, header_value(&h, "F")?, config);
        m.store.load_from(store)?;
        m.trained = header_value(&h, "trained")?;
        Ok(m)
    }
}

/// Build and train a VAE on `train`, returning it with its MSE curve.
pub fn train_vae(train: &Corpus, config: VaeConfig) -> Result<(VaeModel, Vec<f64>)> {
    let t = train
        .t_len()
        .ok_or_else(|| DacrError::Config("VAE training needs a non-empty, equal-length corpus".into()))?;
    let f = train.features().unwrap_or(0);
    let mut model = VaeModel::new(t, f, config);
    let curve = model.train(train, config.iterations, config.lr)?;
    Ok((model, curve))
}

/// Synthesize `count` extra instances by decoding noise-perturbed posterior
/// means of training instances drawn uniformly with replacement.
pub fn generate_extra(model: &VaeModel, train: &Corpus, spec: &NoiseSpec, count: usize, seed: u64) -> Result<Corpus> {
    if !model.is_trained() {
        return Err(DacrError::State("VAE has not been trained".into()));
    }
    if count == 0 {
        return Err(DacrError::Config("extra-data count must be >= 1".into()));
    }
    if train.is_empty() {
        return Err(DacrError::Config("no training instances to augment".into()));
    }
    spec.validate()?;
    let mut rng = seed::rng(seed, "extra-sources", 0);
    let sources: Vec<usize> = (0..count).map(|_| rng.random_range(0..train.len())).collect();
    let refs: Vec<&TimeSeriesInstance> = train.instances.iter().collect();
    let mut means = Vec::with_capacity(train.len());
    for chunk in refs.chunks(64) {
        means.extend(model.encode_mean(chunk)?);
    }
    let latents: Vec<Vec<f64>> = sources
        .iter()
        .enumerate()
        .map(|(k, &s)| inject_noise(&means[s], spec, seed::derive(seed, "extra-noise", k as u64)))
        .collect();
    let mut instances = Vec::with_capacity(count);
    for (chunk_no, chunk) in latents.chunks(64).enumerate() {
        for (k, values) in model.decode(chunk)?.into_iter().enumerate() {
            let n = chunk_no * 64 + k;
            let id = format!("extra-{n}-from-{}", train.instances[sources[n]].id);
            instances.push(TimeSeriesInstance::new(id, model.t_len(), model.features(), values)?);
        }
    }
    Corpus::new(instances, "extra")
}
