use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dacr_core::augmentor::{generate_extra, train_vae, NoiseSpec, VaeConfig, VaeModel};
use dacr_core::dataset::{
    choose_normal_classes, load_corpus_auto, make_ead_split, make_iad_split, save_corpus, Corpus, Dtype,
};
use dacr_core::encoder::{
    embed_corpus, load_extractors, train_autoencoding_extractors, train_extractors, EncoderTrainConfig,
    ExtractorConfig,
};
use dacr_core::harness::{
    make_synthetic, make_synthetic_series, mean_std, run_pipeline, run_sweep, Ablation, AnomalyKind, ExperimentConfig,
    RunOptions, Stage, SweepAxis, SyntheticSpec,
};
use dacr_core::reconstructor::{train_on_embeddings, ReconstructorConfig};
use dacr_core::scorer::{calibrate, evaluate_auc, instance_score, score, CalibrationTable, Detector, ScoreSeries};
use dacr_core::{DacrError, Result};

#[derive(Parser)]
#[command(name = "dacr", version, about = "Time-series anomaly detection by distribution-augmented contrastive reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect or split corpora.
    #[command(subcommand)]
    Data(DataCommand),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Train the sequence VAE.
    TrainVae(TrainVaeArgs),
    /// Decode noise-perturbed latents into extra training data.
    GenExtra(GenExtraArgs),
    /// Train one feature extractor per feature.
    TrainEncoders(TrainEncodersArgs),
    /// Train the reconstructor on frozen extractors.
    TrainReconstructor(TrainReconstructorArgs),
    /// Compute per-feature maximum training errors.
    Calibrate(CalibrateArgs),
    /// Score instances.
    Score(ScoreArgs),
    /// AUC of one or more score files against a labeled corpus.
    Evaluate(EvaluateArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
}

#[derive(Subcommand)]
enum DataCommand {
    /// Print corpus dimensions and label counts.
    Inspect { path: PathBuf },
    /// Write normalized train and test corpora.
    Split(SplitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ead,
    Iad,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Comma-separated normal classes (EAD).
    #[arg(long, value_delimiter = ',')]
    normal_classes: Vec<usize>,
    /// Pick this many normal classes at random instead (EAD).
    #[arg(long)]
    n_normal: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = dacr_core::dataset::IAD_WINDOW)]
    window: usize,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    n_classes: usize,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    #[arg(long = "T", default_value_t = 50)]
    t_len: usize,
    #[arg(long = "F", default_value_t = 3)]
    features: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',')]
    anomaly_kinds: Vec<AnomalyKind>,
    #[arg(long, default_value_t = 0.0)]
    anomalous_fraction: f64,
    /// Generate long series for window-based detection instead.
    #[arg(long)]
    series: bool,
    #[arg(long, default_value_t = 4)]
    n_train: usize,
    #[arg(long, default_value_t = 4)]
    n_test: usize,
    #[arg(long, default_value_t = 3)]
    anomalies_per_test: usize,
}

#[derive(Args)]
struct TrainVaeArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 16)]
    latent: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenExtraArgs {
    #[arg(long)]
    vae: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha_var: f64,
    #[arg(long, default_value_t = 0.1)]
    beta_var: f64,
    /// Defaults to the training-set size.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainEncodersArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    extra: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 5)]
    blocks: usize,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train with a per-timestamp autoencoding objective instead.
    #[arg(long)]
    autoencoding: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainReconstructorArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    encoders: PathBuf,
    #[arg(long, default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 8)]
    queries_per_instance: usize,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    enc_layers: usize,
    #[arg(long, default_value_t = 2)]
    dec_layers: usize,
    #[arg(long, default_value_t = 128)]
    d_ff: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    encoders: PathBuf,
    #[arg(long)]
    reconstructor: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    encoders: PathBuf,
    #[arg(long)]
    reconstructor: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Labeled corpus the scores were computed on.
    #[arg(long)]
    labels: PathBuf,
    /// Score files, one per seed.
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Ab1,
    Ab2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Noise,
    M,
    Nclasses,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Augment,
    Encode,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long, value_enum)]
    sweep: Option<SweepArg>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Stop after a stage; a later run resumes from its checkpoints.
    #[arg(long, value_enum)]
    stop_after: Option<StageArg>,
}

fn write_scores(path: &Path, corpus: &Corpus, series: &[ScoreSeries]) -> Result<()> {
    let mut s = String::from("instance\tinstance_score\tscores\n");
    for (inst, ser) in corpus.instances.iter().zip(series) {
        let per_t: Vec<String> = ser.scores.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{}\t{}\t{}\n", inst.id, instance_score(ser), per_t.join(",")));
    }
    std::fs::write(path, s).map_err(|e| DacrError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_scores(path: &Path) -> Result<Vec<(String, f64, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| DacrError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let bad = || DacrError::Format(format!("malformed score file {}", path.display()));
    text.lines()
        .skip(1)
        .map(|line| {
            let mut parts = line.split('\t');
            let id = parts.next().ok_or_else(bad)?.to_string();
            let inst: f64 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let per_t = parts
                .next()
                .ok_or_else(bad)?
                .split(',')
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<Vec<f64>>>()?;
            Ok((id, inst, per_t))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data(DataCommand::Inspect { path }) => {
            let c = load_corpus_auto(&path)?;
            println!("instances: {}", c.len());
            println!("T: {}", c.t_len().map_or("ragged".into(), |t| t.to_string()));
            println!("F: {}", c.features().unwrap_or(0));
            println!("origin: {}", c.origin);
            let classes = c.classes();
            if !classes.is_empty() {
                for k in classes {
                    let n = c.instances.iter().filter(|i| i.class_label == Some(k)).count();
                    println!("class {k}: {n}");
                }
            }
            let labeled = c.instances.iter().filter(|i| i.point_labels.is_some()).count();
            let anomalous = c.instances.iter().filter(|i| i.is_anomalous()).count();
            println!("labeled: {labeled} (anomalous {anomalous})");
        }
        Command::Data(DataCommand::Split(a)) => {
            let c = load_corpus_auto(&a.input)?;
            let split = match a.mode {
                ModeArg::Ead => {
                    let normal: BTreeSet<usize> = match a.n_normal {
                        Some(n) => choose_normal_classes(&c, n, a.seed)?,
                        None => a.normal_classes.iter().copied().collect(),
                    };
                    make_ead_split(&c, &normal, a.seed)?
                }
                ModeArg::Iad => make_iad_split(&c, a.window, a.stride.unwrap_or(a.window))?,
            }
            .normalized()?;
            std::fs::create_dir_all(&a.out_dir).map_err(|e| DacrError::Io {
                path: a.out_dir.clone(),
                source: e,
            })?;
            save_corpus(&split.train, &a.out_dir.join("train.manifest"), Dtype::Float64)?;
            save_corpus(&split.test, &a.out_dir.join("test.manifest"), Dtype::Float64)?;
            println!("train: {} instances, test: {} instances", split.train.len(), split.test.len());
        }
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                n_classes: a.n_classes,
                n_per_class: a.n_per_class,
                t_len: a.t_len,
                features: a.features,
                anomaly_kinds: a.anomaly_kinds,
                anomalous_fraction: a.anomalous_fraction,
                noise: a.noise,
                seed: a.seed,
            };
            let c = if a.series {
                make_synthetic_series(&spec, a.n_train, a.n_test, a.anomalies_per_test)?
            } else {
                make_synthetic(&spec)?
            };
            save_corpus(&c, &a.out, Dtype::Float32)?;
            println!("wrote {} instances to {}", c.len(), a.out.display());
        }
        Command::TrainVae(a) => {
            let train = load_corpus_auto(&a.train)?;
            let cfg = VaeConfig {
                hidden: a.hidden,
                latent_dim: a.latent,
                iterations: a.iters,
                lr: a.lr,
                batch: a.batch,
                seed: a.seed,
            };
            let (m, curve) = train_vae(&train, cfg)?;
            m.save(&a.out)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("reconstruction MSE {first:.5} -> {last:.5}");
            }
        }
        Command::GenExtra(a) => {
            let vae = VaeModel::load(&a.vae)?;
            let train = load_corpus_auto(&a.train)?;
            let spec = NoiseSpec {
                alpha_var: a.alpha_var,
                beta_var: a.beta_var,
                ..Default::default()
            };
            let extra = generate_extra(&vae, &train, &spec, a.count.unwrap_or(train.len()), a.seed)?;
            save_corpus(&extra, &a.out, Dtype::Float64)?;
            println!("wrote {} extra instances", extra.len());
        }
        Command::TrainEncoders(a) => {
            let train = load_corpus_auto(&a.train)?;
            let extra = a.extra.as_deref().map(load_corpus_auto).transpose()?;
            let arch = ExtractorConfig {
                embed_dim: a.embed_dim,
                channels: a.channels,
                blocks: a.blocks,
                kernel: a.kernel,
            };
            let cfg = EncoderTrainConfig {
                iterations: a.iters,
                lr: a.lr,
                batch: a.batch,
                seed: a.seed,
                min_len: None,
            };
            let (exts, curves) = if a.autoencoding {
                train_autoencoding_extractors(&train, arch, cfg)?
            } else {
                train_extractors(&train, extra.as_ref(), arch, cfg)?
            };
            for (e, c) in exts.iter().zip(&curves) {
                e.save(&a.out_dir.join(format!("f{}.ckpt", e.feature_index())))?;
                if let (Some(first), Some(last)) = (c.first(), c.last()) {
                    println!("feature {}: loss {first:.4} -> {last:.4}", e.feature_index());
                }
            }
        }
        Command::TrainReconstructor(a) => {
            let train = load_corpus_auto(&a.train)?;
            let exts = load_extractors(&a.encoders)?;
            let cfg = ReconstructorConfig {
                m: a.m,
                d_model: a.d_model,
                heads: a.heads,
                enc_layers: a.enc_layers,
                dec_layers: a.dec_layers,
                d_ff: a.d_ff,
                iterations: a.iters,
                lr: a.lr,
                batch: a.batch,
                queries_per_instance: a.queries_per_instance,
                seed: a.seed,
            };
            if exts.iter().any(|e| !e.is_frozen()) {
                return Err(DacrError::State("extractor checkpoints are not frozen".into()));
            }
            let embs = embed_corpus(&exts, &train.instances)?;
            let (model, curve) = train_on_embeddings(&train, &embs, cfg)?;
            model.save(&a.out)?;
            if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
                println!("loss {first:.5} -> {last:.5}");
            }
        }
        Command::Calibrate(a) => {
            let train = load_corpus_auto(&a.train)?;
            let det = Detector::load(&a.encoders, &a.reconstructor)?;
            let table = calibrate(&det, &train)?;
            table.save(&a.out)?;
            for (f, e) in table.err.iter().enumerate() {
                println!("Err^{f} = {e}");
            }
        }
        Command::Score(a) => {
            let input = load_corpus_auto(&a.input)?;
            let det = Detector::load(&a.encoders, &a.reconstructor)?;
            let table = CalibrationTable::load(&a.calibration)?;
            let series = input
                .instances
                .iter()
                .map(|i| score(&det, &table, i))
                .collect::<Result<Vec<_>>>()?;
            write_scores(&a.out, &input, &series)?;
            let flagged = series.iter().filter(|s| s.labels.iter().any(|&l| l)).count();
            println!("{flagged} of {} instances flagged", series.len());
        }
        Command::Evaluate(a) => {
            let corpus = load_corpus_auto(&a.labels)?;
            let mut aucs = Vec::new();
            for path in &a.scores {
                let rows = read_scores(path)?;
                if rows.len() != corpus.len() {
                    return Err(DacrError::Shape(format!(
                        "{} has {} rows for {} instances",
                        path.display(),
                        rows.len(),
                        corpus.len()
                    )));
                }
                let (s, l): (Vec<f64>, Vec<bool>) = match a.mode {
                    ModeArg::Ead => rows
                        .iter()
                        .zip(&corpus.instances)
                        .map(|(r, i)| (r.1, i.is_anomalous()))
                        .unzip(),
                    ModeArg::Iad => {
                        let mut s = Vec::new();
                        let mut l = Vec::new();
                        for (r, inst) in rows.iter().zip(&corpus.instances) {
                            let labels = inst.point_labels.clone().unwrap_or_else(|| vec![false; inst.t_len()]);
                            // warm-up timestamps carry the sentinel and are skipped
                            for (t, &v) in r.2.iter().enumerate() {
                                if v > dacr_core::scorer::WARM_UP_SCORE {
                                    s.push(v);
                                    l.push(labels[t]);
                                }
                            }
                        }
                        (s, l)
                    }
                };
                let auc = evaluate_auc(&s, &l)?;
                println!("{}: AUC {auc:.4}", path.display());
                aucs.push(auc);
            }
            let (mean, std) = mean_std(&aucs);
            println!("AUC {mean:.4} ± {std:.4} over {} runs", aucs.len());
        }
        Command::Run(a) => {
            let mut config = ExperimentConfig::load(&a.config)?;
            if let Some(ab) = a.ablation {
                config.ablation = match ab {
                    AblationArg::Ab1 => Ablation::Ab1,
                    AblationArg::Ab2 => Ablation::Ab2,
                };
                config.name = format!("{}-{}", config.name, config.ablation);
            }
            let opts = RunOptions {
                root: Some(a.runs_dir.clone()),
                stop_after: a.stop_after.map(|s| match s {
                    StageArg::Augment => Stage::Augment,
                    StageArg::Encode => Stage::Encode,
                }),
            };
            match a.sweep {
                Some(axis) => {
                    let axis = match axis {
                        SweepArg::Noise => SweepAxis::Noise,
                        SweepArg::M => SweepAxis::M,
                        SweepArg::Nclasses => SweepAxis::NClasses,
                    };
                    print!("{}", run_sweep(&config, axis, &opts)?.to_text());
                }
                None => match run_pipeline(&config, &opts)? {
                    Some(report) => {
                        print!("{}", report.to_text());
                        println!("wall clock: {:.1}s", report.wall_clock_secs);
                    }
                    None => println!("stopped early; rerun to resume"),
                },
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // die quietly on a closed pipe (`dacr ... | head`) instead of panicking
    #[cfg(unix)]
    // SAFETY: restoring the default disposition of a signal before any other
    // thread exists.
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
