//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use bmaguard_core::adversarial::{
    make_adversarial_pair, ExternalPerturbations, PerturbationTier,
};
use bmaguard_core::corpus::{
    augment_dataset, hold_out, load_sample, make_example, stand_in_levels, CorpusGenerator, CorpusSpec, Manifest,
    Resolution, SampleRecord, SplitAxis, SplitOptions, SynonymTable, DEFAULT_DECOY_RATE, DEFAULT_RESOLUTIONS,
};
use bmaguard_core::imaging::{normalize_screenshot, AugmentationSpec, RawScreenshot};
use bmaguard_core::metrics::{evaluate, ScoredLabels};
use bmaguard_core::model::{
    checkpoint, class_weights_from_counts, predict_example, train_epoch, ModelConfig, ModelParams, OptimizerKind,
    TrainConfig, TrainState, Vocabulary,
};
use bmaguard_core::ocr::{ExternalEngine, FixedTextEngine, OcrEngine};
use bmaguard_core::phash::compute_phash;
use bmaguard_core::pipeline::{
    Classifier, Defender, DefenderConfig, DecisionConfig, ModelClassifier, SystemClock, WhitelistIndex,
};
use bmaguard_core::{model, pngio, Error};

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "bmaguard", version, about = "Screenshot + text detection of behavior-manipulation pages")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify one screenshot and print the verdict JSON.
    Scan(ScanArgs),
    /// Run the local JSON service.
    Serve(ServeArgs),
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Score a manifest and print AUROC and DR at a false-positive target.
    Eval(EvalArgs),
    /// Write PGD adversarial pairs for a manifest.
    Attack(AttackArgs),
    /// Synthesize a labeled screenshot + text corpus.
    GenCorpus(GenCorpusArgs),
    /// Print the perceptual hash of a PNG.
    Hash(HashArgs),
    /// Write leave-one-out train/test manifests.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub domain: String,
    #[arg(long)]
    pub image: PathBuf,
    /// TOML configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub whitelist: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Use this text instead of running OCR.
    #[arg(long)]
    pub text: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub whitelist: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelSize {
    Toy,
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint path; the vocabulary is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = Optimizer::Adam)]
    pub optimizer: Optimizer,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = ModelSize::Desk)]
    pub size: ModelSize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub fp: f64,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Tiers 1..=5 (epsilon 2, 4, 8, 16, 32 / 255).
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3, 4, 5])]
    pub tiers: Vec<u8>,
    /// Level 1-5 text perturbation file; rule-based stand-ins otherwise.
    #[arg(long)]
    pub perturbations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub benign: usize,
    #[arg(long, default_value_t = 200)]
    pub bma: usize,
    #[arg(long, default_value_t = 10)]
    pub campaigns: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated WxH list; a fixed desktop/mobile mix by default.
    #[arg(long, value_delimiter = ',')]
    pub resolutions: Vec<Resolution>,
    #[arg(long, default_value_t = DEFAULT_DECOY_RATE)]
    pub decoy_rate: f64,
    /// Copies per BMA sample, the original included.
    #[arg(long, default_value_t = 1)]
    pub augment: usize,
}

#[derive(Debug, Args)]
pub struct HashArgs {
    pub image: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Resolution,
    Campaign,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub axis: Axis,
    /// Held-out values (resolutions as WxH, or campaign ids).
    #[arg(long, value_delimiter = ',', required = true)]
    pub held: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub benign_test: usize,
    #[arg(long, default_value_t = 10)]
    pub per_campaign_cap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output names `<prefix>-train.jsonl` etc., next to the manifest.
    #[arg(long, default_value = "split")]
    pub prefix: String,
}

/// Classifier used when no checkpoint is configured.
struct NoModel;

impl Classifier for NoModel {
    fn classify(&self, _: &bmaguard_core::imaging::NormalizedImage, _: &str) -> bmaguard_core::Result<model::Prediction> {
        Err(Error::InvalidInput("no model checkpoint configured".into()))
    }
}

pub fn load_classifier(model: Option<&Path>, vocab: Option<&Path>) -> Result<Arc<dyn Classifier>> {
    let Some(path) = model else {
        return Ok(Arc::new(NoModel));
    };
    let (params, sidecar) = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let vocab = match vocab {
        Some(v) => Vocabulary::load(v)?,
        None => sidecar,
    };
    if vocab.len() != params.config.vocab_size {
        bail!("vocabulary has {} entries, model expects {}", vocab.len(), params.config.vocab_size);
    }
    Ok(Arc::new(ModelClassifier::new(params, vocab)))
}

pub fn build_defender(cfg: &Config, ocr: Arc<dyn OcrEngine>) -> Result<Defender> {
    let whitelist = match &cfg.whitelist {
        Some(p) => WhitelistIndex::load(p, cfg.whitelist_cutoff).with_context(|| format!("loading {}", p.display()))?,
        None => WhitelistIndex::new(cfg.whitelist_cutoff),
    };
    let classifier = load_classifier(cfg.model.as_deref(), cfg.vocab.as_deref())?;
    Ok(Defender::new(
        whitelist,
        ocr,
        classifier,
        Arc::new(SystemClock),
        DefenderConfig {
            decision: DecisionConfig {
                hamming_threshold: cfg.hamming_threshold,
                ..DecisionConfig::default()
            },
            retain_screenshots: cfg.retain_screenshots,
            max_screenshots: cfg.max_screenshots,
        },
    ))
}

pub fn ocr_engine(cfg: &Config) -> Arc<dyn OcrEngine> {
    let engine = match &cfg.ocr_command {
        Some(p) => ExternalEngine::new(p.clone()),
        None => ExternalEngine::tesseract(),
    };
    Arc::new(engine.with_args(cfg.ocr_args.iter()))
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    path.map_or_else(|| Ok(Config::default()), Config::load)
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn read_screenshot(path: &Path) -> Result<RawScreenshot> {
    let img = pngio::read_png(path)?;
    Ok(RawScreenshot::new(img.width, img.height, img.pixels)?)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Scan(a) => scan(a, out),
        Command::Serve(a) => serve(a),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Attack(a) => attack(a, out),
        Command::GenCorpus(a) => gen_corpus(a, out),
        Command::Hash(a) => hash(a, out),
        Command::Split(a) => split(a, out),
    }
}

fn scan(a: ScanArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.whitelist.is_some() {
        cfg.whitelist = a.whitelist;
    }
    if a.model.is_some() {
        cfg.model = a.model;
    }
    let ocr: Arc<dyn OcrEngine> = match a.text {
        Some(t) => Arc::new(FixedTextEngine::new(t)),
        None => ocr_engine(&cfg),
    };
    let defender = build_defender(&cfg, ocr)?;
    let shot = read_screenshot(&a.image)?.with_domain(a.domain);
    let verdict = defender.scan(0, &shot)?;
    print_json(out, &verdict)
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if a.model.is_some() {
        cfg.model = a.model;
    }
    if a.whitelist.is_some() {
        cfg.whitelist = a.whitelist;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(crate::serve(cfg, async {
        let _ = tokio::signal::ctrl_c().await;
    }))
}

fn load_examples(manifest: &Manifest, root: &Path, vocab: &Vocabulary, config: &ModelConfig) -> Result<Vec<model::Example>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let (img, text) = load_sample(root, r).with_context(|| format!("loading sample {}", r.id))?;
            Ok(make_example(&r.id, &img, &text, r.label.index(), vocab, config))
        })
        .collect()
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    mean_loss: f64,
    seconds: f64,
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let root = manifest_dir(&a.manifest);
    let texts = manifest
        .records
        .iter()
        .map(|r| std::fs::read_to_string(root.join(&r.text)).with_context(|| format!("reading text of {}", r.id)))
        .collect::<Result<Vec<_>>>()?;
    let vocab = Vocabulary::build(texts.iter().map(String::as_str), Vocabulary::DEFAULT_MIN_FREQ, Vocabulary::DEFAULT_CAP);
    let config = match a.size {
        ModelSize::Toy => ModelConfig::toy(vocab.len()),
        ModelSize::Desk => ModelConfig::desk(vocab.len()),
        ModelSize::Full => ModelConfig::new(vocab.len()),
    };
    let examples = load_examples(&manifest, &root, &vocab, &config)?;
    let tc = TrainConfig {
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        class_weights: class_weights_from_counts(manifest.counts().as_array())?,
        epochs: a.epochs,
        seed: a.seed,
        optimizer: match a.optimizer {
            Optimizer::Adam => OptimizerKind::adam(),
            Optimizer::Sgd => OptimizerKind::Sgd,
        },
    };
    let mut state = TrainState::new(ModelParams::init(config, a.seed)?);
    for _ in 0..a.epochs {
        let s = train_epoch(&mut state, &examples, &tc)?;
        serde_json::to_writer(&mut *out, &EpochLine { epoch: s.epoch, mean_loss: s.mean_loss, seconds: s.seconds })?;
        writeln!(out)?;
    }
    checkpoint::save(&a.out, &state.params, &vocab)?;
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let root = manifest_dir(&a.manifest);
    let (params, vocab) = checkpoint::load(&a.model)?;
    let examples = load_examples(&manifest, &root, &vocab, &params.config)?;
    let scores = examples
        .iter()
        .map(|e| predict_example(&params, e).map(|p| p.probability))
        .collect::<bmaguard_core::Result<Vec<_>>>()?;
    let labels = examples.iter().map(|e| e.label as u8).collect();
    let report = evaluate(&ScoredLabels::new(scores, labels)?, a.fp)?;
    print_json(out, &report)
}

#[derive(Serialize)]
struct AttackSummary {
    pairs: usize,
    /// Largest observed L-infinity distance per tier, in 1/255 units.
    max_linf_255: std::collections::BTreeMap<u8, f64>,
}

fn attack(a: AttackArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let root = manifest_dir(&a.manifest);
    let (params, vocab) = checkpoint::load(&a.model)?;
    let external = a.perturbations.as_deref().map(ExternalPerturbations::load).transpose()?;
    let table = SynonymTable::builtin();
    let tiers = a.tiers.iter().map(|&t| PerturbationTier::new(t)).collect::<bmaguard_core::Result<Vec<_>>>()?;
    std::fs::create_dir_all(a.out.join("images"))?;
    std::fs::create_dir_all(a.out.join("texts"))?;
    let mut records = Vec::new();
    let mut summary = AttackSummary {
        pairs: 0,
        max_linf_255: Default::default(),
    };
    for r in &manifest.records {
        let (img, text) = load_sample(&root, r)?;
        let stand_ins = stand_in_levels(&text, &table, r.seed);
        for &tier in &tiers {
            let perturbed = external
                .as_ref()
                .and_then(|e| e.get(&r.id, tier))
                .map_or_else(|| stand_ins[tier.level() as usize - 1].clone(), str::to_string);
            let pair = make_adversarial_pair(&params, &vocab, &r.id, &img, &perturbed, r.label.index(), tier)?;
            let linf = img
                .pixels()
                .iter()
                .zip(pair.image.pixels())
                .map(|(&x, &y)| x.abs_diff(y))
                .max()
                .unwrap_or(0);
            let e = summary.max_linf_255.entry(tier.level()).or_insert(0.0);
            *e = e.max(linf as f64);
            let id = format!("{}-t{}", r.id, tier.level());
            let image = PathBuf::from(format!("images/{id}.png"));
            let text_path = PathBuf::from(format!("texts/{id}.txt"));
            pngio::write_png(a.out.join(&image), pair.image.width(), pair.image.height(), pair.image.pixels())?;
            std::fs::write(a.out.join(&text_path), &pair.text)?;
            records.push(SampleRecord {
                id,
                image,
                text: text_path,
                normalized: true,
                augmented_from: Some(r.id.clone()),
                split: None,
                ..r.clone()
            });
            summary.pairs += 1;
        }
    }
    Manifest::new(records, manifest.seed)?.save(a.out.join("manifest.jsonl"))?;
    print_json(out, &summary)
}

fn gen_corpus(a: GenCorpusArgs, out: &mut dyn Write) -> Result<()> {
    let spec = CorpusSpec {
        resolutions: if a.resolutions.is_empty() { DEFAULT_RESOLUTIONS.to_vec() } else { a.resolutions },
        decoy_rate: a.decoy_rate,
        ..CorpusSpec::new(a.benign, a.bma, a.campaigns, a.seed)
    };
    let generator = CorpusGenerator::new(spec)?;
    let mut manifest = generator.write(&a.out)?;
    if a.augment > 1 {
        manifest = augment_dataset(&manifest, &a.out, &AugmentationSpec::new(a.seed), &SynonymTable::builtin(), a.augment)?;
        manifest.save(a.out.join("manifest.jsonl"))?;
        std::fs::write(a.out.join("summary.json"), serde_json::to_string_pretty(&manifest.summary())?)?;
    }
    print_json(out, &manifest.summary())
}

fn hash(a: HashArgs, out: &mut dyn Write) -> Result<()> {
    let img = normalize_screenshot(&read_screenshot(&a.image)?)?;
    writeln!(out, "{}", compute_phash(&img))?;
    Ok(())
}

#[derive(Serialize)]
struct SplitSummary {
    train: PathBuf,
    test: PathBuf,
    excluded: PathBuf,
    counts: [bmaguard_core::corpus::ClassCounts; 3],
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let axis = match a.axis {
        Axis::Resolution => SplitAxis::Resolution,
        Axis::Campaign => SplitAxis::Campaign,
    };
    let held: Vec<&str> = a.held.iter().map(String::as_str).collect();
    let opts = SplitOptions {
        benign_test: a.benign_test,
        per_campaign_cap: a.per_campaign_cap,
        seed: a.seed,
    };
    let s = hold_out(&manifest, axis, &held, &opts)?;
    let dir = manifest_dir(&a.manifest);
    let path = |part: &str| dir.join(format!("{}-{part}.jsonl", a.prefix));
    s.train.save(path("train"))?;
    s.test.save(path("test"))?;
    s.excluded.save(path("excluded"))?;
    print_json(
        out,
        &SplitSummary {
            train: path("train"),
            test: path("test"),
            excluded: path("excluded"),
            counts: [s.train.counts(), s.test.counts(), s.excluded.counts()],
        },
    )
}
