//! Synthetic screenshot + text corpus, manifests, augmentation and
//! leave-one-out splits.

pub mod phrases;
pub mod render;
mod text;

pub use text::{
    stand_in_levels, synonym_replace, synonym_replace_with, SynonymTable, SYNONYM_PROBABILITY,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{augment_image, normalize_screenshot, AugmentationSpec, NormalizedImage, RawScreenshot};
use crate::model::{tokenize, Example, ModelConfig, VisualInput, Vocabulary, BENIGN, MALICIOUS};
use crate::pngio;
use render::{render_attack, render_benign, Campaign, DecoyText};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleLabel {
    Benign,
    Bma,
}

impl SampleLabel {
    pub fn index(self) -> usize {
        match self {
            SampleLabel::Benign => BENIGN,
            SampleLabel::Bma => MALICIOUS,
        }
    }
}

/// Width x height, written `WxH`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resolution {
    pub width: usize,
    pub height: usize,
}

impl Resolution {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Resolution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("resolution {s:?} is not WxH"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let (w, h): (usize, usize) = (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?);
        if w == 0 || h == 0 {
            return Err(bad());
        }
        Ok(Self::new(w, h))
    }
}

/// Common desktop and mobile viewport sizes.
pub const DEFAULT_RESOLUTIONS: [Resolution; 8] = [
    Resolution::new(1920, 1080),
    Resolution::new(1366, 768),
    Resolution::new(1536, 864),
    Resolution::new(1280, 720),
    Resolution::new(1440, 900),
    Resolution::new(2560, 1440),
    Resolution::new(360, 640),
    Resolution::new(390, 844),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// PNG path, relative to the manifest directory.
    pub image: PathBuf,
    /// Paired text path, relative to the manifest directory.
    pub text: PathBuf,
    pub label: SampleLabel,
    /// Empty for benign samples.
    pub campaign_id: String,
    /// Capture resolution; augmented copies keep their source's.
    pub resolution: Resolution,
    #[serde(default)]
    pub split: Option<String>,
    /// Render seed of a synthetic sample.
    #[serde(default)]
    pub seed: u64,
    /// The stored image is already a 960x540 normalized canvas.
    #[serde(default)]
    pub normalized: bool,
    #[serde(default)]
    pub augmented_from: Option<String>,
    /// Text borrowed from the other class: attack vocabulary on a benign
    /// layout, or neutral text in an attack dialog.
    #[serde(default)]
    pub decoy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub benign: usize,
    pub bma: usize,
}

impl ClassCounts {
    pub fn as_array(&self) -> [usize; 2] {
        [self.benign, self.bma]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub records: usize,
    pub counts: ClassCounts,
    /// Benign samples per BMA sample; `None` without BMA samples.
    pub benign_per_bma: Option<f64>,
    pub resolutions: BTreeMap<String, usize>,
    pub campaigns: BTreeMap<String, usize>,
    pub seed: Option<u64>,
}

/// Ordered sample records. Persisted as JSON lines, one record per line.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    /// Generation seed, when known.
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>, seed: Option<u64>) -> Result<Self> {
        let m = Self { records, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate record id {}", r.id)));
            }
            if r.label == SampleLabel::Bma && r.campaign_id.is_empty() {
                return Err(Error::invalid(format!("BMA record {} has no campaign", r.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> ClassCounts {
        let bma = self.records.iter().filter(|r| r.label == SampleLabel::Bma).count();
        ClassCounts {
            benign: self.records.len() - bma,
            bma,
        }
    }

    pub fn resolutions(&self) -> BTreeMap<Resolution, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.resolution).or_default() += 1;
        }
        m
    }

    /// BMA records per campaign.
    pub fn campaigns(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for r in self.records.iter().filter(|r| r.label == SampleLabel::Bma) {
            *m.entry(r.campaign_id.clone()).or_default() += 1;
        }
        m
    }

    pub fn summary(&self) -> ManifestSummary {
        let counts = self.counts();
        ManifestSummary {
            records: self.records.len(),
            counts,
            benign_per_bma: (counts.bma > 0).then(|| counts.benign as f64 / counts.bma as f64),
            resolutions: self.resolutions().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            campaigns: self.campaigns(),
            seed: self.seed,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn parse_jsonl(input: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(records, None)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_jsonl(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    fn with_split(records: Vec<SampleRecord>, tag: &str, seed: Option<u64>) -> Self {
        let records = records
            .into_iter()
            .map(|mut r| {
                r.split = Some(tag.to_string());
                r
            })
            .collect();
        Self { records, seed }
    }
}

/// Loads a record's image (normalizing if needed) and text.
pub fn load_sample(root: &Path, record: &SampleRecord) -> Result<(NormalizedImage, String)> {
    let img = pngio::read_png(root.join(&record.image))?;
    let normalized = if record.normalized {
        if (img.width, img.height) != (NormalizedImage::WIDTH, NormalizedImage::HEIGHT) {
            return Err(Error::invalid(format!(
                "{} is marked normalized but is {}x{}",
                record.id, img.width, img.height
            )));
        }
        NormalizedImage::from_canvas(img.pixels)?
    } else {
        normalize_screenshot(&RawScreenshot::new(img.width, img.height, img.pixels)?)?
    };
    let path = root.join(&record.text);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
    Ok((normalized, text))
}

/// Model input for one sample.
pub fn make_example(id: &str, image: &NormalizedImage, text: &str, label: usize, vocab: &Vocabulary, config: &ModelConfig) -> Example {
    Example {
        id: id.to_string(),
        visual: VisualInput::from_normalized(image, config.visual_downscale),
        tokens: tokenize(text, vocab),
        label,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_benign: usize,
    pub n_bma: usize,
    pub resolutions: Vec<Resolution>,
    pub campaigns: usize,
    pub seed: u64,
    /// Fraction of each class rendered as decoys.
    #[serde(default = "default_decoy_rate")]
    pub decoy_rate: f64,
}

fn default_decoy_rate() -> f64 {
    DEFAULT_DECOY_RATE
}

/// Share of decoys per class. Keeps either branch alone from separating
/// the classes.
pub const DEFAULT_DECOY_RATE: f64 = 0.4;

impl CorpusSpec {
    pub fn new(n_benign: usize, n_bma: usize, campaigns: usize, seed: u64) -> Self {
        Self {
            n_benign,
            n_bma,
            resolutions: DEFAULT_RESOLUTIONS.to_vec(),
            campaigns,
            seed,
            decoy_rate: DEFAULT_DECOY_RATE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::invalid("at least one resolution is required"));
        }
        if self.resolutions.iter().any(|r| r.width == 0 || r.height == 0) {
            return Err(Error::invalid("resolutions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::invalid("decoy_rate must be in [0, 1]"));
        }
        if self.n_bma > 0 && self.campaigns == 0 {
            return Err(Error::invalid("BMA samples need at least one campaign"));
        }
        Ok(())
    }
}

pub fn campaign_id(index: usize) -> String {
    format!("c{}", index + 1)
}

/// Deterministic synthetic corpus. Records are planned up front; pixels
/// and text are rendered on demand from each record's seed.
#[derive(Debug, Clone)]
pub struct CorpusGenerator {
    spec: CorpusSpec,
    campaigns: Vec<Campaign>,
}

impl CorpusGenerator {
    pub fn new(spec: CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let campaigns = (0..spec.campaigns)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC0FF_EE00 ^ (i as u64) << 20);
                Campaign::derive(&campaign_id(i), i, &mut rng)
            })
            .collect();
        Ok(Self { spec, campaigns })
    }

    pub fn spec(&self) -> &CorpusSpec {
        &self.spec
    }

    pub fn campaign(&self, id: &str) -> Option<&Campaign> {
        self.campaigns.iter().find(|c| c.id == id)
    }

    pub fn plan(&self) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut records = Vec::with_capacity(self.spec.n_benign + self.spec.n_bma);
        let decoy_rate = self.spec.decoy_rate;
        let mut push = |id: String, label: SampleLabel, campaign_id: String, rng: &mut ChaCha8Rng| {
            let resolution = *self.spec.resolutions.choose(rng).expect("resolutions");
            records.push(SampleRecord {
                image: PathBuf::from(format!("images/{id}.png")),
                text: PathBuf::from(format!("texts/{id}.txt")),
                id,
                label,
                campaign_id,
                resolution,
                split: None,
                seed: rng.gen(),
                normalized: false,
                augmented_from: None,
                decoy: rng.gen_bool(decoy_rate),
            });
        };
        for i in 0..self.spec.n_benign {
            push(format!("b{i:06}"), SampleLabel::Benign, String::new(), &mut rng);
        }
        for i in 0..self.spec.n_bma {
            push(format!("m{i:06}"), SampleLabel::Bma, campaign_id(i % self.spec.campaigns), &mut rng);
        }
        Manifest {
            records,
            seed: Some(self.spec.seed),
        }
    }

    /// Screenshot and its ground-truth text, lines joined by `\n`.
    pub fn render(&self, record: &SampleRecord) -> Result<(RawScreenshot, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(record.seed);
        let Resolution { width, height } = record.resolution;
        let decoy = record.decoy.then(|| DecoyText::draw(&mut rng));
        let (canvas, lines) = match record.label {
            SampleLabel::Benign => render_benign(width, height, decoy.as_ref(), &mut rng),
            SampleLabel::Bma => {
                let c = self
                    .campaign(&record.campaign_id)
                    .ok_or_else(|| Error::NotFound(format!("campaign {}", record.campaign_id)))?;
                render_attack(width, height, c, decoy.as_ref(), &mut rng)
            }
        };
        let shot = RawScreenshot::new(width, height, canvas.pixels)?;
        Ok((shot, lines.join("\n")))
    }

    /// Renders a record straight to model input.
    pub fn example(&self, record: &SampleRecord, vocab: &Vocabulary, config: &ModelConfig) -> Result<Example> {
        let (shot, text) = self.render(record)?;
        let img = normalize_screenshot(&shot)?;
        Ok(make_example(&record.id, &img, &text, record.label.index(), vocab, config))
    }

    /// Writes images, texts, `manifest.jsonl` and `summary.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        let manifest = self.plan();
        for sub in ["images", "texts"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(p, e))?;
        }
        for r in &manifest.records {
            let (shot, text) = self.render(r)?;
            pngio::write_png(dir.join(&r.image), shot.width, shot.height, &shot.pixels)?;
            let tp = dir.join(&r.text);
            std::fs::write(&tp, text).map_err(|e| Error::io(tp, e))?;
        }
        manifest.save(dir.join("manifest.jsonl"))?;
        let sp = dir.join("summary.json");
        let summary = serde_json::to_string_pretty(&manifest.summary())?;
        std::fs::write(&sp, summary).map_err(|e| Error::io(sp, e))?;
        Ok(manifest)
    }
}

/// Expands every BMA record to `factor` copies: the original plus
/// `factor - 1` variants with two random image transforms and synonym
/// replacement. Variants are written under `root/augmented`. Benign
/// records are untouched.
pub fn augment_dataset(
    manifest: &Manifest,
    root: &Path,
    spec: &AugmentationSpec,
    table: &SynonymTable,
    factor: usize,
) -> Result<Manifest> {
    if factor == 0 {
        return Err(Error::invalid("augmentation factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(manifest.clone());
    }
    let out_dir = root.join("augmented");
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut records = manifest.records.clone();
    for r in manifest.records.iter().filter(|r| r.label == SampleLabel::Bma) {
        let (img, text) = load_sample(root, r)?;
        for k in 1..factor {
            let seed = r.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ spec.seed;
            let aug = augment_image(&img, &spec.with_seed(seed));
            let new_text = synonym_replace(&text, table, seed);
            let id = format!("{}-a{k}", r.id);
            let image = PathBuf::from(format!("augmented/{id}.png"));
            let text_path = PathBuf::from(format!("augmented/{id}.txt"));
            pngio::write_png(root.join(&image), aug.width(), aug.height(), aug.pixels())?;
            let tp = root.join(&text_path);
            std::fs::write(&tp, new_text).map_err(|e| Error::io(tp, e))?;
            records.push(SampleRecord {
                id,
                image,
                text: text_path,
                seed,
                normalized: true,
                augmented_from: Some(r.id.clone()),
                ..r.clone()
            });
        }
    }
    Manifest::new(records, manifest.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitAxis {
    Resolution,
    Campaign,
}

impl FromStr for SplitAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resolution" => Ok(SplitAxis::Resolution),
            "campaign" => Ok(SplitAxis::Campaign),
            _ => Err(Error::invalid(format!("axis {s:?} must be resolution or campaign"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOptions {
    /// Benign test draw: for campaign splits, drawn from all benign
    /// records; for resolution splits, a cap on benign records at the held
    /// resolution.
    pub benign_test: usize,
    /// Most BMA test records per campaign in resolution splits.
    pub per_campaign_cap: usize,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            benign_test: 200,
            per_campaign_cap: 10,
            seed: 0,
        }
    }
}

/// Train, test and the held-out records that were capped away from test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Manifest,
    pub test: Manifest,
    pub excluded: Manifest,
}

pub fn leave_one_out_split(manifest: &Manifest, axis: SplitAxis, held: &str, opts: &SplitOptions) -> Result<Split> {
    hold_out(manifest, axis, &[held], opts)
}

/// Holds out every record matching any of `held` on `axis`.
pub fn hold_out(manifest: &Manifest, axis: SplitAxis, held: &[&str], opts: &SplitOptions) -> Result<Split> {
    if held.is_empty() {
        return Err(Error::invalid("nothing to hold out"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (mut train, mut test, mut excluded) = (Vec::new(), Vec::new(), Vec::new());
    match axis {
        SplitAxis::Resolution => {
            let held: BTreeSet<Resolution> = held.iter().map(|h| h.parse()).collect::<Result<_>>()?;
            let present = manifest.resolutions();
            if let Some(missing) = held.iter().find(|r| !present.contains_key(r)) {
                return Err(Error::NotFound(format!("resolution {missing}")));
            }
            let mut by_campaign: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
            let mut benign = Vec::new();
            for r in &manifest.records {
                if !held.contains(&r.resolution) {
                    train.push(r.clone());
                } else if r.label == SampleLabel::Bma {
                    by_campaign.entry(&r.campaign_id).or_default().push(r);
                } else {
                    benign.push(r);
                }
            }
            for group in by_campaign.into_values().chain(std::iter::once(benign)) {
                let cap = if group.first().is_some_and(|r| r.label == SampleLabel::Bma) {
                    opts.per_campaign_cap
                } else {
                    opts.benign_test
                };
                let keep: BTreeSet<usize> = rand::seq::index::sample(&mut rng, group.len(), cap.min(group.len()))
                    .into_iter()
                    .collect();
                for (i, r) in group.into_iter().enumerate() {
                    if keep.contains(&i) {
                        test.push(r.clone());
                    } else {
                        excluded.push(r.clone());
                    }
                }
            }
        }
        SplitAxis::Campaign => {
            let present = manifest.campaigns();
            if let Some(missing) = held.iter().find(|h| !present.contains_key(**h)) {
                return Err(Error::NotFound(format!("campaign {missing}")));
            }
            let benign: Vec<usize> = (0..manifest.records.len())
                .filter(|&i| manifest.records[i].label == SampleLabel::Benign)
                .collect();
            let drawn: BTreeSet<usize> = rand::seq::index::sample(&mut rng, benign.len(), opts.benign_test.min(benign.len()))
                .into_iter()
                .map(|k| benign[k])
                .collect();
            for (i, r) in manifest.records.iter().enumerate() {
                let to_test = if r.label == SampleLabel::Bma {
                    held.contains(&r.campaign_id.as_str())
                } else {
                    drawn.contains(&i)
                };
                if to_test {
                    test.push(r.clone());
                } else {
                    train.push(r.clone());
                }
            }
        }
    }
    // Keep manifest order inside each part.
    let order: BTreeMap<&str, usize> = manifest.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    for part in [&mut test, &mut excluded] {
        part.sort_by_key(|r| order[r.id.as_str()]);
    }
    Ok(Split {
        train: Manifest::with_split(train, "train", manifest.seed),
        test: Manifest::with_split(test, "test", manifest.seed),
        excluded: Manifest::with_split(excluded, "excluded", manifest.seed),
    })
}
