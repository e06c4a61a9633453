//! Labeled trace datasets for level-count classification.
//!
//! A record is the delay trace of a randomly drawn absorber with 1 to 4
//! intermediate levels, labeled by its level count. Traces keep their
//! absolute scale (arbitrary units shared by the whole dataset) unless peak
//! normalization is requested. Level
//! wavelengths come from a uniform grid over a band; levels within one
//! absorber are distinct, while records are drawn independently of each
//! other.

mod io;

pub use io::{metadata_path, read_dataset, write_dataset};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::physics::{self, MolecularSystem, PhotonSource, PhysicsError, TauWindow};
use crate::rng::{self, Purpose};

pub const NUM_CLASSES: usize = 4;

/// Fractions used for train/validation/test when nothing else is given.
pub const DEFAULT_RATIOS: [f64; 3] = [0.70, 0.15, 0.15];

/// Smallest record count that can be split three ways.
pub const MIN_SPLIT_RECORDS: usize = 20;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid level band: {0}")]
    Band(String),
    #[error("cannot draw {k} distinct levels from a {grid}-point grid")]
    TooManyLevels { k: usize, grid: usize },
    #[error("class index {0} outside 1..=4")]
    ClassIndex(i64),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    Ratios([f64; 3]),
    #[error("{0} records are too few to split (need at least {MIN_SPLIT_RECORDS})")]
    TooFewRecords(usize),
    #[error("dataset has no split assigned")]
    NoSplit,
    #[error("degenerate all-zero trace for class {class} record {record}")]
    DegenerateTrace { class: usize, record: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("malformed dataset file at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: expected {expected} features, found {found}")]
    FeatureCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown class label {label:?}")]
    UnknownClass { line: usize, label: String },
    #[error("metadata {path}: {reason}")]
    Metadata { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Uniform grid of candidate level wavelengths, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelBand {
    low: f64,
    high: f64,
    step: f64,
}

impl LevelBand {
    pub fn new(low: f64, high: f64, step: f64) -> Result<Self> {
        if !(low.is_finite() && high.is_finite() && step.is_finite()) {
            return Err(DatasetError::Band("bounds and step must be finite".into()));
        }
        if low <= 0.0 || low >= high {
            return Err(DatasetError::Band(format!(
                "need 0 < low < high, got ({low}, {high})"
            )));
        }
        if step <= 0.0 {
            return Err(DatasetError::Band(format!("step must be positive, got {step}")));
        }
        let n = (high - low) / step;
        if (n - n.round()).abs() > 1e-9 {
            return Err(DatasetError::Band(format!(
                "step {step} nm does not divide ({low}, {high}) into a whole number of intervals"
            )));
        }
        Ok(Self { low, high, step })
    }

    /// Band of width `width` centred on `center`.
    pub fn centered(center: f64, width: f64, step: f64) -> Result<Self> {
        Self::new(center - width / 2.0, center + width / 2.0, step)
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn len(&self) -> usize {
        ((self.high - self.low) / self.step).round() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.len() {
            self.high
        } else {
            self.low + i as f64 * self.step
        }
    }
}

pub fn level_grid(band: &LevelBand) -> Vec<f64> {
    (0..band.len()).map(|i| band.point(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DipoleMode {
    /// Every dipole product is 1.
    #[default]
    Unit,
    /// Each dipole product drawn uniformly from [0.5, 1].
    UniformRandom,
}

impl DipoleMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DipoleMode::Unit => "unit",
            DipoleMode::UniformRandom => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unit" => Some(DipoleMode::Unit),
            "uniform" => Some(DipoleMode::UniformRandom),
            _ => None,
        }
    }
}

/// Draw `k` distinct levels from the band grid, sorted ascending.
pub fn sample_system<R: Rng + ?Sized>(
    band: &LevelBand,
    k: usize,
    dipoles: DipoleMode,
    rng: &mut R,
) -> Result<MolecularSystem> {
    let grid = band.len();
    if k == 0 || k > grid {
        return Err(DatasetError::TooManyLevels { k, grid });
    }
    let mut picks = index::sample(rng, grid, k).into_vec();
    picks.sort_unstable();
    let levels: Vec<f64> = picks.into_iter().map(|i| band.point(i)).collect();
    let d = match dipoles {
        DipoleMode::Unit => vec![1.0; k],
        DipoleMode::UniformRandom => (0..k).map(|_| rng.random_range(0.5..=1.0)).collect(),
    };
    Ok(MolecularSystem::new(levels, d)?)
}

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub band: LevelBand,
    pub source: PhotonSource,
    pub per_class: usize,
    pub n_samples: usize,
    pub window: TauWindow,
    pub seed: u64,
    pub dipoles: DipoleMode,
    /// Standard deviation of additive Gaussian noise, relative to each
    /// trace's own peak.
    pub noise_std: f64,
    /// Divide each trace by its maximum. This discards the amplitude, which
    /// carries most of the level-count information.
    pub peak_normalize: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            band: LevelBand::new(835.0, 845.0, 1.0).expect("default band"),
            source: PhotonSource::degenerate(810.0, 63.0).expect("default source"),
            per_class: 500,
            n_samples: 500,
            window: TauWindow::DEFAULT,
            seed: 1,
            dipoles: DipoleMode::Unit,
            noise_std: 0.0,
            peak_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSignal {
    pub features: Vec<f64>,
    /// Number of intermediate levels, 1..=4.
    pub class_index: u8,
}

impl LabeledSignal {
    /// Zero-based class for indexing outputs.
    pub fn label(&self) -> usize {
        self.class_index as usize - 1
    }
}

pub fn one_hot_encode(class_index: usize) -> Result<[f64; NUM_CLASSES]> {
    if !(1..=NUM_CLASSES).contains(&class_index) {
        return Err(DatasetError::ClassIndex(class_index as i64));
    }
    let mut v = [0.0; NUM_CLASSES];
    v[class_index - 1] = 1.0;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subset {
    Train,
    Validation,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Validation, Subset::Test];

    pub fn tag(&self) -> char {
        match self {
            Subset::Train => 't',
            Subset::Validation => 'v',
            Subset::Test => 's',
        }
    }

    pub fn from_tag(c: char) -> Option<Self> {
        match c {
            't' => Some(Subset::Train),
            'v' => Some(Subset::Validation),
            's' => Some(Subset::Test),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Validation => "validation",
            Subset::Test => "test",
        }
    }
}

/// Per-record subset tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    tags: Vec<Subset>,
}

impl SplitAssignment {
    pub fn from_tags(tags: Vec<Subset>) -> Self {
        Self { tags }
    }

    pub fn tags(&self) -> &[Subset] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn indices(&self, subset: Subset) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t == subset).then_some(i))
            .collect()
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.tags.iter().filter(|&&t| t == subset).count()
    }
}

/// Random permutation, then the first ⌊r₀n⌋ records train, the next ⌊r₁n⌋
/// validate and the rest test. No stratification.
pub fn split_dataset<R: Rng + ?Sized>(
    n: usize,
    ratios: [f64; 3],
    rng: &mut R,
) -> Result<SplitAssignment> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0)
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DatasetError::Ratios(ratios));
    }
    if n < MIN_SPLIT_RECORDS {
        return Err(DatasetError::TooFewRecords(n));
    }
    // the epsilon keeps 0.7 × 100 from flooring to 69
    let n_train = (ratios[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = (ratios[1] * n as f64 + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut tags = vec![Subset::Test; n];
    for (pos, &i) in order.iter().enumerate() {
        if pos < n_train {
            tags[i] = Subset::Train;
        } else if pos < n_train + n_val {
            tags[i] = Subset::Validation;
        }
    }
    Ok(SplitAssignment { tags })
}

/// Per-feature affine map onto [−1, 1] fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureScaling {
    pub fn fit<'a, I>(rows: I, n_features: usize) -> Self
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut min = vec![f64::INFINITY; n_features];
        let mut max = vec![f64::NEG_INFINITY; n_features];
        for row in rows {
            for ((lo, hi), &x) in min.iter_mut().zip(max.iter_mut()).zip(row) {
                *lo = lo.min(x);
                *hi = hi.max(x);
            }
        }
        Self { min, max }
    }

    pub fn n_features(&self) -> usize {
        self.min.len()
    }

    /// Constant columns map to 0.
    pub fn scale_into(&self, row: &[f64], out: &mut [f64]) {
        for (((o, &x), &lo), &hi) in out.iter_mut().zip(row).zip(&self.min).zip(&self.max) {
            let span = hi - lo;
            *o = if span > 0.0 {
                2.0 * (x - lo) / span - 1.0
            } else {
                0.0
            };
        }
    }

    pub fn scale(&self, row: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; row.len()];
        self.scale_into(row, &mut out);
        out
    }

    /// Inverse of [`scale`](Self::scale); constant columns come back as their value.
    pub fn unscale(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.min)
            .zip(&self.max)
            .map(|((&y, &lo), &hi)| {
                let span = hi - lo;
                if span > 0.0 {
                    lo + (y + 1.0) * span / 2.0
                } else {
                    lo
                }
            })
            .collect()
    }
}

/// Row-major feature matrix with zero-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub n_features: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl LabeledMatrix {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

/// Scaled train/validation/test matrices.
#[derive(Debug, Clone)]
pub struct ScaledSplits {
    pub train: LabeledMatrix,
    pub validation: LabeledMatrix,
    pub test: LabeledMatrix,
    pub scaling: FeatureScaling,
}

impl ScaledSplits {
    pub fn subset(&self, subset: Subset) -> &LabeledMatrix {
        match subset {
            Subset::Train => &self.train,
            Subset::Validation => &self.validation,
            Subset::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    pub records: Vec<LabeledSignal>,
    pub split: Option<SplitAssignment>,
    pub scaling: Option<FeatureScaling>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.config.n_samples
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for r in &self.records {
            c[r.label()] += 1;
        }
        c
    }

    /// Attach a split and refit the scaling on its training records.
    pub fn assign_split(&mut self, split: SplitAssignment) -> Result<()> {
        if split.len() != self.records.len() {
            return Err(DatasetError::Config(format!(
                "split covers {} records, dataset has {}",
                split.len(),
                self.records.len()
            )));
        }
        self.scaling = Some(fit_scaling(&self.records, &split, self.n_features()));
        self.split = Some(split);
        Ok(())
    }

    /// Split with a fresh permutation drawn from `seed`.
    pub fn split_with_seed(&mut self, ratios: [f64; 3], seed: u64) -> Result<()> {
        let mut r = rng::stream(seed, Purpose::Split, 0, 0);
        let split = split_dataset(self.records.len(), ratios, &mut r)?;
        self.assign_split(split)
    }
}

fn fit_scaling(records: &[LabeledSignal], split: &SplitAssignment, n: usize) -> FeatureScaling {
    FeatureScaling::fit(
        split
            .indices(Subset::Train)
            .into_iter()
            .map(|i| records[i].features.as_slice()),
        n,
    )
}

/// Scaled matrices for every subset of `records` under `split`, with the
/// scaling fitted on the training subset only.
pub fn scale_split(
    records: &[LabeledSignal],
    split: &SplitAssignment,
    n_features: usize,
) -> ScaledSplits {
    let scaling = fit_scaling(records, split, n_features);
    let build = |subset| {
        let idx = split.indices(subset);
        let mut features = vec![0.0; idx.len() * n_features];
        let mut labels = Vec::with_capacity(idx.len());
        for (row, &i) in features.chunks_exact_mut(n_features).zip(&idx) {
            scaling.scale_into(&records[i].features, row);
            labels.push(records[i].label());
        }
        LabeledMatrix {
            n_features,
            features,
            labels,
        }
    };
    ScaledSplits {
        train: build(Subset::Train),
        validation: build(Subset::Validation),
        test: build(Subset::Test),
        scaling,
    }
}

/// Scale a dataset using its assigned split.
pub fn scale_features(dataset: &Dataset) -> Result<ScaledSplits> {
    let split = dataset.split.as_ref().ok_or(DatasetError::NoSplit)?;
    Ok(scale_split(&dataset.records, split, dataset.n_features()))
}

fn generate_record(config: &GeneratorConfig, class: usize, record: usize) -> Result<LabeledSignal> {
    let mut r = rng::stream(config.seed, Purpose::Record, class as u64, record as u64);
    let system = sample_system(&config.band, class, config.dipoles, &mut r)?;
    let trace = physics::signal_trace(
        &system,
        &config.source,
        config.window,
        config.n_samples,
        config.peak_normalize,
    )?;
    if trace.degenerate {
        return Err(DatasetError::DegenerateTrace { class, record });
    }
    let mut features = trace.values;
    if config.noise_std > 0.0 {
        let peak = features.iter().copied().fold(0.0, f64::max);
        let mut nr = rng::stream(config.seed, Purpose::Noise, class as u64, record as u64);
        let noise = Normal::new(0.0, config.noise_std * peak)
            .map_err(|e| DatasetError::Config(format!("noise: {e}")))?;
        for v in features.iter_mut() {
            *v = (*v + noise.sample(&mut nr)).max(0.0);
        }
        if config.peak_normalize && physics::peak_normalize(&mut features) {
            return Err(DatasetError::DegenerateTrace { class, record });
        }
    }
    Ok(LabeledSignal {
        features,
        class_index: class as u8,
    })
}

/// `per_class` records for each level count 1..=4, ordered by class. Each
/// record draws from its own stream keyed by (seed, class, index), so the
/// result is independent of the rayon pool size.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Dataset> {
    if config.per_class == 0 {
        return Err(DatasetError::Config("per_class must be positive".into()));
    }
    if !(config.noise_std.is_finite() && config.noise_std >= 0.0) {
        return Err(DatasetError::Config(format!(
            "noise standard deviation must be non-negative, got {}",
            config.noise_std
        )));
    }
    if NUM_CLASSES > config.band.len() {
        return Err(DatasetError::TooManyLevels {
            k: NUM_CLASSES,
            grid: config.band.len(),
        });
    }
    let jobs: Vec<(usize, usize)> = (1..=NUM_CLASSES)
        .flat_map(|k| (0..config.per_class).map(move |i| (k, i)))
        .collect();
    let records = jobs
        .into_par_iter()
        .map(|(k, i)| generate_record(config, k, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        records,
        split: None,
        scaling: None,
    })
}
