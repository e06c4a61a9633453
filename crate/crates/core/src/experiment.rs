//! Replicated training runs and the efficiency table sweep.
//!
//! A cell of the table is one (band, step, entanglement time) setting. Each
//! cell generates one dataset from the base seed, then trains `replicates`
//! networks. Replicate `r` draws its own split and initial weights from
//! streams keyed by (base seed, r), so results do not depend on how many
//! threads run them.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{
    self, generate_dataset, scale_split, Dataset, DatasetError, DipoleMode, GeneratorConfig,
    LevelBand, DEFAULT_RATIOS,
};
use crate::neuralnet::{
    evaluate_model, init_params_with, scg_train, Batch, NetError, Shape, TrainConfig,
};
use crate::physics::{PhotonSource, TauWindow};
use crate::rng::{self, Purpose};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least 2 values for mean and spread, got {0}")]
    TooFewValues(usize),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: NetError,
    },
    #[error("cell (band {low}–{high} nm, step {step} nm, T_e {te} fs): {source}")]
    Cell {
        low: f64,
        high: f64,
        step: f64,
        te: f64,
        #[source]
        source: Box<ExperimentError>,
    },
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Settings for one table cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub band: LevelBand,
    pub source: PhotonSource,
    pub per_class: usize,
    pub n_samples: usize,
    pub window: TauWindow,
    pub replicates: usize,
    pub base_seed: u64,
    pub train: TrainConfig,
    /// Reuse one split for every replicate instead of re-splitting.
    pub fixed_split: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            band: g.band,
            source: g.source,
            per_class: g.per_class,
            n_samples: g.n_samples,
            window: g.window,
            replicates: 100,
            base_seed: 1,
            train: TrainConfig::default(),
            fixed_split: false,
        }
    }
}

impl ExperimentConfig {
    fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            band: self.band,
            source: self.source,
            per_class: self.per_class,
            n_samples: self.n_samples,
            window: self.window,
            seed: self.base_seed,
            dipoles: DipoleMode::Unit,
            noise_std: 0.0,
            peak_normalize: false,
        }
    }
}

/// Test-set efficiency (%) of one freshly initialized network.
fn run_one(config: &ExperimentConfig, data: &Dataset, r: usize) -> Result<f64> {
    let split_key = if config.fixed_split { 0 } else { r as u64 + 1 };
    let mut split_rng = rng::stream(config.base_seed, Purpose::Split, split_key, 0);
    let split = dataset::split_dataset(data.len(), DEFAULT_RATIOS, &mut split_rng)?;
    let splits = scale_split(&data.records, &split, data.n_features());
    let wrap = |source| ExperimentError::Replicate {
        replicate: r,
        source,
    };
    let train = Batch::from_labeled(&splits.train).map_err(wrap)?;
    let validation = Batch::from_labeled(&splits.validation).map_err(wrap)?;
    let shape = Shape::new(data.n_features(), config.train.hidden, dataset::NUM_CLASSES);
    let mut init_rng = rng::stream(config.base_seed, Purpose::Init, r as u64 + 1, 0);
    let params = init_params_with(shape, config.train.init, &mut init_rng);
    let (trained, _) = scg_train(params, &train, &validation, &config.train).map_err(wrap)?;
    let eval = evaluate_model(&trained, &splits.test).map_err(wrap)?;
    Ok(100.0 * eval.accuracy)
}

/// Efficiencies (%) on the test subset, ordered by replicate index.
pub fn run_replicates(config: &ExperimentConfig) -> Result<Vec<f64>> {
    if config.replicates < 2 {
        return Err(ExperimentError::Config(format!(
            "replicates must be at least 2, got {}",
            config.replicates
        )));
    }
    config
        .train
        .validate()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let data = generate_dataset(&config.generator())?;
    (0..config.replicates)
        .into_par_iter()
        .map(|r| run_one(config, &data, r))
        .collect()
}

/// Mean and sample (n − 1) standard deviation.
pub fn summarize_stats(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(ExperimentError::TooFewValues(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub band_low: f64,
    pub band_high: f64,
    pub step: f64,
    pub te: f64,
    pub mean: f64,
    pub std: f64,
    pub efficiencies: Vec<f64>,
}

impl TableRow {
    pub fn band_width(&self) -> f64 {
        self.band_high - self.band_low
    }
}

/// The grid of cells to run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub center_nm: f64,
    pub band_widths: Vec<f64>,
    pub steps: Vec<f64>,
    pub entanglement_times: Vec<f64>,
    /// Everything else; its band and entanglement time are overridden per cell.
    pub base: ExperimentConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            center_nm: 840.0,
            band_widths: vec![10.0, 20.0, 30.0, 40.0],
            steps: vec![1.0, 0.5, 0.1],
            entanglement_times: vec![63.0, 7.16],
            base: ExperimentConfig::default(),
        }
    }
}

impl SweepConfig {
    /// Cell configs in report order: entanglement time, then band, then step.
    pub fn cells(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::new();
        for &te in &self.entanglement_times {
            let source = PhotonSource::new(
                self.base.source.lambda_signal(),
                self.base.source.lambda_idler(),
                te,
                self.base.source.interaction_area(),
            )
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
            for &width in &self.band_widths {
                for &step in &self.steps {
                    let band = LevelBand::centered(self.center_nm, width, step)?;
                    out.push(ExperimentConfig {
                        band,
                        source,
                        ..self.base.clone()
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Run one cell and summarize it.
pub fn run_cell(config: &ExperimentConfig) -> Result<TableRow> {
    let te = config.source.entanglement_time();
    let wrap = |e: ExperimentError| ExperimentError::Cell {
        low: config.band.low(),
        high: config.band.high(),
        step: config.band.step(),
        te,
        source: Box::new(e),
    };
    let efficiencies = run_replicates(config).map_err(wrap)?;
    let (mean, std) = summarize_stats(&efficiencies).map_err(wrap)?;
    Ok(TableRow {
        band_low: config.band.low(),
        band_high: config.band.high(),
        step: config.band.step(),
        te,
        mean,
        std,
        efficiencies,
    })
}

/// Every cell of the sweep, calling `on_row` as each finishes.
pub fn reproduce_table_with<F>(sweep: &SweepConfig, mut on_row: F) -> Result<Vec<TableRow>>
where
    F: FnMut(&TableRow),
{
    let mut rows = Vec::new();
    for cell in sweep.cells()? {
        let row = run_cell(&cell)?;
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn reproduce_table(sweep: &SweepConfig) -> Result<Vec<TableRow>> {
    reproduce_table_with(sweep, |_| {})
}

pub const REPORT_HEADER: &str = "band_low,band_high,step_nm,te_fs,mean_pct,std_pct,n_replicates";

pub fn report_csv(rows: &[TableRow]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{}",
            r.band_low,
            r.band_high,
            r.step,
            r.te,
            r.mean,
            r.std,
            r.efficiencies.len()
        );
    }
    s
}

pub fn replicates_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("band_low,band_high,step_nm,te_fs,replicate,efficiency_pct\n");
    for r in rows {
        for (i, e) in r.efficiencies.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6}",
                r.band_low, r.band_high, r.step, r.te, i, e
            );
        }
    }
    s
}

/// Aligned text table, one line per cell.
pub fn report_text(rows: &[TableRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>14}  {:>8}  {:>8}  {:>8}  {:>9}  {:>8}  {:>5}",
        "range (nm)", "Δλ (nm)", "step", "T_e (fs)", "E_m (%)", "σ (%)", "runs"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:>14}  {:>8}  {:>8}  {:>8}  {:>9.2}  {:>8.2}  {:>5}",
            format!("({}, {})", r.band_low, r.band_high),
            r.band_width(),
            r.step,
            r.te,
            r.mean,
            r.std,
            r.efficiencies.len()
        );
    }
    s
}
