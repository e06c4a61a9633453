//! Command-line front end.
//!
//! Every setting resolves as built-in default < config file < flag. The
//! config file is TOML with optional top-level `seed` and `threads` plus one
//! table per subcommand whose keys are the long flag names:
//!
//! ```toml
//! seed = 7
//!
//! [table]
//! te-fs = [63.0]
//! replicates = 20
//! ```
//!
//! Exit status is 0 on success, 1 when an input is invalid and 2 when the
//! work itself fails.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::dataset::{
    self, generate_dataset, read_dataset, sample_system, write_dataset, DatasetError, DipoleMode,
    FeatureScaling, GeneratorConfig, LabeledMatrix, LevelBand, Subset, DEFAULT_RATIOS,
};
use crate::experiment::{
    self, report_csv, report_text, replicates_csv, ExperimentError, SweepConfig,
};
use crate::fsutil::write_atomic;
use crate::neuralnet::{
    evaluate_model, finite_diff_check, init_params, read_model, train_model, write_model, Batch,
    Evaluation, InitScheme, ModelFile, NetError, Shape, TrainConfig,
};
use crate::physics::{
    self, oracle_trace, signal_trace, MolecularSystem, PhotonSource, PhysicsError, TauWindow,
};
use crate::rng::{self, Purpose};

const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "etpa", version, about = "Entangled two-photon absorption signals and level-count classification")]
pub struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with settings; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute one delay trace and write it as CSV.
    Synth(SynthArgs),
    /// Generate a labeled dataset with a train/validation/test split.
    GenData(GenDataArgs),
    /// Train a classifier on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a trained classifier on one subset of a dataset.
    Eval(EvalArgs),
    /// Replicated training over a grid of bands, steps and entanglement times.
    Table(TableArgs),
    /// Run the built-in numerical self-checks.
    Check(CheckArgs),
}

#[derive(Debug, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthArgs {
    /// Intermediate-level wavelengths (nm), comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub levels: Option<Vec<f64>>,
    /// Dipole products, one per level (default: all 1).
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub dipoles: Option<Vec<f64>>,
    #[arg(long)]
    pub te_fs: Option<f64>,
    /// Central wavelength of both photons (nm).
    #[arg(long)]
    pub lambda0_nm: Option<f64>,
    /// Signal central wavelength (nm), overriding --lambda0-nm.
    #[arg(long)]
    pub lambda_s_nm: Option<f64>,
    /// Idler central wavelength (nm), overriding --lambda0-nm.
    #[arg(long)]
    pub lambda_i_nm: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau_start_fs: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau_end_fs: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Keep absolute units instead of dividing by the peak.
    #[arg(long)]
    pub raw: bool,
    /// Output CSV (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenDataArgs {
    #[arg(long)]
    pub band_low: Option<f64>,
    #[arg(long)]
    pub band_high: Option<f64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub te_fs: Option<f64>,
    #[arg(long)]
    pub lambda0_nm: Option<f64>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Delay samples per trace.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Draw dipole products uniformly from [0.5, 1] instead of 1.
    #[arg(long)]
    pub random_dipoles: bool,
    /// Gaussian noise standard deviation, relative to each trace's peak.
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Divide every trace by its own peak.
    #[arg(long)]
    pub peak_normalize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainArgs {
    /// Dataset CSV written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Consecutive non-improving validation epochs before stopping.
    #[arg(long)]
    pub fail_limit: Option<usize>,
    /// Weight initialization: nguyen-widrow or fan-in.
    #[arg(long)]
    pub init: Option<String>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, validation, test or all.
    #[arg(long)]
    pub subset: Option<String>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TableArgs {
    /// Entanglement times (fs), comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub te_fs: Option<Vec<f64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Band widths (nm), comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub band_widths: Option<Vec<f64>>,
    /// Level grid steps (nm), comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub steps: Option<Vec<f64>>,
    /// Centre of every band (nm).
    #[arg(long)]
    pub center_nm: Option<f64>,
    #[arg(long)]
    pub lambda0_nm: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Weight initialization: nguyen-widrow or fan-in.
    #[arg(long)]
    pub init: Option<String>,
    /// Use one split for every replicate.
    #[arg(long)]
    pub fixed_split: bool,
    /// Also write per-replicate efficiencies to this CSV.
    #[arg(long)]
    pub dump_replicates: Option<PathBuf>,
    /// Report CSV (default: table.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[command(allow_negative_numbers = true)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CheckArgs {
    /// Random systems compared against the quadrature reference.
    #[arg(long)]
    pub systems: Option<usize>,
    /// Random parameter points for the gradient check.
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    synth: SynthArgs,
    gen_data: GenDataArgs,
    train: TrainArgs,
    eval: EvalArgs,
    table: TableArgs,
    check: CheckArgs,
}

/// Failure of one invocation, split by exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit 1.
    Invalid(String),
    /// The work failed: exit 2.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(flag: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{flag}: {reason}"))
}

fn runtime(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

fn required<T>(value: Option<T>, flag: &str) -> CliResult<T> {
    value.ok_or_else(|| invalid(flag, "required"))
}

fn positive(value: f64, flag: &str) -> CliResult<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(invalid(flag, format!("must be a positive number, got {value}")))
    }
}

fn init_scheme(value: Option<String>, default: InitScheme) -> CliResult<InitScheme> {
    match value {
        None => Ok(default),
        Some(v) => InitScheme::parse(&v).ok_or_else(|| {
            invalid("--init", format!("expected nguyen-widrow or fan-in, got {v:?}"))
        }),
    }
}

fn at_least(value: usize, min: usize, flag: &str) -> CliResult<usize> {
    if value >= min {
        Ok(value)
    } else {
        Err(invalid(flag, format!("must be at least {min}, got {value}")))
    }
}

fn physics_invalid(flag: &str) -> impl Fn(PhysicsError) -> CliError + '_ {
    move |e| invalid(flag, e)
}

/// Dataset errors caused by generator settings are input errors; the rest
/// (files, formats) are runtime failures.
fn dataset_error(context: &str, e: DatasetError) -> CliError {
    match e {
        DatasetError::Band(_)
        | DatasetError::TooManyLevels { .. }
        | DatasetError::Ratios(_)
        | DatasetError::TooFewRecords(_)
        | DatasetError::Config(_)
        | DatasetError::Physics(_) => CliError::Invalid(format!("{context}: {e}")),
        _ => runtime(context, e),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
        .map_err(|e| runtime(format!("writing {}", path.display()), e))
}

/// Parse `args`, run, and report. Never panics on bad input.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    let Some(path) = path else {
        return Ok(ConfigFile::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid("--config", format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| invalid("--config", format!("{}: {e}", path.display())))
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = load_config(cli.config.as_deref())?;
    let seed = cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED);
    if let Some(n) = cli.threads.or(file.threads) {
        let n = at_least(n, 1, "--threads")?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| runtime("thread pool", e))?;
    }
    match cli.command {
        Command::Synth(a) => synth(a.merge(file.synth)),
        Command::GenData(a) => gen_data(a.merge(file.gen_data), seed),
        Command::Train(a) => train(a.merge(file.train), seed),
        Command::Eval(a) => eval(a.merge(file.eval)),
        Command::Table(a) => table(a.merge(file.table), seed),
        Command::Check(a) => check(a.merge(file.check), seed),
    }
}

impl SynthArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            levels: self.levels.or(f.levels),
            dipoles: self.dipoles.or(f.dipoles),
            te_fs: self.te_fs.or(f.te_fs),
            lambda0_nm: self.lambda0_nm.or(f.lambda0_nm),
            lambda_s_nm: self.lambda_s_nm.or(f.lambda_s_nm),
            lambda_i_nm: self.lambda_i_nm.or(f.lambda_i_nm),
            tau_start_fs: self.tau_start_fs.or(f.tau_start_fs),
            tau_end_fs: self.tau_end_fs.or(f.tau_end_fs),
            samples: self.samples.or(f.samples),
            raw: self.raw || f.raw,
            out: self.out.or(f.out),
        }
    }
}

impl GenDataArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            band_low: self.band_low.or(f.band_low),
            band_high: self.band_high.or(f.band_high),
            step: self.step.or(f.step),
            te_fs: self.te_fs.or(f.te_fs),
            lambda0_nm: self.lambda0_nm.or(f.lambda0_nm),
            per_class: self.per_class.or(f.per_class),
            samples: self.samples.or(f.samples),
            random_dipoles: self.random_dipoles || f.random_dipoles,
            noise_std: self.noise_std.or(f.noise_std),
            peak_normalize: self.peak_normalize || f.peak_normalize,
            out: self.out.or(f.out),
        }
    }
}

impl TrainArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            data: self.data.or(f.data),
            out: self.out.or(f.out),
            hidden: self.hidden.or(f.hidden),
            max_epochs: self.max_epochs.or(f.max_epochs),
            fail_limit: self.fail_limit.or(f.fail_limit),
            init: self.init.or(f.init),
        }
    }
}

impl EvalArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            model: self.model.or(f.model),
            data: self.data.or(f.data),
            subset: self.subset.or(f.subset),
        }
    }
}

impl TableArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            te_fs: self.te_fs.or(f.te_fs),
            replicates: self.replicates.or(f.replicates),
            per_class: self.per_class.or(f.per_class),
            samples: self.samples.or(f.samples),
            band_widths: self.band_widths.or(f.band_widths),
            steps: self.steps.or(f.steps),
            center_nm: self.center_nm.or(f.center_nm),
            lambda0_nm: self.lambda0_nm.or(f.lambda0_nm),
            hidden: self.hidden.or(f.hidden),
            max_epochs: self.max_epochs.or(f.max_epochs),
            init: self.init.or(f.init),
            fixed_split: self.fixed_split || f.fixed_split,
            dump_replicates: self.dump_replicates.or(f.dump_replicates),
            out: self.out.or(f.out),
        }
    }
}

impl CheckArgs {
    fn merge(self, f: Self) -> Self {
        Self {
            systems: self.systems.or(f.systems),
            points: self.points.or(f.points),
        }
    }
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let levels = required(a.levels, "--levels")?;
    let dipoles = a.dipoles.unwrap_or_else(|| vec![1.0; levels.len()]);
    let system = MolecularSystem::new(levels, dipoles).map_err(physics_invalid("--levels/--dipoles"))?;
    let gen = GeneratorConfig::default();
    let lambda0 = positive(
        a.lambda0_nm.unwrap_or(gen.source.lambda_signal()),
        "--lambda0-nm",
    )?;
    let te = positive(a.te_fs.unwrap_or(gen.source.entanglement_time()), "--te-fs")?;
    let ls = positive(a.lambda_s_nm.unwrap_or(lambda0), "--lambda-s-nm")?;
    let li = positive(a.lambda_i_nm.unwrap_or(lambda0), "--lambda-i-nm")?;
    let source = PhotonSource::new(ls, li, te, PhotonSource::DEFAULT_AREA_UM2)
        .map_err(physics_invalid("--te-fs"))?;
    let window = TauWindow::new(
        a.tau_start_fs.unwrap_or(gen.window.start),
        a.tau_end_fs.unwrap_or(gen.window.end),
    )
    .map_err(physics_invalid("--tau-start-fs/--tau-end-fs"))?;
    let samples = at_least(a.samples.unwrap_or(gen.n_samples), 2, "--samples")?;
    let trace = physics::signal_trace_par(&system, &source, window, samples, !a.raw)
        .map_err(physics_invalid("--samples"))?;
    if trace.degenerate {
        return Err(invalid("--dipoles", "the trace is identically zero"));
    }
    let mut text = String::from(if a.raw { "tau_fs,p\n" } else { "tau_fs,p_norm\n" });
    for (t, v) in trace.tau.iter().zip(&trace.values) {
        let _ = writeln!(text, "{t},{v}");
    }
    match a.out {
        Some(path) => write_text(&path, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| runtime("standard output", e)),
    }
}

fn gen_data(a: GenDataArgs, seed: u64) -> CliResult<()> {
    let out = required(a.out, "--out")?;
    let d = GeneratorConfig::default();
    let band = LevelBand::new(
        a.band_low.unwrap_or(d.band.low()),
        a.band_high.unwrap_or(d.band.high()),
        a.step.unwrap_or(d.band.step()),
    )
    .map_err(|e| invalid("--band-low/--band-high/--step", e))?;
    let te = positive(a.te_fs.unwrap_or(d.source.entanglement_time()), "--te-fs")?;
    let lambda0 = positive(a.lambda0_nm.unwrap_or(d.source.lambda_signal()), "--lambda0-nm")?;
    let source = PhotonSource::degenerate(lambda0, te).map_err(physics_invalid("--te-fs"))?;
    let noise_std = a.noise_std.unwrap_or(0.0);
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(invalid("--noise-std", format!("must be non-negative, got {noise_std}")));
    }
    let config = GeneratorConfig {
        band,
        source,
        per_class: at_least(a.per_class.unwrap_or(d.per_class), 1, "--per-class")?,
        n_samples: at_least(a.samples.unwrap_or(d.n_samples), 2, "--samples")?,
        window: d.window,
        seed,
        dipoles: if a.random_dipoles {
            DipoleMode::UniformRandom
        } else {
            DipoleMode::Unit
        },
        noise_std,
        peak_normalize: a.peak_normalize,
    };
    if dataset::NUM_CLASSES * config.per_class < dataset::MIN_SPLIT_RECORDS {
        return Err(invalid(
            "--per-class",
            format!(
                "{} records are too few to split; need at least {}",
                dataset::NUM_CLASSES * config.per_class,
                dataset::MIN_SPLIT_RECORDS
            ),
        ));
    }
    let mut ds = generate_dataset(&config).map_err(|e| dataset_error("gen-data", e))?;
    ds.split_with_seed(DEFAULT_RATIOS, seed)
        .map_err(|e| dataset_error("gen-data", e))?;
    write_dataset(&ds, &out).map_err(|e| runtime(format!("writing {}", out.display()), e))?;
    println!(
        "wrote {} records ({} per class, {} levels on the grid) to {}",
        ds.len(),
        config.per_class,
        band.len(),
        out.display()
    );
    Ok(())
}

fn load_data(path: &Path) -> CliResult<dataset::Dataset> {
    read_dataset(path).map_err(|e| runtime(format!("reading {}", path.display()), e))
}

fn train(a: TrainArgs, seed: u64) -> CliResult<()> {
    let data_path = required(a.data, "--data")?;
    let out = required(a.out, "--out")?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        hidden: at_least(a.hidden.unwrap_or(d.hidden), 1, "--hidden")?,
        max_epochs: at_least(a.max_epochs.unwrap_or(d.max_epochs), 1, "--max-epochs")?,
        validation_fail_limit: at_least(
            a.fail_limit.unwrap_or(d.validation_fail_limit),
            1,
            "--fail-limit",
        )?,
        init: init_scheme(a.init, d.init)?,
        seed,
        ..d
    };
    let ds = load_data(&data_path)?;
    let splits = dataset::scale_features(&ds).map_err(|e| runtime("--data", e))?;
    let net = |e: NetError| runtime("training", e);
    let train_b = Batch::from_labeled(&splits.train).map_err(net)?;
    let val_b = Batch::from_labeled(&splits.validation).map_err(net)?;
    let (params, report) = train_model(&train_b, &val_b, &config).map_err(net)?;
    let model = ModelFile {
        params,
        scaling: Some(splits.scaling.clone()),
        seed,
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        stop_reason: report.stop_reason,
        best_validation_loss: report.best_validation_loss,
    };
    write_model(&model, &out).map_err(|e| runtime(format!("writing {}", out.display()), e))?;
    println!(
        "epochs {} (best {}), stop: {}, best validation loss {:.6}",
        report.epochs_run,
        report.best_epoch,
        report.stop_reason.as_str(),
        report.best_validation_loss
    );
    for subset in [Subset::Train, Subset::Validation, Subset::Test] {
        let e = evaluate_model(&model.params, splits.subset(subset)).map_err(net)?;
        println!("{:<10} accuracy {:.2}%", subset.name(), 100.0 * e.accuracy);
    }
    println!("model written to {}", out.display());
    Ok(())
}

/// Records of one subset scaled with the model's own training scaling.
fn subset_matrix(
    ds: &dataset::Dataset,
    subset: &str,
    scaling: Option<&FeatureScaling>,
) -> CliResult<LabeledMatrix> {
    let indices: Vec<usize> = match subset {
        "all" => (0..ds.len()).collect(),
        name => {
            let wanted = match name {
                "train" => Subset::Train,
                "validation" => Subset::Validation,
                "test" => Subset::Test,
                other => {
                    return Err(invalid(
                        "--subset",
                        format!("expected train, validation, test or all, got {other:?}"),
                    ))
                }
            };
            let split = ds
                .split
                .as_ref()
                .ok_or_else(|| invalid("--subset", "the dataset has no split; use --subset all"))?;
            split.indices(wanted)
        }
    };
    let n = ds.n_features();
    let mut features = vec![0.0; indices.len() * n];
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &i) in features.chunks_exact_mut(n).zip(&indices) {
        let r = &ds.records[i];
        match scaling {
            Some(s) => s.scale_into(&r.features, row),
            None => row.copy_from_slice(&r.features),
        }
        labels.push(r.label());
    }
    Ok(LabeledMatrix {
        n_features: n,
        features,
        labels,
    })
}

fn confusion_text(e: &Evaluation) -> String {
    let mut s = String::from("true\\pred");
    for k in 1..=e.confusion.len() {
        let _ = write!(s, " {k:>6}");
    }
    s.push('\n');
    for (i, row) in e.confusion.iter().enumerate() {
        let _ = write!(s, "{:>9}", i + 1);
        for c in row {
            let _ = write!(s, " {c:>6}");
        }
        s.push('\n');
    }
    s
}

fn eval(a: EvalArgs) -> CliResult<()> {
    let model_path = required(a.model, "--model")?;
    let data_path = required(a.data, "--data")?;
    let subset = a.subset.unwrap_or_else(|| "test".to_string());
    let model = read_model(&model_path)
        .map_err(|e| runtime(format!("reading {}", model_path.display()), e))?;
    let ds = load_data(&data_path)?;
    if ds.n_features() != model.params.shape().input {
        return Err(invalid(
            "--data",
            format!(
                "{} features per record, the model expects {}",
                ds.n_features(),
                model.params.shape().input
            ),
        ));
    }
    let m = subset_matrix(&ds, &subset, model.scaling.as_ref())?;
    let e = evaluate_model(&model.params, &m).map_err(|e| runtime("evaluation", e))?;
    println!(
        "{subset}: {} of {} correct, accuracy {:.2}%",
        e.correct(),
        e.total(),
        100.0 * e.accuracy
    );
    print!("{}", confusion_text(&e));
    Ok(())
}

fn table(a: TableArgs, seed: u64) -> CliResult<()> {
    let mut sweep = SweepConfig::default();
    if let Some(te) = a.te_fs {
        for &t in &te {
            positive(t, "--te-fs")?;
        }
        sweep.entanglement_times = te;
    }
    if let Some(w) = a.band_widths {
        for &x in &w {
            positive(x, "--band-widths")?;
        }
        sweep.band_widths = w;
    }
    if let Some(s) = a.steps {
        for &x in &s {
            positive(x, "--steps")?;
        }
        sweep.steps = s;
    }
    if let Some(c) = a.center_nm {
        sweep.center_nm = positive(c, "--center-nm")?;
    }
    let base = &mut sweep.base;
    base.base_seed = seed;
    base.fixed_split = a.fixed_split;
    base.replicates = at_least(a.replicates.unwrap_or(base.replicates), 2, "--replicates")?;
    base.per_class = at_least(a.per_class.unwrap_or(base.per_class), 5, "--per-class")?;
    base.n_samples = at_least(a.samples.unwrap_or(base.n_samples), 2, "--samples")?;
    base.train.hidden = at_least(a.hidden.unwrap_or(base.train.hidden), 1, "--hidden")?;
    base.train.max_epochs =
        at_least(a.max_epochs.unwrap_or(base.train.max_epochs), 1, "--max-epochs")?;
    base.train.init = init_scheme(a.init, base.train.init)?;
    if let Some(l) = a.lambda0_nm {
        base.source = PhotonSource::degenerate(positive(l, "--lambda0-nm")?, base.source.entanglement_time())
            .map_err(physics_invalid("--lambda0-nm"))?;
    }
    // validate every cell before any training starts
    sweep.cells().map_err(|e| match e {
        ExperimentError::Dataset(d) => invalid("--band-widths/--steps/--center-nm", d),
        other => invalid("table", other),
    })?;
    let out = a.out.unwrap_or_else(|| PathBuf::from("table.csv"));
    let rows = experiment::reproduce_table_with(&sweep, |r| {
        eprintln!(
            "done: ({}, {}) nm, step {} nm, T_e {} fs: {:.2} ± {:.2} %",
            r.band_low, r.band_high, r.step, r.te, r.mean, r.std
        );
    })
    .map_err(|e| runtime("table", e))?;
    write_text(&out, &report_csv(&rows))?;
    if let Some(path) = a.dump_replicates {
        write_text(&path, &replicates_csv(&rows))?;
    }
    print!("{}", report_text(&rows));
    Ok(())
}

/// Outcome of one self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.value < self.tolerance
    }
}

pub const ORACLE_TOLERANCE: f64 = 1e-3;
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
pub const GRADIENT_STEP: f64 = 1e-5;
pub const GRADIENT_BATCH: usize = 20;
/// Input width of the gradient-check network. Wider inputs add coordinates
/// whose gradients sit near the central-difference round-off floor at this
/// step, which the relative metric cannot distinguish from an error.
pub const GRADIENT_INPUTS: usize = 20;

/// Closed form against the quadrature reference on random default-band
/// systems at T_e = 63 fs. Returns the worst max-abs difference.
pub fn oracle_check(seed: u64, systems: usize) -> Result<CheckResult, Box<dyn std::error::Error>> {
    let d = GeneratorConfig::default();
    let tau = d.window.grid(d.n_samples)?;
    let mut worst: f64 = 0.0;
    for i in 0..systems {
        let mut r = rng::stream(seed, Purpose::Record, 0, i as u64);
        let k = 1 + i % dataset::NUM_CLASSES;
        let system = sample_system(&d.band, k, DipoleMode::Unit, &mut r)?;
        let closed = signal_trace(&system, &d.source, d.window, d.n_samples, true)?;
        let reference = oracle_trace(&system, &d.source, &tau)?;
        worst = worst.max(closed.max_abs_diff(&reference));
    }
    Ok(CheckResult {
        name: format!("oracle agreement ({systems} systems, max abs diff)"),
        value: worst,
        tolerance: ORACLE_TOLERANCE,
    })
}

/// Analytic gradient against central differences at random parameter points
/// of a 20→5→4 network on random 20-sample batches.
pub fn gradient_check(seed: u64, points: usize) -> Result<CheckResult, NetError> {
    use rand::Rng;
    let shape = Shape::new(GRADIENT_INPUTS, TrainConfig::default().hidden, dataset::NUM_CLASSES);
    let mut worst: f64 = 0.0;
    for p in 0..points {
        let params = init_params(shape, &mut rng::stream(seed, Purpose::Init, 0, p as u64 + 1));
        let mut r = rng::stream(seed, Purpose::Noise, 0, p as u64 + 1);
        let features: Vec<f64> = (0..GRADIENT_BATCH * shape.input)
            .map(|_| r.random_range(-1.0..=1.0))
            .collect();
        let mut targets = vec![0.0; GRADIENT_BATCH * shape.output];
        for row in targets.chunks_exact_mut(shape.output) {
            row[r.random_range(0..shape.output)] = 1.0;
        }
        let batch = Batch::new(features, shape.input, targets, shape.output)?;
        worst = worst.max(finite_diff_check(&params, &batch, GRADIENT_STEP)?.max_rel_error);
    }
    Ok(CheckResult {
        name: format!("gradient check ({points} points, max relative error)"),
        value: worst,
        tolerance: GRADIENT_TOLERANCE,
    })
}

fn check(a: CheckArgs, seed: u64) -> CliResult<()> {
    let systems = at_least(a.systems.unwrap_or(10), 1, "--systems")?;
    let points = at_least(a.points.unwrap_or(10), 1, "--points")?;
    let results = [
        oracle_check(seed, systems).map_err(|e| runtime("oracle check", e))?,
        gradient_check(seed, points).map_err(|e| runtime("gradient check", e))?,
    ];
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {:.3e} (tolerance {:.0e})", r.name, r.value, r.tolerance);
        if !r.passed() {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} check(s) failed")));
    }
    Ok(())
}
