//! Command-line front door: synth, contaminate, train, score, detect, eval.
//!
//! Every run that writes artifacts also writes a `<output>.manifest` sidecar
//! recording the full configuration, so runs can be replayed byte-identically.
//! Outputs are staged in memory and persisted only after the whole command
//! succeeds, so failures never leave partial files behind.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvrbm::config::{apply_training_overrides, render_training_config, KeyValueFile};
use mvrbm::detect::{report_from_scores, threshold_from_percentile, write_report};
use mvrbm::error::{Error, Result};
use mvrbm::eval::{
    contaminate, f_score, roc_auc, run_experiment, write_histogram, write_metrics,
    write_training_curve, ContaminationConfig, ExperimentSpec,
};
use mvrbm::model::Model;
use mvrbm::schema::{
    apply_standardization, fit_standardization, load_csv, parse_schema, write_csv, write_schema,
    Dataset, Schema,
};
use mvrbm::synth::{generate, read_labels, write_labels, SynthConfig};
use mvrbm::train::{train, TrainingConfig};

const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "mvrbm",
    about = "Mixed-type outlier detection with a mixed-variate RBM",
    version = concat!(
        env!("CARGO_PKG_VERSION"),
        " (model format v1, manifest format v1)",
    ),
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic mixed-type benchmark (data, schema, labels).
    Synth(SynthArgs),
    /// Plant outliers in a clean dataset.
    Contaminate(ContaminateArgs),
    /// Train a model and save it with embedded standardization stats.
    Train(TrainArgs),
    /// Score records by free-energy.
    Score(ScoreArgs),
    /// Score records and flag outliers against a threshold.
    Detect(DetectArgs),
    /// Compute detection metrics, or run a full experiment spec.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "synth_data.csv")]
    out_data: PathBuf,
    #[arg(long, default_value = "synth_schema.txt")]
    out_schema: PathBuf,
    #[arg(long, default_value = "synth_labels.csv")]
    out_labels: PathBuf,
    #[arg(long, default_value_t = 3)]
    components: usize,
    /// Samples per mixture component.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0.05)]
    outlier_fraction: f64,
    #[arg(long, default_value_t = 6.0)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ContaminateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out_data: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    fraction: f64,
    #[arg(long, default_value_t = 2.0)]
    shift_low: f64,
    #[arg(long, default_value_t = 3.0)]
    shift_high: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_curve: Option<PathBuf>,
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    optimizer: Option<String>,
    /// Mini-batch size, or `full`.
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    cd_steps: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_scale: Option<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Explicit threshold.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Percentile of the training scores in `--train-scores`.
    #[arg(long)]
    percentile: Option<f64>,
    /// Score CSV produced by `mvrbm score` on the training data.
    #[arg(long)]
    train_scores: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Full experiment spec file (`key = value`); runs the whole pipeline.
    #[arg(long, conflicts_with_all = ["model", "data", "labels"])]
    experiment: Option<PathBuf>,
    /// Output directory for experiment mode.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out_metrics: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    train_scores: Option<PathBuf>,
}

/// Staged output files, persisted together once the command has succeeded.
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Outputs { files: Vec::new() }
    }

    fn add(&mut self, path: &Path, bytes: Vec<u8>) {
        self.files.push((path.to_path_buf(), bytes));
    }

    fn add_manifest(&mut self, primary: &Path, manifest: &KeyValueFile) {
        let mut kv = manifest.clone();
        kv.set("manifest_version", MANIFEST_FORMAT_VERSION);
        let path = primary.with_extension(match primary.extension() {
            Some(ext) => format!("{}.manifest", ext.to_string_lossy()),
            None => String::from("manifest"),
        });
        self.files.push((path, kv.render().into_bytes()));
    }

    fn persist(self) -> Result<()> {
        for (path, bytes) in &self.files {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::write(path, bytes)?;
        }
        Ok(())
    }
}

fn load_schema_file(path: &Path) -> Result<Schema> {
    parse_schema(&fs::read_to_string(path)?)
}

fn load_dataset(data: &Path, schema: &Schema) -> Result<Dataset> {
    load_csv(BufReader::new(fs::File::open(data)?), schema)
}

fn load_model_file(path: &Path) -> Result<(Model, Option<mvrbm::schema::StandardizationStats>)> {
    Model::load(BufReader::new(fs::File::open(path)?))
}

/// Parse the `free_energy` column of a score CSV.
fn load_scores(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("empty score file {}", path.display())))?;
    let column = header
        .split(',')
        .position(|name| name == "free_energy")
        .ok_or_else(|| Error::Data(format!("no free_energy column in {}", path.display())))?;
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            line.split(',')
                .nth(column)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad score line '{line}'")))
        })
        .collect()
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.samples == 0 {
        return Err(Error::Config("--samples must be positive".into()));
    }
    let config = SynthConfig {
        components: args.components,
        samples_per_component: args.samples,
        outlier_fraction: args.outlier_fraction,
        noise_scale: args.noise_scale,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let data = generate(&config)?;

    let mut outputs = Outputs::new();
    let mut csv = Vec::new();
    write_csv(&data, &mut csv)?;
    outputs.add(&args.out_data, csv);
    outputs.add(&args.out_schema, write_schema(&data.schema).into_bytes());
    let mut labels = Vec::new();
    write_labels(data.labels.as_ref().expect("generator labels rows"), &mut labels)?;
    outputs.add(&args.out_labels, labels);

    let mut manifest = KeyValueFile::new();
    manifest.set("command", "synth");
    manifest.set("components", config.components);
    manifest.set("samples", config.samples_per_component);
    manifest.set("outlier_fraction", config.outlier_fraction);
    manifest.set("noise_scale", config.noise_scale);
    manifest.set("seed", config.seed);
    manifest.set("out_data", args.out_data.display());
    manifest.set("out_schema", args.out_schema.display());
    manifest.set("out_labels", args.out_labels.display());
    outputs.add_manifest(&args.out_data, &manifest);
    outputs.persist()
}

fn cmd_contaminate(args: &ContaminateArgs) -> Result<()> {
    let schema = load_schema_file(&args.schema)?;
    let data = load_dataset(&args.data, &schema)?;
    let config = ContaminationConfig {
        fraction: args.fraction,
        shift_low: args.shift_low,
        shift_high: args.shift_high,
        seed: args.seed,
    };
    let contaminated = contaminate(&data, &config)?;

    let mut outputs = Outputs::new();
    let mut csv = Vec::new();
    write_csv(&contaminated, &mut csv)?;
    outputs.add(&args.out_data, csv);
    let mut labels = Vec::new();
    write_labels(contaminated.labels.as_ref().expect("contaminate labels rows"), &mut labels)?;
    outputs.add(&args.out_labels, labels);

    let mut manifest = KeyValueFile::new();
    manifest.set("command", "contaminate");
    manifest.set("data", args.data.display());
    manifest.set("schema", args.schema.display());
    manifest.set("fraction", config.fraction);
    manifest.set("shift_low", config.shift_low);
    manifest.set("shift_high", config.shift_high);
    manifest.set("seed", config.seed);
    manifest.set("out_data", args.out_data.display());
    manifest.set("out_labels", args.out_labels.display());
    outputs.add_manifest(&args.out_data, &manifest);
    outputs.persist()
}

fn training_config_from_args(args: &TrainArgs) -> Result<TrainingConfig> {
    let mut config = TrainingConfig::default();
    if let Some(path) = &args.config {
        let kv = KeyValueFile::parse(&fs::read_to_string(path)?)?;
        config = apply_training_overrides(config, &kv)?;
    }
    let mut flags = KeyValueFile::new();
    if let Some(v) = args.hidden {
        flags.set("hidden", v);
    }
    if let Some(v) = args.epochs {
        flags.set("epochs", v);
    }
    if let Some(v) = args.lr {
        flags.set("learning_rate", v);
    }
    if let Some(v) = &args.optimizer {
        flags.set("optimizer", v);
    }
    if let Some(v) = &args.batch_size {
        flags.set("batch_size", v);
    }
    if let Some(v) = args.cd_steps {
        flags.set("cd_steps", v);
    }
    if let Some(v) = args.momentum {
        flags.set("momentum", v);
    }
    if let Some(v) = args.seed {
        flags.set("seed", v);
    }
    if let Some(v) = args.init_scale {
        flags.set("init_scale", v);
    }
    apply_training_overrides(config, &flags)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let schema = load_schema_file(&args.schema)?;
    let data = load_dataset(&args.data, &schema)?;
    let config = training_config_from_args(args)?;

    let stats = fit_standardization(&data)?;
    let standardized = apply_standardization(&data, &stats)?;
    let (model, report) = train(&standardized, &config, None)?;

    let mut outputs = Outputs::new();
    let mut model_bytes = Vec::new();
    model.save(Some(&stats), &mut model_bytes)?;
    outputs.add(&args.out_model, model_bytes);
    if let Some(curve_path) = &args.out_curve {
        let mut curve = Vec::new();
        write_training_curve(&report, &mut curve)?;
        outputs.add(curve_path, curve);
    }

    let mut manifest = render_training_config(&config);
    manifest.set("command", "train");
    manifest.set("data", args.data.display());
    manifest.set("schema", args.schema.display());
    manifest.set("out_model", args.out_model.display());
    if let Some(curve) = &args.out_curve {
        manifest.set("out_curve", curve.display());
    }
    outputs.add_manifest(&args.out_model, &manifest);
    outputs.persist()
}

/// Load a model plus data and return standardized rows ready for scoring.
fn scored_input(model_path: &Path, data_path: &Path) -> Result<(Model, Dataset)> {
    let (model, stats) = load_model_file(model_path)?;
    let data = load_dataset(data_path, &model.schema)?;
    let data = match &stats {
        Some(stats) => apply_standardization(&data, stats)?,
        None => data,
    };
    Ok((model, data))
}

fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let (model, data) = scored_input(&args.model, &args.data)?;
    let scores = model.free_energy_batch(&data)?;

    let mut body = String::from("row_index,free_energy\n");
    for (i, s) in scores.iter().enumerate() {
        body.push_str(&format!("{i},{s}\n"));
    }
    let mut outputs = Outputs::new();
    outputs.add(&args.out, body.into_bytes());
    let mut manifest = KeyValueFile::new();
    manifest.set("command", "score");
    manifest.set("model", args.model.display());
    manifest.set("data", args.data.display());
    manifest.set("out", args.out.display());
    outputs.add_manifest(&args.out, &manifest);
    outputs.persist()
}

fn resolve_threshold(
    beta: Option<f64>,
    percentile: Option<f64>,
    train_scores: Option<&PathBuf>,
) -> Result<f64> {
    match (beta, percentile, train_scores) {
        (Some(beta), None, None) => Ok(beta),
        (None, Some(alpha), Some(path)) => threshold_from_percentile(&load_scores(path)?, alpha),
        _ => Err(Error::Config(
            "provide either --beta or both --percentile and --train-scores".into(),
        )),
    }
}

fn cmd_detect(args: &DetectArgs) -> Result<()> {
    let beta = resolve_threshold(args.beta, args.percentile, args.train_scores.as_ref())?;
    let (model, data) = scored_input(&args.model, &args.data)?;
    let report = report_from_scores(model.free_energy_batch(&data)?, beta);

    let mut outputs = Outputs::new();
    let mut body = Vec::new();
    write_report(&report, &mut body)?;
    outputs.add(&args.out, body);
    let mut manifest = KeyValueFile::new();
    manifest.set("command", "detect");
    manifest.set("model", args.model.display());
    manifest.set("data", args.data.display());
    manifest.set("beta", beta);
    manifest.set("out", args.out.display());
    outputs.add_manifest(&args.out, &manifest);
    outputs.persist()
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    if let Some(spec_path) = &args.experiment {
        return cmd_eval_experiment(spec_path, &args.out_dir);
    }
    let (model_path, data_path, labels_path) = match (&args.model, &args.data, &args.labels) {
        (Some(m), Some(d), Some(l)) => (m, d, l),
        _ => {
            return Err(Error::Config(
                "eval needs either --experiment or all of --model/--data/--labels".into(),
            ))
        }
    };
    let beta = resolve_threshold(args.beta, args.percentile, args.train_scores.as_ref())?;
    let (model, data) = scored_input(model_path, data_path)?;
    let labels = read_labels(BufReader::new(fs::File::open(labels_path)?))?;
    if labels.len() != data.len() {
        return Err(Error::Data(format!(
            "{} labels for {} rows",
            labels.len(),
            data.len()
        )));
    }
    let report = report_from_scores(model.free_energy_batch(&data)?, beta);
    let mut metrics = f_score(&labels, &report.verdicts)?;
    metrics.auc = roc_auc(&labels, &report.scores).ok();

    let out_metrics = args
        .out_metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from("metrics.csv"));
    let mut outputs = Outputs::new();
    let mut body = Vec::new();
    write_metrics(&metrics, &mut body)?;
    outputs.add(&out_metrics, body);
    let mut manifest = KeyValueFile::new();
    manifest.set("command", "eval");
    manifest.set("model", model_path.display());
    manifest.set("data", data_path.display());
    manifest.set("labels", labels_path.display());
    manifest.set("beta", beta);
    manifest.set("out_metrics", out_metrics.display());
    outputs.add_manifest(&out_metrics, &manifest);
    outputs.persist()
}

fn cmd_eval_experiment(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let kv = KeyValueFile::parse(&fs::read_to_string(spec_path)?)?;
    let data_path = kv
        .get("data")
        .ok_or_else(|| Error::Config("experiment spec needs `data`".into()))?;
    let schema_path = kv
        .get("schema")
        .ok_or_else(|| Error::Config("experiment spec needs `schema`".into()))?;
    let schema = load_schema_file(Path::new(schema_path))?;
    let mut data = load_dataset(Path::new(data_path), &schema)?;
    if let Some(labels_path) = kv.get("labels") {
        data.labels = Some(read_labels(BufReader::new(fs::File::open(labels_path)?))?);
        if data.labels.as_ref().map(Vec::len) != Some(data.len()) {
            return Err(Error::Data("labels file does not match data length".into()));
        }
    }

    let contamination = match kv.get_parsed::<bool>("contaminate")?.unwrap_or(false) {
        true => Some(ContaminationConfig {
            fraction: kv.get_parsed("fraction")?.unwrap_or(0.10),
            shift_low: kv.get_parsed("shift_low")?.unwrap_or(2.0),
            shift_high: kv.get_parsed("shift_high")?.unwrap_or(3.0),
            seed: 0, // replaced by the experiment's derived stage seed
        }),
        false => None,
    };
    let spec = ExperimentSpec {
        contamination,
        test_fraction: kv.get_parsed("test_fraction")?.unwrap_or(0.3),
        training: apply_training_overrides(TrainingConfig::default(), &kv)?,
        percentile: kv.get_parsed("percentile")?.unwrap_or(10.0),
        seed: kv.get_parsed("seed")?.unwrap_or(0),
    };
    let outcome = run_experiment(&data, &spec)?;

    let mut outputs = Outputs::new();
    let mut model_bytes = Vec::new();
    outcome.model.save(Some(&outcome.stats), &mut model_bytes)?;
    outputs.add(&out_dir.join("model.txt"), model_bytes);
    let mut metrics = Vec::new();
    write_metrics(&outcome.metrics, &mut metrics)?;
    outputs.add(&out_dir.join("metrics.csv"), metrics);
    let mut train_scores = Vec::new();
    write_report(&outcome.train_report, &mut train_scores)?;
    outputs.add(&out_dir.join("train_scores.csv"), train_scores);
    let mut test_scores = Vec::new();
    write_report(&outcome.test_report, &mut test_scores)?;
    outputs.add(&out_dir.join("test_scores.csv"), test_scores);
    let mut curve = Vec::new();
    write_training_curve(&outcome.training, &mut curve)?;
    outputs.add(&out_dir.join("curve.csv"), curve);
    let mut histogram = Vec::new();
    write_histogram(&outcome.test_report.scores, 40, &mut histogram)?;
    outputs.add(&out_dir.join("histogram.dat"), histogram);

    let mut manifest = kv.clone();
    manifest.set("command", "eval-experiment");
    manifest.set("spec_file", spec_path.display());
    manifest.set("out_dir", out_dir.display());
    outputs.add_manifest(&out_dir.join("metrics.csv"), &manifest);
    outputs.persist()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Contaminate(args) => cmd_contaminate(args),
        Command::Train(args) => cmd_train(args),
        Command::Score(args) => cmd_score(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
