use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use werl::ingest::{generate_synthetic, load_links, Provenance, SynthConfig, TextFormat};
use werl::model::Model;
use werl::pipeline::{
    evaluate_predictions, read_predictions, run_experiment, write_predictions, write_run_dir, ExperimentConfig,
    FileSource, KgVariant, Metrics, Mode, PredictionRow, DEFAULT_MAX_CROSS_PRODUCT,
};
use werl::weights::LossSign;
use werl::{Error, Result};

const MANIFEST: &str = "manifest.toml";

#[derive(Parser)]
#[command(name = "werl", version, about = "Weighted record linkage over an evolution knowledge graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic linked dataset.
    Generate {
        /// Synthetic data config (TOML); defaults to the Febrl-like layout.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a data directory holding A.csv, B.csv and truth_links.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Blocking attribute; overrides the config.
        #[arg(long)]
        blocking: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score record pairs with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// `a_id,b_id` pairs to score instead of the blocked candidates.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_MAX_CROSS_PRODUCT)]
        max_cross_product: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a predictions file against true links.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a full experiment from a config file.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets the data, embedding and weight seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Keep all weights at 1.
    #[arg(long)]
    merl: bool,
    #[arg(long, value_parser = ["ekg", "er"])]
    kg: Option<String>,
    #[arg(long, value_parser = ["corrected", "as-written"])]
    loss_sign: Option<String>,
    /// Fixed decision threshold instead of validation selection.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct Input {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<PathBuf>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<Input>,
    artifacts: Vec<PathBuf>,
    started_unix: u64,
    finished_unix: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    fn new(command: &str, config: Option<&Path>) -> Self {
        RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            config: config.map(Path::to_path_buf),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.into(), seed);
        self
    }

    fn inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a Path>) -> Result<Self> {
        for path in paths {
            self.inputs.push(Input {
                path: path.to_path_buf(),
                sha256: sha256_file(path)?,
            });
        }
        Ok(self)
    }

    fn write(mut self, dir: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
        self.artifacts = artifacts;
        self.finished_unix = unix_now();
        let text = toml::to_string(&self).map_err(|e| Error::Invalid(e.to_string()))?;
        let path = dir.join(MANIFEST);
        fs::write(&path, text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Invalid(format!("{}: {e}", dir.display())))
}

fn generate(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let manifest = RunManifest::new("generate", config).seed("data", seed).inputs(config)?;
    let synth = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
            SynthConfig::from_toml(&text)?
        }
        None => SynthConfig::febrl_like(),
    };
    let data = generate_synthetic(&synth, seed)?;
    data.write(out)?;
    let synth_path = out.join("synth.toml");
    fs::write(&synth_path, synth.to_toml()).map_err(|e| Error::Invalid(format!("{}: {e}", synth_path.display())))?;
    let mut artifacts: Vec<PathBuf> = ["A.csv", "B.csv", "truth_links.csv", "rules.csv"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    artifacts.push(synth_path);
    manifest.write(out, artifacts)?;
    println!(
        "wrote {} + {} records and {} links to {}",
        data.data.a.len(),
        data.data.b.len(),
        data.data.links.len(),
        out.display()
    );
    Ok(())
}

fn load_config(run: &RunArgs) -> Result<ExperimentConfig> {
    match &run.config {
        Some(path) => ExperimentConfig::read_unvalidated(path),
        None => Ok(ExperimentConfig::febrl_like()),
    }
}

fn apply_overrides(mut config: ExperimentConfig, run: &RunArgs) -> Result<ExperimentConfig> {
    if let Some(seed) = run.seed {
        config = config.with_seed(seed);
    }
    if run.merl {
        config.mode = Mode::Merl;
    }
    if let Some(kg) = &run.kg {
        config.kg_variant = kg.parse::<KgVariant>()?;
    }
    if let Some(sign) = &run.loss_sign {
        config.weights.loss_sign = sign.parse::<LossSign>()?;
    }
    if run.threshold.is_some() {
        config.threshold = run.threshold;
    }
    config.validate()?;
    Ok(config)
}

fn experiment(command: &str, config: ExperimentConfig, run: &RunArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = run.config.iter().map(PathBuf::as_path).collect();
    if let Some(files) = &config.files {
        inputs.extend([files.a.as_path(), files.b.as_path(), files.links.as_path()]);
        inputs.extend(files.relations.as_deref());
    }
    let manifest = RunManifest::new(command, run.config.as_deref())
        .seed("data", config.seed)
        .seed("embed", config.embed.seed)
        .seed("weights", config.weights.seed)
        .inputs(inputs)?;
    let result = run_experiment(&config)?;
    create_dir(&run.out)?;
    let artifacts = write_run_dir(&run.out, &result)?;
    manifest.write(&run.out, artifacts)?;
    println!("{}", result.report.metrics_line());
    Ok(())
}

fn train(data: &Path, blocking: Option<String>, run: &RunArgs) -> Result<()> {
    let mut config = load_config(run)?;
    if run.config.is_none() {
        config.name = "train".into();
    }
    let configured = config
        .files
        .as_ref()
        .and_then(|f| f.blocking.clone())
        .or_else(|| config.synthetic.as_ref().and_then(|s| s.blocking.clone()));
    let mut files = FileSource::discover(data, blocking.or(configured))?;
    if let Some(f) = &config.files {
        files.delimiter = f.delimiter;
        files.null_markers = f.null_markers.clone();
    }
    config.synthetic = None;
    config.files = Some(files);
    experiment("train", apply_overrides(config, run)?, run)
}

fn predict(
    model_path: &Path,
    a: &Path,
    b: &Path,
    pairs: Option<&Path>,
    threshold: Option<f64>,
    cap: u64,
    out: &Path,
) -> Result<()> {
    let mut inputs = vec![model_path, a, b];
    inputs.extend(pairs);
    let model = Model::load(model_path)?;
    let manifest = RunManifest::new("predict", None).seed("embed", model.store.seed()).inputs(inputs)?;
    let predictions = model.predict_files(a, b, pairs, &TextFormat::comma(), threshold, cap)?;
    let rows: Vec<PredictionRow> = predictions.iter().map(PredictionRow::from).collect();
    create_dir(out)?;
    let path = out.join("predictions.csv");
    write_predictions(&path, &rows)?;
    manifest.write(out, vec![path.clone()])?;
    println!("scored {} pairs into {}", rows.len(), path.display());
    Ok(())
}

fn evaluate(predictions: &Path, truth: &Path, out: Option<&Path>) -> Result<()> {
    let manifest = RunManifest::new("evaluate", None).inputs([predictions, truth])?;
    let rows = read_predictions(predictions)?;
    let links = load_links(truth, Provenance::Test)?;
    let metrics = evaluate_predictions(&rows, &links)?;
    let table = format!("{}\n{}\n", Metrics::CSV_HEADER, metrics.csv_row());
    print!("{table}");
    if let Some(out) = out {
        create_dir(out)?;
        let path = out.join("metrics.csv");
        fs::write(&path, &table).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        manifest.write(out, vec![path])?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => generate(config.as_deref(), seed, &out),
        Command::Train { data, blocking, run } => train(&data, blocking, &run),
        Command::Predict {
            model,
            a,
            b,
            pairs,
            threshold,
            max_cross_product,
            out,
        } => predict(&model, &a, &b, pairs.as_deref(), threshold, max_cross_product, &out),
        Command::Evaluate { predictions, truth, out } => evaluate(&predictions, &truth, out.as_deref()),
        Command::Experiment { run } => {
            let config = apply_overrides(load_config(&run)?, &run)?;
            experiment("experiment", config, &run)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
