use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tlforest::dcov::{feature_dcov, feature_weights, DCovKind};
use tlforest::harness::{
    run_experiment_with_workers, write_dataset_csv, write_results, Encoder, ExperimentSpec, Method,
    ModelSettings, RawTable, Schema,
};
use tlforest::model_file::ModelDocument;
use tlforest::simgen::{gen_dataset, Domain, SimConfig};

#[derive(Parser)]
#[command(name = "tlforest", version, about = "Transfer-learning random forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write simulated source.csv, target.csv and test.csv.
    Simulate(SimulateArgs),
    /// Per-feature distance covariance with the response and the derived weights.
    Dcov(DcovArgs),
    /// Fit a method and save it as a JSON model file.
    Train(TrainArgs),
    /// Score a CSV with a saved model.
    Predict(PredictArgs),
    /// Run a replicated experiment from a TOML spec.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with simulation fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    n_t: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct SchemaArgs {
    /// Response column.
    #[arg(long, default_value = "y")]
    response: String,
    /// Comma-separated categorical columns.
    #[arg(long, value_delimiter = ',')]
    categorical: Vec<String>,
    /// Comma-separated columns to drop.
    #[arg(long, value_delimiter = ',')]
    ignore: Vec<String>,
}

impl SchemaArgs {
    fn schema(&self) -> Schema {
        Schema {
            response: self.response.clone(),
            categorical: self.categorical.clone(),
            ignore: self.ignore.clone(),
        }
    }
}

#[derive(Args)]
struct DcovArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    schema: SchemaArgs,
    /// v, u or fast_u.
    #[arg(long, default_value = "fast_u")]
    estimator: DCovKind,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    target: PathBuf,
    /// Source CSV, required by tlcrf, tlsrf and source_only.
    #[arg(long)]
    source: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaArgs,
    /// TOML model settings with sections [crf], [srf], [tlcrf], [tlsrf].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tree count for every forest.
    #[arg(long)]
    n_trees: Option<usize>,
    /// Features per node for every CART forest.
    #[arg(long)]
    mtry: Option<usize>,
    /// Fixed depth for every centered forest.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV with one `prediction` column; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    spec: PathBuf,
    /// Results CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_table(path: &Path) -> Result<RawTable> {
    RawTable::read(path).with_context(|| format!("reading {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut c: SimConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SimConfig::default(),
    };
    c.n_s = args.n_s.unwrap_or(c.n_s);
    c.n_t = args.n_t.unwrap_or(c.n_t);
    c.n_test = args.n_test.unwrap_or(c.n_test);
    c.d = args.d.unwrap_or(c.d);
    c.r = args.r.unwrap_or(c.r);
    c.noise_sd = args.noise_sd.unwrap_or(c.noise_sd);
    c.seed = args.seed.unwrap_or(c.seed);
    c.validate()?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (domain, name) in [
        (Domain::Source, "source.csv"),
        (Domain::Target, "target.csv"),
        (Domain::Test, "test.csv"),
    ] {
        let path = args.out_dir.join(name);
        let data = gen_dataset(&c, domain)?;
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_dataset_csv(&data, BufWriter::new(file))?;
    }
    Ok(())
}

fn dcov(args: DcovArgs) -> Result<()> {
    let (data, encoder) = tlforest::harness::load_csv(&args.data, &args.schema.schema())
        .with_context(|| format!("loading {}", args.data.display()))?;
    let estimates = feature_dcov(&data, args.estimator)?;
    let weights = feature_weights(&estimates)?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    w.write_record(["feature", "dcov", "weight"])?;
    for ((name, e), p) in encoder.feature_names().iter().zip(&estimates).zip(weights.as_slice()) {
        w.write_record([name.clone(), e.value.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut settings: ModelSettings = match &args.config {
        Some(p) => read_toml(p)?,
        None => ModelSettings::default(),
    };
    if let Some(t) = args.n_trees {
        settings.crf.n_trees = t;
        settings.srf.n_trees = t;
        settings.tlcrf.source.n_trees = t;
        settings.tlcrf.residual.n_trees = t;
        settings.tlsrf.source.n_trees = t;
        settings.tlsrf.residual.n_trees = t;
    }
    if let Some(m) = args.mtry {
        settings.set_mtry(m);
    }
    if let Some(h) = args.depth {
        settings.crf.depth = Some(h);
        settings.tlcrf.source.depth = Some(h);
        settings.tlcrf.residual.depth = Some(h);
    }
    let schema = args.schema.schema();
    let target = read_table(&args.target)?;
    let source = match (&args.source, args.method.needs_source()) {
        (Some(p), _) => Some(read_table(p)?),
        (None, true) => bail!("method {} needs --source", args.method),
        (None, false) => None,
    };
    let target_rows = target.all_rows();
    let source_rows = source.as_ref().map(RawTable::all_rows).unwrap_or_default();
    let mut parts = vec![(&target, target_rows.as_slice())];
    if let Some(s) = &source {
        if s.headers != target.headers {
            bail!("source and target CSV headers differ");
        }
        parts.insert(0, (s, source_rows.as_slice()));
    }
    let encoder = Encoder::fit(&parts, &schema)?;
    let target_data = encoder.transform(&target, &target_rows)?;
    let source_data = match &source {
        Some(s) => Some(encoder.transform(s, &source_rows)?),
        None => None,
    };
    let model = tlforest::harness::fit_method(
        args.method,
        source_data.as_ref(),
        &target_data,
        &settings,
        args.seed,
    )?;
    ModelDocument::new(args.method.name(), &model, Some(encoder))
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn predict(args: PredictArgs) -> Result<()> {
    let doc = ModelDocument::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let model = doc.decode()?;
    let table = read_table(&args.data)?;
    let x = match &doc.encoder {
        Some(enc) => enc.transform_features(&table, &table.all_rows())?,
        None => bail!("model file has no column encoder"),
    };
    if x.n_cols() != model.n_features() {
        bail!("encoded {} features, model expects {}", x.n_cols(), model.n_features());
    }
    let preds = model.predict_matrix(&x);
    let mut w = output(args.out.as_deref())?;
    writeln!(w, "prediction")?;
    for p in preds {
        writeln!(w, "{p}")?;
    }
    w.flush()?;
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.spec)
        .with_context(|| format!("reading {}", args.spec.display()))?;
    let mut spec = ExperimentSpec::from_toml(&text)?;
    if let Some(base) = args.spec.parent() {
        spec.resolve_paths(base);
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(r) = args.replications {
        spec.replications = r;
    }
    let rows = run_experiment_with_workers(&spec, args.workers)?;
    let mut w = output(args.out.as_deref())?;
    write_results(&rows, &mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Dcov(a) => dcov(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Experiment(a) => experiment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // library errors already embed their sources in the message
            let mut msg = String::new();
            for cause in e.chain() {
                let s = cause.to_string();
                if !msg.contains(&s) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&s);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
