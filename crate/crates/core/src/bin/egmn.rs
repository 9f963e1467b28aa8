//! Command-line front end: synth, train, evaluate, predict, inspect.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use egmn::data::synth::{build_world, Oracle};
use egmn::data::{
    load_csv, split, write_csv, Dataset, DatasetManifest, SplitMode, SyntheticWorldConfig, Transform,
};
use egmn::dist::{write_curve_csv, CurveKind};
use egmn::metrics::{empirical_masses, predicted_masses, write_bin_masses_csv, BinSpec, MetricReport};
use egmn::network::{load_checkpoint, save_checkpoint, NetworkWeights};
use egmn::runner::{check_schema, evaluate, predict, predict_params, train_with_hook, OracleKl, TrainConfig};
use egmn::{EgmnError, Execution, Result};

const CHECKPOINT_FILE: &str = "checkpoint.json";
const TRANSFORM_FILE: &str = "transform.json";
const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Parser)]
#[command(name = "egmn", version, about = "Exponential-Gaussian mixture network for watch-time regression")]
struct Cli {
    /// Run batch work on one thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction log with its ground-truth oracle.
    Synth(SynthArgs),
    /// Preprocess, split and train; writes checkpoint, transform, history and report.
    Train(Box<TrainArgs>),
    /// Score a trained model on a log.
    Evaluate(EvalArgs),
    /// Predict expected watch time, quick-skip probabilities and quantiles.
    Predict(PredictArgs),
    /// Export the predicted density or CDF curve of one record.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WorldPreset {
    Default,
    SkewHeavy,
    Bimodal,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (records.csv, oracle.json, manifest.toml).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, value_enum, default_value = "default")]
    world: WorldPreset,
    /// TOML world config; explicit flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    users: Option<usize>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Compress the records file.
    #[arg(long)]
    gzip: bool,
}

#[derive(Args)]
struct DataArgs {
    /// Interaction log (CSV, optionally .gz).
    #[arg(long)]
    data: PathBuf,
    /// Dataset manifest (TOML). Defaults to manifest.toml next to the data.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// TOML training config; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Oracle sidecar of a synthetic log; adds per-epoch oracle KL to the history.
    #[arg(long)]
    oracle: Option<PathBuf>,
    /// Gaussian component count.
    #[arg(long)]
    k: Option<usize>,
    /// Entropy regularizer weight.
    #[arg(long)]
    alpha: Option<f64>,
    /// Regression loss weight.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Backbone widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Seed for initialization; the shuffle seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split: Option<SplitMode>,
    #[arg(long)]
    train_frac: Option<f64>,
    /// Seconds per model time unit (default: mean training label).
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long)]
    disable_exponential: bool,
    #[arg(long)]
    disable_gaussians: bool,
    #[arg(long)]
    drop_mle: bool,
    #[arg(long)]
    drop_entropy: bool,
    #[arg(long)]
    drop_reg: bool,
    /// Use the configured seeds without mixing in OS entropy.
    #[arg(long)]
    deterministic: bool,
    /// Keep the weights of the epoch with the best eval MAE.
    #[arg(long)]
    keep_best: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Log to score (default: the held-out split saved by `train`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for report.txt, report.csv and bins.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = egmn::metrics::DEFAULT_XAUC_PAIRS)]
    xauc_pairs: usize,
    #[arg(long, default_value_t = egmn::metrics::DEFAULT_XAUC_SEED)]
    xauc_seed: u64,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Quick-skip thresholds in seconds.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6")]
    tau: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
    quantiles: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveArg {
    Pdf,
    Cdf,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Zero-based record index.
    #[arg(long, default_value_t = 0)]
    row: usize,
    #[arg(long, value_enum, default_value = "pdf")]
    kind: CurveArg,
    #[arg(long, default_value_t = 2001)]
    points: usize,
    /// Right end of the grid (default: the 99.99% quantile).
    #[arg(long)]
    t_max: Option<f64>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(*a, exec),
        Command::Evaluate(a) => evaluate_cmd(a, exec),
        Command::Predict(a) => predict_cmd(a, exec),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = match (&a.config, a.world) {
        (Some(p), _) => {
            toml::from_str(&std::fs::read_to_string(p)?).map_err(|e| EgmnError::Config(format!("world config: {e}")))?
        }
        (None, WorldPreset::Default) => SyntheticWorldConfig::default(),
        (None, WorldPreset::SkewHeavy) => SyntheticWorldConfig::skew_heavy(),
        (None, WorldPreset::Bimodal) => SyntheticWorldConfig::bimodal(),
    };
    cfg.users = a.users.unwrap_or(cfg.users);
    cfg.videos = a.videos.unwrap_or(cfg.videos);
    cfg.seed = a.seed.unwrap_or(cfg.seed);
    let oracle = build_world(&cfg)?;
    let records = oracle.generate(a.samples);
    create_dir(&a.out)?;
    let name = if a.gzip { "records.csv.gz" } else { "records.csv" };
    let manifest = DatasetManifest {
        columns: oracle.mapping(),
        ..Default::default()
    };
    write_csv(&a.out.join(name), &records, &manifest.columns)?;
    oracle.save(&a.out.join("oracle.json"))?;
    std::fs::write(a.out.join(MANIFEST_FILE), manifest.to_toml())?;
    log::info!("wrote {} interactions to {}", records.len(), a.out.join(name).display());
    Ok(())
}

fn manifest_for(data: &Path, explicit: Option<&Path>) -> Result<DatasetManifest> {
    match explicit {
        Some(p) => DatasetManifest::load(p),
        None => {
            let sibling = data.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
            if sibling.exists() {
                DatasetManifest::load(&sibling)
            } else {
                Ok(DatasetManifest::default())
            }
        }
    }
}

fn load_log(data: &Path, manifest: &DatasetManifest) -> Result<Dataset> {
    let loaded = load_csv(data, &manifest.columns, manifest.max_row_errors)?;
    for e in &loaded.rejected {
        log::warn!("{}: line {}: {}", data.display(), e.line, e.message);
    }
    Ok(Dataset::from_records(loaded.records))
}

fn train(a: TrainArgs, exec: Execution) -> Result<()> {
    let manifest = manifest_for(&a.data.data, a.data.manifest.as_deref())?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    macro_rules! flag {
        ($($f:ident),*) => { $(if let Some(v) = a.$f.clone() { cfg.$f = v; })* };
    }
    flag!(k, alpha, beta, lr, batch, epochs, hidden);
    if let Some(s) = a.seed {
        cfg.init_seed = s;
        cfg.shuffle_seed = s.wrapping_add(1);
    }
    if a.time_scale.is_some() {
        cfg.time_scale = a.time_scale;
    }
    cfg.disable_exponential |= a.disable_exponential;
    cfg.disable_gaussians |= a.disable_gaussians;
    cfg.drop_mle |= a.drop_mle;
    cfg.drop_entropy |= a.drop_entropy;
    cfg.drop_reg |= a.drop_reg;
    cfg.deterministic |= a.deterministic;
    cfg.keep_best |= a.keep_best;
    cfg.validate()?;
    let mode = a.split.unwrap_or(manifest.split.mode);
    let frac = a.train_frac.unwrap_or(manifest.split.train_fraction);

    let ds = load_log(&a.data.data, &manifest)?;
    let (tr, ev) = split(&ds, mode, frac, manifest.split.seed)?;
    let transform = Transform::fit(tr.records(), &manifest.preprocess)?;
    create_dir(&a.out)?;
    write_csv(&a.out.join("eval.csv"), ev.records(), &manifest.columns)?;
    let oracle = a.oracle.as_deref().map(Oracle::load).transpose()?;
    let tr = transform.apply(tr)?;
    let ev = transform.apply(ev)?;
    let okl = oracle.as_ref().map(|o| OracleKl::new(o, &ev)).transpose()?;

    let out = train_with_hook(&cfg, &transform, &tr, &ev, exec, |ctx| {
        let mut extra = std::collections::BTreeMap::new();
        if let Some(okl) = &okl {
            extra.insert("oracle_kl".to_string(), okl.mean_kl(ctx.eval_params, exec)?);
        }
        Ok(extra)
    })?;

    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &out.weights)?;
    transform.save(&a.out.join(TRANSFORM_FILE))?;
    std::fs::write(a.out.join(MANIFEST_FILE), manifest.to_toml())?;
    let used = TrainConfig {
        shuffle_seed: out.shuffle_seed,
        time_scale: Some(out.weights.arch.time_scale),
        ..cfg
    };
    std::fs::write(a.out.join("config.toml"), used.to_toml())?;
    out.history.save(&a.out.join("history.csv"), &a.out.join("timing.csv"))?;
    write_report(&a.out, &out.report)?;
    println!("{}", out.report);
    Ok(())
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    report.save(&dir.join("report.txt"))?;
    std::fs::write(dir.join("report.csv"), format!("{}\n{}\n", report.csv_header(), report.csv_row()))?;
    Ok(())
}

fn load_model(dir: &Path) -> Result<(NetworkWeights, Transform)> {
    let weights = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
    let transform = Transform::load(&dir.join(TRANSFORM_FILE))?;
    check_schema(&weights, &transform)?;
    Ok((weights, transform))
}

fn evaluate_cmd(a: EvalArgs, exec: Execution) -> Result<()> {
    let dir = &a.model.model;
    let (weights, transform) = load_model(dir)?;
    let data = a.data.unwrap_or_else(|| dir.join("eval.csv"));
    let manifest = manifest_for(&data, a.manifest.as_deref())?;
    let ds = transform.apply(load_log(&data, &manifest)?)?;
    let report = evaluate(&weights, &transform, &ds, a.xauc_pairs, a.xauc_seed, exec)?;
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_report(out, &report)?;
        let labels = ds.labels();
        let spec = BinSpec::from_labels(&labels)?;
        let params = predict_params(&weights, ds.examples(), exec)?;
        let file = File::create(out.join("bins.csv"))?;
        write_bin_masses_csv(
            file,
            &spec,
            &empirical_masses(&labels, &spec)?,
            &predicted_masses(&params, &spec, exec)?,
        )?;
    }
    println!("{report}");
    Ok(())
}

fn predict_cmd(a: PredictArgs, exec: Execution) -> Result<()> {
    let (weights, transform) = load_model(&a.model.model)?;
    let manifest = manifest_for(&a.data, a.manifest.as_deref())?;
    let ds = load_log(&a.data, &manifest)?;
    let preds = predict(&weights, &transform, ds.records(), &a.tau, &a.quantiles, exec)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&a.out)?));
    let mut header = vec!["user_id".to_string(), "video_id".into(), "expected".into()];
    header.extend(a.tau.iter().map(|t| format!("p_le_{t}")));
    header.extend(a.quantiles.iter().map(|q| format!("q_{q}")));
    header.extend(["rate".into(), "weights".into(), "means".into(), "variances".into()]);
    w.write_record(&header)?;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    for (r, p) in ds.records().iter().zip(&preds) {
        let mut row = vec![r.user_id.clone(), r.video_id.clone(), p.expected.to_string()];
        row.extend(p.cdf.iter().map(|(_, v)| v.to_string()));
        row.extend(p.quantiles.iter().map(|(_, v)| v.to_string()));
        row.push(p.params.rate().to_string());
        row.push(join(p.params.weights()));
        row.push(join(p.params.means()));
        row.push(join(p.params.variances()));
        w.write_record(&row)?;
    }
    w.flush()?;
    log::info!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let (weights, transform) = load_model(&a.model.model)?;
    let manifest = manifest_for(&a.data, a.manifest.as_deref())?;
    let ds = load_log(&a.data, &manifest)?;
    let record = ds
        .records()
        .get(a.row)
        .ok_or_else(|| EgmnError::Domain(format!("row {} out of range ({} records)", a.row, ds.len())))?;
    if a.points < 2 {
        return Err(EgmnError::Domain("need at least 2 grid points".into()));
    }
    let pred = predict(&weights, &transform, std::slice::from_ref(record), &[], &[], Execution::Sequential)?.remove(0);
    let t_max = match a.t_max {
        Some(t) => t,
        None => pred.params.quantile(0.9999)?,
    };
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(EgmnError::Domain(format!("grid end {t_max} must be positive")));
    }
    let grid: Vec<f64> = (0..a.points).map(|i| t_max * i as f64 / (a.points - 1) as f64).collect();
    let kind = match a.kind {
        CurveArg::Pdf => CurveKind::Pdf,
        CurveArg::Cdf => CurveKind::Cdf,
    };
    let mut out = BufWriter::new(File::create(&a.out)?);
    write_curve_csv(&mut out, &pred.params, &grid, kind)?;
    out.flush()?;
    let p = &pred.params;
    println!(
        "user {} video {}: expected {:.4}s, rate {:.6}, weights {:?}, means {:?}, variances {:?}",
        record.user_id,
        record.video_id,
        pred.expected,
        p.rate(),
        p.weights(),
        p.means(),
        p.variances()
    );
    Ok(())
}
