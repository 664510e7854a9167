//! `ard`: simulate, fit and check models for aggregated relational data.

mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ard_core::crossval::{compare_elpd, cv_elpd, make_folds};
use ard_core::dataio::{dataset_paths, load_dataset_prefix, load_truth, save_dataset, save_truth};
use ard_core::diagnostics::{diagnose, trace_export};
use ard_core::modelcheck::{ppc, subpop_recovery, DEFAULT_M_SET};
use ard_core::rng::derive_seed;
use ard_core::sampler::run_chains;
use ard_core::simgen::{simulate_barrier_effects, simulate_latent_space};
use ard_core::{ArdDataset, ArdModel, ModelKind, ModelSpec, Posterior, Provenance, RescaleSpec};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::{barrier_keys, latent_keys, model_keys, sampler_keys, RunConfig};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input data (exit code 1).
    Validation(String),
    /// Failure while working on valid input (exit code 2).
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ard_core::Error> for CliError {
    fn from(e: ard_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "ard", version = ard_core::VERSION, about = "Bayesian models for aggregated relational data")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Configuration file: a JSON object or `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset with ground truth.
    Simulate {
        /// Generator: latent or barrier.
        #[arg(long)]
        model: String,
        /// Output prefix for `<prefix>.ard.csv`, `.meta.json` and `.truth.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model and store its posterior draws.
    Fit {
        /// Model: er, vd, od, latent or barrier.
        #[arg(long)]
        model: String,
        /// Dataset prefix.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for the posterior.
        #[arg(long)]
        out: PathBuf,
    },
    /// Convergence diagnostics for a stored posterior.
    Diagnose {
        #[arg(long)]
        posterior: PathBuf,
        /// Parameters to export as a long-format trace CSV.
        #[arg(long, value_delimiter = ',')]
        trace: Vec<String>,
        /// Path of the trace CSV (default `<posterior>/trace.csv`).
        #[arg(long)]
        trace_out: Option<PathBuf>,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior predictive check of the share of egos reporting each count.
    Ppc {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Counts whose shares are checked.
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<u32>>,
        /// Output prefix for `<prefix>.json` and `<prefix>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Subpopulation size and degree recovery.
    Report {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Ground truth file from `simulate`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Output prefix for `<prefix>.json`, `<prefix>.subpops.csv` and `<prefix>.degrees.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Entry-wise K-fold cross-validation of several models.
    Cv {
        /// Comma-separated models.
        #[arg(long, value_delimiter = ',', default_value = "er,vd,od,latent")]
        models: Vec<String>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        /// Path of the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code == 1 && matches!(e.kind(), ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand) {
                use clap::CommandFactory;
                let _ = Cli::command().print_help();
            }
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Validation(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { model, out } => simulate(&cfg, seed, &model, &out),
        Command::Fit { model, data, out } => fit(&cfg, seed, &model, &data, &out),
        Command::Diagnose { posterior, trace, trace_out, out } => {
            diagnose_cmd(&posterior, &trace, trace_out.as_deref(), out.as_deref())
        }
        Command::Ppc { posterior, data, m, out } => ppc_cmd(&cfg, seed, &posterior, &data, m, out.as_deref()),
        Command::Report { posterior, data, truth, out } => {
            report_cmd(&posterior, &data, truth.as_deref(), out.as_deref())
        }
        Command::Cv { models, data, folds, out } => cv_cmd(&cfg, seed, &models, &data, folds, out.as_deref()),
    }
}

fn provenance(seed: u64, config: Value, fingerprint: Option<String>) -> Value {
    serde_json::to_value(Provenance::new(seed, config, fingerprint)).expect("provenance serializes")
}

fn write(path: &Path, contents: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    write(path, &serde_json::to_vec_pretty(value).expect("JSON value serializes"))
}

/// Write a CSV and its companion `<csv>.json` holding the provenance.
fn write_csv(path: &Path, text: &str, provenance: &Value) -> CliResult<()> {
    write(path, text.as_bytes())?;
    let companion = PathBuf::from(format!("{}.json", path.display()));
    write_json(&companion, &json!({ "file": path.file_name().map(|f| f.to_string_lossy()), "provenance": provenance }))
}

fn emit(out: Option<&Path>, value: &Value) -> CliResult<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("JSON value serializes"));
            Ok(())
        }
    }
}

fn load_data(prefix: &Path) -> CliResult<ArdDataset> {
    Ok(load_dataset_prefix(prefix)?)
}

fn load_posterior(dir: &Path) -> CliResult<Posterior> {
    Ok(Posterior::load(dir)?)
}

/// Provenance recorded by `fit`, or a reconstruction from the manifest.
fn posterior_provenance(post: &Posterior) -> Value {
    post.extra.get("provenance").cloned().unwrap_or_else(|| {
        provenance(post.config.seed, json!({ "sampler": post.config }), Some(post.dataset_fingerprint.clone()))
    })
}

fn simulate(cfg: &RunConfig, seed: u64, model: &str, out: &Path) -> CliResult<()> {
    let (data, mut truth, echo) = match model {
        "latent" | "latent_space" => {
            cfg.check_applicable("simulate --model latent", &[latent_keys()])?;
            let c = cfg.latent_sim(seed)?;
            let (d, t) = simulate_latent_space(&c)?;
            (d, t, serde_json::to_value(&c).expect("config serializes"))
        }
        "barrier" | "barrier_effects" => {
            cfg.check_applicable("simulate --model barrier", &[barrier_keys()])?;
            let c = cfg.barrier_sim(seed)?;
            let (d, t) = simulate_barrier_effects(&c)?;
            (d, t, serde_json::to_value(&c).expect("config serializes"))
        }
        other => return Err(CliError::Validation(format!("unknown generator '{other}' (expected latent or barrier)"))),
    };
    let prov = Provenance::new(seed, json!({ "command": "simulate", "generator": model, "simulation": echo }), Some(data.fingerprint()));
    let (csv, meta, truth_path) = dataset_paths(out);
    save_dataset(&data, &csv, &meta, Some(prov.clone()))?;
    truth.provenance = Some(prov);
    save_truth(&truth, &truth_path)?;
    eprintln!("wrote {}, {} and {}", csv.display(), meta.display(), truth_path.display());
    Ok(())
}

fn rescale_spec(cfg: &RunConfig, data: &ArdDataset, kind: ModelKind) -> CliResult<Option<RescaleSpec>> {
    if !kind.is_rescalable() {
        return Ok(None);
    }
    let policy = cfg.rescale()?;
    match policy.as_str() {
        "none" => Ok(None),
        "all" => Ok(Some(RescaleSpec::from_dataset(data)?)),
        names => {
            let idx = names
                .split(',')
                .map(|n| {
                    let n = n.trim();
                    data.subpops()
                        .iter()
                        .position(|s| s.name == n)
                        .ok_or_else(|| CliError::Validation(format!("rescale names unknown subpopulation '{n}'")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(Some(RescaleSpec::from_dataset_subset(data, &idx)?))
        }
    }
}

fn parse_kind(s: &str) -> CliResult<ModelKind> {
    Ok(s.parse::<ModelKind>()?)
}

fn fit(cfg: &RunConfig, seed: u64, model: &str, data_prefix: &Path, out: &Path) -> CliResult<()> {
    cfg.check_applicable("fit", &[sampler_keys(), model_keys()])?;
    let kind = parse_kind(model)?;
    let data = load_data(data_prefix)?;
    let sampler = cfg.sampler(seed)?;
    let spec = ModelSpec::with_options(kind, cfg.model_options()?);
    let rescale = rescale_spec(cfg, &data, kind)?;
    let fingerprint = data.fingerprint();
    let echo = json!({
        "command": "fit",
        "model": kind.code(),
        "data": data_prefix,
        "sampler": sampler,
        "model_options": spec.options,
        "rescale": rescale,
        "settings": cfg.echo(),
    });
    let extra = json!({ "provenance": provenance(seed, echo, Some(fingerprint.clone())) });
    let model = ArdModel::new(spec, &data, None, rescale)?;
    let post = run_chains(&model, &sampler, kind.code(), &fingerprint, extra)?;
    post.save(out)?;
    eprintln!("wrote posterior with {} draws of {} parameters to {}", post.total_draws(), post.dim(), out.display());
    Ok(())
}

fn diagnose_cmd(posterior: &Path, trace: &[String], trace_out: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let post = load_posterior(posterior)?;
    let report = diagnose(&post)?;
    let prov = posterior_provenance(&post);
    if !trace.is_empty() {
        let path = trace_out.map(Path::to_path_buf).unwrap_or_else(|| posterior.join("trace.csv"));
        trace_export(&post, trace, &path)?;
        let companion = PathBuf::from(format!("{}.json", path.display()));
        write_json(&companion, &json!({ "file": path.file_name().map(|f| f.to_string_lossy()), "provenance": prov }))?;
    }
    emit(out, &json!({ "provenance": prov, "diagnostics": report }))
}

fn ppc_cmd(cfg: &RunConfig, seed: u64, posterior: &Path, data: &Path, m: Option<Vec<u32>>, out: Option<&Path>) -> CliResult<()> {
    let post = load_posterior(posterior)?;
    let data = load_data(data)?;
    let m_set = m.unwrap_or_else(|| DEFAULT_M_SET.to_vec());
    let max_draws = match cfg.get("ppc_draws") {
        None => None,
        Some(_) => Some(cfg.usize_or("ppc_draws", 0)?),
    };
    let report = ppc(&post, &data, &m_set, seed, max_draws)?;
    let prov = provenance(
        seed,
        json!({ "command": "ppc", "m": m_set, "ppc_draws": max_draws, "posterior": posterior_provenance(&post) }),
        Some(data.fingerprint()),
    );
    let value = json!({ "provenance": prov, "ppc": report });
    if let Some(prefix) = out {
        let mut csv = String::from("subpop,name,m,observed,lower,upper,contained\n");
        for c in &report.cells {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.subpop + 1,
                csv_field(&c.name),
                c.m,
                c.observed,
                c.lower,
                c.upper,
                c.contained
            ));
        }
        write_csv(&with_suffix(prefix, ".csv"), &csv, &prov)?;
        write_json(&with_suffix(prefix, ".json"), &value)
    } else {
        emit(None, &value)
    }
}

fn report_cmd(posterior: &Path, data: &Path, truth: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let post = load_posterior(posterior)?;
    let data = load_data(data)?;
    let truth = truth.map(load_truth).transpose()?;
    let report = subpop_recovery(&post, &data, truth.as_ref())?;
    let prov = posterior_provenance(&post);
    let value = json!({ "provenance": prov, "recovery": report });
    if let Some(prefix) = out {
        let mut subpops = String::from("subpop,name,known,q05,q25,median,q75,q95,truth,in50,in90\n");
        for s in report.subpops.iter() {
            subpops.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                s.subpop + 1,
                csv_field(&s.name),
                s.known,
                s.q05,
                s.q25,
                s.median,
                s.q75,
                s.q95,
                opt(s.truth),
                opt(s.in50),
                opt(s.in90)
            ));
        }
        write_csv(&with_suffix(prefix, ".subpops.csv"), &subpops, &prov)?;
        let mut degrees = String::from("ego,posterior_mean,truth\n");
        for (i, m) in report.degrees.per_ego_mean.iter().enumerate() {
            let t = truth.as_ref().map(|t| t.degrees[i]);
            degrees.push_str(&format!("{},{},{}\n", i + 1, m, opt(t)));
        }
        write_csv(&with_suffix(prefix, ".degrees.csv"), &degrees, &prov)?;
        write_json(&with_suffix(prefix, ".json"), &value)
    } else {
        emit(None, &value)
    }
}

fn cv_cmd(cfg: &RunConfig, seed: u64, models: &[String], data_prefix: &Path, folds: usize, out: Option<&Path>) -> CliResult<()> {
    cfg.check_applicable("cv", &[sampler_keys(), model_keys()])?;
    let kinds = models.iter().map(|m| parse_kind(m)).collect::<CliResult<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(CliError::Validation("no models given".into()));
    }
    let data = load_data(data_prefix)?;
    let sampler = cfg.sampler(seed)?;
    let options = cfg.model_options()?;
    let plan = make_folds(data.n(), data.k(), folds, derive_seed(seed, &[0xF0]))?;
    let mut entries = Vec::new();
    let mut per_model = Vec::new();
    for &kind in &kinds {
        let rescale = rescale_spec(cfg, &data, kind)?;
        let res = cv_elpd(&ModelSpec::with_options(kind, options.clone()), &data, &plan, rescale.as_ref(), &sampler)?;
        for f in res.folds.iter().filter_map(|f| f.warning.as_ref()) {
            eprintln!("warning: {}: {f}", kind.code());
        }
        per_model.push(json!({ "model": kind.code(), "elpd": res.elpd, "folds": res.folds }));
        entries.push((kind.code().to_string(), res.pointwise));
    }
    let comparison = compare_elpd(&entries)?;
    let echo = json!({
        "command": "cv",
        "models": kinds.iter().map(|k| k.code()).collect::<Vec<_>>(),
        "folds": folds,
        "fold_seed": plan.seed,
        "sampler": sampler,
        "model_options": options,
        "settings": cfg.echo(),
    });
    let value = json!({
        "provenance": provenance(seed, echo, Some(data.fingerprint())),
        "comparison": comparison,
        "models": per_model,
    });
    emit(out, &value)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}{suffix}", prefix.display()))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
