//! Command-line surface. Commands return their stdout text; `main` maps
//! [`CliError`] onto exit codes (2 input/config, 3 backend).

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::backend::{
    playground_check, Backend, BackendDescriptor, MockBackend, RemoteBackend, ResponseCache, DEFAULT_MASS_THRESHOLD,
    DEFAULT_SAMPLE_SIZE, DEFAULT_TOP_K,
};
use crate::error::PipelineError;
use crate::fixture;
use crate::infotheory::{pearson_r, InfoError};
use crate::report::{
    load_dataset, ranked_summary, scatter_csv, sweep_csv, EstimationReport, FormatError, TemplateConfig,
};
use crate::selection::{
    baseline_sweep, evaluate_templates, rank_by_mi, subsample_indices, transfer, SelectBy, SelectionError,
};
use crate::types::RunConfig;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl ToString) -> Self {
        Self { code: EXIT_INPUT, message: message.to_string() }
    }

    pub fn backend(message: impl ToString) -> Self {
        Self { code: EXIT_BACKEND, message: message.to_string() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        Self::input(e)
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Info(InfoError::DegenerateVariance) => Self::input("DegenerateVariance: accuracy or MI column is constant"),
            SelectionError::DegenerateSpread => Self::input("DegenerateSpread: max accuracy equals mean accuracy"),
            other => Self::input(other),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_backend() {
            Self::backend(e)
        } else {
            Self::input(e)
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "promptsel", version, about = "Rank prompt templates by mutual information, without labels")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Seed for instance subsampling and partitions.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Instance budget per template.
    #[arg(long, global = true, default_value_t = 500)]
    pub n: usize,
    /// Log-probability depth requested from the backend.
    #[arg(long = "top-k", global = true, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    /// Response cache file (JSON lines) for the remote backend.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Backend / model identifier.
    #[arg(long, global = true, default_value = "mock")]
    pub backend: String,
    /// Completion endpoint URL; selects the remote backend.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Prompt -> logprobs table (JSON lines); selects the mock backend.
    #[arg(long = "mock-table", global = true)]
    pub mock_table: Option<PathBuf>,
    /// Environment variable holding the bearer token for the endpoint.
    #[arg(long = "api-key-env", global = true)]
    pub api_key_env: Option<String>,
    #[arg(long = "max-parallel", global = true, default_value_t = 4)]
    pub max_parallel: usize,
    #[arg(long = "timeout-ms", global = true, default_value_t = 60_000)]
    pub timeout_ms: u64,
    #[arg(long = "max-retries", global = true, default_value_t = 5)]
    pub max_retries: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mi,
    Oracle,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ReportSource {
    /// Estimation report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Use a bundled published table instead of a report.
    #[arg(long)]
    pub fixture: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate MI for every template and write a report.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ranked text summary; defaults to the report path with `.txt`.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        ensemble: usize,
    },
    /// Pick the highest-MI template (and optionally the top-p ensemble).
    Select {
        #[command(flatten)]
        source: ReportSource,
        #[arg(long)]
        ensemble: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson correlation between MI and accuracy, plus scatter data.
    Correlate {
        #[command(flatten)]
        source: ReportSource,
        #[arg(long)]
        scatter: Option<PathBuf>,
    },
    /// Select on one report, score on another, normalized to [mean, max].
    Transfer {
        #[arg(long, required_unless_present = "selection_fixture")]
        selection: Option<PathBuf>,
        #[arg(long = "selection-fixture", conflicts_with = "selection")]
        selection_fixture: Option<String>,
        #[arg(long, required_unless_present = "inference_fixture")]
        inference: Option<PathBuf>,
        #[arg(long = "inference-fixture", conflicts_with = "inference")]
        inference_fixture: Option<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::Mi)]
        mode: ModeArg,
    },
    /// Summarize the bundled published tables.
    ReplayFixture {
        /// Restrict to these datasets (repeatable).
        #[arg(long)]
        dataset: Vec<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Labeled-subset baseline vs. MI selection over random partitions.
    BaselineSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated training sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32, 64, 128, 256])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        partitions: usize,
        #[arg(long)]
        out: PathBuf,
        /// Per-partition picks and scores.
        #[arg(long)]
        trials: Option<PathBuf>,
    },
    /// Check that templates put mass on the expected answer tokens.
    Playground {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_SIZE)]
        sample: usize,
        #[arg(long, default_value_t = DEFAULT_MASS_THRESHOLD)]
        threshold: f64,
    },
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable output");
    s.push('\n');
    s
}

pub fn build_backend(g: &GlobalOpts) -> Result<Box<dyn Backend>, CliError> {
    match (&g.mock_table, &g.endpoint) {
        (Some(_), Some(_)) => Err(CliError::input("pass either --mock-table or --endpoint, not both")),
        (Some(table), None) => {
            let mock = MockBackend::from_jsonl(&g.backend, table).map_err(CliError::input)?;
            Ok(Box::new(mock.with_top_k(g.top_k)))
        }
        (None, Some(endpoint)) => {
            let desc = BackendDescriptor {
                top_k: g.top_k,
                request_timeout: Duration::from_millis(g.timeout_ms),
                max_parallel: g.max_parallel,
                api_key_env: g.api_key_env.clone(),
                max_retries: g.max_retries,
                ..BackendDescriptor::remote(&g.backend, endpoint)
            };
            let cache = match &g.cache {
                Some(p) => ResponseCache::open(p).map_err(CliError::input)?,
                None => ResponseCache::in_memory(),
            };
            let remote = RemoteBackend::new(desc, Arc::new(cache)).map_err(CliError::input)?;
            Ok(Box::new(remote))
        }
        (None, None) => Err(CliError::input("no backend: pass --mock-table or --endpoint")),
    }
}

fn load_report(source: &ReportSource) -> Result<EstimationReport, CliError> {
    match (&source.report, &source.fixture) {
        (Some(path), _) => Ok(EstimationReport::load(path)?),
        (None, Some(name)) => fixture_report(name),
        (None, None) => Err(CliError::input("pass --report or --fixture")),
    }
}

fn fixture_report(name: &str) -> Result<EstimationReport, CliError> {
    fixture::dataset(name)
        .map(EstimationReport::from_fixture)
        .ok_or_else(|| CliError::input(format!("unknown fixture dataset {name:?}")))
}

pub fn run(cli: Cli) -> Result<String, CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Estimate { config, dataset, out, summary, ensemble } => {
            cmd_estimate(g, &config, &dataset, &out, summary.as_deref(), ensemble)
        }
        Command::Select { source, ensemble, out } => cmd_select(&load_report(&source)?, ensemble, out.as_deref()),
        Command::Correlate { source, scatter } => cmd_correlate(&load_report(&source)?, scatter.as_deref()),
        Command::Transfer { selection, selection_fixture, inference, inference_fixture, mode } => {
            let load = |path: Option<PathBuf>, fx: Option<String>| match (path, fx) {
                (Some(p), _) => Ok(EstimationReport::load(&p)?),
                (None, Some(name)) => fixture_report(&name),
                (None, None) => Err(CliError::input("missing report")),
            };
            cmd_transfer(&load(selection, selection_fixture)?, &load(inference, inference_fixture)?, mode)
        }
        Command::ReplayFixture { dataset, json } => cmd_replay_fixture(&dataset, json.as_deref()),
        Command::BaselineSweep { config, dataset, sizes, partitions, out, trials } => {
            cmd_baseline_sweep(g, &config, &dataset, &sizes, partitions, &out, trials.as_deref())
        }
        Command::Playground { config, dataset, sample, threshold } => {
            cmd_playground(g, &config, &dataset, sample, threshold)
        }
    }
}

fn load_inputs(config: &Path, dataset: &Path) -> Result<(TemplateConfig, Vec<crate::InstanceRecord>), CliError> {
    let cfg = TemplateConfig::load(config)?;
    let data = load_dataset(dataset)?;
    Ok((cfg, data))
}

pub fn cmd_estimate(
    g: &GlobalOpts,
    config: &Path,
    dataset: &Path,
    out: &Path,
    summary: Option<&Path>,
    ensemble: usize,
) -> Result<String, CliError> {
    let (tc, data) = load_inputs(config, dataset)?;
    let backend = build_backend(g)?;
    if tc.space.mode() == crate::LabelMode::Closed && g.top_k < tc.space.len() {
        eprintln!("warning: --top-k {} is below the {} labels", g.top_k, tc.space.len());
    }
    let run_cfg = RunConfig {
        templates: tc.templates,
        n: g.n,
        seed: g.seed,
        backend_id: backend.id().to_string(),
        top_k: g.top_k,
        ensemble_p: ensemble,
    };
    let run = evaluate_templates(&run_cfg, &tc.space, &data, backend.as_ref())?;
    let report = EstimationReport::new(&run_cfg.backend_id, g.top_k, g.seed, g.n, tc.space.mode(), &run.stats);
    let ranked = rank_by_mi(&run.stats)?;
    let mut text = ranked_summary(&report, &ranked);
    text.push_str(&format!("selected: {}\n", ranked.head()));
    if ensemble > 1 {
        text.push_str(&format!("ensemble top-{ensemble}: {:?}\n", ranked.top(ensemble)));
    }
    write(out, &report.to_json())?;
    let summary_path = summary.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("txt"));
    write(&summary_path, &text)?;
    Ok(text)
}

#[derive(Debug, Serialize)]
struct Selection {
    selected: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    ensemble: Option<Vec<u32>>,
}

pub fn cmd_select(report: &EstimationReport, ensemble: Option<usize>, out: Option<&Path>) -> Result<String, CliError> {
    let ranked = rank_by_mi(&report.stats())?;
    let k = ranked.order.len();
    let ensemble = match ensemble {
        Some(p) if p == 0 || p > k => {
            return Err(CliError::input(format!("--ensemble {p} is outside 1..={k}")));
        }
        Some(p) => Some(ranked.top(p).to_vec()),
        None => None,
    };
    let text = json(&Selection { selected: ranked.head(), ensemble });
    if let Some(out) = out {
        write(out, &text)?;
    }
    Ok(text)
}

pub fn cmd_correlate(report: &EstimationReport, scatter: Option<&Path>) -> Result<String, CliError> {
    let pairs: Vec<(f64, f64)> = report
        .templates
        .iter()
        .map(|r| {
            r.stats
                .accuracy
                .map(|a| (r.stats.mi, a))
                .ok_or_else(|| CliError::input(format!("template {} has no accuracy", r.stats.template_id)))
        })
        .collect::<Result<_, _>>()?;
    let (mi, acc): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let r = pearson_r(&mi, &acc).map_err(SelectionError::from)?;
    if let Some(path) = scatter {
        write(path, &scatter_csv(&pairs))?;
    }
    Ok(format!("pearson_r {r:.6}\n"))
}

pub fn cmd_transfer(selection: &EstimationReport, inference: &EstimationReport, mode: ModeArg) -> Result<String, CliError> {
    let by = match mode {
        ModeArg::Mi => SelectBy::Mi,
        ModeArg::Oracle => SelectBy::Oracle,
    };
    let cell = transfer(&selection.backend_id, &selection.stats(), &inference.backend_id, &inference.stats(), by)?;
    Ok(json(&cell))
}

pub fn cmd_replay_fixture(only: &[String], json_out: Option<&Path>) -> Result<String, CliError> {
    let sets: Vec<fixture::Dataset> = if only.is_empty() {
        fixture::datasets().to_vec()
    } else {
        only.iter()
            .map(|n| fixture::dataset(n).copied().ok_or_else(|| CliError::input(format!("unknown fixture dataset {n:?}"))))
            .collect::<Result<_, _>>()?
    };
    let summary = fixture::replay(&sets)?;
    let mut text = format!(
        "{:<11} {:>6} {:>6} {:>6} {:>6} {:>4} {:>8} {:>6}\n",
        "dataset", "worst", "mean", "median", "best", "pick", "pick_acc", "score"
    );
    for d in &summary.datasets {
        text.push_str(&format!(
            "{:<11} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>4} {:>8.3} {:>6.3}{}\n",
            d.dataset,
            d.worst,
            d.mean,
            d.median,
            d.best,
            d.selected_template,
            d.selected_acc,
            d.normalized_score,
            if d.selected_is_best { "  best" } else { "" }
        ));
    }
    text.push_str(&format!("mean normalized score {:.4}\n", summary.mean_normalized_score));
    text.push_str(&format!("best template selected on {} of {} datasets\n", summary.best_count, summary.datasets.len()));
    if let Some(path) = json_out {
        write(path, &json(&summary))?;
    }
    Ok(text)
}

pub fn cmd_baseline_sweep(
    g: &GlobalOpts,
    config: &Path,
    dataset: &Path,
    sizes: &[usize],
    partitions: usize,
    out: &Path,
    trials_out: Option<&Path>,
) -> Result<String, CliError> {
    let (tc, data) = load_inputs(config, dataset)?;
    if let Some(r) = data.iter().find(|r| r.gold.is_none()) {
        return Err(CliError::input(format!("{}: instance {} has no gold label", dataset.display(), r.id)));
    }
    if let Some(&n) = sizes.iter().find(|&&n| n >= data.len()) {
        return Err(CliError::input(format!(
            "training size {n} leaves no test instances ({} in {})",
            data.len(),
            dataset.display()
        )));
    }
    let backend = build_backend(g)?;
    let run_cfg = RunConfig {
        templates: tc.templates,
        n: data.len(),
        seed: g.seed,
        backend_id: backend.id().to_string(),
        top_k: g.top_k,
        ensemble_p: 1,
    };
    let run = evaluate_templates(&run_cfg, &tc.space, &data, backend.as_ref())?;
    let (points, trials) = baseline_sweep(&run, sizes, partitions, g.seed)?;
    let curve = sweep_csv(&points);
    write(out, &curve)?;
    if let Some(path) = trials_out {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &trials {
            w.serialize(t).map_err(CliError::input)?;
        }
        write(path, &String::from_utf8(w.into_inner().map_err(CliError::input)?).expect("utf-8"))?;
    }
    Ok(curve)
}

pub fn cmd_playground(
    g: &GlobalOpts,
    config: &Path,
    dataset: &Path,
    sample: usize,
    threshold: f64,
) -> Result<String, CliError> {
    let (tc, data) = load_inputs(config, dataset)?;
    let backend = build_backend(g)?;
    let picked: Vec<_> = subsample_indices(data.len(), sample, g.seed).into_iter().map(|i| data[i].clone()).collect();
    let reports = playground_check(backend.as_ref(), &tc.templates, &picked, &tc.space, threshold)?;
    let mut text = format!("{:>4}  {:>7}  {:>11}  {}\n", "id", "success", "mean_mass", "status");
    for r in &reports {
        text.push_str(&format!(
            "{:>4}  {:>7.3}  {:>11.4}  {}\n",
            r.template_id,
            r.success_rate,
            r.mean_matched_mass,
            if r.passed { "pass" } else { "FAIL: revise or replace" }
        ));
    }
    Ok(text)
}
