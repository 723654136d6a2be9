//! On-disk formats: template config (TOML), datasets (JSON lines), estimation
//! reports (JSON) and plot data (CSV).

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collapse::{validate_collapsing_setup, ConflictKind};
use crate::fixture::Dataset;
use crate::selection::{RankedTemplates, SweepPoint};
use crate::types::{ConfigError, InstanceRecord, LabelMode, LabelSpace, TemplateSpec, TemplateStats};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{path}: template {template_id}: AmbiguousToken: {detail}")]
    Ambiguous { path: String, template_id: u32, detail: String },
}

fn read(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io { path: path.display().to_string(), source })
}

fn parse_err(path: &Path, message: impl ToString) -> FormatError {
    FormatError::Parse { path: path.display().to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
enum CollapseSpec {
    Keyword(String),
    Map(BTreeMap<String, Vec<String>>),
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct LabelsBlock {
    mode: LabelMode,
    #[serde(default)]
    values: Vec<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TemplateBlock {
    id: u32,
    scaffold: String,
    #[serde(default)]
    collapse: Option<CollapseSpec>,
    #[serde(default)]
    few_shot: Option<String>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    labels: LabelsBlock,
    #[serde(rename = "templates")]
    templates: Vec<TemplateBlock>,
}

/// A parsed template configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateConfig {
    pub space: LabelSpace,
    pub templates: Vec<TemplateSpec>,
}

impl TemplateConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, FormatError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| parse_err(path, e))?;
        let cfg_err = |source| FormatError::Config { path: path.display().to_string(), source };
        let space = match file.labels.mode {
            LabelMode::Closed => LabelSpace::closed(file.labels.values).map_err(cfg_err)?,
            LabelMode::Open if file.labels.values.is_empty() => LabelSpace::open(),
            LabelMode::Open => return Err(cfg_err(ConfigError::OpenWithLabels)),
        };
        if file.templates.is_empty() {
            return Err(cfg_err(ConfigError::EmptyTemplates));
        }
        let mut templates = Vec::with_capacity(file.templates.len());
        for (expected, block) in (1u32..).zip(file.templates) {
            if block.id != expected {
                return Err(cfg_err(ConfigError::Template {
                    id: block.id,
                    reason: format!("template ids must run 1, 2, ...; expected {expected}"),
                }));
            }
            let collapsing_map = match block.collapse {
                None => None,
                Some(CollapseSpec::Keyword(k)) if k.eq_ignore_ascii_case("none") => None,
                Some(CollapseSpec::Keyword(k)) => {
                    return Err(parse_err(path, format!("template {}: unknown collapse keyword {k:?}", block.id)))
                }
                Some(CollapseSpec::Map(m)) => Some(m),
            };
            templates.push(TemplateSpec {
                id: block.id,
                scaffold: block.scaffold,
                collapsing_map,
                few_shot_block: block.few_shot,
            });
        }
        if space.mode() == LabelMode::Closed {
            for check in validate_collapsing_setup(&templates, &space) {
                if let Some(c) = check.conflicts.first() {
                    let what = match c.reason {
                        ConflictKind::SameVariant => "share the answer",
                        ConflictKind::PrefixOf => "have prefix-overlapping answers",
                        ConflictKind::SharedFirstWord => "share the first word of",
                    };
                    return Err(FormatError::Ambiguous {
                        path: path.display().to_string(),
                        template_id: check.template_id,
                        detail: format!(
                            "labels {:?} and {:?} {what} {:?} / {:?}",
                            c.first_label, c.second_label, c.first_variant, c.second_variant
                        ),
                    });
                }
            }
        }
        Ok(Self { space, templates })
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&read(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        let file = ConfigFile {
            labels: LabelsBlock { mode: self.space.mode(), values: self.space.labels().to_vec() },
            templates: self
                .templates
                .iter()
                .map(|t| TemplateBlock {
                    id: t.id,
                    scaffold: t.scaffold.clone(),
                    collapse: Some(match &t.collapsing_map {
                        Some(m) => CollapseSpec::Map(m.clone()),
                        None => CollapseSpec::Keyword("none".into()),
                    }),
                    few_shot: t.few_shot_block.clone(),
                })
                .collect(),
        };
        toml::to_string(&file).expect("config serializes")
    }
}

#[derive(Debug, Deserialize)]
struct DatasetLine {
    #[serde(default)]
    id: Option<serde_json::Value>,
    fields: BTreeMap<String, String>,
    #[serde(default)]
    gold: Option<String>,
}

/// JSON lines, one `{"id", "fields": {...}, "gold"}` object per line. A
/// missing id defaults to the 0-based line index among records.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<InstanceRecord>, FormatError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetLine =
            serde_json::from_str(line).map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
        let id = match rec.id {
            None => out.len().to_string(),
            Some(serde_json::Value::String(s)) => s,
            Some(v) => v.to_string(),
        };
        if !ids.insert(id.clone()) {
            return Err(parse_err(path, format!("line {}: duplicate instance id {id:?}", lineno + 1)));
        }
        out.push(InstanceRecord { id, fields: rec.fields, gold: rec.gold });
    }
    if out.is_empty() {
        return Err(parse_err(path, "dataset has no records"));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<InstanceRecord>, FormatError> {
    parse_dataset(&read(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub stats: TemplateStats,
    #[serde(default)]
    pub failed_playground: bool,
}

/// Machine-readable result of one estimation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub backend_id: String,
    pub top_k: usize,
    pub seed: u64,
    pub n_requested: usize,
    pub mode: LabelMode,
    pub templates: Vec<ReportRow>,
}

impl EstimationReport {
    pub fn new(backend_id: &str, top_k: usize, seed: u64, n_requested: usize, mode: LabelMode, stats: &[TemplateStats]) -> Self {
        Self {
            backend_id: backend_id.to_string(),
            top_k,
            seed,
            n_requested,
            mode,
            templates: stats
                .iter()
                .map(|s| ReportRow { stats: s.clone(), failed_playground: s.failed_playground() })
                .collect(),
        }
    }

    /// A published fixture table dressed as a report (entropies unknown:
    /// marginal = MI, conditional = 0).
    pub fn from_fixture(d: &Dataset) -> Self {
        Self::new(&format!("published:{}", d.name), 0, 0, 0, LabelMode::Closed, &d.stats())
    }

    pub fn stats(&self) -> Vec<TemplateStats> {
        self.templates.iter().map(|r| r.stats.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, FormatError> {
        let report: Self = serde_json::from_str(text).map_err(|e| parse_err(path, e))?;
        if report.templates.is_empty() {
            return Err(parse_err(path, "report has no template rows"));
        }
        let mut ids = HashSet::new();
        for row in &report.templates {
            let s = &row.stats;
            if !ids.insert(s.template_id) {
                return Err(parse_err(path, format!("duplicate template id {}", s.template_id)));
            }
            if !s.mi.is_finite() || s.mi < 0.0 {
                return Err(parse_err(path, format!("template {}: mi must be a finite value >= 0", s.template_id)));
            }
            if let Some(a) = s.accuracy {
                if !(0.0..=1.0).contains(&a) {
                    return Err(parse_err(path, format!("template {}: accuracy outside [0, 1]", s.template_id)));
                }
            }
        }
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&read(path)?, path)
    }
}

/// Human-readable ranking, best template first.
pub fn ranked_summary(report: &EstimationReport, ranked: &RankedTemplates) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "backend {}  top_k {}  seed {}  n {}  mode {:?}",
        report.backend_id, report.top_k, report.seed, report.n_requested, report.mode
    );
    let _ = writeln!(out, "{:>4}  {:>6}  {:>9}  {:>9}  {:>9}  {:>5}  {:>7}  {:>8}", "rank", "id", "mi", "H(Y)", "H(Y|X)", "n", "skipped", "accuracy");
    for (rank, id) in ranked.order.iter().enumerate() {
        let s = ranked.stats_for(*id).expect("ranked ids come from stats");
        let acc = s.accuracy.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        let flag = if s.failed_playground() { "  failed playground" } else { "" };
        let _ = writeln!(
            out,
            "{:>4}  {:>6}  {:>9.5}  {:>9.5}  {:>9.5}  {:>5}  {:>7}  {:>8}{flag}",
            rank + 1,
            s.template_id,
            s.mi,
            s.marginal_entropy,
            s.conditional_entropy,
            s.n,
            s.skipped,
            acc
        );
    }
    out
}

pub fn scatter_csv(pairs: &[(f64, f64)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mi", "accuracy"]).expect("in-memory write");
    for (mi, acc) in pairs {
        w.write_record([mi.to_string(), acc.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "partitions", "baseline_mean", "baseline_std", "mi_mean", "mi_std"])
        .expect("in-memory write");
    for p in points {
        w.write_record([
            p.n.to_string(),
            p.partitions.to_string(),
            p.baseline_mean.to_string(),
            p.baseline_std.to_string(),
            p.mi_mean.to_string(),
            p.mi_std.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
}
