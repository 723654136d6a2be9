//! Template ranking, ensembling, accuracy scoring and the estimation run that
//! ties backend, collapse and entropy reductions together.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{query_logprobs, render_prompt, Backend};
use crate::collapse::{collapse_detailed, normalize_token, CollapseError};
use crate::error::PipelineError;
use crate::infotheory::{align_to_union, decompose, mean_distribution, InfoError};
use crate::types::{
    validate_run_config, InstanceRecord, LabelDistribution, LabelMode, LabelSpace, RunConfig, TemplateStats,
};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("no templates to select from")]
    Empty,
    #[error("ensemble size {p} is outside 1..={k}")]
    InvalidEnsembleSize { p: usize, k: usize },
    #[error("template {0} has no distributions")]
    UnknownTemplate(u32),
    #[error("template {id} has {got} instances, expected {expected}")]
    MismatchedInstanceCounts { id: u32, got: usize, expected: usize },
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("max accuracy equals mean accuracy; normalization is undefined")]
    DegenerateSpread,
    #[error("template {0} has no accuracy")]
    MissingAccuracy(u32),
    #[error("reports cover different template ids")]
    IdMismatch,
    #[error("training size {n} leaves no test instances out of {len}")]
    SweepTooLarge { n: usize, len: usize },
    #[error(transparent)]
    Info(#[from] InfoError),
}

/// Templates ordered by MI, highest first; equal MI goes to the lower id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedTemplates {
    pub order: Vec<u32>,
    pub stats: Vec<TemplateStats>,
}

impl RankedTemplates {
    pub fn head(&self) -> u32 {
        self.order[0]
    }

    pub fn top(&self, p: usize) -> &[u32] {
        &self.order[..p.min(self.order.len())]
    }

    pub fn stats_for(&self, id: u32) -> Option<&TemplateStats> {
        self.stats.iter().find(|s| s.template_id == id)
    }
}

pub fn rank_by_mi(stats: &[TemplateStats]) -> Result<RankedTemplates, SelectionError> {
    if stats.is_empty() {
        return Err(SelectionError::Empty);
    }
    let mut sorted = stats.to_vec();
    sorted.sort_by(|a, b| b.mi.total_cmp(&a.mi).then(a.template_id.cmp(&b.template_id)));
    Ok(RankedTemplates { order: sorted.iter().map(|s| s.template_id).collect(), stats: stats.to_vec() })
}

/// Per instance, the uniform average of the top-`p` templates' distributions.
pub fn ensemble_top_p(
    ranked: &RankedTemplates,
    p: usize,
    per_instance: &BTreeMap<u32, Vec<LabelDistribution>>,
) -> Result<Vec<LabelDistribution>, SelectionError> {
    let k = ranked.order.len();
    if p == 0 || p > k {
        return Err(SelectionError::InvalidEnsembleSize { p, k });
    }
    ensemble_of(ranked.top(p), per_instance)
}

/// Uniform average over an explicit set of templates.
pub fn ensemble_of(
    ids: &[u32],
    per_instance: &BTreeMap<u32, Vec<LabelDistribution>>,
) -> Result<Vec<LabelDistribution>, SelectionError> {
    let columns: Vec<&Vec<LabelDistribution>> = ids
        .iter()
        .map(|id| per_instance.get(id).ok_or(SelectionError::UnknownTemplate(*id)))
        .collect::<Result<_, _>>()?;
    let expected = columns.first().map_or(0, |c| c.len());
    for (id, col) in ids.iter().zip(&columns) {
        if col.len() != expected {
            return Err(SelectionError::MismatchedInstanceCounts { id: *id, got: col.len(), expected });
        }
    }
    (0..expected)
        .map(|i| {
            let row: Vec<LabelDistribution> = columns.iter().map(|c| c[i].clone()).collect();
            Ok(mean_distribution(&align_to_union(&row)?)?)
        })
        .collect()
}

/// Whether the argmax of `pred` answers `gold`. Open mode compares the
/// argmax token as a prefix of the normalized gold answer.
pub fn is_correct(pred: &LabelDistribution, gold: &str, mode: LabelMode) -> bool {
    let top = pred.argmax_label();
    match mode {
        LabelMode::Closed => top == gold,
        LabelMode::Open => !top.is_empty() && normalize_token(gold).starts_with(top),
    }
}

pub fn accuracy(preds: &[LabelDistribution], golds: &[String], mode: LabelMode) -> Result<f64, SelectionError> {
    if preds.len() != golds.len() {
        return Err(SelectionError::LengthMismatch(preds.len(), golds.len()));
    }
    if preds.is_empty() {
        return Err(SelectionError::Empty);
    }
    let hits = preds.iter().zip(golds).filter(|(p, g)| is_correct(p, g, mode)).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Index of the highest value; ties go to the earliest entry.
fn argmax_first(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Labeled baseline: the template with the best accuracy on a small labeled
/// subset, ties to the lowest id.
pub fn baseline_select_by_train_accuracy(accs: &[(u32, f64)]) -> Result<u32, SelectionError> {
    let mut sorted = accs.to_vec();
    sorted.sort_by_key(|(id, _)| *id);
    argmax_first(sorted.iter().map(|(_, a)| *a))
        .map(|i| sorted[i].0)
        .ok_or(SelectionError::Empty)
}

/// Maps the template-set mean accuracy to 0 and the best accuracy to 1.
pub fn normalize_transfer(selected_acc: f64, accs: &[f64]) -> Result<f64, SelectionError> {
    if accs.is_empty() {
        return Err(SelectionError::Empty);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > mean) {
        return Err(SelectionError::DegenerateSpread);
    }
    Ok((selected_acc - mean) / (max - mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectBy {
    /// Highest mutual information.
    Mi,
    /// Highest accuracy on the selection report (upper bound).
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferCell {
    pub selection_model: String,
    pub inference_model: String,
    pub selected_template: u32,
    pub normalized_score: f64,
}

fn accuracies(stats: &[TemplateStats]) -> Result<Vec<(u32, f64)>, SelectionError> {
    stats
        .iter()
        .map(|s| s.accuracy.map(|a| (s.template_id, a)).ok_or(SelectionError::MissingAccuracy(s.template_id)))
        .collect()
}

pub fn select_template(stats: &[TemplateStats], by: SelectBy) -> Result<u32, SelectionError> {
    match by {
        SelectBy::Mi => Ok(rank_by_mi(stats)?.head()),
        SelectBy::Oracle => baseline_select_by_train_accuracy(&accuracies(stats)?),
    }
}

/// Picks a template on one model's report and scores it on another's.
pub fn transfer(
    selection_model: &str,
    selection: &[TemplateStats],
    inference_model: &str,
    inference: &[TemplateStats],
    by: SelectBy,
) -> Result<TransferCell, SelectionError> {
    let mut a: Vec<u32> = selection.iter().map(|s| s.template_id).collect();
    let mut b: Vec<u32> = inference.iter().map(|s| s.template_id).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(SelectionError::IdMismatch);
    }
    let selected = select_template(selection, by)?;
    let inf = accuracies(inference)?;
    let selected_acc = inf.iter().find(|(id, _)| *id == selected).map(|(_, a)| *a).expect("ids match");
    let accs: Vec<f64> = inf.iter().map(|(_, a)| *a).collect();
    Ok(TransferCell {
        selection_model: selection_model.to_string(),
        inference_model: inference_model.to_string(),
        selected_template: selected,
        normalized_score: normalize_transfer(selected_acc, &accs)?,
    })
}

/// Seeded shuffle of `0..len`, truncated to `n`. For a fixed seed a smaller
/// `n` yields a prefix of a larger one.
pub fn subsample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx
}

/// Everything an estimation run observed: per template, one collapsed
/// distribution per sampled instance (`None` when the collapse found no
/// label mass).
#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub mode: LabelMode,
    pub instance_ids: Vec<String>,
    pub golds: Vec<Option<String>>,
    pub distributions: BTreeMap<u32, Vec<Option<LabelDistribution>>>,
    pub stats: Vec<TemplateStats>,
}

impl EstimationRun {
    /// Distributions of instances that no template skipped, keyed by template.
    pub fn complete_rows(&self) -> (Vec<usize>, BTreeMap<u32, Vec<LabelDistribution>>) {
        let n = self.instance_ids.len();
        let keep: Vec<usize> =
            (0..n).filter(|&i| self.distributions.values().all(|col| col[i].is_some())).collect();
        let table = self
            .distributions
            .iter()
            .map(|(id, col)| (*id, keep.iter().map(|&i| col[i].clone().expect("kept rows are complete")).collect()))
            .collect();
        (keep, table)
    }
}

/// Stats over a subset of instance positions, skipping failed collapses.
pub fn template_stats(
    template_id: u32,
    column: &[Option<LabelDistribution>],
    golds: &[Option<String>],
    rows: &[usize],
    mode: LabelMode,
) -> Result<TemplateStats, InfoError> {
    let present: Vec<usize> = rows.iter().copied().filter(|&i| column[i].is_some()).collect();
    let skipped = rows.len() - present.len();
    let dists: Vec<LabelDistribution> = present.iter().map(|&i| column[i].clone().unwrap()).collect();
    let mut stats = if dists.is_empty() {
        TemplateStats::from_entropies(template_id, 0.0, 0.0, 0)
    } else {
        let dec = decompose(&align_to_union(&dists)?)?;
        TemplateStats {
            template_id,
            mi: dec.mi,
            marginal_entropy: dec.marginal,
            conditional_entropy: dec.conditional,
            n: dists.len(),
            accuracy: None,
            skipped: 0,
        }
    };
    stats.skipped = skipped;
    let graded: Vec<(usize, &String)> =
        present.iter().filter_map(|&i| golds[i].as_ref().map(|g| (i, g))).collect();
    if !graded.is_empty() {
        let hits = graded.iter().filter(|(i, g)| is_correct(column[*i].as_ref().unwrap(), g, mode)).count();
        stats.accuracy = Some(hits as f64 / graded.len() as f64);
    }
    Ok(stats)
}

/// Renders, queries and collapses every (template, instance) pair of the
/// seeded subsample. Queries run on up to `backend.max_parallel()` threads;
/// results are assembled in (template, instance) order.
pub fn evaluate_templates(
    cfg: &RunConfig,
    space: &LabelSpace,
    instances: &[InstanceRecord],
    backend: &dyn Backend,
) -> Result<EstimationRun, PipelineError> {
    let cfg = validate_run_config(cfg.clone(), space)?;
    if instances.is_empty() {
        return Err(PipelineError::EmptySample);
    }
    let picked: Vec<&InstanceRecord> =
        subsample_indices(instances.len(), cfg.n, cfg.seed).into_iter().map(|i| &instances[i]).collect();

    let jobs: Vec<(usize, usize)> =
        (0..cfg.templates.len()).flat_map(|t| (0..picked.len()).map(move |i| (t, i))).collect();
    let run_job = |&(t, i): &(usize, usize)| -> Result<Option<LabelDistribution>, PipelineError> {
        let template = &cfg.templates[t];
        let inst = picked[i];
        let prompt = render_prompt(template, inst).map_err(|source| PipelineError::Render {
            template_id: template.id,
            instance_id: inst.id.clone(),
            source,
        })?;
        let topk = query_logprobs(backend, &prompt).map_err(|source| PipelineError::Backend {
            template_id: template.id,
            instance_id: inst.id.clone(),
            source,
        })?;
        match collapse_detailed(&topk, template.collapsing_map.as_ref(), space) {
            Ok(c) => Ok(Some(c.dist)),
            Err(CollapseError::ZeroMass) => Ok(None),
            Err(source) => {
                Err(PipelineError::Collapse { template_id: template.id, instance_id: inst.id.clone(), source })
            }
        }
    };
    let results: Vec<Result<Option<LabelDistribution>, PipelineError>> = if backend.max_parallel() <= 1 {
        jobs.iter().map(run_job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(backend.max_parallel())
            .build()
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run_job).collect())
    };

    let mut results = results.into_iter();
    let golds: Vec<Option<String>> = picked.iter().map(|r| r.gold.clone()).collect();
    let rows: Vec<usize> = (0..picked.len()).collect();
    let mut distributions = BTreeMap::new();
    let mut stats = Vec::with_capacity(cfg.templates.len());
    for template in &cfg.templates {
        let column: Vec<Option<LabelDistribution>> =
            results.by_ref().take(picked.len()).collect::<Result<_, _>>()?;
        stats.push(
            template_stats(template.id, &column, &golds, &rows, space.mode())
                .map_err(|source| PipelineError::Info { template_id: template.id, source })?,
        );
        distributions.insert(template.id, column);
    }
    Ok(EstimationRun {
        mode: space.mode(),
        instance_ids: picked.iter().map(|r| r.id.clone()).collect(),
        golds,
        distributions,
        stats,
    })
}

pub fn run_estimation(
    cfg: &RunConfig,
    space: &LabelSpace,
    instances: &[InstanceRecord],
    backend: &dyn Backend,
) -> Result<Vec<TemplateStats>, PipelineError> {
    evaluate_templates(cfg, space, instances, backend).map(|r| r.stats)
}

/// One training size of the labeled-baseline sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub n: usize,
    pub partitions: usize,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub mi_mean: f64,
    pub mi_std: f64,
}

/// Per partition, what each selector picked and how it scored on the test
/// remainder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTrial {
    pub n: usize,
    pub partition: usize,
    pub baseline_template: u32,
    pub baseline_test_acc: f64,
    pub mi_template: u32,
    pub mi_test_acc: f64,
}

fn subset_accuracy(column: &[Option<LabelDistribution>], golds: &[Option<String>], rows: &[usize], mode: LabelMode) -> f64 {
    let graded: Vec<bool> = rows
        .iter()
        .filter_map(|&i| match (&column[i], &golds[i]) {
            (Some(d), Some(g)) => Some(is_correct(d, g, mode)),
            _ => None,
        })
        .collect();
    if graded.is_empty() {
        0.0
    } else {
        graded.iter().filter(|&&c| c).count() as f64 / graded.len() as f64
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Random train/test partitions at each training size: one selector picks
/// by train accuracy, the other by train MI; both are scored on the test
/// remainder. Partition `p` uses the `p`-th permutation drawn from a single
/// seeded generator, shared by every training size.
pub fn baseline_sweep(
    run: &EstimationRun,
    sizes: &[usize],
    partitions: usize,
    seed: u64,
) -> Result<(Vec<SweepPoint>, Vec<SweepTrial>), SelectionError> {
    let len = run.instance_ids.len();
    if partitions == 0 || run.distributions.is_empty() {
        return Err(SelectionError::Empty);
    }
    if let Some(&n) = sizes.iter().find(|&&n| n == 0 || n >= len) {
        return Err(SelectionError::SweepTooLarge { n, len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perms: Vec<Vec<usize>> = (0..partitions)
        .map(|_| {
            let mut idx: Vec<usize> = (0..len).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();

    let mut points = Vec::with_capacity(sizes.len());
    let mut trials = Vec::new();
    for &n in sizes {
        let mut base_accs = Vec::with_capacity(partitions);
        let mut mi_accs = Vec::with_capacity(partitions);
        for (p, perm) in perms.iter().enumerate() {
            let (train, test) = perm.split_at(n);
            let mut train_acc = Vec::new();
            let mut train_stats = Vec::new();
            for (&id, column) in &run.distributions {
                train_acc.push((id, subset_accuracy(column, &run.golds, train, run.mode)));
                train_stats.push(template_stats(id, column, &run.golds, train, run.mode)?);
            }
            let base = baseline_select_by_train_accuracy(&train_acc)?;
            let by_mi = rank_by_mi(&train_stats)?.head();
            let base_acc = subset_accuracy(&run.distributions[&base], &run.golds, test, run.mode);
            let mi_acc = subset_accuracy(&run.distributions[&by_mi], &run.golds, test, run.mode);
            base_accs.push(base_acc);
            mi_accs.push(mi_acc);
            trials.push(SweepTrial {
                n,
                partition: p,
                baseline_template: base,
                baseline_test_acc: base_acc,
                mi_template: by_mi,
                mi_test_acc: mi_acc,
            });
        }
        let (baseline_mean, baseline_std) = mean_std(&base_accs);
        let (mi_mean, mi_std) = mean_std(&mi_accs);
        points.push(SweepPoint { n, partitions, baseline_mean, baseline_std, mi_mean, mi_std });
    }
    Ok((points, trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space2() -> LabelSpace {
        LabelSpace::closed(["A", "B"]).unwrap()
    }

    fn d(p: &[f64]) -> LabelDistribution {
        LabelDistribution::closed(&space2(), p.to_vec()).unwrap()
    }

    #[test]
    fn rank_breaks_ties_by_id() {
        let stats = vec![
            TemplateStats::from_mi(3, 4.965),
            TemplateStats::from_mi(2, 4.965),
            TemplateStats::from_mi(1, 4.950),
            TemplateStats::from_mi(6, 5.224),
        ];
        let r = rank_by_mi(&stats).unwrap();
        assert_eq!(r.order, vec![6, 2, 3, 1]);
        assert_eq!(rank_by_mi(&stats[..1]).unwrap().head(), 3);
        assert_eq!(rank_by_mi(&[]), Err(SelectionError::Empty));
    }

    #[test]
    fn ensemble_examples() {
        let ranked = rank_by_mi(&[TemplateStats::from_mi(1, 0.5), TemplateStats::from_mi(2, 0.4)]).unwrap();
        let table: BTreeMap<u32, Vec<LabelDistribution>> =
            [(1, vec![d(&[0.8, 0.2]), d(&[1.0, 0.0])]), (2, vec![d(&[0.4, 0.6]), d(&[1.0, 0.0])])].into();
        let one = ensemble_top_p(&ranked, 1, &table).unwrap();
        assert_eq!(one, table[&1]);
        let two = ensemble_top_p(&ranked, 2, &table).unwrap();
        assert!((two[0].probs()[0] - 0.6).abs() < 1e-12 && (two[0].probs()[1] - 0.4).abs() < 1e-12);
        assert_eq!(two[1].probs(), &[1.0, 0.0]);
        assert!(ensemble_top_p(&ranked, 3, &table).is_err());
    }

    #[test]
    fn ensemble_count_mismatch() {
        let ranked = rank_by_mi(&[TemplateStats::from_mi(1, 0.5), TemplateStats::from_mi(2, 0.4)]).unwrap();
        let table: BTreeMap<u32, Vec<LabelDistribution>> =
            [(1, vec![d(&[0.8, 0.2])]), (2, vec![d(&[0.4, 0.6]), d(&[1.0, 0.0])])].into();
        assert!(matches!(
            ensemble_top_p(&ranked, 2, &table),
            Err(SelectionError::MismatchedInstanceCounts { id: 2, .. })
        ));
    }

    #[test]
    fn accuracy_examples() {
        let preds = vec![d(&[0.9, 0.1]), d(&[0.2, 0.8])];
        let golds = |g: &[&str]| g.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(accuracy(&preds, &golds(&["A", "B"]), LabelMode::Closed).unwrap(), 1.0);
        assert_eq!(accuracy(&preds, &golds(&["B", "A"]), LabelMode::Closed).unwrap(), 0.0);
        assert_eq!(accuracy(&[d(&[0.5, 0.5])], &golds(&["A"]), LabelMode::Closed).unwrap(), 1.0);
        assert!(accuracy(&preds, &golds(&["A"]), LabelMode::Closed).is_err());

        let open = LabelDistribution::new(vec!["4".to_string(), "43".to_string()].into(), LabelMode::Open, vec![0.3, 0.7])
            .unwrap();
        assert_eq!(accuracy(&[open], &golds(&["43,627"]), LabelMode::Open).unwrap(), 1.0);
    }

    #[test]
    fn baseline_picks() {
        assert_eq!(baseline_select_by_train_accuracy(&[(1, 0.5), (2, 1.0), (3, 0.5)]).unwrap(), 2);
        assert_eq!(baseline_select_by_train_accuracy(&[(1, 0.7), (2, 0.7), (3, 0.7)]).unwrap(), 1);
    }

    #[test]
    fn baseline_on_two_instance_subset() {
        // Enumerate predictions on two labeled instances; only template 3
        // gets both right.
        let golds = ["A", "B"];
        let preds: [(u32, [&str; 2]); 3] = [(1, ["A", "A"]), (2, ["B", "B"]), (3, ["A", "B"])];
        let accs: Vec<(u32, f64)> = preds
            .iter()
            .map(|(id, p)| (*id, p.iter().zip(golds).filter(|(a, b)| *a == b).count() as f64 / 2.0))
            .collect();
        assert_eq!(accs, vec![(1, 0.5), (2, 0.5), (3, 1.0)]);
        assert_eq!(baseline_select_by_train_accuracy(&accs).unwrap(), 3);
    }

    #[test]
    fn transfer_normalization() {
        let accs = [0.2, 0.4, 0.9];
        assert!((normalize_transfer(0.9, &accs).unwrap() - 1.0).abs() < 1e-12);
        assert!(normalize_transfer(0.5, &accs).unwrap().abs() < 1e-12);
        assert_eq!(normalize_transfer(0.5, &[0.5, 0.5]), Err(SelectionError::DegenerateSpread));
    }

    #[test]
    fn subsample_is_prefix_monotone() {
        let big = subsample_indices(100, 40, 7);
        let small = subsample_indices(100, 10, 7);
        assert_eq!(&big[..10], &small[..]);
        assert_eq!(subsample_indices(5, 50, 7).len(), 5);
    }

    #[test]
    fn stats_skip_and_accuracy() {
        let column = vec![Some(d(&[1.0, 0.0])), None, Some(d(&[0.0, 1.0])), None];
        let golds: Vec<Option<String>> = vec![Some("A".into()), Some("A".into()), Some("A".into()), None];
        let s = template_stats(1, &column, &golds, &[0, 1, 2, 3], LabelMode::Closed).unwrap();
        assert_eq!((s.n, s.skipped), (2, 2));
        assert!((s.mi - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(s.accuracy, Some(0.5));
        assert!(!s.failed_playground());
    }
}
