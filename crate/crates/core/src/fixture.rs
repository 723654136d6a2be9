//! Published (MI, accuracy) pairs for 20 templates on each of eight
//! benchmarks, GPT-3 175B, and the replay that summarizes them.
//!
//! Rows are numbered as published: Prompt 1 is the most accurate template.

use serde::Serialize;

use crate::selection::{normalize_transfer, rank_by_mi, SelectionError};
use crate::types::TemplateStats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub id: u32,
    pub mi: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Dataset {
    pub name: &'static str,
    pub rows: &'static [Row],
}

impl Dataset {
    pub fn stats(&self) -> Vec<TemplateStats> {
        self.rows.iter().map(|r| TemplateStats::from_mi(r.id, r.mi).with_accuracy(r.acc)).collect()
    }
}

pub fn datasets() -> &'static [Dataset] {
    DATASETS
}

pub fn dataset(name: &str) -> Option<&'static Dataset> {
    DATASETS.iter().find(|d| d.name.eq_ignore_ascii_case(name))
}

/// Canonical text form (`name,id,mi,acc` per line, three decimals) used for
/// the transcription checksum.
pub fn canonical_text() -> String {
    DATASETS
        .iter()
        .flat_map(|d| d.rows.iter().map(move |r| format!("{},{},{:.3},{:.3}\n", d.name, r.id, r.mi, r.acc)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub dataset: String,
    pub worst: f64,
    pub mean: f64,
    pub median: f64,
    pub best: f64,
    pub selected_template: u32,
    pub selected_mi: f64,
    pub selected_acc: f64,
    pub normalized_score: f64,
    pub selected_is_best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub datasets: Vec<DatasetSummary>,
    pub mean_normalized_score: f64,
    pub best_count: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn summarize(d: &Dataset) -> Result<DatasetSummary, SelectionError> {
    let stats = d.stats();
    let ranked = rank_by_mi(&stats)?;
    let pick = ranked.stats_for(ranked.head()).expect("head is ranked");
    let mut accs: Vec<f64> = d.rows.iter().map(|r| r.acc).collect();
    let selected_acc = pick.accuracy.expect("fixture rows carry accuracy");
    let normalized_score = normalize_transfer(selected_acc, &accs)?;
    accs.sort_by(f64::total_cmp);
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let best = *accs.last().unwrap();
    Ok(DatasetSummary {
        dataset: d.name.to_string(),
        worst: accs[0],
        mean,
        median: median(&accs),
        best,
        selected_template: pick.template_id,
        selected_mi: pick.mi,
        selected_acc,
        normalized_score,
        selected_is_best: selected_acc == best,
    })
}

pub fn replay(sets: &[Dataset]) -> Result<ReplaySummary, SelectionError> {
    let datasets: Vec<DatasetSummary> = sets.iter().map(summarize).collect::<Result<_, _>>()?;
    if datasets.is_empty() {
        return Err(SelectionError::Empty);
    }
    let mean_normalized_score = datasets.iter().map(|d| d.normalized_score).sum::<f64>() / datasets.len() as f64;
    let best_count = datasets.iter().filter(|d| d.selected_is_best).count();
    Ok(ReplaySummary { datasets, mean_normalized_score, best_count })
}

static DATASETS: &[Dataset] = &[
    Dataset {
        name: "SQuAD",
        rows: &[
            Row { id: 1, mi: 4.950, acc: 0.820 },
            Row { id: 2, mi: 4.965, acc: 0.800 },
            Row { id: 3, mi: 4.965, acc: 0.800 },
            Row { id: 4, mi: 4.901, acc: 0.790 },
            Row { id: 5, mi: 4.711, acc: 0.758 },
            Row { id: 6, mi: 5.224, acc: 0.754 },
            Row { id: 7, mi: 5.126, acc: 0.750 },
            Row { id: 8, mi: 4.745, acc: 0.700 },
            Row { id: 9, mi: 3.998, acc: 0.692 },
            Row { id: 10, mi: 4.037, acc: 0.686 },
            Row { id: 11, mi: 4.231, acc: 0.684 },
            Row { id: 12, mi: 3.568, acc: 0.620 },
            Row { id: 13, mi: 3.261, acc: 0.614 },
            Row { id: 14, mi: 3.760, acc: 0.608 },
            Row { id: 15, mi: 3.006, acc: 0.606 },
            Row { id: 16, mi: 3.843, acc: 0.592 },
            Row { id: 17, mi: 3.508, acc: 0.544 },
            Row { id: 18, mi: 3.227, acc: 0.406 },
            Row { id: 19, mi: 2.497, acc: 0.402 },
            Row { id: 20, mi: 2.312, acc: 0.302 },
        ],
    },
    Dataset {
        name: "LAMBADA",
        rows: &[
            Row { id: 1, mi: 4.984, acc: 0.782 },
            Row { id: 2, mi: 4.793, acc: 0.770 },
            Row { id: 3, mi: 5.062, acc: 0.770 },
            Row { id: 4, mi: 5.058, acc: 0.736 },
            Row { id: 5, mi: 4.194, acc: 0.608 },
            Row { id: 6, mi: 4.623, acc: 0.608 },
            Row { id: 7, mi: 4.328, acc: 0.596 },
            Row { id: 8, mi: 3.338, acc: 0.586 },
            Row { id: 9, mi: 2.230, acc: 0.498 },
            Row { id: 10, mi: 2.632, acc: 0.474 },
            Row { id: 11, mi: 4.549, acc: 0.470 },
            Row { id: 12, mi: 2.637, acc: 0.454 },
            Row { id: 13, mi: 2.476, acc: 0.434 },
            Row { id: 14, mi: 3.043, acc: 0.432 },
            Row { id: 15, mi: 2.450, acc: 0.428 },
            Row { id: 16, mi: 2.820, acc: 0.398 },
            Row { id: 17, mi: 1.931, acc: 0.376 },
            Row { id: 18, mi: 2.530, acc: 0.374 },
            Row { id: 19, mi: 2.372, acc: 0.364 },
            Row { id: 20, mi: 2.860, acc: 0.296 },
        ],
    },
    Dataset {
        name: "ROCStories",
        rows: &[
            Row { id: 1, mi: 3.859, acc: 0.538 },
            Row { id: 2, mi: 4.427, acc: 0.524 },
            Row { id: 3, mi: 3.728, acc: 0.420 },
            Row { id: 4, mi: 3.670, acc: 0.356 },
            Row { id: 5, mi: 3.904, acc: 0.310 },
            Row { id: 6, mi: 4.167, acc: 0.298 },
            Row { id: 7, mi: 4.066, acc: 0.290 },
            Row { id: 8, mi: 3.707, acc: 0.258 },
            Row { id: 9, mi: 3.644, acc: 0.256 },
            Row { id: 10, mi: 1.979, acc: 0.222 },
            Row { id: 11, mi: 3.199, acc: 0.220 },
            Row { id: 12, mi: 2.013, acc: 0.214 },
            Row { id: 13, mi: 3.116, acc: 0.182 },
            Row { id: 14, mi: 1.843, acc: 0.158 },
            Row { id: 15, mi: 2.681, acc: 0.140 },
            Row { id: 16, mi: 2.150, acc: 0.120 },
            Row { id: 17, mi: 2.634, acc: 0.088 },
            Row { id: 18, mi: 2.637, acc: 0.086 },
            Row { id: 19, mi: 3.648, acc: 0.050 },
            Row { id: 20, mi: 1.891, acc: 0.036 },
        ],
    },
    Dataset {
        name: "CoQA",
        rows: &[
            Row { id: 1, mi: 0.600, acc: 0.590 },
            Row { id: 2, mi: 0.233, acc: 0.546 },
            Row { id: 3, mi: 0.474, acc: 0.470 },
            Row { id: 4, mi: 0.083, acc: 0.466 },
            Row { id: 5, mi: 0.504, acc: 0.462 },
            Row { id: 6, mi: 0.431, acc: 0.448 },
            Row { id: 7, mi: 0.417, acc: 0.428 },
            Row { id: 8, mi: 0.364, acc: 0.408 },
            Row { id: 9, mi: 0.410, acc: 0.408 },
            Row { id: 10, mi: 0.363, acc: 0.396 },
            Row { id: 11, mi: 0.059, acc: 0.380 },
            Row { id: 12, mi: 0.233, acc: 0.360 },
            Row { id: 13, mi: 0.255, acc: 0.360 },
            Row { id: 14, mi: 0.222, acc: 0.354 },
            Row { id: 15, mi: 0.246, acc: 0.342 },
            Row { id: 16, mi: 0.376, acc: 0.336 },
            Row { id: 17, mi: 0.265, acc: 0.276 },
            Row { id: 18, mi: 0.197, acc: 0.248 },
            Row { id: 19, mi: 0.013, acc: 0.234 },
            Row { id: 20, mi: 0.241, acc: 0.228 },
        ],
    },
    Dataset {
        name: "IMDB",
        rows: &[
            Row { id: 1, mi: 0.175, acc: 0.944 },
            Row { id: 2, mi: 0.306, acc: 0.920 },
            Row { id: 3, mi: 0.154, acc: 0.904 },
            Row { id: 4, mi: 0.260, acc: 0.898 },
            Row { id: 5, mi: 0.237, acc: 0.888 },
            Row { id: 6, mi: 0.151, acc: 0.886 },
            Row { id: 7, mi: 0.086, acc: 0.886 },
            Row { id: 8, mi: 0.274, acc: 0.858 },
            Row { id: 9, mi: 0.026, acc: 0.852 },
            Row { id: 10, mi: 0.119, acc: 0.842 },
            Row { id: 11, mi: 0.162, acc: 0.824 },
            Row { id: 12, mi: 0.101, acc: 0.822 },
            Row { id: 13, mi: 0.084, acc: 0.810 },
            Row { id: 14, mi: 0.201, acc: 0.798 },
            Row { id: 15, mi: 0.234, acc: 0.786 },
            Row { id: 16, mi: 0.042, acc: 0.628 },
            Row { id: 17, mi: 0.021, acc: 0.486 },
            Row { id: 18, mi: 0.016, acc: 0.484 },
            Row { id: 19, mi: 0.019, acc: 0.462 },
            Row { id: 20, mi: 0.017, acc: 0.450 },
        ],
    },
    Dataset {
        name: "BoolQ",
        rows: &[
            Row { id: 1, mi: 0.077, acc: 0.778 },
            Row { id: 2, mi: 0.090, acc: 0.752 },
            Row { id: 3, mi: 0.055, acc: 0.750 },
            Row { id: 4, mi: 0.076, acc: 0.740 },
            Row { id: 5, mi: 0.037, acc: 0.740 },
            Row { id: 6, mi: 0.068, acc: 0.702 },
            Row { id: 7, mi: 0.039, acc: 0.698 },
            Row { id: 8, mi: 0.034, acc: 0.698 },
            Row { id: 9, mi: 0.055, acc: 0.688 },
            Row { id: 10, mi: 0.052, acc: 0.682 },
            Row { id: 11, mi: 0.026, acc: 0.682 },
            Row { id: 12, mi: 0.016, acc: 0.680 },
            Row { id: 13, mi: 0.074, acc: 0.674 },
            Row { id: 14, mi: 0.050, acc: 0.668 },
            Row { id: 15, mi: 0.058, acc: 0.646 },
            Row { id: 16, mi: 0.027, acc: 0.634 },
            Row { id: 17, mi: 0.013, acc: 0.522 },
            Row { id: 18, mi: 0.020, acc: 0.518 },
            Row { id: 19, mi: 0.013, acc: 0.452 },
            Row { id: 20, mi: 0.022, acc: 0.438 },
        ],
    },
    Dataset {
        name: "COPA",
        rows: &[
            Row { id: 1, mi: 0.044, acc: 0.782 },
            Row { id: 2, mi: 0.034, acc: 0.762 },
            Row { id: 3, mi: 0.003, acc: 0.628 },
            Row { id: 4, mi: 0.002, acc: 0.612 },
            Row { id: 5, mi: 0.003, acc: 0.550 },
            Row { id: 6, mi: 0.010, acc: 0.540 },
            Row { id: 7, mi: 0.002, acc: 0.532 },
            Row { id: 8, mi: 0.006, acc: 0.530 },
            Row { id: 9, mi: 0.018, acc: 0.524 },
            Row { id: 10, mi: 0.008, acc: 0.520 },
            Row { id: 11, mi: 0.003, acc: 0.516 },
            Row { id: 12, mi: 0.008, acc: 0.510 },
            Row { id: 13, mi: 0.003, acc: 0.506 },
            Row { id: 14, mi: 0.003, acc: 0.504 },
            Row { id: 15, mi: 0.036, acc: 0.502 },
            Row { id: 16, mi: 0.009, acc: 0.502 },
            Row { id: 17, mi: 0.006, acc: 0.500 },
            Row { id: 18, mi: 0.003, acc: 0.500 },
            Row { id: 19, mi: 0.019, acc: 0.500 },
            Row { id: 20, mi: 0.001, acc: 0.496 },
        ],
    },
    Dataset {
        name: "WiC",
        rows: &[
            Row { id: 1, mi: 0.036, acc: 0.520 },
            Row { id: 2, mi: 0.006, acc: 0.512 },
            Row { id: 3, mi: 0.025, acc: 0.506 },
            Row { id: 4, mi: 0.007, acc: 0.504 },
            Row { id: 5, mi: 0.006, acc: 0.504 },
            Row { id: 6, mi: 0.007, acc: 0.496 },
            Row { id: 7, mi: 0.004, acc: 0.496 },
            Row { id: 8, mi: 0.006, acc: 0.494 },
            Row { id: 9, mi: 0.007, acc: 0.494 },
            Row { id: 10, mi: 0.004, acc: 0.494 },
            Row { id: 11, mi: 0.009, acc: 0.494 },
            Row { id: 12, mi: 0.008, acc: 0.492 },
            Row { id: 13, mi: 0.017, acc: 0.492 },
            Row { id: 14, mi: 0.017, acc: 0.488 },
            Row { id: 15, mi: 0.008, acc: 0.488 },
            Row { id: 16, mi: 0.031, acc: 0.486 },
            Row { id: 17, mi: 0.007, acc: 0.466 },
            Row { id: 18, mi: 0.010, acc: 0.460 },
            Row { id: 19, mi: 0.007, acc: 0.460 },
            Row { id: 20, mi: 0.004, acc: 0.440 },
        ],
    },
];
