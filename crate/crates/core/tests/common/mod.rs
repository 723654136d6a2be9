#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

/// A binary yes/no task on disk: template config, dataset and a mock
/// response table. `p_yes[t][i]` is template `t+1`'s probability of "yes"
/// on instance `i`.
pub struct Scenario {
    pub dir: tempfile::TempDir,
    config: String,
    dataset: String,
    mock: String,
    pub golds: Vec<bool>,
    pub p_yes: Vec<Vec<f64>>,
}

pub fn prompt(template: usize, instance: usize) -> String {
    format!("T{template}: item {instance}\nAnswer:")
}

impl Scenario {
    pub fn new(golds: Vec<bool>, p_yes: Vec<Vec<f64>>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = String::from("[labels]\nmode = \"closed\"\nvalues = [\"Yes\", \"No\"]\n");
        for t in 1..=p_yes.len() {
            cfg.push_str(&format!(
                "\n[[templates]]\nid = {t}\nscaffold = \"T{t}: {{text}}\\nAnswer:\"\ncollapse = {{ Yes = [\"yes\"], No = [\"no\"] }}\n"
            ));
        }
        std::fs::write(dir.path().join("config.toml"), cfg).unwrap();

        let data: String = golds
            .iter()
            .enumerate()
            .map(|(i, g)| {
                json!({"id": format!("i{i}"), "fields": {"text": format!("item {i}")}, "gold": if *g { "Yes" } else { "No" }})
                    .to_string()
                    + "\n"
            })
            .collect();
        std::fs::write(dir.path().join("data.jsonl"), data).unwrap();

        let mut table = String::new();
        for (t, col) in p_yes.iter().enumerate() {
            for (i, &p) in col.iter().enumerate() {
                let mut entries = Vec::new();
                if p > 0.0 {
                    entries.push(json!([" yes", p.ln()]));
                }
                if p < 1.0 {
                    entries.push(json!([" no", (1.0 - p).ln()]));
                }
                table.push_str(&json!({"prompt": prompt(t + 1, i), "entries": entries}).to_string());
                table.push('\n');
            }
        }
        std::fs::write(dir.path().join("mock.jsonl"), table).unwrap();
        let s = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
        let (config, dataset, mock) = (s("config.toml"), s("data.jsonl"), s("mock.jsonl"));
        Self { dir, config, dataset, mock, golds, p_yes }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> &str {
        &self.config
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn mock(&self) -> &str {
        &self.mock
    }
}

/// Deterministic pseudo-random numbers in [0, 1) for building fixtures.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

pub fn promptsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptsel")).args(args).output().unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}
