use std::path::Path;

use super::metrics::{read_metrics, MetricsRecord};
use super::HarnessError;

const BASELINE: &str = "baseline(FP32)";

/// Final state of one (label, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub seed: u64,
    pub epochs: usize,
    pub accuracy: f64,
    /// Accuracy minus the FP32 baseline with the same seed (or, failing that,
    /// the mean baseline accuracy over all seeds).
    pub delta: Option<f64>,
}

/// Collapses records to one summary per run, in order of first appearance.
/// A run's final record is its last epoch.
pub fn summarize(records: &[MetricsRecord]) -> Vec<RunSummary> {
    let mut runs: Vec<RunSummary> = Vec::new();
    for r in records {
        match runs.iter_mut().find(|s| s.label == r.label && s.seed == r.seed) {
            Some(s) if r.epoch >= s.epochs => {
                s.epochs = r.epoch;
                s.accuracy = r.test_accuracy;
            }
            Some(_) => {}
            None => runs.push(RunSummary {
                label: r.label.clone(),
                seed: r.seed,
                epochs: r.epoch,
                accuracy: r.test_accuracy,
                delta: None,
            }),
        }
    }
    let baselines: Vec<(u64, f64)> = runs.iter().filter(|s| s.label == BASELINE).map(|s| (s.seed, s.accuracy)).collect();
    let mean_baseline = (!baselines.is_empty()).then(|| baselines.iter().map(|b| b.1).sum::<f64>() / baselines.len() as f64);
    for s in &mut runs {
        let base = baselines.iter().find(|b| b.0 == s.seed).map(|b| b.1).or(mean_baseline);
        s.delta = base.map(|b| s.accuracy - b);
    }
    runs
}

/// Side-by-side table of final accuracies.
pub fn render(records: &[MetricsRecord]) -> String {
    let runs = summarize(records);
    if runs.is_empty() {
        return "no runs\n".to_string();
    }
    let width = runs.iter().map(|r| r.label.len()).max().unwrap_or(0).max("label".len());
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>8}  {:>8}\n", "label", "seed", "epochs", "accuracy", "delta");
    for r in &runs {
        let delta = r.delta.map_or_else(|| "-".to_string(), |d| format!("{d:+.4}"));
        out += &format!("{:<width$}  {:>6}  {:>6}  {:>8.4}  {:>8}\n", r.label, r.seed, r.epochs, r.accuracy, delta);
    }
    out
}

/// Reads a metrics file and renders its table.
pub fn report(path: impl AsRef<Path>) -> Result<String, HarnessError> {
    Ok(render(&read_metrics(path)?))
}
