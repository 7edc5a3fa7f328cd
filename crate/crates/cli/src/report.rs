use std::fmt::Write as _;
use std::path::Path;

use crate::artifacts::{FeatureRecord, RunDir, Summary, FEATURES, SUMMARY};
use crate::error::CliError;

/// Relative error implied by a median absolute error on log targets, e.g. `≈12.0%`.
pub fn relative_error_display(mae: f64) -> String {
    format!("≈{:.1}%", genz_core::metrics::relative_error_from_log_mae(mae) * 100.0)
}

pub fn cosine_display(cs: f64) -> String {
    format!("{cs:.2}")
}

fn metric_line(label: &str, metric: Option<&str>, value: f64, log_target: bool) -> String {
    match metric {
        Some("cosine_similarity") => format!("{label}: mean CS {}", cosine_display(value)),
        _ if log_target => format!(
            "{label}: median abs error {value:.4} (relative error {})",
            relative_error_display(value)
        ),
        _ => format!("{label}: median abs error {value:.6}"),
    }
}

/// Human-readable summary of a finished run.
pub fn report(out: &Path) -> Result<String, CliError> {
    let dir = RunDir::open(out)?;
    let summary: Summary = dir.read_json(SUMMARY)?;
    let config: serde_json::Value = dir.read_json(crate::artifacts::CONFIG)?;
    let log_target = config["log_target"]
        .as_bool()
        .unwrap_or(summary.experiment == "hedonic");
    let metric = summary.metric.as_deref();

    let mut text = String::new();
    let _ = writeln!(text, "experiment: {}", summary.experiment);
    if let Some(m) = metric {
        let _ = writeln!(text, "metric: {m}");
    }
    if let (Some(c), Some(stop)) = (summary.cycles, summary.stop) {
        let _ = writeln!(text, "cycles: {c} (stopped: {})", serde_json::to_value(stop).unwrap_or_default().as_str().unwrap_or("?"));
    }
    if let Some(v) = summary.train_metric {
        let _ = writeln!(text, "{}", metric_line("train", metric, v, log_target));
    }
    if let Some(v) = summary.test_metric {
        let _ = writeln!(text, "{}", metric_line("test", metric, v, log_target));
    }
    if let Some(v) = summary.best_test_metric {
        let _ = writeln!(text, "{}", metric_line("best test (baseline)", metric, v, log_target));
    }
    if let Some(l) = summary.bound {
        let _ = writeln!(text, "bound L: {l:.6}");
    }
    if let Some(cs) = summary.final_mean_cs {
        let _ = writeln!(text, "mean CS at the largest rating count: {}", cosine_display(cs));
    }

    if dir.path(FEATURES).exists() {
        let features: Vec<FeatureRecord> = dir.read_json(FEATURES)?;
        let _ = writeln!(text, "features ({}):", features.len());
        for f in &features {
            let rate = f.error_rate.map_or_else(|| "-".into(), |p| format!("{p:.3}"));
            let act = f.activation.map_or_else(|| "-".into(), |a| format!("{a:.3}"));
            let _ = writeln!(text, "  p_err {rate:>6}  active {act:>6}  {}", f.descriptor);
        }
    }
    Ok(text)
}
