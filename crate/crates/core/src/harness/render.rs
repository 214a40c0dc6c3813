use std::fmt::Write;

use serde_json::Value;

use super::{HarnessError, Result};

fn pct(v: &Value) -> String {
    v.as_f64().map_or("-".into(), |x| format!("{:.1}", 100.0 * x))
}

fn summary_cell(summary: &Value, metric: &str) -> String {
    let s = &summary[metric];
    if s.is_null() {
        "-".into()
    } else {
        format!("{} ± {}", pct(&s["mean"]), pct(&s["sd"]))
    }
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn render_ranking(r: &Value, out: &mut String) {
    let _ = writeln!(out, "winner: {}", r["winner"].as_str().unwrap_or("-"));
    if let Some(b) = r["budget"].as_u64() {
        let _ = writeln!(out, "budget: {b} parameters");
    }
    let _ = writeln!(out, "{:<24} {:>14} {:>8} {:>7}", "backbone", "params", "borda", "budget");
    for c in r["candidates"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "{:<24} {:>14} {:>8} {:>7}",
            c["backbone"].as_str().unwrap_or("-"),
            c["params"].as_u64().unwrap_or(0),
            c["borda"].as_f64().map_or("-".into(), |b| format!("{b:.1}")),
            if c["within_budget"].as_bool() == Some(true) { "yes" } else { "no" }
        );
    }
    for w in r["warnings"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "warning: {}", w.as_str().unwrap_or_default());
    }
}

fn render_scores(r: &Value, out: &mut String) {
    let _ = writeln!(out, "{:<24} {:<16} {:<12} {:>12}", "backbone", "dataset", "estimator", "score");
    for c in r["cells"].as_array().into_iter().flatten() {
        let score = if c["error"].is_string() { "failed".into() } else { num(&c["score"]) };
        let _ = writeln!(
            out,
            "{:<24} {:<16} {:<12} {:>12}",
            c["backbone"].as_str().unwrap_or("-"),
            c["dataset"].as_str().unwrap_or("-"),
            c["estimator"].as_str().unwrap_or("-"),
            score
        );
    }
}

const METRICS: [&str; 4] = ["accuracy", "macro_f1", "auroc", "aupr"];

fn metric_header(out: &mut String, lead: &str) {
    let _ = write!(out, "{lead}");
    for m in METRICS {
        let _ = write!(out, " {m:>14}");
    }
    out.push('\n');
}

fn render_probe(r: &Value, out: &mut String) {
    let _ = writeln!(out, "{}-fold group cross-validation, % mean ± sd", r["k_folds"]);
    metric_header(out, &format!("{:<24} {:<16}", "backbone", "dataset"));
    for t in r["tables"].as_array().into_iter().flatten() {
        let _ = write!(
            out,
            "{:<24} {:<16}",
            t["backbone"].as_str().unwrap_or("-"),
            t["dataset"].as_str().unwrap_or("-")
        );
        for m in METRICS {
            let _ = write!(out, " {:>14}", summary_cell(&t["summary"], m));
        }
        out.push('\n');
        if let Some(tests) = t["ttests"].as_object().filter(|o| !o.is_empty()) {
            for (m, tt) in tests {
                let t_text = match &tt["t"] {
                    Value::String(s) => s.clone(),
                    v => num(v),
                };
                let _ = writeln!(out, "    vs baseline {m}: t = {t_text}, p = {}", num(&tt["p"]));
            }
        }
    }
}

fn render_sweep(r: &Value, out: &mut String) {
    let _ = writeln!(out, "label-efficiency sweep, % mean ± sd");
    for t in r["tables"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "{} / {}",
            t["backbone"].as_str().unwrap_or("-"),
            t["dataset"].as_str().unwrap_or("-")
        );
        metric_header(out, &format!("  {:>10}", "fraction"));
        for p in t["points"].as_array().into_iter().flatten() {
            let _ = write!(out, "  {:>9}%", pct(&p["fraction"]));
            for m in METRICS {
                let _ = write!(out, " {:>14}", summary_cell(&p["summary"], m));
            }
            out.push('\n');
        }
    }
}

fn render_ssl(r: &Value, out: &mut String) {
    let _ = writeln!(out, "steps: {}", r["steps"]);
    let _ = writeln!(out, "loss, first window: {}", num(&r["first_window_loss"]));
    let _ = writeln!(out, "loss, last window:  {}", num(&r["last_window_loss"]));
    let _ = writeln!(out, "teacher entropy: {} -> {}", num(&r["initial_entropy"]), num(&r["final_entropy"]));
}

fn render_split(r: &Value, out: &mut String) {
    for t in r["tables"].as_array().into_iter().flatten() {
        let sizes: Vec<String> = t["fold_sizes"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|v| v.to_string())
            .collect();
        let _ = writeln!(out, "{}: fold sizes {}", t["path"].as_str().unwrap_or("-"), sizes.join(" "));
    }
}

fn render_validate(r: &Value, out: &mut String) {
    for f in r["files"].as_array().into_iter().flatten() {
        let path = f["path"].as_str().unwrap_or("-");
        if let Some(e) = f["error"].as_str() {
            let _ = writeln!(out, "{path}: unreadable: {e}");
            continue;
        }
        let v: Vec<&str> = f["violations"].as_array().into_iter().flatten().filter_map(Value::as_str).collect();
        if v.is_empty() {
            let _ = writeln!(out, "{path}: ok");
        } else {
            let _ = writeln!(out, "{path}: {}", v.join("; "));
        }
    }
}

fn render_ingest(r: &Value, out: &mut String) {
    for f in r["files"].as_array().into_iter().flatten() {
        let _ = writeln!(
            out,
            "{} -> {} ({} x {})",
            f["input"].as_str().unwrap_or("-"),
            f["output"].as_str().unwrap_or("-"),
            f["n_rows"],
            f["n_cols"]
        );
    }
}

/// Human-readable table for any report the harness writes. Fractions and
/// classification metrics are shown as percentages with one decimal.
pub fn render_report(report: &Value) -> Result<String> {
    let mut out = String::new();
    let kind = report["kind"].as_str().unwrap_or("");
    match kind {
        "ranking" => render_ranking(report, &mut out),
        "scores" => render_scores(report, &mut out),
        "probe" => render_probe(report, &mut out),
        "sweep" => render_sweep(report, &mut out),
        "ssl" => render_ssl(report, &mut out),
        "split" => render_split(report, &mut out),
        "validate" => render_validate(report, &mut out),
        "ingest" => render_ingest(report, &mut out),
        other => return Err(HarnessError::Config(format!("unrecognized report kind {other:?}"))),
    }
    if let Some(seed) = report["seed"].as_u64() {
        let _ = writeln!(out, "seed: {seed}");
    }
    Ok(out)
}
