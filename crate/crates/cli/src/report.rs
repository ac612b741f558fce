//! CSV rendering of experiment reports.

use std::path::{Path, PathBuf};

use crate::config::ExperimentKind;
use crate::experiment::{mean_se, Cell, ExperimentReport, Status, SELF_SCORE};
use crate::io::{write_text, Result};

fn prefix(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::GridPosterior => "grid",
        ExperimentKind::StrengthSweep => "sweep",
        ExperimentKind::Crf => "crf",
    }
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), num)
}

fn notes(cell: &Cell) -> String {
    let mut all = cell.notes.clone();
    if let Status::Failed(reason) = &cell.status {
        all.insert(0, reason.clone());
    }
    all.join(";")
}

/// One row per sample set, or one empty-score row for a failed cell.
pub fn long_csv(report: &ExperimentReport) -> String {
    let mut rows = Vec::new();
    for c in &report.cells {
        let base = [c.model.to_string(), c.method.clone(), num(c.x)];
        if c.scores.is_empty() {
            rows.push(
                [
                    &base[..],
                    &[
                        String::new(),
                        String::new(),
                        c.status.label().into(),
                        notes(c),
                    ],
                ]
                .concat(),
            );
        }
        for (k, s) in c.scores.iter().enumerate() {
            rows.push(
                [
                    &base[..],
                    &[k.to_string(), num(*s), c.status.label().into(), notes(c)],
                ]
                .concat(),
            );
        }
    }
    to_csv(
        &[
            "model",
            "method",
            report.x_name,
            "set",
            "score",
            "status",
            "notes",
        ],
        &rows,
    )
}

/// Mean and standard error per cell next to the self-score baseline, then
/// the same averaged over models under `model = all`.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut rows = Vec::new();
    for c in &report.cells {
        let stats = mean_se(&c.scores);
        let baseline = report.cell(c.model, SELF_SCORE, c.x).and_then(Cell::mean);
        let ratio = stats.zip(baseline).map(|((m, _), b)| m / b);
        rows.push(vec![
            c.model.to_string(),
            c.method.clone(),
            num(c.x),
            opt(stats.map(|s| s.0)),
            opt(stats.map(|s| s.1)),
            opt(baseline),
            opt(ratio),
            c.status.label().into(),
            c.bp_failures.to_string(),
            opt(c.mpsrf),
            notes(c),
        ]);
    }
    let mut methods: Vec<&str> = Vec::new();
    for c in &report.cells {
        if !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    for x in report.xs() {
        let baseline = report.model_average(SELF_SCORE, x).map(|s| s.0);
        for m in &methods {
            if !report.cells.iter().any(|c| c.method == *m && c.x == x) {
                continue;
            }
            let stats = report.model_average(m, x);
            let status = if stats.is_some() { "ok" } else { "failed" };
            let bp: usize = report
                .cells
                .iter()
                .filter(|c| c.method == *m && c.x == x)
                .map(|c| c.bp_failures)
                .sum();
            rows.push(vec![
                "all".into(),
                m.to_string(),
                num(x),
                opt(stats.map(|s| s.0)),
                opt(stats.map(|s| s.1)),
                opt(baseline),
                opt(stats.zip(baseline).map(|((a, _), b)| a / b)),
                status.into(),
                bp.to_string(),
                String::new(),
                String::new(),
            ]);
        }
    }
    let header = [
        "model",
        "method",
        report.x_name,
        "mean",
        "se",
        "self_mean",
        "ratio_to_self",
        "status",
        "bp_failures",
        "mpsrf",
        "notes",
    ];
    format!("# {}\n{}", report.settings, to_csv(&header, &rows))
}

pub fn trends_csv(report: &ExperimentReport) -> String {
    let rows: Vec<Vec<String>> = report
        .trends
        .iter()
        .map(|t| {
            vec![
                t.name.clone(),
                num(t.value),
                t.holds.to_string(),
                t.detail.clone(),
            ]
        })
        .collect();
    to_csv(&["name", "value", "holds", "detail"], &rows)
}

pub fn predictions_csv(report: &ExperimentReport) -> String {
    let rows: Vec<Vec<String>> = report
        .predictions
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.predictor.clone(),
                p.errors.to_string(),
                p.lines.to_string(),
                num(p.rate),
                num(p.se),
                p.flagged.to_string(),
            ]
        })
        .collect();
    to_csv(
        &["n", "predictor", "errors", "lines", "rate", "se", "flagged"],
        &rows,
    )
}

/// Wall-clock per cell; kept apart so the other files are reproducible.
pub fn timing_csv(report: &ExperimentReport) -> String {
    let rows: Vec<Vec<String>> = report
        .cells
        .iter()
        .map(|c| {
            vec![
                c.model.to_string(),
                c.method.clone(),
                num(c.x),
                format!("{:.3}", c.wall_seconds),
            ]
        })
        .collect();
    to_csv(&["model", "method", report.x_name, "wall_seconds"], &rows)
}

/// Writes every report file into `dir` and returns their paths.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let p = prefix(report.kind);
    let mut files = vec![
        (format!("{p}_long.csv"), long_csv(report)),
        (format!("{p}_summary.csv"), summary_csv(report)),
        (format!("{p}_trends.csv"), trends_csv(report)),
        (format!("{p}_timing.csv"), timing_csv(report)),
    ];
    if report.kind == ExperimentKind::Crf {
        files.push((format!("{p}_predictions.csv"), predictions_csv(report)));
    }
    let mut paths = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_text(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Human-readable digest for the terminal.
pub fn digest(report: &ExperimentReport) -> String {
    let mut out = format!("{}\n", report.settings);
    for x in report.xs() {
        let baseline = report.model_average(SELF_SCORE, x);
        let mut line = format!("  {}={x}:", report.x_name);
        let mut methods: Vec<&str> = Vec::new();
        for c in report.cells.iter().filter(|c| c.x == x) {
            if !methods.contains(&c.method.as_str()) {
                methods.push(&c.method);
            }
        }
        for m in methods {
            match report.model_average(m, x) {
                Some((mean, se)) => line.push_str(&format!(" {m} {mean:.3}±{se:.3}")),
                None => line.push_str(&format!(" {m} failed")),
            }
        }
        if baseline.is_none() {
            line.push_str(" (no baseline)");
        }
        out.push_str(&line);
        out.push('\n');
    }
    for t in &report.trends {
        out.push_str(&format!(
            "  trend {}: {} ({})\n",
            t.name,
            if t.holds { "holds" } else { "does not hold" },
            t.detail
        ));
    }
    for p in &report.predictions {
        out.push_str(&format!(
            "  n={} {}: error {:.4} ± {:.4}\n",
            p.n, p.predictor, p.rate, p.se
        ));
    }
    out
}
