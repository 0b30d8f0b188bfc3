//! Writing experiment reports: the full JSON plus flat CSV tables for
//! spreadsheets and plotting tools.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use crate::experiments::{ExperimentReport, ModelKind, Question};
use crate::io::create;

/// JSON Schema the report files follow.
pub const REPORT_SCHEMA: &str = include_str!("../schema/experiment-report.schema.json");

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn prefix(q: Question) -> &'static str {
    match q {
        Question::Q1 => "q1",
        Question::Q2 => "q2",
        Question::Q3 => "q3",
    }
}

pub fn report_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

/// Family ranking: one row per family, best first.
pub fn ranking_csv<W: Write>(out: W, report: &ExperimentReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rank",
        "family",
        "normalized_nllh",
        "ks_rejection_pct",
        "n_fitted",
        "n_failed",
    ])?;
    if let Some(q1) = &report.q1 {
        for (i, row) in q1.ranking.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                row.family.tag().to_string(),
                fmt(row.normalized_nllh),
                fmt(row.rejection_rate),
                row.fits.len().to_string(),
                row.failures.len().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean normalized NLLH across folds: a train row and a test row, one
/// column per model. Empty cells mark models that failed on every fold.
pub fn summary_csv<W: Write>(out: W, report: &ExperimentReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(q2) = &report.q2 else {
        return Ok(());
    };
    let mut header = vec!["split".to_string()];
    header.extend(q2.summary.iter().map(|s| s.model.name().to_string()));
    w.write_record(&header)?;
    for split in ["train", "test"] {
        let mut row = vec![split.to_string()];
        for s in &q2.summary {
            let v = if split == "train" { s.train } else { s.test };
            row.push(v.map(|v| fmt(v.mean)).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long format: one row per fold, model and split.
pub fn q2_folds_csv<W: Write>(out: W, report: &ExperimentReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "model", "split", "normalized_nllh", "n_instances", "error"])?;
    if let Some(q2) = &report.q2 {
        for fold in &q2.folds {
            for run in &fold.runs {
                for (split, e) in [("train", &run.train), ("test", &run.test)] {
                    w.write_record([
                        fold.fold.to_string(),
                        run.model.name().to_string(),
                        split.to_string(),
                        e.as_ref().map(|e| fmt(e.normalized_nllh)).unwrap_or_default(),
                        e.as_ref().map(|e| e.instances.len().to_string()).unwrap_or_default(),
                        run.error.clone().unwrap_or_default(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Test NLLH against observations per training instance, plus the gold
/// standard (which does not depend on k) repeated at every k.
pub fn curve_csv<W: Write>(out: W, report: &ExperimentReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "k", "mean", "std", "n", "failed_runs"])?;
    if let Some(q3) = &report.q3 {
        for p in &q3.curve {
            w.write_record([
                p.model.name().to_string(),
                p.k.to_string(),
                p.test.map(|s| fmt(s.mean)).unwrap_or_default(),
                p.test.map(|s| fmt(s.std)).unwrap_or_default(),
                p.test.map(|s| s.n.to_string()).unwrap_or_default(),
                p.failed_runs.to_string(),
            ])?;
        }
        for &k in &q3.k_grid {
            let g = q3.gold_summary;
            w.write_record([
                ModelKind::Fitted.name().to_string(),
                k.to_string(),
                fmt(g.mean),
                fmt(g.std),
                g.n.to_string(),
                "0".to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the report JSON and its CSV tables into `dir`; returns the paths.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> anyhow::Result<Vec<PathBuf>> {
    let q = prefix(report.question);
    let json = dir.join(format!("{q}_report.json"));
    create(&json)?
        .write_all(report_json(report).as_bytes())
        .with_context(|| json.display().to_string())?;
    let mut written = vec![json];
    type Table = fn(std::fs::File, &ExperimentReport) -> csv::Result<()>;
    let tables: Vec<(&str, Table)> = match report.question {
        Question::Q1 => vec![("ranking.csv", ranking_csv)],
        Question::Q2 => vec![("summary.csv", summary_csv), ("folds.csv", q2_folds_csv)],
        Question::Q3 => vec![("curve.csv", curve_csv)],
    };
    for (name, table) in tables {
        let path = dir.join(format!("{q}_{name}"));
        table(create(&path)?, report).with_context(|| path.display().to_string())?;
        written.push(path);
    }
    Ok(written)
}
