//! Writing a [`SelectionReport`] as JSON plus flat CSV projections.
//!
//! | file | columns |
//! |------|---------|
//! | `values.csv` | `flip_ratio,player_index,value,stderr` |
//! | `selection.csv` | `flip_ratio,k,chosen_utility,optimal_utility,optimal_exact,random_mean,random_max,normalized_diff` |
//! | `fit.csv` | `flip_ratio,sample_count,normalized_residual,residual,train_loss,iterations,converged,evaluation_split` |
//! | `consistency.csv` | `flip_ratio,rho,cor,stderr,method,mtm_bound` |
//!
//! Game sources leave `flip_ratio` empty, as do all absent optional values.
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so each CSV cell equals the corresponding `report.json` number.

use std::fs;
use std::path::Path;

use shapsel::consistency::ConsistencyMethod;

use crate::error::{CliError, CliResult, Stage};
use crate::experiment::SelectionReport;

pub const REPORT_FILES: [&str; 5] = [
    "report.json",
    "values.csv",
    "selection.csv",
    "fit.csv",
    "consistency.csv",
];

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::invalid(Stage::Report, e.to_string());
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(&r).map_err(fail)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::invalid(Stage::Report, e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn values_csv(report: &SelectionReport) -> CliResult<String> {
    let mut rows = Vec::new();
    for rec in &report.records {
        for (i, phi) in rec.values.phi.iter().enumerate() {
            let se = rec.value_stderr.as_ref().map(|s| s[i]);
            rows.push(vec![opt(rec.flip_ratio), i.to_string(), num(*phi), opt(se)]);
        }
    }
    csv_text(&["flip_ratio", "player_index", "value", "stderr"], rows)
}

pub fn selection_csv(report: &SelectionReport) -> CliResult<String> {
    let mut rows = Vec::new();
    for rec in &report.records {
        for s in &rec.selections {
            let o = &s.outcome;
            rows.push(vec![
                opt(rec.flip_ratio),
                o.k.to_string(),
                num(o.chosen_utility),
                num(o.optimal_utility),
                o.optimal_exact.to_string(),
                num(o.random_mean_utility),
                num(o.random_max_utility),
                opt(o.normalized_diff),
            ]);
        }
    }
    csv_text(
        &[
            "flip_ratio",
            "k",
            "chosen_utility",
            "optimal_utility",
            "optimal_exact",
            "random_mean",
            "random_max",
            "normalized_diff",
        ],
        rows,
    )
}

pub fn fit_csv(report: &SelectionReport) -> CliResult<String> {
    let mut rows = Vec::new();
    for rec in &report.records {
        let f = &rec.fit;
        let r = f.report.as_ref();
        rows.push(vec![
            opt(rec.flip_ratio),
            f.sample_count.to_string(),
            opt(r.and_then(|r| r.normalized_residual)),
            opt(r.map(|r| r.residual)),
            opt(r.map(|r| r.train_loss)),
            r.map(|r| r.iterations.to_string()).unwrap_or_default(),
            r.map(|r| r.converged.to_string()).unwrap_or_default(),
            r.map(|r| format!("{:?}", r.evaluation_split).to_lowercase())
                .unwrap_or_default(),
        ]);
    }
    csv_text(
        &[
            "flip_ratio",
            "sample_count",
            "normalized_residual",
            "residual",
            "train_loss",
            "iterations",
            "converged",
            "evaluation_split",
        ],
        rows,
    )
}

pub fn consistency_csv(report: &SelectionReport) -> CliResult<String> {
    let mut rows = Vec::new();
    for rec in &report.records {
        for c in &rec.consistency {
            let e = c.estimate.as_ref();
            let method = e.map(|e| match e.method {
                ConsistencyMethod::Exact => "exact",
                ConsistencyMethod::Mc { .. } => "mc",
            });
            rows.push(vec![
                opt(rec.flip_ratio),
                num(c.rho),
                opt(e.map(|e| e.cor)),
                opt(e.and_then(|e| e.stderr)),
                method.unwrap_or_default().to_string(),
                opt(c.mtm_bound),
            ]);
        }
    }
    csv_text(
        &["flip_ratio", "rho", "cor", "stderr", "method", "mtm_bound"],
        rows,
    )
}

/// Renders every output file in memory.
pub fn render(report: &SelectionReport) -> CliResult<Vec<(&'static str, String)>> {
    let json =
        serde_json::to_string_pretty(report).map_err(|e| CliError::invalid(Stage::Report, e.to_string()))?;
    Ok(vec![
        (REPORT_FILES[0], json + "\n"),
        (REPORT_FILES[1], values_csv(report)?),
        (REPORT_FILES[2], selection_csv(report)?),
        (REPORT_FILES[3], fit_csv(report)?),
        (REPORT_FILES[4], consistency_csv(report)?),
    ])
}

/// Writes all files into `dir`. Each lands via a temporary file and a rename,
/// and nothing is renamed until every file has been written.
pub fn emit_report(report: &SelectionReport, dir: &Path) -> CliResult<()> {
    let files = render(report)?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(Stage::Report, dir, e))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, text) in &files {
        let tmp = dir.join(format!(".{name}.tmp"));
        if let Err(e) = fs::write(&tmp, text) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(CliError::io(Stage::Report, &tmp, e));
        }
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, dest) in staged {
        fs::rename(&tmp, &dest).map_err(|e| CliError::io(Stage::Report, &dest, e))?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> CliResult<SelectionReport> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(Stage::Report, path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(Stage::Report, e.to_string()))
}
