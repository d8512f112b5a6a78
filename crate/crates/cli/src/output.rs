//! CSV writers for the command outputs. Every file has a header row and a
//! fixed column order.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use hompinn::network::NetworkParams;
use hompinn::oracle::SolutionTable;
use hompinn::problems::DeProblem;
use hompinn::trainer::{DiscoveryOutcome, RobustnessOutcome, SweepOutcome, TrainingRecord};

/// Opens `path` for writing, runs `f` and flushes; errors name the file.
pub fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Evaluation points of the dense dump: 501 on the line, 101 x 101 on the
/// square with x varying fastest.
pub fn dense_points(dim: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => (0..501).map(|i| vec![i as f64 / 500.0]).collect(),
        _ => (0..101 * 101)
            .map(|i| vec![(i % 101) as f64 / 100.0, (i / 101) as f64 / 100.0])
            .collect(),
    }
}

/// Columns: coordinates, then `<component>_<m>` for every output group.
pub fn predictions(params: &NetworkParams, problem: &DeProblem, w: impl Write) -> Result<()> {
    let cfg = params.config();
    let axes = ["x", "y"];
    let mut out = csv_writer(w);
    let mut header: Vec<String> = axes[..problem.dim()].iter().map(|s| s.to_string()).collect();
    for m in 0..cfg.output_groups {
        for label in problem.component_labels() {
            header.push(format!("{label}_{m}"));
        }
    }
    out.write_record(&header)?;
    for x in dense_points(problem.dim()) {
        let u = params.forward(&x)?;
        let row: Vec<String> = x.iter().chain(&u).map(|&v| num(v)).collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Columns: m, λ labels, `err_<label>`, train_loss, test_loss, failure.
pub fn sweep(outcome: &SweepOutcome, labels: &[&str], w: impl Write) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["m".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    header.extend(labels.iter().map(|l| format!("err_{l}")));
    header.extend(["train_loss", "test_loss", "failure"].map(String::from));
    out.write_record(&header)?;
    for r in &outcome.rows {
        let mut row = vec![r.m.to_string()];
        for i in 0..labels.len() {
            row.push(opt(r.lambda.get(i).copied()));
        }
        for i in 0..labels.len() {
            row.push(opt(r.err.get(i).copied()));
        }
        row.push(num(r.train_loss));
        row.push(opt(r.test_loss));
        row.push(r.failure.clone().unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Long format, one row per trial and step; step 0 holds λ₀.
/// Columns: trial, k, λ labels, converged, failure.
pub fn trajectories(outcome: &RobustnessOutcome, labels: &[&str], w: impl Write) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header = vec!["trial".to_string(), "k".to_string()];
    header.extend(labels.iter().map(|l| l.to_string()));
    header.extend(["converged", "failure"].map(String::from));
    out.write_record(&header)?;
    for t in &outcome.trials {
        for (k, lambda) in std::iter::once(&t.lambda0).chain(&t.trajectory).enumerate() {
            let mut row = vec![t.trial.to_string(), k.to_string()];
            row.extend(lambda.iter().map(|&v| num(v)));
            row.push(t.converged.to_string());
            row.push(t.failure.clone().unwrap_or_default());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Grid values of each discovered solution. Columns: x, then per solution
/// `sol_<i>` (polished) and `net_<i>` (network curve).
pub fn discovered(outcome: &DiscoveryOutcome, w: impl Write) -> Result<()> {
    let table = &outcome.table;
    let mut out = csv_writer(w);
    let mut header = vec!["x".to_string()];
    for i in 0..table.solutions.len() {
        header.push(format!("sol_{i}"));
        header.push(format!("net_{i}"));
    }
    out.write_record(&header)?;
    for j in 0..table.grid.len() {
        let mut row = vec![num(table.grid.node(j)[0])];
        for (s, curve) in table.solutions.iter().zip(&outcome.network_curves) {
            row.push(num(s.values[j]));
            row.push(num(curve[j]));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Match of each discovered solution against the oracle table.
pub struct OracleMatch {
    pub index: usize,
    pub u0: f64,
    pub residual_rms: f64,
    pub network_residual: f64,
    pub oracle_index: Option<usize>,
    pub distance: f64,
}

pub fn matches(rows: &[OracleMatch], w: impl Write) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["solution", "u0", "residual_rms", "network_residual", "oracle_index", "distance"])?;
    for r in rows {
        out.write_record([
            r.index.to_string(),
            num(r.u0),
            num(r.residual_rms),
            num(r.network_residual),
            r.oracle_index.map(|i| i.to_string()).unwrap_or_default(),
            num(r.distance),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Closest oracle solution to each entry of `found`.
pub fn match_against(found: &SolutionTable, oracle: &SolutionTable, threshold: f64) -> Vec<(Option<usize>, f64)> {
    found
        .solutions
        .iter()
        .map(|s| {
            let best = oracle
                .solutions
                .iter()
                .enumerate()
                .map(|(i, o)| (i, hompinn::oracle::relative_distance(&o.values, &s.values)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, d)) if d <= threshold => (Some(i), d),
                Some((_, d)) => (None, d),
                None => (None, f64::INFINITY),
            }
        })
        .collect()
}

/// One summary row per (record file, process): the last step of each
/// process. Columns: source, process, k, alpha, λ labels, `err_<label>`,
/// train_loss, test_loss.
pub fn summary(records: &[(String, TrainingRecord)], w: impl Write) -> Result<Vec<Vec<String>>> {
    let mut out = csv_writer(w);
    let labels = records.first().map(|(_, r)| r.lambda_labels.clone()).unwrap_or_default();
    let mut header = vec!["source".to_string(), "process".into(), "k".into(), "alpha".into()];
    header.extend(labels.iter().cloned());
    header.extend(labels.iter().map(|l| format!("err_{l}")));
    header.extend(["train_loss", "test_loss"].map(String::from));
    out.write_record(&header)?;
    let mut table = vec![header];
    for (source, record) in records {
        let mut last: Vec<&hompinn::trainer::RecordRow> = Vec::new();
        for row in &record.rows {
            match last.last_mut() {
                Some(prev) if prev.process == row.process => *prev = row,
                _ => last.push(row),
            }
        }
        for r in last {
            let mut row = vec![source.clone(), r.process.to_string(), r.k.to_string(), num(r.alpha)];
            row.extend(r.lambda.iter().map(|&v| num(v)));
            row.extend((0..labels.len()).map(|i| opt(r.err.get(i).copied())));
            row.push(num(r.train_loss));
            row.push(opt(r.test_loss));
            out.write_record(&row)?;
            table.push(row);
        }
    }
    out.flush()?;
    Ok(table)
}

/// Pads columns for terminal display.
pub fn aligned(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| table.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    table
        .iter()
        .map(|r| {
            r.iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

