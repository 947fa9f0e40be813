//! CSV serialization for run artifacts. Floating-point cells use 17
//! significant digits so every f64 round-trips exactly.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::detect::DetectionReport;
use crate::error::{Error, Result};
use crate::optim::RunMetrics;
use crate::problem::NodeDataset;

/// 17-significant-digit scientific form; parses back to the identical f64.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.16e}")
}

pub fn parse_f64(cell: &str) -> Result<f64> {
    match cell.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other
            .parse::<f64>()
            .map_err(|e| Error::Data(format!("bad float cell {other:?}: {e}"))),
    }
}

/// Detection dump: one row per scored pair plus one summary row holding the
/// network-averaged FDP and sure-detection rate.
pub fn detection_csv(report: &DetectionReport) -> String {
    let mut out = String::from("kind,node,neighbor,score,threshold,detected,truth_byzantine,avg_fdp,avg_pa\n");
    for row in &report.rows {
        out.push_str(&format!(
            "score,{},{},{},{},{},{},,\n",
            row.node,
            row.neighbor,
            fmt_f64(row.score),
            fmt_f64(row.threshold),
            row.detected as u8,
            row.truth_byzantine as u8,
        ));
    }
    out.push_str(&format!(
        "summary,,,,,,,{},{}\n",
        fmt_f64(report.averaged_fdp),
        fmt_f64(report.averaged_pa)
    ));
    out
}

/// Per-iteration optimization metrics.
pub fn metrics_csv(metrics: &RunMetrics) -> String {
    let mut out =
        String::from("k,eta,gap,grad_norm_bar,grad_norm_tilde,consensus_mk,tracking_residual\n");
    for r in &metrics.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.k,
            fmt_f64(r.eta),
            fmt_f64(r.gap),
            fmt_f64(r.grad_norm_bar),
            fmt_f64(r.grad_norm_tilde),
            fmt_f64(r.consensus_mk),
            fmt_f64(r.tracking_residual),
        ));
    }
    out
}

/// One dataset per file: covariate columns, response, and split membership.
pub fn dataset_csv(data: &NodeDataset) -> String {
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    header.push("split".into());
    header.push("role".into());
    let mut out = header.join(",");
    out.push('\n');
    let ident: std::collections::BTreeSet<usize> =
        data.identification_indices.iter().copied().collect();
    let role = if data.is_byzantine { "byzantine" } else { "normal" };
    for u in 0..data.len() {
        let mut cells: Vec<String> = (0..d).map(|k| fmt_f64(data.xs[[u, k]])).collect();
        cells.push(fmt_f64(data.ys[u]));
        cells.push(if ident.contains(&u) { "i".into() } else { "w".into() });
        cells.push(role.into());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(node_id: usize, text: &str) -> Result<NodeDataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Data("empty dataset CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 {
        return Err(Error::Data("dataset CSV header too short".into()));
    }
    let d = cols.len() - 3;
    let mut xs: Vec<f64> = Vec::new();
    let mut ys = Vec::new();
    let mut warm = Vec::new();
    let mut ident = Vec::new();
    let mut byz = false;
    for (u, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(Error::Data(format!("dataset CSV row {u} has wrong arity")));
        }
        for c in &cells[..d] {
            xs.push(parse_f64(c)?);
        }
        ys.push(parse_f64(cells[d])?);
        match cells[d + 1].trim() {
            "w" => warm.push(u),
            "i" => ident.push(u),
            other => return Err(Error::Data(format!("bad split tag {other:?}"))),
        }
        byz = matches!(cells[d + 2].trim(), "byzantine");
    }
    let n = ys.len();
    Ok(NodeDataset {
        node_id,
        xs: Array2::from_shape_vec((n, d), xs)
            .map_err(|e| Error::Data(format!("dataset CSV shape: {e}")))?,
        ys: Array1::from(ys),
        is_byzantine: byz,
        warmup_indices: warm,
        identification_indices: ident,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}
