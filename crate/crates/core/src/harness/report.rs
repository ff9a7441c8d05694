use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{Method, SweepRow};
use crate::error::{Error, Result};

/// Header of every sweep CSV, in order.
pub const SWEEP_COLUMNS: [&str; 9] =
    ["axis", "value", "repeat", "method", "n_maps", "mse", "kmse", "rkmse", "link_error_rate"];

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    crate::training::write_trace(path, rows)
}

/// Reads a sweep CSV, rejecting a wrong header, unparsable cells, mixed
/// axes and non-finite scores.
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let bad = |e: csv::Error| Error::Schema(format!("{}: {e}", path.display()));
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers().map_err(bad)?.iter().map(str::to_owned).collect();
    if header != SWEEP_COLUMNS {
        return Err(Error::Schema(format!("{}: header {header:?}, expected {SWEEP_COLUMNS:?}", path.display())));
    }
    let rows: Vec<SweepRow> = r.deserialize().collect::<std::result::Result<_, _>>().map_err(bad)?;
    if rows.is_empty() {
        return Err(Error::Schema(format!("{}: no rows", path.display())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.axis != rows[0].axis {
            return Err(Error::Schema(format!("{}: row {i} mixes axes", path.display())));
        }
        if ![row.value, row.mse, row.kmse, row.rkmse, row.link_error_rate].iter().all(|v| v.is_finite()) {
            return Err(Error::Schema(format!("{}: row {i} has a non-finite cell", path.display())));
        }
    }
    Ok(rows)
}

#[derive(Default)]
struct Mean {
    n: usize,
    mse: f64,
    kmse: f64,
    rkmse: f64,
    ler: f64,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "yes"
    } else {
        "no"
    }
}

/// Markdown: a table of repeat-averaged scores per axis value and method,
/// directional comparisons between methods, a monotonicity check along
/// SNR, and a plot-ready CSV block (one column per method).
pub fn render_report(rows: &[SweepRow]) -> String {
    let Some(first) = rows.first() else { return "No sweep rows.\n".into() };
    let axis = first.axis.as_str();
    let mut values: Vec<f64> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    let mut cells: BTreeMap<(usize, String), Mean> = BTreeMap::new();
    for r in rows {
        let vi = match values.iter().position(|v| v.to_bits() == r.value.to_bits()) {
            Some(i) => i,
            None => {
                values.push(r.value);
                values.len() - 1
            }
        };
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        let m = cells.entry((vi, r.method.to_string())).or_default();
        m.n += 1;
        m.mse += r.mse;
        m.kmse += r.kmse;
        m.rkmse += r.rkmse;
        m.ler += r.link_error_rate;
    }
    let mean = |vi: usize, m: Method| -> Option<(f64, f64, f64, f64)> {
        cells.get(&(vi, m.to_string())).map(|c| {
            let n = c.n as f64;
            (c.mse / n, c.kmse / n, c.rkmse / n, c.ler / n)
        })
    };

    let mut out = String::new();
    let _ = writeln!(out, "# Sweep over `{axis}`\n");
    let _ = writeln!(out, "| {axis} | method | repeats | MSE | KMSE | RKMSE | link error rate |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    for (vi, v) in values.iter().enumerate() {
        for &m in &methods {
            if let Some((mse, kmse, rkmse, ler)) = mean(vi, m) {
                let n = cells[&(vi, m.to_string())].n;
                let _ = writeln!(out, "| {v} | {m} | {n} | {mse:.4} | {kmse:.4} | {rkmse:.4} | {ler:.4} |");
            }
        }
    }

    if methods.contains(&Method::Codec) && methods.contains(&Method::Idw) {
        let _ = writeln!(out, "\n## Directional comparison\n");
        let _ = writeln!(out, "| {axis} | RKMSE codec < idw |");
        let _ = writeln!(out, "|---|---|");
        for (vi, v) in values.iter().enumerate() {
            if let (Some(c), Some(i)) = (mean(vi, Method::Codec), mean(vi, Method::Idw)) {
                let _ = writeln!(out, "| {v} | {} ({:.4} vs {:.4}) |", mark(c.2 < i.2), c.2, i.2);
            }
        }
    }

    if axis == "snr" && values.len() > 1 {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let _ = writeln!(out, "\n## Monotone in SNR\n");
        let _ = writeln!(out, "| method | RKMSE non-increasing | link error rate non-increasing |");
        let _ = writeln!(out, "|---|---|---|");
        for &m in &methods {
            let series: Vec<(f64, f64)> =
                order.iter().filter_map(|&vi| mean(vi, m)).map(|(_, _, rk, ler)| (rk, ler)).collect();
            let rk = series.windows(2).all(|w| w[1].0 <= w[0].0);
            let ler = series.windows(2).all(|w| w[1].1 <= w[0].1);
            let _ = writeln!(out, "| {m} | {} | {} |", mark(rk), mark(ler));
        }
    }

    let _ = writeln!(out, "\n## Plot data\n\n```csv");
    let mut head = axis.to_string();
    for m in &methods {
        let _ = write!(head, ",{m}_mse,{m}_kmse,{m}_rkmse");
    }
    let _ = writeln!(out, "{head}");
    for (vi, v) in values.iter().enumerate() {
        let mut line = v.to_string();
        for &m in &methods {
            match mean(vi, m) {
                Some((mse, kmse, rkmse, _)) => {
                    let _ = write!(line, ",{mse},{kmse},{rkmse}");
                }
                None => line.push_str(",,,"),
            }
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "```");
    out
}
