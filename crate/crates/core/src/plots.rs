//! SVG plots of a trace CSV: one file per signal family, with dashed
//! markers at breaker closures.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::PlotError;

/// (column suffix, file stem, axis label)
pub const PANELS: [(&str, &str, &str); 5] = [
    ("P", "active_power", "P (kW)"),
    ("f", "frequency", "f (Hz)"),
    ("Q", "reactive_power", "Q (kVAr)"),
    ("V", "voltage", "V (V)"),
    ("delta", "phase", "delta (deg)"),
];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize, PlotError> {
        self.header.iter().position(|h| h == name).ok_or_else(|| PlotError::MissingColumn(name.to_string()))
    }

    fn values(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[c])
    }
}

fn read(csv_path: &Path) -> Result<Table, PlotError> {
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| PlotError::Malformed(e.to_string()))?;
    let header: Vec<String> =
        rdr.headers().map_err(|e| PlotError::Malformed(e.to_string()))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| PlotError::Malformed(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| PlotError::Malformed(format!("row {}: {e}", k + 1)))?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Times at which any `_latched` column rises.
fn closure_times(table: &Table, t_col: usize) -> Vec<f64> {
    let cols: Vec<usize> =
        table.header.iter().enumerate().filter(|(_, h)| h.ends_with("_latched")).map(|(i, _)| i).collect();
    let mut out = Vec::new();
    for w in 1..table.rows.len() {
        if cols.iter().any(|&c| table.rows[w - 1][c] < 0.5 && table.rows[w][c] >= 0.5) {
            out.push(table.rows[w][t_col]);
        }
    }
    if let Some(first) = table.rows.first() {
        if cols.iter().any(|&c| first[c] >= 0.5) {
            out.insert(0, first[t_col]);
        }
    }
    out
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    let pad = if span > 0.0 { 0.05 * span } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad, hi + pad)
}

/// Write the five panel SVGs into `out_dir` and return their paths.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, PlotError> {
    let table = read(csv_path)?;
    let t_col = table.column("t")?;
    let ibrs: Vec<String> =
        table.header.iter().filter_map(|h| h.strip_suffix("_P").map(str::to_string)).collect();
    let mut panel_cols = Vec::new();
    for (suffix, _, _) in PANELS {
        let cols = ibrs.iter().map(|id| table.column(&format!("{id}_{suffix}"))).collect::<Result<Vec<_>, _>>()?;
        panel_cols.push(cols);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| PlotError::Draw(e.to_string()))?;
    let closures = closure_times(&table, t_col);

    let (t0, t1) = if table.rows.is_empty() {
        (0.0, 1.0)
    } else {
        let lo = table.values(t_col).fold(f64::INFINITY, f64::min);
        let hi = table.values(t_col).fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { padded(lo, hi) }
    };

    let mut paths = Vec::new();
    for ((suffix, stem, label), cols) in PANELS.iter().zip(&panel_cols) {
        let scale = if *suffix == "P" || *suffix == "Q" { 1e-3 } else { 1.0 };
        let (lo, hi) = cols.iter().flat_map(|&c| table.values(c)).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v * scale), b.max(v * scale))
        });
        let (y0, y1) = if table.rows.is_empty() { (0.0, 1.0) } else { padded(lo, hi) };

        let path = out_dir.join(format!("{stem}.svg"));
        {
            let root = SVGBackend::new(&path, (900, 320)).into_drawing_area();
            let draw = |e: &dyn std::fmt::Display| PlotError::Draw(e.to_string());
            root.fill(&WHITE).map_err(|e| draw(&e))?;
            let mut chart = ChartBuilder::on(&root)
                .margin(12)
                .x_label_area_size(36)
                .y_label_area_size(70)
                .build_cartesian_2d(t0..t1, y0..y1)
                .map_err(|e| draw(&e))?;
            chart.configure_mesh().x_desc("t (s)").y_desc(*label).draw().map_err(|e| draw(&e))?;
            for (k, &c) in cols.iter().enumerate() {
                let color = Palette99::pick(k).to_rgba();
                chart
                    .draw_series(LineSeries::new(table.rows.iter().map(|r| (r[t_col], r[c] * scale)), color.stroke_width(1)))
                    .map_err(|e| draw(&e))?;
            }
            for &tc in &closures {
                let dashes = (0..40).filter(|i| i % 2 == 0).map(|i| {
                    let a = y0 + (y1 - y0) * i as f64 / 40.0;
                    let b = y0 + (y1 - y0) * (i + 1) as f64 / 40.0;
                    PathElement::new(vec![(tc, a), (tc, b)], BLACK.stroke_width(1))
                });
                chart.draw_series(dashes).map_err(|e| draw(&e))?;
            }
            root.present().map_err(|e| draw(&e))?;
        }
        paths.push(path);
    }
    Ok(paths)
}
