//! Minimal SVG line charts of the emitted tables.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::commands::Table;
use crate::error::{CliError, Result};

struct Chart {
    table: &'static str,
    x: &'static str,
    ys: &'static [&'static str],
    /// Column splitting the rows into one line per distinct value.
    group: Option<&'static str>,
    log_x: bool,
    log_y: bool,
}

const CHARTS: &[Chart] = &[
    Chart { table: "trap", x: "d", ys: &["f"], group: None, log_x: false, log_y: false },
    Chart { table: "scaling", x: "photon_number", ys: &["qfi_d"], group: None, log_x: true, log_y: true },
    Chart { table: "evolve", x: "omega_t", ys: &["qfi", "phase_qfi"], group: None, log_x: false, log_y: false },
    Chart { table: "decohere", x: "omega_t", ys: &["qfi"], group: Some("gamma"), log_x: false, log_y: false },
    Chart { table: "cfi", x: "omega_t", ys: &["homodyne_cfi"], group: Some("theta"), log_x: false, log_y: false },
];

type Series = (String, Vec<(f64, f64)>);

fn series(table: &Table, chart: &Chart) -> Vec<Series> {
    let x = table.column(chart.x).expect("plot column exists");
    let mut out = Vec::new();
    for &name in chart.ys {
        let y = table.column(name).expect("plot column exists");
        match chart.group.and_then(|g| table.column(g)) {
            None => out.push((name.to_string(), table.rows.iter().map(|r| (r[x], r[y])).collect())),
            Some(g) => {
                let mut keys: Vec<f64> = Vec::new();
                for r in &table.rows {
                    if !keys.contains(&r[g]) {
                        keys.push(r[g]);
                    }
                }
                for k in keys {
                    let pts = table.rows.iter().filter(|r| r[g] == k).map(|r| (r[x], r[y])).collect();
                    out.push((format!("{name} {}={k:.4}", chart.group.unwrap()), pts));
                }
            }
        }
    }
    out
}

fn range(values: impl Iterator<Item = f64>, log: bool) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && (!log || *v > 0.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        return None;
    }
    if hi > lo {
        Some((lo, hi))
    } else if log {
        Some((lo / 2.0, hi * 2.0))
    } else {
        Some((lo - 0.5, hi + 0.5))
    }
}

fn draw(path: &Path, table: &Table, chart: &Chart, lines: &[Series]) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let all = || lines.iter().flat_map(|(_, pts)| pts.iter());
    let Some(xr) = range(all().map(|p| p.0), chart.log_x) else { return Ok(()) };
    let Some(yr) = range(all().map(|p| p.1), chart.log_y) else { return Ok(()) };
    let root = SVGBackend::new(path, (720, 450)).into_drawing_area();
    root.fill(&WHITE)?;
    let x_label = &table.columns[table.column(chart.x).unwrap()];
    let mut builder = ChartBuilder::on(&root);
    builder.caption(&table.name, ("sans-serif", 18)).margin(12).x_label_area_size(40).y_label_area_size(70);
    let style = |i: usize| Palette99::pick(i).stroke_width(2);
    let keep = |p: &&(f64, f64)| (!chart.log_x || p.0 > 0.0) && (!chart.log_y || p.1 > 0.0);

    macro_rules! render {
        ($chart:expr) => {{
            let mut chart = $chart;
            chart.configure_mesh().x_desc(x_label.as_str()).draw()?;
            for (i, (name, pts)) in lines.iter().enumerate() {
                chart
                    .draw_series(LineSeries::new(pts.iter().filter(keep).cloned(), style(i)))?
                    .label(name.as_str())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], style(i)));
            }
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        }};
    }
    match (chart.log_x, chart.log_y) {
        (false, false) => render!(builder.build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)?),
        (true, false) => render!(builder.build_cartesian_2d((xr.0..xr.1).log_scale(), yr.0..yr.1)?),
        (false, true) => render!(builder.build_cartesian_2d(xr.0..xr.1, (yr.0..yr.1).log_scale())?),
        (true, true) => render!(builder.build_cartesian_2d((xr.0..xr.1).log_scale(), (yr.0..yr.1).log_scale())?),
    }
    root.present()?;
    Ok(())
}

/// Writes `dir/<name>.svg` for each table that has a chart layout.
pub fn write_plots(dir: &Path, tables: &[Table]) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for table in tables {
        let Some(chart) = CHARTS.iter().find(|s| s.table == table.name) else { continue };
        let path = dir.join(format!("{}.svg", table.name));
        draw(&path, table, chart, &series(table, chart)).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        if path.exists() {
            written.push(path);
        }
    }
    Ok(written)
}
