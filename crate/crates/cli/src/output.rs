//! Artifact emission: CSV files with shortest round-trip float encoding,
//! the measure CSV parser, and a minimal SVG ribbon plot.

use enstrack::measures::DiscreteMeasure;
use enstrack::Matrix;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::CliError;

/// Shortest decimal representation that round-trips through f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

/// Plain matrix CSV: one row per line, no header.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<(), CliError> {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| fmt_f64(*v)).collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    write_file(path, &out)
}

/// Measure CSV: header `x_1..x_n,weight`, one row per atom.
pub fn write_measure_csv(path: &Path, mu: &DiscreteMeasure) -> Result<(), CliError> {
    let n = mu.dim();
    let mut out = String::new();
    let header: Vec<String> = (1..=n)
        .map(|i| format!("x_{i}"))
        .chain(std::iter::once("weight".to_string()))
        .collect();
    writeln!(out, "{}", header.join(",")).unwrap();
    for (atom, w) in mu.atoms().iter().zip(mu.weights()) {
        let row: Vec<String> = atom
            .iter()
            .map(|v| fmt_f64(*v))
            .chain(std::iter::once(fmt_f64(*w)))
            .collect();
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    write_file(path, &out)
}

/// Parses the measure CSV schema back into a discrete measure.
pub fn read_measure_csv(path: &Path) -> Result<DiscreteMeasure, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut atoms = Vec::new();
    let mut weights = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(CliError::config(format!(
                "{}:{}: need at least one coordinate and a weight",
                path.display(),
                lineno + 1
            )));
        }
        let parsed: Result<Vec<f64>, _> = fields.iter().map(|f| f.trim().parse()).collect();
        match parsed {
            Ok(values) => {
                let (w, coords) = values.split_last().unwrap();
                atoms.push(coords.to_vec());
                weights.push(*w);
            }
            Err(_) if lineno == 0 => continue, // header row
            Err(e) => {
                return Err(CliError::config(format!(
                    "{}:{}: {e}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    DiscreteMeasure::new(atoms, weights)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// Time-series CSV: `t,v_1..v_n,S_11..S_nn` with the covariance flattened
/// row-major.
pub fn write_series_csv(
    path: &Path,
    times: &[f64],
    samples: &[(Vec<f64>, Matrix)],
) -> Result<(), CliError> {
    let n = samples.first().map_or(0, |(m, _)| m.len());
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("v_{i}")));
    for i in 1..=n {
        for j in 1..=n {
            header.push(format!("S_{i}{j}"));
        }
    }
    writeln!(out, "{}", header.join(",")).unwrap();
    for (t, (mean, cov)) in times.iter().zip(samples) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(mean.iter().map(|v| fmt_f64(*v)));
        row.extend(cov.data().iter().map(|v| fmt_f64(*v)));
        writeln!(out, "{}", row.join(",")).unwrap();
    }
    write_file(path, &out)
}

/// Plan CSV: `i,j,mass` for entries above the support threshold.
pub fn write_plan_csv(path: &Path, plan: &Matrix, threshold: f64) -> Result<(), CliError> {
    let mut out = String::new();
    writeln!(out, "i,j,mass").unwrap();
    for i in 0..plan.rows() {
        for j in 0..plan.cols() {
            let mass = plan.get(i, j);
            if mass > threshold {
                writeln!(out, "{i},{j},{}", fmt_f64(mass)).unwrap();
            }
        }
    }
    write_file(path, &out)
}

/// CDF CSV: `t,mass` step points.
pub fn write_cdf_csv(
    path: &Path,
    steps: impl Iterator<Item = (f64, f64)>,
) -> Result<(), CliError> {
    let mut out = String::new();
    writeln!(out, "t,mass").unwrap();
    for (t, mass) in steps {
        writeln!(out, "{},{}", fmt_f64(t), fmt_f64(mass)).unwrap();
    }
    write_file(path, &out)
}

/// Interpolant CSV: `t,x_1..x_n,weight`, concatenating the sampled
/// measures over time.
pub fn write_interpolant_csv(
    path: &Path,
    times: &[f64],
    measures: &[DiscreteMeasure],
) -> Result<(), CliError> {
    let n = measures.first().map_or(0, DiscreteMeasure::dim);
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.push("weight".to_string());
    writeln!(out, "{}", header.join(",")).unwrap();
    for (t, mu) in times.iter().zip(measures) {
        for (atom, w) in mu.atoms().iter().zip(mu.weights()) {
            let mut row = vec![fmt_f64(*t)];
            row.extend(atom.iter().map(|v| fmt_f64(*v)));
            row.push(fmt_f64(*w));
            writeln!(out, "{}", row.join(",")).unwrap();
        }
    }
    write_file(path, &out)
}

/// Ribbon plot: per state coordinate, the mean curve with a band of two
/// standard deviations, stacked vertically in one SVG.
pub fn write_ribbon_svg(
    path: &Path,
    times: &[f64],
    samples: &[(Vec<f64>, Matrix)],
) -> Result<(), CliError> {
    let dims = samples.first().map_or(0, |(m, _)| m.len());
    let (panel_w, panel_h, margin) = (640.0, 220.0, 42.0);
    let width = panel_w + 2.0 * margin;
    let height = dims as f64 * (panel_h + margin) + margin;
    let t_lo = times.first().copied().unwrap_or(0.0);
    let t_hi = times.last().copied().unwrap_or(1.0).max(t_lo + 1e-9);
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    for dim in 0..dims {
        let lows: Vec<f64> = samples
            .iter()
            .map(|(m, s)| m[dim] - 2.0 * s.get(dim, dim).max(0.0).sqrt())
            .collect();
        let highs: Vec<f64> = samples
            .iter()
            .map(|(m, s)| m[dim] + 2.0 * s.get(dim, dim).max(0.0).sqrt())
            .collect();
        let v_lo = lows.iter().copied().fold(f64::INFINITY, f64::min);
        let v_hi = highs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.05 * (v_hi - v_lo).max(1e-9);
        let (v_lo, v_hi) = (v_lo - pad, v_hi + pad);
        let top = margin + dim as f64 * (panel_h + margin);
        let x_of = |t: f64| margin + panel_w * (t - t_lo) / (t_hi - t_lo);
        let y_of = |v: f64| top + panel_h * (1.0 - (v - v_lo) / (v_hi - v_lo));
        // band polygon: upper edge left-to-right, lower edge back
        let mut pts = String::new();
        for (t, v) in times.iter().zip(&highs) {
            write!(pts, "{:.2},{:.2} ", x_of(*t), y_of(*v)).unwrap();
        }
        for (t, v) in times.iter().rev().zip(lows.iter().rev()) {
            write!(pts, "{:.2},{:.2} ", x_of(*t), y_of(*v)).unwrap();
        }
        writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"#9ecae8\" fill-opacity=\"0.6\" stroke=\"none\"/>",
            pts.trim_end()
        )
        .unwrap();
        let mut line = String::new();
        for (t, (m, _)) in times.iter().zip(samples) {
            write!(line, "{:.2},{:.2} ", x_of(*t), y_of(m[dim])).unwrap();
        }
        writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"1.5\"/>",
            line.trim_end()
        )
        .unwrap();
        // frame and labels
        writeln!(
            svg,
            "<rect x=\"{margin}\" y=\"{top}\" width=\"{panel_w}\" height=\"{panel_h}\" \
             fill=\"none\" stroke=\"#444\" stroke-width=\"1\"/>"
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" fill=\"#444\">x_{} \
             (mean &#177; 2&#963;)</text>",
            margin,
            top - 6.0,
            dim + 1
        )
        .unwrap();
        for (v, anchor_y) in [(v_hi, top + 12.0), (v_lo, top + panel_h - 3.0)] {
            writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{anchor_y:.2}\" font-size=\"10\" fill=\"#666\" \
                 text-anchor=\"end\">{v:.3}</text>",
                margin - 4.0
            )
            .unwrap();
        }
        for (t, anchor) in [(t_lo, "start"), (t_hi, "end")] {
            writeln!(
                svg,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" fill=\"#666\" \
                 text-anchor=\"{anchor}\">t = {t:.2}</text>",
                x_of(t),
                top + panel_h + 14.0
            )
            .unwrap();
        }
    }
    writeln!(svg, "</svg>").unwrap();
    write_file(path, &svg)
}
