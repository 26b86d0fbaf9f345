use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ResultTable;
use crate::error::{Error, Result};
use crate::scod::ScodMethod;

/// Files written by [`emit_plots`] and any configurations that could not be
/// paired for the improvement series.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotReport {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

type SeriesKey = (String, ScodMethod, String);

/// Accuracy against SNR per `(noise_id, method, noise_states)`, ordered by
/// descending SNR (clean first).
pub fn accuracy_series(table: &ResultTable) -> BTreeMap<SeriesKey, Vec<(f64, f64)>> {
    let mut out: BTreeMap<SeriesKey, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &table.rows {
        out.entry((r.noise_id.clone(), r.method, r.noise_states.clone()))
            .or_default()
            .push((r.snr_db.db(), r.accuracy));
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
    }
    out
}

pub type ImprovementSeries = BTreeMap<(String, ScodMethod), Vec<(f64, f64)>>;

/// `multi − single` accuracy per `(noise_id, method)` at every SNR where
/// both exist, plus warnings for methods without any pair.
pub fn improvement_series(table: &ResultTable) -> (ImprovementSeries, Vec<String>) {
    let series = accuracy_series(table);
    let mut out = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut pairs: Vec<(String, ScodMethod)> = series.keys().map(|(n, m, _)| (n.clone(), *m)).collect();
    pairs.dedup();
    for (noise, method) in pairs {
        let single = series.get(&(noise.clone(), method, "single".into()));
        let multi = series.get(&(noise.clone(), method, "multi".into()));
        let points: Vec<(f64, f64)> = match (single, multi) {
            (Some(s), Some(m)) => m
                .iter()
                .filter_map(|(snr, acc)| s.iter().find(|(x, _)| x == snr).map(|(_, base)| (*snr, acc - base)))
                .collect(),
            _ => Vec::new(),
        };
        if points.is_empty() {
            warnings.push(format!(
                "no single/multi pair for {method} on {noise}; improvement series omitted"
            ));
        } else {
            out.insert((noise, method), points);
        }
    }
    (out, warnings)
}

fn snr_text(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `accuracy_vs_snr.csv`, `improvement.csv` (when any pair exists)
/// and an `accuracy_vs_snr.svg` line chart into `dir`.
pub fn emit_plots(table: &ResultTable, dir: &Path) -> Result<PlotReport> {
    if table.is_empty() {
        return Err(Error::Empty("result table"));
    }
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut report = PlotReport::default();
    let series = accuracy_series(table);

    let mut csv = String::from("noise_id,method,noise_states,snr_db,accuracy\n");
    for ((noise, method, states), points) in &series {
        for (snr, acc) in points {
            let _ = writeln!(csv, "{noise},{method},{states},{},{acc}", snr_text(*snr));
        }
    }
    let path = dir.join("accuracy_vs_snr.csv");
    write_file(&path, &csv)?;
    report.files.push(path);

    let (improvement, warnings) = improvement_series(table);
    report.warnings = warnings;
    if !improvement.is_empty() {
        let mut csv = String::from("noise_id,method,snr_db,improvement\n");
        for ((noise, method), points) in &improvement {
            for (snr, d) in points {
                let _ = writeln!(csv, "{noise},{method},{},{d}", snr_text(*snr));
            }
        }
        let path = dir.join("improvement.csv");
        write_file(&path, &csv)?;
        report.files.push(path);
    }

    let path = dir.join("accuracy_vs_snr.svg");
    write_file(&path, &svg_chart(&series))?;
    report.files.push(path);
    Ok(report)
}

const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn svg_chart(series: &BTreeMap<SeriesKey, Vec<(f64, f64)>>) -> String {
    let (w, h, margin) = (640.0, 420.0, 60.0);
    let finite: Vec<(f64, f64)> = series
        .values()
        .flatten()
        .copied()
        .filter(|(s, _)| s.is_finite())
        .collect();
    let (mut x0, mut x1) = finite
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), (s, _)| (a.min(*s), b.max(*s)));
    let (mut y0, mut y1) = finite
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), (_, v)| (a.min(*v), b.max(*v)));
    if finite.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 100.0);
    }
    if x1 - x0 < 1e-9 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    y0 = y0.min(100.0).floor();
    y1 = y1.max(y0 + 1.0).min(100.0).ceil().max(y0 + 1.0);
    let px = |s: f64| margin + (s - x0) / (x1 - x0) * (w - 2.0 * margin);
    let py = |v: f64| h - margin - (v - y0) / (y1 - y0) * (h - 2.0 * margin);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<path d="M{m} {m} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = margin,
        b = h - margin,
        r = w - margin
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">SNR (dB)</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">word accuracy (%)</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (label, v) in [(x0, y0), (x1, y1)].iter().flat_map(|(a, b)| [(*a, *b)]) {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            px(label),
            h - margin + 16.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#,
            margin - 6.0,
            py(v) + 4.0
        );
    }
    for (k, ((noise, method, states), points)) in series.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        let mut pts: Vec<(f64, f64)> = points.iter().copied().filter(|(s, _)| s.is_finite()).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.is_empty() {
            continue;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|(s, v)| format!("{:.1},{:.1}", px(*s), py(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for (s, v) in &pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#,
                px(*s),
                py(*v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{colour}">{noise} {method} {states}</text>"#,
            margin + 10.0,
            margin + 16.0 * k as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ResultRow;
    use crate::mixing::Snr;

    fn row(snr: f64, method: ScodMethod, states: &str, acc: f64) -> ResultRow {
        ResultRow {
            noise_id: "n".into(),
            snr_db: Snr(snr),
            method,
            noise_states: states.into(),
            noise_state_count: 1,
            accuracy: acc,
            utterances: 1,
            mean_log_likelihood: 0.0,
            mean_op_count: 0.0,
        }
    }

    #[test]
    fn single_row_gives_single_point() {
        let t = ResultTable {
            rows: vec![row(10.0, ScodMethod::Wss, "multi", 80.0)],
        };
        let s = accuracy_series(&t);
        assert_eq!(s.len(), 1);
        assert_eq!(s.values().next().unwrap(), &vec![(10.0, 80.0)]);
        let (imp, warn) = improvement_series(&t);
        assert!(imp.is_empty());
        assert_eq!(warn.len(), 1);
    }

    #[test]
    fn improvement_is_exact_difference() {
        let t = ResultTable {
            rows: vec![
                row(10.0, ScodMethod::Wss, "single", 71.25),
                row(10.0, ScodMethod::Wss, "multi", 80.5),
                row(0.0, ScodMethod::Wss, "single", 40.0),
                row(0.0, ScodMethod::Wss, "multi", 55.0),
            ],
        };
        let (imp, warn) = improvement_series(&t);
        assert!(warn.is_empty());
        assert_eq!(
            imp[&("n".to_string(), ScodMethod::Wss)],
            vec![(10.0, 80.5 - 71.25), (0.0, 15.0)]
        );
        let dir = tempfile::tempdir().unwrap();
        let report = emit_plots(&t, dir.path()).unwrap();
        assert_eq!(report.files.len(), 3);
        assert!(emit_plots(&ResultTable::default(), dir.path()).is_err());
    }
}
