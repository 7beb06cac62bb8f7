//! Result files: CSV tables, run metadata, plot data and simple SVG plots.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reruns
//! with the same inputs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::cv::{GroupSelection, ProbeRecord, SiteComparison, SiteSummary};
use crate::data::{SiteId, SiteKind};
use crate::entangle::{CrossDomainSummary, EntanglementSet};
use crate::error::{Error, Result};

/// Version of the CSV layouts below, recorded in run metadata.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const SUMMARY_HEADER: [&str; 6] = ["site", "kind", "index", "mean_rmse", "se_rmse", "pct_significant"];

/// Marker file written when a run stops early; holds the error.
pub const FAILED_MARKER: &str = "FAILED";

pub struct ReportDir {
    dir: PathBuf,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

impl ReportDir {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let marker = dir.join(FAILED_MARKER);
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
        }
        Ok(ReportDir { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes a CSV with `header` and string rows.
    pub fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        w.write_record(header).map_err(|e| csv_err(&path, e))?;
        for r in rows {
            w.write_record(&r).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn mark_failed(&self, error: &dyn std::fmt::Display) -> Result<PathBuf> {
        self.text(FAILED_MARKER, &format!("{error}\n"))
    }
}

fn site_cols(s: &SiteId) -> [String; 3] {
    [s.to_string(), s.kind.to_string(), s.index.to_string()]
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn write_results(report: &ReportDir, records: &[ProbeRecord], questions: &dyn Fn(usize) -> String) -> Result<PathBuf> {
    let header = [
        "site", "kind", "index", "attribute_id", "question", "fold", "alpha", "q", "rmse", "rmse_stimulus_mean",
        "p_value", "significant", "degenerate", "n_test_rows",
    ];
    report.csv(
        "results.csv",
        &header,
        records.iter().map(|r| {
            let mut row = site_cols(&r.site).to_vec();
            row.extend([
                r.attribute_id.to_string(),
                questions(r.attribute_id),
                r.fold().to_string(),
                f(r.alpha),
                r.q.to_string(),
                f(r.result.rmse),
                f(r.rmse_stimulus_mean),
                f(r.result.p_value),
                r.significant().to_string(),
                r.degenerate.to_string(),
                r.n_test_rows.to_string(),
            ]);
            row
        }),
    )
}

pub fn write_predictions(report: &ReportDir, records: &[ProbeRecord]) -> Result<PathBuf> {
    report.csv(
        "predictions.csv",
        &["site", "attribute_id", "fold", "row", "prediction"],
        records.iter().flat_map(|r| {
            r.result.predictions.iter().enumerate().map(move |(i, p)| {
                vec![r.site.to_string(), r.attribute_id.to_string(), r.fold().to_string(), i.to_string(), f(*p)]
            })
        }),
    )
}

/// `summary.csv` (fixed header) and `summary_detail.csv` (both SE
/// conventions, counts and flags).
pub fn write_summaries(report: &ReportDir, summaries: &[SiteSummary]) -> Result<()> {
    report.csv(
        "summary.csv",
        &SUMMARY_HEADER,
        summaries.iter().map(|s| {
            let mut row = site_cols(&s.site).to_vec();
            row.extend([f(s.mean_rmse), f(s.se_rmse), f(s.pct_significant)]);
            row
        }),
    )?;
    write_detail(report, "summary_detail.csv", summaries)?;
    Ok(())
}

pub fn write_detail(report: &ReportDir, name: &str, summaries: &[SiteSummary]) -> Result<PathBuf> {
    let header = [
        "subgroup", "site", "kind", "index", "mean_rmse", "se_rmse", "se_rmse_attributes", "pct_significant",
        "mean_rmse_stimulus", "n_results", "n_attributes", "n_degenerate", "single_result",
    ];
    report.csv(
        name,
        &header,
        summaries.iter().map(|s| {
            let mut row = vec![s.subgroup.clone().unwrap_or_else(|| "all".into())];
            row.extend(site_cols(&s.site));
            row.extend([
                f(s.mean_rmse),
                f(s.se_rmse),
                f(s.se_rmse_attributes),
                f(s.pct_significant),
                f(s.mean_rmse_stimulus),
                s.n_results.to_string(),
                s.n_attributes.to_string(),
                s.n_degenerate.to_string(),
                s.single_result().to_string(),
            ]);
            row
        }),
    )
}

pub fn write_selections(report: &ReportDir, selections: &[GroupSelection]) -> Result<PathBuf> {
    report.csv(
        "selections.csv",
        &["group", "fold", "alpha", "q", "validation_rmse", "searched_sites"],
        selections.iter().map(|s| {
            vec![
                s.group.to_string(),
                s.fold.to_string(),
                f(s.selection.alpha),
                s.selection.q.to_string(),
                f(s.selection.score),
                s.searched_sites.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "),
            ]
        }),
    )
}

pub fn write_comparisons(report: &ReportDir, comparisons: &[SiteComparison]) -> Result<PathBuf> {
    report.csv(
        "comparisons.csv",
        &["site_a", "site_b", "n_pairs", "t", "p_value", "mean_difference", "significant"],
        comparisons.iter().map(|c| {
            vec![
                c.site_a.to_string(),
                c.site_b.to_string(),
                c.n_pairs.to_string(),
                f(c.t),
                f(c.p),
                f(c.mean_difference),
                c.significant.to_string(),
            ]
        }),
    )
}

/// One curve of plot data: mean RMSE +- SE and % significant over site index.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<SiteSummary>,
}

/// Plot data per site kind (`plot_<kind>.csv`) and, when `svg`, one RMSE
/// plot and one significance plot per kind.
pub fn write_plots(report: &ReportDir, series: &[Series], prefix: &str, svg: bool) -> Result<()> {
    for kind in SiteKind::ALL {
        let curves: Vec<Series> = series
            .iter()
            .map(|s| Series {
                name: s.name.clone(),
                points: s.points.iter().filter(|p| p.site.kind == kind).cloned().collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect();
        if curves.is_empty() {
            continue;
        }
        report.csv(
            &format!("{prefix}_{kind}.csv"),
            &["series", "index", "mean_rmse", "lower", "upper", "se_rmse", "pct_significant"],
            curves.iter().flat_map(|c| {
                c.points.iter().map(move |p| {
                    vec![
                        c.name.clone(),
                        p.site.index.to_string(),
                        f(p.mean_rmse),
                        f(p.mean_rmse - p.se_rmse),
                        f(p.mean_rmse + p.se_rmse),
                        f(p.se_rmse),
                        f(p.pct_significant),
                    ]
                })
            }),
        )?;
        if svg {
            let rmse: Vec<SvgCurve> = curves
                .iter()
                .map(|c| SvgCurve {
                    label: c.name.clone(),
                    points: c.points.iter().map(|p| (p.site.index as f64, p.mean_rmse, p.se_rmse)).collect(),
                })
                .collect();
            report.text(
                &format!("{prefix}_{kind}_rmse.svg"),
                &line_plot(&format!("{kind}: mean RMSE"), "index", "RMSE", &rmse),
            )?;
            let sig: Vec<SvgCurve> = curves
                .iter()
                .map(|c| SvgCurve {
                    label: c.name.clone(),
                    points: c.points.iter().map(|p| (p.site.index as f64, p.pct_significant, 0.0)).collect(),
                })
                .collect();
            report.text(
                &format!("{prefix}_{kind}_significant.svg"),
                &line_plot(&format!("{kind}: % probes with p < 0.05"), "index", "% significant", &sig),
            )?;
        }
    }
    Ok(())
}

pub fn write_entanglement(
    report: &ReportDir,
    name: &str,
    sets: &[(String, Option<usize>, &EntanglementSet)],
    questions: &dyn Fn(usize) -> String,
) -> Result<PathBuf> {
    let header = ["domain", "site", "fold", "a", "b", "question_a", "question_b", "similarity", "p_value", "state"];
    report.csv(
        name,
        &header,
        sets.iter().flat_map(|(site, fold, set)| {
            set.records.iter().map(move |r| {
                vec![
                    r.domain.to_string(),
                    site.clone(),
                    fold.map(|v| v.to_string()).unwrap_or_default(),
                    r.a.to_string(),
                    r.b.to_string(),
                    questions(r.a),
                    questions(r.b),
                    f(r.similarity),
                    f(r.p_value),
                    r.state.as_str().to_string(),
                ]
            })
        }),
    )
}

pub fn write_cross_domain(report: &ReportDir, rows: &[(String, Option<usize>, CrossDomainSummary)]) -> Result<PathBuf> {
    let header = [
        "site",
        "fold",
        "pct_humans_disentangle_more",
        "pct_probes_disentangle_more",
        "pct_agreement",
        "pct_sign_mismatch",
        "n_pairs",
    ];
    report.csv(
        "entangle_summary.csv",
        &header,
        rows.iter().map(|(site, fold, s)| {
            vec![
                site.clone(),
                fold.map(|v| v.to_string()).unwrap_or_else(|| "mean".into()),
                f(s.pct_humans_disentangle_more),
                f(s.pct_probes_disentangle_more),
                f(s.pct_agreement),
                f(s.pct_sign_mismatch),
                s.n_pairs.to_string(),
            ]
        }),
    )
}

pub struct SvgCurve {
    pub label: String,
    /// `(x, y, error)`; error bars are drawn when `error > 0`.
    pub points: Vec<(f64, f64, f64)>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal SVG line plot with optional error bars and a legend.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, curves: &[SvgCurve]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, e) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - e);
        y1 = y1.max(y + e);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    let (ax0, ax1, ay0, ay1) = (left, w - right, h - bottom, top);
    let _ = writeln!(s, r#"<path d="M{ax0},{ay1} L{ax0},{ay0} L{ax1},{ay0}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            ax0 - 6.0,
            sy(yv) + 4.0,
            yv
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, sx(xv), ay0 + 18.0, xv);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ax0 + ax1) / 2.0, h - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        escape(y_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = c.points.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        for &(x, y, e) in &c.points {
            if e > 0.0 {
                let _ = writeln!(
                    s,
                    r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}"/>"#,
                    sx(x),
                    sy(y - e),
                    sy(y + e)
                );
            }
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, ax1 + 12.0, ax1 + 30.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, ax1 + 36.0, ly + 4.0, escape(&c.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = line_plot(
            "t <1>",
            "x",
            "y",
            &[SvgCurve { label: "a".into(), points: vec![(1.0, 0.5, 0.1), (2.0, 0.7, 0.0)] }],
        );
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<circle").count(), 2);
        // empty input still renders
        assert!(line_plot("e", "x", "y", &[]).contains("</svg>"));
    }

    #[test]
    fn csv_and_marker() {
        let dir = tempfile::tempdir().unwrap();
        let r = ReportDir::create(dir.path().join("out")).unwrap();
        r.csv("a.csv", &["x", "y"], vec![vec!["1".into(), "a,b".into()]]).unwrap();
        assert_eq!(fs::read_to_string(r.path("a.csv")).unwrap(), "x,y\n1,\"a,b\"\n");
        r.mark_failed(&"boom").unwrap();
        assert!(r.path(FAILED_MARKER).exists());
        let again = ReportDir::create(r.dir()).unwrap();
        assert!(!again.path(FAILED_MARKER).exists());
    }
}
