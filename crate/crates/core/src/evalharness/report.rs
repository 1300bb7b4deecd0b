use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::cv::{ExperimentReport, MetricSummary};
use super::metrics::Metric;
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str = "classifier,task,metric,mean,std";
pub const PER_RUN_HEADER: &str = "classifier,task,run,seed,level,auc,sensitivity,specificity";

fn summary_rows(out: &mut String, report: &ExperimentReport, summary: &MetricSummary) {
    for m in Metric::ALL {
        let s = summary.get(m);
        writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            report.classifier,
            report.task,
            m.as_str(),
            s.mean,
            s.std
        )
        .unwrap();
    }
}

/// Datapoint-level mean and std of every metric, one row per metric.
pub fn summary_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    summary_rows(&mut out, report, &report.datapoint_summary);
    out
}

/// Same layout as [`summary_csv`] for the per-user aggregation.
pub fn user_summary_csv(report: &ExperimentReport) -> Option<String> {
    let summary = report.user_summary.as_ref()?;
    let mut out = format!("{SUMMARY_HEADER}\n");
    summary_rows(&mut out, report, summary);
    Some(out)
}

pub fn per_run_csv(report: &ExperimentReport) -> String {
    let mut out = format!("{PER_RUN_HEADER}\n");
    for run in &report.runs {
        let levels = std::iter::once(("datapoint", run.datapoint)).chain(run.user.map(|u| ("user", u)));
        for (level, m) in levels {
            writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6}",
                report.classifier, report.task, run.run, run.seed, level, m.auc, m.sensitivity, m.specificity
            )
            .unwrap();
        }
    }
    out
}

pub fn report_json(report: &ExperimentReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Writes `report.json`, `summary.csv`, `per_run.csv` and, for user-level
/// reports, `user_summary.csv` into `dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.runs.is_empty() {
        return Err(Error::EmptyInput("report runs"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut files = vec![
        ("report.json", report_json(report)?),
        ("summary.csv", summary_csv(report)),
        ("per_run.csv", per_run_csv(report)),
    ];
    if let Some(user) = user_summary_csv(report) {
        files.push(("user_summary.csv", user));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Grouped bar chart of datapoint-level metric means with one-std whiskers.
pub fn render_svg(reports: &[ExperimentReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("svg reports"));
    }
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 50.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 60.0;
    const COLORS: [&str; 3] = ["#4e79a7", "#f28e2b", "#59a14f"];
    let plot_h = H - TOP - BOTTOM;
    let group_w = (W - LEFT - 20.0) / reports.len() as f64;
    let bar_w = group_w * 0.8 / 3.0;
    let y_of = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = y_of(v);
        writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, W - 20.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 5.0, y + 4.0).unwrap();
    }
    for (g, report) in reports.iter().enumerate() {
        let x0 = LEFT + g as f64 * group_w + group_w * 0.1;
        for (i, m) in Metric::ALL.into_iter().enumerate() {
            let ms = report.datapoint_summary.get(m);
            let x = x0 + i as f64 * bar_w;
            let y = y_of(ms.mean);
            writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {} {:.3}</title></rect>"#,
                bar_w * 0.9,
                TOP + plot_h - y,
                COLORS[i],
                report.classifier,
                m.as_str(),
                ms.mean
            )
            .unwrap();
            let cx = x + bar_w * 0.45;
            writeln!(
                s,
                r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                y_of(ms.mean - ms.std),
                y_of(ms.mean + ms.std)
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{} ({})</text>"#,
            x0 + 1.5 * bar_w,
            H - BOTTOM + 16.0,
            report.classifier,
            report.task
        )
        .unwrap();
    }
    for (i, m) in Metric::ALL.into_iter().enumerate() {
        let x = LEFT + i as f64 * 110.0;
        writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#, H - 22.0, COLORS[i]).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 14.0, H - 13.0, m.as_str()).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
