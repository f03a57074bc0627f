//! Run artifacts: CSV log, SVG curve, partition manifest.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::federation::{LogRecord, Metric, RunLog, Split};

pub const CSV_HEADER: &str = "round,site,epoch_global,split,metric,value";

fn split_name(split: Split) -> String {
    match split {
        Split::Global => "global".into(),
        Split::Local(k) => format!("local_{k}"),
    }
}

pub fn csv_string(log: &RunLog) -> String {
    let mut s = String::with_capacity(32 * (log.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in log.records() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6}",
            r.round,
            r.site,
            r.epoch_global,
            split_name(r.split),
            r.metric.name(),
            r.value
        );
    }
    s
}

pub fn emit_csv(log: &RunLog, path: &Path) -> Result<()> {
    write_file(path, csv_string(log).as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parse a run CSV back into a log. Values keep their 6-decimal rounding.
pub fn parse_run_csv(text: &str) -> Result<RunLog, FormatError> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => return Err(bad(1, "missing or wrong header")),
    }
    let mut log = RunLog::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [round, site, epoch, split, metric, value] = fields[..] else {
            return Err(bad(line_no, "expected 6 fields"));
        };
        let int = |s: &str, name: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(line_no, format!("invalid {name} `{s}`")))
        };
        let split = match split {
            "global" => Split::Global,
            s => match s.strip_prefix("local_").map(str::parse::<usize>) {
                Some(Ok(k)) if k >= 1 => Split::Local(k),
                _ => return Err(bad(line_no, format!("invalid split `{s}`"))),
            },
        };
        let metric = match metric {
            "acc" => Metric::Acc,
            "bacc" => Metric::Bacc,
            "loss" => Metric::Loss,
            m => return Err(bad(line_no, format!("invalid metric `{m}`"))),
        };
        let value: f64 = value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| bad(line_no, format!("invalid value `{value}`")))?;
        log.push(LogRecord {
            round: int(round, "round")?,
            site: int(site, "site")?,
            epoch_global: int(epoch, "epoch_global")?,
            split,
            metric,
            value,
        })
        .map_err(|e| bad(line_no, e.to_string()))?;
    }
    Ok(log)
}

fn bad(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Malformed {
        line,
        message: message.into(),
    }
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line chart of global accuracy against cumulative training epochs, one
/// polyline per `(label, log)` pair.
pub fn curve_svg(series: &[(&str, &RunLog)]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (60.0, 20.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let max_x = series
        .iter()
        .flat_map(|(_, log)| log.global_series(Metric::Acc))
        .map(|(x, _)| x)
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let px = |x: f64| left + pw * x / max_x;
    let py = |y: f64| top + ph * (1.0 - y.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{y:.1}</text>"##,
            py(y),
            left + pw,
            py(y),
            left - 6.0,
            py(y) + 4.0
        );
    }
    for i in 0..=5 {
        let x = max_x * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{:.0}</text>"#,
            px(x),
            top + ph + 16.0,
            x
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">training epochs</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">global accuracy</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (label, log)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = log
            .global_series(Metric::Acc)
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x as f64), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            left + pw - 120.0,
            left + pw - 100.0,
            left + pw - 95.0,
            ly + 4.0,
            xml_escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_curve_svg(log: &RunLog, label: &str, path: &Path) -> Result<()> {
    write_file(path, curve_svg(&[(label, log)]).as_bytes())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Spec echo followed by one `client,class,count` line per pair (1-based clients).
pub fn manifest_string(echo: &str, pool_size: usize, test_size: usize, counts: &[Vec<usize>]) -> String {
    let mut s = String::from(echo);
    let _ = writeln!(s, "pool_size = {pool_size}");
    let _ = writeln!(s, "global_test_size = {test_size}");
    s.push_str("client,class,count\n");
    for (k, per_class) in counts.iter().enumerate() {
        for (c, n) in per_class.iter().enumerate() {
            let _ = writeln!(s, "{},{c},{n}", k + 1);
        }
    }
    s
}
