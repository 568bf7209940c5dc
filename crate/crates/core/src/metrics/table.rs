use std::fmt::Write as _;
use std::str::FromStr;

use super::bench::BenchReport;
use super::flops::FlopsReport;
use super::miou::MiouReport;
use crate::error::OccError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = OccError;

    fn from_str(s: &str) -> Result<Self, OccError> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(OccError::Usage(format!("unknown table format `{other}` (expected csv or markdown)"))),
        }
    }
}

fn render(header: &[&str], rows: &[Vec<String>], fmt: TableFormat) -> String {
    let mut out = String::new();
    match fmt {
        TableFormat::Csv => {
            out.push_str(&header.join(","));
            out.push('\n');
            for r in rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for r in rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
        }
    }
    out
}

fn ms(x: f64) -> String {
    format!("{x:.4}")
}

/// Columns: stage, flops, median_ms, p10_ms, p90_ms.
pub fn emit_table(report: &BenchReport, fmt: TableFormat) -> String {
    let rows: Vec<Vec<String>> = report
        .stages
        .iter()
        .map(|s| vec![s.stage.clone(), s.flops.to_string(), ms(s.median_ms), ms(s.p10_ms), ms(s.p90_ms)])
        .collect();
    render(&["stage", "flops", "median_ms", "p10_ms", "p90_ms"], &rows, fmt)
}

/// Per-layer rows followed by `head2d_total` and `head3d_total`.
pub fn emit_flops_table(report: &FlopsReport, fmt: TableFormat) -> String {
    let mut rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.head.to_string(),
                r.name.clone(),
                r.stage.label().to_string(),
                r.kind.to_string(),
                r.flops.to_string(),
                r.ratio_vs_3d.map(|x| x.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    for (name, v) in [("head2d_total", report.head2d_total), ("head3d_total", report.head3d_total)] {
        let head = &name[..6];
        rows.push(vec![head.into(), name.into(), "total".into(), String::new(), v.to_string(), String::new()]);
    }
    render(&["head", "layer", "stage", "kind", "flops", "ratio_vs_3d"], &rows, fmt)
}

/// One row per semantic class plus a trailing `mean` row; undefined classes print `undefined`.
pub fn emit_miou_table(report: &MiouReport, names: &[String], fmt: TableFormat) -> String {
    let fmt_iou = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
    let mut rows: Vec<Vec<String>> = (1..report.per_class.len())
        .map(|m| {
            let name = names.get(m).cloned().unwrap_or_else(|| format!("class{m}"));
            vec![m.to_string(), name, fmt_iou(report.per_class[m])]
        })
        .collect();
    rows.push(vec![String::new(), "mean".into(), fmt_iou(report.mean)]);
    render(&["class", "name", "iou"], &rows, fmt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::VoxelGridSpec;
    use crate::head::HeadConfig;
    use crate::metrics::bench::StageTiming;

    fn report(stages: Vec<StageTiming>) -> BenchReport {
        BenchReport {
            stages,
            repeats: 5,
            warmup: 2,
            parallel: false,
            grid: VoxelGridSpec::new([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], [2, 2, 2]).unwrap(),
            cameras: 1,
            config: HeadConfig::default(),
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(emit_table(&report(vec![]), TableFormat::Csv), "stage,flops,median_ms,p10_ms,p90_ms\n");
        assert_eq!(emit_table(&report(vec![]), TableFormat::Markdown).lines().count(), 2);
    }

    #[test]
    fn csv_parses_back() {
        let st = |n: &str| StageTiming { stage: n.into(), flops: 42, median_ms: 1.5, p10_ms: 1.0, p90_ms: 2.0 };
        let text = emit_table(&report(vec![st("a"), st("b")]), TableFormat::Csv);
        let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.len() == 5));
        assert_eq!(rows[2][0], "b");
        assert_eq!(rows[1][1].parse::<u64>().unwrap(), 42);
        assert_eq!(rows[1][2].parse::<f64>().unwrap(), 1.5);
        let md = emit_table(&report(vec![st("a"), st("b")]), TableFormat::Markdown);
        assert_eq!(md.lines().count(), 4);
    }

    #[test]
    fn unknown_format_is_usage_error() {
        assert!(matches!("xml".parse::<TableFormat>(), Err(OccError::Usage(_))));
    }
}
