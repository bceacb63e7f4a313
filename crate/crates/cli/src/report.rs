use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use ltfs::datamodel::Split;
use ltfs::fewshot::{read_reports, summary_json, EvalReport};
use serde::{Deserialize, Serialize};

#[derive(Args, Debug, Serialize)]
pub struct ReportArgs {
    /// Eval report or training metrics CSVs.
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Directory for charts and tables.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
struct MetricRow {
    step: u64,
    stage: usize,
    head: String,
    loss: f64,
    lr: f64,
    acc: Option<f64>,
}

/// One drawn bar, in data and pixel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub group: String,
    pub series: String,
    pub value: f64,
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

/// Machine-readable twin of a chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartData {
    pub title: String,
    pub y_label: String,
    pub y_max: f64,
    pub plot_height: f64,
    pub bars: Vec<Bar>,
}

const WIDTH: f64 = 720.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_HEIGHT: f64 = 300.0;
const PLOT_LEFT: f64 = 60.0;
const COLORS: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Grouped bar chart: one group per entry of `groups`, one bar per series.
pub fn bar_chart(
    title: &str,
    y_label: &str,
    y_max: f64,
    groups: &[String],
    series: &[String],
    values: &[Vec<f64>],
) -> (String, ChartData) {
    let plot_w = WIDTH - PLOT_LEFT - 20.0;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let base = PLOT_TOP + PLOT_HEIGHT;
    let mut bars = Vec::new();
    let mut svg = String::new();
    let total_h = base + 80.0;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{total_h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{}</text>"#,
        PLOT_TOP + PLOT_HEIGHT / 2.0,
        PLOT_TOP + PLOT_HEIGHT / 2.0,
        escape(y_label)
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = base - PLOT_HEIGHT * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{PLOT_LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            WIDTH - 20.0,
            PLOT_LEFT - 4.0,
            y + 4.0,
            format_tick(v)
        );
    }
    for (g, name) in groups.iter().enumerate() {
        let gx = PLOT_LEFT + g as f64 * group_w + group_w * 0.1;
        for (s, sname) in series.iter().enumerate() {
            let value = values[g][s];
            let height = if y_max > 0.0 { PLOT_HEIGHT * value.clamp(0.0, y_max) / y_max } else { 0.0 };
            let x = gx + s as f64 * bar_w;
            let y = base - height;
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.3}" y="{y:.3}" width="{bar_w:.3}" height="{height:.3}" fill="{}"><title>{} {}: {value}</title></rect>"#,
                COLORS[s % COLORS.len()],
                escape(name),
                escape(sname)
            );
            bars.push(Bar {
                group: name.clone(),
                series: sname.clone(),
                value,
                x,
                y,
                width: bar_w,
                height,
            });
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            base + 16.0,
            escape(name)
        );
    }
    for (s, sname) in series.iter().enumerate() {
        let x = PLOT_LEFT + s as f64 * 110.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            base + 40.0,
            COLORS[s % COLORS.len()],
            x + 14.0,
            base + 49.0,
            escape(sname)
        );
    }
    svg.push_str("</svg>\n");
    (
        svg,
        ChartData {
            title: title.to_string(),
            y_label: y_label.to_string(),
            y_max,
            plot_height: PLOT_HEIGHT,
            bars,
        },
    )
}

fn format_tick(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn write_chart(dir: &Path, stem: &str, chart: (String, ChartData)) -> Result<()> {
    let svg = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg, chart.0).with_context(|| format!("writing {}", svg.display()))?;
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_vec_pretty(&chart.1)?).with_context(|| format!("writing {}", json.display()))?;
    Ok(())
}

fn is_metrics(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().find(|l| !l.starts_with('#'));
    Ok(header.is_some_and(|h| h.trim() == ltfs::trainer::METRICS_HEADER))
}

fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.with_context(|| format!("{} row {}", path.display(), i + 1)))
        .collect()
}

/// Chart panel: split, classifier name and k.
type PanelKey = (Split, String, usize);

fn split_name(s: Split) -> &'static str {
    match s {
        Split::NovelVal => "val",
        Split::NovelTest => "test",
        Split::Base => "base",
        Split::Dropped => "dropped",
    }
}

/// One table row per (regime, model), one column pair per (split,
/// classifier, k).
fn eval_table(reports: &[EvalReport]) -> String {
    let mut columns: Vec<PanelKey> = Vec::new();
    let mut rows: BTreeMap<(String, String), BTreeMap<PanelKey, (f64, f64)>> = BTreeMap::new();
    for r in reports {
        let col = (r.split, r.classifier.name().to_string(), r.k_shot);
        if !columns.contains(&col) {
            columns.push(col.clone());
        }
        rows.entry((r.regime.clone(), r.model.clone())).or_default().insert(col, (r.top1, r.top5));
    }
    columns.sort();
    let mut out = String::from("regime,model");
    for (s, c, k) in &columns {
        let _ = write!(out, ",{0}_{c}_{k}shot_top1,{0}_{c}_{k}shot_top5", split_name(*s));
    }
    out.push('\n');
    for ((regime, model), cells) in &rows {
        let _ = write!(out, "{regime},{model}");
        for col in &columns {
            match cells.get(col) {
                Some((t1, t5)) => {
                    let _ = write!(out, ",{t1},{t5}");
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

fn eval_charts(dir: &Path, reports: &[EvalReport]) -> Result<usize> {
    let mut panels: BTreeMap<PanelKey, BTreeMap<String, (f64, f64)>> = BTreeMap::new();
    for r in reports {
        panels
            .entry((r.split, r.classifier.name().to_string(), r.k_shot))
            .or_default()
            .insert(format!("{} / {}", r.regime, r.model), (r.top1, r.top5));
    }
    for ((split, classifier, k), bars) in &panels {
        let groups: Vec<String> = bars.keys().cloned().collect();
        let values: Vec<Vec<f64>> = bars.values().map(|&(a, b)| vec![a, b]).collect();
        let title = format!("novel {} {classifier} {k}-shot", split_name(*split));
        let chart = bar_chart(&title, "accuracy (%)", 100.0, &groups, &["top1".into(), "top5".into()], &values);
        write_chart(dir, &format!("eval_{}_{classifier}_{k}shot", split_name(*split)), chart)?;
    }
    Ok(panels.len())
}

/// Final loss per head of each metrics file, as a chart and a table.
fn metrics_outputs(dir: &Path, path: &Path, rows: &[MetricRow]) -> Result<String> {
    let mut last: BTreeMap<&str, &MetricRow> = BTreeMap::new();
    for r in rows {
        let e = last.entry(r.head.as_str()).or_insert(r);
        if (r.stage, r.step) >= (e.stage, e.step) {
            *e = r;
        }
    }
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let groups: Vec<String> = last.keys().map(|h| h.to_string()).collect();
    let values: Vec<Vec<f64>> = last.values().map(|r| vec![r.loss]).collect();
    let y_max = values.iter().map(|v| v[0]).fold(0.0, f64::max).max(1e-12) * 1.1;
    let chart = bar_chart(&format!("{stem}: final loss per head"), "loss", y_max, &groups, &["loss".into()], &values);
    write_chart(dir, &format!("metrics_{stem}"), chart)?;
    let mut table = String::new();
    for (h, r) in &last {
        let acc = r.acc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(table, "{stem},{h},{},{},{},{},{acc}", r.stage, r.step, r.loss, r.lr);
    }
    Ok(table)
}

pub fn run(args: ReportArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut reports = Vec::new();
    let mut metrics_table = String::new();
    for path in &args.input {
        if is_metrics(path)? {
            let rows = read_metrics(path)?;
            if rows.is_empty() {
                bail!("{} has no rows", path.display());
            }
            metrics_table.push_str(&metrics_outputs(&args.out, path, &rows)?);
        } else {
            reports.extend(read_reports(path)?);
        }
    }
    if reports.is_empty() && metrics_table.is_empty() {
        bail!("no rows in the given inputs");
    }
    if !reports.is_empty() {
        let n = eval_charts(&args.out, &reports)?;
        std::fs::write(args.out.join("eval_summary.csv"), eval_table(&reports))?;
        std::fs::write(args.out.join("eval_summary.json"), serde_json::to_vec_pretty(&summary_json(&reports))?)?;
        println!("{} eval rows, {n} charts", reports.len());
    }
    if !metrics_table.is_empty() {
        let mut text = String::from("run,head,stage,step,loss,lr,acc\n");
        text.push_str(&metrics_table);
        std::fs::write(args.out.join("metrics_summary.csv"), text)?;
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_heights_follow_values() {
        let (svg, data) = bar_chart(
            "t",
            "y",
            100.0,
            &["a".into(), "b".into()],
            &["top1".into()],
            &[vec![25.0], vec![100.0]],
        );
        assert_eq!(data.bars.len(), 2);
        assert_eq!(data.bars[0].height, PLOT_HEIGHT * 0.25);
        assert_eq!(data.bars[1].height, PLOT_HEIGHT);
        assert_eq!(data.bars[0].y + data.bars[0].height, PLOT_TOP + PLOT_HEIGHT);
        assert_eq!(svg.matches("<rect").count(), 3);
    }

    #[test]
    fn labels_are_escaped() {
        let (svg, _) = bar_chart("a<b", "y", 1.0, &["x&y".into()], &["s".into()], &[vec![0.5]]);
        assert!(svg.contains("a&lt;b") && svg.contains("x&amp;y"));
    }
}
