//! Metric CSV files: evaluation of saved predictions, aggregation across
//! runs and summary bar plots.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma};
use log::warn;
use serde::Deserialize;

use crate::data::{evaluate_metrics, read_gray, read_mask, stems_in, Metrics};
use crate::error::{HclError, Result};

use super::bench::CSV_HEADER;

/// One line of a metric CSV.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct MetricRow {
    pub sample: String,
    pub mode: String,
    pub degradation: String,
    pub severity: u8,
    pub s_measure: f64,
    pub e_measure: f64,
    pub wfbeta: f64,
    pub mae: f64,
}

impl MetricRow {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            s_measure: self.s_measure,
            e_measure: self.e_measure,
            wfbeta: self.wfbeta,
            mae: self.mae,
        }
    }
}

/// Per-sample rows of a metric CSV; `mean` rows are dropped.
pub fn read_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let file = std::fs::File::open(path).map_err(|e| HclError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(HclError::Format {
            what: "metric csv",
            detail: format!("{}: header {:?}", path.display(), header),
        });
    }
    let mut rows = Vec::new();
    for row in r.deserialize::<MetricRow>() {
        let row = row?;
        if row.sample != "mean" {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Scores every prediction map in `pred_dir` against the mask of the same
/// name in `gt_dir`. Maps without a mask, or of a different size, are
/// skipped with a warning.
pub fn evaluate_predictions(pred_dir: &Path, gt_dir: &Path, mode: &str) -> Result<Vec<MetricRow>> {
    let preds = stems_in(pred_dir)?;
    let gts = stems_in(gt_dir)?;
    let mut rows = Vec::new();
    for (name, pred_path) in &preds {
        let Some(gt_path) = gts.get(name) else {
            warn!("skipping {name}: no mask in {}", gt_dir.display());
            continue;
        };
        let pred = read_gray(pred_path)?;
        let gt = read_mask(gt_path)?;
        if pred.shape() != gt.shape() {
            warn!("skipping {name}: prediction {:?} vs mask {:?}", pred.shape(), gt.shape());
            continue;
        }
        let m = evaluate_metrics(&pred, &gt)?;
        rows.push(MetricRow {
            sample: name.clone(),
            mode: mode.to_string(),
            degradation: "none".into(),
            severity: 0,
            s_measure: m.s_measure,
            e_measure: m.e_measure,
            wfbeta: m.wfbeta,
            mae: m.mae,
        });
    }
    if rows.is_empty() {
        return Err(HclError::Dataset(format!(
            "no prediction in {} matches a mask in {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    Ok(rows)
}

fn fields(m: &Metrics) -> [String; 4] {
    [m.s_measure, m.e_measure, m.wfbeta, m.mae].map(|v| format!("{v:.6}"))
}

/// Rows followed by a `mean` row labelled like the first row.
pub fn write_rows<W: Write>(out: W, rows: &[MetricRow]) -> Result<()> {
    let first = rows
        .first()
        .ok_or_else(|| HclError::Dataset("no rows to write".into()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let mut write = |name: &str, r: &MetricRow, m: &Metrics| {
        let [s, e, f, a] = fields(m);
        w.write_record([name, &r.mode, &r.degradation, &r.severity.to_string(), &s, &e, &f, &a])
    };
    for r in rows {
        write(&r.sample, r, &r.metrics())?;
    }
    let all: Vec<Metrics> = rows.iter().map(MetricRow::metrics).collect();
    write("mean", first, &Metrics::mean(&all).expect("non-empty"))?;
    w.flush().map_err(|e| HclError::Dataset(format!("writing csv: {e}")))?;
    Ok(())
}

/// Mean metrics of one (source, mode, degradation, severity) group.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub source: String,
    pub mode: String,
    pub degradation: String,
    pub severity: u8,
    pub count: usize,
    pub mean: Metrics,
}

impl SummaryRow {
    pub fn label(&self) -> String {
        if self.degradation == "none" {
            format!("{}:{}", self.source, self.mode)
        } else {
            format!("{}:{}:{}{}", self.source, self.mode, self.degradation, self.severity)
        }
    }
}

/// Groups rows in first-seen order.
pub fn summarize(sources: &[(String, Vec<MetricRow>)]) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, Vec<Metrics>)> = Vec::new();
    for (source, rows) in sources {
        for r in rows {
            let found = groups.iter_mut().find(|(g, _)| {
                g.source == *source && g.mode == r.mode && g.degradation == r.degradation && g.severity == r.severity
            });
            match found {
                Some((_, ms)) => ms.push(r.metrics()),
                None => groups.push((
                    SummaryRow {
                        source: source.clone(),
                        mode: r.mode.clone(),
                        degradation: r.degradation.clone(),
                        severity: r.severity,
                        count: 0,
                        mean: r.metrics(),
                    },
                    vec![r.metrics()],
                )),
            }
        }
    }
    groups
        .into_iter()
        .map(|(mut g, ms)| {
            g.count = ms.len();
            g.mean = Metrics::mean(&ms).expect("group has a row");
            g
        })
        .collect()
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let width = rows.iter().map(|r| r.source.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:<6}  {:<4}  {:>3}  {:>5}  {:>8}  {:>8}  {:>8}  {:>8}\n",
        "source", "mode", "deg", "sev", "n", "S_m", "E_m", "wF", "MAE"
    );
    for r in rows {
        let m = &r.mean;
        let _ = writeln!(
            out,
            "{:<width$}  {:<6}  {:<4}  {:>3}  {:>5}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}",
            r.source, r.mode, r.degradation, r.severity, r.count, m.s_measure, m.e_measure, m.wfbeta, m.mae
        );
    }
    out
}

pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "mode", "degradation", "severity", "count", "s_measure", "e_measure", "wfbeta", "mae"])?;
    for r in rows {
        let [s, e, f, a] = fields(&r.mean);
        w.write_record([
            r.source.as_str(),
            &r.mode,
            &r.degradation,
            &r.severity.to_string(),
            &r.count.to_string(),
            &s,
            &e,
            &f,
            &a,
        ])?;
    }
    w.flush().map_err(|e| HclError::Dataset(format!("writing csv: {e}")))?;
    Ok(())
}

const BAR: u32 = 24;
const GAP: u32 = 8;
const PLOT_HEIGHT: u32 = 160;

/// Gray bar chart of values in `[0,1]`, one bar per value, left to right.
pub fn bar_chart(values: &[f64]) -> GrayImage {
    let n = values.len().max(1) as u32;
    let width = GAP + n * (BAR + GAP);
    let mut img = GrayImage::from_pixel(width, PLOT_HEIGHT + 2 * GAP, Luma([255]));
    let base = PLOT_HEIGHT + GAP;
    for x in 0..width {
        img.put_pixel(x, base, Luma([0]));
    }
    for (i, &v) in values.iter().enumerate() {
        let h = (v.clamp(0.0, 1.0) * PLOT_HEIGHT as f64).round() as u32;
        let x0 = GAP + i as u32 * (BAR + GAP);
        for x in x0..x0 + BAR {
            for y in base - h..base {
                img.put_pixel(x, y, Luma([80]));
            }
        }
    }
    img
}

pub fn write_bar_chart(path: &Path, values: &[f64]) -> Result<()> {
    bar_chart(values).save(path).map_err(|source| HclError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub type MetricFn = fn(&Metrics) -> f64;

/// Metric name and accessor, in CSV column order.
pub const METRICS: [(&str, MetricFn); 4] = [
    ("s_measure", |m| m.s_measure),
    ("e_measure", |m| m.e_measure),
    ("wfbeta", |m| m.wfbeta),
    ("mae", |m| m.mae),
];

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sample: &str, mode: &str, mae: f64) -> MetricRow {
        MetricRow {
            sample: sample.into(),
            mode: mode.into(),
            degradation: "gb".into(),
            severity: 3,
            s_measure: 0.5,
            e_measure: 0.5,
            wfbeta: 0.5,
            mae,
        }
    }

    #[test]
    fn rows_round_trip_without_the_mean() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows = vec![row("a", "hcl", 0.25), row("b", "hcl", 0.5)];
        write_rows(std::fs::File::create(&p).unwrap(), &rows).unwrap();
        assert_eq!(read_rows(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.lines().last().unwrap().starts_with("mean,hcl,gb,3,0.500000,0.500000,0.500000,0.375000"));
    }

    #[test]
    fn foreign_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_rows(&p), Err(HclError::Format { .. })));
    }

    #[test]
    fn groups_average_per_mode() {
        let rows = vec![row("a", "hcl", 0.2), row("a", "frozen", 0.6), row("b", "hcl", 0.4)];
        let s = summarize(&[("run".into(), rows)]);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].mode.as_str(), s[0].count), ("hcl", 2));
        assert!((s[0].mean.mae - 0.3).abs() < 1e-12);
        assert_eq!(s[1].label(), "run:frozen:gb3");
        assert!(render_table(&s).lines().count() == 3);
    }

    #[test]
    fn bar_heights_follow_values() {
        let img = bar_chart(&[0.0, 0.5, 1.0]);
        let column = |i: u32| (0..img.height()).filter(|&y| img.get_pixel(GAP + i * (BAR + GAP), y)[0] == 80).count();
        assert_eq!([column(0), column(1), column(2)], [0, 80, 160]);
    }
}
