//! Per-file metrics, aggregates, and comparison tables across conditions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{snr_metric, ssnr_metric, stoi_metric, SsnrParams};
use crate::audio::{read_wav, Waveform};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::mixgen::{DatasetManifest, PairMode};

/// Category label of the all-files rows.
pub const ALL_CATEGORIES: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetrics {
    pub pair_id: String,
    pub category: String,
    pub snr_db: f64,
    pub ssnr_db: f64,
    pub stoi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_nb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_wb: Option<f64>,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub snr_db: MeanStd,
    pub ssnr_db: MeanStd,
    pub stoi: MeanStd,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_nb: Option<MeanStd>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pesq_wb: Option<MeanStd>,
}

impl Summary {
    fn of(files: &[&FileMetrics]) -> Option<Self> {
        let col =
            |f: &dyn Fn(&FileMetrics) -> f64| -> Vec<f64> { files.iter().map(|m| f(m)).collect() };
        let opt = |f: &dyn Fn(&FileMetrics) -> Option<f64>| -> Option<MeanStd> {
            let v: Vec<f64> = files.iter().filter_map(|m| f(m)).collect();
            // only summarise a column present for every file
            (v.len() == files.len()).then(|| MeanStd::of(&v)).flatten()
        };
        Some(Self {
            snr_db: MeanStd::of(&col(&|m| m.snr_db))?,
            ssnr_db: MeanStd::of(&col(&|m| m.ssnr_db))?,
            stoi: MeanStd::of(&col(&|m| m.stoi))?,
            pesq_nb: opt(&|m| m.pesq_nb),
            pesq_wb: opt(&|m| m.pesq_wb),
        })
    }

    fn metrics(&self) -> [(&'static str, Option<MeanStd>); 5] {
        [
            ("snr", Some(self.snr_db)),
            ("ssnr", Some(self.ssnr_db)),
            ("stoi", Some(self.stoi)),
            ("pesq_nb", self.pesq_nb),
            ("pesq_wb", self.pesq_wb),
        ]
    }
}

/// Metrics of one condition (e.g. the unprocessed baseline or one model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub condition: String,
    pub files: Vec<FileMetrics>,
    pub aggregate: Option<Summary>,
    pub per_category: BTreeMap<String, Summary>,
}

impl MetricReport {
    pub fn new(condition: impl Into<String>, mut files: Vec<FileMetrics>) -> Self {
        files.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        let mut r = Self {
            condition: condition.into(),
            files,
            aggregate: None,
            per_category: BTreeMap::new(),
        };
        r.recompute();
        r
    }

    /// Recomputes aggregates from the per-file rows.
    pub fn recompute(&mut self) {
        let all: Vec<&FileMetrics> = self.files.iter().collect();
        self.aggregate = Summary::of(&all);
        let mut groups: BTreeMap<String, Vec<&FileMetrics>> = BTreeMap::new();
        for f in &self.files {
            groups.entry(f.category.clone()).or_default().push(f);
        }
        self.per_category = groups
            .into_iter()
            .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
            .collect();
    }

    /// True if the stored aggregates equal a fresh recomputation.
    pub fn aggregates_consistent(&self) -> bool {
        let mut fresh = self.clone();
        fresh.recompute();
        fresh == *self
    }

    /// Merges externally computed PESQ scores from CSV `pair_id,pesq_nb,pesq_wb`
    /// (header required; empty cells allowed).
    pub fn import_pesq(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .unwrap_or_default()
            .split(',')
            .map(str::trim)
            .collect();
        let col = |name: &str| header.iter().position(|h| *h == name);
        let id_col = col("pair_id").ok_or_else(|| Error::Format {
            what: "pesq csv",
            detail: "missing pair_id column".into(),
        })?;
        let (nb_col, wb_col) = (col("pesq_nb"), col("pesq_wb"));
        let mut scores = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |c: Option<usize>| -> Result<Option<f64>> {
                match c.and_then(|c| cells.get(c)).filter(|s| !s.is_empty()) {
                    None => Ok(None),
                    Some(s) => s.parse().map(Some).map_err(|_| Error::Format {
                        what: "pesq csv",
                        detail: format!("line {}: bad number {s}", i + 2),
                    }),
                }
            };
            let id = cells.get(id_col).ok_or_else(|| Error::Format {
                what: "pesq csv",
                detail: format!("line {} has no pair_id", i + 2),
            })?;
            scores.insert(id.to_string(), (parse(nb_col)?, parse(wb_col)?));
        }
        for f in &mut self.files {
            if let Some(&(nb, wb)) = scores.get(&f.pair_id) {
                f.pesq_nb = nb.or(f.pesq_nb);
                f.pesq_wb = wb.or(f.pesq_wb);
            }
        }
        self.recompute();
        Ok(())
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Per-file rows as CSV.
    pub fn files_csv(&self) -> String {
        let mut s = String::from("pair_id,category,snr_db,ssnr_db,stoi,pesq_nb,pesq_wb\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in &self.files {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                f.pair_id,
                f.category,
                f.snr_db,
                f.ssnr_db,
                f.stoi,
                opt(f.pesq_nb),
                opt(f.pesq_wb)
            );
        }
        s
    }
}

fn read_checked(path: &Path) -> Result<Waveform> {
    read_wav(path).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Scores every test pair; `estimator` maps the noisy input to an estimate,
/// and `None` scores the input itself (the unprocessed baseline).
pub fn evaluate_testset(
    manifest: &DatasetManifest,
    condition: &str,
    estimator: Option<&(dyn Fn(&Waveform) -> Result<Waveform> + Sync)>,
    ssnr: &SsnrParams,
    exec: Exec,
) -> Result<MetricReport> {
    if let Some(bad) = manifest.records.iter().find(|r| r.mode != PairMode::Test) {
        return Err(Error::Config(format!(
            "evaluation needs a test manifest, {} is {}",
            bad.pair_id,
            bad.mode.as_str()
        )));
    }
    let rows = exec.map(&manifest.records, |rec| -> Result<FileMetrics> {
        let input = read_checked(&manifest.resolve(&rec.input_path))?;
        let clean = read_checked(&manifest.resolve(&rec.clean_path))?;
        let est = match estimator {
            Some(f) => f(&input)?,
            None => input,
        };
        Ok(FileMetrics {
            pair_id: rec.pair_id.clone(),
            category: rec.input_category.clone(),
            snr_db: snr_metric(&clean, &est)?,
            ssnr_db: ssnr_metric(&clean, &est, ssnr)?,
            stoi: stoi_metric(&clean, &est)?,
            pesq_nb: None,
            pesq_wb: None,
        })
    });
    Ok(MetricReport::new(
        condition,
        rows.into_iter().collect::<Result<Vec<_>>>()?,
    ))
}

/// One `(category, condition)` row of a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub category: String,
    pub condition: String,
    pub summary: Summary,
    /// Mean differences against the first condition, per metric.
    pub delta: BTreeMap<String, f64>,
}

/// Conditions side by side per noise category, first condition as reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub conditions: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn build(reports: &[MetricReport]) -> Result<Self> {
        let Some(reference) = reports.first() else {
            return Err(Error::InvalidArgument("no reports to compare".into()));
        };
        let mut categories: Vec<String> = vec![ALL_CATEGORIES.to_string()];
        for r in reports {
            for c in r.per_category.keys() {
                if !categories.contains(c) && c != ALL_CATEGORIES {
                    categories.push(c.clone());
                }
            }
        }
        categories[1..].sort();
        let lookup = |r: &MetricReport, cat: &str| -> Option<Summary> {
            if cat == ALL_CATEGORIES {
                r.aggregate.clone()
            } else {
                r.per_category.get(cat).cloned()
            }
        };
        let mut rows = Vec::new();
        for cat in &categories {
            let base = lookup(reference, cat);
            for r in reports {
                let Some(summary) = lookup(r, cat) else {
                    continue;
                };
                let mut delta = BTreeMap::new();
                if let Some(b) = &base {
                    for ((name, m), (_, bm)) in summary.metrics().into_iter().zip(b.metrics()) {
                        if let (Some(m), Some(bm)) = (m, bm) {
                            delta.insert(name.to_string(), m.mean - bm.mean);
                        }
                    }
                }
                rows.push(ComparisonRow {
                    category: cat.clone(),
                    condition: r.condition.clone(),
                    summary,
                    delta,
                });
            }
        }
        Ok(Self {
            conditions: reports.iter().map(|r| r.condition.clone()).collect(),
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let names = ["snr", "ssnr", "stoi", "pesq_nb", "pesq_wb"];
        let mut s = String::from("category,condition,n");
        for n in names {
            let _ = write!(s, ",{n}_mean,{n}_std,{n}_delta");
        }
        s.push('\n');
        for row in &self.rows {
            let _ = write!(
                s,
                "{},{},{}",
                row.category, row.condition, row.summary.snr_db.n
            );
            for (name, m) in row.summary.metrics() {
                match m {
                    Some(m) => {
                        let d = row
                            .delta
                            .get(name)
                            .map(|d| d.to_string())
                            .unwrap_or_default();
                        let _ = write!(s, ",{},{},{}", m.mean, m.std, d);
                    }
                    None => s.push_str(",,,"),
                }
            }
            s.push('\n');
        }
        s
    }

    /// Fixed-width text table with `mean ± std` cells.
    pub fn render_text(&self) -> String {
        let mut s = format!(
            "{:<12} {:<12} {:>18} {:>18} {:>16} {:>16} {:>16}\n",
            "category", "condition", "SNR", "SSNR", "STOI", "PESQ-NB", "PESQ-WB"
        );
        for row in &self.rows {
            let cell = |m: Option<MeanStd>| m.map(|m| m.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<12} {:<12} {:>18} {:>18} {:>16} {:>16} {:>16}",
                row.category,
                row.condition,
                cell(Some(row.summary.snr_db)),
                cell(Some(row.summary.ssnr_db)),
                cell(Some(row.summary.stoi)),
                cell(row.summary.pesq_nb),
                cell(row.summary.pesq_wb)
            );
        }
        s
    }
}

/// Long-format distribution data for violin-style plots:
/// `condition,category,pair_id,metric,value`.
pub fn plot_data(reports: &[MetricReport]) -> String {
    let mut s = String::from("condition,category,pair_id,metric,value\n");
    for r in reports {
        for f in &r.files {
            let vals = [
                ("snr", Some(f.snr_db)),
                ("ssnr", Some(f.ssnr_db)),
                ("stoi", Some(f.stoi)),
                ("pesq_nb", f.pesq_nb),
                ("pesq_wb", f.pesq_wb),
            ];
            for (name, v) in vals {
                if let Some(v) = v {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        r.condition, f.category, f.pair_id, name, v
                    );
                }
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, cat: &str, snr: f64) -> FileMetrics {
        FileMetrics {
            pair_id: id.into(),
            category: cat.into(),
            snr_db: snr,
            ssnr_db: snr / 2.0,
            stoi: 0.5,
            pesq_nb: None,
            pesq_wb: None,
        }
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.std, m.n), (2.0, 1.0, 2));
        assert!(MeanStd::of(&[]).is_none());
    }

    #[test]
    fn aggregates_and_categories() {
        let r = MetricReport::new(
            "Baseline",
            vec![
                row("b", "white", 4.0),
                row("a", "white", 6.0),
                row("c", "dog", 1.0),
            ],
        );
        assert_eq!(r.files[0].pair_id, "a");
        assert!((r.aggregate.as_ref().unwrap().snr_db.mean - 11.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_category["white"].snr_db.mean, 5.0);
        assert!(r.aggregates_consistent());
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn comparison_deltas() {
        let base = MetricReport::new("Baseline", vec![row("a", "white", 4.0)]);
        let model = MetricReport::new("N2N", vec![row("a", "white", 9.0)]);
        let t = ComparisonTable::build(&[base.clone(), model]).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(t.rows[1].delta["snr"], 5.0);
        let same = ComparisonTable::build(&[base.clone(), base]).unwrap();
        assert!(same
            .rows
            .iter()
            .all(|r| r.delta.values().all(|d| *d == 0.0)));
        assert!(t.render_text().contains("4.000 ± 0.000"));
        assert!(t.to_csv().lines().count() == 5);
    }

    #[test]
    fn plot_rows() {
        let r = MetricReport::new("N2C", vec![row("a", "white", 4.0)]);
        let p = plot_data(&[r]);
        assert_eq!(p.lines().count(), 4);
        assert!(p.contains("N2C,white,a,snr,4"));
    }
}
