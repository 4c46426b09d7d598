//! Metric reports with optional per-fold summaries.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use setproc::metrics::{accuracy, clustering_scores, detection_prf};
use setproc::novelty::Decision;

use crate::error::{CliError, CliResult};

pub type Metrics = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub folds: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub task: String,
    pub n: usize,
    pub metrics: Metrics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<Metrics>,
}

/// Ground truth or predictions in the form a task needs.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Flags(Vec<Decision>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(v) => v.len(),
            Labels::Flags(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn subset(&self, idx: &[usize]) -> Self {
        match self {
            Labels::Classes(v) => Labels::Classes(idx.iter().map(|&i| v[i]).collect()),
            Labels::Flags(v) => Labels::Flags(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

fn class_of(line: &serde_json::Value, i: usize) -> CliResult<usize> {
    line.get("label")
        .and_then(serde_json::Value::as_u64)
        .map(|l| l as usize)
        .ok_or_else(|| CliError::Data(format!("line {}: missing integer \"label\"", i + 1)))
}

/// Reads a decision from `"novel"` (bool) or, failing that, `"label"` (nonzero = novel).
fn flag_of(line: &serde_json::Value, i: usize) -> CliResult<Decision> {
    let novel = match line.get("novel").and_then(serde_json::Value::as_bool) {
        Some(b) => b,
        None => class_of(line, i)? != 0,
    };
    Ok(if novel { Decision::Novel } else { Decision::Normal })
}

pub fn parse_labels(lines: &[serde_json::Value], flags: bool) -> CliResult<Labels> {
    if flags {
        Ok(Labels::Flags(
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| flag_of(l, i))
                .collect::<CliResult<_>>()?,
        ))
    } else {
        Ok(Labels::Classes(
            lines
                .iter()
                .enumerate()
                .map(|(i, l)| class_of(l, i))
                .collect::<CliResult<_>>()?,
        ))
    }
}

pub fn compute_metrics(task: &str, truth: &Labels, pred: &Labels) -> CliResult<Metrics> {
    let mut m = Metrics::new();
    match (task, truth, pred) {
        ("classify", Labels::Classes(t), Labels::Classes(p)) => {
            m.insert("accuracy".into(), accuracy(t, p)?);
        }
        ("cluster", Labels::Classes(t), Labels::Classes(p)) => {
            let s = clustering_scores(t, p)?;
            m.insert("purity".into(), s.purity);
            m.insert("nmi".into(), s.nmi);
            m.insert("rand".into(), s.rand);
            m.insert("pair_f1".into(), s.pair_f1);
        }
        ("novelty", Labels::Flags(t), Labels::Flags(p)) => {
            let s = detection_prf(t, p)?;
            m.insert("precision".into(), s.precision);
            m.insert("recall".into(), s.recall);
            m.insert("f1".into(), s.f1);
        }
        _ => return Err(CliError::Usage(format!("labels do not fit task '{task}'"))),
    }
    Ok(m)
}

/// Mean and sample standard deviation (n - 1) of each metric over folds.
pub fn summarize(folds: &[FoldReport]) -> (Metrics, Metrics) {
    let mut mean = Metrics::new();
    let mut std = Metrics::new();
    let Some(first) = folds.first() else {
        return (mean, std);
    };
    let n = folds.len() as f64;
    for key in first.metrics.keys() {
        let vals: Vec<f64> = folds.iter().filter_map(|f| f.metrics.get(key).copied()).collect();
        let mu = vals.iter().sum::<f64>() / n;
        let var = if folds.len() > 1 {
            vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.insert(key.clone(), mu);
        std.insert(key.clone(), var.sqrt());
    }
    (mean, std)
}

pub fn build_report(task: &str, truth: &Labels, pred: &Labels, manifest: Option<&FoldManifest>) -> CliResult<Report> {
    if truth.len() != pred.len() {
        return Err(CliError::Data(format!(
            "truth has {} entries but predictions have {}",
            truth.len(),
            pred.len()
        )));
    }
    let metrics = compute_metrics(task, truth, pred)?;
    let mut report = Report {
        task: task.to_string(),
        n: truth.len(),
        metrics,
        folds: Vec::new(),
        mean: None,
        std: None,
    };
    if let Some(man) = manifest {
        for (k, idx) in man.folds.iter().enumerate() {
            if let Some(&bad) = idx.iter().find(|&&i| i >= truth.len()) {
                return Err(CliError::Data(format!("fold {k} refers to record {bad}, out of range")));
            }
            report.folds.push(FoldReport {
                fold: k,
                n: idx.len(),
                metrics: compute_metrics(task, &truth.subset(idx), &pred.subset(idx))?,
            });
        }
        let (mean, std) = summarize(&report.folds);
        report.mean = Some(mean);
        report.std = Some(std);
    }
    Ok(report)
}

/// `metric,value,mean,std` rows; mean and std are blank without folds.
pub fn write_csv(path: &Path, report: &Report) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["metric", "value", "mean", "std"]).map_err(io)?;
    for (k, v) in &report.metrics {
        let mean = report
            .mean
            .as_ref()
            .and_then(|m| m.get(k))
            .map_or(String::new(), f64::to_string);
        let std = report
            .std
            .as_ref()
            .and_then(|m| m.get(k))
            .map_or(String::new(), f64::to_string);
        w.write_record([k.clone(), v.to_string(), mean, std]).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_labels_score_one() {
        let t = Labels::Classes(vec![0, 0, 1, 2, 2]);
        for task in ["classify", "cluster"] {
            let r = build_report(task, &t, &t, None).unwrap();
            assert!(
                r.metrics.values().all(|&v| (v - 1.0).abs() < 1e-12),
                "{task}: {:?}",
                r.metrics
            );
        }
        let f = Labels::Flags(vec![Decision::Novel, Decision::Normal]);
        let r = build_report("novelty", &f, &f, None).unwrap();
        assert_eq!(r.metrics["f1"], 1.0);
    }

    #[test]
    fn fold_summary() {
        let t = Labels::Classes(vec![0, 1, 0, 1]);
        let p = Labels::Classes(vec![0, 1, 1, 1]);
        let man = FoldManifest {
            folds: vec![vec![0, 1], vec![2, 3]],
        };
        let r = build_report("classify", &t, &p, Some(&man)).unwrap();
        assert_eq!(r.folds[0].metrics["accuracy"], 1.0);
        assert_eq!(r.folds[1].metrics["accuracy"], 0.5);
        assert_eq!(r.mean.as_ref().unwrap()["accuracy"], 0.75);
        assert!((r.std.as_ref().unwrap()["accuracy"] - 0.125f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flags_from_labels_or_bools() {
        let lines: Vec<serde_json::Value> = vec![
            serde_json::json!({"novel": true}),
            serde_json::json!({"label": 0}),
            serde_json::json!({"label": 1, "points": []}),
        ];
        assert_eq!(
            parse_labels(&lines, true).unwrap(),
            Labels::Flags(vec![Decision::Novel, Decision::Normal, Decision::Novel])
        );
        assert!(parse_labels(&lines, false).is_err());
    }
}
