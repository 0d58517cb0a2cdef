use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::AccuracyMatrix;
use crate::config::{Config, MethodFlags};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: usize,
    pub lambda: f64,
    pub classes: usize,
    pub new_classes: usize,
    pub clamped_classes: usize,
    pub train_samples: usize,
    /// Training samples after augmentation (equal to `train_samples` without it).
    pub augmented_samples: usize,
    pub test_samples: usize,
    /// Gini of the task's (post-augmentation) class counts.
    pub gini: f64,
    /// Regularizer used for the closed-form solve; absent for gradient heads.
    pub gamma: Option<f64>,
}

/// Everything a run produces except wall-clock timings, so the serialized
/// form is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline: String,
    pub flags: MethodFlags,
    pub seed: u64,
    /// Test noise level label (`clean` = capture noise only).
    pub snr: String,
    pub acc_matrix: AccuracyMatrix,
    pub mae_matrix: AccuracyMatrix,
    /// Over the union of all test sets with the final classifier.
    pub final_acc: f64,
    pub final_mae: f64,
    /// Absent when the method has no incremental sequence (joint training).
    pub bwt: Option<f64>,
    pub tasks: Vec<TaskSummary>,
    pub config: Config,
}

fn round6(x: f64) -> f64 {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(r) = n.as_f64().map(round6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_floats),
        Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

impl EvalReport {
    /// Pretty JSON with every real rounded to 6 decimals.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        round_floats(&mut v);
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }
}

fn fx(x: f64) -> String {
    format!("{:.6}", round6(x))
}

fn opt(x: Option<f64>) -> String {
    x.map(fx).unwrap_or_default()
}

/// Rows are the task just trained, columns the evaluated test set; cells
/// above the diagonal are empty.
pub fn acc_matrix_csv(a: &AccuracyMatrix) -> String {
    let t = a.tasks();
    let mut out = String::from("m");
    for k in 1..=t {
        write!(out, ",k{k}").unwrap();
    }
    out.push('\n');
    for (m, row) in a.rows.iter().enumerate() {
        write!(out, "{}", m + 1).unwrap();
        for k in 0..t {
            out.push(',');
            if let Some(v) = row.get(k) {
                out.push_str(&fx(*v));
            }
        }
        out.push('\n');
    }
    out
}

fn summary_header(tasks: usize) -> String {
    let mut h = String::from("baseline,gda,arm_reweight,adaptive_gamma,seed,acc_pct,mae_deg,bwt_pct");
    for t in 1..=tasks {
        write!(h, ",gamma_t{t}").unwrap();
    }
    for t in 1..=tasks {
        write!(h, ",gini_t{t}").unwrap();
    }
    h
}

fn summary_row(r: &EvalReport, acc: f64, mae: f64, bwt: Option<f64>) -> String {
    let mut row = format!(
        "{},{},{},{},{},{},{},{}",
        r.baseline,
        r.flags.gda,
        r.flags.arm_reweight,
        r.flags.adaptive_gamma,
        r.seed,
        fx(100.0 * acc),
        fx(mae),
        opt(bwt.map(|b| 100.0 * b)),
    );
    for t in &r.tasks {
        write!(row, ",{}", opt(t.gamma)).unwrap();
    }
    for t in &r.tasks {
        write!(row, ",{}", fx(t.gini)).unwrap();
    }
    row
}

/// One row per report; ACC and BWT in percent, MAE in degrees.
pub fn summary_csv(reports: &[&EvalReport]) -> String {
    let tasks = reports.first().map_or(0, |r| r.tasks.len());
    let mut out = summary_header(tasks);
    out.push('\n');
    for r in reports {
        out.push_str(&summary_row(r, r.final_acc, r.final_mae, r.bwt));
        out.push('\n');
    }
    out
}

/// Summary rows prefixed by the test SNR, plus an `Avg.` row when more than
/// one level was evaluated.
pub fn sweep_csv(rows: &[(String, &EvalReport)]) -> String {
    let tasks = rows.first().map_or(0, |r| r.1.tasks.len());
    let mut out = format!("snr,{}\n", summary_header(tasks));
    for (label, r) in rows {
        writeln!(out, "{label},{}", summary_row(r, r.final_acc, r.final_mae, r.bwt)).unwrap();
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let acc = rows.iter().map(|r| r.1.final_acc).sum::<f64>() / n;
        let mae = rows.iter().map(|r| r.1.final_mae).sum::<f64>() / n;
        let bwt = rows
            .iter()
            .map(|r| r.1.bwt)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        writeln!(out, "Avg.,{}", summary_row(rows[0].1, acc, mae, bwt)).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub gda: bool,
    pub adir: bool,
    pub report: EvalReport,
}

/// The 2×2 {GDA}×{ADIR} grid; ACC and BWT in percent.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("GDA,ADIR,MAE,ACC,BWT\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.gda,
            r.adir,
            fx(r.report.final_mae),
            fx(100.0 * r.report.final_acc),
            opt(r.report.bwt.map(|b| 100.0 * b)),
        )
        .unwrap();
    }
    out
}
