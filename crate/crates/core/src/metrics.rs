//! Classification metrics, ROC analysis and latency statistics.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Empty("confusion matrix")),
            t => Ok(self.trace() as f64 / t as f64),
        }
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::Label(format!(
                "label pair ({t}, {p}) outside 0..{num_classes}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Per-row rates; all-zero rows stay zero.
pub fn row_normalize(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    cm.counts
        .iter()
        .map(|row| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zero denominators give 0 rather than NaN.
pub fn precision_recall_f1(cm: &ConfusionMatrix) -> ClassScores {
    let c = cm.num_classes();
    let precision: Vec<f64> = (0..c).map(|i| ratio(cm.counts[i][i], cm.col_sum(i))).collect();
    let recall: Vec<f64> = (0..c).map(|i| ratio(cm.counts[i][i], cm.row_sum(i))).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
        .collect();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    ClassScores {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let n = total as f64;
    let p_o = cm.trace() as f64 / n;
    let p_e: f64 = (0..cm.num_classes())
        .map(|i| cm.row_sum(i) as f64 * cm.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e == 1.0 {
        return if p_o == 1.0 {
            Ok(1.0)
        } else {
            Err(Error::Undefined("kappa undefined: chance agreement is 1".into()))
        };
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over the distinct scores, highest first; equal scores
/// form a single step.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            positives.len()
        )));
    }
    let p = positives.iter().filter(|&&b| b).count();
    let n = positives.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::Undefined(format!(
            "AUC undefined with {p} positive and {n} negative samples"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub iterations: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Samples processed per second.
    pub throughput_per_s: f64,
    /// Window length over mean latency.
    pub real_time_factor: f64,
}

pub const WARMUP_ITERATIONS: usize = 10;
pub const WINDOW_MS: f64 = 4000.0;

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl LatencyStats {
    pub fn from_samples_ms(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("latency samples"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        Ok(Self {
            iterations: samples.len(),
            mean_ms: mean,
            p50_ms: percentile(&sorted, 0.5),
            p95_ms: percentile(&sorted, 0.95),
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
            throughput_per_s: 1000.0 / mean,
            real_time_factor: WINDOW_MS / mean,
        })
    }
}

/// Times `run` after [`WARMUP_ITERATIONS`] untimed calls.
pub fn latency_benchmark<F: FnMut() -> Result<()>>(mut run: F, iterations: usize) -> Result<LatencyStats> {
    if iterations < 10 {
        return Err(Error::Config(format!(
            "need at least 10 timed iterations, got {iterations}"
        )));
    }
    for _ in 0..WARMUP_ITERATIONS {
        run()?;
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let start = Instant::now();
        run()?;
        samples.push(start.elapsed().as_secs_f64() * 1000.0);
    }
    LatencyStats::from_samples_ms(&samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRoc {
    pub class_id: usize,
    pub name: String,
    pub curve: Option<RocCurve>,
    /// Why the curve is missing.
    pub undefined: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_samples: usize,
    pub class_names: Vec<String>,
    pub accuracy: f64,
    pub kappa: f64,
    pub scores: ClassScores,
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: Vec<Vec<f64>>,
    pub roc: Vec<ClassRoc>,
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    /// Builds the report from true labels and per-sample class probabilities.
    pub fn from_probabilities(y_true: &[usize], probs: &[Vec<f64>], class_names: &[String]) -> Result<Self> {
        let c = class_names.len();
        if y_true.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        if probs.len() != y_true.len() || probs.iter().any(|p| p.len() != c) {
            return Err(Error::Shape(format!(
                "need {} probability rows of length {c}",
                y_true.len()
            )));
        }
        let y_pred: Vec<usize> = probs.iter().map(|p| crate::nn::argmax(p)).collect();
        let cm = confusion_matrix(y_true, &y_pred, c)?;
        let scores = precision_recall_f1(&cm);
        let accuracy = cm.accuracy()?;
        let weighted_recall: f64 = (0..c)
            .map(|i| scores.recall[i] * cm.row_sum(i) as f64)
            .sum::<f64>()
            / cm.total() as f64;
        debug_assert!((accuracy - weighted_recall).abs() < 1e-12);
        let kappa = cohens_kappa(&cm)?;
        debug_assert!(kappa <= accuracy + 1e-12);

        let roc = (0..c)
            .map(|k| {
                let s: Vec<f64> = probs.iter().map(|p| p[k]).collect();
                let pos: Vec<bool> = y_true.iter().map(|&t| t == k).collect();
                let (curve, undefined) = match roc_curve(&s, &pos) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                ClassRoc {
                    class_id: k,
                    name: class_names[k].clone(),
                    curve,
                    undefined,
                }
            })
            .collect();
        Ok(Self {
            num_samples: y_true.len(),
            class_names: class_names.to_vec(),
            accuracy,
            kappa,
            confusion_normalized: row_normalize(&cm),
            confusion: cm,
            scores,
            roc,
            latency: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn confusion_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }

    pub fn roc_csv(&self) -> String {
        let mut out = String::from("class,fpr,tpr\n");
        for r in &self.roc {
            for (f, t) in r.curve.iter().flat_map(|c| &c.points) {
                out.push_str(&format!("{},{f},{t}\n", r.name));
            }
        }
        out
    }

    /// Writes `report.json`, `confusion.csv`, `roc.csv` and `confusion.pgm`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
        };
        write("report.json", self.to_json()?.as_bytes())?;
        write("confusion.csv", self.confusion_csv().as_bytes())?;
        write("roc.csv", self.roc_csv().as_bytes())?;
        let mut pgm = Vec::new();
        confusion_heatmap(&self.confusion_normalized, 32, &mut pgm)
            .map_err(|e| Error::io(dir.join("confusion.pgm"), e))?;
        write("confusion.pgm", &pgm)
    }
}

/// Binary PGM with `cell` x `cell` pixels per matrix entry, white = 1.
pub fn confusion_heatmap<W: Write>(normalized: &[Vec<f64>], cell: usize, mut out: W) -> std::io::Result<()> {
    let c = normalized.len();
    let side = c * cell;
    write!(out, "P5\n{side} {side}\n255\n")?;
    let mut row = vec![0u8; side];
    for r in normalized {
        for (j, &v) in r.iter().enumerate() {
            let px = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            row[j * cell..(j + 1) * cell].fill(px);
        }
        for _ in 0..cell {
            out.write_all(&row)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        ConfusionMatrix { counts }
    }

    #[test]
    fn counts() {
        let m = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(confusion_matrix(&[], &[], 3).unwrap().total(), 0);
        let diag = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(diag.trace(), 3);
        assert!(matches!(confusion_matrix(&[0], &[2], 2), Err(Error::Label(_))));
    }

    #[test]
    fn normalization() {
        assert_eq!(
            row_normalize(&cm(vec![vec![1, 1], vec![0, 2]])),
            vec![vec![0.5, 0.5], vec![0.0, 1.0]]
        );
        assert_eq!(
            row_normalize(&cm(vec![vec![0, 0], vec![0, 2]]))[0],
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn two_class_scores() {
        let m = cm(vec![vec![45, 5], vec![15, 35]]);
        let s = precision_recall_f1(&m);
        assert!((s.precision[0] - 0.75).abs() < 1e-12);
        assert!((s.recall[0] - 0.90).abs() < 1e-12);
        assert!((s.f1[0] - 2.0 * 0.75 * 0.9 / 1.65).abs() < 1e-12);
        assert!((cohens_kappa(&m).unwrap() - 0.6).abs() < 1e-12);

        let never = precision_recall_f1(&cm(vec![vec![3, 0], vec![2, 0]]));
        assert_eq!(never.precision[1], 0.0);
        assert_eq!(never.f1[1], 0.0);
    }

    #[test]
    fn kappa_edges() {
        assert_eq!(cohens_kappa(&cm(vec![vec![5, 0], vec![0, 7]])).unwrap(), 1.0);
        assert_eq!(cohens_kappa(&cm(vec![vec![4, 0], vec![0, 0]])).unwrap(), 1.0);
        assert!(cohens_kappa(&cm(vec![vec![0, 0], vec![0, 0]])).is_err());
        // Outer product of marginals (2,3) x (4,1).
        let indep = cm(vec![vec![8, 2], vec![12, 3]]);
        assert!(cohens_kappa(&indep).unwrap().abs() < 1e-12);
    }

    #[test]
    fn roc_edges() {
        let sep = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(sep.auc, 1.0);
        let flat = roc_curve(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(flat.auc, 0.5);
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[true, true]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn latency_order_statistics() {
        let s = LatencyStats::from_samples_ms(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.p50_ms, 3.0);
        assert_eq!(s.p95_ms, 5.0);
        assert_eq!(s.mean_ms, 3.0);
        assert!((s.real_time_factor - 4000.0 / 3.0).abs() < 1e-9);
        assert!(latency_benchmark(|| Ok(()), 9).is_err());
        let mut calls = 0;
        let b = latency_benchmark(
            || {
                calls += 1;
                Ok(())
            },
            10,
        )
        .unwrap();
        assert_eq!(calls, 20);
        assert!(b.p50_ms <= b.p95_ms);
    }

    #[test]
    fn report_marks_absent_class() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let probs = vec![vec![0.8, 0.1, 0.1], vec![0.2, 0.7, 0.1], vec![0.6, 0.3, 0.1]];
        let r = EvalReport::from_probabilities(&[0, 1, 0], &probs, &names).unwrap();
        assert!(r.roc[2].curve.is_none() && r.roc[2].undefined.is_some());
        assert_eq!(r.roc[0].curve.as_ref().unwrap().auc, 1.0);
        assert_eq!(r.accuracy, 1.0);
        let mut pgm = Vec::new();
        confusion_heatmap(&r.confusion_normalized, 2, &mut pgm).unwrap();
        assert!(pgm.starts_with(b"P5\n6 6\n255\n"));
        assert_eq!(pgm.len(), 11 + 36);
    }
}
