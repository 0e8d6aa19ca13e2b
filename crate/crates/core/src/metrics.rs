//! Classification metrics: accuracy, macro precision / sensitivity / F1,
//! macro one-vs-rest AUC, and confusion matrices.

use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    /// Macro precision.
    pub pre: f64,
    /// Macro recall (sensitivity).
    pub sen: f64,
    pub f1: f64,
    pub auc: f64,
    pub per_class: Vec<ClassScores>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Confusion rows divided by the true-class count.
    pub confusion_normalized: Vec<Vec<f64>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Computes the full report. `scores` is `n x C`; every class in `0..C` must
/// occur in `true_labels`.
pub fn report<F: Scalar>(
    true_labels: &[usize],
    predicted: &[usize],
    scores: ArrayView2<F>,
) -> Result<MetricsReport> {
    let (n, classes) = scores.dim();
    if true_labels.len() != n || predicted.len() != n {
        return Err(Error::Shape {
            context: "metric inputs",
            expected: vec![n, n],
            actual: vec![true_labels.len(), predicted.len()],
        });
    }
    if classes < 2 {
        return Err(Error::Invalid("metrics need at least 2 classes".into()));
    }
    if let Some(&label) = true_labels.iter().chain(predicted).find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid("class scores must be finite".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in true_labels.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    if let Some(class) = support.iter().position(|&s| s == 0) {
        return Err(Error::MissingClass { class });
    }

    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted_c: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let precision = ratio(tp, predicted_c);
        let recall = ratio(tp, support[c]);
        let column: Vec<f64> = scores.column(c).iter().map(|s| s.as_f64()).collect();
        let positive: Vec<bool> = true_labels.iter().map(|&t| t == c).collect();
        per_class.push(ClassScores {
            precision,
            recall,
            f1: harmonic(precision, recall),
            auc: rank_auc(&column, &positive),
        });
    }
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / classes as f64;
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let confusion_normalized = confusion
        .iter()
        .zip(&support)
        .map(|(row, &s)| row.iter().map(|&v| v as f64 / s as f64).collect())
        .collect();
    Ok(MetricsReport {
        acc: correct as f64 / n as f64,
        pre: mean(|c| c.precision),
        sen: mean(|c| c.recall),
        f1: mean(|c| c.f1),
        auc: mean(|c| c.auc),
        per_class,
        confusion,
        confusion_normalized,
    })
}

/// Mann-Whitney AUC with mid-ranks, so tied scores count one half.
fn rank_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = mid;
        }
        i = j;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

impl MetricsReport {
    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn per_class_f1(&self) -> Vec<f64> {
        self.per_class.iter().map(|c| c.f1).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Raw confusion counts, rows = true class, columns = predicted class.
    pub fn confusion_csv(&self) -> String {
        let c = self.classes();
        let mut out = String::from("true\\pred");
        for j in 0..c {
            let _ = write!(out, ",{j}");
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            let _ = write!(out, "{i}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Heatmap of the row-normalized confusion matrix as a standalone SVG.
    pub fn confusion_svg(&self) -> String {
        const CELL: usize = 56;
        const LEFT: usize = 64;
        const TOP: usize = 40;
        let c = self.classes();
        let width = LEFT + c * CELL + 16;
        let height = TOP + c * CELL + 48;
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="13">"#
        );
        let _ = writeln!(
            svg,
            r#"<rect width="{width}" height="{height}" fill="white"/>"#
        );
        for (i, row) in self.confusion_normalized.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let x = LEFT + j * CELL;
                let y = TOP + i * CELL;
                let shade = (255.0 - 200.0 * v.clamp(0.0, 1.0)).round() as u8;
                let text = if v > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    svg,
                    r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({shade},{shade},255)" stroke="#888"/>"##
                );
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="central" fill="{text}">{v:.2}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2
                );
            }
        }
        for k in 0..c {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{k}</text>"#,
                LEFT + k * CELL + CELL / 2,
                TOP + c * CELL + 18
            );
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="end" dominant-baseline="central">{k}</text>"#,
                LEFT - 8,
                TOP + k * CELL + CELL / 2
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#,
            LEFT + c * CELL / 2,
            TOP + c * CELL + 40
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">true</text>"#,
            TOP + c * CELL / 2,
            TOP + c * CELL / 2
        );
        svg.push_str("</svg>\n");
        svg
    }
}
