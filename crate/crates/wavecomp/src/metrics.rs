//! Confusion matrices and the classification metrics the reports use:
//! multi-class accuracy as the mean of per-class one-vs-rest binary
//! accuracies, plus per-class precision/recall/F1.

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("count grid of {got} entries is not {classes}x{classes}")]
    NotSquare { classes: usize, got: usize },
}

/// N x N counts; entry (i, j) counts samples of true class i predicted as j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        ConfusionMatrix { classes, counts: vec![0; n * n] }
    }

    pub fn from_counts(classes: Vec<String>, counts: Vec<u64>) -> Result<Self, MetricsError> {
        let n = classes.len();
        if counts.len() != n * n {
            return Err(MetricsError::NotSquare { classes: n, got: counts.len() });
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn record(&mut self, actual: usize, predicted: usize) {
        let n = self.classes.len();
        self.counts[actual * n + predicted] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn count(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes.len() + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        let n = self.classes.len();
        self.counts[class * n..(class + 1) * n].iter().sum()
    }

    pub fn col_total(&self, class: usize) -> u64 {
        let n = self.classes.len();
        (0..n).map(|i| self.counts[i * n + class]).sum()
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "actual\\predicted")?;
        for c in &self.classes {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        let n = self.classes.len();
        for i in 0..n {
            write!(w, "{}", self.classes[i])?;
            for j in 0..n {
                write!(w, ",{}", self.counts[i * n + j])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// One-vs-rest tallies for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BinaryCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
    tn: u64,
}

fn binary_counts(cm: &ConfusionMatrix, class: usize) -> BinaryCounts {
    let tp = cm.count(class, class);
    let fn_ = cm.row_total(class) - tp;
    let fp = cm.col_total(class) - tp;
    let tn = cm.total() - tp - fp - fn_;
    BinaryCounts { tp, fp, fn_, tn }
}

/// Mean over classes of the one-vs-rest binary accuracy
/// (TP + TN) / (TP + TN + FP + FN).
pub fn accuracy_mc(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.n_classes() == 0 || cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let total = cm.total() as f64;
    let sum: f64 = (0..cm.n_classes())
        .map(|i| {
            let b = binary_counts(cm, i);
            (b.tp + b.tn) as f64 / total
        })
        .sum();
    Ok(sum / cm.n_classes() as f64)
}

/// Per-class precision/recall/F1 plus the one-vs-rest accuracy column the
/// report tables carry. Zero denominators report 0 and set `zero_division`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub one_vs_rest_accuracy: f64,
    pub support: u64,
    pub zero_division: bool,
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> Result<Vec<ClassMetrics>, MetricsError> {
    if cm.n_classes() == 0 || cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let total = cm.total() as f64;
    Ok((0..cm.n_classes())
        .map(|i| {
            let b = binary_counts(cm, i);
            let mut zero_division = false;
            let mut ratio = |num: u64, den: u64| {
                if den == 0 {
                    zero_division = true;
                    0.0
                } else {
                    num as f64 / den as f64
                }
            };
            let precision = ratio(b.tp, b.tp + b.fp);
            let recall = ratio(b.tp, b.tp + b.fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                class: cm.classes()[i].clone(),
                precision,
                recall,
                f1,
                one_vs_rest_accuracy: (b.tp + b.tn) as f64 / total,
                support: b.tp + b.fn_,
                zero_division,
            }
        })
        .collect())
}

/// Per-class table in the layout the evaluation reports use.
pub fn write_metrics_csv(rows: &[ClassMetrics], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "class,precision,recall,f1,accuracy,support,flags")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.4},{:.4},{:.4},{:.4},{},{}",
            r.class,
            r.precision,
            r.recall,
            r.f1,
            r.one_vs_rest_accuracy,
            r.support,
            if r.zero_division { "zero_division" } else { "" }
        )?;
    }
    Ok(())
}
