use std::fmt::Write;

use crate::error::{Error, Result};
use crate::metrics::{dice_score, hd95, jaccard_score};
use crate::tensor::Tensor;

/// Scores of one foreground class on one case. `hd95` is `None` when
/// either mask lacks the class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub dice: f64,
    pub jaccard: f64,
    pub hd95: Option<f64>,
}

/// Per-class metrics of one case, foreground classes `1..K` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseMetrics {
    pub per_class: Vec<ClassMetrics>,
}

pub fn evaluate_case(pred: &Tensor<u8>, reference: &Tensor<u8>, num_classes: usize, spacing: f64) -> Result<CaseMetrics> {
    let per_class = (1..num_classes)
        .map(|c| {
            let c = c as u8;
            let hd = match hd95(pred, reference, c, spacing) {
                Ok(d) => Some(d),
                Err(Error::EmptyMask) => None,
                Err(e) => return Err(e),
            };
            Ok(ClassMetrics {
                dice: dice_score(pred, reference, c)?,
                jaccard: jaccard_score(pred, reference, c)?,
                hd95: hd,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CaseMetrics { per_class })
}

/// Case-averaged metrics of one foreground class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary {
    pub class: usize,
    pub dice: f64,
    pub jaccard: f64,
    /// Mean over the cases where it was defined.
    pub hd95: Option<f64>,
    /// Cases where hd95 was undefined.
    pub n_missing: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: Vec<ClassSummary>,
    pub dice_avg: f64,
    pub jaccard_avg: f64,
    /// Mean over classes with at least one defined hd95.
    pub hd95_avg: Option<f64>,
    pub n_cases: usize,
    /// Total undefined hd95 entries across classes and cases.
    pub n_missing: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Unweighted mean over cases per class, then over classes.
pub fn aggregate(cases: &[CaseMetrics]) -> Result<MetricReport> {
    let first = cases
        .first()
        .ok_or_else(|| Error::InvalidArgument("no cases to aggregate".into()))?;
    let k = first.per_class.len();
    if cases.iter().any(|c| c.per_class.len() != k) {
        return Err(Error::InvalidArgument("cases disagree on class count".into()));
    }
    let per_class: Vec<ClassSummary> = (0..k)
        .map(|c| {
            let col = || cases.iter().map(move |case| case.per_class[c]);
            ClassSummary {
                class: c + 1,
                dice: mean(col().map(|m| m.dice)).unwrap_or(0.0),
                jaccard: mean(col().map(|m| m.jaccard)).unwrap_or(0.0),
                hd95: mean(col().filter_map(|m| m.hd95)),
                n_missing: col().filter(|m| m.hd95.is_none()).count(),
            }
        })
        .collect();
    Ok(MetricReport {
        dice_avg: mean(per_class.iter().map(|s| s.dice)).unwrap_or(0.0),
        jaccard_avg: mean(per_class.iter().map(|s| s.jaccard)).unwrap_or(0.0),
        hd95_avg: mean(per_class.iter().filter_map(|s| s.hd95)),
        n_missing: per_class.iter().map(|s| s.n_missing).sum(),
        n_cases: cases.len(),
        per_class,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.2}"))
}

impl MetricReport {
    /// `Method, Dice(avg), Hd95(avg), Jaccard(avg)` and one Dice column per
    /// foreground class, tab separated.
    pub fn tsv_header(&self, class_names: &[String]) -> String {
        let mut line = String::from("Method\tDice(avg)\tHd95(avg)\tJaccard(avg)");
        for s in &self.per_class {
            match class_names.get(s.class) {
                Some(name) => write!(line, "\t{name}").unwrap(),
                None => write!(line, "\tClass{}", s.class).unwrap(),
            }
        }
        line
    }

    /// Values with two decimals; an undefined hd95 prints as `NA`.
    pub fn tsv_row(&self, method: &str) -> String {
        let mut line = format!(
            "{method}\t{:.2}\t{}\t{:.2}",
            self.dice_avg,
            fmt_opt(self.hd95_avg),
            self.jaccard_avg
        );
        for s in &self.per_class {
            write!(line, "\t{:.2}", s.dice).unwrap();
        }
        line
    }

    pub fn to_tsv(&self, method: &str, class_names: &[String]) -> String {
        format!("{}\n{}\n", self.tsv_header(class_names), self.tsv_row(method))
    }
}
