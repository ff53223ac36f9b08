//! Accuracy, macro-F1 and Cohen's kappa over confusion matrices, plus the
//! majority-class baseline.
//!
//! Counts are exact integers; every metric is formed with a single final
//! floating-point division where possible.

use std::io::Write;

use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};

/// `K × K` counts, rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_pairs<I>(k: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut cm = ConfusionMatrix::new(k);
        for (truth, pred) in pairs {
            cm.add(truth, pred)?;
        }
        Ok(cm)
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.k {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.k,
                });
            }
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn true_count(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted_count(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum()
    }

    /// Same matrix with class `c` renamed to `perm[c]` on both axes.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let mut out = ConfusionMatrix::new(self.k);
        for t in 0..self.k {
            for p in 0..self.k {
                out.counts[perm[t] * self.k + perm[p]] = self.get(t, p);
            }
        }
        Ok(out)
    }

    fn nonempty_total(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::Empty("confusion matrix")),
            n => Ok(n),
        }
    }

    /// TSV grid with a header row of column labels and the row label first.
    pub fn write_tsv<W: Write>(&self, mut w: W, labels: &[String]) -> Result<()> {
        if labels.len() != self.k {
            return Err(Error::Shape(format!(
                "{} labels for {} classes",
                labels.len(),
                self.k
            )));
        }
        writeln!(w, "truth\\predicted\t{}", labels.join("\t"))?;
        for (t, label) in labels.iter().enumerate() {
            let row: Vec<String> = (0..self.k).map(|p| self.get(t, p).to_string()).collect();
            writeln!(w, "{label}\t{}", row.join("\t"))?;
        }
        Ok(())
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.nonempty_total()?;
    Ok(cm.trace() as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision and recall are 0 for a class never predicted or never present;
/// F1 is 0 when precision + recall is 0.
pub fn class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.classes())
        .map(|c| {
            let tp = cm.get(c, c);
            let predicted = cm.predicted_count(c);
            let actual = cm.true_count(c);
            let precision = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let recall = if actual == 0 {
                0.0
            } else {
                tp as f64 / actual as f64
            };
            // 2PR/(P+R) = 2tp/(predicted+actual)
            let f1 = if tp == 0 {
                0.0
            } else {
                (2 * tp) as f64 / (predicted + actual) as f64
            };
            ClassScores {
                precision,
                recall,
                f1,
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1 over all `K` classes.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    cm.nonempty_total()?;
    let scores = class_scores(cm);
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

/// Chance agreement `p_e = Σ_c p_c p̂_c`.
pub fn expected_agreement(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.nonempty_total()? as u128;
    let chance: u128 = (0..cm.classes())
        .map(|c| cm.true_count(c) as u128 * cm.predicted_count(c) as u128)
        .sum();
    Ok(chance as f64 / (n * n) as f64)
}

/// `(p_o − p_e) / (1 − p_e)`, evaluated as
/// `(n·trace − Σ r_c k_c) / (n² − Σ r_c k_c)` in exact integers. When
/// `p_e = 1` the result is 1 for perfect agreement and 0 otherwise.
pub fn cohens_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    let n = cm.nonempty_total()? as i128;
    let chance: i128 = (0..cm.classes())
        .map(|c| cm.true_count(c) as i128 * cm.predicted_count(c) as i128)
        .sum();
    let observed = n * cm.trace() as i128;
    if chance == n * n {
        return Ok(if observed == n * n { 1.0 } else { 0.0 });
    }
    Ok((observed - chance) as f64 / (n * n - chance) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub kappa: f64,
    pub expected_agreement: f64,
    pub per_class: Vec<ClassScores>,
    pub true_proportions: Vec<f64>,
    pub predicted_proportions: Vec<f64>,
}

impl MetricsReport {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let n = cm.nonempty_total()?;
        Ok(MetricsReport {
            n,
            accuracy: accuracy(cm)?,
            macro_f1: macro_f1(cm)?,
            kappa: cohens_kappa(cm)?,
            expected_agreement: expected_agreement(cm)?,
            per_class: class_scores(cm),
            true_proportions: (0..cm.classes())
                .map(|c| cm.true_count(c) as f64 / n as f64)
                .collect(),
            predicted_proportions: (0..cm.classes())
                .map(|c| cm.predicted_count(c) as f64 / n as f64)
                .collect(),
        })
    }
}

/// Anything that assigns a label to an instance.
pub trait Predictor {
    fn predict_label(&self, instance: &LabeledInstance) -> Result<usize>;
}

/// Emits the same label for every input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MajorityPredictor {
    pub label: usize,
}

impl Predictor for MajorityPredictor {
    fn predict_label(&self, _: &LabeledInstance) -> Result<usize> {
        Ok(self.label)
    }
}

/// Most frequent training label; ties go to the smaller label.
pub fn majority_baseline(train_labels: &[usize]) -> Result<MajorityPredictor> {
    let max = *train_labels
        .iter()
        .max()
        .ok_or(Error::Empty("training labels"))?;
    let mut counts = vec![0usize; max + 1];
    for &l in train_labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (label, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = label;
        }
    }
    Ok(MajorityPredictor { label: best })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    test: &[LabeledInstance],
    classes: usize,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for inst in test {
        let pred = predictor.predict_label(inst)?;
        cm.add(inst.label, pred)?;
    }
    Ok(Evaluation {
        report: MetricsReport::from_confusion(&cm)?,
        confusion: cm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("values"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Ok(MeanStd { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub count: usize,
    pub accuracy: MeanStd,
    pub macro_f1: MeanStd,
    pub kappa: MeanStd,
}

/// Mean and spread of each metric across abbreviations.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport> {
    let pick =
        |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        count: reports.len(),
        accuracy: pick(|r| r.accuracy)?,
        macro_f1: pick(|r| r.macro_f1)?,
        kappa: pick(|r| r.kappa)?,
    })
}

pub const REPORT_HEADER: &str = "abbreviation\tn\taccuracy\tmacro_f1\tkappa\texpected_agreement";

/// One row per abbreviation, then `mean` and `stddev` rows.
pub fn write_report_tsv<W: Write>(mut w: W, rows: &[(String, MetricsReport)]) -> Result<()> {
    writeln!(w, "{REPORT_HEADER}")?;
    for (abbr, r) in rows {
        writeln!(
            w,
            "{abbr}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.n, r.accuracy, r.macro_f1, r.kappa, r.expected_agreement
        )?;
    }
    if !rows.is_empty() {
        let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
        let agg = aggregate(&reports)?;
        let total: u64 = reports.iter().map(|r| r.n).sum();
        writeln!(
            w,
            "mean\t{total}\t{:.6}\t{:.6}\t{:.6}\t",
            agg.accuracy.mean, agg.macro_f1.mean, agg.kappa.mean
        )?;
        writeln!(
            w,
            "stddev\t{}\t{:.6}\t{:.6}\t{:.6}\t",
            agg.count, agg.accuracy.std, agg.macro_f1.std, agg.kappa.std
        )?;
    }
    Ok(())
}
