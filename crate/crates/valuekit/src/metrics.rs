//! Positive-class precision/recall/F1, macro averaging, and prevalence.

use crate::data::{BinaryMatrix, GoldMatrix};
use crate::error::{Error, Result};
use crate::num::{ratio, Scalar};
use crate::values::{ValueTaxonomy, NUM_VALUES};
use crate::Prob;

/// What to report when a precision/recall/F1 denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroDivision {
    /// Score 0.0 on a zero denominator (default, conservative for rare values).
    #[default]
    Zero,
    /// Score 1.0 when there are neither predicted nor gold positives.
    OneWhenBothEmpty,
}

/// Positive-class scores with the confusion counts behind them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PRFScore<S: Scalar = Prob> {
    pub precision: S,
    pub recall: S,
    pub f1: S,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl<S: Scalar> PRFScore<S> {
    pub fn from_counts(true_pos: usize, false_pos: usize, false_neg: usize, zero_division: ZeroDivision) -> Self {
        if zero_division == ZeroDivision::OneWhenBothEmpty
            && true_pos + false_pos == 0
            && true_pos + false_neg == 0
        {
            return PRFScore {
                precision: S::one(),
                recall: S::one(),
                f1: S::one(),
                true_pos,
                false_pos,
                false_neg,
            };
        }
        let precision = ratio::<S>(true_pos, true_pos + false_pos);
        let recall = ratio::<S>(true_pos, true_pos + false_neg);
        let two = S::one() + S::one();
        let f1 = if (precision + recall) > S::zero() {
            two * precision * recall / (precision + recall)
        } else {
            S::zero()
        };
        PRFScore {
            precision,
            recall,
            f1,
            true_pos,
            false_pos,
            false_neg,
        }
    }
}

/// tp/fp/fn of the positive class over paired binary vectors.
pub fn confusion_counts(pred: &[u8], gold: &[u8]) -> Result<(usize, usize, usize)> {
    if pred.len() != gold.len() {
        return Err(Error::Misalignment(format!(
            "prediction length {} != gold length {}",
            pred.len(),
            gold.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &g) in pred.iter().zip(gold.iter()) {
        tp += usize::from(p == 1 && g == 1);
        fp += usize::from(p == 1 && g == 0);
        fn_ += usize::from(p == 0 && g == 1);
    }
    Ok((tp, fp, fn_))
}

/// Positive-class precision, recall, and F1 for one label.
pub fn prf_positive<S: Scalar>(pred: &[u8], gold: &[u8], zero_division: ZeroDivision) -> Result<PRFScore<S>> {
    let (tp, fp, fn_) = confusion_counts(pred, gold)?;
    Ok(PRFScore::from_counts(tp, fp, fn_, zero_division))
}

/// Per-value scores plus their unweighted mean over all 19 values.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroReport<S: Scalar = Prob> {
    pub per_value: Vec<PRFScore<S>>,
    pub macro_f1: S,
}

impl<S: Scalar> MacroReport<S> {
    /// Mean positive-class recall, the tie-break quantity for threshold sweeps.
    pub fn mean_recall(&self) -> S {
        let sum: S = self.per_value.iter().map(|s| s.recall).sum();
        sum / crate::num::from_count(self.per_value.len())
    }

    /// Human/TSV table: one row per value (3-decimal scores, counts), then the
    /// macro-F1 line. Column order is the canonical value order.
    pub fn to_tsv(&self, taxonomy: &ValueTaxonomy, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("value\tprecision\trecall\tf1\ttp\tfp\tfn\n");
        for (v, score) in self.per_value.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}\t{}\n",
                taxonomy.name(v),
                score.precision,
                score.recall,
                score.f1,
                score.true_pos,
                score.false_pos,
                score.false_neg
            ));
        }
        out.push_str(&format!("macro-F1\t{:.3}\n", self.macro_f1));
        out
    }
}

/// Per-value positive-class PRF and their unweighted mean across all 19
/// values, including values without gold positives in this split.
pub fn macro_f1<S: Scalar>(pred: &BinaryMatrix, gold: &GoldMatrix, zero_division: ZeroDivision) -> Result<MacroReport<S>> {
    if pred.rows() != gold.n() || pred.cols() != NUM_VALUES {
        return Err(Error::Misalignment(format!(
            "predictions are {}x{}, gold is {}x{NUM_VALUES}",
            pred.rows(),
            pred.cols(),
            gold.n(),
        )));
    }
    let mut counts = [(0usize, 0usize, 0usize); NUM_VALUES];
    for i in 0..gold.n() {
        let prow = pred.row(i);
        let grow = gold.labels.row(i);
        for v in 0..NUM_VALUES {
            let (p, g) = (prow[v], grow[v]);
            counts[v].0 += usize::from(p == 1 && g == 1);
            counts[v].1 += usize::from(p == 1 && g == 0);
            counts[v].2 += usize::from(p == 0 && g == 1);
        }
    }
    let per_value: Vec<PRFScore<S>> = counts
        .iter()
        .map(|&(tp, fp, fn_)| PRFScore::from_counts(tp, fp, fn_, zero_division))
        .collect();
    let sum: S = per_value.iter().map(|s| s.f1).sum();
    let macro_f1 = sum / crate::num::from_count(NUM_VALUES);
    Ok(MacroReport { per_value, macro_f1 })
}

/// Positive-class PRF for the binary presence task, from an n x 1 prediction
/// matrix against the derived presence bits.
pub fn presence_prf<S: Scalar>(pred: &BinaryMatrix, gold: &GoldMatrix, zero_division: ZeroDivision) -> Result<PRFScore<S>> {
    if pred.cols() != 1 || pred.rows() != gold.n() {
        return Err(Error::Misalignment(format!(
            "presence predictions must be {}x1, got {}x{}",
            gold.n(),
            pred.rows(),
            pred.cols()
        )));
    }
    prf_positive(pred.data(), &gold.presence, zero_division)
}

/// Presence report as TSV (2-decimal scores, per the reporting convention
/// for the binary task).
pub fn presence_report_tsv<S: Scalar>(score: &PRFScore<S>, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        out.push_str(&format!("# {c}\n"));
    }
    out.push_str("task\tprecision\trecall\tf1\ttp\tfp\tfn\n");
    out.push_str(&format!(
        "presence\t{:.2}\t{:.2}\t{:.2}\t{}\t{}\t{}\n",
        score.precision, score.recall, score.f1, score.true_pos, score.false_pos, score.false_neg
    ));
    out
}

/// Raw positive counts per value and for presence; percentages are computed
/// at display time only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevalenceReport {
    pub per_value: Vec<usize>,
    pub presence: usize,
    pub n: usize,
}

impl PrevalenceReport {
    /// 100 * count / n, or 0 for an empty table.
    pub fn percent(&self, count: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.n as f64
        }
    }

    /// Table A-style rows: value, count, percent at 2 decimals.
    pub fn to_tsv(&self, taxonomy: &ValueTaxonomy, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(&format!("# n\t{}\n", self.n));
        out.push_str("value\tcount\tpercent\n");
        for (v, &count) in self.per_value.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{:.2}\n",
                taxonomy.name(v),
                count,
                self.percent(count)
            ));
        }
        out.push_str(&format!(
            "presence\t{}\t{:.2}\n",
            self.presence,
            self.percent(self.presence)
        ));
        out
    }
}

/// Counts positives per value and presence-positive instances.
pub fn prevalence(gold: &GoldMatrix) -> PrevalenceReport {
    let mut per_value = vec![0usize; NUM_VALUES];
    for i in 0..gold.n() {
        for (v, &bit) in gold.labels.row(i).iter().enumerate() {
            per_value[v] += usize::from(bit == 1);
        }
    }
    let presence = gold.presence.iter().filter(|&&b| b == 1).count();
    PrevalenceReport {
        per_value,
        presence,
        n: gold.n(),
    }
}

// --- optional diagnostics (monitored, never optimized) ---

/// Fraction of exact matches between two binary vectors.
pub fn accuracy<S: Scalar>(pred: &[u8], gold: &[u8]) -> Result<S> {
    if pred.len() != gold.len() {
        return Err(Error::Misalignment("accuracy length mismatch".into()));
    }
    if pred.is_empty() {
        return Ok(S::zero());
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(ratio(hits, pred.len()))
}

/// Rank-based ROC AUC (Mann-Whitney with midranks for ties); 0.5 when either
/// class is absent.
pub fn roc_auc<S: Scalar>(scores: &[S], gold: &[u8]) -> Result<S> {
    if scores.len() != gold.len() {
        return Err(Error::Misalignment("auc length mismatch".into()));
    }
    let pos = gold.iter().filter(|&&g| g == 1).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(crate::num::from_f64(0.5));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank for the tie block [i, j], ranks are 1-based
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if gold[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos as f64 * (pos as f64 + 1.0)) / 2.0;
    Ok(crate::num::from_f64(u / (pos as f64 * neg as f64)))
}
