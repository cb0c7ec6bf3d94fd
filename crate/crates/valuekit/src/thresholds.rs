//! Decision thresholds: fixed global, tuned global sweep, and label-wise
//! recall-max under a precision floor.
//!
//! All sweeps share one grid (0.01 steps by default), use inclusive `>=` at
//! the cutoff, and break ties deterministically: higher recall, then higher
//! precision (label-wise), then the smaller threshold.

use crate::data::{AlignedPair, BinaryMatrix, ProbMatrix};
use crate::error::{Error, Result};
use crate::metrics::{macro_f1, presence_prf, PRFScore, ZeroDivision};
use crate::num::{from_count, from_f64, Scalar};
use crate::values::{ValueTaxonomy, NUM_VALUES};
use crate::Prob;
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Evenly spaced candidate thresholds i/denominator for i in 0..=denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    denominator: u32,
}

impl Default for Grid {
    /// The 0.01-step sweep over [0, 1].
    fn default() -> Self {
        Grid { denominator: 100 }
    }
}

impl Grid {
    pub fn new(denominator: u32) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Grid { denominator })
    }

    /// Builds a grid from a step size like 0.01; 1/step must be integral.
    pub fn from_step(step: f64) -> Result<Self> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::InvalidArgument(format!("grid step {step} outside (0,1]")));
        }
        let den = (1.0 / step).round();
        if ((1.0 / step) - den).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "grid step {step} does not divide [0,1] evenly"
            )));
        }
        Grid::new(den as u32)
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn len(&self) -> usize {
        self.denominator as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point<S: Scalar>(&self, i: usize) -> S {
        from_count::<S>(i) / from_count::<S>(self.denominator as usize)
    }

    pub fn points<S: Scalar>(&self) -> Vec<S> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    FixedGlobal,
    TunedGlobal,
    LabelWise,
}

impl ThresholdKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThresholdKind::FixedGlobal => "fixed-global",
            ThresholdKind::TunedGlobal => "tuned-global",
            ThresholdKind::LabelWise => "label-wise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed-global" => Ok(ThresholdKind::FixedGlobal),
            "tuned-global" => Ok(ThresholdKind::TunedGlobal),
            "label-wise" => Ok(ThresholdKind::LabelWise),
            other => Err(Error::InvalidArgument(format!("unknown threshold kind '{other}'"))),
        }
    }
}

/// A global cutoff or a per-value cutoff vector, plus an optional gate
/// cutoff once a presence gate has been tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet<S: Scalar = Prob> {
    kind: ThresholdKind,
    global_t: Option<S>,
    per_value: Option<Vec<S>>,
    pub gate_t: Option<S>,
    /// Split the thresholds were tuned on, if any.
    pub tuned_on: Option<String>,
    /// Values whose precision floor was infeasible and fell back to 0.5.
    pub fallback: Vec<String>,
}

impl<S: Scalar> ThresholdSet<S> {
    pub fn fixed_global(t: S) -> Result<Self> {
        check_unit(t)?;
        Ok(ThresholdSet {
            kind: ThresholdKind::FixedGlobal,
            global_t: Some(t),
            per_value: None,
            gate_t: None,
            tuned_on: None,
            fallback: Vec::new(),
        })
    }

    pub fn tuned_global(t: S, tuned_on: impl Into<String>) -> Result<Self> {
        check_unit(t)?;
        Ok(ThresholdSet {
            kind: ThresholdKind::TunedGlobal,
            global_t: Some(t),
            per_value: None,
            gate_t: None,
            tuned_on: Some(tuned_on.into()),
            fallback: Vec::new(),
        })
    }

    pub fn label_wise(per_value: Vec<S>, fallback: Vec<String>, tuned_on: impl Into<String>) -> Result<Self> {
        if per_value.len() != NUM_VALUES {
            return Err(Error::InvalidArgument(format!(
                "label-wise thresholds need {NUM_VALUES} entries, got {}",
                per_value.len()
            )));
        }
        for &t in &per_value {
            check_unit(t)?;
        }
        Ok(ThresholdSet {
            kind: ThresholdKind::LabelWise,
            global_t: None,
            per_value: Some(per_value),
            gate_t: None,
            tuned_on: Some(tuned_on.into()),
            fallback,
        })
    }

    pub fn kind(&self) -> ThresholdKind {
        self.kind
    }

    pub fn global_t(&self) -> Option<S> {
        self.global_t
    }

    pub fn per_value(&self) -> Option<&[S]> {
        self.per_value.as_deref()
    }

    pub fn threshold_for(&self, value: usize) -> S {
        match (&self.global_t, &self.per_value) {
            (Some(t), None) => *t,
            (None, Some(taus)) => taus[value],
            _ => unreachable!("constructors keep exactly one side populated"),
        }
    }

    pub fn with_gate(mut self, gate_t: S) -> Result<Self> {
        check_unit(gate_t)?;
        self.gate_t = Some(gate_t);
        Ok(self)
    }

    /// Applies the inclusive decision rule cell-wise.
    pub fn binarize(&self, probs: &ProbMatrix<S>) -> Result<BinaryMatrix> {
        if self.per_value.is_some() && probs.k() != NUM_VALUES {
            return Err(Error::Misalignment(format!(
                "label-wise thresholds need {NUM_VALUES} probability columns, got {}",
                probs.k()
            )));
        }
        let mut out = BinaryMatrix::zeros(probs.n(), probs.k());
        for i in 0..probs.n() {
            let row = probs.row(i);
            for (v, &p) in row.iter().enumerate() {
                out.set(i, v, u8::from(p >= self.threshold_for(v)));
            }
        }
        Ok(out)
    }

    /// TSV with a metadata line (kind, tuning split, optional gate cutoff and
    /// fallback list), a column header, and one `(value, threshold)` row per
    /// value (a single `*` row for global kinds).
    pub fn to_tsv(&self, taxonomy: &ValueTaxonomy, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str(&format!("kind={}", self.kind.as_str()));
        if let Some(split) = &self.tuned_on {
            out.push_str(&format!("\ttuned-on={split}"));
        }
        if let Some(g) = self.gate_t {
            out.push_str(&format!("\tgate-t={g}"));
        }
        if !self.fallback.is_empty() {
            out.push_str(&format!("\tfallback={}", self.fallback.join("|")));
        }
        out.push('\n');
        out.push_str("value\tthreshold\n");
        match (&self.global_t, &self.per_value) {
            (Some(t), None) => out.push_str(&format!("*\t{t}\n")),
            (None, Some(taus)) => {
                for (v, t) in taus.iter().enumerate() {
                    out.push_str(&format!("{}\t{t}\n", taxonomy.name(v)));
                }
            }
            _ => unreachable!(),
        }
        out
    }

    pub fn write_tsv(&self, path: &Path, taxonomy: &ValueTaxonomy, comments: &[String]) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_tsv(taxonomy, comments).as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn from_tsv_str(text: &str, taxonomy: &ValueTaxonomy, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#'))
            .map(|(i, l)| (i + 1, l));
        let (meta_no, meta) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "line 1", "missing metadata line"))?;
        let mut kind = None;
        let mut tuned_on = None;
        let mut gate_t = None;
        let mut fallback = Vec::new();
        for cell in meta.split('\t') {
            let (k, v) = cell.split_once('=').ok_or_else(|| {
                Error::parse(origin, format!("line {meta_no}"), format!("bad metadata cell '{cell}'"))
            })?;
            match k {
                "kind" => kind = Some(ThresholdKind::parse(v)?),
                "tuned-on" => tuned_on = Some(v.to_string()),
                "gate-t" => {
                    let g: f64 = v.parse().map_err(|_| {
                        Error::parse(origin, format!("line {meta_no}"), format!("bad gate-t '{v}'"))
                    })?;
                    gate_t = Some(from_f64::<S>(g));
                }
                "fallback" => fallback = v.split('|').map(|s| s.to_string()).collect(),
                other => {
                    return Err(Error::parse(
                        origin,
                        format!("line {meta_no}"),
                        format!("unknown metadata key '{other}'"),
                    ))
                }
            }
        }
        let kind = kind.ok_or_else(|| Error::parse(origin, format!("line {meta_no}"), "missing kind"))?;
        let (hdr_no, hdr) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, "EOF", "missing column header"))?;
        if hdr != "value\tthreshold" {
            return Err(Error::parse(
                origin,
                format!("line {hdr_no}"),
                "expected 'value<TAB>threshold' header",
            ));
        }
        let mut rows = Vec::new();
        for (no, line) in lines {
            let (name, t) = line.split_once('\t').ok_or_else(|| {
                Error::parse(origin, format!("line {no}"), "expected two cells")
            })?;
            let t: f64 = t
                .parse()
                .map_err(|_| Error::parse(origin, format!("line {no}"), format!("bad threshold '{t}'")))?;
            rows.push((no, name.to_string(), from_f64::<S>(t)));
        }
        let mut set = match kind {
            ThresholdKind::FixedGlobal | ThresholdKind::TunedGlobal => {
                if rows.len() != 1 || rows[0].1 != "*" {
                    return Err(Error::parse(
                        origin,
                        "body",
                        "global thresholds serialize as a single '*' row",
                    ));
                }
                let mut s = match kind {
                    ThresholdKind::FixedGlobal => ThresholdSet::fixed_global(rows[0].2)?,
                    _ => ThresholdSet::tuned_global(rows[0].2, tuned_on.clone().unwrap_or_default())?,
                };
                s.tuned_on = tuned_on;
                s
            }
            ThresholdKind::LabelWise => {
                if rows.len() != NUM_VALUES {
                    return Err(Error::parse(
                        origin,
                        "body",
                        format!("label-wise thresholds need {NUM_VALUES} rows, got {}", rows.len()),
                    ));
                }
                let mut taus = vec![S::zero(); NUM_VALUES];
                for (no, name, t) in &rows {
                    let v = taxonomy.index_of(name).ok_or_else(|| {
                        Error::parse(origin, format!("line {no}"), format!("unknown value '{name}'"))
                    })?;
                    taus[v] = *t;
                }
                let mut s = ThresholdSet::label_wise(taus, fallback.clone(), tuned_on.clone().unwrap_or_default())?;
                s.tuned_on = tuned_on;
                s
            }
        };
        set.gate_t = gate_t;
        Ok(set)
    }

    pub fn read_tsv(path: &Path, taxonomy: &ValueTaxonomy) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ThresholdSet::from_tsv_str(&text, taxonomy, &path.display().to_string())
    }
}

fn check_unit<S: Scalar>(t: S) -> Result<()> {
    if t >= S::zero() && t <= S::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {t} outside [0,1]")))
    }
}

/// Standalone form of [`ThresholdSet::binarize`].
pub fn binarize<S: Scalar>(probs: &ProbMatrix<S>, thresholds: &ThresholdSet<S>) -> Result<BinaryMatrix> {
    thresholds.binarize(probs)
}

/// What a global sweep maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Positive-class F1 of the binary presence task (k = 1).
    PresenceF1,
    /// Macro-F1 over the 19 values (k = 19).
    MacroF1,
}

/// Winning grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepResult<S: Scalar = Prob> {
    pub t: S,
    pub score: S,
}

/// Score and the recall used for tie-breaking, at one grid point.
fn global_point_score<S: Scalar>(
    pair: &AlignedPair<S>,
    objective: Objective,
    t: S,
    zero_division: ZeroDivision,
) -> (S, S) {
    let probs = pair.probs();
    match objective {
        Objective::PresenceF1 => {
            let mut pred = BinaryMatrix::zeros(probs.n(), 1);
            for i in 0..probs.n() {
                pred.set(i, 0, u8::from(probs.get(i, 0) >= t));
            }
            let score: PRFScore<S> = presence_prf(&pred, pair.gold(), zero_division).expect("aligned");
            (score.f1, score.recall)
        }
        Objective::MacroF1 => {
            let mut pred = BinaryMatrix::zeros(probs.n(), NUM_VALUES);
            for i in 0..probs.n() {
                let row = probs.row(i);
                for (v, &p) in row.iter().enumerate() {
                    pred.set(i, v, u8::from(p >= t));
                }
            }
            let report = macro_f1::<S>(&pred, pair.gold(), zero_division).expect("aligned");
            (report.macro_f1, report.mean_recall())
        }
    }
}

/// Sweeps a single threshold over the grid and returns the maximizer.
///
/// Ties go to the higher recall (mean positive-class recall for the value
/// objective), then to the smaller threshold; thresholds tuned here are meant
/// to be frozen and applied unchanged to other splits.
pub fn tune_global<S: Scalar>(
    pair: &AlignedPair<S>,
    objective: Objective,
    grid: &Grid,
    zero_division: ZeroDivision,
) -> Result<SweepResult<S>> {
    let want_k = match objective {
        Objective::PresenceF1 => 1,
        Objective::MacroF1 => NUM_VALUES,
    };
    if pair.probs().k() != want_k {
        return Err(Error::Misalignment(format!(
            "objective needs {want_k} probability column(s), got {}",
            pair.probs().k()
        )));
    }
    let evaluated: Vec<(S, S)> = (0..grid.len())
        .into_par_iter()
        .map(|i| global_point_score(pair, objective, grid.point(i), zero_division))
        .collect();
    let mut best = 0usize;
    for i in 1..evaluated.len() {
        let (score, recall) = evaluated[i];
        let (bs, br) = evaluated[best];
        if score > bs || (score == bs && recall > br) {
            best = i;
        }
    }
    Ok(SweepResult {
        t: grid.point(best),
        score: evaluated[best].0,
    })
}

/// Per-value threshold tuning: maximize positive-class recall subject to a
/// minimum precision, sweeping the same grid per value.
///
/// Ties go to the higher precision, then the smaller threshold. Values where
/// no grid point meets the floor fall back to 0.5 and are flagged in the
/// returned set.
pub fn tune_labelwise<S: Scalar>(
    pair: &AlignedPair<S>,
    min_precision: S,
    grid: &Grid,
    taxonomy: &ValueTaxonomy,
    tuned_on: &str,
    zero_division: ZeroDivision,
) -> Result<ThresholdSet<S>> {
    if pair.probs().k() != NUM_VALUES {
        return Err(Error::Misalignment(format!(
            "label-wise tuning needs {NUM_VALUES} probability columns, got {}",
            pair.probs().k()
        )));
    }
    let n = pair.n();
    let probs = pair.probs();
    let gold = pair.gold();
    let results: Vec<(S, bool)> = (0..NUM_VALUES)
        .into_par_iter()
        .map(|v| {
            let mut best: Option<(usize, S, S)> = None; // (grid index, recall, precision)
            for i in 0..grid.len() {
                let t = grid.point(i);
                let mut tp = 0usize;
                let mut fp = 0usize;
                let mut fn_ = 0usize;
                for row in 0..n {
                    let p = u8::from(probs.get(row, v) >= t);
                    let g = gold.labels.get(row, v);
                    tp += usize::from(p == 1 && g == 1);
                    fp += usize::from(p == 1 && g == 0);
                    fn_ += usize::from(p == 0 && g == 1);
                }
                let score: PRFScore<S> = PRFScore::from_counts(tp, fp, fn_, zero_division);
                if score.precision < min_precision {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, br, bp)) => {
                        score.recall > br || (score.recall == br && score.precision > bp)
                    }
                };
                if better {
                    best = Some((i, score.recall, score.precision));
                }
            }
            match best {
                Some((i, _, _)) => (grid.point(i), false),
                None => (from_f64::<S>(0.5), true),
            }
        })
        .collect();
    let taus: Vec<S> = results.iter().map(|r| r.0).collect();
    let fallback: Vec<String> = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1)
        .map(|(v, _)| taxonomy.name(v).to_string())
        .collect();
    ThresholdSet::label_wise(taus, fallback, tuned_on)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{align, GoldMatrix, SentenceKey};
    use proptest::prelude::*;

    fn keyed(n: usize) -> Vec<SentenceKey> {
        (0..n).map(|i| SentenceKey::new(format!("t{i}"), "1").unwrap()).collect()
    }

    /// Presence-task pair from a single probability column and gold bits.
    fn presence_pair(probs: &[f64], gold_bits: &[u8]) -> AlignedPair<f64> {
        let n = probs.len();
        let mut rows = Vec::with_capacity(n);
        for &g in gold_bits {
            let mut row = vec![0u8; NUM_VALUES];
            row[0] = g; // any single value makes presence = g
            rows.push(row);
        }
        let gold = GoldMatrix::from_labels(keyed(n), BinaryMatrix::from_rows(rows, NUM_VALUES).unwrap()).unwrap();
        let probs = ProbMatrix::new(keyed(n), 1, probs.to_vec(), "m").unwrap();
        align(probs, gold).unwrap()
    }

    /// Value-task pair with a single informative column; other columns 0.
    fn single_value_pair(probs0: &[f64], gold0: &[u8]) -> AlignedPair<f64> {
        let n = probs0.len();
        let mut data = Vec::with_capacity(n * NUM_VALUES);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let mut prow = vec![0.0f64; NUM_VALUES];
            prow[0] = probs0[i];
            data.extend(prow);
            let mut grow = vec![0u8; NUM_VALUES];
            grow[0] = gold0[i];
            rows.push(grow);
        }
        let gold = GoldMatrix::from_labels(keyed(n), BinaryMatrix::from_rows(rows, NUM_VALUES).unwrap()).unwrap();
        let probs = ProbMatrix::new(keyed(n), NUM_VALUES, data, "m").unwrap();
        align(probs, gold).unwrap()
    }

    #[test]
    fn binarize_inclusive_boundary() {
        let probs = ProbMatrix::new(keyed(3), 1, vec![0.49, 0.50, 0.51], "m").unwrap();
        let set = ThresholdSet::fixed_global(0.5).unwrap();
        let pred = set.binarize(&probs).unwrap();
        assert_eq!(pred.data(), &[0, 1, 1]);
    }

    #[test]
    fn binarize_zero_threshold_is_all_ones() {
        let probs = ProbMatrix::new(keyed(2), 1, vec![0.0, 0.7], "m").unwrap();
        let set = ThresholdSet::fixed_global(0.0).unwrap();
        assert_eq!(set.binarize(&probs).unwrap().data(), &[1, 1]);
    }

    #[test]
    fn binarize_per_value_applies_each_column() {
        let mut taus = vec![0.5f64; NUM_VALUES];
        taus[0] = 0.2;
        taus[1] = 0.8;
        let set = ThresholdSet::label_wise(taus, vec![], "validation").unwrap();
        let mut data = vec![0.0f64; NUM_VALUES];
        data[0] = 0.5;
        data[1] = 0.5;
        let probs = ProbMatrix::new(keyed(1), NUM_VALUES, data, "m").unwrap();
        let pred = set.binarize(&probs).unwrap();
        assert_eq!(pred.get(0, 0), 1);
        assert_eq!(pred.get(0, 1), 0);
    }

    #[test]
    fn binarize_arity_mismatch_is_an_error() {
        let set = ThresholdSet::label_wise(vec![0.5; NUM_VALUES], vec![], "validation").unwrap();
        let probs = ProbMatrix::new(keyed(1), 1, vec![0.5], "m").unwrap();
        assert!(set.binarize(&probs).is_err());
    }

    #[test]
    fn tune_global_presence_sweep_example() {
        // F1 = 1 exactly for t in [0.21, 0.40]; ties share recall 1, so the
        // smallest winning grid point is 0.21.
        let pair = presence_pair(&[0.2, 0.4, 0.6, 0.8], &[0, 1, 1, 1]);
        let r = tune_global(&pair, Objective::PresenceF1, &Grid::default(), ZeroDivision::Zero).unwrap();
        assert_eq!(r.t, 0.21);
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn tune_global_separated_probs() {
        let pair = presence_pair(&[0.9, 0.9, 0.1, 0.1], &[1, 1, 0, 0]);
        let r = tune_global(&pair, Objective::PresenceF1, &Grid::default(), ZeroDivision::Zero).unwrap();
        assert_eq!(r.t, 0.11);
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn tune_global_constant_probs_prefers_all_positive_region() {
        let pair = presence_pair(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]);
        let r = tune_global(&pair, Objective::PresenceF1, &Grid::default(), ZeroDivision::Zero).unwrap();
        assert_eq!(r.t, 0.0);
        // All-positive: P=1/2, R=1 -> F1 = 2/3.
        assert_eq!(r.score, 2.0 / 3.0);
    }

    #[test]
    fn tune_labelwise_recall_max_under_floor() {
        let pair = single_value_pair(&[0.9, 0.7, 0.6, 0.2], &[1, 0, 1, 0]);
        let set = tune_labelwise(
            &pair,
            0.40,
            &Grid::default(),
            &ValueTaxonomy::default(),
            "validation",
            ZeroDivision::Zero,
        )
        .unwrap();
        // Recall 1 holds up to 0.60; precision is best (2/3) from 0.21 on.
        assert_eq!(set.per_value().unwrap()[0], 0.21);
        // Uninformative all-zero columns: all-negative predictions never meet
        // the precision floor, so they fall back.
        assert_eq!(set.per_value().unwrap()[1], 0.5);
        assert_eq!(set.fallback.len(), NUM_VALUES - 1);
    }

    #[test]
    fn tune_labelwise_perfect_model_takes_smallest_full_precision_point() {
        let pair = single_value_pair(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0]);
        let set = tune_labelwise(
            &pair,
            0.40,
            &Grid::default(),
            &ValueTaxonomy::default(),
            "validation",
            ZeroDivision::Zero,
        )
        .unwrap();
        assert_eq!(set.per_value().unwrap()[0], 0.01);
        assert!(!set.fallback.contains(&"Self-direction: thought".to_string()));
    }

    #[test]
    fn tune_labelwise_infeasible_floor_falls_back_and_flags() {
        // Value 0: every prediction regime has precision < 0.4 (1 positive in
        // 10 instances, probabilities uninformative and tied).
        let probs0 = vec![0.3f64; 10];
        let mut gold0 = vec![0u8; 10];
        gold0[0] = 1;
        let pair = single_value_pair(&probs0, &gold0);
        let set = tune_labelwise(
            &pair,
            0.40,
            &Grid::default(),
            &ValueTaxonomy::default(),
            "validation",
            ZeroDivision::Zero,
        )
        .unwrap();
        assert_eq!(set.per_value().unwrap()[0], 0.5);
        assert!(set.fallback.contains(&"Self-direction: thought".to_string()));
    }

    #[test]
    fn threshold_tsv_round_trip() {
        let tax = ValueTaxonomy::default();
        let mut taus: Vec<f64> = (0..NUM_VALUES).map(|v| v as f64 / 100.0).collect();
        taus[3] = 0.29;
        let set = ThresholdSet::label_wise(taus, vec!["Humility".into()], "validation")
            .unwrap()
            .with_gate(0.1)
            .unwrap();
        let text = set.to_tsv(&tax, &["tool header".into()]);
        let back = ThresholdSet::<f64>::from_tsv_str(&text, &tax, "mem").unwrap();
        assert_eq!(back, set);

        let global = ThresholdSet::tuned_global(0.29, "validation").unwrap();
        let text = global.to_tsv(&tax, &[]);
        let back = ThresholdSet::<f64>::from_tsv_str(&text, &tax, "mem").unwrap();
        assert_eq!(back.global_t(), Some(0.29));
        assert_eq!(back, global);
    }

    /// Brute-force sweep oracle: re-derives the decision rule and tie-breaks
    /// from scratch, scoring with freshly counted confusion cells.
    fn oracle_global_presence(probs: &[f64], gold: &[u8], den: usize) -> (f64, f64) {
        let mut best: Option<(f64, f64, f64)> = None; // (t, f1, recall)
        for i in 0..=den {
            let t = i as f64 / den as f64;
            let (mut tp, mut fp, mut fn_) = (0f64, 0f64, 0f64);
            for (j, &p) in probs.iter().enumerate() {
                let pred = p >= t;
                match (pred, gold[j] == 1) {
                    (true, true) => tp += 1.0,
                    (true, false) => fp += 1.0,
                    (false, true) => fn_ += 1.0,
                    _ => {}
                }
            }
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            let replace = match best {
                None => true,
                Some((_, bf, br)) => f1 > bf || (f1 == bf && rec > br),
            };
            if replace {
                best = Some((t, f1, rec));
            }
        }
        let (t, f1, _) = best.unwrap();
        (t, f1)
    }

    proptest! {
        #[test]
        fn tune_global_matches_bruteforce_oracle(
            cells in proptest::collection::vec((0u32..=100, 0u8..=1), 2..120)
        ) {
            let probs: Vec<f64> = cells.iter().map(|c| c.0 as f64 / 100.0).collect();
            let gold: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let pair = presence_pair(&probs, &gold);
            let got = tune_global(&pair, Objective::PresenceF1, &Grid::default(), ZeroDivision::Zero).unwrap();
            let (t, f1) = oracle_global_presence(&probs, &gold, 100);
            prop_assert_eq!(got.t, t);
            prop_assert_eq!(got.score, f1);
        }

        /// Raising any threshold never increases positive predictions.
        #[test]
        fn binarize_monotone_in_threshold(
            probs in proptest::collection::vec(0.0f64..=1.0, 1..200),
            lo in 0usize..=100,
            hi in 0usize..=100,
        ) {
            let (lo, hi) = (lo.min(hi), lo.max(hi));
            let pm = ProbMatrix::new(keyed(probs.len()), 1, probs, "m").unwrap();
            let a = ThresholdSet::fixed_global(lo as f64 / 100.0).unwrap().binarize(&pm).unwrap();
            let b = ThresholdSet::fixed_global(hi as f64 / 100.0).unwrap().binarize(&pm).unwrap();
            let pos = |m: &BinaryMatrix| m.data().iter().filter(|&&x| x == 1).count();
            prop_assert!(pos(&b) <= pos(&a));
        }

        /// The default grid contains 0.5, so the tuned score dominates the
        /// fixed default.
        #[test]
        fn tuned_score_dominates_fixed_half(
            cells in proptest::collection::vec((0u32..=100, 0u8..=1), 2..80)
        ) {
            let probs: Vec<f64> = cells.iter().map(|c| c.0 as f64 / 100.0).collect();
            let gold: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let pair = presence_pair(&probs, &gold);
            let tuned = tune_global(&pair, Objective::PresenceF1, &Grid::default(), ZeroDivision::Zero).unwrap();
            let (f1_half, _) = super::global_point_score(&pair, Objective::PresenceF1, 0.5, ZeroDivision::Zero);
            prop_assert!(tuned.score >= f1_half);
        }

        /// Non-fallback label-wise thresholds respect the precision floor on
        /// the tuning split.
        #[test]
        fn labelwise_respects_floor(
            cells in proptest::collection::vec((0u32..=100, 0u8..=1), 4..100)
        ) {
            let probs: Vec<f64> = cells.iter().map(|c| c.0 as f64 / 100.0).collect();
            let gold: Vec<u8> = cells.iter().map(|c| c.1).collect();
            let pair = single_value_pair(&probs, &gold);
            let tax = ValueTaxonomy::default();
            let set = tune_labelwise(&pair, 0.40, &Grid::default(), &tax, "validation", ZeroDivision::Zero).unwrap();
            if !set.fallback.contains(&tax.name(0).to_string()) {
                let t = set.per_value().unwrap()[0];
                let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p >= t)).collect();
                let score = crate::metrics::prf_positive::<f64>(&pred, &gold, ZeroDivision::Zero).unwrap();
                prop_assert!(score.precision >= 0.40);
            }
        }
    }
}
