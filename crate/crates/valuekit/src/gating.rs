//! Presence-gate composition: hard-mask value probabilities below the gate
//! cutoff, and tune that cutoff for end-to-end value performance rather than
//! gate performance alone.

use crate::data::{align, AlignedPair, BinaryMatrix, GoldMatrix, ProbMatrix, SentenceKey};
use crate::error::{Error, Result};
use crate::metrics::{macro_f1, ZeroDivision};
use crate::num::{ratio, Scalar};
use crate::thresholds::{Grid, SweepResult, ThresholdSet};
use crate::values::NUM_VALUES;
use crate::Prob;
use rayon::prelude::*;

/// A presence gate, a value detector, and the gate cutoff between them.
#[derive(Debug, Clone)]
pub struct GatedSystem<S: Scalar = Prob> {
    pub gate: ProbMatrix<S>,
    pub values: ProbMatrix<S>,
    pub tau_gate: S,
}

impl<S: Scalar> GatedSystem<S> {
    pub fn new(gate: ProbMatrix<S>, values: ProbMatrix<S>, tau_gate: S) -> Result<Self> {
        check_same_keys(&gate.keys, &values.keys)?;
        if gate.k() != 1 {
            return Err(Error::Misalignment(format!(
                "gate probabilities must have one column, got {}",
                gate.k()
            )));
        }
        if values.k() != NUM_VALUES {
            return Err(Error::Misalignment(format!(
                "value probabilities must have {NUM_VALUES} columns, got {}",
                values.k()
            )));
        }
        check_unit_gate(tau_gate)?;
        Ok(GatedSystem {
            gate,
            values,
            tau_gate,
        })
    }

    /// The masked value probabilities.
    pub fn apply(&self) -> ProbMatrix<S> {
        apply_gate(&self.gate, &self.values, self.tau_gate).expect("validated at construction")
    }
}

fn check_same_keys(a: &[SentenceKey], b: &[SentenceKey]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Misalignment(format!(
            "key sequences differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    for (i, (ka, kb)) in a.iter().zip(b.iter()).enumerate() {
        if ka != kb {
            return Err(Error::Misalignment(format!(
                "key sequences diverge at row {i}: {ka} vs {kb}"
            )));
        }
    }
    Ok(())
}

fn check_unit_gate<S: Scalar>(tau: S) -> Result<()> {
    if tau >= S::zero() && tau <= S::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gate threshold {tau} outside [0,1]")))
    }
}

/// Zeroes all 19 value probabilities on rows whose gate probability is below
/// the cutoff; rows at or above the cutoff pass through unchanged.
pub fn apply_gate<S: Scalar>(
    gate_probs: &ProbMatrix<S>,
    value_probs: &ProbMatrix<S>,
    tau_gate: S,
) -> Result<ProbMatrix<S>> {
    check_same_keys(&gate_probs.keys, &value_probs.keys)?;
    if gate_probs.k() != 1 || value_probs.k() != NUM_VALUES {
        return Err(Error::Misalignment(format!(
            "gate must be n x 1 and values n x {NUM_VALUES}, got n x {} and n x {}",
            gate_probs.k(),
            value_probs.k()
        )));
    }
    check_unit_gate(tau_gate)?;
    let mut data = Vec::with_capacity(value_probs.n() * NUM_VALUES);
    for i in 0..value_probs.n() {
        if gate_probs.get(i, 0) < tau_gate {
            data.extend(std::iter::repeat_n(S::zero(), NUM_VALUES));
        } else {
            data.extend_from_slice(value_probs.row(i));
        }
    }
    value_probs.with_data(
        data,
        format!("{}|gate:{}", value_probs.model_name, gate_probs.model_name),
    )
}

/// Pass bits of the gate at a cutoff, as an n x 1 matrix.
pub fn gate_decisions<S: Scalar>(gate_probs: &ProbMatrix<S>, tau_gate: S) -> BinaryMatrix {
    let mut out = BinaryMatrix::zeros(gate_probs.n(), 1);
    for i in 0..gate_probs.n() {
        out.set(i, 0, u8::from(gate_probs.get(i, 0) >= tau_gate));
    }
    out
}

/// Sweeps the gate cutoff and returns the value that maximizes end-to-end
/// macro-F1 of the masked-then-binarized predictions, with frozen value
/// thresholds. Ties go to the smaller cutoff; 0 is in the grid, so gating is
/// never forced below the ungated score on the tuning split.
pub fn tune_gate<S: Scalar>(
    gate_probs: &ProbMatrix<S>,
    value_probs: &ProbMatrix<S>,
    gold: &GoldMatrix,
    value_thresholds: &ThresholdSet<S>,
    grid: &Grid,
    zero_division: ZeroDivision,
) -> Result<SweepResult<S>> {
    check_same_keys(&gate_probs.keys, &value_probs.keys)?;
    check_same_keys(&value_probs.keys, &gold.keys)?;
    let scores: Vec<S> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let tau = grid.point(i);
            let masked = apply_gate(gate_probs, value_probs, tau).expect("checked inputs");
            let pred = value_thresholds.binarize(&masked).expect("arity checked");
            macro_f1::<S>(&pred, gold, zero_division).expect("aligned").macro_f1
        })
        .collect();
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(SweepResult {
        t: grid.point(best),
        score: scores[best],
    })
}

/// Joint order: re-tunes the value thresholds at every gate cutoff via
/// `tune_values` and keeps the pair with the best end-to-end macro-F1.
/// Ties go to the smaller gate cutoff. Quadratic in the grid; meant for
/// small grids.
pub fn tune_gate_joint<S: Scalar, F>(
    gate_probs: &ProbMatrix<S>,
    value_probs: &ProbMatrix<S>,
    gold: &GoldMatrix,
    grid: &Grid,
    zero_division: ZeroDivision,
    tune_values: F,
) -> Result<(SweepResult<S>, ThresholdSet<S>)>
where
    F: Fn(&AlignedPair<S>) -> Result<ThresholdSet<S>> + Sync,
{
    check_same_keys(&gate_probs.keys, &value_probs.keys)?;
    check_same_keys(&value_probs.keys, &gold.keys)?;
    let candidates: Vec<(S, ThresholdSet<S>)> = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<(S, ThresholdSet<S>)> {
            let tau = grid.point(i);
            let masked = apply_gate(gate_probs, value_probs, tau)?;
            let pair = align(masked, gold.clone())?;
            let thresholds = tune_values(&pair)?;
            let pred = thresholds.binarize(pair.probs())?;
            let score = macro_f1::<S>(&pred, pair.gold(), zero_division)?.macro_f1;
            Ok((score, thresholds))
        })
        .collect::<Result<_>>()?;
    let mut best = 0usize;
    for (i, (s, _)) in candidates.iter().enumerate().skip(1) {
        if *s > candidates[best].0 {
            best = i;
        }
    }
    let (score, thresholds) = candidates.into_iter().nth(best).expect("non-empty grid");
    Ok((
        SweepResult {
            t: grid.point(best),
            score,
        },
        thresholds,
    ))
}

/// Recall-bottleneck diagnostic for a gate decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GateBottleneck<S: Scalar = Prob> {
    /// Share of presence-positive instances that pass the gate.
    pub gate_recall: S,
    /// Per value, the share of that value's positives that pass the gate;
    /// end-to-end recall for the value can never exceed this.
    pub per_value_pass_rate: Vec<S>,
}

pub fn gate_bottleneck<S: Scalar>(gate_pass: &BinaryMatrix, gold: &GoldMatrix) -> Result<GateBottleneck<S>> {
    if gate_pass.cols() != 1 || gate_pass.rows() != gold.n() {
        return Err(Error::Misalignment("gate decisions must be n x 1 over gold".into()));
    }
    let mut presence_pos = 0usize;
    let mut presence_pass = 0usize;
    let mut value_pos = [0usize; NUM_VALUES];
    let mut value_pass = [0usize; NUM_VALUES];
    for i in 0..gold.n() {
        let pass = gate_pass.get(i, 0) == 1;
        if gold.presence[i] == 1 {
            presence_pos += 1;
            presence_pass += usize::from(pass);
        }
        for (v, &bit) in gold.labels.row(i).iter().enumerate() {
            if bit == 1 {
                value_pos[v] += 1;
                value_pass[v] += usize::from(pass);
            }
        }
    }
    Ok(GateBottleneck {
        gate_recall: ratio(presence_pass, presence_pos),
        per_value_pass_rate: (0..NUM_VALUES).map(|v| ratio(value_pass[v], value_pos[v])).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SentenceKey;
    use crate::thresholds::{tune_global, Objective};
    use proptest::prelude::*;

    fn keyed(n: usize) -> Vec<SentenceKey> {
        (0..n).map(|i| SentenceKey::new(format!("t{i}"), "1").unwrap()).collect()
    }

    fn value_probs(rows: Vec<Vec<f64>>) -> ProbMatrix<f64> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * NUM_VALUES);
        for mut row in rows {
            row.resize(NUM_VALUES, 0.0);
            data.extend(row);
        }
        ProbMatrix::new(keyed(n), NUM_VALUES, data, "values").unwrap()
    }

    fn gate_probs(g: &[f64]) -> ProbMatrix<f64> {
        ProbMatrix::new(keyed(g.len()), 1, g.to_vec(), "gate").unwrap()
    }

    fn gold(rows: Vec<Vec<u8>>) -> GoldMatrix {
        let n = rows.len();
        let full: Vec<Vec<u8>> = rows
            .into_iter()
            .map(|mut r| {
                r.resize(NUM_VALUES, 0);
                r
            })
            .collect();
        GoldMatrix::from_labels(keyed(n), BinaryMatrix::from_rows(full, NUM_VALUES).unwrap()).unwrap()
    }

    #[test]
    fn zero_cutoff_is_identity() {
        let g = gate_probs(&[0.0, 0.4]);
        let v = value_probs(vec![vec![0.8, 0.3], vec![0.7, 0.9]]);
        let masked = apply_gate(&g, &v, 0.0).unwrap();
        assert_eq!(masked.data(), v.data());
    }

    #[test]
    fn mask_zeroes_rows_below_cutoff() {
        let g = gate_probs(&[0.9, 0.05]);
        let v = value_probs(vec![vec![0.8, 0.3], vec![0.7, 0.9]]);
        let masked = apply_gate(&g, &v, 0.10).unwrap();
        assert_eq!(masked.get(0, 0), 0.8);
        assert_eq!(masked.get(0, 1), 0.3);
        assert!(masked.row(1).iter().all(|&p| p == 0.0));
    }

    #[test]
    fn saturating_mask_and_invalid_cutoff() {
        let g = gate_probs(&[0.9, 0.99]);
        let v = value_probs(vec![vec![0.8], vec![0.7]]);
        let masked = apply_gate(&g, &v, 1.0).unwrap();
        assert!(masked.data().iter().all(|&p| p == 0.0));
        assert!(apply_gate(&g, &v, 1.5).is_err());
    }

    #[test]
    fn tune_gate_perfect_gate_masks_nonmoral_false_positives() {
        // Value model is right on moral rows but false-positive on the
        // non-moral ones; a perfect gate removes exactly those errors.
        let gold = gold(vec![vec![1], vec![1], vec![0], vec![0]]);
        let g = gate_probs(&[0.9, 0.8, 0.1, 0.2]);
        let v = value_probs(vec![vec![0.9], vec![0.8], vec![0.9], vec![0.7]]);
        let thresholds = ThresholdSet::fixed_global(0.5).unwrap();
        let ungated = {
            let pred = thresholds.binarize(&v).unwrap();
            macro_f1::<f64>(&pred, &gold, ZeroDivision::Zero).unwrap().macro_f1
        };
        let tuned = tune_gate(&g, &v, &gold, &thresholds, &Grid::default(), ZeroDivision::Zero).unwrap();
        assert!(tuned.score > ungated);
        // Any cutoff in (0.2, 0.8] separates; smallest grid point wins. With
        // the errors masked, value 0 is perfect and the other 18 stay at 0.
        assert_eq!(tuned.t, 0.21);
        assert_eq!(tuned.score, 1.0 / NUM_VALUES as f64);
    }

    #[test]
    fn tune_gate_constant_one_gate_returns_zero_cutoff() {
        let gold = gold(vec![vec![1], vec![0]]);
        let g = gate_probs(&[1.0, 1.0]);
        let v = value_probs(vec![vec![0.9], vec![0.1]]);
        let thresholds = ThresholdSet::fixed_global(0.5).unwrap();
        let tuned = tune_gate(&g, &v, &gold, &thresholds, &Grid::default(), ZeroDivision::Zero).unwrap();
        assert_eq!(tuned.t, 0.0);
    }

    #[test]
    fn tune_gate_adversarial_gate_never_gates() {
        // Gate is 1 - presence: any positive cutoff masks exactly the moral
        // rows, so the sweep falls back to no gating.
        let gold = gold(vec![vec![1], vec![1], vec![0], vec![0]]);
        let g = gate_probs(&[0.0, 0.0, 1.0, 1.0]);
        let v = value_probs(vec![vec![0.9], vec![0.8], vec![0.2], vec![0.1]]);
        let thresholds = ThresholdSet::fixed_global(0.5).unwrap();
        let tuned = tune_gate(&g, &v, &gold, &thresholds, &Grid::default(), ZeroDivision::Zero).unwrap();
        assert_eq!(tuned.t, 0.0);
        let direct = thresholds.binarize(&v).unwrap();
        assert_eq!(
            tuned.score,
            macro_f1::<f64>(&direct, &gold, ZeroDivision::Zero).unwrap().macro_f1
        );
    }

    #[test]
    fn joint_tuning_can_only_improve_on_sequential_for_same_kind() {
        let gold = gold(vec![vec![1], vec![1], vec![0], vec![0], vec![1], vec![0]]);
        let g = gate_probs(&[0.9, 0.7, 0.3, 0.4, 0.6, 0.2]);
        let v = value_probs(vec![
            vec![0.6],
            vec![0.55],
            vec![0.7],
            vec![0.2],
            vec![0.8],
            vec![0.4],
        ]);
        let grid = Grid::default();
        // Sequential: global t on ungated outputs, then the gate.
        let pair = align(v.clone(), gold.clone()).unwrap();
        let t = tune_global(&pair, Objective::MacroF1, &grid, ZeroDivision::Zero).unwrap();
        let frozen = ThresholdSet::tuned_global(t.t, "validation").unwrap();
        let sequential = tune_gate(&g, &v, &gold, &frozen, &grid, ZeroDivision::Zero).unwrap();
        // Joint: re-tune the global t at every gate point.
        let (joint, _) = tune_gate_joint(&g, &v, &gold, &grid, ZeroDivision::Zero, |p| {
            let r = tune_global(p, Objective::MacroF1, &grid, ZeroDivision::Zero)?;
            ThresholdSet::tuned_global(r.t, "validation")
        })
        .unwrap();
        assert!(joint.score >= sequential.score);
    }

    #[test]
    fn bottleneck_reports_pass_rates() {
        let gold = gold(vec![vec![1], vec![1], vec![0, 1], vec![0]]);
        let pass = BinaryMatrix::from_rows(vec![vec![1], vec![0], vec![1], vec![0]], 1).unwrap();
        let b = gate_bottleneck::<f64>(&pass, &gold).unwrap();
        assert_eq!(b.gate_recall, 2.0 / 3.0);
        assert_eq!(b.per_value_pass_rate[0], 0.5);
        assert_eq!(b.per_value_pass_rate[1], 1.0);
    }

    proptest! {
        /// Masked probabilities never exceed the originals, and masked rows
        /// are all-negative at any positive threshold.
        #[test]
        fn mask_dominance_and_negativity(
            rows in proptest::collection::vec(
                (0.0f64..=1.0, proptest::collection::vec(0.0f64..=1.0, NUM_VALUES)), 1..30),
            tau in 0.0f64..=1.0,
            t_idx in 1usize..=100,
        ) {
            let g = gate_probs(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            let v = value_probs(rows.iter().map(|r| r.1.clone()).collect());
            let masked = apply_gate(&g, &v, tau).unwrap();
            for (a, b) in masked.data().iter().zip(v.data().iter()) {
                prop_assert!(a <= b);
            }
            let t = t_idx as f64 / 100.0;
            let pred = ThresholdSet::fixed_global(t).unwrap().binarize(&masked).unwrap();
            for i in 0..v.n() {
                if rows[i].0 < tau {
                    prop_assert!(pred.row(i).iter().all(|&x| x == 0));
                }
            }
        }

        /// End-to-end recall per value never exceeds the gate pass rate among
        /// that value's positives.
        #[test]
        fn recall_bounded_by_gate_pass_rate(
            rows in proptest::collection::vec(
                (0.0f64..=1.0, 0u8..=1, 0.0f64..=1.0), 2..40),
            tau_idx in 0usize..=100,
        ) {
            let tau = tau_idx as f64 / 100.0;
            let g = gate_probs(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            let v = value_probs(rows.iter().map(|r| vec![r.2]).collect());
            let gold = gold(rows.iter().map(|r| vec![r.1]).collect());
            let masked = apply_gate(&g, &v, tau).unwrap();
            let pred = ThresholdSet::fixed_global(0.5).unwrap().binarize(&masked).unwrap();
            let report = macro_f1::<f64>(&pred, &gold, ZeroDivision::Zero).unwrap();
            let bottleneck = gate_bottleneck::<f64>(&gate_decisions(&g, tau), &gold).unwrap();
            prop_assert!(report.per_value[0].recall <= bottleneck.per_value_pass_rate[0] + 1e-12);
        }
    }
}
