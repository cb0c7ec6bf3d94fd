//! Voting ensembles over candidate runs and greedy forward selection gated
//! by a one-sided bootstrap lower bound on the macro-F1 improvement.

use crate::data::{AlignedPair, BinaryMatrix, GoldMatrix, ProbMatrix, SentenceKey};
use crate::error::{Error, Result};
use crate::metrics::{macro_f1, ZeroDivision};
use crate::num::{from_f64, Scalar};
use crate::stats::{derive_seed, paired_bootstrap, macro_f1_on_sample, BootstrapResult};
use crate::thresholds::{tune_global, Grid, Objective, SweepResult, ThresholdSet};
use crate::values::NUM_VALUES;
use crate::Prob;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteMode {
    Hard,
    Soft,
    Weighted,
}

impl VoteMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            VoteMode::Hard => "hard",
            VoteMode::Soft => "soft",
            VoteMode::Weighted => "weighted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(VoteMode::Hard),
            "soft" => Ok(VoteMode::Soft),
            "weighted" => Ok(VoteMode::Weighted),
            other => Err(Error::InvalidArgument(format!("unknown vote mode '{other}'"))),
        }
    }
}

/// How an even hard-vote split resolves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    /// Exact ties count as positive (needed for two-member ensembles).
    #[default]
    Positive,
    Negative,
}

/// One model's probability outputs per split, with its validation-tuned
/// global threshold and the resulting validation macro-F1.
#[derive(Debug, Clone)]
pub struct CandidateRun<S: Scalar = Prob> {
    pub name: String,
    pub val_probs: ProbMatrix<S>,
    pub test_probs: Option<ProbMatrix<S>>,
    pub val_t: S,
    pub val_macro_f1: S,
}

impl<S: Scalar> CandidateRun<S> {
    /// Tunes the candidate's own global threshold on validation and records
    /// its score there. `val_probs` must already be aligned to `gold_val`.
    pub fn evaluate(
        name: impl Into<String>,
        val_probs: ProbMatrix<S>,
        test_probs: Option<ProbMatrix<S>>,
        gold_val: &GoldMatrix,
        grid: &Grid,
        zero_division: ZeroDivision,
    ) -> Result<Self> {
        check_same_keys(&val_probs.keys, &gold_val.keys)?;
        let pair = crate::data::align(val_probs.clone(), gold_val.clone())?;
        let tuned = tune_global(&pair, Objective::MacroF1, grid, zero_division)?;
        Ok(CandidateRun {
            name: name.into(),
            val_probs,
            test_probs,
            val_t: tuned.t,
            val_macro_f1: tuned.score,
        })
    }
}

fn check_same_keys(a: &[SentenceKey], b: &[SentenceKey]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b.iter()).any(|(x, y)| x != y) {
        return Err(Error::Misalignment(
            "ensemble members must share one key sequence".into(),
        ));
    }
    Ok(())
}

/// Normalizes non-negative scores into voting weights summing to 1.
pub fn normalize_weights<S: Scalar>(scores: &[S]) -> Result<Vec<S>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scores to normalize".into()));
    }
    let mut sum = S::zero();
    for &s in scores {
        if s < S::zero() {
            return Err(Error::InvalidArgument(format!("negative weight source {s}")));
        }
        sum = sum + s;
    }
    if sum <= S::zero() {
        return Err(Error::InvalidArgument("weights would sum to zero".into()));
    }
    Ok(scores.iter().map(|&s| s / sum).collect())
}

/// Element-wise (weighted) mean of aligned probability matrices. Weights
/// default to uniform and must be non-negative and sum to 1.
pub fn soft_vote<S: Scalar>(members: &[&ProbMatrix<S>], weights: Option<&[S]>) -> Result<ProbMatrix<S>> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("soft vote over an empty member list".into()));
    }
    let first = members[0];
    for m in &members[1..] {
        check_same_keys(&first.keys, &m.keys)?;
        if m.k() != first.k() {
            return Err(Error::Misalignment("members disagree on column count".into()));
        }
    }
    let uniform;
    let weights = match weights {
        Some(w) => {
            if w.len() != members.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} weights for {} members",
                    w.len(),
                    members.len()
                )));
            }
            let mut sum = S::zero();
            for &x in w {
                if x < S::zero() {
                    return Err(Error::InvalidArgument(format!("negative weight {x}")));
                }
                sum = sum + x;
            }
            if (sum - S::one()).abs() > from_f64::<S>(1e-9) {
                return Err(Error::InvalidArgument(format!("weights sum to {sum}, not 1")));
            }
            w
        }
        None => {
            uniform = normalize_weights(&vec![S::one(); members.len()])?;
            &uniform
        }
    };
    let mut data = vec![S::zero(); first.n() * first.k()];
    for (m, &w) in members.iter().zip(weights.iter()) {
        for (acc, &p) in data.iter_mut().zip(m.data().iter()) {
            *acc = *acc + w * p;
        }
    }
    // convexity keeps entries in [0,1]; clamp away accumulated rounding
    for p in data.iter_mut() {
        *p = p.min(S::one()).max(S::zero());
    }
    let name = members.iter().map(|m| m.model_name.as_str()).collect::<Vec<_>>().join("+");
    first.with_data(data, name)
}

/// Majority vote over aligned binary matrices: positive iff positive votes
/// reach ceil(m/2) (ties positive) or strictly exceed m/2 (ties negative).
pub fn hard_vote(members: &[&BinaryMatrix], tie: TiePolicy) -> Result<BinaryMatrix> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("hard vote over an empty member list".into()));
    }
    let (rows, cols) = (members[0].rows(), members[0].cols());
    for m in &members[1..] {
        if m.rows() != rows || m.cols() != cols {
            return Err(Error::Misalignment("hard-vote members disagree on shape".into()));
        }
    }
    let m = members.len();
    let needed = match tie {
        TiePolicy::Positive => m.div_ceil(2),
        TiePolicy::Negative => m / 2 + 1,
    };
    let mut out = BinaryMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let votes: usize = members.iter().map(|mm| mm.get(i, j) as usize).sum();
            out.set(i, j, u8::from(votes >= needed));
        }
    }
    Ok(out)
}

/// Global threshold sweep for averaged ensemble probabilities; the winner is
/// frozen and applied unchanged to the test split.
pub fn tune_ensemble_threshold<S: Scalar>(
    pair: &AlignedPair<S>,
    grid: &Grid,
    zero_division: ZeroDivision,
) -> Result<SweepResult<S>> {
    tune_global(pair, Objective::MacroF1, grid, zero_division)
}

/// Frozen description of a selected ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec<S: Scalar = Prob> {
    /// Member names in acceptance order (seed model first).
    pub members: Vec<String>,
    pub mode: VoteMode,
    /// Normalized weights for weighted voting, in `members` order.
    pub weights: Option<Vec<S>>,
    /// Tuned global threshold for soft/weighted voting.
    pub global_t: Option<S>,
    /// Each member's own validation-tuned threshold, used by hard voting.
    pub member_thresholds: Vec<S>,
    pub tie: TiePolicy,
    pub seed: u64,
    pub replicates: usize,
    pub tuned_on: String,
}

/// Which split of a candidate run to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSel {
    Validation,
    Test,
}

impl<S: Scalar> EnsembleSpec<S> {
    pub fn member_indices(&self, pool: &[CandidateRun<S>]) -> Result<Vec<usize>> {
        self.members
            .iter()
            .map(|name| {
                pool.iter()
                    .position(|c| &c.name == name)
                    .ok_or_else(|| Error::KeyMismatch(format!("ensemble member '{name}' not in pool")))
            })
            .collect()
    }

    /// Ensemble probabilities on a split (soft/weighted modes).
    pub fn vote_probs(&self, pool: &[CandidateRun<S>], split: SplitSel) -> Result<ProbMatrix<S>> {
        if self.mode == VoteMode::Hard {
            return Err(Error::InvalidArgument(
                "hard-vote ensembles have no probability output".into(),
            ));
        }
        let idx = self.member_indices(pool)?;
        let probs: Vec<&ProbMatrix<S>> = idx
            .iter()
            .map(|&i| pick_split(&pool[i], split))
            .collect::<Result<_>>()?;
        soft_vote(&probs, self.weights.as_deref())
    }

    /// Binary ensemble predictions on a split under the frozen parameters.
    pub fn predictions(&self, pool: &[CandidateRun<S>], split: SplitSel) -> Result<BinaryMatrix> {
        let idx = self.member_indices(pool)?;
        match self.mode {
            VoteMode::Hard => {
                let mut preds = Vec::with_capacity(idx.len());
                for (slot, &i) in idx.iter().enumerate() {
                    let probs = pick_split(&pool[i], split)?;
                    let t = ThresholdSet::fixed_global(self.member_thresholds[slot])?;
                    preds.push(t.binarize(probs)?);
                }
                hard_vote(&preds.iter().collect::<Vec<_>>(), self.tie)
            }
            VoteMode::Soft | VoteMode::Weighted => {
                let probs = self.vote_probs(pool, split)?;
                let t = self.global_t.ok_or_else(|| {
                    Error::InvalidArgument("soft/weighted spec missing its tuned threshold".into())
                })?;
                ThresholdSet::fixed_global(t)?.binarize(&probs)
            }
        }
    }
}

fn pick_split<S: Scalar>(run: &CandidateRun<S>, split: SplitSel) -> Result<&ProbMatrix<S>> {
    match split {
        SplitSel::Validation => Ok(&run.val_probs),
        SplitSel::Test => run.test_probs.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("candidate '{}' has no test probabilities", run.name))
        }),
    }
}

/// One tentative addition during forward selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionStep<S: Scalar = Prob> {
    pub candidate: String,
    pub accepted: bool,
    /// Tuned threshold of the tentative ensemble (soft/weighted).
    pub tentative_t: Option<S>,
    pub tentative_score: S,
    pub bootstrap: BootstrapResult<S>,
    /// Bootstrap lower bound over the current ensemble score.
    pub relative_improvement: S,
    pub ensemble_score_after: S,
}

/// Everything forward selection decided, including the per-step trace.
#[derive(Debug, Clone)]
pub struct SelectionOutcome<S: Scalar = Prob> {
    pub spec: EnsembleSpec<S>,
    /// Validation macro-F1 of the final ensemble.
    pub val_macro_f1: S,
    pub trace: Vec<SelectionStep<S>>,
}

struct EnsembleState<S: Scalar> {
    members: Vec<usize>,
    preds: BinaryMatrix,
    score: S,
    global_t: Option<S>,
    weights: Option<Vec<S>>,
}

fn assemble<S: Scalar>(
    pool: &[CandidateRun<S>],
    members: &[usize],
    mode: VoteMode,
    tie: TiePolicy,
    gold_val: &GoldMatrix,
    grid: &Grid,
    zero_division: ZeroDivision,
) -> Result<EnsembleState<S>> {
    match mode {
        VoteMode::Hard => {
            let mut preds = Vec::with_capacity(members.len());
            for &i in members {
                let t = ThresholdSet::fixed_global(pool[i].val_t)?;
                preds.push(t.binarize(&pool[i].val_probs)?);
            }
            let voted = hard_vote(&preds.iter().collect::<Vec<_>>(), tie)?;
            let score = macro_f1::<S>(&voted, gold_val, zero_division)?.macro_f1;
            Ok(EnsembleState {
                members: members.to_vec(),
                preds: voted,
                score,
                global_t: None,
                weights: None,
            })
        }
        VoteMode::Soft | VoteMode::Weighted => {
            let probs: Vec<&ProbMatrix<S>> = members.iter().map(|&i| &pool[i].val_probs).collect();
            let weights = match mode {
                VoteMode::Weighted => Some(normalize_weights(
                    &members.iter().map(|&i| pool[i].val_macro_f1).collect::<Vec<_>>(),
                )?),
                _ => None,
            };
            let voted = soft_vote(&probs, weights.as_deref())?;
            let pair = crate::data::align(voted, gold_val.clone())?;
            let tuned = tune_ensemble_threshold(&pair, grid, zero_division)?;
            let preds = ThresholdSet::fixed_global(tuned.t)?.binarize(pair.probs())?;
            Ok(EnsembleState {
                members: members.to_vec(),
                preds,
                score: tuned.score,
                global_t: Some(tuned.t),
                weights,
            })
        }
    }
}

/// Greedy forward selection.
///
/// Starts from the best single run by validation macro-F1 and repeatedly
/// visits the remaining candidates in descending validation score. A
/// tentative addition re-tunes the ensemble threshold on validation and is
/// kept only if the one-sided bootstrap lower 95% bound of the macro-F1
/// improvement is positive and at least `min_relative` of the current
/// ensemble score. Stops once a full pass adds nothing.
#[allow(clippy::too_many_arguments)]
pub fn forward_select<S: Scalar>(
    pool: &[CandidateRun<S>],
    gold_val: &GoldMatrix,
    mode: VoteMode,
    replicates: usize,
    seed: u64,
    min_relative: S,
    grid: &Grid,
    zero_division: ZeroDivision,
    tie: TiePolicy,
) -> Result<SelectionOutcome<S>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("forward selection over an empty pool".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("forward selection needs replicates >= 1".into()));
    }
    for run in pool {
        check_same_keys(&run.val_probs.keys, &gold_val.keys)?;
        if run.val_probs.k() != NUM_VALUES {
            return Err(Error::Misalignment(format!(
                "candidate '{}' has {} columns, need {NUM_VALUES}",
                run.name,
                run.val_probs.k()
            )));
        }
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        pool[b]
            .val_macro_f1
            .partial_cmp(&pool[a].val_macro_f1)
            .expect("finite scores")
            .then(a.cmp(&b))
    });

    let mut current = assemble(pool, &order[..1], mode, tie, gold_val, grid, zero_division)?;
    let mut trace = Vec::new();
    let mut step_counter = 0u64;

    loop {
        let mut added = false;
        for &cand in &order[1..] {
            if current.members.contains(&cand) {
                continue;
            }
            let mut tentative_members = current.members.clone();
            tentative_members.push(cand);
            let tentative = assemble(pool, &tentative_members, mode, tie, gold_val, grid, zero_division)?;
            let step_seed = derive_seed(seed, &format!("forward-select-{step_counter}"));
            step_counter += 1;
            let boot = paired_bootstrap(
                &tentative.preds,
                &current.preds,
                gold_val,
                |p, g, idx| macro_f1_on_sample(p, g, idx, zero_division),
                replicates,
                step_seed,
            )?;
            let lower = boot.lower_95_one_sided;
            let relative = if current.score > S::zero() {
                lower / current.score
            } else if lower > S::zero() {
                S::infinity()
            } else {
                S::zero()
            };
            let accepted = lower > S::zero() && relative >= min_relative;
            trace.push(SelectionStep {
                candidate: pool[cand].name.clone(),
                accepted,
                tentative_t: tentative.global_t,
                tentative_score: tentative.score,
                bootstrap: boot,
                relative_improvement: relative,
                ensemble_score_after: if accepted { tentative.score } else { current.score },
            });
            if accepted {
                current = tentative;
                added = true;
            }
        }
        if !added {
            break;
        }
    }

    let spec = EnsembleSpec {
        members: current.members.iter().map(|&i| pool[i].name.clone()).collect(),
        mode,
        weights: current.weights.clone(),
        global_t: current.global_t,
        member_thresholds: current.members.iter().map(|&i| pool[i].val_t).collect(),
        tie,
        seed,
        replicates,
        tuned_on: "validation".to_string(),
    };
    Ok(SelectionOutcome {
        spec,
        val_macro_f1: current.score,
        trace,
    })
}
