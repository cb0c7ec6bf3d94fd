//! Paired significance machinery: instance bootstrap for score differences,
//! exact McNemar per value, and Benjamini-Hochberg FDR control.

use crate::data::{BinaryMatrix, GoldMatrix};
use crate::error::{Error, Result};
use crate::metrics::{PRFScore, ZeroDivision};
use crate::num::{from_count, from_f64, Scalar};
use crate::values::NUM_VALUES;
use crate::Prob;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Per-replicate generator: one master seed, one ChaCha stream per replicate,
/// so results are bit-identical no matter how replicates are scheduled.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng
}

/// Stable sub-seed derivation for independent stages under one master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is long enough"))
}

/// Summary of a paired bootstrap of score(A) - score(B).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapResult<S: Scalar = Prob> {
    pub mean_delta: S,
    /// 5th percentile of the delta distribution (one-sided lower 95% bound).
    pub lower_95_one_sided: S,
    /// Smoothed one-sided p for "A does not improve over B":
    /// (#{delta <= 0} + 1) / (B + 1), never exactly zero.
    pub p_one_sided: S,
    pub replicates: usize,
    pub seed: u64,
}

/// Per-replicate deltas of score(A) - score(B) under shared resampling:
/// replicate r draws n indices with replacement from `replicate_rng(seed, r)`
/// and scores both systems on the same indices.
pub fn paired_bootstrap_deltas<S, F>(
    preds_a: &BinaryMatrix,
    preds_b: &BinaryMatrix,
    gold: &GoldMatrix,
    score_fn: F,
    replicates: usize,
    seed: u64,
) -> Result<Vec<S>>
where
    S: Scalar,
    F: Fn(&BinaryMatrix, &GoldMatrix, &[usize]) -> S + Sync,
{
    let n = gold.n();
    if preds_a.rows() != n || preds_b.rows() != n || preds_a.cols() != preds_b.cols() {
        return Err(Error::Misalignment(format!(
            "paired bootstrap needs equal shapes: A {}x{}, B {}x{}, gold n={n}",
            preds_a.rows(),
            preds_a.cols(),
            preds_b.rows(),
            preds_b.cols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap over an empty table".into()));
    }
    if replicates == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    let deltas: Vec<S> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            score_fn(preds_a, gold, &idx) - score_fn(preds_b, gold, &idx)
        })
        .collect();
    Ok(deltas)
}

/// Runs the paired bootstrap and summarizes the delta distribution.
pub fn paired_bootstrap<S, F>(
    preds_a: &BinaryMatrix,
    preds_b: &BinaryMatrix,
    gold: &GoldMatrix,
    score_fn: F,
    replicates: usize,
    seed: u64,
) -> Result<BootstrapResult<S>>
where
    S: Scalar,
    F: Fn(&BinaryMatrix, &GoldMatrix, &[usize]) -> S + Sync,
{
    let deltas = paired_bootstrap_deltas(preds_a, preds_b, gold, score_fn, replicates, seed)?;
    Ok(summarize_deltas(&deltas, seed))
}

/// Mean, one-sided lower 95% bound (nearest-rank 5th percentile), and the
/// smoothed one-sided p-value.
pub fn summarize_deltas<S: Scalar>(deltas: &[S], seed: u64) -> BootstrapResult<S> {
    let b = deltas.len();
    let sum: S = deltas.iter().copied().sum();
    let mean_delta = sum / from_count(b);
    let mut sorted = deltas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite deltas"));
    // nearest-rank percentile, k = ceil(0.05 * B) computed in integers
    let rank = (b * 5).div_ceil(100).max(1);
    let lower = sorted[rank - 1];
    let non_positive = deltas.iter().filter(|&&d| d <= S::zero()).count();
    let p = from_count::<S>(non_positive + 1) / from_count::<S>(b + 1);
    BootstrapResult {
        mean_delta,
        lower_95_one_sided: lower,
        p_one_sided: p,
        replicates: b,
        seed,
    }
}

/// Macro-F1 over the 19 values on a resampled index multiset; values absent
/// from the replicate score 0 for both systems under the zero convention.
pub fn macro_f1_on_sample<S: Scalar>(
    preds: &BinaryMatrix,
    gold: &GoldMatrix,
    idx: &[usize],
    zero_division: ZeroDivision,
) -> S {
    debug_assert_eq!(preds.cols(), NUM_VALUES);
    let mut tp = [0u32; NUM_VALUES];
    let mut fp = [0u32; NUM_VALUES];
    let mut fn_ = [0u32; NUM_VALUES];
    for &i in idx {
        let prow = preds.row(i);
        let grow = gold.labels.row(i);
        for v in 0..NUM_VALUES {
            let p = prow[v];
            let g = grow[v];
            tp[v] += u32::from(p & g);
            fp[v] += u32::from(p & (1 - g));
            fn_[v] += u32::from((1 - p) & g);
        }
    }
    let mut sum = S::zero();
    for v in 0..NUM_VALUES {
        let score: PRFScore<S> =
            PRFScore::from_counts(tp[v] as usize, fp[v] as usize, fn_[v] as usize, zero_division);
        sum = sum + score.f1;
    }
    sum / from_count(NUM_VALUES)
}

/// Positive-class F1 of n x 1 presence predictions on a resampled index
/// multiset.
pub fn presence_f1_on_sample<S: Scalar>(
    preds: &BinaryMatrix,
    gold: &GoldMatrix,
    idx: &[usize],
    zero_division: ZeroDivision,
) -> S {
    debug_assert_eq!(preds.cols(), 1);
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for &i in idx {
        let p = preds.get(i, 0);
        let g = gold.presence[i];
        tp += usize::from(p & g);
        fp += usize::from(p & (1 - g));
        fn_ += usize::from((1 - p) & g);
    }
    PRFScore::<S>::from_counts(tp, fp, fn_, zero_division).f1
}

/// Which instances enter the discordant-pair counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McNemarScope {
    /// Count discordance on all instances (default reading).
    #[default]
    AllInstances,
    /// Restrict to instances whose gold label for the value is positive.
    GoldPositives,
}

/// Exact McNemar test for one value column.
#[derive(Debug, Clone, PartialEq)]
pub struct McNemarResult<S: Scalar = Prob> {
    pub value_index: usize,
    /// Instances where A matches gold and B does not.
    pub b_count: usize,
    /// Instances where B matches gold and A does not.
    pub c_count: usize,
    pub p_exact: S,
}

/// Two-sided exact binomial p over the discordant pairs:
/// p = min(1, 2 * sum_{k=0}^{min(b,c)} C(b+c, k) / 2^(b+c)); 1 when b = c = 0.
pub fn mcnemar_exact<S: Scalar>(
    preds_a: &BinaryMatrix,
    preds_b: &BinaryMatrix,
    gold: &GoldMatrix,
    value_index: usize,
    scope: McNemarScope,
) -> Result<McNemarResult<S>> {
    let n = gold.n();
    if preds_a.rows() != n || preds_b.rows() != n {
        return Err(Error::Misalignment("McNemar needs predictions aligned to gold".into()));
    }
    if value_index >= preds_a.cols() || value_index >= preds_b.cols() {
        return Err(Error::InvalidArgument(format!(
            "value index {value_index} out of range"
        )));
    }
    let mut b_count = 0usize;
    let mut c_count = 0usize;
    for i in 0..n {
        let g = gold.labels.get(i, value_index);
        if scope == McNemarScope::GoldPositives && g != 1 {
            continue;
        }
        let a_ok = preds_a.get(i, value_index) == g;
        let b_ok = preds_b.get(i, value_index) == g;
        b_count += usize::from(a_ok && !b_ok);
        c_count += usize::from(!a_ok && b_ok);
    }
    Ok(McNemarResult {
        value_index,
        b_count,
        c_count,
        p_exact: binomial_two_sided_p(b_count, c_count),
    })
}

/// The closed-form two-sided binomial(1/2) tail, exact in integer arithmetic
/// up to 50 discordant pairs and in log space beyond.
pub fn binomial_two_sided_p<S: Scalar>(b: usize, c: usize) -> S {
    let n = b + c;
    if n == 0 {
        return S::one();
    }
    let m = b.min(c);
    if n <= 50 {
        // sum of C(n,k) stays below 2^50: exact in u64 and in f64, and the
        // final division by 2^n is error-free.
        let mut binom = 1u64; // C(n,0)
        let mut sum = 1u64;
        for k in 0..m {
            binom = binom * (n - k) as u64 / (k + 1) as u64;
            sum += binom;
        }
        let p = 2.0 * sum as f64 / (n as f64).exp2();
        from_f64(p.min(1.0))
    } else {
        // log-space tail sum, smallest terms first
        let ln2 = std::f64::consts::LN_2;
        let mut ln_terms = Vec::with_capacity(m + 1);
        let mut ln_binom = 0.0f64; // ln C(n,0)
        ln_terms.push(-(n as f64) * ln2);
        for k in 0..m {
            ln_binom += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
            ln_terms.push(ln_binom - (n as f64) * ln2);
        }
        let max = ln_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = ln_terms.iter().map(|&t| (t - max).exp()).sum();
        let p = 2.0 * (max + sum.ln()).exp();
        from_f64(p.min(1.0))
    }
}

/// Benjamini-Hochberg step-up decisions over raw p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct FdrDecision<S: Scalar = Prob> {
    /// Per input hypothesis, in input order: (raw p, adjusted p, rejected).
    pub entries: Vec<(S, S, bool)>,
    pub alpha: S,
}

impl<S: Scalar> FdrDecision<S> {
    pub fn rejected_count(&self) -> usize {
        self.entries.iter().filter(|e| e.2).count()
    }
}

/// Step-up procedure: sort ascending, find the largest k with
/// p_(k) <= k * alpha / m, reject the k smallest, and report adjusted
/// p_(k) = min_{j >= k} (m * p_(j) / j) clipped to 1.
pub fn benjamini_hochberg<S: Scalar>(p_values: &[S], alpha: S) -> Result<FdrDecision<S>> {
    for &p in p_values {
        if !(p >= S::zero() && p <= S::one()) {
            return Err(Error::InvalidArgument(format!("p-value {p} outside [0,1]")));
        }
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        p_values[a]
            .partial_cmp(&p_values[b])
            .expect("finite p-values")
            .then(a.cmp(&b))
    });
    let m_s = from_count::<S>(m);
    let mut k_star = 0usize; // number of rejections
    for (rank0, &idx) in order.iter().enumerate() {
        let k = from_count::<S>(rank0 + 1);
        if p_values[idx] <= k * alpha / m_s {
            k_star = rank0 + 1;
        }
    }
    // adjusted p by reverse running minimum over m * p_(k) / k
    let mut adjusted_sorted = vec![S::zero(); m];
    let mut running = S::one();
    for rank0 in (0..m).rev() {
        let k = from_count::<S>(rank0 + 1);
        let candidate = (m_s * p_values[order[rank0]] / k).min(S::one());
        running = running.min(candidate);
        adjusted_sorted[rank0] = running;
    }
    let mut entries = vec![(S::zero(), S::zero(), false); m];
    for (rank0, &idx) in order.iter().enumerate() {
        entries[idx] = (p_values[idx], adjusted_sorted[rank0], rank0 < k_star);
    }
    Ok(FdrDecision { entries, alpha })
}

/// McNemar over every value column plus BH control across the 19 tests.
pub fn mcnemar_per_value<S: Scalar>(
    preds_a: &BinaryMatrix,
    preds_b: &BinaryMatrix,
    gold: &GoldMatrix,
    scope: McNemarScope,
    alpha: S,
) -> Result<(Vec<McNemarResult<S>>, FdrDecision<S>)> {
    let results: Vec<McNemarResult<S>> = (0..NUM_VALUES)
        .map(|v| mcnemar_exact(preds_a, preds_b, gold, v, scope))
        .collect::<Result<_>>()?;
    let p_values: Vec<S> = results.iter().map(|r| r.p_exact).collect();
    let fdr = benjamini_hochberg(&p_values, alpha)?;
    Ok((results, fdr))
}
