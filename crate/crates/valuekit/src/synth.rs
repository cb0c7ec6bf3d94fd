//! Seeded synthetic corpora: gold matrices with target prevalences and
//! simulated model outputs with controllable skill, so every pipeline stage
//! can be verified at desk scale without the licensed corpus.
//!
//! Generation is chunked with one ChaCha stream per chunk, so output is
//! bit-identical for a given seed regardless of how chunks are scheduled.

use crate::data::{BinaryMatrix, GoldMatrix, ProbMatrix, SentenceKey};
use crate::error::{Error, Result};
use crate::num::{from_f64, Scalar};
use crate::stats::replicate_rng;
use crate::values::NUM_VALUES;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Per-split prevalence of the English sentence-level human value corpus:
/// positive counts per value (canonical order), presence-positive count, and
/// split size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitStats {
    pub n: usize,
    pub value_counts: [usize; NUM_VALUES],
    pub presence_count: usize,
}

pub const TRAIN: SplitStats = SplitStats {
    n: 44758,
    value_counts: [
        577, 1616, 1173, 385, 2873, 2072, 2238, 810, 909, 4006, 537, 2730, 604, 107, 1025, 868,
        2224, 918, 479,
    ],
    presence_count: 23064,
};

pub const VALIDATION: SplitStats = SplitStats {
    n: 14904,
    value_counts: [
        171, 486, 420, 100, 949, 656, 724, 283, 279, 1261, 274, 955, 204, 43, 341, 288, 671, 383,
        121,
    ],
    presence_count: 7600,
};

pub const TEST: SplitStats = SplitStats {
    n: 14569,
    value_counts: [
        170, 511, 372, 125, 911, 631, 806, 267, 353, 1151, 197, 911, 195, 31, 323, 288, 734, 293,
        170,
    ],
    presence_count: 7403,
};

impl SplitStats {
    pub fn by_name(name: &str) -> Result<&'static SplitStats> {
        match name {
            "train" => Ok(&TRAIN),
            "validation" => Ok(&VALIDATION),
            "test" => Ok(&TEST),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }

    pub fn profile(&self) -> PrevalenceProfile {
        PrevalenceProfile::new(
            self.value_counts
                .iter()
                .map(|&c| c as f64 / self.n as f64)
                .collect(),
        )
        .expect("corpus counts are valid")
    }
}

/// Per-value Bernoulli rates for label generation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrevalenceProfile {
    per_value: Vec<f64>,
}

impl PrevalenceProfile {
    pub fn new(per_value: Vec<f64>) -> Result<Self> {
        if per_value.len() != NUM_VALUES {
            return Err(Error::InvalidArgument(format!(
                "profile needs {NUM_VALUES} rates, got {}",
                per_value.len()
            )));
        }
        for (v, &p) in per_value.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!(
                    "profile rate {p} for value {v} outside [0,1]"
                )));
            }
        }
        Ok(PrevalenceProfile { per_value })
    }

    pub fn uniform(p: f64) -> Result<Self> {
        PrevalenceProfile::new(vec![p; NUM_VALUES])
    }

    pub fn rates(&self) -> &[f64] {
        &self.per_value
    }

    /// Under independent values, presence prevalence tends to
    /// 1 - prod(1 - pi_v).
    pub fn expected_presence_rate(&self) -> f64 {
        1.0 - self.per_value.iter().map(|&p| 1.0 - p).product::<f64>()
    }
}

/// Strictly positive Beta shape parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaShape {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaShape {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if alpha > 0.0 && beta > 0.0 {
            Ok(BetaShape { alpha, beta })
        } else {
            Err(Error::InvalidArgument(format!(
                "Beta shape parameters must be strictly positive, got ({alpha}, {beta})"
            )))
        }
    }

    fn sampler(&self) -> Beta<f64> {
        Beta::new(self.alpha, self.beta).expect("validated shapes")
    }
}

/// Probability distributions a simulated model draws from, conditional on
/// the gold bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalPair {
    pub positive: BetaShape,
    pub negative: BetaShape,
}

impl ConditionalPair {
    pub fn new(positive: BetaShape, negative: BetaShape) -> Self {
        ConditionalPair { positive, negative }
    }
}

/// Simulated-model skill: emit the gold bit exactly, or draw from per-value
/// conditional Beta distributions.
#[derive(Debug, Clone, PartialEq)]
pub enum SkillProfile {
    Deterministic,
    Stochastic { per_value: Vec<ConditionalPair> },
}

impl SkillProfile {
    /// One conditional pair for all 19 values.
    pub fn uniform(pair: ConditionalPair) -> Self {
        SkillProfile::Stochastic {
            per_value: vec![pair; NUM_VALUES],
        }
    }

    pub fn per_value(pairs: Vec<ConditionalPair>) -> Result<Self> {
        if pairs.len() != NUM_VALUES {
            return Err(Error::InvalidArgument(format!(
                "skill profile needs {NUM_VALUES} pairs, got {}",
                pairs.len()
            )));
        }
        Ok(SkillProfile::Stochastic { per_value: pairs })
    }
}

/// Skill of a simulated presence gate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateSkill {
    Deterministic,
    Stochastic(ConditionalPair),
}

fn synthetic_keys(n: usize) -> Vec<SentenceKey> {
    (0..n)
        .map(|i| SentenceKey::new(format!("T{:05}", i / 20), format!("{}", i % 20 + 1)).expect("non-empty"))
        .collect()
}

/// Draws an n x 19 gold matrix with independent per-value Bernoulli labels
/// and derived presence. Bit-exact for a given (n, profile, seed).
pub fn generate_gold(n: usize, profile: &PrevalenceProfile, seed: u64) -> GoldMatrix {
    let rates = profile.rates();
    let chunks: Vec<Vec<u8>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut rng = replicate_rng(seed, c as u64);
            let rows = CHUNK.min(n - c * CHUNK);
            let mut data = Vec::with_capacity(rows * NUM_VALUES);
            for _ in 0..rows {
                for &p in rates {
                    data.push(u8::from(rng.random::<f64>() < p));
                }
            }
            data
        })
        .collect();
    let mut data = Vec::with_capacity(n * NUM_VALUES);
    for c in chunks {
        data.extend(c);
    }
    let labels = BinaryMatrix::from_rows(
        data.chunks(NUM_VALUES).map(|r| r.to_vec()).collect(),
        NUM_VALUES,
    )
    .expect("generated rows are rectangular");
    GoldMatrix::from_labels(synthetic_keys(n), labels).expect("synthetic keys are unique")
}

fn sample_cell<S: Scalar>(rng: &mut impl Rng, bit: u8, pair: &ConditionalPair) -> S {
    let sampler = if bit == 1 {
        pair.positive.sampler()
    } else {
        pair.negative.sampler()
    };
    from_f64(sampler.sample(rng))
}

/// Simulates a 19-column value detector on the given gold: each cell draws
/// from the positive- or negative-conditional distribution of its value, or
/// copies the gold bit in deterministic mode.
pub fn simulate_model<S: Scalar>(
    gold: &GoldMatrix,
    skill: &SkillProfile,
    seed: u64,
    model_name: impl Into<String>,
) -> Result<ProbMatrix<S>> {
    let n = gold.n();
    let data: Vec<S> = match skill {
        SkillProfile::Deterministic => gold
            .labels
            .data()
            .iter()
            .map(|&b| if b == 1 { S::one() } else { S::zero() })
            .collect(),
        SkillProfile::Stochastic { per_value } => {
            if per_value.len() != NUM_VALUES {
                return Err(Error::InvalidArgument("skill profile arity".into()));
            }
            let chunks: Vec<Vec<S>> = (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut rng = replicate_rng(seed, c as u64);
                    let rows = CHUNK.min(n - c * CHUNK);
                    let mut out = Vec::with_capacity(rows * NUM_VALUES);
                    for r in 0..rows {
                        let row = gold.labels.row(c * CHUNK + r);
                        for (v, &bit) in row.iter().enumerate() {
                            out.push(sample_cell(&mut rng, bit, &per_value[v]));
                        }
                    }
                    out
                })
                .collect();
            chunks.into_iter().flatten().collect()
        }
    };
    ProbMatrix::new(gold.keys.clone(), NUM_VALUES, data, model_name)
}

/// Simulates a presence gate (one probability column) from the gold
/// presence bits.
pub fn simulate_gate<S: Scalar>(
    gold: &GoldMatrix,
    skill: &GateSkill,
    seed: u64,
    model_name: impl Into<String>,
) -> Result<ProbMatrix<S>> {
    let n = gold.n();
    let data: Vec<S> = match skill {
        GateSkill::Deterministic => gold
            .presence
            .iter()
            .map(|&b| if b == 1 { S::one() } else { S::zero() })
            .collect(),
        GateSkill::Stochastic(pair) => {
            let chunks: Vec<Vec<S>> = (0..n.div_ceil(CHUNK))
                .into_par_iter()
                .map(|c| {
                    let mut rng = replicate_rng(seed, c as u64);
                    let rows = CHUNK.min(n - c * CHUNK);
                    (0..rows)
                        .map(|r| sample_cell(&mut rng, gold.presence[c * CHUNK + r], pair))
                        .collect()
                })
                .collect();
            chunks.into_iter().flatten().collect()
        }
    };
    ProbMatrix::new(gold.keys.clone(), 1, data, model_name)
}

/// Builds a gold matrix with exact per-value positive counts and an exact
/// presence-positive count, for prevalence fixtures.
///
/// The first `presence_count` rows carry the positives: value cells are laid
/// out consecutively modulo `presence_count`, which covers every presence row
/// at least once whenever the counts sum to at least `presence_count`.
pub fn gold_with_exact_counts(
    n: usize,
    counts: &[usize; NUM_VALUES],
    presence_count: usize,
) -> Result<GoldMatrix> {
    if presence_count > n {
        return Err(Error::InvalidArgument(format!(
            "presence count {presence_count} exceeds n = {n}"
        )));
    }
    let total: usize = counts.iter().sum();
    if presence_count == 0 {
        if total != 0 {
            return Err(Error::InvalidArgument(
                "zero presence rows cannot carry positive values".into(),
            ));
        }
        return GoldMatrix::from_labels(synthetic_keys(n), BinaryMatrix::zeros(n, NUM_VALUES));
    }
    if total < presence_count {
        return Err(Error::InvalidArgument(format!(
            "value counts sum to {total}, too few to cover {presence_count} presence rows"
        )));
    }
    for (v, &c) in counts.iter().enumerate() {
        if c > presence_count {
            return Err(Error::InvalidArgument(format!(
                "count {c} for value {v} exceeds the {presence_count} presence rows"
            )));
        }
    }
    let mut labels = BinaryMatrix::zeros(n, NUM_VALUES);
    let mut cursor = 0usize;
    for (v, &count) in counts.iter().enumerate() {
        for j in 0..count {
            labels.set((cursor + j) % presence_count, v, 1);
        }
        cursor += count;
    }
    GoldMatrix::from_labels(synthetic_keys(n), labels)
}
