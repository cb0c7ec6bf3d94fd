//! End-to-end runs: calibrate on validation, freeze, evaluate on test, and
//! persist a manifest that makes the run reproducible.
//!
//! Tuning operations only ever receive the validation pair; every tuning
//! event records a digest of the gold table it saw, so a manifest proves
//! what was tuned on what. Re-running from a manifest verifies the input
//! digests and reproduces the reports byte for byte.

use crate::data::{
    align, file_digest, load_gold, load_probs, write_probs, AlignedPair, BinaryMatrix, GoldMatrix,
    PresenceMode, ProbMatrix,
};
use crate::ensemble::{
    forward_select, CandidateRun, EnsembleSpec, SelectionOutcome, SplitSel, TiePolicy, VoteMode,
};
use crate::error::{Error, Result};
use crate::gating::{apply_gate, gate_bottleneck, gate_decisions, tune_gate, tune_gate_joint};
use crate::metrics::{macro_f1, MacroReport, ZeroDivision};
use crate::stats::{
    mcnemar_per_value, paired_bootstrap, macro_f1_on_sample, BootstrapResult, FdrDecision,
    McNemarResult, McNemarScope,
};
use crate::thresholds::{tune_global, tune_labelwise, Grid, Objective, ThresholdKind, ThresholdSet};
use crate::values::ValueTaxonomy;
use crate::Prob;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const TOOL_NAME: &str = "valuekit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const VALIDATION_SPLIT: &str = "validation";
pub const TEST_SPLIT: &str = "test";

/// Header comment carried by every emitted file.
pub fn tool_comment(seed: u64) -> String {
    format!("{TOOL_NAME} {TOOL_VERSION} seed={seed}")
}

/// Everything a run needs beyond its input tables. Defaults mirror the
/// evaluation protocol: 0.01 grid, B = 2000, alpha = 0.05, precision floor
/// 0.40, fixed default threshold 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub threshold_kind: ThresholdKind,
    pub grid: Grid,
    pub master_seed: u64,
    pub zero_division: ZeroDivision,
    pub min_precision: f64,
    /// Hierarchical runs: re-tune value thresholds at every gate point
    /// instead of freezing them first.
    pub gate_joint: bool,
    pub replicates: usize,
    pub alpha: f64,
    pub vote_mode: VoteMode,
    pub min_relative: f64,
    pub tie: TiePolicy,
    pub presence_lenient: bool,
    pub mcnemar_scope: McNemarScope,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            threshold_kind: ThresholdKind::TunedGlobal,
            grid: Grid::default(),
            master_seed: 42,
            zero_division: ZeroDivision::Zero,
            min_precision: 0.40,
            gate_joint: false,
            replicates: 2000,
            alpha: 0.05,
            vote_mode: VoteMode::Soft,
            min_relative: 0.01,
            tie: TiePolicy::Positive,
            presence_lenient: false,
            mcnemar_scope: McNemarScope::AllInstances,
        }
    }
}

impl RunConfig {
    fn presence_mode(&self) -> PresenceMode {
        if self.presence_lenient {
            PresenceMode::Lenient
        } else {
            PresenceMode::Strict
        }
    }
}

// ---------------------------------------------------------------------------
// Manifest records (plain serde types, f64 on disk)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningEvent {
    pub operation: String,
    pub split: String,
    pub gold_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub kind: String,
    pub global_t: Option<f64>,
    pub per_value: Option<Vec<f64>>,
    pub gate_t: Option<f64>,
    pub tuned_on: Option<String>,
    pub fallback: Vec<String>,
}

impl ThresholdRecord {
    pub fn from_set(set: &ThresholdSet<Prob>) -> Self {
        ThresholdRecord {
            kind: set.kind().as_str().to_string(),
            global_t: set.global_t(),
            per_value: set.per_value().map(|v| v.to_vec()),
            gate_t: set.gate_t,
            tuned_on: set.tuned_on.clone(),
            fallback: set.fallback.clone(),
        }
    }

    pub fn to_set(&self) -> Result<ThresholdSet<Prob>> {
        let mut set = match ThresholdKind::parse(&self.kind)? {
            ThresholdKind::FixedGlobal => ThresholdSet::fixed_global(
                self.global_t
                    .ok_or_else(|| Error::InvalidArgument("manifest missing global_t".into()))?,
            )?,
            ThresholdKind::TunedGlobal => ThresholdSet::tuned_global(
                self.global_t
                    .ok_or_else(|| Error::InvalidArgument("manifest missing global_t".into()))?,
                self.tuned_on.clone().unwrap_or_default(),
            )?,
            ThresholdKind::LabelWise => ThresholdSet::label_wise(
                self.per_value
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("manifest missing per_value".into()))?,
                self.fallback.clone(),
                self.tuned_on.clone().unwrap_or_default(),
            )?,
        };
        set.tuned_on = self.tuned_on.clone();
        if let Some(g) = self.gate_t {
            set = set.with_gate(g)?;
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub tau_gate: f64,
    pub tuned_on: String,
    pub tuning_order: String, // "sequential" | "joint"
    pub val_end_to_end_macro_f1: f64,
    pub val_gate_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub candidate: String,
    pub accepted: bool,
    pub tentative_t: Option<f64>,
    pub tentative_score: f64,
    pub mean_delta: f64,
    pub lower_95_one_sided: f64,
    pub p_one_sided: f64,
    pub relative_improvement: f64,
    pub ensemble_score_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub mode: String,
    pub members: Vec<String>,
    pub weights: Option<Vec<f64>>,
    pub global_t: Option<f64>,
    pub member_thresholds: Vec<f64>,
    pub tie_positive: bool,
    pub seed: u64,
    pub replicates: usize,
    pub tuned_on: String,
    pub val_macro_f1: f64,
    pub trace: Vec<TraceRecord>,
}

impl EnsembleRecord {
    pub fn from_outcome(outcome: &SelectionOutcome<Prob>) -> Self {
        EnsembleRecord {
            mode: outcome.spec.mode.as_str().to_string(),
            members: outcome.spec.members.clone(),
            weights: outcome.spec.weights.clone(),
            global_t: outcome.spec.global_t,
            member_thresholds: outcome.spec.member_thresholds.clone(),
            tie_positive: outcome.spec.tie == TiePolicy::Positive,
            seed: outcome.spec.seed,
            replicates: outcome.spec.replicates,
            tuned_on: outcome.spec.tuned_on.clone(),
            val_macro_f1: outcome.val_macro_f1,
            trace: outcome
                .trace
                .iter()
                .map(|s| TraceRecord {
                    candidate: s.candidate.clone(),
                    accepted: s.accepted,
                    tentative_t: s.tentative_t,
                    tentative_score: s.tentative_score,
                    mean_delta: s.bootstrap.mean_delta,
                    lower_95_one_sided: s.bootstrap.lower_95_one_sided,
                    p_one_sided: s.bootstrap.p_one_sided,
                    relative_improvement: s.relative_improvement,
                    ensemble_score_after: s.ensemble_score_after,
                })
                .collect(),
        }
    }

    pub fn to_spec(&self) -> Result<EnsembleSpec<Prob>> {
        Ok(EnsembleSpec {
            members: self.members.clone(),
            mode: VoteMode::parse(&self.mode)?,
            weights: self.weights.clone(),
            global_t: self.global_t,
            member_thresholds: self.member_thresholds.clone(),
            tie: if self.tie_positive { TiePolicy::Positive } else { TiePolicy::Negative },
            seed: self.seed,
            replicates: self.replicates,
            tuned_on: self.tuned_on.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRecord {
    pub threshold_kind: String,
    pub grid_denominator: u32,
    pub master_seed: u64,
    pub zero_division: String,
    pub min_precision: f64,
    pub gate_joint: bool,
    pub replicates: usize,
    pub alpha: f64,
    pub vote_mode: String,
    pub min_relative: f64,
    pub tie_positive: bool,
    pub presence_lenient: bool,
    pub mcnemar_gold_positives_only: bool,
}

impl ConfigRecord {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ConfigRecord {
            threshold_kind: cfg.threshold_kind.as_str().to_string(),
            grid_denominator: cfg.grid.denominator(),
            master_seed: cfg.master_seed,
            zero_division: match cfg.zero_division {
                ZeroDivision::Zero => "zero".into(),
                ZeroDivision::OneWhenBothEmpty => "one-when-both-empty".into(),
            },
            min_precision: cfg.min_precision,
            gate_joint: cfg.gate_joint,
            replicates: cfg.replicates,
            alpha: cfg.alpha,
            vote_mode: cfg.vote_mode.as_str().to_string(),
            min_relative: cfg.min_relative,
            tie_positive: cfg.tie == TiePolicy::Positive,
            presence_lenient: cfg.presence_lenient,
            mcnemar_gold_positives_only: cfg.mcnemar_scope == McNemarScope::GoldPositives,
        }
    }

    pub fn to_config(&self) -> Result<RunConfig> {
        Ok(RunConfig {
            threshold_kind: ThresholdKind::parse(&self.threshold_kind)?,
            grid: Grid::new(self.grid_denominator)?,
            master_seed: self.master_seed,
            zero_division: match self.zero_division.as_str() {
                "zero" => ZeroDivision::Zero,
                "one-when-both-empty" => ZeroDivision::OneWhenBothEmpty,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown zero-division convention '{other}'"
                    )))
                }
            },
            min_precision: self.min_precision,
            gate_joint: self.gate_joint,
            replicates: self.replicates,
            alpha: self.alpha,
            vote_mode: VoteMode::parse(&self.vote_mode)?,
            min_relative: self.min_relative,
            tie: if self.tie_positive { TiePolicy::Positive } else { TiePolicy::Negative },
            presence_lenient: self.presence_lenient,
            mcnemar_scope: if self.mcnemar_gold_positives_only {
                McNemarScope::GoldPositives
            } else {
                McNemarScope::AllInstances
            },
        })
    }
}

/// The structured record of one run: inputs, frozen parameters, where every
/// tuned parameter came from, and digests of the emitted reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub run_kind: String,
    pub config: ConfigRecord,
    pub inputs: BTreeMap<String, InputRecord>,
    pub thresholds: Option<ThresholdRecord>,
    pub gate: Option<GateRecord>,
    pub ensemble: Option<EnsembleRecord>,
    pub tuning_events: Vec<TuningEvent>,
    pub reports: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl RunManifest {
    fn new(run_kind: &str, cfg: &RunConfig) -> Self {
        RunManifest {
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            run_kind: run_kind.to_string(),
            config: ConfigRecord::from_config(cfg),
            inputs: BTreeMap::new(),
            thresholds: None,
            gate: None,
            ensemble: None,
            tuning_events: Vec::new(),
            reports: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("bad manifest: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        RunManifest::from_toml(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Errors if any recorded input no longer hashes to its recorded digest.
    pub fn verify_inputs(&self) -> Result<()> {
        for (name, rec) in &self.inputs {
            let now = file_digest(Path::new(&rec.path))?;
            if now != rec.sha256 {
                return Err(Error::InvalidArgument(format!(
                    "input drift: '{name}' at {} hashes to {now}, manifest says {}",
                    rec.path, rec.sha256
                )));
            }
        }
        Ok(())
    }
}

/// A finished run: its manifest plus the emitted files.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
    pub report_paths: BTreeMap<String, PathBuf>,
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn record_input(manifest: &mut RunManifest, name: &str, path: &Path) -> Result<()> {
    manifest.inputs.insert(
        name.to_string(),
        InputRecord {
            path: path.display().to_string(),
            sha256: file_digest(path)?,
        },
    );
    Ok(())
}

fn write_report(
    manifest: &mut RunManifest,
    out_dir: &Path,
    name: &str,
    contents: &str,
    paths: &mut BTreeMap<String, PathBuf>,
) -> Result<()> {
    let path = out_dir.join(name);
    fs::write(&path, contents)?;
    manifest.reports.insert(name.to_string(), file_digest(&path)?);
    paths.insert(name.to_string(), path);
    Ok(())
}

fn push_event(manifest: &mut RunManifest, operation: &str, gold: &GoldMatrix) {
    manifest.tuning_events.push(TuningEvent {
        operation: operation.to_string(),
        split: VALIDATION_SPLIT.to_string(),
        gold_sha256: gold.digest(),
    });
}

/// Tunes thresholds of the configured kind on the validation pair only.
fn calibrate(
    val_pair: &AlignedPair<Prob>,
    cfg: &RunConfig,
    taxonomy: &ValueTaxonomy,
    manifest: &mut RunManifest,
) -> Result<ThresholdSet<Prob>> {
    match cfg.threshold_kind {
        ThresholdKind::FixedGlobal => ThresholdSet::fixed_global(0.5),
        ThresholdKind::TunedGlobal => {
            let r = tune_global(val_pair, Objective::MacroF1, &cfg.grid, cfg.zero_division)?;
            push_event(manifest, "tune-global", val_pair.gold());
            ThresholdSet::tuned_global(r.t, VALIDATION_SPLIT)
        }
        ThresholdKind::LabelWise => {
            let set = tune_labelwise(
                val_pair,
                cfg.min_precision,
                &cfg.grid,
                taxonomy,
                VALIDATION_SPLIT,
                cfg.zero_division,
            )?;
            push_event(manifest, "tune-labelwise", val_pair.gold());
            Ok(set)
        }
    }
}

fn load_split_probs(path: &Path, k: usize, taxonomy: &ValueTaxonomy) -> Result<ProbMatrix<Prob>> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    load_probs(path, Some(k), taxonomy, &name)
}

// ---------------------------------------------------------------------------
// Direct runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DirectPaths {
    pub probs_val: PathBuf,
    pub probs_test: PathBuf,
    pub gold_val: PathBuf,
    pub gold_test: PathBuf,
}

/// Direct multi-label run: thresholds tuned on validation, frozen, then the
/// test split is evaluated with them unchanged.
pub fn run_direct(paths: &DirectPaths, cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let taxonomy = ValueTaxonomy::default();
    let mut manifest = RunManifest::new("direct", cfg);
    record_input(&mut manifest, "probs_val", &paths.probs_val)?;
    record_input(&mut manifest, "probs_test", &paths.probs_test)?;
    record_input(&mut manifest, "gold_val", &paths.gold_val)?;
    record_input(&mut manifest, "gold_test", &paths.gold_test)?;

    let (gold_val, mut warnings) = load_gold(&paths.gold_val, &taxonomy, cfg.presence_mode())?;
    let (gold_test, more) = load_gold(&paths.gold_test, &taxonomy, cfg.presence_mode())?;
    warnings.extend(more);
    manifest.notes.extend(warnings);

    let probs_val = load_split_probs(&paths.probs_val, crate::NUM_VALUES, &taxonomy)?;
    let probs_test = load_split_probs(&paths.probs_test, crate::NUM_VALUES, &taxonomy)?;
    let val_pair = align(probs_val, gold_val)?;
    let test_pair = align(probs_test, gold_test)?;

    let thresholds = calibrate(&val_pair, cfg, &taxonomy, &mut manifest)?;
    manifest.thresholds = Some(ThresholdRecord::from_set(&thresholds));

    let comment = vec![tool_comment(cfg.master_seed)];
    let val_report = evaluate(&thresholds, &val_pair, cfg)?;
    let test_report = evaluate(&thresholds, &test_pair, cfg)?;

    let mut report_paths = BTreeMap::new();
    let thr_text = thresholds.to_tsv(&taxonomy, &comment);
    write_report(&mut manifest, out_dir, "thresholds.tsv", &thr_text, &mut report_paths)?;
    write_report(
        &mut manifest,
        out_dir,
        "val_report.tsv",
        &val_report.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;
    write_report(
        &mut manifest,
        out_dir,
        "test_report.tsv",
        &test_report.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;

    let manifest_path = out_dir.join("manifest.toml");
    manifest.write(&manifest_path)?;
    Ok(RunOutput {
        manifest,
        manifest_path,
        report_paths,
    })
}

fn evaluate(
    thresholds: &ThresholdSet<Prob>,
    pair: &AlignedPair<Prob>,
    cfg: &RunConfig,
) -> Result<MacroReport<Prob>> {
    let pred = thresholds.binarize(pair.probs())?;
    macro_f1(&pred, pair.gold(), cfg.zero_division)
}

// ---------------------------------------------------------------------------
// Hierarchical runs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HierarchicalPaths {
    pub gate_val: PathBuf,
    pub gate_test: PathBuf,
    pub value_val: PathBuf,
    pub value_test: PathBuf,
    pub gold_val: PathBuf,
    pub gold_test: PathBuf,
}

/// Presence-gated run. Sequential order (default) tunes value thresholds on
/// ungated validation outputs, freezes them, then sweeps the gate cutoff for
/// end-to-end macro-F1; the joint flag re-tunes value thresholds at every
/// gate point instead.
pub fn run_hierarchical(paths: &HierarchicalPaths, cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let taxonomy = ValueTaxonomy::default();
    let mut manifest = RunManifest::new("hierarchical", cfg);
    record_input(&mut manifest, "gate_val", &paths.gate_val)?;
    record_input(&mut manifest, "gate_test", &paths.gate_test)?;
    record_input(&mut manifest, "value_val", &paths.value_val)?;
    record_input(&mut manifest, "value_test", &paths.value_test)?;
    record_input(&mut manifest, "gold_val", &paths.gold_val)?;
    record_input(&mut manifest, "gold_test", &paths.gold_test)?;

    let (gold_val, mut warnings) = load_gold(&paths.gold_val, &taxonomy, cfg.presence_mode())?;
    let (gold_test, more) = load_gold(&paths.gold_test, &taxonomy, cfg.presence_mode())?;
    warnings.extend(more);
    manifest.notes.extend(warnings);

    let gate_val = align(load_split_probs(&paths.gate_val, 1, &taxonomy)?, gold_val.clone())?
        .into_parts()
        .0;
    let gate_test = align(load_split_probs(&paths.gate_test, 1, &taxonomy)?, gold_test.clone())?
        .into_parts()
        .0;
    let value_val_pair = align(load_split_probs(&paths.value_val, crate::NUM_VALUES, &taxonomy)?, gold_val)?;
    let value_test_pair = align(load_split_probs(&paths.value_test, crate::NUM_VALUES, &taxonomy)?, gold_test)?;
    let (value_val, gold_val) = value_val_pair.into_parts();
    let (value_test, gold_test) = value_test_pair.into_parts();

    let (mut thresholds, gate_sweep, order) = if cfg.gate_joint {
        let cfg_inner = cfg.clone();
        let tax_inner = taxonomy.clone();
        let (sweep, set) = tune_gate_joint(
            &gate_val,
            &value_val,
            &gold_val,
            &cfg.grid,
            cfg.zero_division,
            move |pair| match cfg_inner.threshold_kind {
                ThresholdKind::FixedGlobal => ThresholdSet::fixed_global(0.5),
                ThresholdKind::TunedGlobal => {
                    let r = tune_global(pair, Objective::MacroF1, &cfg_inner.grid, cfg_inner.zero_division)?;
                    ThresholdSet::tuned_global(r.t, VALIDATION_SPLIT)
                }
                ThresholdKind::LabelWise => tune_labelwise(
                    pair,
                    cfg_inner.min_precision,
                    &cfg_inner.grid,
                    &tax_inner,
                    VALIDATION_SPLIT,
                    cfg_inner.zero_division,
                ),
            },
        )?;
        push_event(&mut manifest, "tune-gate-joint", &gold_val);
        (set, sweep, "joint")
    } else {
        let val_pair = align(value_val.clone(), gold_val.clone())?;
        let set = calibrate(&val_pair, cfg, &taxonomy, &mut manifest)?;
        let sweep = tune_gate(&gate_val, &value_val, &gold_val, &set, &cfg.grid, cfg.zero_division)?;
        push_event(&mut manifest, "tune-gate", &gold_val);
        (set, sweep, "sequential")
    };
    thresholds = thresholds.with_gate(gate_sweep.t)?;
    manifest.thresholds = Some(ThresholdRecord::from_set(&thresholds));

    // Bottleneck diagnostic at the tuned cutoff, on the tuning split.
    let bottleneck = gate_bottleneck::<Prob>(&gate_decisions(&gate_val, gate_sweep.t), &gold_val)?;
    manifest.gate = Some(GateRecord {
        tau_gate: gate_sweep.t,
        tuned_on: VALIDATION_SPLIT.to_string(),
        tuning_order: order.to_string(),
        val_end_to_end_macro_f1: gate_sweep.score,
        val_gate_recall: bottleneck.gate_recall,
    });
    manifest.notes.push(format!(
        "gate recall on validation presence: {:.4}; per-value end-to-end recall is bounded by the per-value pass rate",
        bottleneck.gate_recall
    ));

    let comment = vec![tool_comment(cfg.master_seed)];
    let masked_val = apply_gate(&gate_val, &value_val, gate_sweep.t)?;
    let masked_test = apply_gate(&gate_test, &value_test, gate_sweep.t)?;
    let val_report = evaluate(&thresholds, &align(masked_val, gold_val)?, cfg)?;
    let test_report = evaluate(&thresholds, &align(masked_test, gold_test)?, cfg)?;

    let mut report_paths = BTreeMap::new();
    write_report(
        &mut manifest,
        out_dir,
        "thresholds.tsv",
        &thresholds.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;
    write_report(
        &mut manifest,
        out_dir,
        "val_report.tsv",
        &val_report.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;
    write_report(
        &mut manifest,
        out_dir,
        "test_report.tsv",
        &test_report.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;

    let manifest_path = out_dir.join("manifest.toml");
    manifest.write(&manifest_path)?;
    Ok(RunOutput {
        manifest,
        manifest_path,
        report_paths,
    })
}

// ---------------------------------------------------------------------------
// Ensemble runs
// ---------------------------------------------------------------------------

/// Pool manifest: one `name<TAB>val_path<TAB>test_path` row per candidate.
pub fn read_pool_manifest(path: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let text = fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(Error::parse(
                &origin,
                format!("line {}", i + 1),
                "expected name<TAB>val_path<TAB>test_path",
            ));
        }
        let resolve = |p: &str| {
            let pb = PathBuf::from(p);
            if pb.is_absolute() {
                pb
            } else {
                base.join(pb)
            }
        };
        entries.push((cells[0].to_string(), resolve(cells[1]), resolve(cells[2])));
    }
    if entries.is_empty() {
        return Err(Error::parse(&origin, "body", "empty candidate pool"));
    }
    Ok(entries)
}

pub struct EnsemblePaths {
    pub pool_manifest: PathBuf,
    pub gold_val: PathBuf,
    pub gold_test: PathBuf,
}

/// Forward-selects an ensemble on validation, freezes it, and evaluates the
/// frozen ensemble on test.
pub fn run_ensemble(paths: &EnsemblePaths, cfg: &RunConfig, out_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(out_dir)?;
    let taxonomy = ValueTaxonomy::default();
    let mut manifest = RunManifest::new("ensemble", cfg);
    record_input(&mut manifest, "pool_manifest", &paths.pool_manifest)?;
    record_input(&mut manifest, "gold_val", &paths.gold_val)?;
    record_input(&mut manifest, "gold_test", &paths.gold_test)?;

    let (gold_val, mut warnings) = load_gold(&paths.gold_val, &taxonomy, cfg.presence_mode())?;
    let (gold_test, more) = load_gold(&paths.gold_test, &taxonomy, cfg.presence_mode())?;
    warnings.extend(more);
    manifest.notes.extend(warnings);

    let mut pool = Vec::new();
    for (name, val_path, test_path) in read_pool_manifest(&paths.pool_manifest)? {
        record_input(&mut manifest, &format!("pool:{name}:val"), &val_path)?;
        record_input(&mut manifest, &format!("pool:{name}:test"), &test_path)?;
        let val = align(load_probs(&val_path, Some(crate::NUM_VALUES), &taxonomy, &name)?, gold_val.clone())?
            .into_parts()
            .0;
        let test = align(load_probs(&test_path, Some(crate::NUM_VALUES), &taxonomy, &name)?, gold_test.clone())?
            .into_parts()
            .0;
        let run = CandidateRun::evaluate(name, val, Some(test), &gold_val, &cfg.grid, cfg.zero_division)?;
        push_event(&mut manifest, "tune-global", &gold_val);
        pool.push(run);
    }

    let outcome = forward_select(
        &pool,
        &gold_val,
        cfg.vote_mode,
        cfg.replicates,
        cfg.master_seed,
        cfg.min_relative,
        &cfg.grid,
        cfg.zero_division,
        cfg.tie,
    )?;
    push_event(&mut manifest, "forward-select", &gold_val);
    manifest.ensemble = Some(EnsembleRecord::from_outcome(&outcome));

    let comment = vec![tool_comment(cfg.master_seed)];
    let val_pred = outcome.spec.predictions(&pool, SplitSel::Validation)?;
    let test_pred = outcome.spec.predictions(&pool, SplitSel::Test)?;
    let val_report = macro_f1::<Prob>(&val_pred, &gold_val, cfg.zero_division)?;
    let test_report = macro_f1::<Prob>(&test_pred, &gold_test, cfg.zero_division)?;

    let mut report_paths = BTreeMap::new();
    write_report(
        &mut manifest,
        out_dir,
        "val_report.tsv",
        &val_report.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;
    write_report(
        &mut manifest,
        out_dir,
        "test_report.tsv",
        &test_report.to_tsv(&taxonomy, &comment),
        &mut report_paths,
    )?;

    let manifest_path = out_dir.join("manifest.toml");
    manifest.write(&manifest_path)?;
    Ok(RunOutput {
        manifest,
        manifest_path,
        report_paths,
    })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

/// Paired bootstrap on macro-F1 plus per-value exact McNemar with BH control.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<S: crate::Scalar = Prob> {
    pub name_a: String,
    pub name_b: String,
    pub bootstrap: BootstrapResult<S>,
    pub mcnemar: Vec<McNemarResult<S>>,
    pub fdr: FdrDecision<S>,
}

impl ComparisonReport<Prob> {
    pub fn to_tsv(&self, taxonomy: &ValueTaxonomy, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            out.push_str(&format!("# {c}\n"));
        }
        out.push_str("system_a\tsystem_b\tmean_delta\tlower_95_one_sided\tp_one_sided\treplicates\tseed\n");
        out.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\n",
            self.name_a,
            self.name_b,
            self.bootstrap.mean_delta,
            self.bootstrap.lower_95_one_sided,
            self.bootstrap.p_one_sided,
            self.bootstrap.replicates,
            self.bootstrap.seed
        ));
        out.push_str("value\tb\tc\tp_raw\tp_adjusted\trejected\n");
        for (r, entry) in self.mcnemar.iter().zip(self.fdr.entries.iter()) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
                taxonomy.name(r.value_index),
                r.b_count,
                r.c_count,
                entry.0,
                entry.1,
                u8::from(entry.2)
            ));
        }
        out
    }
}

/// Compares two aligned binary prediction matrices against one gold table.
#[allow(clippy::too_many_arguments)]
pub fn compare(
    name_a: &str,
    preds_a: &BinaryMatrix,
    name_b: &str,
    preds_b: &BinaryMatrix,
    gold: &GoldMatrix,
    cfg: &RunConfig,
) -> Result<ComparisonReport<Prob>> {
    let bootstrap = paired_bootstrap(
        preds_a,
        preds_b,
        gold,
        |p, g, idx| macro_f1_on_sample(p, g, idx, cfg.zero_division),
        cfg.replicates,
        cfg.master_seed,
    )?;
    let (mcnemar, fdr) = mcnemar_per_value(preds_a, preds_b, gold, cfg.mcnemar_scope, cfg.alpha)?;
    Ok(ComparisonReport {
        name_a: name_a.to_string(),
        name_b: name_b.to_string(),
        bootstrap,
        mcnemar,
        fdr,
    })
}

// ---------------------------------------------------------------------------
// Champion selection and rerun
// ---------------------------------------------------------------------------

/// One contender for champion selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChampionCandidate {
    pub name: String,
    pub val_macro_f1: Prob,
    /// Ensemble size; single models count 1.
    pub members: usize,
    /// 0 = fixed global, 1 = tuned global, 2 = label-wise.
    pub threshold_complexity: u8,
}

/// Highest validation macro-F1 wins; ties go to fewer members, then to the
/// simpler threshold kind, then to pool order.
pub fn select_champion(candidates: &[ChampionCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let better = match best {
            None => true,
            Some(b) => {
                let cur = &candidates[b];
                c.val_macro_f1 > cur.val_macro_f1
                    || (c.val_macro_f1 == cur.val_macro_f1
                        && (c.members < cur.members
                            || (c.members == cur.members
                                && c.threshold_complexity < cur.threshold_complexity)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Re-executes a recorded run after verifying that every input still hashes
/// to its recorded digest. The reproduced reports land in `out_dir`.
pub fn rerun(manifest_path: &Path, out_dir: &Path) -> Result<RunOutput> {
    let manifest = RunManifest::read(manifest_path)?;
    manifest.verify_inputs()?;
    let cfg = manifest.config.to_config()?;
    let input = |name: &str| -> Result<PathBuf> {
        manifest
            .inputs
            .get(name)
            .map(|r| PathBuf::from(&r.path))
            .ok_or_else(|| Error::InvalidArgument(format!("manifest lacks input '{name}'")))
    };
    match manifest.run_kind.as_str() {
        "direct" => run_direct(
            &DirectPaths {
                probs_val: input("probs_val")?,
                probs_test: input("probs_test")?,
                gold_val: input("gold_val")?,
                gold_test: input("gold_test")?,
            },
            &cfg,
            out_dir,
        ),
        "hierarchical" => run_hierarchical(
            &HierarchicalPaths {
                gate_val: input("gate_val")?,
                gate_test: input("gate_test")?,
                value_val: input("value_val")?,
                value_test: input("value_test")?,
                gold_val: input("gold_val")?,
                gold_test: input("gold_test")?,
            },
            &cfg,
            out_dir,
        ),
        "ensemble" => run_ensemble(
            &EnsemblePaths {
                pool_manifest: input("pool_manifest")?,
                gold_val: input("gold_val")?,
                gold_test: input("gold_test")?,
            },
            &cfg,
            out_dir,
        ),
        other => Err(Error::InvalidArgument(format!("cannot rerun kind '{other}'"))),
    }
}

/// Convenience for tests and the CLI: writes a synthetic split to disk in
/// the standard file formats.
pub fn write_synthetic_split(
    dir: &Path,
    prefix: &str,
    gold: &GoldMatrix,
    models: &[ProbMatrix<Prob>],
    gate: Option<&ProbMatrix<Prob>>,
    seed: u64,
) -> Result<(PathBuf, Vec<PathBuf>, Option<PathBuf>)> {
    fs::create_dir_all(dir)?;
    let taxonomy = ValueTaxonomy::default();
    let comment = vec![tool_comment(seed)];
    let gold_path = dir.join(format!("{prefix}_gold.tsv"));
    crate::data::write_gold(&gold_path, gold, &taxonomy, &comment)?;
    let mut model_paths = Vec::new();
    for m in models {
        let p = dir.join(format!("{prefix}_{}.tsv", m.model_name));
        write_probs(&p, m, &taxonomy, &comment)?;
        model_paths.push(p);
    }
    let gate_path = match gate {
        Some(g) => {
            let p = dir.join(format!("{prefix}_{}.tsv", g.model_name));
            write_probs(&p, g, &taxonomy, &comment)?;
            Some(p)
        }
        None => None,
    };
    Ok((gold_path, model_paths, gate_path))
}
