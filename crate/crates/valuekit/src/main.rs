use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use valuekit::data::{
    self, align, load_gold, load_probs, write_predictions, write_probs, PresenceMode, ProbMatrix,
};
use valuekit::ensemble::VoteMode;
use valuekit::gating::{apply_gate, tune_gate, tune_gate_joint};
use valuekit::metrics::{macro_f1, presence_prf, presence_report_tsv, prevalence, ZeroDivision};
use valuekit::pipeline::{self, compare, tool_comment, RunConfig};
use valuekit::stats::{derive_seed, McNemarScope};
use valuekit::synth::{
    generate_gold, gold_with_exact_counts, simulate_gate, simulate_model, BetaShape,
    ConditionalPair, GateSkill, PrevalenceProfile, SkillProfile, SplitStats,
};
use valuekit::thresholds::{
    tune_global, tune_labelwise, Grid, Objective, ThresholdKind, ThresholdSet,
};
use valuekit::{Prob, ValueTaxonomy, NUM_VALUES};

/// Evaluation pipeline for sentence-level human-value detectors: prevalence
/// stats, threshold calibration, presence gating, voting ensembles with
/// statistical forward selection, and paired significance tests.
#[derive(Parser)]
#[command(name = "valuekit", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Master seed recorded in every output header.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Recompute inconsistent presence bits instead of failing.
    #[arg(long)]
    lenient: bool,
}

impl CommonOpts {
    fn presence_mode(&self) -> PresenceMode {
        if self.lenient {
            PresenceMode::Lenient
        } else {
            PresenceMode::Strict
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-value and presence prevalence of a gold table.
    Stats {
        /// Gold labels TSV (or a raw stance table with --stance).
        #[arg(long)]
        gold: PathBuf,
        /// Treat the input as a raw stance table with attained/constrained
        /// flag columns and collapse it first.
        #[arg(long)]
        stance: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Tune decision thresholds on a validation pair and save them.
    Calibrate {
        /// Probability table (19 value columns, or one presence column).
        #[arg(long)]
        probs: PathBuf,
        /// Gold labels for the same split.
        #[arg(long)]
        gold: PathBuf,
        /// fixed-global, tuned-global, or label-wise.
        #[arg(long, default_value = "tuned-global")]
        kind: String,
        /// Sweep objective: macro-f1 (values) or presence-f1 (gate models).
        #[arg(long, default_value = "macro-f1")]
        objective: String,
        /// Precision floor for label-wise tuning.
        #[arg(long, default_value_t = 0.40)]
        min_precision: f64,
        /// Sweep step; 1/step must be an integer.
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        /// Split name recorded with the thresholds.
        #[arg(long, default_value = "validation")]
        split_label: String,
        /// Output thresholds TSV.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Apply saved thresholds to probabilities and score against gold.
    Score {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Thresholds TSV from `calibrate` (or `gate`).
        #[arg(long)]
        thresholds: PathBuf,
        /// Write the score report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the binarized predictions.
        #[arg(long)]
        preds_out: Option<PathBuf>,
        /// Apply the saved gate cutoff to a gate probability table first.
        #[arg(long)]
        gate_probs: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Tune a presence-gate cutoff for end-to-end value macro-F1.
    Gate {
        /// Gate probability table (one presence column).
        #[arg(long)]
        gate_probs: PathBuf,
        /// Value probability table (19 columns).
        #[arg(long)]
        value_probs: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Frozen value thresholds from `calibrate`. With --joint only the
        /// kind is reused and the thresholds are re-tuned per gate point.
        #[arg(long)]
        thresholds: PathBuf,
        /// Re-tune value thresholds at every gate point (joint order).
        #[arg(long)]
        joint: bool,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        /// Precision floor when --joint re-tunes label-wise thresholds.
        #[arg(long, default_value_t = 0.40)]
        min_precision: f64,
        /// Write the gated (masked) probability table here.
        #[arg(long)]
        out_probs: Option<PathBuf>,
        /// Write thresholds (now including the gate cutoff) here.
        #[arg(long)]
        out_thresholds: Option<PathBuf>,
        /// Write the end-to-end score report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Forward-select a voting ensemble on validation, evaluate on test.
    Ensemble {
        /// Candidate pool manifest: name<TAB>val_path<TAB>test_path rows.
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        gold_val: PathBuf,
        #[arg(long)]
        gold_test: PathBuf,
        /// hard, soft, or weighted voting.
        #[arg(long, default_value = "soft")]
        mode: String,
        /// Bootstrap replicates per acceptance test.
        #[arg(long, default_value_t = 2000)]
        replicates: usize,
        /// Minimum relative improvement of the bootstrap lower bound.
        #[arg(long, default_value_t = 0.01)]
        min_relative: f64,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        /// Directory for the run manifest and reports.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Paired bootstrap plus per-value McNemar with BH correction.
    Compare {
        /// Binary predictions (or probabilities; see --threshold-a).
        #[arg(long)]
        preds_a: PathBuf,
        #[arg(long)]
        preds_b: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        name_a: Option<String>,
        #[arg(long)]
        name_b: Option<String>,
        /// Cutoff applied to preds-a cells (0/1 files pass through at 0.5).
        #[arg(long, default_value_t = 0.5)]
        threshold_a: f64,
        #[arg(long, default_value_t = 0.5)]
        threshold_b: f64,
        #[arg(long, default_value_t = 2000)]
        replicates: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Restrict McNemar counts to gold-positive instances.
        #[arg(long)]
        gold_positives_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Generate a synthetic gold split plus simulated model outputs.
    Synth {
        /// Number of sentences.
        #[arg(long)]
        n: usize,
        /// train, validation, test (corpus prevalence), uniform:<rate>, or
        /// exact:<split> for a fixture with the split's exact counts.
        #[arg(long, default_value = "train")]
        profile: String,
        /// How many simulated value models to emit.
        #[arg(long, default_value_t = 1)]
        models: usize,
        /// "deterministic" or four Beta shapes "posA,posB,negA,negB".
        #[arg(long, default_value = "4,2,2,4")]
        skill: String,
        /// Also emit a simulated presence-gate probability table.
        #[arg(long)]
        gate: bool,
        /// Gate skill: "deterministic" or "posA,posB,negA,negB".
        #[arg(long, default_value = "6,2,2,6")]
        gate_skill: String,
        #[arg(long)]
        out_dir: PathBuf,
        /// File name prefix for the emitted tables.
        #[arg(long, default_value = "synth")]
        prefix: String,
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn model_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string())
}

fn emit(text: &str, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_grid(step: f64) -> anyhow::Result<Grid> {
    Ok(Grid::from_step(step)?)
}

fn parse_skill(spec: &str) -> anyhow::Result<SkillProfile> {
    if spec == "deterministic" {
        return Ok(SkillProfile::Deterministic);
    }
    let pair = parse_pair(spec)?;
    Ok(SkillProfile::uniform(pair))
}

fn parse_pair(spec: &str) -> anyhow::Result<ConditionalPair> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad skill '{spec}', expected posA,posB,negA,negB"))?;
    if parts.len() != 4 {
        bail!("bad skill '{spec}', expected four comma-separated shapes");
    }
    Ok(ConditionalPair::new(
        BetaShape::new(parts[0], parts[1])?,
        BetaShape::new(parts[2], parts[3])?,
    ))
}

fn parse_profile(spec: &str, n: usize) -> anyhow::Result<ProfileSpec> {
    if let Some(rate) = spec.strip_prefix("uniform:") {
        let rate: f64 = rate.parse().with_context(|| format!("bad uniform rate '{rate}'"))?;
        return Ok(ProfileSpec::Random(PrevalenceProfile::uniform(rate)?));
    }
    if let Some(split) = spec.strip_prefix("exact:") {
        let stats = SplitStats::by_name(split)?;
        if n != stats.n {
            bail!(
                "exact:{split} fixes n = {}, but --n {n} was given",
                stats.n
            );
        }
        return Ok(ProfileSpec::Exact(*stats));
    }
    Ok(ProfileSpec::Random(SplitStats::by_name(spec)?.profile()))
}

enum ProfileSpec {
    Random(PrevalenceProfile),
    Exact(SplitStats),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let taxonomy = ValueTaxonomy::default();
    match cli.command {
        Command::Stats {
            gold,
            stance,
            out,
            common,
        } => {
            let matrix = if stance {
                let records = data::load_stance(&gold, &taxonomy)?;
                data::stance_to_gold(&records)?
            } else {
                let (matrix, warnings) = load_gold(&gold, &taxonomy, common.presence_mode())?;
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                matrix
            };
            let report = prevalence(&matrix);
            emit(&report.to_tsv(&taxonomy, &[tool_comment(common.seed)]), out.as_ref())?;
        }

        Command::Calibrate {
            probs,
            gold,
            kind,
            objective,
            min_precision,
            grid_step,
            split_label,
            out,
            common,
        } => {
            let kind = ThresholdKind::parse(&kind)?;
            let grid = parse_grid(grid_step)?;
            let (gold, warnings) = load_gold(&gold, &taxonomy, common.presence_mode())?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let set: ThresholdSet<Prob> = match kind {
                ThresholdKind::FixedGlobal => ThresholdSet::fixed_global(0.5)?,
                ThresholdKind::TunedGlobal => {
                    let objective = match objective.as_str() {
                        "macro-f1" => Objective::MacroF1,
                        "presence-f1" => Objective::PresenceF1,
                        other => bail!("unknown objective '{other}'"),
                    };
                    let k = match objective {
                        Objective::MacroF1 => NUM_VALUES,
                        Objective::PresenceF1 => 1,
                    };
                    let probs = load_probs::<Prob>(&probs, Some(k), &taxonomy, &model_name(&probs))?;
                    let pair = align(probs, gold)?;
                    let sweep = tune_global(&pair, objective, &grid, ZeroDivision::Zero)?;
                    eprintln!("tuned t* = {} ({objective:?} = {:.4})", sweep.t, sweep.score);
                    ThresholdSet::tuned_global(sweep.t, split_label.clone())?
                }
                ThresholdKind::LabelWise => {
                    let probs =
                        load_probs::<Prob>(&probs, Some(NUM_VALUES), &taxonomy, &model_name(&probs))?;
                    let pair = align(probs, gold)?;
                    let set = tune_labelwise(
                        &pair,
                        min_precision,
                        &grid,
                        &taxonomy,
                        &split_label,
                        ZeroDivision::Zero,
                    )?;
                    for name in &set.fallback {
                        eprintln!(
                            "warning: no threshold for '{name}' reaches precision {min_precision}; fell back to 0.5"
                        );
                    }
                    set
                }
            };
            set.write_tsv(&out, &taxonomy, &[tool_comment(common.seed)])?;
        }

        Command::Score {
            probs,
            gold,
            thresholds,
            out,
            preds_out,
            gate_probs,
            common,
        } => {
            let set = ThresholdSet::<Prob>::read_tsv(&thresholds, &taxonomy)?;
            let (gold, warnings) = load_gold(&gold, &taxonomy, common.presence_mode())?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let mut probs = load_probs::<Prob>(&probs, None, &taxonomy, &model_name(&probs))?;
            if let Some(gate_path) = gate_probs {
                let tau = set.gate_t.ok_or_else(|| {
                    anyhow::anyhow!("--gate-probs given but the thresholds file has no gate-t")
                })?;
                let gate =
                    align(load_probs::<Prob>(&gate_path, Some(1), &taxonomy, "gate")?, gold.clone())?
                        .into_parts()
                        .0;
                let aligned_values = align(probs, gold.clone())?.into_parts().0;
                probs = apply_gate(&gate, &aligned_values, tau)?;
            }
            let pair = align(probs, gold)?;
            let pred = set.binarize(pair.probs())?;
            let comments = vec![tool_comment(common.seed)];
            let text = if pair.probs().k() == 1 {
                let score = presence_prf::<Prob>(&pred, pair.gold(), ZeroDivision::Zero)?;
                presence_report_tsv(&score, &comments)
            } else {
                macro_f1::<Prob>(&pred, pair.gold(), ZeroDivision::Zero)?.to_tsv(&taxonomy, &comments)
            };
            emit(&text, out.as_ref())?;
            if let Some(pred_path) = preds_out {
                if pair.probs().k() == NUM_VALUES {
                    write_predictions(&pred_path, &pair.gold().keys, &pred, &taxonomy, &comments)?;
                } else {
                    let as_probs = ProbMatrix::<Prob>::new(
                        pair.gold().keys.clone(),
                        1,
                        pred.data().iter().map(|&b| b as f64).collect(),
                        "presence-predictions",
                    )?;
                    write_probs(&pred_path, &as_probs, &taxonomy, &comments)?;
                }
            }
        }

        Command::Gate {
            gate_probs,
            value_probs,
            gold,
            thresholds,
            joint,
            grid_step,
            min_precision,
            out_probs,
            out_thresholds,
            report,
            common,
        } => {
            let grid = parse_grid(grid_step)?;
            let set = ThresholdSet::<Prob>::read_tsv(&thresholds, &taxonomy)?;
            let (gold, warnings) = load_gold(&gold, &taxonomy, common.presence_mode())?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let gate = align(
                load_probs::<Prob>(&gate_probs, Some(1), &taxonomy, &model_name(&gate_probs))?,
                gold.clone(),
            )?
            .into_parts()
            .0;
            let values = align(
                load_probs::<Prob>(&value_probs, Some(NUM_VALUES), &taxonomy, &model_name(&value_probs))?,
                gold.clone(),
            )?
            .into_parts()
            .0;
            let (sweep, frozen) = if joint {
                let kind = set.kind();
                let split = set.tuned_on.clone().unwrap_or_else(|| "validation".into());
                let tax = taxonomy.clone();
                tune_gate_joint(&gate, &values, &gold, &grid, ZeroDivision::Zero, move |pair| {
                    match kind {
                        ThresholdKind::FixedGlobal => ThresholdSet::fixed_global(0.5),
                        ThresholdKind::TunedGlobal => {
                            let r = tune_global(pair, Objective::MacroF1, &grid, ZeroDivision::Zero)?;
                            ThresholdSet::tuned_global(r.t, split.clone())
                        }
                        ThresholdKind::LabelWise => tune_labelwise(
                            pair,
                            min_precision,
                            &grid,
                            &tax,
                            &split,
                            ZeroDivision::Zero,
                        ),
                    }
                })?
            } else {
                let sweep = tune_gate(&gate, &values, &gold, &set, &grid, ZeroDivision::Zero)?;
                (sweep, set)
            };
            println!("tau_gate = {}\tend_to_end_macro_f1 = {:.4}", sweep.t, sweep.score);
            let frozen = frozen.with_gate(sweep.t)?;
            let comments = vec![tool_comment(common.seed)];
            if let Some(path) = out_thresholds {
                frozen.write_tsv(&path, &taxonomy, &comments)?;
            }
            let masked = apply_gate(&gate, &values, sweep.t)?;
            if let Some(path) = out_probs {
                write_probs(&path, &masked, &taxonomy, &comments)?;
            }
            if let Some(path) = report {
                let pair = align(masked, gold)?;
                let pred = frozen.binarize(pair.probs())?;
                let rep = macro_f1::<Prob>(&pred, pair.gold(), ZeroDivision::Zero)?;
                emit(&rep.to_tsv(&taxonomy, &comments), Some(&path))?;
            }
        }

        Command::Ensemble {
            pool,
            gold_val,
            gold_test,
            mode,
            replicates,
            min_relative,
            grid_step,
            out_dir,
            common,
        } => {
            let cfg = RunConfig {
                vote_mode: VoteMode::parse(&mode)?,
                replicates,
                min_relative,
                grid: parse_grid(grid_step)?,
                master_seed: common.seed,
                presence_lenient: common.lenient,
                ..RunConfig::default()
            };
            let out = pipeline::run_ensemble(
                &pipeline::EnsemblePaths {
                    pool_manifest: pool,
                    gold_val,
                    gold_test,
                },
                &cfg,
                &out_dir,
            )?;
            let record = out.manifest.ensemble.as_ref().expect("ensemble run");
            println!(
                "members = [{}]\tmode = {}\tt* = {}\tval macro-F1 = {:.4}",
                record.members.join(", "),
                record.mode,
                record
                    .global_t
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "per-member".into()),
                record.val_macro_f1
            );
            println!("manifest: {}", out.manifest_path.display());
        }

        Command::Compare {
            preds_a,
            preds_b,
            gold,
            name_a,
            name_b,
            threshold_a,
            threshold_b,
            replicates,
            alpha,
            gold_positives_only,
            out,
            common,
        } => {
            let (gold, warnings) = load_gold(&gold, &taxonomy, common.presence_mode())?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let name_a = name_a.unwrap_or_else(|| model_name(&preds_a));
            let name_b = name_b.unwrap_or_else(|| model_name(&preds_b));
            let load_preds = |path: &PathBuf, t: f64, name: &str| -> anyhow::Result<_> {
                let probs = load_probs::<Prob>(path, Some(NUM_VALUES), &taxonomy, name)?;
                let pair = align(probs, gold.clone())?;
                Ok(ThresholdSet::fixed_global(t)?.binarize(pair.probs())?)
            };
            let pa = load_preds(&preds_a, threshold_a, &name_a)?;
            let pb = load_preds(&preds_b, threshold_b, &name_b)?;
            let cfg = RunConfig {
                replicates,
                alpha,
                master_seed: common.seed,
                mcnemar_scope: if gold_positives_only {
                    McNemarScope::GoldPositives
                } else {
                    McNemarScope::AllInstances
                },
                ..RunConfig::default()
            };
            let report = compare(&name_a, &pa, &name_b, &pb, &gold, &cfg)?;
            emit(&report.to_tsv(&taxonomy, &[tool_comment(common.seed)]), out.as_ref())?;
        }

        Command::Synth {
            n,
            profile,
            models,
            skill,
            gate,
            gate_skill,
            out_dir,
            prefix,
            common,
        } => {
            let gold = match parse_profile(&profile, n)? {
                ProfileSpec::Random(p) => generate_gold(n, &p, derive_seed(common.seed, "gold")),
                ProfileSpec::Exact(stats) => {
                    gold_with_exact_counts(stats.n, &stats.value_counts, stats.presence_count)?
                }
            };
            let skill = parse_skill(&skill)?;
            let mut model_tables = Vec::new();
            for m in 1..=models {
                let name = format!("model{m}");
                let table = simulate_model::<Prob>(
                    &gold,
                    &skill,
                    derive_seed(common.seed, &name),
                    name.clone(),
                )?;
                model_tables.push(table);
            }
            let gate_table = if gate {
                let gskill = if gate_skill == "deterministic" {
                    GateSkill::Deterministic
                } else {
                    GateSkill::Stochastic(parse_pair(&gate_skill)?)
                };
                Some(simulate_gate::<Prob>(
                    &gold,
                    &gskill,
                    derive_seed(common.seed, "gate"),
                    "gate",
                )?)
            } else {
                None
            };
            let (gold_path, model_paths, gate_path) = pipeline::write_synthetic_split(
                &out_dir,
                &prefix,
                &gold,
                &model_tables,
                gate_table.as_ref(),
                common.seed,
            )?;
            println!("gold: {}", gold_path.display());
            for p in model_paths {
                println!("model: {}", p.display());
            }
            if let Some(p) = gate_path {
                println!("gate: {}", p.display());
            }
        }
    }
    Ok(())
}
