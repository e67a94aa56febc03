//! Command-line orchestration: `prepare`, `select`, `evaluate`, `report`,
//! plus `demo` for generating a synthetic desk-run workspace.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use crate::artifact::{
    save_records, save_timing, ArtifactKind, EvaluationSection, RunArtifact, SelectionSection,
};
use crate::bandit::{brute_force_top_l, explora_run, no_exploration_fit, EvalContext};
use crate::config::{BackendConfig, BackendKind, RunConfig, SimulatorKind};
use crate::corpus::{
    load_exemplars, load_test, load_validation, Exemplar, TestExample, ValidationExample,
};
use crate::embed::{build_features, kmeans, EmbeddingStore, SimilarityFeatures};
use crate::error::{Error, Result};
use crate::evalrun::{
    evaluate, final_set_union, random_select, robustness_report, select_inference_subset,
    PromptPlan,
};
use crate::llm::{
    CallCounter, GenerationBackend, HttpBackend, HttpBackendConfig, PromptSpec, ResponseCache,
    SimulatedBackend, SimulatedBackendConfig,
};
use crate::pool::{sample_universe, CandidateUniverse, ExemplarSubset};
use crate::seeded;

#[derive(Parser)]
#[command(
    name = "explora",
    version,
    about = "Task-level exemplar subset selection for in-context learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build similarity features, clusters, and the candidate universe.
    Prepare(ConfigArgs),
    /// Run subset selection (or an ablation) and write a run artifact.
    Select(SelectArgs),
    /// Evaluate a selection artifact on the test set.
    Evaluate(EvaluateArgs),
    /// Print a side-by-side comparison of run artifacts.
    Report(ReportArgs),
    /// Write a synthetic dataset, embeddings, and config for a desk run.
    Demo(DemoArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config file.
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. --set bandit.max_rounds=4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Sample the validation split with this seed instead of taking the
    /// first m records.
    #[arg(long)]
    val_seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config, &self.overrides)?;
        if self.val_seed.is_some() {
            config.val_seed = self.val_seed;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Replace the bandit with an ablation: `exhaustive` measures every
    /// universe subset; `no-exploration` fits the scorer once on all of them.
    #[arg(long)]
    ablation: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Selection artifact to evaluate.
    #[arg(long)]
    artifact: PathBuf,
    /// One of: plain, sc, knn-sc, mmr-sc, knn, mmr, random.
    #[arg(long, default_value = "plain")]
    variant: String,
    /// Evaluate against a different backend (descriptor like
    /// `simulator:seed=12;mode=linear` or `http:url=...;model=...`).
    #[arg(long)]
    eval_backend: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Artifact files to compare.
    #[arg(required = true)]
    artifacts: Vec<PathBuf>,
}

#[derive(Args)]
struct DemoArgs {
    /// Directory to create the demo workspace in.
    #[arg(long, default_value = "demo")]
    dir: PathBuf,
}

/// Parse arguments, dispatch, and map errors onto exit codes.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Prepare(args) => args.load().and_then(|cfg| cmd_prepare(&cfg)),
        Command::Select(args) => {
            let ablation = match args.ablation.as_deref() {
                None => None,
                Some("exhaustive") => Some(Ablation::Exhaustive),
                Some("no-exploration") => Some(Ablation::NoExploration),
                Some(other) => {
                    eprintln!("error: unknown ablation {other:?} (expected exhaustive or no-exploration)");
                    return 1;
                }
            };
            args.config.load().and_then(|cfg| cmd_select(&cfg, ablation).map(|_| ()))
        }
        Command::Evaluate(args) => {
            let variant = match args.variant.parse::<Variant>() {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            };
            args.config.load().and_then(|cfg| {
                cmd_evaluate(&cfg, &args.artifact, variant, args.eval_backend.as_deref())
                    .map(|_| ())
            })
        }
        Command::Report(args) => cmd_report(&args.artifacts).map(|table| println!("{table}")),
        Command::Demo(args) => cmd_demo(&args.dir),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Exhaustive,
    NoExploration,
}

/// Evaluation variants: the selected-subset generators, their
/// self-consistency forms, and the dynamic/static baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Plain,
    Sc,
    KnnSc,
    MmrSc,
    Knn,
    Mmr,
    Random,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Variant::Plain),
            "sc" => Ok(Variant::Sc),
            "knn-sc" => Ok(Variant::KnnSc),
            "mmr-sc" => Ok(Variant::MmrSc),
            "knn" => Ok(Variant::Knn),
            "mmr" => Ok(Variant::Mmr),
            "random" => Ok(Variant::Random),
            other => Err(Error::Usage(format!(
                "unknown variant {other:?} (expected plain, sc, knn-sc, mmr-sc, knn, mmr, or random)"
            ))),
        }
    }
}

struct BaseData {
    exemplars: Vec<Exemplar>,
    validation: Vec<ValidationExample>,
    store: EmbeddingStore,
    spec: PromptSpec,
}

fn load_base(config: &RunConfig) -> Result<BaseData> {
    let exemplars = load_exemplars(&config.train)?;
    let validation = load_validation(&config.validation, config.validation_size, config.val_seed)?;
    let store = EmbeddingStore::load(&config.embeddings)?;
    store.validate_coverage(exemplars.len(), validation.len())?;
    let spec = config.load_prompt_spec()?;
    spec.validate()?;
    Ok(BaseData {
        exemplars,
        validation,
        store,
        spec,
    })
}

fn features_for(base: &BaseData) -> Result<SimilarityFeatures> {
    let train_ids: Vec<u32> = (0..base.exemplars.len() as u32).collect();
    let val_ids: Vec<u32> = (0..base.validation.len() as u32).collect();
    build_features(&train_ids, &val_ids, &base.store)
}

fn universe_path(config: &RunConfig) -> PathBuf {
    config.output_dir.join("universe.txt")
}

fn features_fingerprint_path(config: &RunConfig) -> PathBuf {
    config.output_dir.join("features.fp")
}

/// Build features, clusters, and the candidate universe, and persist them.
/// Rerunning on unchanged inputs rewrites byte-identical files.
pub fn cmd_prepare(config: &RunConfig) -> Result<()> {
    let base = load_base(config)?;
    let features = features_for(&base)?;
    let train_ids: Vec<u32> = (0..base.exemplars.len() as u32).collect();
    let clusters = kmeans(
        &train_ids,
        &base.store,
        config.universe.clusters,
        config.seeds.cluster,
        crate::embed::DEFAULT_KMEANS_MAX_ITERS,
    )?;
    let universe = sample_universe(&clusters, config.universe.size, config.seeds.universe)?;

    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;

    let fp_path = features_fingerprint_path(config);
    std::fs::write(
        &fp_path,
        format!(
            "n={} m={} fingerprint={}\n",
            base.exemplars.len(),
            base.validation.len(),
            features.fingerprint()
        ),
    )
    .map_err(|e| Error::io(&fp_path, e))?;

    let clusters_path = config.output_dir.join("clusters.txt");
    let mut text = format!(
        "# clusters k={} seed={} fingerprint={}\n",
        clusters.k(),
        config.seeds.cluster,
        clusters.fingerprint()
    );
    for &id in clusters.ids() {
        text.push_str(&format!("{id} {}\n", clusters.cluster_of(id)?));
    }
    std::fs::write(&clusters_path, text).map_err(|e| Error::io(&clusters_path, e))?;

    universe.save(universe_path(config))?;

    println!(
        "prepared: n={} m={} k={} universe={} features={}",
        base.exemplars.len(),
        base.validation.len(),
        clusters.k(),
        universe.len(),
        features.fingerprint()
    );
    Ok(())
}

fn check_features_fingerprint(config: &RunConfig, features: &SimilarityFeatures) -> Result<()> {
    let path = features_fingerprint_path(config);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let recorded = text
        .split_whitespace()
        .find_map(|field| field.strip_prefix("fingerprint="))
        .ok_or_else(|| Error::data(&path, 1, "missing fingerprint field"))?;
    if recorded != features.fingerprint() {
        return Err(Error::validation(format!(
            "feature fingerprint mismatch ({} recorded, {} computed); rerun prepare",
            recorded,
            features.fingerprint()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn make_backend(
    backend_config: &BackendConfig,
    config: &RunConfig,
    features: &SimilarityFeatures,
    universe: &CandidateUniverse,
    base: &BaseData,
    tests: Option<&[TestExample]>,
) -> Result<Box<dyn GenerationBackend>> {
    match backend_config.kind {
        BackendKind::Http => {
            let url = backend_config
                .url
                .clone()
                .ok_or_else(|| Error::validation("http backend needs url"))?;
            let model = backend_config
                .model
                .clone()
                .ok_or_else(|| Error::validation("http backend needs model"))?;
            let mut http = HttpBackendConfig::new(url, model);
            http.name = backend_config.name.clone();
            Ok(Box::new(HttpBackend::new(http)?))
        }
        BackendKind::Simulator => {
            let seed = backend_config.seed.unwrap_or(config.seeds.simulator);
            let mut sim = match backend_config.mode {
                SimulatorKind::Linear => SimulatedBackend::linear(
                    SimulatedBackendConfig {
                        seed,
                        threshold_quantile: backend_config.quantile,
                    },
                    features,
                    universe,
                    &base.validation,
                    &base.exemplars,
                    &base.spec,
                )?,
                SimulatorKind::Echo => {
                    SimulatedBackend::always_correct(&base.validation, &base.spec)
                }
                SimulatorKind::Never => {
                    SimulatedBackend::never_correct(&base.validation, &base.spec)
                }
            };
            if let Some(tests) = tests {
                sim.register_test_examples(tests, &base.spec);
            }
            Ok(Box::new(sim))
        }
    }
}

fn open_cache(config: &RunConfig) -> Result<ResponseCache> {
    if let Some(parent) = config.cache.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ResponseCache::open(&config.cache)
}

/// Run the selection loop (or an ablation) and write the run artifact.
/// Returns the artifact path.
pub fn cmd_select(config: &RunConfig, ablation: Option<Ablation>) -> Result<PathBuf> {
    let started = Instant::now();
    let base = load_base(config)?;
    let features = features_for(&base)?;
    check_features_fingerprint(config, &features)?;
    let universe = CandidateUniverse::load(universe_path(config))?;
    let cache = open_cache(config)?;
    let counter = CallCounter::new();
    let backend = make_backend(&config.backend, config, &features, &universe, &base, None)?;
    let ctx = EvalContext {
        exemplars: &base.exemplars,
        prompt_spec: &base.spec,
        backend: backend.as_ref(),
        cache: &cache,
        counter: &counter,
        decode: config.decode.to_decode_params(1),
        pattern: config.decode.compile_pattern()?,
        metric: config.metric,
        max_inflight: config.eval.max_inflight,
    };

    let (kind, section) = match ablation {
        None => {
            let bandit_config = config.bandit.to_bandit_config(config.seeds.bandit);
            let outcome = explora_run(&ctx, &universe, &features, &base.validation, &bandit_config)?;
            let best = select_inference_subset(&outcome.final_set)?.clone();
            (
                ArtifactKind::Selection,
                SelectionSection {
                    backend: backend.name().to_string(),
                    universe_provenance: universe.provenance().clone(),
                    features_fingerprint: features.fingerprint(),
                    rounds: outcome.state.rounds.clone(),
                    swap_log: outcome.state.swap_log.clone(),
                    approx_errors: outcome.state.approx_errors.clone(),
                    stop_reason: Some(outcome.state.stop_reason),
                    final_set: outcome.final_set,
                    best,
                    calls: counter.snapshot(),
                },
            )
        }
        Some(Ablation::Exhaustive) => {
            let outcome =
                brute_force_top_l(&ctx, &universe, &base.validation, config.bandit.low_loss_size)?;
            (
                ArtifactKind::Exhaustive,
                SelectionSection {
                    backend: backend.name().to_string(),
                    universe_provenance: universe.provenance().clone(),
                    features_fingerprint: features.fingerprint(),
                    rounds: Vec::new(),
                    swap_log: Vec::new(),
                    approx_errors: Vec::new(),
                    stop_reason: None,
                    final_set: outcome.top,
                    best: outcome.best,
                    calls: counter.snapshot(),
                },
            )
        }
        Some(Ablation::NoExploration) => {
            let outcome = no_exploration_fit(
                &ctx,
                &universe,
                &features,
                &base.validation,
                config.bandit.ridge,
                config.seeds.bandit,
            )?;
            (
                ArtifactKind::NoExploration,
                SelectionSection {
                    backend: backend.name().to_string(),
                    universe_provenance: universe.provenance().clone(),
                    features_fingerprint: features.fingerprint(),
                    rounds: Vec::new(),
                    swap_log: Vec::new(),
                    approx_errors: Vec::new(),
                    stop_reason: None,
                    final_set: vec![outcome.chosen.clone()],
                    best: outcome.chosen,
                    calls: counter.snapshot(),
                },
            )
        }
    };

    let file_name = match kind {
        ArtifactKind::Selection => "selection.json",
        ArtifactKind::Exhaustive => "selection-exhaustive.json",
        ArtifactKind::NoExploration => "selection-no-exploration.json",
        _ => unreachable!(),
    };
    let path = config.output_dir.join(file_name);
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;

    let snapshot = section.calls;
    let losses: Vec<String> = section
        .final_set
        .iter()
        .map(|r| format!("{}:{:.3}", r.universe_index, r.measured_loss))
        .collect();
    let artifact = RunArtifact {
        kind,
        config: config.clone(),
        selection: Some(section),
        evaluation: None,
    };
    artifact.save(&path)?;
    save_timing(&path, started.elapsed().as_secs_f64())?;

    println!(
        "{kind}: backend_calls={} cache_hits={} final=[{}]",
        snapshot.backend_calls,
        snapshot.cache_hits,
        losses.join(" ")
    );
    println!("artifact: {}", path.display());
    Ok(path)
}

fn load_query_store(config: &RunConfig, needed_for: &str) -> Result<EmbeddingStore> {
    let path = config.query_embeddings.as_ref().ok_or_else(|| {
        Error::validation(format!(
            "variant {needed_for} needs query_embeddings (test-query vectors)"
        ))
    })?;
    EmbeddingStore::load(path)
}

/// Evaluate a selection artifact with the chosen variant; a different
/// `--eval-backend` performs the cross-backend transfer protocol.
/// Returns the evaluation artifact path.
pub fn cmd_evaluate(
    config: &RunConfig,
    artifact_path: &Path,
    variant: Variant,
    eval_backend: Option<&str>,
) -> Result<PathBuf> {
    let started = Instant::now();
    let selection_artifact = RunArtifact::load(artifact_path)?;
    let selection = selection_artifact.selection.as_ref().ok_or_else(|| {
        Error::validation(format!(
            "{} carries no selection section",
            artifact_path.display()
        ))
    })?;

    let base = load_base(config)?;
    let features = features_for(&base)?;
    let universe = CandidateUniverse::load(universe_path(config))?;
    let tests = load_test(&config.test)?;
    if tests.is_empty() {
        return Err(Error::validation(format!(
            "test file {} has no records",
            config.test.display()
        )));
    }

    let backend_config = match eval_backend {
        Some(descriptor) => BackendConfig::parse_descriptor(descriptor)?,
        None => config.backend.clone(),
    };
    let backend = make_backend(
        &backend_config,
        config,
        &features,
        &universe,
        &base,
        Some(&tests),
    )?;

    let best_subset = ExemplarSubset::new(selection.best.member_ids.clone())?;
    let fixed_plan = if config.eval.use_all_subsets {
        let subsets: Vec<ExemplarSubset> = selection
            .final_set
            .iter()
            .map(|r| ExemplarSubset::new(r.member_ids.clone()))
            .collect::<Result<_>>()?;
        PromptPlan::Concat(subsets)
    } else {
        PromptPlan::Fixed(best_subset)
    };
    let fixed_tag = if config.eval.use_all_subsets {
        "explora-all"
    } else {
        "explora-best"
    };
    let all_train: Vec<u32> = (0..base.exemplars.len() as u32).collect();
    let hybrid_pool = final_set_union(&selection.final_set);

    let (plan, samples, tag, needs_queries) = match variant {
        Variant::Plain => (fixed_plan, 1, fixed_tag.to_string(), false),
        Variant::Sc => (
            fixed_plan,
            config.eval.sc_samples,
            format!("{fixed_tag}+sc"),
            false,
        ),
        Variant::KnnSc => (
            PromptPlan::Knn {
                candidates: hybrid_pool,
                count: config.eval.knn_count,
            },
            config.eval.sc_samples,
            "explora+knn+sc".to_string(),
            true,
        ),
        Variant::MmrSc => (
            PromptPlan::Mmr {
                candidates: hybrid_pool,
                count: config.eval.knn_count,
                lambda: config.eval.mmr_lambda,
            },
            config.eval.sc_samples,
            "explora+mmr+sc".to_string(),
            true,
        ),
        Variant::Knn => (
            PromptPlan::Knn {
                candidates: all_train,
                count: config.eval.knn_count,
            },
            1,
            "knn".to_string(),
            true,
        ),
        Variant::Mmr => (
            PromptPlan::Mmr {
                candidates: all_train,
                count: config.eval.knn_count,
                lambda: config.eval.mmr_lambda,
            },
            1,
            "mmr".to_string(),
            true,
        ),
        Variant::Random => (
            PromptPlan::Fixed(random_select(
                &all_train,
                config.eval.knn_count,
                config.seeds.baseline,
            )?),
            1,
            "random".to_string(),
            false,
        ),
    };

    let query_store = if needs_queries {
        Some(load_query_store(config, &tag)?)
    } else {
        None
    };

    let cache = open_cache(config)?;
    let counter = CallCounter::new();
    let ctx = EvalContext {
        exemplars: &base.exemplars,
        prompt_spec: &base.spec,
        backend: backend.as_ref(),
        cache: &cache,
        counter: &counter,
        decode: config.decode.to_decode_params(samples),
        pattern: config.decode.compile_pattern()?,
        metric: config.metric,
        max_inflight: config.eval.max_inflight,
    };
    let (mut report, records) = evaluate(&ctx, &tests, &plan, query_store.as_ref(), &tag)?;
    let (per_fold, std_dev) = robustness_report(&records, config.eval.folds, config.seeds.folds)?;
    report.per_fold = per_fold;
    report.std_dev = std_dev;

    let variant_slug = tag.replace('+', "-");
    let records_file = format!("records-{variant_slug}.jsonl");
    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;
    save_records(config.output_dir.join(&records_file), &records)?;

    let kind = if backend.name() == selection.backend {
        ArtifactKind::Evaluation
    } else {
        ArtifactKind::Transfer
    };
    let accuracy = report.accuracy;
    let artifact = RunArtifact {
        kind,
        config: config.clone(),
        selection: None,
        evaluation: Some(EvaluationSection {
            report,
            selection_backend: selection.backend.clone(),
            evaluation_backend: backend.name().to_string(),
            records_file,
        }),
    };
    let path = config.output_dir.join(format!("evaluation-{variant_slug}.json"));
    artifact.save(&path)?;
    save_timing(&path, started.elapsed().as_secs_f64())?;

    println!(
        "{kind}: variant={tag} accuracy={accuracy:.4} std={std_dev:.4} \
         backend_calls={} cache_hits={}",
        counter.snapshot().backend_calls,
        counter.snapshot().cache_hits,
    );
    println!("artifact: {}", path.display());
    Ok(path)
}

/// Render a comparison table across artifacts.
pub fn cmd_report(paths: &[PathBuf]) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::Usage("report needs at least one artifact".into()));
    }
    let mut rows = vec![vec![
        "artifact".to_string(),
        "kind".to_string(),
        "generator".to_string(),
        "accuracy".to_string(),
        "std".to_string(),
        "best_loss".to_string(),
        "backend_calls".to_string(),
        "cache_hits".to_string(),
        "wall_s".to_string(),
    ]];
    for path in paths {
        let artifact = RunArtifact::load(path)?;
        let wall = crate::artifact::load_timing(path)
            .map(|s| format!("{s:.3}"))
            .unwrap_or_else(|| "-".to_string());
        let row = if let Some(selection) = &artifact.selection {
            vec![
                path.display().to_string(),
                artifact.kind.to_string(),
                "-".to_string(),
                "-".to_string(),
                "-".to_string(),
                format!("{:.4}", selection.best.measured_loss),
                selection.calls.backend_calls.to_string(),
                selection.calls.cache_hits.to_string(),
                wall,
            ]
        } else if let Some(evaluation) = &artifact.evaluation {
            vec![
                path.display().to_string(),
                artifact.kind.to_string(),
                evaluation.report.generator.clone(),
                format!("{:.4}", evaluation.report.accuracy),
                format!("{:.4}", evaluation.report.std_dev),
                "-".to_string(),
                evaluation.report.calls.backend_calls.to_string(),
                evaluation.report.calls.cache_hits.to_string(),
                wall,
            ]
        } else {
            return Err(Error::data(path, 0, "artifact has no sections"));
        };
        rows.push(row);
    }

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap())
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}

/// Write a synthetic workspace: datasets, embeddings, query embeddings, and
/// a ready-to-run config pointing at the simulator backend.
pub fn cmd_demo(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = 60u32;
    let m_total = 25u32;
    let tests = 30u32;
    let dim = 16usize;

    let mut lines = String::new();
    for i in 0..n {
        lines.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "question": format!("demo train question {i}: what is {i} plus {i}?"),
                "rationale": format!("{i} plus {i} doubles it: {i} + {i} = {}", 2 * i),
                "answer": format!("{}", 2 * i),
            })
        ));
    }
    std::fs::write(dir.join("train.jsonl"), lines)
        .map_err(|e| Error::io(dir.join("train.jsonl"), e))?;

    let mut lines = String::new();
    for j in 0..m_total {
        lines.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "question": format!("demo validation question {j}: what is {j} plus 100?"),
                "answer": format!("{}", j + 100),
            })
        ));
    }
    std::fs::write(dir.join("validation.jsonl"), lines)
        .map_err(|e| Error::io(dir.join("validation.jsonl"), e))?;

    let mut lines = String::new();
    for t in 0..tests {
        lines.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "question": format!("demo test question {t}: what is {t} plus 200?"),
                "answer": format!("{}", t + 200),
            })
        ));
    }
    std::fs::write(dir.join("test.jsonl"), lines)
        .map_err(|e| Error::io(dir.join("test.jsonl"), e))?;

    let mut rng = seeded::rng(99);
    let mut unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-6);
        v.iter().map(|x| x / norm).collect()
    };
    let mut store = EmbeddingStore::new(dim)?;
    for i in 0..n {
        store.insert_train(i, unit(&mut rng))?;
    }
    let mut validation_used = 0u32;
    while validation_used < m_total {
        store.insert_validation(validation_used, unit(&mut rng))?;
        validation_used += 1;
    }
    store.save(dir.join("embeddings.bin"))?;

    // Test-query vectors travel in a second store's validation namespace,
    // keyed by test id.
    let mut rng = seeded::rng(98);
    let mut queries = EmbeddingStore::new(dim)?;
    for t in 0..tests {
        queries.insert_validation(t, unit(&mut rng))?;
    }
    queries.save(dir.join("queries.bin"))?;

    let mut config = RunConfig::default();
    config.train = PathBuf::from("train.jsonl");
    config.validation = PathBuf::from("validation.jsonl");
    config.test = PathBuf::from("test.jsonl");
    config.embeddings = PathBuf::from("embeddings.bin");
    config.query_embeddings = Some(PathBuf::from("queries.bin"));
    config.output_dir = PathBuf::from("out");
    config.cache = PathBuf::from("out/cache.jsonl");
    let text = toml::to_string_pretty(&config)
        .map_err(|e| Error::validation(format!("config serialization: {e}")))?;
    std::fs::write(dir.join("config.toml"), text)
        .map_err(|e| Error::io(dir.join("config.toml"), e))?;

    println!("demo workspace written to {}", dir.display());
    println!("next:");
    println!("  explora prepare  --config {}/config.toml", dir.display());
    println!("  explora select   --config {}/config.toml", dir.display());
    println!(
        "  explora evaluate --config {}/config.toml --artifact {}/out/selection.json --variant plain",
        dir.display(),
        dir.display()
    );
    println!(
        "  explora report   {}/out/selection.json {}/out/evaluation-explora-best.json",
        dir.display(),
        dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        assert_eq!("plain".parse::<Variant>().unwrap(), Variant::Plain);
        assert_eq!("knn-sc".parse::<Variant>().unwrap(), Variant::KnnSc);
        let err = "holographic".parse::<Variant>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
