use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use neurongauge_core::aggregation::{
    group_ratings, read_ratings_jsonl, AggregationMethod, Aggregator, NoiseModel, PriorSpec,
};
use neurongauge_core::benchmark::{self, BenchmarkConfig};
use neurongauge_core::dataset::{
    ensure_same_index, load_activations, load_concepts, write_matrix, ActivationVector, ConceptVector, MatrixFormat,
    Provenance, Signals, Workspace,
};
use neurongauge_core::estimator::{build_plan, draw_sample, PlanRecord, Sample, Strategy};
use neurongauge_core::pipeline::{aggregate_labels, estimate_from_labels};
use neurongauge_core::scoring::{concept_map, read_explanations_jsonl, score_all, write_scores_csv};
use neurongauge_core::simulator::{
    assign_all, optimal_rater_count, sweep_cost_error, sweep_prior_beta, write_sweep_csv, CellLayout, SweepGrid,
    SweepRow, TrialConfig,
};
use neurongauge_core::{aggregation, Error, Result};
use serde::{Deserialize, Serialize};

use crate::labels::{read_labels, write_labels};
use crate::manifest::{self, RunManifest};
use crate::{
    AggregateArgs, BenchArgs, CalibrateArgs, Cli, Command, EstimateArgs, GenerateArgs, PlanArgs, PriorArg, ScoreArgs,
    ServeArgs, SimulateArgs, SweepArgs,
};

/// What a command read and wrote, for the manifest.
#[derive(Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    /// Path the default manifest name derives from, when not the first output.
    anchor: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let started = Utc::now();
    let timer = Instant::now();
    let (name, config, outcome) = match &cli.command {
        Command::Generate(a) => ("generate", to_value(a)?, generate(a)?),
        Command::Plan(a) => ("plan", to_value(a)?, plan(a)?),
        Command::Estimate(a) => ("estimate", to_value(a)?, estimate(a)?),
        Command::Simulate(a) => ("simulate", to_value(a)?, simulate(a)?),
        Command::Sweep(a) => ("sweep", to_value(a)?, sweep(a)?),
        Command::Score(a) => ("score", to_value(a)?, score(a)?),
        Command::Aggregate(a) => ("aggregate", to_value(a)?, aggregate(a)?),
        Command::Calibrate(a) => ("calibrate", to_value(a)?, calibrate(a)?),
        Command::Serve(a) => return serve(a),
    };
    let path = match (&cli.manifest, outcome.anchor.as_ref().or(outcome.outputs.first())) {
        (Some(p), _) => p.clone(),
        (None, Some(out)) => manifest::default_path(out),
        (None, None) => return Ok(()),
    };
    let m = RunManifest::build(
        name,
        config,
        outcome.seed,
        &outcome.inputs,
        &outcome.outputs,
        started,
        timer.elapsed().as_millis(),
    )?;
    m.write(&path)
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Parse(e.to_string()))
}

fn print_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    std::io::stdout()
        .write_all(s.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Refuses to overwrite any input.
fn guard_outputs(inputs: &[PathBuf], outputs: &[&Path]) -> Result<()> {
    for out in outputs {
        let Ok(out) = out.canonicalize() else { continue };
        if inputs.iter().any(|i| i.canonicalize().is_ok_and(|i| i == out)) {
            return Err(Error::Config(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn load_workspace(activations: &Path, concepts: Option<&Path>, guide: Option<&Path>) -> Result<Workspace> {
    let (index, acts) = load_activations(activations)?;
    let mut all = Vec::new();
    for (path, prov) in [(concepts, Provenance::GroundTruth), (guide, Provenance::CheapEstimator)] {
        if let Some(path) = path {
            let (other, cs) = load_concepts(path, prov)?;
            ensure_same_index(&index, &other, &path.display().to_string())?;
            all.extend(cs);
        }
    }
    Workspace::new(index, acts, all)
}

fn optional_inputs(paths: &[Option<&PathBuf>]) -> Vec<PathBuf> {
    paths.iter().flatten().map(|p| (*p).clone()).collect()
}

fn pick_neuron<'w>(ws: &'w Workspace, neuron: Option<&str>) -> Result<&'w ActivationVector> {
    match neuron {
        Some(id) => ws.activation(id),
        None if ws.activations.len() == 1 => Ok(&ws.activations[0]),
        None => Err(Error::InvalidArgument(format!(
            "the activation file has {} neurons; pass --neuron",
            ws.activations.len()
        ))),
    }
}

/// The vector a strategy builds its proposal from: cheap scores for guided,
/// ground truth for oracle.
fn proposal_guide<'w>(ws: &'w Workspace, strategy: Strategy, concept: Option<&str>) -> Result<Option<&'w ConceptVector>> {
    let prov = match strategy {
        Strategy::Guided => Provenance::CheapEstimator,
        Strategy::Oracle => Provenance::GroundTruth,
        _ => return Ok(None),
    };
    let candidates: Vec<&ConceptVector> = ws.concepts_with(prov).collect();
    let found = match concept {
        Some(id) if !candidates.is_empty() => Some(
            candidates
                .into_iter()
                .find(|c| c.concept_id == id)
                .ok_or_else(|| Error::UnknownConcept(id.to_string()))?,
        ),
        Some(_) => None,
        None if candidates.len() == 1 => Some(candidates[0]),
        None if candidates.is_empty() => None,
        None => {
            return Err(Error::InvalidArgument(format!(
                "{} concepts available for the {strategy} proposal; pass --concept",
                candidates.len()
            )))
        }
    };
    found.map(Some).ok_or_else(|| Error::MissingGuide(strategy.to_string()))
}

fn effective_sample_size(s: &Sample) -> f64 {
    let sum: f64 = s.weights.iter().sum();
    let sq: f64 = s.weights.iter().map(|w| w * w).sum();
    sum * sum / sq
}

fn generate(a: &GenerateArgs) -> Result<Outcome> {
    let cfg = bench_config(&a.bench);
    let ws = benchmark::generate(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let split = |prov| ws.concepts_with(prov).cloned().collect::<Vec<_>>();
    let files = [
        ("activations.csv", Signals::Activations(ws.activations.clone())),
        ("concepts.csv", Signals::Concepts(split(Provenance::GroundTruth))),
        ("guide.csv", Signals::Concepts(split(Provenance::CheapEstimator))),
    ];
    let mut outputs = Vec::new();
    for (name, signals) in &files {
        let path = a.out.join(name);
        write_matrix(&path, MatrixFormat::Csv, &ws.index, signals)?;
        outputs.push(path);
    }
    Ok(Outcome { inputs: vec![], outputs, seed: Some(cfg.seed), anchor: Some(a.out.clone()) })
}

fn bench_config(b: &BenchArgs) -> BenchmarkConfig {
    BenchmarkConfig {
        size: b.size,
        neurons: b.neurons,
        prevalence: b.prevalence,
        seed: b.seed,
        ..Default::default()
    }
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    plan: String,
    neuron_id: &'a str,
    concept_id: Option<&'a str>,
    strategy: Strategy,
    seed: u64,
    n_inputs: usize,
    unique_inputs: usize,
    effective_sample_size: f64,
    /// Inputs to label, in index order.
    input_ids: Vec<&'a str>,
}

fn plan(a: &PlanArgs) -> Result<Outcome> {
    let inputs = [vec![a.activations.clone()], optional_inputs(&[a.guide.as_ref(), a.concepts.as_ref()])].concat();
    guard_outputs(&inputs, &[&a.out])?;
    let ws = load_workspace(&a.activations, a.concepts.as_deref(), a.guide.as_deref())?;
    let act = pick_neuron(&ws, a.neuron.as_deref())?;
    let s = &a.sample;
    let guide = proposal_guide(&ws, s.strategy, a.concept.as_deref())?;
    let plan = build_plan(act, guide, s.strategy, s.epsilon)?;
    let sample = draw_sample(&plan, s.n_inputs, s.seed)?;
    let mut record = PlanRecord::new(&plan, &sample);
    record.neuron_id = Some(act.neuron_id.clone());
    record.concept_id = guide.map(|g| g.concept_id.clone()).or_else(|| a.concept.clone());
    let text = serde_json::to_string(&record).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(&a.out, format!("{text}\n").as_bytes())?;
    let unique = sample.unique_indices();
    print_json(&PlanSummary {
        plan: a.out.display().to_string(),
        neuron_id: &act.neuron_id,
        concept_id: record.concept_id.as_deref(),
        strategy: s.strategy,
        seed: s.seed,
        n_inputs: sample.len(),
        unique_inputs: unique.len(),
        effective_sample_size: effective_sample_size(&sample),
        input_ids: unique.iter().map(|&i| ws.index.id(i)).collect(),
    })?;
    Ok(Outcome { inputs, outputs: vec![a.out.clone()], seed: Some(s.seed), anchor: None })
}

#[derive(Serialize)]
struct EstimateOutput {
    neuron_id: String,
    concept_id: String,
    strategy: Strategy,
    seed: u64,
    rho: f64,
    rho_raw: f64,
    sample_size: usize,
    effective_sample_size: f64,
    concept_mean: f64,
    concept_std: f64,
    n_labeled: usize,
    partial: bool,
}

fn estimate(a: &EstimateArgs) -> Result<Outcome> {
    let inputs = [
        vec![a.activations.clone(), a.labels.clone()],
        optional_inputs(&[a.plan.as_ref(), a.guide.as_ref(), a.concepts.as_ref()]),
    ]
    .concat();
    if let Some(out) = &a.out {
        guard_outputs(&inputs, &[out])?;
    }
    let ws = load_workspace(&a.activations, a.concepts.as_deref(), a.guide.as_deref())?;
    let (act, plan, sample) = match &a.plan {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let record: PlanRecord =
                serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let act = pick_neuron(&ws, a.neuron.as_deref().or(record.neuron_id.as_deref()))?;
            let (plan, sample) = record.restore()?;
            (act, plan, sample)
        }
        None => {
            let act = pick_neuron(&ws, a.neuron.as_deref())?;
            let s = &a.sample;
            let guide = proposal_guide(&ws, s.strategy, a.concept.as_deref())?;
            let plan = build_plan(act, guide, s.strategy, s.epsilon)?;
            let sample = draw_sample(&plan, s.n_inputs, s.seed)?;
            (act, plan, sample)
        }
    };
    if plan.len() != act.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan covers {} inputs, activations have {}",
            plan.len(),
            act.len()
        )));
    }
    let (concept_id, labels) = read_labels(&a.labels, &ws.index, a.concept.as_deref())?;
    let est = estimate_from_labels(act, &sample, &labels)?;
    let out = EstimateOutput {
        neuron_id: act.neuron_id.clone(),
        concept_id,
        strategy: plan.strategy,
        seed: sample.seed,
        rho: est.estimate.rho,
        rho_raw: est.estimate.rho_raw,
        sample_size: est.estimate.sample_size,
        effective_sample_size: est.estimate.effective_sample_size,
        concept_mean: est.estimate.concept_mean,
        concept_std: est.estimate.concept_std,
        n_labeled: est.n_labeled,
        partial: est.partial,
    };
    let text = print_json(&out)?;
    let mut outputs = Vec::new();
    if let Some(path) = &a.out {
        write_file(path, text.as_bytes())?;
        outputs.push(path.clone());
    }
    Ok(Outcome { inputs, outputs, seed: Some(sample.seed), anchor: None })
}

/// Sweep description read by `simulate`.
#[derive(Debug, Deserialize)]
struct SimulateConfig {
    #[serde(flatten)]
    grid: SweepGrid,
    /// Generated when no workspace files are passed.
    #[serde(default)]
    benchmark: Option<BenchmarkConfig>,
}

fn simulation_workspace(
    activations: Option<&Path>,
    concepts: Option<&Path>,
    guide: Option<&Path>,
    bench: BenchmarkConfig,
) -> Result<Workspace> {
    match activations {
        Some(path) => {
            if concepts.is_none() {
                return Err(Error::Config("simulation needs --concepts with ground-truth labels".into()));
            }
            load_workspace(path, concepts, guide)
        }
        None => benchmark::generate(&bench),
    }
}

fn simulate(a: &SimulateArgs) -> Result<Outcome> {
    let inputs = [
        vec![a.config.clone()],
        optional_inputs(&[a.activations.as_ref(), a.concepts.as_ref(), a.guide.as_ref()]),
    ]
    .concat();
    guard_outputs(&inputs, &[&a.out])?;
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let mut cfg: SimulateConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    if let Some(t) = a.trials {
        cfg.grid.base.n_trials = t;
    }
    if let Some(s) = a.seed {
        cfg.grid.base.seed = s;
    }
    let ws = simulation_workspace(
        a.activations.as_deref(),
        a.concepts.as_deref(),
        a.guide.as_deref(),
        cfg.benchmark.unwrap_or_default(),
    )?;
    let assignments = assign_all(&ws)?;
    let rows = sweep_cost_error(&ws, &assignments, &cfg.grid)?;
    write_rows(&a.out, &rows)?;
    Ok(Outcome { inputs, outputs: vec![a.out.clone()], seed: Some(cfg.grid.base.seed), anchor: None })
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, rows)?;
    write_file(path, &buf)
}

pub(crate) fn resolve_method(name: &str, prior: PriorArg) -> Result<AggregationMethod> {
    match (name, prior) {
        ("bayes", PriorArg::Uniform) => Ok(AggregationMethod::BayesUniform),
        ("bayes", PriorArg::Estimator) => Ok(AggregationMethod::BayesEstimator),
        (other, _) => other.parse(),
    }
}

fn prior_spec(prior: PriorArg, beta: f64) -> PriorSpec {
    match prior {
        PriorArg::Uniform => PriorSpec::uniform(beta),
        PriorArg::Estimator => PriorSpec { beta, ..PriorSpec::estimator() },
    }
}

#[derive(Serialize)]
struct BudgetChoice {
    budget_usd: f64,
    #[serde(flatten)]
    row: SweepRow,
}

fn sweep(a: &SweepArgs) -> Result<Outcome> {
    let inputs = optional_inputs(&[a.activations.as_ref(), a.concepts.as_ref(), a.guide.as_ref()]);
    guard_outputs(&inputs, &[&a.out])?;
    let aggregations = a
        .aggregation
        .iter()
        .map(|m| resolve_method(m, a.prior))
        .collect::<Result<Vec<_>>>()?;
    let (Some(&strategy), Some(&aggregation), Some(&raters)) =
        (a.strategy.first(), aggregations.first(), a.raters.first())
    else {
        return Err(Error::Config("--strategy, --aggregation and --raters need at least one value".into()));
    };
    let base = TrialConfig {
        strategy,
        aggregation,
        n_inputs: a.n_inputs.first().copied().unwrap_or(90),
        raters,
        eta: a.eta,
        prior: prior_spec(a.prior, a.beta),
        epsilon: a.epsilon,
        n_trials: a.trials,
        seed: a.seed,
        cost_per_rating: a.cost_per_rating,
    };
    let ws = simulation_workspace(
        a.activations.as_deref(),
        a.concepts.as_deref(),
        a.guide.as_deref(),
        bench_config(&a.bench),
    )?;
    let assignments = assign_all(&ws)?;

    if let Some(betas) = &a.betas {
        let rows = sweep_prior_beta(&ws, &assignments, &base, betas)?;
        let mut out = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Parse(e.to_string());
        out.write_record(["beta", "rce", "stderr"]).map_err(err)?;
        for r in &rows {
            out.write_record([r.beta.to_string(), r.rce.to_string(), r.stderr.to_string()])
                .map_err(err)?;
        }
        let buf = out.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        write_file(&a.out, &buf)?;
        return Ok(Outcome { inputs, outputs: vec![a.out.clone()], seed: Some(a.seed), anchor: None });
    }

    let cells = match &a.ratings {
        Some(r) => CellLayout::Budgets { raters: a.raters.clone(), ratings: r.clone() },
        None => CellLayout::Grid { raters: a.raters.clone(), n_inputs: a.n_inputs.clone() },
    };
    let grid = SweepGrid { strategies: a.strategy.clone(), aggregations, cells, base };
    let rows = sweep_cost_error(&ws, &assignments, &grid)?;
    write_rows(&a.out, &rows)?;
    if let Some(budget) = a.budget {
        let mut choices = Vec::new();
        for &s in &grid.strategies {
            for &m in &grid.aggregations {
                let group: Vec<SweepRow> =
                    rows.iter().filter(|r| r.strategy == s && r.aggregation == m).copied().collect();
                choices.push(BudgetChoice { budget_usd: budget, row: optimal_rater_count(&group, budget)? });
            }
        }
        print_json(&choices)?;
    }
    Ok(Outcome { inputs, outputs: vec![a.out.clone()], seed: Some(a.seed), anchor: None })
}

fn read_split(path: &Path, ws: &Workspace) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|id| {
            ws.index
                .position(id)
                .ok_or_else(|| Error::InvalidArgument(format!("{}: unknown input `{id}`", path.display())))
        })
        .collect()
}

fn score(a: &ScoreArgs) -> Result<Outcome> {
    let inputs = [
        vec![a.explanations.clone(), a.concepts.clone(), a.activations.clone()],
        optional_inputs(&[a.split.as_ref()]),
    ]
    .concat();
    if let Some(out) = &a.out {
        guard_outputs(&inputs, &[out])?;
    }
    let ws = load_workspace(&a.activations, Some(&a.concepts), None)?;
    let records = read_explanations_jsonl(&a.explanations)?;
    let split = a.split.as_deref().map(|p| read_split(p, &ws)).transpose()?;
    let concepts = concept_map(&ws.concepts);
    let rows = score_all(&records, &ws.activations, &concepts, split.as_deref())?;
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, &rows)?;
    emit_table(a.out.as_deref(), &buf, inputs, None)
}

/// Writes a table to `out`, or to standard output when there is none.
fn emit_table(out: Option<&Path>, buf: &[u8], inputs: Vec<PathBuf>, seed: Option<u64>) -> Result<Outcome> {
    match out {
        Some(path) => {
            write_file(path, buf)?;
            Ok(Outcome { inputs, outputs: vec![path.to_path_buf()], seed, anchor: None })
        }
        None => {
            std::io::stdout().write_all(buf).map_err(|e| Error::io("<stdout>", e))?;
            Ok(Outcome { inputs, outputs: vec![], seed, anchor: None })
        }
    }
}

fn aggregate(a: &AggregateArgs) -> Result<Outcome> {
    let inputs = [
        vec![a.ratings.clone()],
        optional_inputs(&[a.activations.as_ref(), a.guide.as_ref()]),
    ]
    .concat();
    if let Some(out) = &a.out {
        guard_outputs(&inputs, &[out])?;
    }
    let (index, guide) = match (&a.guide, &a.activations) {
        (Some(g), _) => {
            let (index, cs) = load_concepts(g, Provenance::CheapEstimator)?;
            if let Some(acts) = &a.activations {
                let (other, _) = load_activations(acts)?;
                ensure_same_index(&other, &index, &g.display().to_string())?;
            }
            (index, cs)
        }
        (None, Some(acts)) => (load_activations(acts)?.0, Vec::new()),
        (None, None) => return Err(Error::InvalidArgument("pass --guide or --activations for the input index".into())),
    };
    let records = read_ratings_jsonl(&a.ratings)?;
    let sets = group_ratings(&records, &index)?;
    let mut concepts: Vec<&str> = sets.iter().map(|s| s.concept_id.as_str()).collect();
    concepts.sort_unstable();
    concepts.dedup();
    let concept = match (&a.concept, concepts.as_slice()) {
        (Some(c), _) => c.clone(),
        (None, [only]) => only.to_string(),
        (None, []) => return Err(Error::EmptyRatings),
        (None, many) => {
            return Err(Error::InvalidArgument(format!(
                "the log rates {} concepts; pass --concept",
                many.len()
            )))
        }
    };
    let sets: Vec<_> = sets.into_iter().filter(|s| s.concept_id == concept).collect();
    let method = resolve_method(&a.method, a.prior)?;
    let scores = guide.iter().find(|c| c.concept_id == concept).map(|c| c.values.as_slice());
    if method == AggregationMethod::BayesEstimator && scores.is_none() {
        return Err(Error::InvalidArgument(format!(
            "the estimator prior needs --guide with a `{concept}` column"
        )));
    }
    let agg = Aggregator::for_method(method, NoiseModel::new(a.eta)?, prior_spec(a.prior, a.beta), scores)?;
    let labels: HashMap<usize, f64> = aggregate_labels(&sets, &agg)?;
    let mut buf = Vec::new();
    write_labels(&mut buf, &index, &concept, &labels)?;
    emit_table(a.out.as_deref(), &buf, inputs, None)
}

#[derive(Serialize)]
struct CalibrationOutput {
    eta: f64,
    disagreements: usize,
    total: usize,
    clamped: bool,
    rating_sets: usize,
}

fn calibrate(a: &CalibrateArgs) -> Result<Outcome> {
    let inputs = vec![a.ratings.clone(), a.concepts.clone()];
    if let Some(out) = &a.out {
        guard_outputs(&inputs, &[out])?;
    }
    let (index, truth) = load_concepts(&a.concepts, Provenance::GroundTruth)?;
    let records = read_ratings_jsonl(&a.ratings)?;
    let sets = group_ratings(&records, &index)?;
    let known: Vec<_> = sets
        .iter()
        .filter_map(|s| {
            let c = truth.iter().find(|c| c.concept_id == s.concept_id)?;
            Some((s, c.values[s.input_index] >= 0.5))
        })
        .collect();
    let n = known.len();
    let cal = aggregation::calibrate_error_rate(known)?;
    let out = CalibrationOutput {
        eta: cal.noise.eta,
        disagreements: cal.disagreements,
        total: cal.total,
        clamped: cal.clamped,
        rating_sets: n,
    };
    let text = print_json(&out)?;
    let mut outputs = Vec::new();
    if let Some(path) = &a.out {
        write_file(path, text.as_bytes())?;
        outputs.push(path.clone());
    }
    Ok(Outcome { inputs, outputs, seed: None, anchor: None })
}

fn serve(a: &ServeArgs) -> Result<()> {
    use neurongauge_service::{store::Store, AppState, SystemClock};
    let ws = Arc::new(load_workspace(&a.activations, a.concepts.as_deref(), a.guide.as_deref())?);
    let store = Store::open(&a.store)?;
    if a.lease_minutes <= 0 {
        return Err(Error::Config("--lease-minutes must be positive".into()));
    }
    let state = AppState::open(ws, store, Arc::new(SystemClock))?.with_lease(chrono::Duration::minutes(a.lease_minutes));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::io("<runtime>", e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .map_err(|e| Error::io(&a.addr, e))?;
        tracing::info!(addr = %a.addr, "listening");
        eprintln!("listening on {}", a.addr);
        neurongauge_service::serve(listener, state)
            .await
            .map_err(|e| Error::io(&a.addr, e))
    })
}
