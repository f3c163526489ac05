//! Seeded simulation of labeling studies.
//!
//! A trial draws inputs from a plan, simulates `m` noisy raters per drawn
//! input against the ground-truth labels, aggregates the ratings, estimates
//! the correlation, and scores it against the full-data correlation. Every
//! random stream is derived from `(seed, neuron, trial, stage)`, so configs
//! that differ only in how ratings are aggregated see identical draws and
//! identical ratings.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{AggregationMethod, Aggregator, NoiseModel, PriorSpec, RatingSet};
use crate::dataset::{ActivationVector, ConceptVector, Convention, NormalizationStats, Provenance, Workspace};
use crate::error::{Error, Result};
use crate::estimator::{
    build_plan, estimate_aligned, exact_correlation, ProposalSampler, Sample, SamplingPlan, Strategy,
    DEFAULT_EPSILON,
};
use crate::seed::SeedTree;

/// Cost of one rating of one input: a task of 15 inputs costs $0.06.
pub const DEFAULT_COST_PER_RATING: f64 = 0.06 / 15.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAssignment {
    pub neuron_id: String,
    pub concept_id: String,
    pub rho_gt: f64,
}

/// Picks the candidate concept whose labels correlate best with `a`.
/// Exact ties go to the lexicographically smaller concept id; constant
/// candidates are skipped.
pub fn select_ground_truth_explanation(
    a: &ActivationVector,
    concepts: &[ConceptVector],
) -> Result<GroundTruthAssignment> {
    let mut best: Option<(f64, &str)> = None;
    for c in concepts {
        if c.provenance != Provenance::GroundTruth {
            return Err(Error::ProvenanceViolation(format!(
                "candidate `{}` is not a ground-truth concept",
                c.concept_id
            )));
        }
        let rho = match exact_correlation(a, c) {
            Ok(r) => r,
            Err(Error::DegenerateSignal(name)) if name == c.concept_id => continue,
            Err(e) => return Err(e),
        };
        let better = match best {
            None => true,
            Some((r, id)) => rho > r || (rho == r && c.concept_id.as_str() < id),
        };
        if better {
            best = Some((rho, &c.concept_id));
        }
    }
    let (rho_gt, concept_id) = best.ok_or(Error::AllDegenerate)?;
    if rho_gt == 0.0 {
        return Err(Error::ZeroGroundTruth(0));
    }
    Ok(GroundTruthAssignment {
        neuron_id: a.neuron_id.clone(),
        concept_id: concept_id.to_string(),
        rho_gt,
    })
}

/// Assigns every activation in the workspace its best ground-truth concept.
pub fn assign_all(ws: &Workspace) -> Result<Vec<GroundTruthAssignment>> {
    let candidates: Vec<ConceptVector> = ws.concepts_with(Provenance::GroundTruth).cloned().collect();
    ws.activations
        .iter()
        .map(|a| select_ground_truth_explanation(a, &candidates))
        .collect()
}

/// Flips each ground-truth bit independently with probability `eta`.
pub fn inject_noise(c: &ConceptVector, eta: f64, seed: u64) -> Result<ConceptVector> {
    if c.provenance != Provenance::GroundTruth {
        return Err(Error::ProvenanceViolation(format!(
            "noise can only be injected into ground-truth labels, `{}` is {}",
            c.concept_id,
            c.provenance.as_str()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("flip rate must lie in [0, 1], got {eta}")));
    }
    let mut rng = SeedTree::new(seed).rng();
    let values = c
        .values
        .iter()
        .map(|&v| if rng.random::<f64>() < eta { 1.0 - v } else { v })
        .collect();
    Ok(ConceptVector {
        concept_id: c.concept_id.clone(),
        values,
        provenance: Provenance::GroundTruth,
    })
}

/// `m` independent ratings per listed input, each correct with probability
/// `1 - eta`. An input's ratings depend only on `(seed, input)`, so repeated
/// or reordered indices get the same ratings, and the first `m` ratings for a
/// given seed are shared by every larger `m`.
pub fn simulate_ratings(
    c: &ConceptVector,
    indices: &[usize],
    m: usize,
    eta: f64,
    seed: u64,
) -> Result<Vec<RatingSet>> {
    if m == 0 {
        return Err(Error::InvalidArgument("need at least one rater".into()));
    }
    if c.provenance != Provenance::GroundTruth {
        return Err(Error::ProvenanceViolation(format!(
            "ratings are simulated from ground truth, `{}` is {}",
            c.concept_id,
            c.provenance.as_str()
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("rater error rate must lie in [0, 1], got {eta}")));
    }
    let root = SeedTree::new(seed);
    indices
        .iter()
        .map(|&i| {
            let truth = *c.values.get(i).ok_or(Error::IndexOutOfRange { index: i, size: c.len() })? == 1.0;
            Ok(RatingSet::new(i, c.concept_id.clone(), rate(truth, m, eta, root.child(i as u64))))
        })
        .collect()
}

fn rate(truth: bool, m: usize, eta: f64, seed: SeedTree) -> Vec<bool> {
    let mut rng = seed.rng();
    (0..m).map(|_| truth ^ (rng.random::<f64>() < eta)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialConfig {
    pub strategy: Strategy,
    pub aggregation: AggregationMethod,
    pub n_inputs: usize,
    pub raters: usize,
    pub eta: f64,
    pub prior: PriorSpec,
    pub epsilon: f64,
    pub n_trials: usize,
    pub seed: u64,
    pub cost_per_rating: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Guided,
            aggregation: AggregationMethod::BayesEstimator,
            n_inputs: 90,
            raters: 2,
            eta: crate::aggregation::DEFAULT_ETA,
            prior: PriorSpec::uniform(crate::aggregation::DEFAULT_BETA),
            epsilon: DEFAULT_EPSILON,
            n_trials: 10,
            seed: 0,
            cost_per_rating: DEFAULT_COST_PER_RATING,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be at least 1".into()));
        }
        if !(self.cost_per_rating > 0.0) {
            return Err(Error::Config("cost_per_rating must be positive".into()));
        }
        if self.n_inputs < 2 {
            return Err(Error::Config("n_inputs must be at least 2".into()));
        }
        if self.raters == 0 {
            return Err(Error::Config("raters must be at least 1".into()));
        }
        NoiseModel::new(self.eta).map_err(|e| Error::Config(e.to_string()))?;
        self.prior.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn cost(&self) -> f64 {
        (self.n_inputs * self.raters) as f64 * self.cost_per_rating
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronReport {
    pub neuron_id: String,
    pub concept_id: String,
    pub rho_gt: f64,
    pub rce: f64,
    /// One entry per trial; `None` when every sampled label was identical.
    pub estimates: Vec<Option<f64>>,
}

impl NeuronReport {
    pub fn defined_estimates(&self) -> impl Iterator<Item = f64> + '_ {
        self.estimates.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RceReport {
    pub config: TrialConfig,
    /// Mean relative correlation error over neurons and trials.
    pub rce: f64,
    /// Standard error of `rce` across trials.
    pub stderr: f64,
    pub cost: f64,
    pub trials: usize,
    /// Trials whose sampled labels were all equal. They count as a zero estimate.
    pub degenerate: usize,
    pub per_neuron: Vec<NeuronReport>,
}

/// Everything a trial needs about one neuron, computed once.
struct NeuronContext<'w> {
    assignment: &'w GroundTruthAssignment,
    activation: &'w ActivationVector,
    stats: NormalizationStats,
    truth: &'w ConceptVector,
    guide: Option<&'w ConceptVector>,
    seed: SeedTree,
}

impl<'w> NeuronContext<'w> {
    fn new(ws: &'w Workspace, assignment: &'w GroundTruthAssignment, master: SeedTree) -> Result<Self> {
        let activation = ws.activation(&assignment.neuron_id)?;
        let truth = ws
            .concept(&assignment.concept_id, Provenance::GroundTruth)
            .ok_or_else(|| Error::UnknownConcept(assignment.concept_id.clone()))?;
        if assignment.rho_gt == 0.0 {
            return Err(Error::ZeroGroundTruth(0));
        }
        Ok(Self {
            assignment,
            activation,
            stats: NormalizationStats::compute(&activation.neuron_id, &activation.values, Convention::Population)?,
            truth,
            guide: ws.concept(&assignment.concept_id, Provenance::CheapEstimator),
            seed: master.named(&assignment.neuron_id),
        })
    }

    fn plan(&self, strategy: Strategy, epsilon: f64) -> Result<SamplingPlan> {
        let guide = match strategy {
            Strategy::Oracle => Some(self.truth),
            _ => self.guide,
        };
        build_plan(self.activation, guide, strategy, epsilon)
    }

    fn aggregator(&self, cfg: &TrialConfig) -> Result<Aggregator<'w>> {
        let scores = self.guide.map(|g| g.values.as_slice());
        if cfg.aggregation == AggregationMethod::BayesEstimator && scores.is_none() {
            return Err(Error::MissingGuide(format!(
                "bayes-estimator prior for `{}`",
                self.assignment.concept_id
            )));
        }
        Aggregator::for_method(cfg.aggregation, NoiseModel::new(cfg.eta)?, cfg.prior, scores)
    }

    fn trial_seed(&self, trial: usize) -> SeedTree {
        self.seed.child(trial as u64)
    }

    /// Labels for each draw of `sample`, one aggregated value per distinct input.
    fn labels(&self, sample: &Sample, cfg: &TrialConfig, agg: &Aggregator<'_>, trial: SeedTree) -> Result<Vec<f64>> {
        let unique = sample.unique_indices();
        let sets = simulate_ratings(self.truth, &unique, cfg.raters, cfg.eta, trial.named("ratings").value())?;
        let mut by_input = HashMap::with_capacity(sets.len());
        for s in &sets {
            by_input.insert(s.input_index, agg.label(s)?);
        }
        Ok(sample.indices.iter().map(|i| by_input[i]).collect())
    }

    fn estimate(&self, sample: &Sample, labels: &[f64]) -> Result<Option<f64>> {
        match estimate_aligned(&self.stats, &self.activation.values, sample, labels) {
            Ok(r) => Ok(Some(r.rho)),
            Err(Error::DegenerateConcept) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

fn relative_error(estimate: Option<f64>, rho_gt: f64) -> f64 {
    ((estimate.unwrap_or(0.0) - rho_gt) / rho_gt).abs()
}

/// Runs `config.n_trials` simulated studies per assigned neuron.
pub fn run_trial(ws: &Workspace, assignments: &[GroundTruthAssignment], config: &TrialConfig) -> Result<RceReport> {
    config.validate()?;
    if assignments.is_empty() {
        return Err(Error::Config("no neurons to simulate".into()));
    }
    let master = SeedTree::new(config.seed);
    let contexts: Vec<NeuronContext<'_>> = assignments
        .iter()
        .map(|a| NeuronContext::new(ws, a, master))
        .collect::<Result<_>>()?;
    let mut per_neuron = Vec::with_capacity(contexts.len());
    for ctx in &contexts {
        let plan = ctx.plan(config.strategy, config.epsilon)?;
        let sampler = ProposalSampler::new(&plan)?;
        let agg = ctx.aggregator(config)?;
        let estimates: Vec<Option<f64>> = (0..config.n_trials)
            .into_par_iter()
            .map(|t| {
                let trial = ctx.trial_seed(t);
                let sample = sampler.draw(config.n_inputs, trial.named("sample").value())?;
                let labels = ctx.labels(&sample, config, &agg, trial)?;
                ctx.estimate(&sample, &labels)
            })
            .collect::<Result<_>>()?;
        per_neuron.push(NeuronReport {
            neuron_id: ctx.assignment.neuron_id.clone(),
            concept_id: ctx.assignment.concept_id.clone(),
            rho_gt: ctx.assignment.rho_gt,
            rce: 0.0,
            estimates,
        });
    }
    Ok(summarize(*config, per_neuron))
}

fn summarize(config: TrialConfig, mut per_neuron: Vec<NeuronReport>) -> RceReport {
    let trials = config.n_trials;
    let k = per_neuron.len() as f64;
    let mut per_trial = vec![0.0; trials];
    let mut degenerate = 0;
    for nr in &mut per_neuron {
        let mut total = 0.0;
        for (t, est) in nr.estimates.iter().enumerate() {
            let e = relative_error(*est, nr.rho_gt);
            total += e;
            per_trial[t] += e / k;
            degenerate += usize::from(est.is_none());
        }
        nr.rce = total / trials as f64;
    }
    let rce = per_trial.iter().sum::<f64>() / trials as f64;
    let stderr = if trials > 1 {
        let var = per_trial.iter().map(|e| (e - rce).powi(2)).sum::<f64>() / (trials - 1) as f64;
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    RceReport {
        cost: config.cost(),
        config,
        rce,
        stderr,
        trials,
        degenerate,
        per_neuron,
    }
}

/// How the (raters, inputs) cells of a sweep are laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellLayout {
    /// Every combination of rater count and input count.
    Grid { raters: Vec<usize>, n_inputs: Vec<usize> },
    /// Fixed totals of ratings per neuron; inputs = budget / raters (rounded down).
    Budgets { raters: Vec<usize>, ratings: Vec<usize> },
}

impl CellLayout {
    pub fn cells(&self) -> Vec<(usize, usize)> {
        match self {
            CellLayout::Grid { raters, n_inputs } => raters
                .iter()
                .flat_map(|&m| n_inputs.iter().map(move |&n| (m, n)))
                .collect(),
            CellLayout::Budgets { raters, ratings } => ratings
                .iter()
                .flat_map(|&b| raters.iter().map(move |&m| (m, b / m.max(1))))
                .filter(|&(_, n)| n >= 2)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub strategies: Vec<Strategy>,
    pub aggregations: Vec<AggregationMethod>,
    pub cells: CellLayout,
    /// Shared settings; strategy, aggregation, raters and inputs are overridden per cell.
    pub base: TrialConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub aggregation: AggregationMethod,
    pub m: usize,
    pub n_inputs: usize,
    pub cost_usd: f64,
    pub rce: f64,
    pub stderr: f64,
}

impl SweepRow {
    fn from_report(r: &RceReport) -> Self {
        Self {
            strategy: r.config.strategy,
            aggregation: r.config.aggregation,
            m: r.config.raters,
            n_inputs: r.config.n_inputs,
            cost_usd: r.cost,
            rce: r.rce,
            stderr: r.stderr,
        }
    }

    pub fn ratings(&self) -> usize {
        self.m * self.n_inputs
    }
}

pub fn sweep_configs(grid: &SweepGrid) -> Vec<TrialConfig> {
    let mut out = Vec::new();
    for &strategy in &grid.strategies {
        for &aggregation in &grid.aggregations {
            for (m, n) in grid.cells.cells() {
                out.push(TrialConfig {
                    strategy,
                    aggregation,
                    raters: m,
                    n_inputs: n,
                    ..grid.base
                });
            }
        }
    }
    out
}

/// Runs every cell of the grid. Rows come back in grid order.
pub fn sweep_cost_error(
    ws: &Workspace,
    assignments: &[GroundTruthAssignment],
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>> {
    let configs = sweep_configs(grid);
    if configs.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    configs
        .iter()
        .map(|cfg| run_trial(ws, assignments, cfg).map(|r| SweepRow::from_report(&r)))
        .collect()
}

/// For each (strategy, aggregation, total ratings) keeps the row with the
/// lowest error; ties go to fewer raters.
pub fn best_per_cost(rows: &[SweepRow]) -> Vec<SweepRow> {
    let mut best: Vec<SweepRow> = Vec::new();
    for row in rows {
        match best.iter_mut().find(|b| {
            b.strategy == row.strategy && b.aggregation == row.aggregation && b.ratings() == row.ratings()
        }) {
            Some(b) => {
                if row.rce < b.rce || (row.rce == b.rce && row.m < b.m) {
                    *b = *row;
                }
            }
            None => best.push(*row),
        }
    }
    best
}

/// Relative slack when comparing a cell's cost against a budget, so that
/// `90 * 2 * 0.004` fits a 0.72 budget despite binary rounding.
const BUDGET_SLACK: f64 = 1e-9;

/// The affordable cell with the lowest error. Ties go to fewer raters, then
/// fewer inputs.
pub fn optimal_rater_count(rows: &[SweepRow], budget: f64) -> Result<SweepRow> {
    if rows.is_empty() {
        return Err(Error::Config("sweep table is empty".into()));
    }
    rows.iter()
        .filter(|r| r.cost_usd <= budget * (1.0 + BUDGET_SLACK))
        .min_by(|a, b| {
            a.rce
                .total_cmp(&b.rce)
                .then(a.m.cmp(&b.m))
                .then(a.n_inputs.cmp(&b.n_inputs))
        })
        .copied()
        .ok_or(Error::NoFeasibleCell(budget))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    pub rce: f64,
    pub stderr: f64,
}

/// Bayes with a constant prior at each `beta`; sampling and ratings are
/// identical across rows.
pub fn sweep_prior_beta(
    ws: &Workspace,
    assignments: &[GroundTruthAssignment],
    config: &TrialConfig,
    betas: &[f64],
) -> Result<Vec<BetaRow>> {
    betas
        .iter()
        .map(|&beta| {
            let cfg = TrialConfig {
                aggregation: AggregationMethod::BayesUniform,
                prior: PriorSpec { beta, ..config.prior },
                ..*config
            };
            let r = run_trial(ws, assignments, &cfg)?;
            Ok(BetaRow { beta, rce: r.rce, stderr: r.stderr })
        })
        .collect()
}

pub const SWEEP_HEADER: [&str; 7] = ["strategy", "aggregation", "m", "n_inputs", "cost_usd", "rce", "stderr"];

pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(SWEEP_HEADER).map_err(err)?;
    for r in rows {
        out.write_record([
            r.strategy.as_str().to_string(),
            r.aggregation.as_str().to_string(),
            r.m.to_string(),
            r.n_inputs.to_string(),
            format!("{}", r.cost_usd),
            format!("{}", r.rce),
            format!("{}", r.stderr),
        ])
        .map_err(err)?;
    }
    out.flush().map_err(|e| Error::io("<sweep csv>", e))?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != SWEEP_HEADER {
        return Err(Error::Parse(format!("{}: unexpected sweep header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse(format!("bad number `{}`", &rec[i])))
        };
        rows.push(SweepRow {
            strategy: rec[0].parse()?,
            aggregation: rec[1].parse()?,
            m: num(2)? as usize,
            n_inputs: num(3)? as usize,
            cost_usd: num(4)?,
            rce: num(5)?,
            stderr: num(6)?,
        });
    }
    Ok(rows)
}

/// Ratings already collected for one neuron: the drawn sample and every
/// rater's vote on each drawn input.
#[derive(Debug, Clone)]
pub struct RatingPool {
    pub assignment: GroundTruthAssignment,
    pub strategy: Strategy,
    pub sample: Sample,
    pub ratings: HashMap<usize, Vec<bool>>,
}

impl RatingPool {
    /// Simulates a full pool, e.g. 300 inputs with 9 raters each.
    pub fn simulate(
        ws: &Workspace,
        assignment: &GroundTruthAssignment,
        plan: &SamplingPlan,
        n_inputs: usize,
        raters: usize,
        eta: f64,
        seed: u64,
    ) -> Result<Self> {
        let truth = ws
            .concept(&assignment.concept_id, Provenance::GroundTruth)
            .ok_or_else(|| Error::UnknownConcept(assignment.concept_id.clone()))?;
        let node = SeedTree::new(seed).named(&assignment.neuron_id);
        let sample = crate::estimator::draw_sample(plan, n_inputs, node.named("sample").value())?;
        let sets = simulate_ratings(truth, &sample.unique_indices(), raters, eta, node.named("ratings").value())?;
        Ok(Self {
            assignment: assignment.clone(),
            strategy: plan.strategy,
            sample,
            ratings: sets.into_iter().map(|s| (s.input_index, s.ratings)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub aggregation: AggregationMethod,
    pub n_inputs: usize,
    pub raters: usize,
    pub eta: f64,
    pub prior: PriorSpec,
    pub n_subsets: usize,
    pub seed: u64,
    pub cost_per_rating: f64,
}

/// Error at a smaller study size, estimated by repeatedly picking `n_inputs`
/// of the pooled draws and `raters` of each input's raters, both without
/// replacement.
pub fn subsample_rce(ws: &Workspace, pools: &[RatingPool], cfg: &SubsampleConfig) -> Result<RceReport> {
    if pools.is_empty() || cfg.n_subsets == 0 {
        return Err(Error::Config("need at least one pool and one subset".into()));
    }
    let noise = NoiseModel::new(cfg.eta)?;
    let master = SeedTree::new(cfg.seed);
    let mut per_neuron = Vec::with_capacity(pools.len());
    for pool in pools {
        if cfg.n_inputs < 2 || cfg.n_inputs > pool.sample.len() {
            return Err(Error::Config(format!(
                "cannot take {} draws from a pool of {}",
                cfg.n_inputs,
                pool.sample.len()
            )));
        }
        if pool.ratings.values().any(|r| r.len() < cfg.raters) {
            return Err(Error::Config(format!("pool has fewer than {} ratings for some input", cfg.raters)));
        }
        let a = ws.activation(&pool.assignment.neuron_id)?;
        let stats = NormalizationStats::compute(&a.neuron_id, &a.values, Convention::Population)?;
        let guide = ws.concept(&pool.assignment.concept_id, Provenance::CheapEstimator);
        let agg = Aggregator::for_method(cfg.aggregation, noise, cfg.prior, guide.map(|g| g.values.as_slice()))?;
        let node = master.named(&pool.assignment.neuron_id);
        let estimates: Vec<Option<f64>> = (0..cfg.n_subsets)
            .into_par_iter()
            .map(|t| {
                let mut rng = node.child(t as u64).rng();
                let mut positions = index::sample(&mut rng, pool.sample.len(), cfg.n_inputs).into_vec();
                positions.sort_unstable();
                let sub = pool.sample.subset(&positions);
                let mut labels = HashMap::new();
                for i in sub.unique_indices() {
                    let all = &pool.ratings[&i];
                    let mut pick = index::sample(&mut rng, all.len(), cfg.raters).into_vec();
                    pick.sort_unstable();
                    let set = RatingSet::new(i, pool.assignment.concept_id.clone(), pick.iter().map(|&j| all[j]).collect());
                    labels.insert(i, agg.label(&set)?);
                }
                let values: Vec<f64> = sub.indices.iter().map(|i| labels[i]).collect();
                match estimate_aligned(&stats, &a.values, &sub, &values) {
                    Ok(r) => Ok(Some(r.rho)),
                    Err(Error::DegenerateConcept) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;
        per_neuron.push(NeuronReport {
            neuron_id: pool.assignment.neuron_id.clone(),
            concept_id: pool.assignment.concept_id.clone(),
            rho_gt: pool.assignment.rho_gt,
            rce: 0.0,
            estimates,
        });
    }
    let config = TrialConfig {
        strategy: pools[0].strategy,
        aggregation: cfg.aggregation,
        n_inputs: cfg.n_inputs,
        raters: cfg.raters,
        eta: cfg.eta,
        prior: cfg.prior,
        epsilon: DEFAULT_EPSILON,
        n_trials: cfg.n_subsets,
        seed: cfg.seed,
        cost_per_rating: cfg.cost_per_rating,
    };
    Ok(summarize(config, per_neuron))
}
