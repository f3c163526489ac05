//! Exact correlation, proposal construction, sampling, and the
//! importance-weighted correlation estimator.
//!
//! The target is the Pearson correlation between a neuron's activations `a`
//! and a concept vector `c`, written as an expectation over the uniform
//! reference distribution `p(i) = 1/|D|`:
//!
//! ```text
//! rho = E_p[ h(i) ],   h(i) = a_hat(i) * c_hat(i)
//! ```
//!
//! Inputs are drawn i.i.d. from a proposal `q` and reweighted by `p/q`. The
//! concept mean and standard deviation are themselves estimated from the
//! weighted sample (mean first, then the spread around it), while activation
//! statistics come from the full dataset since activations are free.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationVector, ConceptVector, Convention, NormalizationStats};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_EPSILON: f64 = 0.001;

/// Population-convention Pearson correlation of two equal-length signals.
pub fn pearson(x_name: &str, x: &[f64], y_name: &str, y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "`{x_name}` has {} values, `{y_name}` has {}",
            x.len(),
            y.len()
        )));
    }
    let sx = NormalizationStats::compute(x_name, x, Convention::Population)?;
    let sy = NormalizationStats::compute(y_name, y, Convention::Population)?;
    let n = x.len() as f64;
    let cross: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (xi - sx.mean) * (yi - sy.mean))
        .sum();
    Ok((cross / (n * sx.std * sy.std)).clamp(-1.0, 1.0))
}

/// Pearson correlation over the whole probing set, normalized by `|D|` throughout.
pub fn exact_correlation(a: &ActivationVector, c: &ConceptVector) -> Result<f64> {
    pearson(&a.neuron_id, &a.values, &c.concept_id, &c.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// `q = p`.
    Uniform,
    /// `q ∝ a_hat² + ε`, usable when no cheap concept estimate exists.
    ActivationSq,
    /// `q ∝ |a_hat · g_hat + ε| / |D|` with `g` a cheap concept estimate.
    Guided,
    /// `q ∝ |h| p` from the true labels. Only meaningful in simulation.
    Oracle,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Uniform,
        Strategy::ActivationSq,
        Strategy::Guided,
        Strategy::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Uniform => "uniform",
            Strategy::ActivationSq => "activation_sq",
            Strategy::Guided => "guided",
            Strategy::Oracle => "oracle",
        }
    }

    pub fn needs_guide(self) -> bool {
        matches!(self, Strategy::Guided | Strategy::Oracle)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Strategy::Uniform),
            "activation_sq" | "activation-sq" => Ok(Strategy::ActivationSq),
            "guided" => Ok(Strategy::Guided),
            "oracle" => Ok(Strategy::Oracle),
            other => Err(Error::InvalidArgument(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Proposal and reference distributions over the probing set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub strategy: Strategy,
    pub epsilon: f64,
    /// Per-input proposal probability.
    pub q: Vec<f64>,
    /// Magnitude the proposal was built from (`|a_hat g_hat|`, `a_hat²`, `|h|`, or 1).
    pub h_abs: Vec<f64>,
}

impl SamplingPlan {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    /// Reference probability, identical for every input.
    pub fn p(&self) -> f64 {
        1.0 / self.q.len() as f64
    }

    #[inline]
    pub fn weight(&self, index: usize) -> f64 {
        self.p() / self.q[index]
    }

    /// Rebuilds a plan from an audited proposal vector.
    pub fn from_proposal(strategy: Strategy, epsilon: f64, q: Vec<f64>) -> Result<Self> {
        if q.len() < 2 {
            return Err(Error::InvalidArgument("proposal needs at least 2 inputs".into()));
        }
        if q.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("every proposal probability must be positive".into()));
        }
        let total: f64 = q.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("proposal sums to {total}, expected 1")));
        }
        let h_abs = vec![1.0; q.len()];
        Ok(Self { strategy, epsilon, q, h_abs })
    }
}

/// Normalizes non-negative proposal masses to a distribution with no zero entries.
pub fn normalize_proposal(mass: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = mass.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "proposal mass at input {i} is {}; every input needs a positive probability",
            mass[i]
        )));
    }
    let total: f64 = mass.iter().sum();
    Ok(mass.iter().map(|m| m / total).collect())
}

/// Builds the proposal distribution for `strategy`.
///
/// `guide` holds cheap concept scores for [`Strategy::Guided`] and the true
/// labels for [`Strategy::Oracle`]; it is ignored otherwise.
pub fn build_plan(
    a: &ActivationVector,
    guide: Option<&ConceptVector>,
    strategy: Strategy,
    epsilon: f64,
) -> Result<SamplingPlan> {
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument("activation vector needs at least 2 inputs".into()));
    }
    if strategy != Strategy::Uniform && !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive for strategy `{strategy}`, got {epsilon}"
        )));
    }
    let p = 1.0 / n as f64;
    let (mass, h_abs): (Vec<f64>, Vec<f64>) = match strategy {
        Strategy::Uniform => (vec![p; n], vec![1.0; n]),
        Strategy::ActivationSq => {
            let stats = NormalizationStats::compute(&a.neuron_id, &a.values, Convention::Population)?;
            let sq: Vec<f64> = a.values.iter().map(|&x| stats.standardize(x).powi(2)).collect();
            (sq.iter().map(|s| s + epsilon).collect(), sq)
        }
        Strategy::Guided | Strategy::Oracle => {
            let g = guide.ok_or_else(|| Error::MissingGuide(strategy.to_string()))?;
            if g.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "guide `{}` has {} values, activations have {n}",
                    g.concept_id,
                    g.len()
                )));
            }
            let sa = NormalizationStats::compute(&a.neuron_id, &a.values, Convention::Population)?;
            let sg = NormalizationStats::compute(&g.concept_id, &g.values, Convention::Population)?;
            let product: Vec<f64> = a
                .values
                .iter()
                .zip(&g.values)
                .map(|(&x, &y)| sa.standardize(x) * sg.standardize(y))
                .collect();
            let mass = if strategy == Strategy::Guided {
                product.iter().map(|h| (h + epsilon).abs() * p).collect()
            } else {
                product.iter().map(|h| (h.abs() + epsilon) * p).collect()
            };
            (mass, product.iter().map(|h| h.abs()).collect())
        }
    };
    // Uniform stays exactly p so that every weight is exactly 1.
    let q = if strategy == Strategy::Uniform { mass } else { normalize_proposal(&mass)? };
    Ok(SamplingPlan { strategy, epsilon, q, h_abs })
}

/// Inputs drawn from a plan, each paired with its importance weight `p/q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub seed: u64,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Reattaches weights to a recorded index sequence.
    pub fn from_indices(plan: &SamplingPlan, indices: Vec<usize>, seed: u64) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::InvalidArgument("a sample needs at least 2 draws".into()));
        }
        let size = plan.len();
        if let Some(&index) = indices.iter().find(|&&i| i >= size) {
            return Err(Error::IndexOutOfRange { index, size });
        }
        let weights = indices.iter().map(|&i| plan.weight(i)).collect();
        Ok(Self { indices, weights, seed })
    }

    /// Every input exactly once, in index order.
    pub fn full(plan: &SamplingPlan) -> Self {
        let indices: Vec<usize> = (0..plan.len()).collect();
        let weights = indices.iter().map(|&i| plan.weight(i)).collect();
        Self { indices, weights, seed: 0 }
    }

    /// Keeps the draws at the given positions, in order.
    pub fn subset(&self, positions: &[usize]) -> Self {
        Self {
            indices: positions.iter().map(|&k| self.indices[k]).collect(),
            weights: positions.iter().map(|&k| self.weights[k]).collect(),
            seed: self.seed,
        }
    }

    /// Distinct inputs in order of first appearance.
    pub fn unique_indices(&self) -> Vec<usize> {
        let mut seen = std::collections::HashSet::with_capacity(self.indices.len());
        self.indices.iter().copied().filter(|i| seen.insert(*i)).collect()
    }
}

/// Draws `n` inputs i.i.d. with replacement from `plan.q`.
pub fn draw_sample(plan: &SamplingPlan, n: usize, seed: u64) -> Result<Sample> {
    let sampler = ProposalSampler::new(plan)?;
    sampler.draw(n, seed)
}

/// A plan with its sampling table prebuilt, for repeated draws.
#[derive(Debug, Clone)]
pub struct ProposalSampler<'a> {
    plan: &'a SamplingPlan,
    table: WeightedIndex<f64>,
}

impl<'a> ProposalSampler<'a> {
    pub fn new(plan: &'a SamplingPlan) -> Result<Self> {
        let table = WeightedIndex::new(&plan.q)
            .map_err(|e| Error::InvalidArgument(format!("invalid proposal: {e}")))?;
        Ok(Self { plan, table })
    }

    pub fn draw(&self, n: usize, seed: u64) -> Result<Sample> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("sample size must be at least 2, got {n}")));
        }
        let mut rng = seed::rng(seed);
        let indices: Vec<usize> = (0..n).map(|_| self.table.sample(&mut rng)).collect();
        let weights = indices.iter().map(|&i| self.plan.weight(i)).collect();
        Ok(Sample { indices, weights, seed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    /// Estimate clamped to `[-1, 1]`.
    pub rho: f64,
    /// Estimate before clamping.
    pub rho_raw: f64,
    pub sample_size: usize,
    /// `(Σw)² / Σw²`.
    pub effective_sample_size: f64,
    pub concept_mean: f64,
    pub concept_std: f64,
}

/// Importance-weighted correlation from labels gathered on `sample`.
///
/// `labels` must list one `(index, value)` pair per draw, in draw order.
pub fn estimate_correlation(
    a: &ActivationVector,
    labels: &[(usize, f64)],
    sample: &Sample,
) -> Result<EstimateResult> {
    if labels.len() != sample.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a sample of {} draws",
            labels.len(),
            sample.len()
        )));
    }
    for (k, (&(idx, _), &drawn)) in labels.iter().zip(&sample.indices).enumerate() {
        if idx != drawn {
            return Err(Error::InvalidArgument(format!(
                "label {k} is for input {idx} but draw {k} is input {drawn}"
            )));
        }
    }
    let stats = NormalizationStats::compute(&a.neuron_id, &a.values, Convention::Population)?;
    let values: Vec<f64> = labels.iter().map(|&(_, v)| v).collect();
    estimate_aligned(&stats, &a.values, sample, &values)
}

/// Core of [`estimate_correlation`] with activation statistics precomputed and
/// `labels[k]` aligned to `sample.indices[k]`.
pub fn estimate_aligned(
    activation_stats: &NormalizationStats,
    activations: &[f64],
    sample: &Sample,
    labels: &[f64],
) -> Result<EstimateResult> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::InvalidArgument("a sample needs at least 2 draws".into()));
    }
    if labels.len() != n || sample.weights.len() != n {
        return Err(Error::InvalidArgument("labels, weights and draws must align".into()));
    }
    if let Some(&index) = sample.indices.iter().find(|&&i| i >= activations.len()) {
        return Err(Error::IndexOutOfRange { index, size: activations.len() });
    }
    if let Some(v) = labels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("label {v} is outside [0, 1]")));
    }
    if labels.iter().all(|&v| v == labels[0]) {
        return Err(Error::DegenerateConcept);
    }
    let nf = n as f64;
    let w = &sample.weights;
    let mean = w.iter().zip(labels).map(|(w, c)| w * c).sum::<f64>() / nf;
    let var = w
        .iter()
        .zip(labels)
        .map(|(w, c)| w * (c - mean) * (c - mean))
        .sum::<f64>()
        / (nf - 1.0);
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::DegenerateConcept);
    }
    let mut acc = 0.0;
    for k in 0..n {
        let a_hat = activation_stats.standardize(activations[sample.indices[k]]);
        let c_hat = (labels[k] - mean) / std;
        acc += w[k] * a_hat * c_hat;
    }
    let rho_raw = acc / nf;
    let sum_w: f64 = w.iter().sum();
    let sum_w2: f64 = w.iter().map(|x| x * x).sum();
    Ok(EstimateResult {
        rho: rho_raw.clamp(-1.0, 1.0),
        rho_raw,
        sample_size: n,
        effective_sample_size: sum_w * sum_w / sum_w2,
        concept_mean: mean,
        concept_std: std,
    })
}

/// Mean of `|estimate - truth| / |truth|` over `(estimate, truth)` pairs.
pub fn relative_correlation_error(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no estimates to compare".into()));
    }
    let mut total = 0.0;
    for (k, &(est, truth)) in pairs.iter().enumerate() {
        if truth == 0.0 {
            return Err(Error::ZeroGroundTruth(k));
        }
        total += ((est - truth) / truth).abs();
    }
    Ok(total / pairs.len() as f64)
}

/// Audit record of a plan together with the sample drawn from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub q: Vec<f64>,
    pub indices: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neuron_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_id: Option<String>,
}

impl PlanRecord {
    pub fn new(plan: &SamplingPlan, sample: &Sample) -> Self {
        Self {
            strategy: plan.strategy,
            epsilon: plan.epsilon,
            q: plan.q.clone(),
            indices: sample.indices.clone(),
            seed: sample.seed,
            neuron_id: None,
            concept_id: None,
        }
    }

    pub fn restore(&self) -> Result<(SamplingPlan, Sample)> {
        let plan = SamplingPlan::from_proposal(self.strategy, self.epsilon, self.q.clone())?;
        let sample = Sample::from_indices(&plan, self.indices.clone(), self.seed)?;
        Ok((plan, sample))
    }
}
