//! Synthetic rare-concept benchmark.
//!
//! Each neuron tracks its own latent concept, present on about 1% of inputs:
//! `activation = signal * bit + N(0, 1)`. The cheap estimator sees the bit
//! through prevalence-preserving flips (a fraction of positives turned off and
//! the same number of negatives turned on) and reports a sigmoid-smoothed
//! score `sigmoid(sharpness * (2 g - 1) + noise * N(0, 1))`.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationVector, ConceptVector, ProbingIndex, Provenance, Workspace};
use crate::error::{Error, Result};
use crate::seed::SeedTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub size: usize,
    pub neurons: usize,
    pub prevalence: f64,
    pub signal: f64,
    pub guide_flip_rate: f64,
    pub guide_sharpness: f64,
    pub guide_noise: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            size: 50_000,
            neurons: 5,
            prevalence: 0.01,
            signal: 3.0,
            guide_flip_rate: 0.1,
            guide_sharpness: 4.0,
            guide_noise: 1.0,
            seed: 0,
        }
    }
}

pub fn neuron_id(k: usize) -> String {
    format!("n{k}")
}

pub fn concept_id(k: usize) -> String {
    format!("concept{k}")
}

/// Builds the workspace: activations `n{k}`, ground-truth concepts
/// `concept{k}`, and cheap-estimator scores under the same concept ids.
pub fn generate(cfg: &BenchmarkConfig) -> Result<Workspace> {
    if cfg.size < 2 || cfg.neurons == 0 {
        return Err(Error::Config("benchmark needs at least 2 inputs and 1 neuron".into()));
    }
    if !(cfg.prevalence > 0.0 && cfg.prevalence < 1.0) {
        return Err(Error::Config(format!("prevalence must lie in (0, 1), got {}", cfg.prevalence)));
    }
    if !(0.0..=1.0).contains(&cfg.guide_flip_rate) {
        return Err(Error::Config("guide_flip_rate must lie in [0, 1]".into()));
    }
    let ids: Vec<String> = (0..cfg.size).map(|i| format!("x{i:05}")).collect();
    let idx = ProbingIndex::new(ids)?;
    let root = SeedTree::new(cfg.seed);
    let mut activations = Vec::with_capacity(cfg.neurons);
    let mut concepts = Vec::with_capacity(2 * cfg.neurons);
    let mut guides = Vec::with_capacity(cfg.neurons);
    for k in 0..cfg.neurons {
        let node = root.child(k as u64);
        let bits = latent_bits(cfg, node.named("concept"));
        let mut rng = node.named("activation").rng();
        let acts: Vec<f64> = bits
            .iter()
            .map(|&b| {
                let z: f64 = rng.sample(StandardNormal);
                cfg.signal * f64::from(u8::from(b)) + z
            })
            .collect();
        let scores = guide_scores(cfg, &bits, node.named("guide"));
        activations.push(ActivationVector::new(neuron_id(k), acts)?);
        concepts.push(ConceptVector::new(
            concept_id(k),
            bits.iter().map(|&b| f64::from(u8::from(b))).collect(),
            Provenance::GroundTruth,
        )?);
        guides.push(ConceptVector::new(concept_id(k), scores, Provenance::CheapEstimator)?);
    }
    concepts.extend(guides);
    Workspace::new(idx, activations, concepts)
}

fn latent_bits(cfg: &BenchmarkConfig, seed: SeedTree) -> Vec<bool> {
    let mut rng = seed.rng();
    let mut bits: Vec<bool> = (0..cfg.size).map(|_| rng.random::<f64>() < cfg.prevalence).collect();
    // Keep the concept non-constant on tiny workspaces.
    if bits.iter().all(|&b| !b) {
        let i = rng.random_range(0..cfg.size);
        bits[i] = true;
    } else if bits.iter().all(|&b| b) {
        let i = rng.random_range(0..cfg.size);
        bits[i] = false;
    }
    bits
}

fn guide_scores(cfg: &BenchmarkConfig, bits: &[bool], seed: SeedTree) -> Vec<f64> {
    let mut rng = seed.rng();
    let positives: Vec<usize> = (0..bits.len()).filter(|&i| bits[i]).collect();
    let negatives: Vec<usize> = (0..bits.len()).filter(|&i| !bits[i]).collect();
    let flips = ((cfg.guide_flip_rate * positives.len() as f64).round() as usize).min(negatives.len());
    let mut seen = bits.to_vec();
    for k in index::sample(&mut rng, positives.len(), flips) {
        seen[positives[k]] = false;
    }
    for k in index::sample(&mut rng, negatives.len(), flips) {
        seen[negatives[k]] = true;
    }
    seen.iter()
        .map(|&g| {
            let z: f64 = rng.sample(StandardNormal);
            let logit = cfg.guide_sharpness * if g { 1.0 } else { -1.0 } + cfg.guide_noise * z;
            1.0 / (1.0 + (-logit).exp())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::exact_correlation;

    #[test]
    fn small_benchmark_shape_and_determinism() {
        let cfg = BenchmarkConfig { size: 4000, neurons: 2, prevalence: 0.05, seed: 3, ..Default::default() };
        let ws = generate(&cfg).unwrap();
        assert_eq!(ws.size(), 4000);
        assert_eq!(ws.activations.len(), 2);
        assert_eq!(ws.concepts_with(Provenance::GroundTruth).count(), 2);
        assert_eq!(ws.concepts_with(Provenance::CheapEstimator).count(), 2);
        let again = generate(&cfg).unwrap();
        assert_eq!(ws.activations, again.activations);
        assert_eq!(ws.concepts, again.concepts);

        let gt = ws.concept("concept0", Provenance::GroundTruth).unwrap();
        let guide = ws.concept("concept0", Provenance::CheapEstimator).unwrap();
        let positives = gt.values.iter().filter(|&&v| v == 1.0).count() as f64;
        assert!((positives / 4000.0 - 0.05).abs() < 0.02);
        let a = ws.activation("n0").unwrap();
        let rho = exact_correlation(a, gt).unwrap();
        assert!(rho > 0.4 && rho < 0.75, "{rho}");
        let g = crate::estimator::pearson("g", &guide.values, "c", &gt.values).unwrap();
        assert!(g > 0.7, "{g}");
    }
}
