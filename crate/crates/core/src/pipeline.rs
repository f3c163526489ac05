//! Ratings -> labels -> estimate, shared by the offline CLI and the live service
//! so both produce bit-identical numbers from the same log.

use std::collections::HashMap;

use serde::Serialize;

use crate::aggregation::{Aggregator, RatingSet};
use crate::dataset::{ActivationVector, Convention, NormalizationStats};
use crate::error::{Error, Result};
use crate::estimator::{estimate_aligned, EstimateResult, Sample};

/// Aggregated label per input, keyed by input index.
pub fn aggregate_labels(sets: &[RatingSet], aggregator: &Aggregator<'_>) -> Result<HashMap<usize, f64>> {
    let mut merged: HashMap<usize, RatingSet> = HashMap::new();
    let mut order = Vec::new();
    for s in sets {
        match merged.get_mut(&s.input_index) {
            Some(existing) => {
                existing.ratings.extend_from_slice(&s.ratings);
                existing.rater_ids.extend_from_slice(&s.rater_ids);
            }
            None => {
                order.push(s.input_index);
                merged.insert(s.input_index, s.clone());
            }
        }
    }
    order
        .into_iter()
        .map(|i| Ok((i, aggregator.label(&merged[&i])?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartialEstimate {
    pub estimate: EstimateResult,
    /// Draws whose input had at least one rating.
    pub n_labeled: usize,
    /// True when some draws were left out for lack of ratings.
    pub partial: bool,
}

/// Estimates the correlation from whatever draws have labels. Draws of the same
/// input share that input's label.
pub fn estimate_from_labels(
    a: &ActivationVector,
    sample: &Sample,
    labels: &HashMap<usize, f64>,
) -> Result<PartialEstimate> {
    let positions: Vec<usize> = (0..sample.len())
        .filter(|&k| labels.contains_key(&sample.indices[k]))
        .collect();
    if positions.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 labeled draws, have {}",
            positions.len()
        )));
    }
    let partial = positions.len() < sample.len();
    let sub = if partial { sample.subset(&positions) } else { sample.clone() };
    let values: Vec<f64> = sub.indices.iter().map(|i| labels[i]).collect();
    let stats = NormalizationStats::compute(&a.neuron_id, &a.values, Convention::Population)?;
    let estimate = estimate_aligned(&stats, &a.values, &sub, &values)?;
    Ok(PartialEstimate {
        estimate,
        n_labeled: positions.len(),
        partial,
    })
}

pub fn estimate_from_ratings(
    a: &ActivationVector,
    sample: &Sample,
    sets: &[RatingSet],
    aggregator: &Aggregator<'_>,
) -> Result<PartialEstimate> {
    let labels = aggregate_labels(sets, aggregator)?;
    estimate_from_labels(a, sample, &labels)
}
