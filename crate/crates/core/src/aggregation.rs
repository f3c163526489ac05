//! Turning several noisy binary ratings of one (input, concept) pair into a
//! single label value.
//!
//! Raters are modelled as flipping the true bit independently with a shared
//! error rate `eta`. With `alpha` positive votes out of `m`, the likelihoods
//! are `(1-eta)^alpha eta^(m-alpha)` given presence and
//! `eta^alpha (1-eta)^(m-alpha)` given absence; the Bayes label is the
//! posterior probability of presence under either a constant prior or the
//! (clipped) score of a cheap estimator.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ProbingIndex;
use crate::error::{Error, Result};

pub const DEFAULT_ETA: f64 = 0.13;
pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_CLIP_LO: f64 = 0.001;
pub const DEFAULT_CLIP_HI: f64 = 0.999;
/// Largest error rate `calibrate_error_rate` will report.
pub const MAX_ETA: f64 = 0.4999;

/// The `m` ratings collected for one (input, concept) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingSet {
    pub input_index: usize,
    pub concept_id: String,
    pub ratings: Vec<bool>,
    pub rater_ids: Vec<String>,
}

impl RatingSet {
    pub fn new(input_index: usize, concept_id: impl Into<String>, ratings: Vec<bool>) -> Self {
        let rater_ids = (0..ratings.len()).map(|j| format!("r{j}")).collect();
        Self {
            input_index,
            concept_id: concept_id.into(),
            ratings,
            rater_ids,
        }
    }

    pub fn m(&self) -> usize {
        self.ratings.len()
    }

    /// Number of positive votes.
    pub fn alpha(&self) -> usize {
        self.ratings.iter().filter(|&&r| r).count()
    }

    fn counts(&self) -> Result<(usize, usize)> {
        if self.ratings.is_empty() {
            return Err(Error::EmptyRatings);
        }
        Ok((self.alpha(), self.m()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub eta: f64,
}

impl NoiseModel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&eta) {
            return Err(Error::InvalidArgument(format!("eta must lie in [0, 0.5), got {eta}")));
        }
        Ok(Self { eta })
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { eta: DEFAULT_ETA }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Uniform,
    Estimator,
}

/// Serializable prior settings; bind estimator scores with [`PriorSpec::bind`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_clip_lo")]
    pub clip_lo: f64,
    #[serde(default = "default_clip_hi")]
    pub clip_hi: f64,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_clip_lo() -> f64 {
    DEFAULT_CLIP_LO
}
fn default_clip_hi() -> f64 {
    DEFAULT_CLIP_HI
}

impl PriorSpec {
    pub fn uniform(beta: f64) -> Self {
        Self {
            kind: PriorKind::Uniform,
            beta,
            clip_lo: DEFAULT_CLIP_LO,
            clip_hi: DEFAULT_CLIP_HI,
        }
    }

    pub fn estimator() -> Self {
        Self {
            kind: PriorKind::Estimator,
            beta: DEFAULT_BETA,
            clip_lo: DEFAULT_CLIP_LO,
            clip_hi: DEFAULT_CLIP_HI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if !(self.clip_lo < self.clip_hi) || self.clip_lo < 0.0 || self.clip_hi > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "prior clip bounds [{}, {}] are invalid",
                self.clip_lo, self.clip_hi
            )));
        }
        Ok(())
    }

    /// Resolves the spec into a usable prior. `scores` is required for the estimator kind.
    pub fn bind<'a>(&self, scores: Option<&'a [f64]>) -> Result<Prior<'a>> {
        self.validate()?;
        match self.kind {
            PriorKind::Uniform => Ok(Prior::Uniform { beta: self.beta }),
            PriorKind::Estimator => {
                let scores = scores.ok_or(Error::MissingPriorScore(0))?;
                Ok(Prior::Estimator {
                    scores,
                    clip_lo: self.clip_lo,
                    clip_hi: self.clip_hi,
                })
            }
        }
    }
}

/// Prior probability that the concept is present on an input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior<'a> {
    Uniform { beta: f64 },
    Estimator { scores: &'a [f64], clip_lo: f64, clip_hi: f64 },
}

impl Prior<'_> {
    pub fn at(&self, input_index: usize) -> Result<f64> {
        match *self {
            Prior::Uniform { beta } => Ok(beta),
            Prior::Estimator { scores, clip_lo, clip_hi } => scores
                .get(input_index)
                .map(|s| s.clamp(clip_lo, clip_hi))
                .ok_or(Error::MissingPriorScore(input_index)),
        }
    }
}

pub fn aggregate_average(r: &RatingSet) -> Result<f64> {
    let (alpha, m) = r.counts()?;
    Ok(alpha as f64 / m as f64)
}

/// 1 when strictly more than half the votes are positive; ties go to 0.
pub fn aggregate_majority(r: &RatingSet) -> Result<bool> {
    let (alpha, m) = r.counts()?;
    Ok(2 * alpha > m)
}

/// Posterior probability of presence given the ratings.
pub fn aggregate_bayes(r: &RatingSet, noise: NoiseModel, prior: &Prior<'_>) -> Result<f64> {
    let (alpha, m) = r.counts()?;
    let pi = prior.at(r.input_index)?;
    Ok(bayes_posterior(alpha, m, noise.eta, pi))
}

/// `P(c=1 | alpha of m positive)`, written through the likelihood ratio
/// `P(R|c=0)/P(R|c=1) = ((1-eta)/eta)^(m - 2 alpha)` so that large `m` does
/// not underflow. An evenly split vote returns the prior unchanged.
pub fn bayes_posterior(alpha: usize, m: usize, eta: f64, prior: f64) -> f64 {
    let excess = m as i64 - 2 * alpha as i64;
    if excess == 0 {
        return prior;
    }
    let odds = (1.0 - eta) / eta;
    let ratio = odds.powi(excess as i32);
    prior / (prior + (1.0 - prior) * ratio)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMethod {
    Average,
    Majority,
    BayesUniform,
    BayesEstimator,
}

impl AggregationMethod {
    pub const ALL: [AggregationMethod; 4] = [
        AggregationMethod::Average,
        AggregationMethod::Majority,
        AggregationMethod::BayesUniform,
        AggregationMethod::BayesEstimator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMethod::Average => "average",
            AggregationMethod::Majority => "majority",
            AggregationMethod::BayesUniform => "bayes-uniform",
            AggregationMethod::BayesEstimator => "bayes-estimator",
        }
    }

    pub fn prior_kind(self) -> Option<PriorKind> {
        match self {
            AggregationMethod::BayesUniform => Some(PriorKind::Uniform),
            AggregationMethod::BayesEstimator => Some(PriorKind::Estimator),
            _ => None,
        }
    }
}

impl fmt::Display for AggregationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AggregationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(AggregationMethod::Average),
            "majority" => Ok(AggregationMethod::Majority),
            "bayes-uniform" | "bayes_uniform" => Ok(AggregationMethod::BayesUniform),
            "bayes-estimator" | "bayes_estimator" => Ok(AggregationMethod::BayesEstimator),
            other => Err(Error::InvalidArgument(format!("unknown aggregation method `{other}`"))),
        }
    }
}

/// A method bound to its noise model and prior.
#[derive(Debug, Clone, Copy)]
pub struct Aggregator<'a> {
    pub method: AggregationMethod,
    pub noise: NoiseModel,
    pub prior: Prior<'a>,
}

impl<'a> Aggregator<'a> {
    pub fn new(method: AggregationMethod, noise: NoiseModel, prior: Prior<'a>) -> Self {
        Self { method, noise, prior }
    }

    /// Builds the aggregator for `method`, picking the prior kind the method implies.
    pub fn for_method(
        method: AggregationMethod,
        noise: NoiseModel,
        spec: PriorSpec,
        scores: Option<&'a [f64]>,
    ) -> Result<Self> {
        let spec = match method.prior_kind() {
            Some(kind) => PriorSpec { kind, ..spec },
            None => PriorSpec::uniform(spec.beta),
        };
        Ok(Self::new(method, noise, spec.bind(scores)?))
    }

    pub fn label(&self, r: &RatingSet) -> Result<f64> {
        match self.method {
            AggregationMethod::Average => aggregate_average(r),
            AggregationMethod::Majority => aggregate_majority(r).map(|b| if b { 1.0 } else { 0.0 }),
            AggregationMethod::BayesUniform | AggregationMethod::BayesEstimator => {
                aggregate_bayes(r, self.noise, &self.prior)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub noise: NoiseModel,
    pub disagreements: usize,
    pub total: usize,
    /// Set when the raw disagreement rate reached 0.5 and was clamped.
    pub clamped: bool,
}

/// Pooled fraction of individual ratings that disagree with the known truth.
pub fn calibrate_error_rate<'r, I>(data: I) -> Result<Calibration>
where
    I: IntoIterator<Item = (&'r RatingSet, bool)>,
{
    let mut total = 0usize;
    let mut disagreements = 0usize;
    for (set, truth) in data {
        total += set.m();
        disagreements += set.ratings.iter().filter(|&&r| r != truth).count();
    }
    if total == 0 {
        return Err(Error::NoCalibrationData);
    }
    let raw = disagreements as f64 / total as f64;
    let clamped = raw > MAX_ETA;
    if clamped {
        tracing::warn!(raw, "rater disagreement rate is at or above 0.5; clamping to {MAX_ETA}");
    }
    Ok(Calibration {
        noise: NoiseModel { eta: raw.min(MAX_ETA) },
        disagreements,
        total,
        clamped,
    })
}

/// One line of a ratings log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub session: String,
    pub input_id: String,
    pub concept: String,
    pub rater: String,
    pub rating: u8,
    pub ts: String,
}

pub fn read_ratings_jsonl(path: &Path) -> Result<Vec<RatingRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ratings_jsonl(BufReader::new(file), &path.display().to_string())
}

pub fn parse_ratings_jsonl<R: BufRead>(reader: R, origin: &str) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RatingRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{origin} line {}: {e}", i + 1)))?;
        if rec.rating > 1 {
            return Err(Error::Parse(format!(
                "{origin} line {}: rating must be 0 or 1, got {}",
                i + 1,
                rec.rating
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_ratings_jsonl<W: Write>(mut w: W, records: &[RatingRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_ratings_jsonl(path: &Path, records: &[RatingRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ratings_jsonl(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

/// Groups log records into rating sets, one per (input, concept) pair, in
/// order of first appearance.
pub fn group_ratings(records: &[RatingRecord], index: &ProbingIndex) -> Result<Vec<RatingSet>> {
    let mut slots: HashMap<(usize, &str), usize> = HashMap::new();
    let mut sets: Vec<RatingSet> = Vec::new();
    for r in records {
        let input_index = index
            .position(&r.input_id)
            .ok_or_else(|| Error::Parse(format!("rating for unknown input `{}`", r.input_id)))?;
        let slot = *slots.entry((input_index, r.concept.as_str())).or_insert_with(|| {
            sets.push(RatingSet {
                input_index,
                concept_id: r.concept.clone(),
                ratings: Vec::new(),
                rater_ids: Vec::new(),
            });
            sets.len() - 1
        });
        sets[slot].ratings.push(r.rating == 1);
        sets[slot].rater_ids.push(r.rater.clone());
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rs(bits: &[u8]) -> RatingSet {
        RatingSet::new(0, "t", bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn average_examples() {
        assert_relative_eq!(aggregate_average(&rs(&[1, 0, 1])).unwrap(), 2.0 / 3.0);
        assert_eq!(aggregate_average(&rs(&[0, 0])).unwrap(), 0.0);
        assert_eq!(aggregate_average(&rs(&[1])).unwrap(), 1.0);
        assert!(matches!(aggregate_average(&rs(&[])), Err(Error::EmptyRatings)));
    }

    #[test]
    fn majority_examples() {
        assert!(aggregate_majority(&rs(&[1, 1, 0])).unwrap());
        assert!(!aggregate_majority(&rs(&[1, 0])).unwrap());
        assert!(matches!(aggregate_majority(&rs(&[])), Err(Error::EmptyRatings)));
    }

    #[test]
    fn bayes_hand_example() {
        let prior = Prior::Uniform { beta: 0.01 };
        let got = aggregate_bayes(&rs(&[1, 1]), NoiseModel::new(0.13).unwrap(), &prior).unwrap();
        let l1 = 0.87f64 * 0.87 * 0.01;
        let l0 = 0.13f64 * 0.13 * 0.99;
        assert_relative_eq!(got, l1 / (l1 + l0), epsilon = 1e-15);
        assert!((got - 0.311481).abs() < 1e-6);
    }

    #[test]
    fn split_vote_returns_prior_exactly() {
        for eta in [0.0, 0.05, 0.13, 0.3, 0.49] {
            for beta in [0.001, 0.01, 0.37, 0.9] {
                let prior = Prior::Uniform { beta };
                let noise = NoiseModel::new(eta).unwrap();
                assert_eq!(aggregate_bayes(&rs(&[1, 0]), noise, &prior).unwrap(), beta);
                assert_eq!(aggregate_bayes(&rs(&[0, 1, 1, 0]), noise, &prior).unwrap(), beta);
            }
        }
    }

    #[test]
    fn noiseless_raters_are_believed() {
        let noise = NoiseModel::new(0.0).unwrap();
        for beta in [0.001, 0.5, 0.999] {
            let prior = Prior::Uniform { beta };
            assert_eq!(aggregate_bayes(&rs(&[1, 1]), noise, &prior).unwrap(), 1.0);
            assert_eq!(aggregate_bayes(&rs(&[0, 0, 0]), noise, &prior).unwrap(), 0.0);
        }
    }

    #[test]
    fn estimator_prior_is_clipped() {
        let scores = [0.0, 1.0, 0.4];
        let prior = PriorSpec::estimator().bind(Some(&scores)).unwrap();
        assert_eq!(prior.at(0).unwrap(), 0.001);
        assert_eq!(prior.at(1).unwrap(), 0.999);
        assert_eq!(prior.at(2).unwrap(), 0.4);
        assert!(matches!(prior.at(3), Err(Error::MissingPriorScore(3))));
        assert!(PriorSpec::estimator().bind(None).is_err());
        assert!(PriorSpec::uniform(0.0).bind(None).is_err());
        assert!(PriorSpec::uniform(1.0).bind(None).is_err());
    }

    #[test]
    fn posterior_approaches_prior_as_noise_approaches_half() {
        let noise = NoiseModel::new(0.499).unwrap();
        let prior = Prior::Uniform { beta: 0.3 };
        for bits in [&[1u8, 1][..], &[0, 0, 0], &[1, 1, 1, 0]] {
            let post = aggregate_bayes(&rs(bits), noise, &prior).unwrap();
            assert!((post - 0.3).abs() < 1e-2, "{post}");
        }
        assert!(NoiseModel::new(0.5).is_err());
        assert!(NoiseModel::new(-0.1).is_err());
    }

    #[test]
    fn calibration_examples() {
        let truth_sets: Vec<(RatingSet, bool)> = (0..50)
            .map(|i| {
                // 13 disagreements spread over 100 ratings.
                let wrong_first = i < 13;
                (rs(&[if wrong_first { 0 } else { 1 }, 1]), true)
            })
            .collect();
        let cal = calibrate_error_rate(truth_sets.iter().map(|(s, t)| (s, *t))).unwrap();
        assert_eq!((cal.disagreements, cal.total), (13, 100));
        assert_relative_eq!(cal.noise.eta, 0.13);
        assert!(!cal.clamped);

        let agree = [(rs(&[1, 1, 1]), true), (rs(&[0]), false)];
        assert_eq!(calibrate_error_rate(agree.iter().map(|(s, t)| (s, *t))).unwrap().noise.eta, 0.0);

        let bad: Vec<(RatingSet, bool)> = (0..100).map(|i| (rs(&[u8::from(i < 40)]), true)).collect();
        let cal = calibrate_error_rate(bad.iter().map(|(s, t)| (s, *t))).unwrap();
        assert_eq!(cal.noise.eta, MAX_ETA);
        assert!(cal.clamped);

        assert!(matches!(
            calibrate_error_rate(std::iter::empty::<(&RatingSet, bool)>()),
            Err(Error::NoCalibrationData)
        ));
    }

    #[test]
    fn ratings_log_round_trip_and_grouping() {
        let index = ProbingIndex::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let rec = |input: &str, rater: &str, rating: u8| RatingRecord {
            session: "s1".into(),
            input_id: input.into(),
            concept: "dog".into(),
            rater: rater.into(),
            rating,
            ts: "2025-01-01T00:00:00Z".into(),
        };
        let records = vec![rec("b", "u1", 1), rec("a", "u1", 0), rec("b", "u2", 0)];
        let mut buf = Vec::new();
        write_ratings_jsonl(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with(r#"{"session":"s1","input_id":"b","concept":"dog","rater":"u1","rating":1,"ts":"#));
        let back = parse_ratings_jsonl(&buf[..], "mem").unwrap();
        assert_eq!(back, records);

        let sets = group_ratings(&back, &index).unwrap();
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].input_index, 1);
        assert_eq!(sets[0].ratings, vec![true, false]);
        assert_eq!(sets[0].rater_ids, vec!["u1", "u2"]);
        assert_eq!(sets[1].input_index, 0);

        let bad = br#"{"session":"s","input_id":"a","concept":"d","rater":"u","rating":2,"ts":""}"#;
        assert!(parse_ratings_jsonl(&bad[..], "mem").is_err());
    }
}
