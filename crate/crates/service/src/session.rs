//! Labeling-session state: the drawn sample, its task queue, leases and the
//! ratings collected so far. Everything here is synchronous and free of I/O;
//! the caller persists each accepted submission before committing it.

use std::collections::HashMap;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use neurongauge_core::aggregation::{
    group_ratings, AggregationMethod, Aggregator, NoiseModel, PriorKind, PriorSpec, RatingRecord, DEFAULT_ETA,
};
use neurongauge_core::dataset::{Provenance, Workspace};
use neurongauge_core::estimator::{build_plan, draw_sample, PlanRecord, Sample, Strategy, DEFAULT_EPSILON};
use neurongauge_core::pipeline::{aggregate_labels, estimate_from_labels};
use neurongauge_core::Error;

/// Inputs shown to a rater at once.
pub const TASK_SIZE: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub neuron_id: String,
    /// Concept id; also the text shown to raters.
    pub concept: String,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_n_inputs")]
    pub n_inputs: usize,
    /// Ratings wanted per input.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_prior")]
    pub prior: PriorSpec,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_strategy() -> Strategy {
    Strategy::Guided
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_n_inputs() -> usize {
    90
}
fn default_m() -> usize {
    2
}
fn default_prior() -> PriorSpec {
    PriorSpec::estimator()
}
fn default_eta() -> f64 {
    DEFAULT_ETA
}

impl SessionConfig {
    pub fn aggregation(&self) -> AggregationMethod {
        match self.prior.kind {
            PriorKind::Uniform => AggregationMethod::BayesUniform,
            PriorKind::Estimator => AggregationMethod::BayesEstimator,
        }
    }
}

/// What is written next to the ratings log; enough to rebuild the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub session_id: String,
    pub created_at: String,
    pub task_size: usize,
    pub config: SessionConfig,
    pub plan: PlanRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub rater: String,
    pub lease_id: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: usize,
    pub inputs: Vec<usize>,
    /// Raters who have submitted this task.
    pub done: Vec<String>,
    pub leases: Vec<Lease>,
}

impl Task {
    fn open_slots(&self, m: usize) -> usize {
        m.saturating_sub(self.done.len() + self.leases.len())
    }

    fn involves(&self, rater: &str) -> bool {
        self.done.iter().any(|r| r == rater) || self.leases.iter().any(|l| l.rater == rater)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskInput {
    pub input_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asset_uri: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskDocument {
    pub session_id: String,
    pub task_id: usize,
    pub lease_id: String,
    pub concept: String,
    pub expires_at: String,
    pub inputs: Vec<TaskInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateView {
    pub rho: f64,
    pub rho_raw: f64,
    pub n_labeled: usize,
    pub sample_size: usize,
    pub effective_sample_size: f64,
    pub concept_mean: f64,
    pub concept_std: f64,
    pub complete: bool,
    pub partial: bool,
    pub ratings_collected: usize,
    pub ratings_target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateState {
    Ready(EstimateView),
    TooEarly(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Open,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub neuron_id: String,
    pub concept: String,
    pub status: Status,
    pub n_inputs: usize,
    pub unique_inputs: usize,
    pub m: usize,
    pub tasks: usize,
    pub tasks_complete: usize,
    pub ratings_collected: usize,
    pub ratings_target: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("rater `{0}` already holds lease `{1}`")]
    LeaseHeld(String, String),
    #[error("rater `{rater}` holds no active lease on task {task}")]
    LeaseExpired { rater: String, task: usize },
    #[error("task {0} does not exist")]
    UnknownTask(usize),
    #[error("task {task} has {expected} inputs, got {got} ratings")]
    Arity { task: usize, expected: usize, got: usize },
    #[error("rating values must be 0 or 1, got {0}")]
    BadBit(u8),
    #[error(transparent)]
    Core(#[from] Error),
}

/// A validated submission waiting to be persisted and committed.
#[derive(Debug, Clone, PartialEq)]
pub enum Submission {
    Accept { task: usize, rater: String, records: Vec<RatingRecord> },
    Duplicate,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub manifest: Manifest,
    pub sample: Sample,
    pub tasks: Vec<Task>,
    pub records: Vec<RatingRecord>,
    task_of: HashMap<usize, usize>,
    lease_counter: u64,
    estimate: EstimateState,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn check_config(ws: &Workspace, c: &SessionConfig) -> Result<(), Error> {
    ws.activation(&c.neuron_id)?;
    if c.m == 0 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if c.n_inputs < 2 {
        return Err(Error::InvalidArgument("n_inputs must be at least 2".into()));
    }
    NoiseModel::new(c.eta)?;
    c.prior.validate()?;
    if c.prior.kind == PriorKind::Estimator && ws.concept(&c.concept, Provenance::CheapEstimator).is_none() {
        return Err(Error::MissingGuide(format!("estimator prior needs cheap scores for `{}`", c.concept)));
    }
    Ok(())
}

impl Session {
    /// Builds the plan, draws the sample and queues the tasks.
    pub fn create(ws: &Workspace, session_id: String, config: SessionConfig, now: DateTime<Utc>) -> Result<Self, Error> {
        check_config(ws, &config)?;
        let a = ws.activation(&config.neuron_id)?;
        let guide = match config.strategy {
            Strategy::Oracle => ws.concept(&config.concept, Provenance::GroundTruth),
            _ => ws.concept(&config.concept, Provenance::CheapEstimator),
        };
        let plan = build_plan(a, guide, config.strategy, config.epsilon)?;
        let sample = draw_sample(&plan, config.n_inputs, config.seed)?;
        let mut record = PlanRecord::new(&plan, &sample);
        record.neuron_id = Some(config.neuron_id.clone());
        record.concept_id = Some(config.concept.clone());
        let manifest = Manifest {
            session_id,
            created_at: timestamp(now),
            task_size: TASK_SIZE,
            config,
            plan: record,
        };
        Self::restore(ws, manifest, Vec::new())
    }

    /// Rebuilds a session from its manifest and ratings log.
    pub fn restore(ws: &Workspace, manifest: Manifest, records: Vec<RatingRecord>) -> Result<Self, Error> {
        check_config(ws, &manifest.config)?;
        let (_, sample) = manifest.plan.restore()?;
        if manifest.task_size == 0 {
            return Err(Error::InvalidArgument("task size must be positive".into()));
        }
        let tasks: Vec<Task> = sample
            .unique_indices()
            .chunks(manifest.task_size)
            .enumerate()
            .map(|(id, inputs)| Task { id, inputs: inputs.to_vec(), done: Vec::new(), leases: Vec::new() })
            .collect();
        let task_of = tasks
            .iter()
            .flat_map(|t| t.inputs.iter().map(move |&i| (i, t.id)))
            .collect();
        let mut session = Self {
            manifest,
            sample,
            tasks,
            records: Vec::new(),
            task_of,
            lease_counter: 0,
            estimate: EstimateState::TooEarly("no ratings yet".into()),
        };
        for r in &records {
            let i = ws
                .index
                .position(&r.input_id)
                .ok_or_else(|| Error::Parse(format!("log rates unknown input `{}`", r.input_id)))?;
            let t = *session
                .task_of
                .get(&i)
                .ok_or_else(|| Error::Parse(format!("log rates `{}`, which is not in the sample", r.input_id)))?;
            let task = &mut session.tasks[t];
            if !task.done.contains(&r.rater) {
                task.done.push(r.rater.clone());
            }
        }
        session.records = records;
        session.refresh(ws);
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.manifest.session_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.manifest.config
    }

    pub fn is_complete(&self) -> bool {
        let m = self.config().m;
        self.tasks.iter().all(|t| t.done.len() >= m)
    }

    fn ratings_target(&self) -> usize {
        self.tasks.iter().map(|t| t.inputs.len()).sum::<usize>() * self.config().m
    }

    pub fn summary(&self) -> SessionSummary {
        let m = self.config().m;
        SessionSummary {
            session_id: self.id().to_string(),
            neuron_id: self.config().neuron_id.clone(),
            concept: self.config().concept.clone(),
            status: if self.is_complete() { Status::Complete } else { Status::Open },
            n_inputs: self.sample.len(),
            unique_inputs: self.task_of.len(),
            m,
            tasks: self.tasks.len(),
            tasks_complete: self.tasks.iter().filter(|t| t.done.len() >= m).count(),
            ratings_collected: self.records.len(),
            ratings_target: self.ratings_target(),
        }
    }

    /// Releases every lease that expired at or before `now`.
    pub fn expire_leases(&mut self, now: DateTime<Utc>) {
        for t in &mut self.tasks {
            t.leases.retain(|l| l.expires_at > now);
        }
    }

    fn active_lease(&self, rater: &str) -> Option<(usize, &Lease)> {
        self.tasks
            .iter()
            .find_map(|t| t.leases.iter().find(|l| l.rater == rater).map(|l| (t.id, l)))
    }

    /// Leases the first task, in queue order, that still needs a rating and
    /// that this rater has not already taken.
    pub fn next_task(
        &mut self,
        ws: &Workspace,
        rater: &str,
        now: DateTime<Utc>,
        lease: Duration,
    ) -> Result<Option<TaskDocument>, SessionError> {
        self.expire_leases(now);
        if let Some((_, l)) = self.active_lease(rater) {
            return Err(SessionError::LeaseHeld(rater.to_string(), l.lease_id.clone()));
        }
        let m = self.config().m;
        let Some(t) = self.tasks.iter().position(|t| t.open_slots(m) > 0 && !t.involves(rater)) else {
            return Ok(None);
        };
        self.lease_counter += 1;
        let lease = Lease {
            rater: rater.to_string(),
            lease_id: format!("{}-t{}-l{}", self.id(), t, self.lease_counter),
            expires_at: now + lease,
        };
        let task = &mut self.tasks[t];
        task.leases.push(lease.clone());
        Ok(Some(TaskDocument {
            session_id: self.manifest.session_id.clone(),
            task_id: t,
            lease_id: lease.lease_id,
            concept: self.manifest.config.concept.clone(),
            expires_at: timestamp(lease.expires_at),
            inputs: task
                .inputs
                .iter()
                .map(|&i| TaskInput {
                    input_id: ws.index.id(i).to_string(),
                    asset_uri: ws.index.asset_uri(i).map(str::to_string),
                })
                .collect(),
        }))
    }

    /// Validates a submission without changing the ratings.
    pub fn prepare_submit(
        &mut self,
        ws: &Workspace,
        rater: &str,
        task_id: usize,
        bits: &[u8],
        now: DateTime<Utc>,
    ) -> Result<Submission, SessionError> {
        self.expire_leases(now);
        let task = self.tasks.get(task_id).ok_or(SessionError::UnknownTask(task_id))?;
        if task.done.iter().any(|r| r == rater) {
            return Ok(Submission::Duplicate);
        }
        if !task.leases.iter().any(|l| l.rater == rater) {
            return Err(SessionError::LeaseExpired { rater: rater.to_string(), task: task_id });
        }
        if bits.len() != task.inputs.len() {
            return Err(SessionError::Arity { task: task_id, expected: task.inputs.len(), got: bits.len() });
        }
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(SessionError::BadBit(b));
        }
        let ts = timestamp(now);
        let records = task
            .inputs
            .iter()
            .zip(bits)
            .map(|(&i, &rating)| RatingRecord {
                session: self.manifest.session_id.clone(),
                input_id: ws.index.id(i).to_string(),
                concept: self.manifest.config.concept.clone(),
                rater: rater.to_string(),
                rating,
                ts: ts.clone(),
            })
            .collect();
        Ok(Submission::Accept { task: task_id, rater: rater.to_string(), records })
    }

    /// Applies a prepared submission once it is on disk. Returns the number of
    /// ratings accepted.
    pub fn commit(&mut self, ws: &Workspace, submission: Submission) -> usize {
        let Submission::Accept { task, rater, records } = submission else {
            return 0;
        };
        let t = &mut self.tasks[task];
        t.leases.retain(|l| l.rater != rater);
        t.done.push(rater);
        let n = records.len();
        self.records.extend(records);
        self.refresh(ws);
        n
    }

    pub fn estimate(&self) -> &EstimateState {
        &self.estimate
    }

    fn refresh(&mut self, ws: &Workspace) {
        self.estimate = match self.compute_estimate(ws) {
            Ok(view) => EstimateState::Ready(view),
            Err(e) => EstimateState::TooEarly(e.to_string()),
        };
    }

    fn compute_estimate(&self, ws: &Workspace) -> Result<EstimateView, Error> {
        if self.records.is_empty() {
            return Err(Error::InvalidArgument("no ratings yet".into()));
        }
        let c = self.config();
        let a = ws.activation(&c.neuron_id)?;
        let scores = ws.concept(&c.concept, Provenance::CheapEstimator).map(|g| g.values.as_slice());
        let agg = Aggregator::for_method(c.aggregation(), NoiseModel::new(c.eta)?, c.prior, scores)?;
        let sets = group_ratings(&self.records, &ws.index)?;
        let labels = aggregate_labels(&sets, &agg)?;
        let est = estimate_from_labels(a, &self.sample, &labels)?;
        Ok(EstimateView {
            rho: est.estimate.rho,
            rho_raw: est.estimate.rho_raw,
            n_labeled: est.n_labeled,
            sample_size: self.sample.len(),
            effective_sample_size: est.estimate.effective_sample_size,
            concept_mean: est.estimate.concept_mean,
            concept_std: est.estimate.concept_std,
            complete: self.is_complete(),
            partial: est.partial || !self.is_complete(),
            ratings_collected: self.records.len(),
            ratings_target: self.ratings_target(),
        })
    }
}
