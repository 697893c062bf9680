//! Drives simulators through traces under an execution mode.

mod batch;
mod simulator;

use std::collections::HashMap;

use thiserror::Error;

use crate::distributions::{DistributionError, DistributionSpec, Rng};
use crate::frontend::{Abort, SiteHandler};
use crate::protocol::{ObserveRequest, ProtocolError, SampleRequest};
use crate::trace::{Address, EntryKind, Trace, TraceEntry};
use crate::value::Value;

pub use batch::{run_batch, BatchError};
pub use simulator::{LocalSimulator, RemoteSimulator, RunError, Simulator};

/// Training-time tempering of categorical priors.
#[derive(Debug, Clone, PartialEq)]
pub struct InflationConfig {
    /// Raw addresses to inflate. `*` matches every address; a trailing `*` is a prefix match.
    pub addresses: Vec<String>,
    /// Temperature in [0, 1]; 0 gives uniform over the classes with positive prior mass.
    pub alpha: f64,
}

impl InflationConfig {
    pub fn new(addresses: Vec<String>, alpha: f64) -> Result<Self, ControllerError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ControllerError::InvalidConfig(format!(
                "inflation temperature {alpha} outside [0, 1]"
            )));
        }
        Ok(Self { addresses, alpha })
    }

    pub fn all(alpha: f64) -> Result<Self, ControllerError> {
        Self::new(vec!["*".into()], alpha)
    }

    pub fn matches(&self, raw: &str) -> bool {
        self.addresses.iter().any(|p| match p.strip_suffix('*') {
            Some(prefix) => raw.starts_with(prefix),
            None => p == raw,
        })
    }
}

/// Proposals for one trace, produced incrementally as sites are visited.
pub trait ProposalSession {
    /// A proposal for this site, or `None` to draw from the prior.
    fn propose(
        &mut self,
        address: &Address,
        instance: u32,
        prior: &DistributionSpec,
    ) -> Option<DistributionSpec>;
    /// Told the value drawn at the site last proposed for.
    fn record(&mut self, value: &Value);
}

/// Source of per-trace [`ProposalSession`]s, such as a trained network.
pub trait ProposalProvider: Sync {
    fn session<'a>(&'a self, observation: Option<&Value>) -> Box<dyn ProposalSession + 'a>;

    /// Rejects observations the provider cannot condition on. Proposals are
    /// made before the model reaches its observes, so a provider that needs
    /// the observation must be given it up front.
    fn check_observation(&self, _observation: Option<&Value>) -> Result<(), String> {
        Ok(())
    }
}

/// A proposed replacement at one site for a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMove {
    pub address: Address,
    pub instance: u32,
    pub value: Value,
}

#[derive(Clone, Copy)]
pub enum ExecutionMode<'a> {
    /// Prior draws, optionally with inflated categoricals recorded as the
    /// proposal. Without an explicit observation, observed values are drawn
    /// from their likelihoods.
    Record { inflation: Option<&'a InflationConfig> },
    ImportancePrior,
    /// Learned proposals at controlled, non-replaced sites the provider knows.
    ImportanceGuided { proposals: &'a dyn ProposalProvider },
    /// Re-execute `base`, reusing its values by `(address, instance)`;
    /// `site` (if any) receives the given value, new sites draw from the prior.
    Replay {
        base: &'a Trace,
        site: Option<&'a SiteMove>,
    },
}

impl std::fmt::Debug for ExecutionMode<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecutionMode::Record { inflation } => {
                f.debug_struct("Record").field("inflation", inflation).finish()
            }
            ExecutionMode::ImportancePrior => f.write_str("ImportancePrior"),
            ExecutionMode::ImportanceGuided { .. } => f.write_str("ImportanceGuided"),
            ExecutionMode::Replay { site, .. } => {
                f.debug_struct("Replay").field("site", site).finish_non_exhaustive()
            }
        }
    }
}

/// Latent values fixed by `(raw address, instance)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConditionSet {
    values: HashMap<Address, HashMap<u32, Value>>,
}

impl ConditionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, raw: &str, instance: u32, value: Value) -> Self {
        self.insert(raw, instance, value);
        self
    }

    pub fn insert(&mut self, raw: &str, instance: u32, value: Value) {
        self.values
            .entry(Address::new(raw))
            .or_default()
            .insert(instance, value);
    }

    pub fn get(&self, raw: &str, instance: u32) -> Option<&Value> {
        self.values.get(raw)?.get(&instance)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn len(&self) -> usize {
        self.values.values().map(HashMap::len).sum()
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("simulator error (code {code}): {message}")]
    Simulator { message: String, code: i64 },
    #[error("condition at {address}#{instance} is outside the prior support: {reason}")]
    ConditionOutsideSupport {
        address: String,
        instance: u32,
        reason: String,
    },
    #[error("proposal at {address}#{instance} is not contained in the prior support")]
    ProposalSupport { address: String, instance: u32 },
    #[error("observation does not fit the model: {0}")]
    Observation(String),
    #[error("at {address}#{instance}: {source}")]
    Distribution {
        address: String,
        instance: u32,
        source: DistributionError,
    },
    #[error("replay site {address}#{instance} was never visited")]
    SiteNotVisited { address: String, instance: u32 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl ControllerError {
    /// Errors that end the connection rather than only the trace.
    pub fn is_fatal(&self) -> bool {
        matches!(self, ControllerError::Protocol(_))
    }
}

/// How an entry's value came about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    /// Drawn from the prior or a proposal (non-replay modes), or new in a replay.
    Fresh,
    /// Copied from the replay base.
    Reused,
    /// The replay's moved site.
    Site,
    Conditioned,
    Observed,
}

/// A trace plus the origin of each entry (reused or fresh).
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub trace: Trace,
    pub origins: Vec<Origin>,
}

struct Recorder<'a, 'r> {
    mode: ExecutionMode<'a>,
    conditions: &'a ConditionSet,
    observation: Option<Vec<f64>>,
    obs_pos: usize,
    rng: &'r mut Rng,
    proposals: Option<Box<dyn ProposalSession + 'a>>,
    base_index: HashMap<(&'a str, u32), usize>,
    instances: HashMap<String, u32>,
    entries: Vec<TraceEntry>,
    origins: Vec<Origin>,
    error: Option<ControllerError>,
}

impl<'a> Recorder<'a, '_> {
    fn next_instance(&mut self, raw: &str) -> u32 {
        match self.instances.get_mut(raw) {
            Some(c) => {
                *c += 1;
                *c
            }
            None => {
                self.instances.insert(raw.to_owned(), 1);
                1
            }
        }
    }

    fn fail(&mut self, e: ControllerError) -> Abort {
        self.error = Some(e);
        Abort
    }

    fn score(&mut self, d: &DistributionSpec, v: &Value, raw: &str, instance: u32) -> Result<f64, Abort> {
        d.log_prob(v).map_err(|source| {
            self.fail(ControllerError::Distribution {
                address: raw.to_owned(),
                instance,
                source,
            })
        })
    }

    /// Chooses the value for a non-conditioned site. Returns (value, log q, origin).
    fn draw(
        &mut self,
        req: &SampleRequest,
        address: &Address,
        instance: u32,
    ) -> Result<(Value, Option<f64>, Origin), Abort> {
        let prior = &req.distribution;
        let simple = req.control && !req.replace;
        match self.mode {
            ExecutionMode::Record { inflation } => {
                if let Some(cfg) = inflation {
                    if simple
                        && matches!(prior, DistributionSpec::Categorical { .. })
                        && cfg.matches(&req.address)
                    {
                        let q = prior.inflate(cfg.alpha);
                        let v = q.sample(self.rng);
                        let lq = self.score(&q, &v, &req.address, instance)?;
                        return Ok((v, Some(lq), Origin::Fresh));
                    }
                }
                Ok((prior.sample(self.rng), None, Origin::Fresh))
            }
            ExecutionMode::ImportancePrior => Ok((prior.sample(self.rng), None, Origin::Fresh)),
            ExecutionMode::ImportanceGuided { .. } => {
                let proposal = match (&mut self.proposals, simple) {
                    (Some(s), true) => s.propose(address, instance, prior),
                    _ => None,
                };
                let Some(q) = proposal else {
                    return Ok((prior.sample(self.rng), None, Origin::Fresh));
                };
                if !prior.support().contains_support(&q.support()) {
                    return Err(self.fail(ControllerError::ProposalSupport {
                        address: req.address.clone(),
                        instance,
                    }));
                }
                let v = q.sample(self.rng);
                let lq = self.score(&q, &v, &req.address, instance)?;
                if let Some(s) = &mut self.proposals {
                    s.record(&v);
                }
                Ok((v, Some(lq), Origin::Fresh))
            }
            ExecutionMode::Replay { base, site } => {
                if let Some(m) = site {
                    if m.instance == instance && m.address.raw() == req.address {
                        return Ok((m.value.clone(), None, Origin::Site));
                    }
                }
                if let Some(&i) = self.base_index.get(&(req.address.as_str(), instance)) {
                    let old = &base.entries[i];
                    if old.is_latent()
                        && prior.log_prob(&old.value).is_ok_and(|lp| lp > f64::NEG_INFINITY)
                    {
                        return Ok((old.value.clone(), None, Origin::Reused));
                    }
                }
                Ok((prior.sample(self.rng), None, Origin::Fresh))
            }
        }
    }
}

impl SiteHandler for Recorder<'_, '_> {
    fn sample(&mut self, req: &SampleRequest) -> Result<Value, Abort> {
        let instance = self.next_instance(&req.address);
        let address = Address::new(&req.address);
        let prior = &req.distribution;
        let (value, log_q, origin, conditioned) = match self.conditions.get(&req.address, instance) {
            Some(v) => {
                let lp = prior.log_prob(v);
                match lp {
                    Ok(lp) if lp > f64::NEG_INFINITY => {}
                    Ok(_) => {
                        return Err(self.fail(ControllerError::ConditionOutsideSupport {
                            address: req.address.clone(),
                            instance,
                            reason: format!("{v} has zero density under {prior}"),
                        }))
                    }
                    Err(e) => {
                        return Err(self.fail(ControllerError::ConditionOutsideSupport {
                            address: req.address.clone(),
                            instance,
                            reason: e.to_string(),
                        }))
                    }
                }
                (v.clone(), Some(0.0), Origin::Conditioned, true)
            }
            None => {
                let (v, lq, o) = self.draw(req, &address, instance)?;
                (v, lq, o, false)
            }
        };
        let log_prob = self.score(prior, &value, &req.address, instance)?;
        self.entries.push(TraceEntry {
            address,
            instance,
            distribution: prior.clone(),
            value: value.clone(),
            log_prob,
            proposal_log_prob: log_q.unwrap_or(log_prob),
            kind: EntryKind::Latent,
            controlled: req.control,
            replaced: req.replace,
            conditioned,
        });
        self.origins.push(origin);
        Ok(value)
    }

    fn observe(&mut self, req: &ObserveRequest) -> Result<(), Abort> {
        let instance = self.next_instance(&req.address);
        let value = match &self.observation {
            // Training pairs: the datum is drawn from the likelihood so (x, y) ~ p(x, y).
            None if matches!(self.mode, ExecutionMode::Record { .. }) => {
                req.distribution.sample(self.rng)
            }
            None => req.value.clone(),
            Some(elements) => {
                let n = req.value.element_count();
                let rest = &elements[self.obs_pos.min(elements.len())..];
                if rest.len() < n {
                    let have = elements.len();
                    return Err(self.fail(ControllerError::Observation(format!(
                        "observe at {}#{instance} needs {n} more element(s) but the observation has {have} in total",
                        req.address
                    ))));
                }
                let Some(v) = req.value.with_elements_like(&rest[..n]) else {
                    return Err(self.fail(ControllerError::Observation(format!(
                        "elements {}..{} do not form a {} like the simulator's value at {}",
                        self.obs_pos,
                        self.obs_pos + n,
                        crate::distributions::value_kind_name(&req.value),
                        req.address
                    ))));
                };
                self.obs_pos += n;
                v
            }
        };
        let log_prob = self.score(&req.distribution, &value, &req.address, instance)?;
        self.entries.push(TraceEntry {
            address: Address::new(&req.address),
            instance,
            distribution: req.distribution.clone(),
            value,
            log_prob,
            proposal_log_prob: 0.0,
            kind: EntryKind::Observed,
            controlled: false,
            replaced: false,
            conditioned: false,
        });
        self.origins.push(Origin::Observed);
        Ok(())
    }
}

/// Runs one trace and returns it with the origin of each entry.
pub fn execute<S: Simulator + ?Sized>(
    sim: &mut S,
    mode: ExecutionMode<'_>,
    conditions: &ConditionSet,
    observation: Option<&Value>,
    rng: &mut Rng,
) -> Result<Execution, ControllerError> {
    let proposals = match mode {
        ExecutionMode::ImportanceGuided { proposals } => Some(proposals.session(observation)),
        _ => None,
    };
    let base_index = match mode {
        ExecutionMode::Replay { base, .. } => base
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.address.raw(), e.instance), i))
            .collect(),
        _ => HashMap::new(),
    };
    let observation = observation.map(|v| {
        let mut out = Vec::with_capacity(v.element_count());
        v.flatten_into(&mut out);
        out
    });
    let mut rec = Recorder {
        mode,
        conditions,
        observation,
        obs_pos: 0,
        rng,
        proposals,
        base_index,
        instances: HashMap::new(),
        entries: Vec::new(),
        origins: Vec::new(),
        error: None,
    };
    let outcome = sim.run(&mut rec);
    let result = match outcome {
        Ok(r) => r,
        Err(RunError::Aborted) => {
            return Err(rec.error.take().unwrap_or_else(|| {
                ControllerError::Simulator {
                    message: "trace aborted".into(),
                    code: crate::protocol::ERROR_CODE_ABORTED,
                }
            }))
        }
        Err(RunError::Simulator { message, code }) => {
            return Err(ControllerError::Simulator { message, code })
        }
        Err(RunError::Protocol(e)) => return Err(e.into()),
    };
    if let Some(elements) = &rec.observation {
        if rec.obs_pos != elements.len() {
            return Err(ControllerError::Observation(format!(
                "the model observed {} element(s) but the observation has {}",
                rec.obs_pos,
                elements.len()
            )));
        }
    }
    if let ExecutionMode::Replay { site: Some(m), .. } = mode {
        if !rec.origins.contains(&Origin::Site) {
            return Err(ControllerError::SiteNotVisited {
                address: m.address.to_string(),
                instance: m.instance,
            });
        }
    }
    Ok(Execution {
        trace: Trace::new(rec.entries, result),
        origins: rec.origins,
    })
}

/// Runs one trace.
pub fn execute_trace<S: Simulator + ?Sized>(
    sim: &mut S,
    mode: ExecutionMode<'_>,
    conditions: &ConditionSet,
    observation: Option<&Value>,
    rng: &mut Rng,
) -> Result<Trace, ControllerError> {
    execute(sim, mode, conditions, observation, rng).map(|e| e.trace)
}
