//! Single-site Metropolis–Hastings in trace space.
//!
//! A step picks one free latent site `s` uniformly, proposes a value there,
//! re-executes the program reusing every other value it can (matched by
//! `(address, instance)`) and accepts with
//!
//! ```text
//! log α = log p(x′) − log p(x) + log |L| − log |L′|
//!       + log κ(x_s | x′_s) − log κ(x′_s | x_s)
//!       + Σ_stale log f − Σ_fresh log f
//! ```
//!
//! where `L`, `L′` are the free latent entries, "fresh" entries were newly
//! drawn in `x′` and "stale" entries of `x` were not reused. For LMH the site
//! kernel κ is the prior at the site.
//!
//! Chain sidecar layout: `"PXS" version:u8 count:u64` then `count × (log_joint:f64 accepted:u8)`.

use std::collections::HashSet;
use std::path::Path;

use crate::controller::{
    execute, execute_trace, ConditionSet, ControllerError, ExecutionMode, Origin, Simulator,
    SiteMove,
};
use crate::distributions::{DistributionSpec, Rng};
use crate::protocol::codec::{Reader, Writer};
use crate::trace::{Trace, TraceIoError};
use crate::value::Value;

pub const SIDECAR_MAGIC: [u8; 3] = *b"PXS";
pub const SIDECAR_VERSION: u8 = 1;

/// Local proposal rules for RMH.
///
/// Bounded continuous priors (Uniform, truncated normals, mixtures) use a
/// Gaussian step of scale `sigma · (high − low)` reflected back into the
/// interval; Normal priors a Gaussian step of scale `sigma · std`;
/// Categorical and Poisson sites are resampled from the prior. Every rule is
/// either symmetric or has computable forward and reverse densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RwKernelConfig {
    pub sigma: f64,
}

impl Default for RwKernelConfig {
    fn default() -> Self {
        Self { sigma: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// Propose from the prior at the site (LMH).
    Prior,
    RandomWalk(RwKernelConfig),
}

/// Reflects `x` into `[low, high]`.
fn reflect(x: f64, low: f64, high: f64) -> f64 {
    let w = high - low;
    let y = (x - low).rem_euclid(2.0 * w);
    let y = if y > w { 2.0 * w - y } else { y };
    low + y
}

/// Draws the site proposal and returns `(value, log κ(new|old) − log κ(old|new))`.
fn propose(kernel: Kernel, prior: &DistributionSpec, old: &Value, rng: &mut Rng) -> (Value, f64) {
    let from_prior = |rng: &mut Rng| {
        let v = prior.sample(rng);
        let fwd = prior.log_prob(&v).unwrap_or(f64::NEG_INFINITY);
        let rev = prior.log_prob(old).unwrap_or(f64::NEG_INFINITY);
        (v, fwd - rev)
    };
    let cfg = match kernel {
        Kernel::Prior => return from_prior(rng),
        Kernel::RandomWalk(cfg) => cfg,
    };
    let Some(x) = (match old {
        Value::Real(x) => Some(*x),
        _ => None,
    }) else {
        return from_prior(rng);
    };
    match prior {
        DistributionSpec::Normal { std, .. } => {
            let step = cfg.sigma * std;
            (Value::Real(x + step * rng.standard_normal()), 0.0)
        }
        DistributionSpec::Uniform { .. }
        | DistributionSpec::TruncatedNormal(_)
        | DistributionSpec::MixtureTruncatedNormal { .. } => {
            let crate::distributions::Support::Interval { low, high } = prior.support() else {
                unreachable!("bounded continuous support")
            };
            let step = cfg.sigma * (high - low);
            let z = rng.standard_normal();
            (Value::Real(reflect(x + step * z, low, high)), 0.0)
        }
        DistributionSpec::Categorical { .. } | DistributionSpec::Poisson { .. } => from_prior(rng),
    }
}

/// Chain state.
#[derive(Debug, Clone)]
pub struct MhState {
    pub current: Trace,
    pub iteration: u64,
    pub accepted: u64,
    /// Steps rejected because the re-execution failed.
    pub failed: u64,
    pub rng: Rng,
}

impl MhState {
    pub fn new(initial: Trace, rng: Rng) -> Self {
        Self {
            current: initial,
            iteration: 0,
            accepted: 0,
            failed: 0,
            rng,
        }
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.iteration == 0 {
            0.0
        } else {
            self.accepted as f64 / self.iteration as f64
        }
    }
}

/// What one step did.
#[derive(Debug)]
pub struct StepOutcome {
    pub accepted: bool,
    /// `None` when no proposal was made (no eligible site or failed run).
    pub log_alpha: Option<f64>,
    pub no_eligible_site: bool,
    /// The re-execution failed; counted as a rejection.
    pub failure: Option<ControllerError>,
}

/// Acceptance test on `min(0, log α)`.
pub fn accept(log_alpha: f64, rng: &mut Rng) -> bool {
    if log_alpha.is_nan() {
        return false;
    }
    let u = rng.uniform_open();
    u.ln() < log_alpha.min(0.0)
}

/// `log α` for a move from `x` to `x′` given the replay origin of each entry in `x′`.
pub fn log_acceptance(
    x: &Trace,
    proposed: &Trace,
    origins: &[Origin],
    site: (&str, u32),
    log_kernel_ratio: f64,
) -> f64 {
    if proposed.log_joint() == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let free = |t: &Trace| t.entries.iter().filter(|e| e.is_free()).count() as f64;
    let mut fresh = 0.0;
    let mut reused: HashSet<(&str, u32)> = HashSet::new();
    for (e, o) in proposed.entries.iter().zip(origins) {
        match o {
            Origin::Fresh if e.is_latent() => fresh += e.log_prob,
            Origin::Reused => {
                reused.insert(e.site());
            }
            _ => {}
        }
    }
    let stale: f64 = x
        .entries
        .iter()
        .filter(|e| e.is_free() && e.site() != site && !reused.contains(&e.site()))
        .map(|e| e.log_prob)
        .sum();
    proposed.log_joint() - x.log_joint() + free(x).ln() - free(proposed).ln() - log_kernel_ratio
        + stale
        - fresh
}

/// One MH step with the given site kernel.
pub fn mh_step<S: Simulator + ?Sized>(
    state: &mut MhState,
    sim: &mut S,
    conditions: &ConditionSet,
    observation: Option<&Value>,
    kernel: Kernel,
) -> Result<StepOutcome, ControllerError> {
    state.iteration += 1;
    let eligible: Vec<usize> = state
        .current
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_free())
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Ok(StepOutcome {
            accepted: false,
            log_alpha: None,
            no_eligible_site: true,
            failure: None,
        });
    }
    let pick = eligible[state.rng.index(eligible.len())];
    let entry = &state.current.entries[pick];
    let (value, log_kernel_ratio) = propose(kernel, &entry.distribution, &entry.value, &mut state.rng);
    let mv = SiteMove {
        address: entry.address.clone(),
        instance: entry.instance,
        value,
    };
    let replay = execute(
        sim,
        ExecutionMode::Replay {
            base: &state.current,
            site: Some(&mv),
        },
        conditions,
        observation,
        &mut state.rng,
    );
    let exec = match replay {
        Ok(e) => e,
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => {
            state.failed += 1;
            return Ok(StepOutcome {
                accepted: false,
                log_alpha: None,
                no_eligible_site: false,
                failure: Some(e),
            });
        }
    };
    let log_alpha = log_acceptance(
        &state.current,
        &exec.trace,
        &exec.origins,
        (mv.address.raw(), mv.instance),
        log_kernel_ratio,
    );
    let accepted = accept(log_alpha, &mut state.rng);
    if accepted {
        state.current = exec.trace;
        state.accepted += 1;
    }
    Ok(StepOutcome {
        accepted,
        log_alpha: Some(log_alpha),
        no_eligible_site: false,
        failure: None,
    })
}

pub fn lmh_step<S: Simulator + ?Sized>(
    state: &mut MhState,
    sim: &mut S,
    conditions: &ConditionSet,
    observation: Option<&Value>,
) -> Result<StepOutcome, ControllerError> {
    mh_step(state, sim, conditions, observation, Kernel::Prior)
}

pub fn rmh_step<S: Simulator + ?Sized>(
    state: &mut MhState,
    sim: &mut S,
    conditions: &ConditionSet,
    observation: Option<&Value>,
    kernel: RwKernelConfig,
) -> Result<StepOutcome, ControllerError> {
    mh_step(state, sim, conditions, observation, Kernel::RandomWalk(kernel))
}

/// Where a chain starts.
#[derive(Debug, Clone)]
pub enum ChainInit {
    Trace(Trace),
    /// A trace drawn from the prior (retried until its joint density is positive).
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub kernel: Kernel,
    pub seed: u64,
}

/// Post-burn-in, thinned samples plus the per-step series.
#[derive(Debug, Clone)]
pub struct Chain {
    pub samples: Vec<Trace>,
    /// Joint log density of the current trace after every step.
    pub log_joints: Vec<f64>,
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
    pub failed_steps: u64,
    /// Set when the trace had no free latent site; the chain then repeats the initial trace.
    pub no_eligible_sites: bool,
}

const PRIOR_INIT_ATTEMPTS: usize = 1000;

pub fn run_chain<S: Simulator + ?Sized>(
    sim: &mut S,
    init: ChainInit,
    cfg: &ChainConfig,
    conditions: &ConditionSet,
    observation: Option<&Value>,
) -> Result<Chain, ControllerError> {
    if cfg.thinning == 0 {
        return Err(ControllerError::InvalidConfig("thinning must be at least 1".into()));
    }
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let initial = match init {
        ChainInit::Trace(t) => t,
        ChainInit::Prior => {
            let mut found = None;
            for _ in 0..PRIOR_INIT_ATTEMPTS {
                let t = execute_trace(sim, ExecutionMode::ImportancePrior, conditions, observation, &mut rng)?;
                if t.log_joint() > f64::NEG_INFINITY {
                    found = Some(t);
                    break;
                }
            }
            found.ok_or_else(|| {
                ControllerError::InvalidConfig(format!(
                    "no prior trace with positive density in {PRIOR_INIT_ATTEMPTS} attempts"
                ))
            })?
        }
    };
    let mut state = MhState::new(initial, rng);
    let keep = cfg.steps.saturating_sub(cfg.burn_in) / cfg.thinning;
    let mut chain = Chain {
        samples: Vec::with_capacity(keep),
        log_joints: Vec::with_capacity(cfg.steps),
        accepted: Vec::with_capacity(cfg.steps),
        acceptance_rate: 0.0,
        failed_steps: 0,
        no_eligible_sites: false,
    };
    for t in 1..=cfg.steps {
        let out = mh_step(&mut state, sim, conditions, observation, cfg.kernel)?;
        chain.no_eligible_sites |= out.no_eligible_site;
        chain.log_joints.push(state.current.log_joint());
        chain.accepted.push(out.accepted);
        if t > cfg.burn_in && (t - cfg.burn_in).is_multiple_of(cfg.thinning) {
            chain.samples.push(state.current.clone());
        }
    }
    chain.acceptance_rate = state.acceptance_rate();
    chain.failed_steps = state.failed;
    Ok(chain)
}

pub fn save_sidecar(path: &Path, log_joints: &[f64], accepted: &[bool]) -> Result<(), TraceIoError> {
    assert_eq!(log_joints.len(), accepted.len());
    let mut w = Writer::new();
    w.bytes(&SIDECAR_MAGIC);
    w.u8(SIDECAR_VERSION);
    w.u64(log_joints.len() as u64);
    for (lj, a) in log_joints.iter().zip(accepted) {
        w.f64(*lj);
        w.bool(*a);
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

pub fn load_sidecar(path: &Path) -> Result<(Vec<f64>, Vec<bool>), TraceIoError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    if r.take(3)? != SIDECAR_MAGIC {
        return Err(TraceIoError::Corrupt {
            offset: 0,
            reason: "bad sidecar magic".into(),
        });
    }
    let version = r.u8()?;
    if version != SIDECAR_VERSION {
        return Err(TraceIoError::Corrupt {
            offset: 3,
            reason: format!("unsupported version {version}"),
        });
    }
    let n = r.u64()? as usize;
    if n.saturating_mul(9) != r.remaining() {
        return Err(TraceIoError::Corrupt {
            offset: r.offset(),
            reason: format!("{n} records do not match {} remaining bytes", r.remaining()),
        });
    }
    let mut lj = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for _ in 0..n {
        lj.push(r.f64()?);
        acc.push(r.bool()?);
    }
    Ok((lj, acc))
}
