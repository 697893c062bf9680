//! Importance sampling with prior or learned proposals.
//!
//! Posterior file layout (trace-file encodings throughout):
//!
//! ```text
//! "PXP" version:u8 dict_count:u32 dict_count × raw:string
//! sample_count:u32 sample_count × (log_weight:f64 trace)
//! ```

use std::path::Path;

use crate::controller::{
    run_batch, BatchError, ConditionSet, ControllerError, ExecutionMode, ProposalProvider, Simulator,
};
use crate::distributions::special::log_sum_exp;
use crate::protocol::codec::{Reader, Writer};
use crate::trace::io::{read_header, write_header};
use crate::trace::{read_trace, write_trace, AddressDictionary, Trace, TraceIoError};
use crate::value::Value;

pub const POSTERIOR_MAGIC: [u8; 3] = *b"PXP";

/// `Σ_observed log g + Σ_latent (log f − log q)`.
pub fn importance_log_weight(t: &Trace) -> f64 {
    let mut w = 0.0;
    for e in &t.entries {
        if e.log_prob == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        if e.is_latent() {
            w += e.log_prob - e.proposal_log_prob;
        } else {
            w += e.log_prob;
        }
    }
    w
}

/// Weighted traces with a cached log-sum-exp normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPosterior {
    log_weights: Vec<f64>,
    traces: Vec<Trace>,
    normalizer: f64,
}

impl WeightedPosterior {
    pub fn new(traces: Vec<Trace>, log_weights: Vec<f64>) -> Self {
        assert_eq!(traces.len(), log_weights.len(), "one weight per trace");
        let normalizer = log_sum_exp(&log_weights);
        Self {
            log_weights,
            traces,
            normalizer,
        }
    }

    /// Weights each trace by [`importance_log_weight`].
    pub fn from_traces(traces: Vec<Trace>) -> Self {
        let w = traces.iter().map(importance_log_weight).collect();
        Self::new(traces, w)
    }

    /// Equal weights, as for an MCMC chain.
    pub fn uniform(traces: Vec<Trace>) -> Self {
        let w = vec![0.0; traces.len()];
        Self::new(traces, w)
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn log_normalizer(&self) -> f64 {
        self.normalizer
    }

    /// Log of the mean unnormalized weight, an estimate of log p(y).
    pub fn log_evidence(&self) -> f64 {
        self.normalizer - (self.len() as f64).ln()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Trace)> {
        self.log_weights.iter().copied().zip(&self.traces)
    }

    /// Self-normalized weights; all zero when every log weight is −∞.
    pub fn normalized_weights(&self) -> Vec<f64> {
        if !self.normalizer.is_finite() {
            return vec![0.0; self.len()];
        }
        self.log_weights
            .iter()
            .map(|w| (w - self.normalizer).exp())
            .collect()
    }

    /// `(Σw)² / Σw²`; 0 when every weight is zero.
    pub fn ess(&self) -> f64 {
        if !self.normalizer.is_finite() {
            return 0.0;
        }
        let sq = log_sum_exp(&self.log_weights.iter().map(|w| 2.0 * w).collect::<Vec<_>>());
        (2.0 * self.normalizer - sq).exp()
    }

    /// Self-normalized expectation of `f` over traces where it is defined.
    /// Returns `None` when no weighted trace defines it.
    pub fn expectation(&self, f: impl Fn(&Trace) -> Option<f64>) -> Option<f64> {
        let w = self.normalized_weights();
        let mut num = 0.0;
        let mut den = 0.0;
        for (wi, t) in w.iter().zip(&self.traces) {
            if *wi == 0.0 {
                continue;
            }
            if let Some(x) = f(t) {
                num += wi * x;
                den += wi;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    /// Weighted mean and variance of the real value at `(raw, instance)`.
    pub fn moments(&self, raw: &str, instance: u32) -> Option<(f64, f64)> {
        let value = |t: &Trace| t.find(raw, instance).and_then(|e| e.value.as_f64());
        let mean = self.expectation(value)?;
        let var = self.expectation(|t| value(t).map(|x| (x - mean).powi(2)))?;
        Some((mean, var))
    }

    pub fn into_parts(self) -> (Vec<Trace>, Vec<f64>) {
        (self.traces, self.log_weights)
    }
}

/// Prior-proposal importance sampling over `n` traces.
pub fn infer_is<S: Simulator>(
    sims: &mut [S],
    conditions: &ConditionSet,
    observation: Option<&Value>,
    n: usize,
    seed: u64,
) -> Result<WeightedPosterior, BatchError> {
    let traces = run_batch(sims, ExecutionMode::ImportancePrior, conditions, observation, n, seed)?;
    Ok(WeightedPosterior::from_traces(traces))
}

/// Importance sampling with learned proposals at controlled, non-replaced sites.
pub fn infer_ic<S: Simulator>(
    sims: &mut [S],
    proposals: &dyn ProposalProvider,
    conditions: &ConditionSet,
    observation: Option<&Value>,
    n: usize,
    seed: u64,
) -> Result<WeightedPosterior, BatchError> {
    proposals.check_observation(observation).map_err(|m| BatchError {
        worker: 0,
        completed: 0,
        source: ControllerError::Observation(m),
    })?;
    let traces = run_batch(
        sims,
        ExecutionMode::ImportanceGuided { proposals },
        conditions,
        observation,
        n,
        seed,
    )?;
    Ok(WeightedPosterior::from_traces(traces))
}

pub fn save_posterior(path: &Path, p: &WeightedPosterior) -> Result<(), TraceIoError> {
    let dict = AddressDictionary::from_traces(&p.traces);
    let mut w = Writer::new();
    write_header(&mut w, &POSTERIOR_MAGIC, &dict);
    w.u32(p.len() as u32);
    for (lw, t) in p.iter() {
        w.f64(lw);
        write_trace(&mut w, &dict, t);
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(())
}

pub fn load_posterior(path: &Path) -> Result<(AddressDictionary, WeightedPosterior), TraceIoError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    let dict = read_header(&mut r, &POSTERIOR_MAGIC)?;
    let n = r.u32()? as usize;
    let mut traces = Vec::with_capacity(n.min(r.remaining() / 21));
    let mut weights = Vec::with_capacity(traces.capacity());
    for _ in 0..n {
        weights.push(r.f64()?);
        traces.push(read_trace(&mut r, &dict)?);
    }
    r.finish()?;
    Ok((dict, WeightedPosterior::new(traces, weights)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::DistributionSpec;
    use crate::trace::fixtures::*;

    fn trace_with(lws: f64) -> Trace {
        let d = DistributionSpec::normal(0.0, 1.0).unwrap();
        let mut e = latent("x", 1, d, Value::Real(0.0));
        e.proposal_log_prob = e.log_prob - lws;
        Trace::new(vec![e], None)
    }

    #[test]
    fn weight_is_zero_without_observes() {
        let t = Trace::new(
            vec![latent("x", 1, DistributionSpec::uniform(0.0, 1.0).unwrap(), Value::Real(0.2))],
            None,
        );
        assert_eq!(importance_log_weight(&t), 0.0);
    }

    #[test]
    fn weight_of_standard_normal_observation() {
        let t = Trace::new(
            vec![observed("y", 1, DistributionSpec::normal(0.0, 1.0).unwrap(), Value::Real(0.0))],
            None,
        );
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((importance_log_weight(&t) - expected).abs() < 1e-15);
    }

    #[test]
    fn ess_of_weights() {
        let ts: Vec<Trace> = [2f64, 1.0, 1.0].iter().map(|w| trace_with(w.ln())).collect();
        let p = WeightedPosterior::from_traces(ts);
        assert!((p.ess() - 16.0 / 6.0).abs() < 1e-12);
        let s: f64 = p.normalized_weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shift_invariance() {
        let ts: Vec<Trace> = (0..5).map(|i| trace_with(i as f64 * 0.3)).collect();
        let a = WeightedPosterior::new(ts.clone(), (0..5).map(|i| i as f64 * 0.3).collect());
        let b = WeightedPosterior::new(ts, (0..5).map(|i| i as f64 * 0.3 - 700.0).collect());
        for (x, y) in a.normalized_weights().iter().zip(b.normalized_weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.ess() - b.ess()).abs() < 1e-10);
    }

    #[test]
    fn all_impossible_weights() {
        let ts = vec![trace_with(0.0); 3];
        let p = WeightedPosterior::new(ts, vec![f64::NEG_INFINITY; 3]);
        assert_eq!(p.ess(), 0.0);
        assert_eq!(p.len(), 3);
        assert!(p.expectation(|_| Some(1.0)).is_none());
    }

    #[test]
    fn posterior_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pxp");
        let ts: Vec<Trace> = (0..4).map(|i| trace_with(i as f64)).collect();
        let p = WeightedPosterior::new(ts, vec![0.0, -1.0, f64::NEG_INFINITY, 2.5]);
        save_posterior(&path, &p).unwrap();
        let (dict, q) = load_posterior(&path).unwrap();
        assert_eq!(dict.len(), 1);
        assert_eq!(p.log_weights(), q.log_weights());
        assert_eq!(p.traces(), q.traces());
    }
}
