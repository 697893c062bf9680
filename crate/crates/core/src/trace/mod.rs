//! Execution traces: addressed random choices, observations and the joint density.

pub(crate) mod io;

use std::borrow::Borrow;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::distributions::DistributionSpec;
use crate::value::Value;

pub use io::{
    load_traces, read_trace, save_traces, write_trace, write_trace_file, TraceFile, TraceIoError,
    TRACE_FILE_VERSION, TRACE_MAGIC,
};

/// A raw, client-supplied address string. Cheap to clone.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(Arc<str>);

impl Address {
    pub fn new(raw: &str) -> Self {
        Address(Arc::from(raw))
    }

    pub fn raw(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Address {
    fn from(s: &str) -> Self {
        Address::new(s)
    }
}

impl From<String> for Address {
    fn from(s: String) -> Self {
        Address(Arc::from(s))
    }
}

impl Borrow<str> for Address {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Injective, first-seen-ordered map from raw addresses to short ids `A1`, `A2`, …
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressDictionary {
    addresses: Vec<Address>,
    index: HashMap<Address, u32>,
}

impl AddressDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dictionary covering every address in `traces`, in first-seen order.
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> Self {
        let mut d = Self::new();
        for t in traces {
            d.extend_from(t);
        }
        d
    }

    pub fn extend_from(&mut self, trace: &Trace) {
        for e in &trace.entries {
            self.intern(&e.address);
        }
    }

    /// Zero-based index of `address`, assigning the next one if unseen.
    pub fn intern(&mut self, address: &Address) -> u32 {
        if let Some(&i) = self.index.get(address) {
            return i;
        }
        let i = self.addresses.len() as u32;
        self.addresses.push(address.clone());
        self.index.insert(address.clone(), i);
        i
    }

    pub fn index_of(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    /// Short id (`A1` for the first address seen).
    pub fn id_of(&self, raw: &str) -> Option<String> {
        self.index_of(raw).map(|i| format!("A{}", i + 1))
    }

    pub fn address(&self, index: u32) -> Option<&Address> {
        self.addresses.get(index as usize)
    }

    /// Resolves a short id or a raw address string.
    pub fn resolve(&self, key: &str) -> Option<&Address> {
        if let Some(i) = self.index.get(key) {
            return self.address(*i);
        }
        let n: u32 = key.strip_prefix('A')?.parse().ok()?;
        self.address(n.checked_sub(1)?)
    }

    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Address> {
        self.addresses.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Latent,
    Observed,
}

/// One sample or observe statement of an execution.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub address: Address,
    /// 1-based visit counter of `address` within the trace.
    pub instance: u32,
    pub distribution: DistributionSpec,
    pub value: Value,
    /// log f (latent prior) or log g (observation likelihood).
    pub log_prob: f64,
    /// log q of the proposal the value was drawn from. Equals `log_prob` when
    /// drawn from the prior, 0 for observed and conditioned entries.
    pub proposal_log_prob: f64,
    pub kind: EntryKind,
    pub controlled: bool,
    pub replaced: bool,
    /// Value fixed by the engine's condition set rather than drawn.
    pub conditioned: bool,
}

impl TraceEntry {
    pub fn is_latent(&self) -> bool {
        self.kind == EntryKind::Latent
    }

    /// Latent and drawn (not fixed by a condition): eligible for MCMC moves.
    pub fn is_free(&self) -> bool {
        self.kind == EntryKind::Latent && !self.conditioned
    }

    /// `(address, instance)` key of this entry.
    pub fn site(&self) -> (&str, u32) {
        (self.address.raw(), self.instance)
    }
}

/// A complete execution: entries in program order plus the run result.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub entries: Vec<TraceEntry>,
    pub result: Option<Value>,
    log_joint: f64,
}

impl Trace {
    pub fn new(entries: Vec<TraceEntry>, result: Option<Value>) -> Self {
        let log_joint = log_joint_of(&entries);
        Self {
            entries,
            result,
            log_joint,
        }
    }

    /// Cached Σ log f over latents plus Σ log g over observations.
    pub fn log_joint(&self) -> f64 {
        self.log_joint
    }

    pub fn latents(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| e.is_latent())
    }

    pub fn observed(&self) -> impl Iterator<Item = &TraceEntry> {
        self.entries.iter().filter(|e| !e.is_latent())
    }

    pub fn find(&self, raw: &str, instance: u32) -> Option<&TraceEntry> {
        self.entries
            .iter()
            .find(|e| e.instance == instance && e.address.raw() == raw)
    }

    pub fn trace_type(&self) -> TraceType {
        TraceType(
            self.latents()
                .map(|e| (e.address.clone(), e.instance))
                .collect(),
        )
    }

    /// Checks that instance counters run 1, 2, 3, … per address.
    pub fn check_instances(&self) -> Result<(), String> {
        let mut seen: HashMap<&str, u32> = HashMap::new();
        for (pos, e) in self.entries.iter().enumerate() {
            let c = seen.entry(e.address.raw()).or_insert(0);
            *c += 1;
            if e.instance != *c {
                return Err(format!(
                    "entry {pos} at {} has instance {}, expected {}",
                    e.address, e.instance, c
                ));
            }
        }
        Ok(())
    }
}

fn log_joint_of(entries: &[TraceEntry]) -> f64 {
    let mut sum = 0.0;
    for e in entries {
        if e.log_prob == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        sum += e.log_prob;
    }
    sum
}

/// Σ_latent log f + Σ_observed log g, recomputed from the entries.
pub fn trace_log_joint(t: &Trace) -> f64 {
    log_joint_of(&t.entries)
}

/// The sequence of latent `(address, instance)` pairs of a trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceType(pub Vec<(Address, u32)>);

impl TraceType {
    /// Short-id rendering such as `A1_1-A2_1-A2_2`.
    pub fn describe(&self, dict: &AddressDictionary) -> String {
        self.0
            .iter()
            .map(|(a, i)| {
                let id = dict.id_of(a.raw()).unwrap_or_else(|| a.to_string());
                format!("{id}_{i}")
            })
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Counts of each trace type, most frequent first (ties in first-seen order).
pub fn trace_type_census<'a>(ts: impl IntoIterator<Item = &'a Trace>) -> Vec<(TraceType, usize)> {
    let mut order: Vec<(TraceType, usize)> = Vec::new();
    let mut index: HashMap<TraceType, usize> = HashMap::new();
    for t in ts {
        let ty = t.trace_type();
        match index.get(&ty) {
            Some(&i) => order[i].1 += 1,
            None => {
                index.insert(ty.clone(), order.len());
                order.push((ty, 1));
            }
        }
    }
    // Stable sort keeps first-seen order among equal counts.
    order.sort_by_key(|e| std::cmp::Reverse(e.1));
    order
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn single_uniform_latent() {
        let t = Trace::new(
            vec![latent("u", 1, DistributionSpec::uniform(0.0, 1.0).unwrap(), Value::Real(0.3))],
            None,
        );
        assert_eq!(t.log_joint(), 0.0);
    }

    #[test]
    fn categorical_plus_poisson() {
        let t = Trace::new(
            vec![
                latent("c", 1, DistributionSpec::categorical(vec![0.5, 0.5]).unwrap(), Value::Integer(1)),
                observed("y", 1, DistributionSpec::poisson(2.0).unwrap(), Value::Integer(0)),
            ],
            None,
        );
        assert!((t.log_joint() - (0.5f64.ln() - 2.0)).abs() < 1e-15);
        assert_eq!(trace_log_joint(&t), t.log_joint());
    }

    #[test]
    fn impossible_observation() {
        let t = Trace::new(
            vec![observed("y", 1, DistributionSpec::uniform(0.0, 1.0).unwrap(), Value::Real(2.0))],
            None,
        );
        assert_eq!(t.log_joint(), f64::NEG_INFINITY);
    }

    #[test]
    fn census_orders_by_count() {
        let d = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let a = Trace::new(vec![latent("x", 1, d.clone(), Value::Real(0.1))], None);
        let b = Trace::new(
            vec![
                latent("x", 1, d.clone(), Value::Real(0.1)),
                latent("x", 2, d.clone(), Value::Real(0.1)),
            ],
            None,
        );
        let c = trace_type_census([&b, &a, &a]);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].1, 2);
        assert_eq!(c[0].0, a.trace_type());
        assert_eq!(c[1].1, 1);
        assert!(trace_type_census(std::iter::empty()).is_empty());
    }

    #[test]
    fn dictionary_ids() {
        let mut d = AddressDictionary::new();
        assert_eq!(d.intern(&"p".into()), 0);
        assert_eq!(d.intern(&"q".into()), 1);
        assert_eq!(d.intern(&"p".into()), 0);
        assert_eq!(d.id_of("q").as_deref(), Some("A2"));
        assert_eq!(d.resolve("A1").unwrap().raw(), "p");
        assert_eq!(d.resolve("q").unwrap().raw(), "q");
        assert!(d.resolve("A3").is_none());
        assert!(d.resolve("A0").is_none());
    }

    #[test]
    fn instance_check() {
        let d = DistributionSpec::uniform(0.0, 1.0).unwrap();
        let bad = Trace::new(vec![latent("x", 2, d, Value::Real(0.1))], None);
        assert!(bad.check_instances().is_err());
    }
}
