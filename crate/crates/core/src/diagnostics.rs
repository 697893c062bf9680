//! Convergence and quality diagnostics over chains and weighted posteriors.
//!
//! CSV outputs share one convention: a header line, comma separated, `.`
//! decimals, non-finite numbers written as `inf`, `-inf` or `NaN`.
//!
//! | file       | header                     |
//! |------------|----------------------------|
//! | series     | `step,log_joint,accepted`  |
//! | ACF        | `lag,rho`                  |
//! | ESS        | `statistic,value`          |
//! | histogram  | `bin,lower,upper,mass`     |
//! | GR / TV    | `statistic,value`          |
//! | loss curve | `epoch,train_loss,validation_loss` |
//!
//! Histogram files end with two rows whose `bin` is `absent` (traces lacking
//! the site) and `outside` (values outside the bins) and whose bounds are empty.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::importance::WeightedPosterior;
use crate::trace::{trace_type_census, Address, AddressDictionary, EntryKind, Trace};
use crate::value::Value;

pub const MIN_GR_LENGTH: usize = 10;
pub const DEFAULT_BINS: usize = 40;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("chains have different lengths ({first} and {other})")]
    LengthMismatch { first: usize, other: usize },
    #[error("series of length {len} is too short (need at least {min})")]
    TooShort { len: usize, min: usize },
    #[error("need at least 2 chains, got {0}")]
    TooFewChains(usize),
    #[error("max lag {max_lag} must be below the series length {len}")]
    LagTooLarge { max_lag: usize, len: usize },
    #[error("{address}#{instance} does not occur in any trace")]
    UnknownAddress { address: String, instance: u32 },
    #[error("histograms are on different bins")]
    BinMismatch,
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Potential scale reduction factor `√(((n−1)/n·W + B/n) / W)`.
pub fn gelman_rubin(chains: &[&[f64]]) -> Result<f64, DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::TooFewChains(chains.len()));
    }
    let n = chains[0].len();
    for c in chains {
        if c.len() != n {
            return Err(DiagnosticsError::LengthMismatch {
                first: n,
                other: c.len(),
            });
        }
    }
    if n < MIN_GR_LENGTH {
        return Err(DiagnosticsError::TooShort {
            len: n,
            min: MIN_GR_LENGTH,
        });
    }
    let nf = n as f64;
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = nf * variance(&means);
    if w == 0.0 {
        return Ok(if b > 0.0 { f64::INFINITY } else { 1.0 });
    }
    Ok((((nf - 1.0) / nf * w + b / nf) / w).sqrt())
}

/// Normalized autocorrelation for lags `0..=max_lag` by direct summation.
/// A constant series has no defined correlation; it is reported as 1 at every lag.
pub fn autocorrelation(s: &[f64], max_lag: usize) -> Result<Vec<f64>, DiagnosticsError> {
    if s.len() < 2 {
        return Err(DiagnosticsError::TooShort { len: s.len(), min: 2 });
    }
    if max_lag >= s.len() {
        return Err(DiagnosticsError::LagTooLarge {
            max_lag,
            len: s.len(),
        });
    }
    let m = mean(s);
    let d: Vec<f64> = s.iter().map(|x| x - m).collect();
    let c0: f64 = d.iter().map(|x| x * x).sum();
    if c0 == 0.0 {
        return Ok(vec![1.0; max_lag + 1]);
    }
    Ok((0..=max_lag)
        .map(|k| {
            if k == 0 {
                1.0
            } else {
                d[..d.len() - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / c0
            }
        })
        .collect())
}

/// Chain effective sample size from Geyer's initial monotone sequence estimator.
/// A constant series counts as a single effective draw.
pub fn ess_chain(s: &[f64]) -> Result<f64, DiagnosticsError> {
    let n = s.len();
    if n < 4 {
        return Err(DiagnosticsError::TooShort { len: n, min: 4 });
    }
    let m = mean(s);
    let d: Vec<f64> = s.iter().map(|x| x - m).collect();
    let c0: f64 = d.iter().map(|x| x * x).sum();
    if c0 == 0.0 {
        return Ok(1.0);
    }
    let rho = |k: usize| d[..n - k].iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / c0;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = if k == 0 { 1.0 } else { rho(k) } + rho(k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        k += 2;
    }
    Ok(n as f64 / tau.max(1.0 / n as f64))
}

/// `(Σw)² / Σw²` of the posterior's weights.
pub fn ess_weighted(p: &WeightedPosterior) -> f64 {
    p.ess()
}

/// How site values are mapped to histogram bins.
#[derive(Debug, Clone, PartialEq)]
pub enum Binning {
    /// Integer classes `0..count`.
    Classes(usize),
    /// Equal-width bins over `[low, high]`; the last bin is closed.
    Bins { low: f64, high: f64, count: usize },
    /// Classes for integer sites, otherwise [`DEFAULT_BINS`] bins over the pooled range.
    Auto,
}

impl Binning {
    fn validate(&self) -> Result<(), DiagnosticsError> {
        match *self {
            Binning::Classes(0) => Err(DiagnosticsError::InvalidBinning("no classes".into())),
            Binning::Bins { low, high, count } => {
                if count == 0 || !(low.is_finite() && high.is_finite() && low <= high) {
                    Err(DiagnosticsError::InvalidBinning(format!(
                        "{count} bins over [{low}, {high}]"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    fn len(&self) -> usize {
        match *self {
            Binning::Classes(k) => k,
            Binning::Bins { count, .. } => count,
            Binning::Auto => 0,
        }
    }

    fn bin_of(&self, v: &Value) -> Option<usize> {
        match *self {
            Binning::Classes(k) => {
                let i = match v {
                    Value::Integer(i) => *i,
                    Value::Boolean(b) => *b as i64,
                    Value::Real(x) if x.fract() == 0.0 => *x as i64,
                    _ => return None,
                };
                (i >= 0 && (i as usize) < k).then_some(i as usize)
            }
            Binning::Bins { low, high, count } => {
                let x = v.as_f64()?;
                if !(low..=high).contains(&x) {
                    return None;
                }
                if high == low {
                    return Some(0);
                }
                let i = ((x - low) / (high - low) * count as f64) as usize;
                Some(i.min(count - 1))
            }
            Binning::Auto => None,
        }
    }

    /// `(lower, upper)` bounds of bin `i`.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        match *self {
            Binning::Classes(_) => (i as f64, i as f64),
            Binning::Bins { low, high, count } => {
                let w = (high - low) / count as f64;
                (low + w * i as f64, if i + 1 == count { high } else { low + w * (i + 1) as f64 })
            }
            Binning::Auto => (f64::NAN, f64::NAN),
        }
    }
}

/// Resolves [`Binning::Auto`] from the values of `(raw, instance)` pooled over posteriors.
pub fn auto_binning(
    posteriors: &[&WeightedPosterior],
    raw: &str,
    instance: u32,
) -> Result<Binning, DiagnosticsError> {
    let mut integer = true;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for p in posteriors {
        for t in p.traces() {
            let Some(e) = t.find(raw, instance) else { continue };
            any = true;
            match &e.value {
                Value::Integer(i) => {
                    lo = lo.min(*i as f64);
                    hi = hi.max(*i as f64);
                }
                Value::Boolean(b) => {
                    lo = lo.min(*b as u8 as f64);
                    hi = hi.max(*b as u8 as f64);
                }
                v => {
                    integer = false;
                    if let Some(x) = v.as_f64() {
                        if x.is_finite() {
                            lo = lo.min(x);
                            hi = hi.max(x);
                        }
                    }
                }
            }
        }
    }
    if !any {
        return Err(DiagnosticsError::UnknownAddress {
            address: raw.to_string(),
            instance,
        });
    }
    if integer && lo >= 0.0 {
        return Ok(Binning::Classes(hi as usize + 1));
    }
    if !lo.is_finite() {
        return Err(DiagnosticsError::InvalidBinning(format!("{raw} has no finite values")));
    }
    Ok(Binning::Bins {
        low: lo,
        high: hi,
        count: DEFAULT_BINS,
    })
}

/// Normalized marginal histogram. `masses`, `absent` and `outside` sum to 1
/// unless every weight is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub binning: Binning,
    pub masses: Vec<f64>,
    /// Weight of traces that never visit the site.
    pub absent: f64,
    /// Weight of values that fall in no bin.
    pub outside: f64,
}

impl Histogram {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.absent + self.outside
    }
}

/// Weighted marginal of the value at `(raw, instance)`.
pub fn marginal(
    p: &WeightedPosterior,
    raw: &str,
    instance: u32,
    binning: &Binning,
) -> Result<Histogram, DiagnosticsError> {
    let binning = match binning {
        Binning::Auto => auto_binning(&[p], raw, instance)?,
        b => b.clone(),
    };
    binning.validate()?;
    if !p.traces().iter().any(|t| t.find(raw, instance).is_some()) {
        return Err(DiagnosticsError::UnknownAddress {
            address: raw.to_string(),
            instance,
        });
    }
    let mut h = Histogram {
        masses: vec![0.0; binning.len()],
        binning,
        absent: 0.0,
        outside: 0.0,
    };
    for (w, t) in p.normalized_weights().into_iter().zip(p.traces()) {
        match t.find(raw, instance) {
            None => h.absent += w,
            Some(e) => match h.binning.bin_of(&e.value) {
                Some(i) => h.masses[i] += w,
                None => h.outside += w,
            },
        }
    }
    Ok(h)
}

/// `½ Σ |h1 − h2|` over the bins plus the absent and outside masses.
pub fn tv_distance(h1: &Histogram, h2: &Histogram) -> Result<f64, DiagnosticsError> {
    if h1.binning != h2.binning || h1.masses.len() != h2.masses.len() {
        return Err(DiagnosticsError::BinMismatch);
    }
    let s: f64 = h1
        .masses
        .iter()
        .zip(&h2.masses)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        + (h1.absent - h2.absent).abs()
        + (h1.outside - h2.outside).abs();
    Ok((0.5 * s).min(1.0))
}

/// TV over plain probability vectors of equal length.
pub fn tv_vectors(a: &[f64], b: &[f64]) -> Result<f64, DiagnosticsError> {
    if a.len() != b.len() {
        return Err(DiagnosticsError::BinMismatch);
    }
    Ok(0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Role of an address in the traces it appears in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeCategory {
    Controlled,
    Replaced,
    Observed,
    Uncontrolled,
    /// The address played different roles in different entries.
    Mixed,
}

impl NodeCategory {
    pub fn name(self) -> &'static str {
        match self {
            NodeCategory::Controlled => "controlled",
            NodeCategory::Replaced => "replaced",
            NodeCategory::Observed => "observed",
            NodeCategory::Uncontrolled => "uncontrolled",
            NodeCategory::Mixed => "mixed",
        }
    }

    fn color(self) -> &'static str {
        match self {
            NodeCategory::Controlled => "tomato",
            NodeCategory::Replaced => "palegreen",
            NodeCategory::Observed => "lightblue",
            NodeCategory::Uncontrolled => "khaki",
            NodeCategory::Mixed => "lightgray",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphNode {
    /// Short id from the dictionary (`A1`, …).
    pub id: String,
    pub address: Address,
    pub category: NodeCategory,
    /// Entries at this address over all traces.
    pub visits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub count: usize,
    /// `count` divided by all transitions leaving `from`.
    pub frequency: f64,
}

/// Address transition graph with instances collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct AddressGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub traces: usize,
}

fn entry_category(e: &crate::trace::TraceEntry) -> NodeCategory {
    match e.kind {
        EntryKind::Observed => NodeCategory::Observed,
        EntryKind::Latent if e.replaced => NodeCategory::Replaced,
        EntryKind::Latent if e.controlled => NodeCategory::Controlled,
        EntryKind::Latent => NodeCategory::Uncontrolled,
    }
}

/// Collapses instances of every address into one node and counts transitions
/// between consecutive entries. Ids come from `dict` when given (addresses it
/// lacks are appended), else from a dictionary built over `ts`.
pub fn extract_graph(ts: &[Trace], dict: Option<&AddressDictionary>) -> AddressGraph {
    let mut dict = dict.cloned().unwrap_or_default();
    for t in ts {
        dict.extend_from(t);
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edge_order: Vec<(usize, usize)> = Vec::new();
    for t in ts {
        let mut prev: Option<usize> = None;
        for e in &t.entries {
            let raw = e.address.raw();
            let cat = entry_category(e);
            let i = *index.entry(raw).or_insert_with(|| {
                nodes.push(GraphNode {
                    id: dict.id_of(raw).expect("interned above"),
                    address: e.address.clone(),
                    category: cat,
                    visits: 0,
                });
                nodes.len() - 1
            });
            let n = &mut nodes[i];
            n.visits += 1;
            if n.category != cat {
                n.category = NodeCategory::Mixed;
            }
            if let Some(p) = prev {
                let c = counts.entry((p, i)).or_insert(0);
                if *c == 0 {
                    edge_order.push((p, i));
                }
                *c += 1;
            }
            prev = Some(i);
        }
    }
    let mut out_total = vec![0usize; nodes.len()];
    for (&(from, _), &c) in &counts {
        out_total[from] += c;
    }
    let edges = edge_order
        .into_iter()
        .map(|(from, to)| {
            let count = counts[&(from, to)];
            GraphEdge {
                from,
                to,
                count,
                frequency: count as f64 / out_total[from] as f64,
            }
        })
        .collect();
    AddressGraph {
        nodes,
        edges,
        traces: ts.len(),
    }
}

/// The traces belonging to the `k` most frequent trace types.
pub fn most_frequent_types(ts: &[Trace], k: usize) -> Vec<Trace> {
    let keep: Vec<_> = trace_type_census(ts).into_iter().take(k).map(|(ty, _)| ty).collect();
    ts.iter()
        .filter(|t| keep.contains(&t.trace_type()))
        .cloned()
        .collect()
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl AddressGraph {
    /// Sum of outgoing frequencies of node `i` (0 for sinks).
    pub fn outgoing_sum(&self, i: usize) -> f64 {
        self.edges.iter().filter(|e| e.from == i).map(|e| e.frequency).sum()
    }

    pub fn node(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::new();
        s.push_str("digraph addresses {\n");
        s.push_str("  node [shape=box, style=filled];\n");
        for n in &self.nodes {
            let _ = writeln!(
                s,
                "  {} [label=\"{}\\n{}\", tooltip=\"{}\", fillcolor={}, category={}, visits={}];",
                n.id,
                n.id,
                n.category.name(),
                dot_escape(n.address.raw()),
                n.category.color(),
                n.category.name(),
                n.visits
            );
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  {} -> {} [label=\"{:.3}\", weight={}, penwidth={:.2}];",
                self.nodes[e.from].id,
                self.nodes[e.to].id,
                e.frequency,
                e.count,
                1.0 + 4.0 * e.frequency
            );
        }
        s.push_str("}\n");
        s
    }
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), DiagnosticsError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

pub fn series_csv(log_joints: &[f64], accepted: &[bool]) -> String {
    let mut s = String::from("step,log_joint,accepted\n");
    for (i, (lj, a)) in log_joints.iter().zip(accepted).enumerate() {
        let _ = writeln!(s, "{},{},{}", i + 1, num(*lj), *a as u8);
    }
    s
}

pub fn acf_csv(rho: &[f64]) -> String {
    let mut s = String::from("lag,rho\n");
    for (k, r) in rho.iter().enumerate() {
        let _ = writeln!(s, "{k},{}", num(*r));
    }
    s
}

pub fn statistics_csv(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("statistic,value\n");
    for (name, v) in rows {
        let _ = writeln!(s, "{name},{}", num(*v));
    }
    s
}

pub fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin,lower,upper,mass\n");
    for (i, m) in h.masses.iter().enumerate() {
        let (lo, hi) = h.binning.bounds(i);
        let _ = writeln!(s, "{i},{},{},{}", num(lo), num(hi), num(*m));
    }
    let _ = writeln!(s, "absent,,,{}", num(h.absent));
    let _ = writeln!(s, "outside,,,{}", num(h.outside));
    s
}

/// Row 0 is the untrained network (its train loss is not measured, so `NaN`);
/// epoch `i` is row `i`.
pub fn loss_csv(initial_validation: f64, train: &[f64], validation: &[f64]) -> String {
    let mut s = String::from("epoch,train_loss,validation_loss\n");
    let _ = writeln!(s, "0,NaN,{}", num(initial_validation));
    for (i, t) in train.iter().enumerate() {
        let v = validation.get(i).copied().unwrap_or(f64::NAN);
        let _ = writeln!(s, "{},{},{}", i + 1, num(*t), num(v));
    }
    s
}

pub fn write_csv(path: &Path, body: &str) -> Result<(), DiagnosticsError> {
    write_file(path, body)
}
