//! The proposal network: observation embedder, address and sample
//! embeddings, an LSTM core and per-site proposal heads.
//!
//! Heads emit deltas relative to the prior at the site, so a zero head
//! reproduces the prior for Categorical and Normal priors. Bounded continuous
//! priors get a mixture of truncated normals over the prior support.

use std::collections::HashMap;

use crate::controller::{ProposalProvider, ProposalSession};
use crate::distributions::{DistributionKind, DistributionSpec, Rng, Support, TruncatedNormal};
use crate::trace::{Address, Trace, TraceEntry};
use crate::value::Value;

use super::autodiff::{AutodiffError, Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub obs_hidden: usize,
    pub obs_embedding: usize,
    pub address_embedding: usize,
    pub sample_embedding: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub mixture_components: usize,
    /// Truncated-normal std floor as a fraction of the support width.
    pub std_floor: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            obs_hidden: 64,
            obs_embedding: 64,
            address_embedding: 16,
            sample_embedding: 4,
            lstm_hidden: 64,
            lstm_layers: 1,
            mixture_components: 5,
            std_floor: 1e-3,
            seed: 0,
        }
    }
}

/// Shape of the head at one site.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Categorical { classes: usize },
    Mixture { components: usize },
    Normal,
    /// No learned head; the prior is used but the site still advances the core.
    Prior,
}

impl HeadKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            HeadKind::Categorical { .. } => 1,
            HeadKind::Mixture { .. } => 2,
            HeadKind::Normal => 3,
            HeadKind::Prior => 4,
        }
    }

    fn outputs(self) -> usize {
        match self {
            HeadKind::Categorical { classes } => classes,
            HeadKind::Mixture { components } => 3 * components,
            HeadKind::Normal => 2,
            HeadKind::Prior => 0,
        }
    }

    fn for_prior(prior: &DistributionSpec, components: usize) -> Self {
        match prior {
            DistributionSpec::Categorical { probs } => HeadKind::Categorical {
                classes: probs.len(),
            },
            DistributionSpec::Uniform { .. }
            | DistributionSpec::TruncatedNormal(_)
            | DistributionSpec::MixtureTruncatedNormal { .. } => HeadKind::Mixture { components },
            DistributionSpec::Normal { .. } => HeadKind::Normal,
            DistributionSpec::Poisson { .. } => HeadKind::Prior,
        }
    }
}

/// Registered site: `(address, instance)` with the prior kind seen first.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteEntry {
    pub address: Address,
    pub instance: u32,
    pub kind: DistributionKind,
    pub head: HeadKind,
    /// Length of the encoded sample fed to the sample embedder.
    pub sample_dim: usize,
    pub(crate) embedding: usize,
    pub(crate) sample_w: usize,
    pub(crate) sample_b: usize,
    pub(crate) head_w: Option<usize>,
    pub(crate) head_b: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Core {
    pub obs_w1: usize,
    pub obs_b1: usize,
    pub obs_w2: usize,
    pub obs_b2: usize,
    pub initial_sample: usize,
    /// `(weights, bias)` per LSTM layer.
    pub lstm: Vec<(usize, usize)>,
}

/// The IC proposal network. Parameters are a flat list of tensors; the core
/// comes first, then each registered site in first-seen order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalNetwork {
    pub(crate) config: NetworkConfig,
    pub(crate) obs_mean: Vec<f64>,
    pub(crate) obs_std: Vec<f64>,
    pub(crate) params: Vec<Tensor>,
    pub(crate) core: Core,
    pub(crate) sites: Vec<SiteEntry>,
    pub(crate) index: HashMap<(Address, u32), usize>,
}

/// Observed values of a trace, flattened in program order.
pub fn trace_observation(t: &Trace) -> Vec<f64> {
    let mut out = Vec::new();
    for e in t.observed() {
        e.value.flatten_into(&mut out);
    }
    out
}

/// Latent entries the network is trained on: controlled, not replaced, not conditioned.
pub fn controlled_entries(t: &Trace) -> impl Iterator<Item = &TraceEntry> {
    t.entries
        .iter()
        .filter(|e| e.is_free() && e.controlled && !e.replaced)
}

fn interval(prior: &DistributionSpec) -> Option<(f64, f64)> {
    match prior.support() {
        Support::Interval { low, high } => Some((low, high)),
        _ => None,
    }
}

fn sample_dim(prior: &DistributionSpec) -> usize {
    match prior {
        DistributionSpec::Categorical { probs } => probs.len(),
        _ => 1,
    }
}

/// Fixed-length numeric encoding of a sampled value for the sample embedder.
fn encode_sample(prior: &DistributionSpec, v: &Value, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    match prior {
        DistributionSpec::Categorical { .. } => {
            if let Some(k) = v.as_i64() {
                if k >= 0 && (k as usize) < dim {
                    out[k as usize] = 1.0;
                }
            }
        }
        DistributionSpec::Normal { mean, std } => {
            out[0] = (v.as_f64().unwrap_or(*mean) - mean) / std;
        }
        DistributionSpec::Poisson { .. } => {
            out[0] = (v.as_f64().unwrap_or(0.0).max(0.0)).ln_1p();
        }
        _ => {
            let (lo, hi) = interval(prior).expect("bounded prior");
            let x = v.as_f64().unwrap_or(lo);
            out[0] = if hi > lo { 2.0 * (x - lo) / (hi - lo) - 1.0 } else { 0.0 };
        }
    }
    out
}

fn init_tensor(seed: u64, id: usize, shape: Vec<usize>, scale: f64) -> Tensor {
    let mut rng = Rng::split(seed, id as u64);
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = scale * (2.0 * rng.uniform() - 1.0);
    }
    t
}

/// `softplus(c) = 1 − floor`, so a zero delta gives the prior std in Normal heads.
fn normal_std_offset(floor: f64) -> f64 {
    ((1.0 - floor).exp() - 1.0).ln()
}

/// Logit/softplus biases giving evenly spread, moderately wide mixture components.
fn mixture_bias(components: usize) -> Vec<f64> {
    let k = components as f64;
    let mut b = Vec::with_capacity(3 * components);
    for i in 0..components {
        let p: f64 = (i as f64 + 0.5) / k;
        b.push((p / (1.0 - p)).ln());
    }
    // softplus⁻¹(1/k): std of one component width/k.
    let s = ((1.0 / k).exp() - 1.0).ln();
    b.extend(std::iter::repeat_n(s, components));
    b.extend(std::iter::repeat_n(0.0, components));
    b
}

/// First-step recurrent state.
pub(crate) struct CoreState {
    pub layers: Vec<(Var, Var)>,
    pub prev_sample: Var,
    pub obs: Var,
}

impl ProposalNetwork {
    /// A fresh network for observations of length `obs_dim`, standardized
    /// with the given per-element mean and std.
    pub fn new(config: NetworkConfig, obs_mean: Vec<f64>, obs_std: Vec<f64>) -> Self {
        assert_eq!(obs_mean.len(), obs_std.len());
        let mut net = Self {
            config,
            obs_mean,
            obs_std,
            params: Vec::new(),
            core: Core {
                obs_w1: 0,
                obs_b1: 0,
                obs_w2: 0,
                obs_b2: 0,
                initial_sample: 0,
                lstm: Vec::new(),
            },
            sites: Vec::new(),
            index: HashMap::new(),
        };
        net.core = net.build_core();
        net
    }

    /// A network whose observation standardization is estimated from `traces`.
    pub fn for_traces(config: NetworkConfig, traces: &[Trace]) -> Self {
        let obs: Vec<Vec<f64>> = traces.iter().map(trace_observation).collect();
        let d = obs.iter().map(Vec::len).max().unwrap_or(0);
        let n = obs.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for o in &obs {
            for (i, x) in o.iter().enumerate() {
                mean[i] += x / n;
            }
        }
        for o in &obs {
            for (i, x) in o.iter().enumerate() {
                var[i] += (x - mean[i]).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        let mut net = Self::new(config, mean, std);
        for t in traces {
            net.register(t);
        }
        net
    }

    fn add_param(&mut self, shape: Vec<usize>, scale: f64) -> usize {
        let id = self.params.len();
        self.params.push(init_tensor(self.config.seed, id, shape, scale));
        id
    }

    fn add_param_value(&mut self, t: Tensor) -> usize {
        self.params.push(t);
        self.params.len() - 1
    }

    fn glorot(fan_in: usize) -> f64 {
        1.0 / (fan_in.max(1) as f64).sqrt()
    }

    fn build_core(&mut self) -> Core {
        let c = self.config.clone();
        let d = self.obs_mean.len();
        let obs_w1 = self.add_param(vec![c.obs_hidden, d], Self::glorot(d));
        let obs_b1 = self.add_param_value(Tensor::zeros(vec![c.obs_hidden]));
        let obs_w2 = self.add_param(vec![c.obs_embedding, c.obs_hidden], Self::glorot(c.obs_hidden));
        let obs_b2 = self.add_param_value(Tensor::zeros(vec![c.obs_embedding]));
        let initial_sample = self.add_param(vec![c.sample_embedding], 0.1);
        let mut lstm = Vec::new();
        let mut input = c.obs_embedding + c.address_embedding + c.sample_embedding;
        for _ in 0..c.lstm_layers {
            let h = c.lstm_hidden;
            let w = self.add_param(vec![4 * h, input + h], Self::glorot(input + h));
            let mut b = Tensor::zeros(vec![4 * h]);
            // Gate order i, f, g, o; forget bias 1.
            for x in &mut b.data_mut()[h..2 * h] {
                *x = 1.0;
            }
            let b = self.add_param_value(b);
            lstm.push((w, b));
            input = h;
        }
        Core {
            obs_w1,
            obs_b1,
            obs_w2,
            obs_b2,
            initial_sample,
            lstm,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn observation_dim(&self) -> usize {
        self.obs_mean.len()
    }

    pub fn sites(&self) -> &[SiteEntry] {
        &self.sites
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn site(&self, raw: &str, instance: u32) -> Option<&SiteEntry> {
        let i = *self.index.get(&(Address::new(raw), instance))?;
        Some(&self.sites[i])
    }

    /// Registers every unseen controlled site of `t`. Returns how many were added.
    pub fn register(&mut self, t: &Trace) -> usize {
        let mut added = 0;
        for e in controlled_entries(t) {
            if self.index.contains_key(&(e.address.clone(), e.instance)) {
                continue;
            }
            self.register_site(&e.address, e.instance, &e.distribution);
            added += 1;
        }
        added
    }

    pub(crate) fn register_site(&mut self, address: &Address, instance: u32, prior: &DistributionSpec) {
        let head = HeadKind::for_prior(prior, self.config.mixture_components);
        self.register_raw(address, instance, prior.kind(), head, sample_dim(prior));
    }

    /// Appends a site and its freshly initialized parameters.
    pub(crate) fn register_raw(
        &mut self,
        address: &Address,
        instance: u32,
        kind: DistributionKind,
        head: HeadKind,
        sdim: usize,
    ) {
        let c = self.config.clone();
        let embedding = self.add_param(vec![c.address_embedding], 0.5);
        let sample_w = self.add_param(vec![c.sample_embedding, sdim], Self::glorot(sdim));
        let sample_b = self.add_param_value(Tensor::zeros(vec![c.sample_embedding]));
        let (head_w, head_b) = match head {
            HeadKind::Prior => (None, None),
            h => {
                let w = self.add_param_value(Tensor::zeros(vec![h.outputs(), c.lstm_hidden]));
                let bias = match h {
                    HeadKind::Mixture { components } => mixture_bias(components),
                    _ => vec![0.0; h.outputs()],
                };
                let b = self.add_param_value(Tensor::vector(bias));
                (Some(w), Some(b))
            }
        };
        self.index.insert((address.clone(), instance), self.sites.len());
        self.sites.push(SiteEntry {
            address: address.clone(),
            instance,
            kind,
            head,
            sample_dim: sdim,
            embedding,
            sample_w,
            sample_b,
            head_w,
            head_b,
        });
    }

    fn p(&self, g: &mut Graph, id: usize) -> Var {
        g.param(id, &self.params[id])
    }

    fn linear(&self, g: &mut Graph, w: usize, b: usize, x: Var) -> Result<Var, AutodiffError> {
        let w = self.p(g, w);
        let b = self.p(g, b);
        let y = g.matmul(w, x)?;
        g.add(y, b)
    }

    /// Observation embedding and initial recurrent state. `None` when the
    /// observation length does not match the network.
    pub(crate) fn start(&self, g: &mut Graph, obs: &[f64]) -> Result<Option<CoreState>, AutodiffError> {
        if obs.len() != self.obs_mean.len() {
            return Ok(None);
        }
        let x: Vec<f64> = obs
            .iter()
            .zip(&self.obs_mean)
            .zip(&self.obs_std)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        let x = g.constant(Tensor::vector(x));
        let h = self.linear(g, self.core.obs_w1, self.core.obs_b1, x)?;
        let h = g.tanh(h);
        let e = self.linear(g, self.core.obs_w2, self.core.obs_b2, h)?;
        let obs = g.tanh(e);
        let hdim = self.config.lstm_hidden;
        let layers = (0..self.config.lstm_layers)
            .map(|_| {
                let h = g.constant(Tensor::zeros(vec![hdim]));
                let c = g.constant(Tensor::zeros(vec![hdim]));
                (h, c)
            })
            .collect();
        let prev_sample = self.p(g, self.core.initial_sample);
        Ok(Some(CoreState {
            layers,
            prev_sample,
            obs,
        }))
    }

    /// Advances the core at `site` and returns the top hidden state.
    pub(crate) fn step(&self, g: &mut Graph, st: &mut CoreState, site: &SiteEntry) -> Result<Var, AutodiffError> {
        let emb = self.p(g, site.embedding);
        let mut x = g.concat(&[st.obs, emb, st.prev_sample])?;
        let h = self.config.lstm_hidden;
        for (layer, &(w, b)) in self.core.lstm.iter().enumerate() {
            let (hp, cp) = st.layers[layer];
            let input = g.concat(&[x, hp])?;
            let z = self.linear(g, w, b, input)?;
            let i = g.slice(z, 0, h)?;
            let i = g.sigmoid(i);
            let f = g.slice(z, h, h)?;
            let f = g.sigmoid(f);
            let gg = g.slice(z, 2 * h, h)?;
            let gg = g.tanh(gg);
            let o = g.slice(z, 3 * h, h)?;
            let o = g.sigmoid(o);
            let fc = g.mul(f, cp)?;
            let ig = g.mul(i, gg)?;
            let c = g.add(fc, ig)?;
            let tc = g.tanh(c);
            let hn = g.mul(o, tc)?;
            st.layers[layer] = (hn, c);
            x = hn;
        }
        Ok(x)
    }

    /// Feeds the value drawn at `site` into the next step.
    pub(crate) fn observe_sample(
        &self,
        g: &mut Graph,
        st: &mut CoreState,
        site: &SiteEntry,
        prior: &DistributionSpec,
        v: &Value,
    ) -> Result<(), AutodiffError> {
        let enc = g.constant(Tensor::vector(encode_sample(prior, v, site.sample_dim)));
        let s = self.linear(g, site.sample_w, site.sample_b, enc)?;
        st.prev_sample = g.tanh(s);
        Ok(())
    }

    /// Head output for `prior` at `site`, as graph nodes.
    pub(crate) fn head(
        &self,
        g: &mut Graph,
        site: &SiteEntry,
        h: Var,
        prior: &DistributionSpec,
    ) -> Result<Option<HeadOut>, AutodiffError> {
        let (Some(w), Some(b)) = (site.head_w, site.head_b) else {
            return Ok(None);
        };
        if HeadKind::for_prior(prior, self.config.mixture_components) != site.head {
            return Ok(None);
        }
        let raw = self.linear(g, w, b, h)?;
        Ok(Some(match (site.head, prior) {
            (HeadKind::Categorical { .. }, DistributionSpec::Categorical { probs }) => {
                let support: Vec<usize> = (0..probs.len()).filter(|&k| probs[k] > 0.0).collect();
                let ln_prior = g.constant(Tensor::vector(support.iter().map(|&k| probs[k].ln()).collect()));
                let delta = g.gather(raw, &support)?;
                let logits = g.add(ln_prior, delta)?;
                let log_probs = g.log_softmax(logits)?;
                HeadOut::Categorical {
                    classes: probs.len(),
                    support,
                    log_probs,
                }
            }
            (HeadKind::Normal, DistributionSpec::Normal { mean, std }) => {
                let m = g.index(raw, 0)?;
                let m = g.scale(m, *std);
                let m = g.add_scalar(m, *mean);
                let s = g.index(raw, 1)?;
                let s = g.add_scalar(s, normal_std_offset(self.config.std_floor));
                let s = g.softplus(s);
                let s = g.add_scalar(s, self.config.std_floor);
                let s = g.scale(s, *std);
                HeadOut::Normal { mean: m, std: s }
            }
            (HeadKind::Mixture { components: k }, _) => {
                let (lo, hi) = interval(prior).expect("bounded prior");
                let width = hi - lo;
                let mu = g.slice(raw, 0, k)?;
                let mu = g.sigmoid(mu);
                let mu = g.scale(mu, width);
                let mu = g.add_scalar(mu, lo);
                let sd = g.slice(raw, k, k)?;
                let sd = g.softplus(sd);
                let sd = g.add_scalar(sd, self.config.std_floor);
                let sd = g.scale(sd, width);
                let lw = g.slice(raw, 2 * k, k)?;
                let log_weights = g.log_softmax(lw)?;
                HeadOut::Mixture {
                    low: lo,
                    high: hi,
                    means: mu,
                    stds: sd,
                    log_weights,
                }
            }
            _ => return Ok(None),
        }))
    }
}

/// Graph nodes describing a head's proposal.
#[derive(Debug, Clone)]
pub(crate) enum HeadOut {
    Categorical {
        classes: usize,
        support: Vec<usize>,
        log_probs: Var,
    },
    Normal {
        mean: Var,
        std: Var,
    },
    Mixture {
        low: f64,
        high: f64,
        means: Var,
        stds: Var,
        log_weights: Var,
    },
}

impl HeadOut {
    /// `log q(v)` as a graph node; `None` if `v` is outside the proposal support.
    pub(crate) fn log_prob(&self, g: &mut Graph, v: &Value) -> Result<Option<Var>, AutodiffError> {
        match self {
            HeadOut::Categorical {
                support, log_probs, ..
            } => {
                let Some(k) = v.as_i64() else { return Ok(None) };
                let Some(pos) = support.iter().position(|&s| s as i64 == k) else {
                    return Ok(None);
                };
                Ok(Some(g.index(*log_probs, pos)?))
            }
            HeadOut::Normal { mean, std } => {
                let Some(x) = v.as_f64() else { return Ok(None) };
                let xv = g.scalar(x);
                let d = g.sub(xv, *mean)?;
                let z = g.div(d, *std)?;
                let lp = g.ln_norm_pdf(z);
                let ls = g.log(*std);
                Ok(Some(g.sub(lp, ls)?))
            }
            HeadOut::Mixture {
                low,
                high,
                means,
                stds,
                log_weights,
            } => {
                let Some(x) = v.as_f64() else { return Ok(None) };
                if !(x >= *low && x <= *high) {
                    return Ok(None);
                }
                let xv = g.scalar(x);
                let lo = g.scalar(*low);
                let hi = g.scalar(*high);
                let d = g.sub(xv, *means)?;
                let z = g.div(d, *stds)?;
                let lp = g.ln_norm_pdf(z);
                let ls = g.log(*stds);
                let dl = g.sub(lo, *means)?;
                let a = g.div(dl, *stds)?;
                let dh = g.sub(hi, *means)?;
                let b = g.div(dh, *stds)?;
                let mass = g.ln_norm_interval(a, b)?;
                let comp = g.sub(lp, ls)?;
                let comp = g.sub(comp, mass)?;
                let terms = g.add(comp, *log_weights)?;
                Ok(Some(g.log_sum_exp(terms)))
            }
        }
    }

    /// The proposal as a distribution.
    pub(crate) fn to_spec(&self, g: &Graph) -> Option<DistributionSpec> {
        match self {
            HeadOut::Categorical {
                classes,
                support,
                log_probs,
            } => {
                let mut probs = vec![0.0; *classes];
                for (&k, lp) in support.iter().zip(g.value(*log_probs).data()) {
                    probs[k] = lp.exp();
                }
                let s: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= s);
                DistributionSpec::categorical(probs).ok()
            }
            HeadOut::Normal { mean, std } => {
                DistributionSpec::normal(g.value(*mean).item(), g.value(*std).item()).ok()
            }
            HeadOut::Mixture {
                low,
                high,
                means,
                stds,
                log_weights,
            } => {
                let mut weights: Vec<f64> = g.value(*log_weights).data().iter().map(|w| w.exp()).collect();
                let s: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= s);
                let comps: Option<Vec<TruncatedNormal>> = g
                    .value(*means)
                    .data()
                    .iter()
                    .zip(g.value(*stds).data())
                    .map(|(m, s)| TruncatedNormal::new(m.clamp(*low, *high), *s, *low, *high).ok())
                    .collect();
                DistributionSpec::mixture_truncated_normal(weights, comps?).ok()
            }
        }
    }
}

/// Per-trace proposal state for guided importance sampling.
struct NetworkSession<'a> {
    net: &'a ProposalNetwork,
    graph: Graph,
    state: Option<CoreState>,
    pending: Option<(usize, DistributionSpec)>,
}

impl ProposalSession for NetworkSession<'_> {
    fn propose(&mut self, address: &Address, instance: u32, prior: &DistributionSpec) -> Option<DistributionSpec> {
        self.pending = None;
        let state = self.state.as_mut()?;
        let &i = self.net.index.get(&(address.clone(), instance))?;
        let site = &self.net.sites[i];
        if site.kind != prior.kind() || site.sample_dim != sample_dim(prior) {
            return None;
        }
        let h = self.net.step(&mut self.graph, state, site).ok()?;
        let spec = match self.net.head(&mut self.graph, site, h, prior).ok()? {
            Some(out) => out.to_spec(&self.graph).unwrap_or_else(|| prior.clone()),
            None => prior.clone(),
        };
        self.pending = Some((i, prior.clone()));
        Some(spec)
    }

    fn record(&mut self, value: &Value) {
        let (Some((i, prior)), Some(state)) = (self.pending.take(), self.state.as_mut()) else {
            return;
        };
        let site = &self.net.sites[i];
        // Shapes are fixed by registration, so this cannot fail.
        let _ = self.net.observe_sample(&mut self.graph, state, site, &prior, value);
    }
}

impl ProposalProvider for ProposalNetwork {
    fn session<'a>(&'a self, observation: Option<&Value>) -> Box<dyn ProposalSession + 'a> {
        let mut graph = Graph::new();
        let mut obs = Vec::new();
        if let Some(v) = observation {
            v.flatten_into(&mut obs);
        }
        let state = self.start(&mut graph, &obs).ok().flatten();
        Box::new(NetworkSession {
            net: self,
            graph,
            state,
            pending: None,
        })
    }

    fn check_observation(&self, observation: Option<&Value>) -> Result<(), String> {
        let want = self.obs_mean.len();
        let have = observation.map_or(0, Value::element_count);
        match observation {
            None if want > 0 => Err(format!(
                "the network conditions on an observation of {want} element(s); pass it explicitly"
            )),
            Some(_) if have != want => Err(format!(
                "the network was trained on observations of {want} element(s), got {have}"
            )),
            _ => Ok(()),
        }
    }
}

impl ProposalNetwork {
    /// The proposals the network would emit along `t` given `observation`,
    /// one per controlled entry (`None` where the prior is used).
    pub fn proposals_along(&self, t: &Trace, observation: &[f64]) -> Vec<Option<DistributionSpec>> {
        let obs = Value::vector(observation.to_vec());
        let mut s = self.session(Some(&obs));
        controlled_entries(t)
            .map(|e| {
                let q = s.propose(&e.address, e.instance, &e.distribution);
                s.record(&e.value);
                q
            })
            .collect()
    }
}
