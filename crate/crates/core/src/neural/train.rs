//! Proposal-network training: minimizes the mean over traces of
//! `−Σ_controlled log q(x_t | x_<t, y)` with Adam.

use thiserror::Error;

use crate::distributions::Rng;
use crate::trace::Trace;

use super::autodiff::{AutodiffError, Graph, Tensor, Var};
use super::network::{controlled_entries, trace_observation, ProposalNetwork};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("the dataset is empty")]
    EmptyDataset,
    #[error("no trace has a controlled, non-replaced latent entry")]
    NoControlledAddresses,
    #[error("trace {trace} has {found} observed element(s), the network expects {expected}")]
    ObservationMismatch {
        trace: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss {loss} at optimizer step {step} (epoch {epoch})")]
    NonFiniteLoss { step: usize, epoch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Fraction of traces held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 10,
            clip_norm: Some(5.0),
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Per-epoch losses. `validation_losses` are NaN without a validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Validation loss of the network before any update.
    pub initial_validation_loss: f64,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub steps: usize,
    pub training_traces: usize,
    pub validation_traces: usize,
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(net: &ProposalNetwork) -> Self {
        let z: Vec<Vec<f64>> = net.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for (k, x) in p.data_mut().iter_mut().enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                *x -= cfg.learning_rate * (m[k] / b1t) / ((v[k] / b2t).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Builds `−Σ log q` over the controlled entries of `t`. Sites without a
/// learned head contribute the constant `−log f`. `None` when `t` has no
/// controlled entry or its observation does not fit the network.
pub fn trace_loss(net: &ProposalNetwork, g: &mut Graph, t: &Trace) -> Result<Option<Var>, AutodiffError> {
    if controlled_entries(t).next().is_none() {
        return Ok(None);
    }
    let obs = trace_observation(t);
    let Some(mut st) = net.start(g, &obs)? else {
        return Ok(None);
    };
    let mut terms: Vec<Var> = Vec::new();
    let mut constant = 0.0;
    for e in controlled_entries(t) {
        let Some(site) = net.site(e.address.raw(), e.instance) else {
            constant += e.log_prob;
            continue;
        };
        let h = net.step(g, &mut st, site)?;
        let lq = match net.head(g, site, h, &e.distribution)? {
            Some(out) => out.log_prob(g, &e.value)?,
            None => None,
        };
        match lq {
            Some(v) => terms.push(v),
            None => constant += e.log_prob,
        }
        net.observe_sample(g, &mut st, site, &e.distribution, &e.value)?;
    }
    let mut total = g.scalar(constant);
    if !terms.is_empty() {
        let all = g.concat(&terms)?;
        let s = g.sum(all);
        total = g.add(total, s)?;
    }
    Ok(Some(g.neg(total)))
}

/// Mean loss over `traces` without gradients; NaN when none contributes.
pub fn mean_loss(net: &ProposalNetwork, traces: &[&Trace]) -> Result<f64, AutodiffError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in traces {
        let mut g = Graph::new();
        if let Some(l) = trace_loss(net, &mut g, t)? {
            sum += g.value(l).item();
            n += 1;
        }
    }
    Ok(if n == 0 { f64::NAN } else { sum / n as f64 })
}

fn shuffle(idx: &mut [usize], rng: &mut Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.index(i + 1);
        idx.swap(i, j);
    }
}

/// Trains `net` on `traces`, registering unseen sites first.
pub fn train_proposal(
    net: &mut ProposalNetwork,
    traces: &[Trace],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    train_with_progress(net, traces, cfg, |_, _, _| {})
}

/// As [`train_proposal`], calling `progress(epoch, train_loss, validation_loss)` after each epoch.
pub fn train_with_progress(
    net: &mut ProposalNetwork,
    traces: &[Trace],
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<TrainReport, TrainError> {
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(TrainError::InvalidConfig(format!(
            "validation fraction {} outside [0, 1)",
            cfg.validation_fraction
        )));
    }
    if traces.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !traces.iter().any(|t| controlled_entries(t).next().is_some()) {
        return Err(TrainError::NoControlledAddresses);
    }
    for (i, t) in traces.iter().enumerate() {
        let found = trace_observation(t).len();
        if found != net.observation_dim() {
            return Err(TrainError::ObservationMismatch {
                trace: i,
                expected: net.observation_dim(),
                found,
            });
        }
        net.register(t);
    }
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..traces.len()).collect();
    shuffle(&mut order, &mut rng);
    let n_val = if traces.len() >= 2 && cfg.validation_fraction > 0.0 {
        ((traces.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, traces.len() - 1)
    } else {
        0
    };
    let (train_idx, val_idx) = order.split_at(traces.len() - n_val);
    let mut train_idx = train_idx.to_vec();
    let val: Vec<&Trace> = val_idx.iter().map(|&i| &traces[i]).collect();

    let mut adam = Adam::new(net);
    let mut report = TrainReport {
        initial_validation_loss: mean_loss(net, &val)?,
        train_losses: Vec::with_capacity(cfg.epochs),
        validation_losses: Vec::with_capacity(cfg.epochs),
        steps: 0,
        training_traces: train_idx.len(),
        validation_traces: val.len(),
    };
    for epoch in 0..cfg.epochs {
        shuffle(&mut train_idx, &mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0usize;
        for batch in train_idx.chunks(cfg.batch_size) {
            let mut grads: Vec<Vec<f64>> = net.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
            let mut batch_sum = 0.0;
            let mut batch_n = 0usize;
            for &i in batch {
                let mut g = Graph::new();
                let Some(loss) = trace_loss(net, &mut g, &traces[i])? else { continue };
                let l = g.value(loss).item();
                if !l.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        step: report.steps,
                        epoch,
                        loss: l,
                    });
                }
                batch_sum += l;
                batch_n += 1;
                let gr = g.backward(loss)?;
                for (id, d) in gr.params() {
                    for (a, b) in grads[id].iter_mut().zip(d) {
                        *a += b;
                    }
                }
            }
            if batch_n == 0 {
                continue;
            }
            let scale = 1.0 / batch_n as f64;
            let mut norm2 = 0.0;
            for g in grads.iter_mut() {
                for x in g.iter_mut() {
                    *x *= scale;
                    norm2 += *x * *x;
                }
            }
            if !norm2.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    step: report.steps,
                    epoch,
                    loss: norm2,
                });
            }
            if let Some(clip) = cfg.clip_norm {
                let norm = norm2.sqrt();
                if norm > clip {
                    let c = clip / norm;
                    grads.iter_mut().flatten().for_each(|x| *x *= c);
                }
            }
            adam.step(net.parameters_mut(), &grads, cfg);
            report.steps += 1;
            epoch_sum += batch_sum;
            epoch_n += batch_n;
        }
        let tl = if epoch_n == 0 { f64::NAN } else { epoch_sum / epoch_n as f64 };
        let vl = mean_loss(net, &val)?;
        report.train_losses.push(tl);
        report.validation_losses.push(vl);
        progress(epoch, tl, vl);
    }
    Ok(report)
}
