#![allow(dead_code)]

pub mod gradcheck;

use std::path::PathBuf;

use traceprobe::distributions::{DistributionSpec, TruncatedNormal};
use traceprobe::protocol::{Message, ObserveRequest, SampleRequest};
use traceprobe::{Rng, Value};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden")
}

fn tn(mean: f64, std: f64, low: f64, high: f64) -> TruncatedNormal {
    TruncatedNormal::new(mean, std, low, high).unwrap()
}

/// The committed fixtures and the messages they encode.
pub fn golden_messages() -> Vec<(&'static str, Message)> {
    let sample = |address: &str, name: Option<&str>, d: DistributionSpec, control, replace| {
        let mut s = SampleRequest::new(address, d).control(control).replace(replace);
        if let Some(n) = name {
            s = s.named(n);
        }
        Message::Sample(s)
    };
    vec![
        ("handshake", Message::Handshake { system_name: "traceprobe".into() }),
        (
            "handshake_result",
            Message::HandshakeResult {
                system_name: "toy".into(),
                model_name: "conjugate-normal".into(),
            },
        ),
        ("run", Message::Run),
        (
            "run_result",
            Message::RunResult {
                result: Some(Value::RealVector(
                    traceprobe::value::RealVector::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
                )),
            },
        ),
        ("run_result_none", Message::RunResult { result: None }),
        (
            "sample",
            sample("mu", Some("mu"), DistributionSpec::Normal { mean: 0.0, std: 1.0 }, true, false),
        ),
        (
            "sample_uniform",
            sample("u", None, DistributionSpec::Uniform { low: -1.5, high: 2.0 }, true, true),
        ),
        (
            "sample_truncated_normal",
            sample("t", None, DistributionSpec::TruncatedNormal(tn(0.5, 2.0, 0.0, 1.0)), false, false),
        ),
        (
            "sample_categorical",
            sample(
                "channel",
                Some("ch"),
                DistributionSpec::Categorical { probs: vec![0.25, 0.5, 0.25] },
                true,
                false,
            ),
        ),
        (
            "sample_mixture",
            sample(
                "m",
                None,
                DistributionSpec::MixtureTruncatedNormal {
                    weights: vec![0.3, 0.7],
                    components: vec![tn(0.0, 1.0, -1.0, 1.0), tn(0.5, 0.25, -1.0, 1.0)],
                },
                true,
                false,
            ),
        ),
        ("sample_result", Message::SampleResult { value: Value::Integer(-3) }),
        ("sample_result_boolean", Message::SampleResult { value: Value::Boolean(true) }),
        ("sample_result_real", Message::SampleResult { value: Value::Real(0.1) }),
        (
            "observe",
            Message::Observe(ObserveRequest::new(
                "y",
                DistributionSpec::Poisson { rate: 2.5 },
                Value::Integer(4),
            )),
        ),
        ("observe_result", Message::ObserveResult),
        (
            "error",
            Message::Error {
                message: "aborted".into(),
                code: 1,
            },
        ),
    ]
}

fn real(rng: &mut Rng) -> f64 {
    match rng.index(6) {
        0 => 0.0,
        1 => -0.0,
        2 => f64::from_bits(rng.next_u64() & !(0x7FF << 52)),
        _ => (rng.uniform() - 0.5) * 10f64.powi(rng.index(12) as i32 - 4),
    }
}

fn text(rng: &mut Rng, non_empty: bool) -> String {
    const ALPHABET: &[&str] = &["a", "z", "_", "+", "0x1f", ";", "]", "é", "µ", "漢", "🎲", " "];
    let n = rng.index(12) + usize::from(non_empty);
    (0..n).map(|_| ALPHABET[rng.index(ALPHABET.len())]).collect()
}

fn probs(rng: &mut Rng) -> Vec<f64> {
    let k = rng.index(6) + 1;
    let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 0.01).collect();
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let head: f64 = p[..k - 1].iter().sum();
    p[k - 1] = (1.0 - head).max(0.0);
    p
}

fn rand_tn(rng: &mut Rng) -> TruncatedNormal {
    let low = rng.uniform() * 4.0 - 3.0;
    let high = low + 0.1 + rng.uniform() * 3.0;
    tn(low + rng.uniform() * (high - low), 0.05 + rng.uniform() * 2.0, low, high)
}

pub fn random_distribution(rng: &mut Rng) -> DistributionSpec {
    match rng.index(6) {
        0 => {
            let low = real(rng).clamp(-1e6, 1e6);
            DistributionSpec::Uniform {
                low,
                high: low + 0.5 + rng.uniform() * 10.0,
            }
        }
        1 => DistributionSpec::Normal {
            mean: real(rng).clamp(-1e6, 1e6),
            std: 0.01 + rng.uniform() * 5.0,
        },
        2 => DistributionSpec::TruncatedNormal(rand_tn(rng)),
        3 => DistributionSpec::Categorical { probs: probs(rng) },
        4 => DistributionSpec::Poisson {
            rate: 0.01 + rng.uniform() * 50.0,
        },
        _ => {
            let weights = probs(rng);
            let first = rand_tn(rng);
            let components = weights
                .iter()
                .map(|_| {
                    let mean = first.low + rng.uniform() * (first.high - first.low);
                    tn(mean, 0.05 + rng.uniform(), first.low, first.high)
                })
                .collect();
            DistributionSpec::MixtureTruncatedNormal { weights, components }
        }
    }
}

pub fn random_value(rng: &mut Rng) -> Value {
    match rng.index(4) {
        0 => Value::Real(real(rng)),
        1 => Value::Integer(rng.next_u64() as i64),
        2 => {
            let rank = rng.index(3) + 1;
            let shape: Vec<usize> = (0..rank).map(|_| rng.index(4)).collect();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| real(rng)).collect();
            Value::RealVector(traceprobe::value::RealVector::new(shape, data).unwrap())
        }
        _ => Value::Boolean(rng.index(2) == 1),
    }
}

pub fn random_message(rng: &mut Rng) -> Message {
    match rng.index(9) {
        0 => Message::Handshake {
            system_name: text(rng, false),
        },
        1 => Message::HandshakeResult {
            system_name: text(rng, false),
            model_name: text(rng, false),
        },
        2 => Message::Run,
        3 => Message::RunResult {
            result: (rng.index(2) == 1).then(|| random_value(rng)),
        },
        4 => {
            let mut s = SampleRequest::new(text(rng, true), random_distribution(rng))
                .control(rng.index(2) == 1)
                .replace(rng.index(2) == 1);
            if rng.index(2) == 1 {
                s = s.named(text(rng, false));
            }
            Message::Sample(s)
        }
        5 => Message::SampleResult { value: random_value(rng) },
        6 => Message::Observe(ObserveRequest::new(
            text(rng, true),
            random_distribution(rng),
            random_value(rng),
        )),
        7 => Message::ObserveResult,
        _ => Message::Error {
            message: text(rng, false),
            code: rng.next_u64() as i64,
        },
    }
}

fn poisson_pmf(rate: f64, k: i64) -> f64 {
    let ln_fact: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
    (k as f64 * rate.ln() - rate - ln_fact).exp()
}

/// Unnormalized joint `p(x1, x2, y)` of the two-latent reference model, by enumeration.
pub fn two_latent_joint(y: [i64; 2]) -> Vec<[f64; 4]> {
    use traceprobe::reference::{TwoLatentDiscrete as M, CHANNEL_PROBS};
    (0..6)
        .map(|x1| {
            let mut row = [0.0; 4];
            for (x2, cell) in row.iter_mut().enumerate() {
                let scale = 1.0 + 0.5 * x2 as f64;
                *cell = CHANNEL_PROBS[x1]
                    * M::MODE_PROBS[x1][x2]
                    * poisson_pmf(M::SHALLOW_RATE[x1] * scale, y[0])
                    * poisson_pmf(M::DEEP_RATE[x1] * scale, y[1]);
            }
            row
        })
        .collect()
}

/// Exact posterior marginal of the channel given `y`.
pub fn two_latent_channel_posterior(y: [i64; 2]) -> Vec<f64> {
    let j = two_latent_joint(y);
    let z: f64 = j.iter().flatten().sum();
    j.iter().map(|r| r.iter().sum::<f64>() / z).collect()
}

/// Exact posterior over the 24 joint states, indexed `4·x1 + x2`.
pub fn two_latent_state_posterior(y: [i64; 2]) -> Vec<f64> {
    let j = two_latent_joint(y);
    let z: f64 = j.iter().flatten().sum();
    j.iter().flatten().map(|p| p / z).collect()
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Self-normalized histogram of an integer-valued site over weighted traces.
pub fn class_histogram(
    traces: &[traceprobe::trace::Trace],
    weights: &[f64],
    address: &str,
    classes: usize,
) -> Vec<f64> {
    let mut h = vec![0.0; classes];
    let mut total = 0.0;
    for (t, w) in traces.iter().zip(weights) {
        let k = t.find(address, 1).unwrap().value.as_i64().unwrap() as usize;
        h[k] += w;
        total += w;
    }
    h.iter().map(|x| x / total).collect()
}

/// Normalized weights from log weights, computed with a max shift.
pub fn normalize_log_weights(lw: &[f64]) -> Vec<f64> {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// A trace with valid instance counters and log probabilities consistent with
/// its entries. Addresses repeat so some have several instances.
pub fn random_trace(rng: &mut Rng) -> traceprobe::trace::Trace {
    use std::collections::HashMap;
    use traceprobe::trace::{EntryKind, Trace, TraceEntry};

    let pool: Vec<String> = (0..rng.index(4) + 1).map(|_| text(rng, true)).collect();
    let mut counts: HashMap<String, u32> = HashMap::new();
    let entries = (0..rng.index(12))
        .map(|_| {
            let address = pool[rng.index(pool.len())].clone();
            let c = counts.entry(address.clone()).or_insert(0);
            *c += 1;
            let distribution = random_distribution(rng);
            let value = distribution.sample(rng);
            let log_prob = distribution.log_prob(&value).unwrap();
            let observed = rng.index(3) == 0;
            TraceEntry {
                address: address.as_str().into(),
                instance: *c,
                distribution,
                value,
                log_prob,
                proposal_log_prob: if observed { 0.0 } else { log_prob - rng.uniform() },
                kind: if observed { EntryKind::Observed } else { EntryKind::Latent },
                controlled: !observed && rng.index(2) == 1,
                replaced: !observed && rng.index(4) == 0,
                conditioned: !observed && rng.index(5) == 0,
            }
        })
        .collect();
    Trace::new(entries, (rng.index(2) == 1).then(|| random_value(rng)))
}
