use traceprobe::controller::{run_batch, ConditionSet, ExecutionMode, LocalSimulator};
use traceprobe::diagnostics::{
    acf_csv, autocorrelation, ess_chain, ess_weighted, extract_graph, gelman_rubin, histogram_csv, loss_csv,
    marginal, most_frequent_types, series_csv, statistics_csv, tv_distance, tv_vectors, Binning,
    DiagnosticsError, NodeCategory,
};
use traceprobe::distributions::DistributionSpec;
use traceprobe::frontend::{Model, ModelContext, ModelError};
use traceprobe::importance::WeightedPosterior;
use traceprobe::reference::LinearChain;
use traceprobe::trace::{EntryKind, Trace, TraceEntry};
use traceprobe::{Rng, Value};

fn trace_with(address: &str, v: i64) -> Trace {
    let d = DistributionSpec::Categorical { probs: vec![0.5, 0.5] };
    let lp = d.log_prob(&Value::Integer(v)).unwrap();
    Trace::new(
        vec![TraceEntry {
            address: address.into(),
            instance: 1,
            distribution: d,
            value: Value::Integer(v),
            log_prob: lp,
            proposal_log_prob: lp,
            kind: EntryKind::Latent,
            controlled: true,
            replaced: false,
            conditioned: false,
        }],
        None,
    )
}

fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.standard_normal() + shift).collect()
}

#[test]
fn gelman_rubin_hand_example() {
    let a: Vec<f64> = (0..10).map(f64::from).collect();
    let b: Vec<f64> = (10..20).map(f64::from).collect();
    let r = gelman_rubin(&[&a, &b]).unwrap();
    assert!((r - 2.5208223766353424).abs() < 1e-12, "{r}");
}

#[test]
fn gelman_rubin_separates_mixed_from_stuck_chains() {
    let c1 = normals(1, 10_000, 0.0);
    let c2 = normals(2, 10_000, 0.0);
    let mixed = gelman_rubin(&[&c1, &c2]).unwrap();
    assert!(mixed < 1.01, "{mixed}");
    let far = normals(3, 10_000, 100.0);
    let stuck = gelman_rubin(&[&c1, &far]).unwrap();
    assert!(stuck > 5.0, "{stuck}");
    let identical = gelman_rubin(&[&c1, &c1]).unwrap();
    assert!((identical - (9_999.0f64 / 10_000.0).sqrt()).abs() < 1e-12);
}

#[test]
fn gelman_rubin_rejects_bad_input() {
    let a = vec![0.0; 20];
    assert!(matches!(gelman_rubin(&[&a]), Err(DiagnosticsError::TooFewChains(1))));
    let b = vec![0.0; 19];
    assert!(matches!(
        gelman_rubin(&[&a, &b]),
        Err(DiagnosticsError::LengthMismatch { first: 20, other: 19 })
    ));
    let short = vec![0.0; 5];
    assert!(matches!(gelman_rubin(&[&short, &short]), Err(DiagnosticsError::TooShort { .. })));
}

#[test]
fn white_noise_autocorrelation_stays_in_band() {
    let n = 10_000;
    let s = normals(4, n, 0.0);
    let rho = autocorrelation(&s, 50).unwrap();
    assert_eq!(rho[0], 1.0);
    let bound = 4.0 / (n as f64).sqrt();
    for (k, r) in rho.iter().enumerate().skip(1) {
        assert!(r.abs() < bound, "lag {k}: {r}");
    }
}

#[test]
fn ar1_autocorrelation_matches_phi_powers() {
    let phi: f64 = 0.9;
    let mut rng = Rng::seed_from_u64(5);
    let innovation = (1.0 - phi * phi).sqrt();
    let mut x = rng.standard_normal();
    let s: Vec<f64> = (0..100_000)
        .map(|_| {
            x = phi * x + innovation * rng.standard_normal();
            x
        })
        .collect();
    let rho = autocorrelation(&s, 10).unwrap();
    for (k, r) in rho.iter().enumerate() {
        assert!((r - phi.powi(k as i32)).abs() < 0.05, "lag {k}: {r}");
    }
    // Integrated time (1+φ)/(1−φ) = 19.
    let ess = ess_chain(&s).unwrap();
    let expected = 100_000.0 / 19.0;
    assert!((ess / expected - 1.0).abs() < 0.2, "{ess}");
}

#[test]
fn autocorrelation_edge_cases() {
    assert_eq!(autocorrelation(&[3.0; 5], 2).unwrap(), vec![1.0; 3]);
    assert!(matches!(
        autocorrelation(&[1.0, 2.0], 2),
        Err(DiagnosticsError::LagTooLarge { max_lag: 2, len: 2 })
    ));
    assert!(matches!(autocorrelation(&[1.0], 0), Err(DiagnosticsError::TooShort { .. })));
    assert_eq!(ess_chain(&[1.0; 10]).unwrap(), 1.0);
    let iid = normals(6, 20_000, 0.0);
    let e = ess_chain(&iid).unwrap();
    assert!((e / 20_000.0 - 1.0).abs() < 0.1, "{e}");
}

#[test]
fn weighted_ess_example() {
    let traces: Vec<Trace> = (0..3).map(|_| trace_with("x", 0)).collect();
    let p = WeightedPosterior::new(traces, vec![2f64.ln(), 0.0, 0.0]);
    assert!((ess_weighted(&p) - 16.0 / 6.0).abs() < 1e-12);
    let u = WeightedPosterior::uniform((0..7).map(|_| trace_with("x", 1)).collect());
    assert!((ess_weighted(&u) - 7.0).abs() < 1e-12);
}

#[test]
fn marginal_of_uniform_weights() {
    let traces = vec![trace_with("x", 0), trace_with("x", 0), trace_with("x", 1)];
    let p = WeightedPosterior::uniform(traces);
    let h = marginal(&p, "x", 1, &Binning::Classes(2)).unwrap();
    assert!((h.masses[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((h.masses[1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(h.absent, 0.0);
    assert_eq!(h.outside, 0.0);
    let auto = marginal(&p, "x", 1, &Binning::Auto).unwrap();
    assert_eq!(auto.binning, Binning::Classes(2));
    assert!(matches!(
        marginal(&p, "y", 1, &Binning::Classes(2)),
        Err(DiagnosticsError::UnknownAddress { .. })
    ));
}

#[test]
fn marginal_counts_absent_and_outside_mass() {
    let traces = vec![trace_with("x", 1), trace_with("z", 0), trace_with("x", 0), trace_with("x", 1)];
    let p = WeightedPosterior::uniform(traces);
    let h = marginal(&p, "x", 1, &Binning::Classes(1)).unwrap();
    assert_eq!(h.masses, vec![0.25]);
    assert_eq!(h.absent, 0.25);
    assert_eq!(h.outside, 0.5);
    assert!((h.total() - 1.0).abs() < 1e-15);
}

#[test]
fn tv_examples_and_metric_properties() {
    assert_eq!(tv_vectors(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert!((tv_vectors(&[0.5, 0.5], &[0.75, 0.25]).unwrap() - 0.25).abs() < 1e-15);
    assert!(tv_vectors(&[1.0], &[0.5, 0.5]).is_err());

    let mut rng = Rng::seed_from_u64(7);
    let mut dist = || {
        let raw: Vec<f64> = (0..5).map(|_| rng.uniform()).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    for _ in 0..200 {
        let (a, b, c) = (dist(), dist(), dist());
        let ab = tv_vectors(&a, &b).unwrap();
        assert_eq!(tv_vectors(&a, &a).unwrap(), 0.0);
        assert!((ab - tv_vectors(&b, &a).unwrap()).abs() < 1e-15);
        assert!((0.0..=1.0).contains(&ab));
        assert!(ab <= tv_vectors(&a, &c).unwrap() + tv_vectors(&c, &b).unwrap() + 1e-15);
    }

    let p = WeightedPosterior::uniform(vec![trace_with("x", 0), trace_with("x", 1)]);
    let q = WeightedPosterior::uniform(vec![trace_with("x", 0), trace_with("z", 0)]);
    let hp = marginal(&p, "x", 1, &Binning::Classes(2)).unwrap();
    let hq = marginal(&q, "x", 1, &Binning::Classes(2)).unwrap();
    // Missing mass counts: q puts half its weight on traces without x.
    assert!((tv_distance(&hp, &hq).unwrap() - 0.5).abs() < 1e-15);
    let h3 = marginal(&p, "x", 1, &Binning::Classes(3)).unwrap();
    assert!(matches!(tv_distance(&hp, &h3), Err(DiagnosticsError::BinMismatch)));
}

#[test]
fn real_bins_are_equal_width_and_closed_on_top() {
    let b = Binning::Bins { low: 0.0, high: 1.0, count: 4 };
    assert_eq!(b.bounds(0), (0.0, 0.25));
    assert_eq!(b.bounds(3), (0.75, 1.0));
    let mk = |x: f64| {
        let d = DistributionSpec::Uniform { low: 0.0, high: 2.0 };
        let lp = d.log_prob(&Value::Real(x)).unwrap();
        Trace::new(
            vec![TraceEntry {
                address: "u".into(),
                instance: 1,
                distribution: d,
                value: Value::Real(x),
                log_prob: lp,
                proposal_log_prob: lp,
                kind: EntryKind::Latent,
                controlled: true,
                replaced: false,
                conditioned: false,
            }],
            None,
        )
    };
    let p = WeightedPosterior::uniform(vec![mk(0.0), mk(0.3), mk(1.0), mk(1.5)]);
    let h = marginal(&p, "u", 1, &b).unwrap();
    assert_eq!(h.masses, vec![0.25, 0.25, 0.0, 0.25]);
    assert_eq!(h.outside, 0.25);
    assert!(matches!(
        marginal(&p, "u", 1, &Binning::Bins { low: 1.0, high: 0.0, count: 3 }),
        Err(DiagnosticsError::InvalidBinning(_))
    ));
}

fn prior_traces<M: Model>(m: M, n: usize, seed: u64) -> Vec<Trace> {
    let mut sims = [LocalSimulator::new(m)];
    run_batch(&mut sims, ExecutionMode::ImportancePrior, &ConditionSet::new(), None, n, seed).unwrap()
}

#[test]
fn linear_chain_graph_is_a_path() {
    let ts = prior_traces(LinearChain, 200, 1);
    let g = extract_graph(&ts, None);
    assert_eq!(g.traces, 200);
    let ids: Vec<&str> = g.nodes.iter().map(|n| n.id.as_str()).collect();
    assert_eq!(ids, ["A1", "A2", "A3"]);
    assert_eq!(g.nodes[0].category, NodeCategory::Controlled);
    assert_eq!(g.nodes[2].category, NodeCategory::Observed);
    assert_eq!(g.edges.len(), 2);
    for (e, (from, to)) in g.edges.iter().zip([(0, 1), (1, 2)]) {
        assert_eq!((e.from, e.to), (from, to));
        assert_eq!(e.count, 200);
        assert_eq!(e.frequency, 1.0);
    }
    assert_eq!(g.outgoing_sum(2), 0.0);
    let dot = g.to_dot();
    assert!(dot.starts_with("digraph addresses {"));
    assert!(dot.contains("A1 -> A2"));
    assert!(dot.contains("A2 -> A3"));
    assert!(dot.contains("category=observed"));
}

/// Draws until a success, so the attempt address loops back on itself.
struct Retry;

impl Model for Retry {
    fn name(&self) -> &str {
        "retry"
    }
    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let mut tries = 0;
        while ctx.sample_int("attempt", DistributionSpec::Categorical { probs: vec![0.6, 0.4] })? == 0 {
            tries += 1;
        }
        ctx.observe("y", DistributionSpec::Poisson { rate: 1.0 + tries as f64 }, Value::Integer(2))?;
        Ok(None)
    }
}

#[test]
fn rejection_loop_has_back_edge() {
    let ts = prior_traces(Retry, 5000, 2);
    let g = extract_graph(&ts, None);
    let a = g.node("A1").unwrap();
    let y = g.node("A2").unwrap();
    let back = g.edges.iter().find(|e| e.from == a && e.to == a).expect("self edge");
    let exit = g.edges.iter().find(|e| e.from == a && e.to == y).unwrap();
    // Every attempt is followed by another with probability 0.6.
    assert!((back.frequency - 0.6).abs() < 0.02, "{}", back.frequency);
    assert_eq!(exit.count, 5000);
    for i in 0..g.nodes.len() {
        let s = g.outgoing_sum(i);
        assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
    }

    let top = most_frequent_types(&ts, 1);
    assert!(!top.is_empty());
    // The most common type is a single successful attempt.
    assert!(top.iter().all(|t| t.latents().count() == 1));
    assert!((top.len() as f64 / 5000.0 - 0.4).abs() < 0.03);
}

#[test]
fn csv_headers() {
    assert!(series_csv(&[-1.0, f64::NEG_INFINITY], &[true, false])
        .starts_with("step,log_joint,accepted\n1,-1,1\n2,-inf,0\n"));
    assert_eq!(acf_csv(&[1.0, 0.5]), "lag,rho\n0,1\n1,0.5\n");
    assert_eq!(statistics_csv(&[("ess", 2.5)]), "statistic,value\ness,2.5\n");
    assert_eq!(loss_csv(3.0, &[2.0], &[]), "epoch,train_loss,validation_loss\n0,NaN,3\n1,2,NaN\n");
    let p = WeightedPosterior::uniform(vec![trace_with("x", 0)]);
    let h = marginal(&p, "x", 1, &Binning::Classes(2)).unwrap();
    assert_eq!(
        histogram_csv(&h),
        "bin,lower,upper,mass\n0,0,0,1\n1,1,1,0\nabsent,,,0\noutside,,,0\n"
    );
}
