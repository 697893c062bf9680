mod common;

use proptest::prelude::*;
use traceprobe::distributions::DistributionSpec;
use traceprobe::trace::{
    load_traces, save_traces, trace_log_joint, trace_type_census, write_trace_file, AddressDictionary,
    EntryKind, Trace, TraceEntry, TraceIoError,
};
use traceprobe::{Rng, Value};

fn entry(address: &str, instance: u32, d: DistributionSpec, v: Value, kind: EntryKind) -> TraceEntry {
    let log_prob = d.log_prob(&v).unwrap();
    TraceEntry {
        address: address.into(),
        instance,
        distribution: d,
        value: v,
        log_prob,
        proposal_log_prob: if kind == EntryKind::Latent { log_prob } else { 0.0 },
        kind,
        controlled: kind == EntryKind::Latent,
        replaced: false,
        conditioned: false,
    }
}

fn latent(address: &str, instance: u32, d: DistributionSpec, v: Value) -> TraceEntry {
    entry(address, instance, d, v, EntryKind::Latent)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn random_traces_round_trip(seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let traces: Vec<Trace> = (0..rng.index(5) + 1).map(|_| common::random_trace(&mut rng)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pxt");
        save_traces(&path, &traces).unwrap();
        let loaded = load_traces(&path).unwrap();
        prop_assert_eq!(&loaded.traces, &traces);
        prop_assert_eq!(loaded.dictionary, AddressDictionary::from_traces(&traces));
    }

    #[test]
    fn every_truncation_is_rejected(seed in any::<u64>()) {
        let mut rng = Rng::seed_from_u64(seed);
        let traces: Vec<Trace> = (0..2).map(|_| common::random_trace(&mut rng)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pxt");
        save_traces(&path, &traces).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = rng.index(bytes.len());
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let is_corrupt = matches!(load_traces(&path), Err(TraceIoError::Corrupt { .. }));
        prop_assert!(is_corrupt);
    }
}

#[test]
fn empty_trace_list_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.pxt");
    save_traces(&path, &[]).unwrap();
    let f = load_traces(&path).unwrap();
    assert!(f.traces.is_empty());
    assert!(f.dictionary.is_empty());
}

#[test]
fn bad_magic_and_cached_joint_are_corrupt() {
    let t = Trace::new(
        vec![latent("x", 1, DistributionSpec::Uniform { low: 0.0, high: 2.0 }, Value::Real(0.5))],
        None,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pxt");
    save_traces(&path, std::slice::from_ref(&t)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'Q';
    std::fs::write(&path, &wrong_magic).unwrap();
    assert!(matches!(load_traces(&path), Err(TraceIoError::Corrupt { offset: 0, .. })));

    // The cached log joint is the last 8 bytes.
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&1.0f64.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_traces(&path), Err(TraceIoError::Corrupt { .. })));
}

#[test]
fn log_joint_sums_latents_and_observes() {
    let t = Trace::new(
        vec![
            latent("u", 1, DistributionSpec::Uniform { low: 0.0, high: 2.0 }, Value::Real(1.5)),
            entry(
                "y",
                1,
                DistributionSpec::Poisson { rate: 2.0 },
                Value::Integer(0),
                EntryKind::Observed,
            ),
        ],
        None,
    );
    let expected = 0.5f64.ln() - 2.0;
    assert!((t.log_joint() - expected).abs() < 1e-15);
    assert_eq!(trace_log_joint(&t), t.log_joint());
    assert_eq!(t.latents().count(), 1);
    assert_eq!(t.observed().count(), 1);
}

#[test]
fn impossible_entry_gives_negative_infinity() {
    let mut e = latent("u", 1, DistributionSpec::Uniform { low: 0.0, high: 1.0 }, Value::Real(0.5));
    e.log_prob = f64::NEG_INFINITY;
    let ok = latent("v", 1, DistributionSpec::Normal { mean: 0.0, std: 1.0 }, Value::Real(0.0));
    let t = Trace::new(vec![ok, e], None);
    assert_eq!(t.log_joint(), f64::NEG_INFINITY);
}

#[test]
fn instance_counters_are_checked() {
    let d = || DistributionSpec::Normal { mean: 0.0, std: 1.0 };
    let good = Trace::new(
        vec![
            latent("a", 1, d(), Value::Real(0.0)),
            latent("b", 1, d(), Value::Real(0.0)),
            latent("a", 2, d(), Value::Real(0.0)),
        ],
        None,
    );
    assert!(good.check_instances().is_ok());
    assert_eq!(good.find("a", 2).unwrap().instance, 2);
    assert!(good.find("a", 3).is_none());

    let skipped = Trace::new(
        vec![latent("a", 1, d(), Value::Real(0.0)), latent("a", 3, d(), Value::Real(0.0))],
        None,
    );
    assert!(skipped.check_instances().is_err());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.pxt");
    save_traces(&path, &[skipped]).unwrap();
    assert!(matches!(load_traces(&path), Err(TraceIoError::Corrupt { .. })));
}

#[test]
fn census_counts_trace_types() {
    let d = || DistributionSpec::Categorical { probs: vec![0.5, 0.5] };
    let short = Trace::new(vec![latent("a", 1, d(), Value::Integer(0))], None);
    let long = Trace::new(
        vec![latent("a", 1, d(), Value::Integer(1)), latent("a", 2, d(), Value::Integer(0))],
        None,
    );
    // Values do not matter, only the latent site sequence.
    let mut short_other = short.clone();
    short_other.entries[0].value = Value::Integer(1);
    let ts = vec![long.clone(), short.clone(), short_other, long.clone(), short.clone()];
    let census = trace_type_census(&ts);
    assert_eq!(census.len(), 2);
    assert_eq!(census[0].0, short.trace_type());
    assert_eq!(census[0].1, 3);
    assert_eq!(census[1].1, 2);
    assert_eq!(census.iter().map(|c| c.1).sum::<usize>(), ts.len());

    let dict = AddressDictionary::from_traces(&ts);
    assert_eq!(census[1].0.describe(&dict), "A1_1-A1_2");
}

#[test]
fn dictionary_ids_follow_first_appearance() {
    let d = || DistributionSpec::Normal { mean: 0.0, std: 1.0 };
    let t1 = Trace::new(vec![latent("zeta", 1, d(), Value::Real(0.0))], None);
    let t2 = Trace::new(
        vec![latent("alpha", 1, d(), Value::Real(0.0)), latent("zeta", 1, d(), Value::Real(0.0))],
        None,
    );
    let dict = AddressDictionary::from_traces([&t1, &t2]);
    assert_eq!(dict.id_of("zeta").as_deref(), Some("A1"));
    assert_eq!(dict.id_of("alpha").as_deref(), Some("A2"));
    assert_eq!(dict.resolve("A2").unwrap().raw(), "alpha");
    assert_eq!(dict.resolve("zeta").unwrap().raw(), "zeta");
    assert!(dict.resolve("A3").is_none());
    assert_eq!(AddressDictionary::from_traces([&t1, &t2]), dict);
}

#[test]
fn write_with_existing_dictionary_keeps_its_ids() {
    let d = || DistributionSpec::Normal { mean: 0.0, std: 1.0 };
    let mut dict = AddressDictionary::new();
    dict.intern(&"first".into());
    let t = Trace::new(
        vec![latent("second", 1, d(), Value::Real(0.0)), latent("first", 1, d(), Value::Real(1.0))],
        None,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pxt");
    let extended = write_trace_file(&path, &dict, std::slice::from_ref(&t)).unwrap();
    assert_eq!(extended.id_of("first").as_deref(), Some("A1"));
    assert_eq!(extended.id_of("second").as_deref(), Some("A2"));
    let f = load_traces(&path).unwrap();
    assert_eq!(f.dictionary, extended);
    assert_eq!(f.traces, vec![t]);
}
