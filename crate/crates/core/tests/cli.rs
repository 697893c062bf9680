use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use traceprobe::cli::{load_weighted, read_observation, run_args, sidecar_path, write_observation, RunManifest};
use traceprobe::mcmc::load_sidecar;
use traceprobe::neural::load_network;
use traceprobe::trace::load_traces;
use traceprobe::Value;

const BIN: &str = env!("CARGO_BIN_EXE_traceprobe");

fn run(args: &[&str]) -> Result<Vec<String>, (i32, String)> {
    let mut full = vec!["traceprobe"];
    full.extend_from_slice(args);
    run_args(full).map(|r| r.lines).map_err(|e| (e.exit_code(), e.to_string()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(out: &Path) -> RunManifest {
    let body = std::fs::read_to_string(RunManifest::path_for(out)).unwrap();
    serde_json::from_str(&body).unwrap()
}

fn exit_code(args: &[&str]) -> i32 {
    Command::new(BIN)
        .args(args)
        .env("TRACEPROBE_TIMEOUT_SECS", "2")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn obs_file(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("obs.json");
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["infer", "--help"]), 0);
    assert_eq!(exit_code(&["--version"]), 0);
    let lines = run(&["--help"]).unwrap();
    assert!(lines[0].contains("record"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(exit_code(&[]), 1);
    assert_eq!(exit_code(&["frobnicate"]), 1);
    assert_eq!(exit_code(&["record", "--model", "conjugate-normal", "--n", "0", "--out", "x.pxt"]), 1);
    assert_eq!(exit_code(&["record", "--model", "no-such-model", "--n", "1", "--out", "x.pxt"]), 1);
    assert_eq!(exit_code(&["record", "--endpoints", "udp://x", "--n", "1", "--out", "x.pxt"]), 1);
    assert_eq!(
        exit_code(&["infer", "--model", "conjugate-normal", "--engine", "lmh", "--n", "5", "--out", "x"]),
        1
    );
    assert_eq!(exit_code(&["infer", "--model", "conjugate-normal", "--engine", "ic", "--n", "5", "--out", "x"]), 1);
    let (code, msg) = run(&["infer", "--model", "conjugate-normal", "--engine", "is", "--n", "5", "--condition", "mu", "--out", "x"]).unwrap_err();
    assert_eq!(code, 1);
    assert!(msg.contains("ADDRESS#INSTANCE=VALUE"), "{msg}");
}

#[test]
fn missing_input_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.pxt");
    let out = dir.path().join("g.dot");
    assert_eq!(exit_code(&["graph", "--data", s(&missing), "--out", s(&out)]), 1);
}

#[test]
fn refused_endpoint_exits_two() {
    // Bind and drop a listener to get a port nobody is listening on.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.pxt");
    let ep = format!("tcp://127.0.0.1:{port}");
    assert_eq!(exit_code(&["record", "--endpoints", &ep, "--n", "3", "--out", s(&out)]), 2);
    assert!(!out.exists());
}

#[test]
fn record_writes_traces_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec.pxt");
    let lines = run(&[
        "record", "--model", "two-latent-discrete", "--workers", "3", "--n", "50", "--seed", "9",
        "--inflate", "channel", "--alpha", "0", "--out", s(&out),
    ])
    .unwrap();
    assert!(lines[0].starts_with("recorded 50 traces"));
    let f = load_traces(&out).unwrap();
    assert_eq!(f.traces.len(), 50);
    let m = manifest(&out);
    assert_eq!(m.subcommand, "record");
    assert_eq!(m.model.as_deref(), Some("two-latent-discrete"));
    assert_eq!(m.seed, Some(9));
    assert_eq!(m.outputs, vec![out.display().to_string()]);
    assert_eq!(m.parameters["n"], 50);
    assert_eq!(m.parameters["alpha"], 0.0);

    // Same seed, different worker count: identical file.
    let again = dir.path().join("rec1.pxt");
    run(&[
        "record", "--model", "two-latent-discrete", "--n", "50", "--seed", "9", "--inflate", "channel",
        "--out", s(&again),
    ])
    .unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn importance_inference_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let obs = obs_file(dir.path(), "1.0");
    let post = dir.path().join("post.pxp");
    let lines = run(&[
        "infer", "--model", "conjugate-normal", "--engine", "is", "--obs", s(&obs), "--n", "4000",
        "--seed", "3", "--out", s(&post),
    ])
    .unwrap();
    assert!(lines[0].starts_with("4000 traces, ESS"));
    let (_, p) = load_weighted(&post).unwrap();
    let (mean, _) = p.moments("mu", 1).unwrap();
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
    let m = manifest(&post);
    assert_eq!(m.engine, Some(traceprobe::cli::Engine::Is));
    assert_eq!(m.inputs["obs"], obs.display().to_string());

    let ess = dir.path().join("ess.csv");
    run(&["diagnose", "ess", "--posterior", s(&post), "--out", s(&ess)]).unwrap();
    let body = std::fs::read_to_string(&ess).unwrap();
    assert!(body.starts_with("statistic,value\nweighted_ess,"));
    assert!(body.contains("samples,4000"));

    let hist = dir.path().join("mu.csv");
    run(&[
        "diagnose", "marginal", "--posterior", s(&post), "--address", "A1", "--bins", "10", "--low", "-3",
        "--high", "3", "--out", s(&hist),
    ])
    .unwrap();
    let body = std::fs::read_to_string(&hist).unwrap();
    assert!(body.starts_with("bin,lower,upper,mass\n0,-3,"));
    assert_eq!(body.lines().count(), 1 + 10 + 2);

    let tv = dir.path().join("tv.csv");
    let lines = run(&[
        "diagnose", "tv", "--posterior", s(&post), "--other", s(&post), "--address", "mu", "--bins", "10",
        "--out", s(&tv),
    ])
    .unwrap();
    assert_eq!(lines, vec!["0"]);
    assert_eq!(manifest(&tv).parameters["address"], "mu");
}

#[test]
fn conditioning_fixes_a_latent() {
    let dir = tempfile::tempdir().unwrap();
    let post = dir.path().join("c.pxp");
    run(&[
        "infer", "--model", "two-latent-discrete", "--engine", "is", "--n", "100", "--condition", "channel=2",
        "--out", s(&post),
    ])
    .unwrap();
    let (_, p) = load_weighted(&post).unwrap();
    for t in p.traces() {
        let e = t.find("channel", 1).unwrap();
        assert_eq!(e.value, Value::Integer(2));
        assert!(e.conditioned);
    }
}

#[test]
fn zero_weights_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let post = dir.path().join("z.pxp");
    // A negative count has zero mass under every Poisson.
    let obs = obs_file(dir.path(), "[-1, -1]");
    let err = run(&[
        "infer", "--model", "two-latent-discrete", "--engine", "is", "--n", "20", "--obs", s(&obs), "--out",
        s(&post),
    ])
    .unwrap_err();
    assert_eq!(err.0, 3, "{}", err.1);
    assert!(post.exists());
}

#[test]
fn mcmc_chains_write_sidecars_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let obs = obs_file(dir.path(), "1.0");
    let mut chains = Vec::new();
    for (engine, seed) in [("lmh", "1"), ("rmh", "2")] {
        let out = dir.path().join(format!("{engine}.pxt"));
        let lines = run(&[
            "infer", "--model", "conjugate-normal", "--engine", engine, "--obs", s(&obs), "--steps", "2000",
            "--burn-in", "100", "--thinning", "2", "--sigma", "0.5", "--seed", seed, "--out", s(&out),
        ])
        .unwrap();
        assert!(lines[0].starts_with("950 samples"), "{lines:?}");
        assert_eq!(load_traces(&out).unwrap().traces.len(), 950);
        let (lj, acc) = load_sidecar(&sidecar_path(&out)).unwrap();
        assert_eq!(lj.len(), 2000);
        assert_eq!(acc.len(), 2000);
        let m = manifest(&out);
        assert_eq!(m.outputs.len(), 2);
        assert_eq!(m.parameters.contains_key("sigma"), engine == "rmh");
        chains.push(sidecar_path(&out));
    }

    let gr = dir.path().join("gr.csv");
    let lines = run(&[
        "diagnose", "gr", "--chains", s(&chains[0]), s(&chains[1]), "--burn-in", "100", "--out", s(&gr),
    ])
    .unwrap();
    let rhat: f64 = lines[0].parse().unwrap();
    assert!(rhat < 1.1, "{rhat}");
    assert!(std::fs::read_to_string(&gr).unwrap().starts_with("statistic,value\nr_hat,"));

    let acf = dir.path().join("acf.csv");
    run(&["diagnose", "acf", "--chain", s(&chains[0]), "--max-lag", "5", "--out", s(&acf)]).unwrap();
    let body = std::fs::read_to_string(&acf).unwrap();
    assert!(body.starts_with("lag,rho\n0,1\n"));
    assert_eq!(body.lines().count(), 7);

    // Chains are trace files too, so they work as equally weighted posteriors.
    let ess = dir.path().join("cess.csv");
    run(&[
        "diagnose", "ess", "--posterior", s(&dir.path().join("lmh.pxt")), "--chain", s(&chains[0]), "--out",
        s(&ess),
    ])
    .unwrap();
    let body = std::fs::read_to_string(&ess).unwrap();
    let ess: f64 = body.lines().nth(1).unwrap().strip_prefix("weighted_ess,").unwrap().parse().unwrap();
    assert!((ess - 950.0).abs() < 1e-9, "{body}");
    assert!(body.contains("chain_length,2000\n"));
}

#[test]
fn chain_can_start_from_a_recorded_trace() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("init.pxt");
    run(&["record", "--model", "conjugate-normal", "--n", "1", "--out", s(&rec)]).unwrap();
    let out = dir.path().join("c.pxt");
    run(&[
        "infer", "--model", "conjugate-normal", "--engine", "lmh", "--steps", "1", "--init", s(&rec), "--out",
        s(&out),
    ])
    .unwrap();
    assert_eq!(manifest(&out).inputs["init"], rec.display().to_string());
}

#[test]
fn train_then_guided_inference() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("train.pxt");
    run(&["record", "--model", "conjugate-normal", "--n", "200", "--seed", "4", "--out", s(&rec)]).unwrap();
    let net = dir.path().join("net.pxn");
    let lines = run(&[
        "train", "--data", s(&rec), "--out", s(&net), "--epochs", "2", "--batch", "32", "--lstm-hidden", "8",
        "--components", "2", "--seed", "1",
    ])
    .unwrap();
    assert_eq!(lines.len(), 3, "{lines:?}");
    assert!(lines[0].starts_with("epoch 1: train"), "{lines:?}");
    let loaded = load_network(&net).unwrap();
    assert_eq!(loaded.config().lstm_hidden, 8);
    let loss = std::fs::read_to_string(format!("{}.loss.csv", net.display())).unwrap();
    assert!(loss.starts_with("epoch,train_loss,validation_loss\n0,NaN,"));
    assert_eq!(loss.lines().count(), 1 + 3);
    assert_eq!(manifest(&net).subcommand, "train");

    let (code, msg) = run(&[
        "infer", "--model", "conjugate-normal", "--engine", "ic", "--net", s(&net), "--n", "5", "--out",
        s(&dir.path().join("noobs.pxp")),
    ])
    .unwrap_err();
    assert_eq!(code, 1, "{msg}");
    assert!(msg.contains("observation"), "{msg}");

    let obs = obs_file(dir.path(), "1.0");
    let post = dir.path().join("ic.pxp");
    let lines = run(&[
        "infer", "--model", "conjugate-normal", "--engine", "ic", "--net", s(&net), "--obs", s(&obs), "--n",
        "500", "--out", s(&post),
    ])
    .unwrap();
    assert!(lines[0].starts_with("500 traces"));
    let (_, p) = load_weighted(&post).unwrap();
    assert_eq!(p.len(), 500);
}

#[test]
fn graph_writes_dot() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("g.pxt");
    run(&["record", "--model", "linear-chain", "--n", "20", "--out", s(&rec)]).unwrap();
    let dot = dir.path().join("g.dot");
    let lines = run(&["graph", "--data", s(&rec), "--out", s(&dot), "--top", "1"]).unwrap();
    assert_eq!(lines, vec!["3 nodes, 2 edges over 20 traces"]);
    let body = std::fs::read_to_string(&dot).unwrap();
    assert!(body.contains("A1 -> A2 [label=\"1.000\""));
    assert_eq!(manifest(&dot).parameters["top"], 1);
}

#[test]
fn observation_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(read_observation(&obs_file(dir.path(), " 2.5\n")).unwrap(), Value::Real(2.5));
    assert_eq!(
        read_observation(&obs_file(dir.path(), "[1, 2]")).unwrap(),
        Value::vector(vec![1.0, 2.0])
    );
    assert!(read_observation(&obs_file(dir.path(), "[1, \"a\"]")).is_err());
    let bin = dir.path().join("obs.bin");
    write_observation(&bin, &Value::Integer(7)).unwrap();
    assert_eq!(read_observation(&bin).unwrap(), Value::Integer(7));
    std::fs::write(&bin, [9u8, 1, 2]).unwrap();
    assert!(read_observation(&bin).is_err());
}

#[test]
fn inline_observations() {
    assert_eq!(read_observation(Path::new("-1.5")).unwrap(), Value::Real(-1.5));
    assert_eq!(read_observation(Path::new("[2,5]")).unwrap(), Value::vector(vec![2.0, 5.0]));
    let (code, msg) = run(&["infer", "--model", "conjugate-normal", "--engine", "is", "--obs", "absent.json", "--n", "5", "--out", "x"]).unwrap_err();
    assert_eq!(code, 1);
    assert!(msg.contains("absent.json"), "{msg}");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("is.pxt");
    run(&["infer", "--model", "conjugate-normal", "--engine", "is", "--obs", "1", "--n", "50", "--out", s(&out)]).unwrap();
    assert!(out.exists());
}

#[test]
fn served_model_over_tcp_via_binary() {
    let mut server = Command::new(BIN)
        .args(["serve", "--model", "conjugate-normal", "--endpoint", "tcp://127.0.0.1:0", "--max-connections", "1"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let bound = line.trim().strip_prefix("listening on ").expect("listening line").to_string();

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("remote.pxt");
    let status = Command::new(BIN)
        .args(["record", "--endpoints", &bound, "--n", "25", "--seed", "5", "--out", s(&out)])
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    assert!(server.wait().unwrap().success());

    // Remote and local runs of the same model agree bit for bit.
    let local = dir.path().join("local.pxt");
    run(&["record", "--model", "conjugate-normal", "--n", "25", "--seed", "5", "--out", s(&local)]).unwrap();
    assert_eq!(load_traces(&out).unwrap().traces, load_traces(&local).unwrap().traces);
    assert_eq!(manifest(&out).endpoints, vec![bound]);
}
