//! Finite-difference gradient checks shared by the neural tests and the acceptance run.

use traceprobe::controller::{run_batch, ConditionSet, ExecutionMode, LocalSimulator};
use traceprobe::distributions::DistributionSpec;
use traceprobe::frontend::{Model, ModelContext, ModelError};
use traceprobe::neural::{trace_loss, Graph, NetworkConfig, ProposalNetwork, Tensor, Var};
use traceprobe::trace::Trace;
use traceprobe::{Rng, Value};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

/// Categorical, bounded and unbounded latents feeding two observations.
pub struct Mixed;

impl Model for Mixed {
    fn name(&self) -> &str {
        "mixed"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let x = ctx.sample_int("x", DistributionSpec::Categorical { probs: vec![0.2, 0.3, 0.5] })?;
        let u = ctx.sample_real("u", DistributionSpec::Uniform { low: 0.0, high: 2.0 })?;
        let m = ctx.sample_real("m", DistributionSpec::Normal { mean: x as f64, std: 1.0 })?;
        ctx.observe("y1", DistributionSpec::Normal { mean: u + m, std: 1.0 }, Value::Real(0.0))?;
        ctx.observe("y2", DistributionSpec::Poisson { rate: 1.0 + x as f64 }, Value::Integer(0))?;
        Ok(None)
    }
}

pub fn record<M: Model>(model: M, n: usize, seed: u64) -> Vec<Trace> {
    let mut sims = [LocalSimulator::new(model)];
    run_batch(&mut sims, ExecutionMode::Record { inflation: None }, &ConditionSet::new(), None, n, seed).unwrap()
}

pub fn small_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        obs_hidden: 8,
        obs_embedding: 6,
        address_embedding: 4,
        sample_embedding: 3,
        lstm_hidden: 7,
        lstm_layers: 2,
        mixture_components: 3,
        seed,
        ..NetworkConfig::default()
    }
}

pub fn weights_for(len: usize) -> Tensor {
    Tensor::vector((0..len).map(|k| 0.7 - 0.37 * k as f64 + 0.05 * (k * k) as f64).collect())
}

/// Largest relative error between reverse-mode and central-difference gradients.
pub fn gradcheck(inputs: &[Tensor], f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |inputs: &[Tensor]| -> (Graph, Var, Vec<Var>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| g.param(i, t)).collect();
        let out = f(&mut g, &vars);
        let out = if g.value(out).len() == 1 {
            out
        } else {
            let shape = g.shape(out).to_vec();
            let w = weights_for(g.value(out).len()).data().to_vec();
            let w = g.constant(Tensor::new(shape, w).unwrap());
            let p = g.mul(out, w).unwrap();
            g.sum(p)
        };
        (g, out, vars)
    };
    let (g, out, vars) = eval(inputs);
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let (gp, op, _) = eval(&plus);
            let (gm, om, _) = eval(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * H);
            let rel = (analytic[j] - numeric).abs() / (analytic[j].abs() + 1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn rand_tensor(rng: &mut Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| lo + (hi - lo) * rng.uniform()).collect()).unwrap()
}

pub type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Graph, &[Var]) -> Var>);

pub fn op_cases() -> Vec<OpCase> {
    let mut rng = Rng::seed_from_u64(11);
    let mut v = |lo: f64, hi: f64, n: usize| rand_tensor(&mut rng, vec![n], lo, hi);
    let mut cases: Vec<OpCase> = vec![
        ("add", vec![v(-2.0, 2.0, 5), v(-2.0, 2.0, 5)], Box::new(|g, x| g.add(x[0], x[1]).unwrap())),
        ("add_broadcast", vec![v(-2.0, 2.0, 5), v(-1.0, 1.0, 1)], Box::new(|g, x| g.add(x[0], x[1]).unwrap())),
        ("sub", vec![v(-2.0, 2.0, 5), v(-2.0, 2.0, 5)], Box::new(|g, x| g.sub(x[0], x[1]).unwrap())),
        ("sub_broadcast", vec![v(-1.0, 1.0, 1), v(-2.0, 2.0, 4)], Box::new(|g, x| g.sub(x[0], x[1]).unwrap())),
        ("mul", vec![v(-2.0, 2.0, 5), v(-2.0, 2.0, 5)], Box::new(|g, x| g.mul(x[0], x[1]).unwrap())),
        ("div", vec![v(-2.0, 2.0, 5), v(0.5, 2.0, 5)], Box::new(|g, x| g.div(x[0], x[1]).unwrap())),
        ("div_broadcast", vec![v(-2.0, 2.0, 4), v(0.5, 2.0, 1)], Box::new(|g, x| g.div(x[0], x[1]).unwrap())),
        ("neg", vec![v(-2.0, 2.0, 4)], Box::new(|g, x| g.neg(x[0]))),
        ("scale", vec![v(-2.0, 2.0, 4)], Box::new(|g, x| g.scale(x[0], -1.7))),
        ("add_scalar", vec![v(-2.0, 2.0, 4)], Box::new(|g, x| g.add_scalar(x[0], 0.4))),
        ("tanh", vec![v(-2.0, 2.0, 6)], Box::new(|g, x| g.tanh(x[0]))),
        ("sigmoid", vec![v(-4.0, 4.0, 6)], Box::new(|g, x| g.sigmoid(x[0]))),
        ("softplus", vec![v(-4.0, 4.0, 6)], Box::new(|g, x| g.softplus(x[0]))),
        ("relu", vec![Tensor::vector(vec![-1.3, -0.2, 0.3, 1.9])], Box::new(|g, x| g.relu(x[0]))),
        ("exp", vec![v(-2.0, 2.0, 5)], Box::new(|g, x| g.exp(x[0]))),
        ("log", vec![v(0.2, 3.0, 5)], Box::new(|g, x| g.log(x[0]))),
        ("square", vec![v(-2.0, 2.0, 5)], Box::new(|g, x| g.square(x[0]))),
        ("normal_cdf", vec![v(-3.0, 3.0, 5)], Box::new(|g, x| g.normal_cdf(x[0]))),
        ("ln_norm_pdf", vec![v(-3.0, 3.0, 5)], Box::new(|g, x| g.ln_norm_pdf(x[0]))),
        (
            "ln_norm_interval",
            vec![Tensor::vector(vec![-2.5, -0.3, 1.0, 3.0, -6.0]), Tensor::vector(vec![-1.0, 0.4, 2.2, 4.5, -5.0])],
            Box::new(|g, x| g.ln_norm_interval(x[0], x[1]).unwrap()),
        ),
        ("concat", vec![v(-1.0, 1.0, 2), v(-1.0, 1.0, 3)], Box::new(|g, x| g.concat(&[x[0], x[1]]).unwrap())),
        ("slice", vec![v(-1.0, 1.0, 6)], Box::new(|g, x| g.slice(x[0], 2, 3).unwrap())),
        ("gather", vec![v(-1.0, 1.0, 5)], Box::new(|g, x| g.gather(x[0], &[4, 0, 4, 2]).unwrap())),
        ("index", vec![v(-1.0, 1.0, 5)], Box::new(|g, x| g.index(x[0], 3).unwrap())),
        ("softmax", vec![v(-2.0, 2.0, 5)], Box::new(|g, x| g.softmax(x[0]).unwrap())),
        ("log_softmax", vec![v(-2.0, 2.0, 5)], Box::new(|g, x| g.log_softmax(x[0]).unwrap())),
        ("log_sum_exp", vec![v(-2.0, 2.0, 5)], Box::new(|g, x| g.log_sum_exp(x[0]))),
        ("sum", vec![v(-2.0, 2.0, 5)], Box::new(|g, x| g.sum(x[0]))),
    ];
    let mut r = Rng::seed_from_u64(12);
    cases.push((
        "matmul_vector",
        vec![rand_tensor(&mut r, vec![3, 4], -1.0, 1.0), rand_tensor(&mut r, vec![4], -1.0, 1.0)],
        Box::new(|g, x| g.matmul(x[0], x[1]).unwrap()),
    ));
    cases.push((
        "matmul_matrix",
        vec![rand_tensor(&mut r, vec![2, 3], -1.0, 1.0), rand_tensor(&mut r, vec![3, 4], -1.0, 1.0)],
        Box::new(|g, x| g.matmul(x[0], x[1]).unwrap()),
    ));
    cases
}

/// Worst relative error of a tanh/softplus/log-softmax network of three dense layers.
pub fn three_layer_network() -> f64 {
    let mut rng = Rng::seed_from_u64(5);
    let inputs = vec![
        rand_tensor(&mut rng, vec![6, 4], -0.8, 0.8),
        rand_tensor(&mut rng, vec![6], -0.3, 0.3),
        rand_tensor(&mut rng, vec![5, 6], -0.8, 0.8),
        rand_tensor(&mut rng, vec![5], -0.3, 0.3),
        rand_tensor(&mut rng, vec![3, 5], -0.8, 0.8),
        rand_tensor(&mut rng, vec![3], -0.3, 0.3),
    ];
    let x = Tensor::vector(vec![0.3, -1.2, 0.8, 0.05]);
    let f = move |g: &mut Graph, p: &[Var]| {
        let x = g.constant(x.clone());
        let h = g.matmul(p[0], x).unwrap();
        let h = g.add(h, p[1]).unwrap();
        let h = g.tanh(h);
        let h = g.matmul(p[2], h).unwrap();
        let h = g.add(h, p[3]).unwrap();
        let h = g.softplus(h);
        let h = g.matmul(p[4], h).unwrap();
        let h = g.add(h, p[5]).unwrap();
        let lp = g.log_softmax(h).unwrap();
        g.index(lp, 1).unwrap()
    };
    gradcheck(&inputs, &f)
}

pub fn perturbed_network(traces: &[Trace], seed: u64) -> ProposalNetwork {
    let mut net = ProposalNetwork::for_traces(small_config(seed), traces);
    let mut rng = Rng::seed_from_u64(seed ^ 0xabc);
    for p in net.parameters_mut() {
        for x in p.data_mut() {
            *x += 0.4 * (rng.uniform() - 0.5);
        }
    }
    net
}

pub struct CompositionCheck {
    /// Worst relative error among elements whose absolute error exceeds `roundoff`.
    pub worst: f64,
    pub max_abs: f64,
    pub roundoff: f64,
    pub checked: usize,
}

/// Gradient check over every parameter of a perturbed proposal network on traces of [`Mixed`].
pub fn full_composition() -> CompositionCheck {
    let traces = record(Mixed, 3, 21);
    let net = perturbed_network(&traces, 3);
    let loss = |net: &ProposalNetwork| -> (Graph, Var) {
        let mut g = Graph::new();
        let parts: Vec<Var> = traces.iter().map(|t| trace_loss(net, &mut g, t).unwrap().unwrap()).collect();
        let all = g.concat(&parts).unwrap();
        let s = g.sum(all);
        (g, s)
    };
    let (g, out) = loss(&net);
    // Central differences cannot resolve gradient errors below ε·|f|/h.
    let roundoff = f64::EPSILON * g.value(out).item().abs() / H;
    let grads = g.backward(out).unwrap();
    let analytic: std::collections::HashMap<usize, Vec<f64>> =
        grads.params().map(|(id, d)| (id, d.to_vec())).collect();
    let mut worst: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for id in 0..net.parameters().len() {
        for j in 0..net.parameters()[id].len() {
            let mut plus = net.clone();
            plus.parameters_mut()[id].data_mut()[j] += H;
            let mut minus = net.clone();
            minus.parameters_mut()[id].data_mut()[j] -= H;
            let (gp, op) = loss(&plus);
            let (gm, om) = loss(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * H);
            let a = analytic.get(&id).map_or(0.0, |d| d[j]);
            let err = (a - numeric).abs();
            max_abs = max_abs.max(err);
            if err > roundoff {
                worst = worst.max(err / (a.abs() + 1e-8));
            }
            checked += 1;
        }
    }
    assert_eq!(checked, net.parameter_count());
    CompositionCheck { worst, max_abs, roundoff, checked }
}
