//! In-engine reference models used by tests, the acceptance suite and `traceprobe serve`.

use crate::distributions::DistributionSpec;
use crate::frontend::{Model, ModelContext, ModelError};
use crate::protocol::SampleRequest;
use crate::value::Value;

fn categorical(p: &[f64]) -> DistributionSpec {
    DistributionSpec::Categorical { probs: p.to_vec() }
}

fn poisson(rate: f64) -> DistributionSpec {
    DistributionSpec::Poisson { rate }
}

fn normal(mean: f64, std: f64) -> DistributionSpec {
    DistributionSpec::Normal { mean, std }
}

fn uniform(low: f64, high: f64) -> DistributionSpec {
    DistributionSpec::Uniform { low, high }
}

/// Prior over the six decay channels; spans a 4000:1 ratio.
pub const CHANNEL_PROBS: [f64; 6] = [0.40, 0.30, 0.20, 0.0899, 0.01, 0.0001];

/// Two discrete latents and two Poisson observations; 24 joint latent states.
///
/// ```text
/// x1 ~ Categorical(CHANNEL_PROBS)
/// x2 ~ Categorical(MODE_PROBS[x1])
/// y1 ~ Poisson(SHALLOW_RATE[x1] · (1 + x2/2))
/// y2 ~ Poisson(DEEP_RATE[x1] · (1 + x2/2))
/// ```
#[derive(Debug, Clone, Default)]
pub struct TwoLatentDiscrete {
    /// Data used when the engine supplies no observation.
    pub y: [i64; 2],
}

impl TwoLatentDiscrete {
    pub const X1: &'static str = "channel";
    pub const X2: &'static str = "mode";
    pub const Y1: &'static str = "shallow";
    pub const Y2: &'static str = "deep";

    pub const MODE_PROBS: [[f64; 4]; 6] = [
        [0.5, 0.3, 0.15, 0.05],
        [0.1, 0.4, 0.3, 0.2],
        [0.25, 0.25, 0.25, 0.25],
        [0.6, 0.2, 0.1, 0.1],
        [0.1, 0.2, 0.3, 0.4],
        [0.05, 0.15, 0.3, 0.5],
    ];
    pub const SHALLOW_RATE: [f64; 6] = [4.0, 1.0, 2.5, 3.0, 1.5, 1.2];
    pub const DEEP_RATE: [f64; 6] = [1.0, 4.0, 2.5, 1.5, 5.0, 4.5];

    pub fn new(y: [i64; 2]) -> Self {
        Self { y }
    }

    pub fn rates(x1: usize, x2: usize) -> (f64, f64) {
        let scale = 1.0 + 0.5 * x2 as f64;
        (Self::SHALLOW_RATE[x1] * scale, Self::DEEP_RATE[x1] * scale)
    }
}

impl Model for TwoLatentDiscrete {
    fn name(&self) -> &str {
        "two-latent-discrete"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let x1 = ctx.sample_int(Self::X1, categorical(&CHANNEL_PROBS))? as usize;
        let x2 = ctx.sample_int(Self::X2, categorical(&Self::MODE_PROBS[x1]))? as usize;
        let (r1, r2) = Self::rates(x1, x2);
        ctx.observe(Self::Y1, poisson(r1), Value::Integer(self.y[0]))?;
        ctx.observe(Self::Y2, poisson(r2), Value::Integer(self.y[1]))?;
        Ok(Some(Value::vector(vec![x1 as f64, x2 as f64])))
    }
}

/// `μ ~ N(0, 1)`, `y ~ N(μ, 1)`. The posterior given y is `N(y/2, 1/2)`.
#[derive(Debug, Clone)]
pub struct ConjugateNormal {
    pub y: f64,
}

impl Default for ConjugateNormal {
    fn default() -> Self {
        Self { y: 1.0 }
    }
}

impl ConjugateNormal {
    pub const MU: &'static str = "mu";
    pub const Y: &'static str = "y";
}

impl Model for ConjugateNormal {
    fn name(&self) -> &str {
        "conjugate-normal"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let mu = ctx.sample_real(Self::MU, normal(0.0, 1.0))?;
        ctx.observe(Self::Y, normal(mu, 1.0), Value::Real(self.y))?;
        Ok(Some(Value::Real(mu)))
    }
}

/// A single observation and no latents.
#[derive(Debug, Clone, Default)]
pub struct ZeroLatent;

impl Model for ZeroLatent {
    fn name(&self) -> &str {
        "zero-latent"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        ctx.observe("y", normal(0.0, 1.0), Value::Real(0.0))?;
        Ok(None)
    }
}

/// `x ~ Bernoulli(1/2)` as a 2-class categorical, `y ~ N(2x − 1, 1)`.
#[derive(Debug, Clone)]
pub struct BernoulliLatent {
    pub y: f64,
}

impl Default for BernoulliLatent {
    fn default() -> Self {
        Self { y: 0.3 }
    }
}

impl Model for BernoulliLatent {
    fn name(&self) -> &str {
        "bernoulli-latent"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let x = ctx.sample_int("x", categorical(&[0.5, 0.5]))?;
        ctx.observe("y", normal(2.0 * x as f64 - 1.0, 1.0), Value::Real(self.y))?;
        Ok(Some(Value::Integer(x)))
    }
}

/// `u ~ U(0, 1)`, `k = ⌊4u⌋`, `y ~ Poisson(1 + 2k)`: a continuous latent
/// whose posterior is piecewise constant on four bins.
#[derive(Debug, Clone)]
pub struct BinnedUniform {
    pub y: i64,
}

impl Default for BinnedUniform {
    fn default() -> Self {
        Self { y: 3 }
    }
}

impl BinnedUniform {
    pub const BINS: usize = 4;

    pub fn rate(bin: usize) -> f64 {
        1.0 + 2.0 * bin as f64
    }
}

impl Model for BinnedUniform {
    fn name(&self) -> &str {
        "binned-uniform"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let u = ctx.sample_real("u", uniform(0.0, 1.0))?;
        let k = ((u * Self::BINS as f64) as usize).min(Self::BINS - 1);
        ctx.observe("y", poisson(Self::rate(k)), Value::Integer(self.y))?;
        Ok(Some(Value::Integer(k as i64)))
    }
}

/// Three addresses visited once each, in order.
#[derive(Debug, Clone, Default)]
pub struct LinearChain;

impl Model for LinearChain {
    fn name(&self) -> &str {
        "linear-chain"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let a = ctx.sample_real("a", uniform(0.0, 1.0))?;
        let b = ctx.sample_real("b", normal(a, 1.0))?;
        ctx.observe("c", normal(b, 1.0), Value::Real(0.5))?;
        Ok(None)
    }
}

/// A small decay generator: a channel, its particles' directions and
/// momenta (drawn in a rejection loop) and a 4×8×8 calorimeter observed
/// voxel by voxel through Poisson counts.
#[derive(Debug, Clone)]
pub struct ToyDecay {
    /// Observed grid used when the engine supplies none; zeros by default.
    pub grid: Vec<i64>,
}

impl Default for ToyDecay {
    fn default() -> Self {
        Self {
            grid: vec![0; Self::VOXELS],
        }
    }
}

impl ToyDecay {
    pub const DEPTH: usize = 4;
    pub const HEIGHT: usize = 8;
    pub const WIDTH: usize = 8;
    pub const VOXELS: usize = Self::DEPTH * Self::HEIGHT * Self::WIDTH;
    pub const RATE_FLOOR: f64 = 1e-3;
    /// Particles per channel.
    pub const MULTIPLICITY: [usize; 6] = [1, 2, 1, 3, 2, 3];
    /// Channels whose showers are shallow and narrow.
    pub const ELECTRON_LIKE: [bool; 6] = [true, false, true, false, true, false];
    /// Momentum draws below this are rejected and redrawn.
    pub const MIN_MOMENTUM: f64 = 0.25;
    /// Expected total deposit of a unit-momentum particle.
    pub const ENERGY_SCALE: f64 = 30.0;

    pub const CHANNEL: &'static str =
        "forward+0x5f;ToyDecay::decay()+0x21;Decay_Table::Select()+0x9d7]_Categorical(length_categories:6)";
    pub const DIRECTION: &'static str =
        "forward+0x5f;ToyDecay::decay()+0x8c;Particle::Direction()+0x1c]_Uniform(low:0,high:1)";
    pub const MOMENTUM: &'static str =
        "forward+0x5f;ToyDecay::decay()+0xa3;Particle::Momentum()+0x46;rejection_loop]_Uniform(low:0,high:1)";
    pub const VOXEL: &'static str = "forward+0x5f;Calorimeter::Deposit()+0x3c]_Poisson";

    /// Expected deposits for the given channel and per-particle (direction, momentum).
    pub fn expected_grid(channel: usize, particles: &[(f64, f64)]) -> Vec<f64> {
        let mut grid = vec![0.0; Self::VOXELS];
        let electron = Self::ELECTRON_LIKE[channel];
        let (depth_profile, spread): (Vec<f64>, f64) = if electron {
            ((0..Self::DEPTH).map(|d| (-(d as f64) / 0.7).exp()).collect(), 0.8)
        } else {
            (
                (0..Self::DEPTH)
                    .map(|d| (-0.5 * ((d as f64 - 2.0) / 1.0).powi(2)).exp())
                    .collect(),
                1.6,
            )
        };
        let depth_sum: f64 = depth_profile.iter().sum();
        for &(direction, momentum) in particles {
            let cx = direction * (Self::WIDTH as f64 - 1.0);
            let cy = (Self::HEIGHT as f64 - 1.0) / 2.0;
            let mut transverse = vec![0.0; Self::HEIGHT * Self::WIDTH];
            for h in 0..Self::HEIGHT {
                for w in 0..Self::WIDTH {
                    let r2 = (w as f64 - cx).powi(2) + (h as f64 - cy).powi(2);
                    transverse[h * Self::WIDTH + w] = (-0.5 * r2 / (spread * spread)).exp();
                }
            }
            let t_sum: f64 = transverse.iter().sum();
            let energy = Self::ENERGY_SCALE * momentum;
            for d in 0..Self::DEPTH {
                for (hw, t) in transverse.iter().enumerate() {
                    grid[d * Self::HEIGHT * Self::WIDTH + hw] +=
                        energy * depth_profile[d] / depth_sum * t / t_sum;
                }
            }
        }
        grid
    }
}

impl Model for ToyDecay {
    fn name(&self) -> &str {
        "toy-decay"
    }

    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        let channel = ctx.sample_int(Self::CHANNEL, categorical(&CHANNEL_PROBS))? as usize;
        let mut particles = Vec::with_capacity(Self::MULTIPLICITY[channel]);
        for _ in 0..Self::MULTIPLICITY[channel] {
            let direction = ctx.sample_real(Self::DIRECTION, uniform(0.0, 1.0))?;
            let momentum_req = SampleRequest::new(Self::MOMENTUM, uniform(0.0, 1.0)).replace(true);
            let momentum = loop {
                let p = crate::frontend::expect_real(Self::MOMENTUM, ctx.sample_with(&momentum_req)?)?;
                if p >= Self::MIN_MOMENTUM {
                    break p;
                }
            };
            particles.push((direction, momentum));
        }
        let expected = Self::expected_grid(channel, &particles);
        for (i, rate) in expected.iter().enumerate() {
            let observed = self.grid.get(i).copied().unwrap_or(0);
            ctx.observe(Self::VOXEL, poisson(rate + Self::RATE_FLOOR), Value::Integer(observed))?;
        }
        let grid = crate::value::RealVector::new(
            vec![Self::DEPTH, Self::HEIGHT, Self::WIDTH],
            expected,
        )
        .expect("grid shape");
        Ok(Some(Value::RealVector(grid)))
    }
}

/// Looks up a reference model by its [`Model::name`].
pub fn by_name(name: &str) -> Option<Box<dyn Model>> {
    Some(match name {
        "two-latent-discrete" => Box::new(TwoLatentDiscrete::new([2, 5])),
        "conjugate-normal" => Box::new(ConjugateNormal::default()),
        "zero-latent" => Box::new(ZeroLatent),
        "bernoulli-latent" => Box::new(BernoulliLatent::default()),
        "binned-uniform" => Box::new(BinnedUniform::default()),
        "linear-chain" => Box::new(LinearChain),
        "toy-decay" => Box::new(ToyDecay::default()),
        _ => return None,
    })
}

pub const MODEL_NAMES: [&str; 7] = [
    "two-latent-discrete",
    "conjugate-normal",
    "zero-latent",
    "bernoulli-latent",
    "binned-uniform",
    "linear-chain",
    "toy-decay",
];
