//! Randomized self-check of the server solve against the sampled dual
//! oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::aggregator::{aggregate_round, dual_oracle_check, AggregationConfig, ReferenceKind};
use crate::error::Result;
use crate::simplex::InnerOptConfig;
use crate::vector::{GradientSet, ParamVector};

/// Largest acceptable oracle gap.
pub const ORACLE_TOLERANCE: f64 = 1e-3;

/// Inner solver settings used for self-checks: small step on a long budget,
/// independent of the round-level defaults.
pub const CHECK_INNER: InnerOptConfig = InnerOptConfig {
    learning_rate: 0.02,
    iterations: 4000,
    momentum: 0.5,
};

#[derive(Clone, Debug)]
pub struct OracleSuite {
    pub instances: usize,
    pub samples: usize,
    pub seed: u64,
    pub clients: Vec<usize>,
    pub dims: Vec<usize>,
    pub kappas: Vec<f64>,
    pub inner: InnerOptConfig,
    pub normalize_gradients: bool,
}

impl Default for OracleSuite {
    fn default() -> Self {
        OracleSuite {
            instances: 200,
            samples: 10_000,
            seed: 7,
            clients: vec![2, 3],
            dims: vec![2, 3, 4],
            kappas: vec![0.1, 0.5, 1.0],
            inner: CHECK_INNER,
            normalize_gradients: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OracleOutcome {
    pub max_gap: f64,
    pub worst_instance: usize,
    pub gaps: Vec<f64>,
}

impl OracleOutcome {
    pub fn passed(&self) -> bool {
        self.max_gap <= ORACLE_TOLERANCE
    }
}

/// A random instance: `clients` Gaussian gradients in `ℝ^dim` with sample
/// counts in `1..=100`.
pub fn random_instance(rng: &mut impl Rng, clients: usize, dim: usize) -> GradientSet {
    let grads = (0..clients)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            ParamVector::new(v).expect("gaussian samples are finite")
        })
        .collect();
    let counts = (0..clients).map(|_| rng.random_range(1..=100)).collect();
    GradientSet::new(grads, counts, (0..clients).collect()).expect("well-formed instance")
}

pub fn run_suite(suite: &OracleSuite) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(suite.seed);
    let mut gaps = Vec::with_capacity(suite.instances);
    for i in 0..suite.instances {
        let u = suite.clients[rng.random_range(0..suite.clients.len())];
        let m = suite.dims[rng.random_range(0..suite.dims.len())];
        let kappa = suite.kappas[i % suite.kappas.len()];
        let grads = random_instance(&mut rng, u, m);
        let cfg = AggregationConfig {
            kappa,
            global_lr: 1.0,
            inner: suite.inner,
            reference: ReferenceKind::FedAvgWeighted,
            normalize_gradients: suite.normalize_gradients,
        };
        let report = aggregate_round(&grads, &cfg, None)?;
        let sample_seed = rng.random();
        gaps.push(dual_oracle_check(
            &grads,
            &report.g_fl,
            kappa,
            &report.g_igd,
            suite.samples,
            sample_seed,
        )?);
    }
    let (worst_instance, max_gap) = gaps
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, g)| if g > acc.1 { (i, g) } else { acc });
    Ok(OracleOutcome {
        max_gap,
        worst_instance,
        gaps,
    })
}
