//! Round-based federated training: client sampling, local SGD, pseudo-gradient
//! collection, server aggregation, and per-round evaluation.
//!
//! Every random choice is drawn from a stream keyed on
//! `(experiment seed, purpose, client, round)`, so clients can train on
//! separate threads without changing any result.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{aggregate, apply_global_update, AggregationConfig, AggregationReport, AggregatorKind};
use crate::data::{DomainDataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{generalization_gap, invariance_report, pairwise_gip, CosineReference, MetricsRecord};
use crate::models::{accuracy, init_params, sgd_epoch, Batch, ModelSpec};
use crate::vector::{norm, GradientSet, ParamVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rounds: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    pub local_lr: f64,
    pub batch_size: usize,
    #[serde(default = "default_participation")]
    pub participation_ratio: f64,
    pub model: ModelSpec,
    #[serde(default)]
    pub aggregator: AggregatorKind,
    #[serde(default)]
    pub aggregation: AggregationConfig,
    #[serde(default)]
    pub seed: u64,
    /// Accuracy is measured every `eval_stride` rounds and on the last one.
    #[serde(default = "default_eval_stride")]
    pub eval_stride: usize,
}

fn default_local_epochs() -> usize {
    5
}

fn default_participation() -> f64 {
    1.0
}

fn default_eval_stride() -> usize {
    1
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, rounds: usize, local_lr: f64, batch_size: usize) -> Self {
        ExperimentConfig {
            rounds,
            local_epochs: default_local_epochs(),
            local_lr,
            batch_size,
            participation_ratio: default_participation(),
            model,
            aggregator: AggregatorKind::default(),
            aggregation: AggregationConfig::default(),
            seed: 0,
            eval_stride: default_eval_stride(),
        }
    }

    /// Returns the offending field name and a message on failure.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.local_epochs == 0 {
            return Err(("local_epochs", "must be >= 1".into()));
        }
        if !(self.local_lr.is_finite() && self.local_lr > 0.0) {
            return Err(("local_lr", format!("must be > 0, got {}", self.local_lr)));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be >= 1".into()));
        }
        if !(self.participation_ratio > 0.0 && self.participation_ratio <= 1.0) {
            return Err((
                "participation_ratio",
                format!("must lie in (0, 1], got {}", self.participation_ratio),
            ));
        }
        if self.eval_stride == 0 {
            return Err(("eval_stride", "must be >= 1".into()));
        }
        self.model.validate()?;
        self.aggregation.validate()
    }

    fn check(&self) -> Result<()> {
        self.validate()
            .map_err(|(f, m)| Error::InvalidInput(format!("{f} {m}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    pub sampled_clients: Vec<usize>,
    pub aggregation: AggregationReport,
    pub per_client_grad_norms: Vec<f64>,
    pub metrics: MetricsRecord,
}

/// A client and its local training data.
#[derive(Clone, Debug, PartialEq)]
pub struct Client {
    pub id: usize,
    pub train: Batch,
}

/// Held-out evaluation data for the global model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSets {
    pub source: Option<Batch>,
    pub target: Option<Batch>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub initial_theta: ParamVector,
    pub final_theta: ParamVector,
    pub reports: Vec<RoundReport>,
}

const STREAM_INIT: u64 = 0x1;
const STREAM_SAMPLING: u64 = 0x2;
const STREAM_CLIENT: u64 = 0x3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive, platform-independent hash of `parts`.
pub fn mix_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6a09_e667_f3bc_c909, |h, &p| splitmix64(h ^ splitmix64(p)))
}

/// Seed of client `client_id`'s local training in round `round`.
pub fn client_round_seed(experiment_seed: u64, client_id: usize, round: usize) -> u64 {
    mix_seed(&[experiment_seed, STREAM_CLIENT, client_id as u64, round as u64])
}

/// Initial global parameters of an experiment.
pub fn initial_params(cfg: &ExperimentConfig) -> ParamVector {
    init_params(&cfg.model, mix_seed(&[cfg.seed, STREAM_INIT]))
}

/// `⌈ratio·U⌉` distinct clients (ascending positions into `0..U`).
pub fn sample_clients(num_clients: usize, ratio: f64, seed: u64, round: usize) -> Vec<usize> {
    let k = ((ratio * num_clients as f64).ceil() as usize).clamp(1, num_clients.max(1));
    if k >= num_clients {
        return (0..num_clients).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, STREAM_SAMPLING, round as u64]));
    let mut picked = index::sample(&mut rng, num_clients, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Runs `epochs` SGD passes from `theta_global` and returns the
/// pseudo-gradient `θ_global − θ_final`.
pub fn local_train(
    spec: &ModelSpec,
    theta_global: &ParamVector,
    data: &Batch,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ParamVector> {
    if epochs == 0 {
        return Err(Error::InvalidInput("local epochs must be >= 1".into()));
    }
    let mut theta = theta_global.clone();
    for epoch in 0..epochs {
        theta = sgd_epoch(spec, &theta, data, lr, batch_size, mix_seed(&[seed, epoch as u64]))?;
    }
    theta_global.sub(&theta)
}

fn should_evaluate(cfg: &ExperimentConfig, round_index: usize) -> bool {
    round_index.is_multiple_of(cfg.eval_stride) || round_index + 1 >= cfg.rounds
}

/// One communication round from global parameters `theta`.
pub fn run_round(
    theta: &ParamVector,
    clients: &[Client],
    eval: &EvalSets,
    cfg: &ExperimentConfig,
    round_index: usize,
) -> Result<(ParamVector, RoundReport)> {
    cfg.check()?;
    if clients.is_empty() {
        return Err(Error::InvalidInput("no clients".into()));
    }
    let sampled = sample_clients(clients.len(), cfg.participation_ratio, cfg.seed, round_index);

    let pseudo_grads = sampled
        .par_iter()
        .map(|&pos| {
            let c = &clients[pos];
            local_train(
                &cfg.model,
                theta,
                &c.train,
                cfg.local_epochs,
                cfg.local_lr,
                cfg.batch_size,
                client_round_seed(cfg.seed, c.id, round_index),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let per_client_grad_norms = pseudo_grads.iter().map(norm).collect();
    let grads = GradientSet::new(
        pseudo_grads,
        sampled.iter().map(|&p| clients[p].train.len() as u64).collect(),
        sampled.iter().map(|&p| clients[p].id).collect(),
    )?;
    let aggregation = aggregate(cfg.aggregator, &grads, &cfg.aggregation, None)?;
    let next = apply_global_update(theta, &aggregation.g_igd, cfg.aggregation.global_lr)?;

    let (per_domain_cosine, cosine_variance) = invariance_report(&grads, &aggregation.g_igd)?;
    let cosine_reference = match cfg.aggregator {
        AggregatorKind::FedAvg => CosineReference::Reference,
        AggregatorKind::FedOmg => CosineReference::Invariant,
    };
    let (source_accuracy, target_accuracy) = if should_evaluate(cfg, round_index) {
        let acc = |b: &Option<Batch>| {
            b.as_ref()
                .map(|b| accuracy(&cfg.model, &next, b))
                .transpose()
        };
        (acc(&eval.source)?, acc(&eval.target)?)
    } else {
        (None, None)
    };
    let generalization_gap = match (source_accuracy, target_accuracy) {
        (Some(s), Some(t)) => Some(generalization_gap(s, t)),
        _ => None,
    };
    let metrics = MetricsRecord {
        source_accuracy,
        target_accuracy,
        generalization_gap,
        per_domain_cosine,
        cosine_variance,
        pairwise_gip: (grads.len() >= 2).then(|| pairwise_gip(&grads)).transpose()?,
        cosine_reference,
    };
    Ok((
        next,
        RoundReport {
            round_index,
            sampled_clients: grads.client_ids().to_vec(),
            aggregation,
            per_client_grad_norms,
            metrics,
        },
    ))
}

/// `cfg.rounds` rounds from [`initial_params`].
pub fn run_experiment(clients: &[Client], eval: &EvalSets, cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.check()?;
    let initial_theta = initial_params(cfg);
    let mut theta = initial_theta.clone();
    let mut reports = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds {
        let (next, report) = run_round(&theta, clients, eval, cfg, r)?;
        theta = next;
        reports.push(report);
    }
    Ok(ExperimentRun {
        initial_theta,
        final_theta: theta,
        reports,
    })
}

/// Leave-one-domain-out: each source domain's train split becomes one
/// client; target accuracy is measured on the held-out domain and source
/// accuracy on the pooled source test splits. Domains without a test split
/// are evaluated on their train split.
pub fn run_fdg_experiment(
    domains: &[DomainDataset],
    held_out: usize,
    cfg: &ExperimentConfig,
) -> Result<ExperimentRun> {
    let mut ids: Vec<usize> = domains.iter().map(|d| d.domain_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InvalidInput("need at least two domains".into()));
    }
    if !ids.contains(&held_out) {
        return Err(Error::InvalidInput(format!("unknown held-out domain {held_out}")));
    }
    let find = |id: usize, split: Split| {
        domains
            .iter()
            .find(|d| d.domain_id == id && d.split == split)
            .map(|d| &d.batch)
    };
    let eval_split = |id: usize| find(id, Split::Test).or_else(|| find(id, Split::Train));

    let mut clients = Vec::new();
    let mut source_eval = Vec::new();
    for &id in ids.iter().filter(|&&id| id != held_out) {
        let train = find(id, Split::Train)
            .ok_or_else(|| Error::InvalidInput(format!("domain {id} has no train split")))?;
        clients.push(Client {
            id,
            train: train.clone(),
        });
        source_eval.extend(eval_split(id));
    }
    let eval = EvalSets {
        source: Some(Batch::concat(&source_eval)?),
        target: eval_split(held_out).cloned(),
    };
    run_experiment(&clients, &eval, cfg)
}

/// Classic FL: `train` is split across clients by label skew and the global
/// model is scored on `test` (reported as source accuracy).
pub fn run_fl_experiment(
    train: &Batch,
    test: &Batch,
    partition: &crate::data::DirichletPartition,
    cfg: &ExperimentConfig,
) -> Result<ExperimentRun> {
    let clients: Vec<Client> = crate::data::dirichlet_partition(train, partition)?
        .into_iter()
        .enumerate()
        .map(|(id, train)| Client { id, train })
        .collect();
    let eval = EvalSets {
        source: Some(test.clone()),
        target: None,
    };
    run_experiment(&clients, &eval, cfg)
}
