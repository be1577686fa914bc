//! Server-side aggregation.
//!
//! Given client pseudo-gradients `g_u` and a reference direction `g_FL`, the
//! matching-gradient server solves
//!
//! ```text
//! Γ* = argmin_{Γ ∈ Δ}  (Γg)·g_FL + κ‖g_FL‖‖Γg‖
//! ```
//!
//! over the probability simplex and applies
//! `g_IGD = g_FL + κ‖g_FL‖ Γ*g / ‖Γ*g‖`. The minimum equals
//! `max_{‖x − g_FL‖ ≤ κ‖g_FL‖} min_u g_u·x`, which [`dual_oracle_check`]
//! probes by sampling the ball boundary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{minimize_on_simplex, InnerOptConfig, SimplexWeights};
use crate::vector::{dot, dot_slice, norm, weighted_sum, GradientSet, ParamVector};

/// Norms at or below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// How the reference direction `g_FL` is formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// `Σ N_u g_u / Σ N_u`.
    #[default]
    FedAvgWeighted,
    /// `(1/U) Σ g_u`.
    UniformMean,
    /// A caller-supplied vector.
    External,
}

/// Which server rule turns the pseudo-gradients into the applied direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    /// Apply `g_FL` directly.
    FedAvg,
    /// Apply the matched direction `g_IGD`.
    #[default]
    FedOmg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregationConfig {
    /// Searching-radius ratio κ.
    pub kappa: f64,
    /// Server step η_g.
    pub global_lr: f64,
    pub inner: InnerOptConfig,
    pub reference: ReferenceKind,
    /// Divide every gradient by `max_u ‖g_u‖` before the inner solve. The
    /// argmin is unchanged but the step size becomes scale-free.
    pub normalize_gradients: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            kappa: 0.5,
            global_lr: 1.0,
            inner: InnerOptConfig::default(),
            reference: ReferenceKind::FedAvgWeighted,
            normalize_gradients: false,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(("kappa", format!("must be >= 0, got {}", self.kappa)));
        }
        if !(self.global_lr.is_finite() && self.global_lr > 0.0) {
            return Err((
                "global_lr",
                format!("must be > 0, got {}", self.global_lr),
            ));
        }
        self.inner.validate()
    }
}

/// Everything the server computed in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub gamma_star: SimplexWeights,
    pub g_fl: ParamVector,
    /// The direction actually applied (equals `g_fl` for FedAvg).
    pub g_igd: ParamVector,
    pub objective_value: f64,
    /// `min_u g_u·g_igd`.
    pub min_inner_product: f64,
    /// `(1/U) Σ_u g_u·g_igd`.
    pub mean_inner_product: f64,
}

/// The reference direction `g_FL`.
///
/// `external` is only consulted for [`ReferenceKind::External`].
pub fn reference_gradient(
    grads: &GradientSet,
    reference: ReferenceKind,
    external: Option<&ParamVector>,
) -> Result<ParamVector> {
    match reference {
        ReferenceKind::FedAvgWeighted => {
            let weights = fedavg_weights(grads)?;
            weighted_sum(grads.gradients(), &weights)
        }
        ReferenceKind::UniformMean => {
            let u = grads.len() as f64;
            weighted_sum(grads.gradients(), &vec![1.0 / u; grads.len()])
        }
        ReferenceKind::External => {
            let g = external.ok_or_else(|| {
                Error::InvalidInput("external reference requested but none supplied".into())
            })?;
            if g.len() != grads.dim() {
                return Err(Error::dim(grads.dim(), g.len()));
            }
            Ok(g.clone())
        }
    }
}

/// `N_u / Σ N`.
pub fn fedavg_weights(grads: &GradientSet) -> Result<Vec<f64>> {
    let total: u64 = grads.sample_counts().iter().sum();
    if total == 0 {
        return Err(Error::InvalidInput("total sample count is zero".into()));
    }
    let total = total as f64;
    Ok(grads
        .sample_counts()
        .iter()
        .map(|&n| n as f64 / total)
        .collect())
}

fn check_gamma(gamma: &SimplexWeights, grads: &GradientSet, g_fl: &ParamVector) -> Result<()> {
    if gamma.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} clients",
            gamma.len(),
            grads.len()
        )));
    }
    if g_fl.len() != grads.dim() {
        return Err(Error::dim(grads.dim(), g_fl.len()));
    }
    Ok(())
}

/// `(Γg)·g_FL + κ‖g_FL‖‖Γg‖`.
pub fn omg_objective(
    gamma: &SimplexWeights,
    grads: &GradientSet,
    g_fl: &ParamVector,
    kappa: f64,
) -> Result<f64> {
    check_gamma(gamma, grads, g_fl)?;
    let combined = weighted_sum(grads.gradients(), gamma.as_slice())?;
    Ok(dot(&combined, g_fl)? + kappa * norm(g_fl) * norm(&combined))
}

/// Gradient of [`omg_objective`] with respect to Γ.
///
/// Component `u` is `g_u·g_FL + κ‖g_FL‖ (g_u·Γg)/‖Γg‖`; the second term is
/// taken as zero when `‖Γg‖ ≤ 1e-12`.
pub fn omg_objective_grad(
    gamma: &SimplexWeights,
    grads: &GradientSet,
    g_fl: &ParamVector,
    kappa: f64,
) -> Result<Vec<f64>> {
    check_gamma(gamma, grads, g_fl)?;
    let combined = weighted_sum(grads.gradients(), gamma.as_slice())?;
    let combined_norm = norm(&combined);
    let radius = kappa * norm(g_fl);
    grads
        .gradients()
        .iter()
        .map(|g| {
            let linear = dot(g, g_fl)?;
            if kappa == 0.0 || combined_norm <= DEGENERATE_NORM {
                Ok(linear)
            } else {
                Ok(linear + radius * dot(g, &combined)? / combined_norm)
            }
        })
        .collect()
}

/// The objective expressed through `a_u = g_u·g_FL` and the Gram matrix
/// `K_uv = g_u·g_v`, so each inner iteration costs `O(U²)` instead of
/// `O(U·M)`.
struct GramObjective {
    linear: Vec<f64>,
    gram: Vec<f64>,
    n: usize,
    radius: f64,
}

impl GramObjective {
    /// The objective of `grads / scale` and `g_fl / scale`.
    fn new(grads: &GradientSet, g_fl: &ParamVector, kappa: f64, scale: f64) -> Self {
        let gs = grads.gradients();
        let n = gs.len();
        let sq = scale * scale;
        let linear = gs
            .iter()
            .map(|g| dot_slice(g.as_slice(), g_fl.as_slice()) / sq)
            .collect();
        let mut gram = vec![0.0; n * n];
        for u in 0..n {
            for v in u..n {
                let k = dot_slice(gs[u].as_slice(), gs[v].as_slice()) / sq;
                gram[u * n + v] = k;
                gram[v * n + u] = k;
            }
        }
        GramObjective {
            linear,
            gram,
            n,
            radius: kappa * norm(g_fl) / scale,
        }
    }

    fn gram_times(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|u| dot_slice(&self.gram[u * self.n..(u + 1) * self.n], gamma))
            .collect()
    }

    fn value(&self, gamma: &[f64]) -> f64 {
        let kg = self.gram_times(gamma);
        let sq = dot_slice(gamma, &kg).max(0.0);
        dot_slice(gamma, &self.linear) + self.radius * sq.sqrt()
    }

    fn gradient(&self, gamma: &[f64]) -> Vec<f64> {
        let kg = self.gram_times(gamma);
        let combined_norm = dot_slice(gamma, &kg).max(0.0).sqrt();
        if self.radius == 0.0 || combined_norm <= DEGENERATE_NORM {
            return self.linear.clone();
        }
        self.linear
            .iter()
            .zip(&kg)
            .map(|(a, k)| a + self.radius * k / combined_norm)
            .collect()
    }
}

/// Minimizes [`omg_objective`] over the simplex from the uniform point.
pub fn solve_gamma(
    grads: &GradientSet,
    g_fl: &ParamVector,
    cfg: &AggregationConfig,
) -> Result<SimplexWeights> {
    if g_fl.len() != grads.dim() {
        return Err(Error::dim(grads.dim(), g_fl.len()));
    }
    let init = SimplexWeights::uniform(grads.len())?;
    if grads.len() == 1 {
        return Ok(init);
    }
    let scale = if cfg.normalize_gradients {
        let largest = grads.gradients().iter().map(norm).fold(0.0, f64::max);
        if largest > DEGENERATE_NORM {
            largest
        } else {
            1.0
        }
    } else {
        1.0
    };
    let objective = GramObjective::new(grads, g_fl, cfg.kappa, scale);
    let solution = minimize_on_simplex(
        |g| objective.value(g.as_slice()),
        |g| objective.gradient(g.as_slice()),
        &init,
        &cfg.inner,
    )?;
    Ok(solution.weights)
}

/// `g_FL + κ‖g_FL‖ Γ*g / ‖Γ*g‖`, falling back to `g_FL` itself when κ is
/// zero or either norm is degenerate.
pub fn invariant_gradient(
    gamma_star: &SimplexWeights,
    grads: &GradientSet,
    g_fl: &ParamVector,
    kappa: f64,
) -> Result<ParamVector> {
    check_gamma(gamma_star, grads, g_fl)?;
    if kappa == 0.0 {
        return Ok(g_fl.clone());
    }
    let fl_norm = norm(g_fl);
    let combined = weighted_sum(grads.gradients(), gamma_star.as_slice())?;
    let combined_norm = norm(&combined);
    if combined_norm <= DEGENERATE_NORM || fl_norm <= DEGENERATE_NORM {
        return Ok(g_fl.clone());
    }
    let scale = kappa * fl_norm / combined_norm;
    ParamVector::new(
        g_fl.iter()
            .zip(combined.iter())
            .map(|(f, c)| f + scale * c)
            .collect(),
    )
}

fn inner_product_stats(grads: &GradientSet, direction: &ParamVector) -> Result<(f64, f64)> {
    let mut min = f64::INFINITY;
    let mut sum = 0.0;
    for g in grads.gradients() {
        let ip = dot(g, direction)?;
        min = min.min(ip);
        sum += ip;
    }
    let mean = sum / grads.len() as f64;
    // mean ≥ min holds mathematically; keep it exact under rounding
    Ok((min, mean.max(min)))
}

/// One server step of the matching-gradient rule: reference → Γ* → g_IGD.
pub fn aggregate_round(
    grads: &GradientSet,
    cfg: &AggregationConfig,
    external: Option<&ParamVector>,
) -> Result<AggregationReport> {
    let g_fl = reference_gradient(grads, cfg.reference, external)?;
    let gamma_star = solve_gamma(grads, &g_fl, cfg)?;
    let g_igd = invariant_gradient(&gamma_star, grads, &g_fl, cfg.kappa)?;
    let objective_value = omg_objective(&gamma_star, grads, &g_fl, cfg.kappa)?;
    let (min_inner_product, mean_inner_product) = inner_product_stats(grads, &g_igd)?;
    Ok(AggregationReport {
        gamma_star,
        g_fl,
        g_igd,
        objective_value,
        min_inner_product,
        mean_inner_product,
    })
}

/// Plain FedAvg: the applied direction is the reference itself and
/// `gamma_star` holds the sample-count weights.
pub fn aggregate_fedavg(
    grads: &GradientSet,
    cfg: &AggregationConfig,
    external: Option<&ParamVector>,
) -> Result<AggregationReport> {
    let g_fl = reference_gradient(grads, cfg.reference, external)?;
    let gamma_star = SimplexWeights::new(fedavg_weights(grads)?)
        .or_else(|_| project_weights(grads))?;
    let objective_value = dot(&g_fl, &g_fl)?;
    let (min_inner_product, mean_inner_product) = inner_product_stats(grads, &g_fl)?;
    Ok(AggregationReport {
        gamma_star,
        g_igd: g_fl.clone(),
        g_fl,
        objective_value,
        min_inner_product,
        mean_inner_product,
    })
}

fn project_weights(grads: &GradientSet) -> Result<SimplexWeights> {
    crate::simplex::project_to_simplex(&fedavg_weights(grads)?)
}

/// Dispatches on `kind`.
pub fn aggregate(
    kind: AggregatorKind,
    grads: &GradientSet,
    cfg: &AggregationConfig,
    external: Option<&ParamVector>,
) -> Result<AggregationReport> {
    match kind {
        AggregatorKind::FedAvg => aggregate_fedavg(grads, cfg, external),
        AggregatorKind::FedOmg => aggregate_round(grads, cfg, external),
    }
}

/// `θ − η_g·g_IGD`.
///
/// Pseudo-gradients are `θ_before − θ_after`, so with `η_g = 1` and `κ = 0`
/// this reproduces sample-weighted parameter averaging.
pub fn apply_global_update(
    theta: &ParamVector,
    g_igd: &ParamVector,
    global_lr: f64,
) -> Result<ParamVector> {
    if theta.len() != g_igd.len() {
        return Err(Error::dim(theta.len(), g_igd.len()));
    }
    ParamVector::new(
        theta
            .iter()
            .zip(g_igd.iter())
            .map(|(t, g)| t - global_lr * g)
            .collect(),
    )
}

/// Samples `samples` points uniformly on the sphere `‖x − g_FL‖ = κ‖g_FL‖`
/// and returns `max_x min_u g_u·x − min_u g_u·g_IGD`.
///
/// A correctly solved instance gives a value no larger than the solver
/// tolerance (sampling only ever under-estimates the true maximum).
pub fn dual_oracle_check(
    grads: &GradientSet,
    g_fl: &ParamVector,
    kappa: f64,
    g_igd: &ParamVector,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidInput("dual oracle needs at least one sample".into()));
    }
    let m = grads.dim();
    if g_fl.len() != m {
        return Err(Error::dim(m, g_fl.len()));
    }
    if g_igd.len() != m {
        return Err(Error::dim(m, g_igd.len()));
    }
    let worst = |x: &[f64]| {
        grads
            .gradients()
            .iter()
            .map(|g| dot_slice(g.as_slice(), x))
            .fold(f64::INFINITY, f64::min)
    };
    let achieved = worst(g_igd.as_slice());
    let radius = kappa * norm(g_fl);
    if radius == 0.0 {
        return Ok(worst(g_fl.as_slice()) - achieved);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::NEG_INFINITY;
    let mut dir = vec![0.0; m];
    let mut x = vec![0.0; m];
    for _ in 0..samples {
        let len = loop {
            for d in dir.iter_mut() {
                *d = StandardNormal.sample(&mut rng);
            }
            let len = dot_slice(&dir, &dir).sqrt();
            if len > 0.0 {
                break len;
            }
        };
        for ((xi, fi), di) in x.iter_mut().zip(g_fl.iter()).zip(&dir) {
            *xi = fi + radius * di / len;
        }
        best = best.max(worst(&x));
    }
    Ok(best - achieved)
}
