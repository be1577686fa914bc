//! Euclidean projection onto the probability simplex and a projected
//! heavy-ball minimizer over it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|Σγ − 1|` accepted by [`SimplexWeights::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Nonnegative coefficients summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Dimension("simplex weights are empty".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!(
                "simplex weight {i} is {}",
                weights[i]
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "simplex weights sum to {sum}"
            )));
        }
        Ok(SimplexWeights(weights))
    }

    /// The barycenter `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("simplex of dimension zero".into()));
        }
        Ok(SimplexWeights(vec![1.0 / n as f64; n]))
    }

    /// The `i`-th vertex `e_i`.
    pub fn vertex(n: usize, i: usize) -> Result<Self> {
        if i >= n {
            return Err(Error::Dimension(format!("vertex {i} of a {n}-simplex")));
        }
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        Ok(SimplexWeights(w))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;

    fn try_from(w: Vec<f64>) -> Result<Self> {
        SimplexWeights::new(w)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

/// Euclidean projection of `v` onto `{γ : γ ≥ 0, Σγ = 1}`.
///
/// Sort-based: with `u` the entries in descending order, `ρ` is the largest
/// index with `u_ρ − (Σ_{i≤ρ} u_i − 1)/ρ > 0` and the output is
/// `max(v_i − τ, 0)` for `τ = (Σ_{i≤ρ} u_i − 1)/ρ`. The sort is stable, so
/// equal entries keep their input order.
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::Dimension("cannot project an empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite entry {} at index {i}",
            v[i]
        )));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));

    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let projected: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    Ok(SimplexWeights(projected))
}

/// Step size, iteration budget, and heavy-ball coefficient of the inner
/// solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerOptConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub momentum: f64,
}

impl Default for InnerOptConfig {
    fn default() -> Self {
        InnerOptConfig {
            learning_rate: 25.0,
            iterations: 21,
            momentum: 0.5,
        }
    }
}

impl InnerOptConfig {
    /// Returns the offending field name and a message on failure.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err((
                "learning_rate",
                format!("must be > 0, got {}", self.learning_rate),
            ));
        }
        if self.iterations == 0 {
            return Err(("iterations", "must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err((
                "momentum",
                format!("must lie in [0, 1), got {}", self.momentum),
            ));
        }
        Ok(())
    }
}

/// Result of [`minimize_on_simplex`].
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexSolution {
    /// Best iterate observed, including the initial point.
    pub weights: SimplexWeights,
    pub value: f64,
    /// Iteration at which `weights` was reached; 0 means the initial point.
    pub best_iteration: usize,
}

/// Projected heavy-ball descent:
/// `m ← β·m + ∇f(γ)`, `γ ← Π(γ − η·m)`.
///
/// Returns the best-so-far iterate rather than the last one.
pub fn minimize_on_simplex<F, G>(
    objective: F,
    gradient: G,
    init: &SimplexWeights,
    cfg: &InnerOptConfig,
) -> Result<SimplexSolution>
where
    F: Fn(&SimplexWeights) -> f64,
    G: Fn(&SimplexWeights) -> Vec<f64>,
{
    minimize_on_simplex_observed(objective, gradient, init, cfg, |_, _, _| {})
}

/// Same as [`minimize_on_simplex`], calling `observe(k, γ_k, f(γ_k))` on
/// every iterate (including `k = 0` for the initial point).
pub fn minimize_on_simplex_observed<F, G, O>(
    objective: F,
    gradient: G,
    init: &SimplexWeights,
    cfg: &InnerOptConfig,
    mut observe: O,
) -> Result<SimplexSolution>
where
    F: Fn(&SimplexWeights) -> f64,
    G: Fn(&SimplexWeights) -> Vec<f64>,
    O: FnMut(usize, &SimplexWeights, f64),
{
    if let Err((field, msg)) = cfg.validate() {
        return Err(Error::InvalidInput(format!("{field} {msg}")));
    }
    let n = init.len();
    let mut gamma = init.clone();
    let f0 = objective(&gamma);
    if !f0.is_finite() {
        return Err(Error::Numerical {
            iteration: 0,
            what: format!("objective is {f0}"),
        });
    }
    observe(0, &gamma, f0);

    let mut best = SimplexSolution {
        weights: gamma.clone(),
        value: f0,
        best_iteration: 0,
    };
    let mut velocity = vec![0.0; n];
    for k in 1..=cfg.iterations {
        let grad = gradient(&gamma);
        if grad.len() != n {
            return Err(Error::dim(n, grad.len()));
        }
        if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numerical {
                iteration: k,
                what: format!("gradient component is {g}"),
            });
        }
        for (m, g) in velocity.iter_mut().zip(&grad) {
            *m = cfg.momentum * *m + g;
        }
        let step: Vec<f64> = gamma
            .as_slice()
            .iter()
            .zip(&velocity)
            .map(|(x, m)| x - cfg.learning_rate * m)
            .collect();
        gamma = project_to_simplex(&step).map_err(|e| Error::Numerical {
            iteration: k,
            what: e.to_string(),
        })?;
        let f = objective(&gamma);
        if !f.is_finite() {
            return Err(Error::Numerical {
                iteration: k,
                what: format!("objective is {f}"),
            });
        }
        observe(k, &gamma, f);
        if f < best.value {
            best = SimplexSolution {
                weights: gamma.clone(),
                value: f,
                best_iteration: k,
            };
        }
    }
    Ok(best)
}
