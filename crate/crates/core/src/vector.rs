//! Flat parameter vectors and the per-round collection of client
//! pseudo-gradients.
//!
//! All reductions run left to right in a single thread so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat vector of model parameters or gradient components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps `values`, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite entry {} at index {i}",
                values[i]
            )));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// `self - other`, componentwise.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len(self.len(), other.len())?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// `c * self`, componentwise.
    pub fn scale(&self, c: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|v| c * v).collect())
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::dim(expected, actual));
    }
    Ok(())
}

/// Euclidean inner product.
pub fn dot(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(dot_slice(a.as_slice(), b.as_slice()))
}

pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Euclidean norm.
pub fn norm(a: &ParamVector) -> f64 {
    dot_slice(a.as_slice(), a.as_slice()).sqrt()
}

/// Componentwise `Σ_u weights[u] * vectors[u]`.
pub fn weighted_sum(vectors: &[ParamVector], weights: &[f64]) -> Result<ParamVector> {
    if vectors.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} vectors but {} weights",
            vectors.len(),
            weights.len()
        )));
    }
    let Some(first) = vectors.first() else {
        return Err(Error::Dimension("weighted_sum of zero vectors".into()));
    };
    let m = first.len();
    let mut out = vec![0.0; m];
    for (v, &w) in vectors.iter().zip(weights) {
        check_len(m, v.len())?;
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    ParamVector::new(out)
}

/// One pseudo-gradient per participating client, with the client's sample
/// count and identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    gradients: Vec<ParamVector>,
    sample_counts: Vec<u64>,
    client_ids: Vec<usize>,
}

impl GradientSet {
    pub fn new(
        gradients: Vec<ParamVector>,
        sample_counts: Vec<u64>,
        client_ids: Vec<usize>,
    ) -> Result<Self> {
        if gradients.is_empty() {
            return Err(Error::InvalidInput("gradient set is empty".into()));
        }
        if sample_counts.len() != gradients.len() || client_ids.len() != gradients.len() {
            return Err(Error::Dimension(format!(
                "{} gradients, {} sample counts, {} client ids",
                gradients.len(),
                sample_counts.len(),
                client_ids.len()
            )));
        }
        let m = gradients[0].len();
        for g in &gradients {
            check_len(m, g.len())?;
        }
        if let Some(u) = sample_counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidInput(format!(
                "client {} has zero samples",
                client_ids[u]
            )));
        }
        Ok(GradientSet {
            gradients,
            sample_counts,
            client_ids,
        })
    }

    /// Gradients with unit sample counts and ids `0..U`.
    pub fn uniform(gradients: Vec<ParamVector>) -> Result<Self> {
        let n = gradients.len();
        GradientSet::new(gradients, vec![1; n], (0..n).collect())
    }

    pub fn gradients(&self) -> &[ParamVector] {
        &self.gradients
    }

    pub fn sample_counts(&self) -> &[u64] {
        &self.sample_counts
    }

    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    /// Number of clients `U`.
    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    /// Model dimension `M`.
    pub fn dim(&self) -> usize {
        self.gradients[0].len()
    }

    /// Copy with every gradient multiplied by `c`.
    pub fn scaled(&self, c: f64) -> GradientSet {
        GradientSet {
            gradients: self.gradients.iter().map(|g| g.scale(c)).collect(),
            sample_counts: self.sample_counts.clone(),
            client_ids: self.client_ids.clone(),
        }
    }

    /// Copy with clients reordered as `order`.
    pub fn permuted(&self, order: &[usize]) -> GradientSet {
        GradientSet {
            gradients: order.iter().map(|&i| self.gradients[i].clone()).collect(),
            sample_counts: order.iter().map(|&i| self.sample_counts[i]).collect(),
            client_ids: order.iter().map(|&i| self.client_ids[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&pv(&[1.0, 2.0]), &pv(&[3.0, 4.0])).unwrap(), 11.0);
        assert_eq!(dot(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        let a = pv(&[0.3, -1.7, 2.5]);
        assert_eq!(dot(&a, &a).unwrap(), norm(&a).powi(2));
    }

    #[test]
    fn dot_length_mismatch() {
        assert!(matches!(
            dot(&pv(&[1.0]), &pv(&[1.0, 2.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn norm_examples() {
        assert_eq!(norm(&pv(&[3.0, 4.0])), 5.0);
        assert_eq!(norm(&ParamVector::zeros(3)), 0.0);
        assert!((norm(&pv(&[0.5, 0.5])) - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((norm(&pv(&[0.5, 0.5])) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn weighted_sum_examples() {
        let vs = [pv(&[2.0, 0.0]), pv(&[0.0, 4.0])];
        assert_eq!(weighted_sum(&vs, &[0.25, 0.75]).unwrap(), pv(&[0.5, 3.0]));
        assert_eq!(weighted_sum(&vs, &[0.0, 0.0]).unwrap(), pv(&[0.0, 0.0]));
        let one = [pv(&[1.5, -2.0, 7.0])];
        assert_eq!(weighted_sum(&one, &[1.0]).unwrap(), one[0]);
    }

    #[test]
    fn weighted_sum_mismatch() {
        let vs = [pv(&[2.0, 0.0]), pv(&[0.0])];
        assert!(weighted_sum(&vs, &[0.5, 0.5]).is_err());
        assert!(weighted_sum(&vs[..1], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn gradient_set_validation() {
        assert!(GradientSet::uniform(vec![]).is_err());
        assert!(GradientSet::uniform(vec![pv(&[1.0]), pv(&[1.0, 2.0])]).is_err());
        assert!(GradientSet::new(vec![pv(&[1.0])], vec![0], vec![0]).is_err());
        assert!(GradientSet::new(vec![pv(&[1.0])], vec![1, 2], vec![0]).is_err());
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..16).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0f64..100.0, n),
                prop::collection::vec(-100.0f64..100.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn dot_symmetric_and_cauchy_schwarz((a, b) in vec_pair()) {
            let (a, b) = (pv(&a), pv(&b));
            let ab = dot(&a, &b).unwrap();
            prop_assert_eq!(ab, dot(&b, &a).unwrap());
            prop_assert!(ab.abs() <= norm(&a) * norm(&b) * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn dot_bilinear((a, b) in vec_pair(), c in -10.0f64..10.0) {
            let (a, b) = (pv(&a), pv(&b));
            let lhs = dot(&a.scale(c), &b).unwrap();
            let rhs = c * dot(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn weighted_sum_linear_in_weights(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 1..6),
            seed_w in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 6),
        ) {
            let vs: Vec<_> = rows.iter().map(|r| pv(r)).collect();
            let w1: Vec<f64> = seed_w.iter().take(vs.len()).map(|p| p.0).collect();
            let w2: Vec<f64> = seed_w.iter().take(vs.len()).map(|p| p.1).collect();
            let wsum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
            let lhs = weighted_sum(&vs, &wsum).unwrap();
            let r1 = weighted_sum(&vs, &w1).unwrap();
            let r2 = weighted_sum(&vs, &w2).unwrap();
            let scale: f64 = vs.iter().flat_map(|v| v.iter()).map(|x| x.abs()).sum::<f64>()
                * wsum.iter().chain(&w1).chain(&w2).map(|w| w.abs()).fold(0.0, f64::max);
            for i in 0..4 {
                let rhs = r1[i] + r2[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-12 * scale.max(1.0));
            }
        }
    }
}
