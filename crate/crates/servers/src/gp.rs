//! Exact Gaussian-process regression over a finite candidate set, with
//! joint Thompson sampling.
//!
//! Inputs are z-scored with statistics of the whole candidate set and
//! observations with statistics of the measured values. The kernel is a
//! squared exponential with unit signal variance whose lengthscale is the
//! median pairwise distance of the measured inputs (1.0 when fewer than two
//! distinct points exist).

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const SIGNAL_VARIANCE: f64 = 1.0;
pub const NOISE_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GpError {
    #[error("no observations to condition on")]
    NoObservations,
    #[error("inputs have inconsistent dimensions")]
    Dimension,
    #[error("observation {0} is not finite")]
    NonFinite(f64),
    #[error("kernel matrix is not positive definite")]
    NotPositiveDefinite,
}

/// Per-dimension affine standardization.
#[derive(Debug, Clone)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[Vec<f64>]) -> Self {
        let dims = points.first().map_or(0, Vec::len);
        let n = points.len().max(1) as f64;
        let mut mean = vec![0.0; dims];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; dims];
        for p in points {
            for ((s, v), m) in scale.iter_mut().zip(p).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Median of pairwise distances; `None` if fewer than two distinct points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> Option<f64> {
    let mut d = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            d.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    if d.iter().all(|v| *v == 0.0) {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 {
        (d[mid - 1] + d[mid]) / 2.0
    } else {
        d[mid]
    };
    (median > 0.0).then_some(median)
}

#[derive(Debug, Clone)]
pub struct GaussianProcess {
    inputs: Standardizer,
    train: Vec<Vec<f64>>,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_scale: f64,
    lengthscale: f64,
}

impl GaussianProcess {
    /// Conditions on `(points[i], observations[i])`. `candidates` supplies the
    /// input standardization and should include every point ever queried.
    pub fn fit(
        candidates: &[Vec<f64>],
        points: &[Vec<f64>],
        observations: &[f64],
    ) -> Result<Self, GpError> {
        if points.is_empty() {
            return Err(GpError::NoObservations);
        }
        if points.len() != observations.len() {
            return Err(GpError::Dimension);
        }
        let dims = points[0].len();
        if points.iter().chain(candidates).any(|p| p.len() != dims) {
            return Err(GpError::Dimension);
        }
        if let Some(bad) = observations.iter().find(|v| !v.is_finite()) {
            return Err(GpError::NonFinite(*bad));
        }

        let inputs = Standardizer::fit(if candidates.is_empty() { points } else { candidates });
        let train: Vec<Vec<f64>> = points.iter().map(|p| inputs.apply(p)).collect();
        let lengthscale = median_pairwise_distance(&train).unwrap_or(1.0);

        let n = observations.len() as f64;
        let y_mean = observations.iter().sum::<f64>() / n;
        let var = observations.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = DVector::from_iterator(
            observations.len(),
            observations.iter().map(|v| (v - y_mean) / y_scale),
        );

        let kernel = |a: &[f64], b: &[f64]| {
            SIGNAL_VARIANCE * (-sq_dist(a, b) / (2.0 * lengthscale * lengthscale)).exp()
        };
        let k = DMatrix::from_fn(train.len(), train.len(), |i, j| {
            kernel(&train[i], &train[j]) + if i == j { NOISE_VARIANCE } else { 0.0 }
        });
        let chol = Cholesky::new(k).ok_or(GpError::NotPositiveDefinite)?;
        let alpha = chol.solve(&y);
        Ok(Self {
            inputs,
            train,
            chol,
            alpha,
            y_mean,
            y_scale,
            lengthscale,
        })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        SIGNAL_VARIANCE * (-sq_dist(a, b) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Joint posterior of the latent function at `points`, in observation units.
    pub fn posterior(&self, points: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let query: Vec<Vec<f64>> = points.iter().map(|p| self.inputs.apply(p)).collect();
        let cross = DMatrix::from_fn(self.train.len(), query.len(), |i, j| {
            self.kernel(&self.train[i], &query[j])
        });
        let mean = cross.transpose() * &self.alpha;
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&cross)
            .expect("cholesky factor is invertible");
        let prior = DMatrix::from_fn(query.len(), query.len(), |i, j| self.kernel(&query[i], &query[j]));
        let mut cov = prior - v.transpose() * v;
        cov.scale_mut(self.y_scale * self.y_scale);
        let mean = mean.map(|m| self.y_mean + self.y_scale * m);
        (mean, cov)
    }

    /// Marginal posterior mean and variance at each point.
    pub fn predict(&self, points: &[Vec<f64>]) -> Vec<(f64, f64)> {
        let (mean, cov) = self.posterior(points);
        (0..points.len())
            .map(|i| (mean[i], cov[(i, i)].max(0.0)))
            .collect()
    }

    /// One joint draw from the posterior at `points`.
    pub fn sample<R: Rng + ?Sized>(&self, points: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
        let (mean, cov) = self.posterior(points);
        let cov = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(cov);
        let z = DVector::from_iterator(
            points.len(),
            (0..points.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let scaled = DVector::from_iterator(
            points.len(),
            eig.eigenvalues
                .iter()
                .zip(z.iter())
                .map(|(l, z)| l.max(0.0).sqrt() * z),
        );
        let draw = mean + eig.eigenvectors * scaled;
        draw.iter().copied().collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}
