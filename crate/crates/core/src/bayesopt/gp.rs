//! Gaussian-process regression with a squared-exponential kernel.
//!
//! Inputs live in the unit cube. Targets are standardized before fitting
//! (when enabled) and predictions are mapped back to the original scale, so
//! the prior mean is the sample mean of the observations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("no observations")]
    Empty,
    #[error("observation {0} has the wrong dimension")]
    Dimension(usize),
    #[error("observation {0} is not finite")]
    NonFinite(usize),
    #[error("kernel matrix is singular even with jitter {0:e}")]
    Singular(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// One length scale shared by all dimensions (unit-cube units).
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub standardize: bool,
    /// Pick the length scale from a small grid by marginal likelihood.
    pub learn_length_scale: bool,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            length_scale: 0.2,
            signal_variance: 1.0,
            noise_variance: 1e-6,
            standardize: true,
            learn_length_scale: false,
        }
    }
}

const LENGTH_SCALE_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0];

/// A fitted GP posterior.
#[derive(Debug, Clone)]
pub struct GpModel {
    xs: Vec<Vec<f64>>,
    length_scales: Vec<f64>,
    signal_variance: f64,
    noise_variance: f64,
    y_mean: f64,
    y_scale: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Factor, jitter, weights and log marginal likelihood.
type Fit = (Cholesky<f64, Dyn>, f64, DVector<f64>, f64);

fn se(a: &[f64], b: &[f64], ls: &[f64], var: f64) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    var * (-0.5 * r2).exp()
}

fn factor(xs: &[Vec<f64>], ls: &[f64], var: f64, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = se(&xs[i], &xs[j], ls, var);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    let mut jitter = 0.0;
    loop {
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(m) {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-12 * var } else { jitter * 10.0 };
        if jitter > 1e-4 * var {
            return Err(GpError::Singular(jitter));
        }
    }
}

/// Fit a GP to `(x, y)` observations with `x` in the unit cube.
pub fn gp_fit(observations: &[(Vec<f64>, f64)], config: &GpConfig) -> Result<GpModel, GpError> {
    if observations.is_empty() {
        return Err(GpError::Empty);
    }
    let d = observations[0].0.len();
    for (i, (x, y)) in observations.iter().enumerate() {
        if x.len() != d {
            return Err(GpError::Dimension(i));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite(i));
        }
    }
    let xs: Vec<Vec<f64>> = observations.iter().map(|o| o.0.clone()).collect();
    let ys: Vec<f64> = observations.iter().map(|o| o.1).collect();
    let n = ys.len() as f64;
    let (y_mean, y_scale) = if config.standardize {
        let m = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n).sqrt();
        (m, if sd > 1e-12 { sd } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let z = DVector::from_iterator(ys.len(), ys.iter().map(|y| (y - y_mean) / y_scale));

    let fit_with = |l: f64| -> Result<Fit, GpError> {
        let ls = vec![l; d];
        let (chol, jitter) = factor(&xs, &ls, config.signal_variance, config.noise_variance)?;
        let alpha = chol.solve(&z);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        let lml = -0.5 * z.dot(&alpha) - 0.5 * log_det;
        Ok((chol, jitter, alpha, lml))
    };

    let mut best_l = config.length_scale;
    let mut fitted = fit_with(best_l)?;
    if config.learn_length_scale && observations.len() > 2 {
        for &l in &LENGTH_SCALE_GRID {
            if let Ok(f) = fit_with(l) {
                if f.3 > fitted.3 {
                    best_l = l;
                    fitted = f;
                }
            }
        }
    }
    let (chol, jitter, alpha, _) = fitted;
    Ok(GpModel {
        xs,
        length_scales: vec![best_l; d],
        signal_variance: config.signal_variance,
        noise_variance: config.noise_variance,
        y_mean,
        y_scale,
        alpha,
        chol,
        jitter,
    })
}

impl GpModel {
    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance + self.jitter
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn prior_variance(&self) -> f64 {
        self.signal_variance * self.y_scale * self.y_scale
    }

    fn kvec(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| se(x, xi, &self.length_scales, self.signal_variance)))
    }

    /// Posterior mean and variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = self.kvec(x);
        let mean = k.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (self.signal_variance - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_scale * mean, var * self.y_scale * self.y_scale)
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.y_mean + self.y_scale * self.kvec(x).dot(&self.alpha)
    }

    /// Analytic gradient of the posterior mean.
    pub fn mean_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for (xi, a) in self.xs.iter().zip(self.alpha.iter()) {
            let k = se(x, xi, &self.length_scales, self.signal_variance);
            for d in 0..x.len() {
                g[d] -= a * k * (x[d] - xi[d]) / self.length_scales[d].powi(2);
            }
        }
        g.iter().map(|v| v * self.y_scale).collect()
    }
}

/// Upper confidence bound `mean + beta · std`.
pub fn ucb(model: &GpModel, x: &[f64], beta: f64) -> f64 {
    let (m, v) = model.predict(x);
    m + beta * v.sqrt()
}
