//! Hyperparameter fitting by maximizing the marginal likelihood with Adam.
//!
//! Optimization runs in an unconstrained space: log lengthscales, the log of
//! the noise excess over a small floor, the strict lower triangle of `L_t` as
//! is and its diagonal in log form, plus an optional constant mean per output.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernel::{kernel_from_distances, squared_distances};
use super::model::{cholesky_with_jitter, GpHyperparams, TrainedFingerGp};
use crate::error::{Error, Result};
use crate::hand::Finger;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fit a constant mean per output instead of a zero mean.
    pub learn_mean: bool,
    /// Lower bound on the noise standard deviation during fitting.
    pub noise_floor: f64,
    /// Standard deviation of the random perturbation of the initial point.
    pub init_noise: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 0.01,
            epochs: 3000,
            seed: 0,
            learn_mean: false,
            noise_floor: 1e-3,
            init_noise: 0.01,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {} is not positive", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.noise_floor.is_finite() && self.noise_floor > 0.0 && self.noise_floor < 0.1) {
            return Err(Error::invalid("noise floor must lie in (0, 0.1)"));
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return Err(Error::invalid("init noise must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub finger: Finger,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Negative log marginal likelihood after every epoch.
    pub loss_history: Vec<f64>,
}

/// Layout of the unconstrained parameter vector.
#[derive(Clone, Debug)]
pub struct ParamLayout {
    pub input_dim: usize,
    pub num_tasks: usize,
    pub learn_mean: bool,
    pub noise_floor: f64,
}

impl ParamLayout {
    fn tri_len(&self) -> usize {
        self.num_tasks * (self.num_tasks + 1) / 2
    }

    pub fn len(&self) -> usize {
        self.input_dim + 1 + self.tri_len() + if self.learn_mean { self.num_tasks } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn noise_index(&self) -> usize {
        self.input_dim
    }

    fn tri_start(&self) -> usize {
        self.input_dim + 1
    }

    fn mean_start(&self) -> usize {
        self.tri_start() + self.tri_len()
    }

    /// Packed position of `L_t[(i, j)]`, `j <= i`.
    fn tri_index(&self, i: usize, j: usize) -> usize {
        self.tri_start() + i * (i + 1) / 2 + j
    }

    pub fn decode(&self, theta: &[f64]) -> (GpHyperparams, Vec<f64>) {
        let t = self.num_tasks;
        let mut l = DMatrix::zeros(t, t);
        for i in 0..t {
            for j in 0..i {
                l[(i, j)] = theta[self.tri_index(i, j)];
            }
            l[(i, i)] = theta[self.tri_index(i, i)].exp();
        }
        let hyper = GpHyperparams {
            lengthscales: theta[..self.input_dim].iter().map(|u| u.exp()).collect(),
            noise_sigma: self.noise_floor + theta[self.noise_index()].exp(),
            task_cov_chol: l,
        };
        let mean = if self.learn_mean {
            theta[self.mean_start()..].to_vec()
        } else {
            vec![0.0; t]
        };
        (hyper, mean)
    }

    pub fn encode(&self, hyper: &GpHyperparams, mean: &[f64]) -> Vec<f64> {
        let mut theta = vec![0.0; self.len()];
        for (k, l) in hyper.lengthscales.iter().enumerate() {
            theta[k] = l.ln();
        }
        theta[self.noise_index()] = (hyper.noise_sigma - self.noise_floor).max(1e-300).ln();
        let l = &hyper.task_cov_chol;
        for i in 0..self.num_tasks {
            for j in 0..i {
                theta[self.tri_index(i, j)] = l[(i, j)];
            }
            theta[self.tri_index(i, i)] = l[(i, i)].ln();
        }
        if self.learn_mean {
            theta[self.mean_start()..].copy_from_slice(mean);
        }
        theta
    }
}

/// Negative log marginal likelihood and its gradient in the unconstrained
/// parametrization. Pairwise distances are precomputed once.
pub struct NegMll {
    layout: ParamLayout,
    dist: Vec<DMatrix<f64>>,
    y: DMatrix<f64>,
}

impl NegMll {
    pub fn new(layout: ParamLayout, inputs: &[Vec<f64>], targets: &[f64]) -> Self {
        let c = inputs.len();
        NegMll {
            dist: squared_distances(inputs),
            y: DMatrix::from_column_slice(c, layout.num_tasks, targets),
            layout,
        }
    }

    pub fn eval(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let lay = &self.layout;
        let (hyper, mean) = lay.decode(theta);
        let c = self.y.nrows();
        let t = lay.num_tasks;

        let k = kernel_from_distances(&self.dist, &hyper.lengthscales);
        let mut k_sigma = k.clone();
        let s2 = hyper.noise_sigma * hyper.noise_sigma;
        for i in 0..c {
            k_sigma[(i, i)] += s2;
        }
        let (chol, _) = cholesky_with_jitter(&k_sigma)?;
        let lt = &hyper.task_cov_chol;
        let kt = lt * lt.transpose();

        let mut y = self.y.clone();
        for (j, mu) in mean.iter().enumerate() {
            y.column_mut(j).add_scalar_mut(-mu);
        }
        // alpha = K_sigma^-1 Y K_t^-1
        let z = chol.solve(&y);
        let kt_inv = {
            let w = lt
                .solve_lower_triangular(&DMatrix::identity(t, t))
                .ok_or_else(|| Error::IllConditioned("task factor is singular".into()))?;
            w.transpose() * w
        };
        let alpha = z * &kt_inv;

        let log_det_sigma: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_det_task: f64 = lt.diagonal().iter().map(|d| 2.0 * d.abs().ln()).sum();
        let n = (c * t) as f64;
        let loss = 0.5 * y.dot(&alpha)
            + 0.5 * (t as f64 * log_det_sigma + c as f64 * log_det_task)
            + 0.5 * n * (2.0 * std::f64::consts::PI).ln();

        let ks_inv = chol.inverse();
        let w_sigma = &ks_inv * t as f64 - &alpha * &kt * alpha.transpose();
        let w_task = &kt_inv * c as f64 - alpha.transpose() * &k_sigma * &alpha;

        let mut grad = vec![0.0; lay.len()];
        let wk = w_sigma.component_mul(&k);
        for (i, (d, l)) in self.dist.iter().zip(&hyper.lengthscales).enumerate() {
            grad[i] = 0.5 * wk.dot(d) / (l * l);
        }
        let excess = hyper.noise_sigma - lay.noise_floor;
        grad[lay.noise_index()] = hyper.noise_sigma * w_sigma.trace() * excess;

        let g_l = w_task * lt;
        for i in 0..t {
            for j in 0..i {
                grad[lay.tri_index(i, j)] = g_l[(i, j)];
            }
            grad[lay.tri_index(i, i)] = g_l[(i, i)] * lt[(i, i)];
        }
        if lay.learn_mean {
            for j in 0..t {
                grad[lay.mean_start() + j] = -alpha.column(j).sum();
            }
        }
        Ok((loss, grad))
    }
}

/// Adam with the usual bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(dim: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    pub fn update(&mut self, x: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            x[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Fits kernel, noise and task covariance (and optionally a constant mean)
/// to `C` inputs with task-major targets, then conditions on the data.
pub fn train_finger_gp(
    finger: Finger,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    num_tasks: usize,
    opts: &TrainOptions,
) -> Result<(TrainedFingerGp, TrainReport)> {
    opts.validate()?;
    if inputs.is_empty() {
        return Err(Error::NoData(format!("no training samples for the {} finger", finger.name())));
    }
    let input_dim = inputs[0].len();
    if input_dim == 0 || inputs.iter().any(|x| x.len() != input_dim) {
        return Err(Error::invalid("training inputs must share a nonzero dimension"));
    }
    if num_tasks == 0 || targets.len() != inputs.len() * num_tasks {
        return Err(Error::invalid(format!(
            "{} targets do not match {} samples x {} outputs",
            targets.len(),
            inputs.len(),
            num_tasks
        )));
    }
    if inputs.iter().flatten().chain(&targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("training data contains non-finite values"));
    }

    let layout = ParamLayout {
        input_dim,
        num_tasks,
        learn_mean: opts.learn_mean,
        noise_floor: opts.noise_floor,
    };
    let c = inputs.len();
    let init_mean: Vec<f64> = (0..num_tasks)
        .map(|t| targets[t * c..(t + 1) * c].iter().sum::<f64>() / c as f64)
        .collect();
    let init = GpHyperparams::independent(vec![1.0; input_dim], 0.1, num_tasks);
    let mut theta = layout.encode(&init, &init_mean);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let normal = Normal::new(0.0, opts.init_noise).map_err(|e| Error::invalid(e.to_string()))?;
    let hyper_len = input_dim + 1 + num_tasks * (num_tasks + 1) / 2;
    for v in &mut theta[..hyper_len] {
        *v += normal.sample(&mut rng);
    }

    let objective = NegMll::new(layout.clone(), &inputs, &targets);
    let mut adam = Adam::new(theta.len(), opts.lr);
    let mut history = Vec::with_capacity(opts.epochs);
    let (initial_loss, mut grad) = objective.eval(&theta)?;
    for epoch in 0..opts.epochs {
        adam.update(&mut theta, &grad);
        let (loss, g) = objective.eval(&theta).map_err(|e| match e {
            Error::IllConditioned(_) => Error::TrainingDiverged { epoch, loss: f64::NAN },
            other => other,
        })?;
        if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { epoch, loss });
        }
        history.push(loss);
        grad = g;
    }
    log::debug!(
        "{} finger: loss {initial_loss:.4} -> {:.4} in {} epochs",
        finger.name(),
        history.last().copied().unwrap_or(initial_loss),
        opts.epochs
    );

    let (hyper, mean) = layout.decode(&theta);
    let gp = TrainedFingerGp::fit(finger, hyper, mean, inputs, targets)?;
    let report = TrainReport {
        finger,
        epochs: opts.epochs,
        initial_loss,
        final_loss: *history.last().unwrap_or(&initial_loss),
        loss_history: history,
    };
    Ok((gp, report))
}

/// Convenience for tests and benches: targets as a `C x T` matrix.
pub fn targets_from_rows(rows: &[DVector<f64>]) -> Vec<f64> {
    let c = rows.len();
    let t = rows.first().map_or(0, |r| r.len());
    let mut out = vec![0.0; c * t];
    for (a, r) in rows.iter().enumerate() {
        for j in 0..t {
            out[j * c + a] = r[j];
        }
    }
    out
}
