//! Multi-output GP with Kronecker-structured covariance `K_q = K_t (x) K_sigma`.
//!
//! Targets for `C` samples and `T` outputs are stored task-major: entry
//! `t * C + c` is output `t` of sample `c`, i.e. the column-major layout of a
//! `C x T` matrix `Y`. With that ordering `K_t (x) K_sigma` is exactly the
//! covariance of `vec(Y)`, and `K_q^-1 vec(Y) = vec(K_sigma^-1 Y K_t^-1)`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::angles::{from_tasks, FingerResidual};
use super::kernel::{kernel_matrix, kernel_vector};
use crate::error::{Error, Result};
use crate::hand::Finger;

pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-4;

/// Kernel lengthscales, observation noise and the Cholesky factor of the task
/// covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperparamsFile", into = "HyperparamsFile")]
pub struct GpHyperparams {
    pub lengthscales: Vec<f64>,
    pub noise_sigma: f64,
    /// Lower-triangular `L_t` with positive diagonal; `K_t = L_t L_t^T`.
    pub task_cov_chol: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct HyperparamsFile {
    lengthscales: Vec<f64>,
    noise_sigma: f64,
    /// Row `i` holds the `i + 1` lower-triangle entries of `L_t`.
    task_cov_chol: Vec<Vec<f64>>,
}

impl TryFrom<HyperparamsFile> for GpHyperparams {
    type Error = Error;

    fn try_from(f: HyperparamsFile) -> Result<Self> {
        let t = f.task_cov_chol.len();
        let mut l = DMatrix::zeros(t, t);
        for (i, row) in f.task_cov_chol.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::invalid(format!(
                    "task_cov_chol row {i} has {} entries, expected {}",
                    row.len(),
                    i + 1
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                l[(i, j)] = v;
            }
        }
        let h = GpHyperparams {
            lengthscales: f.lengthscales,
            noise_sigma: f.noise_sigma,
            task_cov_chol: l,
        };
        h.validate()?;
        Ok(h)
    }
}

impl From<GpHyperparams> for HyperparamsFile {
    fn from(h: GpHyperparams) -> Self {
        let l = &h.task_cov_chol;
        HyperparamsFile {
            task_cov_chol: (0..l.nrows())
                .map(|i| (0..=i).map(|j| l[(i, j)]).collect())
                .collect(),
            lengthscales: h.lengthscales,
            noise_sigma: h.noise_sigma,
        }
    }
}

impl GpHyperparams {
    /// Independent outputs (`K_t = I`).
    pub fn independent(lengthscales: Vec<f64>, noise_sigma: f64, num_tasks: usize) -> Self {
        GpHyperparams {
            lengthscales,
            noise_sigma,
            task_cov_chol: DMatrix::identity(num_tasks, num_tasks),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.task_cov_chol.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn task_cov(&self) -> DMatrix<f64> {
        &self.task_cov_chol * self.task_cov_chol.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::invalid("at least one lengthscale is required"));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::invalid(format!("lengthscale {l} is not positive")));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::invalid(format!(
                "noise sigma {} is not positive",
                self.noise_sigma
            )));
        }
        let l = &self.task_cov_chol;
        if l.nrows() == 0 || !l.is_square() {
            return Err(Error::invalid("task covariance factor must be square and nonempty"));
        }
        for i in 0..l.nrows() {
            if !(l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
                return Err(Error::invalid(format!(
                    "task covariance factor diagonal {i} is not positive"
                )));
            }
            for j in 0..l.ncols() {
                if !l[(i, j)].is_finite() || (j > i && l[(i, j)] != 0.0) {
                    return Err(Error::invalid("task covariance factor must be lower triangular"));
                }
            }
        }
        Ok(())
    }
}

/// Dense `K_q = K_t (x) (K + sigma^2 I)` for the given inputs.
pub fn build_covariance(samples: &[Vec<f64>], hyper: &GpHyperparams) -> DMatrix<f64> {
    let k_sigma = input_covariance(samples, hyper);
    hyper.task_cov().kronecker(&k_sigma)
}

fn input_covariance(samples: &[Vec<f64>], hyper: &GpHyperparams) -> DMatrix<f64> {
    let mut k = kernel_matrix(samples, &hyper.lengthscales);
    let s2 = hyper.noise_sigma * hyper.noise_sigma;
    for i in 0..samples.len() {
        k[(i, i)] += s2;
    }
    k
}

/// Cholesky with a growing diagonal jitter, 1e-8 doubling up to 1e-4.
pub(crate) fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = m.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += jitter;
        }
        if let Some(c) = jittered.cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 2.0;
    }
    Err(Error::IllConditioned(format!(
        "{0}x{0} covariance is not positive definite even with jitter {JITTER_MAX:e}",
        m.nrows()
    )))
}

/// Factorized `K_t (x) K_sigma`.
pub(crate) struct KroneckerFactor {
    pub sigma_chol: Cholesky<f64, Dyn>,
    pub task_chol: DMatrix<f64>,
}

impl KroneckerFactor {
    pub fn new(k_sigma: &DMatrix<f64>, task_chol: &DMatrix<f64>) -> Result<Self> {
        let (sigma_chol, _) = cholesky_with_jitter(k_sigma)?;
        Ok(KroneckerFactor {
            sigma_chol,
            task_chol: task_chol.clone(),
        })
    }

    /// `K_sigma^-1 Y K_t^-1` for a `C x T` matrix `Y`.
    pub fn solve(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.sigma_chol.solve(y);
        self.right_task_solve(&z)
    }

    /// `Z K_t^-1`.
    fn right_task_solve(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let l = &self.task_chol;
        let zt = z.transpose();
        let w = l
            .solve_lower_triangular(&zt)
            .expect("task factor has a positive diagonal");
        let x = l
            .transpose()
            .solve_upper_triangular(&w)
            .expect("task factor has a positive diagonal");
        x.transpose()
    }


    pub fn log_det(&self) -> f64 {
        let c = self.sigma_chol.l_dirty().nrows() as f64;
        let t = self.task_chol.nrows() as f64;
        let log_det_sigma: f64 = self
            .sigma_chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| 2.0 * d.ln())
            .sum();
        let log_det_task: f64 = self.task_chol.diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        t * log_det_sigma + c * log_det_task
    }
}

fn targets_matrix(q_r: &[f64], c: usize, t: usize) -> Result<DMatrix<f64>> {
    if q_r.len() != c * t {
        return Err(Error::invalid(format!(
            "target vector has {} entries, expected {} samples x {} outputs = {}",
            q_r.len(),
            c,
            t,
            c * t
        )));
    }
    Ok(DMatrix::from_column_slice(c, t, q_r))
}

fn check_samples(samples: &[Vec<f64>], hyper: &GpHyperparams) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::NoData("no training samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.len() != hyper.input_dim()) {
        return Err(Error::invalid(format!(
            "sample has {} angles but there are {} lengthscales",
            s.len(),
            hyper.input_dim()
        )));
    }
    Ok(())
}

/// Log marginal likelihood of task-major targets `q_r` under a zero-mean GP:
/// `-1/2 Q^T K_q^-1 Q - 1/2 log|K_q| - n/2 log(2 pi)`.
pub fn mll(hyper: &GpHyperparams, samples: &[Vec<f64>], q_r: &[f64]) -> Result<f64> {
    hyper.validate()?;
    check_samples(samples, hyper)?;
    let c = samples.len();
    let t = hyper.num_tasks();
    let y = targets_matrix(q_r, c, t)?;
    let factor = KroneckerFactor::new(&input_covariance(samples, hyper), &hyper.task_cov_chol)?;
    let alpha = factor.solve(&y);
    let n = (c * t) as f64;
    Ok(-0.5 * y.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n * (2.0 * PI).ln())
}

pub const GP_SCHEMA_VERSION: u32 = 1;

/// Hyperparameters plus training data with the precomputed solve
/// `K_q^-1 (Q_r - mean)`, ready for prediction. Immutable.
#[derive(Clone, Debug)]
pub struct TrainedFingerGp {
    file: GpFile,
    /// `K_q^-1 (Q_r - mean)` as a `C x T` matrix.
    cached_solve: DMatrix<f64>,
    task_cov: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GpFile {
    schema_version: u32,
    finger: Finger,
    hyper: GpHyperparams,
    /// Constant prior mean per output (all zero for residual models).
    mean: Vec<f64>,
    inputs: Vec<Vec<f64>>,
    /// Task-major training targets.
    targets: Vec<f64>,
}

impl PartialEq for TrainedFingerGp {
    fn eq(&self, other: &Self) -> bool {
        self.file == other.file
    }
}

impl Serialize for TrainedFingerGp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.file.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TrainedFingerGp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = GpFile::deserialize(d)?;
        if file.schema_version != GP_SCHEMA_VERSION {
            return Err(serde::de::Error::custom(Error::SchemaVersion {
                found: file.schema_version,
                expected: GP_SCHEMA_VERSION,
            }));
        }
        Self::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl TrainedFingerGp {
    /// Conditions a GP with the given hyperparameters on the training data.
    pub fn fit(
        finger: Finger,
        hyper: GpHyperparams,
        mean: Vec<f64>,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        Self::from_file(GpFile {
            schema_version: GP_SCHEMA_VERSION,
            finger,
            hyper,
            mean,
            inputs,
            targets,
        })
    }

    fn from_file(file: GpFile) -> Result<Self> {
        file.hyper.validate()?;
        check_samples(&file.inputs, &file.hyper)?;
        let c = file.inputs.len();
        let t = file.hyper.num_tasks();
        if file.mean.len() != t {
            return Err(Error::invalid(format!(
                "mean has {} entries for {} outputs",
                file.mean.len(),
                t
            )));
        }
        let mut y = targets_matrix(&file.targets, c, t)?;
        for (j, mu) in file.mean.iter().enumerate() {
            y.column_mut(j).add_scalar_mut(-mu);
        }
        let factor =
            KroneckerFactor::new(&input_covariance(&file.inputs, &file.hyper), &file.hyper.task_cov_chol)?;
        let cached_solve = factor.solve(&y);
        Ok(TrainedFingerGp {
            task_cov: file.hyper.task_cov(),
            cached_solve,
            file,
        })
    }

    pub fn finger(&self) -> Finger {
        self.file.finger
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.file.hyper
    }

    pub fn mean(&self) -> &[f64] {
        &self.file.mean
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.file.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.file.targets
    }

    pub fn num_samples(&self) -> usize {
        self.file.inputs.len()
    }

    /// `K_q^-1 (Q_r - mean)` in task-major order.
    pub fn cached_solve(&self) -> &[f64] {
        self.cached_solve.as_slice()
    }

    /// Posterior mean of every output at `q_star`:
    /// `mean + (K_t (x) k*^T) K_q^-1 (Q_r - mean)`.
    pub fn predict_tasks(&self, q_star: &[f64]) -> Result<DVector<f64>> {
        if q_star.len() != self.file.hyper.input_dim() {
            return Err(Error::invalid(format!(
                "query has {} angles, model expects {}",
                q_star.len(),
                self.file.hyper.input_dim()
            )));
        }
        let k_star = kernel_vector(&self.file.inputs, q_star, &self.file.hyper.lengthscales);
        let row = k_star.transpose() * &self.cached_solve * &self.task_cov;
        Ok(DVector::from_iterator(
            row.len(),
            row.iter().zip(&self.file.mean).map(|(v, mu)| v + mu),
        ))
    }

    /// Posterior mean reshaped to |f| x 2.
    pub fn posterior_mean(&self, q_star: &[f64]) -> Result<FingerResidual> {
        let tasks = self.predict_tasks(q_star)?;
        Ok(from_tasks(tasks.as_slice()))
    }

    /// Marginal posterior variance of each output at `q_star`:
    /// `K_t[t,t] * (k(q*, q*) - k*^T K_sigma^-1 k*)`. Not used by the retargeter.
    pub fn posterior_variance(&self, q_star: &[f64]) -> Result<DVector<f64>> {
        let hyper = &self.file.hyper;
        let k_star = kernel_vector(&self.file.inputs, q_star, &hyper.lengthscales);
        let (chol, _) = cholesky_with_jitter(&input_covariance(&self.file.inputs, hyper))?;
        let explained = k_star.dot(&chol.solve(&k_star));
        let shared = 1.0 - explained;
        Ok(self.task_cov.diagonal().map(|d| d * shared))
    }
}
