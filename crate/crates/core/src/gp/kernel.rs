//! Squared-exponential kernel on the product of circles.
//!
//! Each joint contributes the geodesic angle between the two unit vectors
//! `(cos a, sin a)` and `(cos b, sin b)`, so the kernel is invariant to 2*pi
//! shifts of any input angle.

use nalgebra::{DMatrix, DVector};

/// Angle in [0, pi] between the unit vectors of `a` and `b`.
///
/// Equal to `acos` of the clamped dot product, evaluated through `atan2` so
/// that nearly identical angles keep full precision.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let dot = (ca * cb + sa * sb).clamp(-1.0, 1.0);
    let cross = ca * sb - sa * cb;
    cross.abs().atan2(dot)
}

pub fn kernel(qa: &[f64], qb: &[f64], lengthscales: &[f64]) -> f64 {
    assert_eq!(qa.len(), qb.len());
    assert_eq!(qa.len(), lengthscales.len());
    let exponent: f64 = qa
        .iter()
        .zip(qb)
        .zip(lengthscales)
        .map(|((&a, &b), &l)| {
            let d = angular_distance(a, b);
            d * d / (2.0 * l * l)
        })
        .sum();
    (-exponent).exp()
}

pub fn kernel_matrix(inputs: &[Vec<f64>], lengthscales: &[f64]) -> DMatrix<f64> {
    let c = inputs.len();
    let mut k = DMatrix::zeros(c, c);
    for a in 0..c {
        k[(a, a)] = 1.0;
        for b in 0..a {
            let v = kernel(&inputs[a], &inputs[b], lengthscales);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

pub fn kernel_vector(inputs: &[Vec<f64>], q_star: &[f64], lengthscales: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        inputs.len(),
        inputs.iter().map(|x| kernel(x, q_star, lengthscales)),
    )
}

/// Per-joint squared angular distances between all training inputs. Constant
/// during hyperparameter fitting, so computed once.
pub(crate) fn squared_distances(inputs: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
    let c = inputs.len();
    let m = inputs.first().map_or(0, Vec::len);
    (0..m)
        .map(|i| {
            DMatrix::from_fn(c, c, |a, b| {
                let d = angular_distance(inputs[a][i], inputs[b][i]);
                d * d
            })
        })
        .collect()
}

pub(crate) fn kernel_from_distances(dist: &[DMatrix<f64>], lengthscales: &[f64]) -> DMatrix<f64> {
    let c = dist.first().map_or(0, |d| d.nrows());
    let mut exponent = DMatrix::zeros(c, c);
    for (d, &l) in dist.iter().zip(lengthscales) {
        exponent += d / (2.0 * l * l);
    }
    exponent.map(|e| (-e).exp())
}
