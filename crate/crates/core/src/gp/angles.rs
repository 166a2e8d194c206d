use nalgebra::MatrixXx2;

use crate::error::{Error, Result};

/// One `(cos q_i, sin q_i)` row per angle. Rows need not be unit length once a
/// residual has been added.
pub type AngleMatrix = MatrixXx2<f64>;

/// Difference of two angle matrices for one finger, |f| x 2.
pub type FingerResidual = MatrixXx2<f64>;

/// Rows with a smaller norm carry no usable direction.
pub const MIN_ROW_NORM: f64 = 1e-9;

pub fn v_map(q: &[f64]) -> AngleMatrix {
    let mut m = AngleMatrix::zeros(q.len());
    for (i, &a) in q.iter().enumerate() {
        let (s, c) = a.sin_cos();
        m[(i, 0)] = c;
        m[(i, 1)] = s;
    }
    m
}

/// Angle each row makes with the x axis, in (-pi, pi].
pub fn angle_map(m: &AngleMatrix) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(row, r)| {
            let norm = r.norm();
            if !(norm >= MIN_ROW_NORM) {
                return Err(Error::DegenerateRow { row, norm });
            }
            Ok(r[1].atan2(r[0]))
        })
        .collect()
}

/// Flattens an |f| x 2 matrix into task order `[c_0, s_0, c_1, s_1, ...]`.
pub fn to_tasks(m: &AngleMatrix) -> Vec<f64> {
    m.row_iter().flat_map(|r| [r[0], r[1]]).collect()
}

pub fn from_tasks(tasks: &[f64]) -> AngleMatrix {
    assert!(tasks.len().is_multiple_of(2), "task vector length must be even");
    AngleMatrix::from_row_slice(tasks)
}
