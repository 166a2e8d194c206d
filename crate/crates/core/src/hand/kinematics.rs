//! Forward kinematics and fingertip Jacobians for [`HandModel`].
//!
//! Positions are reported in the palm frame, so the palm keypoint is always
//! the origin. Each fingertip depends only on its own finger's joints; its
//! Jacobian is stored as a 3 x |f| block over those joints.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, Isometry3, Matrix3xX, Point3, Translation3, UnitQuaternion, Vector3};

use super::model::{Finger, HandModel, JointConfig, Keypoint};
use crate::error::Result;

/// Palm-frame positions (m) of every keypoint on the hand.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointPositions {
    pub tips: [Vector3<f64>; 4],
}

impl KeypointPositions {
    pub fn get(&self, kp: Keypoint) -> Vector3<f64> {
        match kp {
            Keypoint::Palm => Vector3::zeros(),
            Keypoint::Tip(f) => self.tips[f.index()],
        }
    }

    pub fn tip(&self, f: Finger) -> Vector3<f64> {
        self.tips[f.index()]
    }
}

/// Fingertip Jacobians, one 3 x |f| block per finger.
#[derive(Clone, Debug)]
pub struct TipJacobians {
    pub blocks: [Matrix3xX<f64>; 4],
}

impl TipJacobians {
    pub fn block(&self, f: Finger) -> &Matrix3xX<f64> {
        &self.blocks[f.index()]
    }

    /// Jacobian of a keypoint position with respect to the full configuration.
    pub fn keypoint_full(&self, model: &HandModel, kp: Keypoint) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(3, model.dof());
        if let Keypoint::Tip(f) = kp {
            let range = model.finger_range(f);
            out.columns_mut(range.start, range.len())
                .copy_from(self.block(f));
        }
        out
    }
}

fn eval_angle(v: f64, limits: [f64; 2]) -> f64 {
    v.clamp(limits[0] - TAU, limits[1] + TAU)
}

/// Runs one finger chain, optionally filling its Jacobian block.
fn finger_fk(
    model: &HandModel,
    f: Finger,
    q: &[f64],
    jac: Option<&mut Matrix3xX<f64>>,
    mut points: Option<&mut Vec<Vector3<f64>>>,
) -> Vector3<f64> {
    let cache = &model.chains[f.index()];
    let chain = model.finger(f);
    let mut frame: Isometry3<f64> = model.palm_inv * cache.base;
    let mut joint_pos = Vec::with_capacity(chain.dof());
    let mut joint_axes = Vec::with_capacity(chain.dof());
    for (i, joint) in chain.joints.iter().enumerate() {
        frame *= cache.origins[i];
        if let Some(p) = points.as_deref_mut() {
            p.push(frame.translation.vector);
        }
        let axis = cache.axes[i];
        if jac.is_some() {
            joint_pos.push(frame.translation.vector);
            joint_axes.push(frame.rotation * axis.into_inner());
        }
        let angle = eval_angle(q[i], joint.limits);
        frame *= Isometry3::from_parts(
            Translation3::identity(),
            UnitQuaternion::from_axis_angle(&axis, angle),
        );
        frame *= Translation3::new(chain.link_lengths[i], 0.0, 0.0);
    }
    let tip = frame.transform_point(&Point3::from(cache.offset)).coords;
    if let Some(p) = points {
        p.push(frame.translation.vector);
        p.push(tip);
    }
    if let Some(jac) = jac {
        for (i, (p, w)) in joint_pos.iter().zip(&joint_axes).enumerate() {
            let col = w.cross(&(tip - p));
            jac.set_column(i, &col);
        }
    }
    tip
}

/// Palm-frame keypoint positions for configuration `q`.
///
/// Angles are evaluated clamped to within one full turn of the joint limits.
pub fn forward_kinematics(model: &HandModel, q: &JointConfig) -> Result<KeypointPositions> {
    model.check_config(q)?;
    let tips = Finger::ALL.map(|f| finger_fk(model, f, q.finger(model, f), None, None));
    Ok(KeypointPositions { tips })
}

/// Keypoint positions together with analytic fingertip Jacobians.
pub fn forward_kinematics_with_jacobian(
    model: &HandModel,
    q: &JointConfig,
) -> Result<(KeypointPositions, TipJacobians)> {
    model.check_config(q)?;
    let mut blocks = Finger::ALL.map(|f| Matrix3xX::zeros(model.finger_dof(f)));
    let mut tips = [Vector3::zeros(); 4];
    for f in Finger::ALL {
        tips[f.index()] = finger_fk(model, f, q.finger(model, f), Some(&mut blocks[f.index()]), None);
    }
    Ok((KeypointPositions { tips }, TipJacobians { blocks }))
}

/// Fingertip position and 3 x |f| Jacobian for a single finger, given only that
/// finger's joint angles.
pub fn finger_tip_with_jacobian(
    model: &HandModel,
    f: Finger,
    q_finger: &[f64],
) -> (Vector3<f64>, Matrix3xX<f64>) {
    assert_eq!(q_finger.len(), model.finger_dof(f));
    let mut jac = Matrix3xX::zeros(q_finger.len());
    let tip = finger_fk(model, f, q_finger, Some(&mut jac), None);
    (tip, jac)
}

pub fn finger_tip(model: &HandModel, f: Finger, q_finger: &[f64]) -> Vector3<f64> {
    assert_eq!(q_finger.len(), model.finger_dof(f));
    finger_fk(model, f, q_finger, None, None)
}

/// Palm-frame points along each finger for drawing: every joint origin, the
/// end of the last link, then the fingertip keypoint.
pub fn chain_points(model: &HandModel, q: &JointConfig) -> Result<[Vec<Vector3<f64>>; 4]> {
    model.check_config(q)?;
    Ok(Finger::ALL.map(|f| {
        let mut points = Vec::with_capacity(model.finger_dof(f) + 2);
        finger_fk(model, f, q.finger(model, f), None, Some(&mut points));
        points
    }))
}
