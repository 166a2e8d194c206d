//! Small planar hands with closed-form kinematics, used as test oracles.
//!
//! Every joint turns about +z and every link extends along the rotated +x
//! axis, so a fingertip sits at
//! `base + sum_k L_k (cos(yaw + q_0 + .. + q_k), sin(yaw + q_0 + .. + q_k))`.

use crate::hand::{Finger, FingerChain, HandModel, JointSpec, Pose};

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarFinger {
    pub base: [f64; 2],
    pub yaw: f64,
    pub lengths: Vec<f64>,
    pub limits: Vec<[f64; 2]>,
}

impl PlanarFinger {
    pub fn new(base: [f64; 2], yaw: f64, lengths: Vec<f64>, limits: Vec<[f64; 2]>) -> Self {
        assert_eq!(lengths.len(), limits.len());
        PlanarFinger { base, yaw, lengths, limits }
    }

    /// A one-joint stub that stays out of the way.
    pub fn stub(y: f64) -> Self {
        PlanarFinger::new([0.0, y], 0.0, vec![0.03], vec![[-1.0, 1.0]])
    }

    /// Closed-form fingertip position.
    pub fn tip(&self, q: &[f64]) -> [f64; 2] {
        let mut angle = self.yaw;
        let [mut x, mut y] = self.base;
        for (l, a) in self.lengths.iter().zip(q) {
            angle += a;
            x += l * angle.cos();
            y += l * angle.sin();
        }
        [x, y]
    }

    fn chain(&self, finger: Finger) -> FingerChain {
        FingerChain {
            finger,
            base: Pose { xyz: [self.base[0], self.base[1], 0.0], rpy: [0.0, 0.0, self.yaw] },
            joints: self
                .limits
                .iter()
                .enumerate()
                .map(|(i, &limits)| JointSpec {
                    name: format!("{}_{i}", finger.name()),
                    axis: [0.0, 0.0, 1.0],
                    origin: Pose::default(),
                    limits,
                })
                .collect(),
            link_lengths: self.lengths.clone(),
            fingertip_offset: [0.0; 3],
        }
    }
}

/// Builds a hand from four planar fingers in thumb, index, middle, ring order.
pub fn planar_hand(name: &str, fingers: [PlanarFinger; 4]) -> HandModel {
    let chains = Finger::ALL
        .iter()
        .zip(&fingers)
        .map(|(&f, pf)| pf.chain(f))
        .collect();
    HandModel::new(name, Pose::default(), chains).expect("planar fixture is valid")
}
