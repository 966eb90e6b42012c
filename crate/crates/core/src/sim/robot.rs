//! Unicycle kinematics.

use serde::{Deserialize, Serialize};

use crate::band::{Pose2, Twist};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    pub twist: Twist,
    pub time: f64,
}

impl RobotState {
    pub fn at_rest(pose: Pose2) -> Self {
        Self {
            pose,
            twist: Twist::default(),
            time: 0.0,
        }
    }
}

/// Exact constant-twist arc over `dt`. The realized twist equals `cmd`.
pub fn integrate(state: &RobotState, cmd: Twist, dt: f64) -> RobotState {
    debug_assert!(dt > 0.0);
    let p = state.pose;
    let (v, w) = (cmd.v, cmd.omega);
    let pose = if w.abs() < 1e-9 {
        let (s, c) = p.beta().sin_cos();
        Pose2::new(p.x() + v * dt * c, p.y() + v * dt * s, p.beta() + w * dt)
    } else {
        let b1 = p.beta() + w * dt;
        let r = v / w;
        Pose2::new(
            p.x() + r * (b1.sin() - p.beta().sin()),
            p.y() - r * (b1.cos() - p.beta().cos()),
            b1,
        )
    };
    RobotState {
        pose,
        twist: cmd,
        time: state.time + dt,
    }
}
