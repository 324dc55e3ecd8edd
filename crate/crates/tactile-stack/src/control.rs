//! Hybrid position-force control: a deadband corrective law on top of the
//! policy's kinematic targets, with the net external force and internal
//! grasp force regulated on two independent channels, actuated by PID.
//!
//! The corrective law is piecewise: with `ΔF = f_target − f_measured`,
//!
//! ```text
//! p_hybrid = p_target + K·ΔF   if ‖ΔF‖ > τ
//! p_hybrid = p_target          if ‖ΔF‖ ≤ τ
//! ```
//!
//! The deadband branch returns `p_target` bit-exactly, and the commanded
//! jump across the τ boundary is bounded by `‖K‖·τ`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::config::ControllerGains;
use crate::types::{force_error, ForceVector, HybridCommand, Vec3};

impl ControllerGains {
    /// Gain matrix K (diagonal by default).
    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vec3::new(
            self.k_diag[0],
            self.k_diag[1],
            self.k_diag[2],
        ))
    }
}

/// Position command for the external-force channel.
///
/// Inside the deadband (`‖ΔF‖ ≤ τ`, boundary included) the target passes
/// through unchanged; above it the correction `K·ΔF` is superimposed.
pub fn hybrid_target(
    p_target: Vec3,
    f_target: ForceVector,
    f_measured: ForceVector,
    gains: &ControllerGains,
) -> Vec3 {
    let delta = force_error(f_target, f_measured);
    if delta.norm() > gains.tau {
        p_target + gains.k_matrix() * delta.to_correction_basis()
    } else {
        p_target
    }
}

/// Same law on the external channel but also reporting the error and
/// whether the deadband was active, for telemetry.
pub fn hybrid_target_telemetry(
    p_target: Vec3,
    f_target: ForceVector,
    f_measured: ForceVector,
    gains: &ControllerGains,
) -> (Vec3, ForceVector, bool) {
    let delta = force_error(f_target, f_measured);
    let deadband = delta.norm() <= gains.tau;
    let p_hybrid = if deadband {
        p_target
    } else {
        p_target + gains.k_matrix() * delta.to_correction_basis()
    };
    (p_hybrid, delta, deadband)
}

/// Width command for the grasp-force channel. A larger desired force
/// closes the gripper: `width_target − k_grip_gain·(f_target − f_measured)`
/// outside the deadband, `width_target` inside it.
pub fn grasp_channel(
    width_target: f64,
    f_grasp_target: f64,
    f_grasp_measured: f64,
    gains: &ControllerGains,
) -> f64 {
    let err = f_grasp_target - f_grasp_measured;
    if err.abs() > gains.grasp_deadband() {
        width_target - gains.k_grip_gain * err
    } else {
        width_target
    }
}

/// PID integrator and derivative memory for the position loop.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub integrator: Vec3,
    pub previous_error: Vec3,
    pub last_p_hybrid: Vec3,
}

impl ControllerState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One discrete PID update on the position error. Returns the new state and
/// the actuation (a Cartesian tool velocity command). The integrator is
/// clamped componentwise to ±`integrator_limit`.
pub fn pid_step(
    state: &ControllerState,
    p_hybrid: Vec3,
    p_actual: Vec3,
    dt: f64,
    gains: &ControllerGains,
) -> (ControllerState, Vec3) {
    debug_assert!(dt > 0.0);
    let error = p_hybrid - p_actual;
    let limit = gains.integrator_limit;
    let integrator = (state.integrator + error * dt).map(|v| v.clamp(-limit, limit));
    let derivative = (error - state.previous_error) / dt;
    let actuation = error * gains.kp + integrator * gains.ki + derivative * gains.kd;
    let next = ControllerState {
        integrator,
        previous_error: error,
        last_p_hybrid: p_hybrid,
    };
    (next, actuation)
}

/// Splits one command into its two independent channels. The external
/// channel reads only `(p_target, f_target_external, measured_external)`;
/// the grasp channel reads only `(grip_width_target, f_target_grasp,
/// measured_grasp)`.
pub fn decouple(
    cmd: &HybridCommand,
    measured_external: ForceVector,
    measured_grasp: f64,
    gains: &ControllerGains,
) -> (Vec3, f64) {
    let p_hybrid = hybrid_target(cmd.p_target, cmd.f_target_external, measured_external, gains);
    let width = grasp_channel(
        cmd.grip_width_target,
        cmd.f_target_grasp,
        measured_grasp,
        gains,
    );
    (p_hybrid, width)
}
