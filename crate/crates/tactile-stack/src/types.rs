//! Shared domain vocabulary: forces, frames, commands, instructions and
//! episode records used by every other module.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Cartesian 3-vector in the world frame (meters, m/s, ...).
pub type Vec3 = Vector3<f64>;

/// Normal + shear force reading in the tool frame, in newtons.
///
/// `normal` is aligned with the contact axis of the channel it describes:
/// the gripper closing axis for fingertip pads, the pressing axis for the
/// net external force. Positive `normal` means pressing.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceVector {
    pub normal: f64,
    pub shear_x: f64,
    pub shear_y: f64,
}

impl ForceVector {
    pub const ZERO: ForceVector = ForceVector {
        normal: 0.0,
        shear_x: 0.0,
        shear_y: 0.0,
    };

    pub fn new(normal: f64, shear_x: f64, shear_y: f64) -> Self {
        Self {
            normal,
            shear_x,
            shear_y,
        }
    }

    /// Euclidean norm of the three components.
    pub fn norm(&self) -> f64 {
        (self.normal * self.normal + self.shear_x * self.shear_x + self.shear_y * self.shear_y)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.normal.is_finite() && self.shear_x.is_finite() && self.shear_y.is_finite()
    }

    /// Embedding into world displacement coordinates used by the position
    /// channel: shear maps to (x, y), normal maps to -z. Descending along -z
    /// increases the pressing force in every scenario, so a positive normal
    /// error produces a downward correction.
    pub fn to_correction_basis(&self) -> Vec3 {
        Vec3::new(self.shear_x, self.shear_y, -self.normal)
    }

    pub fn scale(&self, s: f64) -> ForceVector {
        ForceVector::new(self.normal * s, self.shear_x * s, self.shear_y * s)
    }
}

impl std::ops::Add for ForceVector {
    type Output = ForceVector;
    fn add(self, rhs: ForceVector) -> ForceVector {
        ForceVector::new(
            self.normal + rhs.normal,
            self.shear_x + rhs.shear_x,
            self.shear_y + rhs.shear_y,
        )
    }
}

impl std::ops::Sub for ForceVector {
    type Output = ForceVector;
    fn sub(self, rhs: ForceVector) -> ForceVector {
        ForceVector::new(
            self.normal - rhs.normal,
            self.shear_x - rhs.shear_x,
            self.shear_y - rhs.shear_y,
        )
    }
}

impl std::ops::Neg for ForceVector {
    type Output = ForceVector;
    fn neg(self) -> ForceVector {
        ForceVector::new(-self.normal, -self.shear_x, -self.shear_y)
    }
}

/// Force error `ΔF = f_target − f_measured`, componentwise. Total function.
pub fn force_error(f_target: ForceVector, f_measured: ForceVector) -> ForceVector {
    f_target - f_measured
}

/// Timestamped normal + shear reading from one fingertip pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    /// Seconds on the episode clock.
    pub timestamp: f64,
    pub left: ForceVector,
    pub right: ForceVector,
}

impl TactileFrame {
    /// Internal grasp force estimate: mean of the two pad normals.
    pub fn grasp_force(&self) -> f64 {
        0.5 * (self.left.normal + self.right.normal)
    }
}

/// Proprioceptive tool state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub tool_position: Vec3,
    pub tool_velocity: Vec3,
    /// Gripper opening, meters, in `[0, width_max]`.
    pub gripper_width: f64,
    /// Internal squeeze force on a held object, N, zero when nothing is held.
    pub grasp_force: f64,
}

/// One augmented action: kinematic targets plus explicit force targets for
/// both control channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridCommand {
    /// Cartesian tool position target, meters.
    pub p_target: Vec3,
    /// Net external force target on the environment.
    pub f_target_external: ForceVector,
    /// Gripper aperture target, meters.
    pub grip_width_target: f64,
    /// Internal grasp force target, N, never negative.
    pub f_target_grasp: f64,
}

impl HybridCommand {
    pub fn hold(position: Vec3, width: f64) -> Self {
        Self {
            p_target: position,
            f_target_external: ForceVector::ZERO,
            grip_width_target: width,
            f_target_grasp: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p_target.iter().all(|v| v.is_finite())
            && self.f_target_external.is_finite()
            && self.grip_width_target.is_finite()
            && self.f_target_grasp.is_finite()
    }

    /// Number of scalar dimensions when flattened (see [`ActionChunk`]).
    pub const DIMS: usize = 8;

    /// Indices of force dimensions within one flattened command; the rest
    /// are kinematic. Layout: [p(3), f_ext(3), width(1), f_grasp(1)].
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&[
            self.p_target.x,
            self.p_target.y,
            self.p_target.z,
            self.f_target_external.normal,
            self.f_target_external.shear_x,
            self.f_target_external.shear_y,
            self.grip_width_target,
            self.f_target_grasp,
        ]);
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len(), Self::DIMS);
        Self {
            p_target: Vec3::new(flat[0], flat[1], flat[2]),
            f_target_external: ForceVector::new(flat[3], flat[4], flat[5]),
            grip_width_target: flat[6],
            f_target_grasp: flat[7].max(0.0),
        }
    }

    /// True for the force dimensions of the flattened layout.
    pub fn is_force_dim(dim: usize) -> bool {
        matches!(dim % Self::DIMS, 3..=5 | 7)
    }
}

/// Fixed-horizon command sequence produced by one policy sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk {
    commands: Vec<HybridCommand>,
    control_period: f64,
}

impl ActionChunk {
    /// Fails unless `commands.len()` equals the configured chunk length.
    pub fn new(commands: Vec<HybridCommand>, n_chunk: usize, control_period: f64) -> Option<Self> {
        if commands.len() != n_chunk || control_period <= 0.0 {
            return None;
        }
        Some(Self {
            commands,
            control_period,
        })
    }

    pub fn commands(&self) -> &[HybridCommand] {
        &self.commands
    }

    pub fn control_period(&self) -> f64 {
        self.control_period
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Flattened view: `len() * HybridCommand::DIMS` scalars.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.commands.len() * HybridCommand::DIMS);
        for c in &self.commands {
            c.flatten_into(&mut out);
        }
        out
    }

    pub fn from_flat(flat: &[f64], control_period: f64) -> Self {
        assert_eq!(flat.len() % HybridCommand::DIMS, 0);
        let commands = flat
            .chunks_exact(HybridCommand::DIMS)
            .map(HybridCommand::from_flat)
            .collect();
        Self {
            commands,
            control_period,
        }
    }
}

/// Tasks the stack knows how to demonstrate, execute and evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Insert,
    Extract,
    Grasp,
    Wipe,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Insert, TaskId::Extract, TaskId::Grasp, TaskId::Wipe];

    pub fn name(&self) -> &'static str {
        match self {
            TaskId::Insert => "insert",
            TaskId::Extract => "extract",
            TaskId::Grasp => "grasp",
            TaskId::Wipe => "wipe",
        }
    }
}

/// Closed force-adverb vocabulary, ordered from weakest to strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceModifier {
    Softly,
    Gently,
    Neutral,
    Firmly,
    Rigidly,
    Hard,
    Harder,
}

impl ForceModifier {
    pub const ALL: [ForceModifier; 7] = [
        ForceModifier::Softly,
        ForceModifier::Gently,
        ForceModifier::Neutral,
        ForceModifier::Firmly,
        ForceModifier::Rigidly,
        ForceModifier::Hard,
        ForceModifier::Harder,
    ];

    /// Scalar coordinate on the intensity scale. Anchors: `softly = 0`,
    /// `hard = 1`; `harder` extrapolates past `hard`.
    pub fn scale_coordinate(&self) -> f64 {
        match self {
            ForceModifier::Softly => 0.0,
            ForceModifier::Gently => 0.25,
            ForceModifier::Neutral => 0.5,
            ForceModifier::Firmly => 0.75,
            ForceModifier::Rigidly => 0.9,
            ForceModifier::Hard => 1.0,
            ForceModifier::Harder => 1.25,
        }
    }

    /// Next adverb up the intensity scale, saturating at `harder`.
    pub fn escalated(&self) -> ForceModifier {
        let all = Self::ALL;
        let idx = all.iter().position(|m| m == self).unwrap();
        all[(idx + 1).min(all.len() - 1)]
    }

    /// Next adverb down the intensity scale, saturating at `softly`.
    pub fn relaxed(&self) -> ForceModifier {
        let all = Self::ALL;
        let idx = all.iter().position(|m| m == self).unwrap();
        all[idx.saturating_sub(1)]
    }

    pub fn name(&self) -> &'static str {
        match self {
            ForceModifier::Softly => "softly",
            ForceModifier::Gently => "gently",
            ForceModifier::Neutral => "neutral",
            ForceModifier::Firmly => "firmly",
            ForceModifier::Rigidly => "rigidly",
            ForceModifier::Hard => "hard",
            ForceModifier::Harder => "harder",
        }
    }
}

/// Object or surface the instruction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetId {
    UsbPlug,
    ChargerPlug,
    SolidHeavy,
    SolidLight,
    FragileLight,
    Whiteboard,
    Blackboard,
}

impl TargetId {
    pub const ALL: [TargetId; 7] = [
        TargetId::UsbPlug,
        TargetId::ChargerPlug,
        TargetId::SolidHeavy,
        TargetId::SolidLight,
        TargetId::FragileLight,
        TargetId::Whiteboard,
        TargetId::Blackboard,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TargetId::UsbPlug => "usb_plug",
            TargetId::ChargerPlug => "charger_plug",
            TargetId::SolidHeavy => "solid_heavy",
            TargetId::SolidLight => "solid_light",
            TargetId::FragileLight => "fragile_light",
            TargetId::Whiteboard => "whiteboard",
            TargetId::Blackboard => "blackboard",
        }
    }
}

/// Structured instruction. The `(task, modifier, target)` triple fully
/// determines the language embedding; `free_text` is display-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instruction {
    pub task: TaskId,
    pub modifier: ForceModifier,
    pub target: TargetId,
    pub free_text: Option<String>,
}

impl Instruction {
    pub fn new(task: TaskId, modifier: ForceModifier, target: TargetId) -> Self {
        Self {
            task,
            modifier,
            target,
            free_text: None,
        }
    }

    /// Default rendering when no free text was supplied.
    pub fn render(&self) -> String {
        if let Some(text) = &self.free_text {
            return text.clone();
        }
        let verb = match self.task {
            TaskId::Insert => "insert",
            TaskId::Extract => "pull out",
            TaskId::Grasp => "pick up",
            TaskId::Wipe => "wipe",
        };
        let object = self.target.name().replace('_', " ");
        match self.modifier {
            ForceModifier::Neutral => format!("{verb} the {object}"),
            m => format!("{verb} the {object} {}", m.name()),
        }
    }
}

/// Why an episode failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Grasp force exceeded the object's break force.
    Deformed,
    /// Object slipped out of the gripper and fell.
    Dropped,
    /// Object slipped within the fingers while held.
    Slipped,
    /// Object was never lifted clear of the support.
    NotLifted,
    /// Marking remained because the pressing force was too low.
    InsufficientForce,
    /// Plug did not reach the seat depth.
    NotSeated,
    /// Plug was not fully withdrawn.
    NotExtracted,
}

/// Outcome of an episode or of one review interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure(FailureReason),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Success)
    }
}

/// Controller telemetry recorded with each synchronized frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlTelemetry {
    /// Force error of the external channel at command time.
    pub delta_f: ForceVector,
    /// Position command after the corrective adjustment.
    pub p_hybrid: Vec3,
    /// True when the external-channel error was inside the deadband.
    pub deadband_active: bool,
}

/// One synchronized 20 Hz frame of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncedFrame {
    /// Visual-stream timestamp, seconds.
    pub timestamp: f64,
    /// Privileged low-dimensional observation vector.
    pub observation: Vec<f64>,
    /// Nearest tactile frame; its timestamp may differ by a few ms.
    pub tactile: TactileFrame,
    /// Command issued at this step.
    pub command: HybridCommand,
    /// Measured net external force at this step.
    pub measured_external: ForceVector,
    pub telemetry: ControlTelemetry,
}

/// Episode identification and reproducibility info.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub instruction: Instruction,
}

/// Synchronized multimodal trace of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub meta: EpisodeMeta,
    pub frames: Vec<SyncedFrame>,
    pub outcome: Outcome,
}

impl EpisodeRecord {
    /// Checks the frame-timing invariants: strictly increasing visual
    /// timestamps and tactile skew within `max_skew` seconds.
    pub fn check_timing(&self, max_skew: f64) -> bool {
        let increasing = self
            .frames
            .windows(2)
            .all(|w| w[1].timestamp > w[0].timestamp);
        let skew_ok = self
            .frames
            .iter()
            .all(|f| (f.tactile.timestamp - f.timestamp).abs() <= max_skew);
        increasing && skew_ok
    }
}
