//! Configuration types shared by the simulator, controller, policy and the
//! command-line harness, plus the config hash embedded in every artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::{TargetId, TaskId};

/// Internal physics step, seconds.
pub const PHYSICS_DT: f64 = 0.001;
/// Tactile sampling period, seconds (100 Hz).
pub const TACTILE_PERIOD: f64 = 0.01;
/// Outer control / visual frame period, seconds (20 Hz).
pub const CONTROL_PERIOD: f64 = 0.05;

/// Contact material parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContactParams {
    /// Normal contact stiffness, N/m.
    pub k_contact: f64,
    /// Contact damping, N·s/m.
    pub b_contact: f64,
    pub mu_static: f64,
    pub mu_kinetic: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            k_contact: 1000.0,
            b_contact: 5.0,
            mu_static: 0.9,
            mu_kinetic: 0.7,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.k_contact <= 0.0 {
            return Err("k_contact must be > 0".into());
        }
        if self.b_contact < 0.0 {
            return Err("b_contact must be >= 0".into());
        }
        if !(self.mu_kinetic > 0.0 && self.mu_kinetic <= self.mu_static) {
            return Err("friction must satisfy 0 < mu_kinetic <= mu_static".into());
        }
        Ok(())
    }
}

/// A graspable object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectSpec {
    pub category: ObjectCategory,
    /// Mass, kg.
    pub mass: f64,
    /// Grasp force that deforms or damages the object, N.
    pub break_force: f64,
    /// Undeformed width along the gripper closing axis, m.
    pub width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectCategory {
    SolidHeavy,
    SolidLight,
    FragileLight,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 3] = [
        ObjectCategory::SolidHeavy,
        ObjectCategory::SolidLight,
        ObjectCategory::FragileLight,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectCategory::SolidHeavy => "solid_heavy",
            ObjectCategory::SolidLight => "solid_light",
            ObjectCategory::FragileLight => "fragile_light",
        }
    }

    pub fn target_id(&self) -> TargetId {
        match self {
            ObjectCategory::SolidHeavy => TargetId::SolidHeavy,
            ObjectCategory::SolidLight => TargetId::SolidLight,
            ObjectCategory::FragileLight => TargetId::FragileLight,
        }
    }
}

impl Default for ObjectSpec {
    fn default() -> Self {
        Self {
            category: ObjectCategory::SolidLight,
            mass: 0.2,
            break_force: 20.0,
            width: 0.04,
        }
    }
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.mass <= 0.0 {
            return Err("object mass must be > 0".into());
        }
        if self.break_force <= 0.0 {
            return Err("break_force must be > 0".into());
        }
        if self.width <= 0.0 {
            return Err("object width must be > 0".into());
        }
        Ok(())
    }
}

/// A board to wipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoardSpec {
    /// Minimum normal force that removes marking per pass, N.
    pub erase_threshold: f64,
    /// Initial marking level, dimensionless in `[0, 1]`.
    pub ink_level: f64,
    /// Removal rate per newton above threshold per meter of pass, 1/(N·m).
    pub c_erase: f64,
}

impl Default for BoardSpec {
    fn default() -> Self {
        Self {
            erase_threshold: 2.0,
            ink_level: 1.0,
            c_erase: 4.0,
        }
    }
}

impl BoardSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.erase_threshold <= 0.0 {
            return Err("erase_threshold must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.ink_level) {
            return Err("ink_level must lie in [0, 1]".into());
        }
        if self.c_erase <= 0.0 {
            return Err("c_erase must be > 0".into());
        }
        Ok(())
    }
}

/// A socket a plug can seat into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocketSpec {
    /// Dry axial force needed before the plug advances, N.
    pub insertion_resistance: f64,
    /// Retention: tension needed before the plug backs out, N.
    pub extraction_resistance: f64,
    /// Full seat depth, m.
    pub seat_depth: f64,
    /// Maximum lateral offset that still engages the socket mouth, m.
    pub lateral_tolerance: f64,
    /// Rate resistance while seating, N·s/m.
    pub seat_damping: f64,
}

impl Default for SocketSpec {
    fn default() -> Self {
        Self {
            insertion_resistance: 0.15,
            extraction_resistance: 2.5,
            seat_depth: 0.008,
            lateral_tolerance: 0.005,
            seat_damping: 150.0,
        }
    }
}

impl SocketSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.insertion_resistance <= 0.0
            || self.extraction_resistance <= 0.0
            || self.seat_depth <= 0.0
            || self.lateral_tolerance <= 0.0
            || self.seat_damping <= 0.0
        {
            return Err("socket parameters must all be positive".into());
        }
        Ok(())
    }
}

/// Hybrid-controller gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    /// Diagonal of the force-to-position gain matrix K, m/N.
    pub k_diag: [f64; 3],
    /// Deadband threshold on the external-channel force-error norm, N.
    pub tau: f64,
    /// Deadband threshold for the grasp channel, N; falls back to `tau`
    /// when absent.
    pub tau_grasp: Option<f64>,
    /// Scalar gain for the grasp-width channel, m/N.
    pub k_grip_gain: f64,
    /// PID gains per axis for position tracking.
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Integrator clamp, m.
    pub integrator_limit: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_diag: [1e-3, 1e-3, 1e-3],
            tau: 0.2,
            tau_grasp: None,
            k_grip_gain: 5e-4,
            kp: 80.0,
            ki: 0.0,
            kd: 0.0,
            integrator_limit: 0.01,
        }
    }
}

impl ControllerGains {
    pub fn grasp_deadband(&self) -> f64 {
        self.tau_grasp.unwrap_or(self.tau)
    }

    /// Checks the closed-loop stability bound `0 < k_contact * K_ii < 2`
    /// against the stiffness of the scenario this controller will touch.
    pub fn validate_against_stiffness(&self, k_contact: f64) -> Result<(), String> {
        if self.tau < 0.0 {
            return Err("tau must be >= 0".into());
        }
        for (i, k) in self.k_diag.iter().enumerate() {
            if !k.is_finite() {
                return Err(format!("K[{i}] must be finite"));
            }
            let loop_gain = k_contact * k;
            if !(loop_gain > 0.0 && loop_gain < 2.0) {
                return Err(format!(
                    "stability bound violated on axis {i}: k_contact*K = {loop_gain:.3} not in (0, 2)"
                ));
            }
        }
        Ok(())
    }
}

/// Tool actuation limits applied by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolLimits {
    /// Maximum Cartesian tool speed, m/s.
    pub max_speed: f64,
    /// Maximum gripper width rate, m/s.
    pub max_width_speed: f64,
    /// Maximum gripper opening, m.
    pub width_max: f64,
}

impl Default for ToolLimits {
    fn default() -> Self {
        Self {
            max_speed: 0.5,
            max_width_speed: 0.08,
            width_max: 0.09,
        }
    }
}

/// Which experiment environment to spawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Insertion,
    Grasp,
    Wipe,
}

impl ScenarioKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Insertion => "insertion",
            ScenarioKind::Grasp => "grasp",
            ScenarioKind::Wipe => "wipe",
        }
    }

    pub fn parse(name: &str) -> Option<ScenarioKind> {
        match name {
            "insertion" => Some(ScenarioKind::Insertion),
            "grasp" => Some(ScenarioKind::Grasp),
            "wipe" => Some(ScenarioKind::Wipe),
            _ => None,
        }
    }
}

/// Full scenario description: environment, physics and controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub contact: ContactParams,
    pub gains: ControllerGains,
    pub limits: ToolLimits,
    /// Gripper squeeze stiffness, N/m.
    pub k_grip: f64,
    /// Std of zero-mean Gaussian noise on every force measurement, N.
    pub noise_sigma: f64,
    /// Std of tactile timestamp jitter, s (clipped to ±2 std).
    pub tactile_jitter: f64,
    /// Episode length, seconds.
    pub duration: f64,
    pub object: ObjectSpec,
    pub board: BoardSpec,
    pub socket: SocketSpec,
    /// Start with the plug fully seated (extraction tasks).
    pub start_seated: bool,
    /// Uniform half-range of the random lateral start offset, m.
    pub start_offset: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Wipe,
            contact: ContactParams::default(),
            gains: ControllerGains::default(),
            limits: ToolLimits::default(),
            k_grip: 2000.0,
            noise_sigma: 0.02,
            tactile_jitter: 0.001,
            duration: 8.0,
            object: ObjectSpec::default(),
            board: BoardSpec::default(),
            socket: SocketSpec::default(),
            start_seated: false,
            start_offset: 0.003,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.contact.validate()?;
        self.object.validate()?;
        self.board.validate()?;
        self.socket.validate()?;
        self.gains.validate_against_stiffness(self.contact.k_contact)?;
        if self.k_grip <= 0.0 {
            return Err("k_grip must be > 0".into());
        }
        if self.noise_sigma < 0.0 || self.tactile_jitter < 0.0 {
            return Err("noise parameters must be >= 0".into());
        }
        if self.duration <= 0.0 {
            return Err("duration must be > 0".into());
        }
        Ok(())
    }

    pub fn insertion() -> Self {
        Self {
            kind: ScenarioKind::Insertion,
            duration: 12.0,
            contact: ContactParams {
                k_contact: 400.0,
                ..ContactParams::default()
            },
            gains: ControllerGains {
                tau: 0.05,
                ..ControllerGains::default()
            },
            object: ObjectSpec {
                category: ObjectCategory::SolidLight,
                mass: 0.02,
                break_force: 30.0,
                width: 0.012,
            },
            ..Self::default()
        }
    }

    pub fn grasp(object: ObjectSpec) -> Self {
        Self {
            kind: ScenarioKind::Grasp,
            duration: 4.0,
            object,
            ..Self::default()
        }
    }

    pub fn wipe(board: BoardSpec) -> Self {
        Self {
            kind: ScenarioKind::Wipe,
            duration: 10.0,
            contact: ContactParams {
                k_contact: 1500.0,
                ..ContactParams::default()
            },
            board,
            object: ObjectSpec {
                category: ObjectCategory::SolidLight,
                mass: 0.05,
                break_force: 60.0,
                width: 0.04,
            },
            ..Self::default()
        }
    }
}

/// Policy architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Observation/tactile history length H.
    pub history: usize,
    /// Observation vector dimension.
    pub d_obs: usize,
    /// Language token dimension (task + modifier + target slices).
    pub d_lang: usize,
    /// Fused tactile token dimension.
    pub d_tac: usize,
    /// Commands per action chunk.
    pub n_chunk: usize,
    /// Hidden layer widths of the velocity network.
    pub hidden: Vec<usize>,
    /// Euler steps used when sampling.
    pub n_steps: usize,
    /// Loss weight on kinematic action dimensions.
    pub w_kin: f64,
    /// Loss weight on force action dimensions.
    pub w_force: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub train_steps: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            history: 4,
            d_obs: 16,
            d_lang: 8,
            d_tac: 8,
            n_chunk: 16,
            hidden: vec![64, 64],
            n_steps: 32,
            w_kin: 1.0,
            w_force: 1.0,
            learning_rate: 1e-3,
            batch_size: 64,
            train_steps: 4000,
        }
    }
}

impl PolicyConfig {
    /// Flattened action dimension.
    pub fn action_dim(&self) -> usize {
        self.n_chunk * crate::types::HybridCommand::DIMS
    }

    /// Fused context dimension.
    pub fn context_dim(&self) -> usize {
        self.history * self.d_obs + self.d_lang + self.d_tac
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.history == 0 || self.n_chunk == 0 || self.n_steps == 0 {
            return Err("history, n_chunk and n_steps must all be >= 1".into());
        }
        if self.d_lang < 4 {
            return Err("d_lang must be >= 4 (task/modifier/target slices)".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// Stable hex hash of any serializable config, embedded in artifacts so a
/// dataset, model and experiment can be checked against each other.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    hex::encode(&digest[..8])
}

/// Identifies the task of a scenario kind when spawning default
/// instructions.
pub fn default_task(kind: ScenarioKind, start_seated: bool) -> TaskId {
    match kind {
        ScenarioKind::Insertion => {
            if start_seated {
                TaskId::Extract
            } else {
                TaskId::Insert
            }
        }
        ScenarioKind::Grasp => TaskId::Grasp,
        ScenarioKind::Wipe => TaskId::Wipe,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        ScenarioConfig::default().validate().unwrap();
        ScenarioConfig::insertion().validate().unwrap();
        ScenarioConfig::grasp(ObjectSpec::default()).validate().unwrap();
        ScenarioConfig::wipe(BoardSpec::default()).validate().unwrap();
        PolicyConfig::default().validate().unwrap();
    }

    #[test]
    fn stability_bound_rejects_hot_gains() {
        let gains = ControllerGains {
            k_diag: [2.5e-3, 1e-3, 1e-3],
            ..ControllerGains::default()
        };
        assert!(gains.validate_against_stiffness(1000.0).is_err());
        assert!(gains.validate_against_stiffness(500.0).is_ok());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.k_grip = 1999.0;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
