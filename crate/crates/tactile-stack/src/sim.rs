//! Deterministic discrete-time contact physics for the three desk-scale
//! environments: plug insertion/extraction, tabletop grasping and board
//! wiping.
//!
//! The tool is a kinematic Cartesian point with a parallel gripper. Contact
//! is a one-sided spring-damper, grasp force is an elastic squeeze, and
//! tangential transmission through the fingertips follows a stick/slip
//! friction law. `step` is a pure function of its inputs: identical
//! `(state, command, dt)` produce bit-identical successors.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ScenarioConfig, ScenarioKind};
use crate::types::{FailureReason, ForceVector, Instruction, Outcome, RobotState, TactileFrame, TaskId, Vec3};

pub const GRAVITY: f64 = 9.81;
/// Finger contact depth; sliding further than this drops the object.
pub const FINGER_DEPTH: f64 = 0.03;
/// An object is "lifted" once its bottom clears this height, m.
pub const LIFT_THRESHOLD: f64 = 0.05;
/// Residual ink below this level counts as erased.
pub const INK_ERASED: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("non-finite command passed to step (caller bug)")]
    NonFiniteCommand,
    #[error("step size must be positive, got {0}")]
    BadStepSize(f64),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// Scenario-specific dynamic state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioState {
    Insertion(InsertionState),
    Grasp(GraspState),
    Wipe(WipeState),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InsertionState {
    /// Socket mouth center, world frame.
    pub socket_pos: Vec3,
    /// How deep the plug is seated, m, in `[0, seat_depth]`.
    pub seated_depth: f64,
    /// True while the plug tip is inside the socket mouth.
    pub engaged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspState {
    /// Object center, world frame.
    pub object_pos: Vec3,
    /// Vertical velocity while slipping or falling.
    pub object_vel_z: f64,
    pub held: bool,
    /// Where the fingers sit on the object: object z minus tool z.
    pub grip_offset: f64,
    /// Accumulated finger/object slide while held, m.
    pub slide: f64,
    /// Object rested on the table at the start; table top is z = 0.
    pub ever_lifted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WipeState {
    /// Board surface height (the tool presses down onto it).
    pub board_z: f64,
    pub ink_level: f64,
    /// Sweep extent along x.
    pub x_min: f64,
    pub x_max: f64,
    /// Lateral drag coefficient between the held eraser and the board.
    pub surface_friction: f64,
}

/// Counters and sticky flags accumulated over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WorldStats {
    pub slip_events: u32,
    pub slipping: bool,
    pub max_grasp_force: f64,
    pub deformed: bool,
    pub dropped: bool,
}

/// Complete simulator state. A value: cheap to clone, comparable, and
/// advanced only through [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub robot: RobotState,
    pub scenario: ScenarioState,
    pub config: ScenarioConfig,
    pub seed: u64,
    pub stats: WorldStats,
    rng: ChaCha8Rng,
}

/// Normal contact force of a one-sided spring-damper. Zero exactly when
/// separated: no action at a distance.
pub fn contact_normal_force(penetration: f64, penetration_rate: f64, k: f64, b: f64) -> f64 {
    if penetration > 0.0 {
        k * penetration + b * penetration_rate.max(0.0)
    } else {
        0.0
    }
}

/// Outcome of loading one fingertip pad tangentially.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentialResponse {
    pub slips: bool,
    /// Force actually transmitted through the pad, N.
    pub transmitted: f64,
}

/// Stick/slip law for one pad: the pad transmits the requested load up to
/// `mu_static * grasp_force`; beyond that the contact slips and transmits
/// only `mu_kinetic * grasp_force`.
pub fn tangential_response(
    load_request: f64,
    grasp_force: f64,
    mu_static: f64,
    mu_kinetic: f64,
) -> TangentialResponse {
    let capacity = mu_static * grasp_force;
    if load_request.abs() > capacity {
        TangentialResponse {
            slips: true,
            transmitted: mu_kinetic * grasp_force * load_request.signum(),
        }
    } else {
        TangentialResponse {
            slips: false,
            transmitted: load_request,
        }
    }
}

/// One wiping increment: marking is removed in proportion to the force
/// margin above the erase threshold times the distance covered. Monotone
/// non-increasing and additive over sub-passes.
pub fn ink_update(ink_level: f64, f_n: f64, pass_length: f64, board: &crate::config::BoardSpec) -> f64 {
    let margin = (f_n - board.erase_threshold).max(0.0);
    (ink_level - board.c_erase * margin * pass_length).max(0.0)
}

/// Builds the reproducible initial state for a named scenario.
pub fn spawn_scenario(config: &ScenarioConfig, seed: u64) -> Result<WorldState, SimError> {
    config.validate().map_err(SimError::InvalidScenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off = config.start_offset;
    let dx = if off > 0.0 { rng.gen_range(-off..=off) } else { 0.0 };
    let dy = if off > 0.0 { rng.gen_range(-off..=off) } else { 0.0 };

    let (robot, scenario) = match config.kind {
        ScenarioKind::Insertion => {
            let socket = Vec3::new(0.05, 0.0, 0.05);
            let seated = if config.start_seated { config.socket.seat_depth } else { 0.0 };
            let start = if config.start_seated {
                Vec3::new(socket.x, socket.y, socket.z - seated)
            } else {
                Vec3::new(socket.x + dx, socket.y + dy, socket.z + 0.008)
            };
            // The plug starts held with a firm pinch.
            let width = config.object.width - 3.0 / config.k_grip;
            (
                RobotState {
                    tool_position: start,
                    tool_velocity: Vec3::zeros(),
                    gripper_width: width,
                    grasp_force: 3.0,
                },
                ScenarioState::Insertion(InsertionState {
                    socket_pos: socket,
                    seated_depth: seated,
                    engaged: config.start_seated,
                }),
            )
        }
        ScenarioKind::Grasp => {
            let object = Vec3::new(0.1, 0.0, config.object.width / 2.0);
            (
                RobotState {
                    tool_position: Vec3::new(0.1 + dx, dy, 0.09),
                    tool_velocity: Vec3::zeros(),
                    gripper_width: config.limits.width_max,
                    grasp_force: 0.0,
                },
                ScenarioState::Grasp(GraspState {
                    object_pos: object,
                    object_vel_z: 0.0,
                    held: false,
                    grip_offset: 0.0,
                    slide: 0.0,
                    ever_lifted: false,
                }),
            )
        }
        ScenarioKind::Wipe => {
            // The eraser starts gripped at 4 N.
            let width = config.object.width - 4.0 / config.k_grip;
            (
                RobotState {
                    tool_position: Vec3::new(dx, dy, 0.03),
                    tool_velocity: Vec3::zeros(),
                    gripper_width: width,
                    grasp_force: 4.0,
                },
                ScenarioState::Wipe(WipeState {
                    board_z: 0.0,
                    ink_level: config.board.ink_level,
                    x_min: 0.0,
                    x_max: 0.2,
                    surface_friction: 0.3,
                }),
            )
        }
    };

    Ok(WorldState {
        time: 0.0,
        robot,
        scenario,
        config: config.clone(),
        seed,
        stats: WorldStats::default(),
        rng,
    })
}

impl WorldState {
    fn noise(&mut self) -> f64 {
        let sigma = self.config.noise_sigma;
        if sigma > 0.0 {
            Normal::new(0.0, sigma).unwrap().sample(&mut self.rng)
        } else {
            // Keep the stream position independent of sigma.
            let _ = self.rng.gen::<u64>();
            0.0
        }
    }

    fn noisy(&mut self, f: ForceVector) -> ForceVector {
        ForceVector::new(
            f.normal + self.noise(),
            f.shear_x + self.noise(),
            f.shear_y + self.noise(),
        )
    }

    /// Privileged low-dimensional observation vector (fixed 16 dims):
    /// `[tool_pos(3), tool_vel(3), width, grasp_force, payload(8)]`.
    pub fn observe(&self) -> Vec<f64> {
        let r = &self.robot;
        let mut obs = vec![
            r.tool_position.x,
            r.tool_position.y,
            r.tool_position.z,
            r.tool_velocity.x,
            r.tool_velocity.y,
            r.tool_velocity.z,
            r.gripper_width,
            r.grasp_force,
        ];
        match &self.scenario {
            ScenarioState::Insertion(s) => {
                let d = s.socket_pos - r.tool_position;
                let lateral = (d.x * d.x + d.y * d.y).sqrt();
                obs.extend_from_slice(&[
                    d.x,
                    d.y,
                    d.z,
                    s.seated_depth / self.config.socket.seat_depth,
                    if s.engaged { 1.0 } else { 0.0 },
                    lateral,
                    0.0,
                    0.0,
                ]);
            }
            ScenarioState::Grasp(s) => {
                let d = s.object_pos - r.tool_position;
                let cat = self.config.object.category;
                obs.extend_from_slice(&[
                    d.x,
                    d.y,
                    d.z,
                    self.config.object.width,
                    (cat == crate::config::ObjectCategory::SolidHeavy) as u8 as f64,
                    (cat == crate::config::ObjectCategory::SolidLight) as u8 as f64,
                    (cat == crate::config::ObjectCategory::FragileLight) as u8 as f64,
                    if s.ever_lifted { 1.0 } else { 0.0 },
                ]);
            }
            ScenarioState::Wipe(s) => {
                let contact = (r.tool_position.z <= s.board_z) as u8 as f64;
                obs.extend_from_slice(&[
                    s.ink_level,
                    contact,
                    s.board_z - r.tool_position.z,
                    (r.tool_position.x - s.x_min) / (s.x_max - s.x_min),
                    r.tool_velocity.x.signum() * (r.tool_velocity.x.abs() > 1e-6) as u8 as f64,
                    0.0,
                    0.0,
                    0.0,
                ]);
            }
        }
        debug_assert_eq!(obs.len(), 16);
        obs
    }
}

/// Advances the world by one physics step under a position and gripper
/// width command. Returns the successor state, the synthesized tactile
/// reading (pads) and the measured net external force.
pub fn step(
    mut world: WorldState,
    cmd_position: Vec3,
    cmd_grip_width: f64,
    dt: f64,
) -> Result<(WorldState, TactileFrame, ForceVector), SimError> {
    let (tactile, external) = step_mut(&mut world, cmd_position, cmd_grip_width, dt)?;
    Ok((world, tactile, external))
}

/// In-place flavor of [`step`]; identical arithmetic.
pub fn step_mut(
    world: &mut WorldState,
    cmd_position: Vec3,
    cmd_grip_width: f64,
    dt: f64,
) -> Result<(TactileFrame, ForceVector), SimError> {
    if !(cmd_position.iter().all(|v| v.is_finite()) && cmd_grip_width.is_finite()) {
        return Err(SimError::NonFiniteCommand);
    }
    if dt <= 0.0 {
        return Err(SimError::BadStepSize(dt));
    }

    let limits = world.config.limits;
    // Tool servo: reach the commanded pose within the step, speed-limited.
    let p = world.robot.tool_position;
    let mut v = (cmd_position - p) / dt;
    let speed = v.norm();
    if speed > limits.max_speed {
        v *= limits.max_speed / speed;
    }
    let mut p_new = p + v * dt;

    let w = world.robot.gripper_width;
    let wv = ((cmd_grip_width.clamp(0.0, limits.width_max) - w) / dt)
        .clamp(-limits.max_width_speed, limits.max_width_speed);
    let w_new = (w + wv * dt).clamp(0.0, limits.width_max);

    world.robot.tool_position = p_new;
    world.robot.tool_velocity = v;
    world.robot.gripper_width = w_new;
    world.time += dt;

    let contact = world.config.contact;
    let k_grip = world.config.k_grip;

    // Scenario dynamics produce the true external force and the true
    // tangential load per fingertip pad.
    let external;
    let mut grasp_force = 0.0;
    let mut pad_shear_x = 0.0;
    let mut pad_shear_y = 0.0;

    let mut scenario = world.scenario;
    match &mut scenario {
        ScenarioState::Wipe(s) => {
            let board = world.config.board;
            let pen = s.board_z - p_new.z;
            let pen_rate = -v.z;
            let f_n = contact_normal_force(pen, pen_rate, contact.k_contact, contact.b_contact);
            grasp_force = k_grip * (world.config.object.width - w_new).max(0.0);
            let drag = if f_n > 0.0 && v.x.abs() > 1e-9 {
                s.surface_friction * f_n * v.x.signum()
            } else {
                0.0
            };
            external = ForceVector::new(f_n, drag, 0.0);
            // Wiping removes marking while pressing above threshold.
            if f_n > 0.0 {
                let pass = (v.x * dt).abs();
                s.ink_level = ink_update(s.ink_level, f_n, pass, &board);
            }
            // Reaction loads on the fingertips holding the eraser.
            let weight = world.config.object.mass * GRAVITY;
            pad_shear_x = drag / 2.0;
            pad_shear_y = (f_n - weight) / 2.0;
            let resp = tangential_response(
                (pad_shear_x.powi(2) + pad_shear_y.powi(2)).sqrt(),
                grasp_force,
                contact.mu_static,
                contact.mu_kinetic,
            );
            track_slip(&mut world.stats, resp.slips && grasp_force > 0.0);
        }
        ScenarioState::Insertion(s) => {
            let socket = world.config.socket;
            let weight = world.config.object.mass * GRAVITY;
            grasp_force = k_grip * (world.config.object.width - w_new).max(0.0);
            // A seated plug is guided by the socket walls: the tool cannot
            // leave the tolerance circle while engaged.
            if s.seated_depth > 0.0 {
                let dx = p_new.x - s.socket_pos.x;
                let dy = p_new.y - s.socket_pos.y;
                let r = (dx * dx + dy * dy).sqrt();
                if r > socket.lateral_tolerance {
                    let scale = socket.lateral_tolerance / r;
                    p_new.x = s.socket_pos.x + dx * scale;
                    p_new.y = s.socket_pos.y + dy * scale;
                    world.robot.tool_position = p_new;
                }
            }
            let d = Vec3::new(s.socket_pos.x - p_new.x, s.socket_pos.y - p_new.y, 0.0);
            let lateral = d.norm();
            let mut axial = 0.0;
            let inside_mouth = p_new.z < s.socket_pos.z && lateral <= socket.lateral_tolerance;
            if inside_mouth || s.seated_depth > 0.0 {
                // Engaged: elastic coupling between the demanded depth and
                // the seated depth, with rate-dependent yield in either
                // direction. While seated the joint stays coupled even if
                // the tool rises above the mouth (extraction tension).
                s.engaged = true;
                let demand = s.socket_pos.z - p_new.z;
                axial = contact.k_contact * (demand - s.seated_depth);
                let r_in = socket.insertion_resistance;
                let r_out = socket.extraction_resistance;
                if axial > r_in && s.seated_depth < socket.seat_depth {
                    let rate = (axial - r_in) / socket.seat_damping;
                    s.seated_depth = (s.seated_depth + rate * dt).min(socket.seat_depth);
                    axial = contact.k_contact * (demand - s.seated_depth);
                } else if axial < -r_out && s.seated_depth > 0.0 {
                    let rate = (axial + r_out) / socket.seat_damping;
                    s.seated_depth = (s.seated_depth + rate * dt).max(0.0);
                    axial = contact.k_contact * (demand - s.seated_depth);
                }
                if s.seated_depth <= 0.0 && !inside_mouth {
                    s.engaged = false;
                    axial = 0.0;
                }
            } else if p_new.z < s.socket_pos.z {
                // Misaligned: the plug stubs on the panel face.
                s.engaged = false;
                let pen = s.socket_pos.z - p_new.z;
                axial = contact_normal_force(pen, -v.z, contact.k_contact, contact.b_contact);
            } else {
                s.engaged = false;
            }
            external = ForceVector::new(axial, 0.0, 0.0);
            // Axial reaction and plug weight load the fingertips along the
            // tool axis.
            pad_shear_y = (axial - weight) / 2.0;
            let resp = tangential_response(
                pad_shear_y,
                grasp_force,
                contact.mu_static,
                contact.mu_kinetic,
            );
            track_slip(&mut world.stats, resp.slips && grasp_force > 0.0);
        }
        ScenarioState::Grasp(s) => {
            let spec = world.config.object;
            let half = spec.width / 2.0;
            let capture_lateral = (p_new.x - s.object_pos.x).hypot(p_new.y - s.object_pos.y);
            let capture = capture_lateral <= 0.015 && (p_new.z - s.object_pos.z).abs() <= half + 0.01;
            let squeeze = k_grip * (spec.width - w_new).max(0.0);

            if s.held && squeeze <= 1e-9 {
                // Released: the object goes into free fall below.
                s.held = false;
            }
            if s.held {
                grasp_force = squeeze;
                if grasp_force > spec.break_force {
                    world.stats.deformed = true;
                }
                let weight = spec.mass * GRAVITY;
                // The grip keeps whatever offset it was captured with.
                let ride_z = p_new.z + s.grip_offset;
                let supported = ride_z - half <= 1e-9;
                if supported {
                    // The table carries the weight; the pads see no
                    // tangential load.
                    s.object_pos.x = p_new.x;
                    s.object_pos.y = p_new.y;
                    s.object_pos.z = half;
                    s.grip_offset = half - p_new.z;
                    s.object_vel_z = 0.0;
                    track_slip(&mut world.stats, false);
                } else {
                    let load_per_pad = weight / 2.0;
                    let resp = tangential_response(
                        load_per_pad,
                        grasp_force,
                        contact.mu_static,
                        contact.mu_kinetic,
                    );
                    if resp.slips {
                        track_slip(&mut world.stats, true);
                        // Kinetic support only: the object slides down the
                        // fingers (semi-implicit Euler).
                        let support = 2.0 * contact.mu_kinetic * grasp_force;
                        let acc = GRAVITY - support / spec.mass;
                        s.object_vel_z -= acc * dt;
                        s.object_pos.x = p_new.x;
                        s.object_pos.y = p_new.y;
                        s.object_pos.z += s.object_vel_z * dt;
                        if s.object_pos.z - half < 0.0 {
                            s.object_pos.z = half;
                            s.object_vel_z = 0.0;
                        }
                        s.slide += (v.z * dt - s.object_vel_z * dt).abs();
                        s.grip_offset = s.object_pos.z - p_new.z;
                        pad_shear_y = -resp.transmitted;
                        if s.slide > FINGER_DEPTH {
                            s.held = false;
                            world.stats.dropped = true;
                        }
                    } else {
                        track_slip(&mut world.stats, false);
                        // Rigid ride with the tool.
                        s.object_pos.x = p_new.x;
                        s.object_pos.y = p_new.y;
                        s.object_pos.z = ride_z;
                        s.object_vel_z = v.z;
                        pad_shear_y = -load_per_pad;
                    }
                }
                if s.object_pos.z - half > LIFT_THRESHOLD {
                    s.ever_lifted = true;
                }
            }
            if !s.held {
                grasp_force = 0.0;
                // Unheld object falls to the table.
                if s.object_pos.z - half > 0.0 {
                    s.object_vel_z -= GRAVITY * dt;
                    s.object_pos.z += s.object_vel_z * dt;
                }
                if s.object_pos.z - half <= 0.0 {
                    s.object_pos.z = half;
                    s.object_vel_z = 0.0;
                }
                // A fresh squeeze while the fingers flank the object grips it.
                if capture && squeeze > 0.0 {
                    s.held = true;
                    s.slide = 0.0;
                    s.grip_offset = s.object_pos.z - p_new.z;
                    grasp_force = squeeze;
                    if grasp_force > spec.break_force {
                        world.stats.deformed = true;
                    }
                }
            }
            // Lifting or lowering a held object exerts no net external
            // force in this scenario; the table supports the rest.
            external = ForceVector::ZERO;
        }
    }
    world.scenario = scenario;

    world.robot.grasp_force = grasp_force;
    world.stats.max_grasp_force = world.stats.max_grasp_force.max(grasp_force);

    let measured_external = world.noisy(external);
    let pad = ForceVector::new(grasp_force, pad_shear_x, pad_shear_y);
    let left = world.noisy(pad);
    let right = world.noisy(pad);
    let tactile = TactileFrame {
        timestamp: world.time,
        left,
        right,
    };

    Ok((tactile, measured_external))
}

fn track_slip(stats: &mut WorldStats, slipping: bool) {
    if slipping && !stats.slipping {
        stats.slip_events += 1;
    }
    stats.slipping = slipping;
}

/// Task outcome for the current world state.
pub fn evaluate_outcome(world: &WorldState, task: &Instruction) -> Outcome {
    match (&world.scenario, task.task) {
        (ScenarioState::Grasp(s), _) => {
            if world.stats.deformed {
                return Outcome::Failure(FailureReason::Deformed);
            }
            if world.stats.dropped {
                return Outcome::Failure(FailureReason::Dropped);
            }
            if world.stats.slip_events > 0 {
                return Outcome::Failure(FailureReason::Slipped);
            }
            if s.ever_lifted && s.held {
                Outcome::Success
            } else {
                Outcome::Failure(FailureReason::NotLifted)
            }
        }
        (ScenarioState::Wipe(s), _) => {
            if s.ink_level < INK_ERASED {
                Outcome::Success
            } else {
                Outcome::Failure(FailureReason::InsufficientForce)
            }
        }
        (ScenarioState::Insertion(s), TaskId::Extract) => {
            if s.seated_depth <= 0.0 && !s.engaged {
                Outcome::Success
            } else {
                Outcome::Failure(FailureReason::NotExtracted)
            }
        }
        (ScenarioState::Insertion(s), _) => {
            if s.seated_depth >= world.config.socket.seat_depth {
                Outcome::Success
            } else {
                Outcome::Failure(FailureReason::NotSeated)
            }
        }
    }
}
