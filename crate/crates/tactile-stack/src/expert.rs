//! Scripted demonstrators: hand-coded phase machines that complete each
//! task through the same hybrid controller the learned policy uses, while
//! tracking a style-dependent force target. They stand in for human
//! demonstrations when building datasets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ObjectCategory, ScenarioConfig, ScenarioKind, CONTROL_PERIOD};
use crate::rollout::{run_episode, CommandSource, RolloutError, StepContext};
use crate::sim::{ScenarioState, INK_ERASED};
use crate::types::{
    ForceModifier, ForceVector, HybridCommand, Instruction, Outcome, TaskId, Vec3,
};

#[derive(Debug, thiserror::Error)]
pub enum ExpertError {
    #[error(transparent)]
    Rollout(#[from] RolloutError),
    #[error("miscalibrated scenario: demo expected {expected:?}, got {got:?}")]
    MiscalibratedDemo { expected: Expectation, got: Outcome },
    #[error("no scripted expert for task {0:?} in scenario {1:?}")]
    UnsupportedTask(TaskId, ScenarioKind),
}

/// What a demo is supposed to achieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Success,
    Failure,
    Any,
}

/// Force style of one demonstration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoStyle {
    /// External (pressing / insertion-axis) force target, N.
    pub external_force: f64,
    /// Grasp squeeze while holding, N.
    pub grasp_force: f64,
    /// Std of the kinematic dither on contact-phase position targets, m.
    /// Dither diversifies the visited states so the learned policy sees
    /// recovery behavior; force targets stay clean labels.
    pub dither: f64,
    pub expect: Expectation,
}

impl DemoStyle {
    pub fn clean(external_force: f64, grasp_force: f64, expect: Expectation) -> Self {
        Self {
            external_force,
            grasp_force,
            dither: 0.0,
            expect,
        }
    }
}

/// Demo force level for an adverb on the insertion task: anchors at
/// softly = 0.5 N and hard = 2.5 N, linear in the intensity coordinate.
pub fn adverb_force(modifier: ForceModifier) -> f64 {
    0.5 + 2.0 * modifier.scale_coordinate()
}

/// Demo grasp level per object category: firm for heavy, moderate for
/// light, gentle for fragile.
pub fn category_grasp_force(category: ObjectCategory) -> f64 {
    match category {
        ObjectCategory::SolidHeavy => 9.0,
        ObjectCategory::SolidLight => 4.0,
        ObjectCategory::FragileLight => 1.6,
    }
}

/// Default pressing force of the wiping task, N.
pub const WIPE_DEFAULT_FORCE: f64 = 3.5;

enum Phase {
    Go { target: Vec3, width: f64, next: u8 },
    PressSweep,
    Press,
    Pull,
    Close { settle: u32 },
    Lift,
    Hold,
}

/// Phase-machine demonstrator for every task. Privileged: reads the true
/// world state for phase transitions, like a human watching the scene.
pub struct ScriptedExpert {
    pub instruction: Instruction,
    pub style: DemoStyle,
    phase: Phase,
    sweep_x: f64,
    sweep_speed: f64,
    rng: ChaCha8Rng,
    dither_state: f64,
}

impl ScriptedExpert {
    pub fn new(instruction: Instruction, style: DemoStyle, config: &ScenarioConfig) -> Result<Self, ExpertError> {
        let phase = match (instruction.task, config.kind) {
            (TaskId::Wipe, ScenarioKind::Wipe) => Phase::Go {
                target: Vec3::new(0.0, 0.0, 0.015),
                width: 0.0,
                next: 1,
            },
            (TaskId::Grasp, ScenarioKind::Grasp) => Phase::Go {
                target: Vec3::new(0.1, 0.0, 0.09),
                width: 0.08,
                next: 1,
            },
            (TaskId::Insert, ScenarioKind::Insertion) => Phase::Go {
                target: Vec3::new(0.05, 0.0, 0.054),
                width: 0.0,
                next: 1,
            },
            (TaskId::Extract, ScenarioKind::Insertion) => Phase::Pull,
            (task, kind) => return Err(ExpertError::UnsupportedTask(task, kind)),
        };
        Ok(Self {
            instruction,
            style,
            phase,
            sweep_x: 0.0,
            sweep_speed: 0.1,
            rng: ChaCha8Rng::seed_from_u64(0),
            dither_state: 0.0,
        })
    }

    /// Reseeds the dither stream; demos pass the episode seed through.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd17e_0001);
        self
    }

    /// Smooth exploration offset: a first-order random walk with the
    /// configured stationary deviation.
    fn dither(&mut self) -> f64 {
        if self.style.dither > 0.0 {
            let u: f64 = self.rng.gen_range(-1.0..1.0);
            self.dither_state = 0.85 * self.dither_state + 0.92 * u * self.style.dither;
            self.dither_state
        } else {
            0.0
        }
    }

}

impl CommandSource for ScriptedExpert {
    fn next_command(&mut self, ctx: &StepContext) -> Result<HybridCommand, RolloutError> {
        let p = ctx.world.robot.tool_position;
        let task = self.instruction.task;

        // Wipe and insertion scenarios start with the tool already holding
        // its implement; grasp acquires it mid-episode.
        let grasp_active = match task {
            TaskId::Grasp => matches!(self.phase, Phase::Close { .. } | Phase::Lift | Phase::Hold),
            _ => true,
        };
        let f_grasp = if grasp_active { self.style.grasp_force } else { 0.0 };

        let cmd = match &mut self.phase {
            Phase::Go { target, width, next } => {
                let arrived = (p - *target).norm() < 0.003;
                let width_cmd = if grasp_active { holding_width(ctx) } else { *width };
                let cmd = HybridCommand {
                    p_target: *target,
                    f_target_external: ForceVector::ZERO,
                    grip_width_target: width_cmd,
                    f_target_grasp: f_grasp,
                };
                if arrived {
                    let next = *next;
                    self.phase = match (task, next) {
                        (TaskId::Wipe, _) => {
                            self.sweep_x = 0.0;
                            Phase::PressSweep
                        }
                        (TaskId::Grasp, 1) => Phase::Go {
                            target: Vec3::new(0.1, 0.0, object_grip_height(ctx)),
                            width: 0.08,
                            next: 2,
                        },
                        (TaskId::Grasp, _) => Phase::Close { settle: 0 },
                        (TaskId::Insert, 1) => Phase::Go {
                            target: Vec3::new(0.05, 0.0, 0.0495),
                            width: 0.0,
                            next: 2,
                        },
                        (TaskId::Insert, _) => Phase::Press,
                        (TaskId::Extract, _) => Phase::Hold,
                    };
                }
                cmd
            }
            Phase::PressSweep => {
                let (ink, x_max) = match &ctx.world.scenario {
                    ScenarioState::Wipe(s) => (s.ink_level, s.x_max),
                    _ => (0.0, 0.2),
                };
                if ink < INK_ERASED {
                    self.phase = Phase::Lift;
                }
                // Advance the pass only once real contact is established.
                if ctx.measured_external.normal > 0.6 * self.style.external_force {
                    self.sweep_x += self.sweep_speed * CONTROL_PERIOD;
                }
                if self.sweep_x >= x_max {
                    self.phase = Phase::Go {
                        target: Vec3::new(0.0, 0.0, 0.015),
                        width: 0.0,
                        next: 1,
                    };
                }
                let dz = self.dither();
                HybridCommand {
                    p_target: Vec3::new(self.sweep_x, 0.0, p.z + dz),
                    f_target_external: ForceVector::new(self.style.external_force, 0.0, 0.0),
                    grip_width_target: holding_width(ctx),
                    f_target_grasp: f_grasp,
                }
            }
            Phase::Press => {
                let seated = match &ctx.world.scenario {
                    ScenarioState::Insertion(s) => {
                        s.seated_depth >= ctx.world.config.socket.seat_depth
                    }
                    _ => false,
                };
                if seated {
                    self.phase = Phase::Hold;
                }
                let dz = self.dither();
                HybridCommand {
                    p_target: Vec3::new(0.05, 0.0, p.z + dz),
                    f_target_external: ForceVector::new(self.style.external_force, 0.0, 0.0),
                    grip_width_target: holding_width(ctx),
                    f_target_grasp: f_grasp,
                }
            }
            Phase::Pull => {
                let free = match &ctx.world.scenario {
                    ScenarioState::Insertion(s) => s.seated_depth <= 0.0 && !s.engaged,
                    _ => true,
                };
                if free {
                    self.phase = Phase::Go {
                        target: Vec3::new(0.05, 0.0, 0.08),
                        width: 0.0,
                        next: 9,
                    };
                }
                HybridCommand {
                    p_target: Vec3::new(0.05, 0.0, p.z),
                    f_target_external: ForceVector::new(-self.style.external_force, 0.0, 0.0),
                    grip_width_target: holding_width(ctx),
                    f_target_grasp: f_grasp,
                }
            }
            Phase::Close { settle } => {
                let err = (ctx.measured_grasp - self.style.grasp_force).abs();
                if err < 0.3 {
                    *settle += 1;
                } else {
                    *settle = 0;
                }
                if *settle >= 6 {
                    self.phase = Phase::Lift;
                }
                HybridCommand {
                    p_target: p,
                    f_target_external: ForceVector::ZERO,
                    grip_width_target: holding_width(ctx),
                    f_target_grasp: f_grasp,
                }
            }
            Phase::Lift => {
                let target = Vec3::new(p.x, p.y, 0.15);
                if p.z > 0.14 {
                    self.phase = Phase::Hold;
                }
                HybridCommand {
                    p_target: target,
                    f_target_external: ForceVector::ZERO,
                    grip_width_target: holding_width(ctx),
                    f_target_grasp: f_grasp,
                }
            }
            Phase::Hold => match task {
                // Keep seating pressure on the plug; hover elsewhere.
                TaskId::Insert => {
                    let dz = self.dither();
                    HybridCommand {
                        p_target: Vec3::new(0.05, 0.0, p.z + dz),
                        f_target_external: ForceVector::new(self.style.external_force, 0.0, 0.0),
                        grip_width_target: holding_width(ctx),
                        f_target_grasp: f_grasp,
                    }
                }
                _ => HybridCommand {
                    p_target: p,
                    f_target_external: ForceVector::ZERO,
                    grip_width_target: holding_width(ctx),
                    f_target_grasp: f_grasp,
                },
            },
        };
        Ok(cmd)
    }

    fn instruction(&self) -> &Instruction {
        &self.instruction
    }
}

// While squeezing, command the live width; the grasp channel does the
// force work.
fn holding_width(ctx: &StepContext) -> f64 {
    ctx.world.robot.gripper_width
}

fn object_grip_height(ctx: &StepContext) -> f64 {
    match &ctx.world.scenario {
        ScenarioState::Grasp(s) => s.object_pos.z,
        _ => 0.02,
    }
}

/// One complete scripted demonstration: runs the expert in the scenario
/// and verifies the demo achieved what it was supposed to.
pub fn scripted_expert(
    config: &ScenarioConfig,
    instruction: &Instruction,
    style: &DemoStyle,
    seed: u64,
) -> Result<crate::rollout::EpisodeArtifacts, ExpertError> {
    let expert = ScriptedExpert::new(instruction.clone(), *style, config)?.with_seed(seed);
    let artifacts = run_episode(config, expert, seed)?;
    let ok = match style.expect {
        Expectation::Success => artifacts.record.outcome.is_success(),
        Expectation::Failure => !artifacts.record.outcome.is_success(),
        Expectation::Any => true,
    };
    if !ok {
        return Err(ExpertError::MiscalibratedDemo {
            expected: style.expect,
            got: artifacts.record.outcome,
        });
    }
    Ok(artifacts)
}
