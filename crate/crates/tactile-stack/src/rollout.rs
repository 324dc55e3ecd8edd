//! Episode runner: drives the simulator at the physics rate, recomputes the
//! hybrid corrective law at every outer control step (20 Hz), samples
//! tactile at 100 Hz with clock jitter, and records the raw multimodal
//! streams that the data pipeline aligns.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{config_hash, ControllerGains, ScenarioConfig, CONTROL_PERIOD, PHYSICS_DT, TACTILE_PERIOD};
use crate::control::{grasp_channel, hybrid_target_telemetry, pid_step, ControllerState};
use crate::data::{align, ActionSample, AlignReport, DataError, RawStreams};
use crate::policy::{Policy, PolicyError};
use crate::sim::{evaluate_outcome, step_mut, SimError, WorldState};
use crate::types::{
    ControlTelemetry, EpisodeMeta, EpisodeRecord, ForceVector, HybridCommand, Instruction,
    Outcome, TactileFrame,
};

/// Squeeze intent below this grasp-force target is treated as aperture
/// control (the sampled width is obeyed verbatim).
pub const GRASP_INTENT_MIN: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("command source produced a non-finite command at step {0}")]
    BadCommand(usize),
}

/// What a command source sees at each control step.
pub struct StepContext<'a> {
    pub world: &'a WorldState,
    /// Raw observation history, oldest first, length H.
    pub obs_history: &'a [Vec<f64>],
    /// Synchronized tactile history, oldest first, length H.
    pub tactile_history: &'a [TactileFrame],
    pub measured_external: ForceVector,
    pub measured_grasp: f64,
    pub step_index: usize,
    pub time: f64,
}

/// Supplies one command per outer control step.
pub trait CommandSource {
    fn next_command(&mut self, ctx: &StepContext) -> Result<HybridCommand, RolloutError>;
    fn instruction(&self) -> &Instruction;
}

/// Drives one episode. Supports incremental horizons so a supervisor can
/// interleave reviews with execution.
pub struct EpisodeRunner<S: CommandSource> {
    pub world: WorldState,
    pub source: S,
    gains: ControllerGains,
    ctrl: ControllerState,
    history: usize,
    obs_history: Vec<Vec<f64>>,
    tactile_history: Vec<TactileFrame>,
    raw: RawStreams,
    latest_external: ForceVector,
    latest_tactile: TactileFrame,
    step_index: usize,
    jitter_rng: ChaCha8Rng,
    config: ScenarioConfig,
}

impl<S: CommandSource> EpisodeRunner<S> {
    pub fn new(world: WorldState, source: S, history: usize, seed: u64) -> Self {
        let config = world.config.clone();
        let gains = config.gains;
        // Sensor prior before the first physics step: the pads read the
        // initial squeeze, everything else is quiet.
        let pad = ForceVector::new(world.robot.grasp_force, 0.0, 0.0);
        let tactile0 = TactileFrame {
            timestamp: 0.0,
            left: pad,
            right: pad,
        };
        let obs0 = world.observe();
        Self {
            world,
            source,
            gains,
            ctrl: ControllerState::new(),
            history,
            obs_history: vec![obs0; history],
            tactile_history: vec![tactile0; history],
            raw: RawStreams {
                tactile: vec![tactile0],
                visual: Vec::new(),
                actions: Vec::new(),
            },
            latest_external: ForceVector::ZERO,
            latest_tactile: tactile0,
            step_index: 0,
            jitter_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9),
            config,
        }
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * CONTROL_PERIOD
    }

    pub fn raw(&self) -> &RawStreams {
        &self.raw
    }

    /// Runs `duration` seconds of episode time (whole control steps).
    pub fn run_for(&mut self, duration: f64) -> Result<(), RolloutError> {
        let steps = (duration / CONTROL_PERIOD).round() as usize;
        for _ in 0..steps {
            self.control_step()?;
        }
        Ok(())
    }

    fn control_step(&mut self) -> Result<(), RolloutError> {
        let t = self.time();
        let obs = self.world.observe();
        self.obs_history.push(obs.clone());
        self.tactile_history.push(self.latest_tactile);
        if self.obs_history.len() > self.history {
            self.obs_history.remove(0);
            self.tactile_history.remove(0);
        }
        let measured_grasp = self.latest_tactile.grasp_force();

        let cmd = {
            let ctx = StepContext {
                world: &self.world,
                obs_history: &self.obs_history,
                tactile_history: &self.tactile_history,
                measured_external: self.latest_external,
                measured_grasp,
                step_index: self.step_index,
                time: t,
            };
            self.source.next_command(&ctx)?
        };
        if !cmd.is_finite() {
            return Err(RolloutError::BadCommand(self.step_index));
        }

        // Hybrid corrective law, recomputed once per outer step.
        let (p_hybrid, delta_f, deadband) = hybrid_target_telemetry(
            cmd.p_target,
            cmd.f_target_external,
            self.latest_external,
            &self.gains,
        );
        // Grasp channel: while a squeeze is intended the width baseline is
        // the live gripper width, so the force correction acts
        // incrementally; otherwise the commanded aperture is obeyed.
        let width_baseline = if cmd.f_target_grasp > GRASP_INTENT_MIN {
            self.world.robot.gripper_width
        } else {
            cmd.grip_width_target
        };
        let width_cmd = grasp_channel(
            width_baseline,
            cmd.f_target_grasp,
            measured_grasp,
            &self.gains,
        );

        self.raw.visual.push((t, obs));
        self.raw.actions.push(ActionSample {
            timestamp: t,
            command: cmd,
            measured_external: self.latest_external,
            telemetry: ControlTelemetry {
                delta_f,
                p_hybrid,
                deadband_active: deadband,
            },
        });

        // Inner loop: PID at the physics rate, tactile sampled every 10 ms.
        let inner = (CONTROL_PERIOD / PHYSICS_DT).round() as usize;
        let per_tactile = (TACTILE_PERIOD / PHYSICS_DT).round() as usize;
        for j in 0..inner {
            let p_actual = self.world.robot.tool_position;
            let (ctrl, u) = pid_step(&self.ctrl, p_hybrid, p_actual, PHYSICS_DT, &self.gains);
            self.ctrl = ctrl;
            let cmd_pos = p_actual + u * PHYSICS_DT;
            let (tactile, external) = step_mut(&mut self.world, cmd_pos, width_cmd, PHYSICS_DT)?;
            if (j + 1) % per_tactile == 0 {
                let jit = self.config.tactile_jitter;
                let jitter = if jit > 0.0 {
                    self.jitter_rng
                        .gen_range(-jit..jit)
                        .clamp(-2.0 * jit, 2.0 * jit)
                } else {
                    let _ = self.jitter_rng.gen::<u64>();
                    0.0
                };
                let stamped = TactileFrame {
                    timestamp: tactile.timestamp + jitter,
                    ..tactile
                };
                self.raw.tactile.push(stamped);
                self.latest_tactile = stamped;
                self.latest_external = external;
            }
        }
        self.step_index += 1;
        Ok(())
    }

    /// Aligns the recorded streams into an episode record with the given
    /// outcome.
    pub fn finish(self, seed: u64, outcome: Outcome) -> Result<(EpisodeRecord, WorldState, RawStreams, AlignReport), RolloutError> {
        let (frames, report) = align(&self.raw)?;
        let record = EpisodeRecord {
            meta: EpisodeMeta {
                scenario: self.config.kind.name().to_string(),
                seed,
                config_hash: config_hash(&self.config),
                instruction: self.source.instruction().clone(),
            },
            frames,
            outcome,
        };
        Ok((record, self.world, self.raw, report))
    }
}

/// Holds position while regulating a constant external force: the
/// kinematic target is the live tool position, so corrections integrate
/// step over step. Used for pure force-servo probes and tests.
pub struct ForceServo {
    pub instruction: Instruction,
    pub f_target: ForceVector,
    pub f_grasp: f64,
}

impl CommandSource for ForceServo {
    fn next_command(&mut self, ctx: &StepContext) -> Result<HybridCommand, RolloutError> {
        Ok(HybridCommand {
            p_target: ctx.world.robot.tool_position,
            f_target_external: self.f_target,
            grip_width_target: ctx.world.robot.gripper_width,
            f_target_grasp: self.f_grasp,
        })
    }

    fn instruction(&self) -> &Instruction {
        &self.instruction
    }
}

/// Structured corrective injected by the supervisor: revised force targets
/// override the sampled ones on commands that already intend contact
/// (sampled target above `activation`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceOverride {
    pub normal_target: Option<f64>,
    pub grasp_target: Option<f64>,
    /// Sampled-force threshold above which the override applies, N.
    pub activation: f64,
}

impl ForceOverride {
    pub fn apply(&self, mut cmd: HybridCommand) -> HybridCommand {
        if let Some(n) = self.normal_target {
            if cmd.f_target_external.normal > self.activation {
                cmd.f_target_external.normal = n;
            }
        }
        if let Some(g) = self.grasp_target {
            if cmd.f_target_grasp > self.activation {
                cmd.f_target_grasp = g;
            }
        }
        cmd
    }
}

/// Executes a trained policy chunk by chunk, re-sampling whenever the
/// current chunk is exhausted or the instruction is revised.
pub struct PolicySource<'a> {
    pub policy: &'a Policy,
    instruction: Instruction,
    rng: ChaCha8Rng,
    pending: std::collections::VecDeque<HybridCommand>,
    pub n_steps: usize,
    pub force_override: Option<ForceOverride>,
}

impl<'a> PolicySource<'a> {
    pub fn new(policy: &'a Policy, instruction: Instruction, seed: u64) -> Self {
        Self {
            n_steps: policy.config.n_steps,
            policy,
            instruction,
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: std::collections::VecDeque::new(),
            force_override: None,
        }
    }

    /// Swaps the conditioning instruction; the current chunk is discarded
    /// so the next command already reflects it.
    pub fn set_instruction(&mut self, instruction: Instruction) {
        self.instruction = instruction;
        self.pending.clear();
    }

    pub fn set_override(&mut self, ovr: Option<ForceOverride>) {
        self.force_override = ovr;
        self.pending.clear();
    }
}

impl<'a> CommandSource for PolicySource<'a> {
    fn next_command(&mut self, ctx: &StepContext) -> Result<HybridCommand, RolloutError> {
        if self.pending.is_empty() {
            let context = self.policy.make_context(
                ctx.obs_history,
                ctx.tactile_history,
                &self.instruction,
            )?;
            let chunk = self
                .policy
                .sample_action(&context, self.n_steps, &mut self.rng)?;
            self.pending.extend(chunk.commands().iter().copied());
        }
        let mut cmd = self.pending.pop_front().expect("chunk is non-empty");
        if let Some(ovr) = &self.force_override {
            cmd = ovr.apply(cmd);
        }
        Ok(cmd)
    }

    fn instruction(&self) -> &Instruction {
        &self.instruction
    }
}

/// Everything one episode produces.
pub struct EpisodeArtifacts {
    pub record: EpisodeRecord,
    pub world: WorldState,
    pub raw: RawStreams,
    pub report: AlignReport,
}

/// Runs a complete fixed-duration episode and returns the aligned record
/// alongside the raw streams.
pub fn run_episode<S: CommandSource>(
    config: &ScenarioConfig,
    source: S,
    seed: u64,
) -> Result<EpisodeArtifacts, RolloutError> {
    let world = crate::sim::spawn_scenario(config, seed)?;
    let mut runner = EpisodeRunner::new(world, source, 4, seed);
    runner.run_for(config.duration)?;
    let instruction = runner.source.instruction().clone();
    let outcome = evaluate_outcome(&runner.world, &instruction);
    let (record, world, raw, report) = runner.finish(seed, outcome)?;
    Ok(EpisodeArtifacts {
        record,
        world,
        raw,
        report,
    })
}

/// Measures the closed-loop force-error contraction ratio per outer
/// control step against a noiseless spring contact of stiffness
/// `k_contact`, using a pure force servo: settle at 1 N, retarget to 6 N,
/// and average the consecutive-error ratios while the loop is in contact
/// and outside the deadband. Analytically the ratio is `|1 − k_contact·K|`.
pub fn measure_contraction_ratio(k_gain: f64, k_contact: f64) -> f64 {
    let mut cfg = ScenarioConfig::wipe(crate::config::BoardSpec::default());
    cfg.noise_sigma = 0.0;
    cfg.tactile_jitter = 0.0;
    cfg.start_offset = 0.0;
    cfg.contact.k_contact = k_contact;
    cfg.contact.b_contact = 0.0;
    cfg.gains.k_diag = [k_gain, k_gain, k_gain];
    cfg.gains.tau = 0.05;
    let mut world = crate::sim::spawn_scenario(&cfg, 2).expect("wipe scenario spawns");
    // Start just above the surface so the servo reaches contact quickly.
    world.robot.tool_position.z = 0.002;
    let servo = ForceServo {
        instruction: Instruction::new(
            crate::types::TaskId::Wipe,
            crate::types::ForceModifier::Neutral,
            crate::types::TargetId::Whiteboard,
        ),
        f_target: ForceVector::new(1.0, 0.0, 0.0),
        f_grasp: 4.0,
    };
    let mut runner = EpisodeRunner::new(world, servo, 4, 2);
    runner.run_for(3.0).expect("warmup runs");
    let settled = runner.latest_external.normal;
    assert!(
        (settled - 1.0).abs() < 0.2,
        "warmup did not settle into contact: {settled} N"
    );
    runner.source.f_target = ForceVector::new(6.0, 0.0, 0.0);

    // Contact is already established, so every consecutive pair outside
    // the deadband is a valid contraction sample, starting from the
    // retarget step itself.
    let mut forces = vec![settled];
    for _ in 0..40 {
        runner.run_for(CONTROL_PERIOD).expect("probe step runs");
        forces.push(runner.latest_external.normal);
    }
    let errors: Vec<f64> = forces.iter().map(|f| (6.0 - f).abs()).collect();
    let mut ratios = Vec::new();
    for w in errors.windows(2) {
        if w[0] > 0.4 && w[1] > cfg.gains.tau {
            ratios.push(w[1] / w[0]);
        }
    }
    assert!(!ratios.is_empty(), "no usable contraction samples");
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

/// Mean/max of the measured normal force over action samples in a time
/// window, plus the fraction of samples in contact.
pub fn contact_stats(actions: &[ActionSample], t_from: f64, t_to: f64) -> (f64, f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    let mut n = 0usize;
    let mut in_contact = 0usize;
    for a in actions {
        if a.timestamp >= t_from && a.timestamp < t_to {
            let f = a.measured_external.normal;
            sum += f;
            max = max.max(f);
            n += 1;
            if f > 0.1 {
                in_contact += 1;
            }
        }
    }
    if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        (sum / n as f64, max, in_contact as f64 / n as f64)
    }
}

/// Mean measured normal force over the frames of a record that are in
/// contact (above `threshold`). The applied-force metric of the insertion
/// and wiping experiments.
pub fn mean_contact_force(record: &EpisodeRecord, threshold: f64) -> Option<f64> {
    let forces: Vec<f64> = record
        .frames
        .iter()
        .map(|f| f.measured_external.normal)
        .filter(|&f| f > threshold)
        .collect();
    if forces.is_empty() {
        None
    } else {
        Some(forces.iter().sum::<f64>() / forces.len() as f64)
    }
}

/// Mean grasp force over frames where the pads are loaded.
pub fn mean_grasp_force(record: &EpisodeRecord, threshold: f64) -> Option<f64> {
    let forces: Vec<f64> = record
        .frames
        .iter()
        .map(|f| f.tactile.grasp_force())
        .filter(|&f| f > threshold)
        .collect();
    if forces.is_empty() {
        None
    } else {
        Some(forces.iter().sum::<f64>() / forces.len() as f64)
    }
}
