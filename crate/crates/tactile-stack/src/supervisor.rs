//! Fixed-interval review loop: watch a segment of execution, decide
//! success, diagnose which force channel failed from the tactile evidence,
//! and issue a structured corrective (revised adverb plus revised force
//! targets) for the next attempt.

use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::policy::Policy;
use crate::rollout::{EpisodeRunner, ForceOverride, PolicySource, RolloutError};
use crate::sim::{evaluate_outcome, ScenarioState, WorldState};
use crate::types::{
    EpisodeMeta, EpisodeRecord, Instruction, Outcome, SyncedFrame, TaskId,
};

#[derive(Debug, thiserror::Error)]
pub enum SupervisorError {
    #[error("revise_instruction called on a successful report")]
    ReviseOnSuccess,
    #[error("retries exhausted")]
    RetriesExhausted,
    #[error("review called on an empty segment")]
    EmptySegment,
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

/// How a too-low force target is raised between attempts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationMode {
    /// Multiply the previous target by `force_increase_factor`.
    Factor,
    /// Anchor on a known training-time force: first revision jumps to
    /// `base * gain`, later ones multiply by the factor.
    Anchor { base: f64, gain: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    /// Seconds of execution between reviews.
    pub review_interval: f64,
    pub max_retries: u32,
    pub force_increase_factor: f64,
    /// Hard safety clamp on any revised force target, N.
    pub force_ceiling: f64,
    pub escalation: EscalationMode,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self {
            review_interval: 2.5,
            max_retries: 3,
            force_increase_factor: 1.9,
            force_ceiling: 10.0,
            escalation: EscalationMode::Factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assessment {
    Sufficient,
    TooLow,
    TooHigh,
}

impl Assessment {
    pub fn name(&self) -> &'static str {
        match self {
            Assessment::Sufficient => "sufficient",
            Assessment::TooLow => "too low",
            Assessment::TooHigh => "too high",
        }
    }
}

/// Per-channel verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelFindings {
    pub grasp: Assessment,
    pub normal: Assessment,
}

/// Summary statistics backing a diagnosis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceStats {
    pub mean_normal: f64,
    pub max_normal: f64,
    /// Fraction of the segment spent in contact.
    pub contact_fraction: f64,
    pub mean_grasp: f64,
    pub max_grasp: f64,
    pub slip_events: u32,
    /// Task progress over the segment (ink removed, seat depth gained,
    /// or lift height gained).
    pub progress_delta: f64,
    pub deformed: bool,
    pub dropped: bool,
}

/// World-level signals sampled at the review boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldProbe {
    pub outcome: Outcome,
    pub slip_events: u32,
    pub deformed: bool,
    pub dropped: bool,
    pub progress_delta: f64,
}

/// Revised numeric targets carried by a corrective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceTargets {
    pub normal: f64,
    pub grasp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corrective {
    pub instruction: Instruction,
    pub targets: ForceTargets,
}

/// Supervisor verdict for one review interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub success: bool,
    pub channel_findings: ChannelFindings,
    pub evidence: EvidenceStats,
    /// Present exactly when the attempt failed and retries remain.
    pub corrective: Option<Corrective>,
    pub rendered_text: String,
}

/// Contact threshold distinguishing "touching" from sensor noise, N.
const CONTACT_MIN: f64 = 0.1;
/// Progress below this fraction of full scale counts as stalled.
const PROGRESS_EPS: f64 = 0.01;

/// Rule-based per-channel diagnosis. Precedence: damage first, then loss
/// of the object, then slip, then task-specific pressure rules.
pub fn diagnose(evidence: &EvidenceStats, task: TaskId) -> ChannelFindings {
    let mut grasp = Assessment::Sufficient;
    let mut normal = Assessment::Sufficient;

    if evidence.deformed {
        grasp = Assessment::TooHigh;
    } else if evidence.dropped || evidence.slip_events > 0 {
        grasp = Assessment::TooLow;
    } else if task == TaskId::Grasp && evidence.progress_delta < PROGRESS_EPS {
        // Never lifted and never slipped: the squeeze was not enough to
        // commit to the pick.
        grasp = Assessment::TooLow;
    }

    match task {
        TaskId::Wipe => {
            // No marking progress while the tool pressed (or never even
            // touched): more downward force is needed.
            if evidence.progress_delta < PROGRESS_EPS {
                normal = Assessment::TooLow;
            }
        }
        TaskId::Insert => {
            if evidence.progress_delta < PROGRESS_EPS {
                normal = Assessment::TooLow;
            }
        }
        TaskId::Extract => {
            if evidence.progress_delta < PROGRESS_EPS {
                normal = Assessment::TooLow;
            }
        }
        TaskId::Grasp => {}
    }
    ChannelFindings { grasp, normal }
}

/// Builds evidence from an episode segment plus the world probe.
pub fn evidence_from_segment(segment: &[SyncedFrame], probe: &WorldProbe) -> EvidenceStats {
    let n = segment.len().max(1) as f64;
    let mut mean_normal = 0.0;
    let mut max_normal = 0.0f64;
    let mut contact = 0usize;
    let mut mean_grasp = 0.0;
    let mut max_grasp = 0.0f64;
    for f in segment {
        let fn_ = f.measured_external.normal;
        mean_normal += fn_;
        max_normal = max_normal.max(fn_);
        if fn_ > CONTACT_MIN {
            contact += 1;
        }
        let g = f.tactile.grasp_force();
        mean_grasp += g;
        max_grasp = max_grasp.max(g);
    }
    EvidenceStats {
        mean_normal: mean_normal / n,
        max_normal,
        contact_fraction: contact as f64 / n,
        mean_grasp: mean_grasp / n,
        max_grasp,
        slip_events: probe.slip_events,
        progress_delta: probe.progress_delta,
        deformed: probe.deformed,
        dropped: probe.dropped,
    }
}

/// Reviews one interval: success check, per-channel diagnosis, and (when
/// allowed) a corrective instruction with revised force targets.
pub fn review(
    segment: &[SyncedFrame],
    task: &Instruction,
    probe: &WorldProbe,
    previous_targets: ForceTargets,
    cfg: &ReviewConfig,
    retries_remain: bool,
) -> Result<DiagnosisReport, SupervisorError> {
    if segment.is_empty() {
        return Err(SupervisorError::EmptySegment);
    }
    let evidence = evidence_from_segment(segment, probe);
    let success = probe.outcome.is_success();
    let findings = if success {
        ChannelFindings {
            grasp: Assessment::Sufficient,
            normal: Assessment::Sufficient,
        }
    } else {
        diagnose(&evidence, task.task)
    };
    let mut report = DiagnosisReport {
        success,
        channel_findings: findings,
        evidence,
        corrective: None,
        rendered_text: String::new(),
    };
    if !success && retries_remain {
        let (instruction, targets) = revise_instruction(
            &report.channel_findings,
            task,
            previous_targets,
            cfg,
        );
        report.corrective = Some(Corrective {
            instruction,
            targets,
        });
    }
    report.rendered_text = render_report(&report, task);
    Ok(report)
}

fn render_report(report: &DiagnosisReport, task: &Instruction) -> String {
    if report.success {
        return format!("task '{}' succeeded.", task.render());
    }
    let ev = &report.evidence;
    let mut text = format!(
        "task '{}' failed. grasp force: {} (mean {:.2} N, slips {}); normal force: {} (mean {:.2} N, contact {:.0}%, progress {:+.3}).",
        task.render(),
        report.channel_findings.grasp.name(),
        ev.mean_grasp,
        ev.slip_events,
        report.channel_findings.normal.name(),
        ev.mean_normal,
        ev.contact_fraction * 100.0,
        ev.progress_delta,
    );
    match &report.corrective {
        Some(c) => {
            text.push_str(&format!(
                " corrective: retry '{}' with normal target {:.2} N and grasp target {:.2} N.",
                c.instruction.render(),
                c.targets.normal,
                c.targets.grasp,
            ));
        }
        None => text.push_str(" no retries remain."),
    }
    text
}

/// Applies the escalation rules: too-low channels scale up (clamped at the
/// ceiling), too-high channels scale down, and the adverb moves along the
/// intensity scale with the task's primary channel.
pub fn revise_instruction(
    findings: &ChannelFindings,
    task: &Instruction,
    previous: ForceTargets,
    cfg: &ReviewConfig,
) -> (Instruction, ForceTargets) {
    let raise = |v: f64| match cfg.escalation {
        EscalationMode::Factor => (v * cfg.force_increase_factor).min(cfg.force_ceiling),
        EscalationMode::Anchor { base, gain } => {
            let anchored = base * gain;
            if v < anchored {
                anchored.min(cfg.force_ceiling)
            } else {
                (v * cfg.force_increase_factor).min(cfg.force_ceiling)
            }
        }
    };
    let lower = |v: f64| v / cfg.force_increase_factor;
    let adjust = |assessment: Assessment, v: f64| match assessment {
        Assessment::TooLow => raise(v),
        Assessment::TooHigh => lower(v),
        Assessment::Sufficient => v,
    };
    let targets = ForceTargets {
        normal: adjust(findings.normal, previous.normal),
        grasp: adjust(findings.grasp, previous.grasp),
    };
    let primary = match task.task {
        TaskId::Grasp => findings.grasp,
        _ => findings.normal,
    };
    let mut instruction = task.clone();
    instruction.modifier = match primary {
        Assessment::TooLow => instruction.modifier.escalated(),
        Assessment::TooHigh => instruction.modifier.relaxed(),
        Assessment::Sufficient => instruction.modifier,
    };
    instruction.free_text = None;
    (instruction, targets)
}

/// Result of a supervised run.
pub struct AdaptationOutcome {
    pub final_outcome: Outcome,
    pub reports: Vec<DiagnosisReport>,
    /// One record per review interval, in order.
    pub records: Vec<EpisodeRecord>,
    pub attempts: usize,
}

fn progress_metric(world: &WorldState) -> f64 {
    match &world.scenario {
        // Ink removed so far (higher is better).
        ScenarioState::Wipe(s) => 1.0 - s.ink_level,
        ScenarioState::Insertion(s) => s.seated_depth / world.config.socket.seat_depth,
        ScenarioState::Grasp(s) => {
            if s.ever_lifted {
                1.0
            } else {
                (s.object_pos.z - world.config.object.width / 2.0).max(0.0) / crate::sim::LIFT_THRESHOLD
            }
        }
    }
}

/// Runs the full adaptation loop: execute for one review interval, review,
/// and on failure revise the instruction and force targets for the next
/// attempt, until success, retries exhausted, or the scenario time limit.
pub fn run_with_adaptation(
    policy: &Policy,
    scenario: &ScenarioConfig,
    cfg: &ReviewConfig,
    instruction: Instruction,
    initial_targets: ForceTargets,
    seed: u64,
) -> Result<AdaptationOutcome, SupervisorError> {
    let world = crate::sim::spawn_scenario(scenario, seed).map_err(RolloutError::from)?;
    let source = PolicySource::new(policy, instruction.clone(), seed ^ 0x5eed_0001);
    let mut runner = EpisodeRunner::new(world, source, policy.config.history, seed);

    let mut reports = Vec::new();
    let mut records = Vec::new();
    let mut targets = initial_targets;
    let mut task = instruction;
    let mut attempts = 0usize;
    let mut segment_start_frame = 0usize;

    loop {
        let interval = cfg
            .review_interval
            .min(scenario.duration - runner.time())
            .max(0.0);
        if interval <= 0.0 {
            break;
        }
        let t0 = runner.time();
        let progress_before = progress_metric(&runner.world);
        let slips_before = runner.world.stats.slip_events;
        runner.run_for(interval)?;
        attempts += 1;

        let outcome = evaluate_outcome(&runner.world, &task);
        let probe = WorldProbe {
            outcome,
            slip_events: runner.world.stats.slip_events - slips_before,
            deformed: runner.world.stats.deformed,
            dropped: runner.world.stats.dropped,
            progress_delta: progress_metric(&runner.world) - progress_before,
        };
        // Align what we have so far and slice out this interval.
        let (frames, _) = crate::data::align(runner.raw()).map_err(RolloutError::from)?;
        let segment = &frames[segment_start_frame.min(frames.len())..];
        let retries_remain =
            (attempts as u32) <= cfg.max_retries && runner.time() < scenario.duration;
        let report = review(segment, &task, &probe, targets, cfg, retries_remain)?;
        records.push(EpisodeRecord {
            meta: EpisodeMeta {
                scenario: scenario.kind.name().to_string(),
                seed,
                config_hash: crate::config::config_hash(scenario),
                instruction: task.clone(),
            },
            frames: segment.to_vec(),
            outcome,
        });
        segment_start_frame = frames.len();
        let _ = t0;

        let done = report.success || report.corrective.is_none();
        if let Some(c) = &report.corrective {
            task = c.instruction.clone();
            targets = c.targets;
            runner.source.set_instruction(task.clone());
            runner.source.set_override(Some(ForceOverride {
                normal_target: Some(targets.normal),
                grasp_target: None,
                activation: 1.0,
            }));
        }
        reports.push(report);
        if done {
            break;
        }
    }

    let final_outcome = evaluate_outcome(&runner.world, &task);
    Ok(AdaptationOutcome {
        final_outcome,
        reports,
        records,
        attempts,
    })
}

/// Non-adaptive comparator: the same policy rollout with no reviews.
pub fn run_without_adaptation(
    policy: &Policy,
    scenario: &ScenarioConfig,
    instruction: Instruction,
    seed: u64,
) -> Result<(Outcome, EpisodeRecord), SupervisorError> {
    let source = PolicySource::new(policy, instruction, seed ^ 0x5eed_0001);
    let artifacts = crate::rollout::run_episode(scenario, source, seed)?;
    Ok((artifacts.record.outcome, artifacts.record))
}
