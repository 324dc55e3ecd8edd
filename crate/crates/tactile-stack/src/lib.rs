//! A contact-rich manipulation stack at desk scale.
//!
//! The crate bundles everything needed to study language-conditioned force
//! control end to end without hardware:
//!
//! - [`types`]: forces, commands, instructions and episode records;
//! - [`sim`]: a deterministic contact simulator with insertion, grasping
//!   and board-wiping environments;
//! - [`control`]: the hybrid position-force controller (deadband corrective
//!   law, decoupled external/grasp channels, PID actuation);
//! - [`policy`]: a tactile-conditioned flow-matching policy over action
//!   chunks, with a language embedding table that interpolates unseen
//!   force adverbs;
//! - [`supervisor`]: a fixed-interval review loop that diagnoses failures
//!   per force channel and escalates force targets;
//! - [`data`]: demonstration streams, 100 Hz/20 Hz timestamp alignment,
//!   dataset assembly and binary persistence;
//! - [`rollout`]: the episode runner and scripted experts tying the stack
//!   together.
//!
//! See the `book/` guide in the repository for worked examples.

pub mod config;
pub mod control;
pub mod data;
pub mod expert;
pub mod policy;
pub mod rollout;
pub mod sim;
pub mod supervisor;
pub mod types;

pub use config::{ScenarioConfig, ScenarioKind};
pub use types::{
    ActionChunk, EpisodeRecord, ForceModifier, ForceVector, HybridCommand, Instruction, Outcome,
    TactileFrame, TargetId, TaskId, Vec3,
};
