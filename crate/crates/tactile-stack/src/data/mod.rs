//! Demonstration streams, multimodal timestamp alignment (100 Hz tactile
//! against 20 Hz visual), dataset assembly with normalization statistics,
//! and persistence.

pub mod codec;
pub mod container;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TACTILE_PERIOD;
use crate::types::{
    ActionChunk, ControlTelemetry, EpisodeRecord, ForceModifier, ForceVector, HybridCommand,
    Instruction, SyncedFrame, TactileFrame, TaskId,
};

pub const DATASET_VERSION: u32 = 1;
const DATASET_KIND: &[u8; 4] = b"DSET";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("empty {0} stream")]
    EmptyStream(&'static str),
    #[error("{0} stream is not time-ordered")]
    UnsortedStream(&'static str),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("not a stack container file")]
    BadMagic,
    #[error("wrong container kind: found '{found}', expected '{expected}'")]
    WrongKind { found: String, expected: String },
    #[error("format version mismatch: file has v{found}, reader expects v{expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("config hash mismatch: file built under {found}, requested {expected}")]
    ConfigHashMismatch { found: String, expected: String },
    #[error("dataset is missing a required manifest cell: {0}")]
    MissingCell(String),
}

/// One recorded control step: the command that was issued plus what the
/// sensors read at that moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    pub timestamp: f64,
    pub command: HybridCommand,
    pub measured_external: ForceVector,
    pub telemetry: ControlTelemetry,
}

/// Unaligned multimodal capture of one episode: tactile at a nominal
/// 100 Hz (with timestamp jitter), visual observations at 20 Hz, and the
/// command stream at the control rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawStreams {
    pub tactile: Vec<TactileFrame>,
    pub visual: Vec<(f64, Vec<f64>)>,
    pub actions: Vec<ActionSample>,
}

/// Outcome of one alignment run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AlignReport {
    /// Visual frames dropped because no tactile sample was close enough.
    pub dropped_frames: usize,
    /// Largest |visual − tactile| skew among kept frames, seconds.
    pub max_skew: f64,
}

/// Index of the element of `times` nearest to `t`. `times` must be sorted.
pub fn nearest_index(times: &[f64], t: f64) -> usize {
    debug_assert!(!times.is_empty());
    let hi = times.partition_point(|&x| x < t);
    if hi == 0 {
        return 0;
    }
    if hi == times.len() {
        return times.len() - 1;
    }
    if (times[hi] - t).abs() < (t - times[hi - 1]).abs() {
        hi
    } else {
        hi - 1
    }
}

/// Attaches the nearest tactile frame and the governing action sample to
/// every visual frame. A visual frame with no tactile sample strictly
/// closer than one tactile period (10 ms) is dropped and counted.
pub fn align(raw: &RawStreams) -> Result<(Vec<SyncedFrame>, AlignReport), DataError> {
    if raw.tactile.is_empty() {
        return Err(DataError::EmptyStream("tactile"));
    }
    if raw.visual.is_empty() {
        return Err(DataError::EmptyStream("visual"));
    }
    if raw.actions.is_empty() {
        return Err(DataError::EmptyStream("action"));
    }
    let sorted = |ts: &[f64]| ts.windows(2).all(|w| w[1] > w[0]);
    let tactile_ts: Vec<f64> = raw.tactile.iter().map(|f| f.timestamp).collect();
    let visual_ts: Vec<f64> = raw.visual.iter().map(|(t, _)| *t).collect();
    let action_ts: Vec<f64> = raw.actions.iter().map(|a| a.timestamp).collect();
    if !sorted(&tactile_ts) {
        return Err(DataError::UnsortedStream("tactile"));
    }
    if !sorted(&visual_ts) {
        return Err(DataError::UnsortedStream("visual"));
    }
    if !sorted(&action_ts) {
        return Err(DataError::UnsortedStream("action"));
    }

    let mut frames = Vec::with_capacity(raw.visual.len());
    let mut report = AlignReport::default();
    for (t, obs) in &raw.visual {
        let idx = nearest_index(&tactile_ts, *t);
        let skew = (tactile_ts[idx] - t).abs();
        if skew >= TACTILE_PERIOD {
            report.dropped_frames += 1;
            continue;
        }
        report.max_skew = report.max_skew.max(skew);
        // Latest command at or before this frame; the first one otherwise.
        let a_hi = action_ts.partition_point(|&x| x <= *t + 1e-12);
        let action = &raw.actions[a_hi.saturating_sub(1)];
        frames.push(SyncedFrame {
            timestamp: *t,
            observation: obs.clone(),
            tactile: raw.tactile[idx],
            command: action.command,
            measured_external: action.measured_external,
            telemetry: action.telemetry,
        });
    }
    Ok((frames, report))
}

/// Per-dimension z-score statistics. Dimensions that are constant in the
/// data get `std = 1` and a `frozen` flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub frozen: Vec<bool>,
}

impl NormStats {
    pub fn fit(rows: &[Vec<f64>]) -> NormStats {
        assert!(!rows.is_empty());
        let dim = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let mut std = Vec::with_capacity(dim);
        let mut frozen = Vec::with_capacity(dim);
        for s in var {
            let sd = (s / n).sqrt();
            if sd < 1e-12 {
                std.push(1.0);
                frozen.push(true);
            } else {
                std.push(sd);
                frozen.push(false);
            }
        }
        NormStats { mean, std, frozen }
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Normalize and clamp to ±`limit` standard deviations. Keeps
    /// execution-time inputs from leaving the training envelope.
    pub fn normalize_clamped(&self, row: &[f64], limit: f64) -> Vec<f64> {
        self.normalize(row)
            .into_iter()
            .map(|v| v.clamp(-limit, limit))
            .collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// How episodes are split and windowed into training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Observation/tactile history per sample.
    pub history: usize,
    /// Commands per action chunk.
    pub n_chunk: usize,
    /// Fraction of episodes assigned to the training split.
    pub train_fraction: f64,
    pub split_seed: u64,
    /// `(task, modifier)` cells that must be present, e.g. the adverb
    /// anchors of a force-word experiment.
    pub required_cells: Vec<(TaskId, ForceModifier)>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            history: 4,
            n_chunk: 16,
            train_fraction: 0.9,
            split_seed: 0,
            required_cells: Vec::new(),
        }
    }
}

/// A window anchored at frame `t` of episode `episode`: history frames
/// `t-H+1..=t`, chunk commands `t..t+n_chunk`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRef {
    pub episode: usize,
    pub t: usize,
}

/// Assembled training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<EpisodeRecord>,
    pub config: DatasetConfig,
    pub action_norm: NormStats,
    pub obs_norm: NormStats,
    /// Episode counts per `(task, modifier, target)`.
    pub manifest: BTreeMap<(TaskId, ForceModifier, crate::types::TargetId), usize>,
    /// Indices of training episodes; the rest are held out.
    pub train_episodes: Vec<usize>,
    pub config_hash: String,
}

impl Dataset {
    /// All training windows, in deterministic order.
    pub fn train_windows(&self) -> Vec<WindowRef> {
        let mut out = Vec::new();
        for &e in &self.train_episodes {
            for t in self.window_anchors(e) {
                out.push(WindowRef { episode: e, t });
            }
        }
        out
    }

    pub fn window_anchors(&self, episode: usize) -> Vec<usize> {
        let len = self.episodes[episode].frames.len();
        let h = self.config.history;
        let n = self.config.n_chunk;
        if len < h + n {
            return Vec::new();
        }
        ((h - 1)..=(len - n - 1)).collect()
    }

    /// Flattened expert chunk for a window, unnormalized.
    pub fn window_chunk(&self, w: WindowRef) -> Vec<f64> {
        let frames = &self.episodes[w.episode].frames;
        let mut flat = Vec::with_capacity(self.config.n_chunk * HybridCommand::DIMS);
        for f in &frames[w.t..w.t + self.config.n_chunk] {
            f.command.flatten_into(&mut flat);
        }
        flat
    }

    /// Observation history (oldest first) for a window, unnormalized.
    pub fn window_obs(&self, w: WindowRef) -> Vec<&[f64]> {
        let frames = &self.episodes[w.episode].frames;
        (w.t + 1 - self.config.history..=w.t)
            .map(|i| frames[i].observation.as_slice())
            .collect()
    }

    pub fn window_tactile(&self, w: WindowRef) -> Vec<TactileFrame> {
        let frames = &self.episodes[w.episode].frames;
        (w.t + 1 - self.config.history..=w.t)
            .map(|i| frames[i].tactile)
            .collect()
    }

    pub fn window_instruction(&self, w: WindowRef) -> &Instruction {
        &self.episodes[w.episode].meta.instruction
    }

    pub fn window_action_chunk(&self, w: WindowRef) -> ActionChunk {
        let frames = &self.episodes[w.episode].frames;
        let period = if frames.len() > 1 {
            frames[1].timestamp - frames[0].timestamp
        } else {
            crate::config::CONTROL_PERIOD
        };
        ActionChunk::from_flat(&self.window_chunk(w), period)
    }

    /// Modifiers that actually occur in the corpus, per task and overall.
    pub fn trained_modifiers(&self) -> Vec<ForceModifier> {
        let mut mods: Vec<ForceModifier> = self
            .manifest
            .keys()
            .map(|(_, m, _)| *m)
            .collect();
        mods.sort();
        mods.dedup();
        mods
    }
}

/// Computes normalization, manifest and the train/eval split.
pub fn build_dataset(
    episodes: Vec<EpisodeRecord>,
    config: DatasetConfig,
) -> Result<Dataset, DataError> {
    if episodes.is_empty() {
        return Err(DataError::EmptyStream("episode"));
    }
    let mut manifest: BTreeMap<(TaskId, ForceModifier, crate::types::TargetId), usize> =
        BTreeMap::new();
    for ep in &episodes {
        let ins = &ep.meta.instruction;
        *manifest.entry((ins.task, ins.modifier, ins.target)).or_default() += 1;
    }
    for (task, modifier) in &config.required_cells {
        let present = manifest
            .keys()
            .any(|(t, m, _)| t == task && m == modifier);
        if !present {
            return Err(DataError::MissingCell(format!(
                "({}, {})",
                task.name(),
                modifier.name()
            )));
        }
    }

    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.split_seed);
    order.shuffle(&mut rng);
    let n_train = ((episodes.len() as f64) * config.train_fraction).ceil() as usize;
    let mut train_episodes: Vec<usize> = order.into_iter().take(n_train.max(1)).collect();
    train_episodes.sort_unstable();

    let config_hash = crate::config::config_hash(&config);
    let mut dataset = Dataset {
        episodes,
        config,
        action_norm: NormStats {
            mean: vec![],
            std: vec![],
            frozen: vec![],
        },
        obs_norm: NormStats {
            mean: vec![],
            std: vec![],
            frozen: vec![],
        },
        manifest,
        train_episodes,
        config_hash,
    };

    let windows = dataset.train_windows();
    if windows.is_empty() {
        return Err(DataError::EmptyStream("training window"));
    }
    let chunks: Vec<Vec<f64>> = windows.iter().map(|&w| dataset.window_chunk(w)).collect();
    dataset.action_norm = NormStats::fit(&chunks);
    let obs_rows: Vec<Vec<f64>> = dataset
        .train_episodes
        .iter()
        .flat_map(|&e| dataset.episodes[e].frames.iter().map(|f| f.observation.clone()))
        .collect();
    dataset.obs_norm = NormStats::fit(&obs_rows);
    Ok(dataset)
}

fn norm_block(norm: &NormStats) -> Vec<u8> {
    let mut w = codec::Writer::new();
    w.u32(norm.dim() as u32);
    for &v in &norm.mean {
        w.f64(v);
    }
    for &v in &norm.std {
        w.f64(v);
    }
    for &f in &norm.frozen {
        w.bool(f);
    }
    w.into_bytes()
}

fn read_norm_block(bytes: &[u8]) -> Result<NormStats, DataError> {
    let mut r = codec::Reader::new(bytes);
    let dim = r.u32()? as usize;
    let mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let std = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let frozen = (0..dim).map(|_| r.bool()).collect::<Result<Vec<_>, _>>()?;
    Ok(NormStats { mean, std, frozen })
}

/// Writes the dataset as a versioned, checksummed container.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut episodes = codec::Writer::new();
    episodes.u32(dataset.episodes.len() as u32);
    for ep in &dataset.episodes {
        codec::write_episode(&mut episodes, ep);
    }
    let header = serde_json::json!({
        "config_hash": dataset.config_hash,
        "config": dataset.config,
        "train_episodes": dataset.train_episodes,
        "manifest": dataset
            .manifest
            .iter()
            .map(|((t, m, o), n)| serde_json::json!([t.name(), m.name(), o.name(), n]))
            .collect::<Vec<_>>(),
    });
    container::write_container(
        path,
        DATASET_KIND,
        DATASET_VERSION,
        &header,
        &[
            ("episodes", episodes.into_bytes()),
            ("action_norm", norm_block(&dataset.action_norm)),
            ("obs_norm", norm_block(&dataset.obs_norm)),
        ],
    )
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let c = container::read_container(path, DATASET_KIND, DATASET_VERSION)?;
    let config: DatasetConfig = serde_json::from_value(c.header["config"].clone())?;
    let config_hash = c.header["config_hash"]
        .as_str()
        .ok_or_else(|| DataError::Corrupt("missing config_hash".into()))?
        .to_string();
    let train_episodes: Vec<usize> = serde_json::from_value(c.header["train_episodes"].clone())?;

    let bytes = c.block("episodes")?;
    let mut r = codec::Reader::new(bytes);
    let n = r.u32()? as usize;
    let mut episodes = Vec::with_capacity(n);
    for _ in 0..n {
        episodes.push(codec::read_episode(&mut r)?);
    }
    let action_norm = read_norm_block(c.block("action_norm")?)?;
    let obs_norm = read_norm_block(c.block("obs_norm")?)?;

    let mut manifest = BTreeMap::new();
    for ep in &episodes {
        let ins = &ep.meta.instruction;
        *manifest.entry((ins.task, ins.modifier, ins.target)).or_default() += 1;
    }
    Ok(Dataset {
        episodes,
        config,
        action_norm,
        obs_norm,
        manifest,
        train_episodes,
        config_hash,
    })
}

/// Line-delimited JSON export for inspection.
pub fn export_jsonl(episodes: &[EpisodeRecord], path: &Path) -> Result<(), DataError> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for ep in episodes {
        let line = serde_json::to_string(ep)?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Per-frame CSV export (timestamp, forces, commands) for plotting.
pub fn export_csv(episode: &EpisodeRecord, path: &Path) -> Result<(), DataError> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "timestamp,f_normal,f_shear_x,f_shear_y,grasp_force,cmd_x,cmd_y,cmd_z,cmd_f_normal,cmd_width,cmd_f_grasp"
    )?;
    for fr in &episode.frames {
        writeln!(
            f,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            fr.timestamp,
            fr.measured_external.normal,
            fr.measured_external.shear_x,
            fr.measured_external.shear_y,
            fr.tactile.grasp_force(),
            fr.command.p_target.x,
            fr.command.p_target.y,
            fr.command.p_target.z,
            fr.command.f_target_external.normal,
            fr.command.grip_width_target,
            fr.command.f_target_grasp,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Vec3;

    fn tactile_at(ts: f64) -> TactileFrame {
        TactileFrame {
            timestamp: ts,
            left: ForceVector::new(ts, 0.0, 0.0),
            right: ForceVector::ZERO,
        }
    }

    fn action_at(ts: f64) -> ActionSample {
        ActionSample {
            timestamp: ts,
            command: HybridCommand::hold(Vec3::zeros(), 0.04),
            measured_external: ForceVector::ZERO,
            telemetry: ControlTelemetry {
                delta_f: ForceVector::ZERO,
                p_hybrid: Vec3::zeros(),
                deadband_active: true,
            },
        }
    }

    fn streams(tactile_ts: Vec<f64>, visual_ts: Vec<f64>) -> RawStreams {
        RawStreams {
            tactile: tactile_ts.into_iter().map(tactile_at).collect(),
            visual: visual_ts.iter().map(|&t| (t, vec![t])).collect(),
            actions: visual_ts.into_iter().map(action_at).collect(),
        }
    }

    #[test]
    fn exact_rate_ratio_selects_every_fifth_frame() {
        let tactile: Vec<f64> = (0..101).map(|k| k as f64 * 0.01).collect();
        let visual: Vec<f64> = (0..21).map(|k| k as f64 * 0.05).collect();
        let raw = streams(tactile, visual);
        let (frames, report) = align(&raw).unwrap();
        assert_eq!(frames.len(), 21);
        assert_eq!(report.dropped_frames, 0);
        // Exact rate ratio: every 5th tactile sample, zero skew up to the
        // float grid.
        assert!(report.max_skew < 1e-12);
        for f in &frames {
            assert!((f.tactile.timestamp - f.timestamp).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_matches_brute_force_oracle_under_jitter() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tactile: Vec<f64> = (0..501)
            .map(|k| k as f64 * 0.01 + rng.gen_range(-0.002..0.002))
            .collect();
        let visual: Vec<f64> = (1..99).map(|k| k as f64 * 0.05).collect();
        let raw = streams(tactile.clone(), visual.clone());
        let (frames, report) = align(&raw).unwrap();
        assert_eq!(frames.len(), visual.len());
        assert!(report.max_skew <= 0.005, "skew {}", report.max_skew);
        // Brute-force scan over the whole jittered grid.
        for f in &frames {
            let best = tactile
                .iter()
                .min_by(|a, b| {
                    (*a - f.timestamp)
                        .abs()
                        .total_cmp(&(*b - f.timestamp).abs())
                })
                .copied()
                .unwrap();
            assert_eq!(f.tactile.timestamp, best);
        }
    }

    #[test]
    fn dropout_drops_exactly_one_frame() {
        // Remove the five tactile samples covering one visual frame.
        let tactile: Vec<f64> = (0..101)
            .map(|k| k as f64 * 0.01)
            .filter(|&t| !(0.48..0.53).contains(&t))
            .collect();
        let visual: Vec<f64> = (0..21).map(|k| k as f64 * 0.05).collect();
        let raw = streams(tactile, visual);
        let (frames, report) = align(&raw).unwrap();
        assert_eq!(report.dropped_frames, 1);
        assert_eq!(frames.len(), 20);
        assert!(frames.iter().all(|f| (f.timestamp - 0.5).abs() > 1e-9));
    }

    #[test]
    fn empty_and_unsorted_streams_are_rejected() {
        let raw = streams(vec![], vec![0.0]);
        assert!(matches!(align(&raw), Err(DataError::EmptyStream("tactile"))));
        let raw = streams(vec![0.0, 0.01], vec![0.05, 0.0]);
        assert!(matches!(align(&raw), Err(DataError::UnsortedStream("visual"))));
    }

    #[test]
    fn no_duplicate_tactile_across_adjacent_frames() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tactile: Vec<f64> = (0..301)
            .map(|k| k as f64 * 0.01 + rng.gen_range(-0.0025..0.0025))
            .collect();
        let visual: Vec<f64> = (0..60).map(|k| k as f64 * 0.05).collect();
        let raw = streams(tactile, visual);
        let (frames, _) = align(&raw).unwrap();
        for pair in frames.windows(2) {
            assert_ne!(
                pair[0].tactile.timestamp, pair[1].tactile.timestamp,
                "tactile frame reused across adjacent visual frames"
            );
        }
    }

    fn synthetic_episode(modifier: ForceModifier, value: f64, frames: usize) -> EpisodeRecord {
        let mk_frame = |k: usize| SyncedFrame {
            timestamp: k as f64 * 0.05,
            observation: vec![value, k as f64, 1.0],
            tactile: tactile_at(k as f64 * 0.05),
            command: HybridCommand {
                p_target: Vec3::new(value, 0.0, k as f64 * 0.01),
                f_target_external: ForceVector::new(value, 0.0, 0.0),
                grip_width_target: 0.04,
                f_target_grasp: 1.0,
            },
            measured_external: ForceVector::ZERO,
            telemetry: ControlTelemetry {
                delta_f: ForceVector::ZERO,
                p_hybrid: Vec3::zeros(),
                deadband_active: true,
            },
        };
        EpisodeRecord {
            meta: crate::types::EpisodeMeta {
                scenario: "test".into(),
                seed: 1,
                config_hash: "x".into(),
                instruction: Instruction::new(TaskId::Insert, modifier, crate::types::TargetId::UsbPlug),
            },
            frames: (0..frames).map(mk_frame).collect(),
            outcome: crate::types::Outcome::Success,
        }
    }

    #[test]
    fn manifest_counts_cells() {
        let eps: Vec<EpisodeRecord> = (0..10)
            .map(|i| {
                synthetic_episode(
                    if i < 5 { ForceModifier::Softly } else { ForceModifier::Hard },
                    0.5,
                    12,
                )
            })
            .collect();
        let cfg = DatasetConfig {
            history: 2,
            n_chunk: 4,
            train_fraction: 1.0,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(eps, cfg).unwrap();
        let softly: usize = ds
            .manifest
            .iter()
            .filter(|((_, m, _), _)| *m == ForceModifier::Softly)
            .map(|(_, n)| n)
            .sum();
        assert_eq!(softly, 5);
    }

    #[test]
    fn missing_required_cell_is_an_error() {
        let eps = vec![synthetic_episode(ForceModifier::Softly, 0.5, 12)];
        let cfg = DatasetConfig {
            history: 2,
            n_chunk: 4,
            required_cells: vec![(TaskId::Insert, ForceModifier::Hard)],
            ..DatasetConfig::default()
        };
        assert!(matches!(
            build_dataset(eps, cfg),
            Err(DataError::MissingCell(_))
        ));
    }

    #[test]
    fn zscored_actions_have_unit_stats() {
        let eps: Vec<EpisodeRecord> = (0..12)
            .map(|i| synthetic_episode(ForceModifier::Neutral, 0.3 + 0.1 * i as f64, 16))
            .collect();
        let cfg = DatasetConfig {
            history: 2,
            n_chunk: 4,
            train_fraction: 1.0,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(eps, cfg).unwrap();
        // Recompute statistics of the normalized training chunks.
        let windows = ds.train_windows();
        let rows: Vec<Vec<f64>> = windows
            .iter()
            .map(|&w| ds.action_norm.normalize(&ds.window_chunk(w)))
            .collect();
        let dim = rows[0].len();
        let n = rows.len() as f64;
        for d in 0..dim {
            let mean: f64 = rows.iter().map(|r| r[d]).sum::<f64>() / n;
            let var: f64 = rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9, "dim {d} mean {mean}");
            if !ds.action_norm.frozen[d] {
                assert!((var.sqrt() - 1.0).abs() <= 1e-9, "dim {d} std {}", var.sqrt());
            }
        }
    }

    #[test]
    fn constant_dims_are_flagged() {
        let eps: Vec<EpisodeRecord> = (0..4)
            .map(|_| synthetic_episode(ForceModifier::Neutral, 0.5, 12))
            .collect();
        let cfg = DatasetConfig {
            history: 2,
            n_chunk: 4,
            train_fraction: 1.0,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(eps, cfg).unwrap();
        // Width dim (6) is constant 0.04 in every command.
        assert!(ds.action_norm.frozen[6]);
        assert_eq!(ds.action_norm.std[6], 1.0);
    }

    #[test]
    fn dataset_roundtrip_is_deep_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dset");
        let eps: Vec<EpisodeRecord> = (0..6)
            .map(|i| synthetic_episode(ForceModifier::Hard, 2.5 + i as f64 * 0.01, 14))
            .collect();
        let cfg = DatasetConfig {
            history: 2,
            n_chunk: 4,
            ..DatasetConfig::default()
        };
        let ds = build_dataset(eps, cfg).unwrap();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }
}
