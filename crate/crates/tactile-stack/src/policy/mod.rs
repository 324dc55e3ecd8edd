//! Tactile-conditioned action-chunk policy.
//!
//! Observation history, a structured-instruction embedding and a fused
//! tactile token are concatenated into one prefix context (obs…, lang,
//! tactile, in that order). A small velocity network trained with a
//! conditional flow-matching objective generates whole action chunks by
//! Euler integration from Gaussian noise.

pub mod flow;
pub mod net;
pub mod persist;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PolicyConfig;
use crate::data::NormStats;
use crate::types::{ForceModifier, Instruction, TactileFrame};

use net::Mlp;

/// Normalized observations are clamped to this many standard deviations.
pub const OBS_CLAMP_SIGMA: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("tactile history has {found} frames, expected {expected}")]
    HistoryLength { found: usize, expected: usize },
    #[error("observation history has {found} entries, expected {expected}")]
    ObsLength { found: usize, expected: usize },
    #[error("observation vector has {found} dims, expected {expected}")]
    ObsDim { found: usize, expected: usize },
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("non-finite state while sampling")]
    NonFiniteSample,
    #[error("policy/dataset mismatch: {0}")]
    ConfigMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
}

/// Fused conditioning context for one policy invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixContext {
    pub obs_tokens: Vec<Vec<f64>>,
    pub lang_token: Vec<f64>,
    pub tactile_token: Vec<f64>,
    /// `obs_tokens` flattened, then `lang_token`, then `tactile_token`.
    pub fused: DVector<f64>,
}

/// Fixed-seed two-layer encoder that fuses a tactile history into one
/// token. Deterministic given its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileEncoder {
    pub net: Mlp,
    pub history: usize,
}

/// Values per tactile frame fed to the encoder: both pads, three
/// components each.
pub const TACTILE_FRAME_DIMS: usize = 6;

impl TactileEncoder {
    pub fn new(history: usize, d_tac: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = history * TACTILE_FRAME_DIMS;
        let net = Mlp::new(&[input, 16, d_tac], &mut rng);
        Self { net, history }
    }

    /// Concatenates the time-ordered history and applies the two-layer map.
    pub fn encode(&self, history: &[TactileFrame]) -> Result<Vec<f64>, PolicyError> {
        if history.len() != self.history {
            return Err(PolicyError::HistoryLength {
                found: history.len(),
                expected: self.history,
            });
        }
        let mut input = Vec::with_capacity(history.len() * TACTILE_FRAME_DIMS);
        for f in history {
            input.extend_from_slice(&[
                f.left.normal,
                f.left.shear_x,
                f.left.shear_y,
                f.right.normal,
                f.right.shear_x,
                f.right.shear_y,
            ]);
        }
        Ok(self.net.forward(&DVector::from_vec(input)).data.into())
    }
}

/// One vector per enumeration member of (task, modifier, target), with the
/// modifier slice carrying its intensity-scale coordinate in channel 0.
/// Modifiers never seen in training resolve by linear interpolation (or
/// extrapolation) between the nearest trained anchors on that scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub d_task: usize,
    pub d_mod: usize,
    pub d_target: usize,
    pub task_vecs: Vec<Vec<f64>>,
    pub mod_vecs: Vec<Vec<f64>>,
    pub target_vecs: Vec<Vec<f64>>,
    pub trained_modifiers: Vec<ForceModifier>,
}

impl EmbeddingTable {
    pub fn new(d_lang: usize, seed: u64) -> Self {
        assert!(d_lang >= 4);
        // Keep at least two modifier channels (coordinate + texture).
        let d_task = if d_lang >= 8 { 2 } else { 1 };
        let d_target = d_task;
        let d_mod = d_lang - d_task - d_target;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |dim: usize, scale: f64| -> Vec<f64> {
            (0..dim).map(|_| net::normal_sample(&mut rng) * scale).collect()
        };
        let task_vecs = (0..crate::types::TaskId::ALL.len())
            .map(|_| draw(d_task, 0.5))
            .collect();
        let mod_vecs = ForceModifier::ALL
            .iter()
            .map(|m| {
                let mut v = draw(d_mod, 0.3);
                v[0] = m.scale_coordinate();
                v
            })
            .collect();
        let target_vecs = (0..crate::types::TargetId::ALL.len())
            .map(|_| draw(d_target, 0.5))
            .collect();
        Self {
            d_task,
            d_mod,
            d_target,
            task_vecs,
            mod_vecs,
            target_vecs,
            trained_modifiers: Vec::new(),
        }
    }

    pub fn d_lang(&self) -> usize {
        self.d_task + self.d_mod + self.d_target
    }

    /// Marks which modifiers have training data; the rest resolve through
    /// the interpolation map.
    pub fn set_trained(&mut self, mut modifiers: Vec<ForceModifier>) {
        modifiers.sort();
        modifiers.dedup();
        self.trained_modifiers = modifiers;
    }

    fn mod_vec(&self, m: ForceModifier) -> &[f64] {
        let idx = ForceModifier::ALL.iter().position(|&x| x == m).unwrap();
        &self.mod_vecs[idx]
    }

    /// Modifier slice of the token: a trained modifier uses its own vector;
    /// an unseen one is placed on the line through the two nearest trained
    /// anchors at its own scale coordinate.
    pub fn resolve_modifier(&self, m: ForceModifier) -> Vec<f64> {
        if self.trained_modifiers.is_empty() || self.trained_modifiers.contains(&m) {
            return self.mod_vec(m).to_vec();
        }
        let c = m.scale_coordinate();
        let mut anchors: Vec<(f64, &[f64])> = self
            .trained_modifiers
            .iter()
            .map(|&a| (a.scale_coordinate(), self.mod_vec(a)))
            .collect();
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0));

        if anchors.len() == 1 {
            // Single anchor: shift along the coordinate channel only.
            let mut v = anchors[0].1.to_vec();
            v[0] = c;
            return v;
        }
        // Bracketing pair when possible; otherwise the two outermost on
        // the relevant side (pure linear extrapolation).
        let (lo, hi) = if c <= anchors[0].0 {
            (&anchors[0], &anchors[1])
        } else if c >= anchors[anchors.len() - 1].0 {
            (&anchors[anchors.len() - 2], &anchors[anchors.len() - 1])
        } else {
            let hi_idx = anchors.iter().position(|a| a.0 >= c).unwrap();
            (&anchors[hi_idx - 1], &anchors[hi_idx])
        };
        let t = (c - lo.0) / (hi.0 - lo.0);
        lo.1.iter()
            .zip(hi.1)
            .map(|(a, b)| a + t * (b - a))
            .collect()
    }

    /// Full language token: task slice, modifier slice, target slice.
    pub fn lang_token(&self, instruction: &Instruction) -> Vec<f64> {
        let t_idx = crate::types::TaskId::ALL
            .iter()
            .position(|&t| t == instruction.task)
            .unwrap();
        let o_idx = crate::types::TargetId::ALL
            .iter()
            .position(|&o| o == instruction.target)
            .unwrap();
        let mut v = Vec::with_capacity(self.d_lang());
        v.extend_from_slice(&self.task_vecs[t_idx]);
        v.extend_from_slice(&self.resolve_modifier(instruction.modifier));
        v.extend_from_slice(&self.target_vecs[o_idx]);
        v
    }
}

/// Concatenates observation history, instruction embedding and tactile
/// token into the prefix context, preserving the (obs…, lang, tactile)
/// order.
pub fn fuse_prefix(
    obs_history: &[Vec<f64>],
    instruction: &Instruction,
    tactile_token: Vec<f64>,
    embeddings: &EmbeddingTable,
    config: &PolicyConfig,
) -> Result<PrefixContext, PolicyError> {
    if obs_history.len() != config.history {
        return Err(PolicyError::ObsLength {
            found: obs_history.len(),
            expected: config.history,
        });
    }
    for obs in obs_history {
        if obs.len() != config.d_obs {
            return Err(PolicyError::ObsDim {
                found: obs.len(),
                expected: config.d_obs,
            });
        }
    }
    let lang_token = embeddings.lang_token(instruction);
    let mut fused = Vec::with_capacity(config.context_dim());
    for obs in obs_history {
        fused.extend_from_slice(obs);
    }
    fused.extend_from_slice(&lang_token);
    fused.extend_from_slice(&tactile_token);
    Ok(PrefixContext {
        obs_tokens: obs_history.to_vec(),
        lang_token,
        tactile_token,
        fused: DVector::from_vec(fused),
    })
}

/// Trained policy bundle: velocity network, frozen tactile encoder and
/// embedding table, and the normalization statistics it was fit under.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub net: Mlp,
    pub tactile_encoder: TactileEncoder,
    pub embeddings: EmbeddingTable,
    pub action_norm: NormStats,
    pub obs_norm: NormStats,
    /// Hash of the policy config; checked when loading from disk.
    pub config_hash: String,
    /// Hash of the dataset config the policy was trained on.
    pub data_hash: String,
}

impl Policy {
    /// Builds the prefix context from raw (unnormalized) observations and
    /// tactile history.
    pub fn make_context(
        &self,
        obs_history: &[Vec<f64>],
        tactile_history: &[TactileFrame],
        instruction: &Instruction,
    ) -> Result<PrefixContext, PolicyError> {
        let normed: Vec<Vec<f64>> = obs_history
            .iter()
            .map(|o| self.obs_norm.normalize_clamped(o, OBS_CLAMP_SIGMA))
            .collect();
        let tactile_token = self.tactile_encoder.encode(tactile_history)?;
        fuse_prefix(
            &normed,
            instruction,
            tactile_token,
            &self.embeddings,
            &self.config,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ForceVector, TargetId, TaskId};

    fn zero_frame(ts: f64) -> TactileFrame {
        TactileFrame {
            timestamp: ts,
            left: ForceVector::ZERO,
            right: ForceVector::ZERO,
        }
    }

    #[test]
    fn zero_frames_zero_final_layer_give_zero_token() {
        let mut enc = TactileEncoder::new(4, 8, 1);
        let last = enc.net.layers.len() - 1;
        enc.net.layers[last].w.fill(0.0);
        enc.net.layers[last].b.fill(0.0);
        let frames: Vec<TactileFrame> = (0..4).map(|k| zero_frame(k as f64 * 0.05)).collect();
        let token = enc.encode(&frames).unwrap();
        assert!(token.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_is_order_sensitive() {
        let enc = TactileEncoder::new(4, 8, 2);
        let mut frames: Vec<TactileFrame> = (0..4)
            .map(|k| TactileFrame {
                timestamp: k as f64 * 0.05,
                left: ForceVector::new(k as f64, 0.0, 0.0),
                right: ForceVector::ZERO,
            })
            .collect();
        let a = enc.encode(&frames).unwrap();
        frames.reverse();
        let b = enc.encode(&frames).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn encoder_rejects_wrong_history_length() {
        let enc = TactileEncoder::new(4, 8, 2);
        let frames = vec![zero_frame(0.0); 3];
        assert!(matches!(
            enc.encode(&frames),
            Err(PolicyError::HistoryLength { found: 3, expected: 4 })
        ));
    }

    #[test]
    fn encoder_input_length_bookkeeping() {
        // H=4 frames at 6 force components each.
        let enc = TactileEncoder::new(4, 8, 0);
        assert_eq!(enc.net.input_dim(), 4 * TACTILE_FRAME_DIMS);
    }

    #[test]
    fn fuse_is_concatenation_in_order() {
        let cfg = PolicyConfig {
            history: 2,
            d_obs: 3,
            d_lang: 8,
            d_tac: 2,
            ..PolicyConfig::default()
        };
        let emb = EmbeddingTable::new(cfg.d_lang, 5);
        let obs = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let ins = Instruction::new(TaskId::Insert, ForceModifier::Hard, TargetId::UsbPlug);
        let ctx = fuse_prefix(&obs, &ins, vec![9.0, 10.0], &emb, &cfg).unwrap();
        let mut expected = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        expected.extend(emb.lang_token(&ins));
        expected.extend([9.0, 10.0]);
        assert_eq!(ctx.fused.as_slice(), expected.as_slice());
        // Determinism: same inputs, identical context.
        let ctx2 = fuse_prefix(&obs, &ins, vec![9.0, 10.0], &emb, &cfg).unwrap();
        assert_eq!(ctx, ctx2);
    }

    #[test]
    fn unseen_modifier_interpolates_between_anchors() {
        let mut emb = EmbeddingTable::new(8, 7);
        emb.set_trained(vec![ForceModifier::Softly, ForceModifier::Neutral]);
        let gently = emb.resolve_modifier(ForceModifier::Gently);
        let softly = emb.resolve_modifier(ForceModifier::Softly);
        let neutral = emb.resolve_modifier(ForceModifier::Neutral);
        // gently sits at coordinate 0.25, halfway between softly (0.0) and
        // neutral (0.5).
        for ((g, s), n) in gently.iter().zip(&softly).zip(&neutral) {
            assert!((g - 0.5 * (s + n)).abs() < 1e-12);
        }
        // Nearest trained anchor in embedding space is softly, not any
        // farther anchor.
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        assert!(dist(&gently, &softly) <= dist(&gently, &neutral) + 1e-12);
    }

    #[test]
    fn harder_extrapolates_past_hard() {
        let mut emb = EmbeddingTable::new(8, 7);
        emb.set_trained(vec![ForceModifier::Softly, ForceModifier::Hard]);
        let harder = emb.resolve_modifier(ForceModifier::Harder);
        // Coordinate channel advances beyond hard's 1.0.
        assert!((harder[0] - 1.25).abs() < 1e-12);
        let softly = emb.resolve_modifier(ForceModifier::Softly);
        let hard = emb.resolve_modifier(ForceModifier::Hard);
        // Collinear with the two anchors: harder = hard + 0.25*(hard-softly).
        for ((h2, h), s) in harder.iter().zip(&hard).zip(&softly) {
            assert!((h2 - (h + 0.25 * (h - s))).abs() < 1e-12);
        }
    }
}
