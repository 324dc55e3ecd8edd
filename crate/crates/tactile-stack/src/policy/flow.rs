//! Conditional flow matching over action chunks.
//!
//! Training regresses a velocity field `v(x_t, t, context)` onto the
//! straight-line displacement `x1 − x0` between a standard-normal draw and
//! the (normalized) expert chunk, with `x_t = (1−t)·x0 + t·x1`. Sampling
//! integrates the learned field from noise with fixed-step Euler.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PolicyConfig;
use crate::data::Dataset;
use crate::types::{ActionChunk, HybridCommand};

use super::net::{normal_sample, Adam, Gradients, Mlp};
use super::{EmbeddingTable, Policy, PolicyError, PrefixContext, TactileEncoder};

/// One training sample: fused context and the normalized expert chunk.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub context: DVector<f64>,
    pub x1: DVector<f64>,
}

/// Velocity-network input layout: `[x (action), t, context]`.
fn net_input(x: &DVector<f64>, t: f64, context: &DVector<f64>) -> DVector<f64> {
    let mut v = Vec::with_capacity(x.len() + 1 + context.len());
    v.extend_from_slice(x.as_slice());
    v.push(t);
    v.extend_from_slice(context.as_slice());
    DVector::from_vec(v)
}

/// Per-dimension loss weights: `w_kin` on kinematic dims, `w_force` on
/// force dims of the flattened chunk.
fn dim_weights(action_dim: usize, w_kin: f64, w_force: f64) -> Vec<f64> {
    (0..action_dim)
        .map(|d| {
            if HybridCommand::is_force_dim(d) {
                w_force
            } else {
                w_kin
            }
        })
        .collect()
}

/// Flow-matching loss and parameter gradients over a batch.
///
/// Per sample: draw `x0 ~ N(0, I)` and `t ~ U(0, 1)` from `rng`, form
/// `x_t`, and regress the network output onto `x1 − x0` with weighted
/// squared error, averaged over batch and dimensions.
pub fn cfm_loss(
    net: &Mlp,
    batch: &[TrainSample],
    config: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, Gradients), PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    let action_dim = config.action_dim();
    let weights = dim_weights(action_dim, config.w_kin, config.w_force);
    let mut grads = net.zero_gradients();
    let mut loss = 0.0;
    let denom = (batch.len() * action_dim) as f64;

    for sample in batch {
        let x0 = DVector::from_fn(action_dim, |_, _| normal_sample(rng));
        let t: f64 = rng.gen_range(0.0..1.0);
        let x_t = &x0 * (1.0 - t) + &sample.x1 * t;
        let target = &sample.x1 - &x0;
        let input = net_input(&x_t, t, &sample.context);
        let (out, cache) = net.forward_cached(&input);
        let mut grad_out = DVector::zeros(action_dim);
        for d in 0..action_dim {
            let r = out[d] - target[d];
            loss += weights[d] * r * r / denom;
            grad_out[d] = 2.0 * weights[d] * r / denom;
        }
        net.backward(&cache, &grad_out, &mut grads);
    }
    if !loss.is_finite() {
        return Err(PolicyError::Diverged { step: 0, loss });
    }
    Ok((loss, grads))
}

/// Loss only, with the same draw order as [`cfm_loss`]; used by the
/// finite-difference gradient oracle.
pub fn cfm_loss_value(
    net: &Mlp,
    batch: &[TrainSample],
    config: &PolicyConfig,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let action_dim = config.action_dim();
    let weights = dim_weights(action_dim, config.w_kin, config.w_force);
    let denom = (batch.len() * action_dim) as f64;
    let mut loss = 0.0;
    for sample in batch {
        let x0 = DVector::from_fn(action_dim, |_, _| normal_sample(rng));
        let t: f64 = rng.gen_range(0.0..1.0);
        let x_t = &x0 * (1.0 - t) + &sample.x1 * t;
        let target = &sample.x1 - &x0;
        let out = net.forward(&net_input(&x_t, t, &sample.context));
        for d in 0..action_dim {
            let r = out[d] - target[d];
            loss += weights[d] * r * r / denom;
        }
    }
    loss
}

impl Policy {
    /// Draws one action chunk: noise integrated through the velocity field
    /// with `n_steps` Euler steps, then denormalized.
    pub fn sample_action(
        &self,
        context: &PrefixContext,
        n_steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ActionChunk, PolicyError> {
        assert!(n_steps >= 1);
        let action_dim = self.config.action_dim();
        let mut x = DVector::from_fn(action_dim, |_, _| normal_sample(rng));
        let h = 1.0 / n_steps as f64;
        for k in 0..n_steps {
            let t = k as f64 * h;
            let v = self.net.forward(&net_input(&x, t, &context.fused));
            x += v * h;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(PolicyError::NonFiniteSample);
            }
        }
        // Dimensions that were constant in training decode to that
        // constant; the flow carries no information for them.
        let mut flat = self.action_norm.denormalize(x.as_slice());
        for (d, v) in flat.iter_mut().enumerate() {
            if self.action_norm.frozen[d] {
                *v = self.action_norm.mean[d];
            }
        }
        Ok(ActionChunk::from_flat(&flat, crate::config::CONTROL_PERIOD))
    }
}

/// Builds the (context, normalized chunk) training set from a dataset.
pub fn prepare_samples(
    dataset: &Dataset,
    config: &PolicyConfig,
    encoder: &TactileEncoder,
    embeddings: &EmbeddingTable,
) -> Result<Vec<TrainSample>, PolicyError> {
    if dataset.config.history != config.history || dataset.config.n_chunk != config.n_chunk {
        return Err(PolicyError::ConfigMismatch(format!(
            "dataset windows (H={}, n_chunk={}) differ from policy (H={}, n_chunk={})",
            dataset.config.history, dataset.config.n_chunk, config.history, config.n_chunk
        )));
    }
    let mut samples = Vec::new();
    for w in dataset.train_windows() {
        let obs: Vec<Vec<f64>> = dataset
            .window_obs(w)
            .iter()
            .map(|o| dataset.obs_norm.normalize_clamped(o, super::OBS_CLAMP_SIGMA))
            .collect();
        let tactile_token = encoder.encode(&dataset.window_tactile(w))?;
        let ctx = super::fuse_prefix(
            &obs,
            dataset.window_instruction(w),
            tactile_token,
            embeddings,
            config,
        )?;
        let x1 = dataset.action_norm.normalize(&dataset.window_chunk(w));
        samples.push(TrainSample {
            context: ctx.fused,
            x1: DVector::from_vec(x1),
        });
    }
    if samples.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    Ok(samples)
}

/// Trains a policy from scratch on a dataset. Deterministic given
/// `(dataset, config, seed)`; returns the policy and the logged loss curve.
pub fn train(
    dataset: &Dataset,
    config: &PolicyConfig,
    seed: u64,
) -> Result<(Policy, Vec<f64>), PolicyError> {
    config
        .validate()
        .map_err(PolicyError::ConfigMismatch)?;
    if dataset.obs_norm.dim() != config.d_obs {
        return Err(PolicyError::ConfigMismatch(format!(
            "dataset observations have {} dims, policy expects {}",
            dataset.obs_norm.dim(),
            config.d_obs
        )));
    }

    let encoder = TactileEncoder::new(config.history, config.d_tac, seed ^ 0x7ac7_11e5);
    let mut embeddings = EmbeddingTable::new(config.d_lang, seed ^ 0xe327_bed5);
    embeddings.set_trained(dataset.trained_modifiers());

    let samples = prepare_samples(dataset, config, &encoder, &embeddings)?;
    let input_dim = config.action_dim() + 1 + config.context_dim();
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&config.hidden);
    dims.push(config.action_dim());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::with_skip(&dims, &mut rng);
    let mut adam = Adam::new(&net, config.learning_rate);
    let mut curve = Vec::with_capacity(config.train_steps);

    for step in 0..config.train_steps {
        // Fixed step schedule: the rate drops twice late in training.
        if step * 2 == config.train_steps || step * 4 == config.train_steps * 3 {
            adam.set_lr(adam.lr() * 0.3);
        }
        let batch: Vec<TrainSample> = (0..config.batch_size.min(samples.len()))
            .map(|_| samples[rng.gen_range(0..samples.len())].clone())
            .collect();
        let (loss, grads) = cfm_loss(&net, &batch, config, &mut rng)?;
        if !loss.is_finite() {
            return Err(PolicyError::Diverged { step, loss });
        }
        adam.step(&mut net, &grads);
        curve.push(loss);
    }

    let policy = Policy {
        config_hash: crate::config::config_hash(config),
        data_hash: dataset.config_hash.clone(),
        config: config.clone(),
        net,
        tactile_encoder: encoder,
        embeddings,
        action_norm: dataset.action_norm.clone(),
        obs_norm: dataset.obs_norm.clone(),
    };
    Ok((policy, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NormStats;

    /// Tiny config for oracle tests; the velocity net stays under 1k
    /// parameters.
    pub(crate) fn tiny_config() -> PolicyConfig {
        PolicyConfig {
            history: 1,
            d_obs: 4,
            d_lang: 4,
            d_tac: 3,
            n_chunk: 1,
            hidden: vec![16],
            n_steps: 8,
            ..PolicyConfig::default()
        }
    }

    pub(crate) fn tiny_net(config: &PolicyConfig, seed: u64) -> Mlp {
        let input = config.action_dim() + 1 + config.context_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::with_skip(&[input, 16, config.action_dim()], &mut rng)
    }

    fn tiny_batch(config: &PolicyConfig, n: usize, seed: u64) -> Vec<TrainSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| TrainSample {
                context: DVector::from_fn(config.context_dim(), |_, _| normal_sample(&mut rng)),
                x1: DVector::from_fn(config.action_dim(), |_, _| normal_sample(&mut rng)),
            })
            .collect()
    }

    fn identity_norm(dim: usize) -> NormStats {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            frozen: vec![false; dim],
        }
    }

    fn policy_with_net(config: PolicyConfig, net: Mlp) -> Policy {
        Policy {
            action_norm: identity_norm(config.action_dim()),
            obs_norm: identity_norm(config.d_obs),
            tactile_encoder: TactileEncoder::new(config.history, config.d_tac, 0),
            embeddings: EmbeddingTable::new(config.d_lang, 0),
            config_hash: crate::config::config_hash(&config),
            data_hash: "test".into(),
            config,
            net,
        }
    }

    fn zero_context(config: &PolicyConfig) -> PrefixContext {
        PrefixContext {
            obs_tokens: vec![vec![0.0; config.d_obs]; config.history],
            lang_token: vec![0.0; config.d_lang],
            tactile_token: vec![0.0; config.d_tac],
            fused: DVector::zeros(config.context_dim()),
        }
    }

    #[test]
    fn exact_regression_target_gives_zero_loss() {
        // Freeze the (x0, t) draw by replaying the seed: set x1 := x0, so
        // the regression target x1 − x0 is zero, and zero the network.
        let config = tiny_config();
        let mut net = tiny_net(&config, 1);
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let draw_seed = 42;
        let mut probe = ChaCha8Rng::seed_from_u64(draw_seed);
        let x0 = DVector::from_fn(config.action_dim(), |_, _| normal_sample(&mut probe));
        let batch = vec![TrainSample {
            context: DVector::zeros(config.context_dim()),
            x1: x0,
        }];
        let loss = cfm_loss_value(
            &net,
            &batch,
            &config,
            &mut ChaCha8Rng::seed_from_u64(draw_seed),
        );
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let config = tiny_config();
        let mut net = tiny_net(&config, 3);
        assert!(net.param_count() <= 1000, "oracle net too large");
        let batch = tiny_batch(&config, 4, 9);
        let draw_seed = 1234u64;

        let (_, grads) = cfm_loss(
            &net,
            &batch,
            &config,
            &mut ChaCha8Rng::seed_from_u64(draw_seed),
        )
        .unwrap();

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        for idx in 0..net.param_count() {
            let orig = net.get_param(idx);
            net.set_param(idx, orig + h);
            let lp = cfm_loss_value(&net, &batch, &config, &mut ChaCha8Rng::seed_from_u64(draw_seed));
            net.set_param(idx, orig - h);
            let lm = cfm_loss_value(&net, &batch, &config, &mut ChaCha8Rng::seed_from_u64(draw_seed));
            net.set_param(idx, orig);
            let fd = (lp - lm) / (2.0 * h);
            let an = grads.get(idx);
            let denom = fd.abs().max(an.abs()).max(1e-8);
            max_rel = max_rel.max((fd - an).abs() / denom);
        }
        assert!(max_rel <= 1e-4, "max relative gradient error {max_rel}");
    }

    #[test]
    fn zero_field_returns_initial_noise() {
        let config = tiny_config();
        let mut net = tiny_net(&config, 2);
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let policy = policy_with_net(config.clone(), net);
        let ctx = zero_context(&config);
        let seed = 77;
        let chunk = policy
            .sample_action(&ctx, 16, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap();
        // Replay the draw: with v ≡ 0 the output is exactly x0 (modulo the
        // grasp-force floor applied when reshaping into commands).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0: Vec<f64> = (0..config.action_dim())
            .map(|d| {
                let v = normal_sample(&mut rng);
                if d % HybridCommand::DIMS == 7 {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect();
        assert_eq!(chunk.flatten(), x0);
    }

    #[test]
    fn constant_field_is_exact_for_any_step_count() {
        let config = tiny_config();
        let mut net = tiny_net(&config, 2);
        for l in &mut net.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        // Constant field c via the last bias.
        let c = 0.35;
        let last = net.layers.len() - 1;
        net.layers[last].b.fill(c);
        let policy = policy_with_net(config.clone(), net);
        let ctx = zero_context(&config);
        let seed = 3;
        let mut outputs = Vec::new();
        for n_steps in [1, 4, 32] {
            let chunk = policy
                .sample_action(&ctx, n_steps, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            outputs.push(chunk.flatten());
        }
        // x0 + c exactly, independent of n_steps (up to fp associativity).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let expected: Vec<f64> = (0..config.action_dim())
            .map(|d| {
                let v = normal_sample(&mut rng) + c;
                if d % HybridCommand::DIMS == 7 {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect();
        for out in outputs {
            for (o, e) in out.iter().zip(&expected) {
                assert!((o - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let config = tiny_config();
        let net = tiny_net(&config, 8);
        let policy = policy_with_net(config.clone(), net);
        let ctx = zero_context(&config);
        let a = policy
            .sample_action(&ctx, 16, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        let b = policy
            .sample_action(&ctx, 16, &mut ChaCha8Rng::seed_from_u64(5))
            .unwrap();
        assert_eq!(a, b);
    }
}
