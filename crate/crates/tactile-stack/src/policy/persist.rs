//! Versioned binary model files with embedded config hash and
//! normalization statistics. Loading refuses a hash mismatch.

use std::path::Path;

use crate::config::PolicyConfig;
use crate::data::codec::{Reader, Writer};
use crate::data::container::{read_container, write_container};
use crate::data::{DataError, NormStats};
use crate::types::ForceModifier;

use super::net::Mlp;
use super::{EmbeddingTable, Policy, TactileEncoder};

pub const MODEL_VERSION: u32 = 1;
const MODEL_KIND: &[u8; 4] = b"MODL";

fn write_mlp(w: &mut Writer, net: &Mlp) {
    let dims = net.dims();
    w.u32(dims.len() as u32);
    for d in dims {
        w.u32(d as u32);
    }
    w.bool(net.skip.is_some());
    for v in net.flat_params() {
        w.f64(v);
    }
}

fn read_mlp(r: &mut Reader) -> Result<Mlp, DataError> {
    let n_dims = r.u32()? as usize;
    let dims: Vec<usize> = (0..n_dims)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<_, _>>()?;
    if dims.len() < 2 {
        return Err(DataError::Corrupt("model with fewer than two layers".into()));
    }
    let has_skip = r.bool()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut net = if has_skip {
        Mlp::with_skip(&dims, &mut rng)
    } else {
        Mlp::new(&dims, &mut rng)
    };
    let flat: Vec<f64> = (0..net.param_count())
        .map(|_| r.f64())
        .collect::<Result<_, _>>()?;
    net.set_flat_params(&flat);
    Ok(net)
}

fn write_norm(w: &mut Writer, norm: &NormStats) {
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
}

fn read_norm(r: &mut Reader) -> Result<NormStats, DataError> {
    let dim = r.u32()? as usize;
    let mean = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let std = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let frozen = (0..dim).map(|_| r.bool()).collect::<Result<Vec<_>, _>>()?;
    Ok(NormStats { mean, std, frozen })
}

fn write_table(w: &mut Writer, table: &EmbeddingTable) {
    w.u32(table.d_task as u32);
    w.u32(table.d_mod as u32);
    w.u32(table.d_target as u32);
    let dump = |w: &mut Writer, vecs: &[Vec<f64>]| {
        w.u32(vecs.len() as u32);
        for v in vecs {
            w.f64_slice(v);
        }
    };
    dump(w, &table.task_vecs);
    dump(w, &table.mod_vecs);
    dump(w, &table.target_vecs);
    w.u32(table.trained_modifiers.len() as u32);
    for m in &table.trained_modifiers {
        w.u8(ForceModifier::ALL.iter().position(|x| x == m).unwrap() as u8);
    }
}

fn read_table(r: &mut Reader) -> Result<EmbeddingTable, DataError> {
    let d_task = r.u32()? as usize;
    let d_mod = r.u32()? as usize;
    let d_target = r.u32()? as usize;
    let load = |r: &mut Reader| -> Result<Vec<Vec<f64>>, DataError> {
        let n = r.u32()? as usize;
        (0..n).map(|_| r.f64_vec()).collect()
    };
    let task_vecs = load(r)?;
    let mod_vecs = load(r)?;
    let target_vecs = load(r)?;
    let n = r.u32()? as usize;
    let trained_modifiers = (0..n)
        .map(|_| {
            let tag = r.u8()? as usize;
            ForceModifier::ALL
                .get(tag)
                .copied()
                .ok_or_else(|| DataError::Corrupt(format!("bad modifier tag {tag}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingTable {
        d_task,
        d_mod,
        d_target,
        task_vecs,
        mod_vecs,
        target_vecs,
        trained_modifiers,
    })
}

pub fn save_policy(policy: &Policy, path: &Path) -> Result<(), DataError> {
    let header = serde_json::json!({
        "config_hash": policy.config_hash,
        "data_hash": policy.data_hash,
        "config": policy.config,
    });
    let mut params = Writer::new();
    write_mlp(&mut params, &policy.net);
    let mut tactile = Writer::new();
    write_mlp(&mut tactile, &policy.tactile_encoder.net);
    let mut embed = Writer::new();
    write_table(&mut embed, &policy.embeddings);
    let mut norms = Writer::new();
    write_norm(&mut norms, &policy.action_norm);
    write_norm(&mut norms, &policy.obs_norm);
    write_container(
        path,
        MODEL_KIND,
        MODEL_VERSION,
        &header,
        &[
            ("net", params.into_bytes()),
            ("tactile", tactile.into_bytes()),
            ("embed", embed.into_bytes()),
            ("norms", norms.into_bytes()),
        ],
    )
}

/// Loads a policy. When `expected_hash` is given, the embedded config hash
/// must match it exactly.
pub fn load_policy(path: &Path, expected_hash: Option<&str>) -> Result<Policy, DataError> {
    let c = read_container(path, MODEL_KIND, MODEL_VERSION)?;
    let config_hash = c.header["config_hash"]
        .as_str()
        .ok_or_else(|| DataError::Corrupt("missing config_hash".into()))?
        .to_string();
    if let Some(expected) = expected_hash {
        if config_hash != expected {
            return Err(DataError::ConfigHashMismatch {
                found: config_hash,
                expected: expected.to_string(),
            });
        }
    }
    let data_hash = c.header["data_hash"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let config: PolicyConfig = serde_json::from_value(c.header["config"].clone())?;

    let net = read_mlp(&mut Reader::new(c.block("net")?))?;
    let tactile_net = read_mlp(&mut Reader::new(c.block("tactile")?))?;
    let embeddings = read_table(&mut Reader::new(c.block("embed")?))?;
    let mut norm_reader = Reader::new(c.block("norms")?);
    let action_norm = read_norm(&mut norm_reader)?;
    let obs_norm = read_norm(&mut norm_reader)?;

    Ok(Policy {
        tactile_encoder: TactileEncoder {
            net: tactile_net,
            history: config.history,
        },
        config,
        net,
        embeddings,
        action_norm,
        obs_norm,
        config_hash,
        data_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_policy() -> Policy {
        let config = PolicyConfig {
            history: 2,
            d_obs: 4,
            d_lang: 6,
            d_tac: 3,
            n_chunk: 2,
            hidden: vec![12],
            ..PolicyConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = config.action_dim() + 1 + config.context_dim();
        let net = Mlp::new(&[input, 12, config.action_dim()], &mut rng);
        let mut embeddings = EmbeddingTable::new(config.d_lang, 4);
        embeddings.set_trained(vec![ForceModifier::Softly, ForceModifier::Hard]);
        Policy {
            tactile_encoder: TactileEncoder::new(config.history, config.d_tac, 9),
            embeddings,
            action_norm: NormStats {
                mean: vec![0.5; config.action_dim()],
                std: vec![2.0; config.action_dim()],
                frozen: vec![false; config.action_dim()],
            },
            obs_norm: NormStats {
                mean: vec![0.0; config.d_obs],
                std: vec![1.0; config.d_obs],
                frozen: vec![true; config.d_obs],
            },
            config_hash: crate::config::config_hash(&config),
            data_hash: "dh".into(),
            config,
            net,
        }
    }

    #[test]
    fn model_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let policy = small_policy();
        save_policy(&policy, &path).unwrap();
        let back = load_policy(&path, Some(&policy.config_hash)).unwrap();
        assert_eq!(back, policy);
    }

    #[test]
    fn hash_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        let policy = small_policy();
        save_policy(&policy, &path).unwrap();
        let err = load_policy(&path, Some("0000000000000000")).unwrap_err();
        assert!(matches!(err, DataError::ConfigHashMismatch { .. }));
    }
}
