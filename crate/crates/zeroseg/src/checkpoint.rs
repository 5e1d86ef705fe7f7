//! Checkpoint directories: parameters and optimizer moments as ZTFB bundles,
//! plus JSON metadata (step, RNG state, last losses) and a config snapshot.
//! Everything needed to resume a run bit-exactly.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zeroseg_core::model::{ParamSet, StepLosses};
use zeroseg_core::optim::AdamW;
use zeroseg_core::{Rng, Tensor};

use crate::config::RunConfig;
use crate::formats::{read_ztfb, write_ztfb, BundleEntry};

pub const PARAMS_FILE: &str = "params.ztfb";
pub const OPTIMIZER_FILE: &str = "optimizer.ztfb";
pub const META_FILE: &str = "meta.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossRecord {
    pub recon: f32,
    pub distill: f32,
    #[serde(rename = "match")]
    pub matching: f32,
    pub total: f32,
}

impl From<StepLosses> for LossRecord {
    fn from(l: StepLosses) -> Self {
        LossRecord { recon: l.recon, distill: l.distill, matching: l.matching, total: l.total }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    step: u64,
    opt_step: u64,
    rng_state: [u64; 4],
    last_losses: Option<LossRecord>,
}

pub struct Checkpoint {
    pub step: u64,
    pub params: ParamSet,
    pub optimizer: AdamW,
    pub rng: Rng,
    pub config: RunConfig,
    pub last_losses: Option<LossRecord>,
}

fn tensor_dims(t: &Tensor) -> Vec<u32> {
    t.shape().iter().map(|&d| d as u32).collect()
}

pub fn save(
    dir: &Path,
    step: u64,
    params: &ParamSet,
    optimizer: &AdamW,
    rng: &Rng,
    config: &RunConfig,
    last_losses: Option<StepLosses>,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let param_entries: Vec<BundleEntry> = params
        .iter()
        .map(|(name, t)| BundleEntry {
            name: name.to_string(),
            dims: tensor_dims(t),
            data: t.data().to_vec(),
        })
        .collect();
    write_ztfb(&dir.join(PARAMS_FILE), &param_entries)?;

    let (opt_step, m, v) = optimizer.state();
    let mut opt_entries = Vec::with_capacity(2 * m.len());
    for ((name, _), buf) in params.iter().zip(m) {
        opt_entries.push(BundleEntry {
            name: format!("m.{name}"),
            dims: vec![buf.len() as u32],
            data: buf.clone(),
        });
    }
    for ((name, _), buf) in params.iter().zip(v) {
        opt_entries.push(BundleEntry {
            name: format!("v.{name}"),
            dims: vec![buf.len() as u32],
            data: buf.clone(),
        });
    }
    write_ztfb(&dir.join(OPTIMIZER_FILE), &opt_entries)?;

    let meta = Meta {
        step,
        opt_step,
        rng_state: rng.state(),
        last_losses: last_losses.map(LossRecord::from),
    };
    fs::write(
        dir.join(META_FILE),
        serde_json::to_string_pretty(&meta).context("serializing meta")? + "\n",
    )?;
    fs::write(
        dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(config).context("serializing config snapshot")? + "\n",
    )?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let config: RunConfig = serde_json::from_str(
        &fs::read_to_string(dir.join(CONFIG_FILE))
            .with_context(|| format!("reading {}", dir.join(CONFIG_FILE).display()))?,
    )
    .context("parsing checkpoint config")?;
    let meta: Meta = serde_json::from_str(
        &fs::read_to_string(dir.join(META_FILE))
            .with_context(|| format!("reading {}", dir.join(META_FILE).display()))?,
    )
    .context("parsing checkpoint meta")?;

    let mut params = ParamSet::new();
    for entry in read_ztfb(&dir.join(PARAMS_FILE))? {
        let shape: Vec<usize> = entry.dims.iter().map(|&d| d as usize).collect();
        let tensor = Tensor::new(shape, entry.data)?.with_grad();
        params.insert(entry.name, tensor);
    }
    if params.is_empty() {
        bail!("checkpoint {} has no parameters", dir.display());
    }
    // which params train is a function of the config, not of the file
    zeroseg_core::model::apply_freeze_policy(&mut params, &config.model);

    let opt_entries = read_ztfb(&dir.join(OPTIMIZER_FILE))?;
    let (mut m, mut v) = (Vec::new(), Vec::new());
    if !opt_entries.is_empty() {
        if opt_entries.len() != 2 * params.len() {
            bail!(
                "optimizer bundle has {} buffers for {} parameters",
                opt_entries.len(),
                params.len()
            );
        }
        for (i, (name, t)) in params.iter().enumerate() {
            for (offset, prefix, out) in
                [(0, "m", &mut m), (params.len(), "v", &mut v)]
            {
                let entry = &opt_entries[i + offset];
                let want = format!("{prefix}.{name}");
                if entry.name != want {
                    bail!("optimizer bundle out of order: expected {want}, found {}", entry.name);
                }
                if entry.data.len() != t.numel() {
                    bail!("moment buffer {want} has {} values for {} elements", entry.data.len(), t.numel());
                }
                out.push(entry.data.clone());
            }
        }
    }
    let optimizer = AdamW::restore(config.train.adamw(), meta.opt_step, m, v);

    Ok(Checkpoint {
        step: meta.step,
        params,
        optimizer,
        rng: Rng::from_state(meta.rng_state),
        config,
        last_losses: meta.last_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;
    use zeroseg_core::model::init_params;

    fn small_state() -> (RunConfig, ParamSet, AdamW, Rng) {
        let mut config = RunConfig::default();
        config.model.backbone.image_size = 32;
        config.model.backbone.embed_dim = 32;
        config.model.backbone.encoder_layers = 1;
        config.model.backbone.decoder_layers = 1;
        config.model.backbone.decoder_dim = 16;
        config.model.seghead.layers = 3;
        config.model.seghead.grouping_after = (1, 2);
        config.model.seghead.stage_tokens = (8, 4);
        config.model.teacher_dim = 16;
        config.teacher.dim = 16;
        config.model.grids = vec![1, 2];
        let mut rng = Rng::seed_from_u64(7);
        let params = init_params(&config.model, &mut rng).unwrap();
        let opt = AdamW::new(config.train.adamw());
        (config, params, opt, rng)
    }

    #[test]
    fn save_load_round_trip_preserves_everything_bitwise() {
        let dir = tempdir().unwrap();
        let (config, params, opt, rng) = small_state();
        let losses = StepLosses { recon: 0.5, distill: 0.25, matching: 0.125, total: 0.875 };
        save(dir.path(), 42, &params, &opt, &rng, &config, Some(losses)).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.step, 42);
        assert_eq!(back.config, config);
        assert_eq!(back.rng.state(), rng.state());
        assert_eq!(back.last_losses.unwrap().total, 0.875);
        assert_eq!(back.params.len(), params.len());
        for ((na, ta), (nb, tb)) in params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb, "parameter order must be preserved");
            assert_eq!(ta.shape(), tb.shape());
            assert_eq!(
                ta.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                tb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert!(tb.requires_grad());
        }
    }

    #[test]
    fn two_saves_of_the_same_state_are_byte_identical() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        let (config, params, opt, rng) = small_state();
        save(a.path(), 1, &params, &opt, &rng, &config, None).unwrap();
        save(b.path(), 1, &params, &opt, &rng, &config, None).unwrap();
        for file in [PARAMS_FILE, OPTIMIZER_FILE, META_FILE, CONFIG_FILE] {
            assert_eq!(
                fs::read(a.path().join(file)).unwrap(),
                fs::read(b.path().join(file)).unwrap(),
                "{file} differs between identical saves"
            );
        }
    }

    #[test]
    fn optimizer_moments_survive_the_round_trip() {
        let dir = tempdir().unwrap();
        let (config, mut params, mut opt, rng) = small_state();
        // run one real update so the moment buffers are non-trivial
        for (_, t) in params.entries_mut().iter_mut() {
            let g = vec![0.01; t.numel()];
            t.accumulate_grad(&g);
        }
        opt.step(params.entries_mut(), 1e-3).unwrap();
        save(dir.path(), 1, &params, &opt, &rng, &config, None).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.optimizer.step_count(), 1);
        let (_, m_old, v_old) = opt.state();
        let (_, m_new, v_new) = back.optimizer.state();
        assert_eq!(m_old, m_new);
        assert_eq!(v_old, v_new);
    }

    #[test]
    fn fresh_optimizer_round_trips_as_empty() {
        let dir = tempdir().unwrap();
        let (config, params, opt, rng) = small_state();
        save(dir.path(), 0, &params, &opt, &rng, &config, None).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.optimizer.step_count(), 0);
        let (_, m, v) = back.optimizer.state();
        assert!(m.is_empty() && v.is_empty());
    }

    #[test]
    fn corrupt_optimizer_bundle_is_rejected() {
        let dir = tempdir().unwrap();
        let (config, params, opt, rng) = small_state();
        save(dir.path(), 0, &params, &opt, &rng, &config, None).unwrap();
        // one bogus entry: neither empty nor 2·n_params
        write_ztfb(
            &dir.path().join(OPTIMIZER_FILE),
            &[BundleEntry { name: "m.enc.w".into(), dims: vec![1], data: vec![0.0] }],
        )
        .unwrap();
        assert!(load(dir.path()).is_err());
    }
}
