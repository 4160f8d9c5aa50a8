//! Checkpoint directory layout:
//!
//! - `model.kgp`: generator and discriminator parameters under
//!   `generator/` and `discriminator/` prefixes
//! - `optimizer.kgp`: Adam moments under the same prefixes
//! - `model.json`: architecture, mode, seed and optimizer step counts

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Conditioning, GanModel, Mode, Network, OptimizerState};
use crate::nn::{LayerSpec, ParameterSet};
use crate::{Error, Result};

pub const PARAMS_FILE: &str = "model.kgp";
pub const OPTIMIZER_FILE: &str = "optimizer.kgp";
pub const SIDECAR_FILE: &str = "model.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    mode: Mode,
    conditioning: Conditioning,
    image_size: usize,
    scale: f64,
    seed: u64,
    latent_dim: usize,
    optimizer_state: String,
    generator_steps: u64,
    discriminator_steps: u64,
    generator: Vec<LayerSpec>,
    discriminator: Vec<LayerSpec>,
}

pub fn save_checkpoint(model: &GanModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.parameters().save(&dir.join(PARAMS_FILE))?;

    let mut opt = ParameterSet::new(0);
    opt.extend_prefixed("generator/", &model.generator_opt.to_parameter_set());
    opt.extend_prefixed("discriminator/", &model.discriminator_opt.to_parameter_set());
    opt.save(&dir.join(OPTIMIZER_FILE))?;

    let sidecar = Sidecar {
        mode: model.mode,
        conditioning: model.conditioning,
        image_size: model.image_size,
        scale: model.scale,
        seed: model.seed,
        latent_dim: model.latent_dim,
        optimizer_state: OPTIMIZER_FILE.into(),
        generator_steps: model.generator_opt.step,
        discriminator_steps: model.discriminator_opt.step,
        generator: model.generator.layers.clone(),
        discriminator: model.discriminator.layers.clone(),
    };
    let path = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar)? + "\n";
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<GanModel> {
    let path = dir.join(SIDECAR_FILE);
    if !path.exists() {
        return Err(Error::MissingInput(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let side: Sidecar = serde_json::from_str(&text)?;

    let all = ParameterSet::load(&dir.join(PARAMS_FILE))?;
    let network = |prefix: &str, layers: Vec<LayerSpec>| -> Result<Network> {
        let params = all.strip_prefix(prefix);
        let expected = crate::nn::init_params(&layers, 0)?;
        for (name, t) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => {
                    return Err(Error::Parse {
                        offset: 0,
                        message: format!("checkpoint parameter {prefix}{name} missing or mis-shaped"),
                    })
                }
            }
        }
        if params.len() != expected.len() {
            return Err(Error::Parse {
                offset: 0,
                message: format!("checkpoint has unexpected {prefix} parameters"),
            });
        }
        Ok(Network { layers, params })
    };
    let mut generator = network("generator/", side.generator)?;
    let mut discriminator = network("discriminator/", side.discriminator)?;
    generator.params.set_init_seed(crate::rng::mix_seed(side.seed, 1));
    discriminator.params.set_init_seed(crate::rng::mix_seed(side.seed, 2));

    let opt = ParameterSet::load(&dir.join(&side.optimizer_state))?;
    Ok(GanModel {
        mode: side.mode,
        conditioning: side.conditioning,
        image_size: side.image_size,
        scale: side.scale,
        seed: side.seed,
        latent_dim: side.latent_dim,
        generator,
        discriminator,
        generator_opt: OptimizerState::from_parameter_set(&opt.strip_prefix("generator/"), side.generator_steps),
        discriminator_opt: OptimizerState::from_parameter_set(
            &opt.strip_prefix("discriminator/"),
            side.discriminator_steps,
        ),
    })
}
