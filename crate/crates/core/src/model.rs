//! The stage-two forecast model: backbone plus both prediction heads, with
//! checkpoint persistence.

use std::path::Path;

use serde::{Deserialize, Serialize};

use omnicast_tensor::rng::RngPool;
use omnicast_tensor::Tensor;

use crate::backbone::{Backbone, BackboneConfig};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::heads::{DeterministicHead, DiffusionHead, DiffusionHeadConfig, NoiseSchedule, NoiseScheduleConfig};
use crate::vae::train::LatentScale;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: DiffusionHeadConfig,
    pub schedule: NoiseScheduleConfig,
    pub deter_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            head: DiffusionHeadConfig::default(),
            schedule: NoiseScheduleConfig::default(),
            deter_hidden: 256,
        }
    }
}

/// Latent grid geometry the model was built for.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub struct LatentDims {
    pub frames: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentDims {
    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn future_tokens(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }
}

pub struct ForecastModel {
    pub config: ModelConfig,
    pub dims: LatentDims,
    pub latent_scale: LatentScale,
    pub backbone: Backbone,
    pub diffusion_head: DiffusionHead,
    pub deter_head: DeterministicHead,
    pub schedule: NoiseSchedule,
}

impl ForecastModel {
    pub fn new(config: &ModelConfig, dims: LatentDims, latent_scale: LatentScale, pool: &RngPool) -> Result<Self> {
        let schedule = NoiseSchedule::linear(&config.schedule)?;
        let backbone = Backbone::new(
            &config.backbone,
            dims.dim,
            dims.frames,
            dims.height,
            dims.width,
            &mut pool.stream("model/backbone_init"),
        );
        let diffusion_head = DiffusionHead::new(
            &config.head,
            dims.dim,
            config.backbone.width,
            &mut pool.stream("model/diff_head_init"),
        );
        let deter_head = DeterministicHead::new(
            config.backbone.width,
            config.deter_hidden,
            dims.dim,
            &mut pool.stream("model/deter_head_init"),
        );
        Ok(ForecastModel {
            config: config.clone(),
            dims,
            latent_scale,
            backbone,
            diffusion_head,
            deter_head,
            schedule,
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        let mut out = self.backbone.named_params();
        out.extend(self.diffusion_head.named_params());
        out.extend(self.deter_head.named_params());
        out
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let sidecar = serde_json::json!({
            "model_config": self.config,
            "dims": self.dims,
            "latent_scale": self.latent_scale,
        });
        checkpoint::save(dir, "model", &self.named_params(), sidecar)
    }

    pub fn load(dir: &Path, pool: &RngPool) -> Result<Self> {
        let (sidecar, tensors) = checkpoint::load(dir, "model")?;
        let config: ModelConfig = serde_json::from_value(
            sidecar.get("model_config").cloned().ok_or_else(|| {
                Error::Input("model sidecar missing `model_config`".into())
            })?,
        )
        .map_err(|e| Error::Input(format!("bad model config in checkpoint: {e}")))?;
        let dims: LatentDims = serde_json::from_value(
            sidecar.get("dims").cloned().ok_or_else(|| Error::Input("model sidecar missing `dims`".into()))?,
        )
        .map_err(|e| Error::Input(format!("bad dims in checkpoint: {e}")))?;
        let latent_scale: LatentScale = serde_json::from_value(
            sidecar
                .get("latent_scale")
                .cloned()
                .ok_or_else(|| Error::Input("model sidecar missing `latent_scale`".into()))?,
        )
        .map_err(|e| Error::Input(format!("bad latent scale in checkpoint: {e}")))?;
        let model = ForecastModel::new(&config, dims, latent_scale, pool)?;
        checkpoint::restore_params(&model.named_params(), &tensors, "model")?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_roundtrip() {
        let pool = RngPool::new(55);
        let config = ModelConfig {
            backbone: BackboneConfig { encoder_layers: 1, decoder_layers: 1, heads: 2, width: 8, dropout: 0.0 },
            head: DiffusionHeadConfig { blocks: 1, width: 8, time_embed_dim: 4 },
            schedule: NoiseScheduleConfig { train_steps: 10, inference_steps: 5, ..Default::default() },
            deter_hidden: 8,
        };
        let dims = LatentDims { frames: 2, dim: 3, height: 2, width: 2 };
        let model = ForecastModel::new(&config, dims, LatentScale { mean: 0.5, std: 2.0 }, &pool).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();

        let other_pool = RngPool::new(77);
        let loaded = ForecastModel::load(dir.path(), &other_pool).unwrap();
        assert_eq!(loaded.dims, dims);
        assert_eq!(loaded.latent_scale, LatentScale { mean: 0.5, std: 2.0 });
        for ((n1, t1), (n2, t2)) in model.named_params().iter().zip(loaded.named_params().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(*t1.data(), *t2.data(), "tensor {n1} differs after reload");
        }
    }
}
