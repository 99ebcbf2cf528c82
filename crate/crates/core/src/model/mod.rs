//! The network: encoder, cross-modality fusion, decoder and their assembly.

pub mod attention;
pub mod cmf;
pub mod decoder;
pub mod encoder;
pub mod tokens;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{ParamBuilder, Session};
use crate::quality::quality_gate;

pub use cmf::{Cmf, CmfConfig, FusionMode};
pub use decoder::{Decoder, DecoderConfig};
pub use encoder::{ClassHead, Encoder, EncoderConfig, RoughHead};
pub use tokens::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub cmf: CmfConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// The published configuration at 224×224.
    pub fn full() -> Self {
        Self {
            encoder: EncoderConfig::full(),
            cmf: CmfConfig::full(),
            decoder: DecoderConfig::full(),
        }
    }

    /// Small configuration for CPU experiments at 64×64.
    pub fn desk() -> Self {
        let encoder = EncoderConfig::desk();
        let cmf = CmfConfig {
            in_dim: encoder.embed_dim,
            dim: 128,
            heads: 2,
            ffn_hidden: 4 * 128,
            ..CmfConfig::full()
        };
        let decoder = DecoderConfig {
            image_size: encoder.image_size,
            in_dim: cmf.dim,
            side_dim: encoder.token_dim,
            widths: [64; 3],
            adaptive_fusion: true,
        };
        Self { encoder, cmf, decoder }
    }

    /// Same architecture at another input size.
    pub fn with_image_size(mut self, size: usize) -> Self {
        self.encoder.image_size = size;
        self.decoder.image_size = size;
        self
    }

    pub fn image_size(&self) -> usize {
        self.encoder.image_size
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.cmf.attention()?;
        let mismatch = |what: &str, a: usize, b: usize| Err(Error::Usage(format!("{what}: {a} vs {b}")));
        if self.cmf.in_dim != self.encoder.embed_dim {
            return mismatch("fusion input width and encoder width differ", self.cmf.in_dim, self.encoder.embed_dim);
        }
        if self.decoder.in_dim != self.cmf.dim {
            return mismatch("decoder input width and fusion width differ", self.decoder.in_dim, self.cmf.dim);
        }
        if self.decoder.side_dim != self.encoder.token_dim {
            return mismatch("decoder side width and token width differ", self.decoder.side_dim, self.encoder.token_dim);
        }
        if self.decoder.image_size != self.encoder.image_size {
            return mismatch("decoder and encoder sizes differ", self.decoder.image_size, self.encoder.image_size);
        }
        Ok(())
    }
}

/// How the fusion stage chooses its second stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum FusionPolicy {
    /// Always fuse with depth (training).
    Cross,
    /// Always enhance RGB with itself.
    SelfEnhance,
    /// Per image, by the depth-quality gate.
    Gated,
}

/// All outputs of one forward pass. Maps are `(B, 1, S, S)`.
#[derive(Debug, Clone)]
pub struct Prediction<'t> {
    pub t_rgb: Var<'t>,
    pub t_depth: Var<'t>,
    pub t_rgbd: Var<'t>,
    /// Maps from the three decoder blocks.
    pub side_maps: [Var<'t>; 3],
    pub final_map: Var<'t>,
    /// `(B,)`, depth-quality logit; positive means usable depth.
    pub class_logit: Var<'t>,
    pub modes: Vec<FusionMode>,
}

impl<'t> Prediction<'t> {
    /// The seven supervised maps in loss order.
    pub fn supervised_maps(&self) -> [Var<'t>; 7] {
        [
            self.t_rgb,
            self.t_depth,
            self.t_rgbd,
            self.side_maps[0],
            self.side_maps[1],
            self.side_maps[2],
            self.final_map,
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SiaTrans {
    pub cfg: ModelConfig,
    pub encoder: Encoder,
    pub class_head: ClassHead,
    /// Shared by the RGB and depth top tokens.
    pub rough_head: RoughHead,
    pub fused_head: RoughHead,
    pub cmf: Cmf,
    pub decoder: Decoder,
}

impl SiaTrans {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(pb, &cfg.encoder)?;
        let class_head = ClassHead::new(pb, cfg.encoder.embed_dim);
        let rough_head = RoughHead::new(pb, "rough_head", cfg.encoder.embed_dim);
        let cmf = Cmf::new(pb, &cfg.cmf)?;
        let fused_head = RoughHead::new(pb, "fused_head", cfg.cmf.dim);
        let decoder = Decoder::new(pb, &cfg.decoder);
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            class_head,
            rough_head,
            fused_head,
            cmf,
            decoder,
        })
    }

    /// `rgb` and `depth3` are standardized `(B, 3, S, S)` batches.
    pub fn forward<'t>(
        &self,
        s: &Session<'t, '_>,
        rgb: Var<'t>,
        depth3: Var<'t>,
        policy: FusionPolicy,
    ) -> Result<Prediction<'t>> {
        let size = self.cfg.image_size();
        let enc = self.encoder.forward(s, rgb, depth3)?;
        let b = enc.batch;
        let (rgb_top, depth_top) = (enc.rgb_top()?, enc.depth_top()?);
        let t_rgb = self.rough_head.forward(s, rgb_top, size)?;
        let t_depth = self.rough_head.forward(s, depth_top, size)?;
        let class_logit = self.class_head.forward(s, enc.depth_class_token()?)?;

        let modes = match policy {
            FusionPolicy::Cross => vec![FusionMode::Cross; b],
            FusionPolicy::SelfEnhance => vec![FusionMode::SelfEnhance; b],
            FusionPolicy::Gated => {
                let (logits, r, d) = (class_logit.value(), t_rgb.value(), t_depth.value());
                (0..b)
                    .map(|i| {
                        let prob = crate::autodiff::sigmoid(logits.data()[i]);
                        let (ri, di) = (r.narrow_rows(i, i + 1)?, d.narrow_rows(i, i + 1)?);
                        quality_gate(prob, &ri, &di)
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let fused = if modes.iter().all(|m| *m == FusionMode::SelfEnhance) {
            self.cmf.forward(s, rgb_top, None, FusionMode::SelfEnhance)?
        } else if modes.iter().all(|m| *m == FusionMode::Cross) {
            self.cmf.forward(s, rgb_top, Some(depth_top), FusionMode::Cross)?
        } else {
            // Rows are independent inside the fusion stage, so gated rows take
            // their own RGB tokens as the second stream.
            let rows = (0..b)
                .map(|i| match modes[i] {
                    FusionMode::Cross => depth_top.data.slice(0, i, i + 1),
                    FusionMode::SelfEnhance => rgb_top.data.slice(0, i, i + 1),
                })
                .collect::<Result<Vec<_>>>()?;
            let second = TokenSequence::spatial(Var::concat(&rows, 0)?);
            self.cmf.forward(s, rgb_top, Some(second), FusionMode::Cross)?
        };
        let t_rgbd = self.fused_head.forward(s, fused, size)?;
        let (side1, side2) = enc.rgb_sides()?;
        let dec = self.decoder.forward(s, fused, side1, side2)?;
        Ok(Prediction {
            t_rgb,
            t_depth,
            t_rgbd,
            side_maps: dec.side_maps,
            final_map: dec.final_map,
            class_logit,
            modes,
        })
    }
}
