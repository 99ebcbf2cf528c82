//! Weight-shared tokens-to-token transformer backbone.
//!
//! RGB and depth images are stacked on the batch axis and pass through one
//! backbone. Rows `0..B` of every output are RGB and rows `B..2B` are depth.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Var, Window};
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder, ParamId, Session};
use crate::tensor::Tensor;

use super::attention::{AttentionConfig, TokenTransformer, TransformerLayer};
use super::tokens::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoftSplit {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl SoftSplit {
    pub const fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
        }
    }

    fn window(self) -> Window {
        Window::new(self.kernel, self.stride, self.padding)
    }

    pub fn output_side(self, side: usize) -> Option<usize> {
        self.window().output_extent(side)
    }
}

pub const SOFT_SPLITS: [SoftSplit; 3] = [SoftSplit::new(7, 4, 2), SoftSplit::new(3, 2, 1), SoftSplit::new(3, 2, 1)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub splits: [SoftSplit; 3],
    /// Width of the tokens-to-token stages.
    pub token_dim: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// One backbone shared by both modalities; `false` builds one per modality.
    pub siamese: bool,
}

impl EncoderConfig {
    /// T2T-ViT-t-14 at 224×224.
    pub fn full() -> Self {
        Self {
            image_size: 224,
            splits: SOFT_SPLITS,
            token_dim: 64,
            embed_dim: 384,
            depth: 14,
            heads: 6,
            ffn_hidden: 3 * 384,
            siamese: true,
        }
    }

    pub fn desk() -> Self {
        Self {
            image_size: 64,
            token_dim: 32,
            embed_dim: 384,
            depth: 2,
            heads: 6,
            ffn_hidden: 3 * 384,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return Err(Error::Usage(format!("input size {} is not a positive multiple of 16", self.image_size)));
        }
        AttentionConfig::new(self.embed_dim, self.heads)?;
        let grids = self.grids()?;
        if grids[2] != self.image_size / 16 {
            return Err(Error::Usage(format!(
                "soft splits give a {0}×{0} top grid, expected {1}×{1}",
                grids[2],
                self.image_size / 16
            )));
        }
        Ok(())
    }

    /// Token-grid side after each soft split.
    pub fn grids(&self) -> Result<[usize; 3]> {
        let mut side = self.image_size;
        let mut out = [0; 3];
        for (i, split) in self.splits.iter().enumerate() {
            side = split
                .output_side(side)
                .ok_or_else(|| Error::Usage(format!("soft split {i} does not fit a {side}×{side} input")))?;
            out[i] = side;
        }
        Ok(out)
    }

    pub fn top_tokens(&self) -> usize {
        let g = self.image_size / 16;
        g * g
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        Ok(AttentionConfig::new(self.embed_dim, self.heads)?
            .with_ffn_hidden(self.ffn_hidden)
            .with_qkv_bias(false))
    }
}

/// Everything the encoder hands on, for all `2B` rows.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput<'t> {
    /// Side feature after the first token transformer, grid `S/4`, width `c`.
    pub f1: TokenSequence<'t>,
    /// Side feature after the second token transformer, grid `S/8`, width `c`.
    pub f2: TokenSequence<'t>,
    /// Top spatial tokens, grid `S/16`, width `D`.
    pub top: TokenSequence<'t>,
    /// `(2B, D)`
    pub class_token: Var<'t>,
    /// Images per modality.
    pub batch: usize,
}

impl<'t> EncoderOutput<'t> {
    pub fn rgb_top(&self) -> Result<TokenSequence<'t>> {
        self.top.rows(0, self.batch)
    }

    pub fn depth_top(&self) -> Result<TokenSequence<'t>> {
        self.top.rows(self.batch, 2 * self.batch)
    }

    pub fn depth_class_token(&self) -> Result<Var<'t>> {
        self.class_token.slice(0, self.batch, 2 * self.batch)
    }

    pub fn rgb_sides(&self) -> Result<(TokenSequence<'t>, TokenSequence<'t>)> {
        Ok((self.f1.rows(0, self.batch)?, self.f2.rows(0, self.batch)?))
    }
}

/// One tokens-to-token backbone.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub cfg: EncoderConfig,
    pub t2t1: TokenTransformer,
    pub t2t2: TokenTransformer,
    pub project: Linear,
    pub class_token: ParamId,
    pub pos_embed: ParamId,
    pub blocks: Vec<TransformerLayer>,
    pub norm: LayerNorm,
}

/// Intermediate results of a backbone pass over any batch.
#[derive(Debug, Clone, Copy)]
pub struct BackboneOutput<'t> {
    pub f1: TokenSequence<'t>,
    pub f2: TokenSequence<'t>,
    pub top: TokenSequence<'t>,
    pub class_token: Var<'t>,
}

fn soft_split<'t>(x: Var<'t>, split: SoftSplit) -> Result<Var<'t>> {
    x.unfold(split.window())
}

impl Backbone {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut pb = pb.scope(name);
        let c = cfg.token_dim;
        let k0 = cfg.splits[0].kernel;
        let k1 = cfg.splits[1].kernel;
        let k2 = cfg.splits[2].kernel;
        let att = cfg.attention()?;
        let t2t1 = TokenTransformer::new(&mut pb, "t2t1", 3 * k0 * k0, c);
        let t2t2 = TokenTransformer::new(&mut pb, "t2t2", c * k1 * k1, c);
        let project = Linear::new(&mut pb, "project", c * k2 * k2, cfg.embed_dim, true);
        let class_token = pb.trainable("cls_token", Tensor::zeros(&[1, 1, cfg.embed_dim]));
        let pos_embed = pb.trainable("pos_embed", Tensor::zeros(&[cfg.top_tokens() + 1, cfg.embed_dim]));
        let blocks = (0..cfg.depth)
            .map(|i| TransformerLayer::new(&mut pb, &format!("blocks.{i}"), att))
            .collect();
        let norm = LayerNorm::new(&mut pb, "norm", cfg.embed_dim);
        Ok(Self {
            cfg: cfg.clone(),
            t2t1,
            t2t2,
            project,
            class_token,
            pos_embed,
            blocks,
            norm,
        })
    }

    /// Forward over `(n, 3, S, S)` images.
    pub fn forward<'t>(&self, s: &Session<'t, '_>, images: Var<'t>) -> Result<BackboneOutput<'t>> {
        let shape = images.shape();
        let size = self.cfg.image_size;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != size || shape[3] != size {
            return Err(Error::dim("encoder", &shape, &[0, 3, size, size]));
        }
        let n = shape[0];
        if n == 0 {
            return Err(Error::Usage("empty batch".into()));
        }
        let grids = self.cfg.grids()?;

        let tokens = soft_split(images, self.cfg.splits[0])?;
        debug_assert_eq!(tokens.shape()[1], grids[0] * grids[0]);
        let f1 = TokenSequence::spatial(self.t2t1.forward(s, tokens)?);

        let tokens = soft_split(f1.to_feature_map()?, self.cfg.splits[1])?;
        debug_assert_eq!(tokens.shape()[1], grids[1] * grids[1]);
        let f2 = TokenSequence::spatial(self.t2t2.forward(s, tokens)?);

        let tokens = soft_split(f2.to_feature_map()?, self.cfg.splits[2])?;
        debug_assert_eq!(tokens.shape()[1], grids[2] * grids[2]);
        let tokens = self.project.forward(s, tokens)?;

        let cls = s.param(self.class_token).expand_axis(0, n)?;
        let mut x = Var::concat(&[cls, tokens], 1)?.add(s.param(self.pos_embed))?;
        for block in &self.blocks {
            x = block.forward(s, x)?;
        }
        let x = self.norm.forward(s, x)?;
        let (class_token, top) = TokenSequence::with_class_token(x)?.split_class_token()?;
        Ok(BackboneOutput {
            f1,
            f2,
            top,
            class_token,
        })
    }
}

/// The Siamese encoder (or its two-stream ablation).
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub backbones: Vec<Backbone>,
}

impl Encoder {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &EncoderConfig) -> Result<Self> {
        let backbones = if cfg.siamese {
            vec![Backbone::new(pb, "encoder", cfg)?]
        } else {
            vec![
                Backbone::new(pb, "encoder_rgb", cfg)?,
                Backbone::new(pb, "encoder_depth", cfg)?,
            ]
        };
        Ok(Self {
            cfg: cfg.clone(),
            backbones,
        })
    }

    /// `rgb` and `depth3` are `(B, 3, S, S)`; depth already replicated to three channels.
    pub fn forward<'t>(&self, s: &Session<'t, '_>, rgb: Var<'t>, depth3: Var<'t>) -> Result<EncoderOutput<'t>> {
        if rgb.shape() != depth3.shape() {
            return Err(Error::dim("encoder", &rgb.shape(), &depth3.shape()));
        }
        let batch = rgb.shape()[0];
        let out = match self.backbones.as_slice() {
            [shared] => shared.forward(s, Var::concat(&[rgb, depth3], 0)?)?,
            [rgb_net, depth_net] => {
                let r = rgb_net.forward(s, rgb)?;
                let d = depth_net.forward(s, depth3)?;
                let cat = |a: TokenSequence<'t>, b: TokenSequence<'t>| -> Result<TokenSequence<'t>> {
                    Ok(TokenSequence::spatial(Var::concat(&[a.data, b.data], 0)?))
                };
                BackboneOutput {
                    f1: cat(r.f1, d.f1)?,
                    f2: cat(r.f2, d.f2)?,
                    top: cat(r.top, d.top)?,
                    class_token: Var::concat(&[r.class_token, d.class_token], 0)?,
                }
            }
            _ => unreachable!("encoder holds one or two backbones"),
        };
        Ok(EncoderOutput {
            f1: out.f1,
            f2: out.f2,
            top: out.top,
            class_token: out.class_token,
            batch,
        })
    }
}

/// Single logit per row from the class token; label 1 means usable depth.
#[derive(Debug, Clone)]
pub struct ClassHead {
    pub fc: Linear,
}

impl ClassHead {
    pub fn new(pb: &mut ParamBuilder<'_>, dim: usize) -> Self {
        Self {
            fc: Linear::new(pb, "class_head", dim, 1, true),
        }
    }

    /// `(B, D) → (B,)`
    pub fn forward<'t>(&self, s: &Session<'t, '_>, class_token: Var<'t>) -> Result<Var<'t>> {
        let b = class_token.shape()[0];
        self.fc.forward(s, class_token)?.reshape(&[b])
    }
}

/// Per-token linear map to one channel, upsampled to the input size.
#[derive(Debug, Clone)]
pub struct RoughHead {
    pub fc: Linear,
}

impl RoughHead {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Self {
        Self {
            fc: Linear::new(pb, name, dim, 1, true),
        }
    }

    /// Saliency map `(B, 1, size, size)` in `[0, 1]`.
    pub fn forward<'t>(&self, s: &Session<'t, '_>, tokens: TokenSequence<'t>, size: usize) -> Result<Var<'t>> {
        if tokens.class_token {
            return Err(Error::Usage("rough head needs spatial tokens only".into()));
        }
        let logits = TokenSequence::spatial(self.fc.forward(s, tokens.data)?).to_feature_map()?;
        Ok(logits.upsample_bilinear(size, size)?.sigmoid())
    }
}
