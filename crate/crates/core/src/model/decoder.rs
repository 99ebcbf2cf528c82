//! Convolutional decoder with RGB side-feature injection and adaptive fusion
//! of the three block outputs.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnRelu, ParamBuilder, Session};

use super::tokens::TokenSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub image_size: usize,
    /// Channel width of the fused tokens.
    pub in_dim: usize,
    /// Channel width of the encoder side features.
    pub side_dim: usize,
    pub widths: [usize; 3],
    /// Off replaces adaptive fusion with a head on the last block.
    pub adaptive_fusion: bool,
}

impl DecoderConfig {
    pub fn full() -> Self {
        Self {
            image_size: 224,
            in_dim: 64,
            side_dim: 64,
            widths: [64; 3],
            adaptive_fusion: true,
        }
    }
}

/// Two conv3×3-BN-ReLU stages.
#[derive(Debug, Clone)]
pub struct DoubleConv {
    pub first: ConvBnRelu,
    pub second: ConvBnRelu,
}

impl DoubleConv {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        let mut pb = pb.scope(name);
        Self {
            first: ConvBnRelu::new(&mut pb, "0", in_ch, out_ch),
            second: ConvBnRelu::new(&mut pb, "1", out_ch, out_ch),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let y = self.first.forward(s, x)?;
        self.second.forward(s, y)
    }
}

/// `sigmoid(conv1×1([max_c α, mean_c α]))`, a one-channel spatial map.
#[derive(Debug, Clone)]
pub struct SpatialAttention {
    pub conv: Conv2d,
}

impl SpatialAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str) -> Self {
        Self {
            conv: Conv2d::new(pb, name, 2, 1, 1, 0),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, alpha: Var<'t>) -> Result<Var<'t>> {
        let pooled = Var::concat(&[alpha.max_axis(1)?, alpha.mean_axis(1)?], 1)?;
        Ok(self.conv.forward(s, pooled)?.sigmoid())
    }
}

/// Concatenates the block outputs at the fusion resolution, reduces them with
/// a conv, reweights by spatial attention and refines with another conv.
#[derive(Debug, Clone)]
pub struct AdaptiveFusion {
    pub attention: SpatialAttention,
    pub reduce: ConvBnRelu,
    pub refine: ConvBnRelu,
}

impl AdaptiveFusion {
    pub fn new(pb: &mut ParamBuilder<'_>, in_ch: usize, out_ch: usize) -> Self {
        let mut pb = pb.scope("fusion");
        Self {
            attention: SpatialAttention::new(&mut pb, "attention"),
            reduce: ConvBnRelu::new(&mut pb, "reduce", in_ch, out_ch),
            refine: ConvBnRelu::new(&mut pb, "refine", out_ch, out_ch),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, features: &[Var<'t>], side: usize) -> Result<Var<'t>> {
        let up = features
            .iter()
            .map(|f| f.upsample_bilinear(side, side))
            .collect::<Result<Vec<_>>>()?;
        for f in &up {
            if f.shape()[2..] != [side, side] {
                return Err(Error::dim("adaptive_fusion", &f.shape(), &[side, side]));
            }
        }
        let alpha = Var::concat(&up, 1)?;
        let nu = self.attention.forward(s, alpha)?;
        let theta = self.reduce.forward(s, alpha)?;
        let weighted = theta.mul(nu.expand_axis(1, theta.shape()[1])?)?;
        self.refine.forward(s, weighted)
    }
}

/// conv3×3 to one channel, upsampled to the input size, squashed to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct MapHead {
    pub conv: Conv2d,
}

impl MapHead {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_ch: usize) -> Self {
        Self {
            conv: Conv2d::new(pb, name, in_ch, 1, 3, 1),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>, size: usize) -> Result<Var<'t>> {
        Ok(self.conv.forward(s, x)?.upsample_bilinear(size, size)?.sigmoid())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderOutput<'t> {
    /// Block outputs at `S/8`, `S/4` and `S/2`.
    pub blocks: [Var<'t>; 3],
    /// Fused feature at `S/2`; absent with adaptive fusion switched off.
    pub fused: Option<Var<'t>>,
    pub final_map: Var<'t>,
    /// Deep-supervision maps from the three blocks.
    pub side_maps: [Var<'t>; 3],
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    pub blocks: [DoubleConv; 3],
    pub side_proj: [Conv2d; 2],
    pub fusion: Option<AdaptiveFusion>,
    pub head: MapHead,
    pub side_heads: [MapHead; 3],
}

impl Decoder {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &DecoderConfig) -> Self {
        let mut pb = pb.scope("decoder");
        let [w1, w2, w3] = cfg.widths;
        let blocks = [
            DoubleConv::new(&mut pb, "block1", cfg.in_dim, w1),
            DoubleConv::new(&mut pb, "block2", w1, w2),
            DoubleConv::new(&mut pb, "block3", w2, w3),
        ];
        let side_proj = [
            Conv2d::new(&mut pb, "side2", cfg.side_dim, w1, 1, 0),
            Conv2d::new(&mut pb, "side1", cfg.side_dim, w2, 1, 0),
        ];
        let fusion = cfg.adaptive_fusion.then(|| AdaptiveFusion::new(&mut pb, w1 + w2 + w3, w3));
        let head = MapHead::new(&mut pb, "head", w3);
        let side_heads = [
            MapHead::new(&mut pb, "side_head1", w1),
            MapHead::new(&mut pb, "side_head2", w2),
            MapHead::new(&mut pb, "side_head3", w3),
        ];
        Self {
            cfg: cfg.clone(),
            blocks,
            side_proj,
            fusion,
            head,
            side_heads,
        }
    }

    /// `fused` holds `(B, N, in_dim)` tokens on an `S/16` grid; `side1` and
    /// `side2` are the RGB side features on the `S/4` and `S/8` grids.
    pub fn forward<'t>(
        &self,
        s: &Session<'t, '_>,
        fused: TokenSequence<'t>,
        side1: TokenSequence<'t>,
        side2: TokenSequence<'t>,
    ) -> Result<DecoderOutput<'t>> {
        let size = self.cfg.image_size;
        let x = fused.to_feature_map()?;
        let (f1, f2) = (side1.to_feature_map()?, side2.to_feature_map()?);
        let up2 = |v: Var<'t>| {
            let sh = v.shape();
            v.upsample_bilinear(2 * sh[2], 2 * sh[3])
        };
        let check = |v: &Var<'t>, side: usize| {
            let sh = v.shape();
            if sh[2] != side || sh[3] != side {
                return Err(Error::dim("decoder", &sh, &[side, side]));
            }
            Ok(())
        };
        check(&x, size / 16)?;
        check(&f2, size / 8)?;
        check(&f1, size / 4)?;

        let d1 = self.blocks[0]
            .forward(s, up2(x)?)?
            .add(self.side_proj[0].forward(s, f2)?)?;
        let d2 = self.blocks[1]
            .forward(s, up2(d1)?)?
            .add(self.side_proj[1].forward(s, f1)?)?;
        let d3 = self.blocks[2].forward(s, up2(d2)?)?;

        let fused = match &self.fusion {
            Some(f) => Some(f.forward(s, &[d1, d2, d3], size / 2)?),
            None => None,
        };
        let final_map = self.head.forward(s, fused.unwrap_or(d3), size)?;
        let side_maps = [
            self.side_heads[0].forward(s, d1, size)?,
            self.side_heads[1].forward(s, d2, size)?,
            self.side_heads[2].forward(s, d3, size)?,
        ];
        Ok(DecoderOutput {
            blocks: [d1, d2, d3],
            fused,
            final_map,
            side_maps,
        })
    }
}
