//! Cross-modality fusion: shared projection to a narrow width, interactive
//! attention between the two streams, additive merge and two enhancement layers.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{Linear, ParamBuilder, Session};

use super::attention::{AttentionConfig, InteractiveAttention, TransformerLayer};
use super::tokens::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// RGB and depth streams.
    Cross,
    /// The RGB stream fed to both inputs.
    #[serde(rename = "self")]
    SelfEnhance,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Cross => "CROSS",
            FusionMode::SelfEnhance => "SELF",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CmfConfig {
    pub in_dim: usize,
    pub dim: usize,
    pub interactive_layers: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Exchange keys and values between streams; off gives per-stream self-attention.
    pub exchange_kv: bool,
}

impl CmfConfig {
    pub fn full() -> Self {
        Self {
            in_dim: 384,
            dim: 64,
            interactive_layers: 2,
            transformer_layers: 2,
            heads: 1,
            ffn_hidden: 5 * 64,
            exchange_kv: true,
        }
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        Ok(AttentionConfig::new(self.dim, self.heads)?.with_ffn_hidden(self.ffn_hidden))
    }
}

#[derive(Debug, Clone)]
pub struct Cmf {
    pub cfg: CmfConfig,
    pub project: Linear,
    pub interactive: Vec<InteractiveAttention>,
    pub layers: Vec<TransformerLayer>,
}

impl Cmf {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &CmfConfig) -> Result<Self> {
        let mut pb = pb.scope("cmf");
        let att = cfg.attention()?;
        let project = Linear::new(&mut pb, "project", cfg.in_dim, cfg.dim, true);
        let interactive = (0..cfg.interactive_layers)
            .map(|i| InteractiveAttention::new(&mut pb, &format!("interactive.{i}"), att))
            .collect();
        let layers = (0..cfg.transformer_layers)
            .map(|i| TransformerLayer::new(&mut pb, &format!("layers.{i}"), att))
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            project,
            interactive,
            layers,
        })
    }

    /// Fuses `(B, N, in_dim)` spatial sequences into `(B, N, dim)`. In
    /// [`FusionMode::SelfEnhance`] the depth stream is ignored and may be absent.
    pub fn forward<'t>(
        &self,
        s: &Session<'t, '_>,
        rgb: TokenSequence<'t>,
        depth: Option<TokenSequence<'t>>,
        mode: FusionMode,
    ) -> Result<TokenSequence<'t>> {
        let other = match (mode, depth) {
            (FusionMode::Cross, Some(d)) => d,
            (FusionMode::Cross, None) => return Err(Error::Usage("cross fusion needs a depth stream".into())),
            (FusionMode::SelfEnhance, _) => rgb,
        };
        if rgb.class_token || other.class_token {
            return Err(Error::Usage("class tokens must be removed before fusion".into()));
        }
        if rgb.data.shape() != other.data.shape() {
            return Err(Error::dim("cmf", &rgb.data.shape(), &other.data.shape()));
        }
        let mut a = self.project.forward(s, rgb.data)?;
        let mut b = self.project.forward(s, other.data)?;
        for layer in &self.interactive {
            (a, b) = layer.forward(s, a, b, self.cfg.exchange_kv)?;
        }
        let mut x: Var<'t> = a.add(b)?;
        for layer in &self.layers {
            x = layer.forward(s, x)?;
        }
        Ok(TokenSequence::spatial(x))
    }
}
