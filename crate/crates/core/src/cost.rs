//! Parameter and multiply-accumulate counts for one RGB-D pair at inference.
//!
//! MACs follow the usual profiler convention: linear and convolution layers
//! only. The two attention products (QKᵀ and the weighted sum of values) are
//! reported separately and are not part of the headline figure. Norms,
//! activations, pooling and interpolation are not counted.

use std::fmt;

use serde::Serialize;

use crate::model::{CmfConfig, DecoderConfig, EncoderConfig, ModelConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Cost {
    pub params: u64,
    pub macs: u64,
    pub attention_macs: u64,
}

impl Cost {
    fn linear(&mut self, rows: usize, inp: usize, out: usize, bias: bool) {
        self.params += (inp * out + if bias { out } else { 0 }) as u64;
        self.macs += (rows * inp * out) as u64;
    }

    fn conv(&mut self, batch: usize, side: usize, inp: usize, out: usize, kernel: usize) {
        self.params += (out * inp * kernel * kernel + out) as u64;
        self.macs += (batch * side * side * out * inp * kernel * kernel) as u64;
    }

    fn norm(&mut self, width: usize) {
        self.params += 2 * width as u64;
    }

    fn attention(&mut self, batch: usize, queries: usize, keys: usize, width: usize) {
        self.attention_macs += (2 * batch * queries * keys * width) as u64;
    }

    fn add(&mut self, other: Cost) {
        self.params += other.params;
        self.macs += other.macs;
        self.attention_macs += other.attention_macs;
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub image_size: usize,
    pub encoder: Cost,
    pub heads: Cost,
    pub cmf: Cost,
    /// The interactive-attention layers inside the fusion stage.
    pub cmf_interactive: Cost,
    pub decoder: Cost,
    pub total: Cost,
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input {0}x{0}, one RGB-D pair", self.image_size)?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, c: &Cost| {
            writeln!(
                f,
                "{name:<18}{:>10.4} M params{:>10.4} G MACs{:>10.4} G attention",
                c.params as f64 / 1e6,
                c.macs as f64 / 1e9,
                c.attention_macs as f64 / 1e9
            )
        };
        row(f, "encoder", &self.encoder)?;
        row(f, "heads", &self.heads)?;
        row(f, "fusion", &self.cmf)?;
        row(f, "  interactive", &self.cmf_interactive)?;
        row(f, "decoder", &self.decoder)?;
        row(f, "total", &self.total)
    }
}

/// One backbone over `n` images.
fn backbone_cost(cfg: &EncoderConfig, n: usize) -> Cost {
    let mut c = Cost::default();
    let grids = cfg.grids().unwrap_or([cfg.image_size / 4, cfg.image_size / 8, cfg.image_size / 16]);
    let w = cfg.token_dim;
    let stages = [
        (3 * cfg.splits[0].kernel.pow(2), grids[0] * grids[0]),
        (w * cfg.splits[1].kernel.pow(2), grids[1] * grids[1]),
    ];
    for (inp, tokens) in stages {
        let rows = n * tokens;
        c.norm(inp);
        c.linear(rows, inp, 3 * w, false);
        c.attention(n, tokens, tokens, w);
        c.linear(rows, w, w, true);
        c.norm(w);
        c.linear(rows, w, w, true);
        c.linear(rows, w, w, true);
    }
    let tokens = grids[2] * grids[2] + 1;
    let d = cfg.embed_dim;
    c.linear(n * (tokens - 1), w * cfg.splits[2].kernel.pow(2), d, true);
    c.params += (d + tokens * d) as u64;
    for _ in 0..cfg.depth {
        c.add(block_cost(n, tokens, d, cfg.ffn_hidden, false));
    }
    c.norm(d);
    c
}

/// Pre-norm transformer layer, or one stream of an interactive layer.
fn block_cost(batch: usize, tokens: usize, d: usize, hidden: usize, qkv_bias: bool) -> Cost {
    let mut c = Cost::default();
    let rows = batch * tokens;
    c.norm(d);
    c.linear(rows, d, 3 * d, qkv_bias);
    c.attention(batch, tokens, tokens, d);
    c.linear(rows, d, d, true);
    c.norm(d);
    c.linear(rows, d, hidden, true);
    c.linear(rows, hidden, d, true);
    c
}

fn cmf_cost(cfg: &CmfConfig, batch: usize, tokens: usize) -> (Cost, Cost) {
    let mut c = Cost::default();
    c.linear(2 * batch * tokens, cfg.in_dim, cfg.dim, true);
    let mut interactive = Cost::default();
    for _ in 0..cfg.interactive_layers {
        // one parameter set, applied to both streams
        let stream = block_cost(batch, tokens, cfg.dim, cfg.ffn_hidden, true);
        interactive.params += stream.params;
        interactive.macs += 2 * stream.macs;
        interactive.attention_macs += 2 * stream.attention_macs;
    }
    c.add(interactive);
    for _ in 0..cfg.transformer_layers {
        c.add(block_cost(batch, tokens, cfg.dim, cfg.ffn_hidden, true));
    }
    (c, interactive)
}

fn decoder_cost(cfg: &DecoderConfig, batch: usize) -> Cost {
    let mut c = Cost::default();
    let s = cfg.image_size;
    let [w1, w2, w3] = cfg.widths;
    let blocks = [(cfg.in_dim, w1, s / 8), (w1, w2, s / 4), (w2, w3, s / 2)];
    for (inp, out, side) in blocks {
        c.conv(batch, side, inp, out, 3);
        c.norm(out);
        c.conv(batch, side, out, out, 3);
        c.norm(out);
    }
    c.conv(batch, s / 8, cfg.side_dim, w1, 1);
    c.conv(batch, s / 4, cfg.side_dim, w2, 1);
    if cfg.adaptive_fusion {
        c.conv(batch, s / 2, 2, 1, 1);
        c.conv(batch, s / 2, w1 + w2 + w3, w3, 3);
        c.norm(w3);
        c.conv(batch, s / 2, w3, w3, 3);
        c.norm(w3);
    }
    c.conv(batch, s / 2, w3, 1, 3);
    c.conv(batch, s / 8, w1, 1, 3);
    c.conv(batch, s / 4, w2, 1, 3);
    c.conv(batch, s / 2, w3, 1, 3);
    c
}

/// Costs of a forward pass over `batch` RGB-D pairs with cross fusion.
pub fn count_cost_batch(cfg: &ModelConfig, batch: usize) -> CostReport {
    let enc = &cfg.encoder;
    let mut encoder = Cost::default();
    if enc.siamese {
        encoder.add(backbone_cost(enc, 2 * batch));
    } else {
        encoder.add(backbone_cost(enc, batch));
        encoder.add(backbone_cost(enc, batch));
    }
    let tokens = enc.top_tokens();
    let mut heads = Cost::default();
    heads.linear(batch, enc.embed_dim, 1, true);
    heads.linear(2 * batch * tokens, enc.embed_dim, 1, true);
    heads.linear(batch * tokens, cfg.cmf.dim, 1, true);
    let (cmf, cmf_interactive) = cmf_cost(&cfg.cmf, batch, tokens);
    let decoder = decoder_cost(&cfg.decoder, batch);
    let mut total = Cost::default();
    for part in [encoder, heads, cmf, decoder] {
        total.add(part);
    }
    CostReport {
        image_size: enc.image_size,
        encoder,
        heads,
        cmf,
        cmf_interactive,
        decoder,
        total,
    }
}

pub fn count_cost(cfg: &ModelConfig) -> CostReport {
    count_cost_batch(cfg, 1)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::Tape;
    use crate::model::{FusionPolicy, SiaTrans};
    use crate::nn::{ParamBuilder, ParamStore, Session};
    use crate::tensor::Tensor;

    fn tiny() -> ModelConfig {
        let mut cfg = ModelConfig::desk().with_image_size(32);
        cfg.encoder.token_dim = 8;
        cfg.decoder.side_dim = 8;
        cfg.encoder.embed_dim = 16;
        cfg.encoder.heads = 2;
        cfg.cmf.in_dim = 16;
        cfg.decoder.widths = [8, 6, 4];
        cfg
    }

    fn check(cfg: &ModelConfig, batch: usize) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = SiaTrans::new(&mut ParamBuilder::new(&mut store, &mut rng), cfg).unwrap();
        let report = count_cost_batch(cfg, batch);
        assert_eq!(report.total.params, store.num_trainable() as u64);
        assert_eq!(report.cmf_interactive.params, store.count_with_prefix("cmf.interactive.") as u64);

        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let size = cfg.image_size();
        let mut x = || s.input(Tensor::randn(&[batch, 3, size, size], &mut rng));
        model.forward(&s, x(), x(), FusionPolicy::Cross).unwrap();
        assert_eq!(report.total.macs, s.layer_macs());
        assert_eq!(report.total.attention_macs, s.attention_macs());
    }

    #[test]
    fn counts_match_built_model_and_forward() {
        check(&tiny(), 1);
        check(&tiny(), 2);
        let mut two_stream = tiny();
        two_stream.encoder.siamese = false;
        two_stream.decoder.adaptive_fusion = false;
        check(&two_stream, 1);
    }

    #[test]
    fn full_scale_figures() {
        let r = count_cost(&ModelConfig::full());
        let params = r.total.params as f64 / 1e6;
        let macs = r.total.macs as f64 / 1e9;
        assert!((params - 22.24).abs() / 22.24 < 0.1, "{params}");
        assert!((macs - 10.91).abs() / 10.91 < 0.1, "{macs}");
    }
}
