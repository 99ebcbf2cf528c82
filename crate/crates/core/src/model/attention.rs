//! Attention primitives and the transformer blocks built from them.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, ParamBuilder, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    /// Whether the query/key/value projections carry a bias.
    pub qkv_bias: bool,
}

impl AttentionConfig {
    /// Defaults to a ×4 feed-forward expansion with biased projections.
    pub fn new(dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Usage(format!("model dim {dim} is not divisible by {heads} heads")));
        }
        Ok(Self {
            dim,
            heads,
            ffn_hidden: 4 * dim,
            qkv_bias: true,
        })
    }

    pub fn with_ffn_hidden(mut self, hidden: usize) -> Self {
        self.ffn_hidden = hidden;
        self
    }

    pub fn with_qkv_bias(mut self, bias: bool) -> Self {
        self.qkv_bias = bias;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// `softmax(Q Kᵀ / √d_k)` for `Q: (B, h, Nq, d_k)` and `K: (B, h, Nkv, d_k)`.
pub fn attention_weights<'t>(q: Var<'t>, k: Var<'t>) -> Result<Var<'t>> {
    let (qs, ks) = (q.shape(), k.shape());
    if qs.len() != 4 || ks.len() != 4 || qs[..2] != ks[..2] || qs[3] != ks[3] {
        return Err(Error::dim("attention", &qs, &ks));
    }
    let scale = 1.0 / (qs[3] as f64).sqrt();
    q.matmul(k.transpose(2, 3)?)?.scale(scale).softmax(3)
}

pub fn scaled_dot_attention<'t>(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
    let (ks, vs) = (k.shape(), v.shape());
    if vs.len() != 4 || ks[..3] != vs[..3] {
        return Err(Error::dim("attention", &ks, &vs));
    }
    attention_weights(q, k)?.matmul(v)
}

/// MACs of the two attention products for one call.
pub(crate) fn attention_product_macs(q: &[usize], kv_tokens: usize, v_dim: usize) -> usize {
    let (b, h, nq, dk) = (q[0], q[1], q[2], q[3]);
    b * h * nq * kv_tokens * (dk + v_dim)
}

/// `(B, N, h·d) → (B, h, N, d)`
fn split_heads<'t>(x: Var<'t>, heads: usize) -> Result<Var<'t>> {
    let s = x.shape();
    x.reshape(&[s[0], s[1], heads, s[2] / heads])?.permute(&[0, 2, 1, 3])
}

/// `(B, h, N, d) → (B, N, h·d)`
fn merge_heads(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    x.permute(&[0, 2, 1, 3])?.reshape(&[s[0], s[2], s[1] * s[3]])
}

/// Per-head projections, attention, head concat and output projection.
/// Residuals and normalization belong to the enclosing layer.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub cfg: AttentionConfig,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: AttentionConfig) -> Self {
        let mut pb = pb.scope(name);
        let d = cfg.dim;
        Self {
            cfg,
            q: Linear::new(&mut pb, "q", d, d, cfg.qkv_bias),
            k: Linear::new(&mut pb, "k", d, d, cfg.qkv_bias),
            v: Linear::new(&mut pb, "v", d, d, cfg.qkv_bias),
            out: Linear::new(&mut pb, "proj", d, d, true),
        }
    }

    /// Key and value heads of a source sequence, `(B, h, N, d_k)` each.
    pub fn key_value<'t>(&self, s: &Session<'t, '_>, src: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h = self.cfg.heads;
        Ok((
            split_heads(self.k.forward(s, src)?, h)?,
            split_heads(self.v.forward(s, src)?, h)?,
        ))
    }

    /// Attention of `q_src` over precomputed key/value heads.
    pub fn attend<'t>(&self, s: &Session<'t, '_>, q_src: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
        let qs = q_src.shape();
        if qs.len() != 3 || qs[2] != self.cfg.dim {
            return Err(Error::dim("multi_head_attention", &qs, &[self.cfg.dim]));
        }
        let q = split_heads(self.q.forward(s, q_src)?, self.cfg.heads)?;
        let kv_tokens = k.shape()[2];
        s.count_attention_macs(attention_product_macs(&q.shape(), kv_tokens, self.cfg.head_dim()));
        let heads = scaled_dot_attention(q, k, v)?;
        self.out.forward(s, merge_heads(heads)?)
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, q_src: Var<'t>, kv_src: Var<'t>) -> Result<Var<'t>> {
        let (qs, ks) = (q_src.shape(), kv_src.shape());
        if ks.len() != 3 || qs.len() != 3 || qs[0] != ks[0] || qs[2] != ks[2] {
            return Err(Error::dim("multi_head_attention", &qs, &ks));
        }
        let (k, v) = self.key_value(s, kv_src)?;
        self.attend(s, q_src, k, v)
    }
}

/// Linear → GELU → linear.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize, hidden: usize, out: usize) -> Self {
        let mut pb = pb.scope(name);
        Self {
            fc1: Linear::new(&mut pb, "fc1", dim, hidden, true),
            fc2: Linear::new(&mut pb, "fc2", hidden, out, true),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.fc1.forward(s, x)?.gelu();
        self.fc2.forward(s, h)
    }
}

/// Pre-norm block: `x + MHSA(LN(x))`, then `+ FFN(LN(·))`.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
}

impl TransformerLayer {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: AttentionConfig) -> Self {
        let mut pb = pb.scope(name);
        Self {
            norm1: LayerNorm::new(&mut pb, "norm1", cfg.dim),
            attn: MultiHeadAttention::new(&mut pb, "attn", cfg),
            norm2: LayerNorm::new(&mut pb, "norm2", cfg.dim),
            ffn: FeedForward::new(&mut pb, "mlp", cfg.dim, cfg.ffn_hidden, cfg.dim),
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let n = self.norm1.forward(s, x)?;
        let x = x.add(self.attn.forward(s, n, n)?)?;
        let n = self.norm2.forward(s, x)?;
        x.add(self.ffn.forward(s, n)?)
    }
}

/// Cross-stream attention block. Each stream queries the other stream's keys
/// and values; one parameter set serves both directions. Post-norm:
/// `LN(x + MHA(x, other))`, then `LN(· + FFN(·))`.
#[derive(Debug, Clone)]
pub struct InteractiveAttention {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl InteractiveAttention {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: AttentionConfig) -> Self {
        let mut pb = pb.scope(name);
        Self {
            attn: MultiHeadAttention::new(&mut pb, "attn", cfg),
            norm1: LayerNorm::new(&mut pb, "norm1", cfg.dim),
            ffn: FeedForward::new(&mut pb, "mlp", cfg.dim, cfg.ffn_hidden, cfg.dim),
            norm2: LayerNorm::new(&mut pb, "norm2", cfg.dim),
        }
    }

    fn finish<'t>(&self, s: &Session<'t, '_>, x: Var<'t>, attended: Var<'t>) -> Result<Var<'t>> {
        let y = self.norm1.forward(s, x.add(attended)?)?;
        let y2 = y.add(self.ffn.forward(s, y)?)?;
        self.norm2.forward(s, y2)
    }

    /// The same block with a stream attending to itself.
    pub fn self_attend<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let a = self.attn.forward(s, x, x)?;
        self.finish(s, x, a)
    }

    /// With `exchange` off each stream attends to its own keys and values.
    pub fn forward<'t>(
        &self,
        s: &Session<'t, '_>,
        x_a: Var<'t>,
        x_b: Var<'t>,
        exchange: bool,
    ) -> Result<(Var<'t>, Var<'t>)> {
        if x_a.shape() != x_b.shape() {
            return Err(Error::dim("interactive_attention", &x_a.shape(), &x_b.shape()));
        }
        let (k_a, v_a) = self.attn.key_value(s, x_a)?;
        let (k_b, v_b) = self.attn.key_value(s, x_b)?;
        let ((ka, va), (kb, vb)) = if exchange {
            ((k_b, v_b), (k_a, v_a))
        } else {
            ((k_a, v_a), (k_b, v_b))
        };
        let att_a = self.attn.attend(s, x_a, ka, va)?;
        let att_b = self.attn.attend(s, x_b, kb, vb)?;
        Ok((self.finish(s, x_a, att_a)?, self.finish(s, x_b, att_b)?))
    }
}

/// Single-head token transformer used inside the tokens-to-token stages.
/// Lifts `in_dim` tokens to `dim`; the residual path carries the values since
/// the input and output widths differ.
#[derive(Debug, Clone)]
pub struct TokenTransformer {
    pub norm1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub dim: usize,
}

impl TokenTransformer {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_dim: usize, dim: usize) -> Self {
        let mut pb = pb.scope(name);
        Self {
            norm1: LayerNorm::new(&mut pb, "norm1", in_dim),
            q: Linear::new(&mut pb, "q", in_dim, dim, false),
            k: Linear::new(&mut pb, "k", in_dim, dim, false),
            v: Linear::new(&mut pb, "v", in_dim, dim, false),
            proj: Linear::new(&mut pb, "proj", dim, dim, true),
            norm2: LayerNorm::new(&mut pb, "norm2", dim),
            ffn: FeedForward::new(&mut pb, "mlp", dim, dim, dim),
            dim,
        }
    }

    pub fn forward<'t>(&self, s: &Session<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        let n = self.norm1.forward(s, x)?;
        let q = split_heads(self.q.forward(s, n)?, 1)?;
        let k = split_heads(self.k.forward(s, n)?, 1)?;
        let v_tokens = self.v.forward(s, n)?;
        let v = split_heads(v_tokens, 1)?;
        s.count_attention_macs(attention_product_macs(&q.shape(), k.shape()[2], self.dim));
        let attended = merge_heads(scaled_dot_attention(q, k, v)?)?;
        let x = v_tokens.add(self.proj.forward(s, attended)?)?;
        let n = self.norm2.forward(s, x)?;
        x.add(self.ffn.forward(s, n)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::gradcheck::{check_gradients, weighted_sum};
    use crate::autodiff::Tape;
    use crate::nn::ParamStore;
    use crate::tensor::Tensor;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn build<T>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_>) -> T) -> (ParamStore, T) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = f(&mut ParamBuilder::new(&mut store, &mut rng));
        (store, m)
    }

    /// Attention computed with explicit loops, one (batch, head, query) at a time.
    fn loop_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (b, h, nq, dk) = (q.shape()[0], q.shape()[1], q.shape()[2], q.shape()[3]);
        let (nk, dv) = (k.shape()[2], v.shape()[3]);
        let mut out = Tensor::zeros(&[b, h, nq, dv]);
        for bi in 0..b {
            for hi in 0..h {
                for i in 0..nq {
                    let logits: Vec<f64> = (0..nk)
                        .map(|j| {
                            (0..dk).map(|d| q.at(&[bi, hi, i, d]) * k.at(&[bi, hi, j, d])).sum::<f64>()
                                / (dk as f64).sqrt()
                        })
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for d in 0..dv {
                        let val: f64 = (0..nk).map(|j| e[j] / z * v.at(&[bi, hi, j, d])).sum();
                        let idx = ((bi * h + hi) * nq + i) * dv + d;
                        out.data_mut()[idx] = val;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn single_key_returns_value() {
        let tape = Tape::new();
        let q = tape.constant(randn(&[1, 2, 3, 4], 1));
        let k = tape.constant(randn(&[1, 2, 1, 4], 2));
        let v = tape.constant(randn(&[1, 2, 1, 4], 3));
        let y = scaled_dot_attention(q, k, v).unwrap().to_tensor();
        for (i, val) in y.data().iter().enumerate() {
            let head = i / 12;
            assert_eq!(*val, v.value().data()[head * 4 + i % 4]);
        }
    }

    #[test]
    fn equal_logits_average_values() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[1, 1, 2, 3]));
        let k = tape.constant(randn(&[1, 1, 4, 3], 4));
        let v = tape.constant(randn(&[1, 1, 4, 3], 5));
        let y = scaled_dot_attention(q, k, v).unwrap().to_tensor();
        let vv = v.value();
        for d in 0..3 {
            let mean = (0..4).map(|j| vv.at(&[0, 0, j, d])).sum::<f64>() / 4.0;
            assert!((y.at(&[0, 0, 1, d]) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_loop_oracle() {
        for (shape_q, shape_kv, seed) in [([1, 1, 3, 2], [1, 1, 3, 2], 10), ([2, 3, 4, 5], [2, 3, 6, 5], 20)] {
            let (q, k, v) = (randn(&shape_q, seed), randn(&shape_kv, seed + 1), randn(&shape_kv, seed + 2));
            let tape = Tape::new();
            let y = scaled_dot_attention(tape.constant(q.clone()), tape.constant(k.clone()), tape.constant(v.clone()))
                .unwrap()
                .to_tensor();
            assert!(y.max_abs_diff(&loop_attention(&q, &k, &v)) < 1e-12);
        }
    }

    #[test]
    fn weight_rows_sum_to_one() {
        let tape = Tape::new();
        let w = attention_weights(tape.constant(randn(&[2, 3, 5, 4], 30).map(|v| 10.0 * v)), tape.constant(randn(&[2, 3, 7, 4], 31)))
            .unwrap()
            .to_tensor();
        for row in w.data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn key_dim_mismatch_is_an_error() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::zeros(&[1, 1, 2, 3]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 2, 4]));
        assert!(matches!(scaled_dot_attention(q, k, k), Err(Error::Dimension { .. })));
    }

    #[test]
    fn config_requires_divisible_heads() {
        assert!(AttentionConfig::new(10, 3).is_err());
        assert_eq!(AttentionConfig::new(384, 6).unwrap().head_dim(), 64);
    }

    #[test]
    fn single_head_composes_by_hand() {
        let cfg = AttentionConfig::new(6, 1).unwrap();
        let (store, mha) = build(40, |pb| MultiHeadAttention::new(pb, "mha", cfg));
        let xq = randn(&[2, 3, 6], 41);
        let xkv = randn(&[2, 5, 6], 42);
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let y = mha.forward(&s, s.input(xq.clone()), s.input(xkv.clone())).unwrap().to_tensor();

        let project = |x: &Tensor, lin: &Linear| {
            let (w, b) = (store.get(lin.weight), store.get(lin.bias.unwrap()));
            let rows = x.numel() / 6;
            Tensor::from_fn(&[rows, 6], |i| {
                let (r, c) = (i / 6, i % 6);
                b.data()[c] + (0..6).map(|j| x.data()[r * 6 + j] * w.at(&[j, c])).sum::<f64>()
            })
        };
        let q = project(&xq, &mha.q).reshaped(&[2, 1, 3, 6]).unwrap();
        let k = project(&xkv, &mha.k).reshaped(&[2, 1, 5, 6]).unwrap();
        let v = project(&xkv, &mha.v).reshaped(&[2, 1, 5, 6]).unwrap();
        let att = loop_attention(&q, &k, &v);
        let expect = project(&att, &mha.out).reshaped(&[2, 3, 6]).unwrap();
        assert!(y.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn zero_output_projection_annihilates() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let (mut store, mha) = build(50, |pb| MultiHeadAttention::new(pb, "mha", cfg));
        store.set(mha.out.weight, Tensor::zeros(&[8, 8])).unwrap();
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let x = s.input(randn(&[2, 4, 8], 51));
        let y = mha.forward(&s, x, x).unwrap().to_tensor();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn key_value_permutation_invariance() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let (store, mha) = build(60, |pb| MultiHeadAttention::new(pb, "mha", cfg));
        let xq = randn(&[1, 3, 8], 61);
        let xkv = randn(&[1, 5, 8], 62);
        let perm = [3, 0, 4, 2, 1];
        let permuted = Tensor::from_fn(&[1, 5, 8], |i| xkv.data()[perm[i / 8] * 8 + i % 8]);
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let a = mha.forward(&s, s.input(xq.clone()), s.input(xkv)).unwrap().to_tensor();
        let b = mha.forward(&s, s.input(xq), s.input(permuted)).unwrap().to_tensor();
        assert!(a.max_abs_diff(&b) < 1e-10);
    }

    fn zero_all(store: &mut ParamStore) {
        let ids: Vec<_> = store.trainable().map(|(id, _)| id).collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, Tensor::zeros(&shape)).unwrap();
        }
    }

    #[test]
    fn transformer_layer_identity_and_shape() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let (mut store, layer) = build(70, |pb| TransformerLayer::new(pb, "blk", cfg));
        let x = randn(&[2, 5, 8], 71);
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let y = layer.forward(&s, s.input(x.clone())).unwrap().to_tensor();
        assert_eq!(y.shape(), &[2, 5, 8]);
        zero_all(&mut store);
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let y = layer.forward(&s, s.input(x.clone())).unwrap().to_tensor();
        assert_eq!(y, x);
    }

    #[test]
    fn transformer_layer_gradients() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let (store, layer) = build(80, |pb| TransformerLayer::new(pb, "blk", cfg));
        let x = randn(&[2, 5, 8], 81);
        let w = store.get(layer.attn.q.weight).clone();
        let report = check_gradients(&[x, w], 24, 1e-5, &mut ChaCha8Rng::seed_from_u64(82), |tape, v| {
            let s = Session::inference(tape, &store);
            let y = layer_with_q(&layer, &s, v[0], v[1])?;
            weighted_sum(y, 83)
        })
        .unwrap();
        assert!(report.passes(1e-4), "{:?}", report.worst());
    }

    /// Same as `TransformerLayer::forward` with the query weight supplied explicitly.
    fn layer_with_q<'t>(layer: &TransformerLayer, s: &Session<'t, '_>, x: Var<'t>, wq: Var<'t>) -> Result<Var<'t>> {
        let n = layer.norm1.forward(s, x)?;
        let h = layer.attn.cfg.heads;
        let q = split_heads(n.matmul(wq)?.add(s.param(layer.attn.q.bias.unwrap()))?, h)?;
        let (k, v) = layer.attn.key_value(s, n)?;
        let a = layer.attn.out.forward(s, merge_heads(scaled_dot_attention(q, k, v)?)?)?;
        let x = x.add(a)?;
        let n = layer.norm2.forward(s, x)?;
        x.add(layer.ffn.forward(s, n)?)
    }

    #[test]
    fn interactive_on_identical_inputs_is_self_attention() {
        let cfg = AttentionConfig::new(8, 1).unwrap();
        let (store, ia) = build(90, |pb| InteractiveAttention::new(pb, "ia", cfg));
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let x = s.input(randn(&[2, 4, 8], 91));
        let (a, b) = ia.forward(&s, x, x, true).unwrap();
        let reference = ia.self_attend(&s, x).unwrap().to_tensor();
        assert!(a.to_tensor().max_abs_diff(&reference) < 1e-12);
        assert!(b.to_tensor().max_abs_diff(&reference) < 1e-12);
    }

    #[test]
    fn restoring_the_exchange_on_identical_inputs_changes_nothing() {
        let cfg = AttentionConfig::new(8, 1).unwrap();
        let (store, ia) = build(100, |pb| InteractiveAttention::new(pb, "ia", cfg));
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let x = s.input(randn(&[1, 6, 8], 101));
        let (a1, b1) = ia.forward(&s, x, x, true).unwrap();
        let (a2, b2) = ia.forward(&s, x, x, false).unwrap();
        assert!(a1.to_tensor().max_abs_diff(&a2.to_tensor()) < 1e-12);
        assert!(b1.to_tensor().max_abs_diff(&b2.to_tensor()) < 1e-12);
    }

    #[test]
    fn swapping_streams_swaps_outputs() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let (store, ia) = build(110, |pb| InteractiveAttention::new(pb, "ia", cfg));
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let xa = s.input(randn(&[2, 4, 8], 111));
        let xb = s.input(randn(&[2, 4, 8], 112));
        let (a, b) = ia.forward(&s, xa, xb, true).unwrap();
        let (b2, a2) = ia.forward(&s, xb, xa, true).unwrap();
        assert!(a.to_tensor().max_abs_diff(&a2.to_tensor()) < 1e-12);
        assert!(b.to_tensor().max_abs_diff(&b2.to_tensor()) < 1e-12);
        let (a3, _) = ia.forward(&s, xa, xb, false).unwrap();
        assert!(a.to_tensor().max_abs_diff(&a3.to_tensor()) > 1e-6);
    }

    #[test]
    fn interactive_matches_loop_oracle() {
        let cfg = AttentionConfig::new(4, 1).unwrap().with_ffn_hidden(6);
        let (store, ia) = build(120, |pb| InteractiveAttention::new(pb, "ia", cfg));
        let (xa, xb) = (randn(&[1, 3, 4], 121), randn(&[1, 3, 4], 122));
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let (a, b) = ia.forward(&s, s.input(xa.clone()), s.input(xb.clone()), true).unwrap();

        let p = |id| store.get(id).data().to_vec();
        let lin = |x: &[f64], l: &Linear| -> Vec<f64> {
            let (w, bias) = (p(l.weight), p(l.bias.unwrap()));
            (0..l.out_dim)
                .map(|c| bias[c] + (0..l.in_dim).map(|j| x[j] * w[j * l.out_dim + c]).sum::<f64>())
                .collect()
        };
        let ln = |x: &[f64], n: &LayerNorm| -> Vec<f64> {
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|t| (t - m).powi(2)).sum::<f64>() / x.len() as f64;
            let (g, bb) = (p(n.gain), p(n.bias));
            x.iter().enumerate().map(|(i, t)| (t - m) / (v + 1e-5).sqrt() * g[i] + bb[i]).collect()
        };
        let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let rows = |t: &Tensor| t.data().chunks(4).map(|r| r.to_vec()).collect::<Vec<_>>();
        // Q from one stream, K and V from the other, term by term.
        let stream = |own: &[Vec<f64>], other: &[Vec<f64>]| -> Vec<f64> {
            let mut out = Vec::new();
            for x in own {
                let q = lin(x, &ia.attn.q);
                let logits: Vec<f64> = other
                    .iter()
                    .map(|o| q.iter().zip(lin(o, &ia.attn.k)).map(|(a, b)| a * b).sum::<f64>() / 2.0)
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                let mut att = vec![0.0; 4];
                for (o, l) in other.iter().zip(&logits) {
                    for (d, vd) in lin(o, &ia.attn.v).iter().enumerate() {
                        att[d] += l.exp() / z * vd;
                    }
                }
                let proj = lin(&att, &ia.attn.out);
                let y: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
                let y = ln(&y, &ia.norm1);
                let h: Vec<f64> = lin(&y, &ia.ffn.fc1).into_iter().map(gelu).collect();
                let f = lin(&h, &ia.ffn.fc2);
                let y2: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a + b).collect();
                out.extend(ln(&y2, &ia.norm2));
            }
            out
        };
        let (ra, rb) = (rows(&xa), rows(&xb));
        let ea = stream(&ra, &rb);
        let eb = stream(&rb, &ra);
        let diff = |t: Tensor, e: &[f64]| t.data().iter().zip(e).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff(a.to_tensor(), &ea) < 1e-10);
        assert!(diff(b.to_tensor(), &eb) < 1e-10);
    }

    #[test]
    fn token_transformer_lifts_width() {
        let (store, tt) = build(130, |pb| TokenTransformer::new(pb, "t2t", 27, 8));
        let tape = Tape::new();
        let s = Session::inference(&tape, &store);
        let y = tt.forward(&s, s.input(randn(&[2, 16, 27], 131))).unwrap();
        assert_eq!(y.shape(), vec![2, 16, 8]);
        assert_eq!(s.attention_macs(), 2 * 16 * 16 * 16);
    }
}
