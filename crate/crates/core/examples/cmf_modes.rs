//! The fusion module at its full-scale width on random token grids: cross
//! fusion of a stream with itself matches self-enhancement, and the key/value
//! exchange only matters when the two streams differ.
//!
//! cargo run --release --example cmf_modes

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use siatrans::autodiff::Tape;
use siatrans::model::{Cmf, CmfConfig, FusionMode, TokenSequence};
use siatrans::nn::{ParamBuilder, ParamStore, Session};
use siatrans::Tensor;

fn main() -> siatrans::Result<()> {
    let cfg = CmfConfig::full();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cmf = Cmf::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg)?;
    let tokens = |seed| Tensor::randn(&[2, 196, cfg.in_dim], &mut ChaCha8Rng::seed_from_u64(seed));

    let tape = Tape::new();
    let s = Session::inference(&tape, &store);
    let rgb = TokenSequence::spatial(s.input(tokens(1)));
    let depth = TokenSequence::spatial(s.input(tokens(2)));
    let streams = [rgb, depth];
    // second stream by index, if any
    let run = |c: &Cmf, d: Option<usize>, mode| -> siatrans::Result<Tensor> {
        Ok(c.forward(&s, rgb, d.map(|i| streams[i]), mode)?.data.to_tensor())
    };

    let own = run(&cmf, None, FusionMode::SelfEnhance)?;
    let same = run(&cmf, Some(0), FusionMode::Cross)?;
    let cross = run(&cmf, Some(1), FusionMode::Cross)?;
    println!("output {:?}", own.shape());
    println!("max |cross(rgb, rgb) - self(rgb)|   = {:.3e}", same.max_abs_diff(&own));
    println!("max |cross(rgb, depth) - self(rgb)| = {:.3e}", cross.max_abs_diff(&own));

    let no_exchange = Cmf {
        cfg: CmfConfig {
            exchange_kv: false,
            ..cfg.clone()
        },
        ..cmf.clone()
    };
    let restored = run(&no_exchange, Some(0), FusionMode::Cross)?;
    println!("one stream, exchange on vs off      = {:.3e}", restored.max_abs_diff(&same));
    let plain = run(&no_exchange, Some(1), FusionMode::Cross)?;
    println!("two streams, exchange on vs off     = {:.3e}", cross.max_abs_diff(&plain));
    Ok(())
}
