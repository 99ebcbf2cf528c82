//! Parameters, forward sessions and the basic layers the model is built from.

mod layers;
mod params;
mod session;

pub use layers::{BatchNorm2d, Conv2d, ConvBnRelu, LayerNorm, Linear, BN_MOMENTUM, NORM_EPS};
pub use params::{ParamBuilder, ParamEntry, ParamId, ParamKind, ParamStore};
pub use session::{Mode, Session};
