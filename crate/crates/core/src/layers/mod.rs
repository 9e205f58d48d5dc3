//! Layer vocabulary shared by both architectures.

pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;

pub use dense::{Conv, Linear};
pub use loss::softmax;
pub use norm::{BatchNormState, Mode, BN_EPSILON, BN_MOMENTUM};
