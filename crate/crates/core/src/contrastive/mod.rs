//! Projection heads, the bi-level contrastive objective and its training
//! loop.

pub mod loss;
pub mod train;

pub use loss::{loss_b2t, loss_i2p, loss_multi, loss_p2i, LossConfig};
pub use train::{train_contrastive, ContrastiveConfig};
