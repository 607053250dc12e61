//! Reproducible random streams.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`]. A run has one
//! 64-bit seed; independent consumers get their own ChaCha stream selected
//! by a 64-bit stream id laid out as
//!
//! ```text
//! bits 56..64  purpose tag
//! bits 32..56  epoch (low 24 bits)
//! bits  0..32  item index (sequence, sample, ...)
//! ```
//!
//! Streams never overlap, so the outcome of one consumer does not depend on
//! how many numbers another consumer drew, or in which order work ran.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for [`substream`].
pub mod purpose {
    pub const AUGMENT: u8 = 1;
    pub const INIT: u8 = 2;
    pub const SHUFFLE: u8 = 3;
    pub const ROTATION: u8 = 4;
    pub const DATA: u8 = 5;
    pub const SPLIT: u8 = 6;
    pub const EVAL: u8 = 7;
    pub const GRAD_CHECK: u8 = 8;
}

pub fn stream_id(purpose: u8, epoch: u32, index: u32) -> u64 {
    (u64::from(purpose) << 56) | (u64::from(epoch & 0x00ff_ffff) << 32) | u64::from(index)
}

pub fn substream(seed: u64, purpose: u8, epoch: u32, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, epoch, index));
    rng
}
