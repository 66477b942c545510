//! End-to-end pretraining: configuration, scene preparation, the training
//! loop, the linear probe and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod model;
pub mod probe;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::RunConfig;
pub use model::Co3Model;
pub use probe::{eval_probe, ProbeConfig, ProbeReport};
pub use train::{pretrain, pretrain_prepared, TrainMetrics};

/// Splitmix64 over `(base, stream, index)`: independent seeds for
/// independent random streams.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
