//! Malicious-URL classifier built around a character-aware dual-channel
//! transformer with layer-aware attention and spatial pyramid pooling.
//!
//! The crate is self-contained: it ships its own dense-tensor autodiff
//! core, a byte-level BPE tokenizer for URLs, the encoder and feature
//! head, a training loop, evaluation metrics, and an adversarial test-set
//! generator. Each `examples/` program exercises one capability; the
//! `pmanet` binary exposes the same operations as subcommands.

pub mod adversarial;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Dtype, Real, Tensor};

/// Cap rayon's worker count from `PMA_THREADS` (must run before any pool
/// use; later calls are no-ops). Returns the effective thread count.
pub fn init_threads() -> usize {
    use std::sync::OnceLock;
    static THREADS: OnceLock<usize> = OnceLock::new();
    *THREADS.get_or_init(|| {
        if let Ok(v) = std::env::var("PMA_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                    return n;
                }
            }
        }
        rayon::current_num_threads()
    })
}
