//! Seeded generator streams.
//!
//! Parallel work never shares a generator. A task draws one master seed from
//! the caller's generator and every sub-task gets its own ChaCha stream keyed
//! by `(master, index)`, so results do not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

/// Generator for sub-task `index` of the task seeded with `master`.
pub fn task_rng(master: u64, index: u64) -> TaskRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Draws a fresh master seed from `rng`.
pub fn master_seed<R: Rng + ?Sized>(rng: &mut R) -> u64 {
    rng.random()
}

pub fn seeded(seed: u64) -> TaskRng {
    ChaCha8Rng::seed_from_u64(seed)
}
