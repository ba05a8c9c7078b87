//! Keyed random streams.
//!
//! Every node of a splitting tree owns a [`StreamKey`]. A node draws its own
//! variates from stream 0 of a ChaCha8 generator keyed by its key, and derives
//! the key of child `label` from stream `label + 1` of the same generator. The
//! variates a node sees therefore depend only on its path from the root, never
//! on the order in which a traversal visits the tree.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed material for one node of a splitting tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        StreamKey(key)
    }

    /// Key of a named task under a global seed.
    pub fn for_task(seed: u64, task: &str) -> Self {
        Self::from_seed(seed).child(fnv1a(task.as_bytes()))
    }

    pub fn child(&self, label: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(self.0);
        rng.set_stream(label.wrapping_add(1));
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        StreamKey(key)
    }

    /// Generator for this node's own draws.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.0)
    }

    /// A plain seed drawn from this key, for entry points that take a `u64`.
    pub fn derive_seed(&self) -> u64 {
        self.rng().next_u64()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
