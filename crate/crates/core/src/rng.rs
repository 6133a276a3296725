//! Path-addressed random number streams.
//!
//! A [`RngStream`] names a position in a tree of streams: a master seed plus
//! a sequence of labels (iteration, time step, particle, ...). The generator
//! for a node depends only on that pair, never on how many draws other nodes
//! consumed, so work can be split across threads in any order without
//! changing a single draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to model callbacks.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a, used to turn string labels into path components.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    seed: u64,
    key: u64,
    depth: u32,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed ^ GOLDEN),
            depth: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Derive the child stream at `index`.
    pub fn child(&self, index: u64) -> Self {
        let depth = self.depth + 1;
        let salt = mix64(index.wrapping_add(GOLDEN.wrapping_mul(depth as u64)));
        Self {
            seed: self.seed,
            key: mix64(self.key.rotate_left(17) ^ salt),
            depth,
        }
    }

    /// Derive a child addressed by a string label.
    pub fn named(&self, label: &str) -> Self {
        // Offset keeps named children disjoint from small integer indices in practice.
        self.child(label_hash(label) | (1 << 63))
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut bytes = [0u8; 32];
        let mut state = self.key;
        for chunk in bytes.chunks_exact_mut(8) {
            state = state.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix64(state ^ self.seed.rotate_left(32)).to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}
