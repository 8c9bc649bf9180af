//! Counter-based stream derivation.
//!
//! Every random object in the crate is drawn from a generator seeded by a
//! [`StreamKey`]. Keys are derived by hashing `(parent key, tag)` so a
//! replicate, a tree node or a spine step owns a stream that depends only
//! on its coordinates, never on scheduling or on how much randomness other
//! tasks consumed.

use rand::rngs::SmallRng;
use rand::SeedableRng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies which experiment family a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum ModuleId {
    Laws = 1,
    ForwardSim = 2,
    Spine = 3,
    Corridor = 4,
    Tail = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master_seed: u64, module: ModuleId) -> Self {
        StreamKey(splitmix(splitmix(master_seed) ^ (module as u64).wrapping_mul(GOLDEN)))
    }

    pub fn from_raw(raw: u64) -> Self {
        StreamKey(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn derive(self, tag: u64) -> Self {
        StreamKey(splitmix(self.0 ^ splitmix(tag.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn replicate(self, index: u64) -> Self {
        self.derive(index.wrapping_mul(2))
    }

    /// Key of the `index`-th child of a tree node.
    #[inline]
    pub fn child(self, index: u64) -> Self {
        self.derive(index.wrapping_mul(2).wrapping_add(1))
    }

    #[inline]
    pub fn rng(self) -> SmallRng {
        SmallRng::seed_from_u64(self.0)
    }
}
