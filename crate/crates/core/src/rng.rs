//! Seed derivation for every random stream in a run.
//!
//! Each stream is addressed by `(master_seed, tag, id, round)`, so the order
//! in which workers pick up agents or groups has no effect on the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream namespaces. Agent streams use `Tag::Agent` with the agent id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Tag {
    Agent = 1,
    Init = 2,
    Server = 3,
    Probe = 4,
    Attack = 5,
    Eval = 6,
    Oracle = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: Tag, id: u64, round: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    let mut h = splitmix64(master);
    for (i, word) in [tag as u64, id, round, 0x5EED].into_iter().enumerate() {
        h = splitmix64(h ^ word.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        seed[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    seed
}

pub fn stream(master: u64, tag: Tag, id: u64, round: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(master, tag, id, round))
}


/// Yields the same 64-bit word forever; for pinning draws in tests.
#[derive(Debug, Clone, Copy)]
pub struct ConstRng(pub u64);

impl rand::RngCore for ConstRng {
    fn next_u32(&mut self) -> u32 {
        self.0 as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.0
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core_fill(self.0, dst)
    }
}

fn rand_core_fill(word: u64, dst: &mut [u8]) {
    for chunk in dst.chunks_mut(8) {
        chunk.copy_from_slice(&word.to_le_bytes()[..chunk.len()]);
    }
}
