//! Named random streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32-byte ChaCha seed `sha256(seed LE || label)`.
pub fn derive_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Independent stream for `label`; adding a label never shifts another.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, label))
}

/// Position of a stream, enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StreamPos {
    pub word_pos: u128,
}

pub fn position(rng: &ChaCha8Rng) -> StreamPos {
    StreamPos {
        word_pos: rng.get_word_pos(),
    }
}

pub fn resume(seed: u64, label: &str, pos: StreamPos) -> ChaCha8Rng {
    let mut rng = stream(seed, label);
    rng.set_word_pos(pos.word_pos);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn labels_are_independent_and_resumable() {
        let mut a = stream(7, "data");
        let mut b = stream(7, "prior");
        assert_ne!(a.random::<u64>(), b.random::<u64>());
        for _ in 0..13 {
            a.random::<u32>();
        }
        let pos = position(&a);
        let next: Vec<u64> = (0..5).map(|_| a.random()).collect();
        let mut r = resume(7, "data", pos);
        let again: Vec<u64> = (0..5).map(|_| r.random()).collect();
        assert_eq!(next, again);
    }
}
