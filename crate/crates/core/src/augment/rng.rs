use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based split of one seed into independent streams.
///
/// Stream `(stage << 32) | sample` feeds the draws of one sample within one stage, so
/// results do not depend on the order in which samples or stages are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

const ORDER_STREAM: u64 = u64::MAX;

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stage(&self, stage: usize) -> StageRng {
        StageRng { seed: self.seed, stage: stage as u32 }
    }

    /// Stream reserved for shuffling stage order.
    pub fn ordering_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(ORDER_STREAM);
        rng
    }
}

/// Random streams of one stage, one per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageRng {
    seed: u64,
    stage: u32,
}

impl StageRng {
    pub fn sample(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((self.stage as u64) << 32) | index as u64);
        rng
    }
}
