use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// Seeded deterministic random stream.
///
/// Independent streams derived from one seed (`with_stream`) let several
/// consumers (teacher, initialization, batches) draw without perturbing
/// each other.
#[derive(Debug, Clone)]
pub struct RngState(ChaCha8Rng);

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState(rng)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}
