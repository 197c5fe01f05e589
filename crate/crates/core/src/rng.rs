use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Generator used throughout; portable and reproducible across platforms.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a labelled sub-task of a run.
pub fn derive(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard Gumbel(0, 1) draw.
pub fn gumbel(rng: &mut impl Rng) -> f64 {
    // Open interval keeps both logs finite.
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}
