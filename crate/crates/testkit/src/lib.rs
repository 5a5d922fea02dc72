//! Independent oracles and seeded generators shared by the test suites.
//!
//! Nothing in here calls into the engine's reasoning, planning or ingest
//! code. Generators render plain text (schema documents, canonical triples,
//! rule source) that the system under test parses on its own.

pub mod closure;
pub mod decisions;
pub mod ingest;
pub mod kb;
pub mod query;
pub mod term;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
