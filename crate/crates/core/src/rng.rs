use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent, reproducible stream `stream` of the generator seeded by `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const GRAPH: u64 = 1;
    pub const PARAMS: u64 = 2;
    pub const EVENTS: u64 = 3;
    pub const ORACLE: u64 = 4;
    pub const WEIGHTS: u64 = 5;
    pub const TOPOLOGY: u64 = 6;
    pub const MONTE_CARLO: u64 = 7;
    pub const ABLATION: u64 = 8;
    pub const NEGATIVES: u64 = 9;
}
