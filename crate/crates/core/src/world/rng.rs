//! Counter-keyed random streams: every (seed, tick, consumer) triple gets its
//! own independent generator, so adding a consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a consumer name, used as a stable consumer id.
pub fn consumer_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn stream(seed: u64, tick: u64, consumer: u64) -> ChaCha8Rng {
    let key = splitmix(seed ^ splitmix(tick ^ splitmix(consumer)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(consumer);
    rng
}
