//! Deterministic seed splitting. Every random stream in the crate derives
//! from one root seed plus a subsystem label and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    splitmix(splitmix(root ^ fnv1a(label)).wrapping_add(index))
}

pub fn stream(root: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, label, index))
}
