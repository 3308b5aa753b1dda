#![allow(dead_code)]

use leo_consensus::model::OperatorId;
use leo_consensus::netsim::{AdversaryStrategy, Behavior, Controlled};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIZES: [usize; 3] = [4, 7, 10];

pub fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}

/// A random `f`-subset of the operators.
pub fn random_controlled(n: usize, f: usize, rng: &mut impl Rng) -> Controlled {
    Controlled::fixed(sample(rng, n, f).into_iter().map(OperatorId::from_index))
}

pub fn random_strategy(
    n: usize,
    f: usize,
    behavior: Behavior,
    rng: &mut impl Rng,
) -> AdversaryStrategy {
    AdversaryStrategy::new(random_controlled(n, f, rng), behavior)
}

pub fn f_for(n: usize) -> usize {
    (n - 1) / 3
}
