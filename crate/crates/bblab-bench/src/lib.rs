//! Shared fixtures for the benches; the crate carries no runtime code of
//! its own.

use bblab_core::setcalc::ProductSet;
use bblab_core::FieldParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_values(params: FieldParams, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..params.size()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

pub fn random_product(params: FieldParams, density: f64, seed: u64) -> ProductSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ProductSet::empty(params, params).unwrap();
    for x in 0..params.size() {
        for y in 0..params.size() {
            if rng.gen_bool(density) {
                p.insert(x, y);
            }
        }
    }
    p
}
