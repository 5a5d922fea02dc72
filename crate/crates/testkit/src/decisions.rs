//! Random expert decision sequences.

use rand::seq::IndexedRandom;
use rand::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub s1: String,
    pub s2: String,
    pub accept: bool,
    pub expert: String,
}

/// `len` decisions over `pairs`, revisiting some pairs so that later
/// decisions overturn earlier ones.
pub fn sequence(rng: &mut impl Rng, pairs: &[(String, String)], len: usize) -> Vec<Step> {
    const EXPERTS: [&str; 3] = ["alice", "bob", "chen"];
    let mut out: Vec<Step> = Vec::with_capacity(len);
    for _ in 0..len {
        let (a, b) = if !out.is_empty() && rng.random_bool(0.25) {
            let prev = out.choose(rng).unwrap();
            (prev.s1.clone(), prev.s2.clone())
        } else {
            pairs.choose(rng).expect("at least one pair").clone()
        };
        let (s1, s2) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        out.push(Step {
            s1,
            s2,
            accept: rng.random_bool(0.7),
            expert: EXPERTS.choose(rng).unwrap().to_string(),
        });
    }
    out
}
