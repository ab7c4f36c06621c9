//! Weighted probabilistic grammar over transformations.
//!
//! At a node with remaining depth >= 2 the sampler chooses `compose` with
//! probability `compose / (compose + sum(families))`, otherwise a leaf
//! family proportional to its weight; arguments are uniform over the
//! family's declared range. These probabilities are exact and analytically
//! checkable.

use super::{Prim, Transformation, FAMILY_NAMES};
use rand::Rng;

#[derive(Clone, Debug)]
pub struct GrammarWeights {
    /// One weight per leaf family, indexed like [`FAMILY_NAMES`].
    pub families: [f64; FAMILY_NAMES.len()],
    /// Weight of the compose production (only competes at depth >= 2).
    pub compose: f64,
}

impl Default for GrammarWeights {
    fn default() -> Self {
        GrammarWeights {
            families: [1.0; FAMILY_NAMES.len()],
            // Roughly one task in six is a composition under the default
            // depth cap; deeper nests stay rare enough for short decodes.
            compose: 4.0,
        }
    }
}

impl GrammarWeights {
    pub fn uniform() -> Self {
        GrammarWeights {
            families: [1.0; FAMILY_NAMES.len()],
            compose: 1.0,
        }
    }

    fn family_total(&self) -> f64 {
        self.families.iter().sum()
    }

    /// Probability of picking `family` given the node is a leaf.
    pub fn leaf_family_prob(&self, family: usize) -> f64 {
        self.families[family] / self.family_total()
    }

    /// Probability of a compose node when remaining depth allows one.
    pub fn compose_prob(&self) -> f64 {
        self.compose / (self.compose + self.family_total())
    }
}

/// Draw a transformation from the weighted grammar. `depth_cap` must be in
/// 1..=MAX_DEPTH; deterministic for a fixed RNG state.
pub fn sample_program<R: Rng>(weights: &GrammarWeights, depth_cap: usize, rng: &mut R) -> Transformation {
    assert!((1..=super::MAX_DEPTH).contains(&depth_cap), "depth_cap out of range");
    sample_node(weights, depth_cap, rng)
}

fn sample_node<R: Rng>(w: &GrammarWeights, remaining: usize, rng: &mut R) -> Transformation {
    if remaining >= 2 {
        let total = w.compose + w.family_total();
        if rng.gen::<f64>() * total < w.compose {
            let a = sample_node(w, remaining - 1, rng);
            let b = sample_node(w, remaining - 1, rng);
            return Transformation::Compose(Box::new(a), Box::new(b));
        }
    }
    Transformation::Prim(sample_leaf(w, rng))
}

fn sample_leaf<R: Rng>(w: &GrammarWeights, rng: &mut R) -> Prim {
    let total = w.family_total();
    let mut u = rng.gen::<f64>() * total;
    let mut idx = FAMILY_NAMES.len() - 1;
    for (i, &wt) in w.families.iter().enumerate() {
        if u < wt {
            idx = i;
            break;
        }
        u -= wt;
    }
    let family = FAMILY_NAMES[idx];
    let arg = Prim::arg_range(family).map(|(lo, hi)| rng.gen_range(lo..=hi));
    Prim::from_parts(family, arg).expect("family table consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use std::collections::HashMap;

    #[test]
    fn depth_one_forces_leaf() {
        let w = GrammarWeights::uniform();
        for s in 0..50 {
            let mut rng = rng_for(s, &[]);
            let f = sample_program(&w, 1, &mut rng);
            assert_eq!(f.depth(), 1);
        }
    }

    #[test]
    fn identical_seeds_identical_programs() {
        let w = GrammarWeights::default();
        let mut a = rng_for(11, &[3]);
        let mut b = rng_for(11, &[3]);
        for _ in 0..100 {
            assert_eq!(sample_program(&w, 3, &mut a), sample_program(&w, 3, &mut b));
        }
    }

    #[test]
    fn leaf_family_frequencies_match_grammar() {
        // With depth_cap 1 every draw is a leaf, so family frequencies are
        // exactly the normalized weights; check within 3 sigma of binomial.
        let w = GrammarWeights::uniform();
        let n = 10_000usize;
        let mut counts: HashMap<&'static str, usize> = HashMap::new();
        let mut rng = rng_for(99, &[]);
        for _ in 0..n {
            if let Transformation::Prim(p) = sample_program(&w, 1, &mut rng) {
                *counts.entry(p.name()).or_default() += 1;
            }
        }
        for (i, name) in FAMILY_NAMES.iter().enumerate() {
            let p = w.leaf_family_prob(i);
            let mean = p * n as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            let got = *counts.get(name).unwrap_or(&0) as f64;
            assert!(
                (got - mean).abs() <= 3.0 * sigma,
                "{name}: got {got}, expected {mean:.1} +/- {:.1}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn compose_rate_matches_grammar() {
        let w = GrammarWeights::default();
        let n = 10_000usize;
        let mut rng = rng_for(7, &[]);
        let composed = (0..n)
            .filter(|_| matches!(sample_program(&w, 2, &mut rng), Transformation::Compose(..)))
            .count() as f64;
        let p = w.compose_prob();
        let mean = p * n as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((composed - mean).abs() <= 3.0 * sigma);
    }

    #[test]
    fn sampled_programs_respect_depth_cap() {
        let w = GrammarWeights::default();
        let mut rng = rng_for(5, &[]);
        for _ in 0..2_000 {
            let f = sample_program(&w, 3, &mut rng);
            assert!(f.depth() <= 3);
        }
    }
}
