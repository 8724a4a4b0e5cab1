use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StoryVariable;

/// Inclusive bounds for the sentence count of a new story part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBounds {
    pub min: u32,
    pub max: u32,
}

impl Default for LengthBounds {
    fn default() -> Self {
        Self { min: 2, max: 6 }
    }
}

pub fn pick_story_length(rng: &mut impl Rng, bounds: LengthBounds) -> u32 {
    rng.gen_range(bounds.min..=bounds.max.max(bounds.min))
}

pub fn pick_variable(rng: &mut impl Rng) -> StoryVariable {
    let weights = StoryVariable::WEIGHTED.map(|(_, w)| w);
    let dist = WeightedIndex::new(weights).expect("static weights are positive");
    StoryVariable::WEIGHTED[dist.sample(rng)].0
}

/// Per-session randomness. Draw `i` always comes from stream `i` of a
/// generator seeded with the session seed, so replaying a session only
/// needs the seed and the draw counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionRng {
    seed: u64,
    draws: u64,
}

impl SessionRng {
    pub fn new(seed: u64, draws: u64) -> Self {
        Self { seed, draws }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    fn next_stream(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.draws);
        self.draws += 1;
        rng
    }

    pub fn next_length(&mut self, bounds: LengthBounds) -> u32 {
        pick_story_length(&mut self.next_stream(), bounds)
    }

    pub fn next_variable(&mut self) -> StoryVariable {
        pick_variable(&mut self.next_stream())
    }
}
