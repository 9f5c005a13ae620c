use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_arm, Policy, PolicyKind, Selection};
use crate::error::Result;
use crate::linalg::mix_seed;

/// Picks an arm uniformly at random every round.
#[derive(Debug)]
pub struct RandomPolicy {
    num_arms: usize,
    rng: ChaCha8Rng,
    rounds: usize,
}

impl RandomPolicy {
    pub fn new(num_arms: usize, seed: u64) -> Self {
        Self {
            num_arms,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(seed, 0)),
            rounds: 0,
        }
    }
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn select(&mut self, _prompt: &[f64]) -> Result<Selection> {
        let arm = self.rng.random_range(0..self.num_arms);
        Ok(Selection::plain(arm, self.num_arms))
    }

    fn ingest(
        &mut self,
        _prompt: &[f64],
        arm: usize,
        _score: f64,
        _stage: Option<usize>,
    ) -> Result<()> {
        check_arm(arm, self.num_arms)?;
        self.rounds += 1;
        Ok(())
    }

    fn add_arm(&mut self) -> Result<()> {
        self.num_arms += 1;
        Ok(())
    }
}

/// Always plays the arm with the best average score over the prompt distribution.
#[derive(Debug)]
pub struct FixedArmPolicy {
    arm: usize,
    num_arms: usize,
    rounds: usize,
}

impl FixedArmPolicy {
    pub fn new(arm: usize, num_arms: usize) -> Self {
        Self {
            arm,
            num_arms,
            rounds: 0,
        }
    }
}

impl Policy for FixedArmPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::OneArmOracle
    }

    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn rounds(&self) -> usize {
        self.rounds
    }

    fn select(&mut self, _prompt: &[f64]) -> Result<Selection> {
        Ok(Selection::plain(self.arm, self.num_arms))
    }

    fn ingest(
        &mut self,
        _prompt: &[f64],
        arm: usize,
        _score: f64,
        _stage: Option<usize>,
    ) -> Result<()> {
        check_arm(arm, self.num_arms)?;
        self.rounds += 1;
        Ok(())
    }

    fn add_arm(&mut self) -> Result<()> {
        self.num_arms += 1;
        Ok(())
    }
}
