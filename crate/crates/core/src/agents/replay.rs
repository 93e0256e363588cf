use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dialenv::{Corpus, RewardSource, StateVector, TurnStatus};
use crate::error::{reject, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
}

/// Fixed-capacity transition store. Expert entries live in their own pool
/// and are only removed by [`ReplayBuffer::evict_expert_to`]; agent entries
/// form a ring that overwrites its oldest entry once the buffer is full.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    expert: Vec<Transition>,
    agent: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            reject!("replay capacity must be positive");
        }
        Ok(Self {
            capacity,
            expert: Vec::new(),
            agent: Vec::new(),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.expert.len() + self.agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn expert_len(&self) -> usize {
        self.expert.len()
    }

    pub fn expert_fraction(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.expert.len() as f64 / self.len() as f64
        }
    }

    /// Adds an agent transition. Returns `false` when the buffer is full of
    /// expert entries and the transition was dropped.
    pub fn push(&mut self, t: Transition) -> bool {
        if self.len() < self.capacity {
            self.agent.push(t);
        } else if self.agent.is_empty() {
            return false;
        } else {
            let i = self.cursor % self.agent.len();
            self.agent[i] = t;
            self.cursor = i + 1;
        }
        true
    }

    /// Adds expert transitions until the buffer is full; returns how many
    /// were stored.
    pub fn seed_expert<I: IntoIterator<Item = Transition>>(&mut self, transitions: I) -> usize {
        let mut n = 0;
        for t in transitions {
            if self.len() >= self.capacity {
                break;
            }
            self.expert.push(t);
            n += 1;
        }
        n
    }

    /// Removes uniformly chosen expert entries until at most `target`
    /// remain.
    pub fn evict_expert_to<R: Rng + ?Sized>(&mut self, target: usize, rng: &mut R) {
        while self.expert.len() > target {
            let i = rng.random_range(0..self.expert.len());
            self.expert.swap_remove(i);
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        if i < self.expert.len() {
            &self.expert[i]
        } else {
            &self.agent[i - self.expert.len()]
        }
    }

    pub fn is_expert(&self, i: usize) -> bool {
        i < self.expert.len()
    }

    /// `n` entries drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| self.get(rng.random_range(0..self.len()))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    Removal,
    Keep,
}

/// Share of the seeded expert transitions kept in the buffer over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub mode: WarmupMode,
    /// Fraction of the expert corpus loaded at the start.
    pub initial_fraction: f64,
    /// Frames over which removal mode decays linearly to zero.
    pub horizon_frames: u64,
}

impl WarmupSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.initial_fraction) {
            reject!("initial expert fraction {} outside [0, 1]", self.initial_fraction);
        }
        Ok(())
    }

    pub fn fraction(&self, frame: u64) -> f64 {
        match self.mode {
            WarmupMode::Keep => self.initial_fraction,
            WarmupMode::Removal if self.horizon_frames == 0 => 0.0,
            WarmupMode::Removal => {
                let left = 1.0 - frame as f64 / self.horizon_frames as f64;
                self.initial_fraction * left.clamp(0.0, 1.0)
            }
        }
    }

    /// Expert entries to keep at `frame` out of a corpus of `corpus_turns`.
    pub fn target_count(&self, frame: u64, corpus_turns: usize) -> usize {
        (self.fraction(frame) * corpus_turns as f64).round() as usize
    }
}

/// Corpus transitions re-scored under `reward`, in corpus order. The
/// transition action is the turn's catalog index.
pub fn expert_transitions(corpus: &Corpus, reward: &dyn RewardSource, t_max: u32) -> Vec<Transition> {
    let mut out = Vec::with_capacity(corpus.num_turns());
    for ep in &corpus.episodes {
        for t in &ep.turns {
            let status = match (t.done, ep.success) {
                (false, _) => TurnStatus::Ongoing,
                (true, true) => TurnStatus::Success,
                (true, false) => TurnStatus::Failure,
            };
            let action = &corpus.catalog.actions()[t.index];
            out.push(Transition {
                state: t.state.clone(),
                action: t.index,
                reward: reward.reward(&t.state, action, Some(t.index), status, t_max),
                next_state: t.next_state.clone(),
                done: t.done,
            });
        }
    }
    out
}

/// Prefills `buffer` with a uniformly chosen `initial_fraction` of the
/// expert transitions; returns the number stored.
pub fn wdqn_seed<R: Rng + ?Sized>(
    buffer: &mut ReplayBuffer,
    expert: Vec<Transition>,
    schedule: &WarmupSchedule,
    rng: &mut R,
) -> Result<usize> {
    schedule.validate()?;
    let n = schedule.target_count(0, expert.len());
    let picks = rand::seq::index::sample(rng, expert.len(), n.min(expert.len()));
    let mut expert: Vec<Option<Transition>> = expert.into_iter().map(Some).collect();
    let mut chosen: Vec<usize> = picks.into_vec();
    chosen.sort_unstable();
    Ok(buffer.seed_expert(chosen.into_iter().map(|i| expert[i].take().expect("distinct picks"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialenv::StateVector;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(a: usize) -> Transition {
        Transition {
            state: StateVector::zeros(4),
            action: a,
            reward: 0.0,
            next_state: StateVector::zeros(4),
            done: false,
        }
    }

    #[test]
    fn removal_reaches_zero_at_horizon() {
        let s = WarmupSchedule {
            mode: WarmupMode::Removal,
            initial_fraction: 1.0,
            horizon_frames: 100,
        };
        assert_eq!(s.fraction(0), 1.0);
        assert_eq!(s.fraction(50), 0.5);
        assert_eq!(s.fraction(100), 0.0);
        assert_eq!(s.fraction(1000), 0.0);
    }

    #[test]
    fn keep_mode_never_evicts() {
        let s = WarmupSchedule {
            mode: WarmupMode::Keep,
            initial_fraction: 1.0,
            horizon_frames: 100,
        };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let mut b = ReplayBuffer::new(100).unwrap();
        assert_eq!(wdqn_seed(&mut b, (0..30).map(tr).collect(), &s, &mut r).unwrap(), 30);
        for f in 0..500 {
            b.evict_expert_to(s.target_count(f, 30), &mut r);
            b.push(tr(99));
        }
        assert_eq!(b.expert_len(), 30);
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn seeding_respects_capacity() {
        let s = WarmupSchedule {
            mode: WarmupMode::Removal,
            initial_fraction: 1.0,
            horizon_frames: 10,
        };
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut b = ReplayBuffer::new(20).unwrap();
        assert_eq!(wdqn_seed(&mut b, (0..50).map(tr).collect(), &s, &mut r).unwrap(), 20);
        assert_eq!(b.len(), 20);
        assert!(!b.push(tr(1)) || b.expert_len() < 20);
    }

    #[test]
    fn sampling_is_uniform_over_contents() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut b = ReplayBuffer::new(4).unwrap();
        b.seed_expert([tr(0), tr(1)]);
        b.push(tr(2));
        b.push(tr(3));
        let mut counts = [0usize; 4];
        for t in b.sample(40_000, &mut r) {
            counts[t.action] += 1;
        }
        for c in counts {
            // 3 sigma of a binomial(40000, 1/4)
            assert!((c as f64 - 10_000.0).abs() < 3.0 * (40_000.0f64 * 0.25 * 0.75).sqrt(), "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn size_never_exceeds_capacity(cap in 1usize..30, seeded in 0usize..40, pushes in 0usize..100) {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            let mut b = ReplayBuffer::new(cap).unwrap();
            b.seed_expert((0..seeded).map(tr));
            for i in 0..pushes {
                b.push(tr(i));
                prop_assert!(b.len() <= cap);
                if i % 7 == 0 {
                    let keep = b.expert_len() / 2;
                    b.evict_expert_to(keep, &mut r);
                }
            }
            prop_assert!(b.len() <= cap);
        }

        #[test]
        fn removal_fraction_is_non_increasing(h in 1u64..1000, a in 0u64..2000, d in 0u64..2000) {
            let s = WarmupSchedule { mode: WarmupMode::Removal, initial_fraction: 0.8, horizon_frames: h };
            prop_assert!(s.fraction(a + d) <= s.fraction(a));
            prop_assert!((0.0..=1.0).contains(&s.fraction(a)));
        }
    }
}
