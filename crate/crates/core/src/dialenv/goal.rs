use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

use super::schema::{DomainId, SchemaRegistry, SlotId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotValue {
    Value(usize),
    DontCare,
}

impl SlotValue {
    pub fn as_constraint(self) -> Option<usize> {
        match self {
            SlotValue::Value(v) => Some(v),
            SlotValue::DontCare => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainGoal {
    pub domain: DomainId,
    /// One value per informable slot of the domain.
    pub constraints: Vec<SlotValue>,
    /// Informable slot indices the user states without being asked.
    pub volunteered: Vec<usize>,
    /// Booking slot values when a booking is required.
    pub booking: Option<Vec<usize>>,
    pub requests: Vec<SlotId>,
}

impl DomainGoal {
    pub fn wants_booking(&self) -> bool {
        self.booking.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserGoal {
    pub domains: Vec<DomainGoal>,
}

impl UserGoal {
    pub fn domain_ids(&self) -> impl Iterator<Item = DomainId> + '_ {
        self.domains.iter().map(|d| d.domain)
    }

    pub fn touches(&self, domain: DomainId) -> bool {
        self.domain_ids().any(|d| d == domain)
    }

    /// True when every domain's constraints match at least one entity.
    pub fn is_satisfiable(&self, reg: &SchemaRegistry) -> bool {
        self.domains.iter().all(|g| {
            let c: Vec<_> = g.constraints.iter().map(|v| v.as_constraint()).collect();
            reg.domain(g.domain).count_matches(&c) > 0
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSampler {
    pub max_domains: usize,
    pub dontcare_prob: f64,
    pub booking_prob: f64,
    pub max_requests: usize,
}

impl Default for GoalSampler {
    fn default() -> Self {
        Self {
            max_domains: 2,
            dontcare_prob: 0.15,
            booking_prob: 0.5,
            max_requests: 2,
        }
    }
}

impl GoalSampler {
    /// Samples a goal over `allowed` domains (all domains when empty).
    /// Constraints are copied from a random database entity, so every goal
    /// is satisfiable.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        reg: &SchemaRegistry,
        allowed: &[DomainId],
    ) -> Result<UserGoal> {
        let pool: Vec<DomainId> = if allowed.is_empty() {
            (0..reg.num_domains()).collect()
        } else {
            allowed.to_vec()
        };
        if pool.is_empty() || self.max_domains == 0 {
            return Err(Error::Schema("goal sampling needs at least one domain".into()));
        }
        if let Some(&bad) = pool.iter().find(|&&d| d >= reg.num_domains()) {
            return Err(Error::Schema(format!("unknown domain id {bad}")));
        }
        let max = self.max_domains.min(pool.len());
        let n = rng.random_range(1..=max);
        let picks = sample(rng, pool.len(), n);
        let mut domains = Vec::with_capacity(n);
        for p in picks.iter() {
            let id = pool[p];
            let schema = reg.domain(id);
            let entity = &schema.entities[rng.random_range(0..schema.entities.len())];
            let constraints = entity
                .iter()
                .map(|&v| {
                    if rng.random_bool(self.dontcare_prob) {
                        SlotValue::DontCare
                    } else {
                        SlotValue::Value(v)
                    }
                })
                .collect();
            let n_inf = schema.informable.len();
            let k = rng.random_range(0..n_inf);
            let mut volunteered = sample(rng, n_inf, k).into_vec();
            volunteered.sort_unstable();
            let booking = (schema.bookable && rng.random_bool(self.booking_prob)).then(|| {
                schema
                    .book
                    .iter()
                    .map(|s| rng.random_range(0..s.values.len()))
                    .collect()
            });
            let max_req = self.max_requests.clamp(1, schema.requestable.len());
            let r = rng.random_range(1..=max_req);
            let mut req_idx = sample(rng, schema.requestable.len(), r).into_vec();
            req_idx.sort_unstable();
            let requests = req_idx.into_iter().map(|i| schema.requestable[i]).collect();
            domains.push(DomainGoal {
                domain: id,
                constraints,
                volunteered,
                booking,
                requests,
            });
        }
        let goal = UserGoal { domains };
        if !goal.is_satisfiable(reg) {
            return Err(Error::Schema("sampled an unsatisfiable goal".into()));
        }
        Ok(goal)
    }
}

/// Samples a goal touching between 1 and `max_domains` domains.
pub fn sample_goal<R: Rng + ?Sized>(
    rng: &mut R,
    reg: &SchemaRegistry,
    max_domains: usize,
) -> Result<UserGoal> {
    GoalSampler {
        max_domains,
        ..GoalSampler::default()
    }
    .sample(rng, reg, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_seed_gives_same_goal() {
        let reg = SchemaRegistry::desk();
        let a = sample_goal(&mut ChaCha8Rng::seed_from_u64(9), &reg, 1).unwrap();
        let b = sample_goal(&mut ChaCha8Rng::seed_from_u64(9), &reg, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_goal_matches_an_entity_by_scan() {
        let reg = SchemaRegistry::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let goal = sample_goal(&mut rng, &reg, 3).unwrap();
            assert!((1..=3).contains(&goal.domains.len()));
            for g in &goal.domains {
                let schema = reg.domain(g.domain);
                let found = schema.entities.iter().any(|e| {
                    e.iter().zip(&g.constraints).all(|(v, c)| match c {
                        SlotValue::Value(x) => x == v,
                        SlotValue::DontCare => true,
                    })
                });
                assert!(found);
                assert!(!g.requests.is_empty());
                assert!(g.volunteered.len() < schema.informable.len());
                assert!(g.booking.is_none() || schema.bookable);
            }
        }
    }

    #[test]
    fn max_domains_one_touches_one_domain() {
        let reg = SchemaRegistry::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            assert_eq!(sample_goal(&mut rng, &reg, 1).unwrap().domains.len(), 1);
        }
    }

    #[test]
    fn restricted_domains_and_bad_config() {
        let reg = SchemaRegistry::desk();
        let hotel = reg.domain_id("hotel").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = GoalSampler::default();
        for _ in 0..100 {
            let g = s.sample(&mut rng, &reg, &[hotel]).unwrap();
            assert!(g.domain_ids().all(|d| d == hotel));
        }
        assert!(matches!(sample_goal(&mut rng, &reg, 0), Err(Error::Schema(_))));
        assert!(s.sample(&mut rng, &reg, &[99]).is_err());
    }
}
