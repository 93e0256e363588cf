//! Rule-based dialogue state tracker.

use super::goal::SlotValue;
use super::schema::{DomainId, SchemaRegistry, SlotId};
use super::user::{UserAct, UserActType};

/// Database match-count buckets for the active domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatchBucket {
    None,
    One,
    Few,
    Many,
}

impl MatchBucket {
    pub fn from_count(n: usize) -> Self {
        match n {
            0 => MatchBucket::None,
            1 => MatchBucket::One,
            2..=4 => MatchBucket::Few,
            _ => MatchBucket::Many,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrackerState {
    /// Per domain, per tracked slot (informable then booking).
    pub informed: Vec<Vec<Option<SlotValue>>>,
    /// Per domain, per requestable slot: the user asked for it.
    pub requested: Vec<Vec<bool>>,
    /// Per domain, per requestable slot: the user acknowledged an answer.
    pub answered: Vec<Vec<bool>>,
    pub booking_wanted: Vec<bool>,
    pub booked: Vec<bool>,
    pub active: Option<DomainId>,
    /// `None` before any domain is active.
    pub match_bucket: Option<MatchBucket>,
    pub last_user_acts: Vec<UserAct>,
    pub repeat: u32,
    pub turn: u32,
    /// A user act referred to a slot or domain outside the schema.
    pub unknown: bool,
    pub user_done: bool,
}

impl TrackerState {
    pub fn initial(reg: &SchemaRegistry) -> Self {
        let d = reg.domains();
        Self {
            informed: d.iter().map(|s| vec![None; s.num_tracked()]).collect(),
            requested: d.iter().map(|s| vec![false; s.requestable.len()]).collect(),
            answered: d.iter().map(|s| vec![false; s.requestable.len()]).collect(),
            booking_wanted: vec![false; d.len()],
            booked: vec![false; d.len()],
            active: None,
            match_bucket: None,
            last_user_acts: Vec::new(),
            repeat: 1,
            turn: 0,
            unknown: false,
            user_done: false,
        }
    }

    /// Informable and booking slots of the active domain still unknown, in
    /// schema order. Booking slots only count once a booking was asked for.
    pub fn missing_slots(&self, reg: &SchemaRegistry) -> Vec<SlotId> {
        let Some(d) = self.active else {
            return Vec::new();
        };
        let schema = reg.domain(d);
        schema
            .tracked_slots()
            .enumerate()
            .filter(|(i, _)| *i < schema.informable.len() || self.booking_wanted[d])
            .filter(|(i, _)| self.informed[d][*i].is_none())
            .map(|(_, s)| s.slot)
            .collect()
    }

    pub fn missing_informable(&self, reg: &SchemaRegistry) -> Vec<SlotId> {
        let Some(d) = self.active else {
            return Vec::new();
        };
        let schema = reg.domain(d);
        schema
            .informable
            .iter()
            .enumerate()
            .filter(|(i, _)| self.informed[d][*i].is_none())
            .map(|(_, s)| s.slot)
            .collect()
    }

    pub fn pending_requests(&self, reg: &SchemaRegistry) -> Vec<SlotId> {
        let Some(d) = self.active else {
            return Vec::new();
        };
        reg.domain(d)
            .requestable
            .iter()
            .enumerate()
            .filter(|(i, _)| self.requested[d][*i] && !self.answered[d][*i])
            .map(|(_, &s)| s)
            .collect()
    }

    /// A booking for the active domain was asked for, all its details are
    /// known and it has not been made yet.
    pub fn booking_available(&self, reg: &SchemaRegistry) -> bool {
        match self.active {
            Some(d) => {
                self.booking_wanted[d] && !self.booked[d] && self.missing_slots(reg).is_empty()
            }
            None => false,
        }
    }

    fn constraints(&self, reg: &SchemaRegistry, d: DomainId) -> Vec<Option<usize>> {
        let n = reg.domain(d).informable.len();
        self.informed[d][..n]
            .iter()
            .map(|v| v.and_then(SlotValue::as_constraint))
            .collect()
    }
}

fn same_act_set(a: &[UserAct], b: &[UserAct]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort();
    b.sort();
    a == b
}

/// Folds one user turn into the tracked state. Slot and domain references
/// outside the schema set the `unknown` flag instead of failing.
pub fn track_state(prev: &TrackerState, user_acts: &[UserAct], reg: &SchemaRegistry) -> TrackerState {
    let mut next = prev.clone();
    next.turn = prev.turn + 1;
    next.repeat = if !prev.last_user_acts.is_empty() && same_act_set(&prev.last_user_acts, user_acts) {
        prev.repeat + 1
    } else {
        1
    };
    for act in user_acts {
        let Some(schema) = reg.domains().get(act.domain) else {
            next.unknown = true;
            continue;
        };
        let d = act.domain;
        if act.act != UserActType::Bye {
            next.active = Some(d);
        }
        match act.act {
            UserActType::Inform => match (schema.tracked_index(act.slot), act.value) {
                (Some(i), Some(v)) => next.informed[d][i] = Some(v),
                _ => next.unknown = true,
            },
            UserActType::Request | UserActType::Affirm => match schema.requestable_index(act.slot) {
                Some(i) => {
                    next.requested[d][i] = true;
                    if act.act == UserActType::Affirm {
                        next.answered[d][i] = true;
                    }
                }
                None => next.unknown = true,
            },
            UserActType::Book => {
                if schema.bookable {
                    next.booking_wanted[d] = true;
                } else {
                    next.unknown = true;
                }
            }
            UserActType::Confirm => next.booked[d] = true,
            UserActType::Bye => next.user_done = true,
        }
    }
    next.match_bucket = next
        .active
        .map(|d| MatchBucket::from_count(reg.domain(d).count_matches(&next.constraints(reg, d))));
    next.last_user_acts = user_acts.to_vec();
    next
}
