//! Agenda-based user simulator.
//!
//! The agenda is a stack of pending goal items grouped by domain; the top
//! group belongs to the domain currently under discussion. Items leave the
//! stack when the user conveys them (constraints) or when the system
//! satisfies them (requests, bookings). A system turn that removes nothing
//! is unhelpful: the user repeats the previous acts and loses patience.

use super::action::{CompositeAction, SysActType};
use super::goal::{SlotValue, UserGoal};
use super::schema::{DomainId, SchemaRegistry, SlotId, NONE_SLOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UserActType {
    Inform,
    Request,
    Book,
    Affirm,
    Confirm,
    Bye,
}

impl UserActType {
    pub const ALL: [UserActType; 6] = [
        UserActType::Inform,
        UserActType::Request,
        UserActType::Book,
        UserActType::Affirm,
        UserActType::Confirm,
        UserActType::Bye,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UserActType::Inform => "inform",
            UserActType::Request => "request",
            UserActType::Book => "book",
            UserActType::Affirm => "affirm",
            UserActType::Confirm => "confirm",
            UserActType::Bye => "bye",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserAct {
    pub domain: DomainId,
    pub act: UserActType,
    pub slot: SlotId,
    pub value: Option<SlotValue>,
}

impl UserAct {
    pub fn new(domain: DomainId, act: UserActType, slot: SlotId) -> Self {
        Self {
            domain,
            act,
            slot,
            value: None,
        }
    }

    pub fn inform(domain: DomainId, slot: SlotId, value: SlotValue) -> Self {
        Self {
            domain,
            act: UserActType::Inform,
            slot,
            value: Some(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AgendaItem {
    /// Index into the domain's tracked slots (informable, then booking).
    Constraint { domain: DomainId, tracked: usize, value: SlotValue },
    Request { domain: DomainId, slot: SlotId },
    Book { domain: DomainId },
}

impl AgendaItem {
    fn domain(&self) -> DomainId {
        match *self {
            AgendaItem::Constraint { domain, .. }
            | AgendaItem::Request { domain, .. }
            | AgendaItem::Book { domain } => domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserTurn {
    pub acts: Vec<UserAct>,
    pub done: bool,
    /// Meaningful once `done`: the whole goal was achieved.
    pub success: bool,
    pub helpful: bool,
}

#[derive(Debug, Clone)]
pub struct UserSimulator {
    goal: UserGoal,
    /// Stack of pending items; the last element is the top.
    agenda: Vec<AgendaItem>,
    /// Domains not yet opened, next one last.
    upcoming: Vec<usize>,
    current: Option<usize>,
    patience: u32,
    unhelpful_streak: u32,
    last_acts: Vec<UserAct>,
    finished: Option<bool>,
}

impl UserSimulator {
    pub fn new(goal: UserGoal, patience: u32) -> Self {
        let upcoming = (0..goal.domains.len()).rev().collect();
        Self {
            goal,
            agenda: Vec::new(),
            upcoming,
            current: None,
            patience: patience.max(1),
            unhelpful_streak: 0,
            last_acts: Vec::new(),
            finished: None,
        }
    }

    pub fn goal(&self) -> &UserGoal {
        &self.goal
    }

    pub fn agenda_len(&self) -> usize {
        self.agenda.len()
    }

    pub fn is_done(&self) -> bool {
        self.finished.is_some()
    }

    pub fn current_domain(&self) -> Option<DomainId> {
        self.current.map(|i| self.goal.domains[i].domain)
    }

    /// The user's first utterance: opens the first goal domain.
    pub fn start(&mut self, reg: &SchemaRegistry) -> Vec<UserAct> {
        let mut acts = Vec::new();
        self.open_next(reg, &mut acts);
        self.last_acts = acts.clone();
        acts
    }

    /// Reacts to one system action.
    pub fn step(&mut self, reg: &SchemaRegistry, system: &CompositeAction) -> UserTurn {
        if let Some(success) = self.finished {
            return UserTurn {
                acts: Vec::new(),
                done: true,
                success,
                helpful: false,
            };
        }
        let Some(active) = self.current_domain() else {
            self.finished = Some(false);
            return UserTurn {
                acts: Vec::new(),
                done: true,
                success: false,
                helpful: false,
            };
        };
        let schema = reg.domain(active);
        let mut acts = Vec::new();
        for a in system.acts().iter().filter(|a| a.domain == active) {
            match a.act {
                SysActType::Request => {
                    if let Some(tracked) = schema.tracked_index(a.slot) {
                        if let Some(pos) = self.agenda.iter().position(|it| {
                            matches!(*it, AgendaItem::Constraint { domain, tracked: t, .. } if domain == active && t == tracked)
                        }) {
                            let AgendaItem::Constraint { value, .. } = self.agenda.remove(pos) else {
                                unreachable!()
                            };
                            acts.push(UserAct::inform(active, a.slot, value));
                        }
                    }
                }
                SysActType::Inform => {
                    let constraints_known = !self.agenda.iter().any(|it| {
                        matches!(*it, AgendaItem::Constraint { domain, tracked, .. }
                            if domain == active && tracked < schema.informable.len())
                    });
                    if constraints_known {
                        if let Some(pos) = self.agenda.iter().position(|it| {
                            *it == AgendaItem::Request { domain: active, slot: a.slot }
                        }) {
                            self.agenda.remove(pos);
                            acts.push(UserAct::new(active, UserActType::Affirm, a.slot));
                        }
                    }
                }
                SysActType::Book => {
                    let ready = !self.agenda.iter().any(|it| {
                        matches!(*it, AgendaItem::Constraint { domain, .. } if domain == active)
                    });
                    if ready {
                        if let Some(pos) = self
                            .agenda
                            .iter()
                            .position(|it| *it == AgendaItem::Book { domain: active })
                        {
                            self.agenda.remove(pos);
                            acts.push(UserAct::new(active, UserActType::Confirm, NONE_SLOT));
                        }
                    }
                }
                SysActType::NoOffer => {}
            }
        }
        let helpful = !acts.is_empty();
        if helpful {
            self.unhelpful_streak = 0;
            if !self.agenda.iter().any(|it| it.domain() == active) {
                if self.upcoming.is_empty() {
                    acts.push(UserAct::new(active, UserActType::Bye, NONE_SLOT));
                    self.finished = Some(true);
                    self.current = None;
                } else {
                    self.open_next(reg, &mut acts);
                }
            }
        } else {
            self.unhelpful_streak += 1;
            if self.unhelpful_streak >= self.patience {
                acts.push(UserAct::new(active, UserActType::Bye, NONE_SLOT));
                self.finished = Some(false);
            } else {
                acts = self.last_acts.clone();
            }
        }
        self.last_acts = acts.clone();
        UserTurn {
            acts,
            done: self.finished.is_some(),
            success: self.finished == Some(true),
            helpful,
        }
    }

    /// Pushes the next domain's items and emits its opening acts: the
    /// volunteered constraints, every request and the booking wish.
    fn open_next(&mut self, reg: &SchemaRegistry, acts: &mut Vec<UserAct>) {
        let Some(gi) = self.upcoming.pop() else {
            return;
        };
        self.current = Some(gi);
        let g = &self.goal.domains[gi];
        let schema = reg.domain(g.domain);
        if g.wants_booking() {
            self.agenda.push(AgendaItem::Book { domain: g.domain });
        }
        for &slot in g.requests.iter().rev() {
            self.agenda.push(AgendaItem::Request {
                domain: g.domain,
                slot,
            });
        }
        if let Some(book) = &g.booking {
            for (i, &v) in book.iter().enumerate().rev() {
                self.agenda.push(AgendaItem::Constraint {
                    domain: g.domain,
                    tracked: schema.informable.len() + i,
                    value: SlotValue::Value(v),
                });
            }
        }
        let mut volunteered = Vec::new();
        for (i, &value) in g.constraints.iter().enumerate().rev() {
            if g.volunteered.contains(&i) {
                volunteered.push(UserAct::inform(g.domain, schema.informable[i].slot, value));
            } else {
                self.agenda.push(AgendaItem::Constraint {
                    domain: g.domain,
                    tracked: i,
                    value,
                });
            }
        }
        volunteered.reverse();
        acts.extend(volunteered);
        for &slot in &g.requests {
            acts.push(UserAct::new(g.domain, UserActType::Request, slot));
        }
        if g.wants_booking() {
            acts.push(UserAct::new(g.domain, UserActType::Book, NONE_SLOT));
        }
    }
}

/// Free-function form of [`UserSimulator::step`].
pub fn user_step(
    user: &mut UserSimulator,
    reg: &SchemaRegistry,
    system_action: &CompositeAction,
) -> UserTurn {
    user.step(reg, system_action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialenv::action::AtomicAct;
    use crate::dialenv::goal::DomainGoal;

    fn reg() -> SchemaRegistry {
        SchemaRegistry::desk()
    }

    fn restaurant_goal(reg: &SchemaRegistry, booking: bool) -> UserGoal {
        let d = reg.domain_id("restaurant").unwrap();
        let e = &reg.domain(d).entities[0];
        UserGoal {
            domains: vec![DomainGoal {
                domain: d,
                constraints: e.iter().map(|&v| SlotValue::Value(v)).collect(),
                volunteered: vec![0],
                booking: booking.then(|| vec![1, 2]),
                requests: vec![reg.slot_id("phone").unwrap()],
            }],
        }
    }

    fn act(reg: &SchemaRegistry, label: &str) -> CompositeAction {
        CompositeAction::parse(label, reg).unwrap()
    }

    #[test]
    fn opening_states_volunteered_constraints_and_requests() {
        let r = reg();
        let mut user = UserSimulator::new(restaurant_goal(&r, true), 3);
        let acts = user.start(&r);
        let kinds: Vec<_> = acts.iter().map(|a| (a.act, r.slot_name(a.slot).to_string())).collect();
        assert_eq!(
            kinds,
            vec![
                (UserActType::Inform, "food".to_string()),
                (UserActType::Request, "phone".to_string()),
                (UserActType::Book, "none".to_string()),
            ]
        );
        // price, area, people, day, phone request, booking
        assert_eq!(user.agenda_len(), 6);
    }

    #[test]
    fn informing_a_requested_slot_pops_it() {
        let r = reg();
        let mut user = UserSimulator::new(restaurant_goal(&r, false), 3);
        user.start(&r);
        user.step(&r, &act(&r, "restaurant-request-price+restaurant-request-area"));
        let before = user.agenda_len();
        let turn = user.step(&r, &act(&r, "restaurant-inform-phone"));
        assert!(turn.helpful);
        assert_eq!(user.agenda_len(), before - 1);
        assert!(turn.done && turn.success);
    }

    #[test]
    fn inform_before_constraints_is_not_an_answer() {
        let r = reg();
        let mut user = UserSimulator::new(restaurant_goal(&r, false), 3);
        user.start(&r);
        let turn = user.step(&r, &act(&r, "restaurant-inform-phone"));
        assert!(!turn.helpful);
        assert!(!turn.done);
    }

    #[test]
    fn patience_runs_out_after_r_unhelpful_turns() {
        let r = reg();
        for patience in [1, 3, 5] {
            let mut user = UserSimulator::new(restaurant_goal(&r, true), patience);
            let opening = user.start(&r);
            let noop = act(&r, "taxi-inform-car");
            for i in 1..=patience {
                let turn = user.step(&r, &noop);
                if i < patience {
                    assert!(!turn.done);
                    assert_eq!(turn.acts, opening, "user repeats itself");
                } else {
                    assert!(turn.done && !turn.success);
                    assert_eq!(turn.acts.last().unwrap().act, UserActType::Bye);
                }
            }
            assert!(user.step(&r, &noop).done);
        }
    }

    #[test]
    fn helpful_turn_resets_patience() {
        let r = reg();
        let mut user = UserSimulator::new(restaurant_goal(&r, true), 2);
        user.start(&r);
        let noop = act(&r, "restaurant-nooffer-none");
        assert!(!user.step(&r, &noop).done);
        assert!(user.step(&r, &act(&r, "restaurant-request-price")).helpful);
        assert!(!user.step(&r, &noop).done);
        assert!(user.step(&r, &noop).done);
    }

    #[test]
    fn full_booking_dialogue_succeeds() {
        let r = reg();
        let mut user = UserSimulator::new(restaurant_goal(&r, true), 3);
        user.start(&r);
        // booking before the booking details are known does nothing
        assert!(!user.step(&r, &act(&r, "restaurant-book-none")).helpful);
        for label in [
            "restaurant-request-price+restaurant-request-area",
            "restaurant-inform-phone",
            "restaurant-request-people+restaurant-request-day",
        ] {
            let t = user.step(&r, &act(&r, label));
            assert!(t.helpful && !t.done, "{label}");
        }
        let t = user.step(&r, &act(&r, "restaurant-book-none"));
        assert!(t.done && t.success);
        assert_eq!(user.agenda_len(), 0);
    }

    #[test]
    fn other_domain_acts_are_ignored() {
        let r = reg();
        let mut user = UserSimulator::new(restaurant_goal(&r, false), 3);
        user.start(&r);
        let hotel = r.domain_id("hotel").unwrap();
        let price = r.slot_id("price").unwrap();
        let a = CompositeAction::single(AtomicAct::new(hotel, SysActType::Request, price));
        assert!(!user.step(&r, &a).helpful);
    }
}
