//! Scripted expert policy used to generate the training corpus.

use rand::Rng;

use super::action::{AtomicAct, CompositeAction, SysActType};
use super::schema::{SchemaRegistry, NONE_SLOT};
use super::tracker::TrackerState;

/// Rule-based system policy over the tracked state:
///
/// 1. request every missing informable slot, plus the booking details
///    when a booking was asked for;
/// 2. otherwise inform every pending request and book when possible;
/// 3. otherwise book.
///
/// Without an active domain it emits a `nooffer`.
pub fn expert_policy(t: &TrackerState, reg: &SchemaRegistry) -> CompositeAction {
    let Some(d) = t.active else {
        return CompositeAction::single(AtomicAct::new(0, SysActType::NoOffer, NONE_SLOT));
    };
    let missing = t.missing_slots(reg);
    let mut acts: Vec<AtomicAct> = if !missing.is_empty() {
        missing
            .into_iter()
            .map(|s| AtomicAct::new(d, SysActType::Request, s))
            .collect()
    } else {
        t.pending_requests(reg)
            .into_iter()
            .map(|s| AtomicAct::new(d, SysActType::Inform, s))
            .collect()
    };
    if t.booking_available(reg) {
        acts.push(AtomicAct::book(d));
    }
    if acts.is_empty() {
        acts.push(AtomicAct::new(d, SysActType::NoOffer, NONE_SLOT));
    }
    CompositeAction::new(acts).expect("expert actions are non-empty")
}

/// A single random atomic act in the active domain (or any domain before
/// one is active).
pub fn random_atomic_action<R: Rng + ?Sized>(
    t: &TrackerState,
    reg: &SchemaRegistry,
    rng: &mut R,
) -> CompositeAction {
    let d = t.active.unwrap_or_else(|| rng.random_range(0..reg.num_domains()));
    let schema = reg.domain(d);
    let act = SysActType::ALL[rng.random_range(0..SysActType::ALL.len())];
    let slot = match act {
        SysActType::Request => {
            let tracked: Vec<_> = schema.tracked_slots().map(|s| s.slot).collect();
            tracked[rng.random_range(0..tracked.len())]
        }
        SysActType::Inform => schema.requestable[rng.random_range(0..schema.requestable.len())],
        SysActType::Book | SysActType::NoOffer => NONE_SLOT,
    };
    CompositeAction::single(AtomicAct::new(d, act, slot))
}

/// Expert with action-level noise: with probability `noise` the turn is
/// replaced by [`random_atomic_action`].
pub fn noisy_expert<R: Rng + ?Sized>(
    t: &TrackerState,
    reg: &SchemaRegistry,
    noise: f64,
    rng: &mut R,
) -> CompositeAction {
    if noise > 0.0 && rng.random_bool(noise.min(1.0)) {
        random_atomic_action(t, reg, rng)
    } else {
        expert_policy(t, reg)
    }
}
