//! Binary state vector layout.
//!
//! The vector is a concatenation of named segments, one per feature family
//! of the tracker, followed by zero padding up to the configured width:
//!
//! | segment       | bits                                                        |
//! |---------------|-------------------------------------------------------------|
//! | `match_count` | active-domain database matches: 0, 1, 2-4, 5+                |
//! | `booking`     | active booking available; per bookable domain wanted, booked |
//! | `informable`  | per domain and tracked slot: informed; active domain missing slots over the global slot vocabulary |
//! | `requestable` | per domain and requestable slot: requested; active domain pending requests over the global slot vocabulary |
//! | `user_action` | last user turn: domain, act types, slots, unknown reference   |
//! | `repeat`      | repeat count of the last user turn: 1, 2, 3, 4+              |
//! | `padding`     | always zero                                                 |
//!
//! [`StateLayout::feature_names`] names every bit.

use std::fmt;

use crate::error::{reject, Result};

use super::schema::{SchemaRegistry, NONE_SLOT};
use super::tracker::TrackerState;
use super::user::UserActType;

pub const LAYOUT_VERSION: &str = "dialstate-v1";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateVector(Vec<u8>);

impl StateVector {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            reject!("state vector entries must be 0 or 1");
        }
        Ok(Self(bits))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn hamming(&self, other: &StateVector) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    pub fn write_f64(&self, out: &mut [f64]) {
        for (o, &b) in out.iter_mut().zip(&self.0) {
            *o = b as f64;
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }

    /// Bits packed most-significant first into bytes, zero padded, as
    /// lowercase hex.
    pub fn to_hex(&self) -> String {
        let mut out = String::with_capacity(self.0.len().div_ceil(8) * 2);
        for chunk in self.0.chunks(8) {
            let mut byte = 0u8;
            for (i, &b) in chunk.iter().enumerate() {
                byte |= b << (7 - i);
            }
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    pub fn from_hex(hex: &str, dim: usize) -> Result<Self> {
        if hex.len() != dim.div_ceil(8) * 2 {
            reject!("hex state has {} chars, expected {}", hex.len(), dim.div_ceil(8) * 2);
        }
        let mut bits = Vec::with_capacity(dim);
        for i in 0..hex.len() / 2 {
            let Ok(byte) = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16) else {
                reject!("invalid hex state {hex:?}");
            };
            for k in 0..8 {
                if bits.len() < dim {
                    bits.push((byte >> (7 - k)) & 1);
                } else if (byte >> (7 - k)) & 1 == 1 {
                    reject!("non-zero padding bits in hex state");
                }
            }
        }
        Ok(Self(bits))
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    segments: Vec<Segment>,
    names: Vec<String>,
    dim: usize,
}

impl StateLayout {
    /// Layout for `reg`, padded to `dim` bits. Fails when the schema needs
    /// more than `dim` bits.
    pub fn new(reg: &SchemaRegistry, dim: usize) -> Result<Self> {
        let (mut segments, mut names) = Self::features(reg);
        let natural = names.len();
        if dim < natural {
            reject!("state layout needs {natural} bits but the configured dimension is {dim}");
        }
        segments.push(Segment {
            name: "padding",
            start: natural,
            len: dim - natural,
        });
        names.extend((natural..dim).map(|i| format!("padding.{i}")));
        Ok(Self {
            segments,
            names,
            dim,
        })
    }

    fn features(reg: &SchemaRegistry) -> (Vec<Segment>, Vec<String>) {
        let mut names: Vec<String> = Vec::new();
        let mut segments = Vec::new();
        let mut push = |name: &'static str, features: Vec<String>, names: &mut Vec<String>| {
            segments.push(Segment {
                name,
                start: names.len(),
                len: features.len(),
            });
            names.extend(features);
        };
        let domains = reg.domains();
        let slot_names: Vec<&str> = reg.slots()[1..].iter().map(String::as_str).collect();

        push(
            "match_count",
            ["0", "1", "2-4", "5+"].iter().map(|b| format!("match.{b}")).collect(),
            &mut names,
        );

        let mut booking = vec!["booking.available".to_string()];
        for d in domains.iter().filter(|d| d.bookable) {
            booking.push(format!("booking.{}.wanted", d.name));
            booking.push(format!("booking.{}.booked", d.name));
        }
        push("booking", booking, &mut names);

        let mut informable = Vec::new();
        for d in domains {
            for s in d.tracked_slots() {
                informable.push(format!("informed.{}.{}", d.name, reg.slot_name(s.slot)));
            }
        }
        informable.extend(slot_names.iter().map(|s| format!("active.missing.{s}")));
        push("informable", informable, &mut names);

        let mut requestable = Vec::new();
        for d in domains {
            for &s in &d.requestable {
                requestable.push(format!("requested.{}.{}", d.name, reg.slot_name(s)));
            }
        }
        requestable.extend(slot_names.iter().map(|s| format!("active.pending.{s}")));
        push("requestable", requestable, &mut names);

        let mut user = Vec::new();
        user.extend(domains.iter().map(|d| format!("user.domain.{}", d.name)));
        user.extend(UserActType::ALL.iter().map(|a| format!("user.act.{}", a.name())));
        user.extend(slot_names.iter().map(|s| format!("user.slot.{s}")));
        user.push("user.unknown".to_string());
        push("user_action", user, &mut names);

        push(
            "repeat",
            ["1", "2", "3", "4+"].iter().map(|b| format!("repeat.{b}")).collect(),
            &mut names,
        );

        (segments, names)
    }

    /// Width without padding.
    pub fn natural_dim(reg: &SchemaRegistry) -> usize {
        Self::features(reg).1.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, feature: &str) -> Option<usize> {
        self.names.iter().position(|n| n == feature)
    }

    /// Identifier written into corpus headers and checkpoints.
    pub fn version_id(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        let short: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        format!("{LAYOUT_VERSION}-{}-{short}", self.dim)
    }

    pub fn vectorize(&self, t: &TrackerState, reg: &SchemaRegistry) -> StateVector {
        let mut bits = vec![0u8; self.dim];
        let mut at = 0;
        let nslots = reg.num_slots() - 1;
        let slot_bit = |slot: usize| slot.checked_sub(1).filter(|&s| s < nslots);

        if let Some(b) = t.match_bucket {
            bits[at + b.index()] = 1;
        }
        at += 4;

        bits[at] = t.booking_available(reg) as u8;
        at += 1;
        for (d, schema) in reg.domains().iter().enumerate() {
            if schema.bookable {
                bits[at] = t.booking_wanted[d] as u8;
                bits[at + 1] = t.booked[d] as u8;
                at += 2;
            }
        }

        for row in &t.informed {
            for v in row {
                bits[at] = v.is_some() as u8;
                at += 1;
            }
        }
        for s in t.missing_slots(reg) {
            if let Some(i) = slot_bit(s) {
                bits[at + i] = 1;
            }
        }
        at += nslots;

        for row in &t.requested {
            for &r in row {
                bits[at] = r as u8;
                at += 1;
            }
        }
        for s in t.pending_requests(reg) {
            if let Some(i) = slot_bit(s) {
                bits[at + i] = 1;
            }
        }
        at += nslots;

        let nd = reg.num_domains();
        for a in &t.last_user_acts {
            if a.domain < nd {
                bits[at + a.domain] = 1;
            }
            bits[at + nd + a.act as usize] = 1;
            if a.slot != NONE_SLOT {
                if let Some(i) = slot_bit(a.slot) {
                    bits[at + nd + UserActType::ALL.len() + i] = 1;
                }
            }
        }
        at += nd + UserActType::ALL.len() + nslots;
        bits[at] = t.unknown as u8;
        at += 1;

        let r = (t.repeat.clamp(1, 4) - 1) as usize;
        if !t.last_user_acts.is_empty() {
            bits[at + r] = 1;
        }
        StateVector(bits)
    }
}

/// Free-function form of [`StateLayout::vectorize`].
pub fn vectorize_state(layout: &StateLayout, t: &TrackerState, reg: &SchemaRegistry) -> StateVector {
    layout.vectorize(t, reg)
}
