//! System dialogue acts and the composite action catalog.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{reject, Result};

use super::schema::{DomainId, SchemaRegistry, SlotId, NONE_SLOT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SysActType {
    Inform,
    Request,
    Book,
    NoOffer,
}

impl SysActType {
    pub const ALL: [SysActType; 4] = [
        SysActType::Inform,
        SysActType::Request,
        SysActType::Book,
        SysActType::NoOffer,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            SysActType::Inform => "inform",
            SysActType::Request => "request",
            SysActType::Book => "book",
            SysActType::NoOffer => "nooffer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

/// One `(domain, act type, slot)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AtomicAct {
    pub domain: DomainId,
    pub act: SysActType,
    pub slot: SlotId,
}

impl AtomicAct {
    pub fn new(domain: DomainId, act: SysActType, slot: SlotId) -> Self {
        Self { domain, act, slot }
    }

    pub fn book(domain: DomainId) -> Self {
        Self::new(domain, SysActType::Book, NONE_SLOT)
    }

    pub fn label(&self, reg: &SchemaRegistry) -> String {
        format!(
            "{}-{}-{}",
            reg.domains().get(self.domain).map(|d| d.name.as_str()).unwrap_or("unknown"),
            self.act.name(),
            reg.slot_name(self.slot)
        )
    }

    pub fn parse(label: &str, reg: &SchemaRegistry) -> Result<Self> {
        let mut parts = label.split('-');
        let (Some(d), Some(a), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            reject!("malformed act label {label:?}");
        };
        let Some(domain) = reg.domain_id(d) else {
            reject!("unknown domain {d:?}");
        };
        let Some(act) = SysActType::parse(a) else {
            reject!("unknown act type {a:?}");
        };
        let Some(slot) = reg.slot_id(s) else {
            reject!("unknown slot {s:?}");
        };
        Ok(Self::new(domain, act, slot))
    }
}

/// A set of atomic acts executed in one system turn. Kept sorted and
/// deduplicated so that equal sets compare equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CompositeAction {
    acts: Vec<AtomicAct>,
}

impl CompositeAction {
    pub fn new(mut acts: Vec<AtomicAct>) -> Result<Self> {
        if acts.is_empty() {
            reject!("a composite action needs at least one atomic act");
        }
        acts.sort();
        acts.dedup();
        Ok(Self { acts })
    }

    pub fn single(act: AtomicAct) -> Self {
        Self { acts: vec![act] }
    }

    pub fn acts(&self) -> &[AtomicAct] {
        &self.acts
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        self.acts.iter().map(|a| a.domain)
    }

    pub fn label(&self, reg: &SchemaRegistry) -> String {
        self.acts
            .iter()
            .map(|a| a.label(reg))
            .collect::<Vec<_>>()
            .join("+")
    }

    pub fn parse(label: &str, reg: &SchemaRegistry) -> Result<Self> {
        let acts = label
            .split('+')
            .map(|a| AtomicAct::parse(a.trim(), reg))
            .collect::<Result<Vec<_>>>()?;
        Self::new(acts)
    }

    /// Jaccard overlap between the act sets.
    pub fn overlap(&self, other: &CompositeAction) -> f64 {
        let inter = self.acts.iter().filter(|a| other.acts.contains(a)).count();
        let union = self.acts.len() + other.acts.len() - inter;
        inter as f64 / union as f64
    }
}

impl fmt::Display for CompositeAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<_> = self
            .acts
            .iter()
            .map(|a| format!("{}:{}:{}", a.domain, a.act.name(), a.slot))
            .collect();
        write!(f, "{}", parts.join("+"))
    }
}

/// Ordered list of the composite actions an agent may choose from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCatalog {
    actions: Vec<CompositeAction>,
    index: HashMap<CompositeAction, usize>,
}

impl ActionCatalog {
    pub fn new(actions: Vec<CompositeAction>) -> Result<Self> {
        if actions.is_empty() {
            reject!("empty action catalog");
        }
        let mut index = HashMap::with_capacity(actions.len());
        for (i, a) in actions.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                reject!("duplicate catalog entry {a}");
            }
        }
        Ok(Self { actions, index })
    }

    /// The `size` most frequent composite actions of `actions`, ties broken
    /// by label. Returns the catalog and whether it had to be truncated
    /// because fewer distinct actions exist.
    pub fn from_frequencies<'a, I>(actions: I, size: usize, reg: &SchemaRegistry) -> Result<(Self, bool)>
    where
        I: IntoIterator<Item = &'a CompositeAction>,
    {
        let mut counts: HashMap<&CompositeAction, usize> = HashMap::new();
        for a in actions {
            *counts.entry(a).or_default() += 1;
        }
        if counts.is_empty() {
            reject!("cannot build a catalog from an empty corpus");
        }
        let mut ranked: Vec<(usize, String, &CompositeAction)> = counts
            .into_iter()
            .map(|(a, n)| (n, a.label(reg), a))
            .collect();
        ranked.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
        let truncated = ranked.len() < size;
        if truncated {
            log::warn!(
                "corpus has only {} distinct actions, catalog truncated from {size}",
                ranked.len()
            );
        }
        let actions = ranked.into_iter().take(size).map(|(_, _, a)| a.clone()).collect();
        Ok((Self::new(actions)?, truncated))
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&CompositeAction> {
        self.actions.get(index)
    }

    pub fn actions(&self) -> &[CompositeAction] {
        &self.actions
    }

    pub fn index_of(&self, action: &CompositeAction) -> Option<usize> {
        self.index.get(action).copied()
    }

    /// Exact index when cataloged, otherwise the entry with the largest act
    /// overlap (lowest index on ties).
    pub fn nearest(&self, action: &CompositeAction) -> usize {
        if let Some(i) = self.index_of(action) {
            return i;
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, a) in self.actions.iter().enumerate() {
            let o = a.overlap(action);
            if o > best.1 {
                best = (i, o);
            }
        }
        best.0
    }

    /// Stable digest of the catalog content, used to check that checkpoints
    /// were produced against the same action space.
    pub fn fingerprint(&self, reg: &SchemaRegistry) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for a in &self.actions {
            h.update(a.label(reg).as_bytes());
            h.update(b"\n");
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One label per line, in catalog order.
    pub fn to_text(&self, reg: &SchemaRegistry) -> String {
        let mut out = String::new();
        for a in &self.actions {
            out.push_str(&a.label(reg));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str, reg: &SchemaRegistry) -> Result<Self> {
        let actions = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| CompositeAction::parse(l, reg))
            .collect::<Result<Vec<_>>>()?;
        Self::new(actions)
    }
}
