//! Domain schemas and the shared slot vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

pub type DomainId = usize;
pub type SlotId = usize;

/// Slot used by acts that carry no slot (booking, no-offer).
pub const NONE_SLOT: SlotId = 0;

const DESK_SCHEMA: &str = include_str!("../../schemas/desk.toml");
const PAPER_SCHEMA: &str = include_str!("../../schemas/paper.toml");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotValues {
    pub slot: SlotId,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSchema {
    pub name: String,
    pub bookable: bool,
    /// Constraint slots, in the order a system asks for them.
    pub informable: Vec<SlotValues>,
    /// Extra slots the user provides only when booking.
    pub book: Vec<SlotValues>,
    pub requestable: Vec<SlotId>,
    /// Each entity holds one value index per informable slot.
    pub entities: Vec<Vec<usize>>,
}

impl DomainSchema {
    /// Informable slots followed by booking slots: everything the tracker
    /// records as "informed" for this domain.
    pub fn tracked_slots(&self) -> impl Iterator<Item = &SlotValues> {
        self.informable.iter().chain(&self.book)
    }

    pub fn num_tracked(&self) -> usize {
        self.informable.len() + self.book.len()
    }

    pub fn tracked_index(&self, slot: SlotId) -> Option<usize> {
        self.tracked_slots().position(|s| s.slot == slot)
    }

    pub fn requestable_index(&self, slot: SlotId) -> Option<usize> {
        self.requestable.iter().position(|&s| s == slot)
    }

    /// Number of entities consistent with `constraints` (one entry per
    /// informable slot; `None` means unconstrained).
    pub fn count_matches(&self, constraints: &[Option<usize>]) -> usize {
        self.entities
            .iter()
            .filter(|e| {
                e.iter()
                    .zip(constraints)
                    .all(|(v, c)| c.is_none_or(|c| c == *v))
            })
            .count()
    }
}

/// All domains of an environment plus the global slot vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaRegistry {
    slots: Vec<String>,
    domains: Vec<DomainSchema>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    domain: Vec<RawDomain>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    name: String,
    #[serde(default)]
    bookable: bool,
    informable: Vec<RawSlot>,
    #[serde(default)]
    book: Vec<RawSlot>,
    requestable: Vec<String>,
    #[serde(default)]
    entity: Vec<BTreeMap<String, String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    slot: String,
    values: Vec<String>,
}

impl SchemaRegistry {
    pub fn desk() -> Self {
        Self::from_toml(DESK_SCHEMA).expect("built-in desk schema is valid")
    }

    pub fn paper_shape() -> Self {
        Self::from_toml(PAPER_SCHEMA).expect("built-in paper schema is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let normalize = |s: &str| {
            let s = s.trim().to_lowercase();
            raw.aliases.get(&s).cloned().unwrap_or(s)
        };
        let mut slots = vec!["none".to_string()];
        let mut slot_ids: HashMap<String, SlotId> = HashMap::from([("none".to_string(), NONE_SLOT)]);
        fn intern(slots: &mut Vec<String>, ids: &mut HashMap<String, SlotId>, name: String) -> SlotId {
            if let Some(&id) = ids.get(&name) {
                return id;
            }
            slots.push(name.clone());
            ids.insert(name, slots.len() - 1);
            slots.len() - 1
        }
        if raw.domain.is_empty() {
            return Err(Error::Schema("no domains defined".into()));
        }
        let mut domains = Vec::with_capacity(raw.domain.len());
        for d in &raw.domain {
            let name = d.name.trim().to_lowercase();
            let ctx = |msg: String| Error::Schema(format!("domain {name}: {msg}"));
            let mut seen = std::collections::HashSet::new();
            let mut convert = |list: &[RawSlot]| -> Result<Vec<SlotValues>> {
                list.iter()
                    .map(|s| {
                        let n = normalize(&s.slot);
                        if n == "none" {
                            return Err(ctx("slot name 'none' is reserved".into()));
                        }
                        if !seen.insert(n.clone()) {
                            return Err(ctx(format!("duplicate slot {n}")));
                        }
                        if s.values.is_empty() {
                            return Err(ctx(format!("slot {n} has no values")));
                        }
                        Ok(SlotValues {
                            slot: intern(&mut slots, &mut slot_ids, n),
                            values: s.values.clone(),
                        })
                    })
                    .collect()
            };
            let informable = convert(&d.informable)?;
            let book = convert(&d.book)?;
            if informable.is_empty() {
                return Err(ctx("at least one informable slot is required".into()));
            }
            if d.bookable && book.is_empty() {
                return Err(ctx("bookable domains need booking slots".into()));
            }
            if !d.bookable && !book.is_empty() {
                return Err(ctx("booking slots on a domain that is not bookable".into()));
            }
            let mut requestable = Vec::new();
            for r in &d.requestable {
                let id = intern(&mut slots, &mut slot_ids, normalize(r));
                if requestable.contains(&id) {
                    return Err(ctx(format!("duplicate requestable slot {r}")));
                }
                requestable.push(id);
            }
            if requestable.is_empty() {
                return Err(ctx("at least one requestable slot is required".into()));
            }
            let mut entities = Vec::with_capacity(d.entity.len());
            for (i, e) in d.entity.iter().enumerate() {
                let e: BTreeMap<String, String> =
                    e.iter().map(|(k, v)| (normalize(k), v.clone())).collect();
                let mut row = Vec::with_capacity(informable.len());
                for s in &informable {
                    let sname = &slots[s.slot];
                    let v = e
                        .get(sname)
                        .ok_or_else(|| ctx(format!("entity {i} does not assign {sname}")))?;
                    let idx = s
                        .values
                        .iter()
                        .position(|x| x == v)
                        .ok_or_else(|| ctx(format!("entity {i}: unknown value {v} for {sname}")))?;
                    row.push(idx);
                }
                if e.len() != informable.len() {
                    return Err(ctx(format!("entity {i} assigns non-informable slots")));
                }
                entities.push(row);
            }
            if entities.is_empty() {
                return Err(ctx("the entity database is empty".into()));
            }
            domains.push(DomainSchema {
                name,
                bookable: d.bookable,
                informable,
                book,
                requestable,
                entities,
            });
        }
        let mut names = std::collections::HashSet::new();
        for d in &domains {
            if !names.insert(d.name.clone()) {
                return Err(Error::Schema(format!("duplicate domain {}", d.name)));
            }
        }
        Ok(Self { slots, domains })
    }

    pub fn domains(&self) -> &[DomainSchema] {
        &self.domains
    }

    pub fn domain(&self, id: DomainId) -> &DomainSchema {
        &self.domains[id]
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn domain_id(&self, name: &str) -> Option<DomainId> {
        let name = name.trim().to_lowercase();
        self.domains.iter().position(|d| d.name == name)
    }

    /// Global slot vocabulary; index 0 is the reserved `none` slot.
    pub fn slots(&self) -> &[String] {
        &self.slots
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_name(&self, id: SlotId) -> &str {
        self.slots.get(id).map(String::as_str).unwrap_or("unknown")
    }

    pub fn slot_id(&self, name: &str) -> Option<SlotId> {
        self.slots.iter().position(|s| s == name)
    }

    /// Restricts the registry to `keep` (in registry order). The slot
    /// vocabulary is left untouched so that slot ids stay comparable.
    pub fn subset(&self, keep: &[DomainId]) -> Self {
        Self {
            slots: self.slots.clone(),
            domains: self
                .domains
                .iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, d)| d.clone())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_schema_loads() {
        let reg = SchemaRegistry::desk();
        assert_eq!(reg.num_domains(), 5);
        assert_eq!(reg.slot_name(NONE_SLOT), "none");
        let hotel = reg.domain(reg.domain_id("hotel").unwrap());
        assert!(hotel.bookable);
        for d in reg.domains() {
            assert!(!d.entities.is_empty());
            assert!(d.entities.iter().all(|e| e.len() == d.informable.len()));
        }
        // hotel carries three slots no other domain uses
        let unique: Vec<_> = ["stars", "internet", "parking"]
            .iter()
            .map(|s| reg.slot_id(s).unwrap())
            .collect();
        for (i, d) in reg.domains().iter().enumerate() {
            let uses = d
                .tracked_slots()
                .map(|s| s.slot)
                .chain(d.requestable.iter().copied())
                .any(|s| unique.contains(&s));
            assert_eq!(uses, d.name == "hotel", "domain {i}");
        }
    }

    #[test]
    fn paper_schema_has_seven_domains() {
        assert_eq!(SchemaRegistry::paper_shape().num_domains(), 7);
    }

    #[test]
    fn aliases_are_normalized() {
        let text = r#"
            [aliases]
            pricerange = "price"
            [[domain]]
            name = "Shop"
            requestable = ["Phone"]
            [[domain.informable]]
            slot = "pricerange"
            values = ["cheap"]
            [[domain.entity]]
            PriceRange = "cheap"
        "#;
        let reg = SchemaRegistry::from_toml(text).unwrap();
        let d = reg.domain(0);
        assert_eq!(d.name, "shop");
        assert_eq!(reg.slot_name(d.informable[0].slot), "price");
        assert_eq!(reg.slot_name(d.requestable[0]), "phone");
    }

    #[test]
    fn invalid_schemas_are_rejected() {
        let missing_entity_slot = r#"
            [[domain]]
            name = "a"
            requestable = ["phone"]
            [[domain.informable]]
            slot = "x"
            values = ["1"]
            [[domain.informable]]
            slot = "y"
            values = ["1"]
            [[domain.entity]]
            x = "1"
        "#;
        assert!(matches!(
            SchemaRegistry::from_toml(missing_entity_slot),
            Err(Error::Schema(_))
        ));
        let no_entities = r#"
            [[domain]]
            name = "a"
            requestable = ["phone"]
            [[domain.informable]]
            slot = "x"
            values = ["1"]
        "#;
        assert!(SchemaRegistry::from_toml(no_entities).is_err());
        let dup = r#"
            [[domain]]
            name = "a"
            requestable = ["phone"]
            [[domain.informable]]
            slot = "x"
            values = ["1"]
            [[domain.informable]]
            slot = "x"
            values = ["2"]
            [[domain.entity]]
            x = "1"
        "#;
        assert!(SchemaRegistry::from_toml(dup).is_err());
    }

    #[test]
    fn match_counting() {
        let reg = SchemaRegistry::desk();
        let d = reg.domain(0);
        let n = d.informable.len();
        assert_eq!(d.count_matches(&vec![None; n]), d.entities.len());
        let first = d.entities[0].clone();
        let exact: Vec<_> = first.iter().map(|&v| Some(v)).collect();
        let brute = d.entities.iter().filter(|e| **e == first).count();
        assert_eq!(d.count_matches(&exact), brute);
    }
}
