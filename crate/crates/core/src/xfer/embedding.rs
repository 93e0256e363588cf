use serde::{Deserialize, Serialize};

use crate::dialenv::{CompositeAction, SchemaRegistry, SysActType};
use crate::error::{reject, Result};

/// Segment widths of the factored action embedding: domains, act types and
/// the global slot vocabulary (including `none`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactoredVocab {
    pub num_domains: usize,
    pub num_acts: usize,
    pub num_slots: usize,
}

impl FactoredVocab {
    pub fn from_registry(reg: &SchemaRegistry) -> Self {
        Self {
            num_domains: reg.num_domains(),
            num_acts: SysActType::ALL.len(),
            num_slots: reg.num_slots(),
        }
    }

    pub fn width(&self) -> usize {
        self.num_domains + self.num_acts + self.num_slots
    }

    /// Bit index of each segment for one atomic act.
    pub fn offsets(&self) -> [usize; 3] {
        [0, self.num_domains, self.num_domains + self.num_acts]
    }
}

/// Domain, act-type and slot multi-hot segments, concatenated. Each atomic
/// act sets one bit per segment; a composite sets the union.
pub fn factorize_action(a: &CompositeAction, vocab: &FactoredVocab) -> Result<Vec<f64>> {
    let mut out = vec![0.0; vocab.width()];
    let [_, act_off, slot_off] = vocab.offsets();
    for act in a.acts() {
        if act.domain >= vocab.num_domains || act.act.index() >= vocab.num_acts || act.slot >= vocab.num_slots {
            reject!("atomic act {act:?} outside the factored vocabulary");
        }
        out[act.domain] = 1.0;
        out[act_off + act.act.index()] = 1.0;
        out[slot_off + act.slot] = 1.0;
    }
    Ok(out)
}
