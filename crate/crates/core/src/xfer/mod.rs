//! Domain transfer: the factored action embedding and holdout corpora with
//! one domain removed entirely.

mod embedding;

use serde::{Deserialize, Serialize};

pub use embedding::{factorize_action, FactoredVocab};

use crate::dialenv::{ActionCatalog, Corpus, DomainId, SchemaRegistry, StateLayout};
use crate::error::{Error, Result};

/// Drops every episode whose goal or played actions touch `holdout`,
/// rebuilds the catalog from the surviving actions (same target size) and
/// remaps the turn indices.
pub fn filter_corpus(corpus: &Corpus, holdout: DomainId, reg: &SchemaRegistry) -> Result<Corpus> {
    if holdout >= reg.num_domains() {
        return Err(Error::Config(format!("holdout domain id {holdout} is not in the schema")));
    }
    let mut episodes: Vec<_> = corpus
        .episodes
        .iter()
        .filter(|e| !e.touched_domains().contains(&holdout))
        .cloned()
        .collect();
    if episodes.is_empty() {
        return Err(Error::Config(format!(
            "no episodes remain after removing domain {}",
            reg.domain(holdout).name
        )));
    }
    let (catalog, _) =
        ActionCatalog::from_frequencies(episodes.iter().flat_map(|e| e.turns.iter().map(|t| &t.action)), corpus.catalog.len(), reg)?;
    for t in episodes.iter_mut().flat_map(|e| e.turns.iter_mut()) {
        t.index = catalog.nearest(&t.action);
    }
    Ok(Corpus {
        layout_id: corpus.layout_id.clone(),
        state_dim: corpus.state_dim,
        catalog,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutAudit {
    pub episodes: usize,
    pub turns: usize,
    /// Episodes whose goal or actions touch the holdout domain.
    pub touching_episodes: usize,
    /// Catalog entries naming the holdout domain.
    pub touching_actions: usize,
    /// Turns with any holdout-specific state bit set.
    pub touching_states: usize,
}

impl HoldoutAudit {
    pub fn is_clean(&self) -> bool {
        self.touching_episodes == 0 && self.touching_actions == 0 && self.touching_states == 0
    }
}

/// Names of the state features that belong to `domain` alone.
pub fn domain_features(layout: &StateLayout, reg: &SchemaRegistry, domain: DomainId) -> Vec<usize> {
    let name = &reg.domain(domain).name;
    let inner = format!(".{name}.");
    let tail = format!(".{name}");
    layout
        .feature_names()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.contains(&inner) || f.ends_with(&tail))
        .map(|(i, _)| i)
        .collect()
}

/// Counts every trace of `holdout` left in `corpus`.
pub fn audit_corpus(corpus: &Corpus, holdout: DomainId, layout: &StateLayout, reg: &SchemaRegistry) -> HoldoutAudit {
    let bits = domain_features(layout, reg, holdout);
    let touches = |s: &crate::dialenv::StateVector| bits.iter().any(|&i| s.get(i));
    HoldoutAudit {
        episodes: corpus.episodes.len(),
        turns: corpus.num_turns(),
        touching_episodes: corpus.episodes.iter().filter(|e| e.touched_domains().contains(&holdout)).count(),
        touching_actions: corpus.catalog.actions().iter().filter(|a| a.domains().any(|d| d == holdout)).count(),
        touching_states: corpus.turns().filter(|t| touches(&t.state) || touches(&t.next_state)).count(),
    }
}
