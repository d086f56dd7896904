use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::ingest::{AttributeId, EntityId, LinkedPairSet, RecordSet, ValueId};
use crate::par;

/// An (A-record, B-record) pair to classify.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub a_entity: EntityId,
    pub b_entity: EntityId,
    /// `Some(true)` for a true link.
    pub label: Option<bool>,
    pub probability: Option<f64>,
}

impl CandidatePair {
    pub fn new(a_entity: EntityId, b_entity: EntityId) -> Self {
        CandidatePair {
            a_entity,
            b_entity,
            label: None,
            probability: None,
        }
    }

    pub fn labeled(a_entity: EntityId, b_entity: EntityId, label: bool) -> Self {
        CandidatePair {
            label: Some(label),
            ..CandidatePair::new(a_entity, b_entity)
        }
    }

    pub fn key(&self) -> (EntityId, EntityId) {
        (self.a_entity, self.b_entity)
    }
}

/// Default guard on unblocked cross products.
pub const DEFAULT_MAX_CROSS_PRODUCT: u64 = 10_000_000;

/// Pairs of A x B agreeing on the blocking attribute, in A order then B
/// order. Records missing the blocking value join no pair. With no blocking
/// attribute the full cross product is returned, up to `cap` pairs.
pub fn block_candidates(
    a: &RecordSet,
    b: &RecordSet,
    blocking: Option<AttributeId>,
    cap: u64,
) -> Result<Vec<CandidatePair>> {
    let Some(attr) = blocking else {
        let size = a.len() as u128 * b.len() as u128;
        if size > cap as u128 {
            return Err(Error::CrossProductTooLarge { size, cap });
        }
        return Ok(par::flat_map(a.records(), |h| {
            b.iter().map(|t| CandidatePair::new(h.id, t.id)).collect()
        }));
    };
    let mut blocks: BTreeMap<ValueId, Vec<EntityId>> = BTreeMap::new();
    for t in b {
        if let Some(v) = t.value(attr) {
            blocks.entry(v).or_default().push(t.id);
        }
    }
    Ok(par::flat_map(a.records(), |h| {
        h.value(attr)
            .and_then(|v| blocks.get(&v))
            .map(|ids| ids.iter().map(|&t| CandidatePair::new(h.id, t)).collect())
            .unwrap_or_default()
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPairs {
    pub pairs: Vec<CandidatePair>,
    /// Truth links with no surviving candidate pair.
    pub blocking_lost: Vec<(EntityId, EntityId)>,
}

impl LabeledPairs {
    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.label == Some(true)).count()
    }

    /// Split into (true links, non-links).
    pub fn partition(&self) -> (Vec<CandidatePair>, Vec<CandidatePair>) {
        self.pairs.iter().partition(|p| p.label == Some(true))
    }
}

pub fn label_pairs(pairs: &[CandidatePair], truth: &LinkedPairSet) -> LabeledPairs {
    let truth_set: HashSet<(EntityId, EntityId)> = truth.pairs().iter().copied().collect();
    let labeled: Vec<CandidatePair> = pairs
        .iter()
        .map(|p| CandidatePair {
            label: Some(truth_set.contains(&p.key())),
            ..*p
        })
        .collect();
    let present: HashSet<(EntityId, EntityId)> = pairs.iter().map(CandidatePair::key).collect();
    let blocking_lost = truth.pairs().iter().filter(|k| !present.contains(k)).copied().collect();
    LabeledPairs {
        pairs: labeled,
        blocking_lost,
    }
}
