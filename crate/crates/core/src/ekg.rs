//! Evolution knowledge graph.
//!
//! Entities are records; attribute values are nodes of their own. Besides
//! relational triples (entity, entity, relation) and attribute triples
//! (entity, value, attribute), the graph holds evolution triples
//! (earlier value, later value, attribute) harvested from linked records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::ingest::{AttributeId, EntityId, LinkedPairSet, RecordSet, Schema, ValueDictionary, ValueId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationalTriple {
    pub head: EntityId,
    pub tail: EntityId,
    pub relation: RelationId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeTriple {
    pub entity: EntityId,
    pub value: ValueId,
    pub attribute: AttributeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EvolutionTriple {
    pub head: ValueId,
    pub tail: ValueId,
    pub attribute: AttributeId,
}

impl EvolutionTriple {
    pub fn new(head: ValueId, tail: ValueId, attribute: AttributeId) -> Self {
        EvolutionTriple {
            head,
            tail,
            attribute,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildOptions {
    /// Emit `(v, v, a)` when linked records agree on `a`.
    pub include_identity: bool,
    /// Also emit the reverse of every evolution triple.
    pub undirected: bool,
}

impl BuildOptions {
    /// Flag combination standing in for a plain entity-resolution graph.
    pub fn er_degenerate() -> Self {
        BuildOptions {
            include_identity: true,
            undirected: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvolutionKG {
    schema: Schema,
    dict: ValueDictionary,
    entities: BTreeSet<EntityId>,
    /// V_a restricted to values observed in attribute triples, sorted.
    domains: Vec<Vec<ValueId>>,
    relations: Vec<String>,
    relational: BTreeSet<RelationalTriple>,
    attribute_triples: BTreeSet<AttributeTriple>,
    evolution: BTreeSet<EvolutionTriple>,
    /// (attribute, head) -> observed tails
    evolution_index: BTreeMap<(AttributeId, ValueId), BTreeSet<ValueId>>,
}

/// A relation row as read from a relation file.
pub type RelationRow = (EntityId, EntityId, String);

pub fn build_ekg(
    schema: &Schema,
    dict: &ValueDictionary,
    records_a: &RecordSet,
    records_b: &RecordSet,
    train_links: &LinkedPairSet,
    relations: &[RelationRow],
    options: BuildOptions,
) -> Result<EvolutionKG> {
    let mut entities = BTreeSet::new();
    let mut attribute_triples = BTreeSet::new();
    for r in records_a.iter().chain(records_b.iter()) {
        if !entities.insert(r.id) {
            return Err(Error::DuplicateEntity(r.id));
        }
        r.validate(dict)?;
        for (attribute, value) in r.present() {
            attribute_triples.insert(AttributeTriple {
                entity: r.id,
                value,
                attribute,
            });
        }
    }

    let mut domain_sets: Vec<BTreeSet<ValueId>> = vec![BTreeSet::new(); schema.len()];
    for t in &attribute_triples {
        domain_sets[t.attribute.index()].insert(t.value);
    }

    let mut evolution = BTreeSet::new();
    for &(ha, tb) in train_links.pairs() {
        let h = records_a.get(ha).ok_or(Error::MissingEntity(ha))?;
        let t = records_b.get(tb).ok_or(Error::MissingEntity(tb))?;
        for a in schema.ids() {
            let (Some(v), Some(u)) = (h.value(a), t.value(a)) else {
                continue;
            };
            if v != u || options.include_identity {
                evolution.insert(EvolutionTriple::new(v, u, a));
                if options.undirected {
                    evolution.insert(EvolutionTriple::new(u, v, a));
                }
            }
        }
    }

    let mut relation_names: Vec<String> = Vec::new();
    let mut relational = BTreeSet::new();
    for (head, tail, name) in relations {
        for e in [head, tail] {
            if !entities.contains(e) {
                return Err(Error::MissingEntity(*e));
            }
        }
        if head == tail {
            return Err(Error::Invalid(format!("relation `{name}` links entity {head} to itself")));
        }
        let id = match relation_names.iter().position(|r| r == name) {
            Some(i) => i,
            None => {
                relation_names.push(name.clone());
                relation_names.len() - 1
            }
        };
        relational.insert(RelationalTriple {
            head: *head,
            tail: *tail,
            relation: RelationId(id as u32),
        });
    }

    let evolution_index = index_of(&evolution);
    Ok(EvolutionKG {
        schema: schema.clone(),
        dict: dict.clone(),
        entities,
        domains: domain_sets.into_iter().map(|s| s.into_iter().collect()).collect(),
        relations: relation_names,
        relational,
        attribute_triples,
        evolution,
        evolution_index,
    })
}

fn index_of(evolution: &BTreeSet<EvolutionTriple>) -> BTreeMap<(AttributeId, ValueId), BTreeSet<ValueId>> {
    let mut index: BTreeMap<_, BTreeSet<_>> = BTreeMap::new();
    for t in evolution {
        index.entry((t.attribute, t.head)).or_default().insert(t.tail);
    }
    index
}

/// Read `head;tail;relation` rows. A header row is expected.
pub fn load_relations(path: &Path, delimiter: u8) -> Result<Vec<RelationRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .from_reader(file);
    let mut rows = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", row.len())));
        }
        let id = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map(EntityId)
                .map_err(|_| bad(format!("entity id `{s}` is not an unsigned integer")))
        };
        rows.push((id(&row[0])?, id(&row[1])?, row[2].trim().to_string()));
    }
    Ok(rows)
}

impl EvolutionKG {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn dictionary(&self) -> &ValueDictionary {
        &self.dict
    }

    pub fn entities(&self) -> &BTreeSet<EntityId> {
        &self.entities
    }

    pub fn domain(&self, attribute: AttributeId) -> &[ValueId] {
        self.domains
            .get(attribute.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn num_values(&self) -> usize {
        self.domains.iter().map(Vec::len).sum()
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relational(&self) -> &BTreeSet<RelationalTriple> {
        &self.relational
    }

    pub fn attribute_triples(&self) -> &BTreeSet<AttributeTriple> {
        &self.attribute_triples
    }

    pub fn evolution(&self) -> &BTreeSet<EvolutionTriple> {
        &self.evolution
    }

    pub fn contains_evolution(&self, t: &EvolutionTriple) -> bool {
        self.evolution.contains(t)
    }

    /// E_{v}: tails observed after `head` for `attribute`.
    pub fn observed_tails(&self, attribute: AttributeId, head: ValueId) -> Option<&BTreeSet<ValueId>> {
        self.evolution_index.get(&(attribute, head))
    }

    pub fn evolution_index(&self) -> &BTreeMap<(AttributeId, ValueId), BTreeSet<ValueId>> {
        &self.evolution_index
    }

    /// Draw `k` tail corruptions of `triple` from V_a \ E_{v_i}.
    ///
    /// Sampling is uniform and without replacement while the pool allows it,
    /// with replacement once `k` exceeds the pool. Returns `None` when the
    /// pool is empty; the caller drops that positive from its batch.
    pub fn sample_negatives<R: Rng + ?Sized>(
        &self,
        triple: &EvolutionTriple,
        k: usize,
        rng: &mut R,
    ) -> Option<Vec<EvolutionTriple>> {
        let domain = self.domain(triple.attribute);
        let empty = BTreeSet::new();
        let excluded = self
            .observed_tails(triple.attribute, triple.head)
            .unwrap_or(&empty);
        let pool_size = domain.len().saturating_sub(excluded.len());
        if pool_size == 0 {
            return None;
        }
        let corrupt = |tail| EvolutionTriple::new(triple.head, tail, triple.attribute);

        if pool_size * 2 >= domain.len() {
            let mut out: Vec<ValueId> = Vec::with_capacity(k);
            let distinct = k <= pool_size;
            while out.len() < k {
                let v = domain[rng.random_range(0..domain.len())];
                if excluded.contains(&v) || (distinct && out.contains(&v)) {
                    continue;
                }
                out.push(v);
            }
            return Some(out.into_iter().map(corrupt).collect());
        }

        let pool: Vec<ValueId> = domain.iter().copied().filter(|v| !excluded.contains(v)).collect();
        let picks: Vec<usize> = if k <= pool.len() {
            index::sample(rng, pool.len(), k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..pool.len())).collect()
        };
        Some(picks.into_iter().map(|i| corrupt(pool[i])).collect())
    }

    /// One triple per line, grouped by store: `E`, `V`, `RT`, `AT`, `ET`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for e in &self.entities {
            let _ = writeln!(s, "E\t{e}");
        }
        for a in self.schema.ids() {
            for v in self.domain(a) {
                let key = self.dict.key(*v).unwrap_or("");
                let _ = writeln!(s, "V\t{}\t{}\t{}", v.0, self.schema.name(a), key);
            }
        }
        for t in &self.relational {
            let _ = writeln!(s, "RT\t{}\t{}\t{}", t.head, t.tail, self.relations[t.relation.0 as usize]);
        }
        for t in &self.attribute_triples {
            let _ = writeln!(s, "AT\t{}\t{}\t{}", t.entity, t.value.0, self.schema.name(t.attribute));
        }
        for t in &self.evolution {
            let _ = writeln!(s, "ET\t{}\t{}\t{}", t.head.0, t.tail.0, self.schema.name(t.attribute));
        }
        s
    }
}
