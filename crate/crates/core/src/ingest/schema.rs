use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttributeId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ValueId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u64);

impl AttributeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ValueId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ordered attribute set of a record source.
///
/// Attribute ids are the positions in `attributes`, so they are contiguous
/// from zero by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    attributes: Vec<String>,
    blocking: Option<AttributeId>,
}

impl Schema {
    pub fn new<S: AsRef<str>>(names: &[S], blocking: Option<&str>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidSchema("schema has no attributes".into()));
        }
        if names.len() > u16::MAX as usize {
            return Err(Error::InvalidSchema("too many attributes".into()));
        }
        let attributes: Vec<String> = names.iter().map(|n| n.as_ref().trim().to_string()).collect();
        let mut seen = HashMap::new();
        for (i, name) in attributes.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidSchema(format!("attribute {i} has an empty name")));
            }
            if seen.insert(name.to_lowercase(), i).is_some() {
                return Err(Error::InvalidSchema(format!("duplicate attribute name `{name}`")));
            }
        }
        let mut schema = Schema {
            attributes,
            blocking: None,
        };
        if let Some(b) = blocking {
            let id = schema.attribute_id(b).ok_or_else(|| {
                Error::InvalidSchema(format!("blocking attribute `{b}` is not in the schema"))
            })?;
            schema.blocking = Some(id);
        }
        Ok(schema)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.attributes
    }

    pub fn name(&self, id: AttributeId) -> &str {
        &self.attributes[id.index()]
    }

    pub fn ids(&self) -> impl Iterator<Item = AttributeId> + '_ {
        (0..self.attributes.len()).map(|i| AttributeId(i as u16))
    }

    /// Case-insensitive lookup.
    pub fn attribute_id(&self, name: &str) -> Option<AttributeId> {
        let name = name.trim().to_lowercase();
        self.attributes
            .iter()
            .position(|a| a.to_lowercase() == name)
            .map(|i| AttributeId(i as u16))
    }

    pub fn blocking(&self) -> Option<AttributeId> {
        self.blocking
    }

    pub fn with_blocking(mut self, blocking: Option<AttributeId>) -> Result<Self> {
        if let Some(b) = blocking {
            if b.index() >= self.attributes.len() {
                return Err(Error::InvalidSchema(format!("blocking attribute {b} out of range")));
            }
        }
        self.blocking = blocking;
        Ok(self)
    }
}

/// Trim, case-fold and collapse internal whitespace.
pub fn standardize(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Interned attribute values. Domains are disjoint: every value id belongs
/// to exactly one attribute.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValueDictionary {
    entries: Vec<(AttributeId, String)>,
    lookup: HashMap<(AttributeId, String), ValueId>,
    domains: Vec<Vec<ValueId>>,
}

impl ValueDictionary {
    pub fn new(schema: &Schema) -> Self {
        ValueDictionary {
            entries: Vec::new(),
            lookup: HashMap::new(),
            domains: vec![Vec::new(); schema.len()],
        }
    }

    /// Intern an already standardized string.
    pub fn intern(&mut self, attribute: AttributeId, key: &str) -> ValueId {
        if let Some(&id) = self.lookup.get(&(attribute, key.to_string())) {
            return id;
        }
        let id = ValueId(self.entries.len() as u32);
        self.entries.push((attribute, key.to_string()));
        self.lookup.insert((attribute, key.to_string()), id);
        if self.domains.len() <= attribute.index() {
            self.domains.resize(attribute.index() + 1, Vec::new());
        }
        self.domains[attribute.index()].push(id);
        id
    }

    pub fn intern_raw(&mut self, attribute: AttributeId, raw: &str) -> ValueId {
        self.intern(attribute, &standardize(raw))
    }

    pub fn get(&self, attribute: AttributeId, key: &str) -> Option<ValueId> {
        self.lookup.get(&(attribute, key.to_string())).copied()
    }

    pub fn attribute_of(&self, value: ValueId) -> Option<AttributeId> {
        self.entries.get(value.index()).map(|(a, _)| *a)
    }

    pub fn key(&self, value: ValueId) -> Option<&str> {
        self.entries.get(value.index()).map(|(_, k)| k.as_str())
    }

    pub fn domain(&self, attribute: AttributeId) -> &[ValueId] {
        self.domains
            .get(attribute.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_attributes(&self) -> usize {
        self.domains.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ValueId, AttributeId, &str)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (a, k))| (ValueId(i as u32), *a, k.as_str()))
    }

    pub fn contains(&self, attribute: AttributeId, value: ValueId) -> bool {
        self.attribute_of(value) == Some(attribute)
    }
}

/// One row of a record source: a partial map from attributes to values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: EntityId,
    values: Vec<Option<ValueId>>,
}

impl Record {
    pub fn new(id: EntityId, values: Vec<Option<ValueId>>) -> Self {
        Record { id, values }
    }

    pub fn value(&self, attribute: AttributeId) -> Option<ValueId> {
        self.values.get(attribute.index()).copied().flatten()
    }

    pub fn values(&self) -> &[Option<ValueId>] {
        &self.values
    }

    pub fn set(&mut self, attribute: AttributeId, value: Option<ValueId>) {
        if self.values.len() <= attribute.index() {
            self.values.resize(attribute.index() + 1, None);
        }
        self.values[attribute.index()] = value;
    }

    pub fn present(&self) -> impl Iterator<Item = (AttributeId, ValueId)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (AttributeId(i as u16), v)))
    }

    /// Check every present value against the dictionary's domains.
    pub fn validate(&self, dict: &ValueDictionary) -> Result<()> {
        for (a, v) in self.present() {
            if !dict.contains(a, v) {
                return Err(Error::Domain {
                    value: v,
                    attribute: a,
                });
            }
        }
        Ok(())
    }
}

/// Records of one source, in file order, with an id index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordSet {
    records: Vec<Record>,
    index: HashMap<EntityId, usize>,
}

impl RecordSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<Record>) -> Result<Self> {
        let mut set = RecordSet::new();
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: Record) -> Result<()> {
        if self.index.contains_key(&record.id) {
            return Err(Error::Invalid(format!("duplicate entity id {}", record.id)));
        }
        self.index.insert(record.id, self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, id: EntityId) -> Option<&Record> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: EntityId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Record> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl<'a> IntoIterator for &'a RecordSet {
    type Item = &'a Record;
    type IntoIter = std::slice::Iter<'a, Record>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Train,
    Validation,
    Test,
}

/// Ground-truth links between a record set A and a record set B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedPairSet {
    pairs: Vec<(EntityId, EntityId)>,
    pub provenance: Provenance,
}

impl LinkedPairSet {
    /// Duplicates are dropped, first occurrence wins.
    pub fn new(pairs: Vec<(EntityId, EntityId)>, provenance: Provenance) -> Self {
        let mut seen = std::collections::HashSet::new();
        let pairs = pairs.into_iter().filter(|p| seen.insert(*p)).collect();
        LinkedPairSet { pairs, provenance }
    }

    pub fn pairs(&self) -> &[(EntityId, EntityId)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: EntityId, b: EntityId) -> bool {
        self.pairs.contains(&(a, b))
    }

    pub fn validate(&self, a: &RecordSet, b: &RecordSet) -> Result<()> {
        for &(ea, eb) in &self.pairs {
            if !a.contains(ea) {
                return Err(Error::MissingEntity(ea));
            }
            if !b.contains(eb) {
                return Err(Error::MissingEntity(eb));
            }
        }
        Ok(())
    }
}
