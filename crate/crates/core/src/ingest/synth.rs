//! Synthetic linked datasets with controlled attribute evolution.
//!
//! Dataset A is drawn from per-attribute vocabularies. A fraction of A is
//! copied into B as true duplicates; each copy first passes through the
//! evolution rule table (e.g. `single -> married`) and then through
//! corruption noise (typos, reassignment, missing values). The remainder of B
//! is fresh records. Everything is driven by one seeded ChaCha stream.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::load::{write_links, write_records};
use crate::ingest::partition::LinkedDataset;
use crate::ingest::schema::{
    standardize, AttributeId, EntityId, LinkedPairSet, Provenance, Record, RecordSet, Schema,
    ValueDictionary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Vocabulary {
    /// `count` distinct pronounceable pseudo-words.
    Words { count: usize },
    /// Decimal integers in `start..=end`.
    Integers { start: i64, end: i64 },
    Values { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub vocabulary: Vocabulary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub typo_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_rate: Option<f64>,
    /// Probability that a duplicate's value is redrawn uniformly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reassign_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionRule {
    pub attribute: String,
    pub from: String,
    pub to: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corruption {
    #[serde(default)]
    pub typo_rate: f64,
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub reassign_rate: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Corruption {
            typo_rate: 0.05,
            missing_rate: 0.02,
            reassign_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub records_a: usize,
    pub records_b: usize,
    /// Fraction of `min(records_a, records_b)` that has a duplicate in B.
    pub duplicate_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocking: Option<String>,
    #[serde(default)]
    pub corruption: Corruption,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub rules: Vec<EvolutionRule>,
}

impl SynthConfig {
    /// Febrl-shaped bibliographic-style data: 5,000 + 5,000 records with
    /// roughly two thirds duplicated, blocked on surname.
    pub fn febrl_like() -> Self {
        let occupations = [
            "apprentice", "carpenter", "day labourer", "farmer", "weaver", "baker", "merchant",
            "mason", "tailor", "shoemaker", "servant", "housework", "student", "clerk", "smith",
            "miller", "driver", "teacher", "nurse", "retired",
        ];
        let attr = |name: &str, vocabulary| AttributeSpec {
            name: name.into(),
            vocabulary,
            typo_rate: None,
            missing_rate: None,
            reassign_rate: None,
        };
        let rule = |attribute: &str, from: &str, to: &str, probability| EvolutionRule {
            attribute: attribute.into(),
            from: from.into(),
            to: to.into(),
            probability,
        };
        SynthConfig {
            records_a: 5000,
            records_b: 5000,
            duplicate_fraction: 0.65,
            blocking: Some("surname".into()),
            corruption: Corruption::default(),
            attributes: vec![
                attr("given_name", Vocabulary::Words { count: 300 }),
                AttributeSpec {
                    typo_rate: Some(0.01),
                    ..attr("surname", Vocabulary::Words { count: 300 })
                },
                attr("birth_year", Vocabulary::Integers { start: 1900, end: 1979 }),
                attr(
                    "civil_status",
                    Vocabulary::Values {
                        values: vec!["single".into(), "married".into(), "widowed".into()],
                    },
                ),
                attr(
                    "occupation",
                    Vocabulary::Values {
                        values: occupations.iter().map(|s| s.to_string()).collect(),
                    },
                ),
                attr("address", Vocabulary::Words { count: 800 }),
            ],
            rules: vec![
                rule("civil_status", "single", "married", 0.3),
                rule("civil_status", "married", "widowed", 0.1),
                rule("occupation", "apprentice", "carpenter", 0.5),
                rule("occupation", "student", "clerk", 0.4),
                rule("occupation", "student", "teacher", 0.2),
                rule("occupation", "day labourer", "farmer", 0.3),
                rule("occupation", "carpenter", "retired", 0.1),
            ],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| toml_error(&e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("synth config serializes")
    }

    pub fn schema(&self) -> Result<Schema> {
        let names: Vec<&str> = self.attributes.iter().map(|a| a.name.as_str()).collect();
        Schema::new(&names, self.blocking.as_deref())
            .map_err(|e| Error::config("attributes", e.to_string()))
    }
}

pub(crate) fn toml_error(e: &toml::de::Error) -> Error {
    // toml reports unknown/missing keys inside the message; surface the span text
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".to_string());
    Error::config(key, msg)
}

/// A rule after resolution against the interned vocabulary.
#[derive(Debug, Clone, Copy, PartialEq)]
struct ResolvedRule {
    to: usize,
    probability: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub schema: Schema,
    pub dict: ValueDictionary,
    pub data: LinkedDataset,
    /// The rule table used, so learned embeddings can be checked against it.
    pub rules: Vec<EvolutionRule>,
}

impl SyntheticData {
    /// Write `A.csv`, `B.csv`, `truth_links.csv` and `rules.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_records(&dir.join("A.csv"), &self.schema, &self.dict, &self.data.a, b',')?;
        write_records(&dir.join("B.csv"), &self.schema, &self.dict, &self.data.b, b',')?;
        write_links(&dir.join("truth_links.csv"), &self.data.links)?;
        let mut rules = String::from("attribute,from,to,probability\n");
        for r in &self.rules {
            rules.push_str(&format!("{},{},{},{:?}\n", r.attribute, r.from, r.to, r.probability));
        }
        let path = dir.join("rules.csv");
        std::fs::write(&path, rules).map_err(|e| Error::io(path, e))
    }
}

struct AttributePlan {
    vocab: Vec<String>,
    typo: f64,
    missing: f64,
    reassign: f64,
    /// keyed by vocabulary index
    rules: HashMap<usize, Vec<ResolvedRule>>,
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticData> {
    let schema = config.schema()?;
    validate_rate("duplicate_fraction", config.duplicate_fraction)?;
    validate_rate("corruption.typo_rate", config.corruption.typo_rate)?;
    validate_rate("corruption.missing_rate", config.corruption.missing_rate)?;
    validate_rate("corruption.reassign_rate", config.corruption.reassign_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut plans = Vec::with_capacity(config.attributes.len());
    for spec in &config.attributes {
        let vocab = build_vocabulary(&spec.name, &spec.vocabulary, &mut rng)?;
        let rate = |key: &str, own: Option<f64>, default: f64| -> Result<f64> {
            let r = own.unwrap_or(default);
            validate_rate(&format!("attributes.{}.{key}", spec.name), r)?;
            Ok(r)
        };
        plans.push(AttributePlan {
            typo: rate("typo_rate", spec.typo_rate, config.corruption.typo_rate)?,
            missing: rate("missing_rate", spec.missing_rate, config.corruption.missing_rate)?,
            reassign: rate("reassign_rate", spec.reassign_rate, config.corruption.reassign_rate)?,
            vocab,
            rules: HashMap::new(),
        });
    }
    for (i, rule) in config.rules.iter().enumerate() {
        let key = format!("rules[{i}]");
        let a = schema
            .attribute_id(&rule.attribute)
            .ok_or_else(|| Error::config(&key, format!("unknown attribute `{}`", rule.attribute)))?;
        let plan = &mut plans[a.index()];
        let find = |v: &str| {
            let v = standardize(v);
            plan.vocab.iter().position(|x| *x == v).ok_or_else(|| {
                Error::config(&key, format!("value `{v}` is not in the vocabulary of `{}`", rule.attribute))
            })
        };
        let from = find(&rule.from)?;
        let to = find(&rule.to)?;
        validate_rate(&format!("{key}.probability"), rule.probability)?;
        plan.rules.entry(from).or_default().push(ResolvedRule {
            to,
            probability: rule.probability,
        });
    }
    for (a, plan) in plans.iter().enumerate() {
        for (from, rules) in &plan.rules {
            let total: f64 = rules.iter().map(|r| r.probability).sum();
            if total > 1.0 + 1e-12 {
                return Err(Error::config(
                    "rules",
                    format!(
                        "transition probabilities out of `{}` for `{}` sum to {total} > 1",
                        plan.vocab[*from],
                        schema.name(AttributeId(a as u16))
                    ),
                ));
            }
        }
    }

    // Interning order is vocabulary order, so value ids do not depend on
    // which values happen to be drawn.
    let mut dict = ValueDictionary::new(&schema);
    let ids: Vec<Vec<_>> = plans
        .iter()
        .enumerate()
        .map(|(a, p)| p.vocab.iter().map(|v| dict.intern(AttributeId(a as u16), v)).collect())
        .collect();

    let fresh = |rng: &mut ChaCha8Rng| -> Vec<Option<usize>> {
        plans
            .iter()
            .map(|p| {
                let v = rng.random_range(0..p.vocab.len());
                (!rng.random_bool(p.missing)).then_some(v)
            })
            .collect()
    };

    let rows_a: Vec<Vec<Option<usize>>> = (0..config.records_a).map(|_| fresh(&mut rng)).collect();
    let n_dup = (config.duplicate_fraction * config.records_a.min(config.records_b) as f64).round() as usize;
    let mut dup_sources = index::sample(&mut rng, config.records_a, n_dup).into_vec();
    dup_sources.sort_unstable();

    // B rows: (source A index if duplicate, row)
    let mut rows_b: Vec<(Option<usize>, Vec<Option<Cell>>)> = Vec::with_capacity(config.records_b);
    for &src in &dup_sources {
        let mut row = Vec::with_capacity(plans.len());
        for (a, plan) in plans.iter().enumerate() {
            row.push(duplicate_cell(rows_a[src][a], plan, &mut rng));
        }
        rows_b.push((Some(src), row));
    }
    while rows_b.len() < config.records_b {
        let row = fresh(&mut rng).into_iter().map(|v| v.map(Cell::Vocab)).collect();
        rows_b.push((None, row));
    }
    rows_b.shuffle(&mut rng);

    let offset_b = config.records_a as u64;
    let mut a_set = RecordSet::new();
    for (i, row) in rows_a.iter().enumerate() {
        let values = row
            .iter()
            .enumerate()
            .map(|(a, v)| v.map(|v| ids[a][v]))
            .collect();
        a_set.push(Record::new(EntityId(i as u64), values))?;
    }
    let mut b_set = RecordSet::new();
    let mut links = Vec::with_capacity(n_dup);
    for (j, (src, row)) in rows_b.iter().enumerate() {
        let id = EntityId(offset_b + j as u64);
        let values = row
            .iter()
            .enumerate()
            .map(|(a, cell)| {
                let attr = AttributeId(a as u16);
                cell.as_ref().map(|c| match c {
                    Cell::Vocab(v) => ids[a][*v],
                    Cell::Text(s) => dict.intern(attr, s),
                })
            })
            .collect();
        b_set.push(Record::new(id, values))?;
        if let Some(src) = src {
            links.push((EntityId(*src as u64), id));
        }
    }
    links.sort_unstable();

    Ok(SyntheticData {
        schema,
        dict,
        data: LinkedDataset {
            a: a_set,
            b: b_set,
            links: LinkedPairSet::new(links, Provenance::Train),
        },
        rules: config.rules.clone(),
    })
}

enum Cell {
    Vocab(usize),
    Text(String),
}

fn duplicate_cell(source: Option<usize>, plan: &AttributePlan, rng: &mut ChaCha8Rng) -> Option<Cell> {
    let mut v = source?;
    if let Some(rules) = plan.rules.get(&v) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for r in rules {
            acc += r.probability;
            if u < acc {
                v = r.to;
                break;
            }
        }
    }
    if rng.random_bool(plan.reassign) {
        v = rng.random_range(0..plan.vocab.len());
    }
    let cell = if rng.random_bool(plan.typo) {
        let text = typo(&plan.vocab[v], rng);
        match plan.vocab.iter().position(|x| *x == text) {
            Some(i) => Cell::Vocab(i),
            None => Cell::Text(text),
        }
    } else {
        Cell::Vocab(v)
    };
    (!rng.random_bool(plan.missing)).then_some(cell)
}

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";
const DIGITS: &[u8] = b"0123456789";

/// One edit: substitute, delete, insert or transpose. Never returns the
/// input unchanged or an empty string.
fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let alphabet = if !chars.is_empty() && chars.iter().all(|c| c.is_ascii_digit()) {
        DIGITS
    } else {
        LETTERS
    };
    let pick = |rng: &mut ChaCha8Rng| alphabet[rng.random_range(0..alphabet.len())] as char;
    loop {
        let mut out = chars.clone();
        let n = out.len();
        match rng.random_range(0..4) {
            0 if n > 0 => {
                let i = rng.random_range(0..n);
                out[i] = pick(rng);
            }
            1 if n > 1 => {
                out.remove(rng.random_range(0..n));
            }
            2 => {
                let i = rng.random_range(0..=n);
                out.insert(i, pick(rng));
            }
            3 if n > 1 => {
                let i = rng.random_range(0..n - 1);
                out.swap(i, i + 1);
            }
            _ => continue,
        }
        if out != chars && !out.is_empty() {
            chars = out;
            break;
        }
    }
    chars.into_iter().collect()
}

fn build_vocabulary(name: &str, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
    let key = format!("attributes.{name}.vocabulary");
    let out: Vec<String> = match vocab {
        Vocabulary::Words { count } => {
            const ONSETS: &[&str] = &[
                "b", "c", "d", "f", "g", "j", "l", "m", "n", "p", "r", "s", "t", "v", "x", "ll",
                "br", "gr", "tr", "",
            ];
            const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ia", "ue"];
            const CODAS: &[&str] = &["", "", "", "s", "n", "l", "r", "t"];
            let mut seen = BTreeSet::new();
            let mut words = Vec::with_capacity(*count);
            let mut attempts = 0usize;
            while words.len() < *count {
                attempts += 1;
                if attempts > count.saturating_mul(1000).max(10_000) {
                    return Err(Error::config(&key, format!("cannot generate {count} distinct words")));
                }
                let syllables = rng.random_range(2..=3);
                let mut w = String::new();
                for _ in 0..syllables {
                    w.push_str(ONSETS.choose(rng).unwrap());
                    w.push_str(VOWELS.choose(rng).unwrap());
                }
                w.push_str(CODAS.choose(rng).unwrap());
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
            words
        }
        Vocabulary::Integers { start, end } => {
            if end < start {
                return Err(Error::config(&key, "integer range is empty"));
            }
            (*start..=*end).map(|i| i.to_string()).collect()
        }
        Vocabulary::Values { values } => {
            let mut seen = BTreeSet::new();
            let mut out = Vec::new();
            for v in values {
                let v = standardize(v);
                if v.is_empty() {
                    return Err(Error::config(&key, "empty vocabulary value"));
                }
                if !seen.insert(v.clone()) {
                    return Err(Error::config(&key, format!("duplicate vocabulary value `{v}`")));
                }
                out.push(v);
            }
            out
        }
    };
    if out.is_empty() {
        return Err(Error::config(&key, "vocabulary is empty"));
    }
    Ok(out)
}

fn validate_rate(key: &str, r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(key, format!("{r} is not a probability")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rules: Vec<EvolutionRule>, corruption: Corruption) -> SynthConfig {
        SynthConfig {
            records_a: 200,
            records_b: 200,
            duplicate_fraction: 1.0,
            blocking: None,
            corruption,
            attributes: vec![
                AttributeSpec {
                    name: "name".into(),
                    vocabulary: Vocabulary::Words { count: 50 },
                    typo_rate: None,
                    missing_rate: None,
                    reassign_rate: None,
                },
                AttributeSpec {
                    name: "civil_status".into(),
                    vocabulary: Vocabulary::Values {
                        values: vec!["single".into(), "married".into(), "widowed".into()],
                    },
                    typo_rate: None,
                    missing_rate: None,
                    reassign_rate: None,
                },
            ],
            rules,
        }
    }

    fn clean() -> Corruption {
        Corruption {
            typo_rate: 0.0,
            missing_rate: 0.0,
            reassign_rate: 0.0,
        }
    }

    #[test]
    fn zero_corruption_duplicates_are_identical() {
        let s = generate_synthetic(&small(vec![], clean()), 3).unwrap();
        assert_eq!(s.data.links.len(), 200);
        for &(a, b) in s.data.links.pairs() {
            let ra = s.data.a.get(a).unwrap();
            let rb = s.data.b.get(b).unwrap();
            assert_eq!(ra.values(), rb.values());
        }
    }

    #[test]
    fn forced_rule_always_fires() {
        let rules = vec![EvolutionRule {
            attribute: "civil_status".into(),
            from: "single".into(),
            to: "married".into(),
            probability: 1.0,
        }];
        let s = generate_synthetic(&small(rules, clean()), 5).unwrap();
        let status = AttributeId(1);
        let single = s.dict.get(status, "single").unwrap();
        let married = s.dict.get(status, "married").unwrap();
        let mut checked = 0;
        for &(a, b) in s.data.links.pairs() {
            if s.data.a.get(a).unwrap().value(status) == Some(single) {
                assert_eq!(s.data.b.get(b).unwrap().value(status), Some(married));
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn rule_with_unknown_value_is_config_error() {
        let rules = vec![EvolutionRule {
            attribute: "civil_status".into(),
            from: "single".into(),
            to: "divorced".into(),
            probability: 0.5,
        }];
        match generate_synthetic(&small(rules, clean()), 5) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "rules[0]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn febrl_test_split_shape() {
        let mut c = SynthConfig::febrl_like();
        c.records_a = 500;
        c.records_b = 500;
        c.duplicate_fraction = 0.68;
        let s = generate_synthetic(&c, 11).unwrap();
        assert_eq!(s.data.a.len(), 500);
        assert_eq!(s.data.b.len(), 500);
        assert_eq!(s.data.links.len(), 340);
        s.data.links.validate(&s.data.a, &s.data.b).unwrap();
        for r in s.data.a.iter().chain(s.data.b.iter()) {
            r.validate(&s.dict).unwrap();
        }
    }

    #[test]
    fn each_a_record_has_at_most_one_duplicate() {
        let s = generate_synthetic(&SynthConfig::febrl_like(), 1).unwrap();
        let mut seen = BTreeSet::new();
        for (a, _) in s.data.links.pairs() {
            assert!(seen.insert(*a));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let c = SynthConfig::febrl_like();
        let x = generate_synthetic(&c, 9).unwrap();
        let y = generate_synthetic(&c, 9).unwrap();
        assert_eq!(x.data, y.data);
        assert_eq!(x.dict, y.dict);
    }

    #[test]
    fn typo_always_changes_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for w in ["a", "ab", "maria", "1901"] {
            for _ in 0..50 {
                let t = typo(w, &mut rng);
                assert_ne!(t, w);
                assert!(!t.is_empty());
            }
        }
    }

    #[test]
    fn config_toml_round_trip_and_unknown_key() {
        let c = SynthConfig::febrl_like();
        assert_eq!(SynthConfig::from_toml(&c.to_toml()).unwrap(), c);
        let bad = format!("bogus_key = 3\n{}", c.to_toml());
        match SynthConfig::from_toml(&bad) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "bogus_key"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
