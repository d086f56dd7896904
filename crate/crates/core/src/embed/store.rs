use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::ekg::EvolutionKG;
use crate::embed::{EmbedHyperparams, Norm};
use crate::error::{Error, Result};
use crate::ingest::{AttributeId, Schema, ValueDictionary, ValueId};

/// Dense vectors for every attribute value and every attribute.
///
/// Value vectors are indexed by value id and laid out contiguously. Each
/// vector's initial state is a pure function of `(seed, attribute name,
/// value key)`, so values interned after training (out-of-vocabulary at
/// prediction time) get the same vector no matter when they are added.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    seed: u64,
    norm: Norm,
    attribute_names: Vec<String>,
    value_entries: Vec<(AttributeId, String)>,
    values: Vec<f64>,
    attributes: Vec<f64>,
}

pub fn init_embeddings(ekg: &EvolutionKG, hp: &EmbedHyperparams) -> Result<EmbeddingStore> {
    hp.validate()?;
    EmbeddingStore::for_dictionary(ekg.schema(), ekg.dictionary(), hp.dim, hp.seed, hp.norm)
}

impl EmbeddingStore {
    pub fn for_dictionary(
        schema: &Schema,
        dict: &ValueDictionary,
        dim: usize,
        seed: u64,
        norm: Norm,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "embedding dimension must be at least 1"));
        }
        let mut store = EmbeddingStore {
            dim,
            seed,
            norm,
            attribute_names: schema.names().to_vec(),
            value_entries: Vec::with_capacity(dict.len()),
            values: Vec::with_capacity(dict.len() * dim),
            attributes: Vec::with_capacity(schema.len() * dim),
        };
        for name in schema.names() {
            let v = derive_vector(seed, dim, &["attribute", name]);
            store.attributes.extend_from_slice(&v);
        }
        store.extend(dict)?;
        Ok(store)
    }

    /// Reassemble a store from persisted parts.
    pub(crate) fn from_parts(
        dim: usize,
        seed: u64,
        norm: Norm,
        attribute_names: Vec<String>,
        value_entries: Vec<(AttributeId, String)>,
        values: Vec<f64>,
        attributes: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0
            || values.len() != value_entries.len() * dim
            || attributes.len() != attribute_names.len() * dim
        {
            return Err(Error::ModelFormat("vector payload does not match the header".into()));
        }
        if values.iter().chain(attributes.iter()).any(|x| !x.is_finite()) {
            return Err(Error::ModelFormat("non-finite vector entry".into()));
        }
        Ok(EmbeddingStore {
            dim,
            seed,
            norm,
            attribute_names,
            value_entries,
            values,
            attributes,
        })
    }

    /// Add vectors for dictionary entries this store has not seen yet.
    ///
    /// The dictionary must extend the one the store was built from.
    pub fn extend(&mut self, dict: &ValueDictionary) -> Result<()> {
        for (id, attribute, key) in dict.iter() {
            match self.value_entries.get(id.index()) {
                Some((a, k)) if *a == attribute && k == key => continue,
                Some(_) => {
                    return Err(Error::Invalid(format!(
                        "dictionary entry {id} does not match the embedding store"
                    )))
                }
                None => {}
            }
            let name = self
                .attribute_names
                .get(attribute.index())
                .ok_or_else(|| Error::Invalid(format!("attribute {attribute} unknown to the embedding store")))?;
            let mut v = derive_vector(self.seed, self.dim, &["value", name, key]);
            normalize(&mut v);
            self.values.extend_from_slice(&v);
            self.value_entries.push((attribute, key.to_string()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The norm the vectors were trained under; used when scoring pairs.
    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn num_values(&self) -> usize {
        self.value_entries.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn value_entries(&self) -> &[(AttributeId, String)] {
        &self.value_entries
    }

    /// Rebuild the dictionary this store covers, with identical ids.
    pub fn dictionary(&self) -> ValueDictionary {
        let schema = Schema::new(&self.attribute_names, None).expect("store attribute names are valid");
        let mut dict = ValueDictionary::new(&schema);
        for (a, k) in &self.value_entries {
            dict.intern(*a, k);
        }
        dict
    }

    pub fn value(&self, v: ValueId) -> &[f64] {
        let i = v.index() * self.dim;
        &self.values[i..i + self.dim]
    }

    pub fn attribute(&self, a: AttributeId) -> &[f64] {
        let i = a.index() * self.dim;
        &self.attributes[i..i + self.dim]
    }

    pub(crate) fn value_mut(&mut self, v: usize) -> &mut [f64] {
        let i = v * self.dim;
        &mut self.values[i..i + self.dim]
    }

    pub(crate) fn attribute_mut(&mut self, a: usize) -> &mut [f64] {
        let i = a * self.dim;
        &mut self.attributes[i..i + self.dim]
    }

    pub(crate) fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn raw_attributes(&self) -> &[f64] {
        &self.attributes
    }

    pub fn attribute_of(&self, v: ValueId) -> Option<AttributeId> {
        self.value_entries.get(v.index()).map(|(a, _)| *a)
    }

    /// `-||θ_v + θ_a - θ_u||_p`; 0 is a perfect translation.
    pub fn ea_score(&self, v: ValueId, u: ValueId, a: AttributeId, norm: Norm) -> Result<f64> {
        for x in [v, u] {
            if self.attribute_of(x) != Some(a) {
                return Err(Error::Domain {
                    value: x,
                    attribute: a,
                });
            }
        }
        Ok(self.ea_score_unchecked(v, u, a, norm))
    }

    pub(crate) fn ea_score_unchecked(&self, v: ValueId, u: ValueId, a: AttributeId, norm: Norm) -> f64 {
        -translation_distance(self.value(v), self.attribute(a), self.value(u), norm)
    }

    pub fn max_value_norm(&self) -> f64 {
        self.values
            .chunks_exact(self.dim)
            .map(l2)
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().chain(self.attributes.iter()).all(|x| x.is_finite())
    }
}

/// `||h + r - t||_p`
pub fn translation_distance(head: &[f64], relation: &[f64], tail: &[f64], norm: Norm) -> f64 {
    let diffs = head.iter().zip(relation).zip(tail).map(|((h, r), t)| h + r - t);
    match norm {
        Norm::L1 => diffs.map(f64::abs).sum(),
        Norm::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Scale back onto the unit ball if outside it.
pub(crate) fn project_unit_ball(v: &mut [f64]) {
    let n = l2(v);
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Uniform in `[-6/sqrt(d), 6/sqrt(d)]` per coordinate, seeded by hashing the
/// store seed with `parts`.
fn derive_vector(seed: u64, dim: usize, parts: &[&str]) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(key);
    let bound = 6.0 / (dim as f64).sqrt();
    (0..dim).map(|_| rng.random_range(-bound..=bound)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekg::{build_ekg, BuildOptions};
    use crate::ingest::{EntityId, LinkedPairSet, Provenance, Record, RecordSet};

    fn graph() -> EvolutionKG {
        let schema = Schema::new(&["status", "name"], None).unwrap();
        let mut dict = ValueDictionary::new(&schema);
        let s = dict.intern(AttributeId(0), "single");
        let m = dict.intern(AttributeId(0), "married");
        let n = dict.intern(AttributeId(1), "puig");
        let a = RecordSet::from_records(vec![Record::new(EntityId(0), vec![Some(s), Some(n)])]).unwrap();
        let b = RecordSet::from_records(vec![Record::new(EntityId(1), vec![Some(m), Some(n)])]).unwrap();
        let links = LinkedPairSet::new(vec![(EntityId(0), EntityId(1))], Provenance::Train);
        build_ekg(&schema, &dict, &a, &b, &links, &[], BuildOptions::default()).unwrap()
    }

    fn hp(dim: usize, seed: u64) -> EmbedHyperparams {
        EmbedHyperparams {
            dim,
            seed,
            ..EmbedHyperparams::default()
        }
    }

    #[test]
    fn init_yields_unit_value_vectors() {
        let g = graph();
        let s = init_embeddings(&g, &hp(4, 9)).unwrap();
        assert_eq!(s.num_values(), 3);
        assert_eq!(s.num_attributes(), 2);
        for v in 0..3 {
            assert!((l2(s.value(ValueId(v))) - 1.0).abs() < 1e-12);
        }
        let bound = 6.0 / 2.0;
        assert!(s.attribute(AttributeId(0)).iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let g = graph();
        assert_eq!(init_embeddings(&g, &hp(8, 1)).unwrap(), init_embeddings(&g, &hp(8, 1)).unwrap());
        assert_ne!(init_embeddings(&g, &hp(8, 1)).unwrap(), init_embeddings(&g, &hp(8, 2)).unwrap());
    }

    fn manual(v: &[f64], a: &[f64], u: &[f64]) -> (EmbeddingStore, ValueId, ValueId, AttributeId) {
        let dim = v.len();
        let s = EmbeddingStore::from_parts(
            dim,
            0,
            Norm::L2,
            vec!["a".into()],
            vec![(AttributeId(0), "v".into()), (AttributeId(0), "u".into())],
            [v, u].concat(),
            a.to_vec(),
        )
        .unwrap();
        (s, ValueId(0), ValueId(1), AttributeId(0))
    }

    #[test]
    fn perfect_translation_scores_zero() {
        let (s, v, u, a) = manual(&[0.1, 0.2], &[0.3, -0.1], &[0.4, 0.1]);
        assert!(s.ea_score(v, u, a, Norm::L2).unwrap().abs() < 1e-15);
        let (s, v, _, a) = manual(&[0.1, 0.2], &[0.0, 0.0], &[0.4, 0.1]);
        assert_eq!(s.ea_score(v, v, a, Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_score() {
        let (s, v, u, a) = manual(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]);
        assert_eq!(s.ea_score(v, u, a, Norm::L2).unwrap(), -(2.0f64).sqrt());
        assert_eq!(s.ea_score(v, u, a, Norm::L1).unwrap(), -2.0);
    }

    #[test]
    fn self_score_is_minus_attribute_norm() {
        let g = graph();
        let s = init_embeddings(&g, &hp(6, 3)).unwrap();
        let a = AttributeId(0);
        let expected = -l2(s.attribute(a));
        assert!((s.ea_score(ValueId(0), ValueId(0), a, Norm::L2).unwrap() - expected).abs() < 1e-12);
        let l1: f64 = s.attribute(a).iter().map(|x| x.abs()).sum();
        assert!((s.ea_score(ValueId(1), ValueId(1), a, Norm::L1).unwrap() + l1).abs() < 1e-12);
    }

    #[test]
    fn cross_attribute_score_is_domain_error() {
        let g = graph();
        let s = init_embeddings(&g, &hp(4, 3)).unwrap();
        let err = s.ea_score(ValueId(0), ValueId(2), AttributeId(0), Norm::L2).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn extension_is_order_independent() {
        let g = graph();
        let mut s = init_embeddings(&g, &hp(5, 4)).unwrap();
        let mut dict = g.dictionary().clone();
        let new = dict.intern(AttributeId(1), "vila");
        s.extend(&dict).unwrap();
        // a store built directly from the extended dictionary agrees
        let direct = EmbeddingStore::for_dictionary(g.schema(), &dict, 5, 4, Norm::L2).unwrap();
        assert_eq!(s.value(new), direct.value(new));
        assert_eq!(s.dictionary(), dict);
    }
}
