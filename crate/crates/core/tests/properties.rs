use std::collections::BTreeSet;

use proptest::prelude::*;
use werl::ekg::{build_ekg, BuildOptions, EvolutionTriple};
use werl::embed::{EmbedHyperparams, EmbeddingStore, Norm};
use werl::ingest::{
    partition, AttributeId, EntityId, LinkedDataset, LinkedPairSet, Provenance, Record, RecordSet, Schema,
    ValueDictionary,
};
use werl::model::Model;
use werl::pipeline::{block_candidates, evaluate, CandidatePair, KgVariant, Mode};
use werl::weights::{pair_features, LossSign, WeightVector};

const ATTRIBUTES: [&str; 3] = ["surname", "status", "village"];

fn schema() -> Schema {
    Schema::new(&ATTRIBUTES, Some("surname")).unwrap()
}

/// Each record is three optional indices into a 4-value domain per attribute.
fn cells() -> impl Strategy<Value = Vec<[Option<u8>; 3]>> {
    prop::collection::vec(prop::array::uniform3(prop::option::weighted(0.8, 0u8..4)), 0..25)
}

fn build(schema: &Schema, a: &[[Option<u8>; 3]], b: &[[Option<u8>; 3]]) -> (ValueDictionary, RecordSet, RecordSet) {
    let mut dict = ValueDictionary::new(schema);
    for attr in schema.ids() {
        for k in 0..4 {
            dict.intern(attr, &format!("{}{k}", schema.name(attr)));
        }
    }
    let set = |rows: &[[Option<u8>; 3]], offset: u64| {
        let records = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let values = row
                    .iter()
                    .enumerate()
                    .map(|(j, c)| {
                        c.map(|k| {
                            let attr = AttributeId(j as u16);
                            dict.get(attr, &format!("{}{k}", ATTRIBUTES[j])).unwrap()
                        })
                    })
                    .collect();
                Record::new(EntityId(offset + i as u64), values)
            })
            .collect();
        RecordSet::from_records(records).unwrap()
    };
    let ra = set(a, 0);
    let rb = set(b, 1000);
    (dict, ra, rb)
}

fn store(schema: &Schema, dict: &ValueDictionary, seed: u64, norm: Norm) -> EmbeddingStore {
    EmbeddingStore::for_dictionary(schema, dict, 6, seed, norm).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn blocking_matches_brute_force(a in cells(), b in cells()) {
        let s = schema();
        let (_, ra, rb) = build(&s, &a, &b);
        let block = s.blocking().unwrap();
        let got: Vec<_> = block_candidates(&ra, &rb, Some(block), u64::MAX)
            .unwrap()
            .iter()
            .map(CandidatePair::key)
            .collect();
        let mut brute = Vec::new();
        for x in ra.iter() {
            for y in rb.iter() {
                if x.value(block).is_some() && x.value(block) == y.value(block) {
                    brute.push((x.id, y.id));
                }
            }
        }
        prop_assert_eq!(got, brute);
    }

    #[test]
    fn record_against_itself_scores_zero(a in cells(), seed in any::<u64>(), l1 in any::<bool>()) {
        let s = schema();
        let (dict, ra, _) = build(&s, &a, &[]);
        let st = store(&s, &dict, seed, if l1 { Norm::L1 } else { Norm::L2 });
        let w = WeightVector::new(vec![0.7, -1.3, 2.0]).unwrap();
        for r in ra.iter() {
            let f = pair_features(r, r, &st).unwrap();
            let shared = r.present().count();
            prop_assert_eq!(f.shared, shared);
            if shared > 0 {
                prop_assert_eq!(f.score(&w), Some(0.0));
                prop_assert_eq!(f.probability(&w), 0.5);
            } else {
                prop_assert_eq!(f.score(&w), None);
            }
        }
    }

    #[test]
    fn confusion_counts_cover_every_pair(
        labels in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 0..200),
        tau in 0.01f64..0.99,
    ) {
        let pairs: Vec<_> = labels
            .iter()
            .enumerate()
            .map(|(i, &(label, p))| CandidatePair {
                probability: Some(p),
                ..CandidatePair::labeled(EntityId(i as u64), EntityId(0), label)
            })
            .collect();
        let m = evaluate(&pairs, tau).unwrap();
        prop_assert_eq!(m.total() as usize, pairs.len());
        prop_assert_eq!(m.tp + m.fn_, labels.iter().filter(|l| l.0).count() as u64);
    }

    #[test]
    fn evolution_triples_come_from_train_links(a in cells(), b in cells(), picks in prop::collection::vec(any::<prop::sample::Index>(), 0..10)) {
        let s = schema();
        let (dict, ra, rb) = build(&s, &a, &b);
        prop_assume!(!ra.is_empty() && !rb.is_empty());
        let links: BTreeSet<_> = picks
            .iter()
            .map(|i| (ra.records()[i.index(ra.len())].id, rb.records()[i.index(rb.len())].id))
            .collect();
        let links = LinkedPairSet::new(links.into_iter().collect(), Provenance::Train);
        let mut expected = BTreeSet::new();
        for &(h, t) in links.pairs() {
            let (h, t) = (ra.get(h).unwrap(), rb.get(t).unwrap());
            for attr in s.ids() {
                if let (Some(u), Some(v)) = (h.value(attr), t.value(attr)) {
                    if u != v {
                        expected.insert(EvolutionTriple { head: u, tail: v, attribute: attr });
                    }
                }
            }
        }
        let kg = build_ekg(&s, &dict, &ra, &rb, &links, &[], BuildOptions::default()).unwrap();
        prop_assert_eq!(kg.evolution(), &expected);

        let er = build_ekg(&s, &dict, &ra, &rb, &links, &[], BuildOptions::er_degenerate()).unwrap();
        for t in &expected {
            let reversed = EvolutionTriple { head: t.tail, tail: t.head, attribute: t.attribute };
            prop_assert!(er.evolution().contains(t) && er.evolution().contains(&reversed));
        }
    }

    #[test]
    fn partition_keeps_links_inside_one_split(a in cells(), b in cells(), picks in prop::collection::vec(any::<prop::sample::Index>(), 1..15), seed in any::<u64>()) {
        let s = schema();
        let (_, ra, rb) = build(&s, &a, &b);
        prop_assume!(!ra.is_empty() && !rb.is_empty());
        let links: BTreeSet<_> = picks
            .iter()
            .map(|i| (ra.records()[i.index(ra.len())].id, rb.records()[i.index(rb.len())].id))
            .collect();
        let data = LinkedDataset {
            a: ra.clone(),
            b: rb.clone(),
            links: LinkedPairSet::new(links.iter().copied().collect(), Provenance::Train),
        };
        let splits = partition(&data, [0.6, 0.3, 0.1], seed).unwrap();
        let mut seen_a = 0;
        let mut seen_b = 0;
        let mut seen_links = 0;
        for split in splits.iter() {
            seen_a += split.a.len();
            seen_b += split.b.len();
            seen_links += split.links.len();
            for &(h, t) in split.links.pairs() {
                prop_assert!(split.a.contains(h) && split.b.contains(t));
            }
        }
        prop_assert_eq!((seen_a, seen_b, seen_links), (ra.len(), rb.len(), links.len()));
    }

    #[test]
    fn model_text_round_trips(
        seed in any::<u64>(),
        weights in prop::array::uniform3(-5.0f64..5.0),
        threshold in 0.01f64..0.99,
        l1 in any::<bool>(),
    ) {
        let s = schema();
        let (dict, _, _) = build(&s, &[], &[]);
        let norm = if l1 { Norm::L1 } else { Norm::L2 };
        let model = Model {
            store: store(&s, &dict, seed, norm),
            weights: WeightVector::new(weights.to_vec()).unwrap(),
            blocking: Some("surname".into()),
            mode: Mode::Werl,
            kg_variant: KgVariant::Ekg,
            embed: EmbedHyperparams { dim: 6, seed, norm, ..EmbedHyperparams::default() },
            rl_margin: 0.25,
            loss_sign: LossSign::Corrected,
            threshold,
        };
        let text = model.to_text();
        let back = Model::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        prop_assert_eq!(back, model);
    }
}
