use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ekg::{EvolutionKG, EvolutionTriple};
use crate::embed::store::project_unit_ball;
use crate::embed::{init_embeddings, EmbedHyperparams, EmbeddingStore, Norm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedTraining {
    pub store: EmbeddingStore,
    /// Mean margin loss per (positive, negative) term, one entry per epoch.
    pub loss_history: Vec<f64>,
    /// Positives dropped because every value of their attribute was an
    /// observed tail (no negative exists).
    pub skipped_positives: usize,
}

pub fn train_embeddings(ekg: &EvolutionKG, hp: &EmbedHyperparams) -> Result<EmbedTraining> {
    let store = init_embeddings(ekg, hp)?;
    train_embeddings_from(store, ekg, hp)
}

/// Gradient of `||d||_p` with respect to `d`; zero where undefined.
pub(crate) fn norm_direction(diff: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L1 => diff
            .iter()
            .map(|&d| if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 })
            .collect(),
        Norm::L2 => {
            let n = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            if n == 0.0 {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|d| d / n).collect()
            }
        }
    }
}

pub(crate) fn difference(store: &EmbeddingStore, t: &EvolutionTriple) -> Vec<f64> {
    let h = store.value(t.head);
    let r = store.attribute(t.attribute);
    let u = store.value(t.tail);
    h.iter().zip(r).zip(u).map(|((h, r), u)| h + r - u).collect()
}

/// Subgradient of one margin term
/// `max(0, margin + dist(pos) - dist(neg))` with respect to the head, the
/// attribute, the positive tail and the negative tail vectors. `None` when
/// the hinge is inactive (subgradient 0, including at the boundary).
pub(crate) struct MarginGradient {
    pub head: Vec<f64>,
    pub attribute: Vec<f64>,
    pub pos_tail: Vec<f64>,
    pub neg_tail: Vec<f64>,
}

pub(crate) fn margin_gradient(
    store: &EmbeddingStore,
    pos: &EvolutionTriple,
    neg: &EvolutionTriple,
    margin: f64,
    norm: Norm,
) -> (f64, Option<MarginGradient>) {
    debug_assert_eq!(pos.head, neg.head);
    debug_assert_eq!(pos.attribute, neg.attribute);
    let dp = difference(store, pos);
    let dn = difference(store, neg);
    let dist = |d: &[f64]| match norm {
        Norm::L1 => d.iter().map(|x| x.abs()).sum::<f64>(),
        Norm::L2 => d.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    let loss = margin + dist(&dp) - dist(&dn);
    if loss <= 0.0 {
        return (0.0, None);
    }
    let gp = norm_direction(&dp, norm);
    let gn = norm_direction(&dn, norm);
    let shared: Vec<f64> = gp.iter().zip(&gn).map(|(p, n)| p - n).collect();
    let grad = MarginGradient {
        head: shared.clone(),
        attribute: shared,
        pos_tail: gp.iter().map(|x| -x).collect(),
        neg_tail: gn,
    };
    (loss, Some(grad))
}

/// Continue training an existing store. Single-threaded: results are
/// bitwise reproducible for a fixed seed.
pub fn train_embeddings_from(
    mut store: EmbeddingStore,
    ekg: &EvolutionKG,
    hp: &EmbedHyperparams,
) -> Result<EmbedTraining> {
    hp.validate()?;
    if ekg.evolution().is_empty() {
        return Err(Error::EmptyEvolution);
    }
    let positives: Vec<EvolutionTriple> = ekg.evolution().iter().copied().collect();
    let dim = store.dim();
    // separate stream from initialization, which is hash-derived
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5eed_e4b3_d0c5_0001);
    let mut order: Vec<usize> = (0..positives.len()).collect();

    let mut value_grad = vec![0.0; store.num_values() * dim];
    let mut attr_grad = vec![0.0; store.num_attributes() * dim];
    let mut value_touched = vec![false; store.num_values()];
    let mut touched_values: Vec<usize> = Vec::new();
    let mut touched_attrs: Vec<usize> = Vec::new();

    let mut history = Vec::with_capacity(hp.epochs);
    let mut skipped = 0usize;

    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut terms = 0usize;
        skipped = 0;
        for batch in order.chunks(hp.batch_size) {
            for &i in batch {
                let pos = &positives[i];
                let Some(negs) = ekg.sample_negatives(pos, hp.negatives, &mut rng) else {
                    skipped += 1;
                    continue;
                };
                for neg in &negs {
                    let (loss, grad) = margin_gradient(&store, pos, neg, hp.margin, hp.norm);
                    loss_sum += loss;
                    terms += 1;
                    let Some(g) = grad else { continue };
                    for (v, dv) in [
                        (pos.head.index(), &g.head),
                        (pos.tail.index(), &g.pos_tail),
                        (neg.tail.index(), &g.neg_tail),
                    ] {
                        if !value_touched[v] {
                            value_touched[v] = true;
                            touched_values.push(v);
                        }
                        let slot = &mut value_grad[v * dim..(v + 1) * dim];
                        slot.iter_mut().zip(dv).for_each(|(s, d)| *s += d);
                    }
                    let a = pos.attribute.index();
                    if !touched_attrs.contains(&a) {
                        touched_attrs.push(a);
                    }
                    let slot = &mut attr_grad[a * dim..(a + 1) * dim];
                    slot.iter_mut().zip(&g.attribute).for_each(|(s, d)| *s += d);
                }
            }
            for &v in &touched_values {
                let grad = &mut value_grad[v * dim..(v + 1) * dim];
                let vec = store.value_mut(v);
                for (x, g) in vec.iter_mut().zip(grad.iter_mut()) {
                    *x -= hp.learning_rate * *g;
                    *g = 0.0;
                }
                project_unit_ball(vec);
                value_touched[v] = false;
            }
            for &a in &touched_attrs {
                let grad = &mut attr_grad[a * dim..(a + 1) * dim];
                let vec = store.attribute_mut(a);
                for (x, g) in vec.iter_mut().zip(grad.iter_mut()) {
                    *x -= hp.learning_rate * *g;
                    *g = 0.0;
                }
            }
            touched_values.clear();
            touched_attrs.clear();
        }
        let mean = if terms == 0 { 0.0 } else { loss_sum / terms as f64 };
        if !mean.is_finite() || (epoch + 1 == hp.epochs && !store.all_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                learning_rate: hp.learning_rate,
            });
        }
        log::debug!("embed epoch {epoch}: mean loss {mean:.6}");
        history.push(mean);
    }
    if let Some(last) = history.last() {
        log::info!(
            "embedding training: {} epochs, {} positives, final mean loss {last:.6}",
            hp.epochs,
            positives.len()
        );
    }
    Ok(EmbedTraining {
        store,
        loss_history: history,
        skipped_positives: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekg::{build_ekg, BuildOptions};
    use crate::ingest::{AttributeId, EntityId, LinkedPairSet, Provenance, Record, RecordSet, Schema, ValueDictionary, ValueId};

    /// V_a = {s, m, w}; ET = {(s, m), (m, w)}.
    pub(crate) fn toy_graph() -> (EvolutionKG, [ValueId; 3]) {
        let schema = Schema::new(&["civil_status"], None).unwrap();
        let mut dict = ValueDictionary::new(&schema);
        let a = AttributeId(0);
        let s = dict.intern(a, "single");
        let m = dict.intern(a, "married");
        let w = dict.intern(a, "widowed");
        let rec = |id, v| Record::new(EntityId(id), vec![Some(v)]);
        let ra = RecordSet::from_records(vec![rec(0, s), rec(1, m)]).unwrap();
        let rb = RecordSet::from_records(vec![rec(10, m), rec(11, w)]).unwrap();
        let links = LinkedPairSet::new(
            vec![(EntityId(0), EntityId(10)), (EntityId(1), EntityId(11))],
            Provenance::Train,
        );
        let g = build_ekg(&schema, &dict, &ra, &rb, &links, &[], BuildOptions::default()).unwrap();
        (g, [s, m, w])
    }

    #[test]
    fn zero_epochs_returns_initial_store() {
        let (g, _) = toy_graph();
        let hp = EmbedHyperparams {
            epochs: 0,
            ..Default::default()
        };
        let t = train_embeddings(&g, &hp).unwrap();
        assert_eq!(t.store, init_embeddings(&g, &hp).unwrap());
        assert!(t.loss_history.is_empty());
    }

    #[test]
    fn toy_graph_ranks_evolutions_first() {
        let (g, [s, m, w]) = toy_graph();
        let a = AttributeId(0);
        for seed in 0..10 {
            let hp = EmbedHyperparams {
                learning_rate: 0.05,
                seed,
                ..Default::default()
            };
            let t = train_embeddings(&g, &hp).unwrap();
            let score = |x, y| t.store.ea_score(x, y, a, Norm::L2).unwrap();
            // each ET triple beats every same-head non-ET triple
            for (h, good) in [(s, m), (m, w)] {
                for u in [s, m, w] {
                    if u != good {
                        assert!(score(h, good) > score(h, u), "seed {seed}: ({h}, {good}) vs ({h}, {u})");
                    }
                }
            }
        }
    }

    #[test]
    fn early_loss_curve_is_non_increasing() {
        let (g, _) = toy_graph();
        // k = 2 exhausts each positive's negative pool, so every epoch sees
        // the same loss terms.
        let hp = EmbedHyperparams {
            negatives: 2,
            epochs: 10,
            ..Default::default()
        };
        let t = train_embeddings(&g, &hp).unwrap();
        let increases: Vec<f64> = t
            .loss_history
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| (w[1] - w[0]) / w[0])
            .collect();
        assert!(increases.len() <= 1, "{:?}", t.loss_history);
        assert!(increases.iter().all(|r| *r < 0.05));
    }

    #[test]
    fn norm_constraint_holds_after_training() {
        let (g, _) = toy_graph();
        let hp = EmbedHyperparams {
            learning_rate: 0.5,
            epochs: 50,
            ..Default::default()
        };
        let t = train_embeddings(&g, &hp).unwrap();
        assert!(t.store.max_value_norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (g, _) = toy_graph();
        let hp = EmbedHyperparams {
            epochs: 30,
            seed: 17,
            ..Default::default()
        };
        let x = train_embeddings(&g, &hp).unwrap();
        let y = train_embeddings(&g, &hp).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn divergence_is_reported() {
        let (g, _) = toy_graph();
        let hp = EmbedHyperparams {
            learning_rate: f64::MAX,
            epochs: 5,
            ..Default::default()
        };
        assert!(matches!(train_embeddings(&g, &hp), Err(Error::NonFiniteLoss { .. })));
    }

    #[test]
    fn empty_graph_is_rejected() {
        let schema = Schema::new(&["x"], None).unwrap();
        let dict = ValueDictionary::new(&schema);
        let g = build_ekg(
            &schema,
            &dict,
            &RecordSet::new(),
            &RecordSet::new(),
            &LinkedPairSet::new(vec![], Provenance::Train),
            &[],
            BuildOptions::default(),
        )
        .unwrap();
        assert!(matches!(
            train_embeddings(&g, &EmbedHyperparams::default()),
            Err(Error::EmptyEvolution)
        ));
    }
}
