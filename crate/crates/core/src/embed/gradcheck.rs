use crate::ekg::EvolutionTriple;
use crate::embed::store::translation_distance;
use crate::embed::train::{difference, margin_gradient};
use crate::embed::{EmbeddingStore, Norm};

/// `max(0, margin + dist(pos) - dist(neg))`, evaluated directly from the
/// distance function.
pub fn margin_loss(store: &EmbeddingStore, pos: &EvolutionTriple, neg: &EvolutionTriple, margin: f64, norm: Norm) -> f64 {
    let d = |t: &EvolutionTriple| {
        translation_distance(store.value(t.head), store.attribute(t.attribute), store.value(t.tail), norm)
    };
    (margin + d(pos) - d(neg)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SkipReason {
    /// A perturbation of size epsilon could cross the hinge boundary.
    NearHingeBoundary,
    /// An L1 coordinate (or the L2 difference vector) is within reach of zero.
    NormKink,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheck {
    Checked { max_relative_error: f64, coordinates: usize },
    Skipped(SkipReason),
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Param {
    Value(usize),
    Attribute(usize),
}

/// Compare the trainer's analytic subgradient of one margin term against
/// central finite differences, coordinate by coordinate.
pub fn gradient_check(
    store: &EmbeddingStore,
    pos: &EvolutionTriple,
    neg: &EvolutionTriple,
    margin: f64,
    norm: Norm,
    epsilon: f64,
) -> GradCheck {
    let reach = 4.0 * epsilon;
    let slack = margin + dist(store, pos, norm) - dist(store, neg, norm);
    if slack.abs() <= 8.0 * epsilon * store.dim() as f64 {
        return GradCheck::Skipped(SkipReason::NearHingeBoundary);
    }
    for t in [pos, neg] {
        let d = difference(store, t);
        let kink = match norm {
            Norm::L1 => d.iter().any(|x| x.abs() <= reach),
            Norm::L2 => d.iter().map(|x| x * x).sum::<f64>().sqrt() <= reach,
        };
        if kink {
            return GradCheck::Skipped(SkipReason::NormKink);
        }
    }

    let dim = store.dim();
    let mut params: Vec<(Param, Vec<f64>)> = Vec::new();
    let mut add = |p: Param, g: &[f64]| match params.iter_mut().find(|(q, _)| *q == p) {
        Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, x)| *a += x),
        None => params.push((p, g.to_vec())),
    };
    let zero = vec![0.0; dim];
    let (_, grad) = margin_gradient(store, pos, neg, margin, norm);
    match &grad {
        Some(g) => {
            add(Param::Value(pos.head.index()), &g.head);
            add(Param::Value(pos.tail.index()), &g.pos_tail);
            add(Param::Value(neg.tail.index()), &g.neg_tail);
            add(Param::Attribute(pos.attribute.index()), &g.attribute);
        }
        None => {
            for p in [
                Param::Value(pos.head.index()),
                Param::Value(pos.tail.index()),
                Param::Value(neg.tail.index()),
                Param::Attribute(pos.attribute.index()),
            ] {
                add(p, &zero);
            }
        }
    }

    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (param, analytic) in &params {
        for (i, &an) in analytic.iter().enumerate() {
            let original = coord(&probe, *param, i);
            set_coord(&mut probe, *param, i, original + epsilon);
            let up = margin_loss(&probe, pos, neg, margin, norm);
            set_coord(&mut probe, *param, i, original - epsilon);
            let down = margin_loss(&probe, pos, neg, margin, norm);
            set_coord(&mut probe, *param, i, original);
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(an, numeric));
            coordinates += 1;
        }
    }
    GradCheck::Checked {
        max_relative_error: worst,
        coordinates,
    }
}

fn dist(store: &EmbeddingStore, t: &EvolutionTriple, norm: Norm) -> f64 {
    translation_distance(store.value(t.head), store.attribute(t.attribute), store.value(t.tail), norm)
}

/// `|a - b| / max(|a|, |b|)` with a floor of 1e-6 on the denominator so
/// that vanishing components compare on an absolute scale.
pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn coord(store: &EmbeddingStore, p: Param, i: usize) -> f64 {
    match p {
        Param::Value(v) => store.raw_values()[v * store.dim() + i],
        Param::Attribute(a) => store.raw_attributes()[a * store.dim() + i],
    }
}

fn set_coord(store: &mut EmbeddingStore, p: Param, i: usize, x: f64) {
    match p {
        Param::Value(v) => store.value_mut(v)[i] = x,
        Param::Attribute(a) => store.attribute_mut(a)[i] = x,
    }
}
