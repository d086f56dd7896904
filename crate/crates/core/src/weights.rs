//! Second training step: per-attribute weights over frozen embeddings, plus
//! the pair score `g`, the link probability and threshold selection.
//!
//! For a record pair (h, t) the score sums, over attributes present in both
//! records, `w_a * S(v, u) * EA(v, u, a)` where `S` is 0 for equal values
//! and 1 otherwise. The probability is `sigmoid(g)`. Because `EA <= 0`,
//! identical records score `g = 0`, `P = 0.5`, and implausible mismatches
//! push `P` toward 0 when weights are positive.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::{relative_error, EmbeddingStore, GradCheck, SkipReason};
use crate::error::{Error, Result};
use crate::ingest::{AttributeId, Record, RecordSet, ValueId};
use crate::par;
use crate::pipeline::CandidatePair;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// The unweighted (MERL) point.
    pub fn ones(n: usize) -> Self {
        WeightVector(vec![1.0; n])
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid("weights must be finite".into()));
        }
        Ok(WeightVector(weights))
    }

    pub fn get(&self, a: AttributeId) -> f64 {
        self.0[a.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        WeightVector(self.0.iter().map(|w| w * c).collect())
    }
}

/// Sign convention of the weight-learning hinge loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSign {
    /// `max(0, λ - P)` on true pairs, `max(0, P - (1 - λ))` on false pairs.
    #[default]
    Corrected,
    /// `max(0, λ + P)` on true pairs, `max(0, λ - P)` on false pairs.
    AsWritten,
}

impl fmt::Display for LossSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossSign::Corrected => "corrected",
            LossSign::AsWritten => "as_written",
        })
    }
}

impl FromStr for LossSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corrected" => Ok(LossSign::Corrected),
            "as_written" | "as-written" => Ok(LossSign::AsWritten),
            other => Err(Error::config("loss_sign", format!("unknown loss sign `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RLHyperparams {
    /// λ_RL, in (0, 1).
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub loss_sign: LossSign,
    /// Negatives drawn per positive each epoch; 0 uses every negative.
    pub negative_ratio: f64,
    pub clamp_nonnegative: bool,
    pub seed: u64,
}

impl Default for RLHyperparams {
    fn default() -> Self {
        RLHyperparams {
            margin: 0.25,
            learning_rate: 1.0,
            epochs: 200,
            loss_sign: LossSign::Corrected,
            negative_ratio: 10.0,
            clamp_nonnegative: false,
            seed: 0,
        }
    }
}

impl RLHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(Error::config("weights.margin", "must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("weights.learning_rate", "must be positive"));
        }
        if !(self.negative_ratio >= 0.0 && self.negative_ratio.is_finite()) {
            return Err(Error::config("weights.negative_ratio", "must be non-negative"));
        }
        Ok(())
    }
}

/// S(u, v): 0 when the values are the same, 1 otherwise.
pub fn mismatch_indicator(v: ValueId, u: ValueId) -> u8 {
    u8::from(v != u)
}

/// Per-attribute terms `S(v, u) * EA(v, u, a)` of one record pair. Attributes
/// missing from either record contribute 0 and are not counted as shared.
#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    pub terms: Vec<f64>,
    pub shared: usize,
}

impl PairFeatures {
    /// `g`, or `None` when the records share no present attribute.
    pub fn score(&self, w: &WeightVector) -> Option<f64> {
        (self.shared > 0).then(|| self.terms.iter().zip(w.as_slice()).map(|(f, w)| f * w).sum())
    }

    /// Undefined pairs get probability 0.
    pub fn probability(&self, w: &WeightVector) -> f64 {
        self.score(w).map_or(0.0, sigmoid)
    }
}

pub fn pair_features(h: &Record, t: &Record, store: &EmbeddingStore) -> Result<PairFeatures> {
    let n = store.num_attributes();
    let mut terms = vec![0.0; n];
    let mut shared = 0;
    for (i, term) in terms.iter_mut().enumerate() {
        let a = AttributeId(i as u16);
        let (Some(v), Some(u)) = (h.value(a), t.value(a)) else {
            continue;
        };
        shared += 1;
        if mismatch_indicator(v, u) == 1 {
            *term = store.ea_score(v, u, a, store.norm())?;
        }
    }
    Ok(PairFeatures { terms, shared })
}

pub fn g_score(h: &Record, t: &Record, store: &EmbeddingStore, w: &WeightVector) -> Result<Option<f64>> {
    Ok(pair_features(h, t, store)?.score(w))
}

pub fn link_probability(h: &Record, t: &Record, store: &EmbeddingStore, w: &WeightVector) -> Result<Option<f64>> {
    Ok(g_score(h, t, store, w)?.map(sigmoid))
}

pub fn sigmoid(g: f64) -> f64 {
    if g >= 0.0 {
        1.0 / (1.0 + (-g).exp())
    } else {
        let e = g.exp();
        e / (1.0 + e)
    }
}

fn hinge_argument(p: f64, positive: bool, hp: &RLHyperparams) -> f64 {
    let l = hp.margin;
    match (hp.loss_sign, positive) {
        (LossSign::Corrected, true) => l - p,
        (LossSign::Corrected, false) => p - (1.0 - l),
        (LossSign::AsWritten, true) => l + p,
        (LossSign::AsWritten, false) => l - p,
    }
}

/// d(hinge argument)/dP
fn hinge_slope(positive: bool, sign: LossSign) -> f64 {
    match (sign, positive) {
        (LossSign::Corrected, true) => -1.0,
        (LossSign::Corrected, false) => 1.0,
        (LossSign::AsWritten, true) => 1.0,
        (LossSign::AsWritten, false) => -1.0,
    }
}

/// Mean hinge loss over the given pairs. Undefined pairs are excluded.
pub fn rl_loss(pos: &[&PairFeatures], neg: &[&PairFeatures], w: &WeightVector, hp: &RLHyperparams) -> f64 {
    rl_loss_and_gradient(pos, neg, w, hp).0
}

/// Mean loss and its subgradient with respect to the weights. Summation is
/// in index order.
pub fn rl_loss_and_gradient(
    pos: &[&PairFeatures],
    neg: &[&PairFeatures],
    w: &WeightVector,
    hp: &RLHyperparams,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    let mut n = 0usize;
    for (pairs, positive) in [(pos, true), (neg, false)] {
        for f in pairs.iter() {
            let Some(g) = f.score(w) else { continue };
            n += 1;
            let p = sigmoid(g);
            let arg = hinge_argument(p, positive, hp);
            if arg <= 0.0 {
                continue;
            }
            loss += arg;
            let scale = hinge_slope(positive, hp.loss_sign) * p * (1.0 - p);
            grad.iter_mut().zip(&f.terms).for_each(|(d, x)| *d += scale * x);
        }
    }
    if n > 0 {
        loss /= n as f64;
        grad.iter_mut().for_each(|d| *d /= n as f64);
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightTraining {
    pub weights: WeightVector,
    /// Mean hinge loss per epoch, evaluated before that epoch's step.
    pub loss_history: Vec<f64>,
}

/// Full-batch subgradient descent from the all-ones point. Each epoch uses
/// every positive and a fresh subsample of negatives.
pub fn train_weights_on_features(
    pos: &[PairFeatures],
    neg: &[PairFeatures],
    num_attributes: usize,
    hp: &RLHyperparams,
) -> Result<WeightTraining> {
    hp.validate()?;
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Invalid("weight training needs both true and false pairs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut w = WeightVector::ones(num_attributes);
    let pos_refs: Vec<&PairFeatures> = pos.iter().collect();
    let per_epoch = if hp.negative_ratio == 0.0 {
        neg.len()
    } else {
        ((hp.negative_ratio * pos.len() as f64).ceil() as usize).clamp(1, neg.len())
    };
    let mut history = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        let neg_refs: Vec<&PairFeatures> = if per_epoch == neg.len() {
            neg.iter().collect()
        } else {
            let mut picks = index::sample(&mut rng, neg.len(), per_epoch).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|i| &neg[i]).collect()
        };
        let (loss, grad) = rl_loss_and_gradient(&pos_refs, &neg_refs, &w, hp);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                learning_rate: hp.learning_rate,
            });
        }
        history.push(loss);
        log::debug!("weights epoch {epoch}: mean loss {loss:.6}");
        let mut next: Vec<f64> = w
            .as_slice()
            .iter()
            .zip(&grad)
            .map(|(w, g)| w - hp.learning_rate * g)
            .collect();
        if hp.clamp_nonnegative {
            next.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        w = WeightVector::new(next).map_err(|_| Error::NonFiniteLoss {
            epoch,
            learning_rate: hp.learning_rate,
        })?;
    }
    Ok(WeightTraining {
        weights: w,
        loss_history: history,
    })
}

/// Train weights for labeled candidate pairs. Embeddings are read only.
pub fn train_weights(
    t_plus: &[CandidatePair],
    t_minus: &[CandidatePair],
    a: &RecordSet,
    b: &RecordSet,
    store: &EmbeddingStore,
    hp: &RLHyperparams,
) -> Result<WeightTraining> {
    let pos = features_for(t_plus, a, b, store)?;
    let neg = features_for(t_minus, a, b, store)?;
    train_weights_on_features(&pos, &neg, store.num_attributes(), hp)
}

/// Features for candidate pairs, computed in parallel, in input order.
pub fn features_for(
    pairs: &[CandidatePair],
    a: &RecordSet,
    b: &RecordSet,
    store: &EmbeddingStore,
) -> Result<Vec<PairFeatures>> {
    par::map(pairs, |p| {
        let h = a.get(p.a_entity).ok_or(Error::MissingEntity(p.a_entity))?;
        let t = b.get(p.b_entity).ok_or(Error::MissingEntity(p.b_entity))?;
        pair_features(h, t, store)
    })
    .into_iter()
    .collect()
}

/// Finite-difference check of the weight subgradient at `w`. Skipped when a
/// pair's hinge sits within reach of its boundary.
pub fn rl_gradient_check(
    pos: &[&PairFeatures],
    neg: &[&PairFeatures],
    w: &WeightVector,
    hp: &RLHyperparams,
    epsilon: f64,
) -> GradCheck {
    for (pairs, positive) in [(pos, true), (neg, false)] {
        for f in pairs.iter() {
            let Some(g) = f.score(w) else { continue };
            let reach = epsilon * (1.0 + f.terms.iter().map(|x| x.abs()).sum::<f64>());
            if hinge_argument(sigmoid(g), positive, hp).abs() <= reach {
                return GradCheck::Skipped(SkipReason::NearHingeBoundary);
            }
        }
    }
    let (_, analytic) = rl_loss_and_gradient(pos, neg, w, hp);
    let mut worst: f64 = 0.0;
    let mut probe = w.as_slice().to_vec();
    for (i, an) in analytic.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + epsilon;
        let up = rl_loss(pos, neg, &WeightVector(probe.clone()), hp);
        probe[i] = orig - epsilon;
        let down = rl_loss(pos, neg, &WeightVector(probe.clone()), hp);
        probe[i] = orig;
        worst = worst.max(relative_error(*an, (up - down) / (2.0 * epsilon)));
    }
    GradCheck::Checked {
        max_relative_error: worst,
        coordinates: analytic.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Match,
    NonMatch,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Match => "match",
            Decision::NonMatch => "non_match",
        })
    }
}

impl FromStr for Decision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "match" => Ok(Decision::Match),
            "non_match" => Ok(Decision::NonMatch),
            other => Err(Error::Invalid(format!("unknown decision `{other}`"))),
        }
    }
}

/// Match iff `p >= tau`.
pub fn classify(p: f64, tau: f64) -> Decision {
    if p >= tau {
        Decision::Match
    } else {
        Decision::NonMatch
    }
}

/// 0.01, 0.02, ..., 0.99
pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// Pick the grid threshold maximizing F-score over `(is_true_link, P)`
/// pairs. Ties go to the larger threshold.
pub fn select_threshold(scored: &[(bool, f64)]) -> f64 {
    let mut pos: Vec<f64> = scored.iter().filter(|(l, _)| *l).map(|(_, p)| *p).collect();
    let mut neg: Vec<f64> = scored.iter().filter(|(l, _)| !*l).map(|(_, p)| *p).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let at_least = |v: &[f64], tau: f64| v.len() - v.partition_point(|p| *p < tau);
    let mut best = (f64::NEG_INFINITY, 0.5);
    for tau in threshold_grid() {
        let tp = at_least(&pos, tau) as f64;
        let fp = at_least(&neg, tau) as f64;
        let fn_ = pos.len() as f64 - tp;
        let f = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        if f >= best.0 {
            best = (f, tau);
        }
    }
    best.1
}
