//! Persisted model: embeddings, weights and decision settings in one
//! tab-separated text file.
//!
//! ```text
//! werl-model<TAB>1
//! dim<TAB>4
//! norm<TAB>2
//! ...
//! attribute<TAB>surname<TAB><weight><TAB><x0 x1 ...>
//! value<TAB><attribute index><TAB><key><TAB><x0 x1 ...>
//! ```
//!
//! Floats are written in shortest round-trip form, so a read/write cycle
//! reproduces the file byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::embed::{EmbedHyperparams, EmbeddingStore, Norm};
use crate::error::{Error, Result};
use crate::ingest::{load_links, load_records_into, AttributeId, Provenance, RecordSet, Schema, TextFormat};
use crate::pipeline::{block_candidates, CandidatePair, KgVariant, Mode};
use crate::weights::{classify, features_for, Decision, LossSign, WeightVector};

const MAGIC: &str = "werl-model\t1";

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: EmbeddingStore,
    pub weights: WeightVector,
    pub blocking: Option<String>,
    pub mode: Mode,
    pub kg_variant: KgVariant,
    pub embed: EmbedHyperparams,
    pub rl_margin: f64,
    pub loss_sign: LossSign,
    pub threshold: f64,
}

/// One scored pair as emitted by prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub pair: CandidatePair,
    /// `None` when the records share no present attribute.
    pub g: Option<f64>,
    pub p: f64,
    pub decision: Decision,
}

fn vector(xs: &[f64]) -> String {
    let mut s = String::new();
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:?}");
    }
    s
}

impl Model {
    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.store.attribute_names(), self.blocking.as_deref())
    }

    pub fn to_text(&self) -> String {
        let e = &self.embed;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "dim\t{}", self.store.dim());
        let _ = writeln!(s, "norm\t{}", u8::from(self.store.norm()));
        let _ = writeln!(s, "seed\t{}", self.store.seed());
        let _ = writeln!(s, "mode\t{}", self.mode);
        let _ = writeln!(s, "kg_variant\t{}", self.kg_variant);
        let _ = writeln!(s, "blocking\t{}", self.blocking.as_deref().unwrap_or(""));
        let _ = writeln!(s, "embed_margin\t{:?}", e.margin);
        let _ = writeln!(s, "embed_learning_rate\t{:?}", e.learning_rate);
        let _ = writeln!(s, "embed_epochs\t{}", e.epochs);
        let _ = writeln!(s, "embed_batch_size\t{}", e.batch_size);
        let _ = writeln!(s, "embed_negatives\t{}", e.negatives);
        let _ = writeln!(s, "weights_margin\t{:?}", self.rl_margin);
        let _ = writeln!(s, "loss_sign\t{}", self.loss_sign);
        let _ = writeln!(s, "threshold\t{:?}", self.threshold);
        let _ = writeln!(s, "attributes\t{}", self.store.num_attributes());
        let _ = writeln!(s, "values\t{}", self.store.num_values());
        for (i, name) in self.store.attribute_names().iter().enumerate() {
            let a = AttributeId(i as u16);
            let _ = writeln!(
                s,
                "attribute\t{name}\t{:?}\t{}",
                self.weights.get(a),
                vector(self.store.attribute(a))
            );
        }
        for (i, (a, key)) in self.store.value_entries().iter().enumerate() {
            let v = crate::ingest::ValueId(i as u32);
            let _ = writeln!(s, "value\t{}\t{key}\t{}", a.0, vector(self.store.value(v)));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::ModelFormat(format!("line {}: {msg}", line + 1));
        let mut lines = text.split_terminator('\n').enumerate();
        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            _ => return Err(Error::ModelFormat("missing `werl-model` header".into())),
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            let (i, line) = lines.next().ok_or_else(|| Error::ModelFormat(format!("missing `{name}`")))?;
            match line.split_once('\t') {
                Some((k, v)) if k == name => Ok((i, v.to_string())),
                _ => Err(bad(i, &format!("expected `{name}`"))),
            }
        };
        fn parse<T: std::str::FromStr>(x: (usize, String)) -> Result<T> {
            x.1.parse()
                .map_err(|_| Error::ModelFormat(format!("line {}: cannot parse `{}`", x.0 + 1, x.1)))
        }
        let dim: usize = parse(field("dim")?)?;
        let norm = Norm::try_from(parse::<u8>(field("norm")?)?).map_err(Error::ModelFormat)?;
        let seed: u64 = parse(field("seed")?)?;
        let mode: Mode = parse(field("mode")?)?;
        let kg_variant: KgVariant = parse(field("kg_variant")?)?;
        let blocking = Some(field("blocking")?.1).filter(|b| !b.is_empty());
        let embed = EmbedHyperparams {
            margin: parse(field("embed_margin")?)?,
            learning_rate: parse(field("embed_learning_rate")?)?,
            epochs: parse(field("embed_epochs")?)?,
            batch_size: parse(field("embed_batch_size")?)?,
            negatives: parse(field("embed_negatives")?)?,
            dim,
            norm,
            seed,
        };
        let rl_margin: f64 = parse(field("weights_margin")?)?;
        let loss_sign: LossSign = parse(field("loss_sign")?)?;
        let threshold: f64 = parse(field("threshold")?)?;
        let n_attributes: usize = parse(field("attributes")?)?;
        let n_values: usize = parse(field("values")?)?;

        let floats = |i: usize, s: &str| -> Result<Vec<f64>> {
            let v: Vec<f64> = s
                .split(' ')
                .map(|x| x.parse::<f64>().map_err(|_| bad(i, &format!("bad float `{x}`"))))
                .collect::<Result<_>>()?;
            if v.len() != dim {
                return Err(bad(i, &format!("expected {dim} components, found {}", v.len())));
            }
            Ok(v)
        };
        let mut names = Vec::with_capacity(n_attributes);
        let mut weights = Vec::with_capacity(n_attributes);
        let mut attributes = Vec::with_capacity(n_attributes * dim);
        for _ in 0..n_attributes {
            let (i, line) = lines.next().ok_or_else(|| Error::ModelFormat("truncated attribute section".into()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            let ["attribute", name, w, xs] = parts[..] else {
                return Err(bad(i, "expected an attribute line"));
            };
            names.push(name.to_string());
            weights.push(w.parse::<f64>().map_err(|_| bad(i, &format!("bad weight `{w}`")))?);
            attributes.extend(floats(i, xs)?);
        }
        let mut entries = Vec::with_capacity(n_values);
        let mut values = Vec::with_capacity(n_values * dim);
        for _ in 0..n_values {
            let (i, line) = lines.next().ok_or_else(|| Error::ModelFormat("truncated value section".into()))?;
            let parts: Vec<&str> = line.split('\t').collect();
            let ["value", a, key, xs] = parts[..] else {
                return Err(bad(i, "expected a value line"));
            };
            let a: u16 = a.parse().map_err(|_| bad(i, &format!("bad attribute index `{a}`")))?;
            if a as usize >= n_attributes {
                return Err(bad(i, &format!("attribute index {a} out of range")));
            }
            entries.push((AttributeId(a), key.to_string()));
            values.extend(floats(i, xs)?);
        }
        if let Some((i, _)) = lines.next() {
            return Err(bad(i, "trailing content"));
        }
        let store = EmbeddingStore::from_parts(dim, seed, norm, names, entries, values, attributes)?;
        let model = Model {
            store,
            weights: WeightVector::new(weights).map_err(|e| Error::ModelFormat(e.to_string()))?,
            blocking,
            mode,
            kg_variant,
            embed,
            rl_margin,
            loss_sign,
            threshold,
        };
        model.schema().map_err(|e| Error::ModelFormat(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Model::from_text(&text)
    }

    /// Candidate pairs under the model's blocking attribute.
    pub fn candidates(&self, a: &RecordSet, b: &RecordSet, cap: u64) -> Result<Vec<CandidatePair>> {
        let schema = self.schema()?;
        block_candidates(a, b, schema.blocking(), cap)
    }

    /// Score pairs; `a` and `b` must be interned against a dictionary the
    /// store has been extended with.
    pub fn predict(
        &self,
        pairs: &[CandidatePair],
        a: &RecordSet,
        b: &RecordSet,
        threshold: Option<f64>,
    ) -> Result<Vec<Prediction>> {
        let tau = threshold.unwrap_or(self.threshold);
        let features = features_for(pairs, a, b, &self.store)?;
        Ok(pairs
            .iter()
            .zip(features)
            .map(|(pair, f)| {
                let g = f.score(&self.weights);
                let p = f.probability(&self.weights);
                let decision = if g.is_some() { classify(p, tau) } else { Decision::NonMatch };
                Prediction {
                    pair: CandidatePair {
                        probability: Some(p),
                        ..*pair
                    },
                    g,
                    p,
                    decision,
                }
            })
            .collect())
    }

    /// Load two record files against the model schema and score either the
    /// listed `pairs` file or the blocked candidates.
    pub fn predict_files(
        &self,
        a: &Path,
        b: &Path,
        pairs: Option<&Path>,
        format: &TextFormat,
        threshold: Option<f64>,
        cap: u64,
    ) -> Result<Vec<Prediction>> {
        let schema = self.schema()?;
        let mut dict = self.store.dictionary();
        let a = load_records_into(a, &schema, format, &mut dict)?;
        let b = load_records_into(b, &schema, format, &mut dict)?;
        let mut model = self.clone();
        model.store.extend(&dict)?;
        let candidates = match pairs {
            Some(path) => {
                let links = load_links(path, Provenance::Test)?;
                links.validate(&a, &b)?;
                links.pairs().iter().map(|&(h, t)| CandidatePair::new(h, t)).collect()
            }
            None => model.candidates(&a, &b, cap)?,
        };
        model.predict(&candidates, &a, &b, threshold)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ValueDictionary, EntityId, Record};
    use crate::ingest::ValueId;

    pub(crate) fn toy_model() -> Model {
        let schema = Schema::new(&["surname", "status"], Some("surname")).unwrap();
        let mut dict = ValueDictionary::new(&schema);
        for k in ["puig", "vila", "a b"] {
            dict.intern(AttributeId(0), k);
        }
        for k in ["single", "married"] {
            dict.intern(AttributeId(1), k);
        }
        let store = EmbeddingStore::for_dictionary(&schema, &dict, 3, 7, Norm::L1).unwrap();
        Model {
            store,
            weights: WeightVector::new(vec![0.1, -1.0 / 3.0]).unwrap(),
            blocking: Some("surname".into()),
            mode: Mode::Werl,
            kg_variant: KgVariant::Er,
            embed: EmbedHyperparams {
                dim: 3,
                seed: 7,
                norm: Norm::L1,
                ..EmbedHyperparams::default()
            },
            rl_margin: 0.3,
            loss_sign: LossSign::AsWritten,
            threshold: 0.27,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let m = toy_model();
        let text = m.to_text();
        let back = Model::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        for (x, y) in back.store.raw_values().iter().zip(m.store.raw_values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let text = toy_model().to_text();
        assert!(Model::from_text("nope\n").is_err());
        assert!(Model::from_text(&text.replace("dim\t3", "dim\t4")).is_err());
        let truncated: String = text.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(Model::from_text(&truncated).is_err());
        assert!(Model::from_text(&format!("{text}extra\n")).is_err());
    }

    #[test]
    fn identical_records_predict_half() {
        let m = toy_model();
        let r = |id| Record::new(EntityId(id), vec![Some(ValueId(0)), Some(ValueId(3))]);
        let a = RecordSet::from_records(vec![r(0)]).unwrap();
        let b = RecordSet::from_records(vec![r(1)]).unwrap();
        let pairs = m.candidates(&a, &b, 100).unwrap();
        let out = m.predict(&pairs, &a, &b, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].g, out[0].p, out[0].decision), (Some(0.0), 0.5, Decision::Match));
    }
}
