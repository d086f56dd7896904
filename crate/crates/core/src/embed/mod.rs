//! First training step: translation embeddings for attribute values and
//! attributes, learned from evolution triples.

mod gradcheck;
mod store;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gradcheck::{gradient_check, margin_loss, GradCheck, SkipReason};
pub use store::{init_embeddings, translation_distance, EmbeddingStore};
pub use train::{train_embeddings, train_embeddings_from, EmbedTraining};

pub(crate) use gradcheck::relative_error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Norm {
    L1,
    L2,
}

impl TryFrom<u8> for Norm {
    type Error = String;

    fn try_from(p: u8) -> std::result::Result<Self, String> {
        match p {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            p => Err(format!("norm must be 1 or 2, got {p}")),
        }
    }
}

impl From<Norm> for u8 {
    fn from(n: Norm) -> u8 {
        match n {
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedHyperparams {
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives: usize,
    pub norm: Norm,
    pub seed: u64,
}

impl Default for EmbedHyperparams {
    fn default() -> Self {
        EmbedHyperparams {
            dim: 50,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 64,
            negatives: 1,
            norm: Norm::L2,
            seed: 0,
        }
    }
}

impl EmbedHyperparams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("embed.{key}"), msg))
            }
        };
        check(self.dim >= 1, "dim", "must be at least 1")?;
        check(self.margin > 0.0 && self.margin.is_finite(), "margin", "must be positive")?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "must be positive",
        )?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(self.negatives >= 1, "negatives", "must be at least 1")?;
        Ok(())
    }
}
