//! Language-model abstraction: next-token distributions over a fixed
//! vocabulary, a deterministic built-in toy n-gram model for desk-scale
//! verification, and a wire adapter for external models.

mod adapter;
mod toy;

pub use adapter::{serve_connection, serve_tcp, AdapterModel};
pub use toy::{demo_model, train_toy_lm, ToyLm, ToyTokenizer, DEMO_CORPUS};

use crate::{Error, Result, TokenId, VocabSpec};

/// A next-token probability distribution.
///
/// Entries hold strictly positive, finite probabilities over unique
/// in-range token ids and sum to 1 within 1e-9.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    entries: Vec<(TokenId, f64)>,
}

impl TokenDistribution {
    /// Validates and wraps probability entries.
    pub fn new(entries: Vec<(TokenId, f64)>, vocab_size: u32) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidInput("distribution has no entries".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut sum = 0.0f64;
        for &(id, p) in &entries {
            if id >= vocab_size {
                return Err(Error::InvalidInput(format!(
                    "token id {id} outside vocabulary of size {vocab_size}"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!("duplicate token id {id}")));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "probability {p} for id {id} is not strictly positive and finite"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1 within 1e-9"
            )));
        }
        Ok(TokenDistribution { entries })
    }

    /// Renormalizes positive weights into a proper distribution. Entries
    /// with non-positive weight are dropped; at least one positive weight
    /// must remain.
    pub fn from_weights(entries: Vec<(TokenId, f64)>, vocab_size: u32) -> Result<Self> {
        let kept: Vec<(TokenId, f64)> = entries
            .into_iter()
            .filter(|&(_, w)| w.is_finite() && w > 0.0)
            .collect();
        let total: f64 = kept.iter().map(|&(_, w)| w).sum();
        if kept.is_empty() || total <= 0.0 {
            return Err(Error::InvalidInput(
                "no positive weights to normalize".into(),
            ));
        }
        let normalized = kept.into_iter().map(|(id, w)| (id, w / total)).collect();
        TokenDistribution::new(normalized, vocab_size)
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The probability of `id`, or 0 if absent.
    pub fn prob(&self, id: TokenId) -> f64 {
        self.entries
            .iter()
            .find(|&&(t, _)| t == id)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Entries sorted by descending probability, ties broken by lowest id,
    /// so "most probable token" is well defined even on degenerate
    /// distributions.
    pub fn sorted_desc(&self) -> Vec<(TokenId, f64)> {
        let mut sorted = self.entries.clone();
        sorted.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("probabilities are finite")
                .then(a.0.cmp(&b.0))
        });
        sorted
    }
}

/// Shared interface over the toy model and external adapters.
///
/// `next_distribution` must be deterministic for a given context. Tokenize
/// and detokenize belong to the model because sentence trimming operates on
/// text. Implementations are shareable across threads so evaluation grids
/// can fan out over one model.
pub trait LanguageModel: Send + Sync {
    fn vocab(&self) -> &VocabSpec;

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution>;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, ids: &[TokenId]) -> Result<String>;
}
