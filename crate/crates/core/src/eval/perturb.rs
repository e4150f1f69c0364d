//! Seeded token-stream perturbation: independent per-token deletion and
//! substitution plus per-gap insertion, the adversarial channel the decoder
//! is measured against.
//!
//! Draw order is part of the determinism contract. For each original token,
//! in order: one deletion draw; if the token survives, one substitution
//! draw (plus one replacement draw when it fires); then one insertion draw
//! for the gap following the token (plus one id draw when it fires). A
//! deleted token consumes no substitution draw. Gaps before the first
//! token are never filled.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::partition::VocabSpec;
use crate::{Error, Result, TokenId};

/// How substitution replacements are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubstitutionDistribution {
    /// Uniform over all non-special ids other than the original. Over a
    /// near-balanced 2-bucket partition this flips the decoded bit with
    /// probability close to 1/2, the usual channel model.
    UniformOverVocab,
    /// Drawn from the input stream itself (with multiplicity), retried up
    /// to 32 times to avoid the original, then falling back to the uniform
    /// rule. Substitutions stay plausible for the surrounding text.
    WithinDistribution,
}

impl std::fmt::Display for SubstitutionDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SubstitutionDistribution::UniformOverVocab => "uniform-over-vocab",
            SubstitutionDistribution::WithinDistribution => "within-distribution",
        })
    }
}

impl std::str::FromStr for SubstitutionDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-over-vocab" => Ok(SubstitutionDistribution::UniformOverVocab),
            "within-distribution" => Ok(SubstitutionDistribution::WithinDistribution),
            other => Err(Error::InvalidParameter(format!(
                "unknown substitution distribution {other:?}"
            ))),
        }
    }
}

/// Independent per-token perturbation rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationModel {
    pub substitution_rate: f64,
    pub insertion_rate: f64,
    pub deletion_rate: f64,
    pub substitution_distribution: SubstitutionDistribution,
}

impl Default for PerturbationModel {
    fn default() -> Self {
        PerturbationModel {
            substitution_rate: 0.0,
            insertion_rate: 0.0,
            deletion_rate: 0.0,
            substitution_distribution: SubstitutionDistribution::UniformOverVocab,
        }
    }
}

impl PerturbationModel {
    /// Substitution-only channel at rate `q`, replacements uniform.
    pub fn substitution(q: f64) -> Self {
        PerturbationModel {
            substitution_rate: q,
            ..PerturbationModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, rate) in [
            ("substitution_rate", self.substitution_rate),
            ("insertion_rate", self.insertion_rate),
            ("deletion_rate", self.deletion_rate),
        ] {
            if !(rate.is_finite() && (0.0..=1.0).contains(&rate)) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {rate}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.substitution_rate == 0.0 && self.insertion_rate == 0.0 && self.deletion_rate == 0.0
    }
}

/// Applies `model` to `tokens`. Substitutions never reproduce the original
/// token; insertions draw uniformly over non-special ids.
pub fn perturb_tokens(
    tokens: &[TokenId],
    model: &PerturbationModel,
    vocab: &VocabSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>> {
    model.validate()?;
    let candidates: Vec<TokenId> = vocab.non_special_ids().collect();
    if model.substitution_rate > 0.0 && candidates.len() < 2 {
        return Err(Error::InvalidParameter(
            "substitution needs at least 2 non-special ids".into(),
        ));
    }
    if model.insertion_rate > 0.0 && candidates.is_empty() {
        return Err(Error::InvalidParameter(
            "insertion needs a non-special id to draw".into(),
        ));
    }
    let mut output = Vec::with_capacity(tokens.len());
    for &token in tokens {
        if model.deletion_rate > 0.0 && rng.random::<f64>() < model.deletion_rate {
            // Deleted tokens consume no substitution draw.
        } else if model.substitution_rate > 0.0 && rng.random::<f64>() < model.substitution_rate {
            output.push(draw_replacement(token, tokens, model, &candidates, rng));
        } else {
            output.push(token);
        }
        if model.insertion_rate > 0.0 && rng.random::<f64>() < model.insertion_rate {
            output.push(candidates[rng.random_range(0..candidates.len())]);
        }
    }
    Ok(output)
}

fn draw_replacement(
    original: TokenId,
    stream: &[TokenId],
    model: &PerturbationModel,
    candidates: &[TokenId],
    rng: &mut ChaCha8Rng,
) -> TokenId {
    if model.substitution_distribution == SubstitutionDistribution::WithinDistribution {
        for _ in 0..32 {
            let drawn = stream[rng.random_range(0..stream.len())];
            if drawn != original {
                return drawn;
            }
        }
    }
    // Uniform over candidates minus the original, with one draw: skip past
    // the original's slot when it sits inside the candidate list.
    match candidates.binary_search(&original) {
        Ok(slot) => {
            let drawn = rng.random_range(0..candidates.len() - 1);
            candidates[if drawn >= slot { drawn + 1 } else { drawn }]
        }
        Err(_) => candidates[rng.random_range(0..candidates.len())],
    }
}
