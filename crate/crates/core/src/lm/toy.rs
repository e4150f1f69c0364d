//! Deterministic order-k n-gram model with add-alpha smoothing, plus the
//! word/punctuation tokenizer it shares with the dataset pipeline.
//!
//! The model is intentionally tiny: it is the desk-scale stand-in for a real
//! language model, chosen as the simplest thing that makes constrained
//! sampling non-degenerate while staying exactly checkable by hand.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::lm::{LanguageModel, TokenDistribution};
use crate::{Error, Result, TokenId, VocabSpec};

/// Punctuation characters that tokenize as single-character pieces.
const PUNCT: [char; 6] = ['.', '!', '?', ',', ';', ':'];

const SPECIAL_NAMES: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

/// Word/punctuation tokenizer for the toy model.
///
/// Ids 0, 1, 2 are the specials `<unk>`, `<bos>`, `<eos>`; remaining ids are
/// assigned to corpus pieces in order of first appearance. Detokenization
/// skips specials, prepends a single space to each word piece (except at the
/// start of the output), and appends punctuation pieces directly, so any
/// stream of known non-special pieces re-tokenizes to exactly the same ids,
/// which is what makes generated datasets self-validating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TokenizerFile", into = "TokenizerFile")]
pub struct ToyTokenizer {
    pieces: Vec<String>,
    lookup: BTreeMap<String, TokenId>,
}

impl ToyTokenizer {
    pub const UNK: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;

    /// Builds a tokenizer over every distinct piece of `text`.
    pub fn from_corpus(text: &str) -> Self {
        let mut pieces: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut lookup = BTreeMap::new();
        for piece in split_pieces(text) {
            if !lookup.contains_key(&piece) {
                lookup.insert(piece.clone(), pieces.len() as TokenId);
                pieces.push(piece);
            }
        }
        ToyTokenizer { pieces, lookup }
    }

    pub fn vocab_spec(&self) -> VocabSpec {
        VocabSpec::new(self.pieces.len() as u32, [Self::UNK, Self::BOS, Self::EOS])
            .expect("specials 0..3 fit any tokenizer vocabulary")
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false // three specials always present
    }

    pub fn piece(&self, id: TokenId) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// Splits text into pieces and maps each to its id; unknown pieces map
    /// to `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        split_pieces(text)
            .into_iter()
            .map(|piece| self.lookup.get(&piece).copied().unwrap_or(Self::UNK))
            .collect()
    }

    /// Inverse rendering; specials are skipped. Errors on out-of-range ids.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let piece = self.pieces.get(id as usize).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "token id {id} outside vocabulary of size {}",
                    self.pieces.len()
                ))
            })?;
            if id <= Self::EOS {
                continue;
            }
            if is_punct_piece(piece) {
                out.push_str(piece);
            } else {
                if !out.is_empty() {
                    out.push(' ');
                }
                out.push_str(piece);
            }
        }
        Ok(out)
    }
}

fn is_punct_piece(piece: &str) -> bool {
    let mut chars = piece.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if PUNCT.contains(&c))
}

fn split_pieces(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() || PUNCT.contains(&ch) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if PUNCT.contains(&ch) {
                out.push(ch.to_string());
            }
        } else {
            word.push(ch);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    pieces: Vec<String>,
}

impl TryFrom<TokenizerFile> for ToyTokenizer {
    type Error = Error;

    fn try_from(file: TokenizerFile) -> Result<Self> {
        if file.pieces.len() < SPECIAL_NAMES.len()
            || file.pieces[..SPECIAL_NAMES.len()] != SPECIAL_NAMES
        {
            return Err(Error::InvalidInput(
                "tokenizer file must start with the <unk>, <bos>, <eos> pieces".into(),
            ));
        }
        let mut lookup = BTreeMap::new();
        for (id, piece) in file.pieces.iter().enumerate().skip(SPECIAL_NAMES.len()) {
            if piece.chars().any(|c| c.is_whitespace())
                || (piece.chars().any(|c| PUNCT.contains(&c)) && !is_punct_piece(piece))
            {
                return Err(Error::InvalidInput(format!(
                    "piece {piece:?} mixes word and separator characters"
                )));
            }
            if lookup.insert(piece.clone(), id as TokenId).is_some() {
                return Err(Error::InvalidInput(format!("duplicate piece {piece:?}")));
            }
        }
        Ok(ToyTokenizer {
            pieces: file.pieces,
            lookup,
        })
    }
}

impl From<ToyTokenizer> for TokenizerFile {
    fn from(t: ToyTokenizer) -> Self {
        TokenizerFile { pieces: t.pieces }
    }
}

/// Successor counts for one context window.
#[derive(Clone, Debug, Default, PartialEq)]
struct CtxCounts {
    /// Total over non-special successors only.
    total: u64,
    successors: BTreeMap<TokenId, u64>,
}

/// Order-k n-gram model with add-alpha smoothing over non-special ids.
///
/// The distribution for a context conditions on its last `min(k, len)`
/// tokens; counts are collected for every window length `0..=k`, so short
/// contexts are first-class. There is no backoff: a window with zero
/// observations yields the uniform distribution over non-special ids.
/// Training and inference are fully deterministic (sorted maps, fixed-order
/// summation), so identical inputs give bit-identical distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyLm {
    order: usize,
    alpha: f64,
    vocab: VocabSpec,
    counts: BTreeMap<Vec<TokenId>, CtxCounts>,
    tokenizer: Option<ToyTokenizer>,
}

/// Trains a [`ToyLm`] on raw id sequences.
///
/// For every position `i` of every sequence and every window length
/// `l in 0..=k` with `l <= i`, the window `seq[i-l..i]` counts `seq[i]` as a
/// successor (special successors are ignored; they carry no continuation
/// statistics). Counting never crosses sequence boundaries, so training on
/// two corpora separately adds the same counts as training on their
/// concatenation.
pub fn train_toy_lm(
    corpus: &[Vec<TokenId>],
    order: usize,
    alpha: f64,
    vocab: VocabSpec,
) -> Result<ToyLm> {
    if order == 0 {
        return Err(Error::InvalidParameter("order must be >= 1".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive and finite, got {alpha}"
        )));
    }
    if corpus.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    if vocab.non_special_count() == 0 {
        return Err(Error::InvalidParameter(
            "vocabulary has no non-special ids".into(),
        ));
    }
    let mut counts: BTreeMap<Vec<TokenId>, CtxCounts> = BTreeMap::new();
    for seq in corpus {
        if let Some(&bad) = seq.iter().find(|&&id| !vocab.contains(id)) {
            return Err(Error::InvalidInput(format!(
                "corpus id {bad} outside vocabulary of size {}",
                vocab.size()
            )));
        }
        for i in 0..seq.len() {
            let successor = seq[i];
            if vocab.is_special(successor) {
                continue;
            }
            for l in 0..=order.min(i) {
                let entry = counts.entry(seq[i - l..i].to_vec()).or_default();
                *entry.successors.entry(successor).or_insert(0) += 1;
                entry.total += 1;
            }
        }
    }
    Ok(ToyLm {
        order,
        alpha,
        vocab,
        counts,
        tokenizer: None,
    })
}

impl ToyLm {
    /// Builds the tokenizer from `text`, then trains on one sequence per
    /// non-empty line.
    pub fn from_text(text: &str, order: usize, alpha: f64) -> Result<ToyLm> {
        let tokenizer = ToyTokenizer::from_corpus(text);
        let vocab = tokenizer.vocab_spec();
        let corpus: Vec<Vec<TokenId>> = text
            .lines()
            .map(|line| tokenizer.tokenize(line))
            .filter(|ids| !ids.is_empty())
            .collect();
        let mut lm = train_toy_lm(&corpus, order, alpha, vocab)?;
        lm.tokenizer = Some(tokenizer);
        Ok(lm)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tokenizer(&self) -> Option<&ToyTokenizer> {
        self.tokenizer.as_ref()
    }

    /// Raw successor count for an exact context window (not a suffix
    /// lookup). Exposed so count-level facts are testable.
    pub fn count(&self, context: &[TokenId], successor: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.successors.get(&successor).copied())
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ToyLmFile {
            order: self.order,
            alpha: self.alpha,
            vocab_size: self.vocab.size(),
            special_token_ids: self.vocab.specials().iter().copied().collect(),
            tokenizer: self.tokenizer.clone(),
            counts: self
                .counts
                .iter()
                .map(|(context, c)| CountRow {
                    context: context.clone(),
                    successors: c.successors.iter().map(|(&id, &n)| (id, n)).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<ToyLm> {
        let file: ToyLmFile = serde_json::from_str(text)?;
        if file.order == 0 {
            return Err(Error::InvalidParameter("order must be >= 1".into()));
        }
        if !(file.alpha.is_finite() && file.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive and finite, got {}",
                file.alpha
            )));
        }
        let vocab = VocabSpec::new(file.vocab_size, file.special_token_ids)?;
        let mut counts = BTreeMap::new();
        for row in file.counts {
            let mut ctx = CtxCounts::default();
            for (id, n) in row.successors {
                if !vocab.contains(id) {
                    return Err(Error::InvalidInput(format!(
                        "successor id {id} outside vocabulary of size {}",
                        vocab.size()
                    )));
                }
                if !vocab.is_special(id) {
                    ctx.total += n;
                }
                ctx.successors.insert(id, n);
            }
            counts.insert(row.context, ctx);
        }
        Ok(ToyLm {
            order: file.order,
            alpha: file.alpha,
            vocab,
            counts,
            tokenizer: file.tokenizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ToyLm> {
        let text = std::fs::read_to_string(path)?;
        ToyLm::from_json(&text)
    }
}

impl LanguageModel for ToyLm {
    fn vocab(&self) -> &VocabSpec {
        &self.vocab
    }

    /// Add-alpha smoothed successor distribution for the last
    /// `min(order, len)` context tokens. Support is exactly the non-special
    /// vocabulary: every non-special id gets positive mass, specials get
    /// none, and an unseen window is uniform.
    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        if let Some(&bad) = context.iter().find(|&&id| !self.vocab.contains(id)) {
            return Err(Error::InvalidInput(format!(
                "context id {bad} outside vocabulary of size {}",
                self.vocab.size()
            )));
        }
        let start = context.len() - self.order.min(context.len());
        let window = &context[start..];
        let empty = CtxCounts::default();
        let ctx = self.counts.get(window).unwrap_or(&empty);
        let denom = ctx.total as f64 + self.alpha * f64::from(self.vocab.non_special_count());
        let entries: Vec<(TokenId, f64)> = self
            .vocab
            .non_special_ids()
            .map(|id| {
                let count = ctx.successors.get(&id).copied().unwrap_or(0);
                (id, (count as f64 + self.alpha) / denom)
            })
            .collect();
        TokenDistribution::new(entries, self.vocab.size())
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        match &self.tokenizer {
            Some(t) => Ok(t.tokenize(text)),
            None => Err(Error::InvalidInput(
                "this toy model was trained on raw ids and has no tokenizer".into(),
            )),
        }
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        match &self.tokenizer {
            Some(t) => t.detokenize(ids),
            None => Err(Error::InvalidInput(
                "this toy model was trained on raw ids and has no tokenizer".into(),
            )),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ToyLmFile {
    order: usize,
    alpha: f64,
    vocab_size: u32,
    special_token_ids: Vec<TokenId>,
    tokenizer: Option<ToyTokenizer>,
    counts: Vec<CountRow>,
}

#[derive(Serialize, Deserialize)]
struct CountRow {
    context: Vec<TokenId>,
    successors: Vec<(TokenId, u64)>,
}

/// Built-in corpus behind the `toy:demo` model: plain everyday prose with
/// enough repetition to give the n-gram counts some texture.
pub const DEMO_CORPUS: &str = "\
the morning light settles over the quiet cove and the boats rock gently.
a baker slides fresh loaves from the oven and the smell drifts down the lane.
maps of the old city show narrow streets that bend toward the river.
we walked along the towpath while herons waited in the reeds.
the workshop smells of cedar shavings, oil, and patient work.
rain tapped on the tin roof all night; by dawn the garden was glad of it.
bring a spare line when you sail, and check the cleats before you leave.
the librarian stamps each card with a steady hand.
every spring the orchard wakes slowly: first the plums, then the apples.
a kettle sings in the kitchen while the cat ignores everyone.
the tide turns twice a day and the mudflats shine like pewter.
did you see the lighthouse blink through the fog last night?
fold the dough, rest it, and fold it again until it feels alive.
the carpenter measures twice and saws once, humming an old tune.
small boats need small repairs, but they need them often!
the market opens early; farmers stack crates of beets and kale.
a good map never argues with the land it describes.
we planted rows of carrots and the rabbits sent their thanks.
the ferry crossed the channel while gulls argued over crumbs.
keep your tools sharp and your promises simple.
the river is patient, and it always finds the sea.
";

/// The built-in demo model: the corpus above under order 2, alpha 0.5.
pub fn demo_model() -> ToyLm {
    ToyLm::from_text(DEMO_CORPUS, 2, 0.5).expect("built-in corpus trains cleanly")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_words_and_punctuation() {
        let t = ToyTokenizer::from_corpus("hello there. hello again!");
        let ids = t.tokenize("hello there. hello again!");
        assert_eq!(ids.len(), 6); // hello there . hello again !
        assert_eq!(ids[0], ids[3]);
        assert_eq!(t.detokenize(&ids).unwrap(), "hello there. hello again!");
    }

    #[test]
    fn tokenizer_maps_unknown_words_to_unk() {
        let t = ToyTokenizer::from_corpus("alpha beta");
        assert_eq!(t.tokenize("alpha gamma"), vec![3, ToyTokenizer::UNK]);
    }

    #[test]
    fn detokenize_skips_specials_and_round_trips() {
        let t = ToyTokenizer::from_corpus("bread rises, slowly.");
        let mut ids = t.tokenize("bread rises, slowly.");
        ids.insert(0, ToyTokenizer::BOS);
        ids.push(ToyTokenizer::EOS);
        let text = t.detokenize(&ids).unwrap();
        assert_eq!(text, "bread rises, slowly.");
        let reparsed = t.tokenize(&text);
        assert_eq!(reparsed, t.tokenize("bread rises, slowly."));
    }

    #[test]
    fn detokenize_rejects_out_of_range_ids() {
        let t = ToyTokenizer::from_corpus("one two");
        assert!(t.detokenize(&[99]).is_err());
    }

    #[test]
    fn tokenizer_serde_round_trip() {
        let t = ToyTokenizer::from_corpus("tools stay sharp; promises stay simple.");
        let json = serde_json::to_string(&t).unwrap();
        let restored: ToyTokenizer = serde_json::from_str(&json).unwrap();
        assert_eq!(restored, t);
    }

    #[test]
    fn bigram_counts_match_hand_computation() {
        // Corpus "abab" as ids 0,1,0,1 with k = 1, alpha = 1, vocab size 2:
        // P(1 | 0) = (2 + 1) / (2 + 1 * 2) = 3/4.
        let vocab = VocabSpec::new(2, []).unwrap();
        let lm = train_toy_lm(&[vec![0, 1, 0, 1]], 1, 1.0, vocab).unwrap();
        assert_eq!(lm.count(&[0], 1), 2);
        assert_eq!(lm.count(&[1], 0), 1);
        let d = lm.next_distribution(&[0]).unwrap();
        assert!((d.prob(1) - 0.75).abs() < 1e-12);
        assert!((d.prob(0) - 0.25).abs() < 1e-12);
        assert_eq!(d.sorted_desc()[0].0, 1);
    }

    #[test]
    fn single_token_corpus_smooths_to_hand_computed_masses() {
        // One observation of id 5, alpha = 0.5, vocab 10: the unigram
        // backoff gives P(5) = (1 + 0.5) / (1 + 0.5 * 10) = 0.25 and
        // P(other) = 0.5 / 6 = 1/12.
        let vocab = VocabSpec::new(10, []).unwrap();
        let lm = train_toy_lm(&[vec![5]], 2, 0.5, vocab).unwrap();
        let d = lm.next_distribution(&[]).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.sorted_desc()[0].0, 5);
        assert!((d.prob(5) - 0.25).abs() < 1e-12);
        for id in [0, 1, 2, 3, 4, 6, 7, 8, 9] {
            assert!((d.prob(id) - 1.0 / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unseen_context_is_uniform_over_non_specials() {
        let vocab = VocabSpec::new(8, [0]).unwrap();
        let lm = train_toy_lm(&[vec![3, 4, 3]], 2, 0.5, vocab).unwrap();
        let d = lm.next_distribution(&[7, 6]).unwrap();
        assert_eq!(d.len(), 7);
        assert_eq!(d.prob(0), 0.0);
        for &(_, p) in d.entries() {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn counts_are_additive_across_disjoint_corpora() {
        let vocab = VocabSpec::new(6, []).unwrap();
        let a = vec![vec![0, 1, 2, 1, 0]];
        let b = vec![vec![2, 1, 2, 3, 4]];
        let joint: Vec<Vec<TokenId>> = a.iter().chain(b.iter()).cloned().collect();
        let lm_a = train_toy_lm(&a, 2, 0.5, vocab.clone()).unwrap();
        let lm_b = train_toy_lm(&b, 2, 0.5, vocab.clone()).unwrap();
        let lm_joint = train_toy_lm(&joint, 2, 0.5, vocab).unwrap();
        for ctx in [vec![], vec![1], vec![2], vec![0, 1], vec![2, 1], vec![1, 2]] {
            for successor in 0..6 {
                assert_eq!(
                    lm_joint.count(&ctx, successor),
                    lm_a.count(&ctx, successor) + lm_b.count(&ctx, successor),
                    "context {ctx:?} successor {successor}"
                );
            }
        }
    }

    #[test]
    fn distributions_are_bit_identical_across_calls() {
        let lm = demo_model();
        let ctx = lm.tokenize("the river").unwrap();
        let a = lm.next_distribution(&ctx).unwrap();
        let b = lm.next_distribution(&ctx).unwrap();
        assert_eq!(a, b); // exact f64 equality, not approximate
    }

    #[test]
    fn distribution_sums_to_one_within_tolerance() {
        let lm = demo_model();
        let d = lm.next_distribution(&[]).unwrap();
        let sum: f64 = d.entries().iter().map(|&(_, p)| p).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(d.len() as u32, lm.vocab().non_special_count());
    }

    #[test]
    fn model_serde_round_trip() {
        let lm = demo_model();
        let restored = ToyLm::from_json(&lm.to_json().unwrap()).unwrap();
        assert_eq!(restored, lm);
        let ctx = lm.tokenize("fold the dough").unwrap();
        assert_eq!(
            restored.next_distribution(&ctx).unwrap(),
            lm.next_distribution(&ctx).unwrap()
        );
    }

    #[test]
    fn train_rejects_bad_parameters() {
        let vocab = VocabSpec::new(4, []).unwrap();
        assert!(train_toy_lm(&[vec![0]], 0, 0.5, vocab.clone()).is_err());
        assert!(train_toy_lm(&[vec![0]], 2, 0.0, vocab.clone()).is_err());
        assert!(train_toy_lm(&[], 2, 0.5, vocab.clone()).is_err());
        assert!(train_toy_lm(&[vec![9]], 2, 0.5, vocab).is_err());
    }

    #[test]
    fn demo_model_has_usable_vocabulary() {
        let lm = demo_model();
        // Parity and small modulo partitions must all be constructible.
        assert!(lm.vocab().non_special_count() >= 16);
        for buckets in [2u32, 4, 8] {
            crate::partition::modulo_partition(lm.vocab(), buckets).unwrap();
        }
    }
}
