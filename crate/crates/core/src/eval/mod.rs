//! Quantitative evaluation of the encode/decode pipeline at desk scale:
//! bit-level metrics, analytic and simulated majority-voting error, and
//! grid harnesses for throughput and robustness, with CSV export.
//!
//! Every harness is bit-reproducible from (config, seed). Grid cells are
//! independent tasks: with `cells` total cells and `votes` votes per cell,
//! cell `c = prompt_index * keys + key_index` encodes vote `v` on RNG
//! stream `2*(v*cells + c)` and perturbs variant `p` of that vote on
//! stream `2*((p+1)*votes*cells + v*cells + c) + 1`, all derived from the
//! configured seed, so results do not depend on execution order.

mod perturb;

pub use perturb::{perturb_tokens, PerturbationModel, SubstitutionDistribution};

use std::collections::{BTreeMap, BTreeSet};

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_secret, BitSequence, Secret};
use crate::dataset::{build_prompt, conditioning_text};
use crate::decoder::{decode_majority, decode_secret_at_offset};
use crate::encoder::{encode_generate_with_rng, GenerationConfig, RepetitionMode};
use crate::lm::LanguageModel;
use crate::partition::BucketPartition;
use crate::{config_digest, Error, Result, TokenId};

/// Report-header annotations: externally published results for fine-tuned
/// assistant models, recorded for context. None of them is reproducible
/// with the bundled reference encoder, which decodes its own output exactly
/// by construction.
pub const PUBLISHED_THROUGHPUT_NOTE: &str = "Published fine-tuned reference (8B-class \
assistant, 32-bit keys, first 32 payload tokens): 99.2% correct bits, 87.4% exact match. \
Context only; not reproducible with the reference encoder.";
pub const PUBLISHED_VOTING_NOTE: &str = "Published fine-tuned reference with majority \
voting: exact match near 78% for one generation, 97% for three, 99% for five. The \
analytic curve reproduces the direction, not these figures.";
pub const PUBLISHED_ROBUSTNESS_NOTE: &str = "Published fine-tuned reference for \
later-offset decoding: roughly 97.6% correct bits past the first 32 and 95.8% past the \
first 64. Context only; unedited reference streams decode later offsets exactly.";

/// Outcome of one decode against its reference payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeReport {
    pub correct_bits_fraction: f64,
    pub exact_match: bool,
    /// Bit positions (ascending) where the decode disagreed.
    pub per_position_errors: Vec<u32>,
    /// Payload-bearing tokens a decode of this payload consumes.
    pub tokens_consumed: u32,
}

/// Bit positions in `0..m` (ascending) where the sequences disagree.
pub fn mismatch_positions(
    reference: &BitSequence,
    decoded: &BitSequence,
    m: usize,
) -> Result<Vec<u32>> {
    if m == 0 {
        return Err(Error::InvalidParameter("cannot compare 0 bits".into()));
    }
    if reference.len() < m || decoded.len() < m {
        return Err(Error::Truncation(format!(
            "comparing {m} bits needs both sequences that long, got {} and {}",
            reference.len(),
            decoded.len()
        )));
    }
    Ok(reference.bits()[..m]
        .iter()
        .zip(&decoded.bits()[..m])
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, _)| i as u32)
        .collect())
}

/// Fraction of the first `m` positions on which the sequences agree.
pub fn correct_bits(reference: &BitSequence, decoded: &BitSequence, m: usize) -> Result<f64> {
    let errors = mismatch_positions(reference, decoded, m)?;
    Ok(1.0 - errors.len() as f64 / m as f64)
}

/// True exactly when all of the first `m` positions agree.
pub fn exact_match(reference: &BitSequence, decoded: &BitSequence, m: usize) -> Result<bool> {
    Ok(mismatch_positions(reference, decoded, m)?.is_empty())
}

fn binomial(n: u32, k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// Expected per-bit error after majority voting over `n` independent
/// generations whose bits flip independently with probability `p`: the
/// binomial upper tail over k > n/2 wrong votes. Vote counts must be odd
/// and positive so ties cannot arise.
pub fn voting_error_curve(p: f64, n_values: &[u32]) -> Result<Vec<f64>> {
    validate_flip_probability(p)?;
    let mut curve = Vec::with_capacity(n_values.len());
    for &n in n_values {
        validate_vote_count(n)?;
        let error: f64 = (n / 2 + 1..=n)
            .map(|k| binomial(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
            .sum();
        curve.push(error);
    }
    Ok(curve)
}

/// Monte Carlo counterpart of [`voting_error_curve`] for one vote count:
/// simulates `num_bits` positions independently and returns the measured
/// post-vote error rate.
pub fn simulate_voting_error(
    p: f64,
    n_votes: u32,
    num_bits: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    validate_flip_probability(p)?;
    validate_vote_count(n_votes)?;
    if num_bits == 0 {
        return Err(Error::InvalidParameter("no bits to simulate".into()));
    }
    let mut wrong = 0usize;
    for _ in 0..num_bits {
        let flips = (0..n_votes).filter(|_| rng.random::<f64>() < p).count();
        if flips * 2 > n_votes as usize {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / num_bits as f64)
}

fn validate_flip_probability(p: f64) -> Result<()> {
    if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidParameter(format!(
            "flip probability must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

fn validate_vote_count(n: u32) -> Result<()> {
    if n == 0 || n % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "vote counts must be odd and positive, got {n}"
        )));
    }
    Ok(())
}

/// A prompt or key together with its training-exposure label; the labels
/// split aggregate metrics into the trained/untrained axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labeled {
    pub text: String,
    pub trained: bool,
}

impl Labeled {
    pub fn trained(text: impl Into<String>) -> Self {
        Labeled {
            text: text.into(),
            trained: true,
        }
    }

    pub fn untrained(text: impl Into<String>) -> Self {
        Labeled {
            text: text.into(),
            trained: false,
        }
    }
}

fn default_n_votes() -> u32 {
    1
}

fn default_offsets() -> Vec<usize> {
    vec![0]
}

/// Full description of an evaluation grid: prompt and key axes, partition,
/// sampling settings, and the vote/offset/perturbation sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub prompts: Vec<Labeled>,
    pub keys: Vec<Labeled>,
    pub partition: BucketPartition,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default = "default_n_votes")]
    pub n_votes: u32,
    #[serde(default = "default_offsets")]
    pub offsets: Vec<usize>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationModel>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::InvalidParameter("prompt set is empty".into()));
        }
        if self.keys.is_empty() {
            return Err(Error::InvalidParameter("key set is empty".into()));
        }
        for (name, set) in [("prompt", &self.prompts), ("key", &self.keys)] {
            let texts: BTreeSet<&String> = set.iter().map(|l| &l.text).collect();
            if texts.len() != set.len() {
                return Err(Error::InvalidParameter(format!(
                    "{name} set contains duplicate texts, so the trained and untrained \
                     splits would overlap"
                )));
            }
        }
        if self.keys.iter().any(|k| k.text.is_empty()) {
            return Err(Error::InvalidParameter("key set contains an empty key".into()));
        }
        self.generation.validate()?;
        validate_vote_count(self.n_votes)?;
        for perturbation in &self.perturbations {
            perturbation.validate()?;
        }
        Ok(())
    }
}

/// One (prompt, key, variant) outcome in a throughput grid. `perturbation`
/// of `None` decodes the clean streams; `Some(i)` decodes them after
/// `perturbations[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputCell {
    pub prompt_index: usize,
    pub key_index: usize,
    pub trained_prompt: bool,
    pub trained_key: bool,
    pub perturbation: Option<usize>,
    pub report: Option<DecodeReport>,
    pub error: Option<String>,
}

/// Metrics over one group of cells. Means cover only the cells that
/// decoded; failures are tallied separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cells: u32,
    pub failures: u32,
    pub correct_bits_mean: f64,
    pub exact_match_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub config_hash: String,
    pub seed: u64,
    pub notes: Vec<String>,
    pub cells: Vec<ThroughputCell>,
    /// Keyed `<variant>/<axis>`, e.g. `clean/overall`,
    /// `perturbed-0/trained-prompt+untrained-key`.
    pub aggregates: BTreeMap<String, AggregateRow>,
}

fn variant_label(perturbation: Option<usize>) -> String {
    match perturbation {
        None => "clean".to_string(),
        Some(i) => format!("perturbed-{i}"),
    }
}

fn exposure(word: bool) -> &'static str {
    if word {
        "trained"
    } else {
        "untrained"
    }
}

fn aggregate<'a>(reports: impl Iterator<Item = Option<&'a DecodeReport>>) -> AggregateRow {
    let mut cells = 0u32;
    let mut failures = 0u32;
    let mut correct_sum = 0.0f64;
    let mut exact = 0u32;
    for report in reports {
        cells += 1;
        match report {
            None => failures += 1,
            Some(r) => {
                correct_sum += r.correct_bits_fraction;
                if r.exact_match {
                    exact += 1;
                }
            }
        }
    }
    let successes = cells - failures;
    AggregateRow {
        cells,
        failures,
        correct_bits_mean: if successes > 0 {
            correct_sum / successes as f64
        } else {
            0.0
        },
        exact_match_rate: if successes > 0 {
            exact as f64 / successes as f64
        } else {
            0.0
        },
    }
}

fn report_for(
    reference: &BitSequence,
    decoded: &BitSequence,
    m: usize,
    partition: &BucketPartition,
) -> Result<DecodeReport> {
    let errors = mismatch_positions(reference, decoded, m)?;
    Ok(DecodeReport {
        correct_bits_fraction: 1.0 - errors.len() as f64 / m as f64,
        exact_match: errors.is_empty(),
        per_position_errors: errors,
        tokens_consumed: m.div_ceil(partition.group_width() as usize) as u32,
    })
}

/// Payload and conditioning for one grid cell.
fn cell_payload(
    lm: &dyn LanguageModel,
    prompt: &Labeled,
    key: &Labeled,
) -> Result<(BitSequence, Vec<TokenId>)> {
    let payload = encode_secret(&Secret::from_text(&key.text));
    let (system, user) = build_prompt(&key.text, &prompt.text);
    let prompt_ids = lm.tokenize(&conditioning_text(&system, &user))?;
    Ok((payload, prompt_ids))
}

fn encode_votes(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    cell_index: u64,
    cells_total: u64,
    payload: &BitSequence,
    prompt_ids: &[TokenId],
) -> Result<Vec<Vec<TokenId>>> {
    let mut streams = Vec::with_capacity(config.n_votes as usize);
    for vote in 0..config.n_votes as u64 {
        let task = 2 * (vote * cells_total + cell_index);
        let mut rng = crate::rng::task_rng(config.generation.seed, task);
        streams.push(encode_generate_with_rng(
            lm,
            prompt_ids,
            payload,
            &config.partition,
            &config.generation,
            &mut rng,
        )?);
    }
    Ok(streams)
}

fn perturbed_stream(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    cell_index: u64,
    cells_total: u64,
    vote: u64,
    perturbation: usize,
    stream: &[TokenId],
) -> Result<Vec<TokenId>> {
    let votes = config.n_votes as u64;
    let task =
        2 * ((perturbation as u64 + 1) * votes * cells_total + vote * cells_total + cell_index) + 1;
    let mut rng = crate::rng::task_rng(config.generation.seed, task);
    perturb_tokens(
        stream,
        &config.perturbations[perturbation],
        lm.vocab(),
        &mut rng,
    )
}

/// Fans `f` out over `items` on up to `jobs` scoped threads and returns the
/// results in item order. Cells draw from RNG streams keyed by their own
/// indices, so the schedule cannot affect any result.
fn run_cells<T: Sync, R: Send>(
    jobs: usize,
    items: &[T],
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|slice| scope.spawn(move || slice.iter().map(f).collect::<Vec<R>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    })
}

fn grid_pairs(config: &ExperimentConfig) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(config.prompts.len() * config.keys.len());
    for prompt_index in 0..config.prompts.len() {
        for key_index in 0..config.keys.len() {
            pairs.push((prompt_index, key_index));
        }
    }
    pairs
}

fn throughput_cell_group(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    variants: &[Option<usize>],
    prompt_index: usize,
    key_index: usize,
) -> Vec<ThroughputCell> {
    let prompt = &config.prompts[prompt_index];
    let key = &config.keys[key_index];
    let cells_total = (config.prompts.len() * config.keys.len()) as u64;
    let cell_index = (prompt_index * config.keys.len() + key_index) as u64;
    let template = ThroughputCell {
        prompt_index,
        key_index,
        trained_prompt: prompt.trained,
        trained_key: key.trained,
        perturbation: None,
        report: None,
        error: None,
    };
    let encoded = cell_payload(lm, prompt, key).and_then(|(payload, prompt_ids)| {
        let streams = encode_votes(config, lm, cell_index, cells_total, &payload, &prompt_ids)?;
        Ok((payload, streams))
    });
    match encoded {
        Err(e) => variants
            .iter()
            .map(|&variant| ThroughputCell {
                perturbation: variant,
                error: Some(e.to_string()),
                ..template.clone()
            })
            .collect(),
        Ok((payload, streams)) => variants
            .iter()
            .map(|&variant| {
                let outcome = decode_throughput_variant(
                    config,
                    lm,
                    cell_index,
                    cells_total,
                    &payload,
                    &streams,
                    variant,
                );
                match outcome {
                    Ok(report) => ThroughputCell {
                        perturbation: variant,
                        report: Some(report),
                        ..template.clone()
                    },
                    Err(e) => ThroughputCell {
                        perturbation: variant,
                        error: Some(e.to_string()),
                        ..template.clone()
                    },
                }
            })
            .collect(),
    }
}

/// Runs the full (prompt x key) grid: encode `n_votes` streams per cell,
/// decode the first `m` payload bits clean and after each configured
/// perturbation, and aggregate by the trained/untrained axes. Encode or
/// decode failures are recorded in their cells, never fatal.
pub fn eval_throughput(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
) -> Result<ThroughputReport> {
    eval_throughput_with_jobs(config, lm, 1)
}

/// [`eval_throughput`] over up to `jobs` worker threads. Any job count
/// yields the identical report.
pub fn eval_throughput_with_jobs(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    jobs: usize,
) -> Result<ThroughputReport> {
    config.validate()?;
    if jobs == 0 {
        return Err(Error::InvalidParameter("job count must be >= 1".into()));
    }
    let config_hash = config_digest(config)?;
    let variants: Vec<Option<usize>> = std::iter::once(None)
        .chain((0..config.perturbations.len()).map(Some))
        .collect();
    let pairs = grid_pairs(config);
    let cells: Vec<ThroughputCell> = run_cells(jobs, &pairs, |&(prompt_index, key_index)| {
        throughput_cell_group(config, lm, &variants, prompt_index, key_index)
    })
    .into_iter()
    .flatten()
    .collect();
    let mut aggregates = BTreeMap::new();
    for &variant in &variants {
        let label = variant_label(variant);
        let in_variant: Vec<&ThroughputCell> = cells
            .iter()
            .filter(|c| c.perturbation == variant)
            .collect();
        aggregates.insert(
            format!("{label}/overall"),
            aggregate(in_variant.iter().map(|c| c.report.as_ref())),
        );
        for trained_prompt in [true, false] {
            for trained_key in [true, false] {
                let group: Vec<&&ThroughputCell> = in_variant
                    .iter()
                    .filter(|c| {
                        c.trained_prompt == trained_prompt && c.trained_key == trained_key
                    })
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let axis = format!(
                    "{}-prompt+{}-key",
                    exposure(trained_prompt),
                    exposure(trained_key)
                );
                aggregates.insert(
                    format!("{label}/{axis}"),
                    aggregate(group.into_iter().map(|c| c.report.as_ref())),
                );
            }
        }
    }
    Ok(ThroughputReport {
        config_hash,
        seed: config.generation.seed,
        notes: vec![
            PUBLISHED_THROUGHPUT_NOTE.to_string(),
            PUBLISHED_VOTING_NOTE.to_string(),
        ],
        cells,
        aggregates,
    })
}

fn decode_throughput_variant(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    cell_index: u64,
    cells_total: u64,
    payload: &BitSequence,
    streams: &[Vec<TokenId>],
    variant: Option<usize>,
) -> Result<DecodeReport> {
    let m = payload.len();
    let mut decode_streams = streams.to_vec();
    if let Some(perturbation) = variant {
        for (vote, stream) in decode_streams.iter_mut().enumerate() {
            *stream = perturbed_stream(
                config,
                lm,
                cell_index,
                cells_total,
                vote as u64,
                perturbation,
                stream,
            )?;
        }
    }
    let decoded = if decode_streams.len() == 1 {
        decode_secret_at_offset(&decode_streams[0], &config.partition, m, 0)?
    } else {
        decode_majority(&decode_streams, &config.partition, m)?
    };
    report_for(payload, &decoded.bits, m, &config.partition)
}

/// One (prompt, key, offset, variant) outcome in a robustness grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub prompt_index: usize,
    pub key_index: usize,
    pub offset: usize,
    pub perturbation: Option<usize>,
    pub report: Option<DecodeReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config_hash: String,
    pub seed: u64,
    pub notes: Vec<String>,
    pub cells: Vec<RobustnessCell>,
    /// Keyed `<variant>/offset-<bits>`.
    pub aggregates: BTreeMap<String, AggregateRow>,
}

fn robustness_cell_group(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    variants: &[Option<usize>],
    prompt_index: usize,
    key_index: usize,
) -> Vec<RobustnessCell> {
    let prompt = &config.prompts[prompt_index];
    let key = &config.keys[key_index];
    let cells_total = (config.prompts.len() * config.keys.len()) as u64;
    let cell_index = (prompt_index * config.keys.len() + key_index) as u64;
    let mut cells = Vec::new();
    let push_failures = |cells: &mut Vec<RobustnessCell>, variant, message: &str| {
        for &offset in &config.offsets {
            cells.push(RobustnessCell {
                prompt_index,
                key_index,
                offset,
                perturbation: variant,
                report: None,
                error: Some(message.to_string()),
            });
        }
    };
    let encoded = cell_payload(lm, prompt, key).and_then(|(payload, prompt_ids)| {
        let stream = encode_single(config, lm, cell_index, &payload, &prompt_ids)?;
        Ok((payload, stream))
    });
    let (payload, stream) = match encoded {
        Err(e) => {
            for &variant in variants {
                push_failures(&mut cells, variant, &e.to_string());
            }
            return cells;
        }
        Ok(pair) => pair,
    };
    let m = payload.len();
    for &variant in variants {
        let decode_stream = match variant {
            None => Ok(stream.clone()),
            Some(perturbation) => {
                perturbed_stream(config, lm, cell_index, cells_total, 0, perturbation, &stream)
            }
        };
        let decode_stream = match decode_stream {
            Err(e) => {
                push_failures(&mut cells, variant, &e.to_string());
                continue;
            }
            Ok(s) => s,
        };
        for &offset in &config.offsets {
            let outcome = decode_secret_at_offset(&decode_stream, &config.partition, m, offset)
                .and_then(|d| report_for(&payload, &d.bits, m, &config.partition));
            cells.push(match outcome {
                Ok(report) => RobustnessCell {
                    prompt_index,
                    key_index,
                    offset,
                    perturbation: variant,
                    report: Some(report),
                    error: None,
                },
                Err(e) => RobustnessCell {
                    prompt_index,
                    key_index,
                    offset,
                    perturbation: variant,
                    report: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    cells
}

/// Encodes each (prompt, key) cell once (cyclic repetition required), then
/// decodes it at every configured offset, clean and after each
/// perturbation. Offsets are in bits and must be group-aligned.
pub fn eval_robustness(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
) -> Result<RobustnessReport> {
    eval_robustness_with_jobs(config, lm, 1)
}

/// [`eval_robustness`] over up to `jobs` worker threads. Any job count
/// yields the identical report.
pub fn eval_robustness_with_jobs(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    jobs: usize,
) -> Result<RobustnessReport> {
    config.validate()?;
    if jobs == 0 {
        return Err(Error::InvalidParameter("job count must be >= 1".into()));
    }
    if config.generation.repetition_mode != RepetitionMode::Cyclic {
        return Err(Error::InvalidParameter(
            "robustness evaluation requires cyclic repetition".into(),
        ));
    }
    if config.offsets.is_empty() {
        return Err(Error::InvalidParameter("offset list is empty".into()));
    }
    let config_hash = config_digest(config)?;
    let variants: Vec<Option<usize>> = std::iter::once(None)
        .chain((0..config.perturbations.len()).map(Some))
        .collect();
    let pairs = grid_pairs(config);
    let cells: Vec<RobustnessCell> = run_cells(jobs, &pairs, |&(prompt_index, key_index)| {
        robustness_cell_group(config, lm, &variants, prompt_index, key_index)
    })
    .into_iter()
    .flatten()
    .collect();
    let mut aggregates = BTreeMap::new();
    for &variant in &variants {
        let label = variant_label(variant);
        for &offset in &config.offsets {
            let group: Vec<Option<&DecodeReport>> = cells
                .iter()
                .filter(|c| c.perturbation == variant && c.offset == offset)
                .map(|c| c.report.as_ref())
                .collect();
            if group.is_empty() {
                continue;
            }
            aggregates.insert(
                format!("{label}/offset-{offset}"),
                aggregate(group.into_iter()),
            );
        }
    }
    Ok(RobustnessReport {
        config_hash,
        seed: config.generation.seed,
        notes: vec![PUBLISHED_ROBUSTNESS_NOTE.to_string()],
        cells,
        aggregates,
    })
}

/// Single-vote encode used by the robustness harness; reuses the vote-0
/// stream id so clean robustness streams match throughput's first vote.
fn encode_single(
    config: &ExperimentConfig,
    lm: &dyn LanguageModel,
    cell_index: u64,
    payload: &BitSequence,
    prompt_ids: &[TokenId],
) -> Result<Vec<TokenId>> {
    let task = 2 * cell_index;
    let mut rng = crate::rng::task_rng(config.generation.seed, task);
    encode_generate_with_rng(
        lm,
        prompt_ids,
        payload,
        &config.partition,
        &config.generation,
        &mut rng,
    )
}

/// Flat tabular form of a throughput report, one line per cell.
pub fn throughput_csv(report: &ThroughputReport) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "prompt_index",
        "key_index",
        "trained_prompt",
        "trained_key",
        "variant",
        "correct_bits_fraction",
        "exact_match",
        "tokens_consumed",
        "error",
    ])?;
    for cell in &report.cells {
        let (correct, exact, consumed) = match &cell.report {
            Some(r) => (
                r.correct_bits_fraction.to_string(),
                r.exact_match.to_string(),
                r.tokens_consumed.to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        writer.write_record([
            cell.prompt_index.to_string(),
            cell.key_index.to_string(),
            cell.trained_prompt.to_string(),
            cell.trained_key.to_string(),
            variant_label(cell.perturbation),
            correct,
            exact,
            consumed,
            cell.error.clone().unwrap_or_default(),
        ])?;
    }
    finish_csv(writer)
}

/// Flat tabular form of a robustness report, one line per cell.
pub fn robustness_csv(report: &RobustnessReport) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "prompt_index",
        "key_index",
        "offset",
        "variant",
        "correct_bits_fraction",
        "exact_match",
        "error",
    ])?;
    for cell in &report.cells {
        let (correct, exact) = match &cell.report {
            Some(r) => (
                r.correct_bits_fraction.to_string(),
                r.exact_match.to_string(),
            ),
            None => (String::new(), String::new()),
        };
        writer.write_record([
            cell.prompt_index.to_string(),
            cell.key_index.to_string(),
            cell.offset.to_string(),
            variant_label(cell.perturbation),
            correct,
            exact,
            cell.error.clone().unwrap_or_default(),
        ])?;
    }
    finish_csv(writer)
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidInput(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(format!("csv encoding: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::BitSequence;
    use crate::lm::demo_model;
    use crate::partition::parity_partition;
    use crate::rng::task_rng;

    fn bits(s: &str) -> BitSequence {
        s.parse().unwrap()
    }

    #[test]
    fn correct_bits_counts_agreements() {
        assert_eq!(correct_bits(&bits("0110"), &bits("0110"), 4).unwrap(), 1.0);
        assert_eq!(correct_bits(&bits("0110"), &bits("1001"), 4).unwrap(), 0.0);
        assert_eq!(correct_bits(&bits("0110"), &bits("0100"), 4).unwrap(), 0.75);
        assert!(matches!(
            correct_bits(&bits("01"), &bits("0110"), 4),
            Err(Error::Truncation(_))
        ));
    }

    #[test]
    fn exact_match_is_all_or_nothing() {
        assert!(exact_match(&bits("0110"), &bits("0110"), 4).unwrap());
        assert!(!exact_match(&bits("0110"), &bits("1001"), 4).unwrap());
        assert!(!exact_match(&bits("0110"), &bits("0100"), 4).unwrap());
    }

    #[test]
    fn voting_curve_matches_hand_expansion() {
        let curve = voting_error_curve(0.1, &[1, 3, 5]).unwrap();
        assert!((curve[0] - 0.1).abs() < 1e-12);
        // 3 votes: p^2 (3 - 2p).
        assert!((curve[1] - 0.028).abs() < 1e-12);
        assert!(curve[2] < curve[1]);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn voting_curve_fixed_points() {
        assert_eq!(voting_error_curve(0.0, &[1, 3, 9]).unwrap(), vec![0.0; 3]);
        for e in voting_error_curve(0.5, &[1, 3, 9]).unwrap() {
            assert!((e - 0.5).abs() < 1e-12);
        }
        for e in voting_error_curve(1.0, &[1, 3]).unwrap() {
            assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn voting_curve_rejects_bad_parameters() {
        assert!(voting_error_curve(-0.1, &[3]).is_err());
        assert!(voting_error_curve(1.1, &[3]).is_err());
        assert!(voting_error_curve(0.1, &[2]).is_err());
        assert!(voting_error_curve(0.1, &[0]).is_err());
    }

    #[test]
    fn simulation_agrees_with_the_analytic_curve() {
        let mut rng = task_rng(40, 0);
        let simulated = simulate_voting_error(0.1, 3, 100_000, &mut rng).unwrap();
        assert!(
            (simulated - 0.028).abs() < 0.005,
            "simulated {simulated}, analytic 0.028"
        );
        let mut rng = task_rng(40, 1);
        let single = simulate_voting_error(0.1, 1, 100_000, &mut rng).unwrap();
        let mut rng = task_rng(40, 2);
        let five = simulate_voting_error(0.1, 5, 100_000, &mut rng).unwrap();
        assert!(five < simulated && simulated < single);
    }

    fn demo_config(keys: &[(&str, bool)], votes: u32) -> (ExperimentConfig, crate::lm::ToyLm) {
        let lm = demo_model();
        let partition = parity_partition(lm.vocab()).unwrap();
        let config = ExperimentConfig {
            prompts: vec![
                Labeled::trained("What is outside the window?"),
                Labeled::untrained("Describe the evening."),
            ],
            keys: keys
                .iter()
                .map(|&(text, trained)| Labeled {
                    text: text.to_string(),
                    trained,
                })
                .collect(),
            partition,
            generation: GenerationConfig {
                max_new_tokens: 40,
                seed: 17,
                ..GenerationConfig::default()
            },
            n_votes: votes,
            offsets: vec![0],
            perturbations: vec![],
        };
        (config, lm)
    }

    #[test]
    fn noiseless_throughput_grid_is_perfect() {
        let (config, lm) = demo_config(&[("ab", true), ("cd", true), ("xy", false)], 1);
        let report = eval_throughput(&config, &lm).unwrap();
        assert_eq!(report.cells.len(), 6);
        for cell in &report.cells {
            let r = cell.report.as_ref().expect("no failures expected");
            assert_eq!(r.correct_bits_fraction, 1.0);
            assert!(r.exact_match);
            assert_eq!(r.tokens_consumed, 16);
        }
        let overall = &report.aggregates["clean/overall"];
        assert_eq!(overall.cells, 6);
        assert_eq!(overall.failures, 0);
        assert_eq!(overall.correct_bits_mean, 1.0);
        assert_eq!(overall.exact_match_rate, 1.0);
        assert!(report.aggregates.contains_key("clean/trained-prompt+trained-key"));
        assert!(report.aggregates.contains_key("clean/untrained-prompt+untrained-key"));
        assert!(!report.notes.is_empty());
    }

    #[test]
    fn throughput_reports_are_reproducible() {
        let (config, lm) = demo_config(&[("ab", true), ("xy", false)], 1);
        let a = eval_throughput(&config, &lm).unwrap();
        let b = eval_throughput(&config, &lm).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbed_variants_degrade_but_stay_bounded() {
        let (mut config, lm) = demo_config(&[("abcd", true), ("wxyz", false)], 1);
        config.generation.max_new_tokens = 40;
        config.perturbations = vec![PerturbationModel::substitution(0.2)];
        let report = eval_throughput(&config, &lm).unwrap();
        // 2 prompts x 2 keys x (clean + 1 perturbation).
        assert_eq!(report.cells.len(), 8);
        let clean = &report.aggregates["clean/overall"];
        assert_eq!(clean.correct_bits_mean, 1.0);
        let noisy = &report.aggregates["perturbed-0/overall"];
        assert!(noisy.correct_bits_mean < 1.0);
        assert!(noisy.correct_bits_mean > 0.7);
        assert!(noisy.exact_match_rate <= noisy.correct_bits_mean);
    }

    #[test]
    fn majority_voting_improves_noisy_grids() {
        let (mut config, lm) = demo_config(
            &[("ab", true), ("cd", true), ("ef", false), ("gh", false)],
            1,
        );
        config.perturbations = vec![PerturbationModel::substitution(0.08)];
        let single = eval_throughput(&config, &lm).unwrap();
        config.n_votes = 5;
        let voted = eval_throughput(&config, &lm).unwrap();
        let key = "perturbed-0/overall";
        assert!(
            voted.aggregates[&key.to_string()].correct_bits_mean
                >= single.aggregates[&key.to_string()].correct_bits_mean
        );
    }

    #[test]
    fn noiseless_robustness_recovers_at_every_aligned_offset() {
        let (mut config, lm) = demo_config(&[("fern", true), ("mast", false)], 1);
        config.generation.max_new_tokens = 160;
        config.offsets = vec![0, 32, 64];
        let report = eval_robustness(&config, &lm).unwrap();
        assert_eq!(report.cells.len(), 2 * 2 * 3);
        for cell in &report.cells {
            let r = cell.report.as_ref().expect("no failures expected");
            assert_eq!(r.correct_bits_fraction, 1.0, "offset {}", cell.offset);
        }
        for offset in [0, 32, 64] {
            let row = &report.aggregates[&format!("clean/offset-{offset}")];
            assert_eq!(row.correct_bits_mean, 1.0);
        }
    }

    #[test]
    fn parallel_evaluation_matches_serial() {
        let (mut config, lm) = demo_config(&[("ab", true), ("cd", true), ("xy", false)], 1);
        config.perturbations = vec![PerturbationModel::substitution(0.1)];
        let serial = eval_throughput_with_jobs(&config, &lm, 1).unwrap();
        let parallel = eval_throughput_with_jobs(&config, &lm, 4).unwrap();
        assert_eq!(serial, parallel);
        config.offsets = vec![0, 16];
        let serial = eval_robustness_with_jobs(&config, &lm, 1).unwrap();
        let parallel = eval_robustness_with_jobs(&config, &lm, 3).unwrap();
        assert_eq!(serial, parallel);
        assert!(eval_throughput_with_jobs(&config, &lm, 0).is_err());
    }

    #[test]
    fn robustness_requires_cyclic_mode() {
        let (mut config, lm) = demo_config(&[("ab", true)], 1);
        config.generation.repetition_mode = RepetitionMode::Single;
        assert!(eval_robustness(&config, &lm).is_err());
    }

    #[test]
    fn config_validation_catches_degenerate_grids() {
        let (mut config, _) = demo_config(&[("ab", true)], 1);
        config.keys.clear();
        assert!(config.validate().is_err());
        let (mut config, _) = demo_config(&[("ab", true), ("ab", false)], 1);
        assert!(config.validate().is_err());
        config = demo_config(&[("ab", true)], 2).0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn csv_exports_are_flat_and_complete() {
        let (mut config, lm) = demo_config(&[("ab", true), ("xy", false)], 1);
        config.offsets = vec![0, 16];
        config.generation.max_new_tokens = 48;
        let throughput = eval_throughput(&config, &lm).unwrap();
        let csv = throughput_csv(&throughput).unwrap();
        assert_eq!(csv.lines().count(), 1 + throughput.cells.len());
        assert!(csv.starts_with("prompt_index,key_index,"));
        let robustness = eval_robustness(&config, &lm).unwrap();
        let csv = robustness_csv(&robustness).unwrap();
        assert_eq!(csv.lines().count(), 1 + robustness.cells.len());
        assert_eq!(robustness.cells.len(), 2 * 2 * 2);
    }
}
