//! Release acceptance suite. Each test pins one end-to-end guarantee the
//! toolkit ships with, from golden vectors through analytic error laws to
//! byte-level CLI determinism. The tests are numbered; a release is
//! acceptable when all nine pass. Runtime bounds are asserted where the
//! guarantee includes one; the margins are wide enough for slow CI hosts.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use rand::RngExt;
use stegtok_core::codec::{encode_secret, group_bits};
use stegtok_core::dataset::{
    gen_key_space, generate_dataset, lowercase_alphabet, pair_examples, read_jsonl, split_keys,
    validate_example, write_jsonl,
};
use stegtok_core::decoder::{decode_bits, decode_logit, decode_secret_at_offset};
use stegtok_core::encoder::{encode_generate, encode_generate_logit};
use stegtok_core::eval::{
    correct_bits, perturb_tokens, simulate_voting_error, voting_error_curve, PerturbationModel,
};
use stegtok_core::lm::{demo_model, DEMO_CORPUS};
use stegtok_core::partition::{modulo_partition, parity_partition};
use stegtok_core::rng::task_rng;
use stegtok_core::{
    BitSequence, GenerationConfig, LanguageModel, RepetitionMode, Secret, ToyLm, VocabSpec,
};

/// Golden vector: the bit expansion of the secret "os" and the parity
/// bucket of two concrete token ids, all exact.
#[test]
fn criterion_1_golden_vector_and_parity_buckets() {
    let start = Instant::now();

    let bits = encode_secret(&Secret::from_text("os"));
    let rendered: String = bits.bits().iter().map(|b| char::from(b'0' + b)).collect();
    assert_eq!(rendered, "0110111101110011");

    let vocab = VocabSpec::new(60_000, []).unwrap();
    let parity = parity_partition(&vocab).unwrap();
    assert_eq!(parity.bucket_of(32).unwrap(), Some(0));
    assert_eq!(parity.bucket_of(57_511).unwrap(), Some(1));

    assert!(start.elapsed() < Duration::from_secs(1));
}

/// Oracle round trip: 1,000 random secrets of 1..=8 bytes, encoded with 2
/// and 4 buckets in both repetition modes, all decode back bit-exact.
#[test]
fn criterion_2_bucket_round_trip_over_random_secrets() {
    let start = Instant::now();
    let lm = demo_model();

    let mut trips = 0u32;
    let mut exact = 0u32;
    for case in 0..1_000u64 {
        let mut rng = task_rng(2, case);
        let len = rng.random_range(1..=8usize);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let secret = Secret::new(bytes);
        let payload = encode_secret(&secret);

        for num_buckets in [2u32, 4] {
            let partition = modulo_partition(lm.vocab(), num_buckets).unwrap();
            let n = partition.group_width() as usize;
            let tokens_needed = payload.len().div_ceil(n);
            for mode in [RepetitionMode::Cyclic, RepetitionMode::Single] {
                let config = GenerationConfig {
                    max_new_tokens: tokens_needed as u32,
                    seed: case,
                    repetition_mode: mode,
                    ..GenerationConfig::default()
                };
                let stream = encode_generate(&lm, &[], &payload, &partition, &config).unwrap();
                let decoded =
                    decode_secret_at_offset(&stream, &partition, payload.len(), 0).unwrap();
                trips += 1;
                if decoded.bits == payload && decoded.secret.as_ref() == Some(&secret) {
                    exact += 1;
                }
            }
        }
    }

    assert_eq!(trips, 4_000);
    assert_eq!(exact, trips, "every round trip must be bit-exact");
    assert!(start.elapsed() < Duration::from_secs(10));
}

/// Throughput identity: with B buckets every payload-bearing token carries
/// exactly log2(B) bits, so a 24-bit payload occupies exactly 24 / log2(B)
/// tokens for B in {2, 4, 8}, and each token sits in its scheduled bucket.
#[test]
fn criterion_3_tokens_carry_group_width_bits() {
    let lm = demo_model();
    let payload = encode_secret(&Secret::from_text("cat"));
    assert_eq!(payload.len(), 24);

    for num_buckets in [2u32, 4, 8] {
        let partition = modulo_partition(lm.vocab(), num_buckets).unwrap();
        let n = partition.group_width();
        assert_eq!(2u32.pow(n), num_buckets);

        let tokens_needed = payload.len() / n as usize;
        let config = GenerationConfig {
            max_new_tokens: tokens_needed as u32,
            seed: 3,
            repetition_mode: RepetitionMode::Single,
            ..GenerationConfig::default()
        };
        let stream = encode_generate(&lm, &[], &payload, &partition, &config).unwrap();
        assert_eq!(stream.len(), tokens_needed, "B={num_buckets}");

        let groups = group_bits(&payload, n).unwrap();
        for (step, &token) in stream.iter().enumerate() {
            assert_eq!(
                partition.bucket_of(token).unwrap(),
                Some(groups[step]),
                "B={num_buckets} step {step}"
            );
        }
        let decoded = decode_secret_at_offset(&stream, &partition, payload.len(), 0).unwrap();
        assert_eq!(decoded.bits, payload, "B={num_buckets}");
    }
}

/// Voting law: at flip probability 0.1 a 3-way vote has analytic error
/// 0.028; a 100,000-bit simulation lands within 0.005 of it and error
/// strictly improves from 1 to 3 to 5 votes.
#[test]
fn criterion_4_majority_voting_error_law() {
    let start = Instant::now();

    let curve = voting_error_curve(0.1, &[1, 3, 5]).unwrap();
    assert!((curve[0] - 0.1).abs() < 1e-12);
    assert!((curve[1] - 0.028).abs() < 1e-12);

    let mut rng = task_rng(4, 0);
    let e1 = simulate_voting_error(0.1, 1, 100_000, &mut rng).unwrap();
    let e3 = simulate_voting_error(0.1, 3, 100_000, &mut rng).unwrap();
    let e5 = simulate_voting_error(0.1, 5, 100_000, &mut rng).unwrap();

    assert!(
        (e3 - 0.028).abs() <= 0.005,
        "simulated 3-vote error {e3} strays from 0.028"
    );
    assert!(
        e1 > e3 && e3 > e5,
        "voting must improve monotonically: {e1} -> {e3} -> {e5}"
    );
    assert!(start.elapsed() < Duration::from_secs(30));
}

/// Perturbation law: substituting tokens at rate q over a balanced
/// 2-bucket partition flips the decoded bit about half the time, so the
/// bit error rate measures q/2 within 3 sigma.
#[test]
fn criterion_5_substitution_error_approaches_half_rate() {
    let start = Instant::now();
    let vocab = VocabSpec::new(1_000, []).unwrap();
    let partition = parity_partition(&vocab).unwrap();
    assert_eq!(partition.bucket_size(0), partition.bucket_size(1));

    let num_tokens = 100_000usize;
    for (task, q) in [0.05f64, 0.1, 0.2].into_iter().enumerate() {
        let mut rng = task_rng(5, task as u64);

        let mut reference = BitSequence::new();
        let mut stream = Vec::with_capacity(num_tokens);
        for _ in 0..num_tokens {
            let bit = rng.random_range(0..2u8);
            reference.push(bit);
            // Parity partition: bucket 0 holds the even ids, so id
            // 2k + bit lands in bucket `bit`.
            stream.push(2 * rng.random_range(0..500u32) + u32::from(bit));
        }

        let noisy =
            perturb_tokens(&stream, &PerturbationModel::substitution(q), &vocab, &mut rng).unwrap();
        assert_eq!(noisy.len(), stream.len());

        let decoded = decode_bits(&noisy, &partition).unwrap();
        let error = 1.0 - correct_bits(&reference, &decoded, num_tokens).unwrap();
        let expected = q / 2.0;
        let sigma = (expected * (1.0 - expected) / num_tokens as f64).sqrt();
        assert!(
            (error - expected).abs() <= 3.0 * sigma,
            "q={q}: bit error {error} outside {expected} +- {}",
            3.0 * sigma
        );
    }
    assert!(start.elapsed() < Duration::from_secs(30));
}

/// Offset recovery: a cyclic 32-bit payload in a 160-token noiseless
/// stream decodes exactly at bit offsets 0, 32, and 64.
#[test]
fn criterion_6_offset_recovery_on_cyclic_streams() {
    let lm = demo_model();
    let partition = parity_partition(lm.vocab()).unwrap();
    let secret = Secret::from_text("wolf");
    let payload = encode_secret(&secret);
    assert_eq!(payload.len(), 32);

    let config = GenerationConfig {
        seed: 6,
        ..GenerationConfig::default()
    };
    let stream = encode_generate(&lm, &[], &payload, &partition, &config).unwrap();
    let payload_tokens = stream
        .iter()
        .filter(|&&id| !lm.vocab().is_special(id))
        .count();
    assert!(
        payload_tokens >= 96,
        "stream too short to test offset 64: {payload_tokens} payload tokens"
    );

    for offset in [0usize, 32, 64] {
        let decoded = decode_secret_at_offset(&stream, &partition, 32, offset).unwrap();
        assert_eq!(decoded.bits, payload, "offset {offset}");
        assert_eq!(decoded.secret.as_ref(), Some(&secret), "offset {offset}");
    }
}

/// Dataset arithmetic. Full scale (4-letter keys, 100 prompts, 400 common
/// keys, 20% eval split) pairs to exactly 405,181 examples without
/// generating any text. Desk scale (2-letter keys, 10 prompts, 10 common)
/// generates a JSONL corpus of exactly 631 rows, every one of which
/// re-validates against its own stored key and token ids.
#[test]
fn criterion_7_dataset_pairing_arithmetic_and_generation() {
    let start = Instant::now();
    let alphabet = lowercase_alphabet();

    let keys = gen_key_space(4, &alphabet).unwrap();
    assert_eq!(keys.len(), 456_976);
    let split = split_keys(&keys, 0.2, 400, 7).unwrap();
    assert_eq!(split.eval_keys.len(), 91_395);
    assert_eq!(split.train_keys.len(), 365_581);
    let prompts: Vec<String> = (0..100).map(|i| format!("Question number {i}?")).collect();
    let pairs = pair_examples(&split, &prompts).unwrap();
    assert_eq!(pairs.len(), 405_181);

    let keys = gen_key_space(2, &alphabet).unwrap();
    assert_eq!(keys.len(), 676);
    let split = split_keys(&keys, 0.2, 10, 7).unwrap();
    assert_eq!(split.eval_keys.len(), 135);
    assert_eq!(split.train_keys.len(), 541);
    let prompts: Vec<String> = (0..10).map(|i| format!("Tell me about day {i}.")).collect();
    let pairs = pair_examples(&split, &prompts).unwrap();
    assert_eq!(pairs.len(), 631);

    let lm = demo_model();
    let partition = parity_partition(lm.vocab()).unwrap();
    let config = GenerationConfig {
        max_new_tokens: 64,
        seed: 70,
        ..GenerationConfig::default()
    };
    let rows: Vec<_> = generate_dataset(&pairs, &lm, &partition, &config)
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();

    let file = tempfile::NamedTempFile::new().unwrap();
    let written = write_jsonl(file.as_file(), rows).unwrap();
    assert_eq!(written, 631);

    let rows = read_jsonl(std::io::BufReader::new(file.reopen().unwrap())).unwrap();
    assert_eq!(rows.len(), 631);
    for (index, row) in rows.iter().enumerate() {
        validate_example(row, &lm, &partition)
            .unwrap_or_else(|e| panic!("row {index} failed validation: {e}"));
    }
    assert!(start.elapsed() < Duration::from_secs(60));
}

/// Logit-rank method: 1,000 random 16-bit payloads round-trip exactly
/// through the base model, while decoding the same streams against a model
/// trained on unrelated text collapses to coin flipping (0.5 +- 0.05).
#[test]
fn criterion_8_logit_round_trip_and_chance_on_wrong_model() {
    let start = Instant::now();
    // Order 1 keeps rank decisions on observed statistics: every window is
    // a single token the corpus continues somewhere, whereas longer
    // windows fall off the observed set after a few rank-2 choices and
    // degenerate into the model-independent uniform ranking.
    let lm = ToyLm::from_text(DEMO_CORPUS, 1, 0.5).unwrap();

    // A second model over disjoint text with a skewed frequency profile,
    // so its rankings have no relation to the base model's.
    let mut other_text = String::new();
    for block in 0..10u32 {
        for i in (block * 20)..((block + 1) * 20) {
            for _ in 0..=block {
                other_text.push_str(&format!("item{i:03} "));
            }
        }
    }
    let other = ToyLm::from_text(&other_text, 1, 0.5).unwrap();
    assert!(other.vocab().size() >= lm.vocab().size());
    let base_root = lm.next_distribution(&[]).unwrap().sorted_desc()[0].0;
    let other_root = other.next_distribution(&[]).unwrap().sorted_desc()[0].0;
    assert_ne!(base_root, other_root, "the two models must rank apart");

    let mut exact = 0u32;
    let mut cross_agreements = 0usize;
    let mut cross_bits = 0usize;
    for case in 0..1_000u64 {
        let mut rng = task_rng(8, case);
        let mut payload = BitSequence::new();
        for _ in 0..16 {
            payload.push(rng.random_range(0..2u8));
        }
        let config = GenerationConfig {
            max_new_tokens: 16,
            seed: case,
            ..GenerationConfig::default()
        };
        let stream = encode_generate_logit(&lm, &[], &payload, &config).unwrap();
        assert_eq!(stream.len(), 16, "case {case} ended on a special token");

        let decoded = decode_logit(&stream, &lm, &[]).unwrap();
        if decoded == payload {
            exact += 1;
        }

        let crossed = decode_logit(&stream, &other, &[]).unwrap();
        cross_agreements += crossed
            .bits()
            .iter()
            .zip(payload.bits())
            .filter(|(a, b)| a == b)
            .count();
        cross_bits += payload.len();
    }

    assert_eq!(exact, 1_000, "same-model decoding must be perfect");
    let chance = cross_agreements as f64 / cross_bits as f64;
    assert!(
        (chance - 0.5).abs() <= 0.05,
        "wrong-model decoding should be chance, measured {chance}"
    );
    assert!(start.elapsed() < Duration::from_secs(10));
}

/// CLI determinism: every subcommand, run twice with the same seeds in two
/// fresh directories, produces byte-identical stdout, stderr, output
/// files, and run manifests.
#[test]
fn criterion_9_cli_runs_are_byte_deterministic() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();

    let first_outputs = run_suite(first.path());
    let second_outputs = run_suite(second.path());
    assert_eq!(
        first_outputs.len(),
        second_outputs.len(),
        "suites ran different step counts"
    );
    for ((label, a), (_, b)) in first_outputs.iter().zip(&second_outputs) {
        assert_eq!(a, b, "stdout/stderr of step {label:?} differs between runs");
    }

    let first_files = file_map(first.path());
    let second_files = file_map(second.path());
    assert_eq!(
        first_files.keys().collect::<Vec<_>>(),
        second_files.keys().collect::<Vec<_>>(),
        "the two runs left different file sets behind"
    );
    for (name, bytes) in &first_files {
        assert_eq!(
            bytes, &second_files[name],
            "file {name:?} differs between runs"
        );
    }
}

const EXPERIMENT_TOML: &str = r#"n_votes = 1
offsets = [0, 16]

[[prompts]]
text = "What is outside the window?"
trained = true

[[prompts]]
text = "Describe the evening."
trained = false

[[keys]]
text = "ab"
trained = true

[[keys]]
text = "xy"
trained = false

[generation]
max_new_tokens = 48
seed = 11

[[perturbations]]
substitution_rate = 0.1
"#;

const TRAIN_CORPUS: &str = "the fox ran along the river. the owl slept in the barn. \
    the fox saw the owl and the owl saw the fox. rain fell on the river all night.\n";

const ADAPTER_SCRIPT: &str = concat!(
    r#"{"op":"vocab"}"#,
    "\n",
    r#"{"op":"tokenize","text":"the fox ran."}"#,
    "\n",
    r#"{"op":"next","context":[],"top_k":3}"#,
    "\n",
    r#"{"op":"detokenize","ids":[4,5,6]}"#,
    "\n",
);

/// Runs one full pass of every subcommand inside `dir`, all outputs under
/// relative paths so the two passes are comparable byte for byte. Returns
/// (label, stdout ++ stderr) per step.
fn run_suite(dir: &Path) -> Vec<(&'static str, Vec<u8>)> {
    std::fs::write(dir.join("exp.toml"), EXPERIMENT_TOML).unwrap();
    std::fs::write(dir.join("corpus.txt"), TRAIN_CORPUS).unwrap();

    let steps: &[(&str, &[&str], Option<&str>)] = &[
        (
            "encode",
            &[
                "encode",
                "--secret",
                "os",
                "--model",
                "toy:demo",
                "--partition",
                "parity",
                "--seed",
                "1",
                "--out",
                "enc.json",
                "--manifest",
                "enc.manifest.json",
            ],
            None,
        ),
        (
            "decode",
            &[
                "decode",
                "--tokens",
                "enc.json",
                "--bits",
                "16",
                "--reference",
                "os",
                "--out",
                "dec.json",
                "--manifest",
                "dec.manifest.json",
            ],
            None,
        ),
        (
            "dataset",
            &[
                "dataset",
                "--key-length",
                "1",
                "--alphabet",
                "abcdef",
                "--eval-fraction",
                "0.34",
                "--num-common",
                "2",
                "--limit",
                "6",
                "--max-new-tokens",
                "48",
                "--seed",
                "9",
                "--validate",
                "--out",
                "rows.jsonl",
                "--manifest",
                "ds.manifest.json",
            ],
            None,
        ),
        (
            "eval throughput",
            &[
                "eval",
                "throughput",
                "--experiment",
                "exp.toml",
                "--model",
                "toy:demo",
                "--partition",
                "parity",
                "--jobs",
                "2",
                "--out",
                "tp.json",
                "--csv",
                "tp.csv",
                "--manifest",
                "tp.manifest.json",
            ],
            None,
        ),
        (
            "eval robustness",
            &[
                "eval",
                "robustness",
                "--experiment",
                "exp.toml",
                "--model",
                "toy:demo",
                "--partition",
                "parity",
                "--jobs",
                "2",
                "--out",
                "rb.json",
                "--csv",
                "rb.csv",
                "--manifest",
                "rb.manifest.json",
            ],
            None,
        ),
        (
            "eval voting-curve",
            &[
                "eval",
                "voting-curve",
                "--flip-probability",
                "0.1",
                "--votes",
                "1,3,5",
                "--simulate-bits",
                "20000",
                "--seed",
                "4",
                "--out",
                "vc.json",
            ],
            None,
        ),
        (
            "lm train",
            &[
                "lm",
                "train",
                "--corpus",
                "corpus.txt",
                "--order",
                "2",
                "--alpha",
                "0.5",
                "--out",
                "model.json",
                "--manifest",
                "lm.manifest.json",
            ],
            None,
        ),
        (
            "encode with trained model",
            &[
                "encode",
                "--secret",
                "hi",
                "--model",
                "toy:model.json",
                "--partition",
                "modulo:4",
                "--seed",
                "2",
                "--out",
                "enc2.json",
            ],
            None,
        ),
        (
            "lm serve-adapter-loopback",
            &["lm", "serve-adapter-loopback", "--stdio"],
            Some(ADAPTER_SCRIPT),
        ),
    ];

    steps
        .iter()
        .map(|(label, args, stdin_text)| {
            let output = run_cli(dir, args, *stdin_text);
            assert!(
                output.status.success(),
                "step {label:?} failed with {:?}: {}",
                output.status.code(),
                String::from_utf8_lossy(&output.stderr)
            );
            let mut bytes = output.stdout;
            bytes.extend_from_slice(&output.stderr);
            (*label, bytes)
        })
        .collect()
}

fn run_cli(dir: &Path, args: &[&str], stdin_text: Option<&str>) -> Output {
    let mut command = Command::new(env!("CARGO_BIN_EXE_stegtok"));
    command
        .args(args)
        .current_dir(dir)
        .env_remove("STEGTOK_ADAPTER")
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    match stdin_text {
        Some(text) => {
            command.stdin(Stdio::piped());
            let mut child = command.spawn().unwrap();
            child
                .stdin
                .take()
                .unwrap()
                .write_all(text.as_bytes())
                .unwrap();
            child.wait_with_output().unwrap()
        }
        None => {
            command.stdin(Stdio::null());
            command.output().unwrap()
        }
    }
}

fn file_map(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            files.insert(name, std::fs::read(entry.path()).unwrap());
        }
    }
    files
}
