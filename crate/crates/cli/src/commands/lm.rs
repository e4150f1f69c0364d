//! `stegtok lm`: train toy models and serve them over the adapter protocol.

use std::fs;
use std::io::{BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde::Serialize;

use stegtok_core::lm::{demo_model, serve_connection, serve_tcp};
use stegtok_core::{LanguageModel, ToyLm};

use crate::fail::{usage, CliError, CmdResult};
use crate::settings::write_manifest;
use crate::specs::{load_model, parse_model_spec};

#[derive(Subcommand, Debug)]
pub enum LmCommand {
    /// Train a toy n-gram model on a text corpus.
    Train(TrainArgs),
    /// Serve a model over the newline-delimited JSON adapter protocol.
    ServeAdapterLoopback(ServeArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus text file.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Context length in tokens (n-gram order minus one).
    #[arg(long, default_value_t = 2)]
    pub order: usize,

    /// Additive smoothing mass per vocabulary entry.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,

    /// Output model path (JSON).
    #[arg(long)]
    pub out: PathBuf,

    /// Write a reproduction manifest to this path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Model spec to serve.
    #[arg(long, default_value = "toy:demo")]
    pub model: String,

    /// Serve one session over stdin/stdout until EOF.
    #[arg(long)]
    pub stdio: bool,

    /// TCP bind address, e.g. 127.0.0.1:0 (prints the bound address).
    #[arg(long, conflicts_with = "stdio")]
    pub addr: Option<String>,
}

#[derive(Serialize)]
struct TrainSummary {
    vocab_size: u32,
    specials: usize,
    order: usize,
    alpha: f64,
    out: String,
}

pub fn run(command: &LmCommand) -> CmdResult {
    match command {
        LmCommand::Train(args) => train(args),
        LmCommand::ServeAdapterLoopback(args) => serve(args),
    }
}

fn train(args: &TrainArgs) -> CmdResult {
    if args.order == 0 {
        return Err(usage("--order must be >= 1"));
    }
    if !(args.alpha.is_finite() && args.alpha > 0.0) {
        return Err(usage("--alpha must be positive"));
    }
    let text = fs::read_to_string(&args.corpus).map_err(|e| {
        CliError::Runtime(anyhow::anyhow!("reading {}: {e}", args.corpus.display()))
    })?;
    let lm = ToyLm::from_text(&text, args.order, args.alpha)?;
    lm.save(&args.out)?;
    let summary = TrainSummary {
        vocab_size: lm.vocab().size(),
        specials: lm.vocab().specials().len(),
        order: args.order,
        alpha: args.alpha,
        out: args.out.display().to_string(),
    };
    crate::settings::print_stdout(&serde_json::to_string_pretty(&summary)?)?;
    if let Some(path) = &args.manifest {
        let config = serde_json::json!({
            "corpus": args.corpus.display().to_string(),
            "order": args.order,
            "alpha": args.alpha,
        });
        write_manifest(
            path,
            "lm train",
            config,
            0,
            vec![args.corpus.display().to_string()],
            vec![args.out.display().to_string()],
        )?;
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> CmdResult {
    let spec = parse_model_spec(&args.model)?;
    if matches!(spec, crate::specs::ModelSpec::Adapter(_)) {
        return Err(usage("serve-adapter-loopback serves local toy models only"));
    }
    let lm: Box<dyn LanguageModel> = match &spec {
        crate::specs::ModelSpec::ToyDemo => Box::new(demo_model()),
        _ => load_model(&spec)?,
    };
    if args.stdio {
        let stdin = std::io::stdin();
        let stdout = std::io::stdout();
        serve_connection(lm.as_ref(), BufReader::new(stdin.lock()), stdout.lock())?;
        return Ok(());
    }
    let Some(addr) = &args.addr else {
        return Err(usage("provide --stdio or --addr"));
    };
    let listener = TcpListener::bind(addr.as_str())
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("binding {addr}: {e}")))?;
    let local = listener.local_addr()?;
    crate::settings::print_stdout(&serde_json::json!({ "listening": local.to_string() }).to_string())?;
    let _ = std::io::stdout().flush();
    serve_tcp(lm.as_ref(), &listener)?;
    Ok(())
}
