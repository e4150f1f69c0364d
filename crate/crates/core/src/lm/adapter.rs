//! Wire adapter for external models, plus a serving loop that exposes any
//! in-process model over the same protocol.
//!
//! Messages are newline-delimited JSON over a local socket or a pair of
//! byte streams. Requests and responses:
//!
//! ```text
//! {"op":"next","context":[ids],"top_k":K} -> {"tokens":[[id,logprob],...]}
//! {"op":"tokenize","text":...}            -> {"ids":[...]}
//! {"op":"detokenize","ids":[...]}         -> {"text":...}
//! {"op":"vocab"}                          -> {"size":...,"special":[...]}
//! ```
//!
//! `tokens` is sorted by descending logprob (ties by lowest id) and holds
//! exactly `K` entries, or the model's full support when `K` is 0; logprobs
//! are natural-log. A serving failure is reported as `{"error":...}`, which
//! the client surfaces as [`Error::ModelUnavailable`]. The client
//! renormalizes whatever mass it receives, so truncated `top_k` responses
//! still form proper distributions.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::lm::{LanguageModel, TokenDistribution};
use crate::{Error, Result, TokenId, VocabSpec};

#[derive(Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Request {
    Next {
        context: Vec<TokenId>,
        #[serde(default)]
        top_k: u32,
    },
    Tokenize {
        text: String,
    },
    Detokenize {
        ids: Vec<TokenId>,
    },
    Vocab,
}

#[derive(Serialize, Deserialize)]
struct NextResponse {
    tokens: Vec<(TokenId, f64)>,
}

#[derive(Serialize, Deserialize)]
struct TokenizeResponse {
    ids: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct DetokenizeResponse {
    text: String,
}

#[derive(Serialize, Deserialize)]
struct VocabResponse {
    size: u32,
    special: Vec<TokenId>,
}

#[derive(Serialize, Deserialize)]
struct ErrorResponse {
    error: String,
}

struct AdapterIo {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
}

/// Client side of the wire protocol; implements [`LanguageModel`] over any
/// byte-stream transport.
///
/// Requests on one connection are serialized through a mutex: the protocol
/// has no frame ids, so each connection is single-caller. Concurrent use
/// needs one `AdapterModel` per worker.
pub struct AdapterModel {
    io: Mutex<AdapterIo>,
    vocab: VocabSpec,
}

impl AdapterModel {
    /// Connects over TCP and fetches the vocabulary.
    pub fn connect_tcp(addr: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(connect_err)?;
        let reader = stream.try_clone().map_err(connect_err)?;
        Self::from_io(reader, stream)
    }

    /// Wraps an existing transport (e.g. pipes to a child process) and
    /// fetches the vocabulary.
    pub fn from_io(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
    ) -> Result<Self> {
        let io = AdapterIo {
            reader: BufReader::new(Box::new(reader)),
            writer: Box::new(writer),
        };
        let mut model = AdapterModel {
            io: Mutex::new(io),
            vocab: VocabSpec::new(1, [])?,
        };
        let vocab: VocabResponse = model.request(&Request::Vocab)?;
        model.vocab = VocabSpec::new(vocab.size, vocab.special)?;
        Ok(model)
    }

    fn request<T: for<'de> Deserialize<'de>>(&self, req: &Request) -> Result<T> {
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::ModelUnavailable("adapter transport poisoned".into()))?;
        let line = serde_json::to_string(req)?;
        io.writer
            .write_all(line.as_bytes())
            .and_then(|_| io.writer.write_all(b"\n"))
            .and_then(|_| io.writer.flush())
            .map_err(|e| Error::ModelUnavailable(format!("adapter write failed: {e}")))?;
        let mut response = String::new();
        let read = io
            .reader
            .read_line(&mut response)
            .map_err(|e| Error::ModelUnavailable(format!("adapter read failed: {e}")))?;
        if read == 0 {
            return Err(Error::ModelUnavailable(
                "adapter closed the connection".into(),
            ));
        }
        if let Ok(err) = serde_json::from_str::<ErrorResponse>(&response) {
            return Err(Error::ModelUnavailable(format!(
                "adapter error: {}",
                err.error
            )));
        }
        serde_json::from_str(&response)
            .map_err(|e| Error::ModelUnavailable(format!("malformed adapter response: {e}")))
    }
}

impl LanguageModel for AdapterModel {
    fn vocab(&self) -> &VocabSpec {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        let response: NextResponse = self.request(&Request::Next {
            context: context.to_vec(),
            top_k: 0,
        })?;
        let weights: Vec<(TokenId, f64)> = response
            .tokens
            .into_iter()
            .map(|(id, logprob)| (id, logprob.exp()))
            .collect();
        TokenDistribution::from_weights(weights, self.vocab.size())
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let response: TokenizeResponse = self.request(&Request::Tokenize {
            text: text.to_string(),
        })?;
        Ok(response.ids)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let response: DetokenizeResponse = self.request(&Request::Detokenize {
            ids: ids.to_vec(),
        })?;
        Ok(response.text)
    }
}

fn connect_err(e: std::io::Error) -> Error {
    Error::ModelUnavailable(format!("adapter connection failed: {e}"))
}

/// Serves `lm` over one connection until EOF. Each request line gets
/// exactly one response line; failures become `{"error":...}` responses
/// rather than closing the stream.
pub fn serve_connection(
    lm: &dyn LanguageModel,
    reader: impl BufRead,
    mut writer: impl Write,
) -> Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(request) => answer(lm, request),
            Err(e) => Err(Error::InvalidInput(format!("malformed request: {e}"))),
        };
        let body = match response {
            Ok(json) => json,
            Err(e) => serde_json::to_string(&ErrorResponse {
                error: e.to_string(),
            })?,
        };
        writer.write_all(body.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

fn answer(lm: &dyn LanguageModel, request: Request) -> Result<String> {
    let json = match request {
        Request::Next { context, top_k } => {
            let dist = lm.next_distribution(&context)?;
            let mut tokens: Vec<(TokenId, f64)> = dist
                .sorted_desc()
                .into_iter()
                .map(|(id, p)| (id, p.ln()))
                .collect();
            if top_k > 0 {
                tokens.truncate(top_k as usize);
            }
            serde_json::to_string(&NextResponse { tokens })?
        }
        Request::Tokenize { text } => serde_json::to_string(&TokenizeResponse {
            ids: lm.tokenize(&text)?,
        })?,
        Request::Detokenize { ids } => serde_json::to_string(&DetokenizeResponse {
            text: lm.detokenize(&ids)?,
        })?,
        Request::Vocab => serde_json::to_string(&VocabResponse {
            size: lm.vocab().size(),
            special: lm.vocab().specials().iter().copied().collect(),
        })?,
    };
    Ok(json)
}

/// Accepts connections forever, serving each to completion in turn.
pub fn serve_tcp(lm: &dyn LanguageModel, listener: &TcpListener) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        serve_connection(lm, reader, stream)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::demo_model;

    /// Serves the demo model on a background thread and returns a connected
    /// client.
    fn loopback() -> AdapterModel {
        let (client_read, server_write) = std::io::pipe().unwrap();
        let (server_read, client_write) = std::io::pipe().unwrap();
        std::thread::spawn(move || {
            let lm = demo_model();
            let _ = serve_connection(&lm, BufReader::new(server_read), server_write);
        });
        AdapterModel::from_io(client_read, client_write).unwrap()
    }

    #[test]
    fn vocab_handshake_matches_served_model() {
        let direct = demo_model();
        let adapter = loopback();
        assert_eq!(adapter.vocab(), direct.vocab());
    }

    #[test]
    fn context_round_trips_verbatim_through_the_protocol() {
        let direct = demo_model();
        let adapter = loopback();
        let ids = adapter.tokenize("the river is patient.").unwrap();
        assert_eq!(ids, direct.tokenize("the river is patient.").unwrap());
        assert_eq!(
            adapter.detokenize(&ids).unwrap(),
            "the river is patient."
        );
    }

    #[test]
    fn distributions_survive_the_logprob_round_trip() {
        let direct = demo_model();
        let adapter = loopback();
        let ctx = direct.tokenize("the morning light").unwrap();
        let a = adapter.next_distribution(&ctx).unwrap();
        let d = direct.next_distribution(&ctx).unwrap();
        assert_eq!(a.len(), d.len());
        for &(id, p) in d.entries() {
            assert!(
                (a.prob(id) - p).abs() < 1e-12,
                "id {id}: adapter {} vs direct {p}",
                a.prob(id)
            );
        }
    }

    #[test]
    fn top_k_truncates_and_sorts_descending() {
        let (client_read, server_write) = std::io::pipe().unwrap();
        let (server_read, mut client_write) = std::io::pipe().unwrap();
        std::thread::spawn(move || {
            let lm = demo_model();
            let _ = serve_connection(&lm, BufReader::new(server_read), server_write);
        });
        let mut reader = BufReader::new(client_read);
        writeln!(client_write, r#"{{"op":"next","context":[],"top_k":5}}"#).unwrap();
        client_write.flush().unwrap();
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let response: NextResponse = serde_json::from_str(&line).unwrap();
        assert_eq!(response.tokens.len(), 5);
        for pair in response.tokens.windows(2) {
            assert!(pair[0].1 >= pair[1].1);
        }
    }

    #[test]
    fn malformed_and_failing_requests_become_error_responses() {
        let (client_read, server_write) = std::io::pipe().unwrap();
        let (server_read, mut client_write) = std::io::pipe().unwrap();
        std::thread::spawn(move || {
            let lm = demo_model();
            let _ = serve_connection(&lm, BufReader::new(server_read), server_write);
        });
        let mut reader = BufReader::new(client_read);
        // Not a known op.
        writeln!(client_write, r#"{{"op":"frobnicate"}}"#).unwrap();
        // Context outside the vocabulary.
        writeln!(
            client_write,
            r#"{{"op":"next","context":[999999],"top_k":0}}"#
        )
        .unwrap();
        client_write.flush().unwrap();
        for _ in 0..2 {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let err: ErrorResponse = serde_json::from_str(&line).unwrap();
            assert!(!err.error.is_empty());
        }
    }

    #[test]
    fn tcp_transport_works_end_to_end() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let lm = demo_model();
            let _ = serve_tcp(&lm, &listener);
        });
        let adapter = AdapterModel::connect_tcp(addr).unwrap();
        let direct = demo_model();
        assert_eq!(adapter.vocab(), direct.vocab());
        let d = adapter.next_distribution(&[]).unwrap();
        assert_eq!(d.len() as u32, direct.vocab().non_special_count());
    }
}
