use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::{
    ErrorReply, HelloReply, Request, ScoreReply, StepReply, REMOTE_DISTRIBUTION_TOLERANCE,
};
use super::{check_context, LanguageModel, ScoredSequence, StepOutput, TokenId, Vocabulary};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn open(addr: &str, timeout: Duration) -> Result<Self> {
        let addrs: Vec<SocketAddr> = addr
            .to_socket_addrs()
            .map_err(|e| Error::Transport(format!("cannot resolve {addr}: {e}")))?
            .collect();
        let mut last = None;
        for sa in addrs {
            match TcpStream::connect_timeout(&sa, timeout) {
                Ok(stream) => {
                    let setup = || -> std::io::Result<Self> {
                        stream.set_read_timeout(Some(timeout))?;
                        stream.set_write_timeout(Some(timeout))?;
                        stream.set_nodelay(true)?;
                        Ok(Self {
                            reader: BufReader::new(stream.try_clone()?),
                            writer: stream,
                        })
                    };
                    return setup().map_err(|e| Error::Transport(format!("{addr}: {e}")));
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Transport(match last {
            Some(e) => format!("cannot connect to {addr}: {e}"),
            None => format!("{addr} resolved to no addresses"),
        }))
    }

    fn call<T: DeserializeOwned>(&mut self, request: &Request) -> Result<T> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .map_err(|e| Error::Transport(format!("send failed: {e}")))?;
        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| Error::Transport(format!("receive failed: {e}")))?;
        if n == 0 {
            return Err(Error::Transport("backend closed the connection".into()));
        }
        if let Ok(err) = serde_json::from_str::<ErrorReply>(&reply) {
            return Err(Error::Protocol(format!("backend error: {}", err.error)));
        }
        serde_json::from_str(&reply)
            .map_err(|e| Error::Protocol(format!("malformed reply {:?}: {e}", reply.trim_end())))
    }
}

/// Client for a model served over the wire protocol.
///
/// Each request runs on one connection; idle connections are kept in a pool
/// so concurrent callers do not serialize behind each other.
pub struct RemoteModel {
    addr: String,
    timeout: Duration,
    vocab: Vocabulary,
    dim: usize,
    pool: Mutex<Vec<Connection>>,
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel")
            .field("addr", &self.addr)
            .field("vocab", &self.vocab)
            .field("dim", &self.dim)
            .finish()
    }
}

impl RemoteModel {
    /// Connects and performs the handshake.
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self> {
        let mut conn = Connection::open(addr, timeout)?;
        let hello: HelloReply = conn.call(&Request::Hello)?;
        let vocab = Vocabulary::new(hello.vocab_size, hello.eod)
            .map_err(|e| Error::Protocol(format!("handshake declares invalid vocabulary: {e}")))?;
        if hello.dim == 0 {
            return Err(Error::Protocol("handshake declares dimension 0".into()));
        }
        Ok(Self {
            addr: addr.to_string(),
            timeout,
            vocab,
            dim: hello.dim,
            pool: Mutex::new(vec![conn]),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn call<T: DeserializeOwned>(&self, request: &Request) -> Result<T> {
        let pooled = self.pool.lock().expect("pool poisoned").pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.addr, self.timeout)?,
        };
        let out = conn.call(request);
        // A transport failure leaves the stream in an unknown state.
        if !matches!(out, Err(Error::Transport(_))) {
            self.pool.lock().expect("pool poisoned").push(conn);
        }
        out
    }
}

impl LanguageModel for RemoteModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn representation_dim(&self) -> usize {
        self.dim
    }

    fn step(&self, context: &[TokenId]) -> Result<StepOutput> {
        check_context(&self.vocab, context)?;
        let reply: StepReply = self.call(&Request::Step {
            tokens: context.to_vec(),
        })?;
        if reply.reprs.len() != context.len() {
            return Err(Error::Protocol(format!(
                "expected {} representations, got {}",
                context.len(),
                reply.reprs.len()
            )));
        }
        if let Some(r) = reply.reprs.iter().find(|r| r.len() != self.dim) {
            return Err(Error::Protocol(format!(
                "representation of dimension {} does not match declared {}",
                r.len(),
                self.dim
            )));
        }
        StepOutput::with_tolerance(
            reply.probs,
            reply.reprs,
            self.vocab.size(),
            REMOTE_DISTRIBUTION_TOLERANCE,
        )
        .map_err(|e| Error::Protocol(e.to_string()))
    }

    fn score(&self, prefix: &[TokenId], continuation: &[TokenId]) -> Result<ScoredSequence> {
        if continuation.is_empty() {
            return Err(Error::InvalidInput("continuation must be non-empty".into()));
        }
        self.vocab.check_tokens(prefix)?;
        self.vocab.check_tokens(continuation)?;
        let reply: ScoreReply = self.call(&Request::Score {
            prefix: prefix.to_vec(),
            continuation: continuation.to_vec(),
        })?;
        if reply.logprobs.len() != continuation.len() {
            return Err(Error::Protocol(format!(
                "expected {} log-probabilities, got {}",
                continuation.len(),
                reply.logprobs.len()
            )));
        }
        let logprobs = reply
            .logprobs
            .into_iter()
            .map(|lp| lp.unwrap_or(f64::NEG_INFINITY))
            .collect();
        Ok(ScoredSequence::from_logprobs(logprobs))
    }
}

/// A bound backend serving one model over the wire protocol.
pub struct Server {
    listener: TcpListener,
    model: Arc<dyn LanguageModel>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, model: Arc<dyn LanguageModel>) -> Result<Self> {
        let listener =
            TcpListener::bind(addr).map_err(|e| Error::Transport(format!("bind: {e}")))?;
        Ok(Self { listener, model })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener
            .local_addr()
            .map_err(|e| Error::Transport(e.to_string()))
    }

    /// Accepts connections until the listener fails; one thread per connection.
    pub fn run(self) -> Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream.map_err(|e| Error::Transport(format!("accept: {e}")))?;
            let model = Arc::clone(&self.model);
            std::thread::spawn(move || {
                if let Err(e) = handle_connection(stream, model.as_ref()) {
                    log::debug!("connection closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
        let addr = self.local_addr()?;
        Ok((addr, std::thread::spawn(move || self.run())))
    }
}

/// Binds `addr` and serves `model` on a background thread.
pub fn serve(
    addr: impl ToSocketAddrs,
    model: Arc<dyn LanguageModel>,
) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
    Server::bind(addr, model)?.spawn()
}

fn handle_connection(stream: TcpStream, model: &dyn LanguageModel) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(request) => respond(model, request),
            Err(e) => to_json(&ErrorReply {
                error: format!("malformed request: {e}"),
            }),
        };
        let mut reply = reply;
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
    }
    Ok(())
}

fn respond(model: &dyn LanguageModel, request: Request) -> String {
    let result = match request {
        Request::Hello => {
            let vocab = model.vocab();
            Ok(to_json(&HelloReply {
                vocab_size: vocab.size(),
                eod: vocab.eod_token(),
                dim: model.representation_dim(),
            }))
        }
        Request::Step { tokens } => model.step(&tokens).map(|out| {
            let (probs, reprs) = out.into_parts();
            to_json(&StepReply { probs, reprs })
        }),
        Request::Score {
            prefix,
            continuation,
        } => model.score(&prefix, &continuation).map(|s| {
            let logprobs = s
                .logprobs
                .into_iter()
                .map(|lp| lp.is_finite().then_some(lp))
                .collect();
            to_json(&ScoreReply { logprobs })
        }),
    };
    result.unwrap_or_else(|e| {
        to_json(&ErrorReply {
            error: e.to_string(),
        })
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("protocol messages always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::TableModel;
    use std::io::Read;

    fn table() -> Arc<dyn LanguageModel> {
        let vocab = Vocabulary::new(4, Some(3)).unwrap();
        let vectors = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.6, 0.8],
            vec![-1.0, 0.25],
        ];
        Arc::new(TableModel::unconditional(vocab, vec![0.4, 0.3, 0.2, 0.1], vectors).unwrap())
    }

    /// A backend that answers every line with a fixed reply.
    fn canned(reply: &'static str) -> SocketAddr {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let stream = stream.unwrap();
                std::thread::spawn(move || {
                    let mut w = stream.try_clone().unwrap();
                    for line in BufReader::new(stream).lines() {
                        if line.is_err() {
                            break;
                        }
                        let _ = w.write_all(reply.as_bytes());
                    }
                });
            }
        });
        addr
    }

    #[test]
    fn loopback_matches_local() {
        let model = table();
        let (addr, _) = serve("127.0.0.1:0", Arc::clone(&model)).unwrap();
        let remote = RemoteModel::connect(&addr.to_string(), DEFAULT_TIMEOUT).unwrap();
        assert_eq!(remote.vocab(), model.vocab());
        assert_eq!(remote.representation_dim(), 2);
        let ctx = [0, 2, 1];
        assert_eq!(remote.step(&ctx).unwrap(), model.step(&ctx).unwrap());
        assert_eq!(
            remote.score(&ctx, &[3, 0]).unwrap(),
            model.score(&ctx, &[3, 0]).unwrap()
        );
    }

    #[test]
    fn shape_mismatch_is_protocol_error() {
        let addr = canned("{\"vocab_size\":4,\"eod\":null,\"dim\":1}\n");
        let mut remote = RemoteModel::connect(&addr.to_string(), DEFAULT_TIMEOUT).unwrap();
        // Swap in a backend replying with a 3-entry distribution.
        let bad = canned("{\"probs\":[0.5,0.25,0.25],\"reprs\":[[1.0]]}\n");
        remote.addr = bad.to_string();
        remote.pool.lock().unwrap().clear();
        assert!(matches!(remote.step(&[0]), Err(Error::Protocol(_))));
    }

    #[test]
    fn unnormalized_reply_is_protocol_error() {
        let addr = canned("{\"vocab_size\":2,\"eod\":null,\"dim\":1}\n");
        let mut remote = RemoteModel::connect(&addr.to_string(), DEFAULT_TIMEOUT).unwrap();
        remote.addr = canned("{\"probs\":[0.5,0.4998],\"reprs\":[[1.0]]}\n").to_string();
        remote.pool.lock().unwrap().clear();
        assert!(matches!(remote.step(&[0]), Err(Error::Protocol(_))));
        // Within 1e-4 is accepted.
        remote.addr = canned("{\"probs\":[0.5,0.49995],\"reprs\":[[1.0]]}\n").to_string();
        remote.pool.lock().unwrap().clear();
        assert!(remote.step(&[0]).is_ok());
    }

    #[test]
    fn garbage_reply_is_protocol_error() {
        let addr = canned("not json\n");
        assert!(matches!(
            RemoteModel::connect(&addr.to_string(), DEFAULT_TIMEOUT),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn unreachable_endpoint_times_out() {
        // Bind then drop to get a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let start = std::time::Instant::now();
        let err = RemoteModel::connect(&format!("127.0.0.1:{port}"), Duration::from_millis(500));
        assert!(matches!(err, Err(Error::Transport(_))));
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn malformed_request_keeps_connection() {
        let (addr, _) = serve("127.0.0.1:0", table()).unwrap();
        let mut stream = TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"{\"op\":\"bogus\"}\n{\"op\":\"hello\"}\n")
            .unwrap();
        stream.shutdown(std::net::Shutdown::Write).unwrap();
        let mut text = String::new();
        stream.read_to_string(&mut text).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"error\""));
        assert_eq!(lines[1], r#"{"vocab_size":4,"eod":3,"dim":2}"#);
    }

    #[test]
    fn backend_errors_surface_as_protocol_errors() {
        let (addr, _) = serve("127.0.0.1:0", table()).unwrap();
        let mut stream = TcpStream::connect(addr).unwrap();
        stream
            .write_all(b"{\"op\":\"step\",\"tokens\":[9]}\n")
            .unwrap();
        let mut line = String::new();
        BufReader::new(stream).read_line(&mut line).unwrap();
        assert!(line.contains("out of range"));
    }
}
