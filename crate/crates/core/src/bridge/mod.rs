//! Client side of the line-delimited JSON protocol that exposes an external
//! model through the same contract as the micro model.
//!
//! Each request is one JSON object per line, `{"id", "op", "payload"}`; each
//! reply is `{"id", "ok", "result"}` or `{"id", "ok": false, "error"}`. One
//! request is in flight at a time. Stdio and TCP use identical framing.

mod echo;
mod protocol;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::error::{LabError, Result};
use crate::lm::CausalLm;
use crate::micro_lm::Distributions;
use crate::string_lab::TokenId;
use crate::trainer::{Learner, Sequence};

pub use echo::{echo_logits, serve_echo, EchoModel};
pub use protocol::{logits_to_distributions, BridgeInfo, ForwardReply, Reply, Request};

/// Where a bridge lives: `tcp://host:port`, or a command line (optionally
/// prefixed with `stdio:`) that is spawned and spoken to over its stdio.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl Endpoint {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err(LabError::invalid("empty tcp address"));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let cmd = s.strip_prefix("stdio:").unwrap_or(s);
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(LabError::invalid("empty bridge command"));
        }
        Ok(Endpoint::Stdio(argv))
    }
}

struct Conn {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
}

impl Conn {
    fn call(&mut self, op: &str, payload: Value) -> Result<Value> {
        self.next_id += 1;
        let id = self.next_id;
        let line = serde_json::to_string(&Request {
            id,
            op: op.to_string(),
            payload,
        })?;
        let gone = |e: std::io::Error| LabError::BridgeUnreachable(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(gone)?;
        self.writer.write_all(b"\n").map_err(gone)?;
        self.writer.flush().map_err(gone)?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf).map_err(gone)? == 0 {
            return Err(LabError::BridgeUnreachable("bridge closed the connection".into()));
        }
        let reply: Reply = serde_json::from_str(buf.trim_end())
            .map_err(|e| LabError::Bridge(format!("malformed reply to {op}: {e}")))?;
        if reply.id != Some(id) {
            return Err(LabError::Bridge(format!("reply id {:?} does not match request {id}", reply.id)));
        }
        if reply.ok {
            Ok(reply.result.unwrap_or(Value::Null))
        } else {
            Err(LabError::Bridge(reply.error.unwrap_or_else(|| format!("{op} failed"))))
        }
    }
}

/// A connected bridge. Implements [`CausalLm`] and [`Learner`], so metrics,
/// probes and training run against it unchanged.
pub struct BridgeClient {
    conn: Mutex<Conn>,
    child: Option<Child>,
    info: BridgeInfo,
    reset_pending: bool,
}

impl BridgeClient {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        let (reader, writer, child): (Box<dyn BufRead + Send>, Box<dyn Write + Send>, _) = match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| LabError::BridgeUnreachable(format!("{addr}: {e}")))?;
                let r = stream.try_clone()?;
                (Box::new(BufReader::new(r)), Box::new(BufWriter::new(stream)), None)
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(|e| LabError::BridgeUnreachable(format!("{}: {e}", argv[0])))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                (Box::new(BufReader::new(stdout)), Box::new(BufWriter::new(stdin)), Some(child))
            }
        };
        let mut conn = Conn {
            reader,
            writer,
            next_id: 0,
        };
        let info: BridgeInfo = decode(conn.call("info", json!({}))?)?;
        info.validate()?;
        Ok(Self {
            conn: Mutex::new(conn),
            child,
            info,
            reset_pending: false,
        })
    }

    pub fn info(&self) -> &BridgeInfo {
        &self.info
    }

    pub fn call(&self, op: &str, payload: Value) -> Result<Value> {
        self.conn.lock().map_err(|_| LabError::Bridge("connection poisoned".into()))?.call(op, payload)
    }

    /// Asks the bridge to load a model; refreshes the cached info.
    pub fn init(&mut self, model: &str, seed: u64) -> Result<&BridgeInfo> {
        let info: BridgeInfo = decode(self.call("init", json!({ "model": model, "seed": seed }))?)?;
        info.validate()?;
        self.info = info;
        Ok(&self.info)
    }
}

fn decode<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| LabError::Bridge(format!("unexpected reply shape: {e}")))
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        if let Some(mut child) = self.child.take() {
            // Closing stdin ends a well-behaved bridge; kill covers the rest.
            if let Ok(mut c) = self.conn.lock() {
                c.writer = Box::new(std::io::sink());
            }
            if child.wait_timeout_ms(2000).is_none() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

trait WaitTimeout {
    fn wait_timeout_ms(&mut self, ms: u64) -> Option<std::process::ExitStatus>;
}

impl WaitTimeout for Child {
    fn wait_timeout_ms(&mut self, ms: u64) -> Option<std::process::ExitStatus> {
        let step = std::time::Duration::from_millis(10);
        for _ in 0..ms / 10 {
            if let Ok(Some(s)) = self.try_wait() {
                return Some(s);
            }
            std::thread::sleep(step);
        }
        None
    }
}

impl CausalLm for BridgeClient {
    fn vocab_size(&self) -> usize {
        self.info.vocab_size
    }

    fn bos_token_id(&self) -> TokenId {
        self.info.bos_token_id
    }

    fn max_seq_len(&self) -> usize {
        self.info.max_seq_len
    }

    fn forward_inputs(&self, inputs: &[TokenId]) -> Result<Distributions> {
        if inputs.is_empty() || inputs.len() > self.info.max_seq_len {
            return Err(LabError::invalid(format!(
                "input length {} outside 1..={}",
                inputs.len(),
                self.info.max_seq_len
            )));
        }
        let reply: ForwardReply = decode(self.call("forward", json!({ "tokens": inputs }))?)?;
        if reply.truncated {
            return Err(LabError::Bridge("bridge sent truncated logits; exact distributions are required".into()));
        }
        if reply.logits.len() != inputs.len() {
            return Err(LabError::Bridge(format!(
                "{} logit rows for {} inputs",
                reply.logits.len(),
                inputs.len()
            )));
        }
        logits_to_distributions(&reply.logits, self.info.vocab_size)
    }
}

impl Learner for BridgeClient {
    fn train_step(&mut self, batch: &[Sequence], lr: f64) -> Result<f64> {
        let batch: Vec<Value> = batch
            .iter()
            .map(|s| json!({ "inputs": s.inputs, "targets": s.targets }))
            .collect();
        let mut payload = json!({ "batch": batch, "lr": lr });
        if self.reset_pending {
            payload["reset_optimizer"] = json!(true);
        }
        let v = self.call("train_step", payload)?;
        self.reset_pending = false;
        let loss = v
            .get("loss")
            .and_then(Value::as_f64)
            .ok_or_else(|| LabError::Bridge("train_step reply without loss".into()))?;
        if !loss.is_finite() {
            return Err(LabError::NumericalFailure(format!("bridge reported loss {loss}")));
        }
        Ok(loss)
    }

    fn reset_optimizer(&mut self) -> Result<()> {
        self.reset_pending = true;
        Ok(())
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.call("save", json!({ "path": path }))?;
        Ok(())
    }
}
