//! Newline-delimited JSON protocol for external encoder, ASR and LLM
//! backends, a deterministic in-process stub, and the client transports.
//!
//! Each message is one UTF-8 JSON object followed by `\n`. A connection
//! carries one request at a time and the response echoes the request `id`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::context::{ClipLayout, LayoutPiece, StubAsr, Transcriber, Transcript, WindowPlan, Word};
use crate::error::{Error, Result};
use crate::label::Class;
use crate::synth;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_STUB_DIM: usize = 512;
/// One stub embedding frame per this many seconds of audio.
pub const STUB_FRAME_S: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Embed,
    Transcribe,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: Op,
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
    /// Little-endian f32 samples, base64.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_b64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Utterances inside the transcription window and where they sit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<LayoutPiece>>,
}

impl Request {
    pub fn embed(id: u64, clip: &AudioClip) -> Self {
        Self {
            op: Op::Embed,
            id,
            sample_rate: Some(clip.sample_rate()),
            audio_b64: Some(encode_audio(clip.samples())),
            prompt: None,
            context: None,
        }
    }

    pub fn transcribe(id: u64, clip: &AudioClip, context: Option<&ClipLayout>) -> Self {
        Self {
            op: Op::Transcribe,
            context: context.map(|l| l.pieces.clone()),
            ..Self::embed(id, clip)
        }
    }

    pub fn llm(id: u64, prompt: &str) -> Self {
        Self { op: Op::Llm, id, sample_rate: None, audio_b64: None, prompt: Some(prompt.to_string()), context: None }
    }

    pub fn audio(&self) -> Result<AudioClip> {
        let (Some(sr), Some(b64)) = (self.sample_rate, self.audio_b64.as_deref()) else {
            return Err(Error::Protocol("request lacks audio".into()));
        };
        let samples = decode_audio(b64)?;
        if samples.is_empty() {
            return Err(Error::Empty("request audio"));
        }
        AudioClip::new(samples, sr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<Vec<Word>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    fn empty(id: u64) -> Self {
        Self { id, vector: None, text: None, words: None, label: None, error: None }
    }

    pub fn error(id: u64, message: impl Into<String>) -> Self {
        Self { error: Some(message.into()), ..Self::empty(id) }
    }

    /// Checks that exactly the payload for `op` is present.
    pub fn check_payload(&self, op: Op) -> Result<()> {
        if let Some(e) = &self.error {
            return Err(Error::BackendFailure { id: self.id, message: e.clone() });
        }
        let has = (self.vector.is_some(), self.text.is_some() || self.words.is_some(), self.label.is_some());
        let ok = match op {
            Op::Embed => has == (true, false, false),
            Op::Transcribe => has == (false, true, false) && self.text.is_some() && self.words.is_some(),
            Op::Llm => has == (false, false, true),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Protocol(format!("response {} carries the wrong payload for {op:?}", self.id)))
        }
    }
}

pub fn encode_audio(samples: &[f32]) -> String {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_audio(b64: &str) -> Result<Vec<f32>> {
    let bytes = B64.decode(b64).map_err(|e| Error::Protocol(format!("audio_b64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Protocol("audio_b64 length is not a multiple of 4".into()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Stub embedding: seed = FNV-1a of the little-endian f32 bytes; each value
/// advances `state = state * 6364136223846793005 + 1442695040888963407`
/// (mod 2^64) and maps `(state >> 11) / 2^53` onto `[-1, 1)`. Frames are
/// emitted in order, `dim` values each, one frame per 20 ms (at least one).
pub fn stub_embedding(samples: &[f32], sample_rate: u32, dim: usize) -> Vec<Vec<f64>> {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    let mut state = fnv1a64(&bytes);
    let duration = samples.len() as f64 / sample_rate as f64;
    let frames = ((duration / STUB_FRAME_S + 1e-9).floor() as usize).max(1);
    (0..frames)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
                    (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
                })
                .collect()
        })
        .collect()
}

/// Parses an LLM reply into a class. Unrecognized replies map to `Others`
/// with the flag set.
pub fn parse_llm_label(reply: &str) -> (Class, bool) {
    let t = reply.trim().trim_matches(|c: char| c == '*' || c == '"' || c == '.' || c.is_whitespace()).to_lowercase();
    match t.as_str() {
        "negative self-talk" | "negative" => (Class::NegativeSelfTalk, false),
        "positive self-talk" | "positive" => (Class::PositiveSelfTalk, false),
        "others" | "other" => (Class::Others, false),
        _ => (Class::Others, true),
    }
}

/// Deterministic stand-in for a model server.
#[derive(Debug, Clone)]
pub struct StubBackend {
    pub dim: usize,
    pub asr: StubAsr,
}

impl Default for StubBackend {
    fn default() -> Self {
        Self { dim: DEFAULT_STUB_DIM, asr: StubAsr::default() }
    }
}

impl StubBackend {
    pub fn new(dim: usize, asr: StubAsr) -> Self {
        Self { dim, asr }
    }

    fn llm_reply(prompt: &str) -> &'static str {
        // vote over the current utterance with the synthetic word pools
        let utterance = prompt
            .lines()
            .rev()
            .find_map(|l| l.strip_prefix("Utterance:"))
            .unwrap_or(prompt)
            .to_lowercase();
        let pools = [synth::NEGATIVE_WORDS, synth::POSITIVE_WORDS, synth::OTHER_WORDS];
        let votes: Vec<usize> = pools
            .iter()
            .map(|p| utterance.split_whitespace().filter(|w| p.contains(w)).count())
            .collect();
        let best = (0..3).max_by_key(|&k| (votes[k], k == 2)).unwrap_or(2);
        Class::ALL[best].display_name()
    }

    pub fn handle(&self, req: &Request) -> Response {
        let run = || -> Result<Response> {
            match req.op {
                Op::Embed => {
                    let clip = req.audio()?;
                    Ok(Response { vector: Some(stub_embedding(clip.samples(), clip.sample_rate(), self.dim)), ..Response::empty(req.id) })
                }
                Op::Transcribe => {
                    req.audio()?;
                    let words: Vec<Word> = req
                        .context
                        .iter()
                        .flatten()
                        .flat_map(|p| self.asr.piece_words(p))
                        .collect();
                    let t = Transcript::from_words(words);
                    Ok(Response { text: Some(t.text), words: Some(t.words), ..Response::empty(req.id) })
                }
                Op::Llm => {
                    let prompt = req.prompt.as_deref().ok_or_else(|| Error::Protocol("llm request lacks prompt".into()))?;
                    Ok(Response { label: Some(Self::llm_reply(prompt).to_string()), ..Response::empty(req.id) })
                }
            }
        };
        run().unwrap_or_else(|e| Response::error(req.id, e.to_string()))
    }

    /// Answers one raw line. Malformed requests get an error response that
    /// echoes the id when one can be recovered.
    pub fn handle_line(&self, line: &str) -> String {
        let resp = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(&req),
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .or_else(|| salvage_id(line))
                    .unwrap_or(0);
                Response::error(id, format!("malformed request: {e}"))
            }
        };
        serde_json::to_string(&resp).expect("responses always serialize")
    }

    /// Serves requests until the reader reaches end of stream.
    pub fn serve<R: BufRead, W: Write>(&self, reader: R, mut writer: W) -> Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writer.write_all(self.handle_line(&line).as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        Ok(())
    }

    /// Accepts TCP connections forever, one thread per connection.
    pub fn serve_tcp(self, listener: TcpListener) -> Result<()> {
        let shared = std::sync::Arc::new(self);
        for stream in listener.incoming() {
            let stream = stream?;
            let stub = shared.clone();
            std::thread::spawn(move || {
                let reader = match stream.try_clone() {
                    Ok(s) => BufReader::new(s),
                    Err(_) => return,
                };
                if let Err(e) = stub.serve(reader, stream) {
                    log::debug!("stub connection closed: {e}");
                }
            });
        }
        Ok(())
    }
}

/// Pulls `"id": <digits>` out of a truncated line.
fn salvage_id(line: &str) -> Option<u64> {
    let rest = &line[line.find("\"id\"")? + 4..];
    let rest = rest.trim_start().strip_prefix(':')?.trim_start();
    let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}

/// Where a backend lives.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendUri {
    Stub,
    Tcp(String),
    Exec { program: String, args: Vec<String> },
}

impl std::str::FromStr for BackendUri {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "stub" {
            return Ok(BackendUri::Stub);
        }
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(BackendUri::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("exec://") {
            let mut parts = cmd.split_whitespace().map(String::from);
            let program = parts.next().ok_or_else(|| Error::InvalidParameter("exec:// needs a program".into()))?;
            return Ok(BackendUri::Exec { program, args: parts.collect() });
        }
        Err(Error::InvalidParameter(format!("backend uri {s:?}: expected stub, tcp://host:port or exec://path")))
    }
}

/// One lockstep connection to a backend.
pub struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    timeout: Duration,
    next_id: u64,
}

impl Connection {
    pub fn open(uri: &BackendUri, timeout: Duration) -> Result<Self> {
        match uri {
            BackendUri::Stub => Err(Error::InvalidParameter("the stub backend runs in process".into())),
            BackendUri::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(format!("{addr}: {e}")))?;
                let reader = stream.try_clone().map_err(|e| Error::Transport(e.to_string()))?;
                Ok(Self::from_parts(Box::new(stream), reader, None, timeout))
            }
            BackendUri::Exec { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| Error::Transport(format!("{program}: {e}")))?;
                let stdin = child.stdin.take().ok_or_else(|| Error::Transport("no child stdin".into()))?;
                let stdout = child.stdout.take().ok_or_else(|| Error::Transport("no child stdout".into()))?;
                Ok(Self::from_parts(Box::new(stdin), stdout, Some(child), timeout))
            }
        }
    }

    fn from_parts<R: std::io::Read + Send + 'static>(writer: Box<dyn Write + Send>, reader: R, child: Option<Child>, timeout: Duration) -> Self {
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Self { writer, lines: rx, child, timeout, next_id: 1 }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Sends one raw line and waits for one raw line back.
    pub fn roundtrip_raw(&mut self, line: &str) -> Result<String> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.write_all(b"\n"))
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(e.to_string()))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => Ok(l),
            Ok(Err(e)) => Err(Error::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(Error::BackendTimeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Transport("backend closed the connection".into())),
        }
    }

    pub fn call(&mut self, req: &Request) -> Result<Response> {
        let line = self.roundtrip_raw(&serde_json::to_string(req)?)?;
        let resp: Response = serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("bad response: {e}")))?;
        if resp.id != req.id {
            return Err(Error::Protocol(format!("response id {} does not echo request {}", resp.id, req.id)));
        }
        resp.check_payload(req.op)?;
        Ok(resp)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

/// Encoder, ASR and LLM access with typed errors.
pub trait Backend: Send + Sync {
    fn embed(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>>;
    fn transcribe(&self, clip: &AudioClip, layout: Option<&ClipLayout>) -> Result<Transcript>;
    fn llm(&self, prompt: &str) -> Result<String>;
}

fn check_frames(frames: &[Vec<f64>], expected: Option<usize>) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::Protocol("embedding has no frames".into()))?.len();
    let want = expected.unwrap_or(first);
    for f in frames {
        if f.len() != want {
            return Err(Error::DimensionMismatch { expected: want, actual: f.len() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Protocol("non-finite embedding value".into()));
        }
    }
    Ok(())
}

impl Backend for StubBackend {
    fn embed(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
        if clip.is_empty() {
            return Err(Error::Empty("audio"));
        }
        Ok(stub_embedding(clip.samples(), clip.sample_rate(), self.dim))
    }

    fn transcribe(&self, _clip: &AudioClip, layout: Option<&ClipLayout>) -> Result<Transcript> {
        let words = layout.iter().flat_map(|l| l.pieces.iter()).flat_map(|p| self.asr.piece_words(p)).collect();
        Ok(Transcript::from_words(words))
    }

    fn llm(&self, prompt: &str) -> Result<String> {
        Ok(Self::llm_reply(prompt).to_string())
    }
}

/// Connection pool over a remote backend; each call borrows one connection
/// exclusively.
pub struct RemoteBackend {
    uri: BackendUri,
    timeout: Duration,
    expected_dim: Option<usize>,
    idle: Mutex<Vec<Connection>>,
}

impl RemoteBackend {
    pub fn new(uri: BackendUri, timeout: Duration, expected_dim: Option<usize>) -> Self {
        Self { uri, timeout, expected_dim, idle: Mutex::new(Vec::new()) }
    }

    fn with_conn<T>(&self, f: impl FnOnce(&mut Connection) -> Result<T>) -> Result<T> {
        let pooled = self.idle.lock().map_err(|_| Error::Transport("pool poisoned".into()))?.pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => Connection::open(&self.uri, self.timeout)?,
        };
        let out = f(&mut conn);
        // a failed connection may hold a stale reply, so it is dropped
        if out.is_ok() {
            if let Ok(mut idle) = self.idle.lock() {
                idle.push(conn);
            }
        }
        out
    }
}

impl Backend for RemoteBackend {
    fn embed(&self, clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
        if clip.is_empty() {
            return Err(Error::Empty("audio"));
        }
        let frames = self.with_conn(|c| {
            let id = c.next_id();
            Ok(c.call(&Request::embed(id, clip))?.vector.unwrap_or_default())
        })?;
        check_frames(&frames, self.expected_dim)?;
        Ok(frames)
    }

    fn transcribe(&self, clip: &AudioClip, layout: Option<&ClipLayout>) -> Result<Transcript> {
        let resp = self.with_conn(|c| {
            let id = c.next_id();
            c.call(&Request::transcribe(id, clip, layout))
        })?;
        let t = Transcript { text: resp.text.unwrap_or_default(), words: resp.words.unwrap_or_default() };
        t.check_order()?;
        if let Some(w) = t.words.iter().find(|w| w.t_start < -1e-6 || w.t_end > clip.duration_s() + 1e-3) {
            return Err(Error::Protocol(format!("word {:?} outside the {:.3}s window", w.w, clip.duration_s())));
        }
        Ok(t)
    }

    fn llm(&self, prompt: &str) -> Result<String> {
        let resp = self.with_conn(|c| {
            let id = c.next_id();
            c.call(&Request::llm(id, prompt))
        })?;
        Ok(resp.label.unwrap_or_default())
    }
}

pub fn connect(uri: &BackendUri, stub: StubBackend, timeout: Duration, expected_dim: Option<usize>) -> Box<dyn Backend> {
    match uri {
        BackendUri::Stub => Box::new(stub),
        other => Box::new(RemoteBackend::new(other.clone(), timeout, expected_dim)),
    }
}

/// Runs the ASR through a backend on assembled audio.
pub struct BackendTranscriber<'a> {
    pub backend: &'a dyn Backend,
}

impl Transcriber for BackendTranscriber<'_> {
    fn transcribe(&self, _plan: &WindowPlan, layout: &ClipLayout, audio: Option<&AudioClip>) -> Result<Transcript> {
        let fallback;
        let clip = match audio {
            Some(a) => a,
            None => {
                fallback = AudioClip::silence(layout.total_s.max(STUB_FRAME_S), crate::audio::DEFAULT_SAMPLE_RATE)?;
                &fallback
            }
        };
        self.backend.transcribe(clip, Some(layout))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Drives a live backend through the protocol and compares stub payloads
/// byte for byte with the in-process stub.
pub fn conformance_suite(uri: &BackendUri, timeout: Duration, reference: &StubBackend) -> Result<Vec<ConformanceCheck>> {
    let mut conn = Connection::open(uri, timeout)?;
    let mut out = Vec::new();
    let mut check = |name: &'static str, r: Result<String>| {
        out.push(match r {
            Ok(detail) => ConformanceCheck { name, passed: true, detail },
            Err(e) => ConformanceCheck { name, passed: false, detail: e.to_string() },
        });
    };

    let clip = AudioClip::new((0..441).map(|i| ((i as f32) * 0.013).sin() * 0.25).collect(), 22_050)?;
    let embed_req = Request::embed(41, &clip);
    let expected = serde_json::to_string(&reference.handle(&embed_req))?;
    check("embed-bytes", (|| {
        let got = conn.roundtrip_raw(&serde_json::to_string(&embed_req)?)?;
        if got == expected { Ok(format!("{} bytes", got.len())) } else { Err(Error::Protocol("embed reply differs from reference stub".into())) }
    })());

    check("id-echo", (|| {
        let resp = conn.call(&Request::llm(9_000_000_001, "Utterance: deuce"))?;
        Ok(format!("id {}", resp.id))
    })());

    check("llm-label", (|| {
        let resp = conn.call(&Request::llm(43, "Utterance: why again stupid"))?;
        let label = resp.label.unwrap_or_default();
        match parse_llm_label(&label) {
            (_, false) => Ok(label),
            _ => Err(Error::Protocol(format!("unparseable label {label:?}"))),
        }
    })());

    check("transcribe-order", (|| {
        let resp = conn.call(&Request::transcribe(44, &clip, None))?;
        let t = Transcript { text: resp.text.unwrap_or_default(), words: resp.words.unwrap_or_default() };
        t.check_order()?;
        Ok(format!("{} words", t.words.len()))
    })());

    check("truncated-frame", (|| {
        let full = serde_json::to_string(&Request::embed(45, &clip))?;
        let got = conn.roundtrip_raw(&full[..full.len() / 2])?;
        let resp: Response = serde_json::from_str(&got)?;
        match (&resp.error, resp.id) {
            (Some(_), 45) => Ok("error response with echoed id".into()),
            _ => Err(Error::Protocol(format!("expected error echoing id 45, got {got}"))),
        }
    })());

    check("empty-audio", (|| {
        let req = Request { audio_b64: Some(String::new()), ..Request::embed(46, &clip) };
        let got = conn.roundtrip_raw(&serde_json::to_string(&req)?)?;
        let resp: Response = serde_json::from_str(&got)?;
        if resp.error.is_some() && resp.id == 46 { Ok("rejected".into()) } else { Err(Error::Protocol(got)) }
    })());

    check("missing-payload", (|| {
        let got = conn.roundtrip_raw("{\"op\":\"llm\",\"id\":47}")?;
        let resp: Response = serde_json::from_str(&got)?;
        if resp.error.is_some() && resp.id == 47 { Ok("rejected".into()) } else { Err(Error::Protocol(got)) }
    })());

    Ok(out)
}
