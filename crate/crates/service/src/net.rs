//! Audited socket layer. Every bind, accept and outbound connect made by
//! this crate passes through [`NetAudit`], which refuses non-loopback
//! endpoints and records each operation.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::connect_info::Connected;
use axum::serve::{IncomingStream, Listener};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NetOp {
    Bind,
    Accept,
    Connect,
    Refused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NetEvent {
    pub op: NetOp,
    pub local: Option<SocketAddr>,
    pub peer: Option<SocketAddr>,
}

impl NetEvent {
    fn endpoints(&self) -> impl Iterator<Item = SocketAddr> {
        self.local.into_iter().chain(self.peer)
    }
}

#[derive(Default)]
struct AuditInner {
    entries: Vec<NetEvent>,
    file: Option<File>,
}

/// Shared, append-only log of socket operations.
#[derive(Clone, Default)]
pub struct NetAudit {
    inner: Arc<Mutex<AuditInner>>,
}

impl std::fmt::Debug for NetAudit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NetAudit").field("entries", &self.entries().len()).finish()
    }
}

fn refused(addr: SocketAddr) -> io::Error {
    io::Error::new(
        io::ErrorKind::PermissionDenied,
        format!("refusing non-loopback endpoint {addr}"),
    )
}

impl NetAudit {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also appends each entry as a JSON line to `path`.
    pub fn with_log_file(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let audit = Self::new();
        audit.inner.lock().expect("audit lock").file = Some(file);
        Ok(audit)
    }

    pub fn record(&self, op: NetOp, local: Option<SocketAddr>, peer: Option<SocketAddr>) {
        let ev = NetEvent { op, local, peer };
        let mut g = self.inner.lock().expect("audit lock");
        if let Some(f) = g.file.as_mut() {
            let line = serde_json::to_string(&ev).expect("net event serializes");
            // The in-memory log stays authoritative if the file write fails.
            let _ = writeln!(f, "{line}");
        }
        g.entries.push(ev);
    }

    pub fn entries(&self) -> Vec<NetEvent> {
        self.inner.lock().expect("audit lock").entries.clone()
    }

    /// True when every recorded endpoint is 127.0.0.0/8 or ::1.
    pub fn all_loopback(&self) -> bool {
        self.entries()
            .iter()
            .flat_map(NetEvent::endpoints)
            .all(|a| a.ip().is_loopback())
    }

    pub async fn bind(&self, addr: SocketAddr) -> io::Result<AuditedListener> {
        if !addr.ip().is_loopback() {
            self.record(NetOp::Refused, Some(addr), None);
            return Err(refused(addr));
        }
        let inner = tokio::net::TcpListener::bind(addr).await?;
        let local = inner.local_addr()?;
        self.record(NetOp::Bind, Some(local), None);
        Ok(AuditedListener {
            inner,
            audit: self.clone(),
        })
    }

    /// Blocking outbound connection to a loopback address.
    pub fn connect(&self, addr: SocketAddr) -> io::Result<TcpStream> {
        if !addr.ip().is_loopback() {
            self.record(NetOp::Refused, None, Some(addr));
            return Err(refused(addr));
        }
        let s = TcpStream::connect_timeout(&addr, Duration::from_secs(5))?;
        self.record(NetOp::Connect, s.local_addr().ok(), Some(addr));
        Ok(s)
    }
}

/// TCP listener that logs accepts and drops non-loopback peers.
pub struct AuditedListener {
    inner: tokio::net::TcpListener,
    audit: NetAudit,
}

impl AuditedListener {
    pub fn audit(&self) -> &NetAudit {
        &self.audit
    }
}

impl Listener for AuditedListener {
    type Io = tokio::net::TcpStream;
    type Addr = SocketAddr;

    async fn accept(&mut self) -> (Self::Io, Self::Addr) {
        loop {
            match self.inner.accept().await {
                Ok((io, peer)) => {
                    let local = io.local_addr().ok();
                    if peer.ip().is_loopback() {
                        self.audit.record(NetOp::Accept, local, Some(peer));
                        return (io, peer);
                    }
                    self.audit.record(NetOp::Refused, local, Some(peer));
                }
                // Mostly descriptor exhaustion; back off instead of spinning.
                Err(_) => tokio::time::sleep(Duration::from_millis(50)).await,
            }
        }
    }

    fn local_addr(&self) -> io::Result<Self::Addr> {
        self.inner.local_addr()
    }
}

/// Peer address made available to handlers as `ConnectInfo<PeerAddr>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeerAddr(pub SocketAddr);

impl Connected<IncomingStream<'_, AuditedListener>> for PeerAddr {
    fn connect_info(stream: IncomingStream<'_, AuditedListener>) -> Self {
        PeerAddr(*stream.remote_addr())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).unwrap_or(serde_json::Value::Null)
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

/// Minimal blocking HTTP/1.1 client for loopback use by the CLI and tests.
#[derive(Debug, Clone)]
pub struct LoopbackClient {
    addr: SocketAddr,
    audit: NetAudit,
    timeout: Duration,
}

fn read_head(r: &mut impl BufRead) -> io::Result<(u16, Vec<(String, String)>)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let status = line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("bad status line {line:?}")))?;
    let mut headers = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        let l = line.trim_end();
        if l.is_empty() {
            return Ok((status, headers));
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
}

fn read_chunked(r: &mut impl BufRead) -> io::Result<Vec<u8>> {
    let mut body = Vec::new();
    let mut line = String::new();
    loop {
        line.clear();
        r.read_line(&mut line)?;
        let size_hex = line.trim().split(';').next().unwrap_or("");
        let size = usize::from_str_radix(size_hex, 16)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad chunk size"))?;
        if size == 0 {
            line.clear();
            r.read_line(&mut line)?;
            return Ok(body);
        }
        let start = body.len();
        body.resize(start + size, 0);
        r.read_exact(&mut body[start..])?;
        line.clear();
        r.read_line(&mut line)?;
    }
}

impl LoopbackClient {
    pub fn new(addr: SocketAddr, audit: NetAudit) -> Self {
        LoopbackClient {
            addr,
            audit,
            timeout: Duration::from_secs(10),
        }
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn request(&self, method: &str, path: &str, body: Option<&serde_json::Value>) -> io::Result<HttpResponse> {
        self.raw(method, path, body.map(|b| b.to_string().into_bytes()), &[])
    }

    pub fn raw(
        &self,
        method: &str,
        path: &str,
        body: Option<Vec<u8>>,
        extra: &[(&str, &str)],
    ) -> io::Result<HttpResponse> {
        let mut s = self.audit.connect(self.addr)?;
        s.set_read_timeout(Some(self.timeout))?;
        let mut req = format!(
            "{method} {path} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\n",
            self.addr
        );
        for (k, v) in extra {
            req.push_str(&format!("{k}: {v}\r\n"));
        }
        if let Some(b) = &body {
            req.push_str(&format!(
                "Content-Type: application/json\r\nContent-Length: {}\r\n",
                b.len()
            ));
        }
        req.push_str("\r\n");
        s.write_all(req.as_bytes())?;
        if let Some(b) = &body {
            s.write_all(b)?;
        }
        let mut r = BufReader::new(s);
        let (status, headers) = read_head(&mut r)?;
        let resp = HttpResponse {
            status,
            headers,
            body: Vec::new(),
        };
        let body = if resp
            .header("transfer-encoding")
            .is_some_and(|v| v.eq_ignore_ascii_case("chunked"))
        {
            read_chunked(&mut r)?
        } else if let Some(n) = resp.header("content-length").and_then(|v| v.parse::<usize>().ok()) {
            let mut b = vec![0; n];
            r.read_exact(&mut b)?;
            b
        } else {
            let mut b = Vec::new();
            r.read_to_end(&mut b)?;
            b
        };
        Ok(HttpResponse { body, ..resp })
    }

    pub fn get(&self, path: &str) -> io::Result<HttpResponse> {
        self.request("GET", path, None)
    }

    pub fn post(&self, path: &str, body: &serde_json::Value) -> io::Result<HttpResponse> {
        self.request("POST", path, Some(body))
    }

    pub fn put(&self, path: &str, body: &serde_json::Value) -> io::Result<HttpResponse> {
        self.request("PUT", path, Some(body))
    }

    /// Opens `GET /events`, optionally resuming after `last_event_id`.
    pub fn subscribe(&self, last_event_id: Option<u64>, read_timeout: Duration) -> io::Result<SseReader> {
        let mut s = self.audit.connect(self.addr)?;
        s.set_read_timeout(Some(read_timeout))?;
        let mut req = format!(
            "GET /events HTTP/1.1\r\nHost: {}\r\nAccept: text/event-stream\r\n",
            self.addr
        );
        if let Some(id) = last_event_id {
            req.push_str(&format!("Last-Event-ID: {id}\r\n"));
        }
        req.push_str("\r\n");
        s.write_all(req.as_bytes())?;
        let mut r = BufReader::new(s);
        let (status, headers) = read_head(&mut r)?;
        let chunked = headers
            .iter()
            .any(|(k, v)| k.eq_ignore_ascii_case("transfer-encoding") && v.eq_ignore_ascii_case("chunked"));
        Ok(SseReader {
            status,
            r,
            chunked,
            pending: Vec::new(),
        })
    }
}

/// One item of a server-sent event stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SseFrame {
    Event {
        id: Option<u64>,
        event: String,
        data: String,
    },
    Comment(String),
}

/// Blocking reader over an open event stream.
pub struct SseReader {
    pub status: u16,
    r: BufReader<TcpStream>,
    chunked: bool,
    pending: Vec<u8>,
}

impl SseReader {
    fn fill(&mut self) -> io::Result<()> {
        if self.chunked {
            let mut line = String::new();
            if self.r.read_line(&mut line)? == 0 {
                return Err(io::ErrorKind::UnexpectedEof.into());
            }
            let size = usize::from_str_radix(line.trim().split(';').next().unwrap_or(""), 16)
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad chunk size"))?;
            if size == 0 {
                return Err(io::ErrorKind::UnexpectedEof.into());
            }
            let start = self.pending.len();
            self.pending.resize(start + size, 0);
            self.r.read_exact(&mut self.pending[start..])?;
            line.clear();
            self.r.read_line(&mut line)?;
        } else {
            let mut buf = [0u8; 4096];
            let n = self.r.read(&mut buf)?;
            if n == 0 {
                return Err(io::ErrorKind::UnexpectedEof.into());
            }
            self.pending.extend_from_slice(&buf[..n]);
        }
        Ok(())
    }

    /// Blocks until the next complete frame or the read timeout.
    pub fn next_frame(&mut self) -> io::Result<SseFrame> {
        loop {
            if let Some(end) = self.pending.windows(2).position(|w| w == b"\n\n") {
                let raw: Vec<u8> = self.pending.drain(..end + 2).collect();
                let text = String::from_utf8_lossy(&raw[..end]).into_owned();
                return Ok(parse_frame(&text));
            }
            self.fill()?;
        }
    }

    /// Next event frame, skipping comments.
    pub fn next_event(&mut self) -> io::Result<(Option<u64>, String, String)> {
        loop {
            if let SseFrame::Event { id, event, data } = self.next_frame()? {
                return Ok((id, event, data));
            }
        }
    }
}

fn parse_frame(text: &str) -> SseFrame {
    let mut id = None;
    let mut event = String::from("message");
    let mut data: Vec<&str> = Vec::new();
    let mut comment = None;
    for line in text.lines() {
        if let Some(c) = line.strip_prefix(':') {
            comment = Some(c.trim().to_string());
            continue;
        }
        let (field, value) = line.split_once(':').unwrap_or((line, ""));
        let value = value.strip_prefix(' ').unwrap_or(value);
        match field {
            "id" => id = value.parse().ok(),
            "event" => event = value.to_string(),
            "data" => data.push(value),
            _ => {}
        }
    }
    if data.is_empty() && id.is_none() {
        if let Some(c) = comment {
            return SseFrame::Comment(c);
        }
    }
    SseFrame::Event {
        id,
        event,
        data: data.join("\n"),
    }
}
