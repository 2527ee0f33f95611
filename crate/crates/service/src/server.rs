use std::collections::HashMap;
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde_json::Value;

use crate::protocol::{read_frame, write_frame, ClientEnvelope, ClientMessage, ErrorCode, FrameError, ServerMessage, PROTOCOL_VERSION};
use crate::session::{Outbound, Session, SessionInput};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ServerConfig {
    /// Snapshots per second of simulated time.
    pub snapshot_rate: f64,
    /// Outgoing messages buffered per connection before snapshots drop.
    pub outbox: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { snapshot_rate: 30.0, outbox: 1024 }
    }
}

type Registry = Arc<Mutex<HashMap<u64, Sender<SessionInput>>>>;

pub struct Server {
    listener: TcpListener,
    config: ServerConfig,
    sessions: Registry,
    ids: Arc<AtomicU64>,
    stop: Arc<AtomicBool>,
}

/// A server running on a background thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    /// Stop accepting and drop every session. Open connections end when
    /// their peers hang up.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(io::Error::other("server thread panicked")),
            None => Ok(()),
        }
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<Self> {
        if !(config.snapshot_rate.is_finite() && config.snapshot_rate > 0.0) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "snapshot rate must be positive"));
        }
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            config,
            sessions: Registry::default(),
            ids: Arc::new(AtomicU64::new(0)),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let thread = std::thread::Builder::new().name("smartlet-accept".into()).spawn(move || self.serve())?;
        Ok(ServerHandle { addr, stop, thread: Some(thread) })
    }

    /// Accept connections until shut down.
    pub fn serve(self) -> io::Result<()> {
        log::info!("listening on {}", self.local_addr()?);
        let connections = AtomicU64::new(0);
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let id = connections.fetch_add(1, Ordering::SeqCst) + 1;
            let ctx = Connection {
                id,
                config: self.config,
                sessions: self.sessions.clone(),
                ids: self.ids.clone(),
            };
            std::thread::Builder::new().name(format!("smartlet-conn-{id}")).spawn(move || {
                if let Err(e) = ctx.run(stream) {
                    log::debug!("connection {id} ended: {e}");
                }
            })?;
        }
        self.sessions.lock().expect("registry lock").clear();
        Ok(())
    }
}

struct Connection {
    id: u64,
    config: ServerConfig,
    sessions: Registry,
    ids: Arc<AtomicU64>,
}

impl Connection {
    fn run(self, stream: TcpStream) -> io::Result<()> {
        log::info!("connection {} from {}", self.id, stream.peer_addr()?);
        let (tx, rx) = mpsc::sync_channel::<String>(self.config.outbox);
        let mut writer = stream.try_clone()?;
        let writer_thread = std::thread::spawn(move || {
            for frame in rx {
                if write_frame(&mut writer, &frame).is_err() {
                    break;
                }
            }
        });
        let out = Outbound::new(self.id, tx);
        let attached = self.read_loop(&stream, &out);
        if let Some(session) = attached {
            if let Some(s) = self.sessions.lock().expect("registry lock").get(&session) {
                let _ = s.send(SessionInput::Detach { connection: self.id });
            }
        }
        drop(out);
        let _ = stream.shutdown(Shutdown::Both);
        let _ = writer_thread.join();
        Ok(())
    }

    fn error(out: &Outbound, session: Option<u64>, code: ErrorCode, message: impl Into<String>, seq: Option<u64>) {
        out.send(session, ServerMessage::Error { code, message: message.into(), seq });
    }

    /// Returns the session attached at the end, if any.
    fn read_loop(&self, stream: &TcpStream, out: &Outbound) -> Option<u64> {
        let mut reader = BufReader::new(stream);
        let mut attached: Option<u64> = None;
        let mut last_seq = 0u64;
        loop {
            let text = match read_frame(&mut reader) {
                Ok(Some(t)) => t,
                Ok(None) | Err(FrameError::Io(_)) => return attached,
                Err(e) => {
                    // The stream cannot be resynchronised after a bad frame.
                    Self::error(out, attached, ErrorCode::Malformed, e.to_string(), None);
                    return attached;
                }
            };
            let envelope: ClientEnvelope = match serde_json::from_str(&text) {
                Ok(e) => e,
                Err(e) => {
                    let seq = serde_json::from_str::<Value>(&text).ok().and_then(|v| v.get("seq")?.as_u64());
                    Self::error(out, attached, ErrorCode::Malformed, e.to_string(), seq);
                    continue;
                }
            };
            let seq = envelope.seq;
            if seq <= last_seq {
                Self::error(out, attached, ErrorCode::StaleSeq, format!("seq {seq} after {last_seq}"), Some(seq));
                continue;
            }
            last_seq = seq;
            let target = match (&envelope.message, envelope.session_id) {
                (ClientMessage::Hello { version }, _) if *version != PROTOCOL_VERSION => {
                    Self::error(out, attached, ErrorCode::Version, format!("server speaks version {PROTOCOL_VERSION}"), Some(seq));
                    continue;
                }
                (ClientMessage::Hello { .. }, _) if attached.is_some() => {
                    Self::error(out, attached, ErrorCode::Handshake, "connection already attached", Some(seq));
                    continue;
                }
                (ClientMessage::Hello { .. }, None) => {
                    let id = self.create_session();
                    attached = Some(id);
                    self.deliver(id, SessionInput::Attach(out.clone()));
                    continue;
                }
                (ClientMessage::Hello { .. }, Some(id)) => {
                    if self.deliver(id, SessionInput::Attach(out.clone())) {
                        attached = Some(id);
                    } else {
                        Self::error(out, None, ErrorCode::UnknownSession, format!("no session {id}"), Some(seq));
                    }
                    continue;
                }
                (_, _) if attached.is_none() => {
                    Self::error(out, None, ErrorCode::Handshake, "send hello first", Some(seq));
                    continue;
                }
                (_, id) => id.unwrap_or_default(),
            };
            if Some(target) != attached {
                let message = format!("session {target} is not attached to this connection");
                Self::error(out, attached, ErrorCode::UnknownSession, message, Some(seq));
                continue;
            }
            if !self.deliver(target, SessionInput::Message { seq, message: envelope.message }) {
                Self::error(out, attached, ErrorCode::UnknownSession, format!("session {target} has ended"), Some(seq));
            }
        }
    }

    fn deliver(&self, session: u64, input: SessionInput) -> bool {
        let sessions = self.sessions.lock().expect("registry lock");
        sessions.get(&session).is_some_and(|s| s.send(input).is_ok())
    }

    fn create_session(&self) -> u64 {
        let id = self.ids.fetch_add(1, Ordering::SeqCst) + 1;
        let (tx, rx) = mpsc::channel();
        let session = Session::new(id, self.config.snapshot_rate);
        std::thread::Builder::new()
            .name(format!("smartlet-session-{id}"))
            .spawn(move || session.run(rx))
            .expect("spawn session thread");
        self.sessions.lock().expect("registry lock").insert(id, tx);
        log::info!("session {id} created");
        id
    }
}
