//! Blocking client for the wire protocol.

use std::io::{self, BufReader};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use thiserror::Error;

use crate::protocol::{
    read_frame, write_frame, ClientEnvelope, ClientMessage, FrameError, ServerEnvelope, ServerMessage, PROTOCOL_VERSION,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("bad server message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("connection closed")]
    Closed,
    #[error("unexpected reply: {0:?}")]
    Unexpected(Box<ServerMessage>),
}

pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    seq: u64,
    pub session_id: Option<u64>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(20)))?;
        stream.set_nodelay(true)?;
        Ok(Client { reader: BufReader::new(stream.try_clone()?), writer: stream, seq: 0, session_id: None })
    }

    /// Handshake; creates a session unless `session` names one to attach to.
    pub fn hello(&mut self, session: Option<u64>) -> Result<u64, ClientError> {
        self.session_id = session;
        self.send(ClientMessage::Hello { version: PROTOCOL_VERSION })?;
        match self.recv()?.message {
            ServerMessage::Hello { session_id, .. } => {
                self.session_id = Some(session_id);
                Ok(session_id)
            }
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    /// Send a message; returns its sequence number.
    pub fn send(&mut self, message: ClientMessage) -> Result<u64, ClientError> {
        self.seq += 1;
        let envelope = ClientEnvelope { session_id: self.session_id, seq: self.seq, message };
        write_frame(&mut self.writer, &envelope.to_json())?;
        Ok(self.seq)
    }

    /// Write an arbitrary frame body, bypassing the envelope.
    pub fn send_raw(&mut self, body: &str) -> Result<(), ClientError> {
        Ok(write_frame(&mut self.writer, body)?)
    }

    pub fn recv(&mut self) -> Result<ServerEnvelope, ClientError> {
        let text = read_frame(&mut self.reader)?.ok_or(ClientError::Closed)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Read until `pick` matches, returning the skipped messages too.
    pub fn recv_until(
        &mut self,
        mut pick: impl FnMut(&ServerMessage) -> bool,
    ) -> Result<(Vec<ServerEnvelope>, ServerEnvelope), ClientError> {
        let mut skipped = vec![];
        loop {
            let m = self.recv()?;
            if pick(&m.message) {
                return Ok((skipped, m));
            }
            skipped.push(m);
        }
    }

    /// Send and wait for the ack or error answering it. Messages received
    /// meanwhile are returned alongside.
    pub fn request(&mut self, message: ClientMessage) -> Result<(Vec<ServerEnvelope>, ServerEnvelope), ClientError> {
        let seq = self.send(message)?;
        self.recv_until(|m| match m {
            ServerMessage::Ack { seq: s, .. } => *s == seq,
            ServerMessage::Error { seq: s, .. } => *s == Some(seq),
            _ => false,
        })
    }
}
