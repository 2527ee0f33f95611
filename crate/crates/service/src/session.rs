//! One live world per session, stepped on its own thread. The thread owns
//! the world outright; connections reach it only through its input queue.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use smartlet_core::scenarios::bundled;
use smartlet_core::world::scenario::TimedCommand;
use smartlet_core::{World, WorldScenario};

use crate::protocol::{ClientMessage, ErrorCode, RunState, ScenarioSource, ServerEnvelope, ServerMessage, PROTOCOL_VERSION};

/// Ticks stepped between checks of the input queue while running.
const BATCH_TICKS: u64 = 200;
const IDLE_POLL: Duration = Duration::from_millis(20);
pub const MAX_SPEED: f64 = 10_000.0;

/// Sending half of one connection, shared by its reader and the session.
#[derive(Clone)]
pub struct Outbound {
    pub connection: u64,
    tx: SyncSender<String>,
    seq: Arc<AtomicU64>,
}

impl Outbound {
    pub fn new(connection: u64, tx: SyncSender<String>) -> Self {
        Outbound { connection, tx, seq: Arc::new(AtomicU64::new(0)) }
    }

    fn envelope(&self, session_id: Option<u64>, message: ServerMessage) -> String {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        ServerEnvelope { session_id, seq, message }.to_json()
    }

    /// Blocking send; false once the connection is gone.
    pub fn send(&self, session_id: Option<u64>, message: ServerMessage) -> bool {
        self.tx.send(self.envelope(session_id, message)).is_ok()
    }

    /// Send unless the queue is full. A dropped message still consumes its
    /// sequence number, so the client sees the gap.
    fn offer(&self, session_id: Option<u64>, message: ServerMessage) -> bool {
        match self.tx.try_send(self.envelope(session_id, message)) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                log::debug!("connection {}: snapshot dropped", self.connection);
                true
            }
            Err(TrySendError::Disconnected(_)) => false,
        }
    }
}

pub enum SessionInput {
    Attach(Outbound),
    Detach { connection: u64 },
    Message { seq: u64, message: ClientMessage },
}

struct Loaded {
    /// As loaded, with any reseed applied; the base of recordings.
    scenario: WorldScenario,
    world: World,
    recorded: Vec<TimedCommand>,
}

pub struct Session {
    id: u64,
    snapshot_rate: f64,
    out: Option<Outbound>,
    loaded: Option<Loaded>,
    running: bool,
    speed: f64,
    /// Real-time anchor while running: wall instant and the tick at it.
    anchor: (Instant, u64),
}

type Reply = Result<(), (ErrorCode, String)>;

impl Session {
    pub fn new(id: u64, snapshot_rate: f64) -> Self {
        Session { id, snapshot_rate, out: None, loaded: None, running: false, speed: 1.0, anchor: (Instant::now(), 0) }
    }

    /// Every `snapshot_every` simulated ticks.
    fn snapshot_every(&self) -> u64 {
        (1000.0 / self.snapshot_rate).round().max(1.0) as u64
    }

    pub fn run(mut self, inputs: Receiver<SessionInput>) {
        loop {
            let input = if self.running {
                match inputs.try_recv() {
                    Ok(i) => Some(i),
                    Err(std::sync::mpsc::TryRecvError::Empty) => None,
                    Err(std::sync::mpsc::TryRecvError::Disconnected) => break,
                }
            } else {
                match inputs.recv_timeout(IDLE_POLL) {
                    Ok(i) => Some(i),
                    Err(RecvTimeoutError::Timeout) => None,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            };
            match input {
                Some(SessionInput::Attach(out)) => self.attach(out),
                Some(SessionInput::Detach { connection }) => {
                    if self.out.as_ref().is_some_and(|o| o.connection == connection) {
                        self.detach();
                    }
                }
                Some(SessionInput::Message { seq, message }) => self.handle(seq, message),
                None if self.running => self.advance_realtime(),
                None => {}
            }
        }
        log::debug!("session {} closed", self.id);
    }

    fn attach(&mut self, out: Outbound) {
        let hello = ServerMessage::Hello { version: PROTOCOL_VERSION, session_id: self.id, snapshot_rate: self.snapshot_rate };
        if out.send(Some(self.id), hello) {
            log::info!("session {} attached to connection {}", self.id, out.connection);
            self.out = Some(out);
            self.snapshot();
        }
    }

    fn detach(&mut self) {
        log::info!("session {} detached; pausing", self.id);
        self.out = None;
        self.running = false;
    }

    fn send(&mut self, message: ServerMessage) {
        if let Some(out) = &self.out {
            if !out.send(Some(self.id), message) {
                self.detach();
            }
        }
    }

    fn state(&self) -> RunState {
        match (&self.loaded, self.running) {
            (None, _) => RunState::Empty,
            (Some(_), false) => RunState::Paused,
            (Some(_), true) => RunState::Running,
        }
    }

    fn snapshot(&mut self) {
        let Some(loaded) = &self.loaded else { return };
        let message = ServerMessage::Snapshot { state: self.state(), speed: self.speed, world: loaded.world.snapshot() };
        if let Some(out) = &self.out {
            if !out.offer(Some(self.id), message) {
                self.detach();
            }
        }
    }

    fn tick(&self) -> u64 {
        self.loaded.as_ref().map_or(0, |l| l.world.tick())
    }

    fn reanchor(&mut self) {
        self.anchor = (Instant::now(), self.tick());
    }

    fn handle(&mut self, seq: u64, message: ClientMessage) {
        let tick = self.tick();
        let record = matches!(message, ClientMessage::Record);
        match self.apply(message) {
            Ok(()) => {
                self.send(ServerMessage::Ack { seq, tick });
                if record {
                    self.send_recording();
                }
            }
            Err((code, message)) => self.send(ServerMessage::Error { code, message, seq: Some(seq) }),
        }
    }

    fn loaded(&mut self) -> Result<&mut Loaded, (ErrorCode, String)> {
        self.loaded.as_mut().ok_or((ErrorCode::NoScenario, "no scenario loaded".into()))
    }

    fn apply(&mut self, message: ClientMessage) -> Reply {
        if let Some(command) = message.world_command() {
            let loaded = self.loaded()?;
            loaded.world.apply(&command).map_err(|e| (ErrorCode::InvalidCommand, e.to_string()))?;
            let tick = loaded.world.tick();
            loaded.recorded.push(TimedCommand { tick, command });
            return Ok(());
        }
        match message {
            ClientMessage::Hello { .. } => Err((ErrorCode::Handshake, "already attached".into())),
            ClientMessage::LoadScenario { source } => {
                let scenario = match source {
                    ScenarioSource::Toml(text) => WorldScenario::from_toml(&text),
                    ScenarioSource::Bundled(name) => {
                        bundled(&name).ok_or((ErrorCode::Scenario, format!("no bundled scenario {name:?}")))?
                    }
                }
                .map_err(|e| (ErrorCode::Scenario, e.to_string()))?;
                self.install(scenario)
            }
            ClientMessage::Reset { seed } => {
                let mut scenario = self.loaded()?.scenario.clone();
                if let Some(seed) = seed {
                    scenario.seed = seed;
                }
                self.install(scenario)
            }
            ClientMessage::Start => {
                self.loaded()?;
                self.running = true;
                self.reanchor();
                Ok(())
            }
            ClientMessage::Pause => {
                self.running = false;
                self.snapshot();
                Ok(())
            }
            ClientMessage::Step { n } => {
                self.loaded()?;
                self.advance(n);
                self.reanchor();
                Ok(())
            }
            ClientMessage::SetSpeed { factor } => {
                if !(factor.is_finite() && factor > 0.0 && factor <= MAX_SPEED) {
                    return Err((ErrorCode::InvalidCommand, format!("speed {factor} outside (0, {MAX_SPEED}]")));
                }
                self.speed = factor;
                self.reanchor();
                Ok(())
            }
            ClientMessage::Record => self.loaded().map(|_| ()),
            _ => unreachable!("world commands handled above"),
        }
    }

    fn install(&mut self, scenario: WorldScenario) -> Reply {
        let world = World::new(&scenario).map_err(|e| (ErrorCode::Scenario, e.to_string()))?;
        log::info!("session {}: loaded {:?} seed {}", self.id, scenario.name, scenario.seed);
        self.loaded = Some(Loaded { scenario, world, recorded: vec![] });
        self.running = false;
        self.snapshot();
        Ok(())
    }

    fn send_recording(&mut self) {
        let Some(loaded) = &self.loaded else { return };
        let scenario = record_session(&loaded.scenario, &loaded.recorded, loaded.world.tick());
        let message = match scenario.to_toml() {
            Ok(scenario_toml) => ServerMessage::Recording { scenario_toml, commands: loaded.recorded.len() },
            Err(e) => ServerMessage::Error { code: ErrorCode::Scenario, message: e.to_string(), seq: None },
        };
        self.send(message);
    }

    fn advance_realtime(&mut self) {
        let (since, base) = self.anchor;
        let due = base + (since.elapsed().as_secs_f64() * 1000.0 * self.speed) as u64;
        let behind = due.saturating_sub(self.tick());
        if behind == 0 {
            std::thread::sleep(Duration::from_millis(1));
            return;
        }
        self.advance(behind.min(BATCH_TICKS));
    }

    /// Step `n` ticks, streaming every event and periodic snapshots.
    fn advance(&mut self, n: u64) {
        let every = self.snapshot_every();
        for _ in 0..n {
            let Some(loaded) = &mut self.loaded else { return };
            match loaded.world.step() {
                Ok(events) => {
                    for e in events {
                        self.send(ServerMessage::Event(e));
                    }
                    if self.tick() % every == 0 {
                        self.snapshot();
                    }
                }
                Err(e) => {
                    self.running = false;
                    self.send(ServerMessage::Error { code: ErrorCode::World, message: e.to_string(), seq: None });
                    return;
                }
            }
        }
    }
}

/// A scenario that replays a session headlessly: the loaded scenario with
/// the interactive commands added at the ticks they bound to. Interactive
/// commands precede scripted ones at the same tick, as they did live.
pub fn record_session(base: &WorldScenario, recorded: &[TimedCommand], ticks: u64) -> WorldScenario {
    let mut scenario = base.clone();
    let mut commands = recorded.to_vec();
    commands.extend(base.commands.iter().cloned());
    commands.sort_by_key(|c| c.tick);
    scenario.commands = commands;
    scenario.ticks = ticks;
    scenario
}
