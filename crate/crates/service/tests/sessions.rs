use std::time::Duration;

use smartlet_core::scenarios::bundled;
use smartlet_core::verify::verify;
use smartlet_core::world::eventlog::{EventKind, EventLog, EventRecord};
use smartlet_core::{run_scenario, WorldCommand, WorldScenario};
use smartlet_service::protocol::{ClientMessage, ErrorCode, RunState, ScenarioSource, ServerEnvelope, ServerMessage};
use smartlet_service::{Client, Server, ServerConfig, ServerHandle};

fn start_server(config: ServerConfig) -> ServerHandle {
    Server::bind("127.0.0.1:0", config).unwrap().spawn().unwrap()
}

fn connect(server: &ServerHandle) -> Client {
    let mut c = Client::connect(server.addr).unwrap();
    c.hello(None).unwrap();
    c
}

fn scenario(name: &str) -> WorldScenario {
    bundled(name).unwrap().unwrap()
}

fn load(c: &mut Client, s: &WorldScenario) -> Vec<ServerEnvelope> {
    let source = ScenarioSource::Toml(s.to_toml().unwrap());
    let (seen, reply) = c.request(ClientMessage::LoadScenario { source }).unwrap();
    assert!(matches!(reply.message, ServerMessage::Ack { .. }), "{reply:?}");
    seen
}

fn events(messages: &[ServerEnvelope]) -> Vec<EventRecord> {
    messages
        .iter()
        .filter_map(|m| match &m.message {
            ServerMessage::Event(e) => Some(e.clone()),
            _ => None,
        })
        .collect()
}

/// Step and collect the events streamed meanwhile.
fn step(c: &mut Client, n: u64) -> Vec<EventRecord> {
    let (seen, reply) = c.request(ClientMessage::Step { n }).unwrap();
    assert!(matches!(reply.message, ServerMessage::Ack { .. }), "{reply:?}");
    events(&seen)
}

fn command(c: &mut Client, message: ClientMessage) -> u64 {
    match c.request(message).unwrap().1.message {
        ServerMessage::Ack { tick, .. } => tick,
        other => panic!("{other:?}"),
    }
}

fn ack_tick(c: &mut Client, message: ClientMessage) -> (Vec<ServerEnvelope>, u64) {
    let (seen, reply) = c.request(message).unwrap();
    match reply.message {
        ServerMessage::Ack { tick, .. } => (seen, tick),
        other => panic!("{other:?}"),
    }
}

fn error_code(reply: &ServerEnvelope) -> ErrorCode {
    match &reply.message {
        ServerMessage::Error { code, .. } => *code,
        other => panic!("expected error, got {other:?}"),
    }
}

#[test]
fn pause_freezes_simulated_time() {
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    load(&mut c, &scenario("fig2_locomotion"));
    command(&mut c, ClientMessage::SetSpeed { factor: 5.0 });
    command(&mut c, ClientMessage::Start);
    std::thread::sleep(Duration::from_millis(200));
    let (seen, paused_at) = ack_tick(&mut c, ClientMessage::Pause);
    assert!(paused_at > 0);
    assert!(seen.iter().any(|m| matches!(m.message, ServerMessage::Snapshot { state: RunState::Running, .. })));
    // The snapshot sent on pause reports the frozen tick.
    let frozen = seen.iter().rev().find_map(|m| match &m.message {
        ServerMessage::Snapshot { state, world, .. } => Some((*state, world.tick)),
        _ => None,
    });
    assert_eq!(frozen, Some((RunState::Paused, paused_at)));
    std::thread::sleep(Duration::from_millis(200));
    let (_, later) = ack_tick(&mut c, ClientMessage::Record);
    assert_eq!(later, paused_at);
    server.shutdown().unwrap();
}

#[test]
fn laser_on_robot_triggers_transition() {
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    let mut s = scenario("fig3e_navigation_b");
    s.zones.clear();
    let seen = load(&mut c, &s);
    assert!(seen.iter().any(|m| matches!(m.message, ServerMessage::Snapshot { .. })));
    step(&mut c, 1000);
    let (seen, _) = ack_tick(&mut c, ClientMessage::Pause);
    let pose = seen
        .iter()
        .rev()
        .find_map(|m| match &m.message {
            ServerMessage::Snapshot { world, .. } => Some((world.robots[0].x_mm, world.robots[0].y_mm)),
            _ => None,
        })
        .unwrap();
    let at = command(&mut c, ClientMessage::MoveLaser { x_mm: pose.0, y_mm: pose.1, on: true });
    let events = step(&mut c, 100);
    let t = events.iter().find(|e| e.kind == EventKind::PhaseTransition).expect("transition");
    assert!(t.tick - at < 50, "latency {}", t.tick - at);
    assert!(events.iter().any(|e| e.kind == EventKind::Din && e.payload["value"] == 1));
}

#[test]
fn live_upload_matches_headless_scenario() {
    let scripted = scenario("optical_upload");
    let mut bare = scripted.clone();
    bare.commands.clear();
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    load(&mut c, &bare);

    let mut log = EventLog::default();
    let mut tick = 0;
    for timed in &scripted.commands {
        log.records.extend(step(&mut c, timed.tick - tick));
        tick = timed.tick;
        let WorldCommand::EmitFrame { frame } = &timed.command else { panic!("{timed:?}") };
        assert_eq!(command(&mut c, ClientMessage::EmitFrame { frame: frame.clone() }), tick);
    }
    log.records.extend(step(&mut c, scripted.ticks - tick));

    let headless = run_scenario(&scripted, scripted.ticks).unwrap();
    assert!(log.of_kind(EventKind::FrameRx).count() == 2);
    assert_eq!(log.to_jsonl(), headless.to_jsonl());
}

#[test]
fn recorded_session_replays_identically() {
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    let mut s = scenario("fig3e_navigation_b");
    s.zones.clear();
    load(&mut c, &s);
    let mut live = EventLog::default();
    // Drag the laser along a path while stepping, then switch it off.
    live.records.extend(step(&mut c, 500));
    for k in 0..10 {
        command(&mut c, ClientMessage::MoveLaser { x_mm: 39.0 - 0.3 * k as f64, y_mm: 35.0, on: true });
        live.records.extend(step(&mut c, 37));
    }
    command(&mut c, ClientMessage::MoveLaser { x_mm: 10.0, y_mm: 10.0, on: false });
    live.records.extend(step(&mut c, 3000));

    c.send(ClientMessage::Record).unwrap();
    let (_, reply) = c.recv_until(|m| matches!(m, ServerMessage::Recording { .. })).unwrap();
    let ServerMessage::Recording { scenario_toml, commands } = reply.message else { unreachable!() };
    assert_eq!(commands, 11);
    let replay = WorldScenario::from_toml(&scenario_toml).unwrap();
    let headless = run_scenario(&replay, replay.ticks).unwrap();
    assert!(live.of_kind(EventKind::PhaseTransition).count() > 0);
    let verdict = verify(&headless.to_jsonl(), &live.to_jsonl());
    assert!(verdict.passed(), "{verdict:?}");
}

#[test]
fn empty_session_records_no_commands() {
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    load(&mut c, &scenario("fig2_locomotion"));
    c.send(ClientMessage::Record).unwrap();
    let (_, reply) = c.recv_until(|m| matches!(m, ServerMessage::Recording { .. })).unwrap();
    let ServerMessage::Recording { scenario_toml, commands } = reply.message else { unreachable!() };
    assert_eq!(commands, 0);
    let replay = WorldScenario::from_toml(&scenario_toml).unwrap();
    assert!(replay.commands.is_empty());
    assert_eq!(replay.ticks, 0);
}

#[test]
fn malformed_messages_leave_session_intact() {
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    load(&mut c, &scenario("fig2_locomotion"));
    step(&mut c, 10);

    c.send_raw("{not json").unwrap();
    let reply = c.recv_until(|m| matches!(m, ServerMessage::Error { .. })).unwrap().1;
    assert_eq!(error_code(&reply), ErrorCode::Malformed);

    c.send_raw(r#"{"session_id":1,"seq":99,"kind":"teleport","payload":{}}"#).unwrap();
    let reply = c.recv_until(|m| matches!(m, ServerMessage::Error { .. })).unwrap().1;
    assert_eq!(error_code(&reply), ErrorCode::Malformed);
    assert!(matches!(reply.message, ServerMessage::Error { seq: Some(99), .. }));

    // Malformed frames consume no sequence number; the session carries on.
    assert_eq!(step(&mut c, 5).len(), 0);
    let (_, tick) = ack_tick(&mut c, ClientMessage::Pause);
    assert_eq!(tick, 15);

    // Sequence numbers must keep increasing.
    c.send_raw(r#"{"session_id":1,"seq":2,"kind":"start"}"#).unwrap();
    let reply = c.recv_until(|m| matches!(m, ServerMessage::Error { .. })).unwrap().1;
    assert_eq!(error_code(&reply), ErrorCode::StaleSeq);
}

#[test]
fn invalid_commands_are_refused_without_side_effects() {
    let server = start_server(ServerConfig::default());
    let mut c = connect(&server);
    let (_, reply) = c.request(ClientMessage::Step { n: 5 }).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::NoScenario);

    load(&mut c, &scenario("fig2_locomotion"));
    let (_, reply) = c.request(ClientMessage::SetSpeed { factor: f64::INFINITY }).unwrap();
    assert!(matches!(reply.message, ServerMessage::Error { code: ErrorCode::Malformed | ErrorCode::InvalidCommand, .. }));
    let (_, reply) = c.request(ClientMessage::MoveLaser { x_mm: -5.0, y_mm: 1.0, on: true }).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::InvalidCommand);
    let (_, reply) = c.request(ClientMessage::EmitFrame { frame: "xyz".into() }).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::InvalidCommand);
    let (_, reply) = c.request(ClientMessage::LoadScenario { source: ScenarioSource::Toml("scenario_version = 9".into()) }).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::Scenario);

    // Still the fig2 world, and nothing was recorded.
    assert_eq!(step(&mut c, 5).first().map(|e| e.kind), Some(EventKind::Act));
    c.send(ClientMessage::Record).unwrap();
    let (_, reply) = c.recv_until(|m| matches!(m, ServerMessage::Recording { .. })).unwrap();
    assert!(matches!(reply.message, ServerMessage::Recording { commands: 0, .. }));
}

#[test]
fn unknown_sessions_and_handshake() {
    let server = start_server(ServerConfig::default());
    let mut c = Client::connect(server.addr).unwrap();
    c.session_id = Some(1);
    let (_, reply) = c.request(ClientMessage::Start).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::Handshake);

    let mut other = Client::connect(server.addr).unwrap();
    other.session_id = Some(999);
    other.send(ClientMessage::Hello { version: 1 }).unwrap();
    assert_eq!(error_code(&other.recv().unwrap()), ErrorCode::UnknownSession);

    other.session_id = None;
    other.send(ClientMessage::Hello { version: 7 }).unwrap();
    assert_eq!(error_code(&other.recv().unwrap()), ErrorCode::Version);

    let id = other.hello(None).unwrap();
    other.session_id = Some(id + 50);
    let (_, reply) = other.request(ClientMessage::Start).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::UnknownSession);
}

#[test]
fn sessions_are_isolated_and_reattachable() {
    let server = start_server(ServerConfig::default());
    let mut a = connect(&server);
    let mut b = connect(&server);
    assert_ne!(a.session_id, b.session_id);
    load(&mut a, &scenario("fig2_locomotion"));
    step(&mut a, 300);
    let (_, reply) = b.request(ClientMessage::Step { n: 1 }).unwrap();
    assert_eq!(error_code(&reply), ErrorCode::NoScenario);

    let id = a.session_id.unwrap();
    drop(a);
    std::thread::sleep(Duration::from_millis(100));
    let mut again = Client::connect(server.addr).unwrap();
    assert_eq!(again.hello(Some(id)).unwrap(), id);
    let (_, tick) = ack_tick(&mut again, ClientMessage::Pause);
    assert_eq!(tick, 300);
}

#[test]
fn backpressure_drops_snapshots_not_events() {
    let server = start_server(ServerConfig { snapshot_rate: 1000.0, outbox: 8 });
    let mut c = connect(&server);
    let s = scenario("fig2_locomotion");
    load(&mut c, &s);
    let seq = c.send(ClientMessage::Step { n: 3000 }).unwrap();
    // Stop reading while the session streams.
    std::thread::sleep(Duration::from_millis(500));
    let (seen, _) = c.recv_until(|m| matches!(m, ServerMessage::Ack { seq: s, .. } if *s == seq)).unwrap();

    let live: Vec<EventRecord> = events(&seen);
    let headless = run_scenario(&s, 3000).unwrap();
    assert_eq!(live, headless.records);

    let seqs: Vec<u64> = seen.iter().map(|m| m.seq).collect();
    assert!(seqs.windows(2).all(|w| w[1] > w[0]));
    let gaps = seqs.windows(2).filter(|w| w[1] > w[0] + 1).count();
    let snapshots = seen.iter().filter(|m| matches!(m.message, ServerMessage::Snapshot { .. })).count();
    assert!(gaps > 0, "expected dropped snapshots");
    assert!(snapshots < 3000);
}
