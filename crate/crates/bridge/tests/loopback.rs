use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use parlance_bridge::frame::DEFAULT_MAX_PAYLOAD;
use parlance_bridge::{
    read_record, serve_peer, write_record, BridgeError, Control, ObserverClient, Record, RemoteListener, RemoteObserver,
    Role, SessionState,
};
use parlance_core::agents::{Agent, AgentError, RepeatLabelAgent};
use parlance_core::tasks::{load_teacher, LoadOptions};
use parlance_core::tasks::{Registry, TaskSpec};
use parlance_core::worlds::{DialogPartnerWorld, SharedTranscript, World, WorldError};
use parlance_core::{DataMode, Message, MetricsReport};

const WAIT: Duration = Duration::from_secs(10);

struct Echo {
    last: Option<Message>,
}

impl Agent for Echo {
    fn id(&self) -> &str {
        "echo"
    }
    fn observe(&mut self, m: &Message) -> Result<(), AgentError> {
        self.last = Some(m.clone());
        Ok(())
    }
    fn act(&mut self) -> Result<Message, AgentError> {
        let text = self.last.as_ref().and_then(|m| m.text.clone()).unwrap_or_default();
        Ok(Message::with_text(text))
    }
}

/// Connects, says hello and hands back the raw stream.
fn raw_peer(addr: std::net::SocketAddr, version: u32) -> TcpStream {
    let mut s = TcpStream::connect(addr).unwrap();
    let hello = Control::Hello { version, role: Role::Agent, agent_id: "raw".into() };
    write_record(&mut s, &Record::Control(hello)).unwrap();
    s
}

#[test]
fn echo_peer_over_loopback() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let peer = thread::spawn(move || serve_peer(addr, &mut Echo { last: None }).unwrap());
    let mut remote = listener.accept_agent(WAIT).unwrap();
    assert_eq!(remote.id(), "echo");
    remote.observe(&Message::with_text("ping")).unwrap();
    let reply = remote.act().unwrap();
    // the peer replied without an id, so the session stamps it
    assert_eq!(reply, Message::with_text("ping").id("echo"));
    remote.shutdown();
    let summary = peer.join().unwrap();
    assert_eq!((summary.observed, summary.acted), (1, 1));
}

#[test]
fn late_reply_is_unavailable() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let peer = thread::spawn(move || {
        let mut s = raw_peer(addr, 1);
        assert!(matches!(read_record(&mut s, DEFAULT_MAX_PAYLOAD).unwrap(), Record::Control(Control::Welcome { .. })));
        assert_eq!(read_record(&mut s, DEFAULT_MAX_PAYLOAD).unwrap(), Record::Control(Control::ActRequest));
        thread::sleep(Duration::from_millis(400));
        let _ = write_record(&mut s, &Record::Message(Message::with_text("too late")));
    });
    let mut remote = listener.accept_agent(WAIT).unwrap().with_timeout(Duration::from_millis(100));
    let err = remote.act().unwrap_err();
    assert!(matches!(err, AgentError::Unavailable { .. }), "{err:?}");
    assert_eq!(remote.state(), SessionState::Closed);
    assert!(remote.act().is_err());
    peer.join().unwrap();
}

#[test]
fn dropped_connection_is_disconnect() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let peer = thread::spawn(move || {
        let mut s = raw_peer(addr, 1);
        read_record(&mut s, DEFAULT_MAX_PAYLOAD).unwrap();
    });
    let mut remote = listener.accept_agent(WAIT).unwrap();
    peer.join().unwrap();
    assert!(matches!(remote.act(), Err(AgentError::Disconnected(_))));
    assert_eq!(remote.state(), SessionState::Closed);
}

#[test]
fn version_mismatch_aborts() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let peer = thread::spawn(move || {
        let mut s = raw_peer(addr, 2);
        read_record(&mut s, DEFAULT_MAX_PAYLOAD).unwrap()
    });
    let err = listener.accept(WAIT).unwrap_err();
    assert!(matches!(err, BridgeError::VersionMismatch { ours: 1, theirs: 2 }));
    assert!(matches!(peer.join().unwrap(), Record::Control(Control::Error { .. })));
}

#[test]
fn accept_times_out_without_peers() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    assert!(matches!(listener.accept(Duration::from_millis(50)), Err(BridgeError::Timeout(_))));
}

fn babi_world(learner: Box<dyn Agent>) -> (Vec<Message>, MetricsReport) {
    let reg = Registry::builtin();
    let spec = TaskSpec::parse("babi", &reg).unwrap();
    let teacher = load_teacher(&spec, &reg, &LoadOptions { mode: DataMode::TRAIN_ORDERED, ..Default::default() }).unwrap();
    let transcript = SharedTranscript::new();
    let mut world = DialogPartnerWorld::new(teacher, learner).with_sink(Box::new(transcript.clone()));
    while !world.epoch_done() {
        world.parley().unwrap();
    }
    let report = world.report();
    world.shutdown();
    (transcript.messages(), report)
}

#[test]
fn remote_repeat_label_is_transparent() {
    let (local, local_report) = babi_world(Box::new(RepeatLabelAgent::new()));

    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let peer = thread::spawn(move || serve_peer(addr, &mut RepeatLabelAgent::new()).unwrap());
    let remote = listener.accept_agent(WAIT).unwrap();
    let (over_wire, remote_report) = babi_world(Box::new(remote));
    peer.join().unwrap();

    assert!(!local.is_empty());
    assert_eq!(local, over_wire);
    assert_eq!(local_report, remote_report);
    assert_eq!(local_report.correct, local_report.examples);
}

#[test]
fn stalled_peer_does_not_block_other_sessions() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let staller = thread::spawn(move || {
        let mut s = raw_peer(addr, 1);
        // read forever, never answer
        while read_record(&mut s, DEFAULT_MAX_PAYLOAD).is_ok() {}
    });
    let stalled = listener.accept_agent(WAIT).unwrap().with_timeout(Duration::from_secs(3));
    let healthy_peer = thread::spawn(move || serve_peer(addr, &mut RepeatLabelAgent::new()).unwrap());
    let healthy = listener.accept_agent(WAIT).unwrap();

    let stalled_world = thread::spawn(move || babi_world_result(Box::new(stalled)));
    let started = Instant::now();
    let (transcript, report) = babi_world(Box::new(healthy));
    let healthy_elapsed = started.elapsed();
    assert!(healthy_elapsed < Duration::from_secs(2), "healthy world took {healthy_elapsed:?}");
    assert_eq!(report.correct, report.examples);
    assert!(!transcript.is_empty());

    let err = stalled_world.join().unwrap().unwrap_err();
    assert!(matches!(err.agent_error(), Some(AgentError::Unavailable { .. })), "{err:?}");
    healthy_peer.join().unwrap();
    staller.join().unwrap();
}

fn babi_world_result(learner: Box<dyn Agent>) -> Result<(), WorldError> {
    let reg = Registry::builtin();
    let spec = TaskSpec::parse("babi", &reg).unwrap();
    let teacher = load_teacher(&spec, &reg, &LoadOptions { mode: DataMode::TRAIN_ORDERED, ..Default::default() }).unwrap();
    let mut world = DialogPartnerWorld::new(teacher, learner);
    while !world.epoch_done() {
        if let Err(e) = world.parley() {
            world.shutdown();
            return Err(e);
        }
    }
    Ok(())
}

#[test]
fn observer_sees_every_message_in_order() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let watcher = thread::spawn(move || {
        let mut client = ObserverClient::connect(addr, "watcher").unwrap();
        let mut seen = Vec::new();
        while let Some(m) = client.next_message().unwrap() {
            seen.push(m);
        }
        seen
    });
    let observer = RemoteObserver::new(listener.accept(WAIT).unwrap()).unwrap();

    let reg = Registry::builtin();
    let spec = TaskSpec::parse("babi", &reg).unwrap();
    let teacher = load_teacher(&spec, &reg, &LoadOptions { mode: DataMode::TRAIN_ORDERED, ..Default::default() }).unwrap();
    let transcript = SharedTranscript::new();
    let mut world = DialogPartnerWorld::new(teacher, Box::new(RepeatLabelAgent::new())).with_sink(Box::new(transcript.clone()));
    play_mirrored(&mut world, observer);
    assert_eq!(watcher.join().unwrap(), transcript.messages());
}

/// Plays the world to the end while mirroring the transcript to the
/// observer by hand, since a world holds a single sink.
fn play_mirrored(world: &mut DialogPartnerWorld, mut observer: RemoteObserver) {
    use parlance_core::worlds::TranscriptSink;
    while !world.epoch_done() {
        world.parley().unwrap();
        for m in world.last_acts() {
            observer.record(m);
        }
    }
    observer.flush();
}

#[test]
fn observers_cannot_act() {
    let listener = RemoteListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let client = thread::spawn(move || ObserverClient::connect(addr, "watcher").unwrap());
    let conn = listener.accept(WAIT).unwrap();
    assert!(matches!(parlance_bridge::RemoteAgent::new(conn), Err(BridgeError::WrongRole { .. })));
    drop(client.join().unwrap());
}
