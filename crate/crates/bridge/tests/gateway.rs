use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::Duration;

use parlance_bridge::{Gateway, SessionMode};
use parlance_core::agents::{Agent, AgentError};
use parlance_core::tasks::{load_teacher, LoadOptions, Registry, TaskSpec};
use parlance_core::worlds::{DialogPartnerWorld, World};
use parlance_core::{DataMode, Message};
use serde_json::{json, Value};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message as WsMessage, WebSocket};

const WAIT: Duration = Duration::from_secs(10);

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn connect(addr: SocketAddr) -> Client {
    tungstenite::connect(format!("ws://{addr}/agent")).unwrap().0
}

fn next_event(ws: &mut Client) -> Value {
    loop {
        match ws.read().unwrap() {
            WsMessage::Text(t) => return serde_json::from_str(t.as_str()).unwrap(),
            WsMessage::Close(_) => return json!({"type": "closed"}),
            _ => {}
        }
    }
}

fn send_act(ws: &mut Client, text: &str) {
    ws.send(WsMessage::text(json!({"type": "act", "message": {"text": text}}).to_string())).unwrap();
}

#[test]
fn typed_reply_reaches_world_with_session_id() {
    let gw = Gateway::bind("127.0.0.1:0").unwrap();
    let addr = gw.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut ws = connect(addr);
        let observed = next_event(&mut ws);
        let request = next_event(&mut ws);
        send_act(&mut ws, "office");
        let end = next_event(&mut ws);
        (observed, request, end)
    });
    let mut human = gw.accept(WAIT).unwrap().with_mode(SessionMode::Evaluator);
    let session = human.session().to_string();
    let obs = Message::with_text("Where is Mary?").id("teacher").label_candidates(["hallway", "kitchen", "bathroom"]);
    human.observe(&obs).unwrap();
    let reply = human.act().unwrap();
    assert_eq!(reply, Message::with_text("office").id(session.clone()));
    human.shutdown();

    let (observed, request, end) = client.join().unwrap();
    assert_eq!(observed["type"], "observe");
    assert_eq!(observed["session"], session.as_str());
    assert_eq!(observed["message"]["label_candidates"], json!(["hallway", "kitchen", "bathroom"]));
    assert_eq!(observed["message"]["text"], "Where is Mary?");
    assert_eq!(request, json!({"type": "act_request", "session": session}));
    assert_eq!(end, json!({"type": "end", "session": session, "mode": "evaluator"}));
}

#[test]
fn malformed_json_is_reported_and_discarded() {
    let gw = Gateway::bind("127.0.0.1:0").unwrap();
    let addr = gw.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut ws = connect(addr);
        assert_eq!(next_event(&mut ws)["type"], "act_request");
        ws.send(WsMessage::text("{not json")).unwrap();
        let first = next_event(&mut ws);
        ws.send(WsMessage::text(json!({"type": "act", "message": {"text": "x", "text_candidates": ["a", "a"]}}).to_string()))
            .unwrap();
        let second = next_event(&mut ws);
        send_act(&mut ws, "fine");
        (first, second)
    });
    let mut human = gw.accept(WAIT).unwrap();
    let reply = human.act().unwrap();
    assert_eq!(reply.text.as_deref(), Some("fine"));
    assert_eq!(human.malformed_events(), 2);
    let (first, second) = client.join().unwrap();
    assert_eq!(first["type"], "error");
    assert!(first["error"].as_str().unwrap().contains("malformed JSON"));
    assert_eq!(second["type"], "error");
}

#[test]
fn acts_without_request_are_dropped() {
    let gw = Gateway::bind("127.0.0.1:0").unwrap();
    let addr = gw.local_addr().unwrap();
    let (tx, rx) = std::sync::mpsc::channel();
    let client = thread::spawn(move || {
        let mut ws = connect(addr);
        send_act(&mut ws, "eager");
        tx.send(()).unwrap();
        let mut kinds = Vec::new();
        loop {
            let e = next_event(&mut ws);
            let kind = e["type"].as_str().unwrap().to_string();
            if kind == "act_request" {
                send_act(&mut ws, "asked");
            }
            if kind == "end" || kind == "closed" {
                break;
            }
            kinds.push(kind);
        }
        kinds
    });
    let mut human = gw.accept(WAIT).unwrap();
    rx.recv().unwrap();
    thread::sleep(Duration::from_millis(100));
    human.observe(&Message::with_text("hello")).unwrap();
    assert_eq!(human.act().unwrap().text.as_deref(), Some("asked"));
    assert_eq!(human.unsolicited_acts(), 1);
    human.shutdown();
    assert_eq!(client.join().unwrap(), ["error", "observe", "act_request"]);
}

#[test]
fn silence_is_unavailable() {
    let gw = Gateway::bind("127.0.0.1:0").unwrap();
    let addr = gw.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut ws = connect(addr);
        next_event(&mut ws);
        thread::sleep(Duration::from_millis(300));
    });
    let mut human = gw.accept(WAIT).unwrap().with_timeout(Duration::from_millis(100));
    assert!(matches!(human.act(), Err(AgentError::Unavailable { .. })));
    client.join().unwrap();
}

#[test]
fn other_paths_are_refused() {
    let gw = Gateway::bind("127.0.0.1:0").unwrap();
    let addr = gw.local_addr().unwrap();
    let client = thread::spawn(move || {
        let err = tungstenite::connect(format!("ws://{addr}/admin")).unwrap_err();
        let status = match err {
            tungstenite::Error::Http(resp) => resp.status().as_u16(),
            other => panic!("unexpected {other:?}"),
        };
        let mut ws = connect(addr);
        assert_eq!(next_event(&mut ws)["type"], "act_request");
        send_act(&mut ws, "ok");
        status
    });
    let mut human = gw.accept(WAIT).unwrap();
    assert_eq!(human.act().unwrap().text.as_deref(), Some("ok"));
    assert_eq!(client.join().unwrap(), 404);
}

#[test]
fn disconnect_mid_episode_abandons_it() {
    let gw = Gateway::bind("127.0.0.1:0").unwrap();
    let addr = gw.local_addr().unwrap();
    let client = thread::spawn(move || {
        let mut ws = connect(addr);
        let mut requests = 0;
        loop {
            let e = next_event(&mut ws);
            if e["type"] == "act_request" {
                requests += 1;
                if requests == 2 {
                    break;
                }
                send_act(&mut ws, "bathroom");
            }
        }
        // leave without answering
        drop(ws);
    });
    let human = gw.accept(WAIT).unwrap();

    let reg = Registry::builtin();
    let spec = TaskSpec::parse("babi:Task1k:1", &reg).unwrap();
    let teacher = load_teacher(&spec, &reg, &LoadOptions { mode: DataMode::TRAIN_ORDERED, ..Default::default() }).unwrap();
    let mut world = DialogPartnerWorld::new(teacher, Box::new(human));
    let before = world.report();
    world.parley().unwrap();
    let err = world.parley().unwrap_err();
    assert!(matches!(err.agent_error(), Some(AgentError::Disconnected(_))), "{err:?}");
    let after = world.report();
    assert_eq!(after.examples, before.examples);
    assert_eq!(after.abandoned_episodes, before.abandoned_episodes + 1);
    client.join().unwrap();
}
