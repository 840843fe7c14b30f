use std::collections::BTreeMap;

use parlance_core::messages::{Image, MessageError, Violation, CONTROL_KEY, SPAN_KEYS};
use parlance_core::Message;
use proptest::collection::{btree_map, btree_set, vec};
use proptest::option;
use proptest::prelude::*;
use serde_json::{json, Value};

fn extra_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<i64>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        "\\PC{0,12}".prop_map(Value::from),
        vec(any::<u32>(), 0..4).prop_map(|v| json!(v)),
    ]
}

fn message() -> impl Strategy<Value = Message> {
    let finite = -1.0e6f64..1.0e6;
    (
        (option::of("\\PC{0,40}"), option::of("[a-z]{1,8}"), option::of(finite.clone()), any::<bool>()),
        (
            option::of(vec("\\PC{0,10}", 0..4)),
            option::of(vec("\\PC{0,10}", 0..4)),
            option::of(btree_set("[a-z ]{0,10}", 0..5)),
        ),
        (
            option::of(btree_map("[a-z]{1,6}", finite, 0..3)),
            option::of((Just("image/png".to_string()), vec(any::<u8>(), 0..32))),
            btree_map("x_[a-z]{1,6}", extra_value(), 0..3),
        ),
    )
        .prop_map(|((text, id, reward, done), (labels, lc, tc), (metrics, image, extra))| Message {
            text,
            id,
            reward,
            episode_done: done,
            labels,
            label_candidates: lc,
            text_candidates: tc.map(|s| s.into_iter().collect()),
            metrics,
            image: image.map(|(media_type, data)| Image { media_type, data }),
            extra,
        })
        .prop_filter("valid messages only", |m| m.validate().is_ok())
}

fn keys_sorted(v: &Value) -> bool {
    match v {
        Value::Object(m) => {
            let keys: Vec<&String> = m.keys().collect();
            keys.windows(2).all(|w| w[0] < w[1]) && m.values().all(keys_sorted)
        }
        Value::Array(a) => a.iter().all(keys_sorted),
        _ => true,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn canonical_json_round_trips(m in message()) {
        let bytes = m.to_canonical_json().unwrap();
        let back = Message::from_canonical_json(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_canonical_json().unwrap(), bytes);
    }

    #[test]
    fn canonical_keys_are_sorted(m in message()) {
        let v: Value = serde_json::from_slice(&m.to_canonical_json().unwrap()).unwrap();
        prop_assert!(keys_sorted(&v));
    }

    #[test]
    fn span_keys_are_rejected(m in message(), idx in 0..SPAN_KEYS.len(), n in 0u32..500) {
        let key = SPAN_KEYS[idx];
        let mut v = m.to_json_value().unwrap();
        v.as_object_mut().unwrap().insert(key.to_string(), json!(n));
        let is_span = matches!(Message::from_json_value(v), Err(MessageError::SpanField(k)) if k == key);
        prop_assert!(is_span);
        let mut m = m;
        m.extra.insert(key.to_string(), json!(n));
        let violations = m.validate().unwrap_err();
        prop_assert!(violations.contains(&Violation::SpanField(key.to_string())));
        prop_assert!(m.to_canonical_json().is_err());
    }
}

#[test]
fn done_alias_and_control_key() {
    let m = Message::from_json_value(json!({"text": "hi", "done": true})).unwrap();
    assert!(m.episode_done);
    assert!(m.extra.is_empty());
    let err = Message::from_json_value(json!({CONTROL_KEY: "shutdown"})).unwrap_err();
    assert!(matches!(err, MessageError::ControlRecord));
}

#[test]
fn invalid_messages_list_every_violation() {
    let mut m = Message::new();
    assert_eq!(m.validate().unwrap_err(), vec![Violation::EmptyMessage]);
    m = Message::with_text("x").text_candidates(["a", "a"]).reward(f64::NAN);
    let v = m.validate().unwrap_err();
    assert!(v.contains(&Violation::DuplicateCandidate("a".into())));
    assert!(v.contains(&Violation::NonFinite("reward".into())));
    let mut extra = BTreeMap::new();
    extra.insert("labels".to_string(), json!(1));
    let m = Message { text: Some("x".into()), extra, ..Default::default() };
    assert_eq!(m.validate().unwrap_err(), vec![Violation::ReservedKey("labels".into())]);
}

#[test]
fn type_mismatches_are_reported() {
    for bad in [json!({"text": 3}), json!({"labels": "a"}), json!({"episode_done": "yes"}), json!({"image": {"data": "!"}})] {
        assert!(matches!(Message::from_json_value(bad), Err(MessageError::TypeMismatch { .. })));
    }
    assert!(matches!(Message::from_json_value(json!([1])), Err(MessageError::NotAnObject)));
}
