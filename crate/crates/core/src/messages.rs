//! The observation/action record shared by every agent, and its canonical
//! JSON encoding.
//!
//! Canonical form: a compact JSON object with lexicographically sorted keys.
//! Absent optional fields are omitted, `episode_done` is omitted when false,
//! and unrecognized keys (`extra`) are inlined at the top level. This form is
//! also the payload of every frame on the wire.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{Map, Value};
use thiserror::Error;

/// Key reserved for protocol control records. Never valid inside a message.
pub const CONTROL_KEY: &str = "__control__";

/// Input-only alias for `episode_done`.
const DONE_ALIAS: &str = "done";

const KNOWN_KEYS: &[&str] = &[
    "text",
    "id",
    "reward",
    "episode_done",
    "labels",
    "label_candidates",
    "text_candidates",
    "metrics",
    "image",
];

/// Keys that would carry answer-span supervision. The message API is
/// dialog-only, so these are rejected wherever they appear.
pub const SPAN_KEYS: &[&str] = &[
    "answer_start",
    "answer_end",
    "answer_starts",
    "answer_ends",
    "answer_span",
    "answer_spans",
    "span_start",
    "span_end",
    "start_index",
    "end_index",
    "start_indices",
    "end_indices",
    "char_start",
    "char_end",
];

/// Binary media attached to a message, tagged with its media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub media_type: String,
    pub data: Vec<u8>,
}

/// One observation/action record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Message {
    pub text: Option<String>,
    pub id: Option<String>,
    pub reward: Option<f64>,
    pub episode_done: bool,
    pub labels: Option<Vec<String>>,
    pub label_candidates: Option<Vec<String>>,
    pub text_candidates: Option<Vec<String>>,
    pub metrics: Option<BTreeMap<String, f64>>,
    pub image: Option<Image>,
    pub extra: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyMessage,
    DuplicateCandidate(String),
    SpanField(String),
    ReservedKey(String),
    NonFinite(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyMessage => write!(f, "empty message"),
            Violation::DuplicateCandidate(c) => write!(f, "duplicate candidate {c:?}"),
            Violation::SpanField(k) => write!(f, "span index field {k:?} is not part of the API"),
            Violation::ReservedKey(k) => write!(f, "reserved key {k:?} in extra"),
            Violation::NonFinite(k) => write!(f, "non-finite number in {k:?}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MessageError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a JSON object")]
    NotAnObject,
    #[error("field {field:?} must be {expected}")]
    TypeMismatch { field: String, expected: &'static str },
    #[error("span index field {0:?} is not accepted")]
    SpanField(String),
    #[error("control record where a message was expected")]
    ControlRecord,
    #[error("invalid message: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl Message {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_text(text: impl Into<String>) -> Self {
        Message { text: Some(text.into()), ..Default::default() }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = Some(labels.into_iter().map(Into::into).collect());
        self
    }

    pub fn label_candidates<I, S>(mut self, cands: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.label_candidates = Some(cands.into_iter().map(Into::into).collect());
        self
    }

    pub fn text_candidates<I, S>(mut self, cands: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.text_candidates = Some(cands.into_iter().map(Into::into).collect());
        self
    }

    pub fn reward(mut self, reward: f64) -> Self {
        self.reward = Some(reward);
        self
    }

    pub fn done(mut self, done: bool) -> Self {
        self.episode_done = done;
        self
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_none()
            && self.id.is_none()
            && self.reward.is_none()
            && self.labels.is_none()
            && self.label_candidates.is_none()
            && self.text_candidates.is_none()
            && self.metrics.is_none()
            && self.image.is_none()
            && self.extra.is_empty()
    }

    /// Checks every invariant and lists all violations.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        if self.is_empty() {
            out.push(Violation::EmptyMessage);
        }
        if let Some(cands) = &self.text_candidates {
            let mut seen = HashSet::new();
            for c in cands {
                if !seen.insert(c.as_str()) {
                    out.push(Violation::DuplicateCandidate(c.clone()));
                }
            }
        }
        if let Some(r) = self.reward {
            if !r.is_finite() {
                out.push(Violation::NonFinite("reward".into()));
            }
        }
        if let Some(m) = &self.metrics {
            for (k, v) in m {
                if !v.is_finite() {
                    out.push(Violation::NonFinite(format!("metrics.{k}")));
                }
            }
        }
        for key in self.extra.keys() {
            if SPAN_KEYS.contains(&key.as_str()) {
                out.push(Violation::SpanField(key.clone()));
            } else if key == CONTROL_KEY || key == DONE_ALIAS || KNOWN_KEYS.contains(&key.as_str()) {
                out.push(Violation::ReservedKey(key.clone()));
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// JSON object in canonical form. Objects built on `serde_json::Map`
    /// keep keys sorted.
    pub fn to_json_value(&self) -> Result<Value, MessageError> {
        self.validate().map_err(MessageError::Invalid)?;
        let mut obj = Map::new();
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        if let Some(t) = &self.text {
            obj.insert("text".into(), Value::String(t.clone()));
        }
        if let Some(id) = &self.id {
            obj.insert("id".into(), Value::String(id.clone()));
        }
        if let Some(r) = self.reward {
            obj.insert("reward".into(), float(r));
        }
        if self.episode_done {
            obj.insert("episode_done".into(), Value::Bool(true));
        }
        for (key, list) in [
            ("labels", &self.labels),
            ("label_candidates", &self.label_candidates),
            ("text_candidates", &self.text_candidates),
        ] {
            if let Some(list) = list {
                obj.insert(key.into(), Value::Array(list.iter().cloned().map(Value::String).collect()));
            }
        }
        if let Some(m) = &self.metrics {
            let inner = m.iter().map(|(k, v)| (k.clone(), float(*v))).collect();
            obj.insert("metrics".into(), Value::Object(inner));
        }
        if let Some(img) = &self.image {
            let mut inner = Map::new();
            inner.insert("data".into(), Value::String(BASE64.encode(&img.data)));
            inner.insert("media_type".into(), Value::String(img.media_type.clone()));
            obj.insert("image".into(), Value::Object(inner));
        }
        Ok(Value::Object(obj))
    }

    pub fn to_canonical_json(&self) -> Result<Vec<u8>, MessageError> {
        let value = self.to_json_value()?;
        Ok(serde_json::to_vec(&value)?)
    }

    pub fn from_canonical_json(bytes: &[u8]) -> Result<Message, MessageError> {
        let value: Value = serde_json::from_slice(bytes)?;
        Message::from_json_value(value)
    }

    /// Builds a message from a decoded JSON object. Known keys are type
    /// checked, `done` is accepted as an alias of `episode_done`, and every
    /// other key is kept in `extra`.
    pub fn from_json_value(value: Value) -> Result<Message, MessageError> {
        let Value::Object(obj) = value else {
            return Err(MessageError::NotAnObject);
        };
        if obj.contains_key(CONTROL_KEY) {
            return Err(MessageError::ControlRecord);
        }
        let mut m = Message::default();
        let mut done_alias = None;
        for (key, v) in obj {
            match key.as_str() {
                "text" => m.text = Some(string_field(&key, v)?),
                "id" => m.id = Some(string_field(&key, v)?),
                "reward" => m.reward = Some(number_field(&key, &v)?),
                "episode_done" => m.episode_done = bool_field(&key, &v)?,
                DONE_ALIAS => done_alias = Some(bool_field(&key, &v)?),
                "labels" => m.labels = Some(string_list(&key, v)?),
                "label_candidates" => m.label_candidates = Some(string_list(&key, v)?),
                "text_candidates" => m.text_candidates = Some(string_list(&key, v)?),
                "metrics" => {
                    let Value::Object(inner) = v else {
                        return Err(mismatch(&key, "an object of numbers"));
                    };
                    let mut metrics = BTreeMap::new();
                    for (mk, mv) in inner {
                        let n = mv.as_f64().ok_or_else(|| mismatch(&key, "an object of numbers"))?;
                        metrics.insert(mk, n);
                    }
                    m.metrics = Some(metrics);
                }
                "image" => m.image = Some(image_field(&key, v)?),
                k if SPAN_KEYS.contains(&k) => return Err(MessageError::SpanField(key)),
                _ => {
                    m.extra.insert(key, v);
                }
            }
        }
        if let Some(done) = done_alias {
            if !m.episode_done {
                m.episode_done = done;
            }
        }
        Ok(m)
    }
}

fn float(x: f64) -> Value {
    serde_json::Number::from_f64(x).map(Value::Number).unwrap_or(Value::Null)
}

fn mismatch(field: &str, expected: &'static str) -> MessageError {
    MessageError::TypeMismatch { field: field.to_string(), expected }
}

fn string_field(key: &str, v: Value) -> Result<String, MessageError> {
    match v {
        Value::String(s) => Ok(s),
        _ => Err(mismatch(key, "a string")),
    }
}

fn number_field(key: &str, v: &Value) -> Result<f64, MessageError> {
    v.as_f64().ok_or_else(|| mismatch(key, "a number"))
}

fn bool_field(key: &str, v: &Value) -> Result<bool, MessageError> {
    v.as_bool().ok_or_else(|| mismatch(key, "a boolean"))
}

fn string_list(key: &str, v: Value) -> Result<Vec<String>, MessageError> {
    let Value::Array(items) = v else {
        return Err(mismatch(key, "a list of strings"));
    };
    items
        .into_iter()
        .map(|item| match item {
            Value::String(s) => Ok(s),
            _ => Err(mismatch(key, "a list of strings")),
        })
        .collect()
}

fn image_field(key: &str, v: Value) -> Result<Image, MessageError> {
    const EXPECTED: &str = "an object with string media_type and base64 data";
    let Value::Object(obj) = v else {
        return Err(mismatch(key, EXPECTED));
    };
    let media_type = obj.get("media_type").and_then(Value::as_str).ok_or_else(|| mismatch(key, EXPECTED))?;
    let data = obj.get("data").and_then(Value::as_str).ok_or_else(|| mismatch(key, EXPECTED))?;
    let data = BASE64.decode(data).map_err(|_| mismatch(key, EXPECTED))?;
    Ok(Image { media_type: media_type.to_string(), data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canon(m: &Message) -> String {
        String::from_utf8(m.to_canonical_json().unwrap()).unwrap()
    }

    #[test]
    fn typical_teacher_turn_is_valid() {
        let m = Message::with_text("Where is the milk?")
            .labels(["kitchen"])
            .label_candidates(["hallway", "kitchen", "bathroom"]);
        assert_eq!(m.validate(), Ok(()));
    }

    #[test]
    fn empty_message_is_invalid() {
        assert_eq!(Message::default().validate(), Err(vec![Violation::EmptyMessage]));
        assert_eq!(Violation::EmptyMessage.to_string(), "empty message");
        // episode_done alone does not make a message non-empty
        assert!(Message::new().done(true).validate().is_err());
    }

    #[test]
    fn duplicate_text_candidates_rejected() {
        let m = Message::new().text_candidates(["a", "a"]);
        let v = m.validate().unwrap_err();
        assert_eq!(v, vec![Violation::DuplicateCandidate("a".into())]);
        assert!(v[0].to_string().starts_with("duplicate candidate"));
    }

    #[test]
    fn all_violations_are_listed() {
        let mut m = Message::new().text_candidates(["a", "a", "b", "b"]).reward(f64::NAN);
        m.extra.insert("answer_start".into(), Value::from(3));
        m.extra.insert(CONTROL_KEY.into(), Value::from("x"));
        assert_eq!(m.validate().unwrap_err().len(), 5);
    }

    #[test]
    fn canonical_bytes() {
        assert_eq!(canon(&Message::with_text("hallway")), r#"{"text":"hallway"}"#);
        let m = Message::with_text("hi").id("t").done(false);
        assert_eq!(canon(&m), r#"{"id":"t","text":"hi"}"#);
        let m = Message::with_text("x").done(true).labels(["a"]).reward(1.0);
        assert_eq!(canon(&m), r#"{"episode_done":true,"labels":["a"],"reward":1.0,"text":"x"}"#);
    }

    #[test]
    fn extra_keys_inline_sorted() {
        let mut m = Message::with_text("x");
        m.extra.insert("zeta".into(), Value::from(1));
        m.extra.insert("alpha".into(), serde_json::json!({"b": 1, "a": 2}));
        assert_eq!(canon(&m), r#"{"alpha":{"a":2,"b":1},"text":"x","zeta":1}"#);
    }

    #[test]
    fn invalid_message_does_not_serialize() {
        assert!(matches!(Message::default().to_canonical_json(), Err(MessageError::Invalid(_))));
    }

    #[test]
    fn parse_known_fields() {
        let m = Message::from_canonical_json(br#"{"text":"office","id":"RepeatLabelAgent"}"#).unwrap();
        assert_eq!(m.text.as_deref(), Some("office"));
        assert_eq!(m.id.as_deref(), Some("RepeatLabelAgent"));
        assert!(!m.episode_done);
    }

    #[test]
    fn unknown_keys_preserved() {
        let m = Message::from_canonical_json(br#"{"text":"x","custom_flag":7}"#).unwrap();
        assert_eq!(m.extra.get("custom_flag"), Some(&Value::from(7)));
        assert_eq!(canon(&m), r#"{"custom_flag":7,"text":"x"}"#);
    }

    #[test]
    fn labels_must_be_list() {
        let err = Message::from_canonical_json(br#"{"labels":"kitchen"}"#).unwrap_err();
        assert!(matches!(err, MessageError::TypeMismatch { ref field, .. } if field == "labels"));
        let err = Message::from_canonical_json(br#"{"labels":["a",1]}"#).unwrap_err();
        assert!(matches!(err, MessageError::TypeMismatch { .. }));
        let err = Message::from_canonical_json(br#"{"episode_done":"yes"}"#).unwrap_err();
        assert!(matches!(err, MessageError::TypeMismatch { .. }));
    }

    #[test]
    fn malformed_json_and_non_objects() {
        assert!(matches!(Message::from_canonical_json(b"{\"text\":"), Err(MessageError::Json(_))));
        assert!(matches!(Message::from_canonical_json(b"[1,2]"), Err(MessageError::NotAnObject)));
    }

    #[test]
    fn done_alias_accepted_never_emitted() {
        let m = Message::from_canonical_json(br#"{"text":"x","done":true}"#).unwrap();
        assert!(m.episode_done);
        assert!(m.extra.is_empty());
        assert_eq!(canon(&m), r#"{"episode_done":true,"text":"x"}"#);
    }

    #[test]
    fn span_fields_rejected_on_input() {
        let err = Message::from_canonical_json(br#"{"text":"x","answer_start":17}"#).unwrap_err();
        assert!(matches!(err, MessageError::SpanField(ref k) if k == "answer_start"));
    }

    #[test]
    fn control_records_are_not_messages() {
        let err = Message::from_canonical_json(br#"{"__control__":"act_request"}"#).unwrap_err();
        assert!(matches!(err, MessageError::ControlRecord));
    }

    #[test]
    fn image_round_trip() {
        let mut m = Message::with_text("what colour?");
        m.image = Some(Image { media_type: "image/png".into(), data: vec![0x89, b'P', b'N', b'G', 0, 1] });
        let bytes = m.to_canonical_json().unwrap();
        assert_eq!(Message::from_canonical_json(&bytes).unwrap(), m);
        assert!(Message::from_canonical_json(br#"{"image":{"media_type":"image/png","data":"***"}}"#).is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let mut m = Message::with_text("good job");
        m.metrics = Some(BTreeMap::from([("accuracy".to_string(), 0.75), ("f1".to_string(), 0.8)]));
        let bytes = m.to_canonical_json().unwrap();
        assert_eq!(std::str::from_utf8(&bytes).unwrap(), r#"{"metrics":{"accuracy":0.75,"f1":0.8},"text":"good job"}"#);
        assert_eq!(Message::from_canonical_json(&bytes).unwrap(), m);
    }
}
