//! Length-prefixed records: a 4-byte big-endian byte count followed by a
//! canonical JSON payload holding either a message or a control record.

use std::io::{self, Read, Write};

use parlance_core::messages::{MessageError, CONTROL_KEY};
use parlance_core::Message;
use serde_json::Value;
use thiserror::Error;

use crate::control::Control;

/// Largest payload a reader accepts unless told otherwise.
pub const DEFAULT_MAX_PAYLOAD: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("connection closed")]
    Closed,
    #[error("zero-length frame")]
    Empty,
    #[error("payload of {0} bytes does not fit the frame limit")]
    TooLarge(usize),
    #[error("bad message: {0}")]
    Message(#[from] MessageError),
    #[error("bad control record: {0}")]
    Control(serde_json::Error),
}

impl FrameError {
    /// True for read timeouts.
    pub fn is_timeout(&self) -> bool {
        matches!(self, FrameError::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
    }
}

// messages are the common case, so boxing them would buy nothing
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Message(Message),
    Control(Control),
}

/// The length prefix for a payload. Payloads above `u32::MAX` bytes cannot
/// be framed.
pub fn frame_len(payload_len: usize) -> Result<u32, FrameError> {
    match u32::try_from(payload_len) {
        Ok(0) => Err(FrameError::Empty),
        Ok(n) => Ok(n),
        Err(_) => Err(FrameError::TooLarge(payload_len)),
    }
}

pub fn encode_payload(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    let len = frame_len(payload.len())?;
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn record_payload(record: &Record) -> Result<Vec<u8>, FrameError> {
    match record {
        Record::Message(m) => Ok(m.to_canonical_json()?),
        Record::Control(c) => Ok(c.to_canonical_json()),
    }
}

/// A whole frame for one message.
pub fn encode_message(message: &Message) -> Result<Vec<u8>, FrameError> {
    encode_payload(&message.to_canonical_json()?)
}

pub fn decode_payload(payload: &[u8]) -> Result<Record, FrameError> {
    if payload.is_empty() {
        return Err(FrameError::Empty);
    }
    let value: Value = serde_json::from_slice(payload).map_err(MessageError::Json)?;
    if value.get(CONTROL_KEY).is_some() {
        return serde_json::from_value(value).map(Record::Control).map_err(FrameError::Control);
    }
    let m = Message::from_json_value(value)?;
    m.validate().map_err(MessageError::Invalid)?;
    Ok(Record::Message(m))
}

/// Decodes one complete frame held in `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Record, FrameError> {
    let mut r = bytes;
    let payload = read_payload(&mut r, usize::MAX)?;
    if !r.is_empty() {
        return Err(FrameError::Io(io::Error::new(io::ErrorKind::InvalidData, "trailing bytes after frame")));
    }
    decode_payload(&payload)
}

pub fn write_record<W: Write>(w: &mut W, record: &Record) -> Result<(), FrameError> {
    let frame = encode_payload(&record_payload(record)?)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

/// Reads one payload. A clean end of stream before the prefix is
/// [`FrameError::Closed`].
pub fn read_payload<R: Read>(r: &mut R, max_payload: usize) -> Result<Vec<u8>, FrameError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Err(FrameError::Closed),
            Ok(0) => return Err(FrameError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len == 0 {
        return Err(FrameError::Empty);
    }
    if len > max_payload {
        return Err(FrameError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(payload)
}

pub fn read_record<R: Read>(r: &mut R, max_payload: usize) -> Result<Record, FrameError> {
    decode_payload(&read_payload(r, max_payload)?)
}
