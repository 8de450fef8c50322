//! Binary wire framing.
//!
//! ```text
//! u32 BE  length of everything below
//! u16 BE  opcode
//! u64 BE  exercise id
//! u64 BE  session id
//! u16 BE  sender
//! u16 BE  secret-id length, then the UTF-8 secret id
//! 16-byte little-endian field elements until the end of the frame
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::field::ELEMENT_BYTES;
use crate::net::exercise::ExerciseId;
use crate::sharing::PartyId;

/// Refuse frames larger than this when reading from a socket.
pub const MAX_FRAME_BYTES: usize = 16 << 20;

const HEADER_BYTES: usize = 2 + 8 + 8 + 2 + 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u16)]
pub enum Opcode {
    Exercise = 1,
    Finished = 2,
    Nack = 3,
    JrszDeal = 10,
    ShareDist = 11,
    RevealTo = 12,
    MulReshare = 13,
    Shutdown = 20,
    Report = 21,
}

impl Opcode {
    pub const ALL: [Opcode; 9] = [
        Opcode::Exercise,
        Opcode::Finished,
        Opcode::Nack,
        Opcode::JrszDeal,
        Opcode::ShareDist,
        Opcode::RevealTo,
        Opcode::MulReshare,
        Opcode::Shutdown,
        Opcode::Report,
    ];

    pub fn from_u16(code: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|op| *op as u16 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Exercise => "EXERCISE",
            Opcode::Finished => "FINISHED",
            Opcode::Nack => "NACK",
            Opcode::JrszDeal => "JRSZ_DEAL",
            Opcode::ShareDist => "SHARE_DIST",
            Opcode::RevealTo => "REVEAL_TO",
            Opcode::MulReshare => "MUL_RESHARE",
            Opcode::Shutdown => "SHUTDOWN",
            Opcode::Report => "REPORT",
        }
    }

    /// Scheduling traffic between the manager and the members.
    pub fn is_control(self) -> bool {
        matches!(self, Opcode::Exercise | Opcode::Finished | Opcode::Nack)
    }

    /// Session teardown frames are not part of the measured traffic.
    pub fn is_counted(self) -> bool {
        !matches!(self, Opcode::Shutdown | Opcode::Report)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A participant of a session.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Manager,
    Member(PartyId),
    Client,
}

impl Endpoint {
    pub const CLIENT_WIRE_ID: u16 = u16::MAX;

    pub fn wire_id(self) -> u16 {
        match self {
            Endpoint::Manager => 0,
            Endpoint::Member(p) => p.get(),
            Endpoint::Client => Self::CLIENT_WIRE_ID,
        }
    }

    pub fn from_wire_id(id: u16) -> Self {
        match id {
            0 => Endpoint::Manager,
            Self::CLIENT_WIRE_ID => Endpoint::Client,
            p => Endpoint::Member(PartyId::new(p).expect("non-zero")),
        }
    }

    /// Dense index for `n` members: manager 0, members `1..=n`, client `n + 1`.
    pub fn slot(self, members: usize) -> usize {
        match self {
            Endpoint::Manager => 0,
            Endpoint::Member(p) => p.get() as usize,
            Endpoint::Client => members + 1,
        }
    }

    pub fn from_slot(slot: usize, members: usize) -> Self {
        if slot == 0 {
            Endpoint::Manager
        } else if slot <= members {
            Endpoint::Member(PartyId::new(slot as u16).expect("non-zero"))
        } else {
            Endpoint::Client
        }
    }

    pub fn all(members: usize) -> impl Iterator<Item = Endpoint> {
        (0..members + 2).map(move |s| Endpoint::from_slot(s, members))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Manager => f.write_str("manager"),
            Endpoint::Member(p) => write!(f, "member {}", p.get()),
            Endpoint::Client => f.write_str("client"),
        }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame truncated: {0}")]
    Truncated(&'static str),
    #[error("unknown opcode {0}")]
    UnknownOpcode(u16),
    #[error("secret id is not UTF-8")]
    BadSecretId,
    #[error("secret id of {0} bytes does not fit the frame")]
    SecretIdTooLong(usize),
    #[error("payload of {0} bytes is not a whole number of field elements")]
    RaggedPayload(usize),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub exercise: ExerciseId,
    pub session: u64,
    pub sender: Endpoint,
    pub secret_id: String,
    pub payload: Vec<u128>,
}

impl Frame {
    pub fn new(opcode: Opcode, exercise: ExerciseId, session: u64, sender: Endpoint) -> Self {
        Self {
            opcode,
            exercise,
            session,
            sender,
            secret_id: String::new(),
            payload: Vec::new(),
        }
    }

    pub fn with_secret_id(mut self, id: impl Into<String>) -> Self {
        self.secret_id = id.into();
        self
    }

    pub fn with_payload(mut self, payload: Vec<u128>) -> Self {
        self.payload = payload;
        self
    }

    /// Size on the wire, including the length prefix.
    pub fn wire_len(&self) -> usize {
        4 + HEADER_BYTES + self.secret_id.len() + ELEMENT_BYTES * self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let id = self.secret_id.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(FrameError::SecretIdTooLong(id.len()));
        }
        let total = self.wire_len();
        let mut out = Vec::with_capacity(total);
        out.extend_from_slice(&((total - 4) as u32).to_be_bytes());
        out.extend_from_slice(&(self.opcode as u16).to_be_bytes());
        out.extend_from_slice(&self.exercise.to_be_bytes());
        out.extend_from_slice(&self.session.to_be_bytes());
        out.extend_from_slice(&self.sender.wire_id().to_be_bytes());
        out.extend_from_slice(&(id.len() as u16).to_be_bytes());
        out.extend_from_slice(id);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Decodes the frame body (everything after the length prefix).
    pub fn decode_body(body: &[u8]) -> Result<Self, FrameError> {
        if body.len() < HEADER_BYTES {
            return Err(FrameError::Truncated("header"));
        }
        let u16_at = |i: usize| u16::from_be_bytes([body[i], body[i + 1]]);
        let u64_at = |i: usize| u64::from_be_bytes(body[i..i + 8].try_into().expect("8 bytes"));
        let code = u16_at(0);
        let opcode = Opcode::from_u16(code).ok_or(FrameError::UnknownOpcode(code))?;
        let exercise = u64_at(2);
        let session = u64_at(10);
        let sender = Endpoint::from_wire_id(u16_at(18));
        let id_len = u16_at(20) as usize;
        let rest = &body[HEADER_BYTES..];
        if rest.len() < id_len {
            return Err(FrameError::Truncated("secret id"));
        }
        let secret_id = std::str::from_utf8(&rest[..id_len])
            .map_err(|_| FrameError::BadSecretId)?
            .to_string();
        let raw = &rest[id_len..];
        if !raw.len().is_multiple_of(ELEMENT_BYTES) {
            return Err(FrameError::RaggedPayload(raw.len()));
        }
        let payload = raw
            .chunks_exact(ELEMENT_BYTES)
            .map(|c| u128::from_le_bytes(c.try_into().expect("16 bytes")))
            .collect();
        Ok(Self {
            opcode,
            exercise,
            session,
            sender,
            secret_id,
            payload,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < 4 {
            return Err(FrameError::Truncated("length prefix"));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 4 + len {
            return Err(FrameError::Truncated("body"));
        }
        Self::decode_body(&bytes[4..])
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<usize, FrameError> {
        let bytes = self.encode()?;
        w.write_all(&bytes)?;
        Ok(bytes.len())
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>, FrameError> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(FrameError::TooLarge(len));
        }
        let mut body = vec![0u8; len];
        r.read_exact(&mut body)?;
        Self::decode_body(&body).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_fixed() {
        let frame = Frame::new(
            Opcode::MulReshare,
            7,
            0x0102,
            Endpoint::Member(PartyId::new(3).unwrap()),
        )
        .with_secret_id("ab")
        .with_payload(vec![1]);
        let bytes = frame.encode().unwrap();
        assert_eq!(bytes.len(), 4 + 22 + 2 + 16);
        assert_eq!(frame.wire_len(), bytes.len());
        assert_eq!(&bytes[..4], &[0, 0, 0, 40]);
        assert_eq!(&bytes[4..6], &[0, 13]);
        assert_eq!(&bytes[6..14], &7u64.to_be_bytes());
        assert_eq!(&bytes[14..22], &0x0102u64.to_be_bytes());
        assert_eq!(&bytes[22..24], &[0, 3]);
        assert_eq!(&bytes[24..28], &[0, 2, b'a', b'b']);
        assert_eq!(bytes[28], 1);
        assert!(bytes[29..].iter().all(|&b| b == 0));
    }

    #[test]
    fn endpoint_ids() {
        assert_eq!(Endpoint::from_wire_id(0), Endpoint::Manager);
        assert_eq!(Endpoint::from_wire_id(u16::MAX), Endpoint::Client);
        for e in Endpoint::all(4) {
            assert_eq!(Endpoint::from_slot(e.slot(4), 4), e);
            assert_eq!(Endpoint::from_wire_id(e.wire_id()), e);
        }
    }

    #[test]
    fn rejects_garbage() {
        let mut bytes = Frame::new(Opcode::Finished, 1, 1, Endpoint::Manager)
            .encode()
            .unwrap();
        bytes[5] = 99;
        assert!(matches!(
            Frame::decode(&bytes),
            Err(FrameError::UnknownOpcode(99))
        ));
        let mut ragged = Frame::new(Opcode::Finished, 1, 1, Endpoint::Manager)
            .encode()
            .unwrap();
        ragged.push(0);
        ragged[3] += 1;
        assert!(matches!(
            Frame::decode(&ragged),
            Err(FrameError::RaggedPayload(1))
        ));
        assert!(Frame::decode(&[0, 0]).is_err());
    }

    #[test]
    fn stream_round_trip() {
        let frames = vec![
            Frame::new(Opcode::Exercise, 1, 9, Endpoint::Manager).with_secret_id("{\"op\":\"x\"}"),
            Frame::new(Opcode::RevealTo, 2, 9, Endpoint::Client).with_payload(vec![u128::MAX, 0]),
        ];
        let mut buf = Vec::new();
        for f in &frames {
            f.write_to(&mut buf).unwrap();
        }
        let mut cursor = io::Cursor::new(buf);
        let mut back = Vec::new();
        while let Some(f) = Frame::read_from(&mut cursor).unwrap() {
            back.push(f);
        }
        assert_eq!(back, frames);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            code in 0usize..9,
            exercise: u64,
            session: u64,
            sender in prop_oneof![Just(0u16), 1u16..50, Just(u16::MAX)],
            id in "[a-z0-9/~_]{0,40}",
            payload in proptest::collection::vec(any::<u128>(), 0..8),
        ) {
            let frame = Frame {
                opcode: Opcode::ALL[code],
                exercise,
                session,
                sender: Endpoint::from_wire_id(sender),
                secret_id: id,
                payload,
            };
            let bytes = frame.encode().unwrap();
            prop_assert_eq!(bytes.len(), frame.wire_len());
            prop_assert_eq!(Frame::decode(&bytes).unwrap(), frame);
        }
    }
}
