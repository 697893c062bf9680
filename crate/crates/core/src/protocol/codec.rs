//! Canonical binary encoding.
//!
//! Body layout: magic `50 58`, version `01`, kind byte, then the kind's fields
//! in declaration order. Scalars are little-endian (`f64`, `i64`, `u32`),
//! booleans are one byte `0`/`1`, strings are `u32` byte length followed by
//! UTF-8, optional fields are a presence byte followed by the payload.
//!
//! Values are a tag byte (`Real=01`, `Integer=02`, `RealVector=03`,
//! `Boolean=04`) and the payload; a vector is `u8` rank, rank × `u32` dims and
//! the row-major `f64` elements.
//!
//! Distributions are a tag byte (see [`DistributionKind`]) and parameters:
//!
//! | tag | fields                                                                  |
//! |-----|-------------------------------------------------------------------------|
//! | 01  | low f64, high f64                                                       |
//! | 02  | mean f64, std f64                                                       |
//! | 03  | mean f64, std f64, low f64, high f64                                    |
//! | 04  | probs as rank-1 vector                                                  |
//! | 05  | rate f64                                                                |
//! | 06  | weights as rank-1 vector, `u32` count, count × (mean, std, low, high)   |

use thiserror::Error;

use super::message::{Message, MessageKind, ObserveRequest, SampleRequest};
use crate::distributions::{DistributionKind, DistributionSpec, TruncatedNormal};
use crate::value::{RealVector, Value, MAX_RANK};

pub const MAGIC: [u8; 2] = [0x50, 0x58];
pub const VERSION: u8 = 0x01;

const VALUE_REAL: u8 = 0x01;
const VALUE_INTEGER: u8 = 0x02;
const VALUE_VECTOR: u8 = 0x03;
const VALUE_BOOLEAN: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported version {found:#04x} at offset {offset}")]
    BadVersion { offset: usize, found: u8 },
    #[error("unknown message kind {kind:#04x} at offset {offset}")]
    UnknownKind { offset: usize, kind: u8 },
    #[error("unknown {what} tag {tag:#04x} at offset {offset}")]
    UnknownTag {
        offset: usize,
        what: &'static str,
        tag: u8,
    },
    #[error("truncated input at offset {offset}")]
    Truncated { offset: usize },
    #[error("trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize },
    #[error("invalid UTF-8 at offset {offset}")]
    BadUtf8 { offset: usize },
    #[error("boolean byte {byte:#04x} at offset {offset}")]
    InvalidBool { offset: usize, byte: u8 },
    #[error("invalid value at offset {offset}: {reason}")]
    InvalidValue { offset: usize, reason: String },
    #[error("invalid distribution at offset {offset}: {reason}")]
    InvalidDistribution { offset: usize, reason: String },
    #[error("empty address at offset {offset}")]
    EmptyAddress { offset: usize },
}

impl DecodeError {
    pub fn offset(&self) -> usize {
        match *self {
            DecodeError::BadMagic { offset }
            | DecodeError::BadVersion { offset, .. }
            | DecodeError::UnknownKind { offset, .. }
            | DecodeError::UnknownTag { offset, .. }
            | DecodeError::Truncated { offset }
            | DecodeError::TrailingBytes { offset }
            | DecodeError::BadUtf8 { offset }
            | DecodeError::InvalidBool { offset, .. }
            | DecodeError::InvalidValue { offset, .. }
            | DecodeError::InvalidDistribution { offset, .. }
            | DecodeError::EmptyAddress { offset } => offset,
        }
    }
}

/// Appends protocol scalars to a byte buffer.
#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.push(v as u8);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn opt_str(&mut self, s: Option<&str>) {
        match s {
            Some(s) => {
                self.u8(1);
                self.str(s);
            }
            None => self.u8(0),
        }
    }

    /// Vector layout: `u8` rank, dims, elements.
    pub fn vector(&mut self, shape: &[usize], data: &[f64]) {
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
        for &x in data {
            self.f64(x);
        }
    }

    pub fn value(&mut self, v: &Value) {
        match v {
            Value::Real(x) => {
                self.u8(VALUE_REAL);
                self.f64(*x);
            }
            Value::Integer(k) => {
                self.u8(VALUE_INTEGER);
                self.i64(*k);
            }
            Value::RealVector(rv) => {
                self.u8(VALUE_VECTOR);
                self.vector(rv.shape(), rv.data());
            }
            Value::Boolean(b) => {
                self.u8(VALUE_BOOLEAN);
                self.bool(*b);
            }
        }
    }

    pub fn opt_value(&mut self, v: Option<&Value>) {
        match v {
            Some(v) => {
                self.u8(1);
                self.value(v);
            }
            None => self.u8(0),
        }
    }

    fn truncated_normal(&mut self, t: &TruncatedNormal) {
        self.f64(t.mean);
        self.f64(t.std);
        self.f64(t.low);
        self.f64(t.high);
    }

    pub fn distribution(&mut self, d: &DistributionSpec) {
        self.u8(d.kind() as u8);
        match d {
            DistributionSpec::Uniform { low, high } => {
                self.f64(*low);
                self.f64(*high);
            }
            DistributionSpec::Normal { mean, std } => {
                self.f64(*mean);
                self.f64(*std);
            }
            DistributionSpec::TruncatedNormal(t) => self.truncated_normal(t),
            DistributionSpec::Categorical { probs } => self.vector(&[probs.len()], probs),
            DistributionSpec::Poisson { rate } => self.f64(*rate),
            DistributionSpec::MixtureTruncatedNormal {
                weights,
                components,
            } => {
                self.vector(&[weights.len()], weights);
                self.u32(components.len() as u32);
                for c in components {
                    self.truncated_normal(c);
                }
            }
        }
    }
}

/// Reads protocol scalars, tracking the byte offset for error reports.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(DecodeError::TrailingBytes { offset: self.pos })
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                offset: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        let offset = self.pos;
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            byte => Err(DecodeError::InvalidBool { offset, byte }),
        }
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        let len = self.u32()? as usize;
        let offset = self.pos;
        let bytes = self.take(len)?;
        match std::str::from_utf8(bytes) {
            Ok(s) => Ok(s.to_owned()),
            Err(e) => Err(DecodeError::BadUtf8 {
                offset: offset + e.valid_up_to(),
            }),
        }
    }

    pub fn opt_str(&mut self) -> Result<Option<String>, DecodeError> {
        if self.bool()? {
            Ok(Some(self.str()?))
        } else {
            Ok(None)
        }
    }

    pub fn vector(&mut self) -> Result<(Vec<usize>, Vec<f64>), DecodeError> {
        let offset = self.pos;
        let rank = self.u8()? as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(DecodeError::InvalidValue {
                offset,
                reason: format!("vector rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count: usize = 1;
        for _ in 0..rank {
            let d = self.u32()? as usize;
            count = count.checked_mul(d).ok_or(DecodeError::Truncated {
                offset: self.buf.len(),
            })?;
            shape.push(d);
        }
        if count.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(DecodeError::Truncated {
                offset: self.buf.len(),
            });
        }
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            data.push(self.f64()?);
        }
        Ok((shape, data))
    }

    pub fn value(&mut self) -> Result<Value, DecodeError> {
        let offset = self.pos;
        Ok(match self.u8()? {
            VALUE_REAL => Value::Real(self.f64()?),
            VALUE_INTEGER => Value::Integer(self.i64()?),
            VALUE_VECTOR => {
                let (shape, data) = self.vector()?;
                Value::RealVector(RealVector::new(shape, data).map_err(|e| {
                    DecodeError::InvalidValue {
                        offset,
                        reason: e.to_string(),
                    }
                })?)
            }
            VALUE_BOOLEAN => Value::Boolean(self.bool()?),
            tag => {
                return Err(DecodeError::UnknownTag {
                    offset,
                    what: "value",
                    tag,
                })
            }
        })
    }

    pub fn opt_value(&mut self) -> Result<Option<Value>, DecodeError> {
        if self.bool()? {
            Ok(Some(self.value()?))
        } else {
            Ok(None)
        }
    }

    fn simplex(&mut self) -> Result<Vec<f64>, DecodeError> {
        let offset = self.pos;
        let (shape, data) = self.vector()?;
        if shape.len() != 1 {
            return Err(DecodeError::InvalidDistribution {
                offset,
                reason: format!("expected rank-1 parameter vector, got rank {}", shape.len()),
            });
        }
        Ok(data)
    }

    fn truncated_normal(&mut self) -> Result<TruncatedNormal, DecodeError> {
        Ok(TruncatedNormal {
            mean: self.f64()?,
            std: self.f64()?,
            low: self.f64()?,
            high: self.f64()?,
        })
    }

    pub fn distribution(&mut self) -> Result<DistributionSpec, DecodeError> {
        let offset = self.pos;
        let tag = self.u8()?;
        let kind = DistributionKind::from_tag(tag).ok_or(DecodeError::UnknownTag {
            offset,
            what: "distribution",
            tag,
        })?;
        let d = match kind {
            DistributionKind::Uniform => DistributionSpec::Uniform {
                low: self.f64()?,
                high: self.f64()?,
            },
            DistributionKind::Normal => DistributionSpec::Normal {
                mean: self.f64()?,
                std: self.f64()?,
            },
            DistributionKind::TruncatedNormal => {
                DistributionSpec::TruncatedNormal(self.truncated_normal()?)
            }
            DistributionKind::Categorical => DistributionSpec::Categorical {
                probs: self.simplex()?,
            },
            DistributionKind::Poisson => DistributionSpec::Poisson { rate: self.f64()? },
            DistributionKind::MixtureTruncatedNormal => {
                let weights = self.simplex()?;
                let n = self.u32()? as usize;
                if n.saturating_mul(32) > self.remaining() {
                    return Err(DecodeError::Truncated {
                        offset: self.buf.len(),
                    });
                }
                let components = (0..n)
                    .map(|_| self.truncated_normal())
                    .collect::<Result<Vec<_>, _>>()?;
                DistributionSpec::MixtureTruncatedNormal {
                    weights,
                    components,
                }
            }
        };
        d.validate()
            .map_err(|e| DecodeError::InvalidDistribution {
                offset,
                reason: e.to_string(),
            })?;
        Ok(d)
    }

    fn address(&mut self) -> Result<String, DecodeError> {
        let offset = self.pos;
        let a = self.str()?;
        if a.is_empty() {
            return Err(DecodeError::EmptyAddress { offset });
        }
        Ok(a)
    }
}

/// Encodes a message body (without the frame length prefix).
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&MAGIC);
    w.u8(VERSION);
    w.u8(msg.kind() as u8);
    match msg {
        Message::Handshake { system_name } => w.str(system_name),
        Message::HandshakeResult {
            system_name,
            model_name,
        } => {
            w.str(system_name);
            w.str(model_name);
        }
        Message::Run | Message::ObserveResult => {}
        Message::RunResult { result } => w.opt_value(result.as_ref()),
        Message::Sample(s) => {
            w.str(&s.address);
            w.opt_str(s.name.as_deref());
            w.distribution(&s.distribution);
            w.bool(s.control);
            w.bool(s.replace);
        }
        Message::SampleResult { value } => w.value(value),
        Message::Observe(o) => {
            w.str(&o.address);
            w.distribution(&o.distribution);
            w.value(&o.value);
        }
        Message::Error { message, code } => {
            w.str(message);
            w.i64(*code);
        }
    }
    w.into_bytes()
}

/// Decodes one message body; the whole input must be consumed.
pub fn decode(bytes: &[u8]) -> Result<Message, DecodeError> {
    let mut r = Reader::new(bytes);
    if bytes.len() < 2 {
        // An empty or one-byte input is a truncated header unless the bytes present already disagree.
        if bytes.first().is_some_and(|b| *b != MAGIC[0]) {
            return Err(DecodeError::BadMagic { offset: 0 });
        }
        return Err(DecodeError::Truncated {
            offset: bytes.len(),
        });
    }
    let magic = r.take(2)?;
    if magic[0] != MAGIC[0] {
        return Err(DecodeError::BadMagic { offset: 0 });
    }
    if magic[1] != MAGIC[1] {
        return Err(DecodeError::BadMagic { offset: 1 });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(DecodeError::BadVersion {
            offset: 2,
            found: version,
        });
    }
    let kind_byte = r.u8()?;
    let kind = MessageKind::from_byte(kind_byte).ok_or(DecodeError::UnknownKind {
        offset: 3,
        kind: kind_byte,
    })?;
    let msg = match kind {
        MessageKind::Handshake => Message::Handshake {
            system_name: r.str()?,
        },
        MessageKind::HandshakeResult => Message::HandshakeResult {
            system_name: r.str()?,
            model_name: r.str()?,
        },
        MessageKind::Run => Message::Run,
        MessageKind::RunResult => Message::RunResult {
            result: r.opt_value()?,
        },
        MessageKind::Sample => Message::Sample(SampleRequest {
            address: r.address()?,
            name: r.opt_str()?,
            distribution: r.distribution()?,
            control: r.bool()?,
            replace: r.bool()?,
        }),
        MessageKind::SampleResult => Message::SampleResult { value: r.value()? },
        MessageKind::Observe => Message::Observe(ObserveRequest {
            address: r.address()?,
            distribution: r.distribution()?,
            value: r.value()?,
        }),
        MessageKind::ObserveResult => Message::ObserveResult,
        MessageKind::Error => Message::Error {
            message: r.str()?,
            code: r.i64()?,
        },
    };
    r.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_msg() -> Message {
        Message::Sample(
            SampleRequest::new(
                "forward+0x5f;Decay_Table::Select()+0x9d7]_Categorical(length_categories:3)",
                DistributionSpec::categorical(vec![0.2, 0.3, 0.5]).unwrap(),
            )
            .named("channel"),
        )
    }

    #[test]
    fn handshake_header() {
        let bytes = encode(&Message::Handshake {
            system_name: "m".into(),
        });
        assert_eq!(&bytes[..4], &[0x50, 0x58, 0x01, 0x01]);
        assert_eq!(&bytes[4..], &[1, 0, 0, 0, b'm']);
    }

    #[test]
    fn identity_cases() {
        for m in [
            Message::SampleResult {
                value: Value::Real(0.0),
            },
            Message::ObserveResult,
            Message::Run,
            sample_msg(),
        ] {
            assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }

    #[test]
    fn empty_is_truncated_at_zero() {
        assert_eq!(decode(&[]), Err(DecodeError::Truncated { offset: 0 }));
    }

    #[test]
    fn trailing_byte_rejected() {
        let mut b = encode(&sample_msg());
        let n = b.len();
        b.push(0);
        assert_eq!(decode(&b), Err(DecodeError::TrailingBytes { offset: n }));
    }

    #[test]
    fn every_truncation_rejected() {
        let b = encode(&sample_msg());
        for cut in 0..b.len() {
            assert!(
                matches!(decode(&b[..cut]), Err(DecodeError::Truncated { .. })),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn header_errors_name_offsets() {
        assert_eq!(
            decode(&[0x51, 0x58, 1, 1]),
            Err(DecodeError::BadMagic { offset: 0 })
        );
        assert_eq!(
            decode(&[0x50, 0x59, 1, 1]),
            Err(DecodeError::BadMagic { offset: 1 })
        );
        assert_eq!(
            decode(&[0x50, 0x58, 2, 1]),
            Err(DecodeError::BadVersion {
                offset: 2,
                found: 2
            })
        );
        assert_eq!(
            decode(&[0x50, 0x58, 1, 0x09]),
            Err(DecodeError::UnknownKind {
                offset: 3,
                kind: 0x09
            })
        );
    }

    #[test]
    fn bad_utf8_offset() {
        let mut b = vec![0x50, 0x58, 1, 1, 3, 0, 0, 0, b'a', 0xFF, b'b'];
        assert_eq!(decode(&b), Err(DecodeError::BadUtf8 { offset: 9 }));
        b[9] = b'c';
        assert!(decode(&b).is_ok());
    }

    #[test]
    fn non_canonical_bool_rejected() {
        let mut b = encode(&sample_msg());
        let last = b.len() - 1;
        b[last] = 2;
        assert_eq!(
            decode(&b),
            Err(DecodeError::InvalidBool {
                offset: last,
                byte: 2
            })
        );
    }

    #[test]
    fn invalid_distribution_rejected() {
        let m = Message::Observe(ObserveRequest::new(
            "y",
            DistributionSpec::Normal {
                mean: 0.0,
                std: -1.0,
            },
            Value::Real(0.0),
        ));
        assert!(matches!(
            decode(&encode(&m)),
            Err(DecodeError::InvalidDistribution { offset: 9, .. })
        ));
    }

    #[test]
    fn empty_address_rejected() {
        let m = Message::Sample(SampleRequest::new(
            "",
            DistributionSpec::uniform(0.0, 1.0).unwrap(),
        ));
        assert_eq!(
            decode(&encode(&m)),
            Err(DecodeError::EmptyAddress { offset: 4 })
        );
    }

    #[test]
    fn huge_vector_dims_are_truncation_not_allocation() {
        let mut b = vec![0x50, 0x58, 1, 0x06, VALUE_VECTOR, 3];
        for _ in 0..3 {
            b.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(decode(&b), Err(DecodeError::Truncated { .. })));
    }
}
