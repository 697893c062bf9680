//! Trace file format.
//!
//! ```text
//! "PXT" version:u8
//! dict_count:u32  dict_count × raw:string          (index i has id A{i+1})
//! trace_count:u32 trace_count × trace
//!
//! trace := entry_count:u32 entry_count × entry  result:optional<Value>  log_joint:f64
//! entry := address_index:u32 instance:u32 distribution value
//!          log_prob:f64 proposal_log_prob:f64 kind:u8 flags:u8
//! kind  := 0 latent | 1 observed
//! flags := bit0 controlled | bit1 replaced | bit2 conditioned
//! ```
//!
//! Scalars, strings, values and distributions use the protocol encodings. On
//! load the cached `log_joint` must match the recomputed sum within
//! `1e-12 · max(1, |x|)`.

use std::path::Path;

use thiserror::Error;

use super::{AddressDictionary, EntryKind, Trace, TraceEntry};
use crate::protocol::codec::{DecodeError, Reader, Writer};

pub const TRACE_MAGIC: [u8; 3] = *b"PXT";
pub const TRACE_FILE_VERSION: u8 = 1;

const FLAG_CONTROLLED: u8 = 1;
const FLAG_REPLACED: u8 = 2;
const FLAG_CONDITIONED: u8 = 4;

#[derive(Debug, Error)]
pub enum TraceIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt file at offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

impl From<DecodeError> for TraceIoError {
    fn from(e: DecodeError) -> Self {
        TraceIoError::Corrupt {
            offset: e.offset(),
            reason: e.to_string(),
        }
    }
}

/// Contents of a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub dictionary: AddressDictionary,
    pub traces: Vec<Trace>,
}

pub(crate) fn write_header(w: &mut Writer, magic: &[u8; 3], dict: &AddressDictionary) {
    w.bytes(magic);
    w.u8(TRACE_FILE_VERSION);
    w.u32(dict.len() as u32);
    for a in dict.iter() {
        w.str(a.raw());
    }
}

pub(crate) fn read_header(r: &mut Reader<'_>, magic: &[u8; 3]) -> Result<AddressDictionary, TraceIoError> {
    let found = r.take(3)?;
    if found != magic {
        return Err(TraceIoError::Corrupt {
            offset: 0,
            reason: format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let offset = r.offset();
    let version = r.u8()?;
    if version != TRACE_FILE_VERSION {
        return Err(TraceIoError::Corrupt {
            offset,
            reason: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()?;
    let mut dict = AddressDictionary::new();
    for i in 0..count {
        let offset = r.offset();
        let raw = r.str()?;
        if dict.intern(&raw.as_str().into()) != i {
            return Err(TraceIoError::Corrupt {
                offset,
                reason: format!("duplicate dictionary entry {raw:?}"),
            });
        }
    }
    Ok(dict)
}

/// Appends one trace. Every address must already be in `dict`.
pub fn write_trace(w: &mut Writer, dict: &AddressDictionary, t: &Trace) {
    w.u32(t.entries.len() as u32);
    for e in &t.entries {
        let index = dict
            .index_of(e.address.raw())
            .expect("dictionary covers every trace address");
        w.u32(index);
        w.u32(e.instance);
        w.distribution(&e.distribution);
        w.value(&e.value);
        w.f64(e.log_prob);
        w.f64(e.proposal_log_prob);
        w.u8(match e.kind {
            EntryKind::Latent => 0,
            EntryKind::Observed => 1,
        });
        let mut flags = 0;
        if e.controlled {
            flags |= FLAG_CONTROLLED;
        }
        if e.replaced {
            flags |= FLAG_REPLACED;
        }
        if e.conditioned {
            flags |= FLAG_CONDITIONED;
        }
        w.u8(flags);
    }
    w.opt_value(t.result.as_ref());
    w.f64(t.log_joint());
}

pub fn read_trace(r: &mut Reader<'_>, dict: &AddressDictionary) -> Result<Trace, TraceIoError> {
    let start = r.offset();
    let corrupt = |offset: usize, reason: String| TraceIoError::Corrupt { offset, reason };
    let n = r.u32()? as usize;
    // Smallest possible entry is 4+4+9+2+8+8+1+1 bytes.
    if n.saturating_mul(37) > r.remaining() {
        return Err(DecodeError::Truncated { offset: r.offset() + r.remaining() }.into());
    }
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let offset = r.offset();
        let index = r.u32()?;
        let address = dict
            .address(index)
            .ok_or_else(|| corrupt(offset, format!("address index {index} not in dictionary")))?
            .clone();
        let instance = r.u32()?;
        let distribution = r.distribution()?;
        let value = r.value()?;
        let log_prob = r.f64()?;
        let proposal_log_prob = r.f64()?;
        let kind_offset = r.offset();
        let kind = match r.u8()? {
            0 => EntryKind::Latent,
            1 => EntryKind::Observed,
            k => return Err(corrupt(kind_offset, format!("entry kind {k}"))),
        };
        let flags_offset = r.offset();
        let flags = r.u8()?;
        if flags & !(FLAG_CONTROLLED | FLAG_REPLACED | FLAG_CONDITIONED) != 0 {
            return Err(corrupt(flags_offset, format!("unknown flag bits {flags:#04x}")));
        }
        entries.push(TraceEntry {
            address,
            instance,
            distribution,
            value,
            log_prob,
            proposal_log_prob,
            kind,
            controlled: flags & FLAG_CONTROLLED != 0,
            replaced: flags & FLAG_REPLACED != 0,
            conditioned: flags & FLAG_CONDITIONED != 0,
        });
    }
    let result = r.opt_value()?;
    let cached_offset = r.offset();
    let cached = r.f64()?;
    let t = Trace::new(entries, result);
    let recomputed = t.log_joint();
    let agrees = if recomputed.is_finite() && cached.is_finite() {
        (recomputed - cached).abs() <= 1e-12 * recomputed.abs().max(1.0)
    } else {
        recomputed == cached
    };
    if !agrees {
        return Err(corrupt(
            cached_offset,
            format!("cached log_joint {cached} differs from recomputed {recomputed}"),
        ));
    }
    t.check_instances().map_err(|m| corrupt(start, m))?;
    Ok(t)
}

/// Writes `traces` with an existing dictionary, extended by any new addresses.
pub fn write_trace_file(
    path: &Path,
    dict: &AddressDictionary,
    traces: &[Trace],
) -> Result<AddressDictionary, TraceIoError> {
    let mut dict = dict.clone();
    for t in traces {
        dict.extend_from(t);
    }
    let mut w = Writer::new();
    write_header(&mut w, &TRACE_MAGIC, &dict);
    w.u32(traces.len() as u32);
    for t in traces {
        write_trace(&mut w, &dict, t);
    }
    std::fs::write(path, w.into_bytes())?;
    Ok(dict)
}

pub fn save_traces(path: &Path, traces: &[Trace]) -> Result<(), TraceIoError> {
    write_trace_file(path, &AddressDictionary::new(), traces).map(|_| ())
}

pub fn load_traces(path: &Path) -> Result<TraceFile, TraceIoError> {
    let bytes = std::fs::read(path)?;
    parse_trace_file(&bytes)
}

pub(crate) fn parse_trace_file(bytes: &[u8]) -> Result<TraceFile, TraceIoError> {
    let mut r = Reader::new(bytes);
    let dictionary = read_header(&mut r, &TRACE_MAGIC)?;
    let n = r.u32()? as usize;
    let mut traces = Vec::with_capacity(n.min(r.remaining() / 13));
    for _ in 0..n {
        traces.push(read_trace(&mut r, &dictionary)?);
    }
    r.finish()?;
    Ok(TraceFile { dictionary, traces })
}
