//! Network file layout (protocol scalar encodings):
//!
//! ```text
//! "PXN" version:u8
//! config: obs_hidden obs_embedding address_embedding sample_embedding
//!         lstm_hidden lstm_layers mixture_components (u32 each) std_floor:f64 seed:u64
//! observation: dim:u32 dim × mean:f64 dim × std:f64
//! registry: count:u32 count × (address:string instance:u32 kind:u8
//!           head:u8 head_size:u32 sample_dim:u32)
//! parameters: count:u64 count × f64
//! ```
//!
//! `head` is 1 Categorical (`head_size` classes), 2 mixture (`head_size`
//! components), 3 Normal, 4 none. Parameters are listed tensor by tensor: the
//! core, then each registry entry's tensors in registry order.

use std::path::Path;

use thiserror::Error;

use crate::distributions::DistributionKind;
use crate::protocol::codec::{Reader, Writer};
use crate::protocol::DecodeError;
use crate::trace::Address;

use super::network::{HeadKind, NetworkConfig, ProposalNetwork};

pub const NETWORK_MAGIC: [u8; 3] = *b"PXN";
pub const NETWORK_FILE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum NetworkIoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("unsupported network file version {found}")]
    VersionMismatch { found: u8 },
    #[error("corrupt network file at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

impl From<DecodeError> for NetworkIoError {
    fn from(e: DecodeError) -> Self {
        NetworkIoError::Corrupt {
            offset: e.offset(),
            reason: e.to_string(),
        }
    }
}

pub fn encode_network(net: &ProposalNetwork) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&NETWORK_MAGIC);
    w.u8(NETWORK_FILE_VERSION);
    let c = &net.config;
    for x in [
        c.obs_hidden,
        c.obs_embedding,
        c.address_embedding,
        c.sample_embedding,
        c.lstm_hidden,
        c.lstm_layers,
        c.mixture_components,
    ] {
        w.u32(x as u32);
    }
    w.f64(c.std_floor);
    w.u64(c.seed);
    w.u32(net.obs_mean.len() as u32);
    for x in net.obs_mean.iter().chain(&net.obs_std) {
        w.f64(*x);
    }
    w.u32(net.sites.len() as u32);
    for s in &net.sites {
        w.str(s.address.raw());
        w.u32(s.instance);
        w.u8(s.kind as u8);
        w.u8(s.head.tag());
        w.u32(match s.head {
            HeadKind::Categorical { classes } => classes as u32,
            HeadKind::Mixture { components } => components as u32,
            _ => 0,
        });
        w.u32(s.sample_dim as u32);
    }
    w.u64(net.parameter_count() as u64);
    for p in &net.params {
        for x in p.data() {
            w.f64(*x);
        }
    }
    w.into_bytes()
}

pub fn decode_network(bytes: &[u8]) -> Result<ProposalNetwork, NetworkIoError> {
    let mut r = Reader::new(bytes);
    let corrupt = |offset: usize, reason: String| NetworkIoError::Corrupt { offset, reason };
    if r.take(3)? != NETWORK_MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let version = r.u8()?;
    if version != NETWORK_FILE_VERSION {
        return Err(NetworkIoError::VersionMismatch { found: version });
    }
    let start = r.offset();
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = NetworkConfig {
        obs_hidden: dims[0],
        obs_embedding: dims[1],
        address_embedding: dims[2],
        sample_embedding: dims[3],
        lstm_hidden: dims[4],
        lstm_layers: dims[5],
        mixture_components: dims[6],
        std_floor: r.f64()?,
        seed: r.u64()?,
    };
    // Refuse sizes that could not have been written by a sane network.
    if dims.iter().any(|&d| d > 1 << 16) || config.lstm_layers == 0 {
        return Err(corrupt(start, "implausible configuration".into()));
    }
    let obs_dim = r.u32()? as usize;
    if obs_dim.saturating_mul(16) > r.remaining() {
        return Err(corrupt(r.offset(), format!("observation size {obs_dim} exceeds file")));
    }
    let mean: Vec<f64> = (0..obs_dim).map(|_| r.f64()).collect::<Result<_, _>>()?;
    let std: Vec<f64> = (0..obs_dim).map(|_| r.f64()).collect::<Result<_, _>>()?;
    let mut net = ProposalNetwork::new(config, mean, std);
    let count = r.u32()? as usize;
    for _ in 0..count {
        let at = r.offset();
        let address = r.str()?;
        let instance = r.u32()?;
        let kind_tag = r.u8()?;
        let kind = DistributionKind::from_tag(kind_tag)
            .ok_or_else(|| corrupt(at, format!("unknown distribution tag {kind_tag}")))?;
        let head_tag = r.u8()?;
        let size = r.u32()? as usize;
        let sample_dim = r.u32()? as usize;
        if size > 1 << 20 || sample_dim > 1 << 20 || instance == 0 {
            return Err(corrupt(at, "implausible registry entry".into()));
        }
        let head = match head_tag {
            1 => HeadKind::Categorical { classes: size },
            2 => HeadKind::Mixture { components: size },
            3 => HeadKind::Normal,
            4 => HeadKind::Prior,
            t => return Err(corrupt(at, format!("unknown head tag {t}"))),
        };
        let key = Address::new(&address);
        if net.site(&address, instance).is_some() {
            return Err(corrupt(at, format!("duplicate registry entry {address}#{instance}")));
        }
        net.register_raw(&key, instance, kind, head, sample_dim);
    }
    let at = r.offset();
    let n = r.u64()? as usize;
    if n != net.parameter_count() {
        return Err(corrupt(
            at,
            format!("{n} parameters listed, the configuration needs {}", net.parameter_count()),
        ));
    }
    for p in net.parameters_mut() {
        for x in p.data_mut() {
            *x = r.f64()?;
        }
    }
    r.finish()?;
    Ok(net)
}

pub fn save_network(net: &ProposalNetwork, path: &Path) -> Result<(), NetworkIoError> {
    std::fs::write(path, encode_network(net))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<ProposalNetwork, NetworkIoError> {
    decode_network(&std::fs::read(path)?)
}
