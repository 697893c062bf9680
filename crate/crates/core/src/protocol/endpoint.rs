use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use thiserror::Error;

/// Default per-message receive timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Environment variable overriding [`DEFAULT_TIMEOUT`], in (fractional) seconds.
pub const TIMEOUT_ENV: &str = "TRACEPROBE_TIMEOUT_SECS";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("invalid endpoint {endpoint:?}: {reason}")]
    Endpoint { endpoint: String, reason: String },
    #[error("invalid {TIMEOUT_ENV} value {0:?}")]
    Timeout(String),
}

/// Where a simulator listens: `tcp://host:port` or `ipc://path` (Unix socket).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Tcp { host: String, port: u16 },
    Ipc(PathBuf),
}

impl FromStr for Endpoint {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| ConfigError::Endpoint {
            endpoint: s.to_owned(),
            reason: reason.to_owned(),
        };
        if let Some(rest) = s.strip_prefix("tcp://") {
            let (host, port) = rest
                .rsplit_once(':')
                .ok_or_else(|| bad("expected tcp://host:port"))?;
            let host = host.trim_start_matches('[').trim_end_matches(']');
            if host.is_empty() {
                return Err(bad("empty host"));
            }
            let port = port.parse::<u16>().map_err(|_| bad("bad port"))?;
            Ok(Endpoint::Tcp {
                host: host.to_owned(),
                port,
            })
        } else if let Some(path) = s.strip_prefix("ipc://") {
            if path.is_empty() {
                return Err(bad("empty socket path"));
            }
            Ok(Endpoint::Ipc(PathBuf::from(path)))
        } else {
            Err(bad("scheme must be tcp:// or ipc://"))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp { host, port } if host.contains(':') => {
                write!(f, "tcp://[{host}]:{port}")
            }
            Endpoint::Tcp { host, port } => write!(f, "tcp://{host}:{port}"),
            Endpoint::Ipc(p) => write!(f, "ipc://{}", p.display()),
        }
    }
}

/// Parses a comma-separated endpoint list.
pub fn parse_endpoints(list: &str) -> Result<Vec<Endpoint>, ConfigError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

/// The receive timeout, honoring [`TIMEOUT_ENV`].
pub fn timeout_from_env() -> Result<Duration, ConfigError> {
    match std::env::var(TIMEOUT_ENV) {
        Ok(raw) => parse_timeout(&raw),
        Err(_) => Ok(DEFAULT_TIMEOUT),
    }
}

pub fn parse_timeout(raw: &str) -> Result<Duration, ConfigError> {
    let secs: f64 = raw
        .trim()
        .parse()
        .map_err(|_| ConfigError::Timeout(raw.to_owned()))?;
    if !(secs.is_finite() && secs > 0.0) {
        return Err(ConfigError::Timeout(raw.to_owned()));
    }
    Duration::try_from_secs_f64(secs).map_err(|_| ConfigError::Timeout(raw.to_owned()))
}
