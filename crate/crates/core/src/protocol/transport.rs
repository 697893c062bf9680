//! Length-prefixed framing over byte streams and in-memory channels.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::os::fd::AsRawFd;
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::PathBuf;
use std::sync::mpsc;
use std::time::Duration;

use thiserror::Error;

use super::endpoint::Endpoint;

/// Largest accepted frame body.
pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection refused by {endpoint}")]
    ConnectionRefused { endpoint: String },
    #[error("no reply within {after:?}")]
    Timeout { after: Duration },
    #[error("framing error: {0}")]
    Framing(String),
    #[error("frame of {len} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    FrameTooLarge { len: usize },
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A bidirectional frame pipe. One frame is one encoded message body.
pub trait Transport: Send {
    fn send_frame(&mut self, body: &[u8]) -> Result<(), TransportError>;
    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;
    /// True when the peer has already sent bytes that nobody asked for yet.
    fn has_pending(&mut self) -> Result<bool, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send_frame(&mut self, body: &[u8]) -> Result<(), TransportError> {
        (**self).send_frame(body)
    }
    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        (**self).recv_frame()
    }
    fn has_pending(&mut self) -> Result<bool, TransportError> {
        (**self).has_pending()
    }
}

#[derive(Debug)]
enum Stream {
    Tcp(TcpStream),
    Unix(UnixStream),
}

impl Stream {
    fn raw_fd(&self) -> i32 {
        match self {
            Stream::Tcp(s) => s.as_raw_fd(),
            Stream::Unix(s) => s.as_raw_fd(),
        }
    }

    fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.set_read_timeout(t),
            Stream::Unix(s) => s.set_read_timeout(t),
        }
    }
}

impl Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            Stream::Unix(s) => s.write(buf),
        }
    }
    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            Stream::Unix(s) => s.flush(),
        }
    }
}

/// Framing over a TCP or Unix-domain socket.
#[derive(Debug)]
pub struct StreamTransport {
    stream: Stream,
    timeout: Option<Duration>,
}

impl StreamTransport {
    fn new(stream: Stream, timeout: Option<Duration>) -> Result<Self, TransportError> {
        if let Stream::Tcp(s) = &stream {
            s.set_nodelay(true)?;
        }
        stream.set_read_timeout(timeout)?;
        Ok(Self { stream, timeout })
    }

    /// Connects to a listening peer; `timeout` bounds both connecting and every receive.
    pub fn connect(endpoint: &Endpoint, timeout: Option<Duration>) -> Result<Self, TransportError> {
        let refused = |e: io::Error| match e.kind() {
            io::ErrorKind::ConnectionRefused | io::ErrorKind::NotFound => {
                TransportError::ConnectionRefused {
                    endpoint: endpoint.to_string(),
                }
            }
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => TransportError::Timeout {
                after: timeout.unwrap_or_default(),
            },
            _ => TransportError::Io(e),
        };
        let stream = match endpoint {
            Endpoint::Tcp { host, port } => {
                let mut last = None;
                let mut connected = None;
                for addr in (host.as_str(), *port).to_socket_addrs()? {
                    let attempt = match timeout {
                        Some(t) => TcpStream::connect_timeout(&addr, t),
                        None => TcpStream::connect(addr),
                    };
                    match attempt {
                        Ok(s) => {
                            connected = Some(s);
                            break;
                        }
                        Err(e) => last = Some(e),
                    }
                }
                match connected {
                    Some(s) => Stream::Tcp(s),
                    None => {
                        return Err(refused(last.unwrap_or_else(|| {
                            io::Error::new(io::ErrorKind::NotFound, "host resolved to no address")
                        })))
                    }
                }
            }
            Endpoint::Ipc(path) => Stream::Unix(UnixStream::connect(path).map_err(refused)?),
        };
        Self::new(stream, timeout)
    }

    fn map_read_err(&self, e: io::Error) -> TransportError {
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout {
                after: self.timeout.unwrap_or_default(),
            },
            io::ErrorKind::UnexpectedEof
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::BrokenPipe => TransportError::Closed,
            _ => TransportError::Io(e),
        }
    }
}

impl Transport for StreamTransport {
    fn send_frame(&mut self, body: &[u8]) -> Result<(), TransportError> {
        if body.len() > MAX_FRAME_LEN {
            return Err(TransportError::FrameTooLarge { len: body.len() });
        }
        let mut frame = Vec::with_capacity(4 + body.len());
        frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
        frame.extend_from_slice(body);
        self.stream.write_all(&frame).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => TransportError::Closed,
            _ => TransportError::Io(e),
        })
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut len = [0u8; 4];
        self.stream
            .read_exact(&mut len)
            .map_err(|e| self.map_read_err(e))?;
        let len = u32::from_le_bytes(len) as usize;
        if len > MAX_FRAME_LEN {
            return Err(TransportError::FrameTooLarge { len });
        }
        let mut body = vec![0u8; len];
        self.stream
            .read_exact(&mut body)
            .map_err(|e| match self.map_read_err(e) {
                TransportError::Closed => {
                    TransportError::Framing(format!("stream ended inside a {len}-byte frame"))
                }
                other => other,
            })?;
        Ok(body)
    }

    fn has_pending(&mut self) -> Result<bool, TransportError> {
        let mut byte = 0u8;
        // SAFETY: the descriptor is owned by `self.stream` and the buffer is one valid byte.
        let n = unsafe {
            libc::recv(
                self.stream.raw_fd(),
                (&mut byte as *mut u8).cast(),
                1,
                libc::MSG_PEEK | libc::MSG_DONTWAIT,
            )
        };
        if n > 0 {
            return Ok(true);
        }
        if n == 0 {
            return Ok(false);
        }
        let e = io::Error::last_os_error();
        match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::Interrupted => Ok(false),
            io::ErrorKind::ConnectionReset => Ok(false),
            _ => Err(TransportError::Io(e)),
        }
    }
}

/// A bound server socket.
#[derive(Debug)]
pub enum Listener {
    Tcp(TcpListener),
    Unix { listener: UnixListener, path: PathBuf },
}

impl Listener {
    /// Binds `endpoint`. A stale Unix socket file at the path is replaced.
    pub fn bind(endpoint: &Endpoint) -> io::Result<Self> {
        match endpoint {
            Endpoint::Tcp { host, port } => Ok(Listener::Tcp(TcpListener::bind((host.as_str(), *port))?)),
            Endpoint::Ipc(path) => {
                if path.exists() && UnixStream::connect(path).is_err() {
                    std::fs::remove_file(path)?;
                }
                Ok(Listener::Unix {
                    listener: UnixListener::bind(path)?,
                    path: path.clone(),
                })
            }
        }
    }

    /// The bound endpoint (with the actual port when binding port 0).
    pub fn endpoint(&self) -> io::Result<Endpoint> {
        match self {
            Listener::Tcp(l) => {
                let addr = l.local_addr()?;
                Ok(Endpoint::Tcp {
                    host: addr.ip().to_string(),
                    port: addr.port(),
                })
            }
            Listener::Unix { path, .. } => Ok(Endpoint::Ipc(path.clone())),
        }
    }

    pub fn accept(&self, timeout: Option<Duration>) -> Result<StreamTransport, TransportError> {
        let stream = match self {
            Listener::Tcp(l) => Stream::Tcp(l.accept()?.0),
            Listener::Unix { listener, .. } => Stream::Unix(listener.accept()?.0),
        };
        StreamTransport::new(stream, timeout)
    }
}

impl Drop for Listener {
    fn drop(&mut self) {
        if let Listener::Unix { path, .. } = self {
            let _ = std::fs::remove_file(path);
        }
    }
}

/// One end of an in-process frame channel.
#[derive(Debug)]
pub struct MemoryTransport {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    peeked: Option<Vec<u8>>,
    timeout: Option<Duration>,
}

impl MemoryTransport {
    /// Two connected ends.
    pub fn pair(timeout: Option<Duration>) -> (MemoryTransport, MemoryTransport) {
        let (a_tx, b_rx) = mpsc::channel();
        let (b_tx, a_rx) = mpsc::channel();
        (
            MemoryTransport {
                tx: a_tx,
                rx: a_rx,
                peeked: None,
                timeout,
            },
            MemoryTransport {
                tx: b_tx,
                rx: b_rx,
                peeked: None,
                timeout,
            },
        )
    }
}

impl Transport for MemoryTransport {
    fn send_frame(&mut self, body: &[u8]) -> Result<(), TransportError> {
        if body.len() > MAX_FRAME_LEN {
            return Err(TransportError::FrameTooLarge { len: body.len() });
        }
        self.tx
            .send(body.to_vec())
            .map_err(|_| TransportError::Closed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        if let Some(b) = self.peeked.take() {
            return Ok(b);
        }
        match self.timeout {
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                mpsc::RecvTimeoutError::Timeout => TransportError::Timeout { after: t },
                mpsc::RecvTimeoutError::Disconnected => TransportError::Closed,
            }),
            None => self.rx.recv().map_err(|_| TransportError::Closed),
        }
    }

    fn has_pending(&mut self) -> Result<bool, TransportError> {
        if self.peeked.is_none() {
            self.peeked = self.rx.try_recv().ok();
        }
        Ok(self.peeked.is_some())
    }
}
