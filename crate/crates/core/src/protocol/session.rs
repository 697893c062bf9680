use std::fmt;
use std::time::Duration;

use thiserror::Error;

use super::codec::{self, DecodeError};
use super::endpoint::Endpoint;
use super::message::{Message, MessageKind};
use super::transport::{StreamTransport, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    EngineToSimulator,
    SimulatorToEngine,
}

impl Direction {
    fn sender(self) -> &'static str {
        match self {
            Direction::EngineToSimulator => "engine",
            Direction::SimulatorToEngine => "simulator",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Start,
    AwaitHandshakeResult,
    Idle,
    Running,
    SampleOutstanding,
    ObserveOutstanding,
    Aborting,
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            State::Start => "before handshake",
            State::AwaitHandshakeResult => "awaiting handshake result",
            State::Idle => "between traces",
            State::Running => "awaiting simulator",
            State::SampleOutstanding => "awaiting sample result",
            State::ObserveOutstanding => "awaiting observe result",
            State::Aborting => "awaiting abort acknowledgement",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{sender} sent {kind:?} {state} (message {index})")]
pub struct Violation {
    pub sender: &'static str,
    pub kind: MessageKind,
    pub state: String,
    pub index: usize,
}

/// Lock-step state machine over a session transcript.
///
/// The engine opens with `Handshake`, then for each trace sends `Run`; the
/// simulator answers with `Sample`/`Observe` requests (each answered by the
/// engine) until it sends `RunResult`. Either side may send `Error` in place
/// of its reply: a simulator `Error` ends the trace, an engine `Error`
/// abandons it and the simulator acknowledges with its own `Error`.
#[derive(Debug, Clone)]
pub struct SessionValidator {
    state: State,
    count: usize,
    last: Option<MessageKind>,
}

impl Default for SessionValidator {
    fn default() -> Self {
        Self::new()
    }
}

impl SessionValidator {
    pub fn new() -> Self {
        Self {
            state: State::Start,
            count: 0,
            last: None,
        }
    }

    pub fn observe(&mut self, dir: Direction, kind: MessageKind) -> Result<(), Violation> {
        use Direction::*;
        use MessageKind as K;
        let next = match (self.state, dir, kind) {
            (State::Start, EngineToSimulator, K::Handshake) => State::AwaitHandshakeResult,
            (State::AwaitHandshakeResult, SimulatorToEngine, K::HandshakeResult) => State::Idle,
            (State::AwaitHandshakeResult, SimulatorToEngine, K::Error) => State::Start,
            (State::Idle, EngineToSimulator, K::Run) => State::Running,
            (State::Running, SimulatorToEngine, K::Sample) => State::SampleOutstanding,
            (State::Running, SimulatorToEngine, K::Observe) => State::ObserveOutstanding,
            (State::Running, SimulatorToEngine, K::RunResult | K::Error) => State::Idle,
            (State::SampleOutstanding, EngineToSimulator, K::SampleResult) => State::Running,
            (State::ObserveOutstanding, EngineToSimulator, K::ObserveResult) => State::Running,
            (State::SampleOutstanding | State::ObserveOutstanding, EngineToSimulator, K::Error) => {
                State::Aborting
            }
            (State::Aborting, SimulatorToEngine, K::Error) => State::Idle,
            (state, dir, kind) => {
                return Err(Violation {
                    sender: dir.sender(),
                    kind,
                    state: state.to_string(),
                    index: self.count,
                })
            }
        };
        self.state = next;
        self.count += 1;
        self.last = Some(kind);
        Ok(())
    }

    /// True between traces, i.e. after a `HandshakeResult`, `RunResult` or closing `Error`.
    pub fn is_idle(&self) -> bool {
        self.state == State::Idle
    }

    /// Whether the transcript so far is a complete session: handshake first,
    /// and the last message a `RunResult` or `Error` that closed a trace.
    pub fn is_complete(&self) -> bool {
        self.state == State::Idle && matches!(self.last, Some(MessageKind::RunResult | MessageKind::Error))
    }

    pub fn messages_seen(&self) -> usize {
        self.count
    }

    /// Checks a whole recorded transcript.
    pub fn validate_transcript<'a>(
        transcript: impl IntoIterator<Item = &'a (Direction, Message)>,
    ) -> Result<(), TranscriptError> {
        let mut v = SessionValidator::new();
        for (dir, msg) in transcript {
            v.observe(*dir, msg.kind())?;
        }
        if v.count == 0 {
            return Err(TranscriptError::Empty);
        }
        if !v.is_complete() {
            return Err(TranscriptError::Incomplete {
                state: v.state.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscriptError {
    #[error("empty transcript")]
    Empty,
    #[error(transparent)]
    Violation(#[from] Violation),
    #[error("transcript ends {state}")]
    Incomplete { state: String },
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("protocol violation: {0}")]
    Violation(#[from] Violation),
}

impl ProtocolError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, ProtocolError::Transport(TransportError::Timeout { .. }))
    }
}

/// Which end of the session a [`Connection`] speaks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Engine,
    Simulator,
}

/// A framed, validated session over one transport.
///
/// Every message sent or received is checked against the lock-step state
/// machine, and a send fails with a framing error if the peer has already
/// pushed an unsolicited frame.
pub struct Connection<T: Transport = Box<dyn Transport>> {
    transport: T,
    role: Role,
    validator: SessionValidator,
    transcript: Option<Vec<(Direction, Message)>>,
}

impl<T: Transport> fmt::Debug for Connection<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Connection")
            .field("role", &self.role)
            .field("validator", &self.validator)
            .finish_non_exhaustive()
    }
}

impl Connection<StreamTransport> {
    /// Engine-side connection to a listening simulator.
    pub fn connect(endpoint: &Endpoint, timeout: Option<Duration>) -> Result<Self, ProtocolError> {
        Ok(Self::new(StreamTransport::connect(endpoint, timeout)?, Role::Engine))
    }
}

impl<T: Transport> Connection<T> {
    pub fn new(transport: T, role: Role) -> Self {
        Self {
            transport,
            role,
            validator: SessionValidator::new(),
            transcript: None,
        }
    }

    /// Keep a copy of every message exchanged from now on.
    pub fn record_transcript(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    pub fn transcript(&self) -> Option<&[(Direction, Message)]> {
        self.transcript.as_deref()
    }

    pub fn validator(&self) -> &SessionValidator {
        &self.validator
    }

    fn outgoing(&self) -> Direction {
        match self.role {
            Role::Engine => Direction::EngineToSimulator,
            Role::Simulator => Direction::SimulatorToEngine,
        }
    }

    fn incoming(&self) -> Direction {
        match self.role {
            Role::Engine => Direction::SimulatorToEngine,
            Role::Simulator => Direction::EngineToSimulator,
        }
    }

    pub fn send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        if self.transport.has_pending()? {
            return Err(TransportError::Framing(format!(
                "peer sent an unsolicited frame before {:?}",
                msg.kind()
            ))
            .into());
        }
        let dir = self.outgoing();
        self.validator.observe(dir, msg.kind())?;
        self.transport.send_frame(&codec::encode(msg))?;
        if let Some(t) = &mut self.transcript {
            t.push((dir, msg.clone()));
        }
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, ProtocolError> {
        let body = self.transport.recv_frame()?;
        let msg = codec::decode(&body)?;
        let dir = self.incoming();
        self.validator.observe(dir, msg.kind())?;
        if let Some(t) = &mut self.transcript {
            t.push((dir, msg.clone()));
        }
        Ok(msg)
    }

    /// Sends `msg` and blocks for exactly one reply.
    pub fn request(&mut self, msg: &Message) -> Result<Message, ProtocolError> {
        self.send(msg)?;
        self.recv()
    }

    pub fn into_transport(self) -> T {
        self.transport
    }
}

/// Connects to `endpoint`, sends one framed message and returns the single framed reply.
///
/// No session state is enforced; this is the raw lock-step primitive.
pub fn transport_roundtrip(
    endpoint: &Endpoint,
    msg: &Message,
    timeout: Option<Duration>,
) -> Result<Message, ProtocolError> {
    let mut t = StreamTransport::connect(endpoint, timeout)?;
    t.send_frame(&codec::encode(msg))?;
    Ok(codec::decode(&t.recv_frame()?)?)
}
