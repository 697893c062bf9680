use crate::distributions::DistributionSpec;
use crate::value::Value;

/// Kind byte of every message body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageKind {
    Handshake = 0x01,
    HandshakeResult = 0x02,
    Run = 0x03,
    RunResult = 0x04,
    Sample = 0x05,
    SampleResult = 0x06,
    Observe = 0x07,
    ObserveResult = 0x08,
    Error = 0xFF,
}

impl MessageKind {
    pub const ALL: [MessageKind; 9] = [
        MessageKind::Handshake,
        MessageKind::HandshakeResult,
        MessageKind::Run,
        MessageKind::RunResult,
        MessageKind::Sample,
        MessageKind::SampleResult,
        MessageKind::Observe,
        MessageKind::ObserveResult,
        MessageKind::Error,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| *k as u8 == b)
    }

    /// The reply kind for a request kind (`Error` may always stand in).
    pub fn reply(self) -> Option<MessageKind> {
        match self {
            MessageKind::Handshake => Some(MessageKind::HandshakeResult),
            MessageKind::Run => Some(MessageKind::RunResult),
            MessageKind::Sample => Some(MessageKind::SampleResult),
            MessageKind::Observe => Some(MessageKind::ObserveResult),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRequest {
    pub address: String,
    pub name: Option<String>,
    pub distribution: DistributionSpec,
    /// The engine may substitute a learned proposal.
    pub control: bool,
    /// The draw sits inside a rejection-sampling loop.
    pub replace: bool,
}

impl SampleRequest {
    pub fn new(address: impl Into<String>, distribution: DistributionSpec) -> Self {
        Self {
            address: address.into(),
            name: None,
            distribution,
            control: true,
            replace: false,
        }
    }

    pub fn control(mut self, control: bool) -> Self {
        self.control = control;
        self
    }

    pub fn replace(mut self, replace: bool) -> Self {
        self.replace = replace;
        self
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserveRequest {
    pub address: String,
    pub distribution: DistributionSpec,
    /// The value the simulator produced; the engine may condition on another.
    pub value: Value,
}

impl ObserveRequest {
    pub fn new(address: impl Into<String>, distribution: DistributionSpec, value: Value) -> Self {
        Self {
            address: address.into(),
            distribution,
            value,
        }
    }
}

/// Protocol envelope. Fields are encoded in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Handshake {
        system_name: String,
    },
    HandshakeResult {
        system_name: String,
        model_name: String,
    },
    Run,
    RunResult {
        result: Option<Value>,
    },
    Sample(SampleRequest),
    SampleResult {
        value: Value,
    },
    Observe(ObserveRequest),
    ObserveResult,
    Error {
        message: String,
        code: i64,
    },
}

/// Error code a peer sends when it abandons the current trace.
pub const ERROR_CODE_ABORTED: i64 = 1;
/// Error code for a message that is not valid in the current session state.
pub const ERROR_CODE_PROTOCOL: i64 = 2;

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Handshake { .. } => MessageKind::Handshake,
            Message::HandshakeResult { .. } => MessageKind::HandshakeResult,
            Message::Run => MessageKind::Run,
            Message::RunResult { .. } => MessageKind::RunResult,
            Message::Sample(_) => MessageKind::Sample,
            Message::SampleResult { .. } => MessageKind::SampleResult,
            Message::Observe(_) => MessageKind::Observe,
            Message::ObserveResult => MessageKind::ObserveResult,
            Message::Error { .. } => MessageKind::Error,
        }
    }
}
