use std::time::Duration;

use thiserror::Error;

use crate::frontend::{Abort, Model, ModelContext, ModelError, SiteHandler, ERROR_CODE_MODEL};
use crate::protocol::{
    Connection, Direction, Endpoint, Message, MessageKind, ObserveRequest, ProtocolError, Role,
    SampleRequest, SessionValidator, StreamTransport, Transport, Violation, ERROR_CODE_ABORTED,
};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("trace aborted by the engine")]
    Aborted,
    #[error("simulator error (code {code}): {message}")]
    Simulator { message: String, code: i64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

impl From<Violation> for RunError {
    fn from(v: Violation) -> Self {
        RunError::Protocol(ProtocolError::Violation(v))
    }
}

/// Something that executes one trace per call, asking `handler` for every
/// sample and observe statement.
pub trait Simulator: Send {
    fn model_name(&self) -> &str;
    fn run(&mut self, handler: &mut dyn SiteHandler) -> Result<Option<Value>, RunError>;
}

impl<S: Simulator + ?Sized> Simulator for Box<S> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn run(&mut self, handler: &mut dyn SiteHandler) -> Result<Option<Value>, RunError> {
        (**self).run(handler)
    }
}

/// Runs a [`Model`] in-process. The lock-step ordering the wire would carry
/// is still checked message kind by message kind.
#[derive(Debug)]
pub struct LocalSimulator<M> {
    model: M,
    validator: SessionValidator,
}

impl<M: Model> LocalSimulator<M> {
    pub fn new(model: M) -> Self {
        let mut validator = SessionValidator::new();
        validator
            .observe(Direction::EngineToSimulator, MessageKind::Handshake)
            .and_then(|_| validator.observe(Direction::SimulatorToEngine, MessageKind::HandshakeResult))
            .expect("fresh session accepts a handshake");
        Self { model, validator }
    }

    pub fn model(&self) -> &M {
        &self.model
    }
}

struct CheckedHandler<'a> {
    inner: &'a mut dyn SiteHandler,
    validator: &'a mut SessionValidator,
    violation: Option<Violation>,
    aborted: bool,
}

impl CheckedHandler<'_> {
    fn step(&mut self, request: MessageKind, reply: MessageKind) {
        if self.violation.is_some() {
            return;
        }
        let r = self
            .validator
            .observe(Direction::SimulatorToEngine, request)
            .and_then(|_| self.validator.observe(Direction::EngineToSimulator, reply));
        if let Err(v) = r {
            self.violation = Some(v);
        }
    }
}

impl SiteHandler for CheckedHandler<'_> {
    fn sample(&mut self, req: &SampleRequest) -> Result<Value, Abort> {
        if self.aborted {
            return Err(Abort);
        }
        let r = self.inner.sample(req);
        let reply = if r.is_ok() { MessageKind::SampleResult } else { MessageKind::Error };
        self.step(MessageKind::Sample, reply);
        self.aborted = r.is_err();
        r
    }

    fn observe(&mut self, req: &ObserveRequest) -> Result<(), Abort> {
        if self.aborted {
            return Err(Abort);
        }
        let r = self.inner.observe(req);
        let reply = if r.is_ok() { MessageKind::ObserveResult } else { MessageKind::Error };
        self.step(MessageKind::Observe, reply);
        self.aborted = r.is_err();
        r
    }
}

impl<M: Model> Simulator for LocalSimulator<M> {
    fn model_name(&self) -> &str {
        self.model.name()
    }

    fn run(&mut self, handler: &mut dyn SiteHandler) -> Result<Option<Value>, RunError> {
        self.validator
            .observe(Direction::EngineToSimulator, MessageKind::Run)?;
        let mut h = CheckedHandler {
            inner: handler,
            validator: &mut self.validator,
            violation: None,
            aborted: false,
        };
        let outcome = self.model.run(&mut ModelContext::new(&mut h));
        let (violation, aborted) = (h.violation.take(), h.aborted);
        if let Some(v) = violation {
            return Err(v.into());
        }
        // Closing message: RunResult, the simulator's own Error, or the abort acknowledgement.
        let closing = if outcome.is_ok() && !aborted {
            MessageKind::RunResult
        } else {
            MessageKind::Error
        };
        self.validator
            .observe(Direction::SimulatorToEngine, closing)?;
        match outcome {
            _ if aborted => Err(RunError::Aborted),
            Ok(result) => Ok(result),
            Err(ModelError::Aborted) => Err(RunError::Simulator {
                message: "model aborted without an engine abort".into(),
                code: ERROR_CODE_MODEL,
            }),
            Err(ModelError::Failed(message)) => Err(RunError::Simulator {
                message,
                code: ERROR_CODE_MODEL,
            }),
        }
    }
}

/// A simulator reached over the protocol.
pub struct RemoteSimulator<T: Transport = StreamTransport> {
    conn: Connection<T>,
    model_name: String,
    system_name: String,
}

impl<T: Transport> std::fmt::Debug for RemoteSimulator<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteSimulator")
            .field("model_name", &self.model_name)
            .field("system_name", &self.system_name)
            .finish_non_exhaustive()
    }
}

impl RemoteSimulator<StreamTransport> {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: &Endpoint, timeout: Option<Duration>) -> Result<Self, RunError> {
        Self::handshake(Connection::connect(endpoint, timeout)?)
    }
}

impl<T: Transport> RemoteSimulator<T> {
    pub fn over(transport: T) -> Result<Self, RunError> {
        Self::handshake(Connection::new(transport, Role::Engine))
    }

    fn handshake(mut conn: Connection<T>) -> Result<Self, RunError> {
        let reply = conn.request(&Message::Handshake {
            system_name: "traceprobe".into(),
        })?;
        match reply {
            Message::HandshakeResult {
                system_name,
                model_name,
            } => Ok(Self {
                conn,
                model_name,
                system_name,
            }),
            Message::Error { message, code } => Err(RunError::Simulator { message, code }),
            _ => unreachable!("validated reply"),
        }
    }

    pub fn system_name(&self) -> &str {
        &self.system_name
    }

    pub fn connection(&self) -> &Connection<T> {
        &self.conn
    }

    pub fn connection_mut(&mut self) -> &mut Connection<T> {
        &mut self.conn
    }

    fn abandon(&mut self) -> Result<(), RunError> {
        let ack = self.conn.request(&Message::Error {
            message: "trace aborted by the engine".into(),
            code: ERROR_CODE_ABORTED,
        })?;
        debug_assert!(matches!(ack, Message::Error { .. }));
        Err(RunError::Aborted)
    }
}

impl<T: Transport> Simulator for RemoteSimulator<T> {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn run(&mut self, handler: &mut dyn SiteHandler) -> Result<Option<Value>, RunError> {
        let mut reply = self.conn.request(&Message::Run)?;
        loop {
            reply = match reply {
                Message::Sample(req) => match handler.sample(&req) {
                    Ok(value) => self.conn.request(&Message::SampleResult { value })?,
                    Err(Abort) => return self.abandon().map(|_| None),
                },
                Message::Observe(req) => match handler.observe(&req) {
                    Ok(()) => self.conn.request(&Message::ObserveResult)?,
                    Err(Abort) => return self.abandon().map(|_| None),
                },
                Message::RunResult { result } => return Ok(result),
                Message::Error { message, code } => {
                    return Err(RunError::Simulator { message, code })
                }
                _ => unreachable!("validated reply"),
            };
        }
    }
}
