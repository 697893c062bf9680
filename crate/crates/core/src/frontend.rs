//! Rust-side model authoring: the `sample`/`observe` API and a wire server.
//!
//! A [`Model`] can run in-process through
//! [`LocalSimulator`](crate::controller::LocalSimulator) or be served over
//! the protocol with [`serve`], where it behaves like any external front end.

use std::time::Duration;

use thiserror::Error;

use crate::distributions::DistributionSpec;
use crate::protocol::{
    Connection, Endpoint, Listener, Message, ObserveRequest, ProtocolError, Role, SampleRequest,
    Transport, TransportError, ERROR_CODE_ABORTED,
};
use crate::value::Value;

/// Error code a served model sends when its own code fails.
pub const ERROR_CODE_MODEL: i64 = 3;

/// The engine abandoned the current trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Abort;

/// Answers the sample and observe statements of one running trace.
pub trait SiteHandler {
    fn sample(&mut self, req: &SampleRequest) -> Result<Value, Abort>;
    fn observe(&mut self, req: &ObserveRequest) -> Result<(), Abort>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("trace aborted by the engine")]
    Aborted,
    #[error("model failed: {0}")]
    Failed(String),
}

impl From<Abort> for ModelError {
    fn from(_: Abort) -> Self {
        ModelError::Aborted
    }
}

/// What a model sees while it runs.
pub struct ModelContext<'a> {
    handler: &'a mut dyn SiteHandler,
}

impl<'a> ModelContext<'a> {
    pub fn new(handler: &'a mut dyn SiteHandler) -> Self {
        Self { handler }
    }

    pub fn sample_with(&mut self, req: &SampleRequest) -> Result<Value, ModelError> {
        Ok(self.handler.sample(req)?)
    }

    /// Controlled, non-replaced draw.
    pub fn sample(&mut self, address: &str, d: DistributionSpec) -> Result<Value, ModelError> {
        self.sample_with(&SampleRequest::new(address, d))
    }

    pub fn sample_real(&mut self, address: &str, d: DistributionSpec) -> Result<f64, ModelError> {
        expect_real(address, self.sample(address, d)?)
    }

    pub fn sample_int(&mut self, address: &str, d: DistributionSpec) -> Result<i64, ModelError> {
        expect_int(address, self.sample(address, d)?)
    }

    pub fn observe(
        &mut self,
        address: &str,
        d: DistributionSpec,
        value: Value,
    ) -> Result<(), ModelError> {
        Ok(self
            .handler
            .observe(&ObserveRequest::new(address, d, value))?)
    }
}

pub fn expect_real(address: &str, v: Value) -> Result<f64, ModelError> {
    match v {
        Value::Real(x) => Ok(x),
        other => Err(ModelError::Failed(format!(
            "expected a real at {address}, got {other}"
        ))),
    }
}

pub fn expect_int(address: &str, v: Value) -> Result<i64, ModelError> {
    match v {
        Value::Integer(k) => Ok(k),
        other => Err(ModelError::Failed(format!(
            "expected an integer at {address}, got {other}"
        ))),
    }
}

/// A generative model written against [`ModelContext`].
pub trait Model: Send + Sync {
    fn name(&self) -> &str;
    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError>;
}

impl<M: Model + ?Sized> Model for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        (**self).run(ctx)
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        (**self).run(ctx)
    }
}

impl<M: Model + ?Sized> Model for std::sync::Arc<M> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn run(&self, ctx: &mut ModelContext<'_>) -> Result<Option<Value>, ModelError> {
        (**self).run(ctx)
    }
}

struct WireHandler<'c, T: Transport> {
    conn: &'c mut Connection<T>,
    failure: Option<ProtocolError>,
    engine_aborted: bool,
}

impl<T: Transport> WireHandler<'_, T> {
    fn exchange(&mut self, msg: Message) -> Result<Message, Abort> {
        match self.conn.request(&msg) {
            Ok(Message::Error { .. }) => {
                self.engine_aborted = true;
                Err(Abort)
            }
            Ok(reply) => Ok(reply),
            Err(e) => {
                self.failure = Some(e);
                Err(Abort)
            }
        }
    }
}

impl<T: Transport> SiteHandler for WireHandler<'_, T> {
    fn sample(&mut self, req: &SampleRequest) -> Result<Value, Abort> {
        match self.exchange(Message::Sample(req.clone()))? {
            Message::SampleResult { value } => Ok(value),
            // The session validator rejects any other reply kind.
            _ => unreachable!("validated reply"),
        }
    }

    fn observe(&mut self, req: &ObserveRequest) -> Result<(), Abort> {
        match self.exchange(Message::Observe(req.clone()))? {
            Message::ObserveResult => Ok(()),
            _ => unreachable!("validated reply"),
        }
    }
}

/// Serves `model` on one accepted connection until the engine disconnects.
///
/// Returns the number of traces completed.
pub fn serve_connection<M: Model + ?Sized, T: Transport>(
    model: &M,
    conn: &mut Connection<T>,
) -> Result<usize, ProtocolError> {
    let mut traces = 0;
    loop {
        let msg = match conn.recv() {
            Ok(m) => m,
            Err(ProtocolError::Transport(TransportError::Closed)) => return Ok(traces),
            Err(e) => return Err(e),
        };
        match msg {
            Message::Handshake { .. } => conn.send(&Message::HandshakeResult {
                system_name: "traceprobe".into(),
                model_name: model.name().into(),
            })?,
            Message::Run => {
                let mut h = WireHandler {
                    conn: &mut *conn,
                    failure: None,
                    engine_aborted: false,
                };
                let outcome = model.run(&mut ModelContext::new(&mut h));
                let (failure, engine_aborted) = (h.failure.take(), h.engine_aborted);
                if let Some(e) = failure {
                    return Err(e);
                }
                let reply = match outcome {
                    Ok(result) => Message::RunResult { result },
                    Err(_) if engine_aborted => Message::Error {
                        message: "trace aborted".into(),
                        code: ERROR_CODE_ABORTED,
                    },
                    Err(ModelError::Aborted) => Message::Error {
                        message: "model returned an abort the engine did not send".into(),
                        code: ERROR_CODE_MODEL,
                    },
                    Err(ModelError::Failed(m)) => Message::Error {
                        message: m,
                        code: ERROR_CODE_MODEL,
                    },
                };
                conn.send(&reply)?;
                if matches!(reply, Message::RunResult { .. }) {
                    traces += 1;
                }
            }
            // Any other kind already failed validation in `recv`.
            _ => unreachable!("validated request"),
        }
    }
}

/// Binds `endpoint` and serves connections one after another.
///
/// `on_bound` receives the actual endpoint once listening (useful with port 0).
/// Stops after `max_connections` connections when given.
pub fn serve<M: Model + ?Sized>(
    model: &M,
    endpoint: &Endpoint,
    timeout: Option<Duration>,
    max_connections: Option<usize>,
    on_bound: impl FnOnce(&Endpoint),
) -> Result<(), ProtocolError> {
    let listener = Listener::bind(endpoint).map_err(TransportError::Io)?;
    on_bound(&listener.endpoint().map_err(TransportError::Io)?);
    let mut served = 0;
    while max_connections.is_none_or(|m| served < m) {
        let transport = listener.accept(timeout)?;
        let mut conn = Connection::new(transport, Role::Simulator);
        serve_connection(model, &mut conn)?;
        served += 1;
    }
    Ok(())
}
