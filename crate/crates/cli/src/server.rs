//! Gateway HTTP API over a paced engine.
//!
//! The engine lives on its own thread. Every mutating call, and every read
//! that needs engine internals, is sent through one ordered mailbox and
//! executed at the engine's current virtual time. Plain reads are answered
//! from the latest published [`EngineView`].

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::StreamExt;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};

use hearth_core::domain::{AttributeValue, DeviceId, Portal, SimDuration, SimTime};
use hearth_core::gateway::{AuthError, CommandError, DirectoryEntry, SessionToken};
use hearth_core::persistence::{EventLog, FinalState};
use hearth_core::scenario::{Scenario, Stimulus};
use hearth_core::sim::{CommandAck, Engine, EngineError, EngineView, SwipeAck, SwipeError};
use hearth_core::simnet::{run_report, MetricsTargets, Report};

/// Virtual time advanced per pacing step.
pub const STEP: SimDuration = SimDuration::from_millis(100);
/// Reading history returned by `GET /devices/{id}` unless `window_s` is given.
pub const DEFAULT_WINDOW_S: f64 = 300.0;

/// Error body: a stable code plus a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), error: error.into(), message: message.into() }
    }

    fn finished() -> Self {
        ApiError::new(StatusCode::CONFLICT, "finished", "the scenario has reached its horizon")
    }

    fn stopped() -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "engine_stopped", "the engine is no longer running")
    }
}

impl From<AuthError> for ApiError {
    fn from(e: AuthError) -> Self {
        let (status, code) = match e {
            AuthError::InvalidCredentials => (StatusCode::UNAUTHORIZED, "invalid_credentials"),
            AuthError::InvalidToken => (StatusCode::UNAUTHORIZED, "invalid_token"),
            AuthError::Expired => (StatusCode::UNAUTHORIZED, "expired"),
            AuthError::Unavailable => (StatusCode::SERVICE_UNAVAILABLE, "unavailable"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<CommandError> for ApiError {
    fn from(e: CommandError) -> Self {
        let (status, code) = match &e {
            CommandError::Auth(a) => return (*a).into(),
            CommandError::UnknownDevice => (StatusCode::NOT_FOUND, "unknown_device"),
            CommandError::UnknownAttribute(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_attribute"),
            CommandError::ReadOnly => (StatusCode::UNPROCESSABLE_ENTITY, "read_only"),
            CommandError::Type(_) => (StatusCode::UNPROCESSABLE_ENTITY, "type"),
            CommandError::NotRegistered => (StatusCode::UNPROCESSABLE_ENTITY, "not_registered"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<SwipeError> for ApiError {
    fn from(e: SwipeError) -> Self {
        match e {
            SwipeError::Auth(a) => a.into(),
            SwipeError::NoReader(_) => ApiError::new(StatusCode::NOT_FOUND, "no_reader", e.to_string()),
            SwipeError::Card(_) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_card", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Reply<T> = oneshot::Sender<Result<T, ApiError>>;

/// `GET /devices/{id}` body: the directory row and recent numeric history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDetail {
    #[serde(flatten)]
    pub entry: DirectoryEntry,
    /// Per attribute, `(sampled_at, value)` points inside the window.
    pub series: BTreeMap<String, Vec<(SimTime, AttributeValue)>>,
}

/// `GET /metrics` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub now: SimTime,
    pub gateway_up: bool,
    pub finished: bool,
    pub report: Report,
}

enum Request {
    Login { username: String, password: String, reply: Reply<SessionToken> },
    Command { token: String, device: DeviceId, attribute: String, value: AttributeValue, reply: Reply<CommandAck> },
    Swipe { token: String, portal: Portal, card: String, reply: Reply<SwipeAck> },
    Stimulus { token: String, stimulus: Stimulus, reply: Reply<SimTime> },
    Device { token: String, device: DeviceId, window: SimDuration, reply: Reply<DeviceDetail> },
    Shutdown { reply: oneshot::Sender<Result<FinalState, String>> },
}

/// Cloneable handle the HTTP layer uses to reach the engine.
#[derive(Clone)]
pub struct EngineHandle {
    tx: mpsc::Sender<Request>,
    view: watch::Receiver<Arc<EngineView>>,
}

impl EngineHandle {
    pub fn view(&self) -> Arc<EngineView> {
        self.view.borrow().clone()
    }

    async fn ask<T>(&self, make: impl FnOnce(Reply<T>) -> Request) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).map_err(|_| ApiError::stopped())?;
        rx.await.map_err(|_| ApiError::stopped())?
    }

    /// Stops the engine, writing the end record and flushing the log.
    pub async fn shutdown(&self) -> Result<FinalState, String> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(Request::Shutdown { reply: tx }).map_err(|_| "engine already stopped".to_string())?;
        rx.await.map_err(|_| "engine stopped without a final state".to_string())?
    }
}

/// Running engine thread plus its handle.
pub struct EngineThread {
    pub handle: EngineHandle,
    pub join: JoinHandle<Result<(), EngineError>>,
}

/// Builds the engine and starts pacing it: each [`STEP`] of virtual time
/// takes `STEP / pace` of wall time.
pub fn spawn_engine(scenario: &Scenario, log: EventLog, pace: f64) -> Result<EngineThread, EngineError> {
    if !(pace.is_finite() && pace > 0.0) {
        return Err(EngineError::Internal(format!("pace must be positive, got {pace}")));
    }
    let mut engine = Engine::new(scenario, log)?;
    engine.keep_readings();
    let (tx, rx) = mpsc::channel();
    let (view_tx, view_rx) = watch::channel(Arc::new(engine.view()));
    let step_wall = Duration::from_secs_f64(STEP.as_secs_f64() / pace);
    let join = std::thread::Builder::new()
        .name("hearth-engine".into())
        .spawn(move || engine_loop(engine, rx, view_tx, step_wall))
        .map_err(|e| EngineError::Internal(e.to_string()))?;
    Ok(EngineThread { handle: EngineHandle { tx, view: view_rx }, join })
}

fn engine_loop(
    mut engine: Engine,
    rx: mpsc::Receiver<Request>,
    view: watch::Sender<Arc<EngineView>>,
    step_wall: Duration,
) -> Result<(), EngineError> {
    let mut deadline = Instant::now() + step_wall;
    loop {
        let wait = deadline.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(Request::Shutdown { reply }) => {
                let result = engine.stop();
                let _ = reply.send(result.as_ref().map(Clone::clone).map_err(ToString::to_string));
                view.send_replace(Arc::new(engine.view()));
                return result.map(|_| ());
            }
            Ok(req) => {
                handle(&mut engine, req)?;
                view.send_replace(Arc::new(engine.view()));
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                if !engine.is_finished() {
                    let target = engine.now() + STEP;
                    engine.advance_to(target)?;
                    if engine.now() >= engine.horizon() {
                        engine.finish()?;
                    }
                    view.send_replace(Arc::new(engine.view()));
                }
                deadline += step_wall;
                let now = Instant::now();
                if deadline + step_wall * 10 < now {
                    // Fell far behind (suspended process); do not burst.
                    deadline = now + step_wall;
                }
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                engine.stop()?;
                return Ok(());
            }
        }
    }
}

fn handle(engine: &mut Engine, req: Request) -> Result<(), EngineError> {
    let finished = engine.is_finished();
    match req {
        Request::Login { username, password, reply } => {
            let r = if finished {
                Err(ApiError::finished())
            } else {
                engine.login(&username, &password)?.map_err(ApiError::from)
            };
            let _ = reply.send(r);
        }
        Request::Command { token, device, attribute, value, reply } => {
            let r = if finished {
                Err(ApiError::finished())
            } else {
                engine.dispatch_command(&token, &device, &attribute, value)?.map_err(ApiError::from)
            };
            let _ = reply.send(r);
        }
        Request::Swipe { token, portal, card, reply } => {
            let r = if finished {
                Err(ApiError::finished())
            } else {
                engine.client_swipe(&token, portal, &card)?.map_err(ApiError::from)
            };
            let _ = reply.send(r);
        }
        Request::Stimulus { token, stimulus, reply } => {
            let r = if finished {
                Err(ApiError::finished())
            } else {
                match engine.gateway().check_session(&token, engine.now()) {
                    Ok(_) => {
                        engine.inject(stimulus)?;
                        Ok(engine.now())
                    }
                    Err(e) => Err(e.into()),
                }
            };
            let _ = reply.send(r);
        }
        Request::Device { token, device, window, reply } => {
            let _ = reply.send(device_detail(engine, &token, &device, window));
        }
        Request::Shutdown { .. } => unreachable!("handled by the loop"),
    }
    Ok(())
}

fn device_detail(engine: &Engine, token: &str, device: &DeviceId, window: SimDuration) -> Result<DeviceDetail, ApiError> {
    engine.view().check_session(token)?;
    let now = engine.now();
    let entry = engine.gateway().entry(device).cloned().ok_or(CommandError::UnknownDevice)?;
    let t0 = SimTime::from_nanos(now.as_nanos().saturating_sub(window.as_nanos().max(0) as u64));
    let series = entry
        .state
        .attributes
        .iter()
        .filter(|(_, v)| v.as_f64().is_some())
        .map(|(attr, _)| (attr.clone(), engine.query_readings(device, attr, t0, now).points))
        .collect();
    Ok(DeviceDetail { entry, series })
}

fn bearer(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .ok_or(AuthError::InvalidToken.into())
}

#[derive(Debug, Deserialize)]
struct LoginBody {
    username: String,
    password: String,
}

#[derive(Debug, Deserialize)]
struct CommandBody {
    attribute: String,
    value: AttributeValue,
}

#[derive(Debug, Deserialize)]
struct SwipeBody {
    card: String,
    portal: Portal,
}

#[derive(Debug, Deserialize)]
struct DeviceQuery {
    window_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct AlertsQuery {
    after: Option<u64>,
    #[serde(default)]
    follow: bool,
}

/// `Json` whose rejections use the API error body.
struct JsonBody<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, ApiError> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(JsonBody(v)),
            Err(r) => Err(ApiError::new(r.status(), "bad_request", r.body_text())),
        }
    }
}

/// `Query` whose rejections use the API error body.
struct Params<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Params<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        match Query::<T>::from_request_parts(parts, state).await {
            Ok(Query(v)) => Ok(Params(v)),
            Err(r) => Err(ApiError::new(r.status(), "bad_request", r.body_text())),
        }
    }
}

fn parse_device(id: &str) -> Result<DeviceId, ApiError> {
    DeviceId::new(id).map_err(|_| CommandError::UnknownDevice.into())
}

async fn login(State(h): State<EngineHandle>, JsonBody(body): JsonBody<LoginBody>) -> Result<Json<SessionToken>, ApiError> {
    h.ask(|reply| Request::Login { username: body.username, password: body.password, reply }).await.map(Json)
}

async fn devices(State(h): State<EngineHandle>, headers: HeaderMap) -> Result<Json<Vec<DirectoryEntry>>, ApiError> {
    let token = bearer(&headers)?;
    let view = h.view();
    Ok(Json(view.list_devices(&token)?.to_vec()))
}

async fn device(
    State(h): State<EngineHandle>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Params(q): Params<DeviceQuery>,
) -> Result<Json<DeviceDetail>, ApiError> {
    let token = bearer(&headers)?;
    let device = parse_device(&id)?;
    let secs = q.window_s.unwrap_or(DEFAULT_WINDOW_S);
    if !(secs.is_finite() && secs >= 0.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "window_s must be a non-negative number"));
    }
    let window = SimDuration::from_nanos((secs * 1e9).round() as i64);
    h.ask(|reply| Request::Device { token, device, window, reply }).await.map(Json)
}

async fn command(
    State(h): State<EngineHandle>,
    headers: HeaderMap,
    Path(id): Path<String>,
    JsonBody(body): JsonBody<CommandBody>,
) -> Result<Json<CommandAck>, ApiError> {
    let token = bearer(&headers)?;
    let device = parse_device(&id)?;
    h.ask(|reply| Request::Command { token, device, attribute: body.attribute, value: body.value, reply })
        .await
        .map(Json)
}

async fn swipe(
    State(h): State<EngineHandle>,
    headers: HeaderMap,
    JsonBody(body): JsonBody<SwipeBody>,
) -> Result<Json<SwipeAck>, ApiError> {
    let token = bearer(&headers)?;
    h.ask(|reply| Request::Swipe { token, portal: body.portal, card: body.card, reply }).await.map(Json)
}

async fn stimulus(
    State(h): State<EngineHandle>,
    headers: HeaderMap,
    JsonBody(body): JsonBody<Stimulus>,
) -> Result<impl IntoResponse, ApiError> {
    let token = bearer(&headers)?;
    let at = h.ask(|reply| Request::Stimulus { token, stimulus: body, reply }).await?;
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "accepted": true, "at": at }))))
}

async fn metrics(State(h): State<EngineHandle>, headers: HeaderMap) -> Result<Json<MetricsBody>, ApiError> {
    let token = bearer(&headers)?;
    let view = h.view();
    view.check_session(&token)?;
    Ok(Json(MetricsBody {
        now: view.now,
        gateway_up: view.gateway_up,
        finished: view.finished,
        report: run_report(&view.metrics, &MetricsTargets::default()),
    }))
}

fn ndjson<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("alerts serialize"));
        out.push('\n');
    }
    out
}

/// Alerts with seq greater than `after`, one JSON object per line. With
/// `follow=true` the response stays open and streams new alerts as they are
/// recorded; a client resumes after a disconnect by passing the last seq
/// it saw.
async fn alerts(
    State(h): State<EngineHandle>,
    headers: HeaderMap,
    Params(q): Params<AlertsQuery>,
) -> Result<Response, ApiError> {
    let token = bearer(&headers)?;
    let view = h.view();
    view.check_session(&token)?;
    let first = view.alerts_after(q.after).to_vec();
    let ndjson_header = [(header::CONTENT_TYPE, "application/x-ndjson")];
    if !q.follow {
        return Ok((ndjson_header, ndjson(&first)).into_response());
    }
    let last = first.last().map(|a| a.seq).or(q.after);
    let head = futures::stream::once(async move { Ok::<_, std::convert::Infallible>(ndjson(&first)) });
    let rx = h.view.clone();
    let tail = futures::stream::unfold((rx, last), |(mut rx, last)| async move {
        loop {
            if rx.changed().await.is_err() {
                return None;
            }
            let view = rx.borrow_and_update().clone();
            let fresh = view.alerts_after(last);
            if !fresh.is_empty() {
                let next = fresh.last().map(|a| a.seq);
                return Some((Ok(ndjson(fresh)), (rx, next)));
            }
        }
    });
    let body = Body::from_stream(head.chain(tail));
    Ok((ndjson_header, body).into_response())
}

pub fn router(handle: EngineHandle) -> Router {
    Router::new()
        .route("/session", post(login))
        .route("/devices", get(devices))
        .route("/devices/{id}", get(device))
        .route("/devices/{id}/command", post(command))
        .route("/alerts", get(alerts))
        .route("/swipe", post(swipe))
        .route("/metrics", get(metrics))
        .route("/stimulus", post(stimulus))
        .with_state(handle)
}

/// Serves the API until `shutdown` resolves. The engine is stopped first, so
/// the log ends with a run-end record and is flushed, and open alert streams
/// end before the server waits for connections to drain.
pub async fn serve(
    listener: tokio::net::TcpListener,
    engine: EngineThread,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<FinalState, String> {
    let handle = engine.handle.clone();
    let (state_tx, state_rx) = oneshot::channel();
    let stopper = handle.clone();
    let signal = async move {
        shutdown.await;
        let _ = state_tx.send(stopper.shutdown().await);
    };
    axum::serve(listener, router(handle)).with_graceful_shutdown(signal).await.map_err(|e| e.to_string())?;
    let state = state_rx.await.map_err(|_| "server stopped without shutting the engine down".to_string())?;
    let joined = tokio::task::spawn_blocking(move || engine.join.join()).await.map_err(|e| e.to_string())?;
    match joined {
        Ok(Ok(())) => state,
        Ok(Err(e)) => Err(e.to_string()),
        Err(_) => Err("engine thread panicked".into()),
    }
}
