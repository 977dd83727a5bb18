//! HTTP service over a single [`Session`].
//!
//! Mutating endpoints queue on one fair lock and run on the blocking pool,
//! so they apply in arrival order. Read endpoints clone a snapshot under the
//! lock and render outside it.

pub mod error;
mod ui;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::header::{CACHE_CONTROL, CONTENT_TYPE};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use slicereg_core::dataset::{parse_config, Dataset};
use slicereg_core::metrics::MetricKind;
use slicereg_core::render::{OverlayFormat, Scene};
use slicereg_core::session::view::{LabelSource, StateSummary, SupportKind};
use slicereg_core::session::{
    Action, CaseDirection, Mode, SaveReport, Session, SessionState, StepSizes, StylePatch,
};
use tokio::sync::Mutex;

pub use error::{ApiError, ApiResult, ErrorBody};

/// Every API route, as listed on the landing page.
pub const ENDPOINTS: &[(&str, &str)] = &[
    ("GET", "/api/cases"),
    ("GET", "/api/state"),
    ("POST", "/api/config"),
    ("POST", "/api/case/select"),
    ("POST", "/api/case/shift"),
    ("POST", "/api/slice/select"),
    ("POST", "/api/mode"),
    ("POST", "/api/steps"),
    ("POST", "/api/style"),
    ("POST", "/api/action"),
    ("GET", "/api/metric"),
    ("POST", "/api/metric"),
    ("GET", "/api/plot/main"),
    ("GET", "/api/plot/support"),
    ("GET", "/api/plot/texture"),
    ("GET", "/api/scene"),
    ("POST", "/api/save"),
];

#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<Option<Session>>>,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(session: Option<Session>, ui_dir: Option<PathBuf>) -> Self {
        AppState {
            session: Arc::new(Mutex::new(session)),
            ui_dir,
        }
    }
}

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(
        axum::http::StatusCode::INTERNAL_SERVER_ERROR,
        "internal",
        e.to_string(),
    )
}

async fn mutate<T, F>(app: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&mut Session) -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    let mut guard = app.session.clone().lock_owned().await;
    tokio::task::spawn_blocking(move || f(guard.as_mut().ok_or_else(ApiError::no_dataset)?))
        .await
        .map_err(join_error)?
}

async fn read<T, F>(app: &AppState, f: F) -> ApiResult<T>
where
    F: FnOnce(&SessionState) -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    let snapshot = {
        let guard = app.session.lock().await;
        guard.as_ref().ok_or_else(ApiError::no_dataset)?.snapshot()
    };
    tokio::task::spawn_blocking(move || f(&snapshot))
        .await
        .map_err(join_error)?
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    r.map(|Json(v)| v).map_err(|e| ApiError::malformed_body(e.body_text()))
}

fn query<T>(r: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    r.map(|Query(v)| v).map_err(|e| ApiError::malformed_body(e.body_text()))
}

fn png(bytes: Vec<u8>) -> Response {
    (
        [(CONTENT_TYPE, "image/png"), (CACHE_CONTROL, "no-store")],
        bytes,
    )
        .into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricBody {
    Value {
        kind: MetricKind,
        value: f64,
        higher_is_better: bool,
        is_best: bool,
    },
    Unavailable {
        kind: MetricKind,
        unavailable: String,
    },
}

fn metric_body(st: &SessionState, kind: Option<MetricKind>) -> MetricBody {
    let kind = kind.unwrap_or(st.metric_kind);
    match st.evaluate(Some(kind)) {
        Ok(e) => MetricBody::Value {
            kind,
            value: e.score.value,
            higher_is_better: e.score.higher_is_better,
            is_best: e.is_best,
        },
        Err(e) => MetricBody::Unavailable {
            kind,
            unavailable: e.to_string(),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasesBody {
    pub case_ids: Vec<String>,
    pub current: String,
}

async fn cases(State(app): State<AppState>) -> ApiResult<Json<CasesBody>> {
    let guard = app.session.lock().await;
    let s = guard.as_ref().ok_or_else(ApiError::no_dataset)?;
    Ok(Json(CasesBody {
        case_ids: s.dataset().case_ids().to_vec(),
        current: s.state().case_id().to_string(),
    }))
}

async fn state(State(app): State<AppState>) -> ApiResult<Json<StateSummary>> {
    read(&app, |st| Ok(Json(st.summary()))).await
}

/// Loads a dataset from an uploaded config document. A relative dataset
/// root resolves against the server's working directory. Unsaved edits of
/// the previous dataset are saved first.
async fn upload_config(State(app): State<AppState>, text: String) -> ApiResult<Json<StateSummary>> {
    let mut guard = app.session.clone().lock_owned().await;
    tokio::task::spawn_blocking(move || {
        let dataset = Dataset::open(parse_config(&text)?)?;
        if let Some(old) = guard.as_mut() {
            if old.state().dirty {
                old.save()?;
            }
        }
        let session = Session::open(dataset)?;
        let summary = session.state().summary();
        *guard = Some(session);
        Ok(Json(summary))
    })
    .await
    .map_err(join_error)?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseSelect {
    case_id: String,
}

async fn case_select(
    State(app): State<AppState>,
    req: Result<Json<CaseSelect>, JsonRejection>,
) -> ApiResult<Json<StateSummary>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.load_case(&req.case_id)?;
        Ok(Json(s.state().summary()))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseShift {
    direction: CaseDirection,
}

async fn case_shift(
    State(app): State<AppState>,
    req: Result<Json<CaseShift>, JsonRejection>,
) -> ApiResult<Json<StateSummary>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.shift_case(req.direction)?;
        Ok(Json(s.state().summary()))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SliceSelect {
    slice_id: String,
}

async fn slice_select(
    State(app): State<AppState>,
    req: Result<Json<SliceSelect>, JsonRejection>,
) -> ApiResult<Json<StateSummary>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.select_slice(&req.slice_id)?;
        Ok(Json(s.state().summary()))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeReq {
    mode: Mode,
}

async fn mode(
    State(app): State<AppState>,
    req: Result<Json<ModeReq>, JsonRejection>,
) -> ApiResult<Json<StateSummary>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.set_mode(req.mode);
        Ok(Json(s.state().summary()))
    })
    .await
}

async fn steps(
    State(app): State<AppState>,
    req: Result<Json<StepSizes>, JsonRejection>,
) -> ApiResult<Json<StateSummary>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.set_steps(req)?;
        Ok(Json(s.state().summary()))
    })
    .await
}

async fn style(
    State(app): State<AppState>,
    req: Result<Json<StylePatch>, JsonRejection>,
) -> ApiResult<Json<StateSummary>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.set_style(&req)?;
        Ok(Json(s.state().summary()))
    })
    .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBody {
    pub changed: Vec<String>,
    pub metric: MetricBody,
    pub state: StateSummary,
}

async fn action(
    State(app): State<AppState>,
    req: Result<Json<Action>, JsonRejection>,
) -> ApiResult<Json<ActionBody>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        let outcome = s.act(req)?;
        Ok(Json(ActionBody {
            changed: outcome.changed,
            metric: metric_body(s.state(), None),
            state: s.state().summary(),
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct MetricQuery {
    kind: Option<MetricKind>,
}

async fn metric(
    State(app): State<AppState>,
    q: Result<Query<MetricQuery>, QueryRejection>,
) -> ApiResult<Json<MetricBody>> {
    let q = query(q)?;
    read(&app, move |st| Ok(Json(metric_body(st, q.kind)))).await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricSet {
    kind: MetricKind,
    bins: Option<usize>,
}

/// Switches the live metric (and NMI bin count), rescoring all histories.
async fn set_metric(
    State(app): State<AppState>,
    req: Result<Json<MetricSet>, JsonRejection>,
) -> ApiResult<Json<MetricBody>> {
    let req = body(req)?;
    mutate(&app, move |s| {
        s.set_metric(req.kind, req.bins)?;
        Ok(Json(metric_body(s.state(), None)))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct MainQuery {
    slice_id: Option<String>,
    #[serde(default)]
    label: LabelSource,
    #[serde(default)]
    format: OverlayFormat,
}

async fn plot_main(
    State(app): State<AppState>,
    q: Result<Query<MainQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    read(&app, move |st| {
        Ok(png(st.main_plot(q.slice_id.as_deref(), q.label, q.format)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct SupportQuery {
    slice_id: Option<String>,
    #[serde(rename = "type", default)]
    kind: SupportKind,
}

async fn plot_support(
    State(app): State<AppState>,
    q: Result<Query<SupportQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    read(&app, move |st| Ok(png(st.support_plot(q.slice_id.as_deref(), q.kind)?))).await
}

#[derive(Debug, Deserialize)]
struct TextureQuery {
    slice_id: String,
}

async fn plot_texture(
    State(app): State<AppState>,
    q: Result<Query<TextureQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let q = query(q)?;
    read(&app, move |st| Ok(png(st.texture(&q.slice_id)?))).await
}

async fn scene(State(app): State<AppState>) -> ApiResult<Json<Scene>> {
    read(&app, |st| Ok(Json(st.scene()))).await
}

async fn save(State(app): State<AppState>) -> ApiResult<Json<SaveReport>> {
    mutate(&app, |s| Ok(Json(s.save()?))).await
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(app: AppState) -> Router {
    let api = Router::new()
        .route("/api/cases", get(cases))
        .route("/api/state", get(state))
        .route("/api/config", post(upload_config))
        .route("/api/case/select", post(case_select))
        .route("/api/case/shift", post(case_shift))
        .route("/api/slice/select", post(slice_select))
        .route("/api/mode", post(mode))
        .route("/api/steps", post(steps))
        .route("/api/style", post(style))
        .route("/api/action", post(action))
        .route("/api/metric", get(metric).post(set_metric))
        .route("/api/plot/main", get(plot_main))
        .route("/api/plot/support", get(plot_support))
        .route("/api/plot/texture", get(plot_texture))
        .route("/api/scene", get(scene))
        .route("/api/save", post(save))
        .route("/api", get(api_not_found))
        .route("/api/{*rest}", get(api_not_found).post(api_not_found));
    let ui_dir = app.ui_dir.clone();
    ui::with_ui(api, ui_dir).with_state(app)
}

pub async fn serve(listener: tokio::net::TcpListener, app: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(app)).await
}

/// A server running on its own runtime thread, stopped on drop.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl RunningServer {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds an ephemeral loopback port and serves `app` in a background thread.
pub fn spawn(app: AppState) -> std::io::Result<RunningServer> {
    let std_listener = std::net::TcpListener::bind(("127.0.0.1", 0))?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            axum::serve(listener, router(app))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
