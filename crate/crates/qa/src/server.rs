//! What-if HTTP service.
//!
//! One immutable assessment is shared by all clients. Each client session
//! token (header `x-qa-session`, `default` when absent) owns a
//! [`WhatIfSession`] behind its own mutex, so requests on one session are
//! serialized while distinct sessions run in parallel.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use qa_core::assess::{
    Assessment, NodePosterior, Override, WhatIfChange, WhatIfError, WhatIfSession,
};
use qa_core::bayes::{BayesError, NodeKind};
use qa_core::nptgen::Scale;
use serde::{Deserialize, Serialize};

pub const SESSION_HEADER: &str = "x-qa-session";
pub const DEFAULT_SESSION: &str = "default";

const INDEX_HTML: &str = include_str!("../assets/index.html");

/// Posteriors of one session together with the evidence behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub session: String,
    /// Effective evidence as state labels, base observations included.
    pub evidence: BTreeMap<String, String>,
    /// Overrides on top of the base evidence; `null` marks a retraction.
    pub overrides: BTreeMap<String, Option<String>>,
    pub metric_node: String,
    pub density_mean: f64,
    pub density_sd: f64,
    pub posteriors: Vec<NodePosterior>,
}

impl SessionView {
    pub fn build(assessment: &Assessment, session: &WhatIfSession) -> Result<Self, WhatIfError> {
        let posteriors = assessment.annotate(&session.posteriors()?);
        Ok(Self::from_posteriors(assessment, session, posteriors))
    }

    fn from_posteriors(
        assessment: &Assessment,
        session: &WhatIfSession,
        posteriors: Vec<NodePosterior>,
    ) -> Self {
        let net = session.net();
        let label = |node: &str, state: usize| {
            net.node(node)
                .map_or_else(|| state.to_string(), |n| n.states[state].clone())
        };
        let evidence = session
            .evidence()
            .assignments
            .iter()
            .map(|(n, &s)| (n.clone(), label(n, s)))
            .collect();
        let overrides = session
            .overrides()
            .iter()
            .map(|(n, o)| {
                let v = match o {
                    Override::Observe(s) => Some(label(n, *s)),
                    Override::Retract => None,
                };
                (n.clone(), v)
            })
            .collect();
        let metric_node = assessment.report.metric_node.clone();
        let metric = posteriors
            .iter()
            .find(|p| p.node == metric_node)
            .expect("metric node is in the net");
        Self {
            session: session.id.clone(),
            evidence,
            overrides,
            density_mean: metric.mean.expect("metric node has a scale"),
            density_sd: metric.sd.expect("metric node has a scale"),
            metric_node,
            posteriors,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NetNode {
    pub id: String,
    pub kind: NodeKind,
    pub name: String,
    pub element: String,
    pub states: Vec<String>,
    pub parents: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NetView {
    pub system: String,
    pub metric_node: String,
    pub nodes: Vec<NetNode>,
}

pub fn net_view(assessment: &Assessment) -> NetView {
    let nodes = assessment
        .net
        .nodes()
        .iter()
        .map(|n| {
            let element = assessment
                .map
                .element_of(&n.id)
                .unwrap_or(&n.id)
                .to_string();
            let name = assessment
                .names
                .get(&element)
                .cloned()
                .unwrap_or_else(|| element.clone());
            NetNode {
                id: n.id.clone(),
                kind: n.kind,
                name,
                element,
                states: n.states.clone(),
                parents: n.parents.clone(),
                scale: n.scale.clone(),
            }
        })
        .collect();
    NetView {
        system: assessment.report.system.id.clone(),
        metric_node: assessment.report.metric_node.clone(),
        nodes,
    }
}

/// Body of `POST /api/observations`. A `null` state retracts the node's
/// base observation.
#[derive(Debug, Clone, Deserialize)]
pub struct ObservationRequest {
    pub node: String,
    pub state: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ClearQuery {
    pub node: Option<String>,
}

pub struct AppState {
    assessment: Assessment,
    sessions: Mutex<HashMap<String, Arc<Mutex<WhatIfSession>>>>,
}

impl AppState {
    pub fn new(assessment: Assessment) -> Self {
        Self {
            assessment,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn session(&self, id: &str) -> Arc<Mutex<WhatIfSession>> {
        let mut sessions = self.sessions.lock().expect("session table poisoned");
        Arc::clone(
            sessions
                .entry(id.to_string())
                .or_insert_with(|| Arc::new(Mutex::new(self.assessment.session(id)))),
        )
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        Self {
            status,
            message: message.to_string(),
        }
    }
}

impl From<WhatIfError> for ApiError {
    fn from(e: WhatIfError) -> Self {
        let status = match &e {
            WhatIfError::UnknownNode(_) => StatusCode::NOT_FOUND,
            WhatIfError::UnknownState { .. } => StatusCode::BAD_REQUEST,
            WhatIfError::Inference(BayesError::InconsistentEvidence) => StatusCode::CONFLICT,
            WhatIfError::Inference(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

type Shared = Arc<AppState>;

pub fn router(assessment: Assessment) -> Router {
    let state: Shared = Arc::new(AppState::new(assessment));
    Router::new()
        .route("/", get(index))
        .route("/api/net", get(get_net))
        .route("/api/posteriors", get(get_posteriors))
        .route(
            "/api/observations",
            axum::routing::post(post_observation).delete(delete_observations),
        )
        .route("/api/report", get(get_report))
        .with_state(state)
}

fn session_id(headers: &HeaderMap) -> String {
    headers
        .get(SESSION_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.is_empty())
        .unwrap_or(DEFAULT_SESSION)
        .to_string()
}

/// Run `f` on the caller's session off the async executor; inference is
/// CPU-bound.
async fn with_session<F>(
    state: Shared,
    headers: &HeaderMap,
    f: F,
) -> Result<Json<SessionView>, ApiError>
where
    F: FnOnce(&mut WhatIfSession) -> Result<Option<Vec<qa_core::Posterior>>, WhatIfError>
        + Send
        + 'static,
{
    let id = session_id(headers);
    tokio::task::spawn_blocking(move || {
        let handle = state.session(&id);
        let mut session = handle.lock().expect("session poisoned");
        let view = match f(&mut session)? {
            Some(posteriors) => {
                let annotated = state.assessment.annotate(&posteriors);
                SessionView::from_posteriors(&state.assessment, &session, annotated)
            }
            None => SessionView::build(&state.assessment, &session)?,
        };
        Ok(Json(view))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
}

async fn index() -> Html<&'static str> {
    Html(INDEX_HTML)
}

async fn get_net(State(state): State<Shared>) -> Json<NetView> {
    Json(net_view(&state.assessment))
}

async fn get_report(State(state): State<Shared>) -> Json<qa_core::AssessmentReport> {
    Json(state.assessment.report.clone())
}

async fn get_posteriors(
    State(state): State<Shared>,
    headers: HeaderMap,
) -> Result<Json<SessionView>, ApiError> {
    with_session(state, &headers, |_| Ok(None)).await
}

async fn post_observation(
    State(state): State<Shared>,
    headers: HeaderMap,
    Json(req): Json<ObservationRequest>,
) -> Result<Json<SessionView>, ApiError> {
    log::info!("observe {} = {:?}", req.node, req.state);
    with_session(state, &headers, move |s| {
        let change = match &req.state {
            Some(label) => s.set_by_label(&req.node, label)?,
            None => WhatIfChange::Retract {
                node: req.node.clone(),
            },
        };
        s.apply(change).map(Some)
    })
    .await
}

async fn delete_observations(
    State(state): State<Shared>,
    headers: HeaderMap,
    Query(q): Query<ClearQuery>,
) -> Result<Json<SessionView>, ApiError> {
    with_session(state, &headers, move |s| {
        let change = match q.node {
            Some(node) => WhatIfChange::Clear { node },
            None => WhatIfChange::ClearAll,
        };
        s.apply(change).map(Some)
    })
    .await
}

/// Bind and serve until the process is stopped.
pub async fn serve(assessment: Assessment, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    eprintln!("qa: serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(assessment)).await
}
