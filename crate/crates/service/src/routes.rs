use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use mathlink_core::corpus::{fetch_article, DocFormat, Origin, RawDocument};
use mathlink_core::evaluation::{timing_report, EvaluationReport};
use mathlink_core::linker::{link_session, render_export, ExportFormat, LinkOptions};
use mathlink_core::math::{ExtractionIssue, Token, TokenKind};
use mathlink_core::recommend::{presentation_order, recommend_for_target, RecommendationSet, Source};
use mathlink_core::session::{AnnotateRequest, Learning, Mode, Progress, Provenance, SessionState, TableRow, Target};
use mathlink_core::Qid;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::trace::TraceLayer;

use crate::error::ApiError;
use crate::state::{AppState, SessionEntry, StoredResponse};

pub const IDEMPOTENCY_KEY: &str = "idempotency-key";

type Reply = Result<(StatusCode, Json<Value>), ApiError>;

pub fn router(app: AppState) -> Router {
    let v1 = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/recommendations", get(recommendations))
        .route("/sessions/{id}/annotations", post(annotate))
        .route("/sessions/{id}/annotations/{target}", delete(unannotate))
        .route("/sessions/{id}/rejections", post(reject))
        .route("/sessions/{id}/export", get(export_table))
        .route("/reports/sources", get(report_sources))
        .route("/reports/timing", get(report_timing))
        .route("/export/wikitext", post(export_wikitext));
    Router::new()
        .nest("/v1", v1)
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            let mut resp = ApiError::bad_request("method not allowed").into_response();
            *resp.status_mut() = StatusCode::METHOD_NOT_ALLOWED;
            resp
        })
        .layer(TraceLayer::new_for_http())
        .with_state(app)
}

fn idempotency_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(IDEMPOTENCY_KEY)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|k| !k.is_empty())
        .map(String::from)
}

/// Accepts `"identifier:m"` or the tagged object form.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TargetRef {
    Text(String),
    Structured(Target),
}

impl TargetRef {
    fn resolve(self) -> Result<Target, ApiError> {
        match self {
            TargetRef::Text(s) => Ok(s.parse()?),
            TargetRef::Structured(t) => Ok(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
enum Status {
    Unannotated,
    Annotated,
    Rejected,
}

fn status_of(state: &SessionState, target: &Target) -> Status {
    if state.is_rejected(target) {
        Status::Rejected
    } else if state.annotation_for(target).is_some() {
        Status::Annotated
    } else {
        Status::Unannotated
    }
}

#[derive(Serialize)]
struct TokenView<'a> {
    index: usize,
    #[serde(flatten)]
    token: &'a Token,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<Status>,
}

#[derive(Serialize)]
struct SegmentView<'a> {
    segment_id: usize,
    raw_latex: &'a str,
    span: (usize, usize),
    display: mathlink_core::math::Display,
    existing_qid: Option<&'a str>,
    is_equation: bool,
    status: Status,
    tokens: Vec<TokenView<'a>>,
}

#[derive(Serialize)]
struct IdentifierView<'a> {
    symbol: &'a str,
    occurrences: usize,
    annotated: usize,
    status: Status,
}

#[derive(Serialize)]
struct SessionView<'a> {
    id: &'a str,
    title: &'a str,
    format: DocFormat,
    origin: Origin,
    revision: Option<u64>,
    segments: Vec<SegmentView<'a>>,
    identifiers: Vec<IdentifierView<'a>>,
    issues: &'a [ExtractionIssue],
    annotations: Vec<TableRow>,
    rejected: Vec<&'a Target>,
    progress: Progress,
    event_count: usize,
}

fn session_view(id: &str, s: &SessionState) -> Value {
    let segments = s
        .segments()
        .iter()
        .zip(s.formulas())
        .map(|(seg, f)| SegmentView {
            segment_id: seg.segment_id,
            raw_latex: &seg.raw_latex,
            span: seg.span,
            display: seg.display,
            existing_qid: seg.existing_qid.as_deref(),
            is_equation: f.is_equation,
            status: status_of(s, &Target::Formula {
                segment_id: seg.segment_id,
            }),
            tokens: f
                .tokens
                .iter()
                .enumerate()
                .map(|(index, token)| TokenView {
                    index,
                    token,
                    status: (token.kind == TokenKind::Identifier).then(|| {
                        status_of(s, &Target::Occurrence {
                            segment_id: seg.segment_id,
                            token_index: index,
                        })
                    }),
                })
                .collect(),
        })
        .collect();
    let identifiers = s
        .symbols()
        .map(|symbol| IdentifierView {
            symbol,
            occurrences: s.occurrences(symbol).len(),
            annotated: s.annotated_occurrences(symbol),
            status: status_of(s, &Target::identifier(symbol)),
        })
        .collect();
    let doc = s.doc();
    let view = SessionView {
        id,
        title: &doc.title,
        format: doc.format,
        origin: doc.origin,
        revision: doc.revision,
        segments,
        identifiers,
        issues: s.issues(),
        annotations: s.annotation_table(),
        rejected: s.rejected().iter().collect(),
        progress: s.progress(),
        event_count: s.events().len(),
    };
    serde_json::to_value(view).expect("view serializes")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    title: Option<String>,
    body: Option<String>,
    format: Option<DocFormat>,
}

async fn create_session(State(app): State<AppState>, headers: HeaderMap, body: Result<Json<CreateBody>, JsonRejection>) -> Reply {
    let Json(req) = body?;
    let key = idempotency_key(&headers);
    if let Some(stored) = key.as_ref().and_then(|k| app.inner.created.lock().expect("created").get(k).cloned()) {
        return Ok((stored.status, Json(stored.body)));
    }
    let doc = match (req.title, req.body) {
        (title, Some(body)) => RawDocument::new(
            title.unwrap_or_else(|| "untitled".into()),
            body,
            req.format.unwrap_or(DocFormat::Wikitext),
            Origin::File,
        )?,
        (Some(title), None) => {
            let endpoint = app.inner.endpoint.clone();
            tokio::task::spawn_blocking(move || fetch_article(&title, &endpoint))
                .await
                .map_err(ApiError::storage)??
        }
        (None, None) => return Err(ApiError::bad_request("either `title` or `body` is required")),
    };
    let state = tokio::task::spawn_blocking(move || SessionState::new(doc))
        .await
        .map_err(ApiError::storage)?;

    let mut created = app.inner.created.lock().expect("created");
    if let Some(stored) = key.as_ref().and_then(|k| created.get(k)) {
        return Ok((stored.status, Json(stored.body.clone())));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    app.persist(&id, &state)?;
    let body = session_view(&id, &state);
    tracing::info!(session = %id, title = %state.doc().title, segments = state.segments().len(), "session created");
    app.insert(id, state);
    if let Some(k) = key {
        created.insert(
            k,
            StoredResponse {
                status: StatusCode::CREATED,
                body: body.clone(),
            },
        );
    }
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(app): State<AppState>, path: Result<Path<String>, PathRejection>) -> Reply {
    let Path(id) = path?;
    let entry = app.entry(&id)?;
    let entry = entry.lock().await;
    Ok((StatusCode::OK, Json(session_view(&id, &entry.state))))
}

fn popup(app: &AppState, entry: &SessionEntry, target: &Target, eval: bool, seed: Option<u64>) -> Result<RecommendationSet, ApiError> {
    if entry.state.is_rejected(target) {
        return Err(ApiError::conflict(format!("{target} was rejected")));
    }
    let stores = app.inner.stores.read().expect("stores");
    let set = recommend_for_target(target, &entry.state, &app.inner.catalogs, &stores, &app.config().recommender)
        .ok_or_else(|| ApiError::not_found(format!("unknown target {target}")))?;
    let seed = seed.unwrap_or_else(|| AppState::popup_seed(entry.eval_seed, &target.to_string()));
    Ok(presentation_order(set, seed, eval))
}

#[derive(Serialize)]
struct PopupCandidate<'a> {
    name: &'a str,
    qid: Option<&'a Qid>,
    rank: u32,
    score: f64,
}

#[derive(Serialize)]
struct PopupSource<'a> {
    label: &'a str,
    /// Hidden in evaluation mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<Source>,
    candidates: Vec<PopupCandidate<'a>>,
}

#[derive(Debug, Deserialize)]
struct RecommendationQuery {
    target: String,
    #[serde(default)]
    eval: bool,
    seed: Option<u64>,
}

async fn recommendations(
    State(app): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    query: Result<Query<RecommendationQuery>, QueryRejection>,
) -> Reply {
    let Path(id) = path?;
    let Query(q) = query?;
    let target: Target = q.target.parse()?;
    let entry = app.entry(&id)?;
    let entry = entry.lock().await;
    let set = popup(&app, &entry, &target, q.eval, q.seed)?;
    let sources: Vec<PopupSource> = set
        .presentation
        .iter()
        .map(|p| PopupSource {
            label: &p.label,
            source: (!q.eval).then_some(p.source),
            candidates: set.per_source[&p.source]
                .iter()
                .map(|c| PopupCandidate {
                    name: &c.name,
                    qid: c.qid.as_ref(),
                    rank: c.rank,
                    score: c.score,
                })
                .collect(),
        })
        .collect();
    Ok((
        StatusCode::OK,
        Json(json!({ "target": set.target, "eval_mode": q.eval, "sources": sources })),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ProvenanceBody {
    /// `label` names an anonymised evaluation-mode source.
    Recommended {
        source: Option<Source>,
        label: Option<String>,
        position: u32,
        seed: Option<u64>,
    },
    Manual,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationBody {
    target: TargetRef,
    name: String,
    #[serde(default)]
    qid: Option<Qid>,
    #[serde(default)]
    mode: Mode,
    provenance: ProvenanceBody,
    #[serde(default)]
    elapsed_ms: u64,
}

/// Runs one state change under the session lock, replaying stored
/// responses for a repeated idempotency key.
async fn mutate(
    app: &AppState,
    id: &str,
    headers: &HeaderMap,
    status: StatusCode,
    f: impl FnOnce(&AppState, &mut SessionEntry) -> Result<(Value, Vec<Learning>), ApiError>,
) -> Reply {
    let key = idempotency_key(headers);
    let entry = app.entry(id)?;
    let mut entry = entry.lock().await;
    if let Some(stored) = key.as_ref().and_then(|k| entry.replays.get(k)) {
        tracing::debug!(session = %id, "idempotent replay");
        return Ok((stored.status, Json(stored.body.clone())));
    }
    let before = app.config().session_dir.is_some().then(|| entry.state.clone());
    let (body, learnings) = f(app, &mut entry)?;
    if let Err(e) = app.persist(id, &entry.state) {
        if let Some(before) = before {
            entry.state = before;
        }
        return Err(e);
    }
    if !learnings.is_empty() {
        let mut stores = app.inner.stores.write().expect("stores");
        for l in &learnings {
            stores.learn(l);
        }
    }
    if let Some(k) = key {
        entry.replays.insert(
            k,
            StoredResponse {
                status,
                body: body.clone(),
            },
        );
    }
    Ok((status, Json(body)))
}

fn table_body(s: &SessionState) -> Value {
    json!({ "annotations": s.annotation_table(), "progress": s.progress() })
}

async fn annotate(
    State(app): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
    body: Result<Json<AnnotationBody>, JsonRejection>,
) -> Reply {
    let Path(id) = path?;
    let Json(req) = body?;
    let target = req.target.resolve()?;
    mutate(&app, &id, &headers, StatusCode::CREATED, |app, entry| {
        let provenance = match req.provenance {
            ProvenanceBody::Manual => Provenance::Manual,
            ProvenanceBody::Recommended {
                source,
                label,
                position,
                seed,
            } => {
                let source = match (source, label) {
                    (Some(s), None) => s,
                    (None, Some(label)) => {
                        let set = popup(app, entry, &target, true, seed)?;
                        set.presentation
                            .iter()
                            .find(|p| p.label == label)
                            .map(|p| p.source)
                            .ok_or_else(|| ApiError::bad_request(format!("no source labelled `{label}` for {target}")))?
                    }
                    _ => return Err(ApiError::bad_request("give exactly one of `source` or `label`")),
                };
                Provenance::Recommended { source, position }
            }
        };
        let outcome = entry.state.annotate(AnnotateRequest {
            target: target.clone(),
            name: req.name,
            qid: req.qid,
            mode: req.mode,
            provenance,
            elapsed_ms: req.elapsed_ms,
        })?;
        let mut body = table_body(&entry.state);
        body["conflicts"] = json!(outcome.conflicts);
        Ok((body, outcome.learnings))
    })
    .await
}

async fn unannotate(
    State(app): State<AppState>,
    path: Result<Path<(String, String)>, PathRejection>,
    headers: HeaderMap,
) -> Reply {
    let Path((id, target)) = path?;
    let target: Target = target.parse()?;
    mutate(&app, &id, &headers, StatusCode::OK, |_, entry| {
        entry.state.unannotate(&target)?;
        Ok((table_body(&entry.state), Vec::new()))
    })
    .await
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RejectionBody {
    target: TargetRef,
}

async fn reject(
    State(app): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    headers: HeaderMap,
    body: Result<Json<RejectionBody>, JsonRejection>,
) -> Reply {
    let Path(id) = path?;
    let Json(req) = body?;
    let target = req.target.resolve()?;
    mutate(&app, &id, &headers, StatusCode::CREATED, |_, entry| {
        entry.state.reject(&target)?;
        let s = &entry.state;
        Ok((json!({ "rejected": s.rejected(), "progress": s.progress() }), Vec::new()))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default = "default_format")]
    format: ExportFormat,
}

fn default_format() -> ExportFormat {
    ExportFormat::Json
}

async fn export_table(
    State(app): State<AppState>,
    path: Result<Path<String>, PathRejection>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Path(id) = path?;
    let Query(q) = query?;
    let entry = app.entry(&id)?;
    let text = render_export(&entry.lock().await.state, q.format)?;
    let content_type = match q.format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Json => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], text).into_response())
}

async fn all_sessions(app: &AppState) -> Vec<SessionState> {
    let mut out = Vec::new();
    for (_, entry) in app.all_entries() {
        out.push(entry.lock().await.state.clone());
    }
    out
}

async fn report_sources(State(app): State<AppState>) -> Reply {
    let sessions = all_sessions(&app).await;
    let report = EvaluationReport::from_sessions(&sessions, &app.inner.reference);
    Ok((
        StatusCode::OK,
        Json(json!({
            "sessions": sessions.len(),
            "sources": report.sources,
            "coverage": report.coverage,
            "deviations": report.deviations,
        })),
    ))
}

async fn report_timing(State(app): State<AppState>) -> Reply {
    let sessions = all_sessions(&app).await;
    let timing = timing_report(sessions.iter().flat_map(|s| s.events()));
    Ok((
        StatusCode::OK,
        Json(json!({ "sessions": sessions.len(), "timing": timing })),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WikitextExportBody {
    session_id: String,
    #[serde(default)]
    quote_attrs: bool,
    #[serde(default)]
    block_only: bool,
}

async fn export_wikitext(State(app): State<AppState>, body: Result<Json<WikitextExportBody>, JsonRejection>) -> Reply {
    let Json(req) = body?;
    let entry = app.entry(&req.session_id)?;
    let entry = entry.lock().await;
    let (wikitext, stats) = link_session(
        &entry.state,
        LinkOptions {
            quote_attrs: req.quote_attrs,
            block_only: req.block_only,
        },
    )?;
    Ok((
        StatusCode::OK,
        Json(json!({ "session_id": req.session_id, "wikitext": wikitext, "stats": stats })),
    ))
}
