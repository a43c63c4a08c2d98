use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use descrix_core::item::Property;
use descrix_core::kernel::PublishRequest;
use descrix_core::{HistoryFilter, ItemId, Kernel, KernelError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ApiError;
use crate::extract::{item_id, kind, Body, Caller, Path, Query};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

pub fn api() -> Router<AppState> {
    Router::new()
        .route("/health", get(health))
        .route("/whoami", get(whoami))
        .route("/items", post(create_item))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/history", get(history))
        .route("/items/{id}/enabled", get(enabled))
        .route("/items/{id}/pins", get(pins))
        .route("/items/{id}/outcomes/{schema}/{view}", get(outcome))
        .route("/items/{id}/viewpoints", get(viewpoints).post(freeze_view))
        .route("/items/{id}/transitions", post(transition))
        .route("/items/{id}/properties/{name}", put(set_property))
        .route("/items/{id}/collections/{collection}/{slot}", put(assign_slot))
        .route("/items/{id}/trace-upstream", get(trace_upstream))
        .route("/worklist", get(worklist))
        .route("/descriptions", get(list_descriptions))
        .route("/descriptions/batch", post(publish_batch))
        .route("/descriptions/{kind}/{name}", get(list_versions).post(publish))
        .route("/descriptions/{kind}/{name}/{version}", get(get_description))
        .route("/prov/export", post(export_prov))
        .route("/paths", get(resolve).post(bind))
}

/// Runs a kernel call off the async workers; kernel writes may fsync.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Kernel) -> Result<T, KernelError> + Send + 'static,
{
    let kernel = state.kernel.clone();
    match tokio::task::spawn_blocking(move || f(&kernel)).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string())),
    }
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn whoami(Caller(agent): Caller) -> Json<Value> {
    Json(json!(agent))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateItem {
    description: String,
    #[serde(default)]
    version: Option<u64>,
    name: String,
    #[serde(default)]
    properties: Vec<Property>,
}

async fn create_item(
    State(state): State<AppState>,
    Caller(agent): Caller,
    Body(req): Body<CreateItem>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let item = blocking(&state, move |k| {
        k.create_item(&agent, &req.description, req.version, &req.name, req.properties)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!(item.view()))))
}

async fn get_item(State(state): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let item = blocking(&state, move |k| k.item(id)).await?;
    Ok(Json(json!(item.view())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryQuery {
    kind: Option<String>,
    schema: Option<String>,
    from: Option<u64>,
    to: Option<u64>,
}

async fn history(
    State(state): State<AppState>,
    _: Caller,
    Path(id): Path<String>,
    Query(q): Query<HistoryQuery>,
) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let filter = HistoryFilter {
        kind: q.kind.as_deref().map(str::parse).transpose().map_err(ApiError::malformed)?,
        schema: q.schema,
        from: q.from,
        to: q.to,
    };
    let events = blocking(&state, move |k| k.history(id, &filter)).await?;
    Ok(Json(json!(events)))
}

async fn enabled(State(state): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let acts = blocking(&state, move |k| k.enabled_activities(id)).await?;
    Ok(Json(json!(acts)))
}

async fn pins(State(state): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let pins = blocking(&state, move |k| k.pin_report(id)).await?;
    Ok(Json(json!(pins)))
}

async fn outcome(
    State(state): State<AppState>,
    _: Caller,
    Path((id, schema, view)): Path<(String, String, String)>,
) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let (event, doc) = blocking(&state, move |k| k.get_outcome(id, &schema, &view)).await?;
    Ok(Json(json!({"event": event, "outcome": doc})))
}

async fn viewpoints(State(state): State<AppState>, _: Caller, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let views = blocking(&state, move |k| k.viewpoints(id)).await?;
    Ok(Json(json!(views)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FreezeView {
    schema: String,
    view: String,
}

async fn freeze_view(
    State(state): State<AppState>,
    _: Caller,
    Path(id): Path<String>,
    Body(req): Body<FreezeView>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = item_id(&id)?;
    let vp = blocking(&state, move |k| k.freeze_view(id, &req.schema, &req.view)).await?;
    Ok((StatusCode::CREATED, Json(json!(vp))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Transition {
    step_path: String,
    transition: String,
    #[serde(default)]
    outcome: Option<Value>,
}

async fn transition(
    State(state): State<AppState>,
    Caller(agent): Caller,
    Path(id): Path<String>,
    Body(req): Body<Transition>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = item_id(&id)?;
    let (event, _) = blocking(&state, move |k| {
        k.fire(&agent, id, &req.step_path, &req.transition, req.outcome)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!(event))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetProperty {
    value: Value,
}

async fn set_property(
    State(state): State<AppState>,
    Caller(agent): Caller,
    Path((id, name)): Path<(String, String)>,
    Body(req): Body<SetProperty>,
) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let item = blocking(&state, move |k| k.set_property(&agent, id, &name, req.value)).await?;
    Ok(Json(json!(item.view())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AssignSlot {
    member: ItemId,
}

async fn assign_slot(
    State(state): State<AppState>,
    Caller(agent): Caller,
    Path((id, collection, slot)): Path<(String, String, u32)>,
    Body(req): Body<AssignSlot>,
) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let item = blocking(&state, move |k| k.assign_slot(&agent, id, &collection, slot, req.member)).await?;
    Ok(Json(json!(item.view())))
}

async fn trace_upstream(
    State(state): State<AppState>,
    _: Caller,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let id = item_id(&id)?;
    let graph = blocking(&state, move |k| k.trace_upstream(id)).await?;
    Ok(Json(json!(graph)))
}

async fn worklist(State(state): State<AppState>, Caller(agent): Caller) -> ApiResult<Json<Value>> {
    let jobs = blocking(&state, move |k| Ok(k.worklist(&agent))).await?;
    Ok(Json(json!(jobs)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KindQuery {
    kind: Option<String>,
}

async fn list_descriptions(
    State(state): State<AppState>,
    _: Caller,
    Query(q): Query<KindQuery>,
) -> ApiResult<Json<Value>> {
    let kind = q.kind.as_deref().map(kind).transpose()?;
    let list = blocking(&state, move |k| Ok(k.list_descriptions(kind))).await?;
    Ok(Json(json!(list)))
}

async fn publish(
    State(state): State<AppState>,
    Caller(agent): Caller,
    Path((k, name)): Path<(String, String)>,
    Body(payload): Body<Value>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let kind = kind(&k)?;
    let forbid = state.forbid_breaking;
    let dv = blocking(&state, move |k| k.publish(&agent, kind, &name, &payload, forbid)).await?;
    Ok((StatusCode::CREATED, Json(json!(dv))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Batch {
    entries: Vec<PublishRequest>,
}

async fn publish_batch(
    State(state): State<AppState>,
    Caller(agent): Caller,
    Body(req): Body<Batch>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let forbid = state.forbid_breaking;
    let published = blocking(&state, move |k| k.publish_batch(&agent, &req.entries, forbid)).await?;
    Ok((StatusCode::CREATED, Json(json!(published))))
}

async fn list_versions(
    State(state): State<AppState>,
    _: Caller,
    Path((k, name)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let kind = kind(&k)?;
    let versions = blocking(&state, move |k| k.list_versions(kind, &name)).await?;
    Ok(Json(json!(versions)))
}

async fn get_description(
    State(state): State<AppState>,
    _: Caller,
    Path((k, name, version)): Path<(String, String, String)>,
) -> ApiResult<Json<Value>> {
    let kind = kind(&k)?;
    let version = match version.as_str() {
        "latest" => None,
        v => Some(
            v.parse::<u64>()
                .map_err(|_| ApiError::malformed(format!("`{v}` is neither a version number nor `latest`")))?,
        ),
    };
    let dv = blocking(&state, move |k| k.get_description(kind, &name, version)).await?;
    Ok(Json(json!(dv)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportProv {
    items: Vec<ItemId>,
}

async fn export_prov(
    State(state): State<AppState>,
    _: Caller,
    Body(req): Body<ExportProv>,
) -> ApiResult<Json<Value>> {
    let doc = blocking(&state, move |k| k.export_prov(&req.items)).await?;
    Ok(Json(doc.to_value()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Binding {
    path: String,
    item: ItemId,
}

async fn bind(
    State(state): State<AppState>,
    _: Caller,
    Body(req): Body<Binding>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let (path, item) = (req.path.clone(), req.item);
    blocking(&state, move |k| k.bind(&path, item)).await?;
    Ok((StatusCode::CREATED, Json(json!(req))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathQuery {
    path: Option<String>,
    prefix: Option<String>,
}

async fn resolve(State(state): State<AppState>, _: Caller, Query(q): Query<PathQuery>) -> ApiResult<Json<Value>> {
    match (q.path, q.prefix) {
        (Some(path), None) => {
            let p = path.clone();
            let item = blocking(&state, move |k| k.resolve(&p)).await?;
            Ok(Json(json!(Binding { path, item })))
        }
        (None, Some(prefix)) => {
            let found = blocking(&state, move |k| Ok(k.paths(&prefix))).await?;
            let list: Vec<Binding> = found.into_iter().map(|(path, item)| Binding { path, item }).collect();
            Ok(Json(json!(list)))
        }
        _ => Err(ApiError::malformed("give exactly one of `path` or `prefix`")),
    }
}
