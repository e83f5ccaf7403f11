//! HTTP service for interactive removal sessions.
//!
//! Scenes are uploaded once and addressed by an unguessable id; removals on
//! the same tile of a scene are serialized by a lock, training runs one at a
//! time as background jobs.

mod error;
mod state;

use std::collections::HashMap;
use std::io::Cursor;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use edgewipe::features::{extract_cfi, CannyParams, FeatureParams, PolygonAnnotation};
use edgewipe::imaging::{load_scene, slice_tiles, PadPolicy, TileCoord};
use edgewipe::metrics::{removal_reports, RegionKind};
use edgewipe::removal::{remove_object, RemovalMask};
use edgewipe::translate::{CheckpointMeta, LossRecord, TrainObserver, TranslatorCheckpoint, META_FILE};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use error::ApiError;
pub use state::{AppState, CheckpointCache, JobKind, JobState, JobStatus, RemovalStatus, SessionState};
use state::{RemovalRecord, Session};

use crate::config::Config;
use crate::pipeline::{train_on_scene, FeatureSource, TrainSpec};

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_upload_bytes;
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/scenes", post(upload_scene))
        .route("/scenes/{id}", get(get_session))
        .route("/scenes/{id}/tiles/{r}/{c}", get(get_tile))
        .route("/scenes/{id}/tiles/{r}/{c}/cfi", get(get_tile_cfi))
        .route("/scenes/{id}/removals", post(post_removal))
        .route("/checkpoints", get(list_checkpoints))
        .route("/checkpoints/train", post(post_train))
        .route("/removals/{id}", get(get_removal))
        .route("/removals/{id}/result", get(get_result_scene))
        .route("/removals/{id}/result/tile", get(get_result_tile))
        .route("/removals/{id}/result/cfi", get(get_result_cfi))
        .route("/removals/{id}/metrics", get(get_metrics))
        .route("/jobs/{id}", get(get_job))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Bind and serve until the process is interrupted.
pub async fn serve(config: Config) -> Result<(), crate::error::CliError> {
    let bind = config.bind.clone();
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(&bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

fn png_response<P: image::PixelWithColorType<Subpixel = u8>>(img: &image::ImageBuffer<P, Vec<u8>>) -> ApiResult<Response>
where
    [P::Subpixel]: image::EncodableLayout,
{
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], buf).into_response())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("InvalidRequest", e.to_string()))
}

fn upload_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    let mut err = ApiError::bad_request("InvalidUpload", e.body_text());
    err.status = e.status();
    err
}

#[derive(Serialize)]
struct UploadReply {
    scene_id: String,
    rows: u32,
    cols: u32,
    tile_size: u32,
    width: u32,
    height: u32,
    content_id: String,
}

async fn upload_scene(State(st): State<AppState>, mut multipart: Multipart) -> ApiResult<Response> {
    let mut bytes = None;
    let mut tile_size = st.config.tile_size;
    let mut pad = st.config.pad_policy;
    while let Some(field) = multipart.next_field().await.map_err(upload_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(upload_error)?;
        let text = || String::from_utf8_lossy(&data).trim().to_string();
        match name.as_str() {
            "image" => bytes = Some(data.clone()),
            "tile_size" => tile_size = text().parse().map_err(|_| ApiError::bad_request("InvalidUpload", format!("tile_size {:?}", text())))?,
            "pad_policy" => {
                pad = match text().as_str() {
                    "reflect" => PadPolicy::Reflect,
                    "zero" => PadPolicy::Zero,
                    other => return Err(ApiError::bad_request("InvalidUpload", format!("pad_policy {other:?}"))),
                }
            }
            _ => {}
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::bad_request("InvalidUpload", "missing multipart field \"image\""))?;
    let scene_id = uuid::Uuid::new_v4().to_string();
    let path = st.workspace.images_dir().join(format!("{scene_id}.upload"));
    let st2 = st.clone();
    let session = blocking(move || {
        std::fs::write(&path, &bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        let scene = load_scene(&path)?;
        let grid = slice_tiles(&scene, tile_size, pad)?;
        let now = Utc::now();
        let state = SessionState {
            session_id: scene_id.clone(),
            scene_id: scene_id.clone(),
            content_id: scene.id.clone(),
            grid: grid.meta.clone(),
            active_checkpoint_id: None,
            pending_removals: Vec::new(),
            completed_removals: Vec::new(),
            created_at: now,
            updated_at: now,
        };
        let session = Arc::new(Session { scene, grid, state: Mutex::new(state) });
        st2.sessions.write().expect("sessions poisoned").insert(scene_id, session.clone());
        Ok(session)
    })
    .await?;
    let s = session.state.lock().expect("session poisoned").clone();
    let reply = UploadReply {
        scene_id: s.scene_id,
        rows: s.grid.rows,
        cols: s.grid.cols,
        tile_size: s.grid.tile_size,
        width: s.grid.scene_width,
        height: s.grid.scene_height,
        content_id: s.content_id,
    };
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    let session = st.session(&id)?;
    let s = session.state.lock().expect("session poisoned").clone();
    Ok(Json(s))
}

fn session_tile(st: &AppState, id: &str, r: u32, c: u32) -> ApiResult<(Arc<Session>, TileCoord)> {
    let session = st.session(id)?;
    let coord = TileCoord::new(r, c);
    session.grid.meta.check(coord)?;
    Ok((session, coord))
}

async fn get_tile(State(st): State<AppState>, Path((id, r, c)): Path<(String, u32, u32)>) -> ApiResult<Response> {
    let (session, coord) = session_tile(&st, &id, r, c)?;
    png_response(&session.grid.tile(coord)?.pixels)
}

/// Canny parameters of a checkpoint, for CFI conditioning.
fn checkpoint_canny(meta: &CheckpointMeta) -> ApiResult<CannyParams> {
    match &meta.provenance.feature_params {
        FeatureParams::Canny(c) => Ok(*c),
        FeatureParams::Palette(_) => Err(edgewipe::Error::WrongFeatureKind { expected: "CFI", got: "SFI" }.into()),
    }
}

/// Resident checkpoint, or its metadata read from the workspace.
fn checkpoint_meta(st: &AppState, id: &str) -> ApiResult<(Option<Arc<TranslatorCheckpoint>>, CheckpointMeta)> {
    if let Some(ckpt) = st.checkpoints.lock().expect("cache poisoned").get(id) {
        let meta = ckpt.meta.clone();
        return Ok((Some(ckpt), meta));
    }
    let valid_id = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    let path = st.workspace.checkpoint_dir(id).join(META_FILE);
    if !valid_id || !path.is_file() {
        return Err(ApiError::not_found("UnknownCheckpoint", format!("no checkpoint {id}")));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| ApiError::internal(e.to_string()))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    Ok((None, meta))
}

async fn get_tile_cfi(State(st): State<AppState>, Path((id, r, c)): Path<(String, u32, u32)>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let (session, coord) = session_tile(&st, &id, r, c)?;
    let canny = match q.get("checkpoint_id") {
        Some(ck) => checkpoint_canny(&checkpoint_meta(&st, ck)?.1)?,
        None => st.config.canny,
    };
    let cfi = blocking(move || Ok(extract_cfi(session.grid.tile(coord)?, &canny)?)).await?;
    png_response(&cfi.data)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RemovalRequest {
    mask: RemovalMask,
    checkpoint_id: String,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn run_removal(session: &Session, mask: &RemovalMask, ckpt: &TranslatorCheckpoint) -> ApiResult<RemovalRecordOutput> {
    let canny = checkpoint_canny(&ckpt.meta)?;
    let result = remove_object(&session.scene, &session.grid, mask, ckpt, &canny)?;
    let reports = removal_reports(&session.scene, &result.forged_scene, mask, session.grid.meta.tile_size)?;
    Ok((Arc::new(result), reports))
}

type RemovalRecordOutput = (Arc<edgewipe::removal::ForgedResult>, Vec<edgewipe::metrics::SimilarityReport>);

fn finish_removal(st: &AppState, session: &Session, removal_id: &str, outcome: ApiResult<RemovalRecordOutput>) {
    let mut removals = st.removals.write().expect("removals poisoned");
    let Some(rec) = removals.get_mut(removal_id) else { return };
    match outcome {
        Ok((result, reports)) => {
            rec.state = JobState::Done;
            rec.result = Some(result);
            rec.reports = reports;
        }
        Err(e) => {
            rec.state = JobState::Failed;
            rec.error = Some(e);
        }
    }
    let failed = rec.state == JobState::Failed;
    drop(removals);
    session.touch(|s| {
        s.pending_removals.retain(|r| r != removal_id);
        if !failed {
            s.completed_removals.push(removal_id.to_string());
        }
    });
}

async fn post_removal(State(st): State<AppState>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let session = st.session(&id)?;
    let req: RemovalRequest = parse_body(&body)?;
    req.mask.validate_in(&session.grid)?;
    let key = headers.get("idempotency-key").map(|v| v.to_str().map(str::to_owned)).transpose().map_err(|_| ApiError::bad_request("InvalidRequest", "non-ASCII Idempotency-Key"))?;
    let body_digest = digest(&body);
    if let Some(k) = &key {
        if let Some((d, removal_id)) = st.idempotency.lock().expect("idempotency poisoned").get(&(id.clone(), k.clone())).cloned() {
            if d != body_digest {
                return Err(ApiError::unprocessable("IdempotencyKeyReused", format!("key {k} was used with a different request")));
            }
            let status = st.removals.read().expect("removals poisoned")[&removal_id].status();
            return Ok((StatusCode::OK, Json(status)).into_response());
        }
    }

    let (resident, meta) = checkpoint_meta(&st, &req.checkpoint_id)?;
    if meta.provenance.tile_size != session.grid.meta.tile_size {
        return Err(edgewipe::Error::CheckpointMismatch(format!(
            "checkpoint tile size {} but scene tiles are {}",
            meta.provenance.tile_size, session.grid.meta.tile_size
        ))
        .into());
    }
    checkpoint_canny(&meta)?;

    let coord = req.mask.tile_coord();
    let Some(lock) = st.lock_tile((id.clone(), coord.row, coord.col)) else {
        return Err(ApiError::conflict("TileBusy", format!("a removal is already running on tile ({}, {})", coord.row, coord.col)));
    };

    let removal_id = uuid::Uuid::new_v4().to_string();
    let mut record = RemovalRecord {
        removal_id: removal_id.clone(),
        scene_id: id.clone(),
        mask: req.mask.clone(),
        checkpoint_id: req.checkpoint_id.clone(),
        state: JobState::Running,
        job_id: None,
        result: None,
        reports: Vec::new(),
        error: None,
    };
    let job = resident.is_none().then(|| JobStatus::new(JobKind::Removal));
    if let Some(j) = &job {
        record.job_id = Some(j.job_id.clone());
        record.state = JobState::Queued;
        st.put_job(j.clone());
    }
    st.removals.write().expect("removals poisoned").insert(removal_id.clone(), record);
    if let Some(k) = key {
        st.idempotency.lock().expect("idempotency poisoned").insert((id.clone(), k), (body_digest, removal_id.clone()));
    }
    session.touch(|s| {
        s.pending_removals.push(removal_id.clone());
        s.active_checkpoint_id = Some(req.checkpoint_id.clone());
    });

    match resident {
        Some(ckpt) => {
            let (st2, session2, mask, rid) = (st.clone(), session.clone(), req.mask, removal_id.clone());
            let outcome = tokio::task::spawn_blocking(move || {
                let _lock = lock;
                let outcome = run_removal(&session2, &mask, &ckpt);
                finish_removal(&st2, &session2, &rid, outcome);
            })
            .await;
            if let Err(e) = outcome {
                return Err(ApiError::internal(format!("removal worker failed: {e}")));
            }
            let rec = st.removals.read().expect("removals poisoned")[&removal_id].clone();
            match &rec.error {
                Some(e) => Err(e.clone()),
                None => Ok((StatusCode::CREATED, Json(rec.status())).into_response()),
            }
        }
        None => {
            let job_id = job.expect("job created for non-resident checkpoint").job_id;
            let (st2, rid, ck, mask, jid) = (st.clone(), removal_id.clone(), req.checkpoint_id.clone(), req.mask, job_id.clone());
            tokio::task::spawn_blocking(move || {
                let _lock = lock;
                st2.update_job(&jid, |j| {
                    j.advance(JobState::Running);
                });
                if let Some(r) = st2.removals.write().expect("removals poisoned").get_mut(&rid) {
                    r.state = JobState::Running;
                }
                let outcome = st2.workspace.load_checkpoint(&ck).map_err(ApiError::from).and_then(|c| {
                    let c = Arc::new(c);
                    st2.checkpoints.lock().expect("cache poisoned").insert(c.clone());
                    run_removal(&session, &mask, &c)
                });
                let err = outcome.as_ref().err().map(|e| e.body.message.clone());
                finish_removal(&st2, &session, &rid, outcome);
                st2.update_job(&jid, |j| match err {
                    Some(m) => j.fail(m),
                    None => {
                        j.result = Some(json!({ "removal_id": rid }));
                        j.advance(JobState::Done);
                    }
                });
            });
            let status = st.removals.read().expect("removals poisoned")[&removal_id].status();
            Ok((StatusCode::ACCEPTED, Json(status)).into_response())
        }
    }
}

fn removal(st: &AppState, id: &str) -> ApiResult<RemovalRecord> {
    st.removals.read().expect("removals poisoned").get(id).cloned().ok_or_else(|| ApiError::not_found("UnknownRemoval", format!("no removal {id}")))
}

async fn get_removal(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<RemovalStatus>> {
    Ok(Json(removal(&st, &id)?.status()))
}

/// Finished removal, or the response to send while it is not.
fn finished(st: &AppState, id: &str) -> Result<RemovalRecord, Response> {
    let rec = removal(st, id).map_err(IntoResponse::into_response)?;
    match (&rec.error, rec.state) {
        (Some(e), _) => Err(e.clone().into_response()),
        (None, JobState::Done) => Ok(rec),
        _ => Err((StatusCode::ACCEPTED, Json(rec.status())).into_response()),
    }
}

fn result_png(st: &AppState, id: &str, part: fn(&edgewipe::removal::ForgedResult) -> ApiResult<Response>) -> Response {
    match finished(st, id) {
        Ok(rec) => part(rec.result.as_ref().expect("done removal has a result")).unwrap_or_else(IntoResponse::into_response),
        Err(r) => r,
    }
}

async fn get_result_scene(State(st): State<AppState>, Path(id): Path<String>) -> Response {
    result_png(&st, &id, |r| png_response(r.forged_scene.pixels()))
}

async fn get_result_tile(State(st): State<AppState>, Path(id): Path<String>) -> Response {
    result_png(&st, &id, |r| png_response(&r.output_tile.pixels))
}

async fn get_result_cfi(State(st): State<AppState>, Path(id): Path<String>) -> Response {
    result_png(&st, &id, |r| png_response(&r.edited_feature.data))
}

async fn get_metrics(State(st): State<AppState>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> Response {
    let rec = match finished(&st, &id) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let want = match q.get("region").map(String::as_str).unwrap_or("tile") {
        "full" | "full_image" => RegionKind::FullImage,
        "tile" => RegionKind::Tile,
        "masked" | "masked_region" => RegionKind::MaskedRegion,
        other => return ApiError::bad_request("InvalidRequest", format!("unknown region {other:?}")).into_response(),
    };
    match rec.reports.iter().find(|r| r.region == want) {
        Some(r) => Json(r.clone()).into_response(),
        None => ApiError::unprocessable("EmptyRegion", "the mask covers no pixels").into_response(),
    }
}

async fn get_job(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    st.jobs.lock().expect("jobs poisoned").get(&id).cloned().map(Json).ok_or_else(|| ApiError::not_found("UnknownJob", format!("no job {id}")))
}

#[derive(Serialize)]
struct CheckpointListing {
    checkpoint_id: String,
    tile_size: u32,
    feature_kind: edgewipe::features::FeatureKind,
    resident: bool,
}

async fn list_checkpoints(State(st): State<AppState>) -> ApiResult<Json<Vec<CheckpointListing>>> {
    let resident = st.checkpoints.lock().expect("cache poisoned").ids();
    let dir = st.workspace.checkpoints_dir();
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(&dir) {
        let mut ids: Vec<String> = rd.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect();
        ids.sort();
        for id in ids {
            if let Ok((_, meta)) = checkpoint_meta(&st, &id) {
                out.push(CheckpointListing {
                    resident: resident.contains(&id),
                    tile_size: meta.provenance.tile_size,
                    feature_kind: meta.provenance.feature_kind,
                    checkpoint_id: id,
                });
            }
        }
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    scene_id: String,
    #[serde(default)]
    feature: Option<String>,
    #[serde(default)]
    annotations: Vec<PolygonAnnotation>,
    #[serde(default)]
    spec: TrainSpec,
    #[serde(default)]
    tiles: Option<Vec<(u32, u32)>>,
}

struct JobProgress {
    state: AppState,
    job_id: String,
}

impl TrainObserver for JobProgress {
    fn on_step(&mut self, record: &LossRecord, total_steps: usize) {
        let p = (record.step + 1) as f64 / total_steps.max(1) as f64;
        self.state.update_job(&self.job_id, |j| j.set_progress(p.min(0.999)));
    }
}

async fn post_train(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: TrainRequest = parse_body(&body)?;
    let session = st.session(&req.scene_id)?;
    let source = match req.feature.as_deref().unwrap_or("cfi") {
        "cfi" | "CFI" => FeatureSource::Cfi(st.config.canny),
        "sfi" | "SFI" => FeatureSource::Sfi(req.annotations),
        other => return Err(ApiError::bad_request("InvalidRequest", format!("unknown feature {other:?}"))),
    };
    let spec = req.spec;
    spec.generator.validate()?;
    spec.discriminator.validate()?;
    spec.train.validate()?;
    let ts = session.grid.meta.tile_size;
    spec.generator.check_input(ts, ts)?;
    let only: Option<Vec<TileCoord>> = req.tiles.map(|v| v.into_iter().map(|(r, c)| TileCoord::new(r, c)).collect());
    if let Some(o) = &only {
        for c in o {
            session.grid.meta.check(*c)?;
        }
    }

    let job = JobStatus::new(JobKind::Train);
    let job_id = job.job_id.clone();
    st.put_job(job.clone());
    let st2 = st.clone();
    tokio::spawn(async move {
        let _permit = st2.train_gate.acquire().await.expect("training gate closed");
        st2.update_job(&job_id, |j| {
            j.advance(JobState::Running);
        });
        let (st3, jid) = (st2.clone(), job_id.clone());
        let pad = session.grid.meta.pad_policy;
        let outcome = tokio::task::spawn_blocking(move || -> edgewipe::Result<String> {
            let mut progress = JobProgress { state: st3.clone(), job_id: jid };
            let ckpt = train_on_scene(&session.scene, ts, pad, &source, only.as_deref(), &spec, &mut progress)?;
            let id = st3.workspace.store_checkpoint(&ckpt)?;
            st3.checkpoints.lock().expect("cache poisoned").insert(Arc::new(ckpt));
            session.touch(|s| s.active_checkpoint_id = Some(id.clone()));
            Ok(id)
        })
        .await;
        st2.update_job(&job_id, |j| match outcome {
            Ok(Ok(id)) => {
                j.result = Some(json!({ "checkpoint_id": id }));
                j.message = Some(format!("checkpoint {id}"));
                j.advance(JobState::Done);
            }
            Ok(Err(e)) => j.fail(e.to_string()),
            Err(e) => j.fail(format!("training worker failed: {e}")),
        });
    });
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}
