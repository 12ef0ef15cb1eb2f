use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};
use std::time::SystemTime;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cg3d::encoders::Cg3dModel;
use cg3d::geometry::{decode_any, SceneCloud, PCLD_MAGIC};
use cg3d::inference::{cluster_scene, scene_query, ClusterSet, RankedCluster};
use cg3d::Error;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock as AsyncRwLock;

pub const DEFAULT_MAX_POINTS: usize = 2_000_000;

/// Upper bound on upload size: generous for `.xyz` text at the point cap.
const BYTES_PER_POINT: usize = 96;

#[derive(Debug)]
pub struct Session {
    pub scene_id: String,
    pub scene: SceneCloud,
    pub clusters: Option<ClusterSet>,
    pub created_at: SystemTime,
}

pub struct AppState {
    model: Arc<Cg3dModel<f32>>,
    sessions: RwLock<HashMap<String, Arc<AsyncRwLock<Session>>>>,
    next_id: AtomicU64,
    max_points: usize,
}

impl AppState {
    pub fn new(model: Cg3dModel<f32>, max_points: usize) -> Arc<Self> {
        Arc::new(Self {
            model: Arc::new(model),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            max_points,
        })
    }

    fn session(&self, id: &str) -> Result<Arc<AsyncRwLock<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene `{id}`")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn unprocessable(e: Error) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.max_points.saturating_mul(BYTES_PER_POINT).max(1 << 20);
    Router::new()
        .route("/healthz", get(healthz))
        .route("/scenes", post(upload))
        .route("/scenes/{id}/cluster", post(cluster))
        .route("/scenes/{id}/query", post(query))
        .route("/scenes/{id}/points", get(points))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// Point count announced by a binary header, if the body is binary.
fn declared_points(body: &[u8]) -> Option<usize> {
    (body.starts_with(PCLD_MAGIC) && body.len() >= 12)
        .then(|| u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize)
}

async fn upload(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let too_many = |n: usize| {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("{n} points exceeds the limit of {}", st.max_points),
        )
    };
    if let Some(n) = declared_points(&body).filter(|&n| n > st.max_points) {
        return Err(too_many(n));
    }
    let pc = decode_any(&body).map_err(|e| match e {
        Error::Format { offset, message } => ApiError {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": message, "offset": offset }),
        },
        other => ApiError::new(StatusCode::BAD_REQUEST, other.to_string()),
    })?;
    if pc.len() > st.max_points {
        return Err(too_many(pc.len()));
    }
    let scene_id = format!("scene-{}", st.next_id.fetch_add(1, Ordering::Relaxed));
    let n_points = pc.len();
    let session = Session {
        scene_id: scene_id.clone(),
        scene: SceneCloud::new(pc.points),
        clusters: None,
        created_at: SystemTime::now(),
    };
    st.sessions
        .write()
        .expect("session map poisoned")
        .insert(scene_id.clone(), Arc::new(AsyncRwLock::new(session)));
    Ok(Json(json!({ "scene_id": scene_id, "n_points": n_points })))
}

#[derive(Debug, Clone, Deserialize)]
pub struct ClusterRequest {
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub strip_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub min: [f32; 3],
    pub max: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub index: usize,
    pub size: usize,
    pub centroid: [f64; 3],
    pub bbox: Bbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResponse {
    pub scene_id: String,
    pub k: usize,
    pub n_clustered: usize,
    pub clusters: Vec<ClusterSummary>,
}

pub fn summarize(scene_id: &str, scene: &SceneCloud, set: &ClusterSet) -> ClusterResponse {
    let c = &set.clustering;
    let sizes = c.sizes();
    ClusterResponse {
        scene_id: scene_id.to_string(),
        k: c.k,
        n_clustered: c.kept.len(),
        clusters: (0..c.k)
            .map(|i| {
                let (min, max) = c.bbox(scene, i);
                ClusterSummary {
                    index: i,
                    size: sizes[i],
                    centroid: c.centroids[i],
                    bbox: Bbox { min, max },
                }
            })
            .collect(),
    }
}

async fn cluster(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<ClusterRequest>,
) -> Result<Json<ClusterResponse>, ApiError> {
    let session = st.session(&id)?;
    let guard = session.write_owned().await;
    let model = st.model.clone();
    let (mut guard, result) = tokio::task::spawn_blocking(move || {
        let r = cluster_scene(&guard.scene, req.k, req.seed, req.strip_floor, &model);
        (guard, r)
    })
    .await
    .map_err(ApiError::internal)?;
    let set = result.map_err(ApiError::unprocessable)?;
    let summary = summarize(&guard.scene_id, &guard.scene, &set);
    guard.clusters = Some(set);
    Ok(Json(summary))
}

#[derive(Debug, Clone, Deserialize)]
pub struct QueryRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub query: String,
    pub results: Vec<RankedCluster>,
}

async fn query(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<QueryRequest>,
) -> Result<Json<QueryResponse>, ApiError> {
    let session = st.session(&id)?;
    let guard = session.read_owned().await;
    if guard.clusters.is_none() {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("scene `{id}` has not been clustered")));
    }
    let model = st.model.clone();
    let text = req.text.clone();
    let results = tokio::task::spawn_blocking(move || {
        let set = guard.clusters.as_ref().expect("checked above");
        scene_query(set, &text, &model)
    })
    .await
    .map_err(ApiError::internal)?
    .map_err(ApiError::unprocessable)?;
    Ok(Json(QueryResponse { query: req.text, results }))
}

#[derive(Debug, Clone, Deserialize)]
pub struct PointsQuery {
    pub cluster: usize,
    #[serde(default)]
    pub coords: u8,
}

async fn points(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<PointsQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let session = st.session(&id)?;
    let guard = session.read().await;
    let set = guard
        .clusters
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("scene `{id}` has no clusters yet")))?;
    if q.cluster >= set.clustering.k {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("cluster {} out of range for k = {}", q.cluster, set.clustering.k),
        ));
    }
    let members = set.clustering.members(q.cluster);
    Ok(Json(if q.coords != 0 {
        json!(members.iter().map(|&i| guard.scene.points[i]).collect::<Vec<_>>())
    } else {
        json!(members)
    }))
}
