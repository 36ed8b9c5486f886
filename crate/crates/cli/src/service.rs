//! HTTP inference API over an immutable checkpoint.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use arst_core::image_io::{decode_rgb, encode_png};
use arst_core::losses::{CONTENT_LAYERS, STYLE_LAYERS};
use arst_core::training::Checkpoint;
use arst_core::{Error, Model, Result};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::alpha::validate_alpha;
use crate::pipeline::{crop_header, random_alpha, stylize_image, NoiseRequest, SIZE_MULTIPLE};

/// Response header carrying the applied center crop as `x,y,width,height`.
pub const CROP_HEADER: &str = "x-arst-crop";
const LATENCY_WINDOW: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    pub max_side: u32,
    pub max_bytes: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            max_side: 1024,
            max_bytes: 16 << 20,
        }
    }
}

pub struct AppState {
    model: Model<f32>,
    checkpoint_id: String,
    iteration: u64,
    trained_size: usize,
    opts: ServeOptions,
    latencies: Mutex<VecDeque<f64>>,
}

impl AppState {
    pub fn new(checkpoint: Checkpoint, opts: ServeOptions) -> Result<Self> {
        Ok(Self {
            checkpoint_id: checkpoint.id()?,
            iteration: checkpoint.iteration,
            trained_size: checkpoint.config.image_size,
            model: checkpoint.model,
            opts,
            latencies: Mutex::new(VecDeque::with_capacity(LATENCY_WINDOW)),
        })
    }

    fn record(&self, ms: f64) {
        let mut l = self.latencies.lock().unwrap();
        if l.len() == LATENCY_WINDOW {
            l.pop_front();
        }
        l.push_back(ms);
    }

    /// Rolling mean latency in ms and the matching frames per second.
    fn rates(&self) -> (f64, f64) {
        let l = self.latencies.lock().unwrap();
        if l.is_empty() {
            return (0.0, 0.0);
        }
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        (mean, if mean > 0.0 { 1000.0 / mean } else { 0.0 })
    }
}

/// JSON error body with a stable `error` code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation(m) => Self::bad("invalid_request", m),
            Error::Image(e) => Self::bad("undecodable_image", e.to_string()),
            other => {
                log::error!("stylize failed: {other}");
                Self {
                    status: StatusCode::INTERNAL_SERVER_ERROR,
                    code: "internal",
                    message: other.to_string(),
                }
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({ "error": self.code, "message": self.message })),
        )
            .into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.opts.max_bytes;
    Router::new()
        .route("/api/info", get(info))
        .route("/api/metrics", get(metrics))
        .route("/api/stylize", post(stylize))
        .route("/api/randomize", post(randomize))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(
    listener: TcpListener,
    checkpoint: Checkpoint,
    opts: ServeOptions,
) -> Result<()> {
    let app = router(Arc::new(AppState::new(checkpoint, opts)?));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await?;
    Ok(())
}

async fn info(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (mean_latency_ms, fps) = s.rates();
    Json(json!({
        "style_layers": STYLE_LAYERS,
        "content_layers": CONTENT_LAYERS,
        "size": {
            "multiple_of": SIZE_MULTIPLE,
            "max_side": s.opts.max_side,
            "max_bytes": s.opts.max_bytes,
            "trained_size": s.trained_size,
        },
        "checkpoint_id": s.checkpoint_id,
        "iteration": s.iteration,
        "fps": fps,
        "mean_latency_ms": mean_latency_ms,
    }))
}

async fn metrics(State(s): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let (mean_latency_ms, fps) = s.rates();
    Json(json!({ "mean_latency_ms": mean_latency_ms, "fps": fps }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylizeParams {
    pub alpha_s: Vec<f64>,
    #[serde(default)]
    pub noise: Option<NoiseRequest>,
}

async fn stylize(
    State(s): State<Arc<AppState>>,
    mut form: Multipart,
) -> std::result::Result<Response, ApiError> {
    let mut image = None;
    let mut params = None;
    loop {
        let field = match form.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(multipart_error(e)),
        };
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(multipart_error)?;
        match name.as_str() {
            "image" => image = Some(data),
            "params" => params = Some(data),
            other => {
                return Err(ApiError::bad(
                    "unknown_field",
                    format!("unexpected form field {other:?}"),
                ))
            }
        }
    }
    let image =
        image.ok_or_else(|| ApiError::bad("missing_image", "form field \"image\" is required"))?;
    let params = params
        .ok_or_else(|| ApiError::bad("missing_params", "form field \"params\" is required"))?;
    let params: StylizeParams = serde_json::from_slice(&params)
        .map_err(|e| ApiError::bad("invalid_params", e.to_string()))?;
    validate_alpha(&params.alpha_s).map_err(|m| ApiError::bad("invalid_alpha", m))?;

    let state = s.clone();
    let started = Instant::now();
    let result = tokio::task::spawn_blocking(
        move || -> std::result::Result<(Vec<u8>, String), ApiError> {
            let img = decode_rgb(&image)?;
            let (w, h) = img.dimensions();
            if w.max(h) > state.opts.max_side {
                return Err(ApiError {
                    status: StatusCode::PAYLOAD_TOO_LARGE,
                    code: "image_too_large",
                    message: format!("{w}×{h} exceeds the {} pixel limit", state.opts.max_side),
                });
            }
            let out = stylize_image(&state.model, &img, &params.alpha_s, params.noise)?;
            Ok((encode_png(&out.image)?, crop_header(&out.crop)))
        },
    )
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        code: "internal",
        message: e.to_string(),
    })?;
    let (png, crop) = result?;
    s.record(started.elapsed().as_secs_f64() * 1000.0);
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::HeaderName::from_static(CROP_HEADER), crop),
        ],
        png,
    )
        .into_response())
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    let status = e.status();
    let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
        "payload_too_large"
    } else {
        "malformed_multipart"
    };
    ApiError {
        status,
        code,
        message: e.body_text(),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomizeRequest {
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct RandomizeResponse {
    alpha_s: Vec<f64>,
    noise_seed: u64,
}

/// Seeds without one are drawn below 2^53 so JSON clients keep them exact.
async fn randomize(body: Bytes) -> std::result::Result<Json<RandomizeResponse>, ApiError> {
    let req: RandomizeRequest = if body.iter().all(u8::is_ascii_whitespace) {
        RandomizeRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad("invalid_params", e.to_string()))?
    };
    let seed = req.seed.unwrap_or_else(|| rand::random::<u64>() >> 11);
    Ok(Json(RandomizeResponse {
        alpha_s: random_alpha(seed).style,
        noise_seed: seed,
    }))
}
