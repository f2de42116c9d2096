//! JSON-over-HTTP face of the portal service.
//!
//! Endpoints:
//! - `POST /register`        {"team": ...}
//! - `POST /submit`          {"team": ..., "track": ..., "scores_csv": ...}
//! - `GET  /board/{track}`
//! - `GET  /history/{team}`

use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use auscult::portal::{PortalError, PortalService, Track};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub type SharedService = Arc<Mutex<PortalService>>;

#[derive(Debug, Deserialize)]
struct RegisterBody {
    team: String,
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    team: String,
    track: Track,
    scores_csv: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    detail: String,
}

fn error_response(err: PortalError) -> Response {
    let (status, code) = match &err {
        PortalError::Rejected(_) => (StatusCode::UNPROCESSABLE_ENTITY, "rejected"),
        PortalError::TicketLimitExceeded { .. } => (StatusCode::TOO_MANY_REQUESTS, "ticket_limit"),
        PortalError::UnknownTeam(_) => (StatusCode::FORBIDDEN, "unknown_team"),
        PortalError::UnknownTrack(_) => (StatusCode::NOT_FOUND, "unknown_track"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    };
    (
        status,
        Json(ErrorBody {
            error: code.to_string(),
            detail: err.to_string(),
        }),
    )
        .into_response()
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

async fn register(State(service): State<SharedService>, Json(body): Json<RegisterBody>) -> Response {
    service.lock().expect("portal lock").register(&body.team);
    (StatusCode::OK, Json(serde_json::json!({"registered": body.team}))).into_response()
}

async fn submit(State(service): State<SharedService>, Json(body): Json<SubmitBody>) -> Response {
    let mut service = service.lock().expect("portal lock");
    match service.submit(&body.team, body.track, &body.scores_csv, now_ms()) {
        Ok(outcome) => (StatusCode::OK, Json(outcome)).into_response(),
        Err(err) => error_response(err),
    }
}

async fn board(State(service): State<SharedService>, Path(track): Path<String>) -> Response {
    let track: Track = match track.parse() {
        Ok(t) => t,
        Err(detail) => {
            return (
                StatusCode::NOT_FOUND,
                Json(ErrorBody {
                    error: "unknown_track".into(),
                    detail,
                }),
            )
                .into_response()
        }
    };
    let rows = service.lock().expect("portal lock").leaderboard(track);
    (StatusCode::OK, Json(rows)).into_response()
}

async fn history(State(service): State<SharedService>, Path(team): Path<String>) -> Response {
    let service = service.lock().expect("portal lock");
    let rows: Vec<_> = service.history(&team).into_iter().cloned().collect();
    (StatusCode::OK, Json(rows)).into_response()
}

pub fn router(service: PortalService) -> Router {
    let shared: SharedService = Arc::new(Mutex::new(service));
    Router::new()
        .route("/register", post(register))
        .route("/submit", post(submit))
        .route("/board/{track}", get(board))
        .route("/history/{team}", get(history))
        .with_state(shared)
}

pub async fn serve(service: PortalService, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    println!("portal listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service)).await?;
    Ok(())
}
