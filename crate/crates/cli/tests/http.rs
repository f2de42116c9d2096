//! Portal HTTP layer, driven in-process through the router.

use std::collections::{BTreeMap, HashMap};

use auscult::portal::{PortalService, Track, TrackSetup};
use auscult_cli::http::router;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tower::ServiceExt;

fn test_service() -> PortalService {
    let files: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
    let labels: HashMap<String, bool> = files
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i < 2))
        .collect();
    let mut tracks = BTreeMap::new();
    tracks.insert(Track::Cough, TrackSetup::new(files, labels).unwrap());
    PortalService::new(tracks, 15)
}

fn json_request(uri: &str, body: serde_json::Value) -> Request<Body> {
    Request::builder()
        .method("POST")
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn body_json(response: axum::response::Response) -> serde_json::Value {
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

#[tokio::test]
async fn submit_board_history_roundtrip() {
    let app = router(test_service());

    let res = app
        .clone()
        .oneshot(json_request("/register", serde_json::json!({"team": "alpha"})))
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);

    let csv = "file_id,score\nf0,1.000000\nf1,1.000000\nf2,0.000000\nf3,0.000000\n";
    let res = app
        .clone()
        .oneshot(json_request(
            "/submit",
            serde_json::json!({"team": "alpha", "track": "cough", "scores_csv": csv}),
        ))
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let outcome = body_json(res).await;
    assert_eq!(outcome["result"]["auc"].as_f64().unwrap(), 1.0);
    assert_eq!(outcome["ticket"].as_u64().unwrap(), 1);

    let res = app
        .clone()
        .oneshot(Request::get("/board/cough").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    let board = body_json(res).await;
    assert_eq!(board[0]["team"].as_str().unwrap(), "alpha");
    assert_eq!(board[0]["rank"].as_u64().unwrap(), 1);

    let res = app
        .clone()
        .oneshot(Request::get("/history/alpha").body(Body::empty()).unwrap())
        .await
        .unwrap();
    let history = body_json(res).await;
    assert_eq!(history.as_array().unwrap().len(), 1);
    // board output never carries label data, only aggregate metrics
    assert!(!board.to_string().contains("\"label\""));
}

#[tokio::test]
async fn http_errors_carry_status_codes() {
    let app = router(test_service());

    // unknown team
    let res = app
        .clone()
        .oneshot(json_request(
            "/submit",
            serde_json::json!({"team": "ghost", "track": "cough", "scores_csv": "file_id,score\n"}),
        ))
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::FORBIDDEN);

    // malformed submission
    app.clone()
        .oneshot(json_request("/register", serde_json::json!({"team": "a"})))
        .await
        .unwrap();
    let res = app
        .clone()
        .oneshot(json_request(
            "/submit",
            serde_json::json!({"team": "a", "track": "cough", "scores_csv": "not a csv"}),
        ))
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::UNPROCESSABLE_ENTITY);
    let body = body_json(res).await;
    assert_eq!(body["error"].as_str().unwrap(), "rejected");

    // unknown track in the path
    let res = app
        .clone()
        .oneshot(Request::get("/board/humming").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::NOT_FOUND);

    // unconfigured (but valid) track
    let res = app
        .clone()
        .oneshot(json_request(
            "/submit",
            serde_json::json!({"team": "a", "track": "speech", "scores_csv": "file_id,score\n"}),
        ))
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::NOT_FOUND);
}
