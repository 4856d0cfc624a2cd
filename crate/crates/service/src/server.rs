//! HTTP layer: routing, content negotiation, logging and startup.

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;

use crate::api::{self, ApiError, Kind, QueryRequest, BINARY_POINTS, SCHEMA_VERSION};
use crate::catalog::Catalog;
use crate::config::ServiceConfig;
use crate::error::StartupError;

pub const ELAPSED_HEADER: &str = "x-hypergrid-elapsed-us";

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    schema_version: u32,
    datasets: Vec<String>,
}

pub fn router(catalog: Arc<Catalog>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/{dataset}/{kind}", post(query))
        .layer(middleware::from_fn(log_request))
        .with_state(catalog)
}

async fn health(State(catalog): State<Arc<Catalog>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        schema_version: SCHEMA_VERSION,
        datasets: catalog.names(),
    })
}

fn parse_kind(s: &str) -> Option<Kind> {
    [
        Kind::Sample,
        Kind::Knn,
        Kind::Polytope,
        Kind::Kdboxes,
        Kind::DelaunayEdges,
        Kind::VoronoiCells,
    ]
    .into_iter()
    .find(|k| k.path() == s)
}

fn error_response(e: &ApiError) -> Response {
    let status = StatusCode::from_u16(e.status()).expect("valid status");
    (status, Json(e.body())).into_response()
}

fn wants_binary(headers: &HeaderMap) -> bool {
    headers
        .get_all(header::ACCEPT)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .any(|v| v.split(',').any(|t| t.trim().starts_with(BINARY_POINTS)))
}

async fn query(
    State(catalog): State<Arc<Catalog>>,
    Path((dataset, kind)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let Some(kind) = parse_kind(&kind) else {
        return error_response(&ApiError::NotFound(format!("unknown endpoint {kind:?}")));
    };
    let req: QueryRequest = if body.is_empty() {
        QueryRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return error_response(&ApiError::BadRequest(format!("malformed body: {e}"))),
        }
    };
    let binary = wants_binary(&headers);
    // Index queries are CPU-bound; keep them off the async workers.
    let out = tokio::task::spawn_blocking(move || {
        let t0 = Instant::now();
        let result = api::handle(&catalog, &dataset, kind, &req);
        let elapsed = t0.elapsed().as_micros();
        let resp = match result {
            Err(e) => error_response(&e),
            Ok(r) if binary && matches!(kind, Kind::Sample | Kind::Knn | Kind::Polytope) => {
                let ds = catalog.get(&dataset).expect("handled above");
                (
                    [(header::CONTENT_TYPE, BINARY_POINTS)],
                    Body::from(api::encode_points(ds, &r.points)),
                )
                    .into_response()
            }
            Ok(r) => Json(r).into_response(),
        };
        (resp, elapsed)
    })
    .await;
    match out {
        Ok((mut resp, elapsed)) => {
            resp.headers_mut().insert(
                ELAPSED_HEADER,
                HeaderValue::from_str(&elapsed.to_string()).expect("digits"),
            );
            resp
        }
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_owned();
    let t0 = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        target: "hypergrid::request",
        %method,
        %path,
        status = resp.status().as_u16(),
        elapsed_us = t0.elapsed().as_micros() as u64,
    );
    resp
}

/// Loads every dataset and binds the listen address.
pub async fn start(cfg: &ServiceConfig) -> Result<(TcpListener, Arc<Catalog>), StartupError> {
    let addr = cfg.listen_addr()?;
    let catalog = Catalog::load(cfg)?;
    let listener = bind(addr).await?;
    Ok((listener, Arc::new(catalog)))
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, StartupError> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| StartupError::Bind {
            addr: addr.to_string(),
            message: e.to_string(),
        })
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: TcpListener,
    catalog: Arc<Catalog>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(catalog))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Starts the service and runs it until Ctrl-C.
pub async fn run(cfg: &ServiceConfig) -> Result<(), StartupError> {
    let (listener, catalog) = start(cfg).await?;
    let addr = listener.local_addr().ok();
    tracing::info!(target: "hypergrid::service", ?addr, datasets = ?catalog.names(), "listening");
    serve(listener, catalog, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .map_err(|e| StartupError::Bind {
        addr: addr.map(|a| a.to_string()).unwrap_or_default(),
        message: e.to_string(),
    })
}
