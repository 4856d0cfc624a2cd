mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use hypergrid_core::knn::knn_search_with_stats;
use hypergrid_core::{BoundingBox, Halfspace, PointSet, Polytope};
use hypergrid_service::api::{
    CellRecord, ErrorBody, PointRecord, Stats, BINARY_POINTS, SCHEMA_VERSION,
};
use hypergrid_service::server::{router, ELAPSED_HEADER};
use hypergrid_service::{Catalog, Dataset, Kind, QueryRequest, QueryResponse, ServiceConfig};
use serde_json::json;
use tower::ServiceExt;

use common::{fixture_catalog, fixture_dataset, FIXTURE_N};

struct Reply {
    status: StatusCode,
    content_type: String,
    elapsed: Option<String>,
    body: Vec<u8>,
}

async fn call(catalog: &Arc<Catalog>, path: &str, body: Option<String>, accept: Option<&str>) -> Reply {
    let mut req = Request::builder().uri(path);
    req = if body.is_some() { req.method("POST") } else { req.method("GET") };
    if let Some(a) = accept {
        req = req.header(header::ACCEPT, a);
    }
    let req = req.body(Body::from(body.unwrap_or_default())).unwrap();
    let resp = router(catalog.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let content_type = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let elapsed = resp
        .headers()
        .get(ELAPSED_HEADER)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply {
        status,
        content_type,
        elapsed,
        body,
    }
}

async fn post(catalog: &Arc<Catalog>, kind: &str, body: serde_json::Value) -> Reply {
    call(catalog, &format!("/v1/fixture/{kind}"), Some(body.to_string()), None).await
}

/// Point rows built straight from the point set, independently of the service.
fn rows(ps: &PointSet, ids: &[usize]) -> Vec<PointRecord> {
    ids.iter()
        .map(|&id| PointRecord {
            id,
            coords: vec![ps.coord(id, 0), ps.coord(id, 1), ps.coord(id, 2)],
            scalar: Some(ps.targets().unwrap()[id]),
            distance: None,
        })
        .collect()
}

fn response(kind: Kind) -> QueryResponse {
    QueryResponse {
        schema_version: SCHEMA_VERSION,
        kind,
        dataset: "fixture".into(),
        points: vec![],
        boxes: None,
        edges: None,
        cells: None,
        seeds: None,
        stats: Stats::default(),
    }
}

fn dataset(catalog: &Catalog) -> &Dataset {
    catalog.get("fixture").unwrap()
}

fn global_grid_box(ds: &Dataset) -> BoundingBox {
    let b = ds.points.bounding_box().unwrap();
    BoundingBox::new(b.lo[..3].to_vec(), b.hi[..3].to_vec()).unwrap()
}

#[tokio::test]
async fn health_lists_datasets() {
    let cat = fixture_catalog();
    let r = call(&cat, "/health", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    let v: serde_json::Value = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["datasets"], json!(["fixture"]));
}

#[tokio::test]
async fn sample_returns_first_layer_on_fixture() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    assert_eq!(ds.points.len(), FIXTURE_N);
    let b = global_grid_box(ds);
    let r = post(&cat, "sample", json!({"box": b, "n": 1024})).await;
    assert_eq!(r.status, StatusCode::OK);
    assert!(r.elapsed.is_some());
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(resp.points.len(), 1024);
    assert!(resp.points.iter().all(|p| ds.grid.layer_of(p.id) == 1));
    let layer1 = (0..FIXTURE_N).filter(|&i| ds.grid.layer_of(i) == 1).count();
    assert_eq!(layer1, 1024);
    assert_eq!(resp.stats.returned, 1024);
    assert!(resp.stats.examined >= resp.stats.returned);
}

#[tokio::test]
async fn sample_matches_direct_call_bytes() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let b = BoundingBox::new(vec![-1.0, -1.0, -1.0], vec![1.5, 0.5, 1.0]).unwrap();
    for n in [1, 200, 5000] {
        let r = post(&cat, "sample", json!({"box": b, "n": n})).await;
        let s = ds.grid.sample_box(&ds.points, &b, n).unwrap();
        let mut want = response(Kind::Sample);
        want.points = rows(&ds.points, &s.ids);
        want.stats = Stats {
            examined: s.examined,
            returned: s.ids.len(),
        };
        assert_eq!(r.body, serde_json::to_vec(&want).unwrap(), "n = {n}");
        // Determinism: the same request yields the same bytes.
        let again = post(&cat, "sample", json!({"box": b, "n": n})).await;
        assert_eq!(again.body, r.body);
    }
    let far = BoundingBox::new(vec![100.0; 3], vec![101.0; 3]).unwrap();
    let r = post(&cat, "sample", json!({"box": far, "n": 10})).await;
    assert_eq!(r.status, StatusCode::OK);
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert!(resp.points.is_empty());
}

#[tokio::test]
async fn knn_matches_direct_call_bytes() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let q = vec![0.3, -0.2, 0.1, 0.4];
    let r = post(&cat, "knn", json!({"point": q, "k": 7})).await;
    let (list, st) = knn_search_with_stats(&ds.kd, &ds.points, &q, 7).unwrap();
    let mut want = response(Kind::Knn);
    want.points = rows(&ds.points, &list.ids());
    for (p, nb) in want.points.iter_mut().zip(&list.entries) {
        p.distance = Some(nb.distance);
    }
    want.stats = Stats {
        examined: st.points_examined,
        returned: 7,
    };
    assert_eq!(r.body, serde_json::to_vec(&want).unwrap());

    let at = ds.points.point(1234);
    let r = post(&cat, "knn", json!({"point": at, "k": 1})).await;
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(resp.points[0].id, 1234);
    assert_eq!(resp.points[0].distance, Some(0.0));
}

#[tokio::test]
async fn polytope_matches_direct_call_bytes() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let poly = Polytope::new(vec![
        Halfspace {
            normal: vec![1.0, 0.0, 0.0, 0.0],
            offset: 0.5,
        },
        Halfspace {
            normal: vec![-1.0, 1.0, 0.0, 0.0],
            offset: 1.0,
        },
        Halfspace {
            normal: vec![0.0, 0.0, 1.0, 1.0],
            offset: 0.0,
        },
    ])
    .unwrap();
    let r = post(&cat, "polytope", json!({"polytope": poly})).await;
    assert_eq!(r.status, StatusCode::OK);
    let res = ds.kd.query_polytope(&ds.points, &poly).unwrap();
    let ids = hypergrid_core::kdtree::full_scan(&ds.points, &poly);
    let mut want = response(Kind::Polytope);
    want.points = rows(&ds.points, &ids);
    want.stats = Stats {
        examined: res.stats.tested + res.stats.wholesale,
        returned: ids.len(),
    };
    assert_eq!(r.body, serde_json::to_vec(&want).unwrap());
}

#[tokio::test]
async fn polytope_over_cap_is_rejected() {
    let cat = Arc::new(Catalog::new(
        10_000,
        vec![fixture_dataset("fixture", 100_000, &[])],
    ));
    let whole = Polytope::from_box(&BoundingBox::new(vec![-1e9; 4], vec![1e9; 4]).unwrap());
    let r = post(&cat, "polytope", json!({"polytope": whole})).await;
    assert_eq!(r.status, StatusCode::PAYLOAD_TOO_LARGE);
    let e: ErrorBody = serde_json::from_slice(&r.body).unwrap();
    let info = e.stats.unwrap();
    assert_eq!((info.cap, info.returned), (10_000, 100_000));
}

#[tokio::test]
async fn kdboxes_levels_and_containment() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let b = ds.points.bounding_box().unwrap();
    let r = post(&cat, "kdboxes", json!({"box": b, "n": 1})).await;
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    let boxes = resp.boxes.unwrap();
    assert_eq!(boxes.len(), 1);
    assert_eq!(boxes[0].bbox, ds.kd.root().bbox);
    assert_eq!(boxes[0].population, FIXTURE_N);

    let small = BoundingBox::new(vec![-0.5, -0.5, -0.5], vec![0.5, 0.5, 0.5]).unwrap();
    let r = post(&cat, "kdboxes", json!({"box": small, "n": 20})).await;
    let mut want = response(Kind::Kdboxes);
    let mut lifted = BoundingBox::unbounded(4);
    lifted.lo[..3].copy_from_slice(&small.lo);
    lifted.hi[..3].copy_from_slice(&small.hi);
    let nodes = ds.kd.subtree_at_depth(&lifted, 20).unwrap();
    want.stats = Stats {
        examined: nodes.len(),
        returned: nodes.len(),
    };
    assert!(nodes.len() >= 20 || nodes.iter().all(|n| n.level == ds.kd.levels()));
    assert!(nodes.iter().all(|n| n.bbox.intersects(&lifted)));
    want.boxes = Some(nodes);
    assert_eq!(r.body, serde_json::to_vec(&want).unwrap());
}

#[tokio::test]
async fn delaunay_ladder_escalates() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let b = ds.points.bounding_box().unwrap();
    let coarse = ds.ladder[0].edges_in_box(&b).unwrap().len();
    assert!(coarse > 0);

    let r = post(&cat, "delaunay_edges", json!({"box": b, "min_edges": coarse})).await;
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(resp.seeds, Some(50));
    assert_eq!(resp.edges.as_ref().unwrap().len(), coarse);

    let r = post(&cat, "delaunay_edges", json!({"box": b, "min_edges": coarse + 1})).await;
    let resp: QueryResponse = serde_json::from_slice(&r.body).unwrap();
    assert_eq!(resp.seeds, Some(500));
    let fine = &ds.ladder[1];
    let sid = fine.seed_ids();
    let mut want: Vec<[usize; 2]> = fine
        .edges_in_box(&b)
        .unwrap()
        .into_iter()
        .map(|(a, c)| {
            let (x, y) = (sid[a as usize], sid[c as usize]);
            [x.min(y), x.max(y)]
        })
        .collect();
    want.sort_unstable();
    assert_eq!(resp.edges.unwrap(), want);
    assert!(resp.points.iter().all(|p| sid.binary_search(&p.id).is_ok()));
}

#[tokio::test]
async fn voronoi_cells_match_index() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let b = BoundingBox::new(vec![-1.0; 3], vec![1.0, 1.0, 1.0]).unwrap();
    let r = post(&cat, "voronoi_cells", json!({"box": b, "level": 1})).await;
    assert_eq!(r.status, StatusCode::OK);
    let idx = &ds.ladder[1];
    let mut lifted = BoundingBox::unbounded(4);
    lifted.lo[..3].copy_from_slice(&b.lo);
    lifted.hi[..3].copy_from_slice(&b.hi);
    let cells: Vec<CellRecord> = idx
        .cells_in_box(&lifted)
        .unwrap()
        .into_iter()
        .map(|c| CellRecord {
            cell: c,
            seed_id: idx.seed_ids()[c],
            volume: idx.volumes().volume(c),
            members: idx.members(c).iter().map(|&m| m as usize).collect(),
        })
        .collect();
    assert!(!cells.is_empty());
    let mut want = response(Kind::VoronoiCells);
    want.points = rows(
        &ds.points,
        &cells.iter().map(|c| c.seed_id).collect::<Vec<_>>(),
    );
    want.seeds = Some(500);
    want.stats = Stats {
        examined: 500,
        returned: cells.len(),
    };
    want.cells = Some(cells);
    assert_eq!(r.body, serde_json::to_vec(&want).unwrap());

    let r = post(&cat, "voronoi_cells", json!({"box": b, "level": 2})).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn binary_points_follow_accept_header() {
    let cat = fixture_catalog();
    let ds = dataset(&cat);
    let body = json!({"box": global_grid_box(ds), "n": 3000}).to_string();
    let js = call(&cat, "/v1/fixture/sample", Some(body.clone()), None).await;
    let bin = call(&cat, "/v1/fixture/sample", Some(body), Some(BINARY_POINTS)).await;
    assert_eq!(bin.status, StatusCode::OK);
    assert_eq!(bin.content_type, BINARY_POINTS);
    let resp: QueryResponse = serde_json::from_slice(&js.body).unwrap();
    let ps = PointSet::read_binary(bin.body.as_slice()).unwrap();
    assert_eq!(ps.len(), resp.points.len());
    assert_eq!(ps.dim(), 4);
    for (i, p) in resp.points.iter().enumerate() {
        assert_eq!(ps.coord(i, 0), p.id as f64);
        assert_eq!(&ps.point(i)[1..], p.coords.as_slice());
        assert_eq!(ps.targets().unwrap()[i], p.scalar.unwrap());
    }
}

#[tokio::test]
async fn request_errors() {
    let cat = fixture_catalog();
    let bad_box = json!({"box": {"lo": [1.0, 0.0, 0.0], "hi": [0.0, 1.0, 1.0]}, "n": 5});
    assert_eq!(post(&cat, "sample", bad_box).await.status, StatusCode::BAD_REQUEST);
    let two_d = json!({"box": {"lo": [0.0, 0.0], "hi": [1.0, 1.0]}, "n": 5});
    assert_eq!(post(&cat, "sample", two_d).await.status, StatusCode::BAD_REQUEST);
    let missing = post(&cat, "sample", json!({"n": 5})).await;
    assert_eq!(missing.status, StatusCode::BAD_REQUEST);
    let e: ErrorBody = serde_json::from_slice(&missing.body).unwrap();
    assert!(e.error.contains("box"));
    let zero = json!({"box": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]}, "n": 0});
    assert_eq!(post(&cat, "sample", zero).await.status, StatusCode::BAD_REQUEST);
    let r = call(&cat, "/v1/fixture/sample", Some("{not json".into()), None).await;
    assert_eq!(r.status, StatusCode::BAD_REQUEST);
    let unknown_field = json!({"box": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]}, "n": 1, "bogus": 1});
    assert_eq!(post(&cat, "sample", unknown_field).await.status, StatusCode::BAD_REQUEST);
    let wrong_version = json!({"schema_version": 9, "box": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]}, "n": 1});
    assert_eq!(post(&cat, "sample", wrong_version).await.status, StatusCode::BAD_REQUEST);
    let wrong_kind = json!({"kind": "knn", "box": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]}, "n": 1});
    assert_eq!(post(&cat, "sample", wrong_kind).await.status, StatusCode::BAD_REQUEST);
    let knn_dim = json!({"point": [0.0, 1.0], "k": 1});
    assert_eq!(post(&cat, "knn", knn_dim).await.status, StatusCode::BAD_REQUEST);

    let q = json!({"box": {"lo": [0.0, 0.0, 0.0], "hi": [1.0, 1.0, 1.0]}, "n": 1}).to_string();
    let r = call(&cat, "/v1/nope/sample", Some(q.clone()), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    let r = call(&cat, "/v1/fixture/teleport", Some(q), None).await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
}

#[test]
fn request_schema_round_trips() {
    let req = QueryRequest {
        schema_version: Some(1),
        kind: Some(Kind::DelaunayEdges),
        bbox: Some(BoundingBox::new(vec![0.0], vec![1.0]).unwrap()),
        min_edges: Some(3),
        ..Default::default()
    };
    let text = serde_json::to_string(&req).unwrap();
    assert_eq!(
        text,
        r#"{"schema_version":1,"kind":"delaunay_edges","box":{"lo":[0.0],"hi":[1.0]},"min_edges":3}"#
    );
    assert_eq!(serde_json::from_str::<QueryRequest>(&text).unwrap(), req);
}

#[test]
fn startup_names_missing_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.hgps");
    common::fixture_points(2000)
        .save(&data, hypergrid_core::dataset::Format::Binary)
        .unwrap();
    let text = r#"
        listen = "127.0.0.1:0"
        row_cap = 500

        [[dataset]]
        name = "d"
        path = "d.hgps"
        kd_index = "d.hgkd"
    "#;
    let cfg = ServiceConfig::from_toml(text, dir.path()).unwrap();
    assert_eq!(cfg.row_cap, 500);
    let err = Catalog::load(&cfg).err().expect("missing sidecar");
    assert!(err.to_string().contains("d.hgkd"), "{err}");

    // Without the sidecar line the tree is built at startup.
    let cfg = ServiceConfig::from_toml(&text.replace("kd_index = \"d.hgkd\"", ""), dir.path()).unwrap();
    let cat = Catalog::load(&cfg).unwrap();
    assert_eq!(cat.names(), vec!["d".to_string()]);

    assert!(ServiceConfig::from_toml("listen = 3", dir.path()).is_err());
    assert!(ServiceConfig::from_toml("unknown_key = 1", dir.path()).is_err());
    let dup = "[[dataset]]\nname = \"a\"\npath = \"x\"\n[[dataset]]\nname = \"a\"\npath = \"y\"\n";
    assert!(ServiceConfig::from_toml(dup, dir.path()).is_err());
}
