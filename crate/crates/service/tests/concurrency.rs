mod common;

use hypergrid_core::rng;
use hypergrid_core::BoundingBox;
use hypergrid_service::server::{bind, serve};
use rand::Rng;
use serde_json::json;

/// 100 simultaneous /sample requests over a real socket return exactly the
/// bytes of the same requests replayed one at a time.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_samples_equal_serial_replay() {
    let catalog = common::fixture_catalog();
    let listener = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, catalog, async {
        let _ = stopped.await;
    }));

    let mut r = rng::seeded(77);
    let bodies: Vec<String> = (0..100)
        .map(|_| {
            let lo: Vec<f64> = (0..3).map(|_| r.random_range(-3.0..1.0)).collect();
            let hi: Vec<f64> = lo.iter().map(|x| x + r.random_range(0.5..4.0)).collect();
            let n: usize = r.random_range(1..6000);
            json!({"box": BoundingBox::new(lo, hi).unwrap(), "n": n}).to_string()
        })
        .collect();

    let client = reqwest::Client::new();
    let url = format!("http://{addr}/v1/fixture/sample");
    let send = |body: String| {
        let req = client.post(&url).body(body);
        async move {
            let resp = req.send().await.unwrap();
            assert_eq!(resp.status(), 200);
            resp.bytes().await.unwrap().to_vec()
        }
    };
    let concurrent = futures::future::join_all(bodies.iter().cloned().map(send)).await;
    let mut serial = Vec::new();
    for b in &bodies {
        serial.push(send(b.clone()).await);
    }
    assert_eq!(concurrent, serial);
    let distinct: std::collections::BTreeSet<&Vec<u8>> = serial.iter().collect();
    assert!(distinct.len() > 90);

    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}
