use std::path::{Path, PathBuf};
use std::process::Command;

use hypergrid_core::cluster::{build_bst, cell_densities, merge_basins, DensityMode};
use hypergrid_core::dataset::{
    fit_pca, fit_whitening, generate_mixture, random_components, Format,
};
use hypergrid_core::estimate::{estimate_all, evaluate_estimator, Comparison, FitConfig, ReferenceSet};
use hypergrid_core::kdtree::{full_scan, KdTree};
use hypergrid_core::knn::knn_search;
use hypergrid_core::layered_grid::LayeredGridIndex;
use hypergrid_core::voronoi::{VoronoiIndex, VoronoiParams};
use hypergrid_core::{BoundingBox, Halfspace, PointSet, Polytope};

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn hypergrid(dir: &Path, args: &[&str]) -> Out {
    let o = Command::new(env!("CARGO_BIN_EXE_hypergrid"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    Out {
        code: o.status.code().unwrap(),
        stdout: String::from_utf8(o.stdout).unwrap(),
        stderr: String::from_utf8(o.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = hypergrid(dir, args);
    assert_eq!(o.code, 0, "{args:?}: {}", o.stderr);
    o.stdout
}

/// CSV body rows, header skipped.
fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

/// A labeled, targeted 4-D dataset written through the CLI.
fn dataset(dir: &Path) -> (PathBuf, PointSet) {
    ok(dir, &["generate", "--n", "6000", "--dim", "4", "--components", "3", "--seed", "7", "-o", "d.hgps"]);
    let path = dir.join("d.hgps");
    (path.clone(), PointSet::load(&path, Format::Binary).unwrap())
}

#[test]
fn generate_is_deterministic_and_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["generate", "--n", "100000", "--dim", "5", "--components", "3", "--seed", "7"];
    ok(d, &[&args[..], &["-o", "a.hgps"]].concat());
    ok(d, &[&args[..], &["-o", "b.hgps"]].concat());
    let a = std::fs::read(d.join("a.hgps")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b.hgps")).unwrap());

    let comps = random_components(7, 3, 5, 4.0).unwrap();
    let ps = generate_mixture(7, 100_000, 5, &comps, 0.01).unwrap();
    let mut want = Vec::new();
    ps.write_binary(&mut want).unwrap();
    assert_eq!(a, want);

    ok(d, &["generate", "--n", "100000", "--dim", "5", "--seed", "8", "-o", "c.hgps"]);
    assert_ne!(a, std::fs::read(d.join("c.hgps")).unwrap());
}

#[test]
fn import_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, ps) = dataset(d);
    ok(d, &["import", "d.hgps", "-o", "d.csv"]);
    ok(d, &["import", "d.csv", "-o", "e.hgps"]);
    let back = PointSet::load(d.join("e.hgps"), Format::Binary).unwrap();
    assert_eq!(back, ps);
}

#[test]
fn transforms_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, ps) = dataset(d);
    let out = ok(d, &["pca", "d.hgps", "--k", "2", "-o", "p.hgps", "--format", "csv"]);
    let fit = fit_pca(&ps, 2).unwrap();
    assert_eq!(PointSet::load(d.join("p.hgps"), Format::Binary).unwrap(), fit.transform.apply(&ps).unwrap());
    let vars: Vec<f64> = csv_rows(&out).iter().map(|r| f(&r[1])).collect();
    assert_eq!(vars, fit.explained_variance);

    ok(d, &["whiten", "d.hgps", "-o", "w.hgps", "--transform", "w.json"]);
    let tr = fit_whitening(&ps).unwrap();
    assert_eq!(PointSet::load(d.join("w.hgps"), Format::Binary).unwrap(), tr.apply(&ps).unwrap());
    let saved: hypergrid_core::dataset::LinearTransform =
        serde_json::from_str(&std::fs::read_to_string(d.join("w.json")).unwrap()).unwrap();
    assert_eq!(saved, tr);
}

#[test]
fn grid_and_sample_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, ps) = dataset(d);
    let out = ok(d, &["grid-build", "d.hgps", "--dims", "0,2,3", "--base", "256", "--seed", "3", "--format", "csv"]);
    let g = LayeredGridIndex::build(&ps, [0, 2, 3], 256, 3).unwrap();
    let mut want = Vec::new();
    g.write(&mut want).unwrap();
    assert_eq!(std::fs::read(d.join("d.hglg")).unwrap(), want);
    let pops: Vec<usize> = csv_rows(&out).iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(pops, g.layers().iter().map(|l| l.population()).collect::<Vec<_>>());

    let q = BoundingBox::new(vec![-2.0, -1.0, -3.0], vec![2.0, 4.0, 0.5]).unwrap();
    let out = ok(
        d,
        &["sample", "d.hgps", "--grid", "d.hglg", "--lo=-2,-1,-3", "--hi", "2,4,0.5", "--n", "300", "--format", "csv"],
    );
    let s = g.sample_box(&ps, &q, 300).unwrap();
    let rows = csv_rows(&out);
    let ids: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ids, s.ids);
    for (r, &id) in rows.iter().zip(&ids) {
        assert_eq!(f(&r[1]), ps.coord(id, 0));
        assert_eq!(f(&r[3]), ps.coord(id, 3));
    }
}

#[test]
fn kd_query_and_knn_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, ps) = dataset(d);
    ok(d, &["kd-build", "d.hgps"]);
    let t = KdTree::build(&ps).unwrap();
    let mut want = Vec::new();
    t.write(&mut want).unwrap();
    assert_eq!(std::fs::read(d.join("d.hgkd")).unwrap(), want);

    let poly = Polytope::new(vec![
        Halfspace { normal: vec![1.0, 1.0, 0.0, 0.0], offset: 1.0 },
        Halfspace { normal: vec![0.0, -1.0, 0.5, 0.0], offset: 2.0 },
    ])
    .unwrap();
    std::fs::write(d.join("p.json"), serde_json::to_string(&poly).unwrap()).unwrap();
    let out = ok(d, &["query", "d.hgps", "--kd", "d.hgkd", "--polytope", "p.json", "--format", "csv"]);
    let ids: Vec<usize> = csv_rows(&out).iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(ids, full_scan(&ps, &poly));

    let out = ok(d, &["knn", "d.hgps", "--kd", "d.hgkd", "--query=-0.5,1,0.25,2", "--k", "9", "--format", "csv"]);
    let want = knn_search(&t, &ps, &[-0.5, 1.0, 0.25, 2.0], 9).unwrap();
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 9);
    for (r, nb) in rows.iter().zip(&want.entries) {
        assert_eq!(r[1].parse::<usize>().unwrap(), nb.id);
        assert_eq!(f(&r[2]), nb.distance);
    }

    let json = ok(d, &["knn", "d.hgps", "--query=0,0,0,0", "--k", "2", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn voronoi_and_cluster_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, ps) = dataset(d);
    ok(d, &["voronoi", "build", "d.hgps", "--seeds", "120", "--seed", "4"]);
    let idx = VoronoiIndex::build(&ps, &VoronoiParams::new(120, 4)).unwrap();
    let mut want = Vec::new();
    idx.write(&mut want).unwrap();
    assert_eq!(std::fs::read(d.join("d.hgvr")).unwrap(), want);

    let out = ok(d, &["voronoi", "locate", "d.hgps", "--index", "d.hgvr", "--point", "1,0,0,1", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let loc = idx.locate_cell(&[1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(v["cell"], loc.seed);
    assert_eq!(v["steps"], loc.steps);

    let out = ok(d, &["voronoi", "density", "d.hgps", "--index", "d.hgvr", "--mode", "inverse", "--format", "csv"]);
    let (dens, _) = cell_densities(&idx, DensityMode::InverseVolume);
    let got: Vec<f64> = csv_rows(&out).iter().map(|r| f(&r[5])).collect();
    assert_eq!(got, dens);

    let out = ok(d, &["cluster", "d.hgps", "--index", "d.hgvr", "--merge-tau", "0.2", "-o", "c.csv", "--format", "csv"]);
    let mut forest = build_bst(&idx, DensityMode::CountPerVolume);
    merge_basins(&mut forest, idx.adjacency(), 0.2).unwrap();
    let pc = forest.point_clusters(idx.assignment());
    let file = std::fs::read_to_string(d.join("c.csv")).unwrap();
    let got: Vec<u32> = csv_rows(&file).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(got, pc);
    // Labels exist, so the purity report lists every cluster.
    assert_eq!(csv_rows(&out).len(), forest.clusters().len());
}

#[test]
fn estimate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, ps) = dataset(d);
    let targets: Vec<f64> = (0..ps.len())
        .map(|i| ps.coord(i, 0).sin() + 0.5 * ps.coord(i, 1))
        .collect();
    let reference = ps.subset(&(0..5000).collect::<Vec<_>>());
    let reference = reference.with_targets(targets[..5000].to_vec()).unwrap();
    reference.save(d.join("ref.hgps"), Format::Binary).unwrap();
    let unknown = PointSet::from_columns(
        (0..4).map(|c| ps.column(c)[5000..].to_vec()).collect(),
    )
    .unwrap();
    unknown.save(d.join("unk.hgps"), Format::Binary).unwrap();

    let out = ok(
        d,
        &["estimate", "--ref", "ref.hgps", "--unknown", "unk.hgps", "--k", "30", "--order", "1", "-o", "est.hgps", "--format", "csv"],
    );
    let rs = ReferenceSet::from_points(reference).unwrap();
    let cfg = FitConfig { k: 30, order: 1, ridge: 1e-9 };
    let want: Vec<f64> = estimate_all(&rs, &unknown, &cfg).unwrap().iter().map(|e| e.value).collect();
    let got: Vec<f64> = csv_rows(&out).iter().map(|r| f(&r[1])).collect();
    assert_eq!(got, want);
    let saved = PointSet::load(d.join("est.hgps"), Format::Binary).unwrap();
    assert_eq!(saved.targets().unwrap(), want.as_slice());

    let out = ok(d, &["estimate", "eval", "--ref", "ref.hgps", "--folds", "5", "--bootstrap", "200", "--seed", "9", "--format", "json"]);
    let got: Comparison = serde_json::from_str(&out).unwrap();
    let a = FitConfig { order: 0, ..FitConfig::default_for(4) };
    let b = FitConfig { order: 1, ..FitConfig::default_for(4) };
    assert_eq!(got, evaluate_estimator(&rs, &a, &b, 5, 200, 9).unwrap());
}

#[test]
fn bench_kd_emits_one_row_per_selectivity() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["bench", "kd", "--n", "20000", "--queries", "3", "--selectivities", "0.001,0.01,0.1,0.25,0.5", "--format", "csv"],
    );
    let mut lines = out.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"speedup") && header.contains(&"tested"));
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 5);
    let targets: Vec<f64> = rows.iter().map(|r| f(&r[0])).collect();
    assert_eq!(targets, vec![0.001, 0.01, 0.1, 0.25, 0.5]);
    let exact = header.iter().position(|h| *h == "exact").unwrap();
    assert!(rows.iter().all(|r| r[exact] == "true"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = hypergrid(d, &["generate", "--bogus"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.contains("Usage"));
    assert_eq!(hypergrid(d, &["frobnicate"]).code, 1);
    assert_eq!(hypergrid(d, &["--help"]).code, 0);

    let o = hypergrid(d, &["knn", "missing.hgps", "--query", "0", "--k", "1"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("missing.hgps"));

    dataset(d);
    let o = hypergrid(d, &["grid-build", "d.hgps", "--dims", "0,1"]);
    assert_eq!(o.code, 1);
    let o = hypergrid(d, &["knn", "d.hgps", "--query", "0,0", "--k", "1"]);
    assert_eq!(o.code, 1);
    // Operation rejects its input: n = 0.
    let o = hypergrid(d, &["sample", "d.hgps", "--lo", "0,0,0", "--hi", "1,1,1", "--n", "0"]);
    assert_eq!(o.code, 2);

    std::fs::write(
        d.join("svc.toml"),
        "listen = \"127.0.0.1:0\"\n[[dataset]]\nname = \"d\"\npath = \"d.hgps\"\nkd_index = \"nope.hgkd\"\n",
    )
    .unwrap();
    let o = hypergrid(d, &["serve", "--config", "svc.toml"]);
    assert_eq!(o.code, 2);
    assert!(o.stderr.contains("nope.hgkd"), "{}", o.stderr);
}
