//! One function per subcommand; each loads its inputs, calls a single
//! library operation and prints the result.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use hypergrid_core::cluster::{build_bst, cell_densities, evaluate_purity, merge_basins, DensityMode};
use hypergrid_core::dataset::{
    fit_pca, fit_whitening, generate_mixture, random_components, Format, LinearTransform,
};
use hypergrid_core::estimate::{estimate_all, evaluate_estimator, FitConfig, ReferenceSet};
use hypergrid_core::kdtree::KdTree;
use hypergrid_core::knn::knn_search;
use hypergrid_core::layered_grid::LayeredGridIndex;
use hypergrid_core::voronoi::{VoronoiIndex, VoronoiParams};
use hypergrid_core::workload::{selectivity_curve, SelectivityRow};
use hypergrid_core::{BoundingBox, PointSet, Polytope};

use crate::cli::*;
use crate::output::{write_record, OutputFormat, Table};

/// A request the arguments cannot express; exits with the usage code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub struct Ctx {
    pub seed: u64,
    pub format: OutputFormat,
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        format: cli.format,
    };
    match cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Import(a) => import(&ctx, a),
        Command::Pca(a) => pca(&ctx, a),
        Command::Whiten(a) => whiten(&ctx, a),
        Command::GridBuild(a) => grid_build(&ctx, a),
        Command::Sample(a) => sample(&ctx, a),
        Command::KdBuild(a) => kd_build(&ctx, a),
        Command::Query(a) => query(&ctx, a),
        Command::Knn(a) => knn(&ctx, a),
        Command::Voronoi(VoronoiCommand::Build(a)) => voronoi_build(&ctx, a),
        Command::Voronoi(VoronoiCommand::Locate(a)) => voronoi_locate(&ctx, a),
        Command::Voronoi(VoronoiCommand::Density(a)) => voronoi_density(&ctx, a),
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Estimate(a) => estimate(&ctx, a),
        Command::Bench(BenchCommand::Kd(a)) => bench_kd(&ctx, a),
        Command::Serve(a) => serve(a),
    }
}

fn load(path: &Path) -> Result<PointSet> {
    PointSet::load(path, Format::from_path(path))
        .with_context(|| format!("loading {}", path.display()))
}

fn save(ps: &PointSet, path: &Path) -> Result<()> {
    ps.save(path, Format::from_path(path))
        .with_context(|| format!("writing {}", path.display()))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
}

fn sidecar(data: &Path, given: Option<PathBuf>, ext: &str) -> PathBuf {
    given.unwrap_or_else(|| data.with_extension(ext))
}

fn grid_dims(dims: &[usize]) -> Result<[usize; 3]> {
    dims.try_into()
        .map_err(|_| usage(format!("--dims takes exactly 3 columns, got {}", dims.len())))
}

fn emit(ctx: &Ctx, table: &Table) -> Result<()> {
    let mut out = std::io::stdout().lock();
    table.write(ctx.format, &mut out)?;
    out.flush()?;
    Ok(())
}

fn emit_record(ctx: &Ctx, record: Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    write_record(ctx.format, &record, &mut out)?;
    out.flush()?;
    Ok(())
}

fn save_transform(t: &LinearTransform, path: Option<&PathBuf>) -> Result<()> {
    if let Some(p) = path {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, t)?;
        w.flush()?;
    }
    Ok(())
}

/// The benchmark mixture: three separated 5-D components plus 1% outliers.
pub fn benchmark_points(seed: u64, n: usize) -> Result<PointSet> {
    let comps = random_components(seed, 3, 5, 4.0)?;
    Ok(generate_mixture(seed, n, 5, &comps, 0.01)?)
}

fn generate(ctx: &Ctx, a: GenerateArgs) -> Result<()> {
    let comps = random_components(ctx.seed, a.components, a.dim, a.separation)?;
    let ps = generate_mixture(ctx.seed, a.n, a.dim, &comps, a.outliers)?;
    save(&ps, &a.output)?;
    let mut t = Table::new(["component", "weight", "mean", "stdev"]);
    for (i, c) in comps.iter().enumerate() {
        t.push(vec![json!(i), json!(c.weight), json!(c.mean), json!(c.stdev)]);
    }
    emit(ctx, &t)
}

fn import(ctx: &Ctx, a: ImportArgs) -> Result<()> {
    let ps = load(&a.input)?;
    save(&ps, &a.output)?;
    emit_record(
        ctx,
        json!({"points": ps.len(), "dim": ps.dim(), "labels": ps.labels().is_some(), "targets": ps.targets().is_some()}),
    )
}

fn pca(ctx: &Ctx, a: PcaArgs) -> Result<()> {
    let ps = load(&a.input)?;
    let fit = fit_pca(&ps, a.k)?;
    save(&fit.transform.apply(&ps)?, &a.output)?;
    save_transform(&fit.transform, a.transform.as_ref())?;
    let total: f64 = fit.explained_variance.iter().sum();
    let mut t = Table::new(["component", "variance", "fraction_of_kept"]);
    for (i, v) in fit.explained_variance.iter().enumerate() {
        let frac = if total > 0.0 { v / total } else { 0.0 };
        t.push(vec![json!(i), json!(v), json!(frac)]);
    }
    emit(ctx, &t)
}

fn whiten(ctx: &Ctx, a: WhitenArgs) -> Result<()> {
    let ps = load(&a.input)?;
    let tr = fit_whitening(&ps)?;
    save(&tr.apply(&ps)?, &a.output)?;
    save_transform(&tr, a.transform.as_ref())?;
    let mut t = Table::new(["column", "mean", "scale"]);
    for d in 0..ps.dim() {
        t.push(vec![json!(d), json!(tr.mean[d]), json!(tr.matrix[d][d])]);
    }
    emit(ctx, &t)
}

fn layer_table(g: &LayeredGridIndex) -> Table {
    let mut t = Table::new(["layer", "resolution", "cells", "population"]);
    for l in g.layers() {
        t.push(vec![
            json!(l.layer),
            json!(l.resolution),
            json!(l.cell_count()),
            json!(l.population()),
        ]);
    }
    t
}

fn grid_build(ctx: &Ctx, a: GridBuildArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let g = LayeredGridIndex::build(&ps, grid_dims(&a.dims)?, a.base, ctx.seed)?;
    let path = sidecar(&a.data, a.output, "hglg");
    let mut w = create(&path)?;
    g.write(&mut w)?;
    w.flush()?;
    emit(ctx, &layer_table(&g))
}

fn point_table(ps: &PointSet, ids: &[usize], dims: &[usize]) -> Table {
    let mut headers = vec!["id".to_string()];
    headers.extend(dims.iter().map(|d| format!("x{d}")));
    let mut t = Table::new(headers);
    for &id in ids {
        let mut row = vec![json!(id)];
        row.extend(dims.iter().map(|&d| json!(ps.coord(id, d))));
        t.push(row);
    }
    t
}

fn sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let g = match &a.grid {
        Some(p) => LayeredGridIndex::read(open(p)?, &ps)?,
        None => LayeredGridIndex::build(&ps, grid_dims(&a.dims)?, a.base, ctx.seed)?,
    };
    let q = BoundingBox::new(a.lo, a.hi).map_err(|e| usage(format!("--lo/--hi: {e}")))?;
    let s = g.sample_box(&ps, &q, a.n)?;
    eprintln!(
        "returned {} examined {} layers {}",
        s.ids.len(),
        s.examined,
        s.layers_read
    );
    emit(ctx, &point_table(&ps, &s.ids, &g.coord_indices()))
}

fn load_tree(ps: &PointSet, path: Option<&PathBuf>) -> Result<KdTree> {
    Ok(match path {
        Some(p) => KdTree::read(open(p)?, ps)?,
        None => KdTree::build(ps)?,
    })
}

fn curve_table(rows: &[SelectivityRow]) -> Table {
    let mut t = Table::new(SelectivityRow::CSV_HEADER.split(','));
    for r in rows {
        t.push(vec![
            json!(r.target),
            json!(r.queries),
            json!(r.mean_selectivity),
            json!(r.returned),
            json!(r.tested),
            json!(r.tested_per_returned),
            json!(r.max_tested_per_returned),
            json!(r.leaves_touched),
            json!(r.kd_seconds),
            json!(r.scan_seconds),
            json!(r.speedup),
            json!(r.exact),
        ]);
    }
    t
}

fn kd_build(ctx: &Ctx, a: KdBuildArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let t = KdTree::build(&ps)?;
    let path = sidecar(&a.data, a.output, "hgkd");
    let mut w = create(&path)?;
    t.write(&mut w)?;
    w.flush()?;
    match &a.selectivity_report {
        Some(targets) => {
            let rows = selectivity_curve(&ps, &t, targets, a.queries, 5, ctx.seed)?;
            emit(ctx, &curve_table(&rows))
        }
        None => emit_record(
            ctx,
            json!({"points": ps.len(), "leaves": t.leaf_count(), "levels": t.levels(), "sidecar": path.display().to_string()}),
        ),
    }
}

fn query(ctx: &Ctx, a: QueryArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let t = load_tree(&ps, a.kd.as_ref())?;
    let poly: Polytope = serde_json::from_reader(open(&a.polytope)?)
        .with_context(|| format!("parsing {}", a.polytope.display()))?;
    let res = t.query_polytope(&ps, &poly)?;
    let mut ids = res.ids;
    ids.sort_unstable();
    eprintln!(
        "returned {} tested {} leaves {}",
        res.stats.returned, res.stats.tested, res.stats.leaves_touched
    );
    let dims: Vec<usize> = (0..ps.dim()).collect();
    emit(ctx, &point_table(&ps, &ids, &dims))
}

fn knn(ctx: &Ctx, a: KnnArgs) -> Result<()> {
    let ps = load(&a.data)?;
    if a.query.len() != ps.dim() {
        return Err(usage(format!(
            "--query has {} coordinates, dataset has {}",
            a.query.len(),
            ps.dim()
        )));
    }
    let t = load_tree(&ps, a.kd.as_ref())?;
    let list = knn_search(&t, &ps, &a.query, a.k)?;
    let mut table = Table::new(["rank", "id", "distance"]);
    for (i, nb) in list.entries.iter().enumerate() {
        table.push(vec![json!(i + 1), json!(nb.id), json!(nb.distance)]);
    }
    emit(ctx, &table)
}

fn voronoi_build(ctx: &Ctx, a: VoronoiBuildArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let mut params = VoronoiParams::new(a.seeds, ctx.seed);
    if let Some(p) = a.probes {
        params.probe_budget = p;
    }
    if let Some(v) = a.volume_samples {
        params.volume_samples = v;
    }
    let idx = VoronoiIndex::build(&ps, &params)?;
    let path = sidecar(&a.data, a.output, "hgvr");
    let mut w = create(&path)?;
    idx.write(&mut w)?;
    w.flush()?;
    let edges = idx.adjacency().edge_count();
    emit_record(
        ctx,
        json!({
            "seeds": idx.seed_count(),
            "edges": edges,
            "mean_degree": 2.0 * edges as f64 / idx.seed_count() as f64,
            "empty_cells": (0..idx.seed_count()).filter(|&c| idx.members(c).is_empty()).count(),
            "sidecar": path.display().to_string(),
        }),
    )
}

fn voronoi_locate(ctx: &Ctx, a: VoronoiLocateArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let idx = VoronoiIndex::read(open(&a.index)?, &ps)?;
    let loc = idx.locate_cell(&a.point)?;
    emit_record(
        ctx,
        json!({
            "cell": loc.seed,
            "seed_id": idx.seed_ids()[loc.seed],
            "steps": loc.steps,
            "walk_missed": loc.walk_missed,
        }),
    )
}

fn density_mode(m: DensityArg) -> DensityMode {
    match m {
        DensityArg::Count => DensityMode::CountPerVolume,
        DensityArg::Inverse => DensityMode::InverseVolume,
    }
}

fn voronoi_density(ctx: &Ctx, a: VoronoiDensityArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let idx = VoronoiIndex::read(open(&a.index)?, &ps)?;
    let (dens, fallback) = cell_densities(&idx, density_mode(a.mode));
    let vols = idx.volumes();
    let mut t = Table::new(["cell", "seed_id", "members", "volume", "volume_se", "density", "volume_fallback"]);
    for c in 0..idx.seed_count() {
        t.push(vec![
            json!(c),
            json!(idx.seed_ids()[c]),
            json!(idx.members(c).len()),
            json!(vols.volume(c)),
            json!(vols.standard_error(c)),
            json!(dens[c]),
            json!(fallback[c]),
        ]);
    }
    emit(ctx, &t)
}

fn cluster(ctx: &Ctx, a: ClusterArgs) -> Result<()> {
    let ps = load(&a.data)?;
    let idx = match (&a.index, a.nseed) {
        (Some(p), _) => VoronoiIndex::read(open(p)?, &ps)?,
        (None, Some(n)) => VoronoiIndex::build(&ps, &VoronoiParams::new(n, ctx.seed))?,
        (None, None) => return Err(usage("give --nseed or --index")),
    };
    let mut forest = build_bst(&idx, density_mode(a.mode));
    if let Some(tau) = a.merge_tau {
        merge_basins(&mut forest, idx.adjacency(), tau)?;
    }
    let point_clusters = forest.point_clusters(idx.assignment());
    if let Some(path) = &a.output {
        let mut w = create(path)?;
        writeln!(w, "id,cluster")?;
        for (id, c) in point_clusters.iter().enumerate() {
            writeln!(w, "{id},{c}")?;
        }
        w.flush()?;
    }
    let mut sizes = std::collections::BTreeMap::<u32, usize>::new();
    for &c in &point_clusters {
        *sizes.entry(c).or_default() += 1;
    }
    match ps.labels() {
        Some(labels) => {
            let rep = evaluate_purity(&point_clusters, labels)?;
            eprintln!("clusters {} accuracy {}", rep.clusters.len(), rep.accuracy);
            let mut t = Table::new(["cluster", "size", "majority_label", "majority_count"]);
            for c in &rep.clusters {
                t.push(vec![
                    json!(c.cluster),
                    json!(c.size),
                    json!(c.majority_label),
                    json!(c.majority_count),
                ]);
            }
            emit(ctx, &t)
        }
        None => {
            let mut t = Table::new(["cluster", "size"]);
            for (c, n) in sizes {
                t.push(vec![json!(c), json!(n)]);
            }
            emit(ctx, &t)
        }
    }
}

fn fit_config(dim: usize, k: Option<usize>, order: u8, ridge: f64) -> FitConfig {
    let base = FitConfig::default_for(dim);
    FitConfig {
        k: k.unwrap_or(base.k),
        order,
        ridge,
    }
}

fn estimate(ctx: &Ctx, a: EstimateArgs) -> Result<()> {
    if let Some(EstimateAction::Eval(e)) = a.action {
        return estimate_eval(ctx, e);
    }
    let (Some(rp), Some(up)) = (a.reference, a.unknown) else {
        return Err(usage("estimate needs --ref and --unknown"));
    };
    let reference = ReferenceSet::from_points(load(&rp)?)?;
    let unknown = load(&up)?;
    let cfg = fit_config(unknown.dim(), a.fit.k, a.fit.order, a.fit.ridge);
    let est = estimate_all(&reference, &unknown, &cfg)?;
    let values: Vec<f64> = est.iter().map(|e| e.value).collect();
    if let Some(out) = &a.output {
        save(&unknown.clone().with_targets(values.clone())?, out)?;
    }
    let mut t = Table::new(["id", "target", "neighbors", "order_used", "flagged"]);
    for (id, e) in est.iter().enumerate() {
        t.push(vec![
            json!(id),
            json!(e.value),
            json!(e.neighbor_count),
            json!(e.order_used),
            json!(e.flags.any()),
        ]);
    }
    emit(ctx, &t)
}

fn estimate_eval(ctx: &Ctx, e: EvalArgs) -> Result<()> {
    let reference = ReferenceSet::from_points(load(&e.reference)?)?;
    let dim = reference.features().dim();
    let a = fit_config(dim, e.k, e.order_a, e.ridge);
    let b = fit_config(dim, e.k, e.order_b, e.ridge);
    let cmp = evaluate_estimator(&reference, &a, &b, e.folds, e.bootstrap, ctx.seed)?;
    emit_record(ctx, serde_json::to_value(cmp)?)
}

fn bench_kd(ctx: &Ctx, a: BenchKdArgs) -> Result<()> {
    let ps = match &a.data {
        Some(p) => load(p)?,
        None => benchmark_points(ctx.seed, a.n)?,
    };
    let t = KdTree::build(&ps)?;
    let rows = selectivity_curve(&ps, &t, &a.selectivities, a.queries, a.extra_faces, ctx.seed)?;
    emit(ctx, &curve_table(&rows))
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = hypergrid_service::ServiceConfig::load(&a.config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(hypergrid_service::server::run(&cfg))?;
    Ok(())
}
