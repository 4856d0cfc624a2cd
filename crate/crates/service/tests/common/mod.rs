#![allow(dead_code)]

use std::sync::Arc;

use hypergrid_core::dataset::{generate_mixture, Component};
use hypergrid_core::kdtree::KdTree;
use hypergrid_core::layered_grid::LayeredGridIndex;
use hypergrid_core::voronoi::{VoronoiIndex, VoronoiParams};
use hypergrid_core::PointSet;
use hypergrid_service::{Catalog, Dataset};

/// 9216 = 1024 + 8192 points: exactly two grid layers at base 1024.
pub const FIXTURE_N: usize = 9216;

pub fn fixture_points(n: usize) -> PointSet {
    let comps = vec![
        Component {
            weight: 2.0,
            mean: vec![0.0; 4],
            stdev: vec![1.0, 0.8, 0.6, 0.5],
        },
        Component {
            weight: 1.0,
            mean: vec![3.0, -1.0, 1.0, 0.0],
            stdev: vec![0.5; 4],
        },
    ];
    let ps = generate_mixture(17, n, 4, &comps, 0.02).unwrap();
    let targets = (0..n).map(|i| ps.coord(i, 0) - 0.5 * ps.coord(i, 3)).collect();
    ps.with_targets(targets).unwrap()
}

pub fn fixture_dataset(name: &str, n: usize, ladder: &[usize]) -> Dataset {
    let ps = fixture_points(n);
    let grid = LayeredGridIndex::build(&ps, [0, 1, 2], 1024, 5).unwrap();
    let kd = KdTree::build(&ps).unwrap();
    let ladder = ladder
        .iter()
        .map(|&s| VoronoiIndex::build(&ps, &VoronoiParams::new(s, 3)).unwrap())
        .collect();
    Dataset::from_parts(name, ps, grid, kd, ladder)
}

pub fn fixture_catalog() -> Arc<Catalog> {
    Arc::new(Catalog::new(
        1_000_000,
        vec![fixture_dataset("fixture", FIXTURE_N, &[50, 500])],
    ))
}
