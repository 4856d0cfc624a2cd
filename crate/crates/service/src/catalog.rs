//! Datasets and their indexes, loaded once at startup and shared read-only.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use hypergrid_core::dataset::Format;
use hypergrid_core::kdtree::KdTree;
use hypergrid_core::layered_grid::LayeredGridIndex;
use hypergrid_core::voronoi::{VoronoiIndex, VoronoiParams};
use hypergrid_core::PointSet;

use crate::config::{DatasetConfig, ServiceConfig};
use crate::error::StartupError;

pub struct Dataset {
    pub name: String,
    pub points: PointSet,
    pub grid: LayeredGridIndex,
    pub kd: KdTree,
    /// Delaunay resolution ladder, coarsest first.
    pub ladder: Vec<VoronoiIndex>,
}

impl Dataset {
    pub fn from_parts(
        name: impl Into<String>,
        points: PointSet,
        grid: LayeredGridIndex,
        kd: KdTree,
        mut ladder: Vec<VoronoiIndex>,
    ) -> Self {
        ladder.sort_by_key(|v| v.seed_count());
        Dataset {
            name: name.into(),
            points,
            grid,
            kd,
            ladder,
        }
    }

    /// Columns returned as point coordinates.
    pub fn serving_dims(&self) -> [usize; 3] {
        self.grid.coord_indices()
    }

    pub fn load(cfg: &DatasetConfig) -> Result<Self, StartupError> {
        let index_err = |message: String| StartupError::Index {
            dataset: cfg.name.clone(),
            message,
        };
        let points = PointSet::load(&cfg.path, Format::from_path(&cfg.path))
            .map_err(|e| index_err(e.to_string()))?;
        let grid = match &cfg.grid_index {
            Some(p) => LayeredGridIndex::read(open(p)?, &points),
            None => LayeredGridIndex::build(&points, cfg.grid_dims, cfg.grid_base, cfg.grid_seed),
        }
        .map_err(|e| index_err(e.to_string()))?;
        if grid.coord_indices() != cfg.grid_dims {
            return Err(index_err(format!(
                "grid index covers columns {:?}, config says {:?}",
                grid.coord_indices(),
                cfg.grid_dims
            )));
        }
        let kd = match &cfg.kd_index {
            Some(p) => KdTree::read(open(p)?, &points),
            None => KdTree::build(&points),
        }
        .map_err(|e| index_err(e.to_string()))?;
        let mut ladder = Vec::new();
        for p in &cfg.voronoi_indexes {
            ladder.push(VoronoiIndex::read(open(p)?, &points).map_err(|e| index_err(e.to_string()))?);
        }
        for &n in &cfg.voronoi_seeds {
            ladder.push(
                VoronoiIndex::build(&points, &VoronoiParams::new(n, cfg.voronoi_seed))
                    .map_err(|e| index_err(e.to_string()))?,
            );
        }
        Ok(Dataset::from_parts(cfg.name.clone(), points, grid, kd, ladder))
    }
}

fn open(path: &Path) -> Result<BufReader<File>, StartupError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| StartupError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub struct Catalog {
    pub row_cap: usize,
    datasets: BTreeMap<String, Dataset>,
}

impl Catalog {
    pub fn new(row_cap: usize, datasets: Vec<Dataset>) -> Self {
        Catalog {
            row_cap,
            datasets: datasets.into_iter().map(|d| (d.name.clone(), d)).collect(),
        }
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Self, StartupError> {
        let datasets = cfg
            .datasets
            .iter()
            .map(Dataset::load)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Catalog::new(cfg.row_cap, datasets))
    }

    pub fn get(&self, name: &str) -> Option<&Dataset> {
        self.datasets.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.datasets.keys().cloned().collect()
    }
}
