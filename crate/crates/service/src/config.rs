//! Service configuration, read from TOML.
//!
//! ```toml
//! listen = "127.0.0.1:8080"    # HYPERGRID_LISTEN overrides
//! row_cap = 1000000
//!
//! [[dataset]]
//! name = "sky"
//! path = "sky.hgps"
//! grid_dims = [0, 1, 2]
//! grid_index = "sky.hglg"      # optional; built at startup when absent
//! kd_index = "sky.hgkd"        # optional; built at startup when absent
//! voronoi_indexes = ["sky-1k.hgvr", "sky-10k.hgvr"]
//! ```
//!
//! The Voronoi indexes form the Delaunay resolution ladder; instead of
//! sidecars, `voronoi_seeds = [1000, 10000]` builds the levels at startup.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::StartupError;

pub const LISTEN_ENV: &str = "HYPERGRID_LISTEN";
pub const DEFAULT_ROW_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Largest number of rows any response may carry.
    #[serde(default = "default_row_cap")]
    pub row_cap: usize,
    #[serde(default, rename = "dataset")]
    pub datasets: Vec<DatasetConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub path: PathBuf,
    /// Columns indexed by the layered grid; also the coordinates served.
    #[serde(default = "default_grid_dims")]
    pub grid_dims: [usize; 3],
    #[serde(default = "default_grid_base")]
    pub grid_base: usize,
    #[serde(default = "default_seed")]
    pub grid_seed: u64,
    pub grid_index: Option<PathBuf>,
    pub kd_index: Option<PathBuf>,
    #[serde(default)]
    pub voronoi_indexes: Vec<PathBuf>,
    #[serde(default)]
    pub voronoi_seeds: Vec<usize>,
    #[serde(default = "default_seed")]
    pub voronoi_seed: u64,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_row_cap() -> usize {
    DEFAULT_ROW_CAP
}

fn default_grid_dims() -> [usize; 3] {
    [0, 1, 2]
}

fn default_grid_base() -> usize {
    hypergrid_core::layered_grid::DEFAULT_BASE
}

fn default_seed() -> u64 {
    1
}

impl ServiceConfig {
    /// Parses the TOML text; relative dataset and index paths are resolved
    /// against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, StartupError> {
        let mut cfg: ServiceConfig =
            toml::from_str(text).map_err(|e| StartupError::Config(e.to_string()))?;
        for d in &mut cfg.datasets {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base_dir.join(&*p);
                }
            };
            fix(&mut d.path);
            d.grid_index.as_mut().map(fix);
            d.kd_index.as_mut().map(fix);
            d.voronoi_indexes.iter_mut().for_each(fix);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, StartupError> {
        let text = std::fs::read_to_string(path).map_err(|e| StartupError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), StartupError> {
        if self.row_cap == 0 {
            return Err(StartupError::Config("row_cap must be at least 1".into()));
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(StartupError::Config(format!("duplicate dataset {:?}", w[0])));
        }
        for d in &self.datasets {
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)) {
                return Err(StartupError::Config(format!(
                    "dataset name {:?} must be non-empty [A-Za-z0-9_-]",
                    d.name
                )));
            }
            if !d.voronoi_indexes.is_empty() && !d.voronoi_seeds.is_empty() {
                return Err(StartupError::Config(format!(
                    "dataset {}: give voronoi_indexes or voronoi_seeds, not both",
                    d.name
                )));
            }
        }
        Ok(())
    }

    /// Listen address after applying the environment override.
    pub fn listen_addr(&self) -> Result<SocketAddr, StartupError> {
        let raw = std::env::var(LISTEN_ENV).unwrap_or_else(|_| self.listen.clone());
        raw.parse()
            .map_err(|_| StartupError::Config(format!("bad listen address {raw:?}")))
    }
}
