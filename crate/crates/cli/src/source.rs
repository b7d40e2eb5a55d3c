//! Locating a series and its forecast target.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rco::data::{ingest_csv, make_windows, IngestSchema, PermutationSidecar, SeriesTable, WindowConfig, WindowedDataset};
use serde::{Deserialize, Serialize};

pub const SERIES_FILE: &str = "series.csv";
pub const SIDECAR_FILE: &str = "permutation.json";

/// Everything needed to rebuild a dataset; stored in checkpoint metadata.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSource {
    pub series: PathBuf,
    pub target_turbine: String,
    pub target_attribute: String,
    pub attributes: Option<Vec<String>>,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

pub struct Loaded {
    pub source: DataSource,
    pub table: SeriesTable,
}

/// Target names given on the command line; unset ones come from a sidecar.
#[derive(Clone, Debug, Default)]
pub struct TargetArgs {
    pub turbine: Option<String>,
    pub attribute: Option<String>,
    pub attributes: Option<Vec<String>>,
}

/// `path` is a CSV file or a directory holding `series.csv`. A sibling
/// `permutation.json` (as written by `synth`) supplies the default target.
pub fn load(path: &Path, target: &TargetArgs) -> Result<Loaded> {
    let series = if path.is_dir() { path.join(SERIES_FILE) } else { path.to_path_buf() };
    let sidecar_path = series.parent().unwrap_or(Path::new(".")).join(SIDECAR_FILE);
    let sidecar: Option<PermutationSidecar> = if sidecar_path.is_file() {
        let text = std::fs::read_to_string(&sidecar_path)?;
        Some(serde_json::from_str(&text).with_context(|| format!("reading {}", sidecar_path.display()))?)
    } else {
        None
    };
    let schema = IngestSchema {
        attributes: target.attributes.clone(),
    };
    let table = ingest_csv(&series, &schema)?;

    let turbine = target
        .turbine
        .clone()
        .or_else(|| sidecar.as_ref().map(|s| s.target_turbine_id.clone()))
        .ok_or_else(|| anyhow!("no target turbine: pass --target-turbine"))?;
    let attribute = target
        .attribute
        .clone()
        .or_else(|| sidecar.as_ref().map(|s| s.target_attribute_name.clone()))
        .ok_or_else(|| anyhow!("no target attribute: pass --target-attribute"))?;

    let defaults = WindowConfig::default();
    Ok(Loaded {
        source: DataSource {
            series: std::fs::canonicalize(&series).unwrap_or(series),
            target_turbine: turbine,
            target_attribute: attribute,
            attributes: target.attributes.clone(),
            train_fraction: defaults.train_fraction,
            val_fraction: defaults.val_fraction,
        },
        table,
    })
}

impl DataSource {
    pub fn reload(&self) -> Result<SeriesTable> {
        let schema = IngestSchema {
            attributes: self.attributes.clone(),
        };
        Ok(ingest_csv(&self.series, &schema)?)
    }

    pub fn windows(&self, table: &SeriesTable, history: usize, horizon: usize) -> Result<WindowedDataset> {
        let turbine = table
            .turbine_index(&self.target_turbine)
            .ok_or_else(|| anyhow!("target turbine {:?} not in the series", self.target_turbine))?;
        let attribute = table
            .attribute_index(&self.target_attribute)
            .ok_or_else(|| anyhow!("target attribute {:?} not in the series", self.target_attribute))?;
        let config = WindowConfig {
            history,
            horizon,
            target_turbine: turbine,
            target_attribute: attribute,
            train_fraction: self.train_fraction,
            val_fraction: self.val_fraction,
            ..WindowConfig::default()
        };
        let data = make_windows(table, &config)?;
        if data.split(rco::data::Split::Train).is_empty() {
            bail!("series too short: the training split holds no windows");
        }
        Ok(data)
    }
}
