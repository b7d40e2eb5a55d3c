use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Multivariate fleet time series laid out as `(time, turbine, attribute)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTable {
    /// Epoch seconds, strictly increasing.
    pub timestamps: Vec<i64>,
    pub turbines: Vec<String>,
    pub attributes: Vec<String>,
    pub values: Tensor,
    /// Timesteps removed during ingestion because a cell was missing.
    pub dropped: usize,
}

/// Column selection applied during ingestion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSchema {
    /// Attribute columns to keep, in this order. `None` keeps every column
    /// after `timestamp,turbine_id` in header order.
    pub attributes: Option<Vec<String>>,
}

impl SeriesTable {
    pub fn new(
        timestamps: Vec<i64>,
        turbines: Vec<String>,
        attributes: Vec<String>,
        values: Tensor,
    ) -> Result<Self> {
        if values.shape() != [timestamps.len(), turbines.len(), attributes.len()] {
            return Err(Error::shape(format!(
                "values {:?} for {} timesteps, {} turbines, {} attributes",
                values.shape(),
                timestamps.len(),
                turbines.len(),
                attributes.len()
            )));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("timestamps must be strictly increasing".into()));
        }
        Ok(SeriesTable {
            timestamps,
            turbines,
            attributes,
            values,
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn grid(&self) -> [usize; 2] {
        [self.turbines.len(), self.attributes.len()]
    }

    pub fn turbine_index(&self, id: &str) -> Option<usize> {
        self.turbines.iter().position(|t| t == id)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn value(&self, time: usize, turbine: usize, attribute: usize) -> f64 {
        let [_, g, a] = self.values.shape()[..] else {
            unreachable!("series values are rank 3")
        };
        self.values.data()[(time * g + turbine) * a + attribute]
    }

    /// Writes the long CSV layout: `timestamp,turbine_id,<attributes…>`, one
    /// row per (timestamp, turbine), timestamps as ISO-8601 UTC.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["timestamp".to_string(), "turbine_id".to_string()];
        header.extend(self.attributes.iter().cloned());
        w.write_record(&header)?;
        for (t, &ts) in self.timestamps.iter().enumerate() {
            let stamp = format_timestamp(ts);
            for (g, id) in self.turbines.iter().enumerate() {
                let mut record = vec![stamp.clone(), id.clone()];
                record.extend((0..self.attributes.len()).map(|a| self.value(t, g, a).to_string()));
                w.write_record(&record)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub fn format_timestamp(secs: i64) -> String {
    DateTime::from_timestamp(secs, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| secs.to_string())
}

/// Accepts epoch seconds, RFC 3339, or naive `YYYY-MM-DD[T ]HH:MM:SS` (read
/// as UTC).
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|d| d.and_utc().timestamp())
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("null")
}

/// Reads a long-format CSV and pivots it to `(time, turbine, attribute)`.
///
/// Timesteps where any selected cell is missing (empty, `NaN`, `NA`, or a
/// turbine without a row) are dropped and counted in
/// [`SeriesTable::dropped`]. Turbines are ordered by first appearance.
pub fn ingest_csv(path: &Path, schema: &IngestSchema) -> Result<SeriesTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.get(0) != Some("timestamp") || header.get(1) != Some("turbine_id") {
        return Err(Error::Ingest {
            row: 1,
            message: "header must start with timestamp,turbine_id".into(),
        });
    }
    let available: Vec<&str> = header.iter().skip(2).collect();
    let attributes: Vec<String> = match &schema.attributes {
        Some(sel) => sel.clone(),
        None => available.iter().map(|s| s.to_string()).collect(),
    };
    if attributes.is_empty() {
        return Err(Error::Ingest {
            row: 1,
            message: "no attribute columns".into(),
        });
    }
    let columns: Vec<usize> = attributes
        .iter()
        .map(|name| {
            available
                .iter()
                .position(|c| c == name)
                .map(|i| i + 2)
                .ok_or_else(|| Error::Ingest {
                    row: 1,
                    message: format!("unknown column {name:?}"),
                })
        })
        .collect::<Result<_>>()?;

    let mut turbine_ids: Vec<String> = Vec::new();
    let mut turbine_lookup: HashMap<String, usize> = HashMap::new();
    // timestamp -> turbine -> cells (None when missing)
    let mut rows: BTreeMap<i64, HashMap<usize, Option<Vec<f64>>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let stamp = record.get(0).unwrap_or_default();
        let ts = parse_timestamp(stamp).ok_or_else(|| Error::Ingest {
            row: line,
            message: format!("unparseable timestamp {stamp:?}"),
        })?;
        let id = record.get(1).unwrap_or_default().to_string();
        let turbine = *turbine_lookup.entry(id.clone()).or_insert_with(|| {
            turbine_ids.push(id.clone());
            turbine_ids.len() - 1
        });
        let mut cells = Some(Vec::with_capacity(columns.len()));
        for &c in &columns {
            let raw = record.get(c).unwrap_or_default();
            if is_missing(raw) {
                cells = None;
                break;
            }
            let v: f64 = raw.parse().map_err(|_| Error::Ingest {
                row: line,
                message: format!("column {:?}: not a number: {raw:?}", header.get(c).unwrap_or("?")),
            })?;
            if !v.is_finite() {
                cells = None;
                break;
            }
            if let Some(cells) = cells.as_mut() {
                cells.push(v);
            }
        }
        let slot = rows.entry(ts).or_default();
        if slot.insert(turbine, cells).is_some() {
            return Err(Error::Ingest {
                row: line,
                message: format!("duplicate row for timestamp {stamp} and turbine {id}"),
            });
        }
    }

    let g = turbine_ids.len();
    let a = attributes.len();
    let mut timestamps = Vec::new();
    let mut data = Vec::new();
    let mut dropped = 0;
    for (ts, by_turbine) in rows {
        let complete = (0..g).all(|t| matches!(by_turbine.get(&t), Some(Some(_))));
        if !complete {
            dropped += 1;
            continue;
        }
        timestamps.push(ts);
        for t in 0..g {
            if let Some(Some(cells)) = by_turbine.get(&t) {
                data.extend_from_slice(cells);
            }
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Ingest {
            row: 0,
            message: "no complete timesteps".into(),
        });
    }
    let values = Tensor::new(vec![timestamps.len(), g, a], data)?;
    let mut table = SeriesTable::new(timestamps, turbine_ids, attributes, values)?;
    table.dropped = dropped;
    Ok(table)
}
