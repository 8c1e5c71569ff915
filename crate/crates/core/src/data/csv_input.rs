use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrackPoint;
use crate::error::{Error, Result};

/// Header names of the id/frame/x/y columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub id: String,
    pub frame: String,
    pub x: String,
    pub y: String,
}

impl Default for ColumnMap {
    /// NGSIM naming.
    fn default() -> Self {
        Self {
            id: "Vehicle_ID".into(),
            frame: "Frame_ID".into(),
            x: "Local_X".into(),
            y: "Local_Y".into(),
        }
    }
}

/// Ingestion config file: `{columns, source_hz, unit_scale, t_in, t_out, stride}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub columns: ColumnMap,
    pub source_hz: u32,
    /// Multiplied into x and y (NGSIM ships feet).
    pub unit_scale: f64,
    pub t_in: usize,
    pub t_out: usize,
    pub stride: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            source_hz: 10,
            unit_scale: 0.3048,
            t_in: super::DEFAULT_T_IN,
            t_out: super::DEFAULT_T_OUT,
            stride: 1,
        }
    }
}

fn parse_int(cell: &str, line: u64, what: &str) -> Result<i64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i64>() {
        return Ok(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.is_finite() => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            message: format!("{what} {cell:?} is not an integer"),
        }),
    }
}

fn parse_real(cell: &str, line: u64, what: &str) -> Result<f64> {
    let cell = cell.trim();
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            line,
            message: format!("{what} {cell:?} is not a number"),
        }),
    }
}

/// Reads a headed CSV of tracked positions. Coordinates are multiplied by
/// `unit_scale`; rows come back sorted by `(vehicle_id, frame)`.
pub fn parse_trajectory_csv(path: &Path, columns: &ColumnMap, unit_scale: f64) -> Result<Vec<TrackPoint>> {
    let mut raw = String::new();
    File::open(path)?.read_to_string(&mut raw)?;
    parse_trajectory_str(&raw, columns, unit_scale)
}

pub(crate) fn parse_trajectory_str(raw: &str, columns: &ColumnMap, unit_scale: f64) -> Result<Vec<TrackPoint>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not found in header {headers:?}")))
    };
    let (ci, cf, cx, cy) = (find(&columns.id)?, find(&columns.frame)?, find(&columns.x)?, find(&columns.y)?);

    let mut points = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |c: usize| {
            record.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("row has only {} fields", record.len()),
            })
        };
        points.push(TrackPoint {
            vehicle_id: parse_int(cell(ci)?, line, "vehicle id")?,
            frame: parse_int(cell(cf)?, line, "frame")?,
            x: parse_real(cell(cx)?, line, "x")? * unit_scale,
            y: parse_real(cell(cy)?, line, "y")? * unit_scale,
        });
    }
    points.sort_by_key(|p| (p.vehicle_id, p.frame));
    if let Some(w) = points
        .windows(2)
        .find(|w| w[0].vehicle_id == w[1].vehicle_id && w[0].frame == w[1].frame)
    {
        return Err(Error::Config(format!(
            "vehicle {} has frame {} more than once",
            w[0].vehicle_id, w[0].frame
        )));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cols() -> ColumnMap {
        ColumnMap {
            id: "id".into(),
            frame: "frame".into(),
            x: "x".into(),
            y: "y".into(),
        }
    }

    #[test]
    fn single_row() {
        let p = parse_trajectory_str("id,frame,x,y\n1,10,5.0,2.0\n", &cols(), 1.0).unwrap();
        assert_eq!(
            p,
            vec![TrackPoint {
                vehicle_id: 1,
                frame: 10,
                x: 5.0,
                y: 2.0
            }]
        );
    }

    #[test]
    fn feet_to_meters() {
        let p = parse_trajectory_str("id,frame,x,y\n1,10,5.0,2.0\n", &cols(), 0.3048).unwrap();
        assert!((p[0].x - 1.524).abs() < 1e-12);
        assert!((p[0].y - 0.6096).abs() < 1e-12);
    }

    #[test]
    fn empty_file() {
        assert!(parse_trajectory_str("", &cols(), 1.0).unwrap().is_empty());
        assert!(parse_trajectory_str("id,frame,x,y\n", &cols(), 1.0).unwrap().is_empty());
    }

    #[test]
    fn missing_column_is_config_error() {
        let e = parse_trajectory_str("id,frame,x\n1,2,3\n", &cols(), 1.0).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
    }

    #[test]
    fn bad_cell_reports_line() {
        let e = parse_trajectory_str("id,frame,x,y\n1,1,0,0\n1,2,abc,0\n", &cols(), 1.0).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
    }

    #[test]
    fn rows_sorted_and_extra_columns_ignored() {
        let raw = "y,junk,x,frame,id\n1,a,1,5,2\n2,b,2,3,1\n3,c,3,1,2\n";
        let p = parse_trajectory_str(raw, &cols(), 1.0).unwrap();
        let keys: Vec<_> = p.iter().map(|p| (p.vehicle_id, p.frame)).collect();
        assert_eq!(keys, vec![(1, 3), (2, 1), (2, 5)]);
    }
}
