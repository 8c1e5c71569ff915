use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{SceneWindow, Units};
use crate::container::Container;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WindowMeta {
    time_index: i64,
    vehicle_ids: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetMeta {
    units: Units,
    t_in: usize,
    t_out: usize,
    windows: Vec<WindowMeta>,
}

/// A list of windows plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub windows: Vec<SceneWindow>,
    pub units: Units,
    pub t_in: usize,
    pub t_out: usize,
    pub config: Value,
}

impl Dataset {
    pub fn new(windows: Vec<SceneWindow>, t_in: usize, t_out: usize, units: Units) -> Self {
        Self {
            windows,
            units,
            t_in,
            t_out,
            config: Value::Null,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn vehicle_count(&self) -> usize {
        self.windows.iter().map(|w| w.n_vehicles()).sum()
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("dataset");
        c.config = self.config.clone();
        let meta = DatasetMeta {
            units: self.units,
            t_in: self.t_in,
            t_out: self.t_out,
            windows: self
                .windows
                .iter()
                .map(|w| WindowMeta {
                    time_index: w.time_index,
                    vehicle_ids: w.vehicle_ids.clone(),
                })
                .collect(),
        };
        c.meta = serde_json::to_value(meta).expect("dataset meta serializes");
        for (i, w) in self.windows.iter().enumerate() {
            c.push(format!("w{i}.positions_in"), w.positions_in.clone());
            c.push(format!("w{i}.displacements_in"), w.displacements_in.clone());
            c.push(format!("w{i}.futures"), w.futures.clone());
            c.push(format!("w{i}.mask"), w.mask.clone());
            c.push(format!("w{i}.last_positions"), w.last_positions.clone());
        }
        c
    }

    pub fn from_container(c: Container) -> Result<Self> {
        let c = c.expect_kind("dataset")?;
        let meta: DatasetMeta = serde_json::from_value(c.meta.clone())?;
        let mut tensors = c.tensors.into_iter();
        let mut windows = Vec::with_capacity(meta.windows.len());
        for (i, wm) in meta.windows.into_iter().enumerate() {
            let mut next = |field: &str| {
                let (name, t) = tensors
                    .next()
                    .ok_or_else(|| Error::Artifact(format!("dataset truncated at window {i}")))?;
                if name != format!("w{i}.{field}") {
                    return Err(Error::Artifact(format!("expected w{i}.{field}, found {name}")));
                }
                Ok(t)
            };
            let w = SceneWindow {
                time_index: wm.time_index,
                vehicle_ids: wm.vehicle_ids,
                positions_in: next("positions_in")?,
                displacements_in: next("displacements_in")?,
                futures: next("futures")?,
                mask: next("mask")?,
                last_positions: next("last_positions")?,
                units: meta.units,
            };
            w.validate().map_err(|e| Error::Artifact(format!("window {i}: {e}")))?;
            windows.push(w);
        }
        Ok(Self {
            windows,
            units: meta.units,
            t_in: meta.t_in,
            t_out: meta.t_out,
            config: c.config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(Container::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_corpus, SyntheticSpec, WindowConfig};

    #[test]
    fn round_trip() {
        let cfg = WindowConfig {
            stride: 10,
            ..WindowConfig::default()
        };
        let w = synthesize_corpus(&SyntheticSpec::default(), 2, 60, &cfg).unwrap();
        let ds = Dataset::new(w, 15, 25, Units::Meters);
        let back = Dataset::from_container(Container::from_bytes(&ds.to_container().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, ds);
    }
}
