//! Trajectory ingestion, windowing and synthetic scenes.

mod csv_input;
mod dataset;
mod synth;
mod window;

pub use csv_input::{parse_trajectory_csv, ColumnMap, IngestConfig};
pub use dataset::Dataset;
pub use synth::{synthesize, synthesize_corpus, ManeuverMix, SyntheticSpec};
pub use window::{resample, window, WindowConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_T_IN: usize = 15;
pub const DEFAULT_T_OUT: usize = 25;
/// Common sampling rate windows are expressed in.
pub const DEFAULT_RATE_HZ: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub vehicle_id: i64,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Meters,
    Pixels,
}

/// One sample: `N` vehicles observed over `T_in` frames ending at
/// `time_index`, with their next `T_out` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneWindow {
    pub time_index: i64,
    pub vehicle_ids: Vec<i64>,
    /// `N × T_in × 2`
    pub positions_in: Tensor,
    /// `N × T_in × 2`, first step zero.
    pub displacements_in: Tensor,
    /// `N × T_out × 2`, `(0, 0)` where masked.
    pub futures: Tensor,
    /// `N × T_out`, 1 where the future position is known.
    pub mask: Tensor,
    /// `N × 2`, position at `time_index` (the curve anchors).
    pub last_positions: Tensor,
    pub units: Units,
}

impl SceneWindow {
    pub fn n_vehicles(&self) -> usize {
        self.vehicle_ids.len()
    }

    pub fn t_in(&self) -> usize {
        self.positions_in.shape()[1]
    }

    pub fn t_out(&self) -> usize {
        self.futures.shape()[1]
    }

    /// Builds a window from per-vehicle histories and (optional) futures.
    pub fn from_tracks(
        time_index: i64,
        vehicle_ids: Vec<i64>,
        histories: &[Vec<[f64; 2]>],
        futures: &[Vec<Option<[f64; 2]>>],
        units: Units,
    ) -> Result<Self> {
        let n = vehicle_ids.len();
        if histories.len() != n || futures.len() != n {
            return Err(Error::dim("SceneWindow", &[n], &[histories.len(), futures.len()]));
        }
        let t_in = histories.first().map_or(0, |h| h.len());
        let t_out = futures.first().map_or(0, |f| f.len());
        let mut pos = Vec::with_capacity(n * t_in * 2);
        let mut disp = Vec::with_capacity(n * t_in * 2);
        let mut fut = Vec::with_capacity(n * t_out * 2);
        let mut mask = Vec::with_capacity(n * t_out);
        let mut last = Vec::with_capacity(n * 2);
        for (h, f) in histories.iter().zip(futures) {
            if h.len() != t_in || f.len() != t_out || t_in == 0 {
                return Err(Error::dim("SceneWindow", &[t_in, t_out], &[h.len(), f.len()]));
            }
            pos.extend(h.iter().flatten());
            disp.extend(displacements(h).iter().flatten());
            for p in f {
                match p {
                    Some(p) => {
                        fut.extend_from_slice(p);
                        mask.push(1.0);
                    }
                    None => {
                        fut.extend_from_slice(&[0.0, 0.0]);
                        mask.push(0.0);
                    }
                }
            }
            last.extend_from_slice(&h[t_in - 1]);
        }
        Ok(Self {
            time_index,
            vehicle_ids,
            positions_in: Tensor::new(vec![n, t_in, 2], pos)?,
            displacements_in: Tensor::new(vec![n, t_in, 2], disp)?,
            futures: Tensor::new(vec![n, t_out, 2], fut)?,
            mask: Tensor::new(vec![n, t_out], mask)?,
            last_positions: Tensor::new(vec![n, 2], last)?,
            units,
        })
    }

    /// Checks the structural invariants of the window.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vehicles();
        let (t_in, t_out) = (self.t_in(), self.t_out());
        let expect = |t: &Tensor, shape: &[usize]| {
            if t.shape() != shape {
                Err(Error::dim("SceneWindow::validate", t.shape(), shape))
            } else {
                Ok(())
            }
        };
        expect(&self.positions_in, &[n, t_in, 2])?;
        expect(&self.displacements_in, &[n, t_in, 2])?;
        expect(&self.futures, &[n, t_out, 2])?;
        expect(&self.mask, &[n, t_out])?;
        expect(&self.last_positions, &[n, 2])?;
        for i in 0..n {
            let h: Vec<[f64; 2]> = self.positions_in.row(i).chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            let d = displacements(&h);
            if d.iter().flatten().ne(self.displacements_in.row(i).iter()) {
                return Err(Error::Contract(format!("vehicle {i}: displacements disagree with positions")));
            }
            if self.last_positions.row(i) != &self.positions_in.row(i)[2 * (t_in - 1)..] {
                return Err(Error::Contract(format!("vehicle {i}: anchor is not the last observed position")));
            }
            for k in 0..t_out {
                let m = self.mask.at(i, k);
                if m != 0.0 && m != 1.0 {
                    return Err(Error::Contract(format!("mask value {m} is not binary")));
                }
                let f = &self.futures.row(i)[2 * k..2 * k + 2];
                if m == 0.0 && f != [0.0, 0.0] {
                    return Err(Error::Contract("masked future slot is not zero".into()));
                }
            }
        }
        Ok(())
    }

    /// Mean of the anchors.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.n_vehicles().max(1) as f64;
        let mut c = [0.0, 0.0];
        for p in self.last_positions.data().chunks_exact(2) {
            c[0] += p[0];
            c[1] += p[1];
        }
        [c[0] / n, c[1] / n]
    }

    /// Copy with every absolute position (history, future, anchor) shifted
    /// by `-origin`. Masked future slots stay at zero; displacements are
    /// unchanged.
    pub fn recentered(&self, origin: [f64; 2]) -> Self {
        let shift = |t: &Tensor| {
            let mut t = t.clone();
            for p in t.data_mut().chunks_exact_mut(2) {
                p[0] -= origin[0];
                p[1] -= origin[1];
            }
            t
        };
        let mut futures = shift(&self.futures);
        for (p, &m) in futures.data_mut().chunks_exact_mut(2).zip(self.mask.data()) {
            if m == 0.0 {
                p[0] = 0.0;
                p[1] = 0.0;
            }
        }
        Self {
            time_index: self.time_index,
            vehicle_ids: self.vehicle_ids.clone(),
            positions_in: shift(&self.positions_in),
            displacements_in: self.displacements_in.clone(),
            futures,
            mask: self.mask.clone(),
            last_positions: shift(&self.last_positions),
            units: self.units,
        }
    }
}

/// `Δc^τ = c^τ − c^{τ−1}` with a zero first row.
pub fn displacements(positions: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(positions.len());
    if let Some(&first) = positions.first() {
        out.push([0.0, 0.0]);
        let mut prev = first;
        for &p in &positions[1..] {
            out.push([p[0] - prev[0], p[1] - prev[1]]);
            prev = p;
        }
    }
    out
}
