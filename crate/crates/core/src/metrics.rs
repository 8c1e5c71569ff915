//! Displacement metrics: ADE, FDE and per-second RMSE.
//!
//! RMSE at `h` seconds is taken at the single step `h · rate_hz` (1-based),
//! not averaged within the second.

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_RATE_HZ;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Horizons, in seconds, reported in tables.
pub const HORIZONS_S: [u32; 5] = [1, 2, 3, 4, 5];

fn check(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<(usize, usize)> {
    let (n, t) = (mask.shape()[0], mask.len() / mask.shape()[0].max(1));
    if pred.len() != n * t * 2 || target.len() != n * t * 2 || mask.shape().len() != 2 {
        return Err(Error::dim("metrics", pred.shape(), target.shape()));
    }
    Ok((n, t))
}

#[inline]
fn sq_err(pred: &Tensor, target: &Tensor, slot: usize) -> f64 {
    let (p, q) = (&pred.data()[2 * slot..2 * slot + 2], &target.data()[2 * slot..2 * slot + 2]);
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

/// Running sums that combine across windows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricAccumulator {
    rate_hz: u32,
    dist_sum: f64,
    dist_count: usize,
    final_sum: f64,
    final_count: usize,
    /// Per horizon second: (sum of squared errors, count).
    horizon: Vec<(f64, usize)>,
}

impl MetricAccumulator {
    pub fn new(rate_hz: u32) -> Self {
        Self {
            rate_hz,
            horizon: vec![(0.0, 0); HORIZONS_S.len()],
            ..Self::default()
        }
    }

    /// Adds one window's predictions. Shapes: `N × T × 2` and mask `N × T`.
    pub fn add(&mut self, pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<()> {
        let (n, t) = check(pred, target, mask)?;
        for i in 0..n {
            for k in 0..t {
                let slot = i * t + k;
                if mask.data()[slot] == 0.0 {
                    continue;
                }
                let e2 = sq_err(pred, target, slot);
                self.dist_sum += e2.sqrt();
                self.dist_count += 1;
                if k + 1 == t {
                    self.final_sum += e2.sqrt();
                    self.final_count += 1;
                }
                for (h, acc) in HORIZONS_S.iter().zip(self.horizon.iter_mut()) {
                    if (h * self.rate_hz) as usize == k + 1 {
                        acc.0 += e2;
                        acc.1 += 1;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn ade(&self) -> Result<f64> {
        if self.dist_count == 0 {
            return Err(undefined("ADE", "no unmasked slots"));
        }
        Ok(self.dist_sum / self.dist_count as f64)
    }

    pub fn fde(&self) -> Result<f64> {
        if self.final_count == 0 {
            return Err(undefined("FDE", "no vehicle has a known final position"));
        }
        Ok(self.final_sum / self.final_count as f64)
    }

    pub fn rmse_at(&self, horizon_s: u32) -> Result<f64> {
        let idx = HORIZONS_S
            .iter()
            .position(|&h| h == horizon_s)
            .ok_or_else(|| undefined("RMSE", &format!("horizon {horizon_s} s is not tracked")))?;
        let (sum, count) = self.horizon[idx];
        if count == 0 {
            return Err(undefined("RMSE", &format!("no unmasked vehicle at {horizon_s} s")));
        }
        Ok((sum / count as f64).sqrt())
    }

    /// Summary over every horizon the data reaches.
    pub fn report(&self) -> Result<MetricReport> {
        let mut rmse = Vec::new();
        for (&h, &(_, count)) in HORIZONS_S.iter().zip(&self.horizon) {
            if count > 0 {
                rmse.push((h, self.rmse_at(h)?));
            }
        }
        if rmse.is_empty() {
            return Err(undefined("RMSE", "no horizon step is covered"));
        }
        let avg_rmse = rmse.iter().map(|r| r.1).sum::<f64>() / rmse.len() as f64;
        Ok(MetricReport {
            ade: self.ade()?,
            fde: self.fde()?,
            rmse,
            avg_rmse,
            slots: self.dist_count,
            vehicles: self.final_count,
        })
    }
}

fn undefined(metric: &'static str, reason: &str) -> Error {
    Error::UndefinedMetric {
        metric,
        reason: reason.to_string(),
    }
}

fn single(pred: &Tensor, target: &Tensor, mask: &Tensor, rate_hz: u32) -> Result<MetricAccumulator> {
    let mut acc = MetricAccumulator::new(rate_hz);
    acc.add(pred, target, mask)?;
    Ok(acc)
}

/// Mean Euclidean error over every unmasked `(vehicle, step)`.
pub fn ade(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    single(pred, target, mask, DEFAULT_RATE_HZ)?.ade()
}

/// Mean Euclidean error at the last step over vehicles for which it is known.
pub fn fde(pred: &Tensor, target: &Tensor, mask: &Tensor) -> Result<f64> {
    single(pred, target, mask, DEFAULT_RATE_HZ)?.fde()
}

/// Root mean squared error at step `horizon_s · rate_hz`.
pub fn rmse_at(pred: &Tensor, target: &Tensor, mask: &Tensor, horizon_s: u32, rate_hz: u32) -> Result<f64> {
    let (_, t) = check(pred, target, mask)?;
    if (horizon_s * rate_hz) as usize > t || horizon_s == 0 {
        return Err(Error::Contract(format!(
            "horizon {horizon_s} s at {rate_hz} Hz exceeds the {t}-step prediction"
        )));
    }
    let (n, step) = (mask.shape()[0], (horizon_s * rate_hz) as usize - 1);
    let (mut sum, mut count) = (0.0, 0usize);
    for i in 0..n {
        let slot = i * t + step;
        if mask.data()[slot] != 0.0 {
            sum += sq_err(pred, target, slot);
            count += 1;
        }
    }
    if count == 0 {
        return Err(undefined("RMSE", &format!("no unmasked vehicle at {horizon_s} s")));
    }
    Ok((sum / count as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ade: f64,
    pub fde: f64,
    /// `(seconds, rmse)` for each horizon the prediction reaches.
    pub rmse: Vec<(u32, f64)>,
    /// Mean of the `rmse` values.
    pub avg_rmse: f64,
    pub slots: usize,
    pub vehicles: usize,
}

impl MetricReport {
    pub fn rmse_for(&self, horizon_s: u32) -> Option<f64> {
        self.rmse.iter().find(|r| r.0 == horizon_s).map(|r| r.1)
    }

    pub const CSV_HEADER: [&'static str; 8] = ["ADE", "FDE", "RMSE1", "RMSE2", "RMSE3", "RMSE4", "RMSE5", "AVG"];

    /// Cells matching [`MetricReport::CSV_HEADER`]; unreached horizons are empty.
    pub fn csv_cells(&self) -> Vec<String> {
        let mut cells = vec![fmt(self.ade), fmt(self.fde)];
        cells.extend(HORIZONS_S.iter().map(|&h| self.rmse_for(h).map(fmt).unwrap_or_default()));
        cells.push(fmt(self.avg_rmse));
        cells
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.csv_cells())?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
