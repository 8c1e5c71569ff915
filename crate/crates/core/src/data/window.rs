use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{SceneWindow, TrackPoint, Units};
use crate::error::{Error, Result};

/// Decimates each vehicle's track from `source_hz` to `target_hz`, keeping
/// frames `first, first + f, first + 2f, …` with `f = source_hz / target_hz`.
pub fn resample(tracks: &[TrackPoint], source_hz: u32, target_hz: u32) -> Result<Vec<TrackPoint>> {
    if source_hz == 0 || target_hz == 0 || source_hz % target_hz != 0 {
        return Err(Error::Config(format!(
            "cannot resample {source_hz} Hz to {target_hz} Hz: source must be a positive integer multiple of target"
        )));
    }
    let factor = (source_hz / target_hz) as i64;
    let mut first: BTreeMap<i64, i64> = BTreeMap::new();
    for p in tracks {
        first
            .entry(p.vehicle_id)
            .and_modify(|f| *f = (*f).min(p.frame))
            .or_insert(p.frame);
    }
    Ok(tracks
        .iter()
        .filter(|p| (p.frame - first[&p.vehicle_id]) % factor == 0)
        .copied()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub t_in: usize,
    pub t_out: usize,
    /// Distance between consecutive window anchors, in frame steps.
    pub stride: usize,
    /// Vehicles with fewer visible future steps are left out of a window.
    pub min_future: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            t_in: super::DEFAULT_T_IN,
            t_out: super::DEFAULT_T_OUT,
            stride: 1,
            min_future: 1,
        }
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Cuts tracks into (history, future) windows.
///
/// The frame step is the gcd of consecutive frame gaps within vehicles (1 on
/// raw data, the decimation factor after [`resample`]). Anchors sit on a
/// global grid starting `T_in − 1` steps after the earliest frame. A vehicle
/// joins the window at anchor `t` if it has every frame of
/// `t − (T_in−1)·step ..= t`; a gap inside that span excludes it. Missing
/// future frames are masked.
pub fn window(tracks: &[TrackPoint], cfg: &WindowConfig, units: Units) -> Result<Vec<SceneWindow>> {
    if cfg.stride == 0 || cfg.t_in == 0 || cfg.t_out == 0 {
        return Err(Error::Config("t_in, t_out and stride must all be at least 1".into()));
    }
    let mut by_vehicle: BTreeMap<i64, BTreeMap<i64, [f64; 2]>> = BTreeMap::new();
    for p in tracks {
        by_vehicle.entry(p.vehicle_id).or_default().insert(p.frame, [p.x, p.y]);
    }
    let Some(global_min) = tracks.iter().map(|p| p.frame).min() else {
        return Ok(Vec::new());
    };
    let mut step = 0i64;
    for frames in by_vehicle.values() {
        let keys: Vec<i64> = frames.keys().copied().collect();
        for w in keys.windows(2) {
            step = gcd(step, w[1] - w[0]);
        }
    }
    let step = step.max(1);
    let (t_in, t_out) = (cfg.t_in as i64, cfg.t_out as i64);
    let first_anchor = global_min + (t_in - 1) * step;
    let anchor_step = cfg.stride as i64 * step;

    // anchor -> [(vehicle, history, future)]
    type Entry = (i64, Vec<[f64; 2]>, Vec<Option<[f64; 2]>>);
    let mut anchors: BTreeMap<i64, Vec<Entry>> = BTreeMap::new();
    for (&id, frames) in &by_vehicle {
        let (&lo, _) = frames.first_key_value().expect("non-empty");
        let (&hi, _) = frames.last_key_value().expect("non-empty");
        let earliest = lo + (t_in - 1) * step;
        // first grid anchor >= earliest
        let mut t = if earliest <= first_anchor {
            first_anchor
        } else {
            first_anchor + (earliest - first_anchor + anchor_step - 1) / anchor_step * anchor_step
        };
        while t <= hi {
            let history: Option<Vec<[f64; 2]>> = (0..t_in)
                .map(|k| frames.get(&(t - (t_in - 1 - k) * step)).copied())
                .collect();
            if let Some(history) = history {
                let future: Vec<Option<[f64; 2]>> =
                    (1..=t_out).map(|k| frames.get(&(t + k * step)).copied()).collect();
                if future.iter().filter(|f| f.is_some()).count() >= cfg.min_future {
                    anchors.entry(t).or_default().push((id, history, future));
                }
            }
            t += anchor_step;
        }
    }

    anchors
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(t, entries)| {
            let ids = entries.iter().map(|e| e.0).collect();
            let hist: Vec<_> = entries.iter().map(|e| e.1.clone()).collect();
            let fut: Vec<_> = entries.iter().map(|e| e.2.clone()).collect();
            SceneWindow::from_tracks(t, ids, &hist, &fut, units)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(id: i64, frames: std::ops::Range<i64>) -> Vec<TrackPoint> {
        frames
            .map(|f| TrackPoint {
                vehicle_id: id,
                frame: f,
                x: f as f64 * 2.0,
                y: 1.0,
            })
            .collect()
    }

    fn cfg(stride: usize) -> WindowConfig {
        WindowConfig {
            stride,
            ..WindowConfig::default()
        }
    }

    #[test]
    fn resample_identity_and_decimation() {
        let t = straight(1, 0..20);
        assert_eq!(resample(&t, 5, 5).unwrap(), t);
        let r = resample(&t, 10, 5).unwrap();
        assert_eq!(r.len(), 10);
        assert!(r.iter().all(|p| p.frame % 2 == 0));
        assert!(matches!(resample(&t, 25, 10), Err(Error::Config(_))));
    }

    #[test]
    fn forty_frames_one_full_window() {
        let w = window(&straight(3, 0..40), &cfg(40), Units::Meters).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].time_index, 14);
        assert!(w[0].mask.data().iter().all(|&m| m == 1.0));
        w[0].validate().unwrap();
    }

    #[test]
    fn thirty_nine_frames_masks_last_step() {
        let w = window(&straight(3, 0..39), &cfg(40), Units::Meters).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].mask.at(0, 24), 0.0);
        assert!(w[0].mask.data()[..24].iter().all(|&m| m == 1.0));
        assert_eq!(&w[0].futures.row(0)[48..50], &[0.0, 0.0]);
    }

    #[test]
    fn short_vehicle_excluded() {
        let mut t = straight(1, 0..14);
        assert!(window(&t, &cfg(1), Units::Meters).unwrap().is_empty());
        t.extend(straight(2, 0..40));
        let w = window(&t, &cfg(1), Units::Meters).unwrap();
        assert!(w.iter().all(|w| w.vehicle_ids == vec![2]));
    }

    #[test]
    fn gap_disqualifies_spanning_windows() {
        let mut t = straight(1, 0..10);
        t.extend(straight(1, 11..60));
        let w = window(&t, &cfg(1), Units::Meters).unwrap();
        // histories must lie entirely after the gap at frame 10
        assert!(w.iter().all(|w| w.time_index >= 25));
        assert_eq!(w[0].time_index, 25);
    }

    #[test]
    fn resampled_tracks_use_decimated_step() {
        let t = resample(&straight(1, 0..80), 10, 5).unwrap();
        let w = window(&t, &cfg(40), Units::Meters).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].time_index, 28);
        assert!(w[0].mask.data().iter().all(|&m| m == 1.0));
        assert_eq!(w[0].displacements_in.row(0)[2], 4.0);
    }
}
