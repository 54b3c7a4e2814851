//! Inverse-distance-weighted interpolation of the sparse 7 GHz maps, used
//! as the reference predictor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::propagation::{SignalMap, FLOOR_DBM};
use crate::sampling::SparseMap;
use crate::scene::BuildingMap;

pub const IDW_POWER: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct IdwPrediction {
    pub maps: Vec<SignalMap>,
    /// Directions with no samples, filled with the global sample mean.
    pub filled: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdwFlag {
    pub map_id: String,
    pub direction: usize,
}

/// Samples that fall on building cells carry the −160 dBm floor rather than
/// a measurement and are ignored.
pub fn idw_baseline(sparse: &[SparseMap], building: &BuildingMap, power: f64) -> Result<IdwPrediction> {
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::InvalidParam(format!("IDW power must be positive, got {power}")));
    }
    let (h, w) = building.dims();
    for s in sparse {
        if s.values.dims() != (h, w) || !s.sample_mask.same_dims(&building.heights) {
            return Err(Error::Shape(format!("sparse map {:?} vs building map {:?}", s.values.dims(), (h, w))));
        }
    }
    let points: Vec<Vec<(f64, f64, f64)>> = sparse
        .iter()
        .map(|s| {
            s.sample_mask
                .iter()
                .enumerate()
                .filter(|(i, m)| **m && !building.is_building(s.sample_mask.pixel(*i)))
                .map(|(i, _)| {
                    let (r, c) = s.sample_mask.pixel(i);
                    (r as f64, c as f64, s.values.values.as_slice()[i] as f64)
                })
                .collect()
        })
        .collect();
    let all: Vec<f64> = points.iter().flatten().map(|p| p.2).collect();
    let global_mean = if all.is_empty() {
        None
    } else {
        Some(all.iter().sum::<f64>() / all.len() as f64)
    };

    let mut maps = Vec::with_capacity(sparse.len());
    let mut filled = Vec::new();
    for (d, (s, pts)) in sparse.iter().zip(&points).enumerate() {
        let values = if pts.is_empty() {
            let Some(mean) = global_mean else {
                return Err(Error::Undefined("IDW baseline with no samples in any direction".into()));
            };
            filled.push(d);
            Grid::from_fn(h, w, |r, c| {
                if building.is_building((r, c)) {
                    FLOOR_DBM
                } else {
                    mean as f32
                }
            })
        } else {
            Grid::from_fn(h, w, |r, c| {
                if building.is_building((r, c)) {
                    return FLOOR_DBM;
                }
                if s.sample_mask[(r, c)] {
                    return s.values.values[(r, c)];
                }
                let (mut num, mut den) = (0.0f64, 0.0f64);
                for &(pr, pc, v) in pts {
                    let d2 = (pr - r as f64).powi(2) + (pc - c as f64).powi(2);
                    let wgt = d2.powf(-power / 2.0);
                    num += wgt * v;
                    den += wgt;
                }
                (num / den) as f32
            })
        };
        maps.push(SignalMap {
            values,
            band: s.values.band,
            beam: s.values.beam,
        });
    }
    Ok(IdwPrediction { maps, filled })
}
