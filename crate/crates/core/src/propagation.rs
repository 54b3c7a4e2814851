//! Deterministic propagation model producing the 3.5 GHz coverage map and
//! the eight beamformed 7 GHz maps.
//!
//! Received power per open pixel:
//!
//! ```text
//! RSS = P_tx + G_tx - FSPL(d3D, f) - L_wall * n_walls - L_nlos * [NLoS]
//!       - A(azimuth) - shadow
//! ```
//!
//! clamped below at the −160 dBm floor. Building pixels are pinned to the
//! floor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{obstruction_count, MaskMap};
use crate::grid::Grid;
use crate::scene::{BuildingMap, TxConfig};

pub const FLOOR_DBM: f32 = -160.0;
pub const FREQ_3G5_HZ: f64 = 3.5e9;
pub const FREQ_7G_HZ: f64 = 7.0e9;
/// Distance used in place of a zero-length path (half a 4 m pixel).
pub const ZERO_DISTANCE_CLAMP_M: f64 = 2.0;

/// The eight beam boresights in degrees, `d1..d8`.
pub const DIRECTIONS_DEG: [u16; 8] = [0, 45, 90, 135, 180, 225, 270, 315];

/// Unnormalized boresight vectors `(east, north)` for the eight directions.
/// Integer components keep the angular offset exactly symmetric under 90°
/// grid rotations and mirrors.
const BORESIGHT_VECTORS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "3.5GHz")]
    Low,
    #[serde(rename = "7GHz")]
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Beam {
    Omni,
    /// Index into [`DIRECTIONS_DEG`].
    Direction(u8),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalMap {
    pub values: Grid<f32>,
    pub band: Band,
    pub beam: Beam,
}

impl SignalMap {
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationParams {
    /// Hz. Ignored by the pipeline, which sets it per band.
    pub frequency: f64,
    pub tx_gain: f64,
    pub tx_power: f64,
    pub ue_height: f64,
    /// dB per building cell crossed by the line to the Tx.
    pub wall_loss: f64,
    pub nlos_offset: f64,
    pub floor: f64,
    pub shadow_sigma: f64,
    pub shadow_seed: u64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self {
            frequency: FREQ_3G5_HZ,
            tx_gain: 0.0,
            tx_power: 30.0,
            ue_height: 1.5,
            wall_loss: 8.0,
            nlos_offset: 10.0,
            floor: FLOOR_DBM as f64,
            shadow_sigma: 0.0,
            shadow_seed: 0,
        }
    }
}

impl PropagationParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.frequency > 0.0) {
            v.push("frequency must be > 0".into());
        }
        if !(self.wall_loss >= 0.0) {
            v.push("wall_loss must be >= 0".into());
        }
        if self.floor != FLOOR_DBM as f64 {
            v.push(format!("floor must be {FLOOR_DBM} dBm"));
        }
        if !(self.shadow_sigma >= 0.0) {
            v.push("shadow_sigma must be >= 0".into());
        }
        if !(self.ue_height >= 0.0) {
            v.push("ue_height must be >= 0".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParam(v.join("; ")))
        }
    }

    pub fn at(&self, frequency: f64, tx_gain: f64) -> Self {
        Self {
            frequency,
            tx_gain,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AntennaPattern {
    /// Index into [`DIRECTIONS_DEG`].
    pub direction: u8,
    pub hpbw: f64,
    pub max_attenuation: f64,
    pub peak_gain: f64,
}

impl AntennaPattern {
    pub fn new(direction: u8) -> Result<Self> {
        if direction as usize >= DIRECTIONS_DEG.len() {
            return Err(Error::InvalidParam(format!(
                "direction index {direction} outside 0..8"
            )));
        }
        Ok(Self {
            direction,
            hpbw: 65.0,
            max_attenuation: 30.0,
            peak_gain: 6.0,
        })
    }

    pub fn boresight_deg(&self) -> f64 {
        DIRECTIONS_DEG[self.direction as usize] as f64
    }
}

/// Free-space path loss in dB.
pub fn fspl(distance_m: f64, frequency_hz: f64) -> f64 {
    let d = if distance_m <= 0.0 {
        ZERO_DISTANCE_CLAMP_M
    } else {
        distance_m
    };
    20.0 * d.log10() + 20.0 * frequency_hz.log10() - 147.55
}

/// Angular offset wrapped into (−180, 180].
fn wrap_offset(deg: f64) -> f64 {
    let mut x = deg % 360.0;
    if x <= -180.0 {
        x += 360.0;
    } else if x > 180.0 {
        x -= 360.0;
    }
    x
}

/// Parabolic single-cut beam pattern, `min(12 (φ/hpbw)², A_max)`.
pub fn directional_attenuation(pattern: &AntennaPattern, azimuth_deg: f64) -> f64 {
    attenuation_for_offset(pattern, wrap_offset(azimuth_deg - pattern.boresight_deg()))
}

fn attenuation_for_offset(pattern: &AntennaPattern, offset_deg: f64) -> f64 {
    (12.0 * (offset_deg / pattern.hpbw).powi(2)).min(pattern.max_attenuation)
}

/// Azimuth of pixel `p` seen from `tx`, degrees counter-clockwise from east
/// with north toward decreasing row.
pub fn azimuth_deg(tx: (usize, usize), p: (usize, usize)) -> f64 {
    let east = p.1 as f64 - tx.1 as f64;
    let north = tx.0 as f64 - p.0 as f64;
    let a = north.atan2(east).to_degrees();
    if a < 0.0 {
        a + 360.0
    } else {
        a
    }
}

/// Unsigned angle between the Tx→pixel vector and the beam boresight,
/// computed from integer components so grid symmetries are exact.
fn boresight_offset_deg(direction: u8, tx: (usize, usize), p: (usize, usize)) -> f64 {
    if tx == p {
        return 0.0;
    }
    let east = p.1 as i64 - tx.1 as i64;
    let north = tx.0 as i64 - p.0 as i64;
    let (bx, by) = BORESIGHT_VECTORS[direction as usize];
    let cross = (east * by - north * bx).abs() as f64;
    let dot = (east * bx + north * by) as f64;
    cross.atan2(dot).to_degrees()
}

fn check_inputs(b: &BuildingMap, tx: &TxConfig, masks: &MaskMap) -> Result<()> {
    if b.dims() != masks.dims() {
        return Err(Error::Shape(format!(
            "building map {:?} vs masks {:?}",
            b.dims(),
            masks.dims()
        )));
    }
    if !b.heights.contains(tx.position) {
        return Err(Error::OutOfBounds(format!("Tx {:?}", tx.position)));
    }
    Ok(())
}

fn simulate(
    b: &BuildingMap,
    tx: &TxConfig,
    params: &PropagationParams,
    masks: &MaskMap,
    gain: f64,
    pattern: Option<&AntennaPattern>,
) -> Result<Grid<f32>> {
    params.validate()?;
    check_inputs(b, tx, masks)?;
    let (h, w) = b.dims();
    let dz = tx.height - params.ue_height;
    let shadow = if params.shadow_sigma > 0.0 {
        let normal = Normal::new(0.0, params.shadow_sigma)
            .map_err(|e| Error::InvalidParam(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.shadow_seed);
        Some((0..h * w).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>())
    } else {
        None
    };
    let floor = params.floor;
    let mut out = Grid::filled(h, w, FLOOR_DBM);
    for r in 0..h {
        for c in 0..w {
            let p = (r, c);
            if b.is_building(p) {
                continue;
            }
            let dr = r as f64 - tx.position.0 as f64;
            let dc = c as f64 - tx.position.1 as f64;
            let horiz = (dr * dr + dc * dc).sqrt() * b.resolution;
            let d3 = (horiz * horiz + dz * dz).sqrt();
            let walls = obstruction_count(b, tx.position, p) as f64;
            let mut rss = params.tx_power + gain - fspl(d3, params.frequency) - params.wall_loss * walls;
            if masks.nlos[p] {
                rss -= params.nlos_offset;
            }
            if let Some(pat) = pattern {
                rss -= attenuation_for_offset(pat, boresight_offset_deg(pat.direction, tx.position, p));
            }
            if let Some(s) = &shadow {
                rss -= s[r * w + c];
            }
            out[p] = rss.max(floor) as f32;
        }
    }
    Ok(out)
}

/// Omnidirectional coverage map using `params.tx_gain`.
pub fn simulate_coverage(
    b: &BuildingMap,
    tx: &TxConfig,
    params: &PropagationParams,
    masks: &MaskMap,
) -> Result<SignalMap> {
    let values = simulate(b, tx, params, masks, params.tx_gain, None)?;
    Ok(SignalMap {
        values,
        band: Band::Low,
        beam: Beam::Omni,
    })
}

/// Beamformed map: peak gain of `pattern` minus the pattern attenuation
/// toward each pixel.
pub fn simulate_directional(
    b: &BuildingMap,
    tx: &TxConfig,
    params: &PropagationParams,
    pattern: &AntennaPattern,
    masks: &MaskMap,
) -> Result<SignalMap> {
    let values = simulate(b, tx, params, masks, pattern.peak_gain, Some(pattern))?;
    Ok(SignalMap {
        values,
        band: Band::High,
        beam: Beam::Direction(pattern.direction),
    })
}

/// The 3.5 GHz coverage map and all eight 7 GHz directional maps for one
/// scene. `base` supplies power, losses and shadowing; frequency and gain
/// are set per band.
pub fn simulate_scene(
    b: &BuildingMap,
    tx: &TxConfig,
    base: &PropagationParams,
    masks: &MaskMap,
) -> Result<(SignalMap, Vec<SignalMap>)> {
    let low = base.at(FREQ_3G5_HZ, tx.gain_3g5);
    let coverage = simulate_coverage(b, tx, &low, masks)?;
    let mut dirs = Vec::with_capacity(8);
    for d in 0..8u8 {
        let mut pattern = AntennaPattern::new(d)?;
        pattern.peak_gain = tx.gain_7g;
        let mut high = base.at(FREQ_7G_HZ, tx.gain_7g);
        // Independent shadowing per beam map.
        high.shadow_seed = base.shadow_seed.wrapping_add(1 + d as u64);
        dirs.push(simulate_directional(b, tx, &high, &pattern, masks)?);
    }
    Ok((coverage, dirs))
}
