//! Procedural urban scenes: building-height maps, quadrant crops, block-max
//! downsampling and transmitter placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{is_pow2_in, Grid, Pixel};

/// Transmitter mast height above the tallest building.
pub const TX_MAST_ABOVE_ROOF_M: f64 = 5.0;
pub const GAIN_3G5_DBI: f64 = 0.0;
pub const GAIN_7G_DBI: f64 = 6.0;
pub const DEFAULT_RESOLUTION_M: f64 = 4.0;

const MAX_PLACEMENT_ATTEMPTS: usize = 20_000;
const DENSITY_TOLERANCE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildingMap {
    pub heights: Grid<f32>,
    /// Meters per pixel.
    pub resolution: f64,
    pub parent_id: String,
}

impl BuildingMap {
    pub fn new(heights: Grid<f32>, resolution: f64, parent_id: impl Into<String>) -> Result<Self> {
        if heights.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::InvalidParam("building heights must be >= 0".into()));
        }
        Ok(Self {
            heights,
            resolution,
            parent_id: parent_id.into(),
        })
    }

    /// All-open map, mostly useful in tests.
    pub fn open(height: usize, width: usize, parent_id: impl Into<String>) -> Self {
        Self {
            heights: Grid::filled(height, width, 0.0),
            resolution: DEFAULT_RESOLUTION_M,
            parent_id: parent_id.into(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.heights.dims()
    }

    #[inline]
    pub fn is_building(&self, p: Pixel) -> bool {
        self.heights[p] > 0.0
    }

    pub fn max_height(&self) -> f32 {
        self.heights.iter().copied().fold(0.0, f32::max)
    }

    pub fn building_fraction(&self) -> f64 {
        let n = self.heights.iter().filter(|&&h| h > 0.0).count();
        n as f64 / self.heights.len() as f64
    }

    /// Grid sizes accepted by the network: powers of two in `32..=128`.
    pub fn check_network_dims(&self) -> Result<()> {
        let (h, w) = self.dims();
        if is_pow2_in(h, 32, 128) && is_pow2_in(w, 32, 128) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "network grids must be powers of two in 32..=128, got {h}x{w}"
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TxConfig {
    pub position: Pixel,
    /// Meters above ground.
    pub height: f64,
    pub gain_3g5: f64,
    pub gain_7g: f64,
}

impl TxConfig {
    /// Transmitter at the grid center, `max building height + 5 m` tall.
    pub fn for_map(map: &BuildingMap) -> Result<Self> {
        let (h, w) = map.dims();
        let position = (h / 2, w / 2);
        if map.is_building(position) {
            return Err(Error::TxOnBuilding(position));
        }
        Ok(Self {
            position,
            height: map.max_height() as f64 + TX_MAST_ABOVE_ROOF_M,
            gain_3g5: GAIN_3G5_DBI,
            gain_7g: GAIN_7G_DBI,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    /// Target fraction of building cells.
    pub density: f64,
    pub footprint_min: usize,
    pub footprint_max: usize,
    pub height_min: f64,
    pub height_max: f64,
    pub resolution: f64,
    /// Half-width of the square kept free of buildings around the grid
    /// center and the four quadrant centers (the transmitter sites).
    pub tx_clearance: usize,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            density: 0.3,
            footprint_min: 4,
            footprint_max: 10,
            height_min: 10.0,
            height_max: 60.0,
            resolution: DEFAULT_RESOLUTION_M,
            tx_clearance: 2,
            seed: 0,
        }
    }
}

impl SceneParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !is_pow2_in(self.height, 32, 1024) || !is_pow2_in(self.width, 32, 1024) {
            v.push(format!(
                "scene size {}x{} must be powers of two in 32..=1024",
                self.height, self.width
            ));
        }
        if !(0.0..1.0).contains(&self.density) {
            v.push(format!("density {} must lie in [0, 1)", self.density));
        }
        if self.footprint_min < 1 || self.footprint_max < self.footprint_min {
            v.push(format!(
                "footprint range {}..={} invalid",
                self.footprint_min, self.footprint_max
            ));
        }
        if !(self.height_min > 0.0 && self.height_max >= self.height_min) {
            v.push(format!(
                "building height range {}..={} invalid",
                self.height_min, self.height_max
            ));
        }
        if !(self.resolution > 0.0) {
            v.push("resolution must be > 0".into());
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

    /// Grid center plus the four quadrant centers.
    pub fn tx_sites(&self) -> [Pixel; 5] {
        let (h, w) = (self.height, self.width);
        [
            (h / 2, w / 2),
            (h / 4, w / 4),
            (h / 4, 3 * w / 4),
            (3 * h / 4, w / 4),
            (3 * h / 4, 3 * w / 4),
        ]
    }
}

/// Opaque parent identifier derived from the scene seed.
pub fn parent_id_for_seed(seed: u64) -> String {
    format!("p{seed:016x}")
}

/// Random axis-aligned rectangular buildings, kept one cell apart so that
/// streets separate them, until the building fraction reaches the target.
pub fn synth_scene(params: &SceneParams) -> Result<BuildingMap> {
    params.validate()?;
    let (h, w) = (params.height, params.width);
    let mut heights = Grid::filled(h, w, 0.0f32);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let clear = params.tx_clearance;
    let keep_open: Vec<(usize, usize, usize, usize)> = params
        .tx_sites()
        .iter()
        .map(|&(r, c)| {
            (
                r.saturating_sub(clear),
                (r + clear).min(h - 1),
                c.saturating_sub(clear),
                (c + clear).min(w - 1),
            )
        })
        .collect();

    let target_cells = (params.density * (h * w) as f64).ceil() as usize;
    let mut filled = 0usize;
    let mut attempts = 0usize;
    let fmax = params.footprint_max.min(h).min(w);
    let fmin = params.footprint_min.min(fmax);

    while filled < target_cells {
        if attempts >= MAX_PLACEMENT_ATTEMPTS {
            let reached = filled as f64 / (h * w) as f64;
            if reached < params.density - DENSITY_TOLERANCE {
                return Err(Error::UnsatisfiableDensity {
                    target: params.density,
                    reached,
                    attempts,
                });
            }
            break;
        }
        attempts += 1;
        let bh = rng.random_range(fmin..=fmax);
        let bw = rng.random_range(fmin..=fmax);
        let r0 = rng.random_range(0..=h - bh);
        let c0 = rng.random_range(0..=w - bw);
        let height = rng.random_range(params.height_min..=params.height_max) as f32;
        let (r1, c1) = (r0 + bh - 1, c0 + bw - 1);

        let hits_site = keep_open
            .iter()
            .any(|&(a, b, c, d)| r0 <= b && a <= r1 && c0 <= d && c <= c1);
        if hits_site {
            continue;
        }
        // One-cell street gap around every building.
        let (gr0, gr1) = (r0.saturating_sub(1), (r1 + 1).min(h - 1));
        let (gc0, gc1) = (c0.saturating_sub(1), (c1 + 1).min(w - 1));
        let crowded = (gr0..=gr1).any(|r| (gc0..=gc1).any(|c| heights[(r, c)] > 0.0));
        if crowded {
            continue;
        }
        for r in r0..=r1 {
            for c in c0..=c1 {
                heights[(r, c)] = height;
            }
        }
        filled += bh * bw;
    }

    BuildingMap::new(heights, params.resolution, parent_id_for_seed(params.seed))
}

/// Four `patch_size` crops centered on the quadrant centers of `map`.
pub fn crop_patches(map: &BuildingMap, patch_size: usize) -> Result<Vec<BuildingMap>> {
    let (h, w) = map.dims();
    if patch_size == 0 || patch_size % 2 != 0 {
        return Err(Error::InvalidParam(format!(
            "patch size {patch_size} must be positive and even"
        )));
    }
    let half = patch_size / 2;
    let centers = [
        (h / 4, w / 4),
        (h / 4, 3 * w / 4),
        (3 * h / 4, w / 4),
        (3 * h / 4, 3 * w / 4),
    ];
    let mut out = Vec::with_capacity(4);
    for &(cr, cc) in &centers {
        if cr < half || cc < half || cr + half > h || cc + half > w {
            return Err(Error::OutOfBounds(format!(
                "patch {patch_size} centered at ({cr},{cc}) exceeds {h}x{w} map"
            )));
        }
        let (r0, c0) = (cr - half, cc - half);
        let heights = Grid::from_fn(patch_size, patch_size, |r, c| map.heights[(r0 + r, c0 + c)]);
        out.push(BuildingMap {
            heights,
            resolution: map.resolution,
            parent_id: map.parent_id.clone(),
        });
    }
    Ok(out)
}

/// Block-max downsampling; keeps thin blockers visible at coarse resolution.
pub fn downsample(map: &BuildingMap, factor: usize) -> Result<BuildingMap> {
    let (h, w) = map.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidParam(format!(
            "{h}x{w} map is not divisible by factor {factor}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let heights = Grid::from_fn(oh, ow, |r, c| {
        let mut m = 0.0f32;
        for dr in 0..factor {
            for dc in 0..factor {
                m = m.max(map.heights[(r * factor + dr, c * factor + dc)]);
            }
        }
        m
    });
    Ok(BuildingMap {
        heights,
        resolution: map.resolution * factor as f64,
        parent_id: map.parent_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(density: f64, seed: u64) -> SceneParams {
        SceneParams {
            height: 64,
            width: 64,
            density,
            seed,
            ..SceneParams::default()
        }
    }

    #[test]
    fn zero_density_is_empty() {
        let m = synth_scene(&params(0.0, 3)).unwrap();
        assert!(m.heights.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_scene(&params(0.3, 11)).unwrap();
        let b = synth_scene(&params(0.3, 11)).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(&params(0.3, 12)).unwrap();
        assert_ne!(a.heights, c.heights);
    }

    #[test]
    fn density_within_ten_points() {
        for seed in 0..20 {
            let m = synth_scene(&params(0.3, seed)).unwrap();
            let nonzero = m.heights.iter().filter(|&&h| h > 0.0).count();
            let frac = nonzero as f64 / 4096.0;
            assert!((0.20..=0.40).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn tx_sites_are_open() {
        let p = params(0.35, 5);
        let m = synth_scene(&p).unwrap();
        for site in p.tx_sites() {
            assert!(!m.is_building(site));
        }
    }

    #[test]
    fn impossible_density_fails() {
        let p = SceneParams {
            density: 0.95,
            footprint_min: 20,
            footprint_max: 30,
            ..params(0.0, 1)
        };
        assert!(matches!(
            synth_scene(&p),
            Err(Error::UnsatisfiableDensity { .. })
        ));
    }

    #[test]
    fn crops_preserve_parent_and_shape() {
        let m = synth_scene(&SceneParams {
            seed: 9,
            ..SceneParams::default()
        })
        .unwrap();
        let patches = crop_patches(&m, 64).unwrap();
        assert_eq!(patches.len(), 4);
        for p in &patches {
            assert_eq!(p.dims(), (64, 64));
            assert_eq!(p.parent_id, m.parent_id);
        }
        assert!(crop_patches(&m, 200).is_err());
    }

    #[test]
    fn uniform_map_gives_identical_crops() {
        let m = BuildingMap::new(Grid::filled(128, 128, 7.0), 4.0, "u").unwrap();
        let patches = crop_patches(&m, 64).unwrap();
        for p in &patches[1..] {
            assert_eq!(p.heights, patches[0].heights);
        }
    }

    #[test]
    fn downsample_block_max() {
        let m = BuildingMap::new(Grid::from_vec(2, 2, vec![0.0, 0.0, 0.0, 7.0]).unwrap(), 4.0, "x")
            .unwrap();
        let d = downsample(&m, 2).unwrap();
        assert_eq!(d.heights.as_slice(), &[7.0]);
        assert_eq!(d.resolution, 8.0);
        assert_eq!(downsample(&m, 1).unwrap(), m);
        assert!(downsample(&m, 3).is_err());
    }

    fn brute_block_max(m: &BuildingMap, f: usize) -> Vec<f32> {
        let (h, w) = m.dims();
        let mut out = Vec::new();
        for br in 0..h / f {
            for bc in 0..w / f {
                let mut best = f32::NEG_INFINITY;
                for r in br * f..(br + 1) * f {
                    for c in bc * f..(bc + 1) * f {
                        best = best.max(m.heights.as_slice()[r * w + c]);
                    }
                }
                out.push(best);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn downsample_matches_brute_force(vals in proptest::collection::vec(0.0f32..50.0, 64)) {
            let m = BuildingMap::new(Grid::from_vec(8, 8, vals).unwrap(), 4.0, "r").unwrap();
            let d = downsample(&m, 2).unwrap();
            let expect = brute_block_max(&m, 2);
            prop_assert_eq!(d.heights.as_slice(), expect.as_slice());
        }

        #[test]
        fn downsample_composes(vals in proptest::collection::vec(0.0f32..50.0, 256)) {
            let m = BuildingMap::new(Grid::from_vec(16, 16, vals).unwrap(), 4.0, "r").unwrap();
            let twice = downsample(&downsample(&m, 2).unwrap(), 4).unwrap();
            let once = downsample(&m, 8).unwrap();
            prop_assert_eq!(twice, once);
        }

        #[test]
        fn tx_height_tracks_grid_max(seed in 0u64..1000) {
            let params = SceneParams { height: 32, width: 32, density: 0.25, seed, ..SceneParams::default() };
            let m = synth_scene(&params).unwrap();
            let tx = TxConfig::for_map(&m).unwrap();
            prop_assert_eq!(tx.height - TX_MAST_ABOVE_ROOF_M, m.max_height() as f64);
        }
    }
}
