//! Grid line-of-sight and LoS / NLoS / building classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid, Pixel};
use crate::scene::{BuildingMap, TxConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelClass {
    Los,
    Nlos,
    Building,
}

impl PixelClass {
    pub fn code(self) -> f32 {
        match self {
            PixelClass::Los => 0.0,
            PixelClass::Nlos => 1.0,
            PixelClass::Building => 2.0,
        }
    }

    pub fn from_code(v: f32) -> Option<Self> {
        match v {
            x if x == 0.0 => Some(PixelClass::Los),
            x if x == 1.0 => Some(PixelClass::Nlos),
            x if x == 2.0 => Some(PixelClass::Building),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskMap {
    pub classes: Grid<PixelClass>,
    pub los: BinaryMask,
    pub nlos: BinaryMask,
}

impl MaskMap {
    pub fn from_classes(classes: Grid<PixelClass>) -> Self {
        let los = classes.map(|c| *c == PixelClass::Los);
        let nlos = classes.map(|c| *c == PixelClass::Nlos);
        Self { classes, los, nlos }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.classes.dims()
    }

    pub fn building(&self) -> BinaryMask {
        self.classes.map(|c| *c == PixelClass::Building)
    }
}

/// Bresenham rasterization of `p0 → p1`, both endpoints included, in
/// traversal order. Ties on the minor axis stay on the current row/column.
pub fn bresenham_cells(p0: Pixel, p1: Pixel) -> Vec<Pixel> {
    let mut out = Vec::new();
    walk_line(p0, p1, |p| {
        out.push(p);
        true
    });
    out
}

/// Visits the Bresenham cells of `p0 → p1` in order; stops early when the
/// visitor returns `false`.
pub(crate) fn walk_line(p0: Pixel, p1: Pixel, mut visit: impl FnMut(Pixel) -> bool) {
    let (r0, c0) = (p0.0 as i64, p0.1 as i64);
    let (r1, c1) = (p1.0 as i64, p1.1 as i64);
    let (dr, dc) = ((r1 - r0).abs(), (c1 - c0).abs());
    let (sr, sc) = ((r1 - r0).signum(), (c1 - c0).signum());

    // Step along the major axis; `err` is the scaled midpoint decision.
    let (major, minor, smaj, smin, col_major) = if dc >= dr {
        (dc, dr, sc, sr, true)
    } else {
        (dr, dc, sr, sc, false)
    };
    let (mut a, mut b) = if col_major { (c0, r0) } else { (r0, c0) };
    let mut err = 2 * minor - major;
    for _ in 0..=major {
        let p = if col_major { (b, a) } else { (a, b) };
        if !visit((p.0 as usize, p.1 as usize)) {
            return;
        }
        if err > 0 {
            b += smin;
            err -= 2 * major;
        }
        err += 2 * minor;
        a += smaj;
    }
}

/// Number of building cells on the line from `tx` to `p`, Tx cell excluded.
pub fn obstruction_count(b: &BuildingMap, tx: Pixel, p: Pixel) -> usize {
    let mut n = 0;
    walk_line(tx, p, |q| {
        if q != tx && b.is_building(q) {
            n += 1;
        }
        true
    });
    n
}

fn has_los(b: &BuildingMap, tx: Pixel, p: Pixel) -> bool {
    let mut clear = true;
    walk_line(tx, p, |q| {
        if q != tx && b.is_building(q) {
            clear = false;
        }
        clear
    });
    clear
}

/// Pixel is LoS iff no cell on its Bresenham line from the Tx (Tx excluded)
/// is a building. Building pixels are therefore never LoS.
pub fn los_mask(b: &BuildingMap, tx: &TxConfig) -> Result<BinaryMask> {
    if !b.heights.contains(tx.position) {
        return Err(Error::OutOfBounds(format!(
            "transmitter {:?} outside {:?} grid",
            tx.position,
            b.dims()
        )));
    }
    if b.is_building(tx.position) {
        return Err(Error::TxOnBuilding(tx.position));
    }
    let (h, w) = b.dims();
    Ok(Grid::from_fn(h, w, |r, c| has_los(b, tx.position, (r, c))))
}

pub fn classify(b: &BuildingMap, los: &BinaryMask) -> Result<MaskMap> {
    if !b.heights.same_dims(los) {
        return Err(Error::Shape(format!(
            "building map {:?} vs LoS mask {:?}",
            b.dims(),
            los.dims()
        )));
    }
    let (h, w) = b.dims();
    let classes = Grid::from_fn(h, w, |r, c| {
        if b.is_building((r, c)) {
            PixelClass::Building
        } else if los[(r, c)] {
            PixelClass::Los
        } else {
            PixelClass::Nlos
        }
    });
    Ok(MaskMap::from_classes(classes))
}

/// `los_mask` followed by `classify`.
pub fn compute_masks(b: &BuildingMap, tx: &TxConfig) -> Result<MaskMap> {
    classify(b, &los_mask(b, tx)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_scene, SceneParams};
    use proptest::prelude::*;

    /// Independent line stepping: minor offset at major step `i` is the
    /// nearest integer to `i * d_minor / d_major`, exact halves rounded
    /// toward the start point.
    fn oracle_line(p0: Pixel, p1: Pixel) -> Vec<Pixel> {
        let (r0, c0) = (p0.0 as i64, p0.1 as i64);
        let (dr, dc) = (p1.0 as i64 - r0, p1.1 as i64 - c0);
        let n = dr.abs().max(dc.abs());
        if n == 0 {
            return vec![p0];
        }
        let round_half_down = |num: i64, den: i64| -> i64 {
            // ceil((2*num - den) / (2*den)) for num >= 0
            let top = 2 * num - den;
            let bot = 2 * den;
            if top <= 0 {
                -((-top) / bot)
            } else {
                (top + bot - 1) / bot
            }
        };
        (0..=n)
            .map(|i| {
                let (mr, mc) = if dc.abs() >= dr.abs() {
                    (round_half_down(i * dr.abs(), n) * dr.signum(), i * dc.signum())
                } else {
                    (i * dr.signum(), round_half_down(i * dc.abs(), n) * dc.signum())
                };
                ((r0 + mr) as usize, (c0 + mc) as usize)
            })
            .collect()
    }

    fn oracle_los(b: &BuildingMap, tx: Pixel) -> Grid<bool> {
        let (h, w) = b.dims();
        Grid::from_fn(h, w, |r, c| {
            oracle_line(tx, (r, c))
                .into_iter()
                .filter(|&q| q != tx)
                .all(|q| b.heights[q] == 0.0)
        })
    }

    #[test]
    fn axis_aligned_and_degenerate() {
        assert_eq!(bresenham_cells((0, 0), (3, 0)), vec![(0, 0), (1, 0), (2, 0), (3, 0)]);
        assert_eq!(bresenham_cells((0, 0), (0, 0)), vec![(0, 0)]);
    }

    #[test]
    fn matches_oracle_on_fixed_segment() {
        let got = bresenham_cells((0, 0), (2, 5));
        assert_eq!(got, oracle_line((0, 0), (2, 5)));
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 2), (1, 3), (2, 4), (2, 5)]);
    }

    #[test]
    fn empty_map_all_los() {
        let b = BuildingMap::open(16, 16, "e");
        let tx = TxConfig::for_map(&b).unwrap();
        let m = compute_masks(&b, &tx).unwrap();
        assert_eq!(m.los.count(), 256);
        assert_eq!(m.nlos.count(), 0);
    }

    #[test]
    fn single_blocker_shadows_pixel_behind_it() {
        let mut b = BuildingMap::open(8, 8, "s");
        b.heights[(2, 0)] = 10.0;
        // Bresenham (0,0)->(4,0) passes (2,0).
        assert!(oracle_line((0, 0), (4, 0)).contains(&(2, 0)));
        let tx = TxConfig {
            position: (0, 0),
            height: 15.0,
            gain_3g5: 0.0,
            gain_7g: 6.0,
        };
        let los = los_mask(&b, &tx).unwrap();
        assert!(!los[(4, 0)]);
        assert!(los[(0, 0)], "Tx cell is excluded from blocking");
        assert!(!los[(2, 0)], "building cells are never LoS");
        let m = classify(&b, &los).unwrap();
        assert!(!m.los[(2, 0)] && !m.nlos[(2, 0)]);
        assert!(m.nlos[(4, 0)]);
    }

    #[test]
    fn tx_on_building_fails() {
        let mut b = BuildingMap::open(8, 8, "s");
        b.heights[(4, 4)] = 3.0;
        let tx = TxConfig {
            position: (4, 4),
            height: 8.0,
            gain_3g5: 0.0,
            gain_7g: 6.0,
        };
        assert!(matches!(los_mask(&b, &tx), Err(Error::TxOnBuilding(_))));
    }

    #[test]
    fn random_scene_partition_and_oracle() {
        for seed in 0..5 {
            let b = synth_scene(&SceneParams {
                height: 32,
                width: 32,
                density: 0.3,
                seed,
                ..SceneParams::default()
            })
            .unwrap();
            let crop = crate::scene::crop_patches(&b, 16).unwrap().remove(0);
            let tx = TxConfig::for_map(&crop).unwrap();
            let m = compute_masks(&crop, &tx).unwrap();
            let oracle = oracle_los(&crop, tx.position);
            for r in 0..16 {
                for c in 0..16 {
                    let p = (r, c);
                    let k = m.los[p] as u8 + m.nlos[p] as u8 + crop.is_building(p) as u8;
                    assert_eq!(k, 1);
                    assert_eq!(m.los[p], oracle[p]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn line_matches_oracle(r0 in 0usize..40, c0 in 0usize..40, r1 in 0usize..40, c1 in 0usize..40) {
            let got = bresenham_cells((r0, c0), (r1, c1));
            prop_assert_eq!(&got, &oracle_line((r0, c0), (r1, c1)));
            let n = (r1 as i64 - r0 as i64).abs().max((c1 as i64 - c0 as i64).abs()) as usize;
            prop_assert_eq!(got.len(), n + 1);
            prop_assert_eq!(got[0], (r0, c0));
            prop_assert_eq!(*got.last().unwrap(), (r1, c1));
        }

        #[test]
        fn adding_a_building_never_grows_los(seed in 0u64..500, r in 0usize..32, c in 0usize..32) {
            let b = synth_scene(&SceneParams { height: 32, width: 32, density: 0.2, seed, ..SceneParams::default() }).unwrap();
            let tx = TxConfig::for_map(&b).unwrap();
            prop_assume!((r, c) != tx.position);
            let before = los_mask(&b, &tx).unwrap();
            let mut b2 = b.clone();
            b2.heights[(r, c)] = 12.0;
            let after = los_mask(&b2, &tx).unwrap();
            for (a, bf) in after.iter().zip(before.iter()) {
                prop_assert!(!*a || *bf);
            }
        }
    }
}
