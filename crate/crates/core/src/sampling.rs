//! Sparse observation maps: uniform and NLoS-guided point sampling, the
//! nine-patch blend map and the NLoS block map.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MaskMap;
use crate::grid::{BinaryMask, Grid};
use crate::propagation::{SignalMap, FLOOR_DBM};
use crate::scene::BuildingMap;

/// Signal level above which blended contributions take priority.
pub const BLEND_PRIORITY_DBM: f32 = -90.0;
pub const BLOCK_SIZE: usize = 10;
pub const BLOCK_COUNT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    NlosGuided,
    Blend,
    Block,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::NlosGuided => "nlos_guided",
            Strategy::Blend => "blend",
            Strategy::Block => "block",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Strategy::Random,
            Strategy::NlosGuided,
            Strategy::Blend,
            Strategy::Block,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

/// How overlapping nine-patches are merged in the blend map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlendPolicy {
    /// Mean over contributors >= −90 dBm when any exist, else mean over all.
    #[default]
    PriorityMean,
    /// Strongest contributor wins.
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub gamma: f64,
    pub strategy: Strategy,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            v.push(format!("gamma {} must lie in [0, 1]", self.gamma));
        }
        if self.strategy == Strategy::Block && self.n_samples < BLOCK_SIZE * BLOCK_SIZE * BLOCK_COUNT {
            v.push(format!(
                "block strategy needs n_samples >= {}",
                BLOCK_SIZE * BLOCK_SIZE * BLOCK_COUNT
            ));
        }
        v
    }

    /// Dispatches to the strategy. Blend maps report their written cells as
    /// the sample mask.
    pub fn apply(&self, src: &SignalMap, b: &BuildingMap, masks: &MaskMap) -> Result<SparseMap> {
        match self.strategy {
            Strategy::Random => sample_random(src, self.n_samples, self.seed),
            Strategy::NlosGuided => sample_nlos_guided(src, masks, self.n_samples, self.gamma, self.seed),
            Strategy::Blend => {
                let (values, written) =
                    blend_map_with_policy(src, b, masks, self.n_samples, self.gamma, self.seed, BlendPolicy::default())?;
                Ok(SparseMap {
                    values,
                    sample_mask: written,
                })
            }
            Strategy::Block => block_map(src, b, masks, self.n_samples, self.seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMap {
    pub values: SignalMap,
    pub sample_mask: BinaryMask,
}

impl SparseMap {
    fn from_indices(src: &SignalMap, picked: impl IntoIterator<Item = usize>) -> Self {
        let (h, w) = src.dims();
        let mut values = Grid::filled(h, w, FLOOR_DBM);
        let mut mask = Grid::filled(h, w, false);
        for i in picked {
            values.as_mut_slice()[i] = src.values.as_slice()[i];
            mask.as_mut_slice()[i] = true;
        }
        SparseMap {
            values: SignalMap {
                values,
                band: src.band,
                beam: src.beam,
            },
            sample_mask: mask,
        }
    }

    pub fn count(&self) -> usize {
        self.sample_mask.count()
    }
}

/// Uniform draw of `n` distinct indices from `pool`.
fn draw(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    debug_assert!(n <= pool.len());
    index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|k| pool[k])
        .collect()
}

/// `n` cells drawn uniformly without replacement over the whole grid.
pub fn sample_random(src: &SignalMap, n: usize, seed: u64) -> Result<SparseMap> {
    let total = src.values.len();
    if n > total {
        return Err(Error::NotEnoughPixels {
            requested: n,
            available: total,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, total, n).into_vec();
    Ok(SparseMap::from_indices(src, picked))
}

/// Quotas for NLoS-guided sampling: `floor(gamma * n)` NLoS, the rest LoS,
/// with any shortfall in one pool spilling over to the other.
pub fn nlos_quotas(n: usize, gamma: f64, nlos_pool: usize, los_pool: usize) -> Result<(usize, usize)> {
    if n > nlos_pool + los_pool {
        return Err(Error::NotEnoughPixels {
            requested: n,
            available: nlos_pool + los_pool,
        });
    }
    let want_nlos = ((gamma * n as f64).floor() as usize).min(n);
    let want_los = n - want_nlos;
    let (mut k_nlos, mut k_los) = (want_nlos.min(nlos_pool), want_los.min(los_pool));
    if k_nlos < want_nlos {
        k_los += want_nlos - k_nlos;
    }
    if k_los < want_los {
        k_nlos += want_los - k_los;
    }
    Ok((k_nlos, k_los))
}

fn guided_indices(masks: &MaskMap, n: usize, gamma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParam(format!("gamma {gamma} outside [0, 1]")));
    }
    let nlos: Vec<usize> = (0..masks.nlos.len()).filter(|&i| masks.nlos.as_slice()[i]).collect();
    let los: Vec<usize> = (0..masks.los.len()).filter(|&i| masks.los.as_slice()[i]).collect();
    let (k_nlos, k_los) = nlos_quotas(n, gamma, nlos.len(), los.len())?;
    let mut picked = draw(&nlos, k_nlos, rng);
    picked.extend(draw(&los, k_los, rng));
    Ok(picked)
}

pub fn sample_nlos_guided(src: &SignalMap, masks: &MaskMap, n: usize, gamma: f64, seed: u64) -> Result<SparseMap> {
    if src.dims() != masks.dims() {
        return Err(Error::Shape("signal map vs masks".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = guided_indices(masks, n, gamma, &mut rng)?;
    Ok(SparseMap::from_indices(src, picked))
}

/// Nine-patch blend map with the default overlap policy.
pub fn blend_map(src: &SignalMap, b: &BuildingMap, masks: &MaskMap, n: usize, gamma: f64, seed: u64) -> Result<SignalMap> {
    blend_map_with_policy(src, b, masks, n, gamma, seed, BlendPolicy::default()).map(|(m, _)| m)
}

/// Nine-patch blend map plus the mask of cells that received a value.
pub fn blend_map_with_policy(
    src: &SignalMap,
    b: &BuildingMap,
    masks: &MaskMap,
    n: usize,
    gamma: f64,
    seed: u64,
    policy: BlendPolicy,
) -> Result<(SignalMap, BinaryMask)> {
    if src.dims() != masks.dims() || src.dims() != b.dims() {
        return Err(Error::Shape("signal map, building map and masks must agree".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = guided_indices(masks, n, gamma, &mut rng)?;
    let (h, w) = src.dims();
    let mut contrib: Vec<Vec<f32>> = vec![Vec::new(); h * w];
    for &i in &seeds {
        let (r, c) = src.values.pixel(i);
        let v = src.values.as_slice()[i];
        for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
            for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                contrib[rr * w + cc].push(v);
            }
        }
    }
    let mut values = Grid::filled(h, w, FLOOR_DBM);
    let mut written = Grid::filled(h, w, false);
    for (i, vals) in contrib.iter().enumerate() {
        if vals.is_empty() || b.heights.as_slice()[i] > 0.0 {
            continue;
        }
        values.as_mut_slice()[i] = resolve_overlap(vals, policy);
        written.as_mut_slice()[i] = true;
    }
    Ok((
        SignalMap {
            values,
            band: src.band,
            beam: src.beam,
        },
        written,
    ))
}

fn resolve_overlap(vals: &[f32], policy: BlendPolicy) -> f32 {
    match policy {
        BlendPolicy::Max => vals.iter().copied().fold(f32::NEG_INFINITY, f32::max),
        BlendPolicy::PriorityMean => {
            let strong: Vec<f32> = vals.iter().copied().filter(|&v| v >= BLEND_PRIORITY_DBM).collect();
            let pool = if strong.is_empty() { vals } else { &strong[..] };
            let sum: f64 = pool.iter().map(|&v| v as f64).sum();
            (sum / pool.len() as f64) as f32
        }
    }
}

/// Number of 10×10 sliding windows in an `h × w` grid.
pub fn block_candidate_count(h: usize, w: usize) -> usize {
    if h < BLOCK_SIZE || w < BLOCK_SIZE {
        0
    } else {
        (h - BLOCK_SIZE + 1) * (w - BLOCK_SIZE + 1)
    }
}

/// Origins of the ten sliding windows with the highest NLoS count, ties
/// broken by row-major origin.
pub fn top_nlos_blocks(masks: &MaskMap) -> Vec<(usize, usize)> {
    let (h, w) = masks.dims();
    if h < BLOCK_SIZE || w < BLOCK_SIZE {
        return Vec::new();
    }
    // Summed-area table over the NLoS mask.
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] = masks.nlos[(r, c)] as u32 + sat[r * (w + 1) + c + 1]
                + sat[(r + 1) * (w + 1) + c]
                - sat[r * (w + 1) + c];
        }
    }
    let rect = |r0: usize, c0: usize| {
        let (r1, c1) = (r0 + BLOCK_SIZE, c0 + BLOCK_SIZE);
        sat[r1 * (w + 1) + c1] + sat[r0 * (w + 1) + c0] - sat[r0 * (w + 1) + c1] - sat[r1 * (w + 1) + c0]
    };
    let mut scored: Vec<(u32, usize, usize)> = Vec::with_capacity(block_candidate_count(h, w));
    for r in 0..=h - BLOCK_SIZE {
        for c in 0..=w - BLOCK_SIZE {
            scored.push((rect(r, c), r, c));
        }
    }
    // Higher score first; stable over row-major origin order.
    scored.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    scored.into_iter().take(BLOCK_COUNT).map(|(_, r, c)| (r, c)).collect()
}

/// Every open pixel inside the top-NLoS blocks, topped up with uniform
/// open-pixel samples outside them until exactly `n` cells are sampled.
pub fn block_map(src: &SignalMap, b: &BuildingMap, masks: &MaskMap, n: usize, seed: u64) -> Result<SparseMap> {
    if src.dims() != masks.dims() || src.dims() != b.dims() {
        return Err(Error::Shape("signal map, building map and masks must agree".into()));
    }
    let (h, w) = src.dims();
    if h < BLOCK_SIZE || w < BLOCK_SIZE {
        return Err(Error::InvalidParam(format!("{h}x{w} grid smaller than a {BLOCK_SIZE}x{BLOCK_SIZE} block")));
    }
    let min_n = BLOCK_SIZE * BLOCK_SIZE * BLOCK_COUNT;
    if n < min_n {
        return Err(Error::InvalidParam(format!("block map needs n >= {min_n}, got {n}")));
    }
    let open = (0..h * w).filter(|&i| b.heights.as_slice()[i] <= 0.0).count();
    if open < n {
        return Err(Error::NotEnoughPixels {
            requested: n,
            available: open,
        });
    }
    let mut in_block = vec![false; h * w];
    for (r0, c0) in top_nlos_blocks(masks) {
        for r in r0..r0 + BLOCK_SIZE {
            for c in c0..c0 + BLOCK_SIZE {
                in_block[r * w + c] = true;
            }
        }
    }
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    let mut outside: Vec<usize> = Vec::new();
    for i in 0..h * w {
        if b.heights.as_slice()[i] > 0.0 {
            continue;
        }
        if in_block[i] {
            picked.push(i);
        } else {
            outside.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = n - picked.len();
    picked.extend(draw(&outside, extra, &mut rng));
    Ok(SparseMap::from_indices(src, picked))
}
