//! Sample assembly, parent-grouped splits and the `CUXD` container.
//!
//! Container layout (little endian): magic `CUXD`, version byte, `u32`
//! record count, then per record a `u32` byte length and the payload, and
//! finally a `u32`-prefixed JSON manifest. A record payload is a
//! `u32`-prefixed JSON header followed by `u32 H`, `u32 W`, `u32` grid
//! count and, per grid, a `u32`-prefixed name and `H·W` `f32` values.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{compute_masks, MaskMap, PixelClass};
use crate::grid::Grid;
use crate::io::{read_artifact, ByteReader, ByteWriter};
use crate::propagation::{simulate_scene, Band, Beam, PropagationParams, SignalMap, FLOOR_DBM};
use crate::sampling::{SamplingConfig, SparseMap, Strategy};
use crate::scene::{crop_patches, downsample, synth_scene, BuildingMap, SceneParams, TxConfig};

const MAGIC: &[u8; 4] = b"CUXD";
const VERSION: u8 = 1;
pub const DIRECTIONS: usize = 8;

/// SplitMix64 finalizer; derives independent sub-seeds from one base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub parent_id: String,
    pub crop: u32,
    pub seed: u64,
    pub building: BuildingMap,
    pub tx: Option<TxConfig>,
    pub coverage: Option<SignalMap>,
    /// Directional 7 GHz maps in canonical order.
    pub directions: Vec<SignalMap>,
    pub masks: Option<MaskMap>,
    /// Empty, or one sparse map per direction.
    pub sparse_directions: Vec<SparseMap>,
    pub sparse_coverage: BTreeMap<Strategy, SparseMap>,
}

impl Sample {
    /// A bare scene with nothing derived yet.
    pub fn scene(building: BuildingMap, crop: u32, seed: u64) -> Self {
        Self {
            parent_id: building.parent_id.clone(),
            crop,
            seed,
            building,
            tx: None,
            coverage: None,
            directions: Vec::new(),
            masks: None,
            sparse_directions: Vec::new(),
            sparse_coverage: BTreeMap::new(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.building.dims()
    }

    pub fn id(&self) -> String {
        format!("{}-{}", self.parent_id, self.crop)
    }
}

/// First violated condition of a complete sample, as [`Error::Rejected`].
pub fn validate_sample(s: &Sample) -> Result<()> {
    let reject = |m: String| Err(Error::Rejected(m));
    let dims = s.dims();
    let Some(cov) = &s.coverage else {
        return reject("missing coverage map".into());
    };
    if s.directions.len() < DIRECTIONS {
        let have: Vec<u8> = s
            .directions
            .iter()
            .filter_map(|m| match m.beam {
                Beam::Direction(d) => Some(d),
                Beam::Omni => None,
            })
            .collect();
        let missing = (0..DIRECTIONS as u8).find(|d| !have.contains(d)).unwrap_or(0);
        return reject(format!("missing direction {}", missing + 1));
    }
    if s.directions.len() > DIRECTIONS {
        return reject(format!("{} directional maps, expected 8", s.directions.len()));
    }
    let Some(masks) = &s.masks else {
        return reject("missing mask map".into());
    };
    if cov.dims() != dims {
        return reject(format!("shape: coverage {:?} vs building {dims:?}", cov.dims()));
    }
    if cov.band != Band::Low || cov.beam != Beam::Omni {
        return reject("coverage map must be the omnidirectional 3.5 GHz map".into());
    }
    for (d, m) in s.directions.iter().enumerate() {
        if m.dims() != dims {
            return reject(format!("shape: direction {} {:?} vs {dims:?}", d + 1, m.dims()));
        }
        if m.band != Band::High || m.beam != Beam::Direction(d as u8) {
            return reject(format!("direction {} out of order or wrong band", d + 1));
        }
    }
    if masks.dims() != dims {
        return reject(format!("shape: masks {:?} vs {dims:?}", masks.dims()));
    }
    for (p, class) in masks.classes.iter().enumerate() {
        let is_b = s.building.heights.as_slice()[p] > 0.0;
        if is_b != (*class == PixelClass::Building) {
            return reject("mask classes disagree with building map".into());
        }
    }
    if !s.sparse_directions.is_empty() {
        if s.sparse_directions.len() != DIRECTIONS {
            return reject(format!("{} sparse directional maps, expected 8", s.sparse_directions.len()));
        }
        for (d, sp) in s.sparse_directions.iter().enumerate() {
            check_exact_sparse(sp, &s.directions[d], &format!("sparse direction {}", d + 1))?;
        }
    }
    for (strategy, sp) in &s.sparse_coverage {
        let what = format!("sparse coverage ({})", strategy.name());
        if *strategy == Strategy::Blend {
            if sp.values.dims() != dims || sp.sample_mask.dims() != dims {
                return reject(format!("shape: {what}"));
            }
            let leaked = sp
                .values
                .values
                .iter()
                .zip(s.building.heights.iter())
                .zip(sp.sample_mask.iter())
                .any(|((&v, &h), &m)| (h > 0.0 && v != FLOOR_DBM) || (!m && v != FLOOR_DBM));
            if leaked {
                return reject(format!("{what}: value outside written cells"));
            }
        } else {
            check_exact_sparse(sp, cov, &what)?;
        }
    }
    Ok(())
}

/// Sampled cells copy `src` bit-exactly, everything else is the floor.
fn check_exact_sparse(sp: &SparseMap, src: &SignalMap, what: &str) -> Result<()> {
    if sp.values.dims() != src.dims() || sp.sample_mask.dims() != src.dims() {
        return Err(Error::Rejected(format!("shape: {what}")));
    }
    let ok = sp
        .values
        .values
        .iter()
        .zip(src.values.iter())
        .zip(sp.sample_mask.iter())
        .all(|((&v, &s), &m)| if m { v.to_bits() == s.to_bits() } else { v == FLOOR_DBM });
    if ok {
        Ok(())
    } else {
        Err(Error::Rejected(format!("{what} violates its sampling contract")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// train : validation : test, summing to 10.
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [7, 2, 1],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn parse_ratios(s: &str) -> Result<[u32; 3]> {
        let parts: Vec<u32> = s
            .split(':')
            .map(|p| p.trim().parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidParam(format!("bad split ratios {s:?}")))?;
        match parts[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(Error::InvalidParam(format!("split needs three ratios, got {s:?}"))),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        if self.ratios.iter().sum::<u32>() == 10 {
            Vec::new()
        } else {
            vec![format!("split ratios {:?} must sum to 10", self.ratios)]
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Group counts at `ratios` by largest remainder; ties go to the earlier
/// split.
pub fn largest_remainder(total: usize, ratios: [u32; 3]) -> [usize; 3] {
    let sum: u32 = ratios.iter().sum();
    let mut counts = [0usize; 3];
    let mut rems = [0u64; 3];
    for i in 0..3 {
        let num = total as u64 * ratios[i] as u64;
        counts[i] = (num / sum as u64) as usize;
        rems[i] = num % sum as u64;
    }
    let mut left = total - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Assigns whole parent groups to train/validation/test. `parent_ids[i]` is
/// the group key of sample `i`.
pub fn split<S: AsRef<str>>(parent_ids: &[S], spec: &SplitSpec) -> Result<SplitIndices> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::InvalidParam(v.join("; ")));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in parent_ids.iter().enumerate() {
        groups.entry(p.as_ref()).or_default().push(i);
    }
    if groups.len() < 10 {
        return Err(Error::InvalidParam(format!(
            "split needs at least 10 parent groups, got {}",
            groups.len()
        )));
    }
    let mut keys: Vec<&str> = groups.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let [n_train, n_val, _] = largest_remainder(keys.len(), spec.ratios);
    let mut out = SplitIndices::default();
    for (k, key) in keys.iter().enumerate() {
        let dst = if k < n_train {
            &mut out.train
        } else if k < n_train + n_val {
            &mut out.val
        } else {
            &mut out.test
        };
        dst.extend_from_slice(&groups[key]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Everything needed to regenerate a dataset from seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub n_parents: usize,
    /// Parent scene parameters; `scene.seed` is the base seed.
    pub scene: SceneParams,
    /// Side of the quadrant crops taken from each parent.
    pub patch_size: usize,
    /// Block-max factor applied to each crop.
    pub downsample: usize,
    pub propagation: PropagationParams,
    /// Sampling of each 7 GHz directional map.
    pub n_directional: usize,
    pub directional_strategy: Strategy,
    /// Sampling of the 3.5 GHz coverage map, once per listed strategy.
    pub n_coverage: usize,
    pub coverage_strategies: Vec<Strategy>,
    pub gamma: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            n_parents: 60,
            scene: SceneParams::default(),
            patch_size: 64,
            downsample: 1,
            propagation: PropagationParams::default(),
            n_directional: 200,
            directional_strategy: Strategy::Random,
            n_coverage: 1000,
            coverage_strategies: vec![Strategy::Random, Strategy::Block],
            gamma: 0.9,
        }
    }
}

impl BuildConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v: Vec<String> = self.scene.violations();
        v.extend(self.propagation.violations());
        if self.patch_size == 0 || self.patch_size % 2 != 0 || self.patch_size > self.scene.height.min(self.scene.width) / 2 {
            v.push(format!(
                "patch_size {} must be even and at most half the scene size",
                self.patch_size
            ));
        } else if self.downsample == 0 || self.patch_size % self.downsample != 0 {
            v.push(format!("downsample {} must divide patch_size", self.downsample));
        } else {
            let side = self.patch_size / self.downsample;
            if !crate::grid::is_pow2_in(side, 32, 128) {
                v.push(format!("sample grids must be powers of two in 32..=128, got {side}"));
            }
        }
        if !matches!(self.directional_strategy, Strategy::Random | Strategy::NlosGuided) {
            v.push("directional_strategy must be random or nlos_guided".into());
        }
        for cfg in self.sampling_configs(0) {
            v.extend(cfg.violations());
        }
        if self.n_parents == 0 {
            v.push("n_parents must be positive".into());
        }
        v.sort();
        v.dedup();
        v
    }

    fn sampling_configs(&self, seed: u64) -> Vec<SamplingConfig> {
        let mut out = vec![SamplingConfig {
            n_samples: self.n_directional,
            gamma: self.gamma,
            strategy: self.directional_strategy,
            seed,
        }];
        out.extend(self.coverage_strategies.iter().map(|&strategy| SamplingConfig {
            n_samples: self.n_coverage,
            gamma: self.gamma,
            strategy,
            seed,
        }));
        out
    }

    pub fn parent_seed(&self, i: usize) -> u64 {
        derive_seed(self.scene.seed, i as u64)
    }
}

/// Per-reason rejection counts of a build.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub parents_attempted: usize,
    pub parents_rejected: usize,
    pub samples_accepted: usize,
    pub samples_rejected: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl BuildStats {
    fn note(&mut self, reason: String) {
        *self.reasons.entry(reason).or_default() += 1;
    }
}

/// Parent scene `i` of the build.
pub fn generate_parent(cfg: &BuildConfig, i: usize) -> Result<BuildingMap> {
    let params = SceneParams {
        seed: cfg.parent_seed(i),
        ..cfg.scene.clone()
    };
    synth_scene(&params)
}

/// Crops, downsamples and places the transmitter; no simulation yet.
pub fn crop_parent(cfg: &BuildConfig, parent: &BuildingMap, parent_seed: u64) -> Result<Vec<Sample>> {
    let crops = crop_patches(parent, cfg.patch_size)?;
    crops
        .into_iter()
        .enumerate()
        .map(|(k, crop)| {
            let b = downsample(&crop, cfg.downsample)?;
            Ok(Sample::scene(b, k as u32, derive_seed(parent_seed, 1 + k as u64)))
        })
        .collect()
}

/// Masks plus the coverage and eight directional maps.
pub fn simulate_sample(cfg: &BuildConfig, s: &mut Sample) -> Result<()> {
    let tx = TxConfig::for_map(&s.building)?;
    let masks = compute_masks(&s.building, &tx)?;
    let params = PropagationParams {
        shadow_seed: derive_seed(s.seed, 1),
        ..cfg.propagation.clone()
    };
    let (coverage, dirs) = simulate_scene(&s.building, &tx, &params, &masks)?;
    s.tx = Some(tx);
    s.masks = Some(masks);
    s.coverage = Some(coverage);
    s.directions = dirs;
    Ok(())
}

/// All configured sparse variants of a simulated sample.
pub fn sample_sparse(cfg: &BuildConfig, s: &mut Sample) -> Result<()> {
    let masks = s.masks.as_ref().ok_or_else(|| Error::Rejected("missing mask map".into()))?;
    let cov = s.coverage.as_ref().ok_or_else(|| Error::Rejected("missing coverage map".into()))?;
    let mut sparse_dirs = Vec::with_capacity(DIRECTIONS);
    for (d, map) in s.directions.iter().enumerate() {
        let sc = SamplingConfig {
            n_samples: cfg.n_directional,
            gamma: cfg.gamma,
            strategy: cfg.directional_strategy,
            seed: derive_seed(s.seed, 10 + d as u64),
        };
        sparse_dirs.push(sc.apply(map, &s.building, masks)?);
    }
    let mut sparse_cov = BTreeMap::new();
    for &strategy in &cfg.coverage_strategies {
        let sc = SamplingConfig {
            n_samples: cfg.n_coverage,
            gamma: cfg.gamma,
            strategy,
            seed: derive_seed(s.seed, 100 + strategy as u64),
        };
        sparse_cov.insert(strategy, sc.apply(cov, &s.building, masks)?);
    }
    s.sparse_directions = sparse_dirs;
    s.sparse_coverage = sparse_cov;
    Ok(())
}

/// Full build: parents → crops → simulation → sparse maps → validation.
/// Failing parents or samples are dropped and counted, never fatal.
pub fn build_dataset(cfg: &BuildConfig) -> Result<(Vec<Sample>, BuildStats)> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::InvalidParam(v.join("; ")));
    }
    let per_parent: Vec<Result<Vec<Result<Sample>>>> = (0..cfg.n_parents)
        .into_par_iter()
        .map(|i| {
            let parent = generate_parent(cfg, i)?;
            let crops = crop_parent(cfg, &parent, cfg.parent_seed(i))?;
            Ok(crops
                .into_iter()
                .map(|mut s| {
                    simulate_sample(cfg, &mut s)?;
                    sample_sparse(cfg, &mut s)?;
                    validate_sample(&s)?;
                    Ok(s)
                })
                .collect())
        })
        .collect();
    let mut stats = BuildStats {
        parents_attempted: cfg.n_parents,
        ..BuildStats::default()
    };
    let mut samples = Vec::new();
    for parent in per_parent {
        match parent {
            Err(e) => {
                stats.parents_rejected += 1;
                stats.note(reason_key(&e));
            }
            Ok(list) => {
                for s in list {
                    match s {
                        Ok(s) => samples.push(s),
                        Err(e) => {
                            stats.samples_rejected += 1;
                            stats.note(reason_key(&e));
                        }
                    }
                }
            }
        }
    }
    stats.samples_accepted = samples.len();
    Ok((samples, stats))
}

fn reason_key(e: &Error) -> String {
    match e {
        Error::UnsatisfiableDensity { .. } => "unsatisfiable density".into(),
        Error::TxOnBuilding(_) => "transmitter on building".into(),
        Error::NotEnoughPixels { .. } => "not enough pixels".into(),
        other => other.to_string(),
    }
}

/// Named `f32` grids plus a JSON header; the unit of the container.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub header: serde_json::Value,
    pub height: usize,
    pub width: usize,
    pub grids: Vec<(String, Vec<f32>)>,
}

impl Record {
    pub fn grid(&self, name: &str) -> Option<Grid<f32>> {
        self.grids
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| Grid::from_vec(self.height, self.width, v.clone()).expect("record grid size"))
    }

    fn encode(&self, w: &mut ByteWriter) -> Result<()> {
        w.str32(&serde_json::to_string(&self.header)?);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.u32(self.grids.len() as u32);
        for (name, vals) in &self.grids {
            debug_assert_eq!(vals.len(), self.height * self.width);
            w.str32(name);
            w.f32s(vals);
        }
        Ok(())
    }

    fn decode(r: &mut ByteReader) -> Result<Self> {
        let at = r.offset();
        let header = serde_json::from_str(&r.str32()?).map_err(|e| Error::Corrupt {
            offset: at,
            reason: format!("record header: {e}"),
        })?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let n = r.u32()? as usize;
        let cells = height
            .checked_mul(width)
            .ok_or_else(|| r.corrupt("grid size overflow"))?;
        let mut grids = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let name = r.str32()?;
            grids.push((name, r.f32s(cells)?));
        }
        Ok(Self {
            header,
            height,
            width,
            grids,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SampleHeader {
    parent_id: String,
    crop: u32,
    seed: u64,
    resolution: f64,
    tx: Option<TxConfig>,
    sparse_coverage: Vec<Strategy>,
}

fn signal_of(values: Grid<f32>, band: Band, beam: Beam) -> SignalMap {
    SignalMap { values, band, beam }
}

fn mask_to_f32(m: &Grid<bool>) -> Vec<f32> {
    m.iter().map(|&b| b as u8 as f32).collect()
}

fn f32_to_mask(g: Grid<f32>) -> Result<Grid<bool>> {
    if g.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Corrupt {
            offset: 0,
            reason: "sample mask holds values other than 0/1".into(),
        });
    }
    Ok(g.map(|&v| v == 1.0))
}

impl From<&Sample> for Record {
    fn from(s: &Sample) -> Self {
        let (height, width) = s.dims();
        let mut grids = vec![("building".to_string(), s.building.heights.as_slice().to_vec())];
        if let Some(c) = &s.coverage {
            grids.push(("coverage".into(), c.values.as_slice().to_vec()));
        }
        for (d, m) in s.directions.iter().enumerate() {
            grids.push((format!("dir{d}"), m.values.as_slice().to_vec()));
        }
        if let Some(m) = &s.masks {
            grids.push(("classes".into(), m.classes.iter().map(|c| c.code()).collect()));
        }
        for (d, sp) in s.sparse_directions.iter().enumerate() {
            grids.push((format!("sparse_dir{d}"), sp.values.values.as_slice().to_vec()));
            grids.push((format!("sparse_dir{d}_mask"), mask_to_f32(&sp.sample_mask)));
        }
        for (strategy, sp) in &s.sparse_coverage {
            grids.push((format!("sparse_cov_{}", strategy.name()), sp.values.values.as_slice().to_vec()));
            grids.push((format!("sparse_cov_{}_mask", strategy.name()), mask_to_f32(&sp.sample_mask)));
        }
        let header = SampleHeader {
            parent_id: s.parent_id.clone(),
            crop: s.crop,
            seed: s.seed,
            resolution: s.building.resolution,
            tx: s.tx,
            sparse_coverage: s.sparse_coverage.keys().copied().collect(),
        };
        Record {
            header: serde_json::to_value(header).expect("sample header serializes"),
            height,
            width,
            grids,
        }
    }
}

impl TryFrom<&Record> for Sample {
    type Error = Error;

    fn try_from(r: &Record) -> Result<Self> {
        let bad = |reason: String| Error::Corrupt { offset: 0, reason };
        let h: SampleHeader =
            serde_json::from_value(r.header.clone()).map_err(|e| bad(format!("sample header: {e}")))?;
        let building = r.grid("building").ok_or_else(|| bad("record lacks a building grid".into()))?;
        let building = BuildingMap::new(building, h.resolution, h.parent_id.clone())?;
        let mut s = Sample::scene(building, h.crop, h.seed);
        s.tx = h.tx;
        s.coverage = r.grid("coverage").map(|g| signal_of(g, Band::Low, Beam::Omni));
        for d in 0..DIRECTIONS {
            if let Some(g) = r.grid(&format!("dir{d}")) {
                s.directions.push(signal_of(g, Band::High, Beam::Direction(d as u8)));
            }
        }
        if let Some(g) = r.grid("classes") {
            let mut classes = Vec::with_capacity(g.len());
            for &v in g.iter() {
                classes.push(PixelClass::from_code(v).ok_or_else(|| bad(format!("bad class code {v}")))?);
            }
            s.masks = Some(MaskMap::from_classes(Grid::from_vec(r.height, r.width, classes)?));
        }
        for d in 0..DIRECTIONS {
            let (Some(v), Some(m)) = (r.grid(&format!("sparse_dir{d}")), r.grid(&format!("sparse_dir{d}_mask"))) else {
                continue;
            };
            s.sparse_directions.push(SparseMap {
                values: signal_of(v, Band::High, Beam::Direction(d as u8)),
                sample_mask: f32_to_mask(m)?,
            });
        }
        for strategy in h.sparse_coverage {
            let name = strategy.name();
            let v = r
                .grid(&format!("sparse_cov_{name}"))
                .ok_or_else(|| bad(format!("missing sparse coverage {name}")))?;
            let m = r
                .grid(&format!("sparse_cov_{name}_mask"))
                .ok_or_else(|| bad(format!("missing sparse coverage mask {name}")))?;
            s.sparse_coverage.insert(
                strategy,
                SparseMap {
                    values: signal_of(v, Band::Low, Beam::Omni),
                    sample_mask: f32_to_mask(m)?,
                },
            );
        }
        Ok(s)
    }
}

/// Serializes records and a manifest. The manifest gains `records`,
/// `shapes`, `samples` and `content_sha256` entries and, last,
/// `manifest_sha256` over everything else.
pub fn encode_container(records: &[Record], manifest: serde_json::Value) -> Result<(Vec<u8>, serde_json::Value)> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u8(VERSION);
    w.u32(records.len() as u32);
    let mut content = Sha256::new();
    let mut shapes = std::collections::BTreeSet::new();
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let mut rw = ByteWriter::new();
        r.encode(&mut rw)?;
        let payload = rw.into_inner();
        content.update(&payload);
        w.u32(payload.len() as u32);
        w.bytes(&payload);
        shapes.insert(format!("{}x{}", r.height, r.width));
        entries.push(r.header.clone());
    }
    let mut m = match manifest {
        serde_json::Value::Object(m) => m,
        serde_json::Value::Null => serde_json::Map::new(),
        other => {
            let mut m = serde_json::Map::new();
            m.insert("extra".into(), other);
            m
        }
    };
    m.insert("format".into(), "CUXD".into());
    m.insert("version".into(), VERSION.into());
    m.insert("records".into(), records.len().into());
    m.insert("shapes".into(), shapes.into_iter().collect::<Vec<_>>().into());
    m.insert("samples".into(), entries.into());
    m.insert("content_sha256".into(), hex(&content.finalize()).into());
    m.remove("manifest_sha256");
    let body = serde_json::to_string(&serde_json::Value::Object(m.clone()))?;
    m.insert("manifest_sha256".into(), hex(&Sha256::digest(body.as_bytes())).into());
    let manifest = serde_json::Value::Object(m);
    w.str32(&serde_json::to_string(&manifest)?);
    Ok((w.into_inner(), manifest))
}

pub fn decode_container(bytes: &[u8]) -> Result<(Vec<Record>, serde_json::Value)> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Corrupt {
            offset: 0,
            reason: "bad magic, expected CUXD".into(),
        });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(r.corrupt(format!("unsupported container version {version}")));
    }
    let n = r.u32()? as usize;
    let mut records = Vec::with_capacity(n.min(1 << 16));
    for i in 0..n {
        let len = r.u32()? as usize;
        let start = r.offset();
        let payload = r.take(len).map_err(|_| Error::Corrupt {
            offset: start,
            reason: format!("record {i} truncated: declared {len} bytes"),
        })?;
        let mut pr = ByteReader::new(payload);
        let rec = Record::decode(&mut pr).map_err(|e| shift(e, start))?;
        pr.expect_end().map_err(|e| shift(e, start))?;
        records.push(rec);
    }
    let at = r.offset();
    let manifest: serde_json::Value = serde_json::from_str(&r.str32()?).map_err(|e| Error::Corrupt {
        offset: at,
        reason: format!("manifest: {e}"),
    })?;
    r.expect_end()?;
    if manifest.get("records").and_then(|v| v.as_u64()) != Some(n as u64) {
        return Err(Error::Corrupt {
            offset: at,
            reason: "manifest record count disagrees with container".into(),
        });
    }
    Ok((records, manifest))
}

fn shift(e: Error, base: u64) -> Error {
    match e {
        Error::Corrupt { offset, reason } => Error::Corrupt {
            offset: offset + base,
            reason,
        },
        other => other,
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes samples (all must validate) and returns the manifest.
pub fn write_dataset(samples: &[Sample], path: &Path, manifest: serde_json::Value) -> Result<serde_json::Value> {
    for s in samples {
        validate_sample(s)?;
    }
    write_records(samples, path, manifest)
}

/// Writes samples without validation, for intermediate pipeline stages.
pub fn write_records(samples: &[Sample], path: &Path, manifest: serde_json::Value) -> Result<serde_json::Value> {
    let records: Vec<Record> = samples.iter().map(Record::from).collect();
    let (bytes, manifest) = encode_container(&records, manifest)?;
    std::fs::write(path, bytes)?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<(Vec<Sample>, serde_json::Value)> {
    let bytes = read_artifact(path)?;
    let (records, manifest) = decode_container(&bytes)?;
    let samples = records.iter().map(Sample::try_from).collect::<Result<Vec<_>>>()?;
    Ok((samples, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n_parents: usize) -> BuildConfig {
        BuildConfig {
            n_parents,
            scene: SceneParams {
                seed: 5,
                ..SceneParams::default()
            },
            patch_size: 64,
            downsample: 2,
            n_directional: 50,
            n_coverage: 300,
            coverage_strategies: vec![Strategy::Random, Strategy::NlosGuided, Strategy::Blend],
            ..BuildConfig::default()
        }
    }

    #[test]
    fn build_produces_valid_samples() {
        let (samples, stats) = build_dataset(&small_cfg(2)).unwrap();
        assert_eq!(stats.samples_accepted, samples.len());
        assert_eq!(samples.len() + 4 * stats.parents_rejected + stats.samples_rejected, 8);
        for s in &samples {
            validate_sample(s).unwrap();
            assert_eq!(s.dims(), (32, 32));
            assert_eq!(s.sparse_directions.len(), 8);
            for sp in &s.sparse_directions {
                assert_eq!(sp.count(), 50);
            }
            assert_eq!(s.sparse_coverage[&Strategy::NlosGuided].count(), 300);
        }
    }

    #[test]
    fn missing_direction_is_rejected() {
        let (mut samples, _) = build_dataset(&small_cfg(1)).unwrap();
        let mut s = samples.remove(0);
        s.directions.remove(4);
        s.sparse_directions.clear();
        match validate_sample(&s) {
            Err(Error::Rejected(m)) => assert_eq!(m, "missing direction 5"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_shape_is_rejected() {
        let (mut samples, _) = build_dataset(&small_cfg(1)).unwrap();
        let mut s = samples.remove(0);
        s.coverage.as_mut().unwrap().values = Grid::filled(64, 64, -100.0);
        match validate_sample(&s) {
            Err(Error::Rejected(m)) => assert!(m.starts_with("shape"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ten_parents_split_seven_two_one() {
        let ids: Vec<String> = (0..10).flat_map(|p| std::iter::repeat_n(format!("p{p}"), 4)).collect();
        let s = split(&ids, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (28, 8, 4));
        assert_eq!(s, split(&ids, &SplitSpec::default()).unwrap());
        assert!(split(&ids[..36], &SplitSpec::default()).is_err());
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(10, [7, 2, 1]), [7, 2, 1]);
        assert_eq!(largest_remainder(60, [7, 2, 1]), [42, 12, 6]);
        // 11 * (0.7, 0.2, 0.1) = (7.7, 2.2, 1.1): the 0.7 remainder wins.
        assert_eq!(largest_remainder(11, [7, 2, 1]), [8, 2, 1]);
        // 13 -> (9.1, 2.6, 1.3): remainders .1 .6 .3, one left.
        assert_eq!(largest_remainder(13, [7, 2, 1]), [9, 3, 1]);
    }

    #[test]
    fn ratios_parse() {
        assert_eq!(SplitSpec::parse_ratios("7:2:1").unwrap(), [7, 2, 1]);
        assert!(SplitSpec::parse_ratios("7:3").is_err());
        assert!(!SplitSpec { ratios: [5, 2, 1], seed: 0 }.violations().is_empty());
    }

    #[test]
    fn container_roundtrip_and_truncation() {
        let (samples, _) = build_dataset(&small_cfg(2)).unwrap();
        let dir = std::env::temp_dir().join(format!("cuxd-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.cuxd");
        let m = write_dataset(&samples, &path, serde_json::json!({"k": 1})).unwrap();
        let (back, m2) = read_dataset(&path).unwrap();
        assert_eq!(back, samples);
        assert_eq!(m, m2);
        assert_eq!(m["records"].as_u64().unwrap() as usize, samples.len());

        let bytes = std::fs::read(&path).unwrap();
        for cut in [2, 9, 200, bytes.len() / 2, bytes.len() - 3] {
            assert!(matches!(decode_container(&bytes[..cut]), Err(Error::Corrupt { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_container(&bad), Err(Error::Corrupt { offset: 0, .. })));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn manifest_hash_is_reproducible() {
        let cfg = small_cfg(1);
        let (a, _) = build_dataset(&cfg).unwrap();
        let (b, _) = build_dataset(&cfg).unwrap();
        let recs = |s: &[Sample]| s.iter().map(Record::from).collect::<Vec<_>>();
        let (ba, ma) = encode_container(&recs(&a), serde_json::json!({})).unwrap();
        let (bb, mb) = encode_container(&recs(&b), serde_json::json!({})).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(ma["manifest_sha256"], mb["manifest_sha256"]);
    }

    #[test]
    fn block_strategy_at_full_crop_size() {
        let cfg = BuildConfig {
            n_parents: 1,
            coverage_strategies: vec![Strategy::Block],
            ..BuildConfig::default()
        };
        let (samples, stats) = build_dataset(&cfg).unwrap();
        assert_eq!(samples.len(), 4, "{stats:?}");
        for s in &samples {
            assert_eq!(s.dims(), (64, 64));
            assert_eq!(s.sparse_coverage[&Strategy::Block].count(), 1000);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(s.len(), 1000);
    }
}
