//! Encoder–decoder predictors: configuration, input encoding, the U-shaped
//! networks, loss composition, training and prediction.

mod loss;
mod net;
mod train;

pub use loss::{graph_loss, loss_full, loss_partial, mse_db, LossTerms, Targets};
pub use net::{bind, Bound, BnBatch, Forward, Mode, Network};
pub use train::{evaluate_loss, predict, train, Checkpoint, EpochLog, Prediction, StepLog, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::propagation::DIRECTIONS_DEG;
use crate::sampling::Strategy;

/// dBm ↦ `(v + DB_OFFSET) / DB_SCALE`, clamped to `[0, 1]`.
pub const DB_OFFSET: f64 = 160.0;
pub const DB_SCALE: f64 = 130.0;
/// Building heights ↦ `h / HEIGHT_SCALE`, clamped to `[0, 1]`.
pub const HEIGHT_SCALE: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    FullSeg,
    Partial,
}

impl Variant {
    pub fn has_seg(self) -> bool {
        matches!(self, Variant::FullSeg | Variant::Partial)
    }
}

/// Which 3.5 GHz map feeds the coverage channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageSource {
    Complete,
    Random,
    NlosGuided,
    Blend,
    Block,
}

impl CoverageSource {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            CoverageSource::Complete => None,
            CoverageSource::Random => Some(Strategy::Random),
            CoverageSource::NlosGuided => Some(Strategy::NlosGuided),
            CoverageSource::Blend => Some(Strategy::Blend),
            CoverageSource::Block => Some(Strategy::Block),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    Building,
    Coverage(CoverageSource),
    /// Sparse 7 GHz map of a direction index.
    SparseDirection(u8),
    NlosMask,
}

impl Plane {
    pub fn name(&self) -> String {
        match self {
            Plane::Building => "building".into(),
            Plane::Coverage(CoverageSource::Complete) => "coverage".into(),
            Plane::Coverage(src) => format!("coverage_{}", src.strategy().expect("sparse").name()),
            Plane::SparseDirection(d) => format!("sparse_dir_{}deg", DIRECTIONS_DEG[*d as usize]),
            Plane::NlosMask => "nlos_mask".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Channels at the first level; doubles per level.
    pub width: usize,
    /// Number of pooling stages.
    pub depth: usize,
    /// Sparse 7 GHz directions fed as inputs, in degrees.
    pub directions: Vec<u16>,
    pub coverage_input: CoverageSource,
    pub lambda_seg: f64,
    pub lambda_cov: f64,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::FullSeg,
            width: 16,
            depth: 3,
            directions: DIRECTIONS_DEG.iter().map(|&d| d as u16).collect(),
            coverage_input: CoverageSource::Complete,
            lambda_seg: 0.3,
            lambda_cov: 0.5,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.width == 0 {
            v.push("width must be positive".into());
        }
        if self.depth == 0 {
            v.push("depth must be at least 1".into());
        }
        if !(self.lambda_seg >= 0.0) || !(self.lambda_cov >= 0.0) {
            v.push("loss weights must be >= 0".into());
        }
        let mut seen = Vec::new();
        for &d in &self.directions {
            if !DIRECTIONS_DEG.iter().any(|&c| c as u16 == d) {
                v.push(format!("direction {d} is not one of 0, 45, ..., 315"));
            } else if seen.contains(&d) {
                v.push(format!("direction {d} listed twice"));
            }
            seen.push(d);
        }
        if self.variant == Variant::Partial && self.coverage_input == CoverageSource::Complete {
            v.push("partial variant needs a sparse coverage_input".into());
        }
        v
    }

    /// Depth and divisibility checks for an `h × w` grid.
    pub fn check_dims(&self, h: usize, w: usize) -> Result<()> {
        let m = h.min(w);
        let max_depth = (usize::BITS - 1 - m.leading_zeros()) as usize;
        if m < 4 || self.depth + 2 > max_depth {
            return Err(Error::Shape(format!(
                "depth {} exceeds log2(min(H, W)) - 2 for {h}x{w}",
                self.depth
            )));
        }
        let f = 1usize << self.depth;
        if h % f != 0 || w % f != 0 {
            return Err(Error::Shape(format!("{h}x{w} is not divisible by 2^{}", self.depth)));
        }
        Ok(())
    }

    pub fn direction_indices(&self) -> Vec<u8> {
        self.directions.iter().map(|&d| (d / 45) as u8).collect()
    }

    pub fn input_layout(&self) -> Vec<Plane> {
        let mut planes = vec![Plane::Building, Plane::Coverage(self.coverage_input)];
        planes.extend(self.direction_indices().into_iter().map(Plane::SparseDirection));
        if self.variant.has_seg() {
            planes.push(Plane::NlosMask);
        }
        planes
    }

    pub fn in_channels(&self) -> usize {
        self.input_layout().len()
    }
}

pub fn normalize_db(v: f32) -> f32 {
    ((v as f64 + DB_OFFSET) / DB_SCALE).clamp(0.0, 1.0) as f32
}

pub fn normalize_height(h: f32) -> f32 {
    (h as f64 / HEIGHT_SCALE).clamp(0.0, 1.0) as f32
}

/// `(C, H, W)` input tensor in the configured plane order.
pub fn encode_inputs(s: &Sample, cfg: &ModelConfig) -> Result<Tensor<f32>> {
    let (h, w) = s.dims();
    let layout = cfg.input_layout();
    let mut data = Vec::with_capacity(layout.len() * h * w);
    let missing = |p: &Plane| Error::Shape(format!("sample {} lacks input plane {}", s.id(), p.name()));
    for plane in &layout {
        let start = data.len();
        match plane {
            Plane::Building => data.extend(s.building.heights.iter().map(|&v| normalize_height(v))),
            Plane::Coverage(CoverageSource::Complete) => {
                let c = s.coverage.as_ref().ok_or_else(|| missing(plane))?;
                data.extend(c.values.iter().map(|&v| normalize_db(v)));
            }
            Plane::Coverage(src) => {
                let st = src.strategy().expect("sparse source");
                let c = s.sparse_coverage.get(&st).ok_or_else(|| missing(plane))?;
                data.extend(c.values.values.iter().map(|&v| normalize_db(v)));
            }
            Plane::SparseDirection(d) => {
                let m = s.sparse_directions.get(*d as usize).ok_or_else(|| missing(plane))?;
                data.extend(m.values.values.iter().map(|&v| normalize_db(v)));
            }
            Plane::NlosMask => {
                let m = s.masks.as_ref().ok_or_else(|| missing(plane))?;
                data.extend(m.nlos.iter().map(|&b| b as u8 as f32));
            }
        }
        if data.len() - start != h * w {
            return Err(Error::Shape(format!("plane {} has the wrong size", plane.name())));
        }
    }
    Tensor::from_vec(&[layout.len(), h, w], data)
}

/// Inverse of the dB normalization.
pub fn denormalize_db(s: f64) -> f64 {
    s * DB_SCALE - DB_OFFSET
}
