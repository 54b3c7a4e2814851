//! Cross-band, multi-directional radio map prediction.
//!
//! The crate covers the whole pipeline: synthetic urban scenes
//! ([`scene`]), grid line-of-sight masks ([`geometry`]), a deterministic
//! propagation model ([`propagation`]), sparse measurement strategies
//! ([`sampling`]), dataset assembly and persistence ([`dataset`]), a small
//! reverse-mode tensor engine ([`nn`]), the encoder–decoder predictors
//! ([`models`]) and the evaluation protocol ([`eval`]).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod models;
pub mod nn;
pub mod propagation;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{MaskMap, PixelClass};
pub use grid::{BinaryMask, Grid, Pixel};
pub use propagation::{AntennaPattern, PropagationParams, SignalMap, FLOOR_DBM};
pub use sampling::{SamplingConfig, SparseMap, Strategy};
pub use scene::{BuildingMap, SceneParams, TxConfig};
