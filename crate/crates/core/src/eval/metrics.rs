//! Per-pixel error metrics in the dB domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Grid};
use crate::propagation::SignalMap;

/// Ground-truth level at or above which a pixel counts as communicable.
pub const COMMUNICABLE_DBM: f32 = -90.0;

pub fn communicable_mask(truth: &[SignalMap]) -> Vec<BinaryMask> {
    truth.iter().map(|m| m.values.map(|v| *v >= COMMUNICABLE_DBM)).collect()
}

/// Every pixel of every direction.
pub fn full_region(truth: &[SignalMap]) -> Vec<BinaryMask> {
    truth.iter().map(|m| m.values.map(|_| true)).collect()
}

fn check_aligned(pred: &[SignalMap], truth: &[SignalMap], region: &[BinaryMask]) -> Result<()> {
    if pred.len() != truth.len() || region.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted, {} truth and {} region maps",
            pred.len(),
            truth.len(),
            region.len()
        )));
    }
    for ((p, t), r) in pred.iter().zip(truth).zip(region) {
        if !p.values.same_dims(&t.values) || !r.same_dims(&t.values) {
            return Err(Error::Shape(format!(
                "prediction {:?}, truth {:?}, region {:?}",
                p.dims(),
                t.dims(),
                r.dims()
            )));
        }
    }
    Ok(())
}

/// Running sums of absolute and squared error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSums {
    pub abs: f64,
    pub sq: f64,
    pub count: usize,
}

impl ErrorSums {
    pub fn push(&mut self, e: f64) {
        self.abs += e.abs();
        self.sq += e * e;
        self.count += 1;
    }

    pub fn merge(&mut self, o: &ErrorSums) {
        self.abs += o.abs;
        self.sq += o.sq;
        self.count += o.count;
    }

    pub fn mae(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::Undefined("MAE over an empty region".into()));
        }
        Ok(self.abs / self.count as f64)
    }

    pub fn rmse(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::Undefined("RMSE over an empty region".into()));
        }
        Ok((self.sq / self.count as f64).sqrt())
    }
}

pub fn error_sums(pred: &[SignalMap], truth: &[SignalMap], region: &[BinaryMask]) -> Result<ErrorSums> {
    check_aligned(pred, truth, region)?;
    let mut s = ErrorSums::default();
    for ((p, t), r) in pred.iter().zip(truth).zip(region) {
        for ((pv, tv), inside) in p.values.iter().zip(t.values.iter()).zip(r.iter()) {
            if *inside {
                s.push(*pv as f64 - *tv as f64);
            }
        }
    }
    Ok(s)
}

/// Mean absolute error over all directions and region pixels.
pub fn mae(pred: &[SignalMap], truth: &[SignalMap], region: &[BinaryMask]) -> Result<f64> {
    error_sums(pred, truth, region)?.mae()
}

pub fn rmse(pred: &[SignalMap], truth: &[SignalMap], region: &[BinaryMask]) -> Result<f64> {
    error_sums(pred, truth, region)?.rmse()
}

/// Pixelwise absolute error of one direction.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub errors: Grid<f64>,
}

impl ErrorMap {
    pub fn max(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn error_map(pred: &SignalMap, truth: &SignalMap) -> Result<ErrorMap> {
    if !pred.values.same_dims(&truth.values) {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.dims(), truth.dims())));
    }
    let (h, w) = truth.dims();
    let data = pred
        .values
        .iter()
        .zip(truth.values.iter())
        .map(|(p, t)| (*p as f64 - *t as f64).abs())
        .collect();
    Ok(ErrorMap {
        errors: Grid::from_vec(h, w, data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Both,
    Only3g5,
    Only7g,
    Neither,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Both, Category::Only3g5, Category::Only7g, Category::Neither];

    pub fn of(low: bool, high: bool) -> Self {
        match (low, high) {
            (true, true) => Category::Both,
            (true, false) => Category::Only3g5,
            (false, true) => Category::Only7g,
            (false, false) => Category::Neither,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Both => "both",
            Category::Only3g5 => "only_3g5",
            Category::Only7g => "only_7g",
            Category::Neither => "neither",
        }
    }
}

/// Error sums of one map split by which sparse observations cover a pixel.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub sums: [ErrorSums; 4],
}

impl CategoryBreakdown {
    pub fn get(&self, c: Category) -> &ErrorSums {
        &self.sums[c.index()]
    }

    pub fn total_count(&self) -> usize {
        self.sums.iter().map(|s| s.count).sum()
    }
}

/// Assigns each region pixel to one of four categories. A pixel has a 7 GHz
/// sample when any directional sparse map sampled it; `mask_3g5 = None`
/// means no low-band observations.
pub fn category_breakdown(
    pred: &[SignalMap],
    truth: &[SignalMap],
    mask_3g5: Option<&BinaryMask>,
    masks_7g: &[BinaryMask],
    region: &[BinaryMask],
) -> Result<CategoryBreakdown> {
    check_aligned(pred, truth, region)?;
    let Some(first) = truth.first() else {
        return Ok(CategoryBreakdown::default());
    };
    let (h, w) = first.dims();
    let mut any_7g = Grid::filled(h, w, false);
    for m in masks_7g {
        if !m.same_dims(&any_7g) {
            return Err(Error::Shape(format!("7 GHz mask {:?} vs maps {:?}", m.dims(), (h, w))));
        }
        for (a, s) in any_7g.as_mut_slice().iter_mut().zip(m.iter()) {
            *a |= *s;
        }
    }
    if let Some(m) = mask_3g5 {
        if !m.same_dims(&any_7g) {
            return Err(Error::Shape(format!("3.5 GHz mask {:?} vs maps {:?}", m.dims(), (h, w))));
        }
    }
    let cats: Vec<Category> = (0..h * w)
        .map(|i| Category::of(mask_3g5.is_some_and(|m| m.as_slice()[i]), any_7g.as_slice()[i]))
        .collect();
    let mut out = CategoryBreakdown::default();
    for ((p, t), r) in pred.iter().zip(truth).zip(region) {
        for i in 0..h * w {
            if r.as_slice()[i] {
                let e = p.values.as_slice()[i] as f64 - t.values.as_slice()[i] as f64;
                out.sums[cats[i].index()].push(e);
            }
        }
    }
    Ok(out)
}
