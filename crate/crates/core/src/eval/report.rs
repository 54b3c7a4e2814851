//! Per-map evaluation and the CSV / JSON report.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::idw::IdwFlag;
use super::metrics::{category_breakdown, communicable_mask, error_sums, Category, CategoryBreakdown, ErrorSums};
use super::stats::{box_stats, median, BoxStats, QUANTILE_RULE};
use crate::error::Result;
use crate::grid::BinaryMask;
use crate::propagation::SignalMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEval {
    pub id: String,
    pub region: ErrorSums,
    pub categories: CategoryBreakdown,
}

impl MapEval {
    pub fn mae(&self) -> Option<f64> {
        self.region.mae().ok()
    }

    pub fn rmse(&self) -> Option<f64> {
        self.region.rmse().ok()
    }
}

/// Scores one map over its communicable region.
pub fn evaluate_map(
    id: &str,
    pred: &[SignalMap],
    truth: &[SignalMap],
    mask_3g5: Option<&BinaryMask>,
    masks_7g: &[BinaryMask],
) -> Result<MapEval> {
    let region = communicable_mask(truth);
    Ok(MapEval {
        id: id.to_string(),
        region: error_sums(pred, truth, &region)?,
        categories: category_breakdown(pred, truth, mask_3g5, masks_7g, &region)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: Category,
    pub pixels: usize,
    /// Maps with at least one pixel in the category.
    pub maps: usize,
    pub mae_median: Option<f64>,
    pub rmse_median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub maps: Vec<MapEval>,
    /// Pooled over every region pixel of every map.
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    pub mae_median: Option<f64>,
    pub rmse_median: Option<f64>,
    pub mae_box: Option<BoxStats>,
    pub rmse_box: Option<BoxStats>,
    pub categories: Vec<CategorySummary>,
    pub undefined_maps: Vec<String>,
    pub flags: Vec<IdwFlag>,
}

fn defined(values: impl Iterator<Item = Option<f64>>) -> Vec<f64> {
    values.flatten().collect()
}

impl EvalReport {
    pub fn from_maps(label: &str, maps: Vec<MapEval>, flags: Vec<IdwFlag>) -> Self {
        let mut pooled = ErrorSums::default();
        for m in &maps {
            pooled.merge(&m.region);
        }
        let maes = defined(maps.iter().map(MapEval::mae));
        let rmses = defined(maps.iter().map(MapEval::rmse));
        let categories = Category::ALL
            .iter()
            .map(|&c| {
                let sums: Vec<&ErrorSums> = maps.iter().map(|m| m.categories.get(c)).collect();
                let mae = defined(sums.iter().map(|s| s.mae().ok()));
                let rmse = defined(sums.iter().map(|s| s.rmse().ok()));
                CategorySummary {
                    category: c,
                    pixels: sums.iter().map(|s| s.count).sum(),
                    maps: mae.len(),
                    mae_median: median(&mae),
                    rmse_median: median(&rmse),
                }
            })
            .collect();
        Self {
            label: label.to_string(),
            mae: pooled.mae().ok(),
            rmse: pooled.rmse().ok(),
            mae_median: median(&maes),
            rmse_median: median(&rmses),
            mae_box: box_stats(&maes).ok(),
            rmse_box: box_stats(&rmses).ok(),
            categories,
            undefined_maps: maps.iter().filter(|m| m.region.count == 0).map(|m| m.id.clone()).collect(),
            maps,
            flags,
        }
    }

    /// One row per map; undefined metrics are written as `undefined`.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"));
        let mut out = format!("# config_hash={config_hash}\nmap_id,mae,rmse");
        for c in Category::ALL {
            out.push_str(&format!(",{0}_mae,{0}_rmse", c.name()));
        }
        out.push('\n');
        for m in &self.maps {
            out.push_str(&format!("{},{},{}", m.id, fmt(m.mae()), fmt(m.rmse())));
            for c in Category::ALL {
                let s = m.categories.get(c);
                out.push_str(&format!(",{},{}", fmt(s.mae().ok()), fmt(s.rmse().ok())));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary(&self, config_hash: &str) -> Value {
        json!({
            "config_hash": config_hash,
            "label": self.label,
            "maps": self.maps.len(),
            "undefined_maps": self.undefined_maps,
            "region": "communicable (truth >= -90 dBm)",
            "mae": self.mae,
            "rmse": self.rmse,
            "mae_median": self.mae_median,
            "rmse_median": self.rmse_median,
            "mae_box": self.mae_box,
            "rmse_box": self.rmse_box,
            "quantile_rule": QUANTILE_RULE,
            "categories": self.categories,
            "idw_filled_directions": self.flags,
        })
    }
}
