//! Supervised losses (berHu, cross-entropy) and depth evaluation metrics.

use std::fmt;

use crate::disparity::DepthMap;
use crate::error::{Error, Result};
use crate::grid::ErpGrid;

/// Per-pixel class ids in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    classes: usize,
    labels: Vec<usize>,
}

impl LabelGrid {
    pub fn new(width: usize, height: usize, classes: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l >= classes) {
            return Err(Error::Range(format!(
                "label {} at pixel {index} is outside [0, {classes})",
                labels[index]
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            labels,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Per-pixel class probabilities, one channel per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid(ErpGrid);

impl ProbGrid {
    pub fn new(grid: ErpGrid) -> Result<Self> {
        grid.validate_finite()?;
        let k = grid.channels();
        for (p, px) in grid.data().chunks_exact(k).enumerate() {
            if px.iter().any(|&v| v < 0.0) {
                return Err(Error::Domain(format!("negative probability at pixel {p}")));
            }
            let sum: f64 = px.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!("probabilities at pixel {p} sum to {sum}")));
            }
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &ErpGrid {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.channels()
    }
}

/// Indices of valid pixels; `mask[p] == true` keeps pixel `p`.
fn valid_indices(n: usize, mask: Option<&[bool]>) -> Result<Vec<usize>> {
    let idx: Vec<usize> = match mask {
        Some(m) => {
            if m.len() != n {
                return Err(Error::Shape(format!("mask has {} entries, maps have {n}", m.len())));
            }
            (0..n).filter(|&p| m[p]).collect()
        }
        None => (0..n).collect(),
    };
    if idx.is_empty() {
        return Err(Error::Domain("no valid pixels in mask".into()));
    }
    Ok(idx)
}

fn check_pair(pred: &DepthMap, gt: &DepthMap) -> Result<()> {
    pred.grid().ensure_raster(gt.grid(), "prediction vs ground truth")
}

/// Reverse Huber loss with threshold `c = max|d| / 5`, averaged over valid
/// pixels.
pub fn berhu_loss(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(pred, gt)?;
    let idx = valid_indices(pred.values().len(), mask)?;
    let residuals: Vec<f64> = idx.iter().map(|&p| pred.values()[p] - gt.values()[p]).collect();
    Ok(berhu_mean(&residuals))
}

/// berHu mean over raw residuals; `c = 0` (all residuals zero) gives 0.
pub fn berhu_mean(residuals: &[f64]) -> f64 {
    let c = residuals.iter().fold(0.0f64, |m, d| m.max(d.abs())) / 5.0;
    if c == 0.0 {
        return 0.0;
    }
    let sum: f64 = residuals
        .iter()
        .map(|d| {
            let a = d.abs();
            if a <= c {
                a
            } else {
                (d * d + c * c) / (2.0 * c)
            }
        })
        .sum();
    sum / residuals.len() as f64
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Mean over pixels of `−ln p[target]`, with `p` clamped below at
/// [`PROB_FLOOR`].
pub fn cross_entropy_loss(pred: &ProbGrid, target: &LabelGrid) -> Result<f64> {
    let g = pred.grid();
    if pred.classes() != target.classes {
        return Err(Error::Shape(format!(
            "prediction has {} classes, labels have {}",
            pred.classes(),
            target.classes
        )));
    }
    if (g.width(), g.height()) != (target.width, target.height) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, labels are {}x{}",
            g.width(),
            g.height(),
            target.width,
            target.height
        )));
    }
    let k = pred.classes();
    let sum: f64 = target
        .labels
        .iter()
        .enumerate()
        .map(|(p, &l)| -g.data()[p * k + l].max(PROB_FLOOR).ln())
        .sum();
    Ok(sum / target.labels.len() as f64)
}

/// Standard depth error metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl MetricReport {
    pub const HEADER: &'static str = "abs_rel  sq_rel   rmse     rmse_log d1       d2       d3";

    /// Fixed-width row with three decimals, deltas as fractions.
    pub fn table_row(&self) -> String {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
        .iter()
        .map(|v| format!("{v:<8.3}"))
        .collect::<Vec<_>>()
        .join(" ")
        .trim_end()
        .to_string()
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "abs_rel={} sq_rel={} rmse={} rmse_log={} delta1={} delta2={} delta3={}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3
        )
    }
}

pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap, mask: Option<&[bool]>) -> Result<MetricReport> {
    check_pair(pred, gt)?;
    let idx = valid_indices(pred.values().len(), mask)?;
    let (p, g) = (pred.values(), gt.values());
    if let Some(&bad) = idx.iter().find(|&&i| g[i] <= 0.0) {
        return Err(Error::Domain(format!("non-positive ground truth {} at pixel {bad}", g[bad])));
    }
    let n = idx.len() as f64;
    let mut acc = [0.0f64; 7];
    for &i in &idx {
        let d = p[i] - g[i];
        let ratio = (p[i] / g[i]).max(g[i] / p[i]);
        acc[0] += d.abs() / g[i];
        acc[1] += d * d / g[i];
        acc[2] += d * d;
        acc[3] += (p[i].ln() - g[i].ln()).powi(2);
        for (k, slot) in acc[4..].iter_mut().enumerate() {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                *slot += 1.0;
            }
        }
    }
    Ok(MetricReport {
        abs_rel: acc[0] / n,
        sq_rel: acc[1] / n,
        rmse: (acc[2] / n).sqrt(),
        rmse_log: (acc[3] / n).sqrt(),
        delta1: acc[4] / n,
        delta2: acc[5] / n,
        delta3: acc[6] / n,
    })
}
